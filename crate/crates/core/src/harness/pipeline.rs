//! Experiment stages: audio, source models, network training, tensors and decodes.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::config::{Estimator, ExperimentConfig, ExperimentFlags};
use super::corpus::{build_corpus, Corpus, MixtureEntry, Split};
use crate::acoustic::{
    adapt_speaker, estimate_gain, frame_labels, gain_grid_db, train_gmm_hmm, GmmHmmSet, GmmTrainConfig, MapConfig,
};
use crate::decoder::{
    build_wordnet, joint_decode, masker_overrides, single_chain_decode, target_overrides, DecodeConfig,
    DecodeResult, Wordnet,
};
use crate::dnn::{
    infer_joint_tensor, init_labels_vts, rbm_train_pcd, stack_dbn, train_finetune_phase, train_init_phase, EpochLog,
    JointPosteriorNet, Stage, TrainSet, VisibleKind,
};
use crate::error::{Error, Result};
use crate::features::{
    append_deltas, compose_dnn_matrix, raw_continuous_matrix, DnnInputSpec, FeatureSequence, Frontend,
    Standardization,
};
use crate::jointlik::{
    max_joint_tensor, pmc_joint_tensor, silverman_bandwidth, vts_joint_tensor, wss_build, wss_joint_tensor,
    GmmCombination, JointStateTensor, MismatchContext, StereoFrames, TensorScale, WeightForm, WeightedSampleSet,
};
use crate::signal::{gain_from_tmr, mix, MixSpec, Utterance, Waveform};

/// Log-likelihood given to joint states a kernel estimate never saw.
const UNSEEN_LOG_LIKELIHOOD: f64 = -1e4;

/// A corpus with its synthesized audio, front end and worker pool.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub corpus: Corpus,
    pub frontend: Frontend,
    pub ctx: MismatchContext,
    /// One per manifest utterance.
    pub audio: Vec<Utterance>,
    pool: rayon::ThreadPool,
}

/// Features of one rendered mixture. Both sources are padded to the mixture
/// length with their noise floor.
#[derive(Debug, Clone)]
pub struct RenderedMixture {
    /// Linear masker gain.
    pub gain: f64,
    pub mixed: Waveform,
    pub log_mel: FeatureSequence,
    /// Statics and deltas.
    pub mfcc: FeatureSequence,
    pub statics: FeatureSequence,
    pub clean_a: FeatureSequence,
    pub clean_b: FeatureSequence,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let corpus = build_corpus(cfg)?;
        let frontend = Frontend::desk();
        let ctx = MismatchContext::new(&frontend);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Argument(format!("worker pool: {e}")))?;
        let mut prep = Self {
            cfg: cfg.clone(),
            corpus,
            frontend,
            ctx,
            audio: Vec::new(),
            pool,
        };
        let idx: Vec<usize> = (0..prep.corpus.utterances.len()).collect();
        prep.audio = prep.par_map(&idx, |&u| {
            let e = &prep.corpus.utterances[u];
            crate::signal::synth_utterance(&e.words, &prep.corpus.phone_table, &prep.corpus.speakers[e.speaker], e.seed)
        })?;
        Ok(prep)
    }

    /// Maps `f` over `items` on the configured number of workers, keeping order.
    pub fn par_map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync,
    {
        self.pool.install(|| items.par_iter().map(&f).collect())
    }

    pub fn phones(&self) -> Vec<String> {
        self.corpus.phone_table.phone_names()
    }

    pub fn letter_slot(&self) -> usize {
        self.corpus.grammar.slot_index("letter").expect("checked when the corpus was built")
    }

    pub fn number_slot(&self) -> usize {
        self.corpus.grammar.slot_index("number").expect("checked when the corpus was built")
    }

    /// Clean statics+deltas of utterance `u`, padded to `len` samples.
    fn clean_features(&self, u: usize, len: usize) -> Result<(Waveform, FeatureSequence)> {
        let e = &self.corpus.utterances[u];
        let w = self.audio[u].padded_with_floor(len, &self.corpus.speakers[e.speaker], e.seed ^ 0x9e37_79b9);
        let f = append_deltas(&self.frontend.mfcc(&w)?)?;
        Ok((w, f))
    }

    /// Mixes the manifest pair at `tmr_db`, measured on the unpadded sources.
    pub fn render(&self, m: &MixtureEntry, tmr_db: f64) -> Result<RenderedMixture> {
        let (ua, ub) = (&self.audio[m.target], &self.audio[m.masker]);
        let gain = gain_from_tmr(tmr_db, ua.waveform.energy(), ub.waveform.energy())?;
        let len = ua.waveform.len().max(ub.waveform.len());
        let (wa, clean_a) = self.clean_features(m.target, len)?;
        let (wb, clean_b) = self.clean_features(m.masker, len)?;
        let mixed = mix(&wa, &wb, &MixSpec::explicit(gain))?;
        let log_mel = self.frontend.log_mel(&mixed)?;
        let statics = self.frontend.cepstra_from_log_mel(&log_mel);
        let mfcc = append_deltas(&statics)?;
        Ok(RenderedMixture {
            gain,
            mixed,
            log_mel,
            mfcc,
            statics,
            clean_a,
            clean_b,
        })
    }

    pub fn target_net(&self) -> Result<Wordnet> {
        build_wordnet(&self.corpus.grammar, &self.corpus.phone_table.lexicon, &target_overrides())
    }

    pub fn masker_net(&self) -> Result<Wordnet> {
        build_wordnet(
            &self.corpus.grammar,
            &self.corpus.phone_table.lexicon,
            &masker_overrides(&self.corpus.grammar)?,
        )
    }

    /// The unconstrained grammar, used for clean single-talker decodes.
    pub fn open_net(&self) -> Result<Wordnet> {
        build_wordnet(&self.corpus.grammar, &self.corpus.phone_table.lexicon, &BTreeMap::new())
    }

    fn combination(&self) -> GmmCombination {
        self.cfg.model.combination.into()
    }

    fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.cfg.experiment.beam,
            ..DecodeConfig::default()
        }
    }
}

/// A speaker-independent model and one MAP-adapted model per speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModels {
    pub base: GmmHmmSet,
    pub speakers: Vec<GmmHmmSet>,
}

/// Trains on the clean training utterances with oracle phone alignments.
pub fn train_source_models(prep: &Prepared, n_components: usize) -> Result<SourceModels> {
    let phones = prep.phones();
    let train: Vec<usize> = (0..prep.corpus.utterances.len())
        .filter(|&u| prep.corpus.utterances[u].split == Split::Train)
        .collect();
    let data = prep.par_map(&train, |&u| {
        let utt = &prep.audio[u];
        let f = append_deltas(&prep.frontend.mfcc(&utt.waveform)?)?;
        let al = frame_labels(utt, &prep.frontend, &phones)?;
        Ok((f, al))
    })?;
    let (feats, aligns): (Vec<FeatureSequence>, Vec<Vec<usize>>) = data.into_iter().unzip();
    let gcfg = GmmTrainConfig {
        n_components,
        n_static: prep.frontend.n_cep(),
        seed: prep.cfg.seed,
        ..GmmTrainConfig::default()
    };
    let (base, report) = train_gmm_hmm(&feats, &aligns, &phones, &gcfg)?;
    for (state, k) in &report.reduced {
        log::info!("state {state}: trained with {k} components");
    }
    let map = MapConfig { tau: prep.cfg.model.map_tau };
    let speakers = (0..prep.corpus.speakers.len())
        .map(|s| {
            let mine: Vec<usize> = (0..train.len()).filter(|&k| prep.corpus.utterances[train[k]].speaker == s).collect();
            let f: Vec<FeatureSequence> = mine.iter().map(|&k| feats[k].clone()).collect();
            let a: Vec<Vec<usize>> = mine.iter().map(|&k| aligns[k].clone()).collect();
            adapt_speaker(&base, &f, &a, &map)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SourceModels { base, speakers })
}

/// How a network is trained and fed the masker gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DnnVariant {
    /// Train on mixtures at the manifest TMRs; otherwise every training mixture is at 0 dB.
    pub multi_gain: bool,
    /// Feed the masker gain in dB; otherwise the gain input is 0.
    pub gain_feature: bool,
}

impl DnnVariant {
    pub fn from_flags(f: &ExperimentFlags) -> Self {
        Self {
            multi_gain: f.multi_gain_training,
            gain_feature: f.gain_feature,
        }
    }

    pub fn gain_unaware() -> Self {
        Self {
            multi_gain: false,
            gain_feature: false,
        }
    }

    pub fn label(&self) -> &'static str {
        match (self.multi_gain, self.gain_feature) {
            (true, true) => "multi_gain",
            (true, false) => "multi_gain_no_feature",
            (false, true) => "single_gain_feature",
            (false, false) => "gain_unaware",
        }
    }
}

fn db(gain: f64) -> f64 {
    20.0 * gain.log10()
}

/// Network training rows drawn from the training mixtures.
#[derive(Debug, Clone)]
pub struct DnnData {
    pub variant: DnnVariant,
    pub spec: DnnInputSpec,
    pub standardization: Standardization,
    /// Rows with VTS joint labels, for the init phase.
    pub init: TrainSet,
    /// Rows with clean-source marginal labels, for fine-tuning.
    pub train: TrainSet,
    pub held_out: TrainSet,
}

struct MixtureRows {
    raw: Array2<f64>,
    pair: (usize, usize),
    dm_a: Array2<f64>,
    dm_b: Array2<f64>,
    joint: Option<Array2<f64>>,
}

fn posterior_rows(model: &GmmHmmSet, fs: &FeatureSequence, rows: &[usize]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), model.n_states()));
    for (k, &t) in rows.iter().enumerate() {
        let p = model.state_posteriors(fs.frame(t).as_slice().expect("contiguous frame"))?;
        out.row_mut(k).assign(&ndarray::ArrayView1::from(p.values()));
    }
    Ok(out)
}

/// Builds network training rows: every `frame_stride`-th frame of each
/// training mixture, split into fine-tuning and held-out mixtures; the first
/// `init_fraction` of the fine-tuning mixtures also get VTS joint labels.
pub fn dnn_training_data(prep: &Prepared, models: &SourceModels, variant: DnnVariant) -> Result<DnnData> {
    let dc = &prep.cfg.dnn;
    let spec = DnnInputSpec {
        n_mel: prep.frontend.n_mel(),
        context: dc.context,
        n_speakers: prep.corpus.speakers.len(),
    };
    let mixtures = &prep.corpus.train_mixtures;
    let n_mix = mixtures.len();
    let n_held = ((n_mix as f64) * dc.held_out_fraction).round() as usize;
    let n_fit = n_mix - n_held;
    let n_init = (((n_fit as f64) * dc.init_fraction).round() as usize).clamp(1, n_fit.max(1));
    if n_fit == 0 {
        return Err(Error::Argument("no training mixtures left after the held-out split".into()));
    }
    let ones = prep.frontend.dct_of_ones().to_vec();
    let n_states = models.base.n_states();
    let mode = prep.combination();
    let idx: Vec<usize> = (0..n_mix).collect();
    let parts = prep.par_map(&idx, |&k| {
        let m = &mixtures[k];
        let tmr = if variant.multi_gain { m.tmr_db } else { 0.0 };
        let r = prep.render(m, tmr)?;
        let gain_db = if variant.gain_feature { db(r.gain) } else { 0.0 };
        let rows: Vec<usize> = ((k % dc.frame_stride)..r.log_mel.len()).step_by(dc.frame_stride).collect();
        let pair = prep.corpus.speaker_pair(m);
        let (ma, mb) = (&models.speakers[pair.0], &models.speakers[pair.1]);
        let raw = raw_continuous_matrix(&r.log_mel, &spec, gain_db)?.select(Axis(0), &rows);
        let joint = if k < n_init {
            let adapted = mb.gain_adapt(r.gain, &ones)?;
            Some(init_labels_vts(&r.mfcc, ma, &adapted, &prep.ctx, mode)?.select(Axis(0), &rows))
        } else {
            None
        };
        Ok(MixtureRows {
            raw,
            pair,
            dm_a: posterior_rows(ma, &r.clean_a, &rows)?,
            dm_b: posterior_rows(mb, &r.clean_b, &rows)?,
            joint,
        })
    })?;
    let fit_raw: Vec<_> = parts[..n_fit].iter().map(|p| p.raw.view()).collect();
    let standardization = Standardization::fit(&ndarray::concatenate(Axis(0), &fit_raw).map_err(|e| Error::Argument(e.to_string()))?)?;

    let to_set = |p: &MixtureRows, with_joint: bool| -> Result<TrainSet> {
        let cd = spec.continuous_dim();
        let code = spec.pair_index(p.pair)?;
        let mut inputs = Array2::zeros((p.raw.nrows(), spec.dim()));
        for (t, row) in p.raw.outer_iter().enumerate() {
            let mut dst = inputs.row_mut(t);
            let dst = dst.as_slice_mut().expect("contiguous row");
            dst[..cd].copy_from_slice(row.as_slice().expect("contiguous row"));
            standardization.apply(&mut dst[..cd]);
            dst[cd + code] = 1.0;
        }
        Ok(TrainSet {
            inputs,
            init_labels: if with_joint { p.joint.clone() } else { None },
            marginal_labels: Some((p.dm_a.clone(), p.dm_b.clone())),
        })
    };
    let init = TrainSet::concat(&parts[..n_init].iter().map(|p| to_set(p, true)).collect::<Result<Vec<_>>>()?)?;
    let train = TrainSet::concat(&parts[..n_fit].iter().map(|p| to_set(p, false)).collect::<Result<Vec<_>>>()?)?;
    let held_out = if n_held > 0 {
        TrainSet::concat(&parts[n_fit..].iter().map(|p| to_set(p, false)).collect::<Result<Vec<_>>>()?)?
    } else {
        TrainSet {
            inputs: Array2::zeros((0, spec.dim())),
            init_labels: None,
            marginal_labels: Some((Array2::zeros((0, n_states)), Array2::zeros((0, n_states)))),
        }
    };
    Ok(DnnData {
        variant,
        spec,
        standardization,
        init,
        train,
        held_out,
    })
}

/// A trained network with its init and fine-tuning logs.
#[derive(Debug, Clone)]
pub struct TrainedDnn {
    pub net: JointPosteriorNet,
    pub variant: DnnVariant,
    pub log: Vec<EpochLog>,
}

impl TrainedDnn {
    /// Held-out fine-tuning loss per epoch, epoch 0 first.
    pub fn finetune_held_out(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter(|e| e.phase == Stage::Finetune)
            .filter_map(|e| e.held_out)
            .collect()
    }
}

/// Generative pre-training of the hidden stack on the fine-tuning rows.
pub fn pretrain_stack(prep: &Prepared, data: &DnnData, seed: u64) -> Result<Vec<crate::dnn::Layer>> {
    pretrain(prep, &data.train.inputs, seed)
}

fn pretrain(prep: &Prepared, inputs: &Array2<f64>, seed: u64) -> Result<Vec<crate::dnn::Layer>> {
    let mut rbms = Vec::new();
    let mut data = inputs.clone();
    for (k, &h) in prep.cfg.dnn.hidden.iter().enumerate() {
        let kind = if k == 0 { VisibleKind::Gaussian } else { VisibleKind::Bernoulli };
        let hyper = crate::dnn::RbmHyper {
            seed: seed.wrapping_add(k as u64),
            ..prep.cfg.dnn.rbm
        };
        let rbm = rbm_train_pcd(&data, kind, h, &hyper)?;
        data = rbm.hidden_probs(&data);
        rbms.push(rbm);
    }
    stack_dbn(&rbms)
}

fn non_empty(set: &TrainSet) -> Option<&TrainSet> {
    (!set.is_empty()).then_some(set)
}

/// Generative pre-training, the init phase on VTS joint labels, then fine-tuning.
pub fn train_joint_dnn(prep: &Prepared, data: &DnnData, seed: u64) -> Result<TrainedDnn> {
    let stack = pretrain_stack(prep, data, seed)?;
    train_joint_dnn_on(prep, data, stack, seed)
}

/// The init and fine-tuning phases on top of an already pre-trained stack.
pub fn train_joint_dnn_on(prep: &Prepared, data: &DnnData, stack: Vec<crate::dnn::Layer>, seed: u64) -> Result<TrainedDnn> {
    let s = data.train.marginal_labels.as_ref().expect("marginal labels").0.ncols();
    let net = JointPosteriorNet::from_stack(stack, (s, s), data.spec.clone(), data.standardization.clone(), seed)?;
    let dc = &prep.cfg.dnn;
    let (net, mut log) = train_init_phase(net, &data.init, None, &crate::dnn::SgdHyper { seed, ..dc.init })?;
    let (net, tail) = train_finetune_phase(net, &data.train, non_empty(&data.held_out), &crate::dnn::SgdHyper { seed, ..dc.finetune })?;
    log.extend(tail);
    Ok(TrainedDnn {
        net,
        variant: data.variant,
        log,
    })
}

/// Two independent classifiers, one per chain, each a `|s|×1` network trained
/// on that chain's clean-source posteriors.
#[derive(Debug, Clone)]
pub struct MarginalDnns {
    pub target: JointPosteriorNet,
    pub masker: JointPosteriorNet,
    pub variant: DnnVariant,
}

pub fn train_marginal_dnns(prep: &Prepared, data: &DnnData, seed: u64) -> Result<MarginalDnns> {
    let (dm_a, dm_b) = data.train.marginal_labels.clone().expect("marginal labels");
    let dc = &prep.cfg.dnn;
    // the fine-tuning objective of a one-column net is the init objective, so one phase covers both
    let hyper = crate::dnn::SgdHyper {
        seed,
        epochs: dc.init.epochs + dc.finetune.epochs,
        ..dc.init
    };
    let stack = pretrain(prep, &data.train.inputs, seed)?;
    let train_one = |labels: Array2<f64>, salt: u64| -> Result<JointPosteriorNet> {
        let net = JointPosteriorNet::from_stack(
            stack.clone(),
            (labels.ncols(), 1),
            data.spec.clone(),
            data.standardization.clone(),
            seed.wrapping_add(salt),
        )?;
        let set = TrainSet {
            inputs: data.train.inputs.clone(),
            init_labels: Some(labels),
            marginal_labels: None,
        };
        Ok(train_init_phase(net, &set, None, &hyper)?.0)
    };
    Ok(MarginalDnns {
        target: train_one(dm_a, 1)?,
        masker: train_one(dm_b, 2)?,
        variant: data.variant,
    })
}

/// Kernel sample sets per ordered speaker pair, on static cepstra.
#[derive(Debug, Clone)]
pub struct WssBank {
    pub sets: BTreeMap<(usize, usize), (WeightedSampleSet, f64)>,
}

pub fn build_wss_bank(prep: &Prepared, models: &SourceModels) -> Result<WssBank> {
    let mut by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, m) in prep.corpus.train_mixtures.iter().enumerate() {
        by_pair.entry(prep.corpus.speaker_pair(m)).or_default().push(k);
    }
    let pairs: Vec<((usize, usize), Vec<usize>)> = by_pair.into_iter().collect();
    let multi = prep.cfg.experiment.multi_gain_training;
    let cap = prep.cfg.experiment.wss_max_samples;
    let built = prep.par_map(&pairs, |(pair, ks)| {
        let rendered = ks
            .iter()
            .map(|&k| {
                let m = &prep.corpus.train_mixtures[k];
                prep.render(m, if multi { m.tmr_db } else { 0.0 })
            })
            .collect::<Result<Vec<_>>>()?;
        let stereo: Vec<StereoFrames> = rendered
            .iter()
            .map(|r| StereoFrames {
                x_a: &r.clean_a,
                x_b: &r.clean_b,
                y: &r.statics,
            })
            .collect();
        let ws = wss_build(&stereo, &models.speakers[pair.0], &models.speakers[pair.1], WeightForm::Posterior)?
            .whitened()
            .subsampled(cap, prep.cfg.seed ^ (pair.0 * 1000 + pair.1) as u64);
        let h = silverman_bandwidth(&ws);
        Ok((*pair, (ws, h)))
    })?;
    Ok(WssBank {
        sets: built.into_iter().collect(),
    })
}

/// Everything the configured estimators need besides the corpus.
#[derive(Debug, Clone)]
pub struct Systems {
    pub models: SourceModels,
    pub dnn: Option<TrainedDnn>,
    pub marginals: Option<MarginalDnns>,
    pub wss: Option<WssBank>,
}

impl Systems {
    /// Trains whatever `estimator` needs under the config's flags.
    pub fn for_estimator(prep: &Prepared, estimator: Estimator) -> Result<Self> {
        let models = train_source_models(prep, prep.cfg.model.n_components)?;
        let mut sys = Self {
            models,
            dnn: None,
            marginals: None,
            wss: None,
        };
        sys.add(prep, estimator)?;
        Ok(sys)
    }

    pub fn add(&mut self, prep: &Prepared, estimator: Estimator) -> Result<()> {
        let variant = DnnVariant::from_flags(&prep.cfg.experiment);
        let seed = prep.cfg.seed;
        match estimator {
            Estimator::Dnn if self.dnn.is_none() => {
                let data = dnn_training_data(prep, &self.models, variant)?;
                self.dnn = Some(train_joint_dnn(prep, &data, seed)?);
            }
            Estimator::SeparateMarginals if self.marginals.is_none() => {
                let data = dnn_training_data(prep, &self.models, variant)?;
                self.marginals = Some(train_marginal_dnns(prep, &data, seed)?);
            }
            Estimator::Wss if self.wss.is_none() => self.wss = Some(build_wss_bank(prep, &self.models)?),
            _ => {}
        }
        Ok(())
    }
}

/// The masker gain a decode uses: the true one, or the grid estimate.
pub fn decode_gain(prep: &Prepared, models: &SourceModels, m: &MixtureEntry, r: &RenderedMixture) -> Result<f64> {
    if prep.cfg.experiment.oracle_gain {
        return Ok(r.gain);
    }
    let (sa, sb) = prep.corpus.speaker_pair(m);
    let (best_db, _) = estimate_gain(
        &r.mfcc,
        &models.speakers[sa],
        &models.speakers[sb],
        &gain_grid_db(),
        &prep.ctx,
        prep.combination(),
    )?;
    Ok(10f64.powf(best_db / 20.0))
}

fn floor_unseen(t: JointStateTensor) -> Result<JointStateTensor> {
    let (n, a, b) = t.shape();
    let values = t
        .values()
        .iter()
        .map(|&v| if v.is_finite() { v } else { UNSEEN_LOG_LIKELIHOOD as f32 })
        .collect();
    JointStateTensor::new(n, a, b, t.scale(), values)
}

fn net_rows(net: &JointPosteriorNet, r: &RenderedMixture, pair: (usize, usize), gain_db: f64) -> Result<Array2<f64>> {
    let inputs = compose_dnn_matrix(&r.log_mel, &net.input_spec, pair, gain_db, &net.standardization)?;
    net.forward_batch(&inputs)
}

/// Joint-state scores of a rendered mixture under `estimator`.
pub fn build_tensor(
    prep: &Prepared,
    sys: &Systems,
    estimator: Estimator,
    m: &MixtureEntry,
    r: &RenderedMixture,
    seed: u64,
) -> Result<JointStateTensor> {
    let pair = prep.corpus.speaker_pair(m);
    let flags = &prep.cfg.experiment;
    let gain = decode_gain(prep, &sys.models, m, r)?;
    let model_a = &sys.models.speakers[pair.0];
    let model_b = if flags.masker_gain_adapt {
        sys.models.speakers[pair.1].gain_adapt(gain, &prep.frontend.dct_of_ones().to_vec())?
    } else {
        sys.models.speakers[pair.1].clone()
    };
    let mode = prep.combination();
    let ll = TensorScale::LogLikelihood;
    let missing = |what: &str| Error::Argument(format!("estimator {} needs a trained {what}", estimator.as_str()));
    match estimator {
        Estimator::Vts => vts_joint_tensor(&r.mfcc, model_a, &model_b, &prep.ctx, mode, ll),
        Estimator::Max => max_joint_tensor(&r.mfcc, model_a, &model_b, &prep.ctx, mode, ll),
        Estimator::Pmc => pmc_joint_tensor(&r.mfcc, model_a, &model_b, &prep.ctx, mode, flags.pmc_samples, seed, ll),
        Estimator::Wss => {
            let bank = sys.wss.as_ref().ok_or_else(|| missing("sample bank"))?;
            let (ws, h) = bank.sets.get(&pair).ok_or(Error::SpeakerCode(pair.0, pair.1))?;
            floor_unseen(wss_joint_tensor(&r.statics, ws, *h, ll)?)
        }
        Estimator::Dnn => {
            let d = sys.dnn.as_ref().ok_or_else(|| missing("joint network"))?;
            let g = if d.variant.gain_feature { db(gain) } else { 0.0 };
            infer_joint_tensor(&d.net, &r.log_mel, pair, g)
        }
        Estimator::SeparateMarginals => {
            let md = sys.marginals.as_ref().ok_or_else(|| missing("marginal network pair"))?;
            let g = if md.variant.gain_feature { db(gain) } else { 0.0 };
            let pa = net_rows(&md.target, r, pair, g)?;
            let pb = net_rows(&md.masker, r, pair, g)?;
            let (t_len, na, nb) = (pa.nrows(), pa.ncols(), pb.ncols());
            let mut values = Vec::with_capacity(t_len * na * nb);
            for t in 0..t_len {
                let (za, zb) = (pa.row(t).sum(), pb.row(t).sum());
                for i in 0..na {
                    for j in 0..nb {
                        values.push(pa[[t, i]] / za * pb[[t, j]] / zb);
                    }
                }
            }
            JointStateTensor::from_unnormalized(t_len, na, nb, values)
        }
    }
}

/// One decoded test mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOutcome {
    /// Index into the corpus test mixtures.
    pub mixture: usize,
    pub words_a: Vec<String>,
    pub words_b: Vec<String>,
    pub letter_ok: bool,
    pub number_ok: bool,
    /// Set when tensor building or decoding failed; the mixture then counts as wrong.
    pub error: Option<String>,
}

/// Decoding wordnets and topologies shared across mixtures.
pub struct DecodeSetup {
    pub target: Wordnet,
    pub masker: Wordnet,
}

impl DecodeSetup {
    pub fn new(prep: &Prepared) -> Result<Self> {
        Ok(Self {
            target: prep.target_net()?,
            masker: prep.masker_net()?,
        })
    }
}

pub fn decode_tensor(
    prep: &Prepared,
    sys: &Systems,
    setup: &DecodeSetup,
    m: &MixtureEntry,
    tensor: &JointStateTensor,
) -> Result<DecodeResult> {
    let (sa, sb) = prep.corpus.speaker_pair(m);
    let ta = sys.models.speakers[sa].topology();
    let tb = sys.models.speakers[sb].topology();
    joint_decode(tensor, &setup.target, &setup.masker, (&ta, &tb), &prep.decode_config())
}

/// Scores a decode result (or failure) against the mixture's target words.
pub fn outcome(prep: &Prepared, k: usize, res: Result<DecodeResult>) -> MixtureOutcome {
    let m = &prep.corpus.test_mixtures[k];
    let truth = &prep.corpus.utterances[m.target].words;
    let (ls, ns) = (prep.letter_slot(), prep.number_slot());
    match res {
        Ok(r) => MixtureOutcome {
            mixture: k,
            letter_ok: r.words_a.get(ls) == truth.get(ls),
            number_ok: r.words_a.get(ns) == truth.get(ns),
            words_a: r.words_a,
            words_b: r.words_b,
            error: None,
        },
        Err(e) => {
            log::warn!("mixture {}: {e}", m.id);
            MixtureOutcome {
                mixture: k,
                words_a: Vec::new(),
                words_b: Vec::new(),
                letter_ok: false,
                number_ok: false,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Builds the tensor and decodes every test mixture with `estimator`.
pub fn decode_test_set(prep: &Prepared, sys: &Systems, estimator: Estimator) -> Result<Vec<MixtureOutcome>> {
    let setup = DecodeSetup::new(prep)?;
    let idx: Vec<usize> = (0..prep.corpus.test_mixtures.len()).collect();
    prep.par_map(&idx, |&k| {
        let m = &prep.corpus.test_mixtures[k];
        let res = prep.render(m, m.tmr_db).and_then(|r| {
            let t = build_tensor(prep, sys, estimator, m, &r, prep.cfg.seed.wrapping_add(k as u64))?;
            decode_tensor(prep, sys, &setup, m, &t)
        });
        Ok(outcome(prep, k, res))
    })
}

/// Clean decodes of every test utterance with its speaker's model and a
/// single-chain search over the open grammar.
pub fn single_talker_outcomes(prep: &Prepared, models: &SourceModels) -> Result<Vec<(bool, bool)>> {
    let net = prep.open_net()?;
    let test: Vec<usize> = (0..prep.corpus.utterances.len())
        .filter(|&u| prep.corpus.utterances[u].split == Split::Test)
        .collect();
    let (ls, ns) = (prep.letter_slot(), prep.number_slot());
    prep.par_map(&test, |&u| {
        let e = &prep.corpus.utterances[u];
        let model = &models.speakers[e.speaker];
        let f = append_deltas(&prep.frontend.mfcc(&prep.audio[u].waveform)?)?;
        let mut values = Vec::with_capacity(f.len() * model.n_states());
        for t in 0..f.len() {
            values.extend(model.log_likelihoods(f.frame(t).as_slice().expect("contiguous frame"))?);
        }
        let tensor = JointStateTensor::from_log_likelihoods(f.len(), model.n_states(), 1, values, TensorScale::LogLikelihood)?;
        match single_chain_decode(&tensor, &net, &model.topology(), &prep.decode_config()) {
            Ok(r) => Ok((r.words_a.get(ls) == e.words.get(ls), r.words_a.get(ns) == e.words.get(ns))),
            Err(err) => {
                log::warn!("utterance {}: {err}", e.id);
                Ok((false, false))
            }
        }
    })
}
