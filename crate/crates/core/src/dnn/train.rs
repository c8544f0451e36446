//! Supervised phases: joint-layer initialization against per-frame joint
//! labels D, then fine-tuning through the marginalization layer.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backprop, finetune_batch_objective, init_batch_objective, JointPosteriorNet, LayerGrad, Stage};
use crate::acoustic::GmmHmmSet;
use crate::error::{check_dim, Error, Result};
use crate::features::FeatureSequence;
use crate::jointlik::{vts_joint_tensor, GmmCombination, MismatchContext, TensorScale};

/// Inputs (one row per frame) with the labels of one or both phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub inputs: Array2<f64>,
    /// Flattened D per row, `|sᵃ|·|sᵇ|` wide.
    pub init_labels: Option<Array2<f64>>,
    /// `(dmᵃ, dmᵇ)` per row.
    pub marginal_labels: Option<(Array2<f64>, Array2<f64>)>,
}

const SIMPLEX_TOL: f64 = 1e-4;

fn check_simplex_rows(m: &Array2<f64>, what: &str) -> Result<()> {
    for (k, row) in m.outer_iter().enumerate() {
        let s: f64 = row.sum();
        if row.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Argument(format!("{what} row {k} is not a distribution (sum {s})")));
        }
    }
    Ok(())
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn validate(&self, net: &JointPosteriorNet) -> Result<()> {
        check_dim("network input", net.input_spec.dim(), self.inputs.ncols())?;
        if let Some(d) = &self.init_labels {
            check_dim("init label rows", self.len(), d.nrows())?;
            check_dim("init label width", net.n_joint(), d.ncols())?;
            check_simplex_rows(d, "joint label")?;
        }
        if let Some((a, b)) = &self.marginal_labels {
            check_dim("marginal label rows", self.len(), a.nrows())?;
            check_dim("marginal label rows", self.len(), b.nrows())?;
            check_dim("marginal label a width", net.joint_shape.0, a.ncols())?;
            check_dim("marginal label b width", net.joint_shape.1, b.ncols())?;
            check_simplex_rows(a, "marginal label a")?;
            check_simplex_rows(b, "marginal label b")?;
        }
        Ok(())
    }

    /// Rows `idx` of every part.
    pub fn select(&self, idx: &[usize]) -> TrainSet {
        TrainSet {
            inputs: self.inputs.select(Axis(0), idx),
            init_labels: self.init_labels.as_ref().map(|d| d.select(Axis(0), idx)),
            marginal_labels: self
                .marginal_labels
                .as_ref()
                .map(|(a, b)| (a.select(Axis(0), idx), b.select(Axis(0), idx))),
        }
    }

    /// Concatenates sets row-wise; label parts survive only if every set has them.
    pub fn concat(sets: &[TrainSet]) -> Result<TrainSet> {
        if sets.is_empty() {
            return Err(Error::EmptySequence("no training sets".into()));
        }
        let cat = |parts: Vec<ndarray::ArrayView2<f64>>| {
            ndarray::concatenate(Axis(0), &parts).map_err(|e| Error::Argument(format!("cannot stack rows: {e}")))
        };
        let inputs = cat(sets.iter().map(|s| s.inputs.view()).collect())?;
        let init_labels = if sets.iter().all(|s| s.init_labels.is_some()) {
            Some(cat(sets.iter().map(|s| s.init_labels.as_ref().expect("checked").view()).collect())?)
        } else {
            None
        };
        let marginal_labels = if sets.iter().all(|s| s.marginal_labels.is_some()) {
            let a = cat(sets.iter().map(|s| s.marginal_labels.as_ref().expect("checked").0.view()).collect())?;
            let b = cat(sets.iter().map(|s| s.marginal_labels.as_ref().expect("checked").1.view()).collect())?;
            Some((a, b))
        } else {
            None
        };
        Ok(TrainSet {
            inputs,
            init_labels,
            marginal_labels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdHyper {
    pub rate: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Stop once held-out loss has not improved for this many epochs, keeping the best net.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl SgdHyper {
    pub fn init_default() -> Self {
        Self {
            rate: 0.1,
            momentum: 0.9,
            batch: 128,
            epochs: 10,
            patience: None,
            seed: 0,
        }
    }

    pub fn finetune_default() -> Self {
        Self {
            rate: 0.01,
            ..Self::init_default()
        }
    }
}

/// One row of the training log. Epoch 0 is the state before any update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub phase: Stage,
    pub epoch: usize,
    /// Mean per-frame loss on the training rows.
    pub loss: f64,
    pub held_out: Option<f64>,
}

#[derive(Clone, Copy)]
enum Objective {
    Init,
    Finetune,
}

impl Objective {
    fn stage(self) -> Stage {
        match self {
            Objective::Init => Stage::Init,
            Objective::Finetune => Stage::Finetune,
        }
    }

    fn grads(self, net: &JointPosteriorNet, set: &TrainSet) -> Result<(f64, Vec<LayerGrad>)> {
        match self {
            Objective::Init => {
                let d = set.init_labels.as_ref().expect("validated");
                backprop(net, &set.inputs, |out| init_batch_objective(out, d))
            }
            Objective::Finetune => {
                let (a, b) = set.marginal_labels.as_ref().expect("validated");
                backprop(net, &set.inputs, |out| finetune_batch_objective(out, net.joint_shape, a, b))
            }
        }
    }

    /// Mean per-row loss.
    fn mean_loss(self, net: &JointPosteriorNet, set: &TrainSet) -> Result<f64> {
        let out = net.forward_batch(&set.inputs)?;
        let total = match self {
            Objective::Init => init_batch_objective(&out, set.init_labels.as_ref().expect("validated"))?.0,
            Objective::Finetune => {
                let (a, b) = set.marginal_labels.as_ref().expect("validated");
                finetune_batch_objective(&out, net.joint_shape, a, b)?.0
            }
        };
        Ok(total / set.len().max(1) as f64)
    }
}

fn sgd(
    mut net: JointPosteriorNet,
    train: &TrainSet,
    held_out: Option<&TrainSet>,
    hyper: &SgdHyper,
    objective: Objective,
) -> Result<(JointPosteriorNet, Vec<EpochLog>)> {
    if train.is_empty() {
        return Err(Error::EmptySequence("no training rows".into()));
    }
    if hyper.batch == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let phase = objective.stage();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut vel: Vec<LayerGrad> = net
        .layers
        .iter()
        .map(|l| LayerGrad {
            weights: Array2::zeros(l.weights.dim()),
            bias: ndarray::Array1::zeros(l.bias.len()),
        })
        .collect();
    let eval = |net: &JointPosteriorNet, epoch: usize| -> Result<EpochLog> {
        Ok(EpochLog {
            phase,
            epoch,
            loss: objective.mean_loss(net, train)?,
            held_out: held_out.map(|h| objective.mean_loss(net, h)).transpose()?,
        })
    };
    let mut log = vec![eval(&net, 0)?];
    let mut best = (log[0].held_out.unwrap_or(f64::INFINITY), net.clone());
    let mut since_best = 0;
    let mut batch_trace = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch) {
            let batch = train.select(chunk);
            let (loss, grads) = objective.grads(&net, &batch)?;
            let nb = chunk.len() as f64;
            batch_trace.push(loss / nb);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, trace: batch_trace });
            }
            for ((layer, v), g) in net.layers.iter_mut().zip(&mut vel).zip(&grads) {
                v.weights *= hyper.momentum;
                v.weights.scaled_add(-hyper.rate / nb, &g.weights);
                v.bias *= hyper.momentum;
                v.bias.scaled_add(-hyper.rate / nb, &g.bias);
                layer.weights += &v.weights;
                layer.bias += &v.bias;
            }
        }
        let entry = eval(&net, epoch)?;
        log::debug!("{} epoch {epoch}: loss {:.6} held-out {:?}", phase.as_str(), entry.loss, entry.held_out);
        if !entry.loss.is_finite() {
            return Err(Error::Divergence { epoch, trace: batch_trace });
        }
        log.push(entry);
        if let (Some(h), Some(patience)) = (entry.held_out, hyper.patience) {
            if h < best.0 {
                best = (h, net.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    if hyper.patience.is_some() && held_out.is_some() {
        net = best.1;
    }
    net.stage = phase;
    Ok((net, log))
}

/// Minimizes `½Σ‖X_k − D_k‖²_F` over all layers.
pub fn train_init_phase(
    net: JointPosteriorNet,
    train: &TrainSet,
    held_out: Option<&TrainSet>,
    hyper: &SgdHyper,
) -> Result<(JointPosteriorNet, Vec<EpochLog>)> {
    if net.stage == Stage::Finetune {
        return Err(Error::PhaseOrder {
            found: net.stage.as_str(),
            required: Stage::Generative.as_str(),
        });
    }
    for set in std::iter::once(train).chain(held_out) {
        set.validate(&net)?;
        if set.init_labels.is_none() {
            return Err(Error::Argument("init phase needs joint labels".into()));
        }
    }
    sgd(net, train, held_out, hyper, Objective::Init)
}

/// Minimizes the marginal objective through the marginalization layer, over all layers.
pub fn train_finetune_phase(
    net: JointPosteriorNet,
    train: &TrainSet,
    held_out: Option<&TrainSet>,
    hyper: &SgdHyper,
) -> Result<(JointPosteriorNet, Vec<EpochLog>)> {
    if net.stage < Stage::Init {
        return Err(Error::PhaseOrder {
            found: net.stage.as_str(),
            required: Stage::Init.as_str(),
        });
    }
    for set in std::iter::once(train).chain(held_out) {
        set.validate(&net)?;
        if set.marginal_labels.is_none() {
            return Err(Error::Argument("fine-tuning needs marginal labels".into()));
        }
    }
    sgd(net, train, held_out, hyper, Objective::Finetune)
}

/// Per-frame joint labels D from VTS joint likelihoods under equal state priors.
pub fn init_labels_vts(
    mixed: &FeatureSequence,
    model_a: &GmmHmmSet,
    model_b: &GmmHmmSet,
    ctx: &MismatchContext,
    mode: GmmCombination,
) -> Result<Array2<f64>> {
    let t = vts_joint_tensor(mixed, model_a, model_b, ctx, mode, TensorScale::Posterior)?;
    let (n, a, b) = t.shape();
    Ok(Array2::from_shape_vec((n, a * b), t.values().iter().map(|v| *v as f64).collect()).expect("tensor layout"))
}
