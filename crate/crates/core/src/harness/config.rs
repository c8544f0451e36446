use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dnn::{RbmHyper, SgdHyper, DESK_HIDDEN};
use crate::error::{Error, Result};
use crate::jointlik::GmmCombination;

/// The six test TMRs in dB.
pub const FULL_TMR_SET: [f64; 6] = [6.0, 3.0, 0.0, -3.0, -6.0, -9.0];
/// Mixtures per TMR in the full-size test set.
pub const FULL_MIXTURES_PER_TMR: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Vts,
    Max,
    Pmc,
    Wss,
    Dnn,
    SeparateMarginals,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Vts,
        Estimator::Max,
        Estimator::Pmc,
        Estimator::Wss,
        Estimator::Dnn,
        Estimator::SeparateMarginals,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Vts => "vts",
            Estimator::Max => "max",
            Estimator::Pmc => "pmc",
            Estimator::Wss => "wss",
            Estimator::Dnn => "dnn",
            Estimator::SeparateMarginals => "separate_marginals",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }

    pub fn needs_dnn(&self) -> bool {
        matches!(self, Estimator::Dnn | Estimator::SeparateMarginals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    Pairwise,
    Collapse,
}

impl From<Combination> for GmmCombination {
    fn from(c: Combination) -> Self {
        match c {
            Combination::Pairwise => GmmCombination::PairWise,
            Combination::Collapse => GmmCombination::Collapse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Held out per speaker for test mixtures and the single-talker baseline.
    pub test_per_speaker: usize,
    /// `desk` or a path to a grammar file whose words the desk lexicon covers.
    pub grammar: String,
    pub train_mixtures: usize,
    pub test_mixtures_per_tmr: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_components: usize,
    pub map_tau: f64,
    pub combination: Combination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnnConfig {
    pub hidden: Vec<usize>,
    /// Frames on each side of the centre frame.
    pub context: usize,
    /// Every n-th frame of a training mixture becomes a training row.
    pub frame_stride: usize,
    /// Share of training mixtures used for the init phase.
    pub init_fraction: f64,
    /// Share of training mixtures held out for fine-tuning early stopping and logging.
    pub held_out_fraction: f64,
    pub rbm: RbmHyper,
    pub init: SgdHyper,
    pub finetune: SgdHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFlags {
    pub tmr_set: Vec<f64>,
    pub estimator: Estimator,
    /// Use the true masker gain instead of a grid estimate.
    pub oracle_gain: bool,
    /// Draw training-mixture TMRs from `tmr_set` instead of fixing them at 0 dB.
    pub multi_gain_training: bool,
    /// Feed the masker gain to the network; when off the gain input is always 0.
    pub gain_feature: bool,
    /// Shift the masker model by the masker gain before model combination.
    pub masker_gain_adapt: bool,
    pub pmc_samples: usize,
    /// Cap on kernel samples per speaker pair.
    pub wss_max_samples: usize,
    pub beam: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Upper bound on worker threads for per-mixture work.
    pub workers: usize,
    pub frontend: String,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub dnn: DnnConfig,
    pub experiment: ExperimentFlags,
}

impl ExperimentConfig {
    /// 8 speakers × 60 utterances, the desk grammar and the six test TMRs.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            workers: 1,
            frontend: "desk".into(),
            corpus: CorpusConfig {
                n_speakers: 8,
                utterances_per_speaker: 60,
                test_per_speaker: 12,
                grammar: "desk".into(),
                train_mixtures: 1000,
                test_mixtures_per_tmr: 24,
            },
            model: ModelConfig {
                n_components: 4,
                map_tau: 10.0,
                combination: Combination::Pairwise,
            },
            dnn: DnnConfig {
                hidden: DESK_HIDDEN.to_vec(),
                context: 2,
                frame_stride: 2,
                init_fraction: 0.5,
                held_out_fraction: 0.1,
                rbm: RbmHyper {
                    rate: 0.02,
                    momentum: 0.5,
                    epochs: 6,
                    batch: 64,
                    n_fantasy: 64,
                    cd_steps: 1,
                    seed: 0,
                },
                init: SgdHyper {
                    rate: 0.3,
                    batch: 32,
                    epochs: 10,
                    ..SgdHyper::init_default()
                },
                finetune: SgdHyper {
                    rate: 0.3,
                    batch: 32,
                    epochs: 30,
                    ..SgdHyper::finetune_default()
                },
            },
            experiment: ExperimentFlags {
                tmr_set: FULL_TMR_SET.to_vec(),
                estimator: Estimator::Vts,
                oracle_gain: true,
                multi_gain_training: true,
                gain_feature: true,
                masker_gain_adapt: true,
                pmc_samples: 300,
                wss_max_samples: 2000,
                beam: None,
            },
        }
    }

    fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e: toml::de::Error| {
            let (line, column) = e
                .span()
                .map(|sp| {
                    let before = &text[..sp.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    (line, column)
                })
                .unwrap_or((0, 0));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; a relative grammar path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Makes a relative grammar path relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let g = &self.corpus.grammar;
        if g != "desk" && Path::new(g).is_relative() {
            self.corpus.grammar = base.join(g).to_string_lossy().into_owned();
        }
    }

    pub fn grammar_path(&self) -> Option<PathBuf> {
        match self.corpus.grammar.as_str() {
            "desk" => None,
            p => Some(PathBuf::from(p)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if self.experiment.tmr_set.is_empty() {
            return bad("tmr_set must not be empty");
        }
        if self.experiment.tmr_set.iter().any(|t| !t.is_finite()) {
            return bad("tmr_set entries must be finite");
        }
        let c = &self.corpus;
        if c.n_speakers < 2 {
            return bad("at least two speakers are needed for different-talker mixtures");
        }
        if c.test_per_speaker < 2 || c.test_per_speaker >= c.utterances_per_speaker {
            return bad("test_per_speaker must be at least 2 and leave training utterances");
        }
        if self.frontend != "desk" {
            return Err(Error::Unsupported(format!("frontend preset `{}`", self.frontend)));
        }
        if self.workers == 0 {
            return bad("workers must be positive");
        }
        if self.model.n_components == 0 {
            return bad("n_components must be positive");
        }
        let d = &self.dnn;
        if d.frame_stride == 0 {
            return bad("frame_stride must be positive");
        }
        if !(d.init_fraction > 0.0 && d.init_fraction <= 1.0) {
            return bad("init_fraction must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&d.held_out_fraction) {
            return bad("held_out_fraction must be in [0, 1)");
        }
        if let Some(p) = self.grammar_path() {
            if !p.exists() {
                return Err(Error::Argument(format!("grammar file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::desk();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::desk();
        cfg.experiment.tmr_set.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.corpus.grammar = "/no/such/file.grammar".into();
        assert!(cfg.validate().is_err());
        let text = ExperimentConfig::desk().to_toml().replace("workers = 1", "workers = 1\nbogus = 3");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn estimator_names() {
        for e in Estimator::ALL {
            assert_eq!(Estimator::parse(e.as_str()), Some(e));
        }
        assert_eq!(FULL_TMR_SET.len(), 6);
    }
}
