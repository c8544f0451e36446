//! Experiment orchestration: corpus builds, training, decoding, reports and the check suite.

pub mod config;
pub mod corpus;
pub mod experiment;
pub mod pipeline;
pub mod report;
pub mod verify;

pub use config::{Combination, Estimator, ExperimentConfig, ExperimentFlags};
pub use corpus::{build_corpus, Condition, Corpus, MixtureEntry, Split, UtteranceEntry};
pub use experiment::{run_joint_experiment, run_single_talker_baseline, sweep, write_sweep, SweepAxis};
pub use report::{read_report_csv, write_report_csv, ReportRow};
pub use verify::{verify_suite, Canary, Level, VerifySummary};
