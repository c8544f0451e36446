use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fhmm::acoustic::{read_model, write_model};
use fhmm::dnn::{read_net, write_net, write_training_log};
use fhmm::harness::experiment::{single_talker_rows, sweep, write_sweep, SweepAxis};
use fhmm::harness::pipeline::{
    build_tensor, decode_tensor, dnn_training_data, outcome, train_joint_dnn, train_source_models, DecodeSetup,
    DnnVariant, MixtureOutcome, Prepared, SourceModels, Systems, TrainedDnn,
};
use fhmm::harness::report::{report_rows, write_report_csv};
use fhmm::harness::verify::{verify_suite, Canary, Level};
use fhmm::harness::{Estimator, ExperimentConfig};
use fhmm::jointlik::{read_tensor, write_tensor};
use fhmm::Error;

#[derive(Parser)]
#[command(name = "fhmm", version, about = "Two-talker factorial-HMM decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); the built-in desk preset if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus manifests.
    Corpus {
        #[command(subcommand)]
        action: CorpusCmd,
    },
    /// Source models and networks.
    Train {
        #[command(subcommand)]
        action: TrainCmd,
    },
    /// Joint-state tensors.
    Tensor {
        #[command(subcommand)]
        action: TensorCmd,
    },
    /// Decodes the test mixtures and writes `decodes/<estimator>.csv`.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimator: Option<String>,
        /// Decode one saved tensor instead, for the named test mixture.
        #[arg(long, requires = "mixture")]
        tensor: Option<PathBuf>,
        #[arg(long)]
        mixture: Option<String>,
    },
    /// Aggregates a decode file into `report.csv`.
    Score {
        #[command(flatten)]
        common: Common,
        /// A file written by `decode`.
        #[arg(long)]
        decodes: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// Runs estimators along one axis and writes `report.csv`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// tmr, estimator or gain_mode.
        #[arg(long)]
        axis: String,
        /// Comma-separated estimator names; the config estimator if omitted.
        #[arg(long, value_delimiter = ',')]
        estimators: Vec<String>,
        /// Also write `report.svg`.
        #[arg(long)]
        svg: bool,
    },
    /// Runs the oracle check suite.
    Verify {
        /// fast or full.
        #[arg(long, default_value = "fast")]
        level: String,
        /// Inject a fault: gradient-sign or jacobian-transpose.
        #[arg(long)]
        canary: Option<String>,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Writes `utterances.csv`, `mixtures.csv` and the resolved `config.toml`.
    Build {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Trains GMM-HMMs into `models/`.
    Source {
        #[command(flatten)]
        common: Common,
        /// Overrides the config component count.
        #[arg(long)]
        components: Option<usize>,
        /// Also decode the clean test utterances and write `single_talker.csv`.
        #[arg(long)]
        baseline: bool,
    },
    /// Trains the joint-state network into `dnn/`.
    Dnn {
        #[command(flatten)]
        common: Common,
        /// Train the gain-unaware variant instead of the configured one.
        #[arg(long)]
        gain_unaware: bool,
    },
}

#[derive(Subcommand)]
enum TensorCmd {
    /// Writes `tensors/<mixture>.<estimator>.tensor` for one test mixture.
    Build {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimator: Option<String>,
        #[arg(long)]
        mixture: String,
    },
}

enum Failure {
    Usage(String),
    Verify(Vec<&'static str>),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(m) => Failure::Usage(m),
            other => Failure::Run(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Any problem with the config file is a usage error.
fn load_config(c: &Common) -> CliResult<ExperimentConfig> {
    let usage = |e: Error| Failure::Usage(e.to_string());
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn estimator(name: Option<&str>, cfg: &ExperimentConfig) -> CliResult<Estimator> {
    match name {
        None => Ok(cfg.experiment.estimator),
        Some(n) => Estimator::parse(n).ok_or_else(|| Failure::Usage(format!("unknown estimator `{n}`"))),
    }
}

fn model_dir(out: &Path) -> PathBuf {
    out.join("models")
}

fn save_models(out: &Path, m: &SourceModels) -> CliResult<()> {
    let dir = model_dir(out);
    std::fs::create_dir_all(&dir)?;
    write_model(&dir.join("base.gmm"), &m.base)?;
    for (s, model) in m.speakers.iter().enumerate() {
        write_model(&dir.join(format!("speaker{s:02}.gmm")), model)?;
    }
    Ok(())
}

/// Saved models from `out/models` if present, otherwise freshly trained.
fn models(prep: &Prepared, out: &Path) -> CliResult<SourceModels> {
    let dir = model_dir(out);
    if !dir.join("base.gmm").exists() {
        return Ok(train_source_models(prep, prep.cfg.model.n_components)?);
    }
    log::info!("loading source models from {}", dir.display());
    let base = read_model(&dir.join("base.gmm"))?;
    let speakers = (0..prep.corpus.speakers.len())
        .map(|s| read_model(&dir.join(format!("speaker{s:02}.gmm"))))
        .collect::<fhmm::Result<Vec<_>>>()?;
    Ok(SourceModels { base, speakers })
}

/// Systems for `est`, reusing a saved joint network when one exists.
fn systems(prep: &Prepared, out: &Path, est: Estimator) -> CliResult<Systems> {
    let mut sys = Systems {
        models: models(prep, out)?,
        dnn: None,
        marginals: None,
        wss: None,
    };
    let net_path = out.join("dnn").join("joint.net");
    if est == Estimator::Dnn && net_path.exists() {
        log::info!("loading joint network from {}", net_path.display());
        sys.dnn = Some(TrainedDnn {
            net: read_net(&net_path)?,
            variant: DnnVariant::from_flags(&prep.cfg.experiment),
            log: Vec::new(),
        });
    }
    sys.add(prep, est)?;
    Ok(sys)
}

fn test_mixture(prep: &Prepared, id: &str) -> CliResult<usize> {
    prep.corpus
        .test_mixtures
        .iter()
        .position(|m| m.id == id)
        .ok_or_else(|| Failure::Usage(format!("no test mixture `{id}`")))
}

fn write_decodes(path: &Path, prep: &Prepared, outcomes: &[MixtureOutcome]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Run(Error::Format(e.to_string())))?;
    let csv_err = |e: csv::Error| Failure::Run(Error::Format(e.to_string()));
    w.write_record(["mixture", "id", "words_a", "words_b", "letter_ok", "number_ok", "error"]).map_err(csv_err)?;
    for o in outcomes {
        w.write_record([
            o.mixture.to_string(),
            prep.corpus.test_mixtures[o.mixture].id.clone(),
            o.words_a.join(" "),
            o.words_b.join(" "),
            o.letter_ok.to_string(),
            o.number_ok.to_string(),
            o.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_decodes(path: &Path) -> CliResult<Vec<MixtureOutcome>> {
    let bad = |m: String| Failure::Run(Error::Format(format!("{}: {m}", path.display())));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", rec.len())));
        }
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let flag = |s: &str| s.parse::<bool>().map_err(|e| bad(e.to_string()));
        out.push(MixtureOutcome {
            mixture: rec[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            words_a: words(&rec[2]),
            words_b: words(&rec[3]),
            letter_ok: flag(&rec[4])?,
            number_ok: flag(&rec[5])?,
            error: (!rec[6].is_empty()).then(|| rec[6].to_string()),
        });
    }
    Ok(out)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Corpus {
            action: CorpusCmd::Build { common },
        } => {
            let cfg = load_config(&common)?;
            let corpus = fhmm::harness::build_corpus(&cfg)?;
            corpus.write_manifest(&common.out)?;
            std::fs::write(common.out.join("config.toml"), cfg.to_toml())?;
            println!(
                "{} utterances, {} training and {} test mixtures in {}",
                corpus.utterances.len(),
                corpus.train_mixtures.len(),
                corpus.test_mixtures.len(),
                common.out.display()
            );
        }
        Command::Train {
            action: TrainCmd::Source { common, components, baseline },
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = components {
                cfg.model.n_components = k;
            }
            let prep = Prepared::new(&cfg)?;
            let m = train_source_models(&prep, cfg.model.n_components)?;
            save_models(&common.out, &m)?;
            if baseline {
                let rows = single_talker_rows(&prep, cfg.model.n_components)?;
                write_report_csv(&common.out.join("single_talker.csv"), &rows)?;
                for r in &rows {
                    println!("{}: letter {:.2}% number {:.2}% combined {:.2}%", r.estimator, r.letter_acc, r.number_acc, r.combined_acc);
                }
            }
        }
        Command::Train {
            action: TrainCmd::Dnn { common, gain_unaware },
        } => {
            let cfg = load_config(&common)?;
            let prep = Prepared::new(&cfg)?;
            let m = models(&prep, &common.out)?;
            let variant = if gain_unaware {
                DnnVariant::gain_unaware()
            } else {
                DnnVariant::from_flags(&cfg.experiment)
            };
            let data = dnn_training_data(&prep, &m, variant)?;
            let trained = train_joint_dnn(&prep, &data, cfg.seed)?;
            let dir = common.out.join("dnn");
            std::fs::create_dir_all(&dir)?;
            write_net(&dir.join("joint.net"), &trained.net)?;
            write_training_log(&dir.join("train_log.csv"), &trained.log)?;
            if let Some(last) = trained.log.last() {
                println!("{} network: final loss {:.6}", variant.label(), last.loss);
            }
        }
        Command::Tensor {
            action: TensorCmd::Build { common, estimator: name, mixture },
        } => {
            let cfg = load_config(&common)?;
            let est = estimator(name.as_deref(), &cfg)?;
            let prep = Prepared::new(&cfg)?;
            let k = test_mixture(&prep, &mixture)?;
            let sys = systems(&prep, &common.out, est)?;
            let m = &prep.corpus.test_mixtures[k];
            let r = prep.render(m, m.tmr_db)?;
            let t = build_tensor(&prep, &sys, est, m, &r, cfg.seed.wrapping_add(k as u64))?;
            let dir = common.out.join("tensors");
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{mixture}.{}.tensor", est.as_str()));
            write_tensor(&path, &t)?;
            println!("{}", path.display());
        }
        Command::Decode {
            common,
            estimator: name,
            tensor,
            mixture,
        } => {
            let cfg = load_config(&common)?;
            let est = estimator(name.as_deref(), &cfg)?;
            let prep = Prepared::new(&cfg)?;
            if let (Some(path), Some(id)) = (tensor, mixture) {
                let k = test_mixture(&prep, &id)?;
                let sys = Systems {
                    models: models(&prep, &common.out)?,
                    dnn: None,
                    marginals: None,
                    wss: None,
                };
                let t = read_tensor(&path)?;
                let o = outcome(&prep, k, decode_tensor(&prep, &sys, &DecodeSetup::new(&prep)?, &prep.corpus.test_mixtures[k], &t));
                println!("target: {}", o.words_a.join(" "));
                println!("masker: {}", o.words_b.join(" "));
                return match o.error {
                    Some(e) => Err(Failure::Run(Error::DecodeFailure(e))),
                    None => Ok(()),
                };
            }
            let sys = systems(&prep, &common.out, est)?;
            let outcomes = fhmm::harness::pipeline::decode_test_set(&prep, &sys, est)?;
            let path = common.out.join("decodes").join(format!("{}.csv", est.as_str()));
            write_decodes(&path, &prep, &outcomes)?;
            println!("{}", path.display());
        }
        Command::Score { common, decodes, label } => {
            let cfg = load_config(&common)?;
            let corpus = fhmm::harness::build_corpus(&cfg)?;
            let outcomes = read_decodes(&decodes)?;
            if outcomes.iter().any(|o| o.mixture >= corpus.test_mixtures.len()) {
                return Err(Failure::Usage("decode file does not match the configured corpus".into()));
            }
            let label = label.unwrap_or_else(|| {
                decodes.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            let rows = report_rows(&corpus, &outcomes, &cfg.experiment.tmr_set, &label);
            std::fs::create_dir_all(&common.out)?;
            write_report_csv(&common.out.join("report.csv"), &rows)?;
            print_rows(&rows);
        }
        Command::Sweep {
            common,
            axis,
            estimators,
            svg,
        } => {
            let cfg = load_config(&common)?;
            let axis = SweepAxis::parse(&axis).ok_or_else(|| Failure::Usage(format!("unknown axis `{axis}`")))?;
            let ests = if estimators.is_empty() {
                vec![cfg.experiment.estimator]
            } else {
                estimators.iter().map(|n| estimator(Some(n), &cfg)).collect::<CliResult<Vec<_>>>()?
            };
            let rows = sweep(&cfg, axis, &ests)?;
            write_sweep(&common.out, &rows, svg)?;
            print_rows(&rows);
        }
        Command::Verify { level, canary } => {
            let level = Level::parse(&level).ok_or_else(|| Failure::Usage(format!("unknown level `{level}`")))?;
            let canary = match canary {
                None => None,
                Some(c) => Some(Canary::parse(&c).ok_or_else(|| Failure::Usage(format!("unknown canary `{c}`")))?),
            };
            let summary = verify_suite(level, canary)?;
            for c in &summary.checks {
                println!(
                    "{} {:<28} {:.3e} (limit {:.0e}) {:.2}s",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold,
                    c.seconds
                );
            }
            if !summary.passed() {
                return Err(Failure::Verify(summary.failures()));
            }
        }
    }
    Ok(())
}

fn print_rows(rows: &[fhmm::harness::ReportRow]) {
    for r in rows {
        let tmr = r.tmr_db.map_or("all".to_string(), |t| format!("{t} dB"));
        println!(
            "{:<24} {:<16} {:>7} letter {:6.2}% number {:6.2}% combined {:6.2}% (n={})",
            r.estimator,
            r.condition.as_str(),
            tmr,
            r.letter_acc,
            r.number_acc,
            r.combined_acc,
            r.n
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Verify(names)) => {
            eprintln!("verification failed: {}", names.join(", "));
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
