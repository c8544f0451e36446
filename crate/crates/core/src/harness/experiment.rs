//! Whole runs: the joint experiment, the single-talker baseline and sweeps.

use std::path::Path;

use super::config::{Estimator, ExperimentConfig};
use super::corpus::Condition;
use super::pipeline::{decode_test_set, single_talker_outcomes, train_source_models, Prepared, Systems};
use super::report::{find, overall_row, render_svg, report_rows, write_report_csv, ReportRow};
use crate::error::{Error, Result};

/// Decodes the test set with each estimator, sharing source models and the corpus.
pub fn run_estimators(prep: &Prepared, estimators: &[Estimator]) -> Result<Vec<ReportRow>> {
    let models = train_source_models(prep, prep.cfg.model.n_components)?;
    let mut sys = Systems {
        models,
        dnn: None,
        marginals: None,
        wss: None,
    };
    let mut rows = Vec::new();
    for &est in estimators {
        sys.add(prep, est)?;
        let outcomes = decode_test_set(prep, &sys, est)?;
        let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
        if failed > 0 {
            log::warn!("{}: {failed} of {} decodes failed", est.as_str(), outcomes.len());
        }
        rows.extend(report_rows(&prep.corpus, &outcomes, &prep.cfg.experiment.tmr_set, est.as_str()));
    }
    Ok(rows)
}

/// Every condition and TMR row for the configured estimator.
pub fn run_joint_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let prep = Prepared::new(cfg)?;
    run_estimators(&prep, &[cfg.experiment.estimator])
}

/// Clean decodes of the test utterances, one overall row labelled
/// `single_talker_<n>gmm`.
pub fn run_single_talker_baseline(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let prep = Prepared::new(cfg)?;
    single_talker_rows(&prep, cfg.model.n_components)
}

pub fn single_talker_rows(prep: &Prepared, n_components: usize) -> Result<Vec<ReportRow>> {
    let models = train_source_models(prep, n_components)?;
    let hits = single_talker_outcomes(prep, &models)?;
    Ok(vec![overall_row(&hits, &format!("single_talker_{n_components}gmm"))])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Overall accuracy at each TMR, per estimator.
    Tmr,
    /// Overall accuracy over all TMRs, one row per estimator.
    Estimator,
    /// Gain-adapted and gain-unaware runs of each estimator, rows labelled `<estimator>/<mode>`.
    GainMode,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tmr" => Some(SweepAxis::Tmr),
            "estimator" => Some(SweepAxis::Estimator),
            "gain_mode" | "gain-mode" => Some(SweepAxis::GainMode),
            _ => None,
        }
    }
}

fn overall_over_tmr(rows: &[ReportRow], est: Estimator, tmr_db: Option<f64>) -> Option<ReportRow> {
    rows.iter()
        .find(|r| r.estimator == est.as_str() && r.condition == Condition::Overall && r.tmr_db == tmr_db)
        .cloned()
}

/// Gain handling switched off everywhere: single-gain training, no gain input
/// and no masker gain adaptation.
pub fn gain_unaware(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.experiment.multi_gain_training = false;
    c.experiment.gain_feature = false;
    c.experiment.masker_gain_adapt = false;
    c
}

/// Runs `estimators` along one axis with everything else fixed by `cfg`.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, estimators: &[Estimator]) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    if estimators.is_empty() {
        return Err(Error::Argument("sweep needs at least one estimator".into()));
    }
    let pick = |rows: &[ReportRow], tmr: Option<f64>| -> Vec<ReportRow> {
        estimators.iter().filter_map(|&e| overall_over_tmr(rows, e, tmr)).collect()
    };
    match axis {
        SweepAxis::Tmr => {
            let rows = run_estimators(&Prepared::new(cfg)?, estimators)?;
            let mut out = Vec::new();
            for &e in estimators {
                out.extend(cfg.experiment.tmr_set.iter().filter_map(|&t| overall_over_tmr(&rows, e, Some(t))));
            }
            Ok(out)
        }
        SweepAxis::Estimator => Ok(pick(&run_estimators(&Prepared::new(cfg)?, estimators)?, None)),
        SweepAxis::GainMode => {
            let mut out = Vec::new();
            for (mode, c) in [("adapted", cfg.clone()), ("unaware", gain_unaware(cfg))] {
                for mut r in pick(&run_estimators(&Prepared::new(&c)?, estimators)?, None) {
                    r.estimator = format!("{}/{mode}", r.estimator);
                    out.push(r);
                }
            }
            Ok(out)
        }
    }
}

/// Writes `report.csv` and, if asked, `report.svg` into `dir`.
pub fn write_sweep(dir: &Path, rows: &[ReportRow], svg: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_report_csv(&dir.join("report.csv"), rows)?;
    if svg {
        std::fs::write(dir.join("report.svg"), render_svg(rows))?;
    }
    Ok(())
}

/// Mean overall combined accuracy of `estimator` over the given TMRs.
pub fn mean_combined(rows: &[ReportRow], estimator: &str, tmrs: &[f64]) -> Option<f64> {
    let hits: Vec<f64> = tmrs
        .iter()
        .filter_map(|&t| {
            rows.iter()
                .filter(|r| r.estimator == estimator)
                .find(|r| r.condition == Condition::Overall && r.tmr_db == Some(t))
                .map(|r| r.combined_acc)
        })
        .collect();
    (hits.len() == tmrs.len() && !hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
}

/// Overall combined accuracy of `estimator` across all TMRs.
pub fn overall_combined(rows: &[ReportRow], estimator: &str) -> Option<f64> {
    let mine: Vec<ReportRow> = rows.iter().filter(|r| r.estimator == estimator).cloned().collect();
    find(&mine, Condition::Overall, None).map(|r| r.combined_acc)
}
