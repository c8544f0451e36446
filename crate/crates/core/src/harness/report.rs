//! Accuracy tables: per-TMR and per-condition rows, their aggregation, CSV and SVG.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::{Condition, Corpus};
use super::pipeline::MixtureOutcome;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: Condition,
    /// `None` is the row over every TMR.
    pub tmr_db: Option<f64>,
    pub estimator: String,
    pub letter_acc: f64,
    pub number_acc: f64,
    pub combined_acc: f64,
    pub n: usize,
}

impl ReportRow {
    fn from_counts(condition: Condition, tmr_db: Option<f64>, estimator: &str, letters: usize, numbers: usize, n: usize) -> Self {
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        let (letter_acc, number_acc) = (pct(letters), pct(numbers));
        Self {
            condition,
            tmr_db,
            estimator: estimator.to_string(),
            letter_acc,
            number_acc,
            combined_acc: 0.5 * (letter_acc + number_acc),
            n,
        }
    }
}

/// Mixture-count-weighted mean of `rows`, labelled with `condition` and `tmr_db`.
pub fn weighted_mean(rows: &[&ReportRow], condition: Condition, tmr_db: Option<f64>) -> Option<ReportRow> {
    let n: usize = rows.iter().map(|r| r.n).sum();
    if n == 0 {
        return None;
    }
    let w = |f: fn(&ReportRow) -> f64| rows.iter().map(|r| f(r) * r.n as f64).sum::<f64>() / n as f64;
    let letter_acc = w(|r| r.letter_acc);
    let number_acc = w(|r| r.number_acc);
    Some(ReportRow {
        condition,
        tmr_db,
        estimator: rows[0].estimator.clone(),
        letter_acc,
        number_acc,
        combined_acc: 0.5 * (letter_acc + number_acc),
        n,
    })
}

/// Completes per-TMR condition rows with the derived rows: overall per TMR,
/// each condition over all TMRs, and overall over all TMRs. Input rows with
/// `tmr_db = None` or `Condition::Overall` are ignored.
pub fn aggregate(base: &[ReportRow], tmr_set: &[f64]) -> Vec<ReportRow> {
    let base: Vec<&ReportRow> = base
        .iter()
        .filter(|r| r.tmr_db.is_some() && r.condition != Condition::Overall)
        .collect();
    let mut out = Vec::new();
    let mut per_tmr_overall = Vec::new();
    for &tmr in tmr_set {
        let at: Vec<&ReportRow> = base.iter().copied().filter(|r| r.tmr_db == Some(tmr)).collect();
        out.extend(at.iter().map(|r| (*r).clone()));
        if let Some(o) = weighted_mean(&at, Condition::Overall, Some(tmr)) {
            per_tmr_overall.push(o.clone());
            out.push(o);
        }
    }
    for c in Condition::PARTITION {
        let rows: Vec<&ReportRow> = base.iter().copied().filter(|r| r.condition == c).collect();
        out.extend(weighted_mean(&rows, c, None));
    }
    let refs: Vec<&ReportRow> = per_tmr_overall.iter().collect();
    out.extend(weighted_mean(&refs, Condition::Overall, None));
    out
}

/// The full table for one estimator's outcomes.
pub fn report_rows(corpus: &Corpus, outcomes: &[MixtureOutcome], tmr_set: &[f64], estimator: &str) -> Vec<ReportRow> {
    let mut base = Vec::new();
    for &tmr in tmr_set {
        for c in Condition::PARTITION {
            let sel: Vec<&MixtureOutcome> = outcomes
                .iter()
                .filter(|o| {
                    let m = &corpus.test_mixtures[o.mixture];
                    m.tmr_db == tmr && m.condition == c
                })
                .collect();
            if sel.is_empty() {
                continue;
            }
            let letters = sel.iter().filter(|o| o.letter_ok).count();
            let numbers = sel.iter().filter(|o| o.number_ok).count();
            base.push(ReportRow::from_counts(c, Some(tmr), estimator, letters, numbers, sel.len()));
        }
    }
    aggregate(&base, tmr_set)
}

/// A single overall row from `(letter_ok, number_ok)` pairs.
pub fn overall_row(hits: &[(bool, bool)], estimator: &str) -> ReportRow {
    let letters = hits.iter().filter(|h| h.0).count();
    let numbers = hits.iter().filter(|h| h.1).count();
    ReportRow::from_counts(Condition::Overall, None, estimator, letters, numbers, hits.len())
}

pub fn find<'a>(rows: &'a [ReportRow], condition: Condition, tmr_db: Option<f64>) -> Option<&'a ReportRow> {
    rows.iter().find(|r| r.condition == condition && r.tmr_db == tmr_db)
}

const HEADER: [&str; 7] = ["estimator", "condition", "tmr_db", "letter_acc", "number_acc", "combined_acc", "n"];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Writes rows in a fixed schema; floats use the shortest exact representation.
pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.condition.as_str().to_string(),
            r.tmr_db.map_or("all".to_string(), |t| t.to_string()),
            r.letter_acc.to_string(),
            r.number_acc.to_string(),
            r.combined_acc.to_string(),
            r.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Format(format!("unexpected report header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::Format(format!("report row {}: bad {what}", i + 1));
        let num = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(what));
        rows.push(ReportRow {
            estimator: rec[0].to_string(),
            condition: Condition::parse(&rec[1]).ok_or_else(|| bad("condition"))?,
            tmr_db: match &rec[2] {
                "all" => None,
                t => Some(t.parse().map_err(|_| bad("tmr_db"))?),
            },
            letter_acc: num(3, "letter_acc")?,
            number_acc: num(4, "number_acc")?,
            combined_acc: num(5, "combined_acc")?,
            n: rec[6].parse().map_err(|_| bad("n"))?,
        });
    }
    Ok(rows)
}

/// Line plot of overall combined accuracy against TMR, one line per estimator.
pub fn render_svg(rows: &[ReportRow]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in rows.iter().filter(|r| r.condition == Condition::Overall) {
        let Some(t) = r.tmr_db else { continue };
        match series.iter_mut().find(|(e, _)| *e == r.estimator) {
            Some((_, pts)) => pts.push((t, r.combined_acc)),
            None => series.push((r.estimator.clone(), vec![(t, r.combined_acc)])),
        }
    }
    let tmrs: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    let (lo, hi) = tmrs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let x = |t: f64| pad + (t - lo) / (hi - lo) * (w - 2.0 * pad);
    let y = |a: f64| h - pad - a / 100.0 * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s += &format!(
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad
    );
    for a in [0.0, 25.0, 50.0, 75.0, 100.0] {
        s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{a}</text>\n", pad - 6.0, y(a) + 4.0);
    }
    let mut ticks = tmrs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{t}</text>\n", x(t), h - pad + 16.0);
    }
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">TMR (dB)</text>\n", w / 2.0, h - 10.0);
    s += &format!("<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {0})\" text-anchor=\"middle\">combined accuracy (%)</text>\n", h / 2.0);
    for (k, (name, mut pts)) in series.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let c = colors[k % colors.len()];
        let path: Vec<String> = pts.iter().map(|&(t, a)| format!("{:.1},{:.1}", x(t), y(a))).collect();
        s += &format!("<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"2\" points=\"{}\"/>\n", path.join(" "));
        s += &format!("<text x=\"{}\" y=\"{}\" fill=\"{c}\">{name}</text>\n", w - pad - 120.0, pad + 16.0 * k as f64);
    }
    s += "</svg>\n";
    s
}
