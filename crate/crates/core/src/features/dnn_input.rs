//! Network input: a context window of log-mel frames, the masker gain in dB,
//! and a one-hot code over ordered (target, masker) speaker pairs.
//!
//! Vector layout is `[window (2c+1)·M | gain | pair code n²]`. Window and gain
//! are the continuous dimensions and get standardized; the code does not.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureSequence};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnnInputSpec {
    pub n_mel: usize,
    pub context: usize,
    pub n_speakers: usize,
}

impl DnnInputSpec {
    pub fn window_width(&self) -> usize {
        2 * self.context + 1
    }

    pub fn window_dim(&self) -> usize {
        self.window_width() * self.n_mel
    }

    /// Window plus the gain scalar.
    pub fn continuous_dim(&self) -> usize {
        self.window_dim() + 1
    }

    pub fn code_dim(&self) -> usize {
        self.n_speakers * self.n_speakers
    }

    pub fn dim(&self) -> usize {
        self.continuous_dim() + self.code_dim()
    }

    pub fn pair_index(&self, pair: (usize, usize)) -> Result<usize> {
        if pair.0 >= self.n_speakers || pair.1 >= self.n_speakers {
            return Err(Error::SpeakerCode(pair.0, pair.1));
        }
        Ok(pair.0 * self.n_speakers + pair.1)
    }
}

/// Per-dimension mean and scale for the continuous input dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Fits on raw continuous rows. Constant dimensions keep scale 1.
    pub fn fit(rows: &Array2<f64>) -> Result<Self> {
        let n = rows.nrows();
        if n == 0 {
            return Err(Error::EmptySequence("no rows to standardize".into()));
        }
        let mean = rows.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let mut scale = vec![1.0; rows.ncols()];
        for (j, s) in scale.iter_mut().enumerate() {
            let var = rows.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 1e-12 {
                *s = var.sqrt();
            }
        }
        Ok(Self {
            mean: mean.to_vec(),
            scale,
        })
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnInput {
    /// Standardized context window, frame-major.
    pub window: Vec<f64>,
    pub gain: f64,
    pub speaker_code: Vec<f64>,
}

impl DnnInput {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.window.len() + 1 + self.speaker_code.len());
        v.extend_from_slice(&self.window);
        v.push(self.gain);
        v.extend_from_slice(&self.speaker_code);
        v
    }
}

fn raw_continuous(fs: &FeatureSequence, t: usize, context: usize, gain_db: f64, out: &mut [f64]) {
    let t_len = fs.len() as isize;
    let m = fs.dim();
    for (slot, off) in (-(context as isize)..=context as isize).enumerate() {
        let src = (t as isize + off).clamp(0, t_len - 1) as usize;
        for j in 0..m {
            out[slot * m + j] = fs.frames()[[src, j]];
        }
    }
    out[(2 * context + 1) * m] = gain_db;
}

fn check_log_mel(fs: &FeatureSequence, spec: &DnnInputSpec) -> Result<()> {
    if fs.kind() != FeatureKind::LogMel {
        return Err(Error::Argument(format!(
            "network input needs log_mel features, got {}",
            fs.kind().as_str()
        )));
    }
    check_dim("log-mel width", spec.n_mel, fs.dim())?;
    if fs.is_empty() {
        return Err(Error::EmptySequence("no frames".into()));
    }
    Ok(())
}

/// Builds the standardized input for frame `t`.
pub fn compose_dnn_input(
    fs: &FeatureSequence,
    frame_index: usize,
    spec: &DnnInputSpec,
    speaker_pair: (usize, usize),
    gain_db: f64,
    stats: &Standardization,
) -> Result<DnnInput> {
    check_log_mel(fs, spec)?;
    if frame_index >= fs.len() {
        return Err(Error::Argument(format!(
            "frame {frame_index} out of range ({} frames)",
            fs.len()
        )));
    }
    check_dim("standardization", spec.continuous_dim(), stats.mean.len())?;
    let code_at = spec.pair_index(speaker_pair)?;
    let mut cont = vec![0.0; spec.continuous_dim()];
    raw_continuous(fs, frame_index, spec.context, gain_db, &mut cont);
    stats.apply(&mut cont);
    let gain = cont.pop().expect("gain slot");
    let mut code = vec![0.0; spec.code_dim()];
    code[code_at] = 1.0;
    Ok(DnnInput {
        window: cont,
        gain,
        speaker_code: code,
    })
}

/// Raw (unstandardized) continuous rows for every frame, for fitting statistics.
pub fn raw_continuous_matrix(
    fs: &FeatureSequence,
    spec: &DnnInputSpec,
    gain_db: f64,
) -> Result<Array2<f64>> {
    check_log_mel(fs, spec)?;
    let mut out = Array2::zeros((fs.len(), spec.continuous_dim()));
    for t in 0..fs.len() {
        let mut row = out.row_mut(t);
        raw_continuous(
            fs,
            t,
            spec.context,
            gain_db,
            row.as_slice_mut().expect("contiguous row"),
        );
    }
    Ok(out)
}

/// Standardized inputs for every frame of an utterance, one row per frame.
pub fn compose_dnn_matrix(
    fs: &FeatureSequence,
    spec: &DnnInputSpec,
    speaker_pair: (usize, usize),
    gain_db: f64,
    stats: &Standardization,
) -> Result<Array2<f64>> {
    check_dim("standardization", spec.continuous_dim(), stats.mean.len())?;
    let code_at = spec.pair_index(speaker_pair)?;
    let raw = raw_continuous_matrix(fs, spec, gain_db)?;
    let cd = spec.continuous_dim();
    let mut out = Array2::zeros((fs.len(), spec.dim()));
    for t in 0..fs.len() {
        let mut row = out.row_mut(t);
        let row = row.as_slice_mut().expect("contiguous row");
        row[..cd].copy_from_slice(raw.row(t).as_slice().expect("contiguous row"));
        stats.apply(&mut row[..cd]);
        row[cd + code_at] = 1.0;
    }
    Ok(out)
}
