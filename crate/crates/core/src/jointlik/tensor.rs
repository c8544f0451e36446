use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorScale {
    LogLikelihood,
    Posterior,
}

impl TensorScale {
    pub fn as_str(&self) -> &'static str {
        match self {
            TensorScale::LogLikelihood => "log_likelihood",
            TensorScale::Posterior => "posterior",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "log_likelihood" => Some(TensorScale::LogLikelihood),
            "posterior" => Some(TensorScale::Posterior),
            _ => None,
        }
    }
}

/// T×|sᵃ|×|sᵇ| joint-state scores, frame-major, stored as f32 so the file
/// format round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStateTensor {
    n_frames: usize,
    n_a: usize,
    n_b: usize,
    scale: TensorScale,
    values: Vec<f32>,
}

impl JointStateTensor {
    pub fn new(n_frames: usize, n_a: usize, n_b: usize, scale: TensorScale, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_frames * n_a * n_b {
            return Err(Error::Dimension {
                context: "tensor payload",
                expected: n_frames * n_a * n_b,
                got: values.len(),
            });
        }
        Ok(Self {
            n_frames,
            n_a,
            n_b,
            scale,
            values,
        })
    }

    /// From f64 log-likelihoods, optionally normalized per frame (uniform joint priors).
    pub fn from_log_likelihoods(
        n_frames: usize,
        n_a: usize,
        n_b: usize,
        mut values: Vec<f64>,
        scale: TensorScale,
    ) -> Result<Self> {
        if scale == TensorScale::Posterior && n_a * n_b > 0 {
            for chunk in values.chunks_mut(n_a * n_b) {
                let z = log_sum_exp(chunk);
                if !z.is_finite() {
                    return Err(Error::Argument("frame with no finite joint likelihood".into()));
                }
                chunk.iter_mut().for_each(|v| *v = (*v - z).exp());
            }
        }
        Self::new(n_frames, n_a, n_b, scale, values.into_iter().map(|v| v as f32).collect())
    }

    /// From nonnegative per-frame scores, renormalized to sum one per frame.
    pub fn from_unnormalized(n_frames: usize, n_a: usize, n_b: usize, mut values: Vec<f64>) -> Result<Self> {
        if n_a * n_b > 0 {
            for chunk in values.chunks_mut(n_a * n_b) {
                let z: f64 = chunk.iter().sum();
                if !(z > 0.0) || !z.is_finite() {
                    return Err(Error::Argument("frame slice does not sum to a positive value".into()));
                }
                chunk.iter_mut().for_each(|v| *v /= z);
            }
        }
        Self::new(n_frames, n_a, n_b, TensorScale::Posterior, values.into_iter().map(|v| v as f32).collect())
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_frames, self.n_a, self.n_b)
    }

    pub fn scale(&self) -> TensorScale {
        self.scale
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> f32 {
        self.values[(t * self.n_a + i) * self.n_b + j]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.n_a * self.n_b;
        &self.values[t * n..(t + 1) * n]
    }

    /// Log-domain score of frame `t`, joint state `(i, j)`.
    ///
    /// Posteriors below the smallest normal f32 are floored there so that a
    /// flushed entry stays finite.
    pub fn log_score(&self, t: usize, i: usize, j: usize) -> f64 {
        let v = self.get(t, i, j);
        match self.scale {
            TensorScale::LogLikelihood => v as f64,
            TensorScale::Posterior => (v.max(f32::MIN_POSITIVE) as f64).ln(),
        }
    }

    /// Swaps the two chains.
    pub fn transposed(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for t in 0..self.n_frames {
            for j in 0..self.n_b {
                for i in 0..self.n_a {
                    values.push(self.get(t, i, j));
                }
            }
        }
        Self {
            n_frames: self.n_frames,
            n_a: self.n_b,
            n_b: self.n_a,
            scale: self.scale,
            values,
        }
    }

    /// Max deviation of any frame slice sum from one.
    pub fn max_slice_deviation(&self) -> f64 {
        (0..self.n_frames)
            .map(|t| (self.frame(t).iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

const MAGIC: &str = "FHMM-TENSOR v1";

pub fn write_tensor(path: &Path, tensor: &JointStateTensor) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(
        w,
        "{} {} {} {}",
        tensor.n_frames,
        tensor.n_a,
        tensor.n_b,
        tensor.scale.as_str()
    )?;
    for v in &tensor.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<JointStateTensor> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format(format!("{}: not a tensor file", path.display())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 4 {
        return Err(Error::Format("bad tensor header".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(e.to_string()));
    let (t, a, b) = (num(f[0])?, num(f[1])?, num(f[2])?);
    let scale = TensorScale::parse(f[3]).ok_or_else(|| Error::Format(format!("unknown scale `{}`", f[3])))?;
    let mut bytes = vec![0u8; t * a * b * 4];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    JointStateTensor::new(t, a, b, scale, values)
}
