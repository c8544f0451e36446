//! Weighted stereo samples: an empirical joint-state distribution of mixed
//! features, weighted by each source's state posterior and smoothed with a
//! Gaussian kernel.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{JointStateTensor, TensorScale};
use crate::acoustic::GmmHmmSet;
use crate::error::{check_dim, Error, Result};
use crate::features::FeatureSequence;
use crate::numeric::LN_2PI;

/// Per-frame sample weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    /// `p(s|x)`, a simplex per frame.
    Posterior,
    /// `p(x|s) / Σ p(x|s')p(s')`, prior left out of the numerator.
    Printed,
}

/// Time-aligned clean sources and their mixture.
#[derive(Debug, Clone, Copy)]
pub struct StereoFrames<'a> {
    pub x_a: &'a FeatureSequence,
    pub x_b: &'a FeatureSequence,
    pub y: &'a FeatureSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSampleSet {
    /// N×D mixed features.
    pub samples: Array2<f64>,
    /// N×|sᵃ|
    pub weights_a: Array2<f64>,
    /// N×|sᵇ|
    pub weights_b: Array2<f64>,
    /// Per-dimension offset and scale applied to samples and queries.
    pub shift: Array1<f64>,
    pub scale: Array1<f64>,
}

fn weights(model: &GmmHmmSet, x: &FeatureSequence, form: WeightForm, out: &mut Vec<f64>) -> Result<()> {
    for t in 0..x.len() {
        let frame = x.frame(t).to_vec();
        let post = model.state_posteriors(&frame)?;
        match form {
            WeightForm::Posterior => out.extend_from_slice(post.values()),
            WeightForm::Printed => out.extend(post.values().iter().zip(&model.priors).map(|(p, q)| p / q)),
        }
    }
    Ok(())
}

pub fn wss_build(
    stereo: &[StereoFrames<'_>],
    model_a: &GmmHmmSet,
    model_b: &GmmHmmSet,
    form: WeightForm,
) -> Result<WeightedSampleSet> {
    let dim = stereo
        .first()
        .map(|s| s.y.dim())
        .ok_or_else(|| Error::EmptySequence("no stereo data".into()))?;
    let (mut ys, mut wa, mut wb) = (Vec::new(), Vec::new(), Vec::new());
    let mut n = 0;
    for s in stereo {
        if s.x_a.len() != s.y.len() || s.x_b.len() != s.y.len() {
            return Err(Error::Argument(format!(
                "stereo streams misaligned: {} / {} / {} frames",
                s.x_a.len(),
                s.x_b.len(),
                s.y.len()
            )));
        }
        check_dim("mixed feature dimension", dim, s.y.dim())?;
        ys.extend(s.y.frames().iter().copied());
        weights(model_a, s.x_a, form, &mut wa)?;
        weights(model_b, s.x_b, form, &mut wb)?;
        n += s.y.len();
    }
    let shape_err = |e: ndarray::ShapeError| Error::Argument(e.to_string());
    Ok(WeightedSampleSet {
        samples: Array2::from_shape_vec((n, dim), ys).map_err(shape_err)?,
        weights_a: Array2::from_shape_vec((n, model_a.n_states()), wa).map_err(shape_err)?,
        weights_b: Array2::from_shape_vec((n, model_b.n_states()), wb).map_err(shape_err)?,
        shift: Array1::zeros(dim),
        scale: Array1::ones(dim),
    })
}

impl WeightedSampleSet {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Standardizes every dimension; densities stay expressed in the original units.
    pub fn whitened(mut self) -> Self {
        let n = self.len().max(1) as f64;
        let raw = self.raw_samples();
        let mean = raw.sum_axis(ndarray::Axis(0)) / n;
        let mut sd = Array1::<f64>::zeros(self.dim());
        for row in raw.rows() {
            sd += &(&row - &mean).mapv(|v| v * v);
        }
        let sd = (sd / n).mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
        self.samples = (&raw - &mean) / &sd;
        self.shift = mean;
        self.scale = sd;
        self
    }

    fn raw_samples(&self) -> Array2<f64> {
        &self.samples * &self.scale + &self.shift
    }

    /// Keeps `n` randomly chosen samples.
    pub fn subsampled(&self, n: usize, seed: u64) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        Self {
            samples: self.samples.select(ndarray::Axis(0), &idx),
            weights_a: self.weights_a.select(ndarray::Axis(0), &idx),
            weights_b: self.weights_b.select(ndarray::Axis(0), &idx),
            shift: self.shift.clone(),
            scale: self.scale.clone(),
        }
    }

    fn to_internal(&self, y: &[f64], out: &mut [f64]) {
        for k in 0..y.len() {
            out[k] = (y[k] - self.shift[k]) / self.scale[k];
        }
    }

    /// Log kernel values `ln K_h(y_k − y)` for every sample.
    fn log_kernels(&self, y_int: &[f64], h: f64, out: &mut [f64]) {
        let dim = self.dim() as f64;
        let ln_norm = -0.5 * dim * (LN_2PI + 2.0 * h.ln()) - self.scale.iter().map(|s| s.ln()).sum::<f64>();
        let inv = 1.0 / (2.0 * h * h);
        for (n, row) in self.samples.rows().into_iter().enumerate() {
            let mut d2 = 0.0;
            for (a, b) in row.iter().zip(y_int) {
                d2 += (a - b) * (a - b);
            }
            out[n] = ln_norm - d2 * inv;
        }
    }
}

/// Silverman's rule for an isotropic kernel on the set's internal coordinates.
pub fn silverman_bandwidth(ws: &WeightedSampleSet) -> f64 {
    let d = ws.dim() as f64;
    let n = ws.len().max(1) as f64;
    let mean = ws.samples.sum_axis(ndarray::Axis(0)) / n;
    let mut var = 0.0;
    for row in ws.samples.rows() {
        var += (&row - &mean).mapv(|v| v * v).sum();
    }
    let sd = (var / (n * d)).sqrt().max(1e-6);
    sd * (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0)) * n.powf(-1.0 / (d + 4.0))
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Argument(format!("bandwidth must be positive, got {h}")));
    }
    Ok(())
}

/// `ln(Σ_k w_{k|i} w_{k|j} K_h(y_k − y) / Σ_k w_{k|i} w_{k|j})`; `-inf` when every joint weight is zero.
pub fn wss_loglik(ws: &WeightedSampleSet, y: &[f64], s_a: usize, s_b: usize, bandwidth: f64) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    check_dim("wss query", ws.dim(), y.len())?;
    if s_a >= ws.weights_a.ncols() || s_b >= ws.weights_b.ncols() {
        return Err(Error::Argument("state out of range".into()));
    }
    let mut yi = vec![0.0; y.len()];
    ws.to_internal(y, &mut yi);
    let mut lk = vec![0.0; ws.len()];
    ws.log_kernels(&yi, bandwidth, &mut lk);
    let peak = lk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for n in 0..ws.len() {
        let w = ws.weights_a[[n, s_a]] * ws.weights_b[[n, s_b]];
        num += w * (lk[n] - peak).exp();
        den += w;
    }
    if den <= 0.0 || num <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(peak + num.ln() - den.ln())
}

/// WSS log-likelihoods (or normalized posteriors) for every frame and joint state.
pub fn wss_joint_tensor(
    mixed: &FeatureSequence,
    ws: &WeightedSampleSet,
    bandwidth: f64,
    scale: TensorScale,
) -> Result<JointStateTensor> {
    check_bandwidth(bandwidth)?;
    check_dim("wss query", ws.dim(), mixed.dim())?;
    let (na, nb) = (ws.weights_a.ncols(), ws.weights_b.ncols());
    let den = ws.weights_a.t().dot(&ws.weights_b);
    let mut yi = vec![0.0; ws.dim()];
    let mut lk = vec![0.0; ws.len()];
    let mut values = Vec::with_capacity(mixed.len() * na * nb);
    for t in 0..mixed.len() {
        ws.to_internal(mixed.frame(t).as_slice().expect("contiguous frame"), &mut yi);
        ws.log_kernels(&yi, bandwidth, &mut lk);
        let peak = lk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = Array1::from_iter(lk.iter().map(|v| (v - peak).exp()));
        let kb = &ws.weights_b * &k.view().insert_axis(ndarray::Axis(1));
        let num = ws.weights_a.t().dot(&kb);
        for i in 0..na {
            for j in 0..nb {
                let (n, d) = (num[[i, j]], den[[i, j]]);
                values.push(if d > 0.0 && n > 0.0 {
                    peak + n.ln() - d.ln()
                } else {
                    f64::NEG_INFINITY
                });
            }
        }
    }
    JointStateTensor::from_log_likelihoods(mixed.len(), na, nb, values, scale)
}
