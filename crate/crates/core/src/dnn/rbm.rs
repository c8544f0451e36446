//! Restricted Boltzmann machines trained by persistent contrastive divergence.
//!
//! Bernoulli visible units: `E = −aᵀv − bᵀh − vᵀŴh`. Gaussian visible units
//! (unit variance, for standardized real inputs): `E = ½‖v − a‖² − bᵀh − vᵀŴh`.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisibleKind {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmLayer {
    /// visible × hidden
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub visible_kind: VisibleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RbmHyper {
    pub rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    pub n_fantasy: usize,
    pub cd_steps: usize,
    pub seed: u64,
}

impl Default for RbmHyper {
    fn default() -> Self {
        Self {
            rate: 0.01,
            momentum: 0.5,
            epochs: 5,
            batch: 64,
            n_fantasy: 64,
            cd_steps: 1,
            seed: 0,
        }
    }
}

impl RbmLayer {
    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    /// `p(h = 1 | v)` for each row of `v`.
    pub fn hidden_probs(&self, v: &Array2<f64>) -> Array2<f64> {
        let mut z = v.dot(&self.weights);
        z += &self.hidden_bias;
        z.mapv_inplace(sigmoid);
        z
    }

    /// `E[v | h]`: the Gaussian mean or the Bernoulli probability.
    pub fn visible_mean(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut z = h.dot(&self.weights.t());
        z += &self.visible_bias;
        if self.visible_kind == VisibleKind::Bernoulli {
            z.mapv_inplace(sigmoid);
        }
        z
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.visible_bias.iter())
            .chain(self.hidden_bias.iter())
            .all(|v| v.is_finite())
    }
}

fn sample_bernoulli(p: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    p.mapv(|q| if rng.gen::<f64>() < q { 1.0 } else { 0.0 })
}

fn sample_visible(rbm: &RbmLayer, mean: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
    match rbm.visible_kind {
        VisibleKind::Bernoulli => sample_bernoulli(mean, rng),
        VisibleKind::Gaussian => mean.mapv(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + z
        }),
    }
}

/// Mean per-row reconstruction error after one up-down pass: cross-entropy
/// for Bernoulli visible units, half squared error for Gaussian ones.
pub fn reconstruction_cross_entropy(rbm: &RbmLayer, data: &Array2<f64>) -> f64 {
    let recon = rbm.visible_mean(&rbm.hidden_probs(data));
    let n = data.nrows().max(1) as f64;
    let total: f64 = match rbm.visible_kind {
        VisibleKind::Bernoulli => data
            .iter()
            .zip(recon.iter())
            .map(|(&v, &p)| {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                -(v * p.ln() + (1.0 - v) * (1.0 - p).ln())
            })
            .sum(),
        VisibleKind::Gaussian => 0.5 * data.iter().zip(recon.iter()).map(|(v, r)| (v - r).powi(2)).sum::<f64>(),
    };
    total / n
}

/// Trains one RBM on the rows of `data`.
pub fn rbm_train_pcd(data: &Array2<f64>, visible_kind: VisibleKind, n_hidden: usize, hyper: &RbmHyper) -> Result<RbmLayer> {
    let (n, n_vis) = data.dim();
    if n == 0 || n_vis == 0 || n_hidden == 0 {
        return Err(Error::Argument("RBM needs data rows, visible and hidden units".into()));
    }
    if hyper.batch == 0 || hyper.n_fantasy == 0 {
        return Err(Error::Argument("batch and fantasy counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let init = Normal::new(0.0, 0.01).expect("valid std");
    let mut rbm = RbmLayer {
        weights: Array2::from_shape_simple_fn((n_vis, n_hidden), || init.sample(&mut rng)),
        visible_bias: match visible_kind {
            VisibleKind::Gaussian => data.mean_axis(Axis(0)).expect("non-empty"),
            VisibleKind::Bernoulli => Array1::zeros(n_vis),
        },
        hidden_bias: Array1::zeros(n_hidden),
        visible_kind,
    };
    // fantasy chains start from random data rows
    let mut fantasy = Array2::zeros((hyper.n_fantasy, n_vis));
    for mut row in fantasy.outer_iter_mut() {
        row.assign(&data.row(rng.gen_range(0..n)));
    }
    let mut vel_w = Array2::<f64>::zeros((n_vis, n_hidden));
    let mut vel_a = Array1::<f64>::zeros(n_vis);
    let mut vel_b = Array1::<f64>::zeros(n_hidden);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch) {
            let v0 = data.select(Axis(0), chunk);
            let h0 = rbm.hidden_probs(&v0);
            for _ in 0..hyper.cd_steps {
                let hp = rbm.hidden_probs(&fantasy);
                let hs = sample_bernoulli(&hp, &mut rng);
                let vm = rbm.visible_mean(&hs);
                fantasy = sample_visible(&rbm, &vm, &mut rng);
            }
            let hf = rbm.hidden_probs(&fantasy);
            let nb = chunk.len() as f64;
            let nf = hyper.n_fantasy as f64;
            let gw = v0.t().dot(&h0) / nb - fantasy.t().dot(&hf) / nf;
            let ga = v0.mean_axis(Axis(0)).expect("non-empty") - fantasy.mean_axis(Axis(0)).expect("non-empty");
            let gb = h0.mean_axis(Axis(0)).expect("non-empty") - hf.mean_axis(Axis(0)).expect("non-empty");
            vel_w = &vel_w * hyper.momentum + &(gw * hyper.rate);
            vel_a = &vel_a * hyper.momentum + &(ga * hyper.rate);
            vel_b = &vel_b * hyper.momentum + &(gb * hyper.rate);
            rbm.weights += &vel_w;
            rbm.visible_bias += &vel_a;
            rbm.hidden_bias += &vel_b;
        }
        let err = reconstruction_cross_entropy(&rbm, data);
        trace.push(err);
        if !rbm.is_finite() || !err.is_finite() {
            return Err(Error::Divergence { epoch, trace });
        }
        log::debug!("rbm epoch {epoch}: reconstruction {err:.5}");
    }
    Ok(rbm)
}
