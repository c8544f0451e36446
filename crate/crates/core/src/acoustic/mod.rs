//! One-state monophone GMM-HMM source models.

mod adapt;
mod io;
mod train;

pub use adapt::{adapt_speaker, estimate_gain, gain_grid_db, MapConfig};
pub use io::{read_model, write_model};
pub use train::{frame_labels, train_gmm_hmm, GmmTrainConfig, TrainReport};

use ndarray::{Array1, Array2};

use crate::error::{check_dim, Error, Result};
use crate::numeric::{log_sum_exp, softmax_in_place, LN_2PI};

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    /// K×D
    pub means: Array2<f64>,
    /// K×D
    pub vars: Array2<f64>,
}

impl Gmm {
    pub fn single(mean: Vec<f64>, var: Vec<f64>) -> Self {
        let d = mean.len();
        Self {
            weights: vec![1.0],
            means: Array2::from_shape_vec((1, d), mean).expect("shape"),
            vars: Array2::from_shape_vec((1, d), var).expect("shape"),
        }
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `ln w_k + ln N(x; μ_k, Σ_k)` per component.
    pub fn component_log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_components())
            .map(|k| {
                let w = self.weights[k];
                if w <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mean = self.means.row(k);
                let var = self.vars.row(k);
                let mut acc = 0.0;
                for j in 0..x.len() {
                    let d = x[j] - mean[j];
                    acc += var[j].ln() + d * d / var[j];
                }
                w.ln() - 0.5 * (x.len() as f64 * LN_2PI + acc)
            })
            .collect()
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_joint(x))
    }

    /// Single Gaussian with the mixture's mean and (diagonal) covariance.
    pub fn moment_match(&self) -> (Array1<f64>, Array1<f64>) {
        let d = self.dim();
        let mut mean = Array1::zeros(d);
        let mut second = Array1::zeros(d);
        for k in 0..self.n_components() {
            let w = self.weights[k];
            for j in 0..d {
                let m = self.means[[k, j]];
                mean[j] += w * m;
                second[j] += w * (self.vars[[k, j]] + m * m);
            }
        }
        let var = &second - &mean.mapv(|m| m * m);
        (mean, var)
    }
}

/// Phone-labelled one-state HMMs with GMM emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmHmmSet {
    pub phones: Vec<String>,
    pub gmms: Vec<Gmm>,
    pub self_loop: Vec<f64>,
    pub priors: Vec<f64>,
    /// Leading static cepstral dimensions; the rest are deltas.
    pub n_static: usize,
}

impl GmmHmmSet {
    pub fn n_states(&self) -> usize {
        self.phones.len()
    }

    pub fn dim(&self) -> usize {
        self.gmms.first().map(Gmm::dim).unwrap_or(0)
    }

    pub fn state_index(&self, phone: &str) -> Option<usize> {
        self.phones.iter().position(|p| p == phone)
    }

    /// Checks the structural invariants (simplex weights/priors, positive
    /// variances, self-loops inside (0, 1)).
    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if n == 0 || self.gmms.len() != n || self.self_loop.len() != n || self.priors.len() != n {
            return Err(Error::Argument("inconsistent state counts".into()));
        }
        let d = self.dim();
        for (s, g) in self.gmms.iter().enumerate() {
            check_dim("gmm dimension", d, g.dim())?;
            let wsum: f64 = g.weights.iter().sum();
            if (wsum - 1.0).abs() > 1e-10 || g.weights.iter().any(|&w| w < 0.0) {
                return Err(Error::Argument(format!("state {s}: weights sum to {wsum}")));
            }
            if g.vars.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Argument(format!("state {s}: nonpositive variance")));
            }
        }
        if self.self_loop.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Argument("self-loop outside (0, 1)".into()));
        }
        let psum: f64 = self.priors.iter().sum();
        if (psum - 1.0).abs() > 1e-10 || self.priors.iter().any(|&p| p < 0.0) {
            return Err(Error::Argument("priors are not a simplex".into()));
        }
        if self.n_static > d {
            return Err(Error::Argument("n_static exceeds dimension".into()));
        }
        Ok(())
    }

    pub fn with_uniform_priors(mut self) -> Self {
        let n = self.n_states();
        self.priors = vec![1.0 / n as f64; n];
        self
    }

    /// Per-state `ln p(x|s)`.
    pub fn log_likelihoods(&self, frame: &[f64]) -> Result<Vec<f64>> {
        check_dim("frame dimension", self.dim(), frame.len())?;
        Ok(self.gmms.iter().map(|g| g.log_likelihood(frame)).collect())
    }

    /// `p(s|x)` under the model priors.
    pub fn state_posteriors(&self, frame: &[f64]) -> Result<StatePosteriorVector> {
        let mut ll = self.log_likelihoods(frame)?;
        for (l, p) in ll.iter_mut().zip(&self.priors) {
            *l += p.ln();
        }
        softmax_in_place(&mut ll);
        Ok(StatePosteriorVector(ll))
    }

    /// Collapses each state's mixture to a single moment-matched Gaussian.
    pub fn collapsed(&self) -> Self {
        let gmms = self
            .gmms
            .iter()
            .map(|g| {
                let (m, v) = g.moment_match();
                Gmm::single(m.to_vec(), v.to_vec())
            })
            .collect();
        Self {
            gmms,
            ..self.clone()
        }
    }

    /// Shifts static means by `2·ln(gain)·C·1`; deltas and variances unchanged.
    pub fn gain_adapt(&self, gain: f64, dct_of_ones: &[f64]) -> Result<Self> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(Error::Argument(format!("gain must be positive, got {gain}")));
        }
        check_dim("gain direction", self.n_static, dct_of_ones.len())?;
        let shift = 2.0 * gain.ln();
        let mut out = self.clone();
        for g in &mut out.gmms {
            for mut row in g.means.rows_mut() {
                for j in 0..self.n_static {
                    row[j] += shift * dct_of_ones[j];
                }
            }
        }
        Ok(out)
    }

    /// Topology view used by the decoder.
    pub fn topology(&self) -> crate::decoder::ChainTopology {
        crate::decoder::ChainTopology {
            labels: self.phones.clone(),
            self_loop: self.self_loop.clone(),
        }
    }
}

/// A per-frame state posterior; entries in [0, 1] summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePosteriorVector(pub Vec<f64>);

impl StatePosteriorVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}
