//! Joint-state likelihood estimators: the mixing (mismatch) function, VTS,
//! data-driven PMC, the max model and weighted stereo samples.

mod combine;
mod maxmodel;
mod tensor;
mod wss;

pub use combine::{
    pmc_combine, pmc_joint_tensor, vts_combine, vts_joint_tensor, CombinedStates, GmmCombination,
};
pub use maxmodel::{max_joint_tensor, max_model_loglik};
pub use tensor::{read_tensor, write_tensor, JointStateTensor, TensorScale};
pub use wss::{
    silverman_bandwidth, wss_build, wss_joint_tensor, wss_loglik, StereoFrames, WeightForm,
    WeightedSampleSet,
};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{check_dim, Error, Result};
use crate::features::Frontend;
use crate::numeric::sigmoid;

/// DCT, its pseudo-inverse and the phase factor.
#[derive(Debug, Clone)]
pub struct MismatchContext {
    dct: Array2<f64>,
    dct_pinv: Array2<f64>,
    alpha: f64,
    log_floor: f64,
}

impl MismatchContext {
    pub fn new(frontend: &Frontend) -> Self {
        Self {
            dct: frontend.dct().clone(),
            dct_pinv: frontend.dct_pinv().clone(),
            alpha: 0.0,
            log_floor: frontend.config().log_floor.ln(),
        }
    }

    pub fn with_phase_factor(mut self, alpha: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&alpha) {
            return Err(Error::Argument(format!("phase factor {alpha} outside [-1, 1]")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of static cepstra.
    pub fn n_cep(&self) -> usize {
        self.dct.nrows()
    }

    pub fn n_mel(&self) -> usize {
        self.dct.ncols()
    }

    pub fn dct(&self) -> &Array2<f64> {
        &self.dct
    }

    pub fn dct_pinv(&self) -> &Array2<f64> {
        &self.dct_pinv
    }

    /// `C⁻¹x` for a static cepstral vector.
    pub fn to_log_mel(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.dct_pinv.dot(&x)
    }

    /// Diagonal of `C⁻¹ diag(v) C⁻ᵀ`: log-mel variances of a diagonal cepstral Gaussian.
    pub fn var_to_log_mel(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let p = &self.dct_pinv;
        Array1::from_shape_fn(self.n_mel(), |i| {
            (0..self.n_cep()).map(|k| p[[i, k]] * p[[i, k]] * v[k]).sum()
        })
    }
}

/// Diagonal Gaussian; static dimensions first, optional deltas after.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Array1<f64>, var: Array1<f64>) -> Result<Self> {
        check_dim("gaussian variance", mean.len(), var.len())?;
        if var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Argument("negative variance".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Gaussian of the mixed feature with a full covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl JointGaussian {
    pub fn diag_var(&self) -> Array1<f64> {
        self.cov.diag().to_owned()
    }
}

/// Mixed feature `y = C·log(exp(C⁻¹xᵃ) + exp(C⁻¹xᵇ) + 2α·sqrt(exp(C⁻¹xᵃ)∘exp(C⁻¹xᵇ)))`.
pub fn mismatch(x_a: ArrayView1<f64>, x_b: ArrayView1<f64>, ctx: &MismatchContext) -> Result<Array1<f64>> {
    Ok(mismatch_flagged(x_a, x_b, ctx)?.0)
}

/// As [`mismatch`]; the flag is set when a mel channel had to be clamped at the floor.
pub fn mismatch_flagged(
    x_a: ArrayView1<f64>,
    x_b: ArrayView1<f64>,
    ctx: &MismatchContext,
) -> Result<(Array1<f64>, bool)> {
    check_dim("mismatch source a", ctx.n_cep(), x_a.len())?;
    check_dim("mismatch source b", ctx.n_cep(), x_b.len())?;
    let la = ctx.to_log_mel(x_a);
    let lb = ctx.to_log_mel(x_b);
    let mut clamped = false;
    let ly = Array1::from_shape_fn(ctx.n_mel(), |i| {
        let (a, b) = (la[i], lb[i]);
        let m = a.max(b);
        let mut inner = (a - m).exp() + (b - m).exp();
        if ctx.alpha != 0.0 {
            inner += 2.0 * ctx.alpha * (0.5 * (a + b) - m).exp();
        }
        if inner > 0.0 {
            m + inner.ln()
        } else {
            clamped = true;
            ctx.log_floor
        }
    });
    Ok((ctx.dct.dot(&ly), clamped))
}

/// `σ = exp(la) / (exp(la) + exp(lb))` per mel channel.
pub(crate) fn mel_share(la: &Array1<f64>, lb: &Array1<f64>) -> Array1<f64> {
    Array1::from_shape_fn(la.len(), |i| sigmoid(la[i] - lb[i]))
}

/// `C diag(w) C⁻¹`.
pub(crate) fn sandwich(ctx: &MismatchContext, w: &Array1<f64>) -> Array2<f64> {
    let scaled = &ctx.dct * &w.view().insert_axis(ndarray::Axis(0));
    scaled.dot(&ctx.dct_pinv)
}

/// `(J_a, J_b)` of the zero-phase mismatch at `(x0_a, x0_b)`.
pub fn mismatch_jacobians(
    x0_a: ArrayView1<f64>,
    x0_b: ArrayView1<f64>,
    ctx: &MismatchContext,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if ctx.alpha != 0.0 {
        return Err(Error::Unsupported(
            "Jacobians are defined for zero phase factor only".into(),
        ));
    }
    jacobians_with(x0_a, x0_b, ctx, sandwich)
}

/// [`mismatch_jacobians`] with the `C diag(w) C⁻¹` step supplied by the caller.
pub(crate) fn jacobians_with(
    x0_a: ArrayView1<f64>,
    x0_b: ArrayView1<f64>,
    ctx: &MismatchContext,
    sandwich: fn(&MismatchContext, &Array1<f64>) -> Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_dim("jacobian source a", ctx.n_cep(), x0_a.len())?;
    check_dim("jacobian source b", ctx.n_cep(), x0_b.len())?;
    let s = mel_share(&ctx.to_log_mel(x0_a), &ctx.to_log_mel(x0_b));
    let ja = sandwich(ctx, &s);
    let jb = sandwich(ctx, &s.mapv(|v| 1.0 - v));
    Ok((ja, jb))
}
