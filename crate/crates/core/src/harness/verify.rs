//! The oracle-backed check suite behind `verify`, with optional injected faults.

use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::oracle::{brute_force_decode, toy_instance};
use crate::decoder::{joint_decode, DecodeConfig};
use crate::dnn::{
    finetune_batch_objective_with, finetune_loss, finetune_output_grad, gradient_check, init_batch_objective,
    JointPosteriorNet,
};
use crate::error::Result;
use crate::features::{DnnInputSpec, Frontend};
use crate::jointlik::{jacobians_with, max_model_loglik, mismatch, pmc_combine, sandwich, vts_combine, DiagGaussian, MismatchContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fast" => Some(Level::Fast),
            "full" => Some(Level::Full),
            _ => None,
        }
    }

    fn scale(&self) -> usize {
        match self {
            Level::Fast => 1,
            Level::Full => 4,
        }
    }
}

/// A deliberately broken build, used to show the suite catches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Canary {
    /// Negates the fine-tuning output gradient.
    GradientSign,
    /// Builds the mismatch Jacobians from `Cᵀ diag(σ) C` instead of `C diag(σ) C⁻¹`.
    JacobianTranspose,
}

impl Canary {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gradient-sign" => Some(Canary::GradientSign),
            "jacobian-transpose" => Some(Canary::JacobianTranspose),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySummary {
    pub checks: Vec<CheckOutcome>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Input width 8: 3 log-mel values, the gain and a 2-speaker pair code.
fn tiny_spec() -> DnnInputSpec {
    DnnInputSpec {
        n_mel: 3,
        context: 0,
        n_speakers: 2,
    }
}

fn simplex_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((n, d), |_| rng.gen_range(0.01..1.0));
    for mut row in m.outer_iter_mut() {
        let z = row.sum();
        row /= z;
    }
    m
}

/// The tiny gradient-check problem: net (8, [10, 12], 3×4) on five rows.
pub struct GradientProblem {
    pub net: JointPosteriorNet,
    pub inputs: Array2<f64>,
    pub joint_labels: Array2<f64>,
    pub dm_a: Array2<f64>,
    pub dm_b: Array2<f64>,
}

pub fn gradient_problem(seed: u64) -> GradientProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = JointPosteriorNet::random(tiny_spec(), &[10, 12], (3, 4), 0.7, seed).expect("valid shapes");
    GradientProblem {
        net,
        inputs: Array2::from_shape_fn((5, 8), |_| rng.gen_range(-1.0..1.0)),
        joint_labels: simplex_rows(&mut rng, 5, 12),
        dm_a: simplex_rows(&mut rng, 5, 3),
        dm_b: simplex_rows(&mut rng, 5, 4),
    }
}

/// Largest relative error of the fine-tuning gradient over `instances` problems.
pub fn finetune_gradient_error(instances: usize, canary: Option<Canary>) -> Result<f64> {
    let flip = canary == Some(Canary::GradientSign);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let p = gradient_problem(100 + k as u64);
        let e = gradient_check(
            &p.net,
            &p.inputs,
            |out| {
                if flip {
                    finetune_batch_objective_with(out, (3, 4), &p.dm_a, &p.dm_b, |x, a, b| {
                        finetune_output_grad(x, a, b).map(|g| -g)
                    })
                } else {
                    finetune_batch_objective_with(out, (3, 4), &p.dm_a, &p.dm_b, finetune_output_grad)
                }
            },
            1e-4,
        )?;
        worst = worst.max(e);
    }
    Ok(worst)
}

pub fn init_gradient_error(instances: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let p = gradient_problem(200 + k as u64);
        worst = worst.max(gradient_check(&p.net, &p.inputs, |out| init_batch_objective(out, &p.joint_labels), 1e-4)?);
    }
    Ok(worst)
}

/// Largest loss or gradient magnitude at `X = dmᵃ dmᵇᵀ`.
pub fn feasible_point_residual(instances: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let a = simplex_rows(&mut rng, 1, 3).row(0).to_vec();
        let b = simplex_rows(&mut rng, 1, 4).row(0).to_vec();
        let x = Array2::from_shape_fn((3, 4), |(i, j)| a[i] * b[j]);
        worst = worst.max(finetune_loss(&x, &a, &b)?);
        worst = worst.max(finetune_output_grad(&x, &a, &b)?.iter().fold(0.0, |m, g| m.max(g.abs())));
    }
    Ok(worst)
}

/// `Cᵀ diag(σ₁..σ_d) C`, cut to its leading d×d block.
fn transposed_sandwich(ctx: &MismatchContext, w: &Array1<f64>) -> Array2<f64> {
    let d = ctx.n_cep();
    let c = ctx.dct();
    let wd = w.slice(s![..d]).to_owned();
    let full = c.t().dot(&(c * &wd.insert_axis(ndarray::Axis(1))));
    full.slice(s![..d, ..d]).to_owned()
}

fn jacobians(ctx: &MismatchContext, xa: &Array1<f64>, xb: &Array1<f64>, canary: Option<Canary>) -> Result<(Array2<f64>, Array2<f64>)> {
    let f = if canary == Some(Canary::JacobianTranspose) {
        transposed_sandwich
    } else {
        sandwich
    };
    jacobians_with(xa.view(), xb.view(), ctx, f)
}

fn random_cepstra(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |k| rng.gen_range(-8.0..8.0) / (1.0 + k as f64 * 0.5))
}

/// Largest entrywise deviation of `J_a + J_b` from the identity.
pub fn jacobian_identity_deviation(pairs: usize, canary: Option<Canary>) -> Result<f64> {
    let ctx = MismatchContext::new(&Frontend::desk());
    let d = ctx.n_cep();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let xa = random_cepstra(&mut rng, d);
        let xb = random_cepstra(&mut rng, d);
        let (ja, jb) = jacobians(&ctx, &xa, &xb, canary)?;
        let s = ja + jb;
        for ((i, j), v) in s.indexed_iter() {
            let e = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - e).abs());
        }
    }
    Ok(worst)
}

/// Normwise relative error `‖J_a − Ĵ_a‖_F / ‖J_a‖_F` against five-point
/// central differences of the mismatch function.
pub fn jacobian_fd_error(pairs: usize, canary: Option<Canary>) -> Result<f64> {
    let ctx = MismatchContext::new(&Frontend::desk());
    let d = ctx.n_cep();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let xa = random_cepstra(&mut rng, d);
        let xb = random_cepstra(&mut rng, d);
        let (ja, _) = jacobians(&ctx, &xa, &xb, canary)?;
        let mut fd = Array2::zeros((d, d));
        for k in 0..d {
            let at = |step: f64| {
                let mut x = xa.clone();
                x[k] += step;
                mismatch(x.view(), xb.view(), &ctx)
            };
            let col = (at(-2.0 * h)? - at(2.0 * h)? + (at(h)? - at(-h)?) * 8.0) / (12.0 * h);
            fd.column_mut(k).assign(&col);
        }
        let num = (&ja - &fd).mapv(|v| v * v).sum().sqrt();
        let den = ja.mapv(|v| v * v).sum().sqrt().max(1e-12);
        worst = worst.max(num / den);
    }
    Ok(worst)
}

/// Density of `max(a, b)` at `y` with both CDFs integrated by Simpson's rule.
pub fn max_density_by_quadrature(y: f64, ma: f64, va: f64, mb: f64, vb: f64) -> f64 {
    let pdf = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let cdf = |x: f64, m: f64, v: f64| {
        let lo = m - 40.0 * v.sqrt();
        if x <= lo {
            return 0.0;
        }
        let n = 20_000;
        let step = (x - lo) / n as f64;
        let mut acc = pdf(lo, m, v) + pdf(x, m, v);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * pdf(lo + k as f64 * step, m, v);
        }
        (acc * step / 3.0).min(1.0)
    };
    pdf(y, ma, va) * cdf(y, mb, vb) + pdf(y, mb, vb) * cdf(y, ma, va)
}

/// Largest absolute density error, or infinity if exchanging the sources
/// changes the closed form at all.
pub fn max_model_quadrature_error(sets: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g1 = |m: f64, v: f64| DiagGaussian {
        mean: Array1::from(vec![m]),
        var: Array1::from(vec![v]),
    };
    let mut worst: f64 = 0.0;
    for _ in 0..sets {
        let (ma, mb) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let (va, vb) = (rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0));
        let y = rng.gen_range(-4.0..4.0);
        let ab = max_model_loglik(&[y], &g1(ma, va), &g1(mb, vb))?;
        let ba = max_model_loglik(&[y], &g1(mb, vb), &g1(ma, va))?;
        if ab != ba {
            return Ok(f64::INFINITY);
        }
        worst = worst.max((ab.exp() - max_density_by_quadrature(y, ma, va, mb, vb)).abs());
    }
    Ok(worst)
}

/// Largest ratio of `‖μ_pmc − μ_vts‖` to three Monte Carlo standard errors
/// `3·sqrt(tr Σ̂ / N)`; the check passes below 1.
pub fn pmc_vts_ratio(pairs: usize, n_samples: usize) -> Result<f64> {
    let ctx = MismatchContext::new(&Frontend::desk());
    let d = ctx.n_cep();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let g = |rng: &mut ChaCha8Rng| DiagGaussian {
            mean: random_cepstra(rng, d),
            var: Array1::from_shape_fn(d, |_| rng.gen_range(1e-6..=1e-4)),
        };
        let (ga, gb) = (g(&mut rng), g(&mut rng));
        let p = pmc_combine(&ga, &gb, n_samples, &ctx, 1000 + k as u64)?;
        let v = vts_combine(&ga, &gb, &ctx)?;
        let dist = (&p.mean - &v.mean).mapv(|x| x * x).sum().sqrt();
        let se = (p.cov.diag().sum() / n_samples as f64).sqrt();
        worst = worst.max(dist / (3.0 * se));
    }
    Ok(worst)
}

/// Number of randomized toy decodes whose beam-off joint Viterbi words differ
/// from exhaustive enumeration.
pub fn decoder_mismatches(instances: usize) -> Result<usize> {
    let cfg = DecodeConfig::default();
    let mut bad = 0;
    for k in 0..instances {
        let inst = toy_instance(500 + k as u64, 5 + k % 3);
        let topo = (&inst.topo_a, &inst.topo_b);
        let fast = joint_decode(&inst.tensor, &inst.net_a, &inst.net_b, topo, &cfg)?;
        let (wa, wb, _) = brute_force_decode(&inst.tensor, &inst.net_a, &inst.net_b, topo, &cfg)?;
        if fast.words_a != wa || fast.words_b != wb {
            bad += 1;
        }
    }
    Ok(bad)
}

fn timed(name: &'static str, threshold: f64, f: impl FnOnce() -> Result<f64>) -> Result<CheckOutcome> {
    let start = Instant::now();
    let value = f()?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!("{name}: {value:e} (threshold {threshold:e}) in {seconds:.2}s");
    Ok(CheckOutcome {
        name,
        value,
        threshold,
        passed: value < threshold,
        seconds,
    })
}

/// Runs every check. `Full` multiplies the randomized instance counts by four.
pub fn verify_suite(level: Level, canary: Option<Canary>) -> Result<VerifySummary> {
    let k = level.scale();
    let checks = vec![
        timed("finetune_gradient", 1e-6, || finetune_gradient_error(k, canary))?,
        timed("init_gradient", 1e-6, || init_gradient_error(k))?,
        timed("feasible_point", 1e-14, || feasible_point_residual(20 * k))?,
        timed("jacobian_identity", 1e-10, || jacobian_identity_deviation(1000 * k, canary))?,
        timed("jacobian_finite_difference", 1e-6, || jacobian_fd_error(20 * k, canary))?,
        timed("max_model_quadrature", 1e-8, || max_model_quadrature_error(100 * k))?,
        timed("pmc_vts_consistency", 1.0, || pmc_vts_ratio(20 * k, 1_000_000))?,
        timed("decoder_brute_force", 0.5, || decoder_mismatches(50 * k).map(|n| n as f64))?,
    ];
    Ok(VerifySummary { checks })
}
