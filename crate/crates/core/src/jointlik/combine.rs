use ndarray::{s, Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{mel_share, mismatch, sandwich, DiagGaussian, JointGaussian, JointStateTensor, MismatchContext, TensorScale};
use crate::acoustic::GmmHmmSet;
use crate::error::{check_dim, Error, Result};
use crate::features::FeatureSequence;
use crate::numeric::{log_sum_exp, LN_2PI};

/// How a pair of GMM states is combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmCombination {
    /// Every component pair, log-sum-exp with product weights.
    PairWise,
    /// Moment-match each state to one Gaussian first.
    Collapse,
}

fn split_static(g: &DiagGaussian, d: usize) -> Result<bool> {
    if g.dim() == d {
        Ok(false)
    } else if g.dim() == 2 * d {
        Ok(true)
    } else {
        Err(Error::Dimension {
            context: "gaussian vs static cepstra",
            expected: d,
            got: g.dim(),
        })
    }
}

/// `J diag(v) Jᵀ`.
fn congruence(j: &Array2<f64>, v: ArrayView1<f64>) -> Array2<f64> {
    let jv = j * &v.insert_axis(ndarray::Axis(0));
    jv.dot(&j.t())
}

/// First-order VTS combination, statics and (if present) deltas.
pub fn vts_combine(g_a: &DiagGaussian, g_b: &DiagGaussian, ctx: &MismatchContext) -> Result<JointGaussian> {
    let d = ctx.n_cep();
    let has_delta = split_static(g_a, d)?;
    check_dim("vts source b", g_a.dim(), g_b.dim())?;
    if ctx.alpha() != 0.0 {
        return Err(Error::Unsupported("VTS needs zero phase factor".into()));
    }
    let ma = g_a.mean.slice(s![..d]);
    let mb = g_b.mean.slice(s![..d]);
    let sigma = mel_share(&ctx.to_log_mel(ma), &ctx.to_log_mel(mb));
    let ja = sandwich(ctx, &sigma);
    let jb = sandwich(ctx, &sigma.mapv(|v| 1.0 - v));

    let dim = g_a.dim();
    let mut mean = Array1::zeros(dim);
    let mut cov = Array2::zeros((dim, dim));
    mean.slice_mut(s![..d]).assign(&mismatch(ma, mb, ctx)?);
    let stat = congruence(&ja, g_a.var.slice(s![..d])) + congruence(&jb, g_b.var.slice(s![..d]));
    cov.slice_mut(s![..d, ..d]).assign(&stat);
    if has_delta {
        let da = g_a.mean.slice(s![d..]);
        let db = g_b.mean.slice(s![d..]);
        mean.slice_mut(s![d..]).assign(&(ja.dot(&da) + jb.dot(&db)));
        let dyn_ = congruence(&ja, g_a.var.slice(s![d..])) + congruence(&jb, g_b.var.slice(s![d..]));
        cov.slice_mut(s![d.., d..]).assign(&dyn_);
    }
    Ok(JointGaussian { mean, cov })
}

/// Monte Carlo estimate of the mixed-feature Gaussian (statics only, diagonal).
pub fn pmc_combine(
    g_a: &DiagGaussian,
    g_b: &DiagGaussian,
    n_samples: usize,
    ctx: &MismatchContext,
    seed: u64,
) -> Result<JointGaussian> {
    if n_samples < 2 {
        return Err(Error::Argument("PMC needs at least two samples".into()));
    }
    let d = ctx.n_cep();
    let m = ctx.n_mel();
    check_dim("pmc source a", d, g_a.dim())?;
    check_dim("pmc source b", d, g_b.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pinv = ctx.dct_pinv();
    let dct = ctx.dct();
    let mel_a = ctx.to_log_mel(g_a.mean.view());
    let mel_b = ctx.to_log_mel(g_b.mean.view());
    let sd_a = g_a.var.mapv(f64::sqrt);
    let sd_b = g_b.var.mapv(f64::sqrt);
    let alpha = ctx.alpha();

    let mut za = vec![0.0; d];
    let mut zb = vec![0.0; d];
    let mut ly = vec![0.0; m];
    let mut y = vec![0.0; d];
    // Welford accumulators
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for n in 0..n_samples {
        for k in 0..d {
            let ua: f64 = StandardNormal.sample(&mut rng);
            let ub: f64 = StandardNormal.sample(&mut rng);
            za[k] = sd_a[k] * ua;
            zb[k] = sd_b[k] * ub;
        }
        for i in 0..m {
            let row = pinv.row(i);
            let mut a = mel_a[i];
            let mut b = mel_b[i];
            for k in 0..d {
                a += row[k] * za[k];
                b += row[k] * zb[k];
            }
            let hi = a.max(b);
            let mut inner = (a - hi).exp() + (b - hi).exp();
            if alpha != 0.0 {
                inner += 2.0 * alpha * (0.5 * (a + b) - hi).exp();
            }
            ly[i] = if inner > 0.0 { hi + inner.ln() } else { ctx.log_floor };
        }
        for k in 0..d {
            let row = dct.row(k);
            y[k] = (0..m).map(|i| row[i] * ly[i]).sum();
        }
        let cnt = (n + 1) as f64;
        for k in 0..d {
            let delta = y[k] - mean[k];
            mean[k] += delta / cnt;
            m2[k] += delta * (y[k] - mean[k]);
        }
    }
    let var: Vec<f64> = m2.iter().map(|v| v / (n_samples - 1) as f64).collect();
    Ok(JointGaussian {
        mean: Array1::from(mean),
        cov: Array2::from_diag(&Array1::from(var)),
    })
}

/// Per joint state, a flat list of diagonal Gaussian components of the mixed feature.
#[derive(Debug, Clone)]
pub struct CombinedStates {
    n_a: usize,
    n_b: usize,
    dim: usize,
    starts: Vec<usize>,
    log_w: Vec<f64>,
    means: Vec<f64>,
    inv_var: Vec<f64>,
    log_norm: Vec<f64>,
}

fn state_components(model: &GmmHmmSet, s: usize, mode: GmmCombination) -> Vec<(f64, DiagGaussian)> {
    let g = &model.gmms[s];
    match mode {
        GmmCombination::Collapse => {
            let (mean, var) = g.moment_match();
            vec![(1.0, DiagGaussian { mean, var })]
        }
        GmmCombination::PairWise => (0..g.n_components())
            .filter(|&k| g.weights[k] > 0.0)
            .map(|k| {
                (
                    g.weights[k],
                    DiagGaussian {
                        mean: g.means.row(k).to_owned(),
                        var: g.vars.row(k).to_owned(),
                    },
                )
            })
            .collect(),
    }
}

impl CombinedStates {
    /// Builds every joint state's components with `combine`, which maps a
    /// source pair (and the pair's running index) to a diagonal Gaussian.
    pub fn build<F>(model_a: &GmmHmmSet, model_b: &GmmHmmSet, mode: GmmCombination, mut combine: F) -> Result<Self>
    where
        F: FnMut(&DiagGaussian, &DiagGaussian, usize) -> Result<(Array1<f64>, Array1<f64>)>,
    {
        check_dim("source model dimension", model_a.dim(), model_b.dim())?;
        let (n_a, n_b, dim) = (model_a.n_states(), model_b.n_states(), model_a.dim());
        let comps_a: Vec<_> = (0..n_a).map(|s| state_components(model_a, s, mode)).collect();
        let comps_b: Vec<_> = (0..n_b).map(|s| state_components(model_b, s, mode)).collect();
        let mut out = Self {
            n_a,
            n_b,
            dim,
            starts: vec![0],
            log_w: Vec::new(),
            means: Vec::new(),
            inv_var: Vec::new(),
            log_norm: Vec::new(),
        };
        let mut counter = 0;
        for ca in &comps_a {
            for cb in &comps_b {
                for (wa, ga) in ca {
                    for (wb, gb) in cb {
                        let (mean, var) = combine(ga, gb, counter)?;
                        counter += 1;
                        check_dim("combined mean", dim, mean.len())?;
                        out.log_w.push(wa.ln() + wb.ln());
                        let mut ln_det = 0.0;
                        for (m, v) in mean.iter().zip(var.iter()) {
                            let v = v.max(1e-10);
                            out.means.push(*m);
                            out.inv_var.push(1.0 / v);
                            ln_det += v.ln();
                        }
                        out.log_norm.push(-0.5 * (dim as f64 * LN_2PI + ln_det));
                    }
                }
                out.starts.push(out.log_w.len());
            }
        }
        Ok(out)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    /// `ln p(y | i, j)` for every joint state, row-major.
    pub fn loglik_frame(&self, y: ArrayView1<f64>, out: &mut [f64]) {
        let dim = self.dim;
        let mut buf = Vec::new();
        for p in 0..self.n_a * self.n_b {
            buf.clear();
            for c in self.starts[p]..self.starts[p + 1] {
                let mu = &self.means[c * dim..(c + 1) * dim];
                let iv = &self.inv_var[c * dim..(c + 1) * dim];
                let mut q = 0.0;
                for k in 0..dim {
                    let e = y[k] - mu[k];
                    q += e * e * iv[k];
                }
                buf.push(self.log_w[c] + self.log_norm[c] - 0.5 * q);
            }
            out[p] = log_sum_exp(&buf);
        }
    }

    pub fn tensor(&self, mixed: &FeatureSequence, scale: TensorScale) -> Result<JointStateTensor> {
        check_dim("mixed feature dimension", self.dim, mixed.dim())?;
        let mut values = vec![0.0; mixed.len() * self.n_a * self.n_b];
        for (t, chunk) in values.chunks_mut(self.n_a * self.n_b).enumerate() {
            self.loglik_frame(mixed.frame(t), chunk);
        }
        JointStateTensor::from_log_likelihoods(mixed.len(), self.n_a, self.n_b, values, scale)
    }
}

fn vts_diag(ga: &DiagGaussian, gb: &DiagGaussian, ctx: &MismatchContext) -> Result<(Array1<f64>, Array1<f64>)> {
    let j = vts_combine(ga, gb, ctx)?;
    let var = j.diag_var();
    Ok((j.mean, var))
}

/// VTS joint-state tensor over mixed static+delta (or static) features.
pub fn vts_joint_tensor(
    mixed: &FeatureSequence,
    model_a: &GmmHmmSet,
    model_b: &GmmHmmSet,
    ctx: &MismatchContext,
    mode: GmmCombination,
    scale: TensorScale,
) -> Result<JointStateTensor> {
    CombinedStates::build(model_a, model_b, mode, |ga, gb, _| vts_diag(ga, gb, ctx))?.tensor(mixed, scale)
}

/// PMC statics with VTS deltas.
#[allow(clippy::too_many_arguments)]
pub fn pmc_joint_tensor(
    mixed: &FeatureSequence,
    model_a: &GmmHmmSet,
    model_b: &GmmHmmSet,
    ctx: &MismatchContext,
    mode: GmmCombination,
    n_samples: usize,
    seed: u64,
    scale: TensorScale,
) -> Result<JointStateTensor> {
    let d = ctx.n_cep();
    let combined = CombinedStates::build(model_a, model_b, mode, |ga, gb, idx| {
        let (mut mean, mut var) = vts_diag(ga, gb, ctx)?;
        let sa = DiagGaussian {
            mean: ga.mean.slice(s![..d]).to_owned(),
            var: ga.var.slice(s![..d]).to_owned(),
        };
        let sb = DiagGaussian {
            mean: gb.mean.slice(s![..d]).to_owned(),
            var: gb.var.slice(s![..d]).to_owned(),
        };
        let pmc = pmc_combine(&sa, &sb, n_samples, ctx, seed.wrapping_add(idx as u64))?;
        mean.slice_mut(s![..d]).assign(&pmc.mean);
        var.slice_mut(s![..d]).assign(&pmc.diag_var());
        Ok((mean, var))
    })?;
    combined.tensor(mixed, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::Gmm;
    use crate::features::{FeatureKind, Frontend};
    use crate::numeric::ln_diag_gaussian;
    use rand::Rng;

    fn ctx() -> MismatchContext {
        MismatchContext::new(&Frontend::desk())
    }

    fn rand_gauss(rng: &mut ChaCha8Rng, dim: usize, var_hi: f64) -> DiagGaussian {
        DiagGaussian {
            mean: Array1::from_shape_fn(dim, |_| rng.gen_range(-3.0..3.0)),
            var: Array1::from_shape_fn(dim, |_| rng.gen_range(var_hi * 0.1..var_hi)),
        }
    }

    #[test]
    fn identical_sources() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = rand_gauss(&mut rng, 26, 1.0);
        let j = vts_combine(&g, &g, &c).unwrap();
        let shift = c.dct().sum_axis(ndarray::Axis(1)) * 2f64.ln();
        for k in 0..13 {
            assert!((j.mean[k] - g.mean[k] - shift[k]).abs() < 1e-10);
            // J = ½I, so each source contributes a quarter of its covariance
            assert!((j.cov[[k, k]] - 0.25 * (g.var[k] + g.var[k])).abs() < 1e-10);
            assert!((j.mean[13 + k] - g.mean[13 + k]).abs() < 1e-10);
        }
    }

    #[test]
    fn silent_source_is_transparent() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ga = rand_gauss(&mut rng, 26, 1.0);
        let mut gb = rand_gauss(&mut rng, 26, 1e-6);
        gb.mean.fill(0.0);
        gb.mean[0] = -500.0;
        let j = vts_combine(&ga, &gb, &c).unwrap();
        for k in 0..26 {
            assert!((j.mean[k] - ga.mean[k]).abs() < 1e-4);
            assert!((j.cov[[k, k]] - ga.var[k]).abs() < 1e-4);
        }
    }

    #[test]
    fn pmc_limits() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ga = rand_gauss(&mut rng, 13, 1.0);
        let mut gb = rand_gauss(&mut rng, 13, 1.0);
        ga.var.fill(1e-16);
        gb.var.fill(1e-16);
        let p = pmc_combine(&ga, &gb, 100, &c, 0).unwrap();
        let y = mismatch(ga.mean.view(), gb.mean.view(), &c).unwrap();
        for k in 0..13 {
            assert!((p.mean[k] - y[k]).abs() < 1e-6);
        }
        assert_eq!(pmc_combine(&ga, &gb, 100, &c, 7).unwrap(), pmc_combine(&ga, &gb, 100, &c, 7).unwrap());
        assert!(pmc_combine(&ga, &gb, 1, &c, 7).is_err());

        // small-variance agreement with VTS
        let scale = ga.mean.dot(&ga.mean).min(gb.mean.dot(&gb.mean));
        ga.var.fill(1e-4 * scale / 10.0);
        gb.var.fill(1e-4 * scale / 10.0);
        let p = pmc_combine(&ga, &gb, 20_000, &c, 11).unwrap();
        let v = vts_combine(&ga, &gb, &c).unwrap();
        for k in 0..13 {
            assert!((p.mean[k] - v.mean[k]).abs() < 1e-3);
        }
    }

    #[test]
    fn pmc_error_shrinks_with_samples() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ga = rand_gauss(&mut rng, 13, 0.5);
        let gb = rand_gauss(&mut rng, 13, 0.5);
        let spread = |n: usize| {
            let runs: Vec<f64> = (0..20)
                .map(|s| pmc_combine(&ga, &gb, n, &c, 100 + s).unwrap().mean[0])
                .collect();
            let m = runs.iter().sum::<f64>() / 20.0;
            (runs.iter().map(|r| (r - m).powi(2)).sum::<f64>() / 19.0).sqrt()
        };
        let ratio = spread(10_000) / spread(40_000);
        assert!((1.3..3.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn vts_matches_large_pmc_at_small_variance() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ga = rand_gauss(&mut rng, 13, 1e-3);
        let gb = rand_gauss(&mut rng, 13, 1e-3);
        let n = 200_000;
        let p = pmc_combine(&ga, &gb, n, &c, 9).unwrap();
        let v = vts_combine(&ga, &gb, &c).unwrap();
        for k in 0..13 {
            let se_mean = (p.cov[[k, k]] / n as f64).sqrt();
            assert!((p.mean[k] - v.mean[k]).abs() < 3.0 * se_mean + 2e-4, "mean {k}");
            // variance: relative standard error of a sample variance is sqrt(2/n)
            let se_var = p.cov[[k, k]] * (2.0 / n as f64).sqrt();
            assert!((p.cov[[k, k]] - v.cov[[k, k]]).abs() < 3.0 * se_var + 0.02 * v.cov[[k, k]], "var {k}");
        }
    }

    fn hand_model(rng: &mut ChaCha8Rng, n: usize, d: usize) -> GmmHmmSet {
        GmmHmmSet {
            phones: (0..n).map(|i| format!("p{i}")).collect(),
            gmms: (0..n)
                .map(|_| Gmm {
                    weights: vec![0.3, 0.7],
                    means: Array2::from_shape_fn((2, d), |_| rng.gen_range(-2.0..2.0)),
                    vars: Array2::from_shape_fn((2, d), |_| rng.gen_range(0.2..1.0)),
                })
                .collect(),
            self_loop: vec![0.7; n],
            priors: vec![1.0 / n as f64; n],
            n_static: d,
        }
    }

    #[test]
    fn tensor_matches_scalar_reimplementation() {
        let mut cfg = crate::features::FrontendConfig::desk(8000);
        cfg.n_cep = 2;
        let c = MismatchContext::new(&Frontend::new(cfg).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ma = hand_model(&mut rng, 2, 2);
        let mb = hand_model(&mut rng, 2, 2);
        let y = FeatureSequence::new(
            Array2::from_shape_fn((3, 2), |_| rng.gen_range(-2.0..3.0)),
            FeatureKind::MfccStatic,
            0.01,
        );
        let tens = vts_joint_tensor(&y, &ma, &mb, &c, GmmCombination::PairWise, TensorScale::LogLikelihood).unwrap();
        let post = vts_joint_tensor(&y, &ma, &mb, &c, GmmCombination::PairWise, TensorScale::Posterior).unwrap();
        for t in 0..3 {
            let mut lls = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let mut dens = 0.0;
                    for k in 0..2 {
                        for l in 0..2 {
                            let ga = DiagGaussian {
                                mean: ma.gmms[i].means.row(k).to_owned(),
                                var: ma.gmms[i].vars.row(k).to_owned(),
                            };
                            let gb = DiagGaussian {
                                mean: mb.gmms[j].means.row(l).to_owned(),
                                var: mb.gmms[j].vars.row(l).to_owned(),
                            };
                            let jg = vts_combine(&ga, &gb, &c).unwrap();
                            let yy: Vec<f64> = y.frame(t).to_vec();
                            let ll = ln_diag_gaussian(&yy, jg.mean.as_slice().unwrap(), jg.diag_var().as_slice().unwrap());
                            dens += ma.gmms[i].weights[k] * mb.gmms[j].weights[l] * ll.exp();
                        }
                    }
                    lls[i][j] = dens.ln();
                    let got = tens.get(t, i, j) as f64;
                    assert!((got - lls[i][j]).abs() < 1e-4 * lls[i][j].abs().max(1.0));
                }
            }
            let z: f64 = lls.iter().flatten().map(|v| v.exp()).sum();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((post.get(t, i, j) as f64 - lls[i][j].exp() / z).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_state_posterior_is_one() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ma = hand_model(&mut rng, 1, 13);
        let mb = hand_model(&mut rng, 1, 13);
        let y = FeatureSequence::new(Array2::from_shape_fn((4, 13), |_| rng.gen_range(-2.0..3.0)), FeatureKind::MfccStatic, 0.01);
        let t = vts_joint_tensor(&y, &ma, &mb, &c, GmmCombination::PairWise, TensorScale::Posterior).unwrap();
        for f in 0..4 {
            assert_eq!(t.get(f, 0, 0), 1.0);
        }
        let t = pmc_joint_tensor(&y, &ma, &mb, &c, GmmCombination::Collapse, 200, 1, TensorScale::Posterior).unwrap();
        assert_eq!(t.get(0, 0, 0), 1.0);
    }
}
