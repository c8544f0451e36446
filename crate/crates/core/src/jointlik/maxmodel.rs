//! Max model: the mixed log-spectral feature is the elementwise maximum of the sources.

use ndarray::{s, Array1};

use super::{DiagGaussian, JointStateTensor, MismatchContext, TensorScale};
use crate::acoustic::GmmHmmSet;
use crate::error::{check_dim, Error, Result};
use crate::features::FeatureSequence;
use crate::numeric::{ln_normal_pdf, ln_std_normal_cdf, log_add, log_sum_exp};

use super::GmmCombination;

/// `Σ_d ln(p_a(y_d)Φ_b(y_d) + p_b(y_d)Φ_a(y_d))` for diagonal sources.
pub fn max_model_loglik(y: &[f64], g_a: &DiagGaussian, g_b: &DiagGaussian) -> Result<f64> {
    check_dim("max model source a", y.len(), g_a.dim())?;
    check_dim("max model source b", y.len(), g_b.dim())?;
    if g_a.var.iter().chain(g_b.var.iter()).any(|v| !(*v > 0.0)) {
        return Err(Error::Argument("max model needs positive variances".into()));
    }
    let mut total = 0.0;
    for (k, &yk) in y.iter().enumerate() {
        total += dim_term(yk, g_a.mean[k], g_a.var[k], g_b.mean[k], g_b.var[k]);
    }
    Ok(total)
}

fn ln_pdf_cdf(y: f64, mean: f64, var: f64) -> (f64, f64) {
    (ln_normal_pdf(y, mean, var), ln_std_normal_cdf((y - mean) / var.sqrt()))
}

fn dim_term(y: f64, ma: f64, va: f64, mb: f64, vb: f64) -> f64 {
    let (pa, ca) = ln_pdf_cdf(y, ma, va);
    let (pb, cb) = ln_pdf_cdf(y, mb, vb);
    log_add(pa + cb, pb + ca)
}

struct MelComponent {
    log_w: f64,
    mean: Array1<f64>,
    var: Array1<f64>,
}

fn mel_components(model: &GmmHmmSet, ctx: &MismatchContext, mode: GmmCombination) -> Vec<Vec<MelComponent>> {
    let d = ctx.n_cep();
    model
        .gmms
        .iter()
        .map(|g| {
            let parts: Vec<(f64, Array1<f64>, Array1<f64>)> = match mode {
                GmmCombination::Collapse => {
                    let (m, v) = g.moment_match();
                    vec![(1.0, m, v)]
                }
                GmmCombination::PairWise => (0..g.n_components())
                    .filter(|&k| g.weights[k] > 0.0)
                    .map(|k| (g.weights[k], g.means.row(k).to_owned(), g.vars.row(k).to_owned()))
                    .collect(),
            };
            parts
                .into_iter()
                .map(|(w, m, v)| MelComponent {
                    log_w: w.ln(),
                    mean: ctx.to_log_mel(m.slice(s![..d])),
                    var: ctx.var_to_log_mel(v.slice(s![..d])),
                })
                .collect()
        })
        .collect()
}

/// Max-model tensor evaluated in the cepstrally smoothed log-mel domain
/// (`C⁻¹` applied to the static parts of models and observations).
pub fn max_joint_tensor(
    mixed: &FeatureSequence,
    model_a: &GmmHmmSet,
    model_b: &GmmHmmSet,
    ctx: &MismatchContext,
    mode: GmmCombination,
    scale: TensorScale,
) -> Result<JointStateTensor> {
    let d = ctx.n_cep();
    if mixed.dim() < d || model_a.dim() < d || model_b.dim() < d {
        return Err(Error::Dimension {
            context: "max model static cepstra",
            expected: d,
            got: mixed.dim().min(model_a.dim()).min(model_b.dim()),
        });
    }
    let ca = mel_components(model_a, ctx, mode);
    let cb = mel_components(model_b, ctx, mode);
    let m = ctx.n_mel();
    let (na, nb) = (ca.len(), cb.len());

    // per frame: (ln φ, ln Φ) for every source component and mel channel
    let table = |comps: &Vec<Vec<MelComponent>>, y: &Array1<f64>| -> Vec<Vec<Vec<(f64, f64)>>> {
        comps
            .iter()
            .map(|st| {
                st.iter()
                    .map(|c| (0..m).map(|i| ln_pdf_cdf(y[i], c.mean[i], c.var[i])).collect())
                    .collect()
            })
            .collect()
    };

    let mut values = vec![0.0; mixed.len() * na * nb];
    let mut buf = Vec::new();
    for t in 0..mixed.len() {
        let y = ctx.to_log_mel(mixed.frame(t).slice(s![..d]));
        let ta = table(&ca, &y);
        let tb = table(&cb, &y);
        for i in 0..na {
            for j in 0..nb {
                buf.clear();
                for (ka, compa) in ca[i].iter().enumerate() {
                    for (kb, compb) in cb[j].iter().enumerate() {
                        let mut acc = compa.log_w + compb.log_w;
                        for ch in 0..m {
                            let (pa, fa) = ta[i][ka][ch];
                            let (pb, fb) = tb[j][kb][ch];
                            acc += log_add(pa + fb, pb + fa);
                        }
                        buf.push(acc);
                    }
                }
                values[(t * na + i) * nb + j] = log_sum_exp(&buf);
            }
        }
    }
    JointStateTensor::from_log_likelihoods(mixed.len(), na, nb, values, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::LN_2PI;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g1(m: f64, v: f64) -> DiagGaussian {
        DiagGaussian {
            mean: Array1::from(vec![m]),
            var: Array1::from(vec![v]),
        }
    }

    /// Density of max(a, b) at y with the CDFs integrated by Simpson's rule.
    fn quadrature_density(y: f64, ma: f64, va: f64, mb: f64, vb: f64) -> f64 {
        let pdf = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let cdf = |x: f64, m: f64, v: f64| {
            let sd = v.sqrt();
            let lo = m - 40.0 * sd;
            if x <= lo {
                return 0.0;
            }
            let n = 20_000;
            let h = (x - lo) / n as f64;
            let mut acc = pdf(lo, m, v) + pdf(x, m, v);
            for k in 1..n {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * pdf(lo + k as f64 * h, m, v);
            }
            (acc * h / 3.0).min(1.0)
        };
        pdf(y, ma, va) * cdf(y, mb, vb) + pdf(y, mb, vb) * cdf(y, ma, va)
    }

    #[test]
    fn iid_standard_normals_at_zero() {
        let v = max_model_loglik(&[0.0], &g1(0.0, 1.0), &g1(0.0, 1.0)).unwrap();
        assert!((v + 0.5 * LN_2PI).abs() < 1e-12);
        assert!((v.exp() - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn dominated_source_drops_out() {
        let y = 0.7;
        let v = max_model_loglik(&[y], &g1(0.3, 0.5), &g1(-1e6, 1.0)).unwrap();
        assert!((v.exp() - ln_normal_pdf(y, 0.3, 0.5).exp()).abs() < 1e-8);
        assert!(max_model_loglik(&[y], &g1(0.3, 0.0), &g1(0.0, 1.0)).is_err());
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (ma, mb) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let (va, vb) = (rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0));
            let y = rng.gen_range(-4.0..4.0);
            let closed = max_model_loglik(&[y], &g1(ma, va), &g1(mb, vb)).unwrap().exp();
            let quad = quadrature_density(y, ma, va, mb, vb);
            assert!((closed - quad).abs() < 1e-8, "{closed} vs {quad}");
        }
    }

    proptest! {
        #[test]
        fn exchange_symmetry(ma in -5.0f64..5.0, mb in -5.0f64..5.0, va in 0.1f64..4.0, vb in 0.1f64..4.0, y in -8.0f64..8.0) {
            let a = max_model_loglik(&[y, -y], &DiagGaussian { mean: Array1::from(vec![ma, mb]), var: Array1::from(vec![va, vb]) },
                &DiagGaussian { mean: Array1::from(vec![mb, ma]), var: Array1::from(vec![vb, va]) }).unwrap();
            let b = max_model_loglik(&[y, -y], &DiagGaussian { mean: Array1::from(vec![mb, ma]), var: Array1::from(vec![vb, va]) },
                &DiagGaussian { mean: Array1::from(vec![ma, mb]), var: Array1::from(vec![va, vb]) }).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
