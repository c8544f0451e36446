use ndarray::{Array1, Array2};

use super::GmmHmmSet;
use crate::error::{check_dim, Error, Result};
use crate::features::FeatureSequence;
use crate::jointlik::{vts_joint_tensor, GmmCombination, MismatchContext, TensorScale};
use crate::numeric::softmax_in_place;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MapConfig {
    /// Relevance factor; `f64::INFINITY` keeps the base model.
    pub tau: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { tau: 10.0 }
    }
}

/// MAP mean adaptation: each component mean moves toward the
/// responsibility-weighted speaker mean by `n / (n + τ)`.
pub fn adapt_speaker(
    base: &GmmHmmSet,
    features: &[FeatureSequence],
    alignments: &[Vec<usize>],
    cfg: &MapConfig,
) -> Result<GmmHmmSet> {
    if !(cfg.tau >= 0.0) {
        return Err(Error::Argument("relevance factor must be nonnegative".into()));
    }
    if features.len() != alignments.len() {
        return Err(Error::Argument("one alignment per feature sequence".into()));
    }
    let d = base.dim();
    let mut occ: Vec<Vec<f64>> = base.gmms.iter().map(|g| vec![0.0; g.n_components()]).collect();
    let mut first: Vec<Array2<f64>> = base.gmms.iter().map(|g| Array2::zeros((g.n_components(), d))).collect();
    for (fs, al) in features.iter().zip(alignments) {
        check_dim("feature dimension", d, fs.dim())?;
        check_dim("alignment length", fs.len(), al.len())?;
        for (t, &s) in al.iter().enumerate() {
            if s >= base.n_states() {
                return Err(Error::Argument(format!("label {s} out of range")));
            }
            let x = fs.frame(t).to_vec();
            let mut r = base.gmms[s].component_log_joint(&x);
            softmax_in_place(&mut r);
            for (k, rk) in r.iter().enumerate() {
                if *rk > 0.0 {
                    occ[s][k] += rk;
                    for j in 0..d {
                        first[s][[k, j]] += rk * x[j];
                    }
                }
            }
        }
    }
    let mut out = base.clone();
    if cfg.tau.is_infinite() {
        return Ok(out);
    }
    for (s, g) in out.gmms.iter_mut().enumerate() {
        for k in 0..g.n_components() {
            let n = occ[s][k];
            if n <= 0.0 {
                continue;
            }
            let alpha = n / (n + cfg.tau);
            for j in 0..d {
                let sample_mean = first[s][[k, j]] / n;
                g.means[[k, j]] = alpha * sample_mean + (1.0 - alpha) * g.means[[k, j]];
            }
        }
    }
    Ok(out)
}

/// Masker gains from −12 to +12 dB in 1 dB steps.
pub fn gain_grid_db() -> Vec<f64> {
    (-12..=12).map(|db| db as f64).collect()
}

/// Picks the grid gain (dB) that maximizes the summed per-frame best joint-state
/// VTS log-likelihood of `mixed`; returns it with every grid point's score.
pub fn estimate_gain(
    mixed: &FeatureSequence,
    target: &GmmHmmSet,
    masker: &GmmHmmSet,
    candidates_db: &[f64],
    ctx: &MismatchContext,
    mode: GmmCombination,
) -> Result<(f64, Vec<f64>)> {
    if candidates_db.is_empty() {
        return Err(Error::Argument("empty gain grid".into()));
    }
    let ones: Array1<f64> = ctx.dct().sum_axis(ndarray::Axis(1));
    let ones = ones.to_vec();
    let mut scores = Vec::with_capacity(candidates_db.len());
    for &db in candidates_db {
        let g = 10f64.powf(db / 20.0);
        let adapted = masker.gain_adapt(g, &ones)?;
        let t = vts_joint_tensor(mixed, target, &adapted, ctx, mode, TensorScale::LogLikelihood)?;
        let total: f64 = (0..t.n_frames())
            .map(|f| t.frame(f).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64)))
            .sum();
        scores.push(total);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok((candidates_db[best], scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::tests::random_model;
    use crate::acoustic::Gmm;
    use crate::features::{FeatureKind, Frontend};
    use crate::jointlik::mismatch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(rng: &mut ChaCha8Rng, n: usize, d: usize, states: usize) -> (FeatureSequence, Vec<usize>) {
        let fs = FeatureSequence::new(
            Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..3.0)),
            FeatureKind::MfccStatic,
            0.01,
        );
        let al = (0..n).map(|t| t % states).collect();
        (fs, al)
    }

    #[test]
    fn map_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_model(&mut rng, 3, 1, 2);
        let (fs, al) = data(&mut rng, 90, 2, 3);
        let keep = adapt_speaker(&base, &[fs.clone()], &[al.clone()], &MapConfig { tau: f64::INFINITY }).unwrap();
        assert_eq!(keep, base);
        let full = adapt_speaker(&base, &[fs.clone()], &[al.clone()], &MapConfig { tau: 0.0 }).unwrap();
        for s in 0..3 {
            for j in 0..2 {
                let rows: Vec<f64> = (0..90).filter(|t| al[*t] == s).map(|t| fs.frames()[[t, j]]).collect();
                let m = rows.iter().sum::<f64>() / rows.len() as f64;
                assert!((full.gmms[s].means[[0, j]] - m).abs() < 1e-12);
            }
        }
        let mid = adapt_speaker(&base, &[fs], &[al], &MapConfig { tau: 7.0 }).unwrap();
        for s in 0..3 {
            for j in 0..2 {
                let (lo, hi) = {
                    let a = base.gmms[s].means[[0, j]];
                    let b = full.gmms[s].means[[0, j]];
                    (a.min(b), a.max(b))
                };
                let v = mid.gmms[s].means[[0, j]];
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn unseen_states_keep_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = random_model(&mut rng, 3, 2, 2);
        let (fs, _) = data(&mut rng, 10, 2, 1);
        let out = adapt_speaker(&base, &[fs], &[vec![0; 10]], &MapConfig::default()).unwrap();
        assert_eq!(out.gmms[1], base.gmms[1]);
        assert_eq!(out.gmms[2], base.gmms[2]);
        assert_ne!(out.gmms[0], base.gmms[0]);
    }

    #[test]
    fn gain_grid_recovers_known_gain() {
        let fe = Frontend::desk();
        let ctx = MismatchContext::new(&fe);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let make = |rng: &mut ChaCha8Rng, n: usize| GmmHmmSet {
            phones: (0..n).map(|i| format!("p{i}")).collect(),
            gmms: (0..n)
                .map(|_| Gmm::single((0..13).map(|k| if k == 0 { rng.gen_range(0.0..10.0) } else { rng.gen_range(-3.0..3.0) }).collect(), vec![0.01; 13]))
                .collect(),
            self_loop: vec![0.8; n],
            priors: vec![1.0 / n as f64; n],
            n_static: 13,
        };
        let ta = make(&mut rng, 3);
        let mb = make(&mut rng, 3);
        let ones = fe.dct_of_ones().to_vec();
        let true_db = 5.0;
        let scaled = mb.gain_adapt(10f64.powf(true_db / 20.0), &ones).unwrap();
        let frames: Vec<f64> = (0..30)
            .flat_map(|t| {
                mismatch(ta.gmms[t % 3].means.row(0), scaled.gmms[(t / 3) % 3].means.row(0), &ctx)
                    .unwrap()
                    .to_vec()
            })
            .collect();
        let mixed = FeatureSequence::new(Array2::from_shape_vec((30, 13), frames).unwrap(), FeatureKind::MfccStatic, 0.01);
        let grid = gain_grid_db();
        let (g, scores) = estimate_gain(&mixed, &ta, &mb, &grid, &ctx, GmmCombination::PairWise).unwrap();
        assert_eq!(g, true_db);
        let best = scores[grid.iter().position(|x| *x == g).unwrap()];
        assert!(scores.iter().all(|s| *s <= best));
        assert_eq!(estimate_gain(&mixed, &ta, &mb, &[-3.0], &ctx, GmmCombination::Collapse).unwrap().0, -3.0);
        assert!(estimate_gain(&mixed, &ta, &mb, &[], &ctx, GmmCombination::Collapse).is_err());
    }
}
