use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gmm, GmmHmmSet};
use crate::error::{check_dim, Error, Result};
use crate::features::{FeatureSequence, Frontend};
use crate::numeric::log_sum_exp;
use crate::signal::Utterance;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmmTrainConfig {
    pub n_components: usize,
    pub em_iters: usize,
    pub kmeans_iters: usize,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor_ratio: f64,
    pub n_static: usize,
    pub seed: u64,
}

impl Default for GmmTrainConfig {
    fn default() -> Self {
        Self {
            n_components: 4,
            em_iters: 20,
            kmeans_iters: 5,
            variance_floor_ratio: 1e-3,
            n_static: 13,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Per state, the training log-likelihood before each EM update and after the last.
    pub ll_traces: Vec<Vec<f64>>,
    /// States whose component count was reduced, with the count used.
    pub reduced: Vec<(String, usize)>,
}

/// Phone label index at each frame centre.
pub fn frame_labels(utt: &Utterance, frontend: &Frontend, phones: &[String]) -> Result<Vec<usize>> {
    let n = frontend.n_frames(utt.waveform.len());
    (0..n)
        .map(|t| {
            let p = utt.phone_at(frontend.frame_centre(t));
            phones
                .iter()
                .position(|q| q == p)
                .ok_or_else(|| Error::Lexicon(format!("phone `{p}` not in the model set")))
        })
        .collect()
}

/// Fits one GMM per phone state from labelled frames.
pub fn train_gmm_hmm(
    features: &[FeatureSequence],
    alignments: &[Vec<usize>],
    phones: &[String],
    cfg: &GmmTrainConfig,
) -> Result<(GmmHmmSet, TrainReport)> {
    if cfg.n_components == 0 {
        return Err(Error::Argument("n_components must be at least 1".into()));
    }
    if features.len() != alignments.len() {
        return Err(Error::Argument("one alignment per feature sequence".into()));
    }
    let n_states = phones.len();
    let dim = features
        .first()
        .map(FeatureSequence::dim)
        .ok_or_else(|| Error::EmptySequence("no training sequences".into()))?;
    if cfg.n_static > dim {
        return Err(Error::Argument("n_static exceeds feature dimension".into()));
    }

    let mut pooled: Vec<Vec<usize>> = vec![Vec::new(); n_states];
    let mut rows: Vec<ArrayView1<f64>> = Vec::new();
    let mut stay = vec![0usize; n_states];
    let mut leave = vec![0usize; n_states];
    for (fs, al) in features.iter().zip(alignments) {
        check_dim("feature dimension", dim, fs.dim())?;
        check_dim("alignment length", fs.len(), al.len())?;
        for (t, &s) in al.iter().enumerate() {
            if s >= n_states {
                return Err(Error::Argument(format!("label {s} out of range")));
            }
            pooled[s].push(rows.len());
            rows.push(fs.frame(t));
            if t + 1 < al.len() {
                if al[t + 1] == s {
                    stay[s] += 1;
                } else {
                    leave[s] += 1;
                }
            }
        }
    }

    let n_total = rows.len();
    let mut global_mean = Array1::<f64>::zeros(dim);
    for r in &rows {
        global_mean += r;
    }
    global_mean /= n_total as f64;
    let mut global_var = Array1::<f64>::zeros(dim);
    for r in &rows {
        global_var += &(r - &global_mean).mapv(|v| v * v);
    }
    global_var /= n_total as f64;
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (v * cfg.variance_floor_ratio).max(1e-12))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut gmms = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let data: Vec<ArrayView1<f64>> = pooled[s].iter().map(|&i| rows[i]).collect();
        if data.is_empty() {
            return Err(Error::EmptySequence(format!("no frames for state `{}`", phones[s])));
        }
        let k = cfg.n_components.min(data.len());
        if k < cfg.n_components {
            log::warn!(
                "state `{}` has {} frames; using {} components",
                phones[s],
                data.len(),
                k
            );
            report.reduced.push((phones[s].clone(), k));
        }
        let (gmm, trace) = fit_gmm(&data, k, cfg, &floor, &mut rng);
        gmms.push(gmm);
        report.ll_traces.push(trace);
    }

    let self_loop = (0..n_states)
        .map(|s| {
            let total = stay[s] + leave[s];
            let a = if total == 0 { 0.5 } else { stay[s] as f64 / total as f64 };
            a.clamp(1e-3, 1.0 - 1e-3)
        })
        .collect();

    let set = GmmHmmSet {
        phones: phones.to_vec(),
        gmms,
        self_loop,
        priors: vec![1.0 / n_states as f64; n_states],
        n_static: cfg.n_static,
    };
    Ok((set, report))
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(data: &[ArrayView1<f64>], k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    let mut centres: Vec<Array1<f64>> = vec![data[rng.gen_range(0..n)].to_owned()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(*x, centres[0].view())).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centres.push(data[pick].to_owned());
        let c = centres.last().expect("just pushed").view();
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(*x, c));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iters.max(1) {
        for (i, x) in data.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centres.iter().enumerate() {
                let d = sq_dist(*x, c.view());
                if d < best.0 {
                    best = (d, j);
                }
            }
            assign[i] = best.1;
        }
        let dim = data[0].len();
        let mut sums = vec![Array1::<f64>::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (i, x) in data.iter().enumerate() {
            sums[assign[i]] += x;
            counts[assign[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centres[j] = &sums[j] / counts[j] as f64;
            }
        }
    }
    assign
}

fn fit_gmm(
    data: &[ArrayView1<f64>],
    k: usize,
    cfg: &GmmTrainConfig,
    floor: &[f64],
    rng: &mut ChaCha8Rng,
) -> (Gmm, Vec<f64>) {
    let n = data.len();
    let dim = data[0].len();
    let assign = if k == 1 {
        vec![0; n]
    } else {
        kmeans_pp(data, k, cfg.kmeans_iters, rng)
    };
    let mut resp = Array2::<f64>::zeros((n, k));
    for (i, &a) in assign.iter().enumerate() {
        resp[[i, a]] = 1.0;
    }
    let mut gmm = Gmm {
        weights: vec![1.0 / k as f64; k],
        means: Array2::zeros((k, dim)),
        vars: Array2::ones((k, dim)),
    };
    m_step(&mut gmm, data, &resp, floor);

    let mut trace = Vec::with_capacity(cfg.em_iters + 1);
    for _ in 0..cfg.em_iters {
        trace.push(e_step(&gmm, data, &mut resp));
        m_step(&mut gmm, data, &resp, floor);
    }
    trace.push(e_step(&gmm, data, &mut resp));
    (gmm, trace)
}

/// Fills responsibilities; returns the total log-likelihood.
fn e_step(gmm: &Gmm, data: &[ArrayView1<f64>], resp: &mut Array2<f64>) -> f64 {
    let mut total = 0.0;
    let mut buf = vec![0.0; gmm.dim()];
    for (i, x) in data.iter().enumerate() {
        for (b, v) in buf.iter_mut().zip(x.iter()) {
            *b = *v;
        }
        let lj = gmm.component_log_joint(&buf);
        let z = log_sum_exp(&lj);
        total += z;
        for (j, l) in lj.iter().enumerate() {
            resp[[i, j]] = (l - z).exp();
        }
    }
    total
}

fn m_step(gmm: &mut Gmm, data: &[ArrayView1<f64>], resp: &Array2<f64>, floor: &[f64]) {
    let n = data.len() as f64;
    let dim = gmm.dim();
    for j in 0..gmm.n_components() {
        let col = resp.column(j);
        let nk: f64 = col.sum();
        if nk <= 1e-300 {
            // unsupported component: keep its parameters, drop its weight
            gmm.weights[j] = 0.0;
            continue;
        }
        let mut mean = Array1::<f64>::zeros(dim);
        for (x, r) in data.iter().zip(col.iter()) {
            mean.scaled_add(*r, x);
        }
        mean /= nk;
        let mut var = Array1::<f64>::zeros(dim);
        for (x, r) in data.iter().zip(col.iter()) {
            for d in 0..dim {
                let e = x[d] - mean[d];
                var[d] += r * e * e;
            }
        }
        var /= nk;
        for d in 0..dim {
            var[d] = var[d].max(floor[d]);
        }
        gmm.weights[j] = nk / n;
        gmm.means.row_mut(j).assign(&mean);
        gmm.vars.row_mut(j).assign(&var);
    }
    let s: f64 = gmm.weights.iter().sum();
    gmm.weights.iter_mut().for_each(|w| *w /= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use rand_distr::{Distribution, Normal};

    fn seq(rows: Vec<Vec<f64>>) -> FeatureSequence {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        FeatureSequence::new(
            Array2::from_shape_vec((flat.len() / d, d), flat).unwrap(),
            FeatureKind::MfccStatic,
            0.01,
        )
    }

    fn cfg(k: usize, d: usize) -> GmmTrainConfig {
        GmmTrainConfig {
            n_components: k,
            n_static: d,
            ..Default::default()
        }
    }

    #[test]
    fn single_gaussian_is_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.gen_range(-1.0..3.0), rng.gen_range(0.0..0.5)])
            .collect();
        let labels: Vec<usize> = (0..300).map(|i| usize::from(i >= 150)).collect();
        let phones = vec!["x".to_string(), "y".to_string()];
        let (m, _) = train_gmm_hmm(&[seq(rows.clone())], &[labels.clone()], &phones, &cfg(1, 2)).unwrap();
        m.validate().unwrap();
        for s in 0..2 {
            let pts: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, l)| **l == s).map(|(r, _)| r).collect();
            for d in 0..2 {
                let mean = pts.iter().map(|r| r[d]).sum::<f64>() / pts.len() as f64;
                let var = pts.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / pts.len() as f64;
                assert!((m.gmms[s].means[[0, d]] - mean).abs() < 1e-12);
                assert!((m.gmms[s].vars[[0, d]] - var).abs() < 1e-12);
            }
        }
        // 149 stays and one switch in state 0, 149 stays in state 1
        assert!((m.self_loop[0] - 149.0 / 150.0).abs() < 1e-12);
        assert!((m.self_loop[1] - (1.0 - 1e-3)).abs() < 1e-12);
    }

    #[test]
    fn em_is_monotone() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..400)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0f64).powi(3)).collect())
                .collect();
            let labels = vec![0; 400];
            let mut c = cfg(5, 3);
            c.seed = seed;
            let (_, rep) = train_gmm_hmm(&[seq(rows)], &[labels], &["x".into()], &c).unwrap();
            let tr = &rep.ll_traces[0];
            assert_eq!(tr.len(), 21);
            for w in tr.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "trace {tr:?}");
            }
        }
    }

    #[test]
    fn recovers_separated_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = [[-5.0, 2.0], [4.0, -3.0]];
        let noise = Normal::new(0.0, 0.5).unwrap();
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|i| {
                let c = truth[i % 2];
                vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]
            })
            .collect();
        let (m, _) = train_gmm_hmm(&[seq(rows)], &[vec![0; 2000]], &["x".into()], &cfg(2, 2)).unwrap();
        let g = &m.gmms[0];
        for t in truth {
            let hit = (0..2).any(|k| (g.means[[k, 0]] - t[0]).abs() < 0.1 && (g.means[[k, 1]] - t[1]).abs() < 0.1);
            assert!(hit, "{:?}", g.means);
        }
    }

    #[test]
    fn sparse_state_reduces_components() {
        let rows = vec![vec![0.0], vec![1.0], vec![5.0], vec![6.0], vec![7.0]];
        let labels = vec![0, 0, 1, 1, 1];
        let (m, rep) = train_gmm_hmm(&[seq(rows)], &[labels], &["a".into(), "b".into()], &cfg(3, 1)).unwrap();
        assert_eq!(m.gmms[0].n_components(), 2);
        assert_eq!(rep.reduced[0], ("a".to_string(), 2));
        m.validate().unwrap();
        assert!(train_gmm_hmm(&[seq(vec![vec![0.0]])], &[vec![0]], &["a".into()], &cfg(0, 1)).is_err());
    }
}
