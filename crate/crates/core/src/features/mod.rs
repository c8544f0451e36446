//! MFCC / log-mel front end, delta features and network-input composition.

mod archive;
mod dnn_input;
mod frontend;

pub use archive::{read_archive, write_archive};
pub use dnn_input::{
    compose_dnn_input, compose_dnn_matrix, raw_continuous_matrix, DnnInput, DnnInputSpec,
    Standardization,
};
pub use frontend::{Frontend, FrontendConfig, WindowKind};

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Half-width of the delta regression window.
pub const DELTA_HALF_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    MfccStatic,
    MfccWithDelta,
    LogMel,
    MelPower,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::MfccStatic => "mfcc_static",
            FeatureKind::MfccWithDelta => "mfcc_with_delta",
            FeatureKind::LogMel => "log_mel",
            FeatureKind::MelPower => "mel_power",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mfcc_static" => FeatureKind::MfccStatic,
            "mfcc_with_delta" => FeatureKind::MfccWithDelta,
            "log_mel" => FeatureKind::LogMel,
            "mel_power" => FeatureKind::MelPower,
            _ => return None,
        })
    }
}

/// T×D frame matrix with its kind and frame shift.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Array2<f64>,
    kind: FeatureKind,
    frame_shift_s: f64,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>, kind: FeatureKind, frame_shift_s: f64) -> Self {
        Self {
            frames,
            kind,
            frame_shift_s,
        }
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.frames.row(t)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|v| v.is_finite())
    }
}

/// Appends first-order regression deltas over ±2 frames with edge replication.
pub fn append_deltas(fs: &FeatureSequence) -> Result<FeatureSequence> {
    if fs.kind != FeatureKind::MfccStatic {
        return Err(Error::Argument(format!(
            "deltas need mfcc_static input, got {}",
            fs.kind.as_str()
        )));
    }
    let t_len = fs.len();
    if t_len == 0 {
        return Err(Error::EmptySequence("no frames to differentiate".into()));
    }
    let d = fs.dim();
    let k_max = DELTA_HALF_WINDOW as isize;
    let denom: f64 = 2.0 * (1..=k_max).map(|k| (k * k) as f64).sum::<f64>();
    let clamp = |t: isize| t.clamp(0, t_len as isize - 1) as usize;
    let mut out = Array2::zeros((t_len, 2 * d));
    for t in 0..t_len {
        for j in 0..d {
            out[[t, j]] = fs.frames[[t, j]];
            let mut acc = 0.0;
            for k in 1..=k_max {
                let fwd = fs.frames[[clamp(t as isize + k), j]];
                let back = fs.frames[[clamp(t as isize - k), j]];
                acc += k as f64 * (fwd - back);
            }
            out[[t, d + j]] = acc / denom;
        }
    }
    Ok(FeatureSequence::new(
        out,
        FeatureKind::MfccWithDelta,
        fs.frame_shift_s,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Waveform;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sine(freq: f64, len: usize, amp: f64, sr: u32) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|n| amp * (2.0 * PI * freq * n as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap()
    }

    fn noise(seed: u64, len: usize, amp: f64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(), 8000).unwrap()
    }

    #[test]
    fn frontend_invariants() {
        for cfg in [
            FrontendConfig::desk(8000),
            FrontendConfig::full_source(8000),
            FrontendConfig::full_dnn(8000),
            FrontendConfig::full_dnn(16000),
        ] {
            let fe = Frontend::new(cfg).unwrap();
            let w = fe.mel_matrix();
            for row in w.rows() {
                assert!(row.sum() > 0.0);
            }
            for col in w.columns() {
                assert!(col.sum() <= 1.0 + 1e-9);
            }
            let eye = fe.dct().dot(fe.dct_pinv());
            for ((i, j), v) in eye.indexed_iter() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-10);
            }
        }
        let mut bad = FrontendConfig::desk(8000);
        bad.frame_len = 300;
        assert!(Frontend::new(bad).is_err());
    }

    #[test]
    fn stft_examples() {
        let fe = Frontend::desk();
        let z = fe.stft_power(&Waveform::zeros(1000, 8000)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(matches!(
            fe.stft_power(&Waveform::zeros(100, 8000)),
            Err(Error::EmptySequence(_))
        ));

        // bin-centred sinusoid, rectangular window spanning the FFT
        let mut cfg = FrontendConfig::desk(8000);
        cfg.window = WindowKind::Rectangular;
        cfg.frame_len = cfg.fft_size;
        let fe = Frontend::new(cfg).unwrap();
        let bin = 20;
        let f = bin as f64 * 8000.0 / 256.0;
        let p = fe.stft_power(&sine(f, 2000, 0.7, 8000)).unwrap();
        for row in p.rows() {
            assert!(row[bin] / row.sum() >= 0.99);
        }
    }

    #[test]
    fn stft_parseval() {
        let fe = Frontend::desk();
        let cfg = fe.config().clone();
        let w = noise(4, 1200, 0.5);
        let p = fe.stft_power(&w).unwrap();
        let n = cfg.fft_size;
        let win: Vec<f64> = (0..cfg.frame_len)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (cfg.frame_len as f64 - 1.0)).cos())
            .collect();
        for t in 0..p.nrows() {
            let off = t * cfg.frame_shift;
            let energy: f64 = (0..cfg.frame_len)
                .map(|i| (w.samples()[off + i] * win[i]).powi(2))
                .sum();
            // one-sided spectrum: interior bins count twice
            let mut sum = p[[t, 0]] + p[[t, n / 2]];
            for k in 1..n / 2 {
                sum += 2.0 * p[[t, k]];
            }
            assert!((sum - n as f64 * energy).abs() <= 1e-6 * n as f64 * energy);
        }
    }

    #[test]
    fn mfcc_examples() {
        let fe = Frontend::desk();
        let z = fe.mfcc(&Waveform::zeros(800, 8000)).unwrap();
        let floor = Array1::from_elem(fe.n_mel(), fe.config().log_floor.ln());
        let expect = fe.dct().dot(&floor);
        for row in z.frames().rows() {
            for (a, b) in row.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(z.kind(), FeatureKind::MfccStatic);
        assert_eq!(z.dim(), 13);

        // scaling by g shifts every frame by 2·ln(g)·C·1
        let w = noise(1, 2000, 0.3);
        let g: f64 = 3.7;
        let a = fe.mfcc(&w).unwrap();
        let b = fe.mfcc(&w.scaled(g)).unwrap();
        let shift = fe.dct_of_ones() * (2.0 * g.ln());
        for t in 0..a.len() {
            for j in 0..a.dim() {
                assert!((b.frames()[[t, j]] - a.frames()[[t, j]] - shift[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mfcc_pseudo_inverse_round_trip() {
        // M = d: exact inverse
        let mut cfg = FrontendConfig::desk(8000);
        cfg.n_cep = cfg.n_mel;
        let fe = Frontend::new(cfg).unwrap();
        let y = fe.mfcc(&noise(2, 1500, 0.4)).unwrap();
        for row in y.frames().rows() {
            let back = fe.dct().dot(&fe.dct_pinv().dot(&row).mapv(f64::exp).mapv(f64::ln));
            for (a, b) in back.iter().zip(row.iter()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        // d < M: C·C⁻¹ = I still makes the cepstral round trip exact; the lossy part is
        // the log-mel reconstruction C⁻¹·y, which only keeps the smooth envelope.
        let fe = Frontend::desk();
        let lm = fe.log_mel(&noise(2, 1500, 0.4)).unwrap();
        let y = fe.cepstra_from_log_mel(&lm);
        let mut residual = 0.0f64;
        for (t, row) in y.frames().rows().into_iter().enumerate() {
            let rec = fe.dct_pinv().dot(&row);
            let back = fe.dct().dot(&rec);
            for (a, b) in back.iter().zip(row.iter()) {
                assert!((a - b).abs() < 1e-8);
            }
            residual = residual.max((&rec - &lm.frame(t)).mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v)));
        }
        assert!(residual > 1e-3, "projection of a noisy log-mel frame should be lossy");
    }

    #[test]
    fn log_mel_examples() {
        let fe = Frontend::desk();
        let z = fe.log_mel(&Waveform::zeros(800, 8000)).unwrap();
        let ln_floor = fe.config().log_floor.ln();
        assert!(z.frames().iter().all(|&v| v == ln_floor));
        assert_eq!(z.dim(), 24);

        let w = noise(3, 1600, 0.2);
        let lm = fe.log_mel(&w).unwrap();
        let mf = fe.mfcc(&w).unwrap();
        let via = lm.frames().dot(&fe.dct().t());
        for (a, b) in via.iter().zip(mf.frames().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn deltas() {
        let constant = FeatureSequence::new(
            Array2::from_elem((7, 3), 1.5),
            FeatureKind::MfccStatic,
            0.01,
        );
        let d = append_deltas(&constant).unwrap();
        assert_eq!(d.dim(), 6);
        assert!(d.frames().column(4).iter().all(|&v| v == 0.0));

        let ramp = FeatureSequence::new(
            Array2::from_shape_fn((10, 2), |(t, j)| if j == 0 { 0.25 * t as f64 } else { 0.0 }),
            FeatureKind::MfccStatic,
            0.01,
        );
        let d = append_deltas(&ramp).unwrap();
        for t in 2..8 {
            assert!((d.frames()[[t, 2]] - 0.25).abs() < 1e-14);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((9, 4), |_| rng.gen_range(-2.0..2.0));
        let fs = FeatureSequence::new(x.clone(), FeatureKind::MfccStatic, 0.01);
        let d = append_deltas(&fs).unwrap();
        for t in 0..9i64 {
            for j in 0..4 {
                let at = |u: i64| x[[u.clamp(0, 8) as usize, j]];
                let brute = (1.0 * (at(t + 1) - at(t - 1)) + 2.0 * (at(t + 2) - at(t - 2))) / 10.0;
                assert!((d.frames()[[t as usize, 4 + j]] - brute).abs() < 1e-14);
            }
        }

        assert!(append_deltas(&d).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn log_mel_is_monotone_in_gain(seed in 0u64..500, gain in 1.0f64..20.0) {
            let fe = Frontend::desk();
            let w = noise(seed, 900, 0.1);
            let a = fe.log_mel(&w).unwrap();
            let b = fe.log_mel(&w.scaled(gain)).unwrap();
            let floor = fe.config().log_floor.ln();
            for (x, y) in a.frames().iter().zip(b.frames().iter()) {
                if *x > floor {
                    prop_assert!(*y >= *x - 1e-12);
                }
            }
        }

        #[test]
        fn features_finite_for_tiny_signals(seed in 0u64..500, exp in -300.0f64..0.0) {
            let fe = Frontend::desk();
            let w = noise(seed, 700, 10f64.powf(exp));
            prop_assert!(fe.mfcc(&w).unwrap().is_finite());
            prop_assert!(fe.log_mel(&w).unwrap().is_finite());
        }
    }
}
