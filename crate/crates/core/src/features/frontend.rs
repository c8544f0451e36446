use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hamming,
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub frame_len: usize,
    pub frame_shift: usize,
    pub n_mel: usize,
    pub n_cep: usize,
    pub log_floor: f64,
    pub window: WindowKind,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl FrontendConfig {
    fn standard(sample_rate: u32, n_mel: usize, n_cep: usize) -> Self {
        let frame_len = (0.025 * sample_rate as f64).round() as usize;
        let frame_shift = (0.010 * sample_rate as f64).round() as usize;
        let mut fft_size = frame_len.next_power_of_two();
        // keep the lowest mel filters wide enough to cover a bin
        while n_mel > 30 && fft_size < 512 {
            fft_size *= 2;
        }
        Self {
            sample_rate,
            fft_size,
            frame_len,
            frame_shift,
            n_mel,
            n_cep,
            log_floor: 1e-10,
            window: WindowKind::Hamming,
            low_hz: 0.0,
            high_hz: sample_rate as f64 / 2.0,
        }
    }

    /// 25 ms / 10 ms Hamming frames, 24 mel filters, 13 cepstra.
    pub fn desk(sample_rate: u32) -> Self {
        Self::standard(sample_rate, 24, 13)
    }

    /// Source-model front end at full size: 27 filters, 19 cepstra.
    pub fn full_source(sample_rate: u32) -> Self {
        Self::standard(sample_rate, 27, 19)
    }

    /// Network-input front end at full size: 50 filters.
    pub fn full_dnn(sample_rate: u32) -> Self {
        Self::standard(sample_rate, 50, 13)
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Immutable MFCC / log-mel front end: mel matrix `W`, DCT `C`, and its
/// pseudo-inverse.
#[derive(Clone)]
pub struct Frontend {
    cfg: FrontendConfig,
    mel: Array2<f64>,
    dct: Array2<f64>,
    dct_pinv: Array2<f64>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("cfg", &self.cfg).finish()
    }
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl Frontend {
    pub fn new(cfg: FrontendConfig) -> Result<Self> {
        if cfg.frame_len == 0 || cfg.frame_shift == 0 || cfg.fft_size == 0 {
            return Err(Error::Argument("frame sizes must be positive".into()));
        }
        if cfg.frame_len > cfg.fft_size {
            return Err(Error::Argument(format!(
                "frame_len {} exceeds fft_size {}",
                cfg.frame_len, cfg.fft_size
            )));
        }
        let n_bins = cfg.n_bins();
        if cfg.n_cep == 0 || cfg.n_cep > cfg.n_mel || cfg.n_mel > n_bins {
            return Err(Error::Argument(format!(
                "need 0 < n_cep ({}) <= n_mel ({}) <= bins ({})",
                cfg.n_cep, cfg.n_mel, n_bins
            )));
        }
        if !(cfg.log_floor > 0.0) {
            return Err(Error::Argument("log floor must be positive".into()));
        }

        let mel = mel_matrix(&cfg)?;
        let dct = dct_matrix(cfg.n_cep, cfg.n_mel);
        // orthonormal rows, so the pseudo-inverse is the transpose
        let dct_pinv = dct.t().to_owned();
        let window = match cfg.window {
            WindowKind::Hamming => (0..cfg.frame_len)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (cfg.frame_len as f64 - 1.0)).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; cfg.frame_len],
        };
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg,
            mel,
            dct,
            dct_pinv,
            window,
            fft,
        })
    }

    pub fn desk() -> Self {
        Self::new(FrontendConfig::desk(crate::signal::DEFAULT_SAMPLE_RATE))
            .expect("desk front end is valid")
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    /// `W`, M×F.
    pub fn mel_matrix(&self) -> &Array2<f64> {
        &self.mel
    }

    /// `C`, d×M.
    pub fn dct(&self) -> &Array2<f64> {
        &self.dct
    }

    /// `C⁻¹`, M×d.
    pub fn dct_pinv(&self) -> &Array2<f64> {
        &self.dct_pinv
    }

    pub fn n_mel(&self) -> usize {
        self.cfg.n_mel
    }

    pub fn n_cep(&self) -> usize {
        self.cfg.n_cep
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.cfg.frame_shift as f64 / self.cfg.sample_rate as f64
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.cfg.frame_len {
            0
        } else {
            1 + (n_samples - self.cfg.frame_len) / self.cfg.frame_shift
        }
    }

    /// Sample index at the centre of frame `t`.
    pub fn frame_centre(&self, t: usize) -> usize {
        t * self.cfg.frame_shift + self.cfg.frame_len / 2
    }

    /// `C·1`, the cepstral image of a constant log-mel offset.
    pub fn dct_of_ones(&self) -> Array1<f64> {
        self.dct.sum_axis(ndarray::Axis(1))
    }

    /// Per-frame windowed power spectrum, T×F.
    pub fn stft_power(&self, w: &Waveform) -> Result<Array2<f64>> {
        if w.sample_rate() != self.cfg.sample_rate {
            return Err(Error::Argument(format!(
                "waveform is {} Hz, front end expects {} Hz",
                w.sample_rate(),
                self.cfg.sample_rate
            )));
        }
        let t_frames = self.n_frames(w.len());
        if t_frames == 0 {
            return Err(Error::EmptySequence(format!(
                "{} samples is shorter than one frame ({})",
                w.len(),
                self.cfg.frame_len
            )));
        }
        let n_bins = self.cfg.n_bins();
        let mut out = Array2::zeros((t_frames, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let x = w.samples();
        for t in 0..t_frames {
            let off = t * self.cfg.frame_shift;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < self.cfg.frame_len {
                    Complex::new(x[off + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for k in 0..n_bins {
                out[[t, k]] = buf[k].norm_sqr();
            }
        }
        Ok(out)
    }

    /// Mel power `W·|Y|²`, T×M.
    pub fn mel_power(&self, w: &Waveform) -> Result<Array2<f64>> {
        let p = self.stft_power(w)?;
        Ok(p.dot(&self.mel.t()))
    }

    pub fn log_mel(&self, w: &Waveform) -> Result<super::FeatureSequence> {
        let mut m = self.mel_power(w)?;
        let floor = self.cfg.log_floor;
        m.mapv_inplace(|v| v.max(floor).ln());
        Ok(super::FeatureSequence::new(
            m,
            super::FeatureKind::LogMel,
            self.frame_shift_s(),
        ))
    }

    pub fn mfcc(&self, w: &Waveform) -> Result<super::FeatureSequence> {
        let lm = self.log_mel(w)?;
        Ok(self.cepstra_from_log_mel(&lm))
    }

    /// `C·log_mel` frame by frame.
    pub fn cepstra_from_log_mel(&self, lm: &super::FeatureSequence) -> super::FeatureSequence {
        super::FeatureSequence::new(
            lm.frames().dot(&self.dct.t()),
            super::FeatureKind::MfccStatic,
            lm.frame_shift_s(),
        )
    }
}

fn mel_matrix(cfg: &FrontendConfig) -> Result<Array2<f64>> {
    let n_bins = cfg.n_bins();
    let lo = hz_to_mel(cfg.low_hz);
    let hi = hz_to_mel(cfg.high_hz);
    let pts: Vec<f64> = (0..cfg.n_mel + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mel + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut w = Array2::zeros((cfg.n_mel, n_bins));
    for m in 0..cfg.n_mel {
        let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let v = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            w[[m, k]] = v;
        }
        if w.row(m).sum() <= 0.0 {
            return Err(Error::Argument(format!(
                "mel filter {m} covers no FFT bin; increase fft_size"
            )));
        }
    }
    Ok(w)
}

/// Orthonormal DCT-II rows, d×M.
fn dct_matrix(d: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((d, m), |(k, n)| {
        let scale = if k == 0 {
            (1.0 / m as f64).sqrt()
        } else {
            (2.0 / m as f64).sqrt()
        };
        scale * (PI * k as f64 * (n as f64 + 0.5) / m as f64).cos()
    })
}
