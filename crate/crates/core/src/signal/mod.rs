//! Time-domain signals: synthetic single-talker utterances and two-talker mixing.

mod synth;
mod wav;

pub use synth::{
    desk_phone_table, synth_utterance, Excitation, Gender, PhoneSegment, PhoneTable,
    PhoneTemplate, SpeakerProfile, Utterance, SILENCE,
};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// A mono waveform. Samples are finite and the sample rate positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Zero-pads at the tail to `len` samples (no-op when already that long).
    pub fn padded_to(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        if samples.len() < len {
            samples.resize(len, 0.0);
        }
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// How the masker gain `g` is chosen when mixing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainMode {
    Explicit(f64),
    FromTmr(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub gain_mode: GainMode,
}

impl MixSpec {
    pub fn explicit(gain: f64) -> Self {
        Self {
            gain_mode: GainMode::Explicit(gain),
        }
    }

    pub fn from_tmr(tmr_db: f64) -> Self {
        Self {
            gain_mode: GainMode::FromTmr(tmr_db),
        }
    }

    /// Resolves the masker gain for a concrete target/masker pair.
    pub fn resolve_gain(&self, target: &Waveform, masker: &Waveform) -> Result<f64> {
        match self.gain_mode {
            GainMode::Explicit(g) if g >= 0.0 && g.is_finite() => Ok(g),
            GainMode::Explicit(g) => Err(Error::Argument(format!("invalid explicit gain {g}"))),
            GainMode::FromTmr(tmr) => gain_from_tmr(tmr, target.energy(), masker.energy()),
        }
    }
}

/// Masker gain `g` with `10·log10(energy_a / (g²·energy_b)) = tmr_db`.
pub fn gain_from_tmr(tmr_db: f64, energy_a: f64, energy_b: f64) -> Result<f64> {
    if !(energy_a > 0.0) || !(energy_b > 0.0) {
        return Err(Error::Argument(format!(
            "energies must be positive (got {energy_a}, {energy_b})"
        )));
    }
    if !tmr_db.is_finite() {
        return Err(Error::Argument("TMR must be finite".into()));
    }
    Ok((energy_a / energy_b * 10f64.powf(-tmr_db / 10.0)).sqrt())
}

/// Realized target-to-masker ratio in dB for a given gain.
pub fn realized_tmr_db(energy_a: f64, energy_b: f64, gain: f64) -> f64 {
    10.0 * (energy_a / (gain * gain * energy_b)).log10()
}

/// `y[t] = x_a[t] + g·x_b[t]`, zero-padding the shorter signal at its tail.
pub fn mix(x_a: &Waveform, x_b: &Waveform, spec: &MixSpec) -> Result<Waveform> {
    if x_a.sample_rate != x_b.sample_rate {
        return Err(Error::Argument(format!(
            "sample rate mismatch: {} vs {}",
            x_a.sample_rate, x_b.sample_rate
        )));
    }
    let g = spec.resolve_gain(x_a, x_b)?;
    Ok(mix_with_gain(x_a, x_b, g))
}

pub(crate) fn mix_with_gain(x_a: &Waveform, x_b: &Waveform, g: f64) -> Waveform {
    let len = x_a.len().max(x_b.len());
    let samples = (0..len)
        .map(|t| {
            let a = x_a.samples.get(t).copied().unwrap_or(0.0);
            let b = x_b.samples.get(t).copied().unwrap_or(0.0);
            a + g * b
        })
        .collect();
    Waveform {
        samples,
        sample_rate: x_a.sample_rate,
    }
}
