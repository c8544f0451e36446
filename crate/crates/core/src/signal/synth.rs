//! Phone-template speech synthesizer used to build the synthetic corpus.
//!
//! Each phone is a segment of band-limited noise or a harmonic tone whose band
//! is scaled by the speaker's spectral shift. A low white-noise floor runs
//! under the whole utterance, so the silence phone is that floor alone.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Waveform;
use crate::error::{Error, Result};

pub const SILENCE: &str = "sil";

const FLOOR_RMS: f64 = 1e-3;
const RAMP_S: f64 = 0.004;
const NOISE_PARTIALS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Excitation {
    Silence,
    Noise,
    Harmonic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneTemplate {
    pub name: String,
    pub excitation: Excitation,
    /// Nominal band before the speaker shift, Hz.
    pub band_hz: (f64, f64),
    pub duration_s: (f64, f64),
    pub rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Gender {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    /// Relative scaling of every phone band, e.g. `-0.05` moves bands 5% down.
    pub spectral_shift: f64,
    pub pitch_hz: f64,
    pub level_db: f64,
}

impl SpeakerProfile {
    /// The synthetic gender attribute is the sign of the spectral shift.
    pub fn gender(&self) -> Gender {
        if self.spectral_shift < 0.0 {
            Gender::Low
        } else {
            Gender::High
        }
    }
}

/// Phone inventory plus the lexicon mapping words to phone strings.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneTable {
    pub sample_rate: u32,
    pub phones: Vec<PhoneTemplate>,
    pub lexicon: BTreeMap<String, Vec<String>>,
}

impl PhoneTable {
    pub fn phone(&self, name: &str) -> Option<&PhoneTemplate> {
        self.phones.iter().find(|p| p.name == name)
    }

    pub fn phone_names(&self) -> Vec<String> {
        self.phones.iter().map(|p| p.name.clone()).collect()
    }

    pub fn pronunciation(&self, word: &str) -> Result<&[String]> {
        self.lexicon
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lexicon(word.to_string()))
    }

    /// The speaker-shifted band of a phone, clipped below Nyquist.
    pub fn shifted_band(&self, phone: &PhoneTemplate, speaker: &SpeakerProfile) -> (f64, f64) {
        let nyq = self.sample_rate as f64 / 2.0;
        let s = 1.0 + speaker.spectral_shift;
        ((phone.band_hz.0 * s).min(nyq - 1.0), (phone.band_hz.1 * s).min(nyq - 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSegment {
    pub phone: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub waveform: Waveform,
    pub segments: Vec<PhoneSegment>,
}

impl Utterance {
    /// Phone label covering `sample`, falling back to silence past the end.
    pub fn phone_at(&self, sample: usize) -> &str {
        self.segments
            .iter()
            .find(|s| sample >= s.start && sample < s.end)
            .map(|s| s.phone.as_str())
            .unwrap_or(SILENCE)
    }

    /// The waveform extended to `len` samples with the speaker's noise floor,
    /// so a padded tail looks like the silence phone.
    pub fn padded_with_floor(&self, len: usize, speaker: &SpeakerProfile, seed: u64) -> Waveform {
        let mut samples = self.waveform.samples().to_vec();
        if samples.len() < len {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let level = 10f64.powf(speaker.level_db / 20.0);
            samples.extend((samples.len()..len).map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                FLOOR_RMS * level * z
            }));
        }
        Waveform::new(samples, self.waveform.sample_rate()).expect("finite floor samples")
    }
}

/// Synthesizes `words` spoken by `speaker`. Deterministic in `seed`.
pub fn synth_utterance(
    words: &[String],
    table: &PhoneTable,
    speaker: &SpeakerProfile,
    seed: u64,
) -> Result<Utterance> {
    if words.is_empty() {
        return Err(Error::Argument("empty word sequence".into()));
    }
    let mut phones = Vec::new();
    for w in words {
        for p in table.pronunciation(w)? {
            let tpl = table
                .phone(p)
                .ok_or_else(|| Error::Argument(format!("word `{w}` uses unknown phone `{p}`")))?;
            phones.push(tpl);
        }
    }

    let sr = table.sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let level = 10f64.powf(speaker.level_db / 20.0);
    let mut samples: Vec<f64> = Vec::new();
    let mut segments = Vec::with_capacity(phones.len());

    for tpl in phones {
        let dur = rng.gen_range(tpl.duration_s.0..=tpl.duration_s.1);
        let n = ((dur * sr).round() as usize).max(1);
        let start = samples.len();
        let jitter_db: f64 = rng.gen_range(-2.0..=2.0);
        let rms = tpl.rms * level * 10f64.powf(jitter_db / 20.0);
        let band = table.shifted_band(tpl, speaker);
        let segment = match tpl.excitation {
            Excitation::Silence => vec![0.0; n],
            Excitation::Noise => band_noise(&mut rng, n, sr, band, rms),
            Excitation::Harmonic => {
                let f0 = speaker.pitch_hz * rng.gen_range(0.95..=1.05);
                harmonic_tone(&mut rng, n, sr, band, f0, rms)
            }
        };
        samples.extend(apply_ramp(segment, (RAMP_S * sr) as usize));
        segments.push(PhoneSegment {
            phone: tpl.name.clone(),
            start,
            end: samples.len(),
        });
    }

    for s in samples.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *s += FLOOR_RMS * level * z;
    }

    Ok(Utterance {
        waveform: Waveform::new(samples, table.sample_rate)?,
        segments,
    })
}

fn band_noise(rng: &mut ChaCha8Rng, n: usize, sr: f64, band: (f64, f64), rms: f64) -> Vec<f64> {
    let amp = rms * (2.0 / NOISE_PARTIALS as f64).sqrt();
    let partials: Vec<(f64, f64)> = (0..NOISE_PARTIALS)
        .map(|_| {
            (
                rng.gen_range(band.0..=band.1),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    (0..n)
        .map(|t| {
            let time = t as f64 / sr;
            partials
                .iter()
                .map(|&(f, ph)| amp * (2.0 * PI * f * time + ph).sin())
                .sum()
        })
        .collect()
}

fn harmonic_tone(
    rng: &mut ChaCha8Rng,
    n: usize,
    sr: f64,
    band: (f64, f64),
    f0: f64,
    rms: f64,
) -> Vec<f64> {
    let first = (band.0 / f0).ceil().max(1.0) as usize;
    let last = (band.1 / f0).floor() as usize;
    if last < first {
        // band narrower than the pitch spacing
        return band_noise(rng, n, sr, band, rms);
    }
    let centre = 0.5 * (band.0 + band.1);
    let half = 0.5 * (band.1 - band.0);
    let harmonics: Vec<(f64, f64, f64)> = (first..=last)
        .map(|h| {
            let f = h as f64 * f0;
            // triangular envelope across the band
            let w = 1.0 - 0.5 * ((f - centre) / half).abs();
            (f, w, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let power: f64 = harmonics.iter().map(|&(_, w, _)| 0.5 * w * w).sum();
    let scale = rms / power.sqrt();
    (0..n)
        .map(|t| {
            let time = t as f64 / sr;
            harmonics
                .iter()
                .map(|&(f, w, ph)| scale * w * (2.0 * PI * f * time + ph).sin())
                .sum()
        })
        .collect()
}

fn apply_ramp(mut x: Vec<f64>, ramp: usize) -> Vec<f64> {
    let ramp = ramp.min(x.len() / 2);
    let n = x.len();
    for i in 0..ramp {
        let w = 0.5 - 0.5 * (PI * (i as f64 + 0.5) / ramp as f64).cos();
        x[i] *= w;
        x[n - 1 - i] *= w;
    }
    x
}

fn tpl(name: &str, excitation: Excitation, lo: f64, hi: f64, dur: (f64, f64), rms: f64) -> PhoneTemplate {
    PhoneTemplate {
        name: name.to_string(),
        excitation,
        band_hz: (lo, hi),
        duration_s: dur,
        rms,
    }
}

/// The default 8 kHz inventory: ten phones plus silence, and a lexicon for the
/// desk grammar (see `decoder::DESK_GRAMMAR`).
pub fn desk_phone_table() -> PhoneTable {
    use Excitation::*;
    let voiced = (0.05, 0.11);
    let unvoiced = (0.05, 0.10);
    let phones = vec![
        tpl(SILENCE, Silence, 0.0, 0.0, (0.08, 0.16), 0.0),
        tpl("uw", Harmonic, 150.0, 420.0, voiced, 0.3),
        tpl("ow", Harmonic, 420.0, 720.0, voiced, 0.3),
        tpl("aa", Harmonic, 720.0, 1100.0, voiced, 0.3),
        tpl("eh", Harmonic, 1100.0, 1600.0, voiced, 0.25),
        tpl("iy", Harmonic, 1600.0, 2200.0, voiced, 0.25),
        tpl("hh", Noise, 500.0, 1000.0, unvoiced, 0.12),
        tpl("th", Noise, 1300.0, 2000.0, unvoiced, 0.12),
        tpl("f", Noise, 2200.0, 2700.0, unvoiced, 0.15),
        tpl("s", Noise, 2700.0, 3250.0, unvoiced, 0.15),
        tpl("sh", Noise, 3250.0, 3750.0, unvoiced, 0.15),
    ];
    let entries: &[(&str, &[&str])] = &[
        (SILENCE, &[SILENCE]),
        ("bin", &["hh", "iy", "s"]),
        ("lay", &["th", "aa"]),
        ("place", &["f", "ow", "s"]),
        ("set", &["sh", "eh", "th"]),
        ("blue", &["uw", "f"]),
        ("green", &["s", "iy", "uw"]),
        ("red", &["eh", "sh"]),
        ("white", &["hh", "aa", "th"]),
        ("at", &["aa", "f"]),
        ("by", &["uw", "iy"]),
        ("a", &["ow", "iy"]),
        ("b", &["f", "uw"]),
        ("c", &["s", "aa"]),
        ("d", &["th", "ow"]),
        ("e", &["iy", "sh"]),
        ("f", &["eh", "hh"]),
        ("one", &["uw", "aa", "s"]),
        ("two", &["f", "ow"]),
        ("three", &["sh", "iy"]),
        ("four", &["hh", "ow", "th"]),
        ("five", &["aa", "uw", "f"]),
        ("again", &["ow", "eh"]),
        ("now", &["s", "uw"]),
    ];
    let lexicon = entries
        .iter()
        .map(|(w, ps)| (w.to_string(), ps.iter().map(|p| p.to_string()).collect()))
        .collect();
    PhoneTable {
        sample_rate: super::DEFAULT_SAMPLE_RATE,
        phones,
        lexicon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn speaker(shift: f64) -> SpeakerProfile {
        SpeakerProfile {
            id: "s0".into(),
            spectral_shift: shift,
            pitch_hz: 130.0,
            level_db: 0.0,
        }
    }

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn synthesis_is_seed_deterministic() {
        let table = desk_phone_table();
        let ws = words(&["sil", "bin", "white", "sil"]);
        let a = synth_utterance(&ws, &table, &speaker(0.03), 11).unwrap();
        let b = synth_utterance(&ws, &table, &speaker(0.03), 11).unwrap();
        assert_eq!(a.waveform, b.waveform);
        assert_eq!(a.segments, b.segments);
        let c = synth_utterance(&ws, &table, &speaker(0.03), 12).unwrap();
        assert_ne!(a.waveform, c.waveform);
        assert_eq!(a.segments.last().unwrap().end, a.waveform.len());
    }

    #[test]
    fn errors() {
        let table = desk_phone_table();
        assert!(matches!(
            synth_utterance(&[], &table, &speaker(0.0), 1),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            synth_utterance(&words(&["zebra"]), &table, &speaker(0.0), 1),
            Err(Error::Lexicon(_))
        ));
    }

    #[test]
    fn silence_is_near_zero_energy() {
        let table = desk_phone_table();
        let sil = synth_utterance(&words(&["sil"]), &table, &speaker(0.0), 5).unwrap();
        let per_sample = |w: &Waveform| w.energy() / w.len() as f64;
        for word in ["a", "two", "set"] {
            let voiced = synth_utterance(&words(&[word]), &table, &speaker(0.0), 5).unwrap();
            let ratio = per_sample(&sil.waveform) / per_sample(&voiced.waveform);
            assert!(ratio < 1e-4, "{word}: {ratio}");
        }
    }

    #[test]
    fn phone_energy_concentrates_in_band() {
        let table = desk_phone_table();
        let spk = speaker(-0.05);
        let mut planner = FftPlanner::<f64>::new();
        for p in table.phones.iter().filter(|p| p.excitation != Excitation::Silence) {
            // a word made of a single phone
            let mut t = table.clone();
            t.lexicon.insert("x".into(), vec![p.name.clone()]);
            let utt = synth_utterance(&words(&["x"]), &t, &spk, 9).unwrap();
            let x = utt.waveform.samples();
            let n = x.len();
            let fft = planner.plan_fft_forward(n);
            let mut buf: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s, 0.0)).collect();
            fft.process(&mut buf);
            let (lo, hi) = t.shifted_band(p, &spk);
            let sr = t.sample_rate as f64;
            let mut inside = 0.0;
            let mut total = 0.0;
            for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
                let f = k as f64 * sr / n as f64;
                let e = c.norm_sqr();
                total += e;
                if f >= lo - 60.0 && f <= hi + 60.0 {
                    inside += e;
                }
            }
            assert!(inside / total > 0.95, "{}: {}", p.name, inside / total);
        }
    }

    #[test]
    fn lexicon_covers_phones() {
        let table = desk_phone_table();
        for (w, ps) in &table.lexicon {
            for p in ps {
                assert!(table.phone(p).is_some(), "{w} uses {p}");
            }
        }
        assert_eq!(table.phones.len(), 11);
    }
}
