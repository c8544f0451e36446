//! Synthetic speakers, utterances and stereo-aligned mixtures.
//!
//! The manifest is pure metadata; audio is synthesized on demand from the
//! per-utterance seeds, so the same config always yields the same corpus.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::decoder::{parse_grammar, Grammar, Token, DESK_GRAMMAR, TARGET_COLOR};
use crate::error::{Error, Result};
use crate::signal::{desk_phone_table, Gender, PhoneTable, SpeakerProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SameTalker,
    SameGender,
    DifferentGender,
    Overall,
}

impl Condition {
    pub const PARTITION: [Condition; 3] = [Condition::SameTalker, Condition::SameGender, Condition::DifferentGender];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::SameTalker => "same_talker",
            Condition::SameGender => "same_gender",
            Condition::DifferentGender => "different_gender",
            Condition::Overall => "overall",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Condition::SameTalker, Condition::SameGender, Condition::DifferentGender, Condition::Overall]
            .into_iter()
            .find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub id: String,
    pub speaker: usize,
    pub words: Vec<String>,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub id: String,
    /// Utterance indices.
    pub target: usize,
    pub masker: usize,
    pub tmr_db: f64,
    pub condition: Condition,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub speakers: Vec<SpeakerProfile>,
    pub utterances: Vec<UtteranceEntry>,
    pub train_mixtures: Vec<MixtureEntry>,
    pub test_mixtures: Vec<MixtureEntry>,
    pub grammar: Grammar,
    pub phone_table: PhoneTable,
}

pub fn load_grammar(cfg: &ExperimentConfig) -> Result<Grammar> {
    match cfg.grammar_path() {
        None => parse_grammar(DESK_GRAMMAR),
        Some(p) => parse_grammar(&std::fs::read_to_string(p)?),
    }
}

/// Speakers alternate between the two synthetic genders.
fn make_speakers(n: usize, rng: &mut ChaCha8Rng) -> Vec<SpeakerProfile> {
    (0..n)
        .map(|i| {
            let high = i % 2 == 1;
            let mag = rng.gen_range(0.03..0.15);
            SpeakerProfile {
                id: format!("spk{i}"),
                spectral_shift: if high { mag } else { -mag },
                pitch_hz: if high { rng.gen_range(180.0..240.0) } else { rng.gen_range(95.0..140.0) },
                level_db: rng.gen_range(-3.0..3.0),
            }
        })
        .collect()
}

/// One sentence, with the color slot drawn from `colors`.
fn sample_sentence(g: &Grammar, colors: &[String], rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    g.sentence
        .iter()
        .map(|t| match t {
            Token::Word(w) => Ok(w.clone()),
            Token::Var(v) if v == "color" => Ok(colors.choose(rng).expect("non-empty colors").clone()),
            Token::Var(v) => Ok(g.expand(v)?.choose(rng).expect("non-empty slot").clone()),
        })
        .collect()
}

impl Corpus {
    pub fn gender(&self, utt: usize) -> Gender {
        self.speakers[self.utterances[utt].speaker].gender()
    }

    pub fn condition_of(&self, target: usize, masker: usize) -> Condition {
        let (sa, sb) = (self.utterances[target].speaker, self.utterances[masker].speaker);
        if sa == sb {
            Condition::SameTalker
        } else if self.speakers[sa].gender() == self.speakers[sb].gender() {
            Condition::SameGender
        } else {
            Condition::DifferentGender
        }
    }

    pub fn speaker_pair(&self, m: &MixtureEntry) -> (usize, usize) {
        (self.utterances[m.target].speaker, self.utterances[m.masker].speaker)
    }

    pub fn utterances_of(&self, speaker: usize, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.utterances
            .iter()
            .enumerate()
            .filter(move |(_, u)| u.speaker == speaker && u.split == split)
            .map(|(i, _)| i)
    }

    /// Writes `utterances.csv` and `mixtures.csv` into `dir`.
    pub fn write_manifest(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let mut w = csv::Writer::from_path(dir.join("utterances.csv")).map_err(fmt)?;
        w.write_record(["id", "speaker", "gender", "split", "seed", "words"]).map_err(fmt)?;
        for u in &self.utterances {
            let sp = &self.speakers[u.speaker];
            w.write_record([
                u.id.clone(),
                sp.id.clone(),
                format!("{:?}", sp.gender()).to_lowercase(),
                format!("{:?}", u.split).to_lowercase(),
                u.seed.to_string(),
                u.words.join(" "),
            ])
            .map_err(fmt)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("mixtures.csv")).map_err(fmt)?;
        w.write_record(["id", "split", "target", "masker", "tmr_db", "condition"]).map_err(fmt)?;
        for m in self.train_mixtures.iter().chain(&self.test_mixtures) {
            w.write_record([
                m.id.clone(),
                format!("{:?}", m.split).to_lowercase(),
                self.utterances[m.target].id.clone(),
                self.utterances[m.masker].id.clone(),
                format!("{}", m.tmr_db),
                m.condition.as_str().to_string(),
            ])
            .map_err(fmt)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the corpus manifest for `cfg`.
///
/// Each speaker's test utterances are half white-color (targets) and half
/// other colors (maskers). Test mixtures cycle through the three conditions.
pub fn build_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    cfg.validate()?;
    let grammar = load_grammar(cfg)?;
    let phone_table = desk_phone_table();
    for (_, words) in grammar.slots()? {
        for w in words {
            phone_table.pronunciation(&w)?;
        }
    }
    let colors = grammar.expand("color")?;
    if !colors.iter().any(|c| c == TARGET_COLOR) {
        return Err(Error::Argument(format!("grammar has no `{TARGET_COLOR}` color")));
    }
    let white = vec![TARGET_COLOR.to_string()];
    let others: Vec<String> = colors.iter().filter(|c| *c != TARGET_COLOR).cloned().collect();
    if others.is_empty() {
        return Err(Error::Argument("grammar needs a color other than the target color".into()));
    }
    if grammar.slot_index("letter").is_none() || grammar.slot_index("number").is_none() {
        return Err(Error::Argument("grammar needs `letter` and `number` slots".into()));
    }

    let c = &cfg.corpus;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let speakers = make_speakers(c.n_speakers, &mut rng);
    let n_train = c.utterances_per_speaker - c.test_per_speaker;
    let mut utterances = Vec::with_capacity(c.n_speakers * c.utterances_per_speaker);
    for s in 0..c.n_speakers {
        for k in 0..c.utterances_per_speaker {
            let (split, pool) = if k < n_train {
                (Split::Train, &colors)
            } else if (k - n_train) % 2 == 0 {
                (Split::Test, &white)
            } else {
                (Split::Test, &others)
            };
            utterances.push(UtteranceEntry {
                id: format!("spk{s}_u{k:03}"),
                speaker: s,
                words: sample_sentence(&grammar, pool, &mut rng)?,
                split,
                seed: rng.gen(),
            });
        }
    }
    let mut corpus = Corpus {
        speakers,
        utterances,
        train_mixtures: Vec::new(),
        test_mixtures: Vec::new(),
        grammar,
        phone_table,
    };

    let train_of: Vec<Vec<usize>> = (0..c.n_speakers).map(|s| corpus.utterances_of(s, Split::Train).collect()).collect();
    let mut train_mixtures = Vec::with_capacity(c.train_mixtures);
    for k in 0..c.train_mixtures {
        // cycle through ordered speaker pairs so every pair gets data
        let pair = k % (c.n_speakers * c.n_speakers);
        let (sa, sb) = (pair / c.n_speakers, pair % c.n_speakers);
        let target = *train_of[sa].choose(&mut rng).expect("training utterances");
        let masker = loop {
            let m = *train_of[sb].choose(&mut rng).expect("training utterances");
            if m != target {
                break m;
            }
        };
        // drawn either way so the test set does not depend on the training mode
        let drawn = *cfg.experiment.tmr_set.choose(&mut rng).expect("non-empty tmr set");
        let tmr_db = if cfg.experiment.multi_gain_training { drawn } else { 0.0 };
        train_mixtures.push(MixtureEntry {
            id: format!("train{k:05}"),
            target,
            masker,
            tmr_db,
            condition: corpus.condition_of(target, masker),
            split: Split::Train,
        });
    }

    let test_white: Vec<Vec<usize>> = (0..c.n_speakers)
        .map(|s| {
            corpus
                .utterances_of(s, Split::Test)
                .filter(|&u| corpus.utterances[u].words.iter().any(|w| w == TARGET_COLOR))
                .collect()
        })
        .collect();
    let test_other: Vec<Vec<usize>> = (0..c.n_speakers)
        .map(|s| {
            corpus
                .utterances_of(s, Split::Test)
                .filter(|&u| !corpus.utterances[u].words.iter().any(|w| w == TARGET_COLOR))
                .collect()
        })
        .collect();
    let mut test_mixtures = Vec::new();
    for &tmr in &cfg.experiment.tmr_set {
        for k in 0..c.test_mixtures_per_tmr {
            let condition = Condition::PARTITION[k % 3];
            let sa = rng.gen_range(0..c.n_speakers);
            let sb = match condition {
                Condition::SameTalker => sa,
                _ => {
                    let want_same = condition == Condition::SameGender;
                    let cands: Vec<usize> = (0..c.n_speakers)
                        .filter(|&s| s != sa && (corpus.speakers[s].gender() == corpus.speakers[sa].gender()) == want_same)
                        .collect();
                    *cands.choose(&mut rng).ok_or_else(|| {
                        Error::Argument(format!("no speaker for a {} mixture", condition.as_str()))
                    })?
                }
            };
            let target = *test_white[sa].choose(&mut rng).expect("white test utterances");
            let masker = *test_other[sb].choose(&mut rng).expect("non-white test utterances");
            test_mixtures.push(MixtureEntry {
                id: format!("test_{tmr:+}db_{k:04}"),
                target,
                masker,
                tmr_db: tmr,
                condition,
                split: Split::Test,
            });
        }
    }
    corpus.train_mixtures = train_mixtures;
    corpus.test_mixtures = test_mixtures;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_manifest_counts_and_constraints() {
        let cfg = ExperimentConfig::desk();
        let c = build_corpus(&cfg).unwrap();
        assert_eq!(c.speakers.len(), 8);
        assert_eq!(c.utterances.len(), 8 * 60);
        assert_eq!(c.utterances.iter().filter(|u| u.split == Split::Test).count(), 8 * 12);
        assert_eq!(c.train_mixtures.len(), 1000);
        assert_eq!(c.test_mixtures.len(), 6 * 24);
        let color = c.grammar.slot_index("color").unwrap();
        for m in &c.test_mixtures {
            assert_eq!(c.utterances[m.target].words[color], TARGET_COLOR);
            assert_ne!(c.utterances[m.masker].words[color], TARGET_COLOR);
            assert_eq!(m.condition, c.condition_of(m.target, m.masker));
        }
        for tmr in cfg.experiment.tmr_set {
            assert_eq!(c.test_mixtures.iter().filter(|m| m.tmr_db == tmr).count(), 24);
        }
        let genders: Vec<Gender> = c.speakers.iter().map(SpeakerProfile::gender).collect();
        assert_eq!(genders.iter().filter(|g| **g == Gender::Low).count(), 4);
    }

    #[test]
    fn manifest_is_deterministic_and_seed_dependent() {
        let cfg = ExperimentConfig::desk();
        assert_eq!(build_corpus(&cfg).unwrap(), build_corpus(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(build_corpus(&cfg).unwrap().utterances, build_corpus(&other).unwrap().utterances);
    }

    #[test]
    fn manifest_files_have_one_row_per_entry() {
        let mut cfg = ExperimentConfig::desk();
        cfg.corpus.train_mixtures = 10;
        let c = build_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.write_manifest(dir.path()).unwrap();
        let utt = std::fs::read_to_string(dir.path().join("utterances.csv")).unwrap();
        assert_eq!(utt.lines().count(), 1 + 480);
        let mix = std::fs::read_to_string(dir.path().join("mixtures.csv")).unwrap();
        assert_eq!(mix.lines().count(), 1 + 10 + 144);
    }
}
