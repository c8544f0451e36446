//! Grammars, wordnets, joint Viterbi decoding and task scoring.

mod grammar;
pub mod oracle;
mod viterbi;

pub use grammar::{
    build_wordnet, parse_grammar, parse_lexicon, Grammar, Lexicon, Token, WordNode, Wordnet,
};
pub use viterbi::{joint_decode, single_chain_decode, ChainTopology, DecodeConfig, DecodeResult};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Six-slot desk grammar: 4 commands, 4 colors, 2 prepositions, 6 letters,
/// 5 numbers, 2 adverbs, framed by silence.
pub const DESK_GRAMMAR: &str = include_str!("../../data/desk.grammar");

/// The full-size masker grammar (no `white` in the color slot, no `w` letter).
pub const MASKER_GRAMMAR: &str = include_str!("../../data/masker.grammar");

pub const TARGET_COLOR: &str = "white";

/// Slot overrides for the target chain (`color = {white}`).
pub fn target_overrides() -> BTreeMap<String, Vec<String>> {
    BTreeMap::from([("color".to_string(), vec![TARGET_COLOR.to_string()])])
}

/// Slot overrides for the masker chain: every grammar color except `white`.
pub fn masker_overrides(g: &Grammar) -> Result<BTreeMap<String, Vec<String>>> {
    let colors: Vec<String> = g
        .expand("color")?
        .into_iter()
        .filter(|c| c != TARGET_COLOR)
        .collect();
    Ok(BTreeMap::from([("color".to_string(), colors)]))
}

/// Letter/number slot accuracies in percent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TaskScore {
    pub letter_acc: f64,
    pub number_acc: f64,
    pub combined_acc: f64,
    pub both_acc: f64,
    pub n: usize,
}

/// Scores the target chain's words against references at the given slot positions.
pub fn score_task(
    results: &[DecodeResult],
    truth: &[Vec<String>],
    letter_slot: usize,
    number_slot: usize,
) -> Result<TaskScore> {
    if results.len() != truth.len() {
        return Err(Error::Argument("one reference per result".into()));
    }
    let (mut l, mut n, mut both) = (0usize, 0usize, 0usize);
    for (r, t) in results.iter().zip(truth) {
        for w in [&r.words_a, t] {
            if letter_slot >= w.len() || number_slot >= w.len() {
                return Err(Error::Argument(format!(
                    "slot {} out of range for a {}-word sentence",
                    letter_slot.max(number_slot),
                    w.len()
                )));
            }
        }
        let lo = r.words_a[letter_slot] == t[letter_slot];
        let no = r.words_a[number_slot] == t[number_slot];
        l += usize::from(lo);
        n += usize::from(no);
        both += usize::from(lo && no);
    }
    let total = results.len().max(1) as f64;
    let letter_acc = 100.0 * l as f64 / total;
    let number_acc = 100.0 * n as f64 / total;
    Ok(TaskScore {
        letter_acc,
        number_acc,
        combined_acc: 0.5 * (letter_acc + number_acc),
        both_acc: 100.0 * both as f64 / total,
        n: results.len(),
    })
}

/// Expected combined accuracy of uniform guessing over the letter and number slots.
pub fn chance_level(g: &Grammar) -> Result<f64> {
    let nl = g.expand("letter")?.len() as f64;
    let nn = g.expand("number")?.len() as f64;
    Ok(100.0 * 0.5 * (1.0 / nl + 1.0 / nn))
}
