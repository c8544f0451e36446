//! Grammar files in a small HParse subset (variables, alternation, one
//! bracketed sentence) and the layered wordnets compiled from them.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Word(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    /// Definition order is kept.
    pub variables: Vec<(String, Vec<Token>)>,
    pub sentence: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq)]
enum Lex {
    Var(String),
    Word(String),
    Eq,
    Bar,
    Semi,
    Open,
    Close,
}

fn lex(text: &str) -> Result<Vec<(Lex, usize, usize)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let pos = (ln + 1, col);
            match c {
                _ if c.is_whitespace() => {
                    i += 1;
                    continue;
                }
                '=' => out.push((Lex::Eq, pos.0, pos.1)),
                '|' => out.push((Lex::Bar, pos.0, pos.1)),
                ';' => out.push((Lex::Semi, pos.0, pos.1)),
                '(' => out.push((Lex::Open, pos.0, pos.1)),
                ')' => out.push((Lex::Close, pos.0, pos.1)),
                '$' | '_' | '\'' | '-' => {}
                _ if c.is_alphanumeric() => {}
                _ => {
                    return Err(Error::Parse {
                        line: pos.0,
                        column: pos.1,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            }
            if matches!(c, '=' | '|' | ';' | '(' | ')') {
                i += 1;
                continue;
            }
            let is_var = c == '$';
            let start = if is_var { i + 1 } else { i };
            let mut j = start;
            while j < chars.len() && (chars[j].is_alphanumeric() || matches!(chars[j], '_' | '\'' | '-')) {
                j += 1;
            }
            let name: String = chars[start..j].iter().collect();
            if name.is_empty() {
                return Err(Error::Parse {
                    line: pos.0,
                    column: pos.1,
                    message: "empty variable name".into(),
                });
            }
            out.push((if is_var { Lex::Var(name) } else { Lex::Word(name) }, pos.0, pos.1));
            i = j;
        }
    }
    Ok(out)
}

pub fn parse_grammar(text: &str) -> Result<Grammar> {
    let toks = lex(text)?;
    let end_pos = (text.lines().count().max(1), 1);
    let err = |pos: (usize, usize), msg: &str| Error::Parse {
        line: pos.0,
        column: pos.1,
        message: msg.to_string(),
    };
    let mut variables: Vec<(String, Vec<Token>)> = Vec::new();
    let mut sentence = None;
    let mut i = 0;
    let pos_of = |i: usize| toks.get(i).map(|t| (t.1, t.2)).unwrap_or(end_pos);
    while i < toks.len() {
        match &toks[i].0 {
            Lex::Var(name) => {
                if toks.get(i + 1).map(|t| &t.0) != Some(&Lex::Eq) {
                    return Err(err(pos_of(i + 1), "expected `=`"));
                }
                i += 2;
                let mut alts = Vec::new();
                loop {
                    match toks.get(i).map(|t| &t.0) {
                        Some(Lex::Word(w)) => alts.push(Token::Word(w.clone())),
                        Some(Lex::Var(v)) => alts.push(Token::Var(v.clone())),
                        _ => return Err(err(pos_of(i), "expected a word or variable")),
                    }
                    i += 1;
                    match toks.get(i).map(|t| &t.0) {
                        Some(Lex::Bar) => i += 1,
                        Some(Lex::Semi) => {
                            i += 1;
                            break;
                        }
                        _ => return Err(err(pos_of(i), "expected `|` or `;`")),
                    }
                }
                if variables.iter().any(|(n, _)| n == name) {
                    return Err(err(pos_of(i - 1), &format!("variable `${name}` defined twice")));
                }
                variables.push((name.clone(), alts));
            }
            Lex::Open => {
                if sentence.is_some() {
                    return Err(err(pos_of(i), "more than one sentence"));
                }
                i += 1;
                let mut seq = Vec::new();
                loop {
                    match toks.get(i).map(|t| &t.0) {
                        Some(Lex::Word(w)) => seq.push(Token::Word(w.clone())),
                        Some(Lex::Var(v)) => seq.push(Token::Var(v.clone())),
                        Some(Lex::Close) => {
                            i += 1;
                            break;
                        }
                        _ => return Err(err(pos_of(i), "expected a word, variable or `)`")),
                    }
                    i += 1;
                }
                if seq.is_empty() {
                    return Err(err(pos_of(i - 1), "empty sentence"));
                }
                sentence = Some(seq);
            }
            _ => return Err(err(pos_of(i), "expected a variable definition or a sentence")),
        }
    }
    let sentence = sentence.ok_or_else(|| err(end_pos, "no sentence"))?;
    let g = Grammar { variables, sentence };
    for t in &g.sentence {
        if let Token::Var(v) = t {
            g.expand(v)?;
        }
    }
    for (name, _) in &g.variables {
        g.expand(name)?;
    }
    Ok(g)
}

impl Grammar {
    pub fn variable(&self, name: &str) -> Option<&[Token]> {
        self.variables.iter().find(|(n, _)| n == name).map(|(_, a)| a.as_slice())
    }

    /// Words a variable can produce, in definition order without duplicates.
    pub fn expand(&self, name: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        self.expand_into(name, &mut stack, &mut out)?;
        let mut seen = BTreeSet::new();
        out.retain(|w| seen.insert(w.clone()));
        Ok(out)
    }

    fn expand_into(&self, name: &str, stack: &mut Vec<String>, out: &mut Vec<String>) -> Result<()> {
        if stack.iter().any(|s| s == name) {
            return Err(Error::Parse {
                line: 0,
                column: 0,
                message: format!("variable `${name}` is recursive"),
            });
        }
        let alts = self.variable(name).ok_or_else(|| Error::Parse {
            line: 0,
            column: 0,
            message: format!("undefined variable `${name}`"),
        })?;
        stack.push(name.to_string());
        for a in alts {
            match a {
                Token::Word(w) => out.push(w.clone()),
                Token::Var(v) => self.expand_into(v, stack, out)?,
            }
        }
        stack.pop();
        Ok(())
    }

    /// Slot names (variable name or literal word) and their words.
    pub fn slots(&self) -> Result<Vec<(String, Vec<String>)>> {
        self.sentence
            .iter()
            .map(|t| match t {
                Token::Word(w) => Ok((w.clone(), vec![w.clone()])),
                Token::Var(v) => Ok((v.clone(), self.expand(v)?)),
            })
            .collect()
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.sentence.iter().position(|t| matches!(t, Token::Var(v) if v == name))
    }
}

/// Word → phone sequence.
pub type Lexicon = BTreeMap<String, Vec<String>>;

/// Reads a word-per-line lexicon: `word phone phone ...`.
pub fn parse_lexicon(text: &str) -> Result<Lexicon> {
    let mut lex = Lexicon::new();
    for (ln, line) in text.lines().enumerate() {
        let mut f = line.split_whitespace();
        let Some(word) = f.next() else { continue };
        let phones: Vec<String> = f.map(str::to_string).collect();
        if phones.is_empty() {
            return Err(Error::Parse {
                line: ln + 1,
                column: 1,
                message: format!("word `{word}` has no phones"),
            });
        }
        lex.insert(word.to_string(), phones);
    }
    Ok(lex)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordNode {
    pub word: String,
    pub phones: Vec<String>,
    pub layer: usize,
}

/// Layered word DAG: every node of layer `l` connects to every node of layer `l+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wordnet {
    pub nodes: Vec<WordNode>,
    pub layers: Vec<Vec<usize>>,
    pub slot_names: Vec<String>,
}

impl Wordnet {
    pub fn successors(&self, node: usize) -> &[usize] {
        let l = self.nodes[node].layer;
        if l + 1 < self.layers.len() {
            &self.layers[l + 1]
        } else {
            &[]
        }
    }

    pub fn starts(&self) -> &[usize] {
        &self.layers[0]
    }

    pub fn is_end(&self, node: usize) -> bool {
        self.nodes[node].layer + 1 == self.layers.len()
    }

    pub fn path_count(&self) -> u128 {
        self.layers.iter().map(|l| l.len() as u128).product()
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slot_names.iter().position(|s| s == name)
    }

    /// One word, one layer.
    pub fn single(word: &str, phones: &[String]) -> Self {
        Self {
            nodes: vec![WordNode {
                word: word.to_string(),
                phones: phones.to_vec(),
                layer: 0,
            }],
            layers: vec![vec![0]],
            slot_names: vec![word.to_string()],
        }
    }
}

/// Compiles a grammar into a wordnet; `slot_overrides` replaces the word
/// list of the named variables.
pub fn build_wordnet(
    g: &Grammar,
    lexicon: &Lexicon,
    slot_overrides: &BTreeMap<String, Vec<String>>,
) -> Result<Wordnet> {
    for k in slot_overrides.keys() {
        if g.slot_index(k).is_none() {
            return Err(Error::Argument(format!("override for unknown slot `{k}`")));
        }
    }
    let mut net = Wordnet {
        nodes: Vec::new(),
        layers: Vec::new(),
        slot_names: Vec::new(),
    };
    for (layer, (name, words)) in g.slots()?.into_iter().enumerate() {
        let words = slot_overrides.get(&name).cloned().unwrap_or(words);
        if words.is_empty() {
            return Err(Error::Argument(format!("slot `{name}` has no words")));
        }
        let mut ids = Vec::with_capacity(words.len());
        for w in words {
            let phones = lexicon.get(&w).ok_or_else(|| Error::Lexicon(w.clone()))?;
            ids.push(net.nodes.len());
            net.nodes.push(WordNode {
                word: w,
                phones: phones.clone(),
                layer,
            });
        }
        net.layers.push(ids);
        net.slot_names.push(name);
    }
    Ok(net)
}
