//! Exhaustive joint-path enumeration, the reference for small decodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChainTopology, DecodeConfig, Wordnet};
use crate::error::{Error, Result};
use crate::jointlik::JointStateTensor;

/// One complete path of one chain.
#[derive(Debug, Clone)]
pub struct ChainPath {
    pub words: Vec<String>,
    pub states: Vec<usize>,
    pub log_prob: f64,
}

/// Every complete path of `t_len` frames through `net`.
pub fn enumerate_chain_paths(net: &Wordnet, topo: &ChainTopology, t_len: usize, lm_scale: f64) -> Result<Vec<ChainPath>> {
    let state_of = |node: usize, k: usize| -> Result<usize> {
        let ph = &net.nodes[node].phones[k];
        topo.labels
            .iter()
            .position(|l| l == ph)
            .ok_or_else(|| Error::Argument(format!("phone `{ph}` has no model state")))
    };
    let mut out = Vec::new();
    let starts = net.starts();
    for &s in starts {
        let mut words = vec![net.nodes[s].word.clone()];
        let mut states = vec![state_of(s, 0)?];
        let lp = lm_scale * (1.0 / starts.len() as f64).ln();
        walk(net, topo, t_len, lm_scale, s, 0, lp, &mut words, &mut states, &mut out, &state_of)?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    net: &Wordnet,
    topo: &ChainTopology,
    t_len: usize,
    lm_scale: f64,
    node: usize,
    k: usize,
    lp: f64,
    words: &mut Vec<String>,
    states: &mut Vec<usize>,
    out: &mut Vec<ChainPath>,
    state_of: &dyn Fn(usize, usize) -> Result<usize>,
) -> Result<()> {
    let len = net.nodes[node].phones.len();
    if states.len() == t_len {
        if k + 1 == len && net.is_end(node) {
            out.push(ChainPath {
                words: words.clone(),
                states: states.clone(),
                log_prob: lp,
            });
        }
        return Ok(());
    }
    let s = *states.last().expect("non-empty");
    let a = topo.self_loop[s];
    // stay
    states.push(s);
    walk(net, topo, t_len, lm_scale, node, k, lp + a.ln(), words, states, out, state_of)?;
    states.pop();
    if k + 1 < len {
        states.push(state_of(node, k + 1)?);
        walk(net, topo, t_len, lm_scale, node, k + 1, lp + (1.0 - a).ln(), words, states, out, state_of)?;
        states.pop();
    } else {
        let succ = net.successors(node);
        for &m in succ {
            let arc = lm_scale * (1.0 / succ.len() as f64).ln();
            words.push(net.nodes[m].word.clone());
            states.push(state_of(m, 0)?);
            walk(net, topo, t_len, lm_scale, m, 0, lp + (1.0 - a).ln() + arc, words, states, out, state_of)?;
            states.pop();
            words.pop();
        }
    }
    Ok(())
}

/// Best joint path by enumeration: `(words_a, words_b, log score)`.
pub fn brute_force_decode(
    tensor: &JointStateTensor,
    net_a: &Wordnet,
    net_b: &Wordnet,
    topo: (&ChainTopology, &ChainTopology),
    cfg: &DecodeConfig,
) -> Result<(Vec<String>, Vec<String>, f64)> {
    let t_len = tensor.n_frames();
    let pa = enumerate_chain_paths(net_a, topo.0, t_len, cfg.lm_scale)?;
    let pb = enumerate_chain_paths(net_b, topo.1, t_len, cfg.lm_scale)?;
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, a) in pa.iter().enumerate() {
        for (j, b) in pb.iter().enumerate() {
            let mut score = a.log_prob + b.log_prob;
            for t in 0..t_len {
                score += tensor.log_score(t, a.states[t], b.states[t]);
            }
            if best.map_or(true, |(s, _, _)| score > s) {
                best = Some((score, i, j));
            }
        }
    }
    let (score, i, j) = best.ok_or_else(|| Error::DecodeFailure("no complete joint path".into()))?;
    Ok((pa[i].words.clone(), pb[j].words.clone(), score))
}

/// A random two-slot, two-words-per-slot instance with two-phone words.
pub struct ToyInstance {
    pub tensor: JointStateTensor,
    pub net_a: Wordnet,
    pub net_b: Wordnet,
    pub topo_a: ChainTopology,
    pub topo_b: ChainTopology,
}

pub fn toy_instance(seed: u64, t_len: usize) -> ToyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = 3;
    let labels: Vec<String> = (0..n_states).map(|i| format!("p{i}")).collect();
    let topo = |rng: &mut ChaCha8Rng| ChainTopology {
        labels: labels.clone(),
        self_loop: (0..n_states).map(|_| rng.gen_range(0.2..0.9)).collect(),
    };
    let topo_a = topo(&mut rng);
    let topo_b = topo(&mut rng);
    let net = |rng: &mut ChaCha8Rng, tag: &str| {
        let mut nodes = Vec::new();
        let mut layers = Vec::new();
        for layer in 0..2 {
            let mut ids = Vec::new();
            for w in 0..2 {
                ids.push(nodes.len());
                nodes.push(super::WordNode {
                    word: format!("{tag}{layer}{w}"),
                    phones: (0..2).map(|_| labels[rng.gen_range(0..n_states)].clone()).collect(),
                    layer,
                });
            }
            layers.push(ids);
        }
        Wordnet {
            nodes,
            layers,
            slot_names: vec!["s0".into(), "s1".into()],
        }
    };
    let net_a = net(&mut rng, "a");
    let net_b = net(&mut rng, "b");
    let raw: Vec<f64> = (0..t_len * n_states * n_states).map(|_| rng.gen_range(0.01..1.0)).collect();
    let tensor = JointStateTensor::from_unnormalized(t_len, n_states, n_states, raw).expect("positive slices");
    ToyInstance {
        tensor,
        net_a,
        net_b,
        topo_a,
        topo_b,
    }
}
