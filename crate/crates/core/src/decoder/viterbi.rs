//! Exact Viterbi search over the product of two chains' wordnet positions.

use super::grammar::Wordnet;
use crate::error::{Error, Result};
use crate::jointlik::JointStateTensor;

/// State labels and self-loop probabilities of one chain's HMM set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTopology {
    pub labels: Vec<String>,
    pub self_loop: Vec<f64>,
}

impl ChainTopology {
    /// A single state, used as the silent partner of a one-chain decode.
    pub fn single(label: &str, self_loop: f64) -> Self {
        Self {
            labels: vec![label.to_string()],
            self_loop: vec![self_loop],
        }
    }

    fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Argument(format!("phone `{label}` has no model state")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecodeConfig {
    /// Live product states kept per frame; `None` is a full search.
    pub beam: Option<usize>,
    /// Weight on the word-arc log probabilities.
    pub lm_scale: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: None,
            lm_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub words_a: Vec<String>,
    pub words_b: Vec<String>,
    pub log_score: f64,
    /// Per frame `(sᵃ, sᵇ)`.
    pub frame_state_path: Vec<(usize, usize)>,
}

/// A chain's search space: one position per (word node, phone index).
#[derive(Debug, Clone)]
pub(crate) struct ChainGraph {
    /// (node, phone index) per position
    pub pos: Vec<(usize, usize)>,
    pub state: Vec<usize>,
    /// Incoming arcs per position: (from, log prob).
    pub incoming: Vec<Vec<(usize, f64)>>,
    pub entry: Vec<f64>,
    pub is_final: Vec<bool>,
}

impl ChainGraph {
    pub fn build(net: &Wordnet, topo: &ChainTopology, lm_scale: f64) -> Result<Self> {
        let mut first = vec![0usize; net.nodes.len()];
        let mut g = ChainGraph {
            pos: Vec::new(),
            state: Vec::new(),
            incoming: Vec::new(),
            entry: Vec::new(),
            is_final: Vec::new(),
        };
        for (n, node) in net.nodes.iter().enumerate() {
            if node.phones.is_empty() {
                return Err(Error::Argument(format!("word `{}` has no phones", node.word)));
            }
            first[n] = g.pos.len();
            for (k, ph) in node.phones.iter().enumerate() {
                g.pos.push((n, k));
                g.state.push(topo.index(ph)?);
                g.incoming.push(Vec::new());
                g.entry.push(f64::NEG_INFINITY);
                g.is_final.push(k + 1 == node.phones.len() && net.is_end(n));
            }
        }
        let n_start = net.starts().len() as f64;
        for &s in net.starts() {
            g.entry[first[s]] = lm_scale * (1.0 / n_start).ln();
        }
        for (p, &(n, k)) in g.pos.clone().iter().enumerate() {
            let a = topo.self_loop[g.state[p]];
            g.incoming[p].push((p, a.ln()));
            let len = net.nodes[n].phones.len();
            if k + 1 < len {
                g.incoming[p + 1].push((p, (1.0 - a).ln()));
            } else {
                let succ = net.successors(n);
                let arc = lm_scale * (1.0 / succ.len().max(1) as f64).ln();
                for &m in succ {
                    g.incoming[first[m]].push((p, (1.0 - a).ln() + arc));
                }
            }
        }
        // predecessors in ascending order, so ties resolve to the smallest
        for inc in &mut g.incoming {
            inc.sort_by_key(|&(q, _)| q);
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    /// Word sequence of a position path.
    pub fn words(&self, net: &Wordnet, path: &[usize]) -> Vec<String> {
        let mut out = Vec::new();
        for (i, &p) in path.iter().enumerate() {
            let (n, k) = self.pos[p];
            // a word starts on entering phone 0 of a node
            if i == 0 || (k == 0 && path[i - 1] != p) {
                out.push(net.nodes[n].word.clone());
            }
        }
        out
    }
}

/// Joint Viterbi over `net_a × net_b` scored by the tensor.
pub fn joint_decode(
    tensor: &JointStateTensor,
    net_a: &Wordnet,
    net_b: &Wordnet,
    topo: (&ChainTopology, &ChainTopology),
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    let (t_len, sa, sb) = tensor.shape();
    if sa != topo.0.labels.len() || sb != topo.1.labels.len() {
        return Err(Error::Argument(format!(
            "tensor has {sa}×{sb} joint states, models have {}×{}",
            topo.0.labels.len(),
            topo.1.labels.len()
        )));
    }
    if t_len == 0 {
        return Err(Error::EmptySequence("tensor has no frames".into()));
    }
    if cfg.beam == Some(0) {
        return Err(Error::Argument("beam width must be positive".into()));
    }
    let ga = ChainGraph::build(net_a, topo.0, cfg.lm_scale)?;
    let gb = ChainGraph::build(net_b, topo.1, cfg.lm_scale)?;
    let (pa, pb) = (ga.len(), gb.len());
    let n = pa * pb;
    if n > u32::MAX as usize {
        return Err(Error::Argument("product space too large".into()));
    }

    let emit = |t: usize, i: usize, j: usize| tensor.log_score(t, ga.state[i], gb.state[j]);

    let mut delta = vec![f64::NEG_INFINITY; n];
    for i in 0..pa {
        if ga.entry[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in 0..pb {
            if gb.entry[j] > f64::NEG_INFINITY {
                delta[i * pb + j] = ga.entry[i] + gb.entry[j] + emit(0, i, j);
            }
        }
    }
    prune(&mut delta, cfg.beam);

    let mut back = vec![0u32; (t_len - 1) * n];
    // stage one: best chain-a predecessor for each (position a, previous position b)
    let mut stage = vec![f64::NEG_INFINITY; n];
    let mut stage_arg = vec![0u32; n];
    let mut next = vec![f64::NEG_INFINITY; n];
    for t in 1..t_len {
        for i in 0..pa {
            for qb in 0..pb {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0usize;
                for &(qa, lp) in &ga.incoming[i] {
                    let v = delta[qa * pb + qb] + lp;
                    if v > best {
                        best = v;
                        arg = qa;
                    }
                }
                stage[i * pb + qb] = best;
                stage_arg[i * pb + qb] = arg as u32;
            }
        }
        let bp = &mut back[(t - 1) * n..t * n];
        for i in 0..pa {
            for j in 0..pb {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0usize;
                for &(qb, lp) in &gb.incoming[j] {
                    let v = stage[i * pb + qb] + lp;
                    if v > best {
                        best = v;
                        arg = stage_arg[i * pb + qb] as usize * pb + qb;
                    }
                }
                let idx = i * pb + j;
                if best > f64::NEG_INFINITY {
                    next[idx] = best + emit(t, i, j);
                    bp[idx] = arg as u32;
                } else {
                    next[idx] = f64::NEG_INFINITY;
                }
            }
        }
        prune(&mut next, cfg.beam);
        std::mem::swap(&mut delta, &mut next);
    }

    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for i in 0..pa {
        if !ga.is_final[i] {
            continue;
        }
        for j in 0..pb {
            let v = delta[i * pb + j];
            if gb.is_final[j] && v > best {
                best = v;
                arg = Some(i * pb + j);
            }
        }
    }
    let Some(mut cur) = arg else {
        return Err(Error::DecodeFailure(match cfg.beam {
            Some(b) => format!("no complete joint path survived a beam of {b}"),
            None => "no complete joint path".into(),
        }));
    };
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = cur;
    for t in (1..t_len).rev() {
        cur = back[(t - 1) * n + cur] as usize;
        path[t - 1] = cur;
    }
    let path_a: Vec<usize> = path.iter().map(|p| p / pb).collect();
    let path_b: Vec<usize> = path.iter().map(|p| p % pb).collect();
    Ok(DecodeResult {
        words_a: ga.words(net_a, &path_a),
        words_b: gb.words(net_b, &path_b),
        log_score: best,
        frame_state_path: path_a
            .iter()
            .zip(&path_b)
            .map(|(&i, &j)| (ga.state[i], gb.state[j]))
            .collect(),
    })
}

/// Histogram pruning: keep the `beam` best entries (lower index wins ties).
fn prune(scores: &mut [f64], beam: Option<usize>) {
    let Some(beam) = beam else { return };
    let live = scores.iter().filter(|v| **v > f64::NEG_INFINITY).count();
    if live <= beam {
        return;
    }
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > f64::NEG_INFINITY).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    for &i in &idx[beam..] {
        scores[i] = f64::NEG_INFINITY;
    }
}

/// Viterbi over one chain: a joint decode against a one-state silent partner.
pub fn single_chain_decode(
    log_likelihoods: &JointStateTensor,
    net: &Wordnet,
    topo: &ChainTopology,
    cfg: &DecodeConfig,
) -> Result<DecodeResult> {
    let partner = ChainTopology::single("sil", 0.5);
    let partner_net = Wordnet::single("sil", &["sil".to_string()]);
    joint_decode(log_likelihoods, net, &partner_net, (topo, &partner), cfg)
}
