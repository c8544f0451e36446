//! Net file and training-log CSV.
//!
//! Net file: a text header
//! ```text
//! FHMM-DNN v1
//! input <n_mel> <context> <n_speakers>
//! layers <d0> <d1> ... <dL>
//! joint <|sᵃ|> <|sᵇ|>
//! stage <generative|init|finetune>
//! end
//! ```
//! then little-endian f64 blocks: standardization mean and scale, and per
//! layer the weights (row-major, inputs × outputs) followed by the bias.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{EpochLog, JointPosteriorNet, Layer, Stage};
use crate::error::{Error, Result};
use crate::features::{DnnInputSpec, Standardization};

const MAGIC: &str = "FHMM-DNN v1";

fn put(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_net(path: &Path, net: &JointPosteriorNet) -> Result<()> {
    net.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    let s = &net.input_spec;
    writeln!(w, "input {} {} {}", s.n_mel, s.context, s.n_speakers)?;
    let mut dims = vec![net.layers[0].n_in()];
    dims.extend(net.layers.iter().map(Layer::n_out));
    let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "layers {}", dims.join(" "))?;
    writeln!(w, "joint {} {}", net.joint_shape.0, net.joint_shape.1)?;
    writeln!(w, "stage {}", net.stage.as_str())?;
    writeln!(w, "end")?;
    put(&mut w, net.standardization.mean.iter().copied())?;
    put(&mut w, net.standardization.scale.iter().copied())?;
    for l in &net.layers {
        put(&mut w, l.weights.iter().copied())?;
        put(&mut w, l.bias.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

fn header_line(r: &mut impl BufRead, key: &str) -> Result<Vec<String>> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Format(format!("expected `{key}` line, got `{}`", line.trim_end())));
    }
    Ok(parts.map(str::to_string).collect())
}

fn numbers(parts: &[String], key: &str) -> Result<Vec<usize>> {
    parts
        .iter()
        .map(|p| p.parse().map_err(|_| Error::Format(format!("bad number `{p}` in `{key}` line"))))
        .collect()
}

fn take(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated weight block".into()))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn read_net(path: &Path) -> Result<JointPosteriorNet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = String::new();
    r.read_line(&mut magic)?;
    if magic.trim_end() != MAGIC {
        return Err(Error::Format(format!("not a network file (header `{}`)", magic.trim_end())));
    }
    let input = numbers(&header_line(&mut r, "input")?, "input")?;
    let [n_mel, context, n_speakers] = input[..] else {
        return Err(Error::Format("`input` needs three numbers".into()));
    };
    let dims = numbers(&header_line(&mut r, "layers")?, "layers")?;
    if dims.len() < 2 {
        return Err(Error::Format("`layers` needs at least two sizes".into()));
    }
    let joint = numbers(&header_line(&mut r, "joint")?, "joint")?;
    let [ja, jb] = joint[..] else {
        return Err(Error::Format("`joint` needs two numbers".into()));
    };
    let stage = header_line(&mut r, "stage")?;
    let stage = stage
        .first()
        .and_then(|s| Stage::parse(s))
        .ok_or_else(|| Error::Format("unknown training stage".into()))?;
    header_line(&mut r, "end")?;
    let input_spec = DnnInputSpec {
        n_mel,
        context,
        n_speakers,
    };
    let cd = input_spec.continuous_dim();
    let standardization = Standardization {
        mean: take(&mut r, cd)?,
        scale: take(&mut r, cd)?,
    };
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let weights = Array2::from_shape_vec((w[0], w[1]), take(&mut r, w[0] * w[1])?).expect("sized block");
        let bias = Array1::from(take(&mut r, w[1])?);
        layers.push(Layer { weights, bias });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    let net = JointPosteriorNet {
        layers,
        joint_shape: (ja, jb),
        input_spec,
        standardization,
        stage,
    };
    net.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(net)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct LogRow {
    phase: String,
    epoch: usize,
    loss: f64,
    held_out: Option<f64>,
}

/// CSV with columns `phase,epoch,loss,held_out` (empty when there is no held-out set).
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for e in log {
        w.serialize(LogRow {
            phase: e.phase.as_str().to_string(),
            epoch: e.epoch,
            loss: e.loss,
            held_out: e.held_out,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize::<LogRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Format(e.to_string()))?;
            Ok(EpochLog {
                phase: Stage::parse(&row.phase).ok_or_else(|| Error::Format(format!("unknown phase `{}`", row.phase)))?,
                epoch: row.epoch,
                loss: row.loss,
                held_out: row.held_out,
            })
        })
        .collect()
}
