//! Model file: a text header (magic, dimensions, phone list with component
//! counts) followed by little-endian f64 blocks per state:
//! self-loop, prior, weights, means (K×D), variances (K×D).

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Gmm, GmmHmmSet};
use crate::error::{Error, Result};

const MAGIC: &str = "FHMM-GMMHMM v1";

pub fn write_model(path: &Path, model: &GmmHmmSet) -> Result<()> {
    model.validate()?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "dim {}", model.dim())?;
    writeln!(w, "n_static {}", model.n_static)?;
    writeln!(w, "states {}", model.n_states())?;
    for (p, g) in model.phones.iter().zip(&model.gmms) {
        writeln!(w, "state {} {}", p, g.n_components())?;
    }
    writeln!(w, "end")?;
    let mut put = |v: f64| w.write_all(&v.to_le_bytes());
    for (s, g) in model.gmms.iter().enumerate() {
        put(model.self_loop[s])?;
        put(model.priors[s])?;
        for v in g.weights.iter().chain(g.means.iter()).chain(g.vars.iter()) {
            put(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Format(format!("expected `{key}`, got `{}`", line.trim_end())));
    }
    it.next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad value in `{}`", line.trim_end())))
}

pub fn read_model(path: &Path) -> Result<GmmHmmSet> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    let mut next = |r: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line)?;
        Ok(line.clone())
    };
    if next(&mut r)?.trim_end() != MAGIC {
        return Err(Error::Format(format!("{}: not a model file", path.display())));
    }
    let dim: usize = field(&next(&mut r)?, "dim")?;
    let n_static: usize = field(&next(&mut r)?, "n_static")?;
    let n: usize = field(&next(&mut r)?, "states")?;
    let mut header = Vec::with_capacity(n);
    for _ in 0..n {
        let l = next(&mut r)?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 || f[0] != "state" {
            return Err(Error::Format(format!("bad state line `{}`", l.trim_end())));
        }
        let k: usize = f[2].parse().map_err(|_| Error::Format("bad component count".into()))?;
        header.push((f[1].to_string(), k));
    }
    if next(&mut r)?.trim_end() != "end" {
        return Err(Error::Format("missing header end".into()));
    }
    let mut take = |count: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let mut model = GmmHmmSet {
        phones: Vec::with_capacity(n),
        gmms: Vec::with_capacity(n),
        self_loop: Vec::with_capacity(n),
        priors: Vec::with_capacity(n),
        n_static,
    };
    for (phone, k) in header {
        let head = take(2)?;
        let weights = take(k)?;
        let shape = |v: Vec<f64>| Array2::from_shape_vec((k, dim), v).map_err(|e| Error::Format(e.to_string()));
        let means = shape(take(k * dim)?)?;
        let vars = shape(take(k * dim)?)?;
        model.phones.push(phone);
        model.self_loop.push(head[0]);
        model.priors.push(head[1]);
        model.gmms.push(Gmm { weights, means, vars });
    }
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::tests::random_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = random_model(&mut rng, 4, 3, 5);
        m.n_static = 2;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gmm");
        write_model(&p, &m).unwrap();
        assert_eq!(read_model(&p).unwrap(), m);
        std::fs::write(&p, "garbage\n").unwrap();
        assert!(matches!(read_model(&p), Err(Error::Format(_))));
    }
}
