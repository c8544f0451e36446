//! Feature archive: a magic line, then per utterance a text header line
//! `id kind T D frame_shift_s` followed by T·D little-endian f64 values, row-major.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{FeatureKind, FeatureSequence};
use crate::error::{Error, Result};

const MAGIC: &str = "FHMM-FEATURES v1";

pub fn write_archive(path: &Path, items: &[(String, FeatureSequence)]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    for (id, fs) in items {
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::Argument(format!("invalid utterance id `{id}`")));
        }
        writeln!(
            w,
            "{} {} {} {} {:e}",
            id,
            fs.kind().as_str(),
            fs.len(),
            fs.dim(),
            fs.frame_shift_s()
        )?;
        for v in fs.frames().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, FeatureSequence)>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let mut out = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            break;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!("bad header line `{}`", line.trim_end())));
        }
        let kind = FeatureKind::parse(fields[1])
            .ok_or_else(|| Error::Format(format!("unknown kind `{}`", fields[1])))?;
        let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(e.to_string()));
        let (t, d) = (parse(fields[2])?, parse(fields[3])?);
        let shift: f64 = fields[4].parse().map_err(|_| Error::Format("bad frame shift".into()))?;
        let mut bytes = vec![0u8; t * d * 8];
        r.read_exact(&mut bytes)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let frames = Array2::from_shape_vec((t, d), data).map_err(|e| Error::Format(e.to_string()))?;
        out.push((fields[0].to_string(), FeatureSequence::new(frames, kind, shift)));
    }
    Ok(out)
}
