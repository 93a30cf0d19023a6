//! Binary weight files: magic, format version, spec block, normalization
//! stats, then the flat parameter vector, all little-endian.

use std::path::Path;

use super::network::LstmWeights;
use super::spec::{LstmSpec, NormStats};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SHLSTM\0\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(w: &LstmWeights) -> Vec<u8> {
    let s = &w.spec;
    let mut out = Vec::with_capacity(64 + 8 * (w.params.len() + 2 * s.input_size));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [s.num_layers, s.hidden_size, s.history_len, s.input_size, s.output_size, s.target_lead] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&s.dropout_rate.to_le_bytes());
    for v in w.norm.mean.iter().chain(&w.norm.scale) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(w.params.len() as u64).to_le_bytes());
    for v in &w.params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Reader<'_> {
    fn err(&self, message: String) -> Error {
        // Binary file: report the byte offset in place of a line number.
        Error::Parse {
            path: self.name.to_string(),
            line: self.pos,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err(format!("truncated: need {n} bytes, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("size {v} too large")))
    }
}

pub fn from_bytes(buf: &[u8], name: &str) -> Result<LstmWeights> {
    let mut r = Reader { buf, pos: 0, name };
    if r.take(8)? != MAGIC {
        return Err(r.err("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let num_layers = r.usize()?;
    let hidden_size = r.usize()?;
    let history_len = r.usize()?;
    let input_size = r.usize()?;
    let output_size = r.usize()?;
    let target_lead = r.usize()?;
    let dropout_rate = r.f64()?;
    let spec = LstmSpec {
        num_layers,
        hidden_size,
        history_len,
        dropout_rate,
        input_size,
        output_size,
        target_lead,
    };
    spec.validate().map_err(|e| r.err(format!("bad spec block: {e}")))?;
    let mean = (0..input_size).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let scale = (0..input_size).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let count = r.usize()?;
    if count != spec.param_count() {
        return Err(r.err(format!("{count} parameters, spec needs {}", spec.param_count())));
    }
    let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let w = LstmWeights {
        spec,
        params,
        norm: NormStats { mean, scale },
    };
    w.validate().map_err(|e| r.err(e.to_string()))?;
    Ok(w)
}

pub fn save_weights(w: &LstmWeights, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(w)).map_err(|e| Error::io(path, e))
}

/// Load a weight file, optionally checking it against an expected shape.
pub fn load_weights(path: &Path, expected: Option<&LstmSpec>) -> Result<LstmWeights> {
    let buf = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingWeights(path.into())),
        Err(e) => return Err(Error::io(path, e)),
    };
    let w = from_bytes(&buf, &path.display().to_string())?;
    if let Some(exp) = expected {
        if !exp.compatible(&w.spec) {
            return Err(Error::Incompatible(format!(
                "file holds {} (lead {}), expected {} (lead {})",
                w.spec.label(),
                w.spec.target_lead,
                exp.label(),
                exp.target_lead
            )));
        }
    }
    Ok(w)
}
