//! Model checkpoints: a text header followed by little-endian `f32` blobs
//! in header order.
//!
//! ```text
//! SCMPPI-CHECKPOINT <version>
//! config_hash <hex sha-256 of the config block>
//! best_epoch <n>
//! best_val_mcc <float>
//! config <byte length>
//! <config toml>
//! params <count>
//! <name> <d0>x<d1>x...
//! end
//! <blobs>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{hash_text, Config};
use crate::error::{Error, Result};
use crate::training::{build_params, TrainedModel};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "SCMPPI-CHECKPOINT";

pub fn encode_checkpoint(model: &TrainedModel) -> Vec<u8> {
    let config_text = model.config.to_toml();
    let mut header = String::new();
    writeln!(header, "{MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(header, "config_hash {}", hash_text(&config_text)).unwrap();
    writeln!(header, "best_epoch {}", model.best_epoch).unwrap();
    writeln!(header, "best_val_mcc {}", model.best_val_mcc).unwrap();
    writeln!(header, "config {}", config_text.len()).unwrap();
    header.push_str(&config_text);
    writeln!(header, "params {}", model.params.len()).unwrap();
    for (name, t) in model.params.iter() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(header, "{name} {}", dims.join("x")).unwrap();
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    for (_, t) in model.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &TrainedModel) -> Result<()> {
    super::write_file(path, &encode_checkpoint(model))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| {
                Error::Checkpoint(format!("expected `{key}` header line, found {line:?}"))
            })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad {what} {s:?}")))
}

/// Decodes a checkpoint, verifying version, config hash and that every
/// parameter matches the shape the stored config implies.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainedModel> {
    let mut c = Cursor { bytes, pos: 0 };
    let version: u32 = parse_num(c.field(MAGIC)?, "format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let stored_hash = c.field("config_hash")?.to_string();
    let best_epoch: usize = parse_num(c.field("best_epoch")?, "best_epoch")?;
    let best_val_mcc: f64 = parse_num(c.field("best_val_mcc")?, "best_val_mcc")?;
    let config_len: usize = parse_num(c.field("config")?, "config length")?;
    let config_text = std::str::from_utf8(c.take(config_len)?)
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    if hash_text(config_text) != stored_hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    let config = Config::from_toml(config_text)
        .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
    if config.hash() != stored_hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }

    let mut params = build_params(&config)?;
    let count: usize = parse_num(c.field("params")?, "parameter count")?;
    if count != params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} parameters, config implies {}",
            params.len()
        )));
    }
    let mut layout = Vec::with_capacity(count);
    for _ in 0..count {
        let line = c.line()?;
        let (name, dims) = line
            .rsplit_once(' ')
            .ok_or_else(|| Error::Checkpoint(format!("bad parameter line {line:?}")))?;
        let shape = dims
            .split('x')
            .map(|d| parse_num::<usize>(d, "dimension"))
            .collect::<Result<Vec<_>>>()?;
        let expected = params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name:?}")))?;
        if expected.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: stored {shape:?}, config implies {:?}",
                expected.shape()
            )));
        }
        layout.push((name.to_string(), shape.iter().product::<usize>()));
    }
    if c.line()? != "end" {
        return Err(Error::Checkpoint(
            "missing `end` after parameter list".into(),
        ));
    }
    for (name, n) in layout {
        let raw = c.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.set(&name, data)?;
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(TrainedModel {
        params,
        config,
        best_epoch,
        best_val_mcc,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
