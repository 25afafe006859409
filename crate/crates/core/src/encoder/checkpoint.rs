//! Checkpoint files: a JSON header describing run metadata and the
//! (name, shape, offset) manifest of every parameter block, followed by
//! the raw parameter data as 64-bit little-endian floats. Round trips
//! are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{param_manifest, param_vec, ParamEntry, Parameterized};

const MAGIC: &[u8; 8] = b"MSSLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    entries: Vec<HeaderEntry>,
}

/// A loaded checkpoint: metadata plus the flat parameter store.
#[derive(Debug)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub entries: Vec<ParamEntry>,
    pub data: Vec<f64>,
}

/// Write named components into one checkpoint file. Component prefixes
/// namespace the parameter entries (`student.proj.w`, ...).
pub fn save_checkpoint(
    path: &Path,
    meta: &serde_json::Value,
    components: &[(&str, &dyn Parameterized)],
) -> Result<()> {
    let mut entries = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (prefix, component) in components {
        let base = data.len();
        for e in param_manifest(*component) {
            entries.push(HeaderEntry {
                name: format!("{prefix}.{}", e.name),
                shape: e.shape,
                offset: base + e.offset,
            });
        }
        data.extend(param_vec(*component));
    }
    let header = Header {
        meta: meta.clone(),
        entries,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::invalid(format!("checkpoint header serialization: {e}")))?;

    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for v in &data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut rd = BufReader::new(file);
        let mut magic = [0u8; 8];
        rd.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::invalid("not a checkpoint file".to_string()));
        }
        let mut word = [0u8; 4];
        rd.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut len8 = [0u8; 8];
        rd.read_exact(&mut len8)?;
        let header_len = u64::from_le_bytes(len8) as usize;
        let mut header_bytes = vec![0u8; header_len];
        rd.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::invalid(format!("checkpoint header parse: {e}")))?;
        let mut rest = Vec::new();
        rd.read_to_end(&mut rest)?;
        if rest.len() % 8 != 0 {
            return Err(Error::invalid("truncated checkpoint data".to_string()));
        }
        let data: Vec<f64> = rest
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
            .collect();
        Ok(Checkpoint {
            meta: header.meta,
            entries: header
                .entries
                .into_iter()
                .map(|e| ParamEntry {
                    name: e.name,
                    shape: e.shape,
                    offset: e.offset,
                })
                .collect(),
            data,
        })
    }

    /// Copy parameters of one prefixed component into a model with the
    /// matching architecture.
    pub fn load_component(&self, prefix: &str, model: &mut impl Parameterized) -> Result<()> {
        let mut missing: Option<String> = None;
        let mut mismatch: Option<String> = None;
        model.for_each_param_mut(&mut |name, shape, data| {
            let full = format!("{prefix}.{name}");
            match self.entries.iter().find(|e| e.name == full) {
                Some(e) => {
                    if e.shape != shape {
                        mismatch = Some(full.clone());
                        return;
                    }
                    let n: usize = shape.iter().product();
                    data.copy_from_slice(&self.data[e.offset..e.offset + n]);
                }
                None => missing = Some(full.clone()),
            }
        });
        if let Some(name) = mismatch {
            return Err(Error::shape(format!("checkpoint shape mismatch for {name}")));
        }
        if let Some(name) = missing {
            return Err(Error::invalid(format!("checkpoint missing entry {name}")));
        }
        Ok(())
    }

    pub fn has_component(&self, prefix: &str) -> bool {
        let dotted = format!("{prefix}.");
        self.entries.iter().any(|e| e.name.starts_with(&dotted))
    }
}
