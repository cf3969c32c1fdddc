//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content                                              |
//! |-------|------------------------------------------------------|
//! | 8     | magic `RSNNCKPT`                                     |
//! | 4     | format version (`u32`, currently 1)                  |
//! | 4     | manifest length `m` in bytes (`u32`)                 |
//! | m     | UTF-8 JSON manifest: net config and tensor shapes    |
//! | 8·P   | every parameter as `f64`, tensors in manifest order  |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Architecture, NetConfig, ParamSpec, PolicyValueNet};
use super::NnError;

pub const MAGIC: &[u8; 8] = b"RSNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: NetConfig,
    tensors: Vec<ParamSpec>,
}

pub fn write_checkpoint<W: Write>(net: &PolicyValueNet, mut out: W) -> Result<(), NnError> {
    let manifest = Manifest {
        config: net.config().clone(),
        tensors: net.architecture().params.clone(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(net.params().len() * 8);
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<PolicyValueNet, NnError> {
    let bad = |m: &str| NnError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported format version {version}")));
    }
    input.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    input.read_exact(&mut json).map_err(|_| bad("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(format!("manifest: {e}")))?;

    let arch = Architecture::new(manifest.config.clone())?;
    let expected: Vec<(String, Vec<usize>)> =
        arch.params.iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    let found: Vec<(String, Vec<usize>)> =
        manifest.tensors.iter().map(|p| (p.name.clone(), p.shape.clone())).collect();
    if expected != found {
        return Err(bad("tensor manifest does not match the network config"));
    }
    let total: usize = found.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != total * 8 {
        return Err(NnError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            total * 8,
            raw.len()
        )));
    }
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    PolicyValueNet::from_params(manifest.config, params)
}

pub fn save(net: &PolicyValueNet, path: &Path) -> Result<(), NnError> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(net, std::io::BufWriter::new(file))
}

pub fn load(path: &Path) -> Result<PolicyValueNet, NnError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
