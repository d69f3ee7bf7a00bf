//! Versioned binary checkpoint container.
//!
//! Layout (little endian):
//! `b"SMCK"`, `u32` version, `u32` header length, JSON-encoded [`ModelConfig`],
//! `u32` tensor count, then per tensor: `u32` name length, UTF-8 name,
//! `u8` group, `u32` rank, `u64` dims, `f64` data; finally `b"DONE"`.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::model::{ArchTag, ModelConfig, ModelParams};
use super::params::{Group, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SMCK";
const END: &[u8; 4] = b"DONE";
pub const CHECKPOINT_VERSION: u32 = 1;

fn group_code(g: Group) -> u8 {
    match g {
        Group::Encoder => 0,
        Group::Decoder => 1,
        Group::Classifier => 2,
    }
}

fn group_from(code: u8) -> Result<Group> {
    match code {
        0 => Ok(Group::Encoder),
        1 => Ok(Group::Decoder),
        2 => Ok(Group::Classifier),
        _ => Err(Error::CorruptCheckpoint(format!("unknown group code {code}"))),
    }
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    let header = serde_json::to_vec(params.config()).expect("config serializes");
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(header.len() as u32).unwrap();
    out.extend_from_slice(&header);
    let entries = params.store().entries();
    out.write_u32::<LittleEndian>(entries.len() as u32).unwrap();
    for e in entries {
        out.write_u32::<LittleEndian>(e.name.len() as u32).unwrap();
        out.extend_from_slice(e.name.as_bytes());
        out.write_u8(group_code(e.group)).unwrap();
        out.write_u32::<LittleEndian>(e.tensor.shape().len() as u32).unwrap();
        for &d in e.tensor.shape() {
            out.write_u64::<LittleEndian>(d as u64).unwrap();
        }
        for &v in e.tensor.data() {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    out.extend_from_slice(END);
    out
}

fn truncated(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |_| Error::CorruptCheckpoint(format!("file ends inside {what}"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if &magic != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated("version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let header_len = r.read_u32::<LittleEndian>().map_err(truncated("header"))? as usize;
    let remaining = bytes.len() - r.position() as usize;
    if header_len > remaining {
        return Err(Error::CorruptCheckpoint("file ends inside header".into()));
    }
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(truncated("header"))?;
    let config: ModelConfig = serde_json::from_slice(&header)
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;

    let count = r.read_u32::<LittleEndian>().map_err(truncated("tensor count"))?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>().map_err(truncated("tensor name"))? as usize;
        if name_len > bytes.len() {
            return Err(Error::CorruptCheckpoint("implausible name length".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(truncated("tensor name"))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let group = group_from(r.read_u8().map_err(truncated("tensor group"))?)?;
        let rank = r.read_u32::<LittleEndian>().map_err(truncated("tensor rank"))? as usize;
        if rank > 8 {
            return Err(Error::CorruptCheckpoint(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>().map_err(truncated("tensor shape"))? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} is larger than the file")))?;
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data)
            .map_err(|_| Error::CorruptCheckpoint(format!("file ends inside tensor {name}")))?;
        let tensor = Tensor::from_vec(&shape, data).expect("length checked");
        store.push(name, group, tensor);
    }
    let mut end = [0u8; 4];
    r.read_exact(&mut end).map_err(truncated("end marker"))?;
    if &end != END || (r.position() as usize) != bytes.len() {
        return Err(Error::CorruptCheckpoint("missing or misplaced end marker".into()));
    }
    ModelParams::from_parts(config, store)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and rejects it unless it holds the expected architecture.
pub fn load_checkpoint_as(path: &Path, expected: ArchTag) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    if params.tag() != expected {
        return Err(Error::ArchitectureMismatch {
            expected: expected.to_string(),
            found: params.tag().to_string(),
        });
    }
    Ok(params)
}
