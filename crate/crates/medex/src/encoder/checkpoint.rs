//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            8  bytes  "MEDXCKPT"
//! format version   u32
//! config block     u32 length + UTF-8 key=value lines
//! schema block     u32 length + UTF-8
//! vocab ref block  u32 length + UTF-8
//! tensor count     u32
//! per tensor:      u16 name length + name bytes,
//!                  u8 rank, rank x u64 dims,
//!                  product x f32 values
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MEDXCKPT";
const FORMAT_VERSION: u32 = 1;

/// Everything a checkpoint holds besides the tensors themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// Flat key=value configuration snapshot.
    pub config: BTreeMap<String, String>,
    /// Label schema (or tag inventory) in its text form.
    pub schema: String,
    /// Identity of the subword vocabulary the model was trained with,
    /// typically a content checksum.
    pub vocab_ref: String,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_block(w: &mut impl Write, content: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(content.len() as u32)?;
    w.write_all(content.as_bytes())
}

fn read_block(r: &mut impl Read) -> Result<String> {
    let len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| corrupt("truncated block header"))?;
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|_| corrupt("truncated block"))?;
    String::from_utf8(buf).map_err(|_| corrupt("block is not UTF-8"))
}

/// Serializes metadata plus named f32 tensors. Load of the result is
/// bit-exact on every parameter.
pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    tensors: &[(String, ArrayD<f32>)],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    let config_text: String = meta
        .config
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    write_block(&mut buf, &config_text).unwrap();
    write_block(&mut buf, &meta.schema).unwrap();
    write_block(&mut buf, &meta.vocab_ref).unwrap();
    buf.write_u32::<LittleEndian>(tensors.len() as u32).unwrap();
    for (name, tensor) in tensors {
        buf.write_u16::<LittleEndian>(name.len() as u16).unwrap();
        buf.extend_from_slice(name.as_bytes());
        buf.write_u8(tensor.ndim() as u8).unwrap();
        for d in tensor.shape() {
            buf.write_u64::<LittleEndian>(*d as u64).unwrap();
        }
        for v in tensor.iter() {
            buf.write_f32::<LittleEndian>(*v).unwrap();
        }
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a checkpoint back; rejects unknown versions, bad magic, and
/// truncated content.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Vec<(String, ArrayD<f32>)>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = bytes.as_slice();

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("file too short for magic"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| corrupt("missing version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has {version}, this build reads {FORMAT_VERSION}"
        )));
    }

    let config_text = read_block(&mut r)?;
    let mut config = BTreeMap::new();
    for line in config_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            config.insert(k.to_string(), v.to_string());
        }
    }
    let schema = read_block(&mut r)?;
    let vocab_ref = read_block(&mut r)?;

    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| corrupt("missing tensor count"))?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| corrupt("truncated tensor name header"))?;
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|_| corrupt("truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let rank = r.read_u8().map_err(|_| corrupt("truncated tensor rank"))?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(
                r.read_u64::<LittleEndian>()
                    .map_err(|_| corrupt("truncated tensor shape"))? as usize,
            );
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(
                r.read_f32::<LittleEndian>()
                    .map_err(|_| corrupt(format!("truncated block '{name}'")))?,
            );
        }
        let tensor = ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data)
            .map_err(|e| corrupt(format!("bad tensor shape for '{name}': {e}")))?;
        tensors.push((name, tensor));
    }
    Ok((CheckpointMeta { config, schema, vocab_ref }, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn sample() -> (CheckpointMeta, Vec<(String, ArrayD<f32>)>) {
        let mut config = BTreeMap::new();
        config.insert("hidden_dim".into(), "8".into());
        config.insert("layers".into(), "1".into());
        let meta = CheckpointMeta {
            config,
            schema: "event: disposition, no_disposition\n".into(),
            vocab_ref: "sha256:abc".into(),
        };
        let tensors = vec![
            (
                "token_emb".to_string(),
                ArrayD::from_shape_vec(IxDyn(&[3, 2]), vec![0.1, -0.2, 0.3, 1.5e-7, -9.25, 4.0])
                    .unwrap(),
            ),
            (
                "pooler.b".to_string(),
                ArrayD::from_shape_vec(IxDyn(&[2]), vec![std::f32::consts::PI, -0.0]).unwrap(),
            ),
        ];
        (meta, tensors)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (meta, tensors) = sample();
        save_checkpoint(&path, &meta, &tensors).unwrap();
        let (meta2, tensors2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(tensors.len(), tensors2.len());
        for ((n1, t1), (n2, t2)) in tensors.iter().zip(&tensors2) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.iter().zip(t2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (meta, tensors) = sample();
        save_checkpoint(&path, &meta, &tensors).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(msg) if msg.contains("truncated")));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (meta, tensors) = sample();
        save_checkpoint(&path, &meta, &tensors).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // bump the version field
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(msg) if msg.contains("version mismatch")));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
