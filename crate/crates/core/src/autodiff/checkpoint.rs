//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "PSCKPT\0\0"
//! version  u32      currently 1
//! mlen     u64      byte length of the manifest
//! manifest mlen bytes of UTF-8, one line per array:
//!          name \t dims joined by 'x' \t byte offset into data \t element count
//! data     f64 values, arrays back to back in manifest order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut manifest = String::new();
    let mut offset = 0usize;
    for id in store.ids() {
        let dims: Vec<String> = store.shape(id).iter().map(usize::to_string).collect();
        let count = store.values(id).len();
        manifest.push_str(&format!("{}\t{}\t{}\t{}\n", store.name(id), dims.join("x"), offset, count));
        offset += count * 8;
    }
    let mut out = Vec::with_capacity(20 + manifest.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for id in store.ids() {
        for v in store.values(id) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let bad = |d: &str| Error::format("checkpoint", d.to_string());
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let data_start = 20usize.checked_add(mlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
    let manifest = std::str::from_utf8(&bytes[20..data_start]).map_err(|_| bad("manifest is not utf-8"))?;
    let data = &bytes[data_start..];
    let mut arrays = Vec::new();
    for line in manifest.lines().filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, dims, offset, count] = fields[..] else {
            return Err(bad(&format!("manifest line {line:?}")));
        };
        let shape: Vec<usize> = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split('x').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad dims"))?
        };
        let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
        let count: usize = count.parse().map_err(|_| bad("bad count"))?;
        if shape.iter().product::<usize>() != count {
            return Err(bad(&format!("{name}: dims {dims} disagree with count {count}")));
        }
        let end = offset + count * 8;
        if end > data.len() {
            return Err(bad(&format!("{name}: data out of range")));
        }
        let values = data[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(NamedArray {
            name: name.to_string(),
            shape,
            values,
        });
    }
    Ok(arrays)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(store)).map_err(|e| Error::io(path, e))
}

/// Overwrites every parameter of `store` from the checkpoint at `path`.
/// Every parameter must be present with a matching shape.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let arrays = decode(&bytes)?;
    restore(store, &arrays)
}

pub fn restore(store: &mut ParamStore, arrays: &[NamedArray]) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let arr = arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::format("checkpoint", format!("missing array {name}")))?;
        if arr.shape != store.shape(id) {
            return Err(Error::format(
                "checkpoint",
                format!("{name}: shape {:?} != expected {:?}", arr.shape, store.shape(id)),
            ));
        }
        store.values_mut(id).copy_from_slice(&arr.values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_preserves_arrays_bitwise() {
        let mut store = ParamStore::new();
        store.add("enc.w", &[2, 3], vec![0.1, -0.2, 0.3, 1e-300, f64::MIN_POSITIVE, 7.0]).unwrap();
        store.add("enc.b", &[2], vec![0.5, -0.5]).unwrap();
        let bytes = encode(&store);
        let arrays = decode(&bytes).unwrap();
        assert_eq!(arrays.len(), 2);
        assert_eq!(arrays[0].name, "enc.w");
        assert_eq!(arrays[0].shape, vec![2, 3]);
        assert_eq!(arrays[0].values, store.values(store.id("enc.w").unwrap()));

        let mut fresh = ParamStore::new();
        fresh.add("enc.w", &[2, 3], vec![0.0; 6]).unwrap();
        fresh.add("enc.b", &[2], vec![0.0; 2]).unwrap();
        restore(&mut fresh, &arrays).unwrap();
        assert_eq!(encode(&fresh), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let mut store = ParamStore::new();
        store.add("w", &[2], vec![1.0, 2.0]).unwrap();
        let bytes = encode(&store);
        assert!(decode(&bytes[..10]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(decode(&wrong_version).is_err());
        assert!(decode(&bytes[..bytes.len() - 4]).is_err());

        let mut other = ParamStore::new();
        other.add("w", &[3], vec![0.0; 3]).unwrap();
        assert!(restore(&mut other, &decode(&bytes).unwrap()).is_err());
    }
}
