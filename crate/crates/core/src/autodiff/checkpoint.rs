//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CCGVCKPT"
//! version    u32      (1)
//! meta_len   u32      followed by meta_len bytes of UTF-8 `key=value` lines
//! count      u32      number of tensors
//! directory  count × { name_len u16, name, ndim u8, dims u32×ndim, offset u64 }
//! payload    f32 values, each tensor at `offset` bytes from payload start
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use super::AutodiffError;

pub const MAGIC: &[u8; 8] = b"CCGVCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], AutodiffError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_vec(r: &mut impl Read, len: usize) -> Result<Vec<u8>, AutodiffError> {
    let mut buf = Vec::new();
    r.take(len as u64)
        .read_to_end(&mut buf)
        .map_err(|e| bad(e.to_string()))?;
    if buf.len() != len {
        return Err(bad("truncated checkpoint"));
    }
    Ok(buf)
}

impl Checkpoint {
    pub fn from_params(store: &ParamStore) -> Self {
        Self {
            metadata: Vec::new(),
            tensors: store
                .iter()
                .map(|(_, p)| (p.name().to_string(), p.value().clone()))
                .collect(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key, value)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies every stored tensor into the parameter of the same name.
    /// Fails if a parameter is missing or shaped differently.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), AutodiffError> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name().to_string();
            let t = self
                .tensor(&name)
                .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            store.set_value(id, t.clone())?;
        }
        Ok(())
    }

    fn encode_metadata(&self) -> Result<String, AutodiffError> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(bad(format!("metadata entry `{k}` contains a separator")));
            }
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), AutodiffError> {
        let meta = self.encode_metadata()?;
        let mut header = Vec::new();
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        header.extend_from_slice(meta.as_bytes());
        header.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            if name.len() > u16::MAX as usize {
                return Err(bad("tensor name too long"));
            }
            header.extend_from_slice(&(name.len() as u16).to_le_bytes());
            header.extend_from_slice(name.as_bytes());
            header.push(t.shape().len() as u8);
            for &d in t.shape() {
                header.extend_from_slice(&(d as u32).to_le_bytes());
            }
            header.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.len() as u64;
        }
        w.write_all(&header).map_err(AutodiffError::from)?;
        let mut payload = Vec::with_capacity(offset as usize);
        for (_, t) in &self.tensors {
            for &x in t.data() {
                payload.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        w.write_all(&payload).map_err(AutodiffError::from)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, AutodiffError> {
        let magic: [u8; 8] = read_exact(r)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(read_exact(r)?);
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = u32::from_le_bytes(read_exact(r)?) as usize;
        let meta = String::from_utf8(read_vec(r, meta_len)?).map_err(|_| bad("metadata is not UTF-8"))?;
        let metadata = meta
            .lines()
            .map(|line| {
                line.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| bad(format!("malformed metadata line `{line}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let count = u32::from_le_bytes(read_exact(r)?) as usize;
        let mut directory = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(read_exact(r)?) as usize;
            let name = String::from_utf8(read_vec(r, name_len)?).map_err(|_| bad("tensor name is not UTF-8"))?;
            let ndim = read_exact::<1>(r)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(read_exact(r)?) as usize);
            }
            let offset = u64::from_le_bytes(read_exact(r)?);
            directory.push((name, shape, offset));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(AutodiffError::from)?;
        let mut tensors = Vec::with_capacity(directory.len());
        for (name, shape, offset) in directory {
            let n: usize = shape.iter().product();
            let start = offset as usize;
            let end = start
                .checked_add(4 * n)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| bad(format!("tensor `{name}` runs past end of payload")))?;
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AutodiffError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf).map_err(AutodiffError::from)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AutodiffError> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut io::Cursor::new(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.set_meta("vocab", "C 4,N 3");
        ck.tensors.push(("a".into(), Tensor::row(vec![1.5, -2.25])));
        ck.tensors.push((
            "b".into(),
            Tensor::matrix(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap(),
        ));
        ck
    }

    #[test]
    fn byte_layout_is_fixed() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        let meta = b"vocab=C 4,N 3\n";
        assert_eq!(&buf[12..16], &(meta.len() as u32).to_le_bytes());
        assert_eq!(&buf[16..16 + meta.len()], meta);
        // last tensor payload: 0,1,2,3 as f32
        let tail: Vec<u8> = [0.0f32, 1.0, 2.0, 3.0].iter().flat_map(|x| x.to_le_bytes()).collect();
        assert_eq!(&buf[buf.len() - 16..], &tail[..]);
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut io::Cursor::new(&buf)).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta("vocab"), Some("C 4,N 3"));
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::read_from(&mut io::Cursor::new(b"nope")).is_err());
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Checkpoint::read_from(&mut io::Cursor::new(&buf)).is_err());
    }

    #[test]
    fn params_reload_bit_identically() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add_glorot("w", 3, 4, &mut rng);
        let ck = Checkpoint::from_params(&store);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[3, 4]));
        Checkpoint::read_from(&mut io::Cursor::new(&buf))
            .unwrap()
            .load_into(&mut other)
            .unwrap();
        let id = store.id("w").unwrap();
        assert_eq!(store.value(id), other.value(id));
    }
}
