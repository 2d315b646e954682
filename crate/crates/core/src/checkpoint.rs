//! Binary tensor-record files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"CLSR"
//! version  u8 (= 1)
//! kind     u8 (b'M' model, b'S' continual-learning state)
//! count    u32
//! count x { name_len u32, name utf-8, ndim u32, dims u64 x ndim, data f64 x prod(dims) }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HybridModel, ModelConfig};
use crate::num::{ModelParams, Tensor};

pub const MAGIC: &[u8; 4] = b"CLSR";
pub const VERSION: u8 = 1;
pub const KIND_MODEL: u8 = b'M';
pub const KIND_CL_STATE: u8 = b'S';

const CONFIG_RECORD: &str = "__config__";

pub fn write_records<W: Write>(mut w: W, kind: u8, records: &[(String, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, kind])?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads every record, checking magic, version and the expected kind byte.
pub fn read_records<R: Read>(mut r: R, expected_kind: u8) -> Result<Vec<(String, Tensor)>> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", head[4])));
    }
    if head[5] != expected_kind {
        return Err(Error::Format(format!(
            "expected kind {:?}, found {:?}",
            expected_kind as char, head[5] as char
        )));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("record name not utf-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

pub(crate) fn config_tensor(c: &ModelConfig) -> Tensor {
    let v = [c.feat_dim, c.hidden_dim, c.vocab_size, c.conv_kernel];
    Tensor::from_vec(&[4], v.iter().map(|&x| x as f64).collect()).expect("4 elements")
}

pub(crate) fn config_from_tensor(t: &Tensor) -> Result<ModelConfig> {
    let d = t.data();
    if d.len() != 4 || d.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
        return Err(Error::Format("malformed model config record".into()));
    }
    Ok(ModelConfig {
        feat_dim: d[0] as usize,
        hidden_dim: d[1] as usize,
        vocab_size: d[2] as usize,
        conv_kernel: d[3] as usize,
    })
}

pub(crate) fn prefixed<'a>(prefix: &str, params: &'a ModelParams) -> Vec<(String, &'a Tensor)> {
    params
        .iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
}

pub fn write_model<W: Write>(w: W, model: &HybridModel) -> Result<()> {
    let cfg = config_tensor(model.config());
    let mut records = vec![(CONFIG_RECORD.to_string(), &cfg)];
    records.extend(prefixed("", model.params()));
    write_records(w, KIND_MODEL, &records)
}

pub fn read_model<R: Read>(r: R) -> Result<HybridModel> {
    let records = read_records(r, KIND_MODEL)?;
    let mut config = None;
    let mut params = ModelParams::new();
    for (name, t) in records {
        if name == CONFIG_RECORD {
            config = Some(config_from_tensor(&t)?);
        } else {
            params.insert(name, t);
        }
    }
    let config = config.ok_or_else(|| Error::Format("missing model config record".into()))?;
    HybridModel::from_params(config, params)
}

pub fn save_model(path: &Path, model: &HybridModel) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, model)?;
    write_atomic(path, &buf)
}

pub fn load_model(path: &Path) -> Result<HybridModel> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Contract(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = HybridModel::init(ModelConfig::default(), 17).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        assert_eq!(buf[4], VERSION);
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.config(), m.config());
        for ((_, a), (_, b)) in back.params().iter().zip(m.params().iter()) {
            let ab: Vec<u64> = a.data().iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn rejects_wrong_magic_kind_and_truncation() {
        let m = HybridModel::init(ModelConfig::default(), 1).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(Error::Format(_))));

        let mut bad = buf.clone();
        bad[5] = KIND_CL_STATE;
        assert!(matches!(read_model(bad.as_slice()), Err(Error::Format(_))));

        assert!(read_model(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = HybridModel::init(ModelConfig::default(), 4).unwrap();
        save_model(&path, &m).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
