//! Checkpoint container: magic "FRCK", format version u16, a manifest of
//! (identifier, shape, offset) entries, then little-endian f32 payloads.
//! A JSON sidecar at `<path>.json` carries the full run configuration.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::optim::{ParamId, ParamSet};
use crate::num::scalar::Scalar;

pub const FRCK_MAGIC: &[u8; 4] = b"FRCK";
pub const FRCK_VERSION: u16 = 1;

pub fn save<S: Scalar>(path: &Path, params: &ParamSet<S>) -> Result<()> {
    let mut manifest = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    for p in params.iter() {
        let name = p.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Usage(format!("parameter name too long: {}", p.name)));
        }
        manifest.extend_from_slice(&(name.len() as u16).to_le_bytes());
        manifest.extend_from_slice(name);
        let shape = p.value.shape();
        manifest.push(shape.len() as u8);
        for &d in shape {
            manifest.extend_from_slice(&(d as u32).to_le_bytes());
        }
        manifest.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for v in p.value.data() {
            payload.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let mut buf = Vec::with_capacity(10 + manifest.len() + payload.len());
    buf.extend_from_slice(FRCK_MAGIC);
    buf.extend_from_slice(&FRCK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    buf.extend_from_slice(&manifest);
    buf.extend_from_slice(&payload);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a checkpoint into an existing parameter set; entries are matched by
/// identifier and must cover the set exactly.
pub fn load_into<S: Scalar>(path: &Path, params: &mut ParamSet<S>) -> Result<()> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    if buf.len() < 10 || &buf[0..4] != FRCK_MAGIC {
        return Err(Error::Data(format!("{}: not an FRCK checkpoint", path.display())));
    }
    let version = u16::from_le_bytes(buf[4..6].try_into().unwrap());
    if version != FRCK_VERSION {
        return Err(Error::Data(format!("{}: unsupported checkpoint version {version}", path.display())));
    }
    let count = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let mut pos = 10usize;
    let mut entries: Vec<(String, Vec<usize>, u64)> = Vec::with_capacity(count);
    for _ in 0..count {
        let need = |pos: usize, n: usize| -> Result<()> {
            if pos + n > buf.len() {
                Err(Error::Data(format!("{}: truncated manifest", path.display())))
            } else {
                Ok(())
            }
        };
        need(pos, 2)?;
        let name_len = u16::from_le_bytes(buf[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        need(pos, name_len)?;
        let name = String::from_utf8(buf[pos..pos + name_len].to_vec())
            .map_err(|_| Error::Data(format!("{}: invalid identifier", path.display())))?;
        pos += name_len;
        need(pos, 1)?;
        let rank = buf[pos] as usize;
        pos += 1;
        need(pos, rank * 4 + 8)?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize);
            pos += 4;
        }
        let offset = u64::from_le_bytes(buf[pos..pos + 8].try_into().unwrap());
        pos += 8;
        entries.push((name, shape, offset));
    }
    let payload = &buf[pos..];
    let mut loaded = vec![false; params.len()];
    for (name, shape, offset) in &entries {
        let id = params
            .iter()
            .position(|p| &p.name == name)
            .ok_or_else(|| Error::Data(format!("{}: unknown parameter `{name}`", path.display())))?;
        if loaded[id] {
            return Err(Error::Data(format!("{}: duplicate entry `{name}`", path.display())));
        }
        let expect_shape = params.value(ParamId(id)).shape().to_vec();
        if &expect_shape != shape {
            return Err(Error::Data(format!(
                "{}: `{name}` has shape {shape:?}, model expects {expect_shape:?}",
                path.display()
            )));
        }
        let numel: usize = shape.iter().product();
        let start = *offset as usize;
        if start + numel * 4 > payload.len() {
            return Err(Error::Data(format!("{}: payload truncated for `{name}`", path.display())));
        }
        let mut data = Vec::with_capacity(numel);
        for chunk in payload[start..start + numel * 4].chunks_exact(4) {
            data.push(S::from_f64(f32::from_le_bytes(chunk.try_into().unwrap()) as f64));
        }
        params.set_value(ParamId(id), crate::num::tensor::Tensor::new(shape.clone(), data)?)?;
        loaded[id] = true;
    }
    if let Some(missing) = loaded.iter().position(|&l| !l) {
        return Err(Error::Data(format!(
            "{}: checkpoint does not cover parameter `{}`",
            path.display(),
            params.get(ParamId(missing)).name
        )));
    }
    Ok(())
}

/// Write the JSON sidecar next to a checkpoint.
pub fn write_sidecar(ck_path: &Path, config: &serde_json::Value) -> Result<()> {
    let path = sidecar_path(ck_path);
    let text = serde_json::to_string_pretty(config).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_sidecar(ck_path: &Path) -> Result<serde_json::Value> {
    let path = sidecar_path(ck_path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn sidecar_path(ck_path: &Path) -> std::path::PathBuf {
    let mut os = ck_path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::tensor::Tensor;

    #[test]
    fn round_trip_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.frck");
        let mut ps = ParamSet::<f32>::new();
        ps.add("a.weight", Tensor::from_f64_slice(&[2, 3], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap()).unwrap();
        ps.add("a.bias", Tensor::from_f64_slice(&[3], &[1.5, -2.5, 0.0]).unwrap()).unwrap();
        save(&path, &ps).unwrap();

        let mut ps2 = ParamSet::<f32>::new();
        ps2.add("a.weight", Tensor::zeros(&[2, 3])).unwrap();
        ps2.add("a.bias", Tensor::zeros(&[3])).unwrap();
        load_into(&path, &mut ps2).unwrap();
        for (p, q) in ps.iter().zip(ps2.iter()) {
            assert_eq!(p.value.data(), q.value.data());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.frck");
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::zeros(&[4])).unwrap();
        save(&path, &ps).unwrap();
        let mut other = ParamSet::<f32>::new();
        other.add("w", Tensor::zeros(&[5])).unwrap();
        assert!(load_into(&path, &mut other).is_err());
    }

    #[test]
    fn missing_parameter_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.frck");
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::zeros(&[4])).unwrap();
        save(&path, &ps).unwrap();
        let mut other = ParamSet::<f32>::new();
        other.add("w", Tensor::zeros(&[4])).unwrap();
        other.add("extra", Tensor::zeros(&[1])).unwrap();
        let err = load_into(&path, &mut other).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.frck");
        let cfg = serde_json::json!({"model": {"window": 200}, "seed": 7});
        write_sidecar(&path, &cfg).unwrap();
        assert_eq!(read_sidecar(&path).unwrap(), cfg);
    }
}
