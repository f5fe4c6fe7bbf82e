//! Binary weight files.
//!
//! ```text
//! magic "ADNW" | version u32 | config_len u32 | config JSON
//! | n_params u32 | per param: name_len u16, name, dims 4×u32, f32 values
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::graph::NetworkGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"ADNW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights(net: &NetworkGraph<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(net.config()).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let params = net.named_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in p.value.dims().as_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_weights(net: &NetworkGraph<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, write_weights(net)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.file,
                format!("truncated at byte {} (needed {n} more)", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
}

/// Parses a weight file. When `expected` is given, every architectural
/// field must match; input geometry may differ since the network is fully
/// convolutional.
pub fn read_weights(bytes: &[u8], file: &str, expected: Option<&NetworkConfig>) -> Result<NetworkGraph<f32>> {
    let mut r = Reader { buf: bytes, pos: 0, file };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(Error::format(file, "not a weight file (bad magic)"));
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(file, format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let cfg: NetworkConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(file, format!("config block: {e}")))?;
    cfg.validate().map_err(|e| Error::format(file, e.to_string()))?;
    if let Some(exp) = expected {
        let diff = cfg.diff(&exp.with_input(cfg.input_h, cfg.input_w));
        if !diff.is_empty() {
            return Err(Error::format(
                file,
                format!("weights do not match the configuration: {}", diff.join(", ")),
            ));
        }
    }
    let mut net = NetworkGraph::<f32>::build(&cfg, 0)?;
    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
    let count = r.u32()? as usize;
    if count != names.len() {
        return Err(Error::format(
            file,
            format!("{count} tensors, architecture has {}", names.len()),
        ));
    }
    for (name, p) in names.iter().zip(net.params_mut()) {
        let n = r.u16()? as usize;
        let got = String::from_utf8_lossy(r.take(n)?).into_owned();
        if &got != name {
            return Err(Error::format(file, format!("expected tensor {name}, found {got}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        if dims != p.value.dims().as_array() {
            return Err(Error::format(
                file,
                format!("{name}: dims {dims:?}, expected {}", p.value.dims()),
            ));
        }
        let raw = r.take(p.len() * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        p.value = Tensor::from_vec(dims, data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(file, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(net)
}

pub fn load_weights(path: &Path, expected: Option<&NetworkConfig>) -> Result<NetworkGraph<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes, &path.display().to_string(), expected)
}
