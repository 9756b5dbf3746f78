//! Flat binary container for parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"CPCPARAM"   version u32
//! meta_len u64, meta (UTF-8 JSON)
//! count u32
//! per tensor: name_len u32, name, rank u32, dims u64 × rank, values f64 × numel
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backbone::ModelParams;
use super::classifier::{ClassifierParams, Head};
use super::config::ModelConfig;
use crate::engine::{ParamSet, RunningStats};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CPCPARAM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a parameter container".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let meta_len = read_u64(&mut r)? as usize;
        let meta = read_string(&mut r, meta_len)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = read_string(&mut r, name_len)?;
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            tensors.push((name, shape, values));
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(Container { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn from_params(meta: String, params: &ParamSet, extra: Vec<(String, Vec<usize>, Vec<f64>)>) -> Self {
        let mut tensors: Vec<_> = params
            .iter()
            .map(|(n, p)| (n.to_string(), p.shape.clone(), p.data.clone()))
            .collect();
        tensors.extend(extra);
        Container { meta, tensors }
    }

    fn into_params(self, buffer_prefix: Option<&str>) -> Result<(ParamSet, Vec<(String, Vec<usize>, Vec<f64>)>)> {
        let mut params = ParamSet::default();
        let mut rest = Vec::new();
        for (name, shape, values) in self.tensors {
            if buffer_prefix.is_some_and(|p| name.starts_with(p)) {
                rest.push((name, shape, values));
            } else {
                params.insert(&name, shape, values)?;
            }
        }
        Ok((params, rest))
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated parameter container".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_string(r: &mut &[u8], len: usize) -> Result<String> {
    if r.len() < len {
        return Err(Error::Format("truncated parameter container".into()));
    }
    let (s, rest) = r.split_at(len);
    *r = rest;
    String::from_utf8(s.to_vec()).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct BackboneMeta {
    kind: String,
    config: ModelConfig,
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    kind: String,
    head: Head,
    in_dim: usize,
    num_classes: usize,
    dropout: f64,
}

/// Checks the `kind` tag before decoding the rest of the metadata.
fn parse_meta<T: serde::de::DeserializeOwned>(meta: &str, kind: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(meta)?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some(k) if k == kind => Ok(serde_json::from_value(value)?),
        found => Err(Error::Format(format!("expected a {kind} checkpoint, found {found:?}"))),
    }
}

impl ModelParams {
    pub fn to_container(&self) -> Result<Container> {
        let meta = serde_json::to_string(&BackboneMeta {
            kind: "backbone".into(),
            config: self.config.clone(),
        })?;
        Ok(Container::from_params(meta, &self.params, Vec::new()))
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let meta: BackboneMeta = parse_meta(&c.meta, "backbone")?;
        let (params, _) = c.into_params(None)?;
        Ok(ModelParams { config: meta.config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

impl ClassifierParams {
    pub fn to_container(&self) -> Result<Container> {
        let meta = serde_json::to_string(&ClassifierMeta {
            kind: "classifier".into(),
            head: self.head,
            in_dim: self.in_dim,
            num_classes: self.num_classes,
            dropout: self.dropout,
        })?;
        let mut extra = Vec::new();
        for (i, s) in self.bn.iter().enumerate() {
            extra.push((format!("buffer.bn{}.mean", i + 1), vec![s.mean.len()], s.mean.clone()));
            extra.push((format!("buffer.bn{}.var", i + 1), vec![s.var.len()], s.var.clone()));
        }
        Ok(Container::from_params(meta, &self.params, extra))
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let meta: ClassifierMeta = parse_meta(&c.meta, "classifier")?;
        let (params, buffers) = c.into_params(Some("buffer."))?;
        let mut bn = Vec::new();
        for pair in buffers.chunks(2) {
            match pair {
                [(_, _, mean), (_, _, var)] => bn.push(RunningStats {
                    mean: mean.clone(),
                    var: var.clone(),
                }),
                _ => return Err(Error::Format("unpaired batch-norm buffer".into())),
            }
        }
        Ok(ClassifierParams {
            head: meta.head,
            in_dim: meta.in_dim,
            num_classes: meta.num_classes,
            dropout: meta.dropout,
            params,
            bn,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}
