//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `FLOWEXEC`, a little-endian `u32` format version, a
//! `u32` header length, the JSON header, then every tensor as little-endian
//! `f32` in header order. For each network the body holds the parameters,
//! followed by the Adam first and second moments when present. Extra named
//! tensors come last. Values are rounded to `f32`, so saving a loaded checkpoint
//! reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Adam, Mlp, NetSpec};

pub const MAGIC: &[u8; 8] = b"FLOWEXEC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    spec: NetSpec,
    n_params: usize,
    adam_step: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    nets: Vec<NetHeader>,
    tensors: Vec<TensorHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedNet {
    pub name: String,
    pub net: Mlp,
    pub adam: Option<Adam>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub nets: Vec<NamedNet>,
    pub tensors: Vec<(String, Vec<f64>)>,
}

fn push_f32(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            meta,
            nets: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn with_net(mut self, name: &str, net: &Mlp, adam: Option<&Adam>) -> Self {
        self.nets.push(NamedNet {
            name: name.to_string(),
            net: net.clone(),
            adam: adam.cloned(),
        });
        self
    }

    pub fn with_tensor(mut self, name: &str, values: Vec<f64>) -> Self {
        self.tensors.push((name.to_string(), values));
        self
    }

    pub fn net(&self, name: &str) -> Result<&NamedNet> {
        self.nets
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no network '{name}'")))
    }

    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor '{name}'")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            nets: self
                .nets
                .iter()
                .map(|n| NetHeader {
                    name: n.name.clone(),
                    spec: n.net.spec.clone(),
                    n_params: n.net.n_params(),
                    adam_step: n.adam.as_ref().map(|a| a.step),
                })
                .collect(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, v)| TensorHeader {
                    name: name.clone(),
                    len: v.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for n in &self.nets {
            push_f32(&mut out, &n.net.params);
            if let Some(a) = &n.adam {
                push_f32(&mut out, &a.m);
                push_f32(&mut out, &a.v);
            }
        }
        for (_, v) in &self.tensors {
            push_f32(&mut out, v);
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::SchemaVersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        let mut nets = Vec::new();
        for h in header.nets {
            h.spec.validate()?;
            if h.spec.n_params() != h.n_params {
                return Err(Error::ShapeMismatch {
                    expected: h.spec.n_params(),
                    got: h.n_params,
                });
            }
            let params = r.f32s(h.n_params)?;
            let adam = match h.adam_step {
                Some(step) => Some(Adam {
                    m: r.f32s(h.n_params)?,
                    v: r.f32s(h.n_params)?,
                    step,
                }),
                None => None,
            };
            nets.push(NamedNet {
                name: h.name,
                net: Mlp { spec: h.spec, params },
                adam,
            });
        }
        let mut tensors = Vec::new();
        for t in header.tensors {
            tensors.push((t.name, r.f32s(t.len)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            nets,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?).map_err(|e| e.context(format!("loading {}", path.display())))
    }
}
