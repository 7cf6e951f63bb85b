//! Checkpoint container: a plain-text manifest followed by a contiguous
//! little-endian `f32` payload.
//!
//! ```text
//! format_version chatir-checkpoint/1
//! kind cdssm
//! seed 7
//! meta trigram_dim 3000
//! layer hash_projection 3000 96
//! layer conv_over_time 3 96 96
//! tensor weights 6
//! payload_f32 <n>
//! end
//! <4·n bytes>
//! ```
//!
//! Layer parameters come first in stack order, then named tensors.

use std::collections::BTreeMap;
use std::path::Path;

use super::layers::{Layer, LayerSpec, LayerStack};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "chatir-checkpoint/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<(String, usize)>,
}

impl Manifest {
    pub fn new(kind: impl Into<String>, seed: u64) -> Self {
        Self {
            kind: kind.into(),
            seed,
            meta: BTreeMap::new(),
            layers: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn payload_len(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum::<usize>()
            + self.tensors.iter().map(|(_, n)| n).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub payload: Vec<f32>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn check_word(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(corrupt(format!("{what} must be a non-empty word, got {s:?}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_stack(kind: &str, stack: &LayerStack<f32>) -> Self {
        let mut manifest = Manifest::new(kind, stack.seed());
        manifest.layers = stack.specs();
        let payload = stack.params().into_iter().flatten().copied().collect();
        Self { manifest, payload }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.manifest.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_tensor(mut self, name: &str, values: &[f32]) -> Self {
        self.manifest.tensors.push((name.to_string(), values.len()));
        self.payload.extend_from_slice(values);
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.manifest.meta.get(key).map(String::as_str)
    }

    /// Rebuilds the layer stack described by the manifest.
    pub fn to_stack(&self) -> Result<LayerStack<f32>> {
        if self.manifest.layers.is_empty() {
            return Err(corrupt("checkpoint holds no layers"));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(self.manifest.layers.len());
        for &spec in &self.manifest.layers {
            let mut params = Vec::new();
            for len in spec.param_lengths() {
                let end = offset + len;
                let slice = self
                    .payload
                    .get(offset..end)
                    .ok_or_else(|| corrupt("payload shorter than manifest"))?;
                params.push(slice.to_vec());
                offset = end;
            }
            layers.push(Layer::from_params(spec, &params)?);
        }
        LayerStack::from_layers(layers, self.manifest.seed).map_err(|e| corrupt(e.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        let mut offset: usize = self.manifest.layers.iter().map(LayerSpec::param_count).sum();
        for (n, len) in &self.manifest.tensors {
            if n == name {
                return self.payload.get(offset..offset + len);
            }
            offset += len;
        }
        None
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.manifest;
        if m.payload_len() != self.payload.len() {
            return Err(Error::ShapeMismatch(format!(
                "manifest describes {} values, payload has {}",
                m.payload_len(),
                self.payload.len()
            )));
        }
        check_word(&m.kind, "kind")?;
        let mut header = format!("format_version {FORMAT_VERSION}\nkind {}\nseed {}\n", m.kind, m.seed);
        for (k, v) in &m.meta {
            check_word(k, "meta key")?;
            check_word(v, "meta value")?;
            header.push_str(&format!("meta {k} {v}\n"));
        }
        for spec in &m.layers {
            header.push_str("layer ");
            header.push_str(spec.kind());
            for d in spec.dims() {
                header.push_str(&format!(" {d}"));
            }
            header.push('\n');
        }
        for (name, len) in &m.tensors {
            check_word(name, "tensor name")?;
            header.push_str(&format!("tensor {name} {len}\n"));
        }
        header.push_str(&format!("payload_f32 {}\nend\n", self.payload.len()));
        let mut bytes = header.into_bytes();
        bytes.reserve(self.payload.len() * 4);
        for v in &self.payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt("unterminated manifest"))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| corrupt("manifest is not UTF-8"))
        };

        let first = next_line()?;
        let version = first
            .strip_prefix("format_version ")
            .ok_or_else(|| corrupt("missing format_version line"))?;
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch {
                expected: FORMAT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let mut manifest = Manifest::new("", 0);
        let mut declared: Option<usize> = None;
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let mut parts = line.split(' ');
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| corrupt(format!("bad number {s:?}")));
            match (key, rest.as_slice()) {
                ("kind", [k]) => manifest.kind = k.to_string(),
                ("seed", [s]) => {
                    manifest.seed = s.parse().map_err(|_| corrupt("bad seed"))?;
                }
                ("meta", [k, v]) => {
                    manifest.meta.insert(k.to_string(), v.to_string());
                }
                ("layer", [kind, dims @ ..]) => {
                    let dims = dims.iter().map(|d| parse_usize(d)).collect::<Result<Vec<_>>>()?;
                    let spec = LayerSpec::from_parts(kind, &dims)
                        .ok_or_else(|| corrupt(format!("bad layer line {line:?}")))?;
                    manifest.layers.push(spec);
                }
                ("tensor", [name, len]) => manifest.tensors.push((name.to_string(), parse_usize(len)?)),
                ("payload_f32", [n]) => declared = Some(parse_usize(n)?),
                _ => return Err(corrupt(format!("unrecognized manifest line {line:?}"))),
            }
        }
        let declared = declared.ok_or_else(|| corrupt("missing payload_f32 line"))?;
        if declared != manifest.payload_len() {
            return Err(corrupt(format!(
                "manifest shapes describe {} values but payload_f32 says {declared}",
                manifest.payload_len()
            )));
        }
        let body = &bytes[pos..];
        if body.len() != declared * 4 {
            return Err(corrupt(format!(
                "payload has {} bytes, expected {}",
                body.len(),
                declared * 4
            )));
        }
        let payload = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { manifest, payload })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(stack: &LayerStack<f32>, kind: &str, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_stack(kind, stack).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LayerStack<f32>> {
    Checkpoint::load(path)?.to_stack()
}
