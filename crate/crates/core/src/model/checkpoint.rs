//! Checkpoint file layout:
//!
//! ```text
//! lencap-checkpoint 1\n
//! {json header}\n
//! <tensor 0 as little-endian f32><tensor 1>...
//! ```
//!
//! The header carries the architecture config, model kind, vocabulary hash,
//! level plan and a directory of `(name, shape)` in blob order. Loading
//! rebuilds the expected layout from the config and rejects any tensor whose
//! name or shape disagrees.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{layout, ModelConfig, ModelParams};
use super::ModelError;
use crate::levels::LengthLevelPlan;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "lencap-checkpoint 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Masked-LM objective, mask-predict-update decoding.
    NonAutoregressive,
    /// Teacher-forcing objective, greedy left-to-right decoding.
    Autoregressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: ModelKind,
    model: ModelConfig,
    vocab_hash: String,
    plan: LengthLevelPlan,
    iteration: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub plan: LengthLevelPlan,
    pub vocab_hash: String,
    pub iteration: usize,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            model: self.params.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            plan: self.plan.clone(),
            iteration: self.iteration,
            tensors: self
                .params
                .specs
                .iter()
                .map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone() })
                .collect(),
        };
        let mut out = Vec::with_capacity(self.params.num_scalars() * 4 + 4096);
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
        out.push(b'\n');
        for t in &self.params.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        let nl1 = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing magic line".into()))?;
        if &bytes[..nl1] != CHECKPOINT_MAGIC.as_bytes() {
            return Err(bad(format!("bad magic, expected {CHECKPOINT_MAGIC:?}")));
        }
        let rest = &bytes[nl1 + 1..];
        let nl2 = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&rest[..nl2]).map_err(|e| bad(format!("header: {e}")))?;
        header.model.validate().map_err(|e| bad(e.join("; ")))?;
        if header.plan.num_levels() != header.model.num_levels {
            return Err(bad(format!(
                "plan has {} levels, model has {} level embeddings",
                header.plan.num_levels(),
                header.model.num_levels
            )));
        }

        let (_, specs) = layout(&header.model);
        if specs.len() != header.tensors.len() {
            return Err(bad(format!("expected {} tensors, header lists {}", specs.len(), header.tensors.len())));
        }
        for (s, e) in specs.iter().zip(&header.tensors) {
            if s.name != e.name || s.shape != e.shape {
                return Err(bad(format!("tensor {} {:?} does not match expected {} {:?}", e.name, e.shape, s.name, s.shape)));
            }
        }
        let blob = &rest[nl2 + 1..];
        let expected: usize = specs.iter().map(|s| s.shape.iter().product::<usize>() * 4).sum();
        if blob.len() != expected {
            return Err(bad(format!("tensor data is {} bytes, header implies {expected}", blob.len())));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(specs.len());
        for s in &specs {
            let n: usize = s.shape.iter().product();
            let data = blob[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += 4 * n;
            let t = Tensor::new(s.shape.clone(), data).map_err(|e| bad(e.to_string()))?;
            if !t.is_finite() {
                return Err(bad(format!("tensor {} holds non-finite values", s.name)));
            }
            tensors.push(t);
        }
        let params = ModelParams::from_tensors(header.model, tensors).map_err(bad)?;
        Ok(Checkpoint {
            kind: header.kind,
            plan: header.plan,
            vocab_hash: header.vocab_hash,
            iteration: header.iteration,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| ModelError::Io(dir.display().to_string(), e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| ModelError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::Io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            ModelError::Checkpoint(m) => ModelError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let mut cfg = ModelConfig::new(10, 2);
        cfg.d_model = 8;
        cfg.heads = 2;
        cfg.ff_dim = 16;
        cfg.layers = 1;
        Checkpoint {
            kind: ModelKind::NonAutoregressive,
            plan: LengthLevelPlan::custom(vec![(1, 3), (4, 6)]).unwrap(),
            vocab_hash: "abc".into(),
            iteration: 7,
            params: ModelParams::init(cfg, 1),
        }
    }

    #[test]
    fn round_trip() {
        let c = tiny();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_corruption() {
        let c = tiny();
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());

        // shape in the header disagrees with the architecture config
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let tampered = text.replacen("\"shape\":[10,8]", "\"shape\":[8,10]", 1);
        assert!(Checkpoint::from_bytes(tampered.as_bytes()).unwrap_err().to_string().contains("embeddings.word"));
    }
}
