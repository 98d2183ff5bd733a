//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit. A SHA-256 of the
//! canonical body guards against truncation and hand edits.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::mlp::{BatchNorm, Dense, Mlp, MlpConfig};
use super::pipeline::Variant;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "cran-mlp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    norm: Option<NormRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NormRecord {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Body {
    format: String,
    version: u32,
    m: usize,
    k: usize,
    variant: Variant,
    config: MlpConfig,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<AdamState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    checksum: String,
    body: Body,
}

/// A model with the system size and variant it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub m: usize,
    pub k: usize,
    pub variant: Variant,
    pub model: Mlp,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_string(&self) -> Result<String> {
        let mut norms = self.model.norms.iter();
        let layers = self
            .model
            .layers
            .iter()
            .map(|d| LayerRecord {
                in_dim: d.in_dim,
                out_dim: d.out_dim,
                weight: d.weight.clone(),
                bias: d.bias.clone(),
                norm: norms.next().map(|bn| NormRecord {
                    gamma: bn.gamma.clone(),
                    beta: bn.beta.clone(),
                    running_mean: bn.running_mean.clone(),
                    running_var: bn.running_var.clone(),
                }),
            })
            .collect();
        let body = Body {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            m: self.m,
            k: self.k,
            variant: self.variant,
            config: self.model.config.clone(),
            layers,
            optimizer: self.optimizer.clone(),
        };
        if body.layers.iter().any(|l| {
            l.weight.iter().chain(&l.bias).any(|v| !v.is_finite())
                || l.norm.as_ref().is_some_and(|n| {
                    n.gamma.iter().chain(&n.beta).chain(&n.running_mean).chain(&n.running_var).any(|v| !v.is_finite())
                })
        }) {
            return Err(Error::Format("refusing to checkpoint non-finite parameters".into()));
        }
        let checksum = digest(&body)?;
        serde_json::to_string_pretty(&Envelope { checksum, body }).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let body = env.body;
        if body.format != FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", body.format)));
        }
        if body.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", body.version)));
        }
        if digest(&body)? != env.checksum {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        body.config.validate()?;
        let dims = body.config.layer_dims();
        if dims.len() != body.layers.len() {
            return Err(Error::Format("layer count disagrees with config".into()));
        }
        let hidden = body.config.hidden_width;
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for (l, (rec, &(fan_in, fan_out))) in body.layers.into_iter().zip(&dims).enumerate() {
            if rec.in_dim != fan_in || rec.out_dim != fan_out || rec.weight.len() != fan_in * fan_out || rec.bias.len() != fan_out {
                return Err(Error::Format(format!("layer {l} has inconsistent shapes")));
            }
            let wants_norm = body.config.batch_norm && l + 1 < dims.len();
            match (rec.norm, wants_norm) {
                (Some(n), true) => {
                    let ok = [&n.gamma, &n.beta, &n.running_mean, &n.running_var].iter().all(|v| v.len() == hidden)
                        && n.running_var.iter().all(|v| *v >= 0.0);
                    if !ok {
                        return Err(Error::Format(format!("layer {l} has malformed batch-norm state")));
                    }
                    norms.push(BatchNorm { gamma: n.gamma, beta: n.beta, running_mean: n.running_mean, running_var: n.running_var });
                }
                (None, false) => {}
                _ => return Err(Error::Format(format!("layer {l} batch-norm presence disagrees with config"))),
            }
            layers.push(Dense { in_dim: fan_in, out_dim: fan_out, weight: rec.weight, bias: rec.bias });
        }
        let model = Mlp { config: body.config, layers, norms, version: 0 };
        Ok(Self { m: body.m, k: body.k, variant: body.variant, model, optimizer: body.optimizer })
    }
}

fn digest(body: &Body) -> Result<String> {
    let canonical = serde_json::to_vec(body).map_err(|e| Error::Format(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_string()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::parse(&std::fs::read_to_string(path)?)
}
