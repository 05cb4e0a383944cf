//! Binary checkpoint container.
//!
//! Layout (integers and reals little-endian):
//!
//! ```text
//! "HHFC" | version u32 | config text (u32 length, utf-8) | data_dim u32
//! epoch u64 | adam step u64 | lr, beta1, beta2, eps_hat f64
//! best validation ELBO f64 | best epoch u64 | epochs since improvement u64
//! record count u32
//! records: name (u32 length, utf-8) | rank u32 | dims u32... | f64 payload
//! ```
//!
//! Record names are the parameter names under the prefixes `param/`,
//! `adam.m/`, `adam.v/` and, once validation has improved, `best/`. Random
//! streams are keyed by epoch, so `epoch` is also the stream position.

use std::collections::BTreeMap;
use std::path::Path;

use hfvae::model::{ModelConfig, VaeParams};
use hfvae::optim::{AdamConfig, AdamState, EarlyStopState};
use hfvae::{Shape, TensorValue};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"HHFC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub data_dim: usize,
    /// Last completed epoch.
    pub epoch: u64,
    pub params: VaeParams,
    pub adam: AdamState,
    pub early: EarlyStopState<VaeParams>,
}

impl Checkpoint {
    pub fn model_config(&self) -> ModelConfig {
        model_config(&self.config, self.data_dim)
    }

    /// Parameters with the best validation ELBO, or the current ones if
    /// validation never ran.
    pub fn best_params(&self) -> &VaeParams {
        self.early.best_checkpoint.as_ref().unwrap_or(&self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        put_str(&mut w, &self.config.to_text());
        put_u32(&mut w, self.data_dim as u32);
        put_u64(&mut w, self.epoch);
        put_u64(&mut w, self.adam.step);
        let a = &self.adam.config;
        for x in [a.lr, a.beta1, a.beta2, a.eps_hat, self.early.best_validation_elbo] {
            put_f64(&mut w, x);
        }
        put_u64(&mut w, self.early.best_epoch as u64);
        put_u64(&mut w, self.early.epochs_since_improvement as u64);

        let mut groups = vec![("param", &self.params), ("adam.m", &self.adam.m), ("adam.v", &self.adam.v)];
        if let Some(best) = &self.early.best_checkpoint {
            groups.push(("best", best));
        }
        let records: Vec<(String, &TensorValue)> = groups
            .into_iter()
            .flat_map(|(prefix, p)| p.named().into_iter().map(move |(name, t)| (format!("{prefix}/{name}"), t)))
            .collect();
        put_u32(&mut w, records.len() as u32);
        for (name, t) in records {
            put_str(&mut w, &name);
            put_u32(&mut w, t.shape().rank() as u32);
            for &d in t.shape().dims() {
                put_u32(&mut w, d as u32);
            }
            for &x in t.data() {
                put_f64(&mut w, x);
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(hfvae::Error::BadMagic {
                what: "checkpoint",
                expected: u32::from_be_bytes(*MAGIC),
                found: u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]),
            }
            .into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(hfvae::Error::Version {
                expected: VERSION,
                found: version,
            }
            .into());
        }
        let config = RunConfig::parse(&r.string()?)?;
        let data_dim = r.u32()? as usize;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let adam_config = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps_hat: r.f64()?,
        };
        let best_validation_elbo = r.f64()?;
        let best_epoch = r.u64()? as usize;
        let epochs_since_improvement = r.u64()? as usize;

        let mut records = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let shape = Shape::new(dims)?;
            let payload = r.take(shape.numel().saturating_mul(8))?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if records.insert(name.clone(), TensorValue::new(shape, data)?).is_some() {
                return Err(CliError::Format(format!("duplicate checkpoint record `{name}`")));
            }
        }
        if r.at != bytes.len() {
            return Err(CliError::Format(format!("{} trailing bytes after checkpoint records", bytes.len() - r.at)));
        }

        let template = VaeParams::init(&model_config(&config, data_dim), &mut ChaCha8Rng::seed_from_u64(0))?;
        let has_best = records.keys().any(|k| k.starts_with("best/"));
        let mut take = |prefix: &str| -> Result<VaeParams> { fill(&template, prefix, &mut records) };
        let params = take("param")?;
        let m = take("adam.m")?;
        let v = take("adam.v")?;
        let best = if has_best { Some(take("best")?) } else { None };
        if let Some(extra) = records.keys().next() {
            return Err(CliError::Format(format!("unexpected checkpoint record `{extra}`")));
        }
        let mut early = EarlyStopState::new(config.lookahead, config.max_epochs);
        early.best_validation_elbo = best_validation_elbo;
        early.best_epoch = best_epoch;
        early.epochs_since_improvement = epochs_since_improvement;
        early.best_checkpoint = best;
        Ok(Checkpoint {
            config,
            data_dim,
            epoch,
            params,
            adam: AdamState {
                step,
                config: adam_config,
                m,
                v,
            },
            early,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn model_config(config: &RunConfig, data_dim: usize) -> ModelConfig {
    ModelConfig::new(data_dim, config.latent, config.hidden, config.flow_length, config.likelihood)
}

/// Moves the records under `prefix` into a copy of `template`.
fn fill(template: &VaeParams, prefix: &str, records: &mut BTreeMap<String, TensorValue>) -> Result<VaeParams> {
    let names: Vec<String> = template.named().into_iter().map(|(n, _)| n).collect();
    let mut out = template.clone();
    for (name, slot) in names.iter().zip(out.tensors_mut()) {
        let key = format!("{prefix}/{name}");
        let t = records
            .remove(&key)
            .ok_or_else(|| CliError::Format(format!("checkpoint is missing `{key}`")))?;
        if t.shape() != slot.shape() {
            return Err(CliError::Format(format!("`{key}` has shape {} but the model needs {}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    Ok(out)
}

fn put_u32(w: &mut Vec<u8>, x: u32) {
    w.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, x: u64) {
    w.extend_from_slice(&x.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, x: f64) {
    w.extend_from_slice(&x.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.saturating_add(n);
        let out = self.bytes.get(self.at..end).ok_or(hfvae::Error::Truncated {
            what: "checkpoint",
            expected: end,
            found: self.bytes.len(),
        })?;
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CliError::Format(format!("invalid utf-8 in checkpoint: {e}")))
    }
}
