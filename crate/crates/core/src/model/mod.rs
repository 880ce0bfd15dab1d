//! The four-layer hierarchical encoder-decoder (projection, bidirectional
//! utterance encoder, context recurrence, decoder) with an optional
//! conditional latent variable and topic-divergence term.
//!
//! SEQ2SEQ, HRED and VHRED are ablations of the same parameter layout:
//!
//! | variant   | context          | latent | topic term |
//! |-----------|------------------|--------|------------|
//! | `seq2seq` | one flat utterance | no   | no         |
//! | `hred`    | hierarchical     | no     | no         |
//! | `vhred`   | hierarchical     | yes    | no         |
//! | `thred`   | hierarchical     | yes    | yes        |

mod checkpoint;
mod network;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use checkpoint::Checkpoint;
pub use network::{DecoderSession, DecoderState, LossBreakdown, LossOptions};
pub use train::{EpochLog, TrainConfig, Trainer};

use crate::corpus::NUM_SPECIALS;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, SeededRng, Tensor};

/// Floor added to softplus variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Seq2Seq,
    Hred,
    Vhred,
    Thred,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Seq2Seq, Variant::Hred, Variant::Vhred, Variant::Thred];

    pub fn has_latent(self) -> bool {
        matches!(self, Variant::Vhred | Variant::Thred)
    }

    pub fn has_topic(self) -> bool {
        self == Variant::Thred
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Seq2Seq => "seq2seq",
            Variant::Hred => "hred",
            Variant::Vhred => "vhred",
            Variant::Thred => "thred",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected seq2seq, hred, vhred or thred)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// `d_z`; ignored by variants without a latent.
    pub latent_dim: usize,
    /// `d_t`, the topic rank; ignored by variants without the topic term.
    pub topic_dim: usize,
    /// Weight of the topic divergence term against the global objective.
    pub topic_weight: f64,
    /// Linear KL warm-up length in steps; 0 disables annealing.
    pub kl_anneal_steps: u64,
}

impl ModelConfig {
    /// Full-scale sizes; `vocab_size` still has to be set from the vocabulary.
    pub fn full_scale(variant: Variant, vocab_size: usize) -> Self {
        Self {
            variant,
            vocab_size,
            embed_dim: 500,
            hidden_dim: 500,
            latent_dim: 100,
            topic_dim: 40,
            topic_weight: 1.0,
            kl_anneal_steps: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= NUM_SPECIALS {
            return Err(Error::Config(format!(
                "vocab_size must exceed the {NUM_SPECIALS} reserved tokens, got {}",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("embed_dim and hidden_dim must be >= 1".into()));
        }
        if self.variant.has_latent() && self.latent_dim == 0 {
            return Err(Error::Config(format!("{} requires latent_dim > 0", self.variant)));
        }
        if self.variant.has_topic() && self.topic_dim == 0 {
            return Err(Error::Config("thred requires topic_dim > 0".into()));
        }
        if !(self.topic_weight >= 0.0 && self.topic_weight.is_finite()) {
            return Err(Error::Config(format!(
                "topic_weight must be finite and >= 0, got {}",
                self.topic_weight
            )));
        }
        Ok(())
    }

    /// Latent width actually wired into the decoder (0 without a latent).
    pub fn effective_latent(&self) -> usize {
        if self.variant.has_latent() {
            self.latent_dim
        } else {
            0
        }
    }

    /// `min(1, step / kl_anneal_steps)`.
    pub fn anneal(&self, step: u64) -> f64 {
        if self.kl_anneal_steps == 0 {
            1.0
        } else {
            (step as f64 / self.kl_anneal_steps as f64).min(1.0)
        }
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        [
            ("variant", self.variant.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("topic_dim", self.topic_dim.to_string()),
            ("topic_weight", self.topic_weight.to_string()),
            ("kl_anneal_steps", self.kl_anneal_steps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Reads the keys written by [`ModelConfig::to_pairs`]; other keys are left alone.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = pairs
                .get(key)
                .ok_or_else(|| Error::Config(format!("missing model key {key:?}")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("bad value {raw:?} for {key:?}")))
        }
        let cfg = Self {
            variant: get::<String>(pairs, "variant")?.parse()?,
            vocab_size: get(pairs, "vocab_size")?,
            embed_dim: get(pairs, "embed_dim")?,
            hidden_dim: get(pairs, "hidden_dim")?,
            latent_dim: get(pairs, "latent_dim")?,
            topic_dim: get(pairs, "topic_dim")?,
            topic_weight: get(pairs, "topic_weight")?,
            kl_anneal_steps: get(pairs, "kl_anneal_steps")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Diagonal Gaussian `N(mu, diag(var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl LatentGaussian {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Result<Tensor> {
        crate::numerics::gaussian_sample(
            &Tensor::row(self.mu.clone()),
            &Tensor::row(self.var.clone()),
            rng,
        )
    }

    /// Log density at `z`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mu
            .iter()
            .zip(&self.var)
            .zip(z)
            .map(|((m, v), x)| -0.5 * (ln_2pi + v.ln() + (x - m) * (x - m) / v))
            .sum()
    }
}

/// Closed-form `KL[q || p]` between diagonal Gaussians.
pub fn gaussian_kl(q: &LatentGaussian, p: &LatentGaussian) -> Result<f64> {
    let n = q.dim();
    if q.var.len() != n || p.mu.len() != n || p.var.len() != n {
        return Err(Error::shape("gaussian_kl", &[1, n], &[1, p.dim()]));
    }
    if let Some(v) = q.var.iter().chain(&p.var).find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("variance must be > 0, got {v}")));
    }
    let mut kl = 0.0;
    for i in 0..n {
        let (mq, vq, mp, vp) = (q.mu[i], q.var[i], p.mu[i], p.var[i]);
        let d = mq - mp;
        kl += 0.5 * (vp / vq).ln() + (vq + d * d) / (2.0 * vp) - 0.5;
    }
    Ok(kl)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmIds {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GaussIds {
    pub mu_w: ParamId,
    pub mu_b: ParamId,
    pub var_w: ParamId,
    pub var_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamIds {
    pub embedding: ParamId,
    pub enc_fwd: LstmIds,
    pub enc_bwd: LstmIds,
    pub context: LstmIds,
    pub prior: Option<GaussIds>,
    pub posterior: Option<GaussIds>,
    pub decoder: LstmIds,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Names and shapes of every parameter of a configuration, in storage order.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, [usize; 2])> {
    let (v, e, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
    let dz = cfg.effective_latent();
    let mut out = vec![("embedding".to_string(), [v, e])];
    let mut lstm = |name: &str, input: usize| {
        out.push((format!("{name}.w_x"), [input, 4 * h]));
        out.push((format!("{name}.w_h"), [h, 4 * h]));
        out.push((format!("{name}.bias"), [1, 4 * h]));
    };
    lstm("encoder.fwd", e);
    lstm("encoder.bwd", e);
    lstm("context", 2 * h);
    lstm("decoder", e + h + dz);
    if dz > 0 {
        for (name, input) in [("prior", h), ("posterior", 3 * h)] {
            for head in ["mu", "var"] {
                out.push((format!("{name}.{head}.weight"), [input, dz]));
                out.push((format!("{name}.{head}.bias"), [1, dz]));
            }
        }
    }
    out.push(("output.weight".to_string(), [h, v]));
    out.push(("output.bias".to_string(), [1, v]));
    out
}

/// A configured network and its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

impl Model {
    /// Fresh parameters: recurrent and projection weights uniform in
    /// `±1/sqrt(hidden_dim)`, biases zero except the forget gate (1).
    pub fn init(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let bound = 1.0 / (h as f64).sqrt();
        let mut params = ParamStore::new();
        for (name, [r, c]) in parameter_layout(&config) {
            let value = if name.ends_with(".bias") {
                let mut b = Tensor::zeros(r, c);
                if is_lstm(&name) {
                    b.data_mut()[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
                }
                b
            } else {
                let data = (0..r * c).map(|_| rng.uniform_range(-bound, bound)).collect();
                Tensor::new(vec![r, c], data)?
            };
            params.insert(name, value)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters; every name of the layout must be present
    /// with the right shape and nothing else may be.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = parameter_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} expects {} parameter tensors, got {}",
                config.variant,
                layout.len(),
                params.len()
            )));
        }
        for (name, dims) in &layout {
            let t = params
                .by_name(name)
                .ok_or_else(|| Error::Contract(format!("missing parameter {name:?}")))?;
            if t.dims() != dims {
                return Err(Error::Contract(format!(
                    "parameter {name:?} has shape {:?}, expected {dims:?}",
                    t.dims()
                )));
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let lstm = |n: &str| LstmIds {
            w_x: id(&format!("{n}.w_x")),
            w_h: id(&format!("{n}.w_h")),
            bias: id(&format!("{n}.bias")),
        };
        let gauss = |n: &str| GaussIds {
            mu_w: id(&format!("{n}.mu.weight")),
            mu_b: id(&format!("{n}.mu.bias")),
            var_w: id(&format!("{n}.var.weight")),
            var_b: id(&format!("{n}.var.bias")),
        };
        let latent = config.effective_latent() > 0;
        let ids = ParamIds {
            embedding: id("embedding"),
            enc_fwd: lstm("encoder.fwd"),
            enc_bwd: lstm("encoder.bwd"),
            context: lstm("context"),
            prior: latent.then(|| gauss("prior")),
            posterior: latent.then(|| gauss("posterior")),
            decoder: lstm("decoder"),
            out_w: id("output.weight"),
            out_b: id("output.bias"),
        };
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }
}

fn is_lstm(name: &str) -> bool {
    ["encoder.fwd.", "encoder.bwd.", "context.", "decoder."]
        .iter()
        .any(|p| name.starts_with(p))
}
