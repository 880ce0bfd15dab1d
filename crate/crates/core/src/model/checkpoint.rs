//! Binary checkpoint: magic `THRD`, version, `key=value` header text,
//! global step, then a table of named row-major `f64` tensors
//! (little-endian). Optimizer moments are stored as `adam.m:<name>` and
//! `adam.v:<name>` entries.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"THRD";
const VERSION: u32 = 1;
const ADAM_T_KEY: &str = "adam_t";
const META_PREFIX: &str = "meta.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
    pub global_step: u64,
    /// Free-form provenance such as the vocabulary path.
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: &Model, optimizer: Option<&AdamState>, global_step: u64) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().clone(),
            optimizer: optimizer.cloned(),
            global_step,
            meta: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.config.clone(), self.params.clone())
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut header = self.config.to_pairs();
        if let Some(opt) = &self.optimizer {
            header.insert(ADAM_T_KEY.into(), opt.t.to_string());
        }
        for (k, v) in &self.meta {
            header.insert(format!("{META_PREFIX}{k}"), v.clone());
        }
        let text: String = header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(text.len() as u32).to_le_bytes())?;
        out.write_all(text.as_bytes())?;
        out.write_all(&self.global_step.to_le_bytes())?;

        let mut entries: Vec<(String, &Tensor)> =
            self.params.iter().map(|(_, n, t)| (n.to_string(), t)).collect();
        if let Some(opt) = &self.optimizer {
            for (i, (_, n, _)) in self.params.iter().enumerate() {
                entries.push((format!("adam.m:{n}"), &opt.m[i]));
                entries.push((format!("adam.v:{n}"), &opt.v[i]));
            }
        }
        out.write_all(&(entries.len() as u32).to_le_bytes())?;
        for (name, t) in entries {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.dims().len() as u32).to_le_bytes())?;
            for &d in t.dims() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            what: "checkpoint",
            reason,
        };
        let mut read = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            input.read_exact(&mut buf).map_err(|e| fmt(e.to_string()))?;
            Ok(buf)
        };
        let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().unwrap());
        let u64_at = |b: Vec<u8>| u64::from_le_bytes(b.try_into().unwrap());

        if read(4)? != MAGIC {
            return Err(fmt("bad magic".into()));
        }
        let version = u32_at(read(4)?);
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let len = u32_at(read(4)?) as usize;
        let text = String::from_utf8(read(len)?).map_err(|e| fmt(e.to_string()))?;
        let mut header = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt(format!("bad header line {line:?}")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let config = ModelConfig::from_pairs(&header)?;
        let global_step = u64_at(read(8)?);

        let count = u32_at(read(4)?) as usize;
        let mut params = ParamStore::new();
        let mut moments: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..count {
            let n = u32_at(read(4)?) as usize;
            let name = String::from_utf8(read(n)?).map_err(|e| fmt(e.to_string()))?;
            let rank = u32_at(read(4)?) as usize;
            let dims: Vec<usize> = (0..rank).map(|_| read(8).map(|b| u64_at(b) as usize)).collect::<Result<_>>()?;
            let numel: usize = dims.iter().product();
            let data = read(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(dims, data)?;
            if name.starts_with("adam.") {
                if moments.insert(name.clone(), t).is_some() {
                    return Err(fmt(format!("duplicate entry {name:?}")));
                }
            } else {
                params.insert(name, t)?;
            }
        }
        // validates names and shapes against the variant's layout
        Model::from_params(config.clone(), params.clone())?;

        let optimizer = match header.get(ADAM_T_KEY) {
            Some(t) => {
                let t = t.parse().map_err(|_| fmt(format!("bad {ADAM_T_KEY} {t:?}")))?;
                let mut m = Vec::new();
                let mut v = Vec::new();
                for (_, name, _) in params.iter() {
                    for (prefix, dst) in [("adam.m:", &mut m), ("adam.v:", &mut v)] {
                        let key = format!("{prefix}{name}");
                        dst.push(
                            moments
                                .remove(&key)
                                .ok_or_else(|| fmt(format!("missing optimizer entry {key:?}")))?,
                        );
                    }
                }
                Some(AdamState { m, v, t })
            }
            None => None,
        };
        if let Some(extra) = moments.keys().next() {
            return Err(fmt(format!("unexpected entry {extra:?}")));
        }
        let meta = header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(META_PREFIX).map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self {
            config,
            params,
            optimizer,
            global_step,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::super::Variant;
    use super::*;
    use crate::numerics::SeededRng;

    fn model() -> Model {
        let cfg = ModelConfig {
            variant: Variant::Vhred,
            vocab_size: 9,
            embed_dim: 2,
            hidden_dim: 3,
            latent_dim: 2,
            topic_dim: 0,
            topic_weight: 1.0,
            kl_anneal_steps: 100,
        };
        Model::init(cfg, &mut SeededRng::new(1)).unwrap()
    }

    #[test]
    fn roundtrip_with_optimizer_state() {
        let m = model();
        let mut opt = AdamState::zeros_like(m.params());
        opt.t = 17;
        opt.m[0].data_mut()[0] = 0.25;
        let mut ck = Checkpoint::new(&m, Some(&opt), 17);
        ck.meta.insert("vocab".into(), "/tmp/v.txt".into());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"THRD");
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn missing_parameter_is_rejected() {
        let m = model();
        let mut params = ParamStore::new();
        for (_, n, t) in m.params().iter().skip(1) {
            params.insert(n, t.clone()).unwrap();
        }
        let ck = Checkpoint {
            params,
            ..Checkpoint::new(&m, None, 0)
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let mut buf = Vec::new();
        Checkpoint::new(&model(), None, 0).write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(Checkpoint::read_from(buf.as_slice()), Err(Error::Format { .. })));
    }
}
