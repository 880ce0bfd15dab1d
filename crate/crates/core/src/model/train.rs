use log::{debug, info};

use super::{Checkpoint, LossBreakdown, LossOptions, Model};
use crate::corpus::{Dialog, Turn};
use crate::error::{Error, Result};
use crate::decode::{greedy, ModelStepper};
use crate::numerics::{Adam, SeededRng};
use crate::topics::{topic_kl, TopicProjection, DEFAULT_KL_EPS};

/// Turns scored by the per-epoch topic divergence monitor.
const PROBE_TURNS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Total optimizer steps (the global step stops here).
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Steps per logged epoch; `None` means one pass over the training turns.
    pub epoch_steps: Option<u64>,
    /// Most recent utterances kept as context; `None` keeps all.
    pub max_context: Option<usize>,
    pub kl_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0002,
            steps: 20_000,
            batch_size: 16,
            seed: 0,
            clip_norm: 5.0,
            epoch_steps: None,
            max_context: None,
            kl_eps: DEFAULT_KL_EPS,
        }
    }
}

/// Means over the steps of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Global step at the end of the epoch.
    pub step: u64,
    pub ce: f64,
    pub kl_global: f64,
    /// Mean soft topic divergence of the training loss; NaN without the topic term.
    pub kl_local: f64,
    /// Mean unscaled KL (`d_t` times the TopicDiv term) between each probe
    /// context and its greedy predicted reply; NaN without a topic projection.
    pub topic_div: f64,
    /// Per-token validation cross-entropy with `z` from the prior.
    pub valid_ce: Option<f64>,
}

#[derive(Default)]
struct EpochAcc {
    steps: usize,
    ce: f64,
    kl_global: f64,
    topic: f64,
    topic_steps: usize,
}

pub struct Trainer {
    model: Model,
    adam: Adam,
    cfg: TrainConfig,
    topics: Option<TopicProjection>,
    train: Vec<Turn>,
    valid: Vec<Turn>,
    probe: Vec<Turn>,
    probe_len: usize,
    order: Vec<usize>,
    cursor: usize,
    shuffle_rng: SeededRng,
    noise_rng: SeededRng,
    step: u64,
    acc: EpochAcc,
    log: Vec<EpochLog>,
    best: Option<(f64, Checkpoint)>,
}

fn turns_of(dialogs: &[Dialog], max_context: Option<usize>) -> Vec<Turn> {
    dialogs.iter().flat_map(|d| d.turns(max_context)).collect()
}

impl Trainer {
    pub fn new(
        model: Model,
        cfg: TrainConfig,
        train: &[Dialog],
        valid: &[Dialog],
        topics: Option<TopicProjection>,
    ) -> Result<Self> {
        let adam = Adam::new(cfg.lr, model.params());
        Self::build(model, adam, 0, cfg, train, valid, topics)
    }

    /// Continues from a checkpoint, restoring optimizer moments and the step count.
    pub fn resume(
        ckpt: &Checkpoint,
        cfg: TrainConfig,
        train: &[Dialog],
        valid: &[Dialog],
        topics: Option<TopicProjection>,
    ) -> Result<Self> {
        let model = ckpt.model()?;
        let adam = match &ckpt.optimizer {
            Some(state) => Adam::with_state(cfg.lr, state.clone(), model.params())?,
            None => Adam::new(cfg.lr, model.params()),
        };
        Self::build(model, adam, ckpt.global_step, cfg, train, valid, topics)
    }

    fn build(
        model: Model,
        adam: Adam,
        step: u64,
        cfg: TrainConfig,
        train: &[Dialog],
        valid: &[Dialog],
        topics: Option<TopicProjection>,
    ) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(cfg.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", cfg.lr)));
        }
        if cfg.epoch_steps == Some(0) {
            return Err(Error::Config("epoch_steps must be >= 1".into()));
        }
        if model.config().variant.has_topic() && topics.is_none() {
            return Err(Error::Config("thred training requires a topic model".into()));
        }
        let train = turns_of(train, cfg.max_context);
        if train.is_empty() {
            return Err(Error::EmptyCorpus("no training turns".into()));
        }
        let valid = turns_of(valid, cfg.max_context);
        let probe: Vec<Turn> = if valid.is_empty() { &train } else { &valid }
            .iter()
            .take(PROBE_TURNS)
            .cloned()
            .collect();
        let probe_len = train.iter().map(|t| t.reply.len()).max().unwrap_or(1);
        let mut shuffle_rng = SeededRng::new(cfg.seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let noise_rng = shuffle_rng.fork();
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle_rng.shuffle(&mut order);
        Ok(Self {
            model,
            adam,
            cfg,
            topics,
            train,
            valid,
            probe,
            probe_len,
            order,
            cursor: 0,
            shuffle_rng,
            noise_rng,
            step,
            acc: EpochAcc::default(),
            log: Vec::new(),
            best: None,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn num_train_turns(&self) -> usize {
        self.train.len()
    }

    /// Current parameters with optimizer state.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.model, Some(self.adam.state()), self.step)
    }

    /// Checkpoint with the lowest validation (or training) CE seen at an epoch end.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best.as_ref().map(|(_, c)| c)
    }

    fn opts(&self) -> LossOptions<'_> {
        LossOptions {
            topics: self.topics.as_ref(),
            kl_eps: self.cfg.kl_eps,
        }
    }

    /// One optimizer step. On divergence the parameters are left untouched.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let end = (self.cursor + self.cfg.batch_size).min(self.train.len());
        let batch: Vec<Turn> = self.order[self.cursor..end].iter().map(|&i| self.train[i].clone()).collect();
        self.cursor = end;
        let pass_done = self.cursor == self.train.len();
        if pass_done {
            self.cursor = 0;
            self.shuffle_rng.shuffle(&mut self.order);
        }

        let mut noise = self.noise_rng.clone();
        let (loss, mut grads) = self.model.loss_and_grads(&batch, self.step, &self.opts(), &mut noise)?;
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::Divergence {
                component: "gradient",
                value: norm,
            });
        }
        self.noise_rng = noise;
        if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            grads.scale(self.cfg.clip_norm / norm);
        }
        self.adam.step(self.model.params_mut(), &grads);
        self.step += 1;

        self.acc.steps += 1;
        self.acc.ce += loss.ce;
        self.acc.kl_global += loss.kl_global;
        if loss.topic_pairs > 0 {
            self.acc.topic += loss.topic_div;
            self.acc.topic_steps += 1;
        }
        let epoch_done = match self.cfg.epoch_steps {
            Some(n) => self.acc.steps as u64 >= n,
            None => pass_done,
        };
        if epoch_done {
            self.finish_epoch()?;
        }
        Ok(loss)
    }

    /// Steps until the configured total is reached, closing a final partial epoch.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.cfg.steps {
            let l = self.step()?;
            if self.step.is_multiple_of(100) {
                debug!("step {} ce {:.4} kl {:.4}", self.step, l.ce, l.kl_global);
            }
        }
        if self.acc.steps > 0 {
            self.finish_epoch()?;
        }
        Ok(())
    }

    /// Per-token CE of `turns` with `z` drawn from the prior.
    pub fn evaluate_ce(&self, turns: &[Turn]) -> Result<f64> {
        let mut rng = SeededRng::new(self.cfg.seed);
        let (mut nll, mut n) = (0.0, 0usize);
        for t in turns {
            let lp = self.model.token_log_probs(&t.context, &t.reply, &mut rng)?;
            nll -= lp.iter().sum::<f64>();
            n += lp.len();
        }
        Ok(nll / n.max(1) as f64)
    }

    /// Mean unscaled KL between probe contexts and their greedy replies,
    /// or NaN without a topic projection or when every pair is skipped.
    /// Left unscaled so logs from topic spaces of different widths compare.
    pub fn probe_topic_div(&self) -> Result<f64> {
        let Some(topics) = &self.topics else {
            return Ok(f64::NAN);
        };
        let (mut sum, mut n) = (0.0, 0usize);
        for t in &self.probe {
            let stepper = ModelStepper::new(&self.model, &t.context, self.cfg.seed)?;
            let reply = greedy(&stepper, self.probe_len)?;
            let ctx: Vec<_> = t.context.iter().flat_map(|u| u.words().iter().copied()).collect();
            let tc = topics.topic_vector(&ctx);
            let tr = topics.topic_vector(reply.words());
            if tc.matched_tokens > 0 && tr.matched_tokens > 0 {
                sum += topic_kl(&tc, &tr, self.cfg.kl_eps)? * tc.dim() as f64;
                n += 1;
            }
        }
        Ok(if n > 0 { sum / n as f64 } else { f64::NAN })
    }

    fn finish_epoch(&mut self) -> Result<()> {
        let acc = std::mem::take(&mut self.acc);
        let k = acc.steps as f64;
        let valid_ce = if self.valid.is_empty() {
            None
        } else {
            Some(self.evaluate_ce(&self.valid)?)
        };
        let entry = EpochLog {
            epoch: self.log.len() + 1,
            step: self.step,
            ce: acc.ce / k,
            kl_global: acc.kl_global / k,
            kl_local: if acc.topic_steps > 0 {
                acc.topic / acc.topic_steps as f64
            } else {
                f64::NAN
            },
            topic_div: self.probe_topic_div()?,
            valid_ce,
        };
        info!(
            "epoch {} step {} ce {:.4} kl_global {:.4} topic_div {:.6} valid_ce {:?}",
            entry.epoch, entry.step, entry.ce, entry.kl_global, entry.topic_div, entry.valid_ce
        );
        let score = valid_ce.unwrap_or(entry.ce);
        if self.best.as_ref().is_none_or(|(b, _)| score < *b) {
            self.best = Some((score, self.checkpoint()));
        }
        self.log.push(entry);
        Ok(())
    }
}
