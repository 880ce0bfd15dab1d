//! Greedy and beam-search reply generation.
//!
//! Search runs against the small [`StepModel`] interface so it can be
//! exercised on hand-built distributions as well as on a trained [`Model`].
//! Banned tokens are masked to `-inf` before the log-softmax, so the
//! remaining tokens are renormalised among themselves.

use std::cmp::Ordering;

use crate::corpus::{TokenId, Utterance, EOU, PAD, SOS, UNK};
use crate::error::{Error, Result};
use crate::model::{DecoderSession, DecoderState, Model};
use crate::numerics::SeededRng;

pub const DEFAULT_BEAM: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 50;

/// Tokens a trained model may never emit: padding, unknown and start markers.
pub const BANNED: [TokenId; 3] = [PAD, UNK, SOS];

/// Autoregressive next-token scorer.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn initial_state(&self) -> Self::State;

    /// Token fed before the first prediction.
    fn start_token(&self) -> TokenId {
        SOS
    }

    /// Unnormalised scores for the token after `prev`, and the advanced state.
    fn logits(&self, state: &Self::State, prev: TokenId) -> Result<(Vec<f64>, Self::State)>;

    fn banned(&self) -> &[TokenId] {
        &[]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; ends in [`EOU`] iff `finished`.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Cumulative log-probability divided by token count.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    /// Tokens without the terminating [`EOU`].
    pub fn words(&self) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&EOU, rest)) => rest,
            _ => &self.tokens,
        }
    }

    pub fn into_utterance(self) -> Result<Utterance> {
        Utterance::new(self.tokens)
    }
}

/// Log-softmax over the tokens that are not banned; banned entries are `-inf`.
pub fn masked_log_probs(logits: &[f64], banned: &[TokenId]) -> Vec<f64> {
    let mut out = logits.to_vec();
    for &b in banned {
        if let Some(v) = out.get_mut(b as usize) {
            *v = f64::NEG_INFINITY;
        }
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return out;
    }
    let lse = max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    out.iter_mut().for_each(|v| *v -= lse);
    out
}

fn check_args(beam: usize, max_len: usize) -> Result<()> {
    if beam == 0 {
        return Err(Error::Config("beam width must be >= 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be >= 1".into()));
    }
    Ok(())
}

/// Emits the most probable token at each step (ties go to the lowest ID)
/// until [`EOU`] or `max_len` tokens.
pub fn greedy<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis> {
    check_args(1, max_len)?;
    let mut state = model.initial_state();
    let mut prev = model.start_token();
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let (logits, next) = model.logits(&state, prev)?;
        let lp = masked_log_probs(&logits, model.banned());
        let mut best: Option<(usize, f64)> = None;
        for (tok, &l) in lp.iter().enumerate() {
            let cum = hyp.log_prob + l;
            if cum > f64::NEG_INFINITY && best.is_none_or(|(_, b)| cum > b) {
                best = Some((tok, cum));
            }
        }
        let (tok, cum) = best.ok_or_else(|| Error::Contract("every token is banned".into()))?;
        let tok = tok as TokenId;
        hyp.tokens.push(tok);
        hyp.log_prob = cum;
        if tok == EOU {
            hyp.finished = true;
            break;
        }
        state = next;
        prev = tok;
    }
    Ok(hyp)
}

struct Entry<S> {
    hyp: Hypothesis,
    state: S,
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then(b.log_prob.total_cmp(&a.log_prob))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Keeps the `beam` best hypotheses by length-normalised score at every step;
/// finished hypotheses stay in the pool and compete with extended ones.
/// Returns the final beam best first.
pub fn beam_search<M: StepModel>(model: &M, beam: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    check_args(beam, max_len)?;
    let mut pool = vec![Entry {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: model.initial_state(),
    }];
    for _ in 0..max_len {
        // candidates reference their parent so states are only cloned for survivors
        let mut cands: Vec<(Hypothesis, usize, Option<usize>)> = Vec::new();
        let mut next_states = Vec::with_capacity(pool.len());
        for (pi, e) in pool.iter().enumerate() {
            if e.hyp.finished {
                cands.push((e.hyp.clone(), pi, None));
                next_states.push(None);
                continue;
            }
            let prev = e.hyp.tokens.last().copied().unwrap_or_else(|| model.start_token());
            let (logits, next) = model.logits(&e.state, prev)?;
            let lp = masked_log_probs(&logits, model.banned());
            next_states.push(Some(next));
            for (tok, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = e.hyp.tokens.clone();
                tokens.push(tok as TokenId);
                cands.push((
                    Hypothesis {
                        tokens,
                        log_prob: e.hyp.log_prob + l,
                        finished: tok as TokenId == EOU,
                    },
                    pi,
                    Some(tok),
                ));
            }
        }
        if cands.is_empty() {
            return Err(Error::Contract("every token is banned".into()));
        }
        cands.sort_by(|a, b| rank(&a.0, &b.0));
        cands.truncate(beam);
        pool = cands
            .into_iter()
            .map(|(hyp, pi, extended)| {
                let state = match extended {
                    Some(_) => next_states[pi].clone().expect("extended parents have a state"),
                    None => pool[pi].state.clone(),
                };
                Entry { hyp, state }
            })
            .collect();
        if pool.iter().all(|e| e.hyp.finished) {
            break;
        }
    }
    Ok(pool.into_iter().map(|e| e.hyp).collect())
}

/// A trained model conditioned on one context and a fixed latent draw.
pub struct ModelStepper<'m> {
    session: DecoderSession<'m>,
}

impl<'m> ModelStepper<'m> {
    /// Encodes `context`; latent variants draw `z` once from the prior using `seed`.
    pub fn new(model: &'m Model, context: &[Utterance], seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let (c, z) = model.condition(context, &mut rng)?;
        Ok(Self {
            session: model.decoder_session(&c, z.as_ref())?,
        })
    }
}

impl StepModel for ModelStepper<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.session.vocab_size()
    }

    fn initial_state(&self) -> DecoderState {
        self.session.initial_state()
    }

    fn logits(&self, state: &DecoderState, prev: TokenId) -> Result<(Vec<f64>, DecoderState)> {
        self.session.step(state, prev)
    }

    fn banned(&self) -> &[TokenId] {
        &BANNED
    }
}

/// Best reply for `context`: greedy when `beam == 1`, beam search otherwise.
pub fn generate(model: &Model, context: &[Utterance], beam: usize, max_len: usize, seed: u64) -> Result<Hypothesis> {
    let stepper = ModelStepper::new(model, context, seed)?;
    if beam == 1 {
        greedy(&stepper, max_len)
    } else {
        Ok(beam_search(&stepper, beam, max_len)?.swap_remove(0))
    }
}
