//! Forward passes (graph and plain-tensor) and loss assembly.

use super::{GaussIds, LatentGaussian, LstmIds, Model, VARIANCE_FLOOR};
use crate::corpus::{TokenId, Turn, Utterance, SOS};
use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample_var, sigmoid, Axis, Graph, ParamGrads, SeededRng, Tensor, Var};
use crate::topics::{topic_kl_var, TopicProjection, DEFAULT_KL_EPS};

/// Extra inputs of the loss that are not model parameters.
#[derive(Debug, Clone, Copy)]
pub struct LossOptions<'t> {
    /// Required for the topic term; ignored by other variants.
    pub topics: Option<&'t TopicProjection>,
    pub kl_eps: f64,
}

impl Default for LossOptions<'_> {
    fn default() -> Self {
        Self {
            topics: None,
            kl_eps: DEFAULT_KL_EPS,
        }
    }
}

/// Batch loss components. `total = ce + anneal * kl_global + lambda * kl_local`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean negative log-likelihood per target token.
    pub ce: f64,
    /// Mean latent KL per example.
    pub kl_global: f64,
    /// Topic divergence summed over evaluated examples, divided by batch size.
    pub kl_local: f64,
    /// Mean topic divergence over examples whose context has content words.
    pub topic_div: f64,
    pub tokens: usize,
    pub topic_pairs: usize,
}

struct ExampleParts {
    nll: f64,
    kl_global: f64,
    kl_local: Option<f64>,
}

/// Recurrent state of the decoder during step-wise generation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Decoder conditioned on a fixed context state and latent sample, stepping
/// one token at a time without a graph.
#[derive(Debug, Clone)]
pub struct DecoderSession<'m> {
    model: &'m Model,
    token_proj: Tensor,
    cond_proj: Vec<f64>,
}

impl Model {
    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(t) => Err(Error::Contract(format!(
                "token ID {t} out of range for vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// Runs an LSTM over the rows of `xs` (`T x in`) and returns the hidden
    /// state after each step, in processing order.
    fn lstm<'p>(&'p self, g: &mut Graph<'p>, ids: LstmIds, xs: Var, reverse: bool) -> Result<Vec<Var>> {
        let h = self.config.hidden_dim;
        let w_x = g.param(&self.params, ids.w_x);
        let w_h = g.param(&self.params, ids.w_h);
        let bias = g.param(&self.params, ids.bias);
        let pre = g.matmul(xs, w_x)?;
        let pre = g.add(pre, bias)?;
        let steps = g.value(xs).rows();
        let mut order: Vec<usize> = (0..steps).collect();
        if reverse {
            order.reverse();
        }
        let mut state: Option<(Var, Var)> = None;
        let mut out = Vec::with_capacity(steps);
        for t in order {
            let mut a = g.slice(pre, Axis::Rows, t, 1)?;
            if let Some((hp, _)) = state {
                let rec = g.matmul(hp, w_h)?;
                a = g.add(a, rec)?;
            }
            let i = g.slice(a, Axis::Cols, 0, h)?;
            let i = g.sigmoid(i);
            let gg = g.slice(a, Axis::Cols, 2 * h, h)?;
            let gg = g.tanh(gg);
            let o = g.slice(a, Axis::Cols, 3 * h, h)?;
            let o = g.sigmoid(o);
            let mut c = g.mul(i, gg)?;
            if let Some((_, cp)) = state {
                let f = g.slice(a, Axis::Cols, h, h)?;
                let f = g.sigmoid(f);
                let kept = g.mul(f, cp)?;
                c = g.add(c, kept)?;
            }
            let tc = g.tanh(c);
            let hn = g.mul(o, tc)?;
            state = Some((hn, c));
            out.push(hn);
        }
        Ok(out)
    }

    /// Concatenated final forward and backward states (`1 x 2H`).
    pub(crate) fn utterance_var<'p>(&'p self, g: &mut Graph<'p>, tokens: &[TokenId]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Contract("cannot encode an empty utterance".into()));
        }
        self.check_tokens(tokens)?;
        let emb = g.param(&self.params, self.ids.embedding);
        let rows: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let xs = g.gather_rows(emb, &rows)?;
        let fwd = *self.lstm(g, self.ids.enc_fwd, xs, false)?.last().unwrap();
        let bwd = *self.lstm(g, self.ids.enc_bwd, xs, true)?.last().unwrap();
        g.concat(&[fwd, bwd], Axis::Cols)
    }

    /// Context state `c` (`1 x H`). SEQ2SEQ reads the whole context as one
    /// flat utterance; the other variants encode each utterance separately.
    pub(crate) fn context_var<'p>(&'p self, g: &mut Graph<'p>, context: &[Utterance]) -> Result<Var> {
        if context.is_empty() {
            return Err(Error::Contract("context has no utterances".into()));
        }
        let vecs = if self.config.variant == super::Variant::Seq2Seq {
            let flat: Vec<TokenId> = context.iter().flat_map(|u| u.tokens().iter().copied()).collect();
            vec![self.utterance_var(g, &flat)?]
        } else {
            context
                .iter()
                .map(|u| self.utterance_var(g, u.tokens()))
                .collect::<Result<Vec<_>>>()?
        };
        let xs = g.concat(&vecs, Axis::Rows)?;
        Ok(*self.lstm(g, self.ids.context, xs, false)?.last().unwrap())
    }

    fn gaussian_var<'p>(&'p self, g: &mut Graph<'p>, ids: GaussIds, input: Var) -> Result<(Var, Var)> {
        let mu_w = g.param(&self.params, ids.mu_w);
        let mu_b = g.param(&self.params, ids.mu_b);
        let var_w = g.param(&self.params, ids.var_w);
        let var_b = g.param(&self.params, ids.var_b);
        let mu = g.matmul(input, mu_w)?;
        let mu = g.add(mu, mu_b)?;
        let raw = g.matmul(input, var_w)?;
        let raw = g.add(raw, var_b)?;
        let var = g.softplus(raw);
        Ok((mu, g.add_scalar(var, VARIANCE_FLOOR)))
    }

    fn latent_ids(&self) -> Result<(GaussIds, GaussIds)> {
        match (self.ids.prior, self.ids.posterior) {
            (Some(p), Some(q)) => Ok((p, q)),
            _ => Err(Error::Contract(format!("{} has no latent variable", self.config.variant))),
        }
    }

    /// Decoder logits (`T x |V|`) under teacher forcing: step `t` reads
    /// `[emb(target[t-1]); c; z]`, with SOS before the first token.
    pub(crate) fn decoder_logits_var<'p>(
        &'p self,
        g: &mut Graph<'p>,
        c: Var,
        z: Option<Var>,
        target: &[TokenId],
    ) -> Result<Var> {
        if z.is_some() != self.config.variant.has_latent() {
            return Err(Error::Contract(format!(
                "{} decoder {} a latent sample",
                self.config.variant,
                if z.is_some() { "does not take" } else { "requires" }
            )));
        }
        if target.is_empty() {
            return Err(Error::Contract("empty decoder target".into()));
        }
        self.check_tokens(target)?;
        let steps = target.len();
        let prev: Vec<usize> = std::iter::once(SOS)
            .chain(target[..steps - 1].iter().copied())
            .map(|t| t as usize)
            .collect();
        let emb = g.param(&self.params, self.ids.embedding);
        let xs = g.gather_rows(emb, &prev)?;
        let cond = match z {
            Some(z) => g.concat(&[c, z], Axis::Cols)?,
            None => c,
        };
        let cond = g.gather_rows(cond, &vec![0; steps])?;
        let xs = g.concat(&[xs, cond], Axis::Cols)?;
        let hs = self.lstm(g, self.ids.decoder, xs, false)?;
        let hs = g.concat(&hs, Axis::Rows)?;
        let out_w = g.param(&self.params, self.ids.out_w);
        let out_b = g.param(&self.params, self.ids.out_b);
        let logits = g.matmul(hs, out_w)?;
        g.add(logits, out_b)
    }

    /// Closed-form `KL[Q || P]` as a graph node.
    fn gaussian_kl_var(g: &mut Graph<'_>, q: (Var, Var), p: (Var, Var)) -> Result<Var> {
        let (mq, vq) = q;
        let (mp, vp) = p;
        let ln_vp = g.log(vp);
        let ln_vq = g.log(vq);
        let log_ratio = g.sub(ln_vp, ln_vq)?;
        let d = g.sub(mq, mp)?;
        let d2 = g.mul(d, d)?;
        let num = g.add(vq, d2)?;
        let frac = g.div(num, vp)?;
        let terms = g.add(log_ratio, frac)?;
        let terms = g.add_scalar(terms, -1.0);
        let s = g.sum(terms);
        Ok(g.scale(s, 0.5))
    }

    /// Builds one example's weighted loss; returns the loss node and raw parts.
    fn example_loss<'p>(
        &'p self,
        g: &mut Graph<'p>,
        turn: &Turn,
        weights: [f64; 3],
        opts: &LossOptions<'p>,
        rng: &mut SeededRng,
    ) -> Result<(Var, ExampleParts)> {
        let [ce_w, kl_w, local_w] = weights;
        let c = self.context_var(g, &turn.context)?;
        let target = turn.reply.tokens();
        let mut kl_global = 0.0;
        let mut kl_node = None;
        let z = if self.config.variant.has_latent() {
            let (prior_ids, post_ids) = self.latent_ids()?;
            let x = self.utterance_var(g, target)?;
            let cx = g.concat(&[c, x], Axis::Cols)?;
            let prior = self.gaussian_var(g, prior_ids, c)?;
            let post = self.gaussian_var(g, post_ids, cx)?;
            let kl = Self::gaussian_kl_var(g, post, prior)?;
            kl_global = g.value(kl).item()?;
            kl_node = Some(kl);
            Some(gaussian_sample_var(g, post.0, post.1, rng)?)
        } else {
            None
        };
        let logits = self.decoder_logits_var(g, c, z, target)?;
        let logp = g.log_softmax(logits);
        let cols: Vec<usize> = target.iter().map(|&t| t as usize).collect();
        let picked = g.pick(logp, &cols)?;
        let ll = g.sum(picked);
        let nll = -g.value(ll).item()?;
        let mut loss = g.scale(ll, -ce_w);
        if let Some(kl) = kl_node {
            let kl = g.scale(kl, kl_w);
            loss = g.add(loss, kl)?;
        }

        let mut kl_local = None;
        if self.config.variant.has_topic() {
            let topics = opts
                .topics
                .ok_or_else(|| Error::Contract("thred loss requires a topic projection".into()))?;
            if topics.rank() != self.config.topic_dim || topics.vocab_size() != self.config.vocab_size {
                return Err(Error::Contract(format!(
                    "topic projection is {}x{}, model expects {}x{}",
                    topics.vocab_size(),
                    topics.rank(),
                    self.config.vocab_size,
                    self.config.topic_dim
                )));
            }
            let ctx_tokens: Vec<TokenId> = turn.context.iter().flat_map(|u| u.words().iter().copied()).collect();
            let tc = topics.topic_vector(&ctx_tokens);
            if tc.matched_tokens > 0 {
                let probs = g.softmax(logits);
                let tr = topics.soft_topic_var(g, probs)?;
                let local = topic_kl_var(g, &tc, tr, opts.kl_eps)?;
                kl_local = Some(g.value(local).item()?);
                let local = g.scale(local, local_w);
                loss = g.add(loss, local)?;
            }
        }
        Ok((
            loss,
            ExampleParts {
                nll,
                kl_global,
                kl_local,
            },
        ))
    }

    fn run_batch(
        &self,
        batch: &[Turn],
        step: u64,
        opts: &LossOptions<'_>,
        rng: &mut SeededRng,
        want_grads: bool,
    ) -> Result<(LossBreakdown, Option<ParamGrads>)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let n_tokens: usize = batch.iter().map(|t| t.reply.len()).sum();
        let b = batch.len() as f64;
        let anneal = if self.config.variant.has_latent() {
            self.config.anneal(step)
        } else {
            0.0
        };
        let lambda = if self.config.variant.has_topic() {
            self.config.topic_weight
        } else {
            0.0
        };
        let weights = [1.0 / n_tokens as f64, anneal / b, lambda / b];
        let mut grads = want_grads.then(|| ParamGrads::zeros_like(&self.params));
        let (mut nll, mut kl_g, mut kl_l, mut pairs) = (0.0, 0.0, 0.0, 0usize);
        for turn in batch {
            let mut g = Graph::new();
            let (loss, parts) = self.example_loss(&mut g, turn, weights, opts, rng)?;
            nll += parts.nll;
            kl_g += parts.kl_global;
            if let Some(l) = parts.kl_local {
                kl_l += l;
                pairs += 1;
            }
            if let Some(acc) = grads.as_mut() {
                if !g.value(loss).item()?.is_finite() {
                    break;
                }
                acc.accumulate(&g.backward(loss)?.into_param_grads(&self.params));
            }
        }
        let ce = nll / n_tokens as f64;
        let kl_global = kl_g / b;
        let kl_local = kl_l / b;
        for (component, value) in [("ce", ce), ("kl_global", kl_global), ("kl_local", kl_local)] {
            if !value.is_finite() {
                return Err(Error::Divergence { component, value });
            }
        }
        let total = ce + anneal * kl_global + lambda * kl_local;
        Ok((
            LossBreakdown {
                total,
                ce,
                kl_global,
                kl_local,
                topic_div: if pairs > 0 { kl_l / pairs as f64 } else { f64::NAN },
                tokens: n_tokens,
                topic_pairs: pairs,
            },
            grads,
        ))
    }

    /// Loss of a batch at global step `step` together with parameter gradients.
    /// Latent samples are drawn from `rng`.
    pub fn loss_and_grads(
        &self,
        batch: &[Turn],
        step: u64,
        opts: &LossOptions<'_>,
        rng: &mut SeededRng,
    ) -> Result<(LossBreakdown, ParamGrads)> {
        let (l, g) = self.run_batch(batch, step, opts, rng, true)?;
        Ok((l, g.expect("requested")))
    }

    pub fn loss(&self, batch: &[Turn], step: u64, opts: &LossOptions<'_>, rng: &mut SeededRng) -> Result<LossBreakdown> {
        Ok(self.run_batch(batch, step, opts, rng, false)?.0)
    }

    pub fn encode_utterance(&self, utt: &Utterance) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = self.utterance_var(&mut g, utt.tokens())?;
        Ok(g.value(v).clone())
    }

    pub fn encode_context(&self, context: &[Utterance]) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = self.context_var(&mut g, context)?;
        Ok(g.value(v).clone())
    }

    /// Prior `P(z|c)` and, when `x_enc` is given, posterior `Q(z|x, c)`.
    pub fn prior_posterior(
        &self,
        c: &Tensor,
        x_enc: Option<&Tensor>,
    ) -> Result<(LatentGaussian, Option<LatentGaussian>)> {
        let (prior_ids, post_ids) = self.latent_ids()?;
        let mut g = Graph::new();
        let cv = g.constant(c.clone());
        let to_gauss = |g: &Graph<'_>, (m, v): (Var, Var)| LatentGaussian {
            mu: g.value(m).data().to_vec(),
            var: g.value(v).data().to_vec(),
        };
        let prior = self.gaussian_var(&mut g, prior_ids, cv)?;
        let prior = to_gauss(&g, prior);
        let post = match x_enc {
            Some(x) => {
                let xv = g.constant(x.clone());
                let cx = g.concat(&[cv, xv], Axis::Cols)?;
                let q = self.gaussian_var(&mut g, post_ids, cx)?;
                Some(to_gauss(&g, q))
            }
            None => None,
        };
        Ok((prior, post))
    }

    /// Per-step output distributions (`T x |V|`) under teacher forcing.
    pub fn decode_teacher_forced(&self, c: &Tensor, z: Option<&Tensor>, target: &Utterance) -> Result<Tensor> {
        let mut g = Graph::new();
        let cv = g.constant(c.clone());
        let zv = z.map(|z| g.constant(z.clone()));
        let logits = self.decoder_logits_var(&mut g, cv, zv, target.tokens())?;
        let probs = g.softmax(logits);
        Ok(g.value(probs).clone())
    }

    /// Context state and, for latent variants, one draw from the prior.
    pub fn condition(&self, context: &[Utterance], rng: &mut SeededRng) -> Result<(Tensor, Option<Tensor>)> {
        let c = self.encode_context(context)?;
        let z = if self.config.variant.has_latent() {
            let (prior, _) = self.prior_posterior(&c, None)?;
            Some(prior.sample(rng)?)
        } else {
            None
        };
        Ok((c, z))
    }

    /// `log P(reply_t | reply_<t, context)` for each reply token, with `z`
    /// drawn from the prior for latent variants.
    pub fn token_log_probs(&self, context: &[Utterance], reply: &Utterance, rng: &mut SeededRng) -> Result<Vec<f64>> {
        let (c, z) = self.condition(context, rng)?;
        let probs = self.decode_teacher_forced(&c, z.as_ref(), reply)?;
        Ok(reply
            .tokens()
            .iter()
            .enumerate()
            .map(|(t, &w)| probs.get(t, w as usize).ln())
            .collect())
    }

    pub fn decoder_session(&self, c: &Tensor, z: Option<&Tensor>) -> Result<DecoderSession<'_>> {
        let cfg = &self.config;
        let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
        if z.is_some() != cfg.variant.has_latent() {
            return Err(Error::Contract(format!("latent sample mismatch for {}", cfg.variant)));
        }
        let mut cond = c.data().to_vec();
        if let Some(z) = z {
            cond.extend_from_slice(z.data());
        }
        if c.numel() != h || cond.len() != h + cfg.effective_latent() {
            return Err(Error::shape("decoder_session", c.dims(), &[1, h]));
        }
        let w_x = self.params.get(self.ids.decoder.w_x);
        let bias = self.params.get(self.ids.decoder.bias);
        let head = Tensor::new(vec![e, 4 * h], w_x.data()[..e * 4 * h].to_vec())?;
        let tail = Tensor::new(vec![cond.len(), 4 * h], w_x.data()[e * 4 * h..].to_vec())?;
        let token_proj = self.params.get(self.ids.embedding).matmul(&head)?;
        let mut cond_proj = Tensor::row(cond).matmul(&tail)?.into_data();
        for (a, b) in cond_proj.iter_mut().zip(bias.data()) {
            *a += b;
        }
        Ok(DecoderSession {
            model: self,
            token_proj,
            cond_proj,
        })
    }
}

impl DecoderSession<'_> {
    pub fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    pub fn initial_state(&self) -> DecoderState {
        let h = self.model.config.hidden_dim;
        DecoderState {
            h: vec![0.0; h],
            c: vec![0.0; h],
        }
    }

    /// Feeds `prev` and returns the next-token logits and the new state.
    pub fn step(&self, state: &DecoderState, prev: TokenId) -> Result<(Vec<f64>, DecoderState)> {
        let m = self.model;
        let h = m.config.hidden_dim;
        let v = m.config.vocab_size;
        m.check_tokens(&[prev])?;
        let w_h = m.params.get(m.ids.decoder.w_h);
        let mut a: Vec<f64> = self
            .token_proj
            .row_slice(prev as usize)
            .iter()
            .zip(&self.cond_proj)
            .map(|(x, y)| x + y)
            .collect();
        for (j, &hj) in state.h.iter().enumerate() {
            if hj != 0.0 {
                for (ak, wk) in a.iter_mut().zip(w_h.row_slice(j)) {
                    *ak += hj * wk;
                }
            }
        }
        let mut next = DecoderState {
            h: vec![0.0; h],
            c: vec![0.0; h],
        };
        for k in 0..h {
            let i = sigmoid(a[k]);
            let f = sigmoid(a[h + k]);
            let g = a[2 * h + k].tanh();
            let o = sigmoid(a[3 * h + k]);
            let c = f * state.c[k] + i * g;
            next.c[k] = c;
            next.h[k] = o * c.tanh();
        }
        let out_w = m.params.get(m.ids.out_w);
        let mut logits = m.params.get(m.ids.out_b).data().to_vec();
        for (j, &hj) in next.h.iter().enumerate() {
            for (l, w) in logits.iter_mut().zip(&out_w.data()[j * v..(j + 1) * v]) {
                *l += hj * w;
            }
        }
        Ok((logits, next))
    }
}
