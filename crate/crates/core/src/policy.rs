//! Small differentiable autoregressive categorical policies.
//!
//! Architecture: a bag-of-tokens prompt embedding (mean of prompt-token
//! embeddings; the zero vector for an empty negative prompt) concatenated
//! with embeddings of the last `context` response tokens (zero vectors
//! before the start), one tanh hidden layer, and a linear map to vocabulary
//! logits. Scoring is teacher-forced: the distribution at position t
//! conditions on the prompt and the true prefix `y[..t]` only.
//!
//! The flat parameter vector is laid out as
//! `[prompt_embed (P x E) | token_embed (V x E) | w1 (H x (k+1)E) | b1 (H) |
//!   w2 (V x H) | b2 (V)]`, all row-major. Gradients are exact analytic
//! derivatives of the clipped surrogate; clipping contributes the
//! subgradient of the selected min/clip branch, exactly as reverse-mode
//! autodiff would.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{log_softmax, LogitVector, TokenDistribution};
use crate::objective::{ObjectiveConfig, SurrogateEntry};
use crate::tasks::{PromptEncoding, EOS};
use crate::{mix_seed, Error, Result};

/// Dimensions of a policy network; fixes the parameter count and layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub vocab: usize,
    pub prompt_vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub context: usize,
}

impl PolicyShape {
    pub fn new(
        vocab: usize,
        prompt_vocab: usize,
        embed: usize,
        hidden: usize,
        context: usize,
    ) -> Result<Self> {
        if vocab < 2 || prompt_vocab == 0 || embed == 0 || hidden == 0 || context == 0 {
            return Err(Error::invalid("degenerate policy shape"));
        }
        Ok(PolicyShape {
            vocab,
            prompt_vocab,
            embed,
            hidden,
            context,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.embed * (self.context + 1)
    }

    pub fn param_count(&self) -> usize {
        self.prompt_vocab * self.embed
            + self.vocab * self.embed
            + self.hidden * self.input_dim()
            + self.hidden
            + self.vocab * self.hidden
            + self.vocab
    }

    fn prompt_embed_off(&self) -> usize {
        0
    }

    fn token_embed_off(&self) -> usize {
        self.prompt_vocab * self.embed
    }

    fn w1_off(&self) -> usize {
        self.token_embed_off() + self.vocab * self.embed
    }

    fn b1_off(&self) -> usize {
        self.w1_off() + self.hidden * self.input_dim()
    }

    fn w2_off(&self) -> usize {
        self.b1_off() + self.hidden
    }

    fn b2_off(&self) -> usize {
        self.w2_off() + self.vocab * self.hidden
    }
}

/// Flat trainable weights plus their shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        PolicyParams {
            shape,
            theta: vec![0.0; shape.param_count()],
        }
    }

    /// Uniform init in [-0.1, 0.1], deterministic per seed.
    pub fn init(shape: PolicyShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x7061_7261_6d73]));
        let theta = (0..shape.param_count())
            .map(|_| rng.random::<f64>() * 0.2 - 0.1)
            .collect();
        PolicyParams { shape, theta }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != self.shape.param_count() {
            return Err(Error::invalid(format!(
                "theta length {} does not match shape ({} params)",
                self.theta.len(),
                self.shape.param_count()
            )));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite policy parameter"));
        }
        Ok(())
    }
}

/// One sampled response with the log-probs of the distribution it was
/// actually drawn from (the CFG-modified one when guidance was active).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub prompt_id: usize,
    pub response: Vec<usize>,
    pub behavior_log_probs: Vec<f64>,
    pub reward: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.response.is_empty() {
            return Err(Error::invalid("rollout response is empty"));
        }
        if self.behavior_log_probs.len() != self.response.len() {
            return Err(Error::invalid("behavior log-prob length mismatch"));
        }
        if self.behavior_log_probs.iter().any(|&lp| lp > 0.0) {
            return Err(Error::invalid("behavior log-prob > 0"));
        }
        Ok(())
    }
}

fn check_prompt(params: &PolicyParams, prompt: &PromptEncoding) -> Result<()> {
    if let Some(&bad) = prompt
        .tokens
        .iter()
        .find(|&&t| t >= params.shape.prompt_vocab)
    {
        return Err(Error::invalid(format!(
            "prompt token {bad} outside prompt vocabulary {}",
            params.shape.prompt_vocab
        )));
    }
    Ok(())
}

fn check_response(params: &PolicyParams, response: &[usize]) -> Result<()> {
    if let Some(&bad) = response.iter().find(|&&t| t >= params.shape.vocab) {
        return Err(Error::invalid(format!(
            "response token {bad} outside vocabulary {}",
            params.shape.vocab
        )));
    }
    Ok(())
}

/// Forward activations for one position, kept for backprop.
struct Activations {
    input: Vec<f64>,
    hidden: Vec<f64>,
    dist: TokenDistribution,
}

/// Builds the input features for position t of `prefix` (only `prefix[..t]`
/// is read; anything at or beyond t cannot influence the result).
fn input_features(params: &PolicyParams, prompt_tokens: &[usize], prefix: &[usize], t: usize) -> Vec<f64> {
    let s = &params.shape;
    let e = s.embed;
    let mut x = vec![0.0; s.input_dim()];
    if !prompt_tokens.is_empty() {
        let scale = 1.0 / prompt_tokens.len() as f64;
        for &p in prompt_tokens {
            let row = s.prompt_embed_off() + p * e;
            for j in 0..e {
                x[j] += params.theta[row + j] * scale;
            }
        }
    }
    for slot in 0..s.context {
        if t > slot {
            let tok = prefix[t - 1 - slot];
            let row = s.token_embed_off() + tok * e;
            let dst = e * (slot + 1);
            x[dst..dst + e].copy_from_slice(&params.theta[row..row + e]);
        }
    }
    x
}

fn raw_forward(
    params: &PolicyParams,
    prompt_tokens: &[usize],
    prefix: &[usize],
    t: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = &params.shape;
    let input = input_features(params, prompt_tokens, prefix, t);
    let in_dim = s.input_dim();

    let mut hidden = vec![0.0; s.hidden];
    for h in 0..s.hidden {
        let row = s.w1_off() + h * in_dim;
        let mut z = params.theta[s.b1_off() + h];
        for (j, xj) in input.iter().enumerate() {
            z += params.theta[row + j] * xj;
        }
        hidden[h] = z.tanh();
    }

    let mut logits = vec![0.0; s.vocab];
    for v in 0..s.vocab {
        let row = s.w2_off() + v * s.hidden;
        let mut l = params.theta[s.b2_off() + v];
        for (h, hh) in hidden.iter().enumerate() {
            l += params.theta[row + h] * hh;
        }
        logits[v] = l;
    }
    (input, hidden, logits)
}

fn forward_position(
    params: &PolicyParams,
    prompt_tokens: &[usize],
    prefix: &[usize],
    t: usize,
) -> Activations {
    let (input, hidden, logits) = raw_forward(params, prompt_tokens, prefix, t);
    let dist = log_softmax(&LogitVector::new(logits).expect("finite logits"));
    Activations { input, hidden, dist }
}

/// Raw logits at one position (pre-softmax), used by CFG sampling.
fn position_logits(
    params: &PolicyParams,
    prompt_tokens: &[usize],
    prefix: &[usize],
    t: usize,
) -> LogitVector {
    let (_, _, logits) = raw_forward(params, prompt_tokens, prefix, t);
    LogitVector::new(logits).expect("finite logits")
}

/// Teacher-forced per-position distributions for a fixed response.
pub fn forward_distributions(
    params: &PolicyParams,
    prompt: &PromptEncoding,
    response: &[usize],
) -> Result<Vec<TokenDistribution>> {
    params.validate()?;
    check_prompt(params, prompt)?;
    check_response(params, response)?;
    Ok((0..response.len())
        .map(|t| forward_position(params, &prompt.tokens, response, t).dist)
        .collect())
}

/// Combined guidance logits `l + scale * (l - l_neg)`.
pub fn cfg_combine(positive: &LogitVector, negative: &LogitVector, scale: f64) -> Result<LogitVector> {
    if scale < 0.0 {
        return Err(Error::invalid(format!("cfg scale must be >= 0, got {scale}")));
    }
    if positive.len() != negative.len() {
        return Err(Error::invalid("cfg logit length mismatch"));
    }
    LogitVector::new(
        positive
            .values()
            .iter()
            .zip(negative.values())
            .map(|(&p, &n)| p + scale * (p - n))
            .collect(),
    )
}

/// Sampling controls beyond the common path.
#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub cfg_scale: f64,
    pub max_len: usize,
    /// Masks the EOS logit so the sample always reaches `max_len`; used by
    /// grid-task diagnostics that need a full grid.
    pub ban_eos: bool,
}

fn draw(dist: &TokenDistribution, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for v in 0..dist.len() {
        acc += dist.prob(v);
        if u < acc {
            return v;
        }
    }
    dist.len() - 1
}

/// Ancestral sampling with optional classifier-free guidance.
///
/// At each step the sampling distribution is `softmax(l + scale*(l - l_neg))`
/// where `l` and `l_neg` are the logits under the positive and negative
/// prompt. With `cfg_scale == 0` or no negative prompt this is exactly
/// conditional sampling. `behavior_log_probs` records the distribution the
/// tokens were actually drawn from. Generation stops at EOS or `max_len`.
pub fn sample_rollout(
    params: &PolicyParams,
    prompt: &PromptEncoding,
    neg_prompt: Option<&PromptEncoding>,
    cfg_scale: f64,
    max_len: usize,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    sample_rollout_opts(
        params,
        prompt,
        neg_prompt,
        SampleOptions {
            cfg_scale,
            max_len,
            ban_eos: false,
        },
        rng,
    )
}

pub fn sample_rollout_opts(
    params: &PolicyParams,
    prompt: &PromptEncoding,
    neg_prompt: Option<&PromptEncoding>,
    opts: SampleOptions,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    params.validate()?;
    check_prompt(params, prompt)?;
    if opts.cfg_scale < 0.0 {
        return Err(Error::invalid(format!(
            "cfg scale must be >= 0, got {}",
            opts.cfg_scale
        )));
    }
    if opts.max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    if let Some(neg) = neg_prompt {
        check_prompt(params, neg)?;
    }

    let guided = opts.cfg_scale > 0.0 && neg_prompt.is_some();
    let mut response = Vec::new();
    let mut behavior_log_probs = Vec::new();
    for t in 0..opts.max_len {
        let mut logits = position_logits(params, &prompt.tokens, &response, t);
        if guided {
            let neg = neg_prompt.expect("guided implies negative prompt");
            let neg_logits = position_logits(params, &neg.tokens, &response, t);
            logits = cfg_combine(&logits, &neg_logits, opts.cfg_scale)?;
        }
        if opts.ban_eos {
            let mut vals = logits.values().to_vec();
            vals[EOS] = -1e9;
            logits = LogitVector::new(vals)?;
        }
        let dist = log_softmax(&logits);
        let tok = draw(&dist, rng);
        response.push(tok);
        behavior_log_probs.push(dist.log_prob(tok));
        if tok == EOS {
            break;
        }
    }
    Ok(Rollout {
        prompt_id: 0,
        response,
        behavior_log_probs,
        reward: 0.0,
    })
}

/// Argmax decoding under the same (optionally guided) distribution.
pub fn greedy_rollout(
    params: &PolicyParams,
    prompt: &PromptEncoding,
    neg_prompt: Option<&PromptEncoding>,
    cfg_scale: f64,
    max_len: usize,
) -> Result<Rollout> {
    params.validate()?;
    check_prompt(params, prompt)?;
    if cfg_scale < 0.0 {
        return Err(Error::invalid("cfg scale must be >= 0"));
    }
    let guided = cfg_scale > 0.0 && neg_prompt.is_some();
    let mut response = Vec::new();
    let mut behavior_log_probs = Vec::new();
    for t in 0..max_len {
        let mut logits = position_logits(params, &prompt.tokens, &response, t);
        if guided {
            let neg = neg_prompt.expect("guided implies negative prompt");
            let neg_logits = position_logits(params, &neg.tokens, &response, t);
            logits = cfg_combine(&logits, &neg_logits, cfg_scale)?;
        }
        let dist = log_softmax(&logits);
        let tok = (0..dist.len())
            .max_by(|&a, &b| dist.log_prob(a).partial_cmp(&dist.log_prob(b)).unwrap())
            .unwrap();
        response.push(tok);
        behavior_log_probs.push(dist.log_prob(tok));
        if tok == EOS {
            break;
        }
    }
    Ok(Rollout {
        prompt_id: 0,
        response,
        behavior_log_probs,
        reward: 0.0,
    })
}

/// Accumulates `scale * d(logit_j)` into the parameter gradient, given the
/// per-logit gradient `dlogits` and the cached activations.
fn backprop_position(
    params: &PolicyParams,
    prompt_tokens: &[usize],
    prefix: &[usize],
    t: usize,
    acts: &Activations,
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let s = &params.shape;
    let in_dim = s.input_dim();
    let e = s.embed;

    // Output layer.
    let mut dhidden = vec![0.0; s.hidden];
    for v in 0..s.vocab {
        let g = dlogits[v];
        if g == 0.0 {
            continue;
        }
        grad[s.b2_off() + v] += g;
        let row = s.w2_off() + v * s.hidden;
        for h in 0..s.hidden {
            grad[row + h] += g * acts.hidden[h];
            dhidden[h] += g * params.theta[row + h];
        }
    }

    // Hidden layer through tanh.
    let mut dinput = vec![0.0; in_dim];
    for h in 0..s.hidden {
        let dz = dhidden[h] * (1.0 - acts.hidden[h] * acts.hidden[h]);
        if dz == 0.0 {
            continue;
        }
        grad[s.b1_off() + h] += dz;
        let row = s.w1_off() + h * in_dim;
        for j in 0..in_dim {
            grad[row + j] += dz * acts.input[j];
            dinput[j] += dz * params.theta[row + j];
        }
    }

    // Embedding tables.
    if !prompt_tokens.is_empty() {
        let scale = 1.0 / prompt_tokens.len() as f64;
        for &p in prompt_tokens {
            let row = s.prompt_embed_off() + p * e;
            for j in 0..e {
                grad[row + j] += dinput[j] * scale;
            }
        }
    }
    for slot in 0..s.context {
        if t > slot {
            let tok = prefix[t - 1 - slot];
            let row = s.token_embed_off() + tok * e;
            let src = e * (slot + 1);
            for j in 0..e {
                grad[row + j] += dinput[src + j];
            }
        }
    }
}

/// Gradient plus diagnostics from one surrogate evaluation.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Ascent-direction gradient of the objective.
    pub grad: Vec<f64>,
    /// The objective value itself.
    pub value: f64,
    /// Fraction of tokens where the clipped branch was strictly selected.
    pub clip_fraction: f64,
    pub token_count: usize,
}

/// Exact analytic gradient of the clipped surrogate objective (the value
/// [`crate::objective::surrogate_value`] computes) with respect to `params`.
///
/// Returns the gradient of the *maximized* objective, i.e. the ascent
/// direction, together with the objective value.
pub fn loss_gradient(
    params: &PolicyParams,
    batch: &[SurrogateEntry<'_>],
    reference: Option<&PolicyParams>,
    cfg: &ObjectiveConfig,
) -> Result<(Vec<f64>, f64)> {
    let report = loss_gradient_report(params, batch, reference, cfg)?;
    Ok((report.grad, report.value))
}

pub fn loss_gradient_report(
    params: &PolicyParams,
    batch: &[SurrogateEntry<'_>],
    reference: Option<&PolicyParams>,
    cfg: &ObjectiveConfig,
) -> Result<GradReport> {
    cfg.validate()?;
    params.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty gradient batch"));
    }
    if cfg.kl_beta > 0.0 && reference.is_none() {
        return Err(Error::invalid(
            "kl_beta > 0 requires reference parameters",
        ));
    }
    if let Some(r) = reference {
        if r.shape != params.shape {
            return Err(Error::invalid("reference params have different shape"));
        }
    }
    for entry in batch {
        entry.check_shapes()?;
        check_prompt(params, entry.prompt)?;
        check_response(params, entry.response)?;
    }

    let n = batch.len() as f64;
    let lo = 1.0 - cfg.clip_low;
    let hi = 1.0 + cfg.clip_high;
    let s = &params.shape;

    // Per-entry contributions computed independently (parallel-safe), then
    // reduced in batch order for deterministic f64 sums.
    let per_entry: Vec<(Vec<f64>, f64, usize)> = {
        use rayon::prelude::*;
        batch
            .par_iter()
            .map(|entry| {
                let t_len = entry.response.len();
                let coef = 1.0 / (n * t_len as f64);
                let mut grad = vec![0.0; s.param_count()];
                let mut value = 0.0;
                let mut clipped_selected = 0usize;
                for t in 0..t_len {
                    let acts = forward_position(params, &entry.prompt.tokens, entry.response, t);
                    let y = entry.response[t];
                    let lp = acts.dist.log_prob(y);
                    let w = (lp - entry.behavior_log_probs[t]).exp();
                    let adv = entry.token_advantages[t];
                    let clipped = w.clamp(lo, hi);
                    let term_unclipped = w * adv;
                    let term_clipped = clipped * adv;

                    let mut dlogits = vec![0.0; s.vocab];
                    if term_unclipped <= term_clipped {
                        value += coef * term_unclipped;
                        // d(w*adv)/dlogp = adv * w; dlogp/dlogit_j = 1{j=y} - p_j.
                        let dlogp = coef * adv * w;
                        if dlogp != 0.0 {
                            for j in 0..s.vocab {
                                let indicator = if j == y { 1.0 } else { 0.0 };
                                dlogits[j] = dlogp * (indicator - acts.dist.prob(j));
                            }
                        }
                    } else {
                        // Clipped branch selected; clamp is flat outside the
                        // band, so no gradient flows through the ratio.
                        value += coef * term_clipped;
                        clipped_selected += 1;
                    }

                    if cfg.kl_beta > 0.0 {
                        let reference = reference.expect("checked above");
                        let ref_acts =
                            forward_position(reference, &entry.prompt.tokens, entry.response, t);
                        let mut kl = 0.0;
                        for j in 0..s.vocab {
                            let lpj = acts.dist.log_prob(j);
                            kl += lpj.exp() * (lpj - ref_acts.dist.log_prob(j));
                        }
                        value -= cfg.kl_beta * coef * kl;
                        let scale = cfg.kl_beta * coef;
                        for j in 0..s.vocab {
                            let lpj = acts.dist.log_prob(j);
                            let diff = lpj - ref_acts.dist.log_prob(j);
                            dlogits[j] -= scale * lpj.exp() * (diff - kl);
                        }
                    }

                    if dlogits.iter().any(|&g| g != 0.0) {
                        backprop_position(
                            params,
                            &entry.prompt.tokens,
                            entry.response,
                            t,
                            &acts,
                            &dlogits,
                            &mut grad,
                        );
                    }
                }
                (grad, value, clipped_selected)
            })
            .collect()
    };

    let mut grad = vec![0.0; s.param_count()];
    let mut value = 0.0;
    let mut clipped_selected = 0usize;
    let mut token_count = 0usize;
    for (entry, (g, v, c)) in batch.iter().zip(per_entry) {
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst += src;
        }
        value += v;
        clipped_selected += c;
        token_count += entry.response.len();
    }

    Ok(GradReport {
        grad,
        value,
        clip_fraction: clipped_selected as f64 / token_count.max(1) as f64,
        token_count,
    })
}

/// Gradient of the mean teacher-forced log-likelihood of target responses;
/// used for the supervised warmup phase.
pub fn likelihood_gradient(
    params: &PolicyParams,
    batch: &[(&PromptEncoding, &[usize])],
) -> Result<(Vec<f64>, f64)> {
    params.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("empty likelihood batch"));
    }
    let s = &params.shape;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; s.param_count()];
    let mut value = 0.0;
    for (prompt, target) in batch {
        check_prompt(params, prompt)?;
        check_response(params, target)?;
        if target.is_empty() {
            return Err(Error::invalid("empty likelihood target"));
        }
        let coef = 1.0 / (n * target.len() as f64);
        for t in 0..target.len() {
            let acts = forward_position(params, &prompt.tokens, target, t);
            let y = target[t];
            value += coef * acts.dist.log_prob(y);
            let mut dlogits = vec![0.0; s.vocab];
            for j in 0..s.vocab {
                let indicator = if j == y { 1.0 } else { 0.0 };
                dlogits[j] = coef * (indicator - acts.dist.prob(j));
            }
            backprop_position(params, &prompt.tokens, target, t, &acts, &dlogits, &mut grad);
        }
    }
    Ok((grad, value))
}

/// Writes rollouts as one JSON object per line.
pub fn write_rollouts_jsonl<W: std::io::Write>(mut w: W, rollouts: &[Rollout]) -> Result<()> {
    for r in rollouts {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_rollouts_jsonl<R: std::io::BufRead>(r: R) -> Result<Vec<Rollout>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
