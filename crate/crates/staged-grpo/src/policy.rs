//! Tiny autoregressive token policy with exact closed-form gradients.
//!
//! Architecture: the last `window` tokens are embedded (token + position),
//! concatenated, pushed through one tanh hidden layer and a linear output
//! head. The policy distribution is the softmax of the raw logits;
//! `temperature` and `top_p` act only at sampling time, so log-probabilities
//! and their gradients always refer to the same distribution regardless of
//! how rollouts were drawn.
//!
//! Parameters live in one flat `f64` vector so the optimizer, checkpointing
//! and finite-difference checks all see a single coordinate space.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::toy_env::{TokenId, Vocabulary};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EPR1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a token sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqOrigin {
    Prompt,
    Sampled,
}

/// An ordered list of token ids tagged with its origin. Sampled sequences
/// contain at most one `EOS`, always as the final token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    pub origin: SeqOrigin,
}

impl TokenSequence {
    pub fn prompt(tokens: Vec<TokenId>) -> Self {
        Self {
            tokens,
            origin: SeqOrigin::Prompt,
        }
    }

    pub fn sampled(tokens: Vec<TokenId>) -> Self {
        Self {
            tokens,
            origin: SeqOrigin::Sampled,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Layer dimensions; `vocab` is the logit width, `window` the context size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyDims {
    pub vocab: usize,
    pub embed: usize,
    pub window: usize,
    pub hidden: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        Self {
            vocab: Vocabulary::SIZE,
            embed: 16,
            window: 16,
            hidden: 64,
        }
    }
}

impl PolicyDims {
    pub fn input_len(&self) -> usize {
        self.window * self.embed
    }

    pub fn theta_len(&self) -> usize {
        let Self {
            vocab: v,
            embed: d,
            window: w,
            hidden: h,
        } = *self;
        v * d + w * d + w * d * h + h + h * v + v
    }

    fn embed_off(&self) -> usize {
        0
    }

    fn pos_off(&self) -> usize {
        self.vocab * self.embed
    }

    fn w1_off(&self) -> usize {
        self.pos_off() + self.window * self.embed
    }

    fn b1_off(&self) -> usize {
        self.w1_off() + self.input_len() * self.hidden
    }

    fn w2_off(&self) -> usize {
        self.b1_off() + self.hidden
    }

    fn b2_off(&self) -> usize {
        self.w2_off() + self.hidden * self.vocab
    }
}

/// Flat parameter vector of the shared policy; one object serves every
/// curriculum stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub dims: PolicyDims,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dims: PolicyDims) -> Self {
        Self {
            dims,
            theta: vec![0.0; dims.theta_len()],
        }
    }

    /// Embeddings and weights i.i.d. uniform in [-scale, scale], biases zero.
    pub fn init(dims: PolicyDims, scale: f64, rng: &mut RngStream) -> Self {
        let mut params = Self::zeros(dims);
        let b1 = dims.b1_off();
        let w2 = dims.w2_off();
        let b2 = dims.b2_off();
        for i in 0..b1 {
            params.theta[i] = rng.uniform(-scale, scale);
        }
        for i in w2..b2 {
            params.theta[i] = rng.uniform(-scale, scale);
        }
        params
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }
}

/// Pad `tokens` on the left with `PAD` to exactly `window` tokens, keeping
/// the most recent ones.
pub fn context_window(dims: &PolicyDims, tokens: &[TokenId]) -> Vec<TokenId> {
    let w = dims.window;
    let mut ctx = vec![Vocabulary::PAD; w];
    let keep = tokens.len().min(w);
    ctx[w - keep..].copy_from_slice(&tokens[tokens.len() - keep..]);
    ctx
}

/// Scratch buffers for one forward/backward pass; reused across tokens.
struct Activations {
    x: Vec<f64>,
    act: Vec<f64>,
    logits: Vec<f64>,
}

impl Activations {
    fn new(dims: &PolicyDims) -> Self {
        Self {
            x: vec![0.0; dims.input_len()],
            act: vec![0.0; dims.hidden],
            logits: vec![0.0; dims.vocab],
        }
    }
}

fn forward(params: &PolicyParams, context: &[TokenId], scratch: &mut Activations) {
    let dims = &params.dims;
    let (v, d, h) = (dims.vocab, dims.embed, dims.hidden);
    let theta = &params.theta;
    let embed = dims.embed_off();
    let pos = dims.pos_off();
    for (p, &tok) in context.iter().enumerate() {
        let e = embed + tok as usize * d;
        let q = pos + p * d;
        let out = &mut scratch.x[p * d..(p + 1) * d];
        for j in 0..d {
            out[j] = theta[e + j] + theta[q + j];
        }
    }
    let w1 = dims.w1_off();
    let b1 = dims.b1_off();
    scratch.act.copy_from_slice(&theta[b1..b1 + h]);
    for (i, &xi) in scratch.x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = w1 + i * h;
        for k in 0..h {
            scratch.act[k] += xi * theta[row + k];
        }
    }
    for k in 0..h {
        scratch.act[k] = scratch.act[k].tanh();
    }
    let w2 = dims.w2_off();
    let b2 = dims.b2_off();
    scratch.logits.copy_from_slice(&theta[b2..b2 + v]);
    for k in 0..h {
        let ak = scratch.act[k];
        if ak == 0.0 {
            continue;
        }
        let row = w2 + k * v;
        for t in 0..v {
            scratch.logits[t] += ak * theta[row + t];
        }
    }
}

fn check_context(dims: &PolicyDims, context: &[TokenId]) -> Result<()> {
    if context.len() != dims.window {
        return Err(Error::Input(format!(
            "context length {} != window {}",
            context.len(),
            dims.window
        )));
    }
    if let Some(&bad) = context.iter().find(|&&t| t as usize >= dims.vocab) {
        return Err(Error::Input(format!(
            "token id {bad} >= vocab size {}",
            dims.vocab
        )));
    }
    Ok(())
}

/// Raw logits over the vocabulary for one context of exactly `window` tokens.
pub fn logits(params: &PolicyParams, context: &[TokenId]) -> Result<Vec<f64>> {
    check_context(&params.dims, context)?;
    let mut scratch = Activations::new(&params.dims);
    forward(params, context, &mut scratch);
    Ok(scratch.logits)
}

/// Stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// log softmax(logits)[token] at temperature 1.
fn log_softmax_at(logits: &[f64], token: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits[token] - lse
}

/// Nucleus draw: truncate to the smallest probability-sorted prefix with
/// cumulative mass >= top_p, renormalize, sample. Ties break on token id so
/// the draw is a pure function of (probs, top_p, rng state).
fn sample_from_probs(probs: &[f64], top_p: f64, rng: &mut RngStream) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept = 0;
    let mut mass = 0.0;
    for &idx in &order {
        kept += 1;
        mass += probs[idx];
        if mass >= top_p {
            break;
        }
    }
    let u = rng.next_f64() * mass;
    let mut cum = 0.0;
    for &idx in &order[..kept] {
        cum += probs[idx];
        if u < cum {
            return idx;
        }
    }
    order[kept - 1]
}

/// Autoregressively sample until `EOS` or `max_len` tokens, nucleus-truncated
/// at `top_p` and tempered by `temperature`. Deterministic given the stream.
pub fn sample_sequence(
    params: &PolicyParams,
    prompt: &TokenSequence,
    temperature: f64,
    top_p: f64,
    max_len: usize,
    rng: &mut RngStream,
) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::Input("max_len must be >= 1".into()));
    }
    if temperature <= 0.0 {
        return Err(Error::Input(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::Input(format!("top_p {top_p} outside (0, 1]")));
    }
    let mut tokens: Vec<TokenId> = prompt.tokens.clone();
    let mut output = Vec::new();
    let mut scratch = Activations::new(&params.dims);
    for _ in 0..max_len {
        let ctx = context_window(&params.dims, &tokens);
        check_context(&params.dims, &ctx)?;
        forward(params, &ctx, &mut scratch);
        let probs = softmax(&scratch.logits, temperature);
        let next = sample_from_probs(&probs, top_p, rng) as TokenId;
        tokens.push(next);
        output.push(next);
        if next == Vocabulary::EOS {
            break;
        }
    }
    Ok(TokenSequence::sampled(output))
}

/// Per-token and total log-probability of `output` given `prompt`.
pub fn seq_logprob(
    params: &PolicyParams,
    prompt: &TokenSequence,
    output: &TokenSequence,
) -> Result<(f64, Vec<f64>)> {
    if output.is_empty() {
        return Err(Error::Input("output must be non-empty".into()));
    }
    let mut tokens = prompt.tokens.clone();
    let mut per_token = Vec::with_capacity(output.len());
    let mut scratch = Activations::new(&params.dims);
    for &tok in &output.tokens {
        if tok as usize >= params.dims.vocab {
            return Err(Error::Input(format!(
                "token id {tok} >= vocab size {}",
                params.dims.vocab
            )));
        }
        let ctx = context_window(&params.dims, &tokens);
        forward(params, &ctx, &mut scratch);
        per_token.push(log_softmax_at(&scratch.logits, tok as usize));
        tokens.push(tok);
    }
    Ok((per_token.iter().sum(), per_token))
}

/// Exact gradient of `sum_j token_weights[j] * log pi(output_j | .)` w.r.t.
/// theta, by backpropagation through the output, hidden and embedding layers.
pub fn grad_logprob(
    params: &PolicyParams,
    prompt: &TokenSequence,
    output: &TokenSequence,
    token_weights: &[f64],
) -> Result<Vec<f64>> {
    if output.is_empty() {
        return Err(Error::Input("output must be non-empty".into()));
    }
    if token_weights.len() != output.len() {
        return Err(Error::Input(format!(
            "token_weights length {} != output length {}",
            token_weights.len(),
            output.len()
        )));
    }
    let dims = &params.dims;
    let (v, d, h) = (dims.vocab, dims.embed, dims.hidden);
    let mut grad = vec![0.0; dims.theta_len()];
    let mut tokens = prompt.tokens.clone();
    let mut scratch = Activations::new(dims);
    let mut d_logits = vec![0.0; v];
    let mut d_act = vec![0.0; h];
    let mut d_x = vec![0.0; dims.input_len()];
    let theta = &params.theta;
    for (j, &tok) in output.tokens.iter().enumerate() {
        if tok as usize >= v {
            return Err(Error::Input(format!("token id {tok} >= vocab size {v}")));
        }
        let weight = token_weights[j];
        let ctx = context_window(dims, &tokens);
        tokens.push(tok);
        if weight == 0.0 {
            continue;
        }
        forward(params, &ctx, &mut scratch);
        let probs = softmax(&scratch.logits, 1.0);

        // d/dlogits of w * log softmax[tok] = w * (onehot(tok) - probs)
        for t in 0..v {
            d_logits[t] = -weight * probs[t];
        }
        d_logits[tok as usize] += weight;

        let w2 = dims.w2_off();
        let b2 = dims.b2_off();
        for t in 0..v {
            grad[b2 + t] += d_logits[t];
        }
        for k in 0..h {
            let ak = scratch.act[k];
            let row = w2 + k * v;
            let mut acc = 0.0;
            for t in 0..v {
                let dl = d_logits[t];
                grad[row + t] += ak * dl;
                acc += theta[row + t] * dl;
            }
            // tanh' = 1 - tanh^2
            d_act[k] = acc * (1.0 - ak * ak);
        }

        let w1 = dims.w1_off();
        let b1 = dims.b1_off();
        for k in 0..h {
            grad[b1 + k] += d_act[k];
        }
        for (i, &xi) in scratch.x.iter().enumerate() {
            let row = w1 + i * h;
            let mut acc = 0.0;
            for k in 0..h {
                let dk = d_act[k];
                grad[row + k] += xi * dk;
                acc += theta[row + k] * dk;
            }
            d_x[i] = acc;
        }

        let embed = dims.embed_off();
        let pos = dims.pos_off();
        for (p, &ctok) in ctx.iter().enumerate() {
            let e = embed + ctok as usize * d;
            let q = pos + p * d;
            let dx = &d_x[p * d..(p + 1) * d];
            for jj in 0..d {
                grad[e + jj] += dx[jj];
                grad[q + jj] += dx[jj];
            }
        }
    }
    Ok(grad)
}

/// Serialize params: magic, version, dims (u32 LE each), theta (f64 LE).
pub fn checkpoint_to_bytes(params: &PolicyParams) -> Vec<u8> {
    let dims = &params.dims;
    let mut out = Vec::with_capacity(4 + 4 * 5 + 8 * params.theta.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [dims.vocab, dims.embed, dims.window, dims.hidden] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &x in &params.theta {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<PolicyParams> {
    let fail = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 24 {
        return Err(fail("file too short for header"));
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic bytes (expected \"EPR1\")"));
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = read_u32(4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let dims = PolicyDims {
        vocab: read_u32(8) as usize,
        embed: read_u32(12) as usize,
        window: read_u32(16) as usize,
        hidden: read_u32(20) as usize,
    };
    let body = &bytes[24..];
    let expected = dims.theta_len();
    if body.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "payload holds {} values but dims {:?} require {}",
            body.len() / 8,
            dims,
            expected
        )));
    }
    let theta: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(fail("non-finite parameter value"));
    }
    Ok(PolicyParams { dims, theta })
}

pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<()> {
    // Write-then-rename so an interrupted run never leaves a torn file.
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&checkpoint_to_bytes(params))?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_env::{task_for_id, DifficultyLevel};

    fn small_dims() -> PolicyDims {
        PolicyDims {
            vocab: Vocabulary::SIZE,
            embed: 4,
            window: 8,
            hidden: 10,
        }
    }

    fn random_params(dims: PolicyDims, seed: u64) -> PolicyParams {
        let mut rng = RngStream::new(seed);
        let mut p = PolicyParams::init(dims, 0.5, &mut rng);
        // Random biases too, so gradient checks cover every block.
        let b1 = dims.b1_off();
        for i in b1..b1 + dims.hidden {
            p.theta[i] = rng.uniform(-0.5, 0.5);
        }
        let b2 = dims.b2_off();
        for i in b2..b2 + dims.vocab {
            p.theta[i] = rng.uniform(-0.5, 0.5);
        }
        p
    }

    fn random_context(dims: &PolicyDims, rng: &mut RngStream) -> Vec<TokenId> {
        (0..dims.window)
            .map(|_| rng.below(dims.vocab as u64) as TokenId)
            .collect()
    }

    #[test]
    fn theta_len_matches_default_layout() {
        let dims = PolicyDims::default();
        assert_eq!(
            dims.theta_len(),
            16 * 16 + 16 * 16 + 256 * 64 + 64 + 64 * 16 + 16
        );
    }

    #[test]
    fn zero_params_give_uniform_softmax() {
        let dims = PolicyDims::default();
        let params = PolicyParams::zeros(dims);
        let ctx = context_window(&dims, &[1, 2, 3]);
        let l = logits(&params, &ctx).unwrap();
        assert!(l.iter().all(|&x| x == 0.0));
        let probs = softmax(&l, 0.6);
        for p in probs {
            assert!((p - 1.0 / dims.vocab as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn output_bias_moves_single_logit_linearly() {
        let dims = small_dims();
        let mut params = random_params(dims, 3);
        let ctx = random_context(&dims, &mut RngStream::new(4));
        let before = logits(&params, &ctx).unwrap();
        let c = 0.37;
        let target = 5usize;
        params.theta[dims.b2_off() + target] += c;
        let after = logits(&params, &ctx).unwrap();
        for t in 0..dims.vocab {
            let delta = after[t] - before[t];
            if t == target {
                assert!((delta - c).abs() < 1e-15);
            } else {
                assert_eq!(delta, 0.0);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_over_random_draws() {
        let dims = small_dims();
        let mut rng = RngStream::new(12);
        for i in 0..100 {
            let params = random_params(dims, 100 + i);
            let ctx = random_context(&dims, &mut rng);
            let probs = softmax(&logits(&params, &ctx).unwrap(), 1.0);
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_rejects_bad_context() {
        let dims = small_dims();
        let params = PolicyParams::zeros(dims);
        assert!(logits(&params, &[0, 1]).is_err());
        let mut ctx = context_window(&dims, &[]);
        ctx[0] = dims.vocab as TokenId;
        assert!(matches!(logits(&params, &ctx), Err(Error::Input(_))));
    }

    #[test]
    fn sampling_validates_arguments() {
        let params = PolicyParams::zeros(small_dims());
        let prompt = TokenSequence::prompt(vec![1, 2]);
        let mut rng = RngStream::new(0);
        assert!(sample_sequence(&params, &prompt, 0.6, 1.0, 0, &mut rng).is_err());
        assert!(sample_sequence(&params, &prompt, 0.0, 1.0, 4, &mut rng).is_err());
        assert!(sample_sequence(&params, &prompt, 0.6, 0.0, 4, &mut rng).is_err());
        assert!(sample_sequence(&params, &prompt, 0.6, 1.1, 4, &mut rng).is_err());
    }

    #[test]
    fn sampled_sequences_are_well_formed_and_deterministic() {
        let dims = small_dims();
        let params = random_params(dims, 9);
        let task = task_for_id(DifficultyLevel::new(1).unwrap(), 5, 0);
        let prompt = TokenSequence::prompt(task.prompt.clone());
        for i in 0..50 {
            let mut rng = RngStream::derive(77, &[i]);
            let seq = sample_sequence(&params, &prompt, 0.6, 1.0, 6, &mut rng).unwrap();
            assert!(!seq.is_empty() && seq.len() <= 6);
            let eos_count = seq
                .tokens
                .iter()
                .filter(|&&t| t == Vocabulary::EOS)
                .count();
            assert!(eos_count <= 1);
            if let Some(pos) = seq.tokens.iter().position(|&t| t == Vocabulary::EOS) {
                assert_eq!(pos, seq.len() - 1);
            }
            let mut rng2 = RngStream::derive(77, &[i]);
            let seq2 = sample_sequence(&params, &prompt, 0.6, 1.0, 6, &mut rng2).unwrap();
            assert_eq!(seq, seq2);
        }
    }

    #[test]
    fn tiny_top_p_is_greedy() {
        let dims = small_dims();
        let params = random_params(dims, 21);
        let prompt = TokenSequence::prompt(vec![3, 1, 4]);
        let ctx = context_window(&dims, &prompt.tokens);
        let probs = softmax(&logits(&params, &ctx).unwrap(), 0.6);
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        for i in 0..20 {
            let mut rng = RngStream::derive(31, &[i]);
            let seq = sample_sequence(&params, &prompt, 0.6, 1e-9, 1, &mut rng).unwrap();
            assert_eq!(seq.tokens[0] as usize, argmax);
        }
    }

    #[test]
    fn single_step_frequencies_match_softmax() {
        let dims = small_dims();
        let params = random_params(dims, 55);
        let prompt = TokenSequence::prompt(vec![2, 7]);
        let ctx = context_window(&dims, &prompt.tokens);
        let expected = softmax(&logits(&params, &ctx).unwrap(), 0.6);
        let n = 100_000usize;
        let mut counts = vec![0usize; dims.vocab];
        let mut rng = RngStream::new(808);
        for _ in 0..n {
            let tok = sample_from_probs(&expected, 1.0, &mut rng);
            counts[tok] += 1;
        }
        for t in 0..dims.vocab {
            let freq = counts[t] as f64 / n as f64;
            let se = (expected[t] * (1.0 - expected[t]) / n as f64).sqrt();
            assert!(
                (freq - expected[t]).abs() <= 3.0 * se.max(1e-9),
                "token {t}: freq {freq} vs p {} (se {se})",
                expected[t]
            );
        }
    }

    #[test]
    fn seq_logprob_uniform_and_sum() {
        let dims = small_dims();
        let params = PolicyParams::zeros(dims);
        let prompt = TokenSequence::prompt(vec![1, 2, 3]);
        let output = TokenSequence::sampled(vec![4, 5, Vocabulary::EOS]);
        let (total, per_token) = seq_logprob(&params, &prompt, &output).unwrap();
        let uniform = -(dims.vocab as f64).ln();
        for lp in &per_token {
            assert!((lp - uniform).abs() < 1e-12);
        }
        assert!((total - per_token.iter().sum::<f64>()).abs() < 1e-12);
        assert!(total <= 0.0);
    }

    #[test]
    fn seq_logprob_matches_independent_logits_route() {
        let dims = small_dims();
        let params = random_params(dims, 77);
        let prompt = TokenSequence::prompt(vec![9, 0, 2]);
        let output = TokenSequence::sampled(vec![1, 11, Vocabulary::EOS]);
        let (_, per_token) = seq_logprob(&params, &prompt, &output).unwrap();
        let mut tokens = prompt.tokens.clone();
        for (j, &tok) in output.tokens.iter().enumerate() {
            let ctx = context_window(&dims, &tokens);
            let probs = softmax(&logits(&params, &ctx).unwrap(), 1.0);
            assert!((per_token[j].exp() - probs[tok as usize]).abs() < 1e-12);
            tokens.push(tok);
        }
    }

    #[test]
    fn seq_logprob_rejects_empty_output() {
        let params = PolicyParams::zeros(small_dims());
        let prompt = TokenSequence::prompt(vec![1]);
        let output = TokenSequence::sampled(vec![]);
        assert!(seq_logprob(&params, &prompt, &output).is_err());
    }

    #[test]
    fn grad_zero_weights_zero() {
        let dims = small_dims();
        let params = random_params(dims, 5);
        let prompt = TokenSequence::prompt(vec![1, 2]);
        let output = TokenSequence::sampled(vec![3, Vocabulary::EOS]);
        let grad = grad_logprob(&params, &prompt, &output, &[0.0, 0.0]).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_is_linear_in_weights() {
        let dims = small_dims();
        let params = random_params(dims, 6);
        let prompt = TokenSequence::prompt(vec![8, 1]);
        let output = TokenSequence::sampled(vec![2, 9, Vocabulary::EOS]);
        let w1 = [0.3, -1.2, 0.5];
        let w2 = [1.1, 0.4, -0.7];
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let g1 = grad_logprob(&params, &prompt, &output, &w1).unwrap();
        let g2 = grad_logprob(&params, &prompt, &output, &w2).unwrap();
        let gs = grad_logprob(&params, &prompt, &output, &sum).unwrap();
        for i in 0..gs.len() {
            assert!((gs[i] - (g1[i] + g2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn grad_rejects_weight_length_mismatch() {
        let params = PolicyParams::zeros(small_dims());
        let prompt = TokenSequence::prompt(vec![1]);
        let output = TokenSequence::sampled(vec![2, Vocabulary::EOS]);
        assert!(grad_logprob(&params, &prompt, &output, &[1.0]).is_err());
    }

    /// Central finite differences of sum_j w_j log pi vs the analytic
    /// gradient: 20 random instances, 50 coordinates each.
    #[test]
    fn grad_matches_finite_differences() {
        let dims = small_dims();
        let step = 1e-5;
        for instance in 0..20u64 {
            let params = random_params(dims, 1000 + instance);
            let mut rng = RngStream::derive(2000, &[instance]);
            let prompt = TokenSequence::prompt(
                (0..4).map(|_| rng.below(10) as TokenId).collect(),
            );
            let out_len = 2 + rng.below(3) as usize;
            let output = TokenSequence::sampled(
                (0..out_len)
                    .map(|_| rng.below(dims.vocab as u64) as TokenId)
                    .collect(),
            );
            let weights: Vec<f64> = (0..out_len).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let analytic = grad_logprob(&params, &prompt, &output, &weights).unwrap();
            let value = |p: &PolicyParams| {
                let (_, per_token) = seq_logprob(p, &prompt, &output).unwrap();
                per_token
                    .iter()
                    .zip(&weights)
                    .map(|(lp, w)| lp * w)
                    .sum::<f64>()
            };
            for _ in 0..50 {
                let coord = rng.below(dims.theta_len() as u64) as usize;
                let mut plus = params.clone();
                plus.theta[coord] += step;
                let mut minus = params.clone();
                minus.theta[coord] -= step;
                let fd = (value(&plus) - value(&minus)) / (2.0 * step);
                let an = analytic[coord];
                let denom = fd.abs().max(an.abs()).max(1e-3);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "instance {instance} coord {coord}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dims = PolicyDims::default();
        let params = random_params(dims, 404);
        let bytes = checkpoint_to_bytes(&params);
        assert_eq!(&bytes[0..4], b"EPR1");
        let loaded = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let params = PolicyParams::zeros(small_dims());
        let mut bytes = checkpoint_to_bytes(&params);
        bytes[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));

        let mut truncated = checkpoint_to_bytes(&params);
        truncated.truncate(truncated.len() - 3);
        assert!(checkpoint_from_bytes(&truncated).is_err());

        let mut bad_version = checkpoint_to_bytes(&params);
        bad_version[4] = 9;
        assert!(checkpoint_from_bytes(&bad_version).is_err());

        let mut non_finite = checkpoint_to_bytes(&params);
        let off = non_finite.len() - 8;
        non_finite[off..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(checkpoint_from_bytes(&non_finite).is_err());
    }

    #[test]
    fn checkpoint_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let params = random_params(small_dims(), 33);
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params, loaded);
    }
}
