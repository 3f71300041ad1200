//! Transformer forward pass with caches, and the matching backward pass.
//!
//! Sequences are packed ragged into one tall matrix (no padding): dense
//! projections and feed-forward layers run on the whole batch at once,
//! attention loops over per-sequence row ranges. Post-norm residual
//! blocks, learned absolute positions, GELU activations; dropout applies
//! to embeddings, attention weights, and the feed-forward output.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{s as sc, EncoderParams, LayerNorm, LayerParams, Scalar};
use super::EncoderConfig;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// A ragged batch: all token rows concatenated, with per-sequence row
/// ranges. `mask[i] == false` hides row `i` from attention keys.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<u32>,
    pub seqs: Vec<(usize, usize)>,
    pub mask: Vec<bool>,
}

impl Batch {
    pub fn from_sequences<S: AsRef<[u32]>>(sequences: &[S]) -> Batch {
        let mut ids = Vec::new();
        let mut seqs = Vec::new();
        for seq in sequences {
            let start = ids.len();
            ids.extend_from_slice(seq.as_ref());
            seqs.push((start, ids.len()));
        }
        let mask = vec![true; ids.len()];
        Batch { ids, seqs, mask }
    }

    pub fn single(ids: &[u32], mask: &[bool]) -> Batch {
        Batch {
            ids: ids.to_vec(),
            seqs: vec![(0, ids.len())],
            mask: mask.to_vec(),
        }
    }

    fn validate(&self, config: &EncoderConfig) -> Result<()> {
        if self.ids.len() != self.mask.len() {
            return Err(Error::Config("mask length differs from id length".into()));
        }
        for (start, end) in &self.seqs {
            let len = end - start;
            if len == 0 {
                return Err(Error::Config("empty sequence in batch".into()));
            }
            if len > config.max_positions {
                return Err(Error::Config(format!(
                    "sequence of {len} pieces exceeds max positions {}",
                    config.max_positions
                )));
            }
            if !self.mask[*start..*end].iter().any(|m| *m) {
                return Err(Error::Numerical("sequence with every position masked".into()));
            }
        }
        for &id in &self.ids {
            if id as usize >= config.vocab_size {
                return Err(Error::Config(format!(
                    "token id {id} out of range for vocab of {}",
                    config.vocab_size
                )));
            }
        }
        Ok(())
    }
}

pub(crate) struct NormCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

pub(crate) struct LayerCache<F> {
    x_in: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    attn_probs: Vec<Vec<Array2<F>>>,
    attn_drop: Option<Vec<Vec<Array2<F>>>>,
    ctx: Array2<F>,
    attn_out_drop: Option<Array2<F>>,
    ln1: NormCache<F>,
    a1: Array2<F>,
    ffn_pre: Array2<F>,
    ffn_act: Array2<F>,
    ffn_drop: Option<Array2<F>>,
    ln2: NormCache<F>,
}

/// Everything the backward pass needs, plus the outputs.
pub struct Forward<F> {
    /// Final-layer hidden states, one row per packed token.
    pub hidden: Array2<F>,
    /// Pooled state per sequence: tanh(affine(first-position state)).
    pub pooled: Array2<F>,
    cls_input: Array2<F>,
    positions: Vec<usize>,
    emb_ln: NormCache<F>,
    emb_drop: Option<Array2<F>>,
    layers: Vec<LayerCache<F>>,
}

fn layer_norm_forward<F: Scalar>(x: &Array2<F>, ln: &LayerNorm<F>) -> (Array2<F>, NormCache<F>) {
    let (n, h) = x.dim();
    let hf: F = sc(h as f64);
    let mut xhat = Array2::zeros((n, h));
    let mut inv_std = Array1::zeros(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / hf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / hf;
        let istd = F::one() / (var + sc(LN_EPS)).sqrt();
        inv_std[i] = istd;
        let mut out_row = xhat.row_mut(i);
        for (o, &v) in out_row.iter_mut().zip(row.iter()) {
            *o = (v - mean) * istd;
        }
    }
    let mut out = xhat.clone();
    out *= &ln.gamma;
    out += &ln.beta;
    (out, NormCache { xhat, inv_std })
}

fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    ln: &LayerNorm<F>,
    grads: &mut LayerNorm<F>,
) -> Array2<F> {
    let (n, h) = dy.dim();
    let hf: F = sc(h as f64);
    grads.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    grads.beta += &dy.sum_axis(Axis(0));
    let mut dx = Array2::zeros((n, h));
    for i in 0..n {
        let g: Vec<F> = dy
            .row(i)
            .iter()
            .zip(ln.gamma.iter())
            .map(|(&d, &gm)| d * gm)
            .collect();
        let mean_g = g.iter().copied().sum::<F>() / hf;
        let mean_gx = g
            .iter()
            .zip(cache.xhat.row(i).iter())
            .map(|(&a, &b)| a * b)
            .sum::<F>()
            / hf;
        let istd = cache.inv_std[i];
        for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
            *out = istd * (g[j] - mean_g - cache.xhat[(i, j)] * mean_gx);
        }
    }
    dx
}

fn gelu<F: Scalar>(x: F) -> F {
    let half = sc::<F>(0.5);
    let u = sc::<F>(GELU_C) * (x + sc::<F>(GELU_A) * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = sc::<F>(0.5);
    let u = sc::<F>(GELU_C) * (x + sc::<F>(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = sc::<F>(GELU_C) * (F::one() + sc::<F>(3.0 * GELU_A) * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

/// Inverted-dropout mask: entries are 0 or 1/(1-p).
fn dropout_mask<F: Scalar>(shape: (usize, usize), p: f64, rng: &mut ChaCha8Rng) -> Array2<F> {
    let keep = sc::<F>(1.0 / (1.0 - p));
    Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { F::zero() } else { keep })
}

/// Row-wise softmax in place; rows with every entry at -inf are an error
/// upstream (at least one unmasked key per sequence).
fn softmax_rows_inplace<F: Scalar>(scores: &mut Array2<F>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_layer<F: Scalar>(
    layer: &LayerParams<F>,
    config: &EncoderConfig,
    batch: &Batch,
    x: Array2<F>,
    dropout: &mut Option<&mut ChaCha8Rng>,
    p_drop: f64,
) -> LayerCache<F> {
    let (n, h) = x.dim();
    let heads = config.heads;
    let hd = h / heads;
    let scale: F = sc(1.0 / (hd as f64).sqrt());

    let q = layer.attn_q.forward(&x);
    let k = layer.attn_k.forward(&x);
    let v = layer.attn_v.forward(&x);

    let mut ctx: Array2<F> = Array2::zeros((n, h));
    let mut attn_probs = Vec::with_capacity(batch.seqs.len());
    let mut attn_drop: Option<Vec<Vec<Array2<F>>>> = dropout.as_ref().map(|_| Vec::new());

    for &(s0, s1) in &batch.seqs {
        let mut seq_probs = Vec::with_capacity(heads);
        let mut seq_drops: Option<Vec<Array2<F>>> = attn_drop.as_ref().map(|_| Vec::new());
        for a in 0..heads {
            let cols = s![s0..s1, a * hd..(a + 1) * hd];
            let qa = q.slice(cols);
            let ka = k.slice(cols);
            let va = v.slice(cols);
            let mut scores = qa.dot(&ka.t());
            scores *= scale;
            for (j, &keep) in batch.mask[s0..s1].iter().enumerate() {
                if !keep {
                    scores.column_mut(j).fill(F::neg_infinity());
                }
            }
            softmax_rows_inplace(&mut scores);
            let applied = if let Some(rng) = dropout.as_deref_mut() {
                let mask = dropout_mask::<F>(scores.dim(), p_drop, rng);
                let dropped = &scores * &mask;
                seq_drops.as_mut().unwrap().push(mask);
                dropped
            } else {
                scores.clone()
            };
            ctx.slice_mut(cols).assign(&applied.dot(&va));
            seq_probs.push(scores);
        }
        attn_probs.push(seq_probs);
        if let (Some(all), Some(mine)) = (attn_drop.as_mut(), seq_drops) {
            all.push(mine);
        }
    }

    let mut attn_out = layer.attn_out.forward(&ctx);
    let attn_out_drop = dropout.as_deref_mut().map(|rng| {
        let mask = dropout_mask::<F>(attn_out.dim(), p_drop, rng);
        attn_out *= &mask;
        mask
    });

    let res1 = &x + &attn_out;
    let (a1, ln1) = layer_norm_forward(&res1, &layer.attn_norm);

    let ffn_pre = layer.ffn_in.forward(&a1);
    let ffn_act = ffn_pre.mapv(gelu);
    let mut f2 = layer.ffn_out.forward(&ffn_act);
    let ffn_drop = dropout.as_deref_mut().map(|rng| {
        let mask = dropout_mask::<F>(f2.dim(), p_drop, rng);
        f2 *= &mask;
        mask
    });

    let res2 = &a1 + &f2;
    let (_, ln2) = layer_norm_forward(&res2, &layer.ffn_norm);

    LayerCache {
        x_in: x,
        q,
        k,
        v,
        attn_probs,
        attn_drop,
        ctx,
        attn_out_drop,
        ln1,
        a1,
        ffn_pre,
        ffn_act,
        ffn_drop,
        ln2,
    }
}

/// Runs the full encoder over a ragged batch. Pass `Some(rng)` to enable
/// dropout (training mode); `None` is deterministic evaluation.
pub fn encoder_forward_batch<F: Scalar>(
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    batch: &Batch,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<Forward<F>> {
    batch.validate(config)?;
    let n = batch.ids.len();
    let h = config.hidden_dim;
    let p_drop = config.dropout;
    if p_drop == 0.0 {
        dropout = None;
    }

    let mut positions = vec![0usize; n];
    for &(s0, s1) in &batch.seqs {
        for (pos, slot) in positions[s0..s1].iter_mut().enumerate() {
            *slot = pos;
        }
    }

    let mut emb: Array2<F> = Array2::zeros((n, h));
    for i in 0..n {
        let tok = params.token_emb.row(batch.ids[i] as usize);
        let pos = params.pos_emb.row(positions[i]);
        let mut row = emb.row_mut(i);
        for (o, (&a, &b)) in row.iter_mut().zip(tok.iter().zip(pos.iter())) {
            *o = a + b;
        }
    }

    let (mut x, emb_ln) = layer_norm_forward(&emb, &params.emb_norm);
    let emb_drop = dropout.as_deref_mut().map(|rng| {
        let mask = dropout_mask::<F>(x.dim(), p_drop, rng);
        x *= &mask;
        mask
    });

    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let cache = forward_layer(layer, config, batch, x, &mut dropout, p_drop);
        // Recover the layer output from the final norm cache.
        let mut out = cache.ln2.xhat.clone();
        out *= &layer.ffn_norm.gamma;
        out += &layer.ffn_norm.beta;
        layers.push(cache);
        x = out;
    }

    let b = batch.seqs.len();
    let mut cls_input: Array2<F> = Array2::zeros((b, h));
    for (bi, &(s0, _)) in batch.seqs.iter().enumerate() {
        cls_input.row_mut(bi).assign(&x.row(s0));
    }
    let pooled_pre = params.pooler.forward(&cls_input);
    let pooled = pooled_pre.mapv(|v| v.tanh());

    Ok(Forward {
        hidden: x,
        pooled,
        cls_input,
        positions,
        emb_ln,
        emb_drop,
        layers,
    })
}

/// Backpropagates `d_hidden` (per-token) and optionally `d_pooled`
/// (per-sequence) through the encoder, accumulating into `grads`.
pub fn encoder_backward<F: Scalar>(
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    batch: &Batch,
    fwd: &Forward<F>,
    mut d_hidden: Array2<F>,
    d_pooled: Option<&Array2<F>>,
    grads: &mut EncoderParams<F>,
) {
    let heads = config.heads;
    let h = config.hidden_dim;
    let hd = h / heads;
    let scale: F = sc(1.0 / (hd as f64).sqrt());

    if let Some(dp) = d_pooled {
        // tanh backward, then the pooler affine.
        let mut d_pre = dp.clone();
        d_pre.zip_mut_with(&fwd.pooled, |d, &p| *d = *d * (F::one() - p * p));
        let d_cls = params.pooler.backward(&fwd.cls_input, &d_pre, &mut grads.pooler);
        for (bi, &(s0, _)) in batch.seqs.iter().enumerate() {
            let mut row = d_hidden.row_mut(s0);
            row += &d_cls.row(bi);
        }
    }

    for (li, layer) in params.layers.iter().enumerate().rev() {
        let cache = &fwd.layers[li];
        let gl = &mut grads.layers[li];

        let dres2 = layer_norm_backward(&d_hidden, &cache.ln2, &layer.ffn_norm, &mut gl.ffn_norm);
        let mut d_a1 = dres2.clone();
        let mut d_f2 = dres2;
        if let Some(mask) = &cache.ffn_drop {
            d_f2 *= mask;
        }
        let d_g = layer.ffn_out.backward(&cache.ffn_act, &d_f2, &mut gl.ffn_out);
        let mut d_f1 = d_g;
        d_f1.zip_mut_with(&cache.ffn_pre, |d, &x| *d = *d * gelu_grad(x));
        d_a1 += &layer.ffn_in.backward(&cache.a1, &d_f1, &mut gl.ffn_in);

        let dres1 = layer_norm_backward(&d_a1, &cache.ln1, &layer.attn_norm, &mut gl.attn_norm);
        let mut d_x = dres1.clone();
        let mut d_attn_out = dres1;
        if let Some(mask) = &cache.attn_out_drop {
            d_attn_out *= mask;
        }
        let d_ctx = layer
            .attn_out
            .backward(&cache.ctx, &d_attn_out, &mut gl.attn_out);

        let n = d_ctx.nrows();
        let mut d_q: Array2<F> = Array2::zeros((n, h));
        let mut d_k: Array2<F> = Array2::zeros((n, h));
        let mut d_v: Array2<F> = Array2::zeros((n, h));
        for (si, &(s0, s1)) in batch.seqs.iter().enumerate() {
            for a in 0..heads {
                let cols = s![s0..s1, a * hd..(a + 1) * hd];
                let p = &cache.attn_probs[si][a];
                let drop = cache.attn_drop.as_ref().map(|d| &d[si][a]);
                let d_ctx_a = d_ctx.slice(cols);
                let va = cache.v.slice(cols);
                let qa = cache.q.slice(cols);
                let ka = cache.k.slice(cols);

                let pd = match drop {
                    Some(mask) => p * mask,
                    None => p.clone(),
                };
                let mut d_p = d_ctx_a.dot(&va.t());
                d_v.slice_mut(cols).assign(&pd.t().dot(&d_ctx_a));
                if let Some(mask) = drop {
                    d_p *= mask;
                }
                // softmax backward: ds = p * (dp - rowsum(dp * p))
                let rowdot = (&d_p * p).sum_axis(Axis(1));
                let mut d_scores = d_p;
                for (mut row, &r) in d_scores.rows_mut().into_iter().zip(rowdot.iter()) {
                    row.mapv_inplace(|v| v - r);
                }
                d_scores *= p;
                d_scores *= scale;
                d_q.slice_mut(cols).assign(&d_scores.dot(&ka));
                d_k.slice_mut(cols).assign(&d_scores.t().dot(&qa));
            }
        }
        d_x += &layer.attn_q.backward(&cache.x_in, &d_q, &mut gl.attn_q);
        d_x += &layer.attn_k.backward(&cache.x_in, &d_k, &mut gl.attn_k);
        d_x += &layer.attn_v.backward(&cache.x_in, &d_v, &mut gl.attn_v);
        d_hidden = d_x;
    }

    if let Some(mask) = &fwd.emb_drop {
        d_hidden *= mask;
    }
    let d_emb = layer_norm_backward(&d_hidden, &fwd.emb_ln, &params.emb_norm, &mut grads.emb_norm);
    for i in 0..batch.ids.len() {
        let mut trow = grads.token_emb.row_mut(batch.ids[i] as usize);
        trow += &d_emb.row(i);
        let mut prow = grads.pos_emb.row_mut(fwd.positions[i]);
        prow += &d_emb.row(i);
    }
}

/// Row-wise softmax (out of place).
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    softmax_rows_inplace(&mut out);
    out
}

/// Mean cross-entropy (natural log) over `(row, class)` targets.
/// Returns the loss and d(loss)/d(logits); rows not named in `targets`
/// get zero gradient.
pub fn cross_entropy_mean<F: Scalar>(
    logits: &Array2<F>,
    targets: &[(usize, usize)],
) -> (f64, Array2<F>) {
    assert!(!targets.is_empty(), "cross entropy over no targets");
    let count = sc::<F>(targets.len() as f64);
    let mut d_logits: Array2<F> = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0f64;
    for &(row, class) in targets {
        let r = logits.row(row);
        let max = r.iter().copied().fold(F::neg_infinity(), F::max);
        let logsum = r.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        loss -= (r[class] - logsum).to_f64().expect("finite loss");
        let mut drow = d_logits.row_mut(row);
        for (j, d) in drow.iter_mut().enumerate() {
            let p = (r[j] - logsum).exp();
            let y = if j == class { F::one() } else { F::zero() };
            *d = *d + (p - y) / count;
        }
    }
    (loss / targets.len() as f64, d_logits)
}
