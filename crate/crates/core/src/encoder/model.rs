//! Forward and backward passes of the post-norm transformer encoder
//! classifier.
//!
//! ```text
//! X0      = W_e[ids] + P[0..n]
//! Z_l     = LayerNorm(X_l + MHA(X_l))
//! X_{l+1} = LayerNorm(Z_l + FFN(Z_l))         FFN(z) = GELU(z·W1 + b1)·W2 + b2
//! logits  = meanpool_mask(X_L) · W_o + b_o
//! ```
//!
//! Every projection may carry a low-rank adapter, evaluated as a separate
//! path `x·W + s·(x·B)·A` rather than through a merged weight.

use crate::corpus::SentimentLabel;
use crate::encoder::lora::{AdapterSet, AdapterSlot, AdapterTarget, LoraAdapter};
use crate::encoder::{EncoderConfig, EncoderParams, LayerParams};
use crate::error::{Error, Result};
use crate::numeric::{argmax, log_sum_exp, softmax_unchecked};
use crate::tensor::Matrix;

/// A tokenized, padded training or evaluation example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub label: SentimentLabel,
}

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every base tensor (and adapters, when present).
    Full,
    /// Adapters only; the base model is frozen.
    Peft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Absent in [`TrainMode::Peft`].
    pub base: Option<EncoderParams>,
    /// Adapter gradients, stored in the `a`/`b` fields of each entry.
    pub adapters: Option<AdapterSet>,
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let (hat, _) = normalize(x, eps);
    hat.iter().zip(gain).zip(bias).map(|((h, g), b)| h * g + b).collect()
}

/// `(x - mean) / sqrt(var + eps)` and the denominator.
fn normalize(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let std = (var + eps).sqrt();
    (x.iter().map(|v| (v - mean) / std).collect(), std)
}

fn check_mask(n: usize, mask: &[u8]) -> Result<()> {
    if mask.len() != n {
        return Err(Error::DimensionMismatch(format!("mask of length {} for {n} positions", mask.len())));
    }
    if !mask.iter().any(|&m| m != 0) {
        return Err(Error::AllMasked);
    }
    Ok(())
}

/// Row-stochastic weights `softmax(Q·Kᵀ/√d_k)` with masked key columns
/// excluded.
pub fn attention_weights(q: &Matrix, k: &Matrix, mask: &[u8]) -> Result<Matrix> {
    if q.cols != k.cols || q.rows != k.rows {
        return Err(Error::DimensionMismatch(format!("Q {:?} vs K {:?}", q.shape(), k.shape())));
    }
    check_mask(k.rows, mask)?;
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut scores = q.matmul_t(k);
    for i in 0..scores.rows {
        let row = scores.row_mut(i);
        for (j, s) in row.iter_mut().enumerate() {
            *s = if mask[j] != 0 { *s * scale } else { f64::NEG_INFINITY };
        }
        let p = softmax_unchecked(row);
        row.copy_from_slice(&p);
    }
    Ok(scores)
}

/// Scaled dot-product attention over unmasked key positions.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, mask: &[u8]) -> Result<Matrix> {
    if v.rows != k.rows {
        return Err(Error::DimensionMismatch(format!("K {:?} vs V {:?}", k.shape(), v.shape())));
    }
    Ok(attention_weights(q, k, mask)?.matmul(v))
}

fn columns(m: &Matrix, start: usize, width: usize) -> Matrix {
    Matrix::from_fn(m.rows, width, |i, j| m[(i, start + j)])
}

fn put_columns(dst: &mut Matrix, start: usize, src: &Matrix) {
    for i in 0..src.rows {
        dst.row_mut(i)[start..start + src.cols].copy_from_slice(src.row(i));
    }
}

fn add_row_bias(m: &mut Matrix, bias: &Matrix) {
    for i in 0..m.rows {
        m.row_mut(i).iter_mut().zip(&bias.data).for_each(|(x, b)| *x += b);
    }
}

/// `x·W` plus the adapter path. Returns `(y, x·B)`.
fn project(x: &Matrix, w: &Matrix, adapter: Option<&LoraAdapter>) -> (Matrix, Option<Matrix>) {
    let mut y = x.matmul(w);
    let Some(ad) = adapter else {
        return (y, None);
    };
    let xb = x.matmul(&ad.b);
    y.add_scaled(&xb.matmul(&ad.a), ad.scaling());
    (y, Some(xb))
}

/// Multi-head self-attention with base weights: heads on column slices of
/// `X·W_Q`, `X·W_K`, `X·W_V`, concatenated and projected by `W_O`.
pub fn multi_head_attention(x: &Matrix, layer: &LayerParams, mask: &[u8], n_heads: usize) -> Result<Matrix> {
    let d = x.cols;
    if n_heads == 0 || d % n_heads != 0 || layer.w_q.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!("{n_heads} heads over width {d}")));
    }
    let (q, k, v) = (x.matmul(&layer.w_q), x.matmul(&layer.w_k), x.matmul(&layer.w_v));
    let dk = d / n_heads;
    let mut concat = Matrix::zeros(x.rows, d);
    for h in 0..n_heads {
        let (qh, kh, vh) = (columns(&q, h * dk, dk), columns(&k, h * dk, dk), columns(&v, h * dk, dk));
        put_columns(&mut concat, h * dk, &attention(&qh, &kh, &vh, mask)?);
    }
    Ok(concat.matmul(&layer.w_o))
}

const TARGETS: [AdapterTarget; 6] = [
    AdapterTarget::Query,
    AdapterTarget::Key,
    AdapterTarget::Value,
    AdapterTarget::AttnOut,
    AdapterTarget::FfnIn,
    AdapterTarget::FfnOut,
];

/// Index of each adapter into `AdapterSet::entries`, per layer and target.
struct AdapterIndex {
    layers: Vec<[Option<usize>; 6]>,
    head: Option<usize>,
}

impl AdapterIndex {
    fn build(adapters: Option<&AdapterSet>, n_layers: usize) -> Self {
        let find = |slot: AdapterSlot| adapters.and_then(|a| a.entries.iter().position(|(s, _)| *s == slot));
        Self {
            layers: (0..n_layers).map(|l| TARGETS.map(|target| find(AdapterSlot { layer: Some(l), target }))).collect(),
            head: find(AdapterSlot { layer: None, target: AdapterTarget::Head }),
        }
    }
}

fn adapter_at(adapters: Option<&AdapterSet>, index: Option<usize>) -> Option<&LoraAdapter> {
    Some(&adapters?.entries[index?].1)
}

struct LayerCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// `x·B` of each adapted projection, in `TARGETS` order.
    xb: [Option<Matrix>; 6],
    attn: Vec<Matrix>,
    concat: Matrix,
    hat1: Matrix,
    std1: Vec<f64>,
    z: Matrix,
    pre_act: Matrix,
    act: Matrix,
    hat2: Matrix,
    std2: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    ids: Vec<usize>,
    mask: Vec<u8>,
    layers: Vec<LayerCache>,
    pooled: Matrix,
    head_xb: Option<Matrix>,
}

pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub cache: ForwardCache,
}

fn layer_norm_rows(r: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> (Matrix, Matrix, Vec<f64>) {
    let mut out = Matrix::zeros(r.rows, r.cols);
    let mut hat = Matrix::zeros(r.rows, r.cols);
    let mut stds = Vec::with_capacity(r.rows);
    for i in 0..r.rows {
        let (h, std) = normalize(r.row(i), eps);
        for (j, hv) in h.iter().enumerate() {
            out[(i, j)] = hv * gain.data[j] + bias.data[j];
        }
        hat.row_mut(i).copy_from_slice(&h);
        stds.push(std);
    }
    (out, hat, stds)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn check_input(ids: &[usize], mask: &[u8], config: &EncoderConfig) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::AllMasked);
    }
    if ids.len() > config.max_seq_len {
        return Err(Error::DimensionMismatch(format!(
            "sequence of length {} exceeds max_seq_len {}",
            ids.len(),
            config.max_seq_len
        )));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::TokenOutOfRange { id, vocab_size: config.vocab_size });
    }
    check_mask(ids.len(), mask)
}

/// Logits for one sequence, keeping what the backward pass needs.
pub fn encoder_forward(
    ids: &[usize],
    mask: &[u8],
    params: &EncoderParams,
    adapters: Option<&AdapterSet>,
    config: &EncoderConfig,
) -> Result<ForwardPass> {
    check_input(ids, mask, config)?;
    if let Some(a) = adapters {
        a.check(params)?;
    }
    let index = AdapterIndex::build(adapters, config.n_layers);
    let n = ids.len();
    let d = config.d_model;
    let dk = config.head_dim();

    let mut x = Matrix::from_fn(n, d, |i, j| params.token_embedding[(ids[i], j)] + params.position_embedding[(i, j)]);
    let mut layers = Vec::with_capacity(config.n_layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let ad = |t: usize| adapter_at(adapters, index.layers[l][t]);
        let (q, xb_q) = project(&x, &lp.w_q, ad(0));
        let (k, xb_k) = project(&x, &lp.w_k, ad(1));
        let (v, xb_v) = project(&x, &lp.w_v, ad(2));
        let mut concat = Matrix::zeros(n, d);
        let mut attn = Vec::with_capacity(config.n_heads);
        for h in 0..config.n_heads {
            let (qh, kh, vh) = (columns(&q, h * dk, dk), columns(&k, h * dk, dk), columns(&v, h * dk, dk));
            let a = attention_weights(&qh, &kh, mask)?;
            put_columns(&mut concat, h * dk, &a.matmul(&vh));
            attn.push(a);
        }
        let (attn_out, xb_o) = project(&concat, &lp.w_o, ad(3));
        let mut r1 = x.clone();
        r1.add_assign(&attn_out);
        let (z, hat1, std1) = layer_norm_rows(&r1, &lp.ln1_gain, &lp.ln1_bias, config.layernorm_eps);

        let (mut pre_act, xb_ff1) = project(&z, &lp.w_ff1, ad(4));
        add_row_bias(&mut pre_act, &lp.b_ff1);
        let act = Matrix::from_vec(pre_act.rows, pre_act.cols, pre_act.data.iter().map(|&h| gelu(h)).collect());
        let (mut ffn, xb_ff2) = project(&act, &lp.w_ff2, ad(5));
        add_row_bias(&mut ffn, &lp.b_ff2);
        let mut r2 = z.clone();
        r2.add_assign(&ffn);
        let (x_next, hat2, std2) = layer_norm_rows(&r2, &lp.ln2_gain, &lp.ln2_bias, config.layernorm_eps);

        layers.push(LayerCache {
            x: std::mem::replace(&mut x, x_next),
            q,
            k,
            v,
            xb: [xb_q, xb_k, xb_v, xb_o, xb_ff1, xb_ff2],
            attn,
            concat,
            hat1,
            std1,
            z,
            pre_act,
            act,
            hat2,
            std2,
        });
    }

    let kept = mask.iter().filter(|&&m| m != 0).count() as f64;
    let mut pooled = Matrix::zeros(1, d);
    for i in (0..n).filter(|&i| mask[i] != 0) {
        pooled.row_mut(0).iter_mut().zip(x.row(i)).for_each(|(p, v)| *p += v / kept);
    }
    let (mut logits, head_xb) = project(&pooled, &params.head_w, adapter_at(adapters, index.head));
    add_row_bias(&mut logits, &params.head_b);

    Ok(ForwardPass {
        logits: logits.data,
        cache: ForwardCache { ids: ids.to_vec(), mask: mask.to_vec(), layers, pooled, head_xb },
    })
}

/// Logits only.
pub fn logits(
    ids: &[usize],
    mask: &[u8],
    params: &EncoderParams,
    adapters: Option<&AdapterSet>,
    config: &EncoderConfig,
) -> Result<Vec<f64>> {
    Ok(encoder_forward(ids, mask, params, adapters, config)?.logits)
}

pub fn predict(
    example_ids: &[usize],
    mask: &[u8],
    params: &EncoderParams,
    adapters: Option<&AdapterSet>,
    config: &EncoderConfig,
) -> Result<SentimentLabel> {
    let l = logits(example_ids, mask, params, adapters, config)?;
    Ok(SentimentLabel::ALL[argmax(&l)])
}

/// Backward through `y = x·W + s·(x·B)·A`; accumulates into the supplied
/// gradient buffers and returns `dx`.
fn project_backward(
    x: &Matrix,
    w: &Matrix,
    adapter: Option<(&LoraAdapter, &Matrix)>,
    dy: &Matrix,
    dw: Option<&mut Matrix>,
    d_adapter: Option<&mut LoraAdapter>,
) -> Matrix {
    let mut dx = dy.matmul_t(w);
    if let Some(dw) = dw {
        dw.add_assign(&x.t_matmul(dy));
    }
    if let Some((ad, xb)) = adapter {
        let s = ad.scaling();
        let dy_at = dy.matmul_t(&ad.a);
        dx.add_scaled(&dy_at.matmul_t(&ad.b), s);
        if let Some(g) = d_adapter {
            g.a.add_scaled(&xb.t_matmul(dy), s);
            g.b.add_scaled(&x.t_matmul(&dy_at), s);
        }
    }
    dx
}

fn layer_norm_backward(
    dy: &Matrix,
    hat: &Matrix,
    stds: &[f64],
    gain: &Matrix,
    grads: Option<(&mut Matrix, &mut Matrix)>,
) -> Matrix {
    let d = dy.cols as f64;
    let mut dx = Matrix::zeros(dy.rows, dy.cols);
    let (mut dgain, mut dbias) = (vec![0.0; dy.cols], vec![0.0; dy.cols]);
    for i in 0..dy.rows {
        let (dyr, hr) = (dy.row(i), hat.row(i));
        let dhat: Vec<f64> = dyr.iter().zip(&gain.data).map(|(g, w)| g * w).collect();
        let mean_dhat = dhat.iter().sum::<f64>() / d;
        let mean_dhat_hat = dhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d;
        for j in 0..dy.cols {
            dx[(i, j)] = (dhat[j] - mean_dhat - hr[j] * mean_dhat_hat) / stds[i];
            dgain[j] += dyr[j] * hr[j];
            dbias[j] += dyr[j];
        }
    }
    if let Some((g, b)) = grads {
        g.data.iter_mut().zip(&dgain).for_each(|(a, v)| *a += v);
        b.data.iter_mut().zip(&dbias).for_each(|(a, v)| *a += v);
    }
    dx
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for i in 0..m.rows {
        out.iter_mut().zip(m.row(i)).for_each(|(o, v)| *o += v);
    }
    out
}

/// Backpropagates `dlogits` through one cached forward pass.
fn backward(
    cache: &ForwardCache,
    dlogits: &[f64],
    params: &EncoderParams,
    adapters: Option<&AdapterSet>,
    config: &EncoderConfig,
    mut base_grad: Option<&mut EncoderParams>,
    mut adapter_grad: Option<&mut AdapterSet>,
) {
    let index = AdapterIndex::build(adapters, config.n_layers);
    let n = cache.ids.len();
    let d = config.d_model;
    let dk = config.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();

    macro_rules! adapter_grad_at {
        ($idx:expr) => {
            match ($idx, adapter_grad.as_deref_mut()) {
                (Some(i), Some(g)) => Some(&mut g.entries[i].1),
                _ => None,
            }
        };
    }

    let dlog = Matrix::from_vec(1, dlogits.len(), dlogits.to_vec());
    if let Some(g) = base_grad.as_deref_mut() {
        g.head_b.data.iter_mut().zip(dlogits).for_each(|(a, v)| *a += v);
    }
    let head_adapter = adapter_at(adapters, index.head).zip(cache.head_xb.as_ref());
    let dpooled = project_backward(
        &cache.pooled,
        &params.head_w,
        head_adapter,
        &dlog,
        base_grad.as_deref_mut().map(|g| &mut g.head_w),
        adapter_grad_at!(index.head),
    );

    let kept = cache.mask.iter().filter(|&&m| m != 0).count() as f64;
    let mut dx = Matrix::zeros(n, d);
    for i in (0..n).filter(|&i| cache.mask[i] != 0) {
        dx.row_mut(i).iter_mut().zip(&dpooled.data).for_each(|(a, v)| *a = v / kept);
    }

    for (l, (lc, lp)) in cache.layers.iter().zip(&params.layers).enumerate().rev() {
        let ad = |t: usize| adapter_at(adapters, index.layers[l][t]).zip(lc.xb[t].as_ref());

        let mut lg = base_grad.as_deref_mut().map(|g| &mut g.layers[l]);
        let dr2 = layer_norm_backward(
            &dx,
            &lc.hat2,
            &lc.std2,
            &lp.ln2_gain,
            lg.as_deref_mut().map(|g| (&mut g.ln2_gain, &mut g.ln2_bias)),
        );
        if let Some(g) = lg.as_deref_mut() {
            g.b_ff2.data.iter_mut().zip(column_sums(&dr2)).for_each(|(a, v)| *a += v);
        }
        let dact = project_backward(
            &lc.act,
            &lp.w_ff2,
            ad(5),
            &dr2,
            lg.as_deref_mut().map(|g| &mut g.w_ff2),
            adapter_grad_at!(index.layers[l][5]),
        );
        let dpre = Matrix::from_vec(
            dact.rows,
            dact.cols,
            dact.data.iter().zip(&lc.pre_act.data).map(|(g, &h)| g * gelu_grad(h)).collect(),
        );
        if let Some(g) = lg.as_deref_mut() {
            g.b_ff1.data.iter_mut().zip(column_sums(&dpre)).for_each(|(a, v)| *a += v);
        }
        let mut dz = project_backward(
            &lc.z,
            &lp.w_ff1,
            ad(4),
            &dpre,
            lg.as_deref_mut().map(|g| &mut g.w_ff1),
            adapter_grad_at!(index.layers[l][4]),
        );
        dz.add_assign(&dr2);

        let dr1 = layer_norm_backward(
            &dz,
            &lc.hat1,
            &lc.std1,
            &lp.ln1_gain,
            lg.as_deref_mut().map(|g| (&mut g.ln1_gain, &mut g.ln1_bias)),
        );
        let dconcat = project_backward(
            &lc.concat,
            &lp.w_o,
            ad(3),
            &dr1,
            lg.as_deref_mut().map(|g| &mut g.w_o),
            adapter_grad_at!(index.layers[l][3]),
        );

        let (mut dq, mut dk_all, mut dv) = (Matrix::zeros(n, d), Matrix::zeros(n, d), Matrix::zeros(n, d));
        for (h, a) in lc.attn.iter().enumerate() {
            let (qh, kh, vh) = (columns(&lc.q, h * dk, dk), columns(&lc.k, h * dk, dk), columns(&lc.v, h * dk, dk));
            let doh = columns(&dconcat, h * dk, dk);
            let da = doh.matmul_t(&vh);
            put_columns(&mut dv, h * dk, &a.t_matmul(&doh));
            let mut ds = Matrix::zeros(n, n);
            for i in 0..n {
                let dot: f64 = a.row(i).iter().zip(da.row(i)).map(|(p, g)| p * g).sum();
                for j in 0..n {
                    ds[(i, j)] = a[(i, j)] * (da[(i, j)] - dot) * scale;
                }
            }
            put_columns(&mut dq, h * dk, &ds.matmul(&kh));
            put_columns(&mut dk_all, h * dk, &ds.t_matmul(&qh));
        }

        let mut dx_in = dr1;
        let grads_qkv = [(0, &lp.w_q, &dq), (1, &lp.w_k, &dk_all), (2, &lp.w_v, &dv)];
        for (t, w, dy) in grads_qkv {
            let dw = lg.as_deref_mut().map(|g| match t {
                0 => &mut g.w_q,
                1 => &mut g.w_k,
                _ => &mut g.w_v,
            });
            dx_in.add_assign(&project_backward(&lc.x, w, ad(t), dy, dw, adapter_grad_at!(index.layers[l][t])));
        }
        dx = dx_in;
    }

    if let Some(g) = base_grad {
        for (i, &id) in cache.ids.iter().enumerate() {
            g.token_embedding.row_mut(id).iter_mut().zip(dx.row(i)).for_each(|(a, v)| *a += v);
            g.position_embedding.row_mut(i).iter_mut().zip(dx.row(i)).for_each(|(a, v)| *a += v);
        }
    }
}

/// Per-example results of [`loss_and_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

/// Mean cross-entropy over `batch` and its gradients. In
/// [`TrainMode::Peft`] only adapter gradients are produced.
pub fn loss_and_grad(
    params: &EncoderParams,
    adapters: Option<&AdapterSet>,
    batch: &[EncodedExample],
    config: &EncoderConfig,
    mode: TrainMode,
) -> Result<(BatchStats, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if mode == TrainMode::Peft && adapters.is_none_or(|a| a.entries.is_empty()) {
        return Err(Error::InvalidArgument("adapter-only training needs at least one adapter".into()));
    }
    let mut base = (mode == TrainMode::Full).then(|| EncoderParams::zeros(config));
    let mut adapter_grads = adapters.map(AdapterSet::zeros_like);
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for ex in batch {
        let pass = encoder_forward(&ex.ids, &ex.mask, params, adapters, config)?;
        let y = ex.label.index();
        loss += log_sum_exp(&pass.logits) - pass.logits[y];
        if argmax(&pass.logits) == y {
            correct += 1;
        }
        let mut dlogits = softmax_unchecked(&pass.logits);
        dlogits[y] -= 1.0;
        dlogits.iter_mut().for_each(|g| *g *= inv_n);
        backward(&pass.cache, &dlogits, params, adapters, config, base.as_mut(), adapter_grads.as_mut());
    }
    Ok((BatchStats { loss: loss * inv_n, correct, count: batch.len() }, Gradients { base, adapters: adapter_grads }))
}

/// Mean loss and accuracy without gradients.
pub fn evaluate(
    params: &EncoderParams,
    adapters: Option<&AdapterSet>,
    examples: &[EncodedExample],
    config: &EncoderConfig,
) -> Result<BatchStats> {
    let mut loss = 0.0;
    let mut correct = 0;
    for ex in examples {
        let l = logits(&ex.ids, &ex.mask, params, adapters, config)?;
        let y = ex.label.index();
        loss += log_sum_exp(&l) - l[y];
        correct += usize::from(argmax(&l) == y);
    }
    let count = examples.len();
    Ok(BatchStats { loss: if count == 0 { 0.0 } else { loss / count as f64 }, correct, count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn single_position_returns_v() {
        let q = Matrix::from_vec(1, 2, vec![0.3, -1.0]);
        let v = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        assert_eq!(attention(&q, &q, &v, &[1]).unwrap(), v);
    }

    #[test]
    fn large_orthonormal_queries_attend_to_self() {
        let n = 4;
        let qk = Matrix::from_fn(n, n, |i, j| if i == j { 100.0 } else { 0.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_matrix(&mut rng, n, 3, 1.0);
        let out = attention(&qk, &qk, &v, &[1; 4]).unwrap();
        assert!(out.max_abs_diff(&v) < 1e-9);
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_matrix(&mut rng, 3, 2, 1.0);
        let k = random_matrix(&mut rng, 3, 2, 1.0);
        let a = attention_weights(&q, &k, &[1, 0, 1]).unwrap();
        for i in 0..3 {
            assert_eq!(a[(i, 1)], 0.0);
        }
        assert!(matches!(attention_weights(&q, &k, &[0, 0, 0]), Err(Error::AllMasked)));
    }

    #[test]
    fn single_head_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = EncoderConfig { n_heads: 1, ..EncoderConfig::tiny() };
        let p = EncoderParams::init(&c, 3).unwrap();
        let lp = &p.layers[0];
        let x = random_matrix(&mut rng, 4, 8, 1.0);
        let mask = [1, 1, 0, 1];
        let got = multi_head_attention(&x, lp, &mask, 1).unwrap();
        let want =
            attention(&x.matmul(&lp.w_q), &x.matmul(&lp.w_k), &x.matmul(&lp.w_v), &mask).unwrap().matmul(&lp.w_o);
        assert!(got.max_abs_diff(&want) < 1e-12);

        let mut zeroed = lp.clone();
        zeroed.w_o.fill(0.0);
        assert!(multi_head_attention(&x, &zeroed, &mask, 2).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_examples() {
        assert!(layer_norm(&[3.0; 5], &[1.0; 5], &[0.0; 5], 1e-5).iter().all(|&v| v == 0.0));
        let bias = [0.1, -0.2, 0.3];
        assert_eq!(layer_norm(&[1.0, 5.0, -2.0], &[0.0; 3], &bias, 1e-5), bias);
    }

    #[test]
    fn zero_layers_is_pooled_embedding_head() {
        let c = EncoderConfig { n_layers: 0, ..EncoderConfig::tiny() };
        let p = EncoderParams::init(&c, 4).unwrap();
        let ids = [3, 7, 1];
        let mask = [1, 1, 0];
        let got = logits(&ids, &mask, &p, None, &c).unwrap();
        for k in 0..3 {
            let mut want = p.head_b.data[k];
            for j in 0..8 {
                let pooled =
                    (0..2).map(|i| p.token_embedding[(ids[i], j)] + p.position_embedding[(i, j)]).sum::<f64>() / 2.0;
                want += pooled * p.head_w[(j, k)];
            }
            assert!((got[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_inputs() {
        let c = EncoderConfig::tiny();
        let p = EncoderParams::init(&c, 0).unwrap();
        assert!(matches!(logits(&[1, 2], &[0, 0], &p, None, &c), Err(Error::AllMasked)));
        assert!(matches!(logits(&[11], &[1], &p, None, &c), Err(Error::TokenOutOfRange { .. })));
        assert!(logits(&[1; 7], &[1; 7], &p, None, &c).is_err());
        assert!(logits(&[], &[], &p, None, &c).is_err());
    }

    #[test]
    fn padding_does_not_change_logits() {
        let c = EncoderConfig::tiny();
        let p = EncoderParams::init(&c, 5).unwrap();
        let short = logits(&[4, 2, 9], &[1, 1, 1], &p, None, &c).unwrap();
        let padded = logits(&[4, 2, 9, 0, 0, 0], &[1, 1, 1, 0, 0, 0], &p, None, &c).unwrap();
        for (a, b) in short.iter().zip(&padded) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn peft_mode_needs_adapters() {
        let c = EncoderConfig::tiny();
        let p = EncoderParams::init(&c, 0).unwrap();
        let ex = EncodedExample { ids: vec![2, 3], mask: vec![1, 1], label: SentimentLabel::Neutral };
        assert!(loss_and_grad(&p, None, &[ex], &c, TrainMode::Peft).is_err());
    }
}
