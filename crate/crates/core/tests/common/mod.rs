//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written with plain nested `Vec`s and explicit loops so
//! that it shares no numerical code with the library.

#![allow(dead_code)]

use finsent_core::encoder::{evaluate, AdapterSet, EncodedExample, EncoderConfig, EncoderParams};
use finsent_core::tensor::Matrix;
use finsent_core::SentimentLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn to_mat(m: &Matrix) -> Mat {
    (0..m.rows).map(|i| (0..m.cols).map(|j| m.data[i * m.cols + j]).collect()).collect()
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// `W + (alpha / r) · B · A` for the slot named `name`, if adapted.
fn effective(w: &Matrix, name: &str, adapters: Option<&AdapterSet>) -> Mat {
    let mut out = to_mat(w);
    let Some(set) = adapters else { return out };
    for (slot, ad) in &set.entries {
        if slot.to_string() != name {
            continue;
        }
        let s = ad.alpha / ad.rank as f64;
        let (b, a) = (to_mat(&ad.b), to_mat(&ad.a));
        for i in 0..out.len() {
            for j in 0..out[0].len() {
                for r in 0..ad.rank {
                    out[i][j] += s * b[i][r] * a[r][j];
                }
            }
        }
    }
    out
}

fn norm_row(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mu = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d;
    (0..x.len()).map(|j| (x[j] - mu) / (var + eps).sqrt() * gain[j] + bias[j]).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Dense re-implementation of the encoder forward pass.
pub fn dense_logits(
    ids: &[usize],
    mask: &[u8],
    p: &EncoderParams,
    adapters: Option<&AdapterSet>,
    c: &EncoderConfig,
) -> Vec<f64> {
    let n = ids.len();
    let d = c.d_model;
    let dk = d / c.n_heads;
    let emb = to_mat(&p.token_embedding);
    let pos = to_mat(&p.position_embedding);
    let mut x: Mat = (0..n).map(|i| (0..d).map(|j| emb[ids[i]][j] + pos[i][j]).collect()).collect();
    let keys: Vec<usize> = (0..n).filter(|&j| mask[j] == 1).collect();

    for (l, lp) in p.layers.iter().enumerate() {
        let w = |m: &Matrix, nm: &str| effective(m, &format!("layers.{l}.{nm}"), adapters);
        let q = mul(&x, &w(&lp.w_q, "w_q"));
        let k = mul(&x, &w(&lp.w_k, "w_k"));
        let v = mul(&x, &w(&lp.w_v, "w_v"));
        let mut heads = vec![vec![0.0; d]; n];
        for h in 0..c.n_heads {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..n {
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|&j| cols.clone().map(|t| q[i][t] * k[j][t]).sum::<f64>() / (dk as f64).sqrt())
                    .collect();
                let top = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                let z: f64 = e.iter().sum();
                for t in cols.clone() {
                    heads[i][t] = keys.iter().zip(&e).map(|(&j, ej)| ej / z * v[j][t]).sum();
                }
            }
        }
        let attn = mul(&heads, &w(&lp.w_o, "w_o"));
        let g1 = &lp.ln1_gain.data;
        let b1 = &lp.ln1_bias.data;
        let z: Mat = (0..n)
            .map(|i| norm_row(&(0..d).map(|j| x[i][j] + attn[i][j]).collect::<Vec<_>>(), g1, b1, c.layernorm_eps))
            .collect();
        let mut hid = mul(&z, &w(&lp.w_ff1, "w_ff1"));
        for row in &mut hid {
            for (j, h) in row.iter_mut().enumerate() {
                *h = gelu(*h + lp.b_ff1.data[j]);
            }
        }
        let f = mul(&hid, &w(&lp.w_ff2, "w_ff2"));
        let (g2, b2) = (&lp.ln2_gain.data, &lp.ln2_bias.data);
        x = (0..n)
            .map(|i| {
                let r: Vec<f64> = (0..d).map(|j| z[i][j] + f[i][j] + lp.b_ff2.data[j]).collect();
                norm_row(&r, g2, b2, c.layernorm_eps)
            })
            .collect();
    }

    let pooled: Vec<f64> = (0..d).map(|j| keys.iter().map(|&i| x[i][j]).sum::<f64>() / keys.len() as f64).collect();
    let head = effective(&p.head_w, "head.w", adapters);
    (0..3).map(|o| p.head_b.data[o] + (0..d).map(|j| pooled[j] * head[j][o]).sum::<f64>()).collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between analytic gradients and central differences
/// over every element of every tensor, with the tensor that produced it.
pub fn encoder_fd_check(
    params: &EncoderParams,
    adapters: Option<&AdapterSet>,
    batch: &[EncodedExample],
    config: &EncoderConfig,
    analytic_base: Option<&EncoderParams>,
    analytic_adapters: Option<&AdapterSet>,
    eps: f64,
    floor: f64,
) -> (f64, String) {
    let loss = |p: &EncoderParams, a: Option<&AdapterSet>| evaluate(p, a, batch, config).unwrap().loss;
    let mut worst = (0.0, String::new());
    let mut record = |err: f64, name: &str| {
        if err > worst.0 {
            worst = (err, name.to_string());
        }
    };
    if let Some(g) = analytic_base {
        let grads = g.tensors();
        for (t, (name, _, grad)) in grads.iter().enumerate() {
            for k in 0..grad.data.len() {
                let mut plus = params.clone();
                plus.tensors_mut()[t].2.data[k] += eps;
                let mut minus = params.clone();
                minus.tensors_mut()[t].2.data[k] -= eps;
                let fd = (loss(&plus, adapters) - loss(&minus, adapters)) / (2.0 * eps);
                record(rel_err(grad.data[k], fd, floor), name);
            }
        }
    }
    if let (Some(g), Some(set)) = (analytic_adapters, adapters) {
        for (t, (name, grad)) in g.tensors().iter().enumerate() {
            for k in 0..grad.data.len() {
                let mut plus = set.clone();
                plus.tensors_mut()[t].1.data[k] += eps;
                let mut minus = set.clone();
                minus.tensors_mut()[t].1.data[k] -= eps;
                let fd = (loss(params, Some(&plus)) - loss(params, Some(&minus))) / (2.0 * eps);
                record(rel_err(grad.data[k], fd, floor), name);
            }
        }
    }
    worst
}

/// Random padded sequences for the tiny configuration.
pub fn random_examples(n: usize, config: &EncoderConfig, seed: u64) -> Vec<EncodedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=config.max_seq_len);
            let mut ids: Vec<usize> = (0..len).map(|_| rng.gen_range(1..config.vocab_size)).collect();
            let mut mask = vec![1u8; len];
            let total = rng.gen_range(len..=config.max_seq_len);
            ids.resize(total, 0);
            mask.resize(total, 0);
            EncodedExample { ids, mask, label: SentimentLabel::ALL[i % 3] }
        })
        .collect()
}

/// A learnable toy corpus for the tiny configuration: each class draws most
/// of its tokens from its own group of three ids.
pub fn separable_examples(n: usize, config: &EncoderConfig, seed: u64) -> Vec<EncodedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = i % 3;
            let len = rng.gen_range(3..=config.max_seq_len);
            let mut ids: Vec<usize> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.75) {
                        2 + 3 * class + rng.gen_range(0..3)
                    } else {
                        rng.gen_range(1..config.vocab_size)
                    }
                })
                .collect();
            let mut mask = vec![1u8; len];
            ids.resize(config.max_seq_len, 0);
            mask.resize(config.max_seq_len, 0);
            EncodedExample { ids, mask, label: SentimentLabel::ALL[class] }
        })
        .collect()
}

/// Adapters on every supported slot with non-zero `B`, so that every
/// adapter gradient is exercised.
pub fn busy_adapters(config: &EncoderConfig, seed: u64) -> AdapterSet {
    use finsent_core::encoder::AdapterTarget::*;
    let mut set = AdapterSet::new(config, &[Query, Key, Value, AttnOut, FfnIn, FfnOut, Head], 2, 3.0, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, ad) in &mut set.entries {
        ad.b.data.iter_mut().for_each(|x| *x = rng.gen_range(-0.3..0.3));
    }
    set
}
