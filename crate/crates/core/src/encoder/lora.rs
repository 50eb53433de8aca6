//! Low-rank adapters: `W_eff = W + (alpha / r) · B · A` with `W` of shape
//! `m × n`, `B` of shape `m × r` and `A` of shape `r × n`. `B` starts at
//! zero so a fresh adapter leaves the model unchanged.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// `r × n`
    pub a: Matrix,
    /// `m × r`
    pub b: Matrix,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    /// Adapter for an `m × n` weight: `A ~ U(±1/√m)`, `B = 0`.
    pub fn new<R: Rng>(m: usize, n: usize, rank: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("adapter rank must be at least 1".into()));
        }
        let bound = 1.0 / (m as f64).sqrt();
        Ok(Self {
            a: Matrix::from_fn(rank, n, |_, _| rng.gen_range(-bound..=bound)),
            b: Matrix::zeros(m, rank),
            rank,
            alpha,
        })
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Shape `(m, n)` of the weight this adapter modifies.
    pub fn target_shape(&self) -> (usize, usize) {
        (self.b.rows, self.a.cols)
    }

    fn check(&self) -> Result<()> {
        if self.rank == 0 || self.a.rows != self.rank || self.b.cols != self.rank {
            return Err(Error::DimensionMismatch(format!(
                "adapter rank {} with A {:?} and B {:?}",
                self.rank,
                self.a.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }

    /// `(alpha / r) · B · A`
    pub fn delta(&self) -> Matrix {
        let mut d = self.b.matmul(&self.a);
        d.scale(self.scaling());
        d
    }
}

/// Returns `W + (alpha / r) · B · A`.
pub fn merge_adapter(w: &Matrix, adapter: &LoraAdapter) -> Result<Matrix> {
    adapter.check()?;
    if w.shape() != adapter.target_shape() {
        return Err(Error::DimensionMismatch(format!(
            "weight {:?} but adapter targets {:?}",
            w.shape(),
            adapter.target_shape()
        )));
    }
    let mut merged = w.clone();
    merged.add_assign(&adapter.delta());
    Ok(merged)
}

/// Weight matrices that can carry an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterTarget {
    Query,
    Key,
    Value,
    AttnOut,
    FfnIn,
    FfnOut,
    /// The classification head (not per layer).
    Head,
}

impl AdapterTarget {
    pub const DEFAULT: [AdapterTarget; 2] = [AdapterTarget::Query, AdapterTarget::Value];

    fn tensor_name(self) -> &'static str {
        match self {
            AdapterTarget::Query => "w_q",
            AdapterTarget::Key => "w_k",
            AdapterTarget::Value => "w_v",
            AdapterTarget::AttnOut => "w_o",
            AdapterTarget::FfnIn => "w_ff1",
            AdapterTarget::FfnOut => "w_ff2",
            AdapterTarget::Head => "head.w",
        }
    }
}

impl FromStr for AdapterTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "query" | "q" | "w_q" => Self::Query,
            "key" | "k" | "w_k" => Self::Key,
            "value" | "v" | "w_v" => Self::Value,
            "attn_out" | "o" | "w_o" => Self::AttnOut,
            "ffn_in" | "w_ff1" => Self::FfnIn,
            "ffn_out" | "w_ff2" => Self::FfnOut,
            "head" => Self::Head,
            other => return Err(format!("unknown adapter target {other:?}")),
        })
    }
}

/// Location of one adapter: a per-layer target or the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdapterSlot {
    pub layer: Option<usize>,
    pub target: AdapterTarget,
}

impl fmt::Display for AdapterSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layers.{l}.{}", self.target.tensor_name()),
            None => f.write_str(self.target.tensor_name()),
        }
    }
}

impl AdapterSlot {
    /// The base weight this slot adapts.
    pub fn weight<'a>(&self, params: &'a EncoderParams) -> &'a Matrix {
        let Some(l) = self.layer else {
            return &params.head_w;
        };
        let layer = &params.layers[l];
        match self.target {
            AdapterTarget::Query => &layer.w_q,
            AdapterTarget::Key => &layer.w_k,
            AdapterTarget::Value => &layer.w_v,
            AdapterTarget::AttnOut => &layer.w_o,
            AdapterTarget::FfnIn => &layer.w_ff1,
            AdapterTarget::FfnOut => &layer.w_ff2,
            AdapterTarget::Head => &params.head_w,
        }
    }

    pub fn weight_mut<'a>(&self, params: &'a mut EncoderParams) -> &'a mut Matrix {
        let Some(l) = self.layer else {
            return &mut params.head_w;
        };
        let layer = &mut params.layers[l];
        match self.target {
            AdapterTarget::Query => &mut layer.w_q,
            AdapterTarget::Key => &mut layer.w_k,
            AdapterTarget::Value => &mut layer.w_v,
            AdapterTarget::AttnOut => &mut layer.w_o,
            AdapterTarget::FfnIn => &mut layer.w_ff1,
            AdapterTarget::FfnOut => &mut layer.w_ff2,
            AdapterTarget::Head => &mut params.head_w,
        }
    }
}

/// The adapters attached to one model, in slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    pub entries: Vec<(AdapterSlot, LoraAdapter)>,
}

impl AdapterSet {
    /// One adapter per listed target, on every layer (the head once).
    pub fn new(config: &EncoderConfig, targets: &[AdapterTarget], rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let shapes = EncoderParams::zeros(config);
        let mut targets = targets.to_vec();
        targets.sort();
        targets.dedup();
        let mut slots = Vec::new();
        for l in 0..config.n_layers {
            for &t in targets.iter().filter(|&&t| t != AdapterTarget::Head) {
                slots.push(AdapterSlot { layer: Some(l), target: t });
            }
        }
        if targets.contains(&AdapterTarget::Head) {
            slots.push(AdapterSlot { layer: None, target: AdapterTarget::Head });
        }
        let entries = slots
            .into_iter()
            .enumerate()
            .map(|(i, slot)| {
                let (m, n) = slot.weight(&shapes).shape();
                let mut rng = substream(seed, "lora.init", i as u64);
                Ok((slot, LoraAdapter::new(m, n, rank, alpha, &mut rng)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn get(&self, slot: AdapterSlot) -> Option<&LoraAdapter> {
        self.entries.iter().find(|(s, _)| *s == slot).map(|(_, a)| a)
    }

    pub fn n_parameters(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.a.data.len() + a.b.data.len()).sum()
    }

    /// Gradient buffers with the same shapes and zero contents.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(s, a)| {
                    (
                        *s,
                        LoraAdapter {
                            a: Matrix::zeros(a.a.rows, a.a.cols),
                            b: Matrix::zeros(a.b.rows, a.b.cols),
                            rank: a.rank,
                            alpha: a.alpha,
                        },
                    )
                })
                .collect(),
        }
    }

    /// `(name, tensor)` pairs: `<slot>.lora_a`, `<slot>.lora_b`.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.entries.iter().flat_map(|(s, a)| [(format!("{s}.lora_a"), &a.a), (format!("{s}.lora_b"), &a.b)]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.entries
            .iter_mut()
            .flat_map(|(s, a)| [(format!("{s}.lora_a"), &mut a.a), (format!("{s}.lora_b"), &mut a.b)])
            .collect()
    }

    /// Checks every adapter against the weight it targets.
    pub fn check(&self, params: &EncoderParams) -> Result<()> {
        for (slot, adapter) in &self.entries {
            adapter.check()?;
            if let Some(l) = slot.layer {
                if l >= params.layers.len() {
                    return Err(Error::DimensionMismatch(format!("adapter on missing layer {l}")));
                }
            }
            let w = slot.weight(params);
            if w.shape() != adapter.target_shape() {
                return Err(Error::DimensionMismatch(format!(
                    "{slot}: weight {:?} but adapter targets {:?}",
                    w.shape(),
                    adapter.target_shape()
                )));
            }
        }
        Ok(())
    }

    /// A copy of `params` with every adapter folded into its weight.
    pub fn merged(&self, params: &EncoderParams) -> Result<EncoderParams> {
        self.check(params)?;
        let mut out = params.clone();
        for (slot, adapter) in &self.entries {
            let w = slot.weight_mut(&mut out);
            *w = merge_adapter(w, adapter)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_b_merges_to_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let adapter = LoraAdapter::new(4, 3, 2, 8.0, &mut rng).unwrap();
        assert_eq!(merge_adapter(&w, &adapter).unwrap(), w);
    }

    #[test]
    fn rank_one_outer_product() {
        let w = Matrix::from_fn(3, 2, |i, j| i as f64 - j as f64);
        let u = [0.5, -2.0];
        let v = [1.0, 3.0, -1.0];
        let adapter = LoraAdapter {
            a: Matrix::from_vec(1, 2, u.to_vec()),
            b: Matrix::from_vec(3, 1, v.to_vec()),
            rank: 1,
            alpha: 1.0,
        };
        let merged = merge_adapter(&w, &adapter).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(merged[(i, j)], w[(i, j)] + v[i] * u[j]);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let adapter = LoraAdapter::new(4, 3, 2, 2.0, &mut rng).unwrap();
        assert!(merge_adapter(&Matrix::zeros(3, 4), &adapter).is_err());
        let mut broken = adapter.clone();
        broken.rank = 3;
        assert!(merge_adapter(&Matrix::zeros(4, 3), &broken).is_err());
        assert!(LoraAdapter::new(4, 3, 0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn default_placement_covers_query_and_value() {
        let c = EncoderConfig { n_layers: 2, ..EncoderConfig::tiny() };
        let set = AdapterSet::new(&c, &AdapterTarget::DEFAULT, 4, 8.0, 1).unwrap();
        let names: Vec<String> = set.entries.iter().map(|(s, _)| s.to_string()).collect();
        assert_eq!(names, ["layers.0.w_q", "layers.0.w_v", "layers.1.w_q", "layers.1.w_v"]);
        let with_head = AdapterSet::new(&c, &[AdapterTarget::Head, AdapterTarget::Query], 2, 2.0, 1).unwrap();
        assert_eq!(with_head.entries.last().unwrap().0.to_string(), "head.w");
        assert_eq!(with_head.entries.last().unwrap().1.target_shape(), (8, 3));
    }
}
