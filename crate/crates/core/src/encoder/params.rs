use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub n_classes: usize,
    pub layernorm_eps: f64,
}

impl EncoderConfig {
    /// The small configuration used by the gradient and oracle checks.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 11,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_layers: 1,
            max_seq_len: 6,
            n_classes: 3,
            layernorm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_classes != 3 {
            return Err(Error::InvalidArgument("n_classes must be 3".into()));
        }
        if !(self.layernorm_eps > 0.0) {
            return Err(Error::InvalidArgument("layernorm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// How a tensor is treated by weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Gain,
}

/// One transformer layer. Projections are stored `d_in × d_out` and applied
/// to row vectors (`x · W`). Biases and layer-norm parameters are `1 × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `V × d_model`
    pub token_embedding: Matrix,
    /// `max_seq_len × d_model`, learned.
    pub position_embedding: Matrix,
    pub layers: Vec<LayerParams>,
    /// `d_model × 3`
    pub head_w: Matrix,
    /// `1 × 3`
    pub head_b: Matrix,
}

fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

impl LayerParams {
    fn zeros(c: &EncoderConfig) -> Self {
        let d = c.d_model;
        Self {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
            w_o: Matrix::zeros(d, d),
            ln1_gain: Matrix::zeros(1, d),
            ln1_bias: Matrix::zeros(1, d),
            w_ff1: Matrix::zeros(d, c.d_ff),
            b_ff1: Matrix::zeros(1, c.d_ff),
            w_ff2: Matrix::zeros(c.d_ff, d),
            b_ff2: Matrix::zeros(1, d),
            ln2_gain: Matrix::zeros(1, d),
            ln2_bias: Matrix::zeros(1, d),
        }
    }

    fn tensors(&self) -> [(&'static str, TensorKind, &Matrix); 12] {
        use TensorKind::*;
        [
            ("w_q", Weight, &self.w_q),
            ("w_k", Weight, &self.w_k),
            ("w_v", Weight, &self.w_v),
            ("w_o", Weight, &self.w_o),
            ("ln1_gain", Gain, &self.ln1_gain),
            ("ln1_bias", Bias, &self.ln1_bias),
            ("w_ff1", Weight, &self.w_ff1),
            ("b_ff1", Bias, &self.b_ff1),
            ("w_ff2", Weight, &self.w_ff2),
            ("b_ff2", Bias, &self.b_ff2),
            ("ln2_gain", Gain, &self.ln2_gain),
            ("ln2_bias", Bias, &self.ln2_bias),
        ]
    }

    fn tensors_mut(&mut self) -> [(&'static str, TensorKind, &mut Matrix); 12] {
        use TensorKind::*;
        [
            ("w_q", Weight, &mut self.w_q),
            ("w_k", Weight, &mut self.w_k),
            ("w_v", Weight, &mut self.w_v),
            ("w_o", Weight, &mut self.w_o),
            ("ln1_gain", Gain, &mut self.ln1_gain),
            ("ln1_bias", Bias, &mut self.ln1_bias),
            ("w_ff1", Weight, &mut self.w_ff1),
            ("b_ff1", Bias, &mut self.b_ff1),
            ("w_ff2", Weight, &mut self.w_ff2),
            ("b_ff2", Bias, &mut self.b_ff2),
            ("ln2_gain", Gain, &mut self.ln2_gain),
            ("ln2_bias", Bias, &mut self.ln2_bias),
        ]
    }
}

impl EncoderParams {
    /// All-zero tensors of the right shapes (used for gradient buffers).
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.d_model;
        Self {
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.max_seq_len, d),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(config)).collect(),
            head_w: Matrix::zeros(d, config.n_classes),
            head_b: Matrix::zeros(1, config.n_classes),
        }
    }

    /// Weights ~ U(±1/√fan_in), layer-norm gains 1, biases 0.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        Self::init_scaled(config, seed, 1.0)
    }

    /// As [`init`](Self::init) with every weight bound multiplied by `scale`.
    pub fn init_scaled(config: &EncoderConfig, seed: u64, scale: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "encoder.init", 0);
        let d = config.d_model;
        let bound = |fan_in: usize| scale / (fan_in as f64).sqrt();
        let token_embedding = uniform(&mut rng, config.vocab_size, d, bound(d));
        let position_embedding = uniform(&mut rng, config.max_seq_len, d, bound(d));
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerParams {
                w_q: uniform(&mut rng, d, d, bound(d)),
                w_k: uniform(&mut rng, d, d, bound(d)),
                w_v: uniform(&mut rng, d, d, bound(d)),
                w_o: uniform(&mut rng, d, d, bound(d)),
                ln1_gain: Matrix::filled(1, d, 1.0),
                ln1_bias: Matrix::zeros(1, d),
                w_ff1: uniform(&mut rng, d, config.d_ff, bound(d)),
                b_ff1: Matrix::zeros(1, config.d_ff),
                w_ff2: uniform(&mut rng, config.d_ff, d, bound(config.d_ff)),
                b_ff2: Matrix::zeros(1, d),
                ln2_gain: Matrix::filled(1, d, 1.0),
                ln2_bias: Matrix::zeros(1, d),
            });
        }
        Ok(Self {
            token_embedding,
            position_embedding,
            layers,
            head_w: uniform(&mut rng, d, config.n_classes, bound(d)),
            head_b: Matrix::zeros(1, config.n_classes),
        })
    }

    /// Every tensor with its canonical name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, TensorKind, &Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), TensorKind::Weight, &self.token_embedding),
            ("position_embedding".to_string(), TensorKind::Weight, &self.position_embedding),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, kind, t) in layer.tensors() {
                out.push((format!("layers.{l}.{name}"), kind, t));
            }
        }
        out.push(("head.w".into(), TensorKind::Weight, &self.head_w));
        out.push(("head.b".into(), TensorKind::Bias, &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), TensorKind::Weight, &mut self.token_embedding),
            ("position_embedding".to_string(), TensorKind::Weight, &mut self.position_embedding),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (name, kind, t) in layer.tensors_mut() {
                out.push((format!("layers.{l}.{name}"), kind, t));
            }
        }
        out.push(("head.w".into(), TensorKind::Weight, &mut self.head_w));
        out.push(("head.b".into(), TensorKind::Bias, &mut self.head_b));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.is_finite())
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        let want = EncoderParams::zeros(config);
        let (have, want) = (self.tensors(), want.tensors());
        if have.len() != want.len() {
            return Err(Error::DimensionMismatch(format!("{} tensors, expected {}", have.len(), want.len())));
        }
        for ((name, _, a), (_, _, b)) in have.iter().zip(&want) {
            if a.shape() != b.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::tiny().validate().is_ok());
        let bad = EncoderConfig { n_heads: 3, ..EncoderConfig::tiny() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { d_ff: 0, ..EncoderConfig::tiny() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let c = EncoderConfig::tiny();
        let a = EncoderParams::init(&c, 1).unwrap();
        assert_eq!(a, EncoderParams::init(&c, 1).unwrap());
        assert_ne!(a, EncoderParams::init(&c, 2).unwrap());
        a.check_shapes(&c).unwrap();
        assert_eq!(a.layers[0].ln1_gain.data, vec![1.0; 8]);
        let bound = 1.0 / 8f64.sqrt();
        assert!(a.layers[0].w_q.data.iter().all(|x| x.abs() <= bound));
        let names: Vec<String> = a.tensors().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(names.len(), 16);
        assert_eq!(names[2], "layers.0.w_q");
    }
}
