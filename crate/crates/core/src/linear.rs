//! Multinomial logistic regression over sparse TF-IDF rows.
//!
//! Parameters start at zero and are fitted by mini-batch gradient descent
//! on mean cross-entropy with an optional `λ‖W‖²` penalty.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};
use crate::features::{DocTermMatrix, SparseRow};
use crate::numeric::{argmax, log_sum_exp, softmax};
use crate::rng::substream;
use crate::tensor::Matrix;

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `C × D` weights.
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub dw: Matrix,
    pub db: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LinearHyper {
    fn default() -> Self {
        Self { lr: 0.5, epochs: 100, batch_size: 16, l2: 0.0, seed: 0 }
    }
}

impl LinearParams {
    pub fn zeros(dim: usize) -> Self {
        Self { w: Matrix::zeros(N_CLASSES, dim), b: vec![0.0; N_CLASSES] }
    }

    pub fn dim(&self) -> usize {
        self.w.cols
    }

    fn check_row(&self, row: &[(usize, f64)]) -> Result<()> {
        match row.iter().find(|&&(c, _)| c >= self.dim()) {
            Some(&(c, _)) => {
                Err(Error::DimensionMismatch(format!("feature column {c} for a model of dimension {}", self.dim())))
            }
            None => Ok(()),
        }
    }

    fn logits(&self, row: &[(usize, f64)]) -> Vec<f64> {
        (0..N_CLASSES).map(|k| self.b[k] + row.iter().map(|&(c, x)| self.w[(k, c)] * x).sum::<f64>()).collect()
    }

    pub fn predict(&self, row: &[(usize, f64)]) -> Result<SentimentLabel> {
        let (logits, _) = forward(self, row)?;
        Ok(SentimentLabel::ALL[argmax(&logits)])
    }
}

/// Returns `(W·x + b, softmax(W·x + b))`.
pub fn forward(params: &LinearParams, features: &[(usize, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check_row(features)?;
    let logits = params.logits(features);
    let probs = softmax(&logits)?;
    Ok((logits, probs))
}

/// Mean cross-entropy over the batch plus `l2·‖W‖²`, with exact gradients.
pub fn loss_and_grad(
    params: &LinearParams,
    rows: &[&SparseRow],
    labels: &[SentimentLabel],
    l2: f64,
) -> Result<(f64, LinearGrad)> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} feature rows but {} labels", rows.len(), labels.len())));
    }
    let n = rows.len() as f64;
    let mut grad = LinearGrad { dw: Matrix::zeros(N_CLASSES, params.dim()), db: vec![0.0; N_CLASSES] };
    let mut loss = 0.0;
    for (row, label) in rows.iter().zip(labels) {
        params.check_row(row)?;
        let logits = params.logits(row);
        let y = label.index();
        loss += log_sum_exp(&logits) - logits[y];
        let mut delta = softmax(&logits)?;
        delta[y] -= 1.0;
        for (k, d) in delta.into_iter().enumerate() {
            grad.db[k] += d / n;
            for &(c, x) in row.iter() {
                grad.dw[(k, c)] += d * x / n;
            }
        }
    }
    loss /= n;
    if l2 != 0.0 {
        loss += l2 * params.w.data.iter().map(|w| w * w).sum::<f64>();
        grad.dw.add_scaled(&params.w, 2.0 * l2);
    }
    Ok((loss, grad))
}

/// Trains from zero initialization. The trace holds the full-set loss after
/// each epoch.
pub fn train(
    features: &DocTermMatrix,
    labels: &[SentimentLabel],
    hyper: &LinearHyper,
) -> Result<(LinearParams, Vec<f64>)> {
    if features.n_rows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.n_rows(),
            labels.len()
        )));
    }
    if !(hyper.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", hyper.lr)));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut params = LinearParams::zeros(features.n_cols);
    let mut trace = Vec::with_capacity(hyper.epochs);
    if hyper.epochs == 0 || labels.is_empty() {
        return Ok((params, trace));
    }
    let all_rows: Vec<&SparseRow> = features.rows.iter().collect();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut substream(hyper.seed, "linear.epoch", epoch as u64));
        for chunk in order.chunks(hyper.batch_size) {
            let rows: Vec<&SparseRow> = chunk.iter().map(|&i| &features.rows[i]).collect();
            let ys: Vec<SentimentLabel> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, grad) = loss_and_grad(&params, &rows, &ys, hyper.l2)?;
            params.w.add_scaled(&grad.dw, -hyper.lr);
            params.b.iter_mut().zip(&grad.db).for_each(|(b, g)| *b -= hyper.lr * g);
        }
        let (loss, _) = loss_and_grad(&params, &all_rows, labels, hyper.l2)?;
        trace.push(loss);
    }
    Ok((params, trace))
}

pub fn accuracy(params: &LinearParams, features: &DocTermMatrix, labels: &[SentimentLabel]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (row, &y) in features.rows.iter().zip(labels) {
        if params.predict(row)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

const CHECKPOINT_FORMAT: &str = "finsent-linear";
const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint layout. `w` is row-major `classes × dim`.
#[derive(Serialize, Deserialize)]
struct LinearCheckpoint {
    format: String,
    version: u32,
    classes: usize,
    dim: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl LinearParams {
    pub fn to_json(&self) -> Result<String> {
        let ckpt = LinearCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            classes: N_CLASSES,
            dim: self.dim(),
            w: self.w.data.clone(),
            b: self.b.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: LinearCheckpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.classes != N_CLASSES || ckpt.w.len() != ckpt.classes * ckpt.dim || ckpt.b.len() != ckpt.classes {
            return Err(Error::Checkpoint("tensor sizes do not match the header".into()));
        }
        let params = Self { w: Matrix::from_vec(ckpt.classes, ckpt.dim, ckpt.w), b: ckpt.b };
        if !params.w.is_finite() || params.b.iter().any(|x| !x.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use SentimentLabel::*;

    fn ln3() -> f64 {
        3f64.ln()
    }

    #[test]
    fn zero_params_are_uniform() {
        let p = LinearParams::zeros(4);
        let (_, probs) = forward(&p, &[(1, 0.7), (3, 0.2)]).unwrap();
        assert!(probs.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let rows = vec![vec![(0, 1.0)], vec![(2, 0.5)]];
        let refs: Vec<&SparseRow> = rows.iter().collect();
        let (loss, _) = loss_and_grad(&p, &refs, &[Positive, Negative], 0.0).unwrap();
        assert!((loss - ln3()).abs() < 1e-15);
    }

    #[test]
    fn identity_rows_pick_the_active_feature() {
        let mut p = LinearParams::zeros(3);
        for k in 0..3 {
            p.w[(k, k)] = 1.0;
        }
        assert_eq!(p.predict(&[(0, 1.0)]).unwrap(), Positive);
    }

    #[test]
    fn bias_only() {
        let mut p = LinearParams::zeros(2);
        p.b = vec![1.0, 0.0, 0.0];
        let (_, probs) = forward(&p, &[]).unwrap();
        assert_eq!(probs, softmax(&[1.0, 0.0, 0.0]).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = LinearParams::zeros(2);
        assert!(matches!(forward(&p, &[(2, 1.0)]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn confident_correct_example_has_zero_loss() {
        let mut p = LinearParams::zeros(1);
        p.b = vec![800.0, 0.0, 0.0];
        let row = vec![];
        let (loss, grad) = loss_and_grad(&p, &[&row], &[Positive], 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.db.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(loss_and_grad(&LinearParams::zeros(2), &[], &[], 0.0).is_err());
    }

    #[test]
    fn shifting_logits_keeps_argmax() {
        let mut p = LinearParams::zeros(3);
        p.w = Matrix::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.3);
        let row = vec![(0, 0.4), (2, 0.9)];
        let before = p.predict(&row).unwrap();
        p.b.iter_mut().for_each(|b| *b += 123.0);
        assert_eq!(p.predict(&row).unwrap(), before);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let dim = 6;
            let mut p = LinearParams::zeros(dim);
            p.w.data.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
            p.b.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
            let rows: Vec<SparseRow> = (0..4)
                .map(|_| {
                    let mut row = SparseRow::new();
                    for c in 0..dim {
                        if rng.gen_bool(0.6) {
                            row.push((c, rng.gen_range(-1.0..1.0)));
                        }
                    }
                    row
                })
                .collect();
            let labels: Vec<SentimentLabel> = (0..4).map(|_| SentimentLabel::ALL[rng.gen_range(0..3)]).collect();
            let refs: Vec<&SparseRow> = rows.iter().collect();
            let l2 = 0.05;
            let (_, grad) = loss_and_grad(&p, &refs, &labels, l2).unwrap();
            let eps = 1e-5;
            let loss_at = |q: &LinearParams| loss_and_grad(q, &refs, &labels, l2).unwrap().0;
            for i in 0..p.w.data.len() {
                let (mut hi, mut lo) = (p.clone(), p.clone());
                hi.w.data[i] += eps;
                lo.w.data[i] -= eps;
                let fd = (loss_at(&hi) - loss_at(&lo)) / (2.0 * eps);
                let g = grad.dw.data[i];
                assert!((fd - g).abs() <= 1e-6 * fd.abs().max(g.abs()).max(1e-3), "w[{i}]: {fd} vs {g}");
            }
            for k in 0..3 {
                let (mut hi, mut lo) = (p.clone(), p.clone());
                hi.b[k] += eps;
                lo.b[k] -= eps;
                let fd = (loss_at(&hi) - loss_at(&lo)) / (2.0 * eps);
                assert!((fd - grad.db[k]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
        }
    }

    fn toy() -> (DocTermMatrix, Vec<SentimentLabel>) {
        let m = DocTermMatrix { rows: vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(2, 1.0)]], n_cols: 3 };
        (m, vec![Positive, Neutral, Negative])
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let m = DocTermMatrix { rows: vec![vec![(0, 1.0)], vec![(1, 1.0)]], n_cols: 2 };
        let labels = [Positive, Negative];
        let hyper = LinearHyper { lr: 0.5, epochs: 200, batch_size: 2, l2: 0.0, seed: 3 };
        let (p, trace) = train(&m, &labels, &hyper).unwrap();
        assert_eq!(accuracy(&p, &m, &labels).unwrap(), 1.0);
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (m, labels) = toy();
        let hyper = LinearHyper { epochs: 0, ..Default::default() };
        let (p, trace) = train(&m, &labels, &hyper).unwrap();
        assert_eq!(p, LinearParams::zeros(3));
        assert!(trace.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (m, labels) = toy();
        let hyper = LinearHyper { batch_size: 1, epochs: 7, seed: 99, ..Default::default() };
        assert_eq!(train(&m, &labels, &hyper).unwrap(), train(&m, &labels, &hyper).unwrap());
    }

    #[test]
    fn invalid_hyperparameters() {
        let (m, labels) = toy();
        let bad = LinearHyper { lr: 0.0, ..Default::default() };
        assert!(train(&m, &labels, &bad).is_err());
        assert!(train(&m, &labels[..2], &LinearHyper::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (m, labels) = toy();
        let (p, _) = train(&m, &labels, &LinearHyper::default()).unwrap();
        let back = LinearParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(
            LinearParams::from_json(r#"{"format":"x","version":1,"classes":3,"dim":0,"w":[],"b":[0,0,0]}"#).is_err()
        );
    }
}
