//! The classifier, its analytic gradients, the local SGD step and the two
//! model synchronization operators.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::DeviceStream;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Architecture: input dimension, class count and tanh hidden layers.
/// No hidden layers means softmax regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub classes: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("model input_dim must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("model needs at least 2 classes".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    /// Layer widths from input to logits.
    pub fn layers(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.classes))
            .collect()
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and
    /// biases.
    pub fn init(&self, key: StreamKey) -> Result<ModelParams> {
        self.validate()?;
        let layers = self.layers();
        let mut rng = key.rng();
        let mut values = Vec::with_capacity(param_count(&layers));
        for w in layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in + fan_out {
                values.push(rng.random_range(-bound..=bound));
            }
        }
        ModelParams::new(layers, values)
    }
}

fn param_count(layers: &[usize]) -> usize {
    layers.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Flat parameter vector plus its layer widths. Layer `l` stores its
/// row-major weight matrix (`out x in`) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<usize>,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(layers: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::ShapeMismatch("a model needs input and output layers".into()));
        }
        let expected = param_count(&layers);
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} values for layers {layers:?}, expected {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("parameters must be finite".into()));
        }
        Ok(ModelParams { layers, values })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn classes(&self) -> usize {
        *self.layers.last().expect("at least two layers")
    }

    fn same_shape(&self, other: &ModelParams) -> Result<()> {
        if self.layers != other.layers {
            return Err(Error::ShapeMismatch(format!(
                "layers {:?} vs {:?}",
                self.layers, other.layers
            )));
        }
        Ok(())
    }

    fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        Ok(ModelParams {
            layers: self.layers.clone(),
            values,
        })
    }
}

/// A mini-batch: `n` feature rows of width `dim` with their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Batch { dim, features, labels })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        if self.dim != other.dim {
            return Err(Error::ShapeMismatch(format!("widths {} vs {}", self.dim, other.dim)));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Batch::new(self.dim, features, labels)
    }
}

fn check_batch(params: &ModelParams, batch: &Batch) -> Result<()> {
    if batch.dim() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch width {} vs model input {}",
            batch.dim(),
            params.input_dim()
        )));
    }
    if let Some(&l) = batch.labels().iter().find(|&&l| l >= params.classes()) {
        return Err(Error::ShapeMismatch(format!("label {l} outside {} classes", params.classes())));
    }
    Ok(())
}

/// Per-layer activations for one sample; the last entry holds logits.
fn forward(params: &ModelParams, x: &[f64]) -> Vec<Vec<f64>> {
    let layers = &params.layers;
    let mut acts = Vec::with_capacity(layers.len());
    acts.push(x.to_vec());
    let mut offset = 0;
    for (l, w) in layers.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let weights = &params.values[offset..offset + n_out * n_in];
        let bias = &params.values[offset + n_out * n_in..offset + n_out * n_in + n_out];
        let input = &acts[l];
        let last = l + 2 == layers.len();
        let out: Vec<f64> = (0..n_out)
            .map(|o| {
                let z = bias[o] + weights[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                if last {
                    z
                } else {
                    z.tanh()
                }
            })
            .collect();
        acts.push(out);
        offset += n_out * n_in + n_out;
    }
    acts
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of one sample; adds its gradient into `grad`.
fn sample_loss_grad(params: &ModelParams, x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
    let acts = forward(params, x);
    let layers = &params.layers;
    let logits = acts.last().expect("logits");
    let lse = log_sum_exp(logits);
    let loss = lse - logits[label];
    let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    delta[label] -= 1.0;

    let mut offsets = Vec::with_capacity(layers.len() - 1);
    let mut off = 0;
    for w in layers.windows(2) {
        offsets.push(off);
        off += w[1] * w[0] + w[1];
    }
    for l in (0..layers.len() - 1).rev() {
        let (n_in, n_out) = (layers[l], layers[l + 1]);
        let base = offsets[l];
        let input = &acts[l];
        for o in 0..n_out {
            let d = delta[o];
            let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
            for (g, a) in row.iter_mut().zip(input) {
                *g += d * a;
            }
            grad[base + n_out * n_in + o] += d;
        }
        if l > 0 {
            let weights = &params.values[base..base + n_out * n_in];
            delta = (0..n_in)
                .map(|i| {
                    let back: f64 = (0..n_out).map(|o| weights[o * n_in + i] * delta[o]).sum();
                    back * (1.0 - input[i] * input[i])
                })
                .collect();
        }
    }
    loss
}

/// Sums per-sample losses and gradients over `range` by halving, so the
/// result depends only on the rows in the range, not on the batch around it.
fn accumulate(params: &ModelParams, batch: &Batch, lo: usize, hi: usize, grad: &mut [f64]) -> f64 {
    if hi - lo == 1 {
        return sample_loss_grad(params, batch.row(lo), batch.labels()[lo], grad);
    }
    let mid = lo + (hi - lo) / 2;
    let mut right = vec![0.0; grad.len()];
    let left_loss = accumulate(params, batch, lo, mid, grad);
    let right_loss = accumulate(params, batch, mid, hi, &mut right);
    for (g, r) in grad.iter_mut().zip(&right) {
        *g += r;
    }
    left_loss + right_loss
}

/// Summed cross-entropy over the batch and its gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    check_batch(params, batch)?;
    let mut grad = vec![0.0; params.len()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let loss = accumulate(params, batch, 0, batch.len(), &mut grad);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, grad))
}

/// The update `(eta / n) * grad` subtracted by [`local_step`].
pub fn step_update(grad: &[f64], eta: f64, batch_size: usize) -> Vec<f64> {
    let scale = eta / batch_size as f64;
    grad.iter().map(|g| scale * g).collect()
}

/// One mini-batch gradient step: `w - (eta / n) * grad L(w, D)`.
pub fn local_step(params: &ModelParams, batch: &Batch, eta: f64) -> Result<ModelParams> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!("learning rate {eta} must be non-negative")));
    }
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let (_, grad) = loss_and_grad(params, batch)?;
    let update = step_update(&grad, eta, batch.len());
    params.with_values(params.values.iter().zip(&update).map(|(w, u)| w - u).collect())
}

/// Data-size weighted average `sum (n_k / n) w_k`, folded in input order.
pub fn internal_sync(models: &[(u64, ModelParams)]) -> Result<ModelParams> {
    let (_, first) = models.first().ok_or(Error::EmptySet)?;
    let total: u64 = models.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(Error::ShapeMismatch("models carry no data".into()));
    }
    let mut acc = vec![0.0; first.len()];
    for (n, m) in models {
        first.same_shape(m)?;
        let w = *n as f64 / total as f64;
        for (a, v) in acc.iter_mut().zip(&m.values) {
            *a += w * v;
        }
    }
    first.with_values(acc)
}

/// Unweighted mean over groups. Each coordinate is summed in ascending
/// value order, so the result does not depend on the input order.
pub fn external_sync(models: &[ModelParams]) -> Result<ModelParams> {
    let first = models.first().ok_or(Error::EmptySet)?;
    for m in models {
        first.same_shape(m)?;
    }
    let count = models.len() as f64;
    let mut column = vec![0.0; models.len()];
    let values = (0..first.len())
        .map(|i| {
            for (c, m) in column.iter_mut().zip(models) {
                *c = m.values[i];
            }
            column.sort_by(f64::total_cmp);
            if column[0] == column[column.len() - 1] {
                column[0]
            } else {
                column.iter().sum::<f64>() / count
            }
        })
        .collect();
    first.with_values(values)
}

/// Top-1 accuracy and mean cross-entropy. Prediction ties go to the lower
/// class index.
pub fn evaluate(params: &ModelParams, test: &Batch) -> Result<(f64, f64)> {
    check_batch(params, test)?;
    if test.is_empty() {
        return Err(Error::ShapeMismatch("empty test batch".into()));
    }
    let (correct, loss) = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let acts = forward(params, test.row(i));
            let logits = acts.last().expect("logits");
            let pred = logits
                .iter()
                .enumerate()
                .fold(0, |best, (c, &z)| if z > logits[best] { c } else { best });
            let label = test.labels()[i];
            ((pred == label) as usize, log_sum_exp(logits) - logits[label])
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0usize, 0.0f64), |(c, l), (dc, dl)| (c + dc, l + dl));
    let n = test.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Classic FedAvg local phase: every device runs `iterations` sequential
/// local steps from `global` on its own stream; the result is the
/// data-size weighted average in the given device order.
pub fn fedavg_round(global: &ModelParams, devices: &mut [&mut DeviceStream], iterations: usize, eta: f64) -> Result<ModelParams> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("fedavg needs at least one local iteration".into()));
    }
    let trained: Vec<(u64, ModelParams)> = devices
        .par_iter_mut()
        .map(|stream| {
            let mut model = global.clone();
            let mut seen = 0u64;
            for _ in 0..iterations {
                let batch = stream.fetch_batch()?;
                seen += batch.len() as u64;
                model = local_step(&model, &batch, eta)?;
            }
            Ok((seen, model))
        })
        .collect::<Result<_>>()?;
    internal_sync(&trained)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layers: Vec<usize>,
    len: usize,
}

/// Writes a JSON header line followed by little-endian f64 values.
pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let header = CheckpointHeader {
        layers: params.layers.clone(),
        len: params.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    let io = |e| Error::io(path, e);
    w.write_all(b"\n").map_err(io)?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != header.len * 8 {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint holds {} bytes, header declares {} values",
            bytes.len(),
            header.len
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ModelParams::new(header.layers, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(values: Vec<f64>) -> ModelParams {
        // One input, two classes: 2 weights + 2 biases.
        ModelParams::new(vec![1, 2], values).unwrap()
    }

    fn zero_model(spec: &ModelSpec) -> ModelParams {
        let layers = spec.layers();
        let n = param_count(&layers);
        ModelParams::new(layers, vec![0.0; n]).unwrap()
    }

    fn random_batch(key: StreamKey, n: usize, dim: usize, classes: usize) -> Batch {
        let mut rng = key.rng();
        let features = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Batch::new(dim, features, labels).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let spec = ModelSpec {
            input_dim: 3,
            classes: 5,
            hidden: vec![],
        };
        let batch = random_batch(StreamKey::root(1), 7, 3, 5);
        let (loss, _) = loss_and_grad(&zero_model(&spec), &batch).unwrap();
        assert!((loss - 7.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_double_exactly() {
        for hidden in [vec![], vec![4]] {
            let spec = ModelSpec {
                input_dim: 3,
                classes: 4,
                hidden,
            };
            let params = spec.init(StreamKey::root(2)).unwrap();
            for n in [1, 3, 6, 11] {
                let batch = random_batch(StreamKey::root(n as u64), n, 3, 4);
                let (l1, g1) = loss_and_grad(&params, &batch).unwrap();
                let (l2, g2) = loss_and_grad(&params, &batch.concat(&batch).unwrap()).unwrap();
                assert_eq!(l2, 2.0 * l1);
                assert!(g1.iter().zip(&g2).all(|(a, b)| *b == 2.0 * a));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let params = toy(vec![0.0; 4]);
        let wide = Batch::new(2, vec![0.0; 2], vec![0]).unwrap();
        assert!(matches!(loss_and_grad(&params, &wide), Err(Error::ShapeMismatch(_))));
        let bad_label = Batch::new(1, vec![0.0], vec![2]).unwrap();
        assert!(matches!(loss_and_grad(&params, &bad_label), Err(Error::ShapeMismatch(_))));
        assert!(Batch::new(2, vec![0.0; 3], vec![0]).is_err());
        assert!(ModelParams::new(vec![1, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn overflowing_logits_are_rejected() {
        let params = toy(vec![1e308, -1e308, 0.0, 0.0]);
        let batch = Batch::new(1, vec![10.0], vec![1]).unwrap();
        assert!(matches!(loss_and_grad(&params, &batch), Err(Error::NonFiniteLoss)));
    }

    #[test]
    fn local_step_examples() {
        // Gradient vanishes when every logit equals and the batch is balanced
        // with zero features: softmax 1/2 minus one-hot averages out.
        let params = toy(vec![0.3, -0.3, 0.0, 0.0]);
        let batch = Batch::new(1, vec![0.0, 0.0], vec![0, 1]).unwrap();
        let (_, g) = loss_and_grad(&params, &batch).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert_eq!(local_step(&params, &batch, 0.5).unwrap(), params);

        // Scalar arithmetic of the update rule.
        let update = step_update(&[0.5], 0.1, 1);
        assert!((1.0 - update[0] - 0.95).abs() < 1e-15);

        let grad = [0.7, -1.3, 2.9];
        let full = step_update(&grad, 0.2, 4);
        let half = step_update(&grad, 0.1, 4);
        assert!(full.iter().zip(&half).all(|(f, h)| *f == 2.0 * h));
        assert!(local_step(&params, &batch, f64::NAN).is_err());
    }

    #[test]
    fn internal_sync_examples() {
        let one = ModelParams::new(vec![1, 1], vec![1.0, 0.0]).unwrap();
        let three = ModelParams::new(vec![1, 1], vec![3.0, 0.0]).unwrap();
        assert_eq!(internal_sync(&[(5, one.clone()), (5, three)]).unwrap().values(), &[2.0, 0.0]);
        assert_eq!(internal_sync(&[(8, one.clone())]).unwrap(), one);
        let zero = ModelParams::new(vec![1, 1], vec![0.0, 0.0]).unwrap();
        let four = ModelParams::new(vec![1, 1], vec![4.0, 0.0]).unwrap();
        assert_eq!(internal_sync(&[(1, zero), (3, four)]).unwrap().values(), &[3.0, 0.0]);
        assert!(matches!(internal_sync(&[]), Err(Error::EmptySet)));
        assert!(matches!(
            internal_sync(&[(1, one), (1, toy(vec![0.0; 4]))]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn external_sync_examples() {
        let m = ModelParams::new(vec![1, 1], vec![0.1, -7.3]).unwrap();
        assert_eq!(external_sync(&[m.clone(), m.clone(), m.clone()]).unwrap(), m);
        let zero = ModelParams::new(vec![1, 1], vec![0.0, 0.0]).unwrap();
        let two = ModelParams::new(vec![1, 1], vec![2.0, 2.0]).unwrap();
        assert_eq!(external_sync(&[zero, two]).unwrap().values(), &[1.0, 1.0]);
        assert!(matches!(external_sync(&[]), Err(Error::EmptySet)));

        let spec = ModelSpec {
            input_dim: 4,
            classes: 3,
            hidden: vec![5],
        };
        let models: Vec<_> = (0..6).map(|s| spec.init(StreamKey::root(s)).unwrap()).collect();
        let forward = external_sync(&models).unwrap();
        let mut reversed = models.clone();
        reversed.reverse();
        reversed.swap(1, 4);
        assert_eq!(external_sync(&reversed).unwrap(), forward);
    }

    #[test]
    fn sync_operators_are_shift_equivariant() {
        let spec = ModelSpec {
            input_dim: 3,
            classes: 3,
            hidden: vec![],
        };
        let models: Vec<_> = (0..4).map(|s| spec.init(StreamKey::root(s)).unwrap()).collect();
        let shift = 0.375;
        let shifted: Vec<_> = models
            .iter()
            .map(|m| m.with_values(m.values().iter().map(|v| v + shift).collect()).unwrap())
            .collect();
        let ext = external_sync(&models).unwrap();
        let ext_s = external_sync(&shifted).unwrap();
        for (a, b) in ext.values().iter().zip(ext_s.values()) {
            assert!((a + shift - b).abs() < 1e-12);
        }
        let weighted: Vec<_> = models.iter().cloned().zip([3u64, 1, 4, 1]).map(|(m, n)| (n, m)).collect();
        let weighted_s: Vec<_> = shifted.iter().cloned().zip([3u64, 1, 4, 1]).map(|(m, n)| (n, m)).collect();
        let int = internal_sync(&weighted).unwrap();
        let int_s = internal_sync(&weighted_s).unwrap();
        for (a, b) in int.values().iter().zip(int_s.values()) {
            assert!((a + shift - b).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_examples() {
        // Logit of class c is x * w_c; features chosen so the true class wins.
        let params = toy(vec![-1.0, 1.0, 0.0, 0.0]);
        let test = Batch::new(1, vec![-2.0, 3.0, -0.5], vec![0, 1, 0]).unwrap();
        let (acc, _) = evaluate(&params, &test).unwrap();
        assert_eq!(acc, 1.0);

        let spec = ModelSpec {
            input_dim: 2,
            classes: 10,
            hidden: vec![],
        };
        let test = random_batch(StreamKey::root(99), 5000, 2, 10);
        let (acc, loss) = evaluate(&zero_model(&spec), &test).unwrap();
        assert!((acc - 0.1).abs() <= 0.02, "accuracy {acc}");
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!(evaluate(&zero_model(&spec), &Batch::new(2, vec![], vec![]).unwrap()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = ModelSpec {
            input_dim: 3,
            classes: 4,
            hidden: vec![2],
        };
        let params = spec.init(StreamKey::root(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), params);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
