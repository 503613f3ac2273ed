//! Mean-squared chroma loss, Adam, and the epoch loop with validation-based
//! early stopping.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use crate::colorspace::ChromaMap;
use crate::dataset::{DatasetManifest, Role, Sample};
use crate::eecnn::{EeCnn, EeCnnConfig, EmbeddingProvider, ModelWeights, Tensor};
use crate::error::{Error, Result};
use crate::plane::Plane;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minimum validation improvement (AB² units) that resets patience.
    pub min_delta: f64,
    pub seed: u64,
    /// Write `epoch-NNNN.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Directory for periodic and best checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 300,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Argument(
                "batch size, epochs and patience must be positive".into(),
            ));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Argument(format!(
                "patience {} must be below max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(Error::Argument("min delta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stopped_at_epoch: usize,
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }
}

/// Per-pixel squared Euclidean distance over `(A, B)`, averaged over the
/// `h × w` pixels.
pub fn loss(pred: &ChromaMap, truth: &ChromaMap) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    let sq = |p: &Plane, t: &Plane| -> f64 {
        p.as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let total = sq(pred.a(), truth.a()) + sq(pred.b(), truth.b());
    Ok(total / (pred.width() * pred.height()) as f64)
}

/// Pad `l` and evaluate the network, returning the trace plus the original size.
fn padded_trace(
    net: &EeCnn,
    weights: &ModelWeights,
    l: &Plane,
    embedding: &[f64],
) -> (crate::eecnn::Trace, usize, usize) {
    let padded = EeCnn::pad_input(l);
    (
        net.trace(&padded, embedding, weights),
        l.width(),
        l.height(),
    )
}

fn check_pair(net: &EeCnn, l: &Plane, target: &ChromaMap, embedding: &[f64]) -> Result<()> {
    if l.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "input {:?} vs target {:?}",
            l.dims(),
            target.dims()
        )));
    }
    let cfg = net.config();
    if cfg.use_embedding && embedding.len() != cfg.embedding_dim {
        return Err(Error::Shape(format!(
            "embedding length {} != configured {}",
            embedding.len(),
            cfg.embedding_dim
        )));
    }
    Ok(())
}

/// Loss in normalized units, where targets are divided by `ab_scale` and the
/// network output is the raw `tanh` activation (no clamping).
pub fn normalized_loss(
    net: &EeCnn,
    weights: &ModelWeights,
    l: &Plane,
    target: &ChromaMap,
    embedding: &[f64],
) -> Result<f64> {
    net.check_weights(weights)?;
    check_pair(net, l, target, embedding)?;
    let (trace, w, h) = padded_trace(net, weights, l, embedding);
    Ok(normalized_residual(net, trace.output(), target, w, h, None))
}

/// Sum of squared normalized residuals over the un-padded region divided by
/// `w·h`; optionally writes `d loss / d y` into `grad`.
fn normalized_residual(
    net: &EeCnn,
    y: &Tensor,
    target: &ChromaMap,
    w: usize,
    h: usize,
    mut grad: Option<&mut Tensor>,
) -> f64 {
    let scale = net.config().ab_scale;
    let n = (w * h) as f64;
    let mut total = 0.0;
    for (c, t) in [target.a(), target.b()].into_iter().enumerate() {
        for yy in 0..h {
            for xx in 0..w {
                let idx = (c * y.height + yy) * y.width + xx;
                let r = y.data[idx] - t.get(xx, yy) / scale;
                total += r * r;
                if let Some(g) = grad.as_deref_mut() {
                    g.data[idx] += 2.0 * r / n;
                }
            }
        }
    }
    total / n
}

/// Accumulates `weight · ∇(normalized loss)` into `grads` and returns the
/// loss in AB² units.
pub(crate) fn accumulate_gradient(
    net: &EeCnn,
    weights: &ModelWeights,
    l: &Plane,
    target: &ChromaMap,
    embedding: &[f64],
    weight: f64,
    grads: &mut [Vec<f64>],
) -> Result<f64> {
    check_pair(net, l, target, embedding)?;
    let (trace, w, h) = padded_trace(net, weights, l, embedding);
    let y = trace.output();
    let mut dy = Tensor::zeros(y.channels, y.height, y.width);
    let loss = normalized_residual(net, y, target, w, h, Some(&mut dy));
    if weight != 1.0 {
        for v in &mut dy.data {
            *v *= weight;
        }
    }
    net.backward(&trace, &dy, weights, grads);
    let scale = net.config().ab_scale;
    Ok(loss * scale * scale)
}

/// Gradient of [`normalized_loss`] with respect to every parameter, in
/// block order.
pub fn gradient(
    net: &EeCnn,
    weights: &ModelWeights,
    l: &Plane,
    target: &ChromaMap,
    embedding: &[f64],
) -> Result<Vec<Vec<f64>>> {
    net.check_weights(weights)?;
    let mut grads = weights.zeros_like();
    accumulate_gradient(net, weights, l, target, embedding, 1.0, &mut grads)?;
    Ok(grads)
}

/// Adam with the usual bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weights: &ModelWeights) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: weights.zeros_like(),
            v: weights.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, weights: &mut ModelWeights, grads: &[Vec<f64>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((block, g), m), v) in weights
            .blocks
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..block.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                block.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// One supervised pair with its (fixed) embedding.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub l: Plane,
    pub target: ChromaMap,
    pub embedding: Vec<f64>,
}

/// Owns a network's weights and optimizer state during fitting.
pub struct Fitter<'a> {
    net: &'a EeCnn,
    weights: ModelWeights,
    adam: Adam,
    grads: Vec<Vec<f64>>,
}

impl<'a> Fitter<'a> {
    pub fn new(net: &'a EeCnn, weights: ModelWeights, learning_rate: f64) -> Result<Self> {
        net.check_weights(&weights)?;
        Ok(Fitter {
            adam: Adam::new(learning_rate, &weights),
            grads: weights.zeros_like(),
            net,
            weights,
        })
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn into_weights(self) -> ModelWeights {
        self.weights
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// One Adam update on the mean gradient of `batch`; returns the mean
    /// pre-update loss in AB² units.
    pub fn step(&mut self, batch: &[&TrainingPair]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        for g in &mut self.grads {
            g.fill(0.0);
        }
        let w = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for pair in batch {
            total += accumulate_gradient(
                self.net,
                &self.weights,
                &pair.l,
                &pair.target,
                &pair.embedding,
                w,
                &mut self.grads,
            )?;
        }
        let mean = total * w;
        if !mean.is_finite() || self.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step: self.adam.steps() as usize,
                loss: mean,
            });
        }
        self.adam.update(&mut self.weights, &self.grads);
        Ok(mean)
    }

    /// Mean loss (AB² units) over `pairs` without updating.
    pub fn evaluate(&self, pairs: &[TrainingPair]) -> Result<f64> {
        let mut total = 0.0;
        for p in pairs {
            let ln = normalized_loss(self.net, &self.weights, &p.l, &p.target, &p.embedding)?;
            total += ln;
        }
        let s = self.net.config().ab_scale;
        Ok(total / pairs.len() as f64 * s * s)
    }
}

/// Patience-based stopping on a validation curve.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    reference: f64,
    wait: usize,
    best_loss: f64,
    best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    /// The loss is the lowest seen so far.
    pub is_best: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            reference: f64::INFINITY,
            wait: 0,
            best_loss: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        let is_best = loss < self.best_loss;
        if is_best {
            self.best_loss = loss;
            self.best_epoch = epoch;
        }
        if loss < self.reference - self.min_delta {
            self.reference = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        Observation {
            is_best,
            stop: self.wait >= self.patience,
        }
    }
}

fn pairs_from(
    net: &EeCnn,
    samples: &[Sample],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<TrainingPair>> {
    samples
        .iter()
        .map(|s| {
            Ok(TrainingPair {
                embedding: net.embedding_for(&s.l, provider)?,
                l: s.l.clone(),
                target: s.ab.clone(),
            })
        })
        .collect()
}

/// Trains from in-memory samples. With no validation samples the training
/// loss drives early stopping.
pub fn train_samples(
    train: &[Sample],
    validation: &[Sample],
    config: &EeCnnConfig,
    tc: &TrainConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<(ModelWeights, TrainReport)> {
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let net = EeCnn::new(config.clone())?;
    let train_pairs = pairs_from(&net, train, provider)?;
    let val_pairs = pairs_from(&net, validation, provider)?;
    if let Some(dir) = &tc.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut fitter = Fitter::new(&net, net.init_weights(tc.seed), tc.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x5eed));
    let mut stopper = EarlyStopping::new(tc.patience, tc.min_delta);
    let mut best = fitter.weights().clone();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &train_pairs[i]).collect();
            train_total += fitter.step(&batch)? * batch.len() as f64;
        }
        let train_loss = train_total / train_pairs.len() as f64;
        let val_loss = if val_pairs.is_empty() {
            fitter.evaluate(&train_pairs)?
        } else {
            fitter.evaluate(&val_pairs)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                step: fitter.steps() as usize,
                loss: val_loss,
            });
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        report.stopped_at_epoch = epoch;
        let obs = stopper.observe(epoch, val_loss);
        if obs.is_best {
            best = fitter.weights().clone();
            if let Some(dir) = &tc.checkpoint_dir {
                let path = dir.join("best.ckpt");
                save_checkpoint(&best, &path)?;
                report.best_checkpoint = Some(path);
            }
        }
        if let Some(dir) = &tc.checkpoint_dir {
            if tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0 {
                save_checkpoint(
                    fitter.weights(),
                    &dir.join(format!("epoch-{epoch:04}.ckpt")),
                )?;
            }
        }
        if obs.stop {
            break;
        }
    }
    report.best_epoch = stopper.best_epoch();
    Ok((best, report))
}

/// Trains on the manifest's train split, validating on its test split.
pub fn train_eecnn(
    manifest: &DatasetManifest,
    config: &EeCnnConfig,
    tc: &TrainConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<(ModelWeights, TrainReport)> {
    let train: Vec<Sample> = manifest.samples(Role::Train).collect::<Result<_>>()?;
    if train.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let test: Vec<Sample> = manifest.samples(Role::Test).collect::<Result<_>>()?;
    train_samples(&train, &test, config, tc, provider)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(a: &[f64], b: &[f64], w: usize, h: usize) -> ChromaMap {
        ChromaMap::new(
            Plane::new(w, h, a.to_vec()).unwrap(),
            Plane::new(w, h, b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn loss_single_pixel() {
        let pred = map(&[2.0], &[4.0], 1, 1);
        let truth = map(&[0.0], &[0.0], 1, 1);
        assert_eq!(loss(&pred, &truth).unwrap(), 20.0);
        assert_eq!(loss(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn loss_shape_mismatch() {
        assert!(matches!(
            loss(&ChromaMap::zeros(2, 2), &ChromaMap::zeros(3, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn flat_curve_stops_after_patience() {
        let mut es = EarlyStopping::new(3, 1e-4);
        let mut stopped = None;
        for epoch in 1..=20 {
            if es.observe(epoch, 5.0).stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(es.best_epoch(), 1);
        assert_eq!(stopped, Some(4));
    }

    #[test]
    fn small_improvements_keep_best_but_not_patience() {
        let mut es = EarlyStopping::new(2, 0.5);
        assert!(es.observe(1, 10.0).is_best);
        let o = es.observe(2, 9.9);
        assert!(o.is_best && !o.stop);
        let o = es.observe(3, 9.8);
        assert!(o.is_best && o.stop);
        assert_eq!(es.best_epoch(), 3);
    }

    #[test]
    fn train_config_validation() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            patience: 300,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let net = EeCnn::new(EeCnnConfig::miniature()).unwrap();
        let mut w = net.init_weights(1);
        let before = w.clone();
        let grads: Vec<Vec<f64>> = w.blocks.iter().map(|b| vec![0.5; b.data.len()]).collect();
        let mut adam = Adam::new(1e-3, &w);
        adam.update(&mut w, &grads);
        for (a, b) in w.blocks.iter().zip(&before.blocks) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!(((y - x) - 1e-3).abs() < 1e-9);
            }
        }
    }
}
