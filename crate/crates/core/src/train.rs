//! Maximum-likelihood training of [`NeuralModel`], either on the most
//! plausible segmentations (vanilla) or on segmentations resampled for
//! every mini-batch on both sides (subword regularization).

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::NeuralModel;
use crate::rng::derived_rng;
use crate::unigram::{Lattice, Vocabulary, BOS_ID, DEFAULT_ALPHA, EOS_ID, PAD_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainMode {
    Vanilla,
    SubwordReg,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Vanilla => "vanilla",
            TrainMode::SubwordReg => "subreg",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(TrainMode::Vanilla),
            "subreg" | "subword_reg" => Ok(TrainMode::SubwordReg),
            other => Err(Error::InvalidArgument(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Sampling temperature for both source and target.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip_norm: f64,
    /// Linear learning-rate warmup length in updates.
    pub warmup_steps: usize,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Vanilla,
            alpha: DEFAULT_ALPHA,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            grad_clip_norm: 1.0,
            warmup_steps: 100,
            label_smoothing: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.grad_clip_norm >= 0.0) || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("clip norm must be >= 0 and label smoothing in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Sentence-aligned raw text.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(String, String)>,
    pub split: Split,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(String, String)>, split: Split) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(ParallelCorpus { pairs, split })
    }

    /// Reads `src` and `tgt` files with one sentence per line.
    pub fn read(src: impl AsRef<Path>, tgt: impl AsRef<Path>, split: Split) -> Result<Self> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let s = read(src.as_ref())?;
        let t = read(tgt.as_ref())?;
        let s: Vec<&str> = s.lines().collect();
        let t: Vec<&str> = t.lines().collect();
        if s.len() != t.len() {
            return Err(Error::LengthMismatch {
                left: s.len(),
                right: t.len(),
            });
        }
        Self::new(
            s.into_iter().zip(t).map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            split,
        )
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.0.as_str()).collect()
    }

    pub fn targets(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.1.as_str()).collect()
    }
}

/// Token ids padded with PAD; targets are framed `BOS … EOS`. Positions at
/// or beyond a row's length are ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub src_lens: Vec<usize>,
    pub tgt: Vec<Vec<u32>>,
    pub tgt_lens: Vec<usize>,
}

impl Batch {
    fn from_rows(rows: Vec<(Vec<u32>, Vec<u32>)>) -> Self {
        let src_max = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let tgt_max = rows.iter().map(|r| r.1.len() + 2).max().unwrap_or(0);
        let mut batch = Batch {
            src: Vec::with_capacity(rows.len()),
            src_lens: Vec::with_capacity(rows.len()),
            tgt: Vec::with_capacity(rows.len()),
            tgt_lens: Vec::with_capacity(rows.len()),
        };
        for (src, tgt) in rows {
            batch.src_lens.push(src.len());
            let mut s = src;
            s.resize(src_max, PAD_ID);
            batch.src.push(s);
            let mut t = Vec::with_capacity(tgt_max);
            t.push(BOS_ID);
            t.extend(tgt);
            t.push(EOS_ID);
            batch.tgt_lens.push(t.len());
            t.resize(tgt_max, PAD_ID);
            batch.tgt.push(t);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Number of predicted (non-PAD) target positions.
    pub fn num_target_tokens(&self) -> usize {
        self.tgt_lens.iter().map(|l| l - 1).sum()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[u32]) {
        (&self.src[i][..self.src_lens[i]], &self.tgt[i][..self.tgt_lens[i]])
    }
}

/// Lattices and most plausible segmentations of one pair, built once.
struct PreparedPair {
    src: Lattice,
    tgt: Lattice,
    src_best: Vec<u32>,
    tgt_best: Vec<u32>,
}

impl PreparedPair {
    fn new(pair: &(String, String), vocab_src: &Vocabulary, vocab_tgt: &Vocabulary) -> Self {
        let src = Lattice::build(&pair.0, vocab_src);
        let tgt = Lattice::build(&pair.1, vocab_tgt);
        let src_best = src.viterbi().token_ids;
        let tgt_best = tgt.viterbi().token_ids;
        PreparedPair {
            src,
            tgt,
            src_best,
            tgt_best,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, mode: TrainMode, alpha: f64, rng: &mut R) -> Result<(Vec<u32>, Vec<u32>)> {
        Ok(match mode {
            TrainMode::Vanilla => (self.src_best.clone(), self.tgt_best.clone()),
            TrainMode::SubwordReg => {
                let s = self.src.sample(alpha, rng)?.token_ids;
                let t = self.tgt.sample(alpha, rng)?.token_ids;
                (s, t)
            }
        })
    }
}

fn prepare(pairs: &[(String, String)], vocab_src: &Vocabulary, vocab_tgt: &Vocabulary) -> Vec<PreparedPair> {
    pairs.par_iter().map(|p| PreparedPair::new(p, vocab_src, vocab_tgt)).collect()
}

/// Segments a batch of pairs: most plausible segmentations for vanilla,
/// fresh draws from the α-scaled distribution on both sides otherwise.
pub fn make_batch<R: Rng + ?Sized>(
    pairs: &[(String, String)],
    vocab_src: &Vocabulary,
    vocab_tgt: &Vocabulary,
    mode: TrainMode,
    alpha: f64,
    rng: &mut R,
) -> Result<Batch> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let prepared: Vec<PreparedPair> = pairs.iter().map(|p| PreparedPair::new(p, vocab_src, vocab_tgt)).collect();
    let refs: Vec<&PreparedPair> = prepared.iter().collect();
    batch_from(&refs, mode, alpha, rng)
}

fn batch_from<R: Rng + ?Sized>(pairs: &[&PreparedPair], mode: TrainMode, alpha: f64, rng: &mut R) -> Result<Batch> {
    let rows = pairs
        .iter()
        .map(|p| p.draw(mode, alpha, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch::from_rows(rows))
}

/// Mean token-level negative log-likelihood over the non-PAD target
/// positions, and its gradient laid out like the model parameters.
pub fn loss_and_gradients(model: &NeuralModel, batch: &Batch, label_smoothing: f64) -> Result<(f64, Vec<f64>)> {
    let tokens = batch.num_target_tokens();
    if tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    let scale = 1.0 / tokens as f64;
    let mut grads = vec![0.0; model.num_params()];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (src, tgt) = batch.row(i);
        total += model.example_loss(src, tgt, label_smoothing, scale, Some(&mut grads))?;
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, grads))
}

/// Mean token-level loss without gradients.
pub fn batch_loss(model: &NeuralModel, batch: &Batch, label_smoothing: f64) -> Result<f64> {
    let tokens = batch.num_target_tokens();
    if tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    let per_row = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (src, tgt) = batch.row(i);
            model.example_loss(src, tgt, label_smoothing, 1.0, None)
        })
        .collect::<Result<Vec<f64>>>()?;
    let loss = per_row.iter().sum::<f64>() / tokens as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(loss)
}

/// Scales `grads` so their global L2 norm is at most `max_norm` (no-op for
/// `max_norm == 0`). Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Adam with bias correction and a linear warmup.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    warmup: usize,
}

impl Adam {
    pub fn new(num_params: usize, config: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            warmup: config.warmup_steps,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate used by the next update.
    pub fn current_lr(&self) -> f64 {
        let t = self.step + 1;
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * (t as f64 / self.warmup as f64).min(1.0)
        }
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f64]) {
        let lr = self.current_lr();
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            *p = (*p as f64 - update) as f32;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the per-batch training losses.
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub updates: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest dev loss (the last epoch
    /// when no dev set is given).
    pub model: NeuralModel,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    /// Loss of every update, in order.
    pub step_losses: Vec<f64>,
}

/// Trains `model` on `corpus`. Batch `b` of epoch `e` samples from a
/// generator seeded by `(seed, e, b)`, so runs are fully reproducible.
pub fn train(
    model: NeuralModel,
    corpus: &ParallelCorpus,
    dev: Option<&ParallelCorpus>,
    vocab_src: &Vocabulary,
    vocab_tgt: &Vocabulary,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(model, corpus, dev, vocab_src, vocab_tgt, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    mut model: NeuralModel,
    corpus: &ParallelCorpus,
    dev: Option<&ParallelCorpus>,
    vocab_src: &Vocabulary,
    vocab_tgt: &Vocabulary,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if model.config().src_vocab != vocab_src.len() || model.config().tgt_vocab != vocab_tgt.len() {
        return Err(Error::InvalidArgument("model and vocabulary sizes differ".into()));
    }
    let prepared = prepare(&corpus.pairs, vocab_src, vocab_tgt);
    let dev_batch = match dev {
        Some(d) if !d.is_empty() => {
            let rows = prepare(&d.pairs, vocab_src, vocab_tgt)
                .into_iter()
                .map(|p| (p.src_best, p.tgt_best))
                .collect();
            Some(Batch::from_rows(rows))
        }
        _ => None,
    };

    let mut adam = Adam::new(model.num_params(), config);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, usize, NeuralModel)> = None;
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut derived_rng(config.seed, &[epoch as u64, u64::MAX]));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut rng = derived_rng(config.seed, &[epoch as u64, b as u64]);
            let pairs: Vec<&PreparedPair> = chunk.iter().map(|&i| &prepared[i]).collect();
            let batch = batch_from(&pairs, config.mode, config.alpha, &mut rng)?;
            let diverged = || Error::Diverged { epoch, batch: b };
            let (loss, mut grads) = match loss_and_gradients(&model, &batch, config.label_smoothing) {
                Err(Error::NonFiniteLoss) => return Err(diverged()),
                other => other?,
            };
            clip_gradients(&mut grads, config.grad_clip_norm);
            adam.update(model.params_mut(), &grads);
            if !model.is_finite() {
                return Err(diverged());
            }
            step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
        }

        let dev_loss = match &dev_batch {
            Some(batch) => Some(batch_loss(&model, batch, 0.0).map_err(|_| Error::Diverged {
                epoch,
                batch: batches,
            })?),
            None => None,
        };
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / batches as f64,
            dev_loss,
            updates: adam.steps(),
        };
        on_epoch(&stats);
        history.push(stats);

        let key = dev_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| key < *b || dev_loss.is_none()) {
            best = Some((key, epoch, model.clone()));
        }
    }

    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::rng_from;

    fn toy() -> Vocabulary {
        Vocabulary::from_pieces([("a", 0.4f64.ln()), ("b", 0.3f64.ln()), ("ab", 0.3f64.ln())]).unwrap()
    }

    #[test]
    fn batches_are_framed_and_padded() {
        let v = toy();
        let pairs = vec![("ab".to_string(), "a".to_string()), ("a".to_string(), "abab".to_string())];
        let b = make_batch(&pairs, &v, &v, TrainMode::Vanilla, 0.2, &mut rng_from(0)).unwrap();
        assert_eq!(b.src, vec![vec![6], vec![4]]);
        assert_eq!(b.tgt, vec![vec![BOS_ID, 4, EOS_ID, PAD_ID], vec![BOS_ID, 6, 6, EOS_ID]]);
        assert_eq!(b.tgt_lens, vec![3, 4]);
        assert_eq!(b.num_target_tokens(), 5);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_gradients(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    #[test]
    fn warmup_is_linear() {
        let config = TrainConfig {
            warmup_steps: 4,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(1, &config);
        let mut p = [0.0f32];
        let mut seen = Vec::new();
        for _ in 0..6 {
            seen.push(adam.current_lr());
            adam.update(&mut p, &[1.0]);
        }
        assert_eq!(seen, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_invalid_config() {
        let mut c = TrainConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let v = toy();
        let model = NeuralModel::zeros(ModelConfig::new(v.len(), v.len()).with_dims(2, 2)).unwrap();
        let corpus = ParallelCorpus::new(vec![("a".into(), "b".into())], Split::Train).unwrap();
        assert!(train(model, &corpus, None, &v, &v, &c).is_err());
        assert!(ParallelCorpus::new(vec![], Split::Train).is_err());
    }
}
