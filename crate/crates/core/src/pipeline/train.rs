use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::SpectraSet;
use crate::error::{Error, Result};
use crate::labels::CoreType;
use crate::model::{
    build_carenet, save_checkpoint, CarenetModel, CheckpointMeta, Head, INPUT_LENGTH,
};
use crate::nn::{bce_loss, cce_loss, logit_gradient, Adam, PlateauScheduler, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub head: Head,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub undersample_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            head: Head::Type,
            epochs: 50,
            batch: 250,
            lr: 1e-3,
            init_seed: 0,
            shuffle_seed: 1,
            undersample_seed: 2,
        }
    }
}

impl TrainConfig {
    pub fn new(head: Head, seed: u64) -> Self {
        Self {
            head,
            ..Self::default()
        }
        .with_seed(seed)
    }

    /// Derives the three seeds from one.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed.wrapping_mul(3);
        self.shuffle_seed = seed.wrapping_mul(3).wrapping_add(1);
        self.undersample_seed = seed.wrapping_mul(3).wrapping_add(2);
        self
    }

    /// Seeds for fold `k`, so folds train independently.
    pub fn for_fold(&self, k: usize) -> Self {
        let off = 1000 * k as u64;
        Self {
            init_seed: self.init_seed.wrapping_add(off),
            shuffle_seed: self.shuffle_seed.wrapping_add(off),
            undersample_seed: self.undersample_seed.wrapping_add(off),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(
                "epochs, batch and lr must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Class index of every spectrum for `head`: core type code, or subtype index.
pub fn class_labels(set: &SpectraSet, head: Head) -> Result<Vec<usize>> {
    set.infos()
        .iter()
        .map(|i| match head {
            Head::Type => Ok(usize::from(i.core_type.code())),
            Head::Subtype => match (i.core_type, i.subtype) {
                (CoreType::Cancer, Some(s)) => Ok(s.index()),
                _ => Err(Error::Label(format!(
                    "subtype head needs cancer spectra, core {} is {}",
                    i.core_id, i.core_type
                ))),
            },
        })
        .collect()
}

/// Downsamples every class to the smallest class count without replacement.
/// Returned indices are sorted; a class already at the minimum is kept whole.
pub fn undersample_balance(labels: &[usize], n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class
            .get_mut(l)
            .ok_or_else(|| Error::Label(format!("label {l} outside {n_classes} classes")))?
            .push(i);
    }
    if let Some(c) = per_class.iter().position(Vec::is_empty) {
        return Err(Error::Label(format!("class {c} has no spectra")));
    }
    let m = per_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m * n_classes);
    for idx in &per_class {
        if idx.len() == m {
            out.extend_from_slice(idx);
        } else {
            out.extend(sample(&mut rng, idx.len(), m).into_iter().map(|k| idx[k]));
        }
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: Option<usize>,
    pub model: CarenetModel,
    pub best: CarenetModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub n_train: usize,
    pub checkpoints: Vec<PathBuf>,
}

impl FoldOutcome {
    pub fn best_dev_loss(&self) -> f64 {
        self.history[self.best_epoch - 1].dev_loss
    }

    pub fn write_history_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,train_loss,dev_loss,dev_accuracy,lr")?;
        for h in &self.history {
            writeln!(
                out,
                "{},{:.9},{:.9},{:.6},{:e}",
                h.epoch, h.train_loss, h.dev_loss, h.dev_accuracy, h.lr
            )?;
        }
        Ok(())
    }
}

fn batch_tensor(set: &SpectraSet, idx: &[usize]) -> Result<Tensor<f32>> {
    let w = set.width();
    let mut data = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        data.extend_from_slice(set.spectrum(i));
    }
    Tensor::from_vec(1, idx.len(), w, data)
}

/// Loss and its gradient for a batch of outputs.
/// Batch loss and its gradient at the logits of the output layer.
fn batch_loss(head: Head, probs: &Tensor<f32>, labels: &[usize]) -> Result<(f32, Tensor<f32>)> {
    let b = labels.len();
    let (loss, targets) = match head {
        Head::Type => {
            let t: Vec<f32> = labels.iter().map(|&l| l as f32).collect();
            (bce_loss(probs, &t)?.0, Tensor::from_vec(1, b, 1, t)?)
        }
        Head::Subtype => {
            let mut t = Tensor::zeros(4, b, 1);
            for (j, &l) in labels.iter().enumerate() {
                t.data_mut()[l * b + j] = 1.0;
            }
            (cce_loss(probs, &t)?.0, t)
        }
    };
    Ok((loss, logit_gradient(probs, &targets)?))
}

/// Predicted class of one output row.
pub fn predicted_class(head: Head, probs: &[f32]) -> usize {
    match head {
        Head::Type => usize::from(probs[0] >= 0.5),
        Head::Subtype => {
            let mut best = 0;
            for (k, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = k;
                }
            }
            best
        }
    }
}

const EVAL_CHUNK: usize = 256;

/// Mean loss and accuracy over a whole set in inference mode.
pub fn evaluate_loss(
    model: &mut CarenetModel,
    set: &SpectraSet,
    labels: &[usize],
) -> Result<(f64, f64)> {
    let all: Vec<usize> = (0..set.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = batch_tensor(set, chunk)?;
        let y = model.net.forward(&x, false)?;
        let lab: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let (l, _) = batch_loss(model.head, &y, &lab)?;
        loss += f64::from(l) * chunk.len() as f64;
        for (row, &t) in y.sample_rows().iter().zip(&lab) {
            correct += usize::from(predicted_class(model.head, row) == t);
        }
    }
    let n = set.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains one model: undersampled train set, shuffled every epoch, Adam
/// with the plateau scheduler on dev loss. With `checkpoint_dir` the final
/// and best-dev models are written there.
pub fn train_fold(
    config: &TrainConfig,
    train: &SpectraSet,
    dev: &SpectraSet,
    fold: Option<usize>,
    checkpoint_dir: Option<&Path>,
) -> Result<FoldOutcome> {
    config.validate()?;
    if train.width() != INPUT_LENGTH || dev.width() != INPUT_LENGTH {
        return Err(Error::LengthMismatch {
            expected: INPUT_LENGTH,
            got: train.width().min(dev.width()),
        });
    }
    if dev.is_empty() {
        return Err(Error::Label("dev set is empty".into()));
    }
    let head = config.head;
    let train_labels = class_labels(train, head)?;
    let dev_labels = class_labels(dev, head)?;
    let balanced = undersample_balance(&train_labels, head.n_classes(), config.undersample_seed)?;

    let mut model = build_carenet(head, config.init_seed)?;
    let mut adam = Adam::new(config.lr);
    let mut sched = PlateauScheduler::new(config.lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order = balanced.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, model.clone());

    for epoch in 1..=config.epochs {
        let lr = adam.lr;
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch).enumerate() {
            let x = batch_tensor(train, idx)?;
            let y = model.net.forward(&x, true)?;
            let lab: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let (loss, grad) = batch_loss(head, &y, &lab)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged: loss {loss} at epoch {epoch}, batch {b}, lr {lr:e}"
                )));
            }
            let logits = model.net.len() - 1;
            model.net.backward_range(&grad, 0..logits)?;
            adam.step(&mut model.net)?;
            total += f64::from(loss) * idx.len() as f64;
        }
        let (dev_loss, dev_accuracy) = evaluate_loss(&mut model, dev, &dev_labels)?;
        if !dev_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "dev loss {dev_loss} at epoch {epoch}"
            )));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            dev_loss,
            dev_accuracy,
            lr,
        });
        log::debug!(
            "fold {fold:?} epoch {epoch}: dev loss {dev_loss:.5} acc {dev_accuracy:.3} lr {lr:e}"
        );
        if dev_loss < best.0 {
            best = (dev_loss, epoch, model.clone());
        }
        adam.lr = sched.step(dev_loss);
    }

    let mut checkpoints = Vec::new();
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        let tag = fold
            .map(|k| format!("fold{k}"))
            .unwrap_or_else(|| "model".into());
        let last = history.last().expect("at least one epoch");
        let final_path = dir.join(format!("{tag}_final.ckpt"));
        save_checkpoint(
            &model,
            &CheckpointMeta {
                seed: config.init_seed,
                fold,
                epoch: last.epoch,
                dev_loss: Some(last.dev_loss),
            },
            &final_path,
        )?;
        let best_path = dir.join(format!("{tag}_best.ckpt"));
        save_checkpoint(
            &best.2,
            &CheckpointMeta {
                seed: config.init_seed,
                fold,
                epoch: best.1,
                dev_loss: Some(best.0),
            },
            &best_path,
        )?;
        checkpoints.push(final_path);
        checkpoints.push(best_path);
    }
    Ok(FoldOutcome {
        fold,
        model,
        best: best.2,
        best_epoch: best.1,
        history,
        n_train: balanced.len(),
        checkpoints,
    })
}
