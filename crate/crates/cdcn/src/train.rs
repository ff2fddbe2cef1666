//! Labeled depth datasets, batching, and the depth-supervised training loop
//! shared by the fixed backbone and searched networks.

use serde::Serialize;

use crate::layers::TensorRole;
use crate::loss::{loss_overall, ContrastKernelBank};
use crate::metrics::{Label, ScoreEntry, ScoreSet};
use crate::model::{depth_to_scores, Model};
use crate::optim::{lr_at_epoch, Adam};
use crate::rng::stream_for;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// One face: an RGB crop, its depth supervision target, and labels.
pub struct Sample<S: Scalar> {
    pub id: String,
    /// [1, 3, S, S] image in [0, 1].
    pub image: Tensor<S>,
    /// [1, 1, S/8, S/8] target depth in [0, 1]; zero for attacks.
    pub depth: Tensor<S>,
    pub label: Label,
    pub domain: String,
}

/// An in-memory dataset with uniform image and depth shapes.
pub struct Dataset<S: Scalar> {
    samples: Vec<Sample<S>>,
    image_shape: Shape,
    depth_shape: Shape,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(samples: Vec<Sample<S>>) -> Result<Dataset<S>> {
        let first = samples.first().ok_or_else(|| {
            Error::Data("a dataset needs at least one sample".into())
        })?;
        let image_shape = first.image.shape();
        let depth_shape = first.depth.shape();
        if image_shape.n != 1 || image_shape.c != 3 || image_shape.h != image_shape.w {
            return Err(Error::Data(format!(
                "sample images must be [1,3,S,S], got {image_shape}"
            )));
        }
        if depth_shape.n != 1 || depth_shape.c != 1 || depth_shape.h != depth_shape.w {
            return Err(Error::Data(format!(
                "sample depths must be [1,1,D,D], got {depth_shape}"
            )));
        }
        if depth_shape.h * 8 != image_shape.h {
            return Err(Error::Data(format!(
                "depth extent {} is not an eighth of the image extent {}",
                depth_shape.h, image_shape.h
            )));
        }
        for s in &samples {
            if s.image.shape() != image_shape || s.depth.shape() != depth_shape {
                return Err(Error::Data(format!(
                    "sample {} has shape {} / {}, dataset holds {} / {}",
                    s.id,
                    s.image.shape(),
                    s.depth.shape(),
                    image_shape,
                    depth_shape
                )));
            }
            if !s.image.all_finite() || !s.depth.all_finite() {
                return Err(Error::Data(format!("sample {} holds non-finite values", s.id)));
            }
        }
        Ok(Dataset { samples, image_shape, depth_shape })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample<S>] {
        &self.samples
    }

    pub fn input_size(&self) -> usize {
        self.image_shape.h
    }

    pub fn depth_extent(&self) -> usize {
        self.depth_shape.h
    }

    /// Stacks the chosen samples into one [B,3,S,S] image batch and one
    /// [B,1,D,D] depth batch, in the order given.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<S>, Tensor<S>)> {
        if indices.is_empty() {
            return Err(Error::Data("cannot build an empty batch".into()));
        }
        let img_numel = self.image_shape.numel();
        let dep_numel = self.depth_shape.numel();
        let mut images = Vec::with_capacity(indices.len() * img_numel);
        let mut depths = Vec::with_capacity(indices.len() * dep_numel);
        for &i in indices {
            let s = self.samples.get(i).ok_or_else(|| {
                Error::Data(format!("batch index {i} out of range for {} samples", self.len()))
            })?;
            images.extend_from_slice(s.image.data());
            depths.extend_from_slice(s.depth.data());
        }
        let bi = Shape::new(indices.len(), 3, self.image_shape.h, self.image_shape.w);
        let bd = Shape::new(indices.len(), 1, self.depth_shape.h, self.depth_shape.w);
        Ok((Tensor::from_vec(bi, images)?, Tensor::from_vec(bd, depths)?))
    }

    /// A deterministic per-epoch permutation of the sample indices.
    pub fn shuffled_indices(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = stream_for(seed, epoch as u64);
        rng.shuffle(&mut order);
        order
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig { epochs: 8, batch_size: 8, lr: 1e-4, weight_decay: 5e-5, seed: 7 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative and finite, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Trains a model on depth supervision with the summed squared-error and
/// contrast losses, Adam updates, decay on the step schedule, and a fresh
/// shuffle each epoch. Returns per-epoch mean training loss.
pub fn train_model<S: Scalar>(
    model: &mut Model<S>,
    data: &Dataset<S>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.input_size() != model.input_size() {
        return Err(Error::Config(format!(
            "dataset images are {0}x{0}, the model expects {1}x{1}",
            data.input_size(),
            model.input_size()
        )));
    }
    if data.depth_extent() < 3 {
        return Err(Error::Config(format!(
            "the contrast loss needs depth maps of extent 3 or more, got {}",
            data.depth_extent()
        )));
    }
    let bank = ContrastKernelBank::new();
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        adam.set_lr(lr_at_epoch(cfg.lr, epoch, cfg.epochs));
        model.set_training(true);
        let order = data.shuffled_indices(cfg.seed, epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk)?;
            let mut tape = Tape::new();
            for t in model.tensors_mut().iter_mut() {
                if t.role == TensorRole::Param {
                    tape.watch(t.tensor);
                }
            }
            let pred = model.forward(&mut tape, &x)?;
            let loss = loss_overall(&mut tape, &pred, &y, &bank)?;
            let value = loss.scalar().expect("loss is a scalar").as_f64();
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss went non-finite in epoch {epoch}"
                )));
            }
            let grads = tape.backward(&loss)?;
            adam.begin_step();
            let mut slot = 0usize;
            for t in model.tensors_mut().iter_mut() {
                if t.role != TensorRole::Param {
                    continue;
                }
                if let Some(g) = grads.wrt(t.tensor) {
                    adam.update(slot, t.tensor, g)?;
                }
                slot += 1;
            }
            loss_sum += value * chunk.len() as f64;
            seen += chunk.len();
        }
        stats.push(EpochStats { epoch, mean_loss: loss_sum / seen.max(1) as f64, lr: adam.lr() });
    }
    model.set_training(false);
    Ok(stats)
}

/// Scores every sample with the model in inference mode, preserving ids and
/// labels, so the result can go straight into threshold metrics.
pub fn score_dataset<S: Scalar>(
    model: &mut Model<S>,
    data: &Dataset<S>,
    batch_size: usize,
) -> Result<ScoreSet> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    model.set_training(false);
    let mut entries = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(batch_size) {
        let (x, _) = data.batch(chunk)?;
        let mut tape = Tape::inference();
        let pred = model.forward(&mut tape, &x)?;
        let scores = depth_to_scores(&pred)?;
        for (k, &i) in chunk.iter().enumerate() {
            let s = &data.samples[i];
            entries.push(ScoreEntry {
                sample_id: s.id.clone(),
                score: scores[k],
                label: s.label.clone(),
            });
        }
    }
    ScoreSet::new(entries)
}

/// Mean overall loss of an arbitrary forward function over a dataset, with
/// every batch evaluated on a non-recording tape. The caller is responsible
/// for putting its network into inference mode first.
pub fn mean_loss_over<S, F>(
    data: &Dataset<S>,
    batch_size: usize,
    bank: &ContrastKernelBank<S>,
    mut forward: F,
) -> Result<f64>
where
    S: Scalar,
    F: FnMut(&mut Tape<S>, &Tensor<S>) -> Result<Tensor<S>>,
{
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut sum = 0.0;
    let mut seen = 0usize;
    for chunk in all.chunks(batch_size) {
        let (x, y) = data.batch(chunk)?;
        let mut tape = Tape::inference();
        let pred = forward(&mut tape, &x)?;
        let loss = loss_overall(&mut tape, &pred, &y, bank)?;
        sum += loss.scalar().expect("loss is a scalar").as_f64() * chunk.len() as f64;
        seen += chunk.len();
    }
    Ok(sum / seen.max(1) as f64)
}
