//! First-order bi-level optimisation of the relaxed search network: each
//! step updates the architecture logits on a validation batch, then the
//! network weights on a training batch. Warmup epochs skip the logit update
//! so weights settle first. The run records a per-epoch trace and finishes
//! by reading the discrete genotype off the learned logits.

use serde::Serialize;

use crate::layers::TensorRole;
use crate::loss::{loss_overall, ContrastKernelBank};
use crate::nas::arch::{derive_genotype, softmax_f64, ArchParams};
use crate::nas::genotype::Genotype;
use crate::nas::supernet::Supernet;
use crate::optim::{lr_at_epoch, Adam};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::{mean_loss_over, Dataset};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub wd_weights: f64,
    pub lr_arch: f64,
    pub wd_arch: f64,
    pub seed: u64,
}

/// One sixth of the run, at least one epoch, is spent on weight warmup.
pub fn default_warmup(epochs: usize) -> usize {
    if epochs == 0 {
        0
    } else {
        ((epochs as f64 / 6.0).round() as usize).max(1)
    }
}

impl Default for SearchConfig {
    fn default() -> SearchConfig {
        SearchConfig {
            epochs: 30,
            warmup_epochs: default_warmup(30),
            batch_size: 4,
            lr_weights: 1e-4,
            wd_weights: 5e-5,
            lr_arch: 6e-4,
            wd_arch: 1e-3,
            seed: 7,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        for (name, v) in [("lr_weights", self.lr_weights), ("lr_arch", self.lr_arch)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("wd_weights", self.wd_weights), ("wd_arch", self.wd_arch)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean edge-mix entropy per cell, in nats; falls as choices sharpen.
    pub eta_entropy: Vec<f64>,
}

pub struct SearchRun {
    pub genotype: Genotype,
    pub trace: Vec<TraceRow>,
}

/// Mean entropy of the edge mixing weights, one value per cell.
pub fn eta_entropies<S: Scalar>(arch: &ArchParams<S>) -> Vec<f64> {
    let n_edges = crate::nas::arch::edge_count(arch.n_intermediate);
    (0..arch.n_cells)
        .map(|c| {
            let mut sum = 0.0;
            for e in 0..n_edges {
                let eta = softmax_f64(arch.alpha(c, e).data());
                sum -= eta.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            }
            sum / n_edges.max(1) as f64
        })
        .collect()
}

/// One optimisation step: when `update_arch` is set, the architecture logits
/// take an Adam step against the validation batch first; the network weights
/// then take theirs against the training batch. Returns the training loss
/// and, when the logit step ran, the validation loss it saw.
pub fn bilevel_step<S: Scalar>(
    net: &mut Supernet<S>,
    adam_weights: &mut Adam<S>,
    adam_arch: &mut Adam<S>,
    train_batch: (&Tensor<S>, &Tensor<S>),
    val_batch: (&Tensor<S>, &Tensor<S>),
    bank: &ContrastKernelBank<S>,
    update_arch: bool,
) -> Result<(f64, Option<f64>)> {
    net.set_training(true);
    let mut val_loss = None;
    if update_arch {
        let mut tape = Tape::new();
        for t in net.arch_tensors_mut().iter_mut() {
            tape.watch(t.tensor);
        }
        let pred = net.forward(&mut tape, val_batch.0)?;
        let loss = loss_overall(&mut tape, &pred, val_batch.1, bank)?;
        let value = loss.scalar().expect("loss is a scalar").as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric("validation loss went non-finite".into()));
        }
        let grads = tape.backward(&loss)?;
        adam_arch.begin_step();
        for (slot, t) in net.arch_tensors_mut().iter_mut().enumerate() {
            if let Some(g) = grads.wrt(t.tensor) {
                adam_arch.update(slot, t.tensor, g)?;
            }
        }
        val_loss = Some(value);
    }

    let mut tape = Tape::new();
    for t in net.weight_tensors_mut().iter_mut() {
        if t.role == TensorRole::Param {
            tape.watch(t.tensor);
        }
    }
    let pred = net.forward(&mut tape, train_batch.0)?;
    let loss = loss_overall(&mut tape, &pred, train_batch.1, bank)?;
    let value = loss.scalar().expect("loss is a scalar").as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric("training loss went non-finite".into()));
    }
    let grads = tape.backward(&loss)?;
    adam_weights.begin_step();
    let mut slot = 0usize;
    for t in net.weight_tensors_mut().iter_mut() {
        if t.role != TensorRole::Param {
            continue;
        }
        if let Some(g) = grads.wrt(t.tensor) {
            adam_weights.update(slot, t.tensor, g)?;
        }
        slot += 1;
    }
    Ok((value, val_loss))
}

/// Runs the whole search schedule and derives the final genotype. Training
/// batches drive weight updates; validation batches, cycled as needed, drive
/// the logit updates after warmup. The weight learning rate follows the
/// halving schedule; the logit rate stays fixed.
pub fn run_search<S: Scalar>(
    net: &mut Supernet<S>,
    train: &Dataset<S>,
    val: &Dataset<S>,
    cfg: &SearchConfig,
) -> Result<SearchRun> {
    cfg.validate()?;
    for (name, data) in [("training", train), ("validation", val)] {
        if data.input_size() != net.config().input_size {
            return Err(Error::Config(format!(
                "{name} images are {0}x{0}, this network expects {1}x{1}",
                data.input_size(),
                net.config().input_size
            )));
        }
    }
    if train.depth_extent() < 3 {
        return Err(Error::Config(format!(
            "the contrast loss needs depth maps of extent 3 or more, got {}",
            train.depth_extent()
        )));
    }
    let bank = ContrastKernelBank::new();
    let mut adam_weights = Adam::new(cfg.lr_weights, cfg.wd_weights);
    let mut adam_arch = Adam::new(cfg.lr_arch, cfg.wd_arch);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        adam_weights.set_lr(lr_at_epoch(cfg.lr_weights, epoch, cfg.epochs));
        let update_arch = epoch >= cfg.warmup_epochs;
        let train_order = train.shuffled_indices(cfg.seed, 2 * epoch);
        let val_order = val.shuffled_indices(cfg.seed, 2 * epoch + 1);
        let val_chunks: Vec<&[usize]> = val_order.chunks(cfg.batch_size).collect();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (k, chunk) in train_order.chunks(cfg.batch_size).enumerate() {
            let (xt, yt) = train.batch(chunk)?;
            let vchunk = val_chunks[k % val_chunks.len()];
            let (xv, yv) = val.batch(vchunk)?;
            let (train_loss, _) = bilevel_step(
                net,
                &mut adam_weights,
                &mut adam_arch,
                (&xt, &yt),
                (&xv, &yv),
                &bank,
                update_arch,
            )
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("search epoch {epoch}: {m}")),
                other => other,
            })?;
            loss_sum += train_loss * chunk.len() as f64;
            seen += chunk.len();
        }
        net.set_training(false);
        let val_loss = mean_loss_over(val, cfg.batch_size, &bank, |t, x| net.forward(t, x))?;
        trace.push(TraceRow {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            eta_entropy: eta_entropies(net.arch()),
        });
    }
    net.set_training(false);
    let genotype = derive_genotype(net.arch(), net.catalog(), net.config().node_attention)?;
    Ok(SearchRun { genotype, trace })
}
