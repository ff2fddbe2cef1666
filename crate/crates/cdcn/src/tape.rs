//! Reverse-mode autodiff on a Wengert tape. Ops append nodes during the forward
//! pass; `backward` walks them once in reverse, accumulating gradients additively
//! so fan-out (a tensor feeding several ops) just works.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::scalar::Scalar;
use crate::tensor::{TapeRef, Tensor};
use crate::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

struct SlotInfo {
    numel: usize,
    wanted: bool,
}

struct Node<S: Scalar> {
    out: usize,
    back: Box<dyn FnOnce(&[S], &mut GradAcc<'_, S>)>,
}

/// Recording context for one forward pass. Consumed by `backward`.
pub struct Tape<S: Scalar> {
    id: u64,
    recording: bool,
    slots: Vec<SlotInfo>,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Tape<S> {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording: true,
            slots: Vec::new(),
            nodes: Vec::new(),
        }
    }

    /// A tape that records nothing. Ops run forward-only on it.
    pub fn inference() -> Tape<S> {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording: false,
            slots: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Registers `t` as a leaf whose gradient `backward` must report.
    /// A tensor bound to an older tape is rebound to this one.
    pub fn watch(&mut self, t: &mut Tensor<S>) {
        if !self.recording {
            return;
        }
        match t.node {
            Some(TapeRef { tape, slot }) if tape == self.id => {
                self.slots[slot].wanted = true;
            }
            _ => {
                let slot = self.push_slot(t.shape().numel(), true);
                t.node = Some(TapeRef { tape: self.id, slot });
            }
        }
        t.set_requires_grad(true);
    }

    fn push_slot(&mut self, numel: usize, wanted: bool) -> usize {
        self.slots.push(SlotInfo { numel, wanted });
        self.slots.len() - 1
    }

    /// Slot of `t` if it lives on this tape.
    pub(crate) fn slot_of(&self, t: &Tensor<S>) -> Option<usize> {
        match t.node {
            Some(TapeRef { tape, slot }) if tape == self.id => Some(slot),
            _ => None,
        }
    }

    /// True when recording and `t` is tracked here, so ops know whether an
    /// input contributes gradient.
    pub(crate) fn tracks(&self, t: &Tensor<S>) -> bool {
        self.recording && self.slot_of(t).is_some()
    }

    /// Binds an op output to a fresh slot and appends its backward closure.
    pub(crate) fn record(
        &mut self,
        out: &mut Tensor<S>,
        back: impl FnOnce(&[S], &mut GradAcc<'_, S>) + 'static,
    ) {
        debug_assert!(self.recording);
        let slot = self.push_slot(out.shape().numel(), false);
        out.node = Some(TapeRef { tape: self.id, slot });
        self.nodes.push(Node { out: slot, back: Box::new(back) });
    }

    /// Runs reverse-mode accumulation from a scalar loss. Consumes the tape.
    pub fn backward(mut self, loss: &Tensor<S>) -> Result<Gradients<S>> {
        let loss_slot = self.slot_of(loss).ok_or_else(|| {
            Error::Tape("backward target is not on this tape".to_string())
        })?;
        if loss.shape().numel() != 1 {
            return Err(Error::Tape(format!(
                "backward target must be scalar (1x1x1x1), got {}",
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(self.slots.len());
        grads.resize_with(self.slots.len(), || None);
        grads[loss_slot] = Some(vec![S::one()]);

        for node in self.nodes.drain(..).rev() {
            let Some(g) = grads[node.out].take() else {
                continue; // this value never influenced the loss
            };
            {
                let mut acc = GradAcc {
                    slots: &mut grads,
                    infos: &self.slots,
                };
                (node.back)(&g, &mut acc);
            }
            if self.slots[node.out].wanted {
                grads[node.out] = Some(g);
            }
        }

        // Watched leaves that never fed the loss get explicit zeros.
        for (i, info) in self.slots.iter().enumerate() {
            if info.wanted && grads[i].is_none() {
                grads[i] = Some(vec![S::zero(); info.numel]);
            } else if !info.wanted {
                grads[i] = None;
            }
        }

        Ok(Gradients { tape: self.id, slots: grads })
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Accumulator handed to backward closures.
pub(crate) struct GradAcc<'a, S: Scalar> {
    slots: &'a mut [Option<Vec<S>>],
    infos: &'a [SlotInfo],
}

impl<'a, S: Scalar> GradAcc<'a, S> {
    /// Gives `f` the gradient buffer for `slot` (zero-initialized on first
    /// touch); `f` adds its contribution in place.
    pub fn accumulate(&mut self, slot: usize, f: impl FnOnce(&mut [S])) {
        let buf = self.slots[slot]
            .get_or_insert_with(|| vec![S::zero(); self.infos[slot].numel]);
        f(buf);
    }
}

/// Gradient of the loss with respect to every watched tensor.
#[derive(Debug)]
pub struct Gradients<S: Scalar> {
    tape: u64,
    slots: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `t`, if `t` was watched on the consumed tape.
    pub fn wrt(&self, t: &Tensor<S>) -> Option<&[S]> {
        match t.node {
            Some(TapeRef { tape, slot }) if tape == self.tape => {
                self.slots.get(slot).and_then(|g| g.as_deref())
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    // Hand-built nodes standing in for real ops: y = k * x elementwise.
    fn fake_scale(tape: &mut Tape<f64>, x: &Tensor<f64>, k: f64) -> Tensor<f64> {
        let data: Vec<f64> = x.data().iter().map(|&v| v * k).collect();
        let mut out = Tensor::from_vec(x.shape(), data).unwrap();
        if tape.tracks(x) {
            let x_slot = tape.slot_of(x).unwrap();
            tape.record(&mut out, move |g, acc| {
                acc.accumulate(x_slot, |dx| {
                    for (d, &gi) in dx.iter_mut().zip(g) {
                        *d += k * gi;
                    }
                });
            });
        }
        out
    }

    fn fake_sum(tape: &mut Tape<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let total: f64 = x.data().iter().sum();
        let mut out = Tensor::scalar_tensor(total);
        if tape.tracks(x) {
            let x_slot = tape.slot_of(x).unwrap();
            tape.record(&mut out, move |g, acc| {
                acc.accumulate(x_slot, |dx| {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                });
            });
        }
        out
    }

    #[test]
    fn chain_rule_through_two_nodes() {
        let mut tape = Tape::new();
        let mut x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        tape.watch(&mut x);
        let y = fake_scale(&mut tape, &x, 4.0);
        let loss = fake_sum(&mut tape, &y);
        assert_eq!(loss.scalar(), Some(24.0));
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn fanout_accumulates_additively() {
        let mut tape = Tape::new();
        let mut x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 1.0]).unwrap();
        tape.watch(&mut x);
        let a = fake_scale(&mut tape, &x, 2.0);
        let b = fake_scale(&mut tape, &x, 5.0);
        let sa = fake_sum(&mut tape, &a);
        let sb = fake_sum(&mut tape, &b);
        // loss = sum(2x) + sum(5x), via one more node
        let joined = {
            let mut out = Tensor::scalar_tensor(sa.scalar().unwrap() + sb.scalar().unwrap());
            let (slot_a, slot_b) = (tape.slot_of(&sa).unwrap(), tape.slot_of(&sb).unwrap());
            tape.record(&mut out, move |g, acc| {
                acc.accumulate(slot_a, |d| d[0] += g[0]);
                acc.accumulate(slot_b, |d| d[0] += g[0]);
            });
            out
        };
        let grads = tape.backward(&joined).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[7.0, 7.0], "2 + 5 from both branches");
    }

    #[test]
    fn unused_watched_leaf_gets_zeros() {
        let mut tape = Tape::new();
        let mut x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        let mut unused = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, 4.0]).unwrap();
        tape.watch(&mut x);
        tape.watch(&mut unused);
        let loss = fake_sum(&mut tape, &x);
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&unused).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_nonscalar_loss() {
        let mut tape = Tape::new();
        let mut x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        tape.watch(&mut x);
        let y = fake_scale(&mut tape, &x, 2.0);
        let err = tape.backward(&y).unwrap_err();
        assert!(matches!(err, Error::Tape(_)), "got {err:?}");
    }

    #[test]
    fn backward_rejects_foreign_tensor() {
        let mut tape_a = Tape::<f64>::new();
        let mut tape_b = Tape::<f64>::new();
        let mut x = Tensor::scalar_tensor(1.0);
        tape_b.watch(&mut x);
        let mut xa = Tensor::scalar_tensor(2.0);
        tape_a.watch(&mut xa);
        let err = tape_a.backward(&x).unwrap_err();
        assert!(matches!(err, Error::Tape(_)), "got {err:?}");
        // tape_b still works for its own tensor
        let grads = tape_b.backward(&x).unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[1.0]);
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut tape = Tape::inference();
        let mut x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        tape.watch(&mut x);
        let y = fake_scale(&mut tape, &x, 3.0);
        assert_eq!(y.data(), &[3.0, 6.0]);
        assert_eq!(tape.node_count(), 0);
        assert!(!x.requires_grad(), "inference watch must be a no-op");
    }

    #[test]
    fn rewatching_same_tape_keeps_single_slot() {
        let mut tape = Tape::<f64>::new();
        let mut x = Tensor::scalar_tensor(1.0);
        tape.watch(&mut x);
        let first = x.node.unwrap().slot;
        tape.watch(&mut x);
        assert_eq!(x.node.unwrap().slot, first);
    }
}
