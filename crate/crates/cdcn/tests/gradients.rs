//! Gradient correctness: every differentiable operation against central
//! finite differences, plus an end-to-end check through a full depth model
//! and its training loss.

use cdcn::gradcheck::{max_rel_error, run_suite};
use cdcn::layers::TensorRole;
use cdcn::loss::{loss_overall, ContrastKernelBank};
use cdcn::model::{build_cdcn, CdcnConfig, ChannelScale};
use cdcn::layers::ThetaCfg;
use cdcn::rng::SplitMix64;
use cdcn::tensor::{Shape, Tensor};
use cdcn::Tape;

#[test]
fn every_operation_matches_finite_differences() {
    let reports = run_suite(20, 0x0ddba11).expect("suite runs");
    assert!(reports.len() >= 20, "expected a wide op inventory, got {}", reports.len());
    for must_have in [
        "conv2d",
        "cdc_fixed_theta",
        "cdc_adaptive_theta",
        "batchnorm_train",
        "maxpool2x2",
        "softmax_last",
        "loss_overall",
        "mafm",
        "supernet_arch_logits",
    ] {
        assert!(
            reports.iter().any(|r| r.name == must_have),
            "suite is missing a check for {must_have}"
        );
    }
    for r in &reports {
        assert_eq!(r.trials, 20, "{} ran the wrong number of trials", r.name);
        assert!(
            r.pass(),
            "{} disagrees with finite differences: max relative error {:.3e}",
            r.name,
            r.max_rel
        );
    }
}

#[test]
fn whole_model_loss_gradient_matches_finite_differences() {
    let cfg = CdcnConfig {
        input_size: 24,
        channel_scale: ChannelScale::new(1, 8).unwrap(),
        theta: ThetaCfg::Adaptive(0.7),
        use_mafm: true,
    };
    let mut model = build_cdcn::<f64>(&cfg, 99).unwrap();
    model.set_training(true);
    let mut rng = SplitMix64::new(4242);
    let x = Tensor::uniform(Shape::new(2, 3, 24, 24), 0.0, 1.0, &mut rng);
    let y = Tensor::uniform(Shape::new(2, 1, 3, 3), 0.0, 1.0, &mut rng);
    let bank = ContrastKernelBank::new();

    let mut tape = Tape::new();
    for t in model.tensors_mut().iter_mut() {
        if t.role == TensorRole::Param {
            tape.watch(t.tensor);
        }
    }
    let pred = model.forward(&mut tape, &x).unwrap();
    let loss = loss_overall(&mut tape, &pred, &y, &bank).unwrap();
    let grads = tape.backward(&loss).unwrap();

    // Sample a few elements from every parameter tensor and compare the taped
    // gradient against a central difference of the full forward pass.
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let n_params = model
        .tensors_mut()
        .iter()
        .filter(|t| t.role == TensorRole::Param)
        .count();
    for pi in 0..n_params {
        let (numel, slot_grad) = {
            let mut tensors = model.tensors_mut();
            let t = tensors
                .iter_mut()
                .filter(|t| t.role == TensorRole::Param)
                .nth(pi)
                .unwrap();
            let g = grads
                .wrt(t.tensor)
                .unwrap_or_else(|| panic!("no gradient recorded for {}", t.name))
                .to_vec();
            (t.tensor.shape().numel(), g)
        };
        let probes = if numel == 1 { 1 } else { 2 };
        for probe in 0..probes {
            let ei = if probe == 0 { 0 } else { rng.next_below(numel as u64) as usize };
            let h = 1e-5;
            let set = |value: f64, model: &mut cdcn::model::Cdcn<f64>| {
                let mut tensors = model.tensors_mut();
                let t = tensors
                    .iter_mut()
                    .filter(|t| t.role == TensorRole::Param)
                    .nth(pi)
                    .unwrap();
                t.tensor.data_mut()[ei] = value;
            };
            let eval = |model: &mut cdcn::model::Cdcn<f64>| -> f64 {
                let mut tape = Tape::inference();
                let pred = model.forward(&mut tape, &x).unwrap();
                let loss = loss_overall(&mut tape, &pred, &y, &bank).unwrap();
                loss.scalar().unwrap()
            };
            let orig = {
                let mut tensors = model.tensors_mut();
                let t = tensors
                    .iter_mut()
                    .filter(|t| t.role == TensorRole::Param)
                    .nth(pi)
                    .unwrap();
                t.tensor.data()[ei]
            };
            set(orig + h, &mut model);
            let up = eval(&mut model);
            set(orig - h, &mut model);
            let down = eval(&mut model);
            set(orig, &mut model);
            analytic.push(slot_grad[ei]);
            numeric.push((up - down) / (2.0 * h));
        }
    }
    assert!(analytic.len() >= 30, "sampled too few parameters: {}", analytic.len());
    let rel = max_rel_error(&analytic, &numeric);
    assert!(
        rel <= 1e-4,
        "model loss gradient disagrees with finite differences: {rel:.3e}"
    );
}
