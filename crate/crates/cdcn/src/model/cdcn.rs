//! The depth-regression backbone: a stem convolution, three conv blocks with
//! interleaved max pools, multi-level fusion at the final resolution, and a
//! three-layer head ending in a single linear depth channel. Every
//! convolution is a central-difference layer; setting theta to 0 turns the
//! whole network into its plain-convolution special case without changing a
//! single parameter shape.

use serde::{Deserialize, Serialize};

use crate::cdc::{cdc_forward_decomposed, CdcLayer};
use crate::layers::{cdc_tensors_mut, CdcBnRelu, NamedTensorMut, TensorRole, ThetaCfg};
use crate::model::mafm::{mafm_forward, multi_level_fuse, Mafm};
use crate::ops::pool::maxpool2x2;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Positive rational multiplier for channel widths, kept exact so that config
/// files and checkpoints agree bit for bit. Applied with round-half-up and a
/// floor of one channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelScale {
    pub num: u32,
    pub den: u32,
}

impl ChannelScale {
    pub const ONE: ChannelScale = ChannelScale { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<ChannelScale> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!(
                "channel scale must be a positive rational, got {num}/{den}"
            )));
        }
        Ok(ChannelScale { num, den })
    }

    /// Scaled channel count: round(base * num / den) half-up, at least 1.
    pub fn apply(&self, base: usize) -> usize {
        let num = self.num as usize;
        let den = self.den as usize;
        ((2 * base * num + den) / (2 * den)).max(1)
    }

    /// Parses "1", "1/4" style text.
    pub fn parse(text: &str) -> Result<ChannelScale> {
        let bad = |t: &str| Error::Config(format!("channel scale must look like \"1\" or \"1/4\", got {t:?}"));
        match text.split_once('/') {
            None => {
                let num: u32 = text.trim().parse().map_err(|_| bad(text))?;
                ChannelScale::new(num, 1)
            }
            Some((n, d)) => {
                let num: u32 = n.trim().parse().map_err(|_| bad(text))?;
                let den: u32 = d.trim().parse().map_err(|_| bad(text))?;
                ChannelScale::new(num, den)
            }
        }
    }
}

impl std::fmt::Display for ChannelScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Structural configuration of the depth network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdcnConfig {
    /// Input images are [N, 3, input_size, input_size]; must be divisible by 8
    /// because three stride-2 pools produce the depth resolution.
    pub input_size: usize,
    pub channel_scale: ChannelScale,
    pub theta: ThetaCfg,
    /// Fuse the three feature levels through spatial attention instead of a
    /// plain concatenation.
    pub use_mafm: bool,
}

impl Default for CdcnConfig {
    fn default() -> Self {
        CdcnConfig {
            input_size: 256,
            channel_scale: ChannelScale::ONE,
            theta: ThetaCfg::Fixed(0.7),
            use_mafm: false,
        }
    }
}

impl CdcnConfig {
    /// CPU-friendly preset: quarter channels on 64-pixel inputs, 8x8 depth maps.
    pub fn desk() -> CdcnConfig {
        CdcnConfig {
            input_size: 64,
            channel_scale: ChannelScale { num: 1, den: 4 },
            ..CdcnConfig::default()
        }
    }

    pub fn depth_extent(&self) -> usize {
        self.input_size / 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 8, got {}",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// Base channel plan: stem width, the three per-block conv widths, and the two
/// hidden head widths. The depth output is always one channel.
const STEM_WIDTH: usize = 64;
const BLOCK_WIDTHS: [usize; 3] = [128, 196, 128];
const HEAD_WIDTHS: [usize; 2] = [128, 64];

pub struct Cdcn<S: Scalar> {
    pub config: CdcnConfig,
    stem: CdcBnRelu<S>,
    low: Vec<CdcBnRelu<S>>,
    mid: Vec<CdcBnRelu<S>>,
    high: Vec<CdcBnRelu<S>>,
    mafm: Option<Mafm<S>>,
    head: Vec<CdcBnRelu<S>>,
    head_out: CdcLayer<S>,
}

fn build_block<S: Scalar>(
    in_c: usize,
    widths: &[usize],
    theta: ThetaCfg,
    rng: &mut SplitMix64,
) -> Result<Vec<CdcBnRelu<S>>> {
    let mut convs = Vec::with_capacity(widths.len());
    let mut c = in_c;
    for &w in widths {
        convs.push(CdcBnRelu::new(c, w, 3, 1, theta, true, rng)?);
        c = w;
    }
    Ok(convs)
}

pub fn build_cdcn<S: Scalar>(config: &CdcnConfig, seed: u64) -> Result<Cdcn<S>> {
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let sc = config.channel_scale;
    let stem_c = sc.apply(STEM_WIDTH);
    let widths: Vec<usize> = BLOCK_WIDTHS.iter().map(|&w| sc.apply(w)).collect();
    let block_out = *widths.last().expect("three widths");

    let stem = CdcBnRelu::new(3, stem_c, 3, 1, config.theta, true, &mut rng)?;
    let low = build_block(stem_c, &widths, config.theta, &mut rng)?;
    let mid = build_block(block_out, &widths, config.theta, &mut rng)?;
    let high = build_block(block_out, &widths, config.theta, &mut rng)?;
    let mafm = config.use_mafm.then(|| Mafm::new(&mut rng));

    let fused_c = 3 * block_out;
    let head_c: Vec<usize> = HEAD_WIDTHS.iter().map(|&w| sc.apply(w)).collect();
    let head = vec![
        CdcBnRelu::new(fused_c, head_c[0], 3, 1, config.theta, true, &mut rng)?,
        CdcBnRelu::new(head_c[0], head_c[1], 3, 1, config.theta, true, &mut rng)?,
    ];
    let w_out = Tensor::kaiming_conv(1, head_c[1], 3, &mut rng);
    let head_out = match config.theta {
        ThetaCfg::Fixed(t) => CdcLayer::new_fixed(w_out, None, 1, 1, t)?,
        ThetaCfg::Adaptive(init) => CdcLayer::new_adaptive(w_out, None, 1, 1, init)?,
    };

    Ok(Cdcn { config: config.clone(), stem, low, mid, high, mafm, head, head_out })
}

impl<S: Scalar> Cdcn<S> {
    /// Maps [N, 3, S, S] to a depth map [N, 1, S/8, S/8].
    pub fn forward(&mut self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.c != 3 || s.h != self.config.input_size || s.w != self.config.input_size {
            return Err(Error::Shape {
                op: "cdcn_forward",
                detail: format!(
                    "expected [N,3,{0},{0}] input, got {s}",
                    self.config.input_size
                ),
            });
        }
        let mut f = self.stem.forward(tape, x)?;
        for conv in &mut self.low {
            f = conv.forward(tape, &f)?;
        }
        let low_feat = maxpool2x2(tape, &f)?;
        f = low_feat.clone();
        for conv in &mut self.mid {
            f = conv.forward(tape, &f)?;
        }
        let mid_feat = maxpool2x2(tape, &f)?;
        f = mid_feat.clone();
        for conv in &mut self.high {
            f = conv.forward(tape, &f)?;
        }
        let high_feat = maxpool2x2(tape, &f)?;

        // bring every tap to the final depth resolution before fusing
        let low_half = maxpool2x2(tape, &low_feat)?;
        let low_tap = maxpool2x2(tape, &low_half)?;
        let mid_tap = maxpool2x2(tape, &mid_feat)?;
        let fused = match &self.mafm {
            Some(m) => mafm_forward(tape, m, &low_tap, &mid_tap, &high_feat)?,
            None => multi_level_fuse(tape, &low_tap, &mid_tap, &high_feat)?,
        };
        let mut h = fused;
        for conv in &mut self.head {
            h = conv.forward(tape, &h)?;
        }
        cdc_forward_decomposed(tape, &h, &self.head_out)
    }

    pub fn set_training(&mut self, training: bool) {
        self.stem.set_training(training);
        for conv in self
            .low
            .iter_mut()
            .chain(&mut self.mid)
            .chain(&mut self.high)
            .chain(&mut self.head)
        {
            conv.set_training(training);
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, S>> {
        let mut out = Vec::new();
        self.stem.tensors_mut("stem", &mut out);
        for (block, name) in [(&mut self.low, "low"), (&mut self.mid, "mid"), (&mut self.high, "high")]
        {
            for (i, conv) in block.iter_mut().enumerate() {
                conv.tensors_mut(&format!("{name}{i}"), &mut out);
            }
        }
        if let Some(m) = &mut self.mafm {
            m.tensors_mut("mafm", &mut out);
        }
        for (i, conv) in self.head.iter_mut().enumerate() {
            conv.tensors_mut(&format!("head{i}"), &mut out);
        }
        cdc_tensors_mut("head_out", &mut self.head_out, &mut out);
        out
    }

    pub fn param_counts(&mut self) -> ParamCounts {
        ParamCounts::tally(self.tensors_mut())
    }
}

/// Parameter tallies split the way size budgets are usually quoted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    /// Elements of convolution weight tensors only.
    pub conv: usize,
    /// Every optimizer-updated element (conv weights, batch-norm affine,
    /// learnable theta).
    pub trainable: usize,
    /// Trainable plus running statistics.
    pub total: usize,
}

impl ParamCounts {
    pub fn tally<S: Scalar>(tensors: Vec<NamedTensorMut<'_, S>>) -> ParamCounts {
        let mut counts = ParamCounts { conv: 0, trainable: 0, total: 0 };
        for t in tensors {
            let n = t.tensor.shape().numel();
            counts.total += n;
            if t.role == TensorRole::Param {
                counts.trainable += n;
                if t.name.ends_with(".weight") {
                    counts.conv += n;
                }
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    #[test]
    fn channel_scale_rounds_half_up_with_floor_one() {
        let quarter = ChannelScale::new(1, 4).unwrap();
        assert_eq!(quarter.apply(64), 16);
        assert_eq!(quarter.apply(196), 49);
        assert_eq!(quarter.apply(2), 1, "0.5 rounds up");
        assert_eq!(quarter.apply(1), 1, "floor of one channel");
        assert_eq!(ChannelScale::parse("1/4").unwrap(), quarter);
        assert_eq!(ChannelScale::parse("3").unwrap(), ChannelScale::new(3, 1).unwrap());
        assert!(ChannelScale::parse("0/4").is_err());
        assert!(ChannelScale::parse("x").is_err());
        assert_eq!(quarter.to_string(), "1/4");
    }

    #[test]
    fn config_validation_names_the_constraint() {
        let mut cfg = CdcnConfig::desk();
        cfg.input_size = 60;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("multiple of 8"), "got {err}");
    }

    #[test]
    fn desk_model_forward_shape() {
        let mut model = build_cdcn::<f32>(&CdcnConfig::desk(), 7).unwrap();
        model.set_training(false);
        let mut tape = Tape::inference();
        let x = Tensor::zeros(Shape::new(2, 3, 64, 64));
        let y = model.forward(&mut tape, &x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 1, 8, 8));
        assert!(y.all_finite(), "all-zero input must stay finite");
    }

    #[test]
    fn forward_rejects_wrong_input_extent() {
        let mut model = build_cdcn::<f32>(&CdcnConfig::desk(), 7).unwrap();
        let mut tape = Tape::inference();
        let x = Tensor::zeros(Shape::new(1, 3, 32, 32));
        assert!(model.forward(&mut tape, &x).is_err());
    }

    #[test]
    fn full_scale_parameter_count_matches_plan() {
        let mut model = build_cdcn::<f32>(&CdcnConfig::default(), 1).unwrap();
        let counts = model.param_counts();
        assert_eq!(counts.conv, 2_241_792, "conv elements at scale 1");
        assert_eq!(counts.trainable, 2_241_792 + 3_224, "plus batch-norm affine");
        let target = 2.25e6;
        assert!((counts.conv as f64 - target).abs() / target < 0.05);
    }

    #[test]
    fn theta_zero_and_theta_seven_share_counts_and_shapes() {
        let mut cfg = CdcnConfig::desk();
        cfg.theta = ThetaCfg::Fixed(0.0);
        let mut plain = build_cdcn::<f32>(&cfg, 3).unwrap();
        cfg.theta = ThetaCfg::Fixed(0.7);
        let mut cdc = build_cdcn::<f32>(&cfg, 3).unwrap();
        assert_eq!(plain.param_counts(), cdc.param_counts());
        let a = plain.tensors_mut();
        let b = cdc.tensors_mut();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.tensor.shape(), y.tensor.shape());
        }
    }

    #[test]
    fn same_seed_builds_identical_weights() {
        let mut a = build_cdcn::<f64>(&CdcnConfig::desk(), 42).unwrap();
        let mut b = build_cdcn::<f64>(&CdcnConfig::desk(), 42).unwrap();
        for (x, y) in a.tensors_mut().iter().zip(b.tensors_mut().iter()) {
            assert_eq!(x.tensor.data(), y.tensor.data(), "tensor {} differs", x.name);
        }
    }

    #[test]
    fn attention_fusion_variant_builds_and_runs() {
        let mut cfg = CdcnConfig::desk();
        cfg.input_size = 32;
        cfg.use_mafm = true;
        let mut model = build_cdcn::<f32>(&cfg, 9).unwrap();
        model.set_training(false);
        let mut rng = SplitMix64::new(1);
        let x = Tensor::uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut rng);
        let mut tape = Tape::inference();
        let y = model.forward(&mut tape, &x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        assert!(y.all_finite());
        let names: Vec<String> = model.tensors_mut().iter().map(|t| t.name.clone()).collect();
        assert!(names.iter().any(|n| n.starts_with("mafm.")));
    }
}
