//! Synthetic face datasets with analytic depth supervision. Live samples are
//! smooth radial luminance bumps whose depth target is the same bump; spoof
//! samples flatten the bump and stamp a capture artifact on top, a periodic
//! lattice for prints and interfering sinusoids for replays, with an
//! all-zero depth target. A domain knob shifts brightness, adds pixel noise,
//! and casts color, so train and test sets can disagree in capture
//! conditions without touching labels or targets.

use serde::{Deserialize, Serialize};

use crate::metrics::Label;
use crate::rng::{stream_for, SplitMix64};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::train::Sample;
use crate::{Error, Result};

/// Grid spacing of the print artifact, in pixels.
pub const LATTICE_PERIOD: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    PrintLattice,
    ReplayMoire,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::PrintLattice => "print_lattice",
            AttackKind::ReplayMoire => "replay_moire",
        }
    }

    pub fn parse(text: &str) -> Result<AttackKind> {
        match text {
            "print_lattice" => Ok(AttackKind::PrintLattice),
            "replay_moire" => Ok(AttackKind::ReplayMoire),
            other => Err(Error::Config(format!("unknown attack kind {other:?}"))),
        }
    }
}

/// Capture-condition shift applied to every sample of a generated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub tag: String,
    /// Per-sample additive brightness, drawn uniformly from this range.
    pub brightness_lo: f64,
    pub brightness_hi: f64,
    /// Standard deviation of per-pixel additive noise.
    pub noise_sigma: f64,
    /// Additive per-channel cast, RGB order.
    pub color_cast: [f64; 3],
}

impl Default for DomainSpec {
    fn default() -> DomainSpec {
        DomainSpec {
            tag: "base".into(),
            brightness_lo: 0.0,
            brightness_hi: 0.0,
            noise_sigma: 0.0,
            color_cast: [0.0; 3],
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tag.is_empty() {
            return Err(Error::Config("domain tag must not be empty".into()));
        }
        let vals = [
            self.brightness_lo,
            self.brightness_hi,
            self.noise_sigma,
            self.color_cast[0],
            self.color_cast[1],
            self.color_cast[2],
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("domain {} holds non-finite values", self.tag)));
        }
        if self.brightness_lo > self.brightness_hi {
            return Err(Error::Config(format!(
                "brightness range is inverted: {} > {}",
                self.brightness_lo, self.brightness_hi
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub image_size: usize,
    pub live: usize,
    pub print_lattice: usize,
    pub replay_moire: usize,
    pub domain: DomainSpec,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            seed: 7,
            image_size: 64,
            live: 32,
            print_lattice: 16,
            replay_moire: 16,
            domain: DomainSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of 8, got {}",
                self.image_size
            )));
        }
        if self.live + self.print_lattice + self.replay_moire == 0 {
            return Err(Error::Config("sample counts are all zero".into()));
        }
        self.domain.validate()
    }

    pub fn total(&self) -> usize {
        self.live + self.print_lattice + self.replay_moire
    }
}

struct Bump {
    cx: f64,
    cy: f64,
    r: f64,
}

impl Bump {
    fn draw(rng: &mut SplitMix64, size: usize) -> Bump {
        let s = size as f64;
        Bump {
            cx: rng.uniform(0.35 * s, 0.65 * s),
            cy: rng.uniform(0.35 * s, 0.65 * s),
            r: rng.uniform(0.30 * s, 0.45 * s),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        (-(dx * dx + dy * dy) / (2.0 * self.r * self.r)).exp()
    }
}

/// Warm per-channel gains so the base face is not pure gray.
const CHANNEL_GAIN: [f64; 3] = [1.0, 0.96, 0.9];

fn live_luminance(bump: &Bump, x: f64, y: f64) -> f64 {
    0.2 + 0.6 * bump.at(x, y)
}

/// Spoofs present a re-captured face: the relief flattens and dims.
fn flat_luminance(bump: &Bump, x: f64, y: f64) -> f64 {
    0.2 + 0.48 * bump.at(x, y).powf(0.35)
}

fn lattice_artifact(x: f64, y: f64, phase_x: f64, phase_y: f64) -> f64 {
    let p = LATTICE_PERIOD as f64;
    let gx = (std::f64::consts::TAU * (x + phase_x) / p).cos();
    let gy = (std::f64::consts::TAU * (y + phase_y) / p).cos();
    0.1 * 0.5 * (gx + gy)
}

fn moire_artifact(size: usize, x: f64, y: f64, phase_a: f64, phase_b: f64) -> f64 {
    let s = size as f64;
    let (sin_a, cos_a) = (0.3f64.sin(), 0.3f64.cos());
    let (sin_b, cos_b) = (0.75f64.sin(), 0.75f64.cos());
    let ua = (x * cos_a + y * sin_a) * 5.3 / s;
    let ub = (x * cos_b + y * sin_b) * 6.2 / s;
    let wave_a = (std::f64::consts::TAU * ua + phase_a).sin();
    let wave_b = (std::f64::consts::TAU * ub + phase_b).sin();
    0.05 * (wave_a + wave_b)
}

/// Renders the bump on the depth grid (one cell per 8x8 image block) and
/// normalizes the result so its maximum is exactly 1.
fn depth_target<S: Scalar>(bump: &Bump, size: usize) -> Tensor<S> {
    let d = size / 8;
    let mut vals = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            let y = (i as f64 + 0.5) * 8.0;
            let x = (j as f64 + 0.5) * 8.0;
            vals[i * d + j] = bump.at(x, y);
        }
    }
    let peak = vals.iter().cloned().fold(f64::MIN, f64::max);
    Tensor::from_fn(Shape::new(1, 1, d, d), |k| S::from_f64(vals[k] / peak))
}

fn apply_domain<S: Scalar>(
    image: &mut [f64],
    size: usize,
    domain: &DomainSpec,
    rng: &mut SplitMix64,
) -> Tensor<S> {
    let brightness = rng.uniform(domain.brightness_lo, domain.brightness_hi);
    let plane = size * size;
    for c in 0..3 {
        for k in 0..plane {
            let mut v = image[c * plane + k] + brightness + domain.color_cast[c];
            if domain.noise_sigma > 0.0 {
                v += domain.noise_sigma * rng.normal();
            }
            image[c * plane + k] = v.clamp(0.0, 1.0);
        }
    }
    Tensor::from_fn(Shape::new(1, 3, size, size), |k| S::from_f64(image[k]))
}

/// Produces the full dataset for a config: live samples first, then print
/// attacks, then replay attacks. Every sample is rendered from its own
/// stream keyed by (config seed, global index), so the set is reproducible
/// and order-independent.
pub fn generate<S: Scalar>(config: &SynthConfig) -> Result<Vec<Sample<S>>> {
    config.validate()?;
    let size = config.image_size;
    let plane = size * size;
    let mut out = Vec::with_capacity(config.total());
    for k in 0..config.total() {
        let mut rng = stream_for(config.seed, k as u64);
        let bump = Bump::draw(&mut rng, size);
        let (id, label, depth, mut lum): (String, Label, Tensor<S>, Vec<f64>) =
            if k < config.live {
                let mut lum = vec![0.0; plane];
                for (p, v) in lum.iter_mut().enumerate() {
                    let (y, x) = ((p / size) as f64 + 0.5, (p % size) as f64 + 0.5);
                    *v = live_luminance(&bump, x, y);
                }
                (
                    format!("live_{k:04}"),
                    Label::Live,
                    depth_target(&bump, size),
                    lum,
                )
            } else if k < config.live + config.print_lattice {
                let phase_x = rng.uniform(0.0, LATTICE_PERIOD as f64);
                let phase_y = rng.uniform(0.0, LATTICE_PERIOD as f64);
                let mut lum = vec![0.0; plane];
                for (p, v) in lum.iter_mut().enumerate() {
                    let (y, x) = ((p / size) as f64 + 0.5, (p % size) as f64 + 0.5);
                    *v = flat_luminance(&bump, x, y) + lattice_artifact(x, y, phase_x, phase_y);
                }
                (
                    format!("print_lattice_{:04}", k - config.live),
                    Label::Attack(AttackKind::PrintLattice.name().into()),
                    Tensor::zeros(Shape::new(1, 1, size / 8, size / 8)),
                    lum,
                )
            } else {
                let phase_a = rng.uniform(0.0, std::f64::consts::TAU);
                let phase_b = rng.uniform(0.0, std::f64::consts::TAU);
                let mut lum = vec![0.0; plane];
                for (p, v) in lum.iter_mut().enumerate() {
                    let (y, x) = ((p / size) as f64 + 0.5, (p % size) as f64 + 0.5);
                    *v = flat_luminance(&bump, x, y)
                        + moire_artifact(size, x, y, phase_a, phase_b);
                }
                (
                    format!("replay_moire_{:04}", k - config.live - config.print_lattice),
                    Label::Attack(AttackKind::ReplayMoire.name().into()),
                    Tensor::zeros(Shape::new(1, 1, size / 8, size / 8)),
                    lum,
                )
            };
        let mut image = vec![0.0; 3 * plane];
        for c in 0..3 {
            for p in 0..plane {
                image[c * plane + p] = (CHANNEL_GAIN[c] * lum[p]).clamp(0.0, 1.0);
            }
        }
        lum.clear();
        let image = apply_domain(&mut image, size, &config.domain, &mut rng);
        out.push(Sample {
            id,
            image,
            depth,
            label,
            domain: config.domain.tag.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Magnitude of one 2-D DFT bin of a luminance plane, computed directly
    /// from the definition.
    fn dft_bin_magnitude(lum: &[f64], size: usize, u: usize, v: usize) -> f64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for y in 0..size {
            for x in 0..size {
                let angle = -std::f64::consts::TAU
                    * (u as f64 * y as f64 + v as f64 * x as f64)
                    / size as f64;
                re += lum[y * size + x] * angle.cos();
                im += lum[y * size + x] * angle.sin();
            }
        }
        (re * re + im * im).sqrt()
    }

    fn luminance(sample: &Sample<f64>, size: usize) -> Vec<f64> {
        let data = sample.image.data();
        let plane = size * size;
        (0..plane)
            .map(|p| (data[p] + data[plane + p] + data[2 * plane + p]) / 3.0)
            .collect()
    }

    fn small_config() -> SynthConfig {
        SynthConfig {
            seed: 11,
            image_size: 32,
            live: 6,
            print_lattice: 6,
            replay_moire: 4,
            domain: DomainSpec::default(),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        let a = generate::<f32>(&cfg).unwrap();
        let b = generate::<f32>(&cfg).unwrap();
        assert_eq!(a.len(), 16);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.image.data(), y.image.data(), "{} image differs", x.id);
            assert_eq!(x.depth.data(), y.depth.data(), "{} depth differs", x.id);
        }
    }

    #[test]
    fn depth_targets_honor_the_class_contract() {
        let samples = generate::<f64>(&small_config()).unwrap();
        for s in &samples {
            let d = s.depth.data();
            match &s.label {
                Label::Live => {
                    let max = d.iter().cloned().fold(f64::MIN, f64::max);
                    let min = d.iter().cloned().fold(f64::MAX, f64::min);
                    assert_eq!(max, 1.0, "{} live depth peaks at 1", s.id);
                    assert!(min >= 0.0, "{} live depth is non-negative", s.id);
                }
                Label::Attack(_) => {
                    assert!(d.iter().all(|v| *v == 0.0), "{} attack depth is zero", s.id);
                }
            }
            assert!(
                s.image.data().iter().all(|v| (0.0..=1.0).contains(v)),
                "{} image leaves [0,1]",
                s.id
            );
        }
    }

    #[test]
    fn lattice_attacks_carry_a_spectral_spike() {
        let cfg = small_config();
        let samples = generate::<f64>(&cfg).unwrap();
        let size = cfg.image_size;
        let bin = size / LATTICE_PERIOD;
        let class_mean = |label_is_print: bool| -> f64 {
            let mut total = 0.0;
            let mut n = 0usize;
            for s in &samples {
                let is_print = matches!(&s.label, Label::Attack(t) if t == "print_lattice");
                if is_print != label_is_print {
                    continue;
                }
                if label_is_print || matches!(s.label, Label::Live) {
                    let lum = luminance(s, size);
                    total += dft_bin_magnitude(&lum, size, 0, bin)
                        + dft_bin_magnitude(&lum, size, bin, 0);
                    n += 1;
                }
            }
            total / n as f64
        };
        let print_peak = class_mean(true);
        let live_peak = class_mean(false);
        assert!(
            print_peak >= 3.0 * live_peak,
            "lattice frequency peak ratio too small: {print_peak} vs {live_peak}"
        );
    }

    #[test]
    fn domain_shift_moves_brightness_without_touching_targets() {
        let base_cfg = small_config();
        let mut shifted_cfg = base_cfg.clone();
        shifted_cfg.domain = DomainSpec {
            tag: "shifted".into(),
            brightness_lo: 0.10,
            brightness_hi: 0.20,
            noise_sigma: 0.02,
            color_cast: [0.02, 0.0, -0.02],
        };
        let base = generate::<f64>(&base_cfg).unwrap();
        let shifted = generate::<f64>(&shifted_cfg).unwrap();
        let mean = |set: &[Sample<f64>]| {
            let mut total = 0.0;
            let mut n = 0usize;
            for s in set {
                total += s.image.data().iter().sum::<f64>();
                n += s.image.shape().numel();
            }
            total / n as f64
        };
        let delta = mean(&shifted) - mean(&base);
        assert!(
            (delta - 0.15).abs() <= 0.01,
            "mean brightness should shift by about 0.15, moved {delta}"
        );
        for (a, b) in base.iter().zip(shifted.iter()) {
            assert_eq!(a.label, b.label, "labels survive the shift");
            assert_eq!(a.depth.data(), b.depth.data(), "depth targets survive the shift");
            assert_eq!(b.domain, "shifted");
        }
    }

    #[test]
    fn invalid_configs_are_rejected()  {
        let mut cfg = small_config();
        cfg.image_size = 20;
        assert!(generate::<f64>(&cfg).is_err(), "size not divisible by 8");
        let mut cfg = small_config();
        cfg.live = 0;
        cfg.print_lattice = 0;
        cfg.replay_moire = 0;
        assert!(generate::<f64>(&cfg).is_err(), "empty dataset");
        let mut cfg = small_config();
        cfg.domain.brightness_lo = 0.3;
        cfg.domain.brightness_hi = 0.1;
        assert!(generate::<f64>(&cfg).is_err(), "inverted brightness range");
    }
}
