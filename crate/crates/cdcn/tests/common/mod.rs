//! Shared helpers for the integration suites: independent reference
//! implementations of the evaluation metrics (pairwise AUC, literal recounts,
//! exhaustive threshold sweeps), a random score-set generator, and shortcuts
//! for building datasets from the synthesizer.

#![allow(dead_code)]

use cdcn::metrics::{Label, ScoreEntry, ScoreSet};
use cdcn::rng::SplitMix64;
use cdcn::synth::{generate, DomainSpec, SynthConfig};
use cdcn::train::Dataset;
use cdcn::Scalar;
use std::collections::BTreeSet;

/// Pairwise AUC: the fraction of (live, attack) pairs where the live sample
/// scores higher, ties counted half. Quadratic on purpose.
pub fn auc_pairwise(set: &ScoreSet) -> f64 {
    let live = set.live_scores();
    let attacks = set.pooled_attack_scores();
    let mut won = 0.0f64;
    for &l in &live {
        for &a in &attacks {
            if l > a {
                won += 1.0;
            } else if l == a {
                won += 0.5;
            }
        }
    }
    won / (live.len() as f64 * attacks.len() as f64)
}

/// Error rates at a threshold by literal recount: per attack type the fraction
/// accepted (score at or above the threshold), the worst of those, and the
/// fraction of live samples rejected.
pub struct RecountReport {
    pub apcer_per_type: Vec<(String, f64)>,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
}

pub fn recount_at_threshold(set: &ScoreSet, tau: f64) -> RecountReport {
    let mut kinds = BTreeSet::new();
    for e in set.entries() {
        if let Label::Attack(kind) = &e.label {
            kinds.insert(kind.clone());
        }
    }
    let mut apcer_per_type = Vec::new();
    let mut apcer = 0.0f64;
    for kind in kinds {
        let mut total = 0usize;
        let mut accepted = 0usize;
        for e in set.entries() {
            if e.label == Label::Attack(kind.clone()) {
                total += 1;
                if e.score >= tau {
                    accepted += 1;
                }
            }
        }
        let rate = accepted as f64 / total as f64;
        apcer = apcer.max(rate);
        apcer_per_type.push((kind, rate));
    }
    let mut live_total = 0usize;
    let mut live_rejected = 0usize;
    for e in set.entries() {
        if e.label == Label::Live {
            live_total += 1;
            if e.score < tau {
                live_rejected += 1;
            }
        }
    }
    let bpcer = live_rejected as f64 / live_total as f64;
    RecountReport { apcer_per_type, apcer, bpcer, acer: (apcer + bpcer) / 2.0 }
}

/// Pooled false-accept and false-reject rates at a threshold, recounted from
/// the raw entries.
pub fn recount_far_frr(set: &ScoreSet, tau: f64) -> (f64, f64) {
    let mut live = 0usize;
    let mut live_rejected = 0usize;
    let mut attacks = 0usize;
    let mut attacks_accepted = 0usize;
    for e in set.entries() {
        if e.label == Label::Live {
            live += 1;
            if e.score < tau {
                live_rejected += 1;
            }
        } else {
            attacks += 1;
            if e.score >= tau {
                attacks_accepted += 1;
            }
        }
    }
    (
        attacks_accepted as f64 / attacks as f64,
        live_rejected as f64 / live as f64,
    )
}

/// Exhaustive equal-error sweep: evaluates |FAR - FRR| at the midpoint of
/// every adjacent pair of distinct scores (the only thresholds where the
/// classification outcome changes, apart from accept-all and reject-all which
/// both sit at the maximal gap of 1) and returns the minimal gap together
/// with the lowest threshold achieving it.
pub struct EerSweep {
    pub min_gap: f64,
    pub lowest_tau: f64,
    pub far: f64,
    pub frr: f64,
}

pub fn exhaustive_eer_sweep(set: &ScoreSet) -> Option<EerSweep> {
    let mut scores: Vec<f64> = set.entries().iter().map(|e| e.score).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    scores.dedup();
    if scores.len() < 2 {
        return None;
    }
    let mut best: Option<EerSweep> = None;
    for pair in scores.windows(2) {
        let tau = (pair[0] + pair[1]) / 2.0;
        let (far, frr) = recount_far_frr(set, tau);
        let gap = (far - frr).abs();
        let better = match &best {
            None => true,
            Some(b) => gap < b.min_gap,
        };
        if better {
            best = Some(EerSweep { min_gap: gap, lowest_tau: tau, far, frr });
        }
    }
    best
}

/// Draws a labeled score set with 1..=3 attack types, at most 100 samples,
/// and a mix of continuous and grid-quantized scores so exact ties occur.
pub fn random_score_set(rng: &mut SplitMix64) -> ScoreSet {
    let type_names = ["print", "replay", "mask"];
    let n_types = 1 + rng.next_below(3) as usize;
    let n_live = 1 + rng.next_below(40) as usize;
    let mut entries = Vec::new();
    let mut draw_score = |rng: &mut SplitMix64| -> f64 {
        if rng.next_below(2) == 0 {
            rng.next_below(9) as f64 / 8.0
        } else {
            rng.uniform(-0.5, 1.5)
        }
    };
    for i in 0..n_live {
        entries.push(ScoreEntry {
            sample_id: format!("live_{i}"),
            score: draw_score(rng),
            label: Label::Live,
        });
    }
    for name in type_names.iter().take(n_types) {
        let n = 1 + rng.next_below(20) as usize;
        for i in 0..n {
            entries.push(ScoreEntry {
                sample_id: format!("{name}_{i}"),
                score: draw_score(rng),
                label: Label::Attack(name.to_string()),
            });
        }
    }
    assert!(entries.len() <= 100, "generator stays within the size cap");
    ScoreSet::new(entries).expect("generated scores are finite")
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty(), "median needs at least one value");
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Generates a synthetic dataset in memory: `live` genuine faces plus the two
/// texture attacks, all under one capture domain.
pub fn synth_dataset<S: Scalar>(
    seed: u64,
    image_size: usize,
    live: usize,
    print_lattice: usize,
    replay_moire: usize,
    domain: DomainSpec,
) -> Dataset<S> {
    let cfg = SynthConfig { seed, image_size, live, print_lattice, replay_moire, domain };
    let samples = generate::<S>(&cfg).expect("synthesis succeeds");
    Dataset::new(samples).expect("synthesized samples form a dataset")
}
