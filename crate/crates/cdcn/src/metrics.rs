//! Biometric evaluation metrics over score sets. Scores are oriented so that
//! higher means live (a score is typically the mean of a predicted depth map),
//! and a sample scoring exactly at the threshold is classified live.

use crate::{Error, Result};
use serde::Serialize;

/// Ground-truth label of a scored sample. Attack types are free-form tags so
/// per-type error rates can be reported.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Live,
    Attack(String),
}

impl Label {
    /// Parses the CSV form: `live` or `attack:<type>`.
    pub fn parse(text: &str) -> Result<Label> {
        if text == "live" {
            return Ok(Label::Live);
        }
        if let Some(kind) = text.strip_prefix("attack:") {
            if kind.is_empty() {
                return Err(Error::Data("attack label is missing its type tag".to_string()));
            }
            return Ok(Label::Attack(kind.to_string()));
        }
        Err(Error::Data(format!(
            "unknown label {text:?}, expected \"live\" or \"attack:<type>\""
        )))
    }

    pub fn is_live(&self) -> bool {
        matches!(self, Label::Live)
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Live => write!(f, "live"),
            Label::Attack(kind) => write!(f, "attack:{kind}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScoreEntry {
    pub sample_id: String,
    pub score: f64,
    pub label: Label,
}

/// A labeled collection of detector scores. Construction checks that every
/// score is finite; class balance is checked by the individual metrics.
#[derive(Clone, Debug)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<ScoreSet> {
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Data(format!(
                    "score for sample {:?} is not finite: {}",
                    e.sample_id, e.score
                )));
            }
        }
        Ok(ScoreSet { entries })
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn live_scores(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.label.is_live())
            .map(|e| e.score)
            .collect()
    }

    /// All attack scores regardless of type.
    pub fn pooled_attack_scores(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| !e.label.is_live())
            .map(|e| e.score)
            .collect()
    }

    /// Sorted, de-duplicated attack type tags.
    pub fn attack_types(&self) -> Vec<String> {
        let mut kinds: Vec<String> = self
            .entries
            .iter()
            .filter_map(|e| match &e.label {
                Label::Attack(kind) => Some(kind.clone()),
                Label::Live => None,
            })
            .collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    fn require_both_classes(&self, what: &'static str) -> Result<()> {
        if !self.entries.iter().any(|e| e.label.is_live()) {
            return Err(Error::Data(format!("{what} needs at least one live sample")));
        }
        if self.entries.iter().all(|e| e.label.is_live()) {
            return Err(Error::Data(format!("{what} needs at least one attack sample")));
        }
        Ok(())
    }
}

/// Classification error rates at a fixed decision threshold.
#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    /// Per attack type: fraction of that type scoring at or above the
    /// threshold (accepted as live). Sorted by type tag.
    pub apcer_per_type: Vec<(String, f64)>,
    /// Worst per-type rate.
    pub apcer: f64,
    /// Fraction of live samples scoring below the threshold.
    pub bpcer: f64,
    /// (apcer + bpcer) / 2.
    pub acer: f64,
}

pub fn apcer_bpcer_acer(set: &ScoreSet, threshold: f64) -> Result<ThresholdReport> {
    set.require_both_classes("apcer_bpcer_acer")?;
    if !threshold.is_finite() {
        return Err(Error::Data(format!("threshold must be finite, got {threshold}")));
    }
    let mut apcer_per_type = Vec::new();
    for kind in set.attack_types() {
        let (mut total, mut accepted) = (0usize, 0usize);
        for e in &set.entries {
            if e.label == Label::Attack(kind.clone()) {
                total += 1;
                if e.score >= threshold {
                    accepted += 1;
                }
            }
        }
        apcer_per_type.push((kind, accepted as f64 / total as f64));
    }
    let apcer = apcer_per_type
        .iter()
        .map(|(_, r)| *r)
        .fold(0.0f64, f64::max);
    let live: Vec<f64> = set.live_scores();
    let rejected = live.iter().filter(|&&s| s < threshold).count();
    let bpcer = rejected as f64 / live.len() as f64;
    Ok(ThresholdReport {
        threshold,
        apcer_per_type,
        apcer,
        bpcer,
        acer: (apcer + bpcer) / 2.0,
    })
}

/// False accept rate (attacks at or above tau) and false reject rate (live
/// below tau), attack types pooled.
pub fn far_frr(live: &[f64], attacks: &[f64], tau: f64) -> (f64, f64) {
    let far = attacks.iter().filter(|&&s| s >= tau).count() as f64 / attacks.len() as f64;
    let frr = live.iter().filter(|&&s| s < tau).count() as f64 / live.len() as f64;
    (far, frr)
}

#[derive(Clone, Debug, Serialize)]
pub struct EerReport {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Equal error rate via a sweep over midpoints of adjacent distinct scores.
/// The threshold minimizing |FAR - FRR| wins; ties go to the lower threshold.
/// A set with fewer than two distinct scores has no midpoints; it is reported
/// as EER 0.5 at that score (pure chance either way).
pub fn eer(set: &ScoreSet) -> Result<EerReport> {
    set.require_both_classes("eer")?;
    let live = set.live_scores();
    let attacks = set.pooled_attack_scores();
    let mut scores: Vec<f64> = set.entries.iter().map(|e| e.score).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    scores.dedup();
    if scores.len() < 2 {
        let tau = scores[0];
        let (far, frr) = far_frr(&live, &attacks, tau);
        return Ok(EerReport { eer: 0.5, threshold: tau, far, frr });
    }
    let mut best: Option<EerReport> = None;
    for pair in scores.windows(2) {
        let tau = (pair[0] + pair[1]) / 2.0;
        let (far, frr) = far_frr(&live, &attacks, tau);
        let gap = (far - frr).abs();
        let better = match &best {
            None => true,
            Some(b) => gap < (b.far - b.frr).abs(),
        };
        if better {
            best = Some(EerReport { eer: (far + frr) / 2.0, threshold: tau, far, frr });
        }
    }
    Ok(best.expect("at least one midpoint"))
}

#[derive(Clone, Debug, Serialize)]
pub struct HterReport {
    /// Decision threshold fixed on the development set (its EER threshold).
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
}

/// Half total error rate: the threshold is fixed at the development set's EER
/// point, then FAR/FRR are measured on the test set.
pub fn hter(dev: &ScoreSet, test: &ScoreSet) -> Result<HterReport> {
    let dev_eer = eer(dev)?;
    test.require_both_classes("hter")?;
    let live = test.live_scores();
    let attacks = test.pooled_attack_scores();
    let (far, frr) = far_frr(&live, &attacks, dev_eer.threshold);
    Ok(HterReport {
        threshold: dev_eer.threshold,
        far,
        frr,
        hter: (far + frr) / 2.0,
    })
}

/// Area under the ROC curve, computed as the Mann-Whitney statistic with ties
/// counted as half: the probability a random live sample outscores a random
/// attack sample.
pub fn auc(set: &ScoreSet) -> Result<f64> {
    set.require_both_classes("auc")?;
    let mut samples: Vec<(f64, bool)> = set
        .entries
        .iter()
        .map(|e| (e.score, e.label.is_live()))
        .collect();
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let n = samples.len();
    let n_live = samples.iter().filter(|(_, live)| *live).count();
    let n_attack = n - n_live;
    // Average ranks within tied groups, then sum the live ranks.
    let mut rank_sum_live = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && samples[j].0 == samples[i].0 {
            j += 1;
        }
        // ranks are 1-based; the tied block [i, j) shares the average rank
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for s in &samples[i..j] {
            if s.1 {
                rank_sum_live += avg_rank;
            }
        }
        i = j;
    }
    let n_live_f = n_live as f64;
    Ok((rank_sum_live - n_live_f * (n_live_f + 1.0) / 2.0) / (n_live_f * n_attack as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(live: &[f64], attacks: &[(&str, f64)]) -> ScoreSet {
        let mut entries = Vec::new();
        for (i, &s) in live.iter().enumerate() {
            entries.push(ScoreEntry {
                sample_id: format!("live{i}"),
                score: s,
                label: Label::Live,
            });
        }
        for (i, (kind, s)) in attacks.iter().enumerate() {
            entries.push(ScoreEntry {
                sample_id: format!("att{i}"),
                score: *s,
                label: Label::Attack(kind.to_string()),
            });
        }
        ScoreSet::new(entries).unwrap()
    }

    #[test]
    fn label_round_trip_and_rejects() {
        assert_eq!(Label::parse("live").unwrap(), Label::Live);
        assert_eq!(
            Label::parse("attack:print").unwrap(),
            Label::Attack("print".to_string())
        );
        assert_eq!(Label::Attack("replay".to_string()).to_string(), "attack:replay");
        assert!(Label::parse("bonafide").is_err());
        assert!(Label::parse("attack:").is_err());
    }

    #[test]
    fn rejects_non_finite_scores() {
        let err = ScoreSet::new(vec![ScoreEntry {
            sample_id: "x".to_string(),
            score: f64::NAN,
            label: Label::Live,
        }])
        .unwrap_err();
        assert!(err.to_string().contains("not finite"), "got {err}");
    }

    #[test]
    fn perfectly_separated_scores() {
        let s = set(&[0.9, 0.8], &[("print", 0.1), ("print", 0.2)]);
        let r = apcer_bpcer_acer(&s, 0.5).unwrap();
        assert_eq!((r.apcer, r.bpcer, r.acer), (0.0, 0.0, 0.0));
        let e = eer(&s).unwrap();
        assert_eq!(e.eer, 0.0);
        assert_eq!(auc(&s).unwrap(), 1.0);
    }

    #[test]
    fn hand_enumerated_four_sample_case() {
        let s = set(&[0.9, 0.2], &[("A", 0.8), ("B", 0.1)]);
        let r = apcer_bpcer_acer(&s, 0.5).unwrap();
        assert_eq!(r.apcer_per_type, vec![("A".to_string(), 1.0), ("B".to_string(), 0.0)]);
        assert_eq!(r.apcer, 1.0, "worst type dominates");
        assert_eq!(r.bpcer, 0.5, "one of two live rejected");
        assert_eq!(r.acer, 0.75);
    }

    #[test]
    fn tie_at_threshold_classifies_live() {
        let s = set(&[0.5, 0.5], &[("print", 0.5)]);
        let r = apcer_bpcer_acer(&s, 0.5).unwrap();
        assert_eq!(r.apcer, 1.0, "attack at threshold is accepted");
        assert_eq!(r.bpcer, 0.0, "live at threshold is accepted");
        assert_eq!(r.acer, 0.5);
    }

    #[test]
    fn interleaved_two_plus_two_has_half_eer() {
        let s = set(&[0.6, 0.2], &[("replay", 0.7), ("replay", 0.3)]);
        let e = eer(&s).unwrap();
        assert_eq!(e.eer, 0.5);
        assert!((e.threshold - 0.45).abs() < 1e-12, "midpoint of 0.3 and 0.6");
    }

    #[test]
    fn eer_tie_breaks_toward_lower_threshold() {
        // live {0.3, 0.7}, attack {0.5}: midpoints 0.4 and 0.6 both give
        // |FAR - FRR| = 0.5, so the lower one must win.
        let s = set(&[0.3, 0.7], &[("print", 0.5)]);
        let e = eer(&s).unwrap();
        assert!((e.threshold - 0.4).abs() < 1e-12, "got {}", e.threshold);
    }

    #[test]
    fn eer_degenerate_single_score() {
        let s = set(&[0.5], &[("print", 0.5)]);
        let e = eer(&s).unwrap();
        assert_eq!(e.eer, 0.5);
        assert_eq!(e.threshold, 0.5);
    }

    #[test]
    fn hter_on_identical_sets_equals_dev_eer() {
        let s = set(&[0.6, 0.2], &[("replay", 0.7), ("replay", 0.3)]);
        let h = hter(&s, &s).unwrap();
        let e = eer(&s).unwrap();
        assert_eq!(h.hter, e.eer);
        assert_eq!(h.threshold, e.threshold);
    }

    #[test]
    fn hter_all_test_attacks_accepted() {
        let dev = set(&[0.9], &[("print", 0.1)]);
        let test = set(&[0.9], &[("print", 0.8)]);
        let h = hter(&dev, &test).unwrap();
        assert_eq!(h.far, 1.0);
        assert_eq!(h.frr, 0.0);
        assert_eq!(h.hter, 0.5);
    }

    #[test]
    fn auc_pairwise_hand_case() {
        let s = set(&[0.9, 0.2], &[("x", 0.8), ("x", 0.1)]);
        assert!((auc(&s).unwrap() - 0.75).abs() < 1e-15, "3 of 4 pairs ordered correctly");
    }

    #[test]
    fn auc_of_pure_ties_is_half() {
        let s = set(&[0.4, 0.4], &[("x", 0.4)]);
        assert_eq!(auc(&s).unwrap(), 0.5);
    }

    #[test]
    fn monotone_transform_leaves_eer_and_auc_unchanged() {
        let s = set(&[0.61, 0.23, 0.55], &[("a", 0.7), ("b", 0.31), ("a", 0.5)]);
        let mapped = ScoreSet::new(
            s.entries()
                .iter()
                .map(|e| ScoreEntry {
                    sample_id: e.sample_id.clone(),
                    score: (3.0 * e.score + 1.0).tanh(),
                    label: e.label.clone(),
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(eer(&s).unwrap().eer, eer(&mapped).unwrap().eer);
        assert!((auc(&s).unwrap() - auc(&mapped).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn raising_threshold_is_monotone() {
        let s = set(&[0.8, 0.4, 0.6], &[("p", 0.3), ("p", 0.55), ("q", 0.7)]);
        let taus = [0.0, 0.2, 0.35, 0.5, 0.65, 0.9];
        let reports: Vec<_> = taus
            .iter()
            .map(|&t| apcer_bpcer_acer(&s, t).unwrap())
            .collect();
        for w in reports.windows(2) {
            assert!(w[1].bpcer >= w[0].bpcer, "BPCER never decreases");
            for (a, b) in w[0].apcer_per_type.iter().zip(&w[1].apcer_per_type) {
                assert!(b.1 <= a.1, "APCER_{} never increases", a.0);
            }
        }
    }

    #[test]
    fn empty_class_errors() {
        let only_live = set(&[0.5], &[]);
        let only_attack = set(&[], &[("p", 0.5)]);
        for s in [&only_live, &only_attack] {
            assert!(apcer_bpcer_acer(s, 0.5).is_err());
            assert!(eer(s).is_err());
            assert!(auc(s).is_err());
        }
        let ok = set(&[0.5], &[("p", 0.4)]);
        assert!(hter(&only_live, &ok).is_err(), "dev set must be valid");
        assert!(hter(&ok, &only_attack).is_err(), "test set must be valid");
    }
}
