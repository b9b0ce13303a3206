use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Classification {
    TP,
    TN,
    FP,
    FN,
    Other,
}

/// Why a trial fell outside the four outcome classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtherReason {
    NoAttack,
    /// Neither damage nor detection within the horizon.
    Undecided,
    /// Detected and warned, but damage never followed.
    DetectedWarnedNoDamage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub classification: Classification,
    pub other_reason: Option<OtherReason>,
    pub warning_step: Option<usize>,
    pub detection_step: Option<usize>,
    pub damage_step: Option<usize>,
    pub seed: u64,
}

/// Per-step facts of one simulated trial. `k_f[k]` is the first violating
/// offset found at step `k` by a check with horizon at least every `K`
/// classified, so the step warns at horizon `K` iff `k_f[k] ≤ K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTimeline {
    pub seed: u64,
    pub attack_present: bool,
    pub k_f: Vec<Option<usize>>,
    pub detection_step: Option<usize>,
    pub damage_step: Option<usize>,
}

impl TrialTimeline {
    pub fn len(&self) -> usize {
        self.k_f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_f.is_empty()
    }

    fn warns(&self, k: usize, horizon: usize) -> bool {
        self.k_f[k].is_some_and(|f| f <= horizon)
    }

    pub fn first_warning(&self, horizon: usize) -> Option<usize> {
        (0..self.len()).find(|&k| self.warns(k, horizon))
    }
}

/// Outcome of a trial at prediction horizon `K`.
///
/// The reference step is the damage step, or the end of the trace without
/// damage. A warning counts when it lies in `[ref − K, min(ref, detection))`.
pub fn classify_trial(t: &TrialTimeline, horizon: usize) -> Result<TrialOutcome> {
    let len = t.len();
    if len == 0 {
        return Err(Error::Classification(format!("trial {} has no ground truth", t.seed)));
    }
    for (what, step) in [("damage", t.damage_step), ("detection", t.detection_step)] {
        if let Some(s) = step.filter(|&s| s >= len) {
            return Err(Error::Classification(format!(
                "trial {}: {what} step {s} beyond the {len}-step trace",
                t.seed
            )));
        }
    }
    let reference = t.damage_step.unwrap_or(len);
    let until = t.detection_step.map_or(reference, |d| d.min(reference));
    let warned = (reference.saturating_sub(horizon)..until).any(|k| t.warns(k, horizon));

    let (classification, other_reason) = if !t.attack_present {
        (Classification::Other, Some(OtherReason::NoAttack))
    } else {
        let detected_first = |damaged: bool| match (warned, damaged) {
            (false, _) => (Classification::TN, None),
            (true, true) => (Classification::FP, None),
            (true, false) => (Classification::Other, Some(OtherReason::DetectedWarnedNoDamage)),
        };
        match (t.damage_step, t.detection_step) {
            (Some(dmg), Some(det)) if det <= dmg => detected_first(true),
            (Some(_), _) => (if warned { Classification::TP } else { Classification::FN }, None),
            (None, Some(_)) => detected_first(false),
            (None, None) => (Classification::Other, Some(OtherReason::Undecided)),
        }
    };
    Ok(TrialOutcome {
        classification,
        other_reason,
        warning_step: t.first_warning(horizon),
        detection_step: t.detection_step,
        damage_step: t.damage_step,
        seed: t.seed,
    })
}
