//! Deterministic simulated model driven by a position-bias profile.
//!
//! The simulator stands in for a chat endpoint at desk scale: every response
//! is a pure function of (run seed, trial id), so whole runs replay
//! byte-identically on any platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{derive_rng, unit_f64};
use crate::ingest::ProbeItem;

/// Parameters of the simulated model.
///
/// `hit_rate[i]` is the chance of answering correctly when the important
/// content (correct option, key-frame block, or relevant image) sits at
/// position i+1. On a miss the pick is drawn from `fallback` renormalized
/// over the incorrect labels. For swap audits both vectors have length M;
/// placement experiments may use a hit_rate vector sized to the number of
/// placements instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub hit_rate: Vec<f64>,
    pub fallback: Vec<f64>,
}

impl BiasProfile {
    /// Option count the profile was written for.
    pub fn m(&self) -> usize {
        self.hit_rate.len()
    }

    pub fn uniform_fallback(hit_rate: Vec<f64>) -> Self {
        let m = hit_rate.len();
        BiasProfile {
            hit_rate,
            fallback: vec![1.0 / m as f64; m],
        }
    }

    pub fn perfect(m: usize) -> Self {
        Self::uniform_fallback(vec![1.0; m])
    }

    /// Always picks the first position: hits when the correct content is
    /// first, otherwise falls back to position one.
    pub fn always_pick_first(m: usize) -> Self {
        let mut hit = vec![0.0; m];
        hit[0] = 1.0;
        let mut fallback = vec![0.0; m];
        fallback[0] = 1.0;
        BiasProfile {
            hit_rate: hit,
            fallback,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hit_rate.is_empty() {
            return Err(Error::Config("empty hit_rate".into()));
        }
        if self
            .hit_rate
            .iter()
            .any(|p| !p.is_finite() || !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config("hit_rate entries must lie in [0, 1]".into()));
        }
        if self.fallback.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("fallback entries must be >= 0".into()));
        }
        let total: f64 = self.fallback.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "fallback must sum to 1, got {total}"
            )));
        }
        Ok(())
    }

    /// Draw the simulated pick for one trial.
    ///
    /// `bias_position` is the 1-based position of the important content;
    /// `correct` is the 0-based index of the correct label. The same
    /// (seed, trial_id) always yields the same label.
    pub fn respond(
        &self,
        trial_id: &str,
        bias_position: usize,
        labels: &[String],
        correct: usize,
        run_seed: u64,
    ) -> String {
        assert!(
            bias_position >= 1 && bias_position <= self.hit_rate.len(),
            "bias position {bias_position} outside profile of length {}",
            self.hit_rate.len()
        );
        assert!(correct < labels.len());
        let mut rng = derive_rng(run_seed, &format!("sim:{trial_id}"));
        let u = unit_f64(&mut rng);
        if u < self.hit_rate[bias_position - 1] {
            return labels[correct].clone();
        }
        // Miss: draw from the fallback restricted to incorrect labels. When
        // the restricted mass is zero (all fallback weight on the correct
        // label) fall back to uniform over the incorrect ones.
        let weight = |i: usize| -> f64 {
            if labels.len() == self.fallback.len() {
                self.fallback[i]
            } else {
                1.0
            }
        };
        let total: f64 = (0..labels.len())
            .filter(|&i| i != correct)
            .map(weight)
            .sum();
        let mut v = if total > 0.0 {
            unit_f64(&mut rng) * total
        } else {
            unit_f64(&mut rng) * (labels.len() - 1) as f64
        };
        for i in (0..labels.len()).filter(|&i| i != correct) {
            let w = if total > 0.0 { weight(i) } else { 1.0 };
            if v < w {
                return labels[i].clone();
            }
            v -= w;
        }
        // Floating point slop on the final bucket.
        labels[(0..labels.len()).rev().find(|&i| i != correct).unwrap()].clone()
    }
}

/// Simulate a raw response for a swap-audit variant.
///
/// Precondition: the profile's option count equals the variant's slot count.
pub fn simulate_response(variant: &ProbeItem, profile: &BiasProfile, run_seed: u64) -> String {
    assert_eq!(
        profile.m(),
        variant.option_count(),
        "profile sized for M={} but variant {} has {} slots",
        profile.m(),
        variant.id,
        variant.option_count()
    );
    let labels: Vec<String> = variant.slots.iter().map(|s| s.label.clone()).collect();
    profile.respond(
        &variant.id,
        variant.correct_index,
        &labels,
        variant.correct_index - 1,
        run_seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::option_labels;
    use crate::ingest::testutil::text_item;

    #[test]
    fn perfect_profile_always_correct() {
        let profile = BiasProfile::perfect(4);
        for correct in 1..=4 {
            let item = text_item("q", 4, correct);
            let out = simulate_response(&item, &profile, 1);
            assert_eq!(out, item.correct_label());
        }
    }

    #[test]
    fn same_seed_and_id_same_label() {
        let profile = BiasProfile::uniform_fallback(vec![0.5; 4]);
        let item = text_item("q", 4, 2);
        let a = simulate_response(&item, &profile, 9);
        let b = simulate_response(&item, &profile, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_hit_rate_never_correct_and_uniform_on_misses() {
        // Chi-square check of the fallback distribution over >= 1e5 draws.
        let profile = BiasProfile::uniform_fallback(vec![0.0; 4]);
        let labels = option_labels(4);
        let n = 120_000usize;
        let mut counts = [0u64; 4];
        for t in 0..n {
            let pick = profile.respond(&format!("t{t}"), 2, &labels, 1, 77);
            assert_ne!(pick, "B", "zero hit rate produced a correct answer");
            let idx = labels.iter().position(|l| *l == pick).unwrap();
            counts[idx] += 1;
        }
        assert_eq!(counts[1], 0);
        // Uniform over the three incorrect positions: chi-square with 2
        // degrees of freedom; 13.8 is the 0.1% critical value.
        let expected = n as f64 / 3.0;
        let chi2: f64 = [0, 2, 3]
            .iter()
            .map(|&i| {
                let d = counts[i] as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 13.8, "chi-square {chi2} too large: {counts:?}");
    }

    #[test]
    fn hit_rate_convergence_within_3_sigma() {
        let hit = vec![0.9, 0.2, 0.2, 0.9];
        let profile = BiasProfile::uniform_fallback(hit.clone());
        let labels = option_labels(4);
        let n = 20_000usize;
        for (pos, &p) in hit.iter().enumerate() {
            let mut correct = 0u64;
            for t in 0..n {
                let pick = profile.respond(&format!("p{pos}t{t}"), pos + 1, &labels, pos, 5);
                if pick == labels[pos] {
                    correct += 1;
                }
            }
            let observed = correct as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (observed - p).abs() <= 3.0 * sigma.max(1e-9),
                "position {} observed {observed} expected {p}",
                pos + 1
            );
        }
    }

    #[test]
    fn always_pick_first_profile() {
        let profile = BiasProfile::always_pick_first(4);
        let labels = option_labels(4);
        for pos in 1..=4 {
            for t in 0..50 {
                let pick = profile.respond(&format!("x{t}"), pos, &labels, pos - 1, 3);
                assert_eq!(pick, "A");
            }
        }
    }

    #[test]
    fn validate_catches_bad_profiles() {
        assert!(BiasProfile {
            hit_rate: vec![1.2],
            fallback: vec![1.0]
        }
        .validate()
        .is_err());
        assert!(BiasProfile {
            hit_rate: vec![0.5, 0.5],
            fallback: vec![0.7, 0.7]
        }
        .validate()
        .is_err());
        assert!(BiasProfile::uniform_fallback(vec![0.3; 4]).validate().is_ok());
    }
}
