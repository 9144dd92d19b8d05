//! Curriculum scheduler over the program hierarchy.
//!
//! Tracks a moving-average validation reward per trainable program and a
//! maximum unlocked level, starting at 1. Programs are drawn with a softmax
//! over scores that favour poorly-performing programs; when every unlocked
//! program clears the threshold, the next level opens.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ProgramId, ProgramLibrary};

/// Score of the selection softmax. `Inverse` is `1 / max(R, eps)`; `OneMinus`
/// is `1 - R`. Both rank programs identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRule {
    Inverse,
    OneMinus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurriculumState {
    /// Moving-average validation reward per program id (level-0 entries stay 0).
    r: Vec<f64>,
    levels: Vec<u32>,
    l_max: u32,
    max_level: u32,
    beta: f64,
    tau: f64,
    delta: f64,
    /// Floor inside the inverse score.
    epsilon: f64,
    rule: ScoreRule,
}

impl CurriculumState {
    pub fn new(library: &ProgramLibrary, beta: f64, tau: f64, delta: f64, rule: ScoreRule) -> Self {
        Self {
            r: vec![0.0; library.len()],
            levels: library.programs.iter().map(|p| p.level).collect(),
            l_max: 1,
            max_level: library.max_level(),
            beta,
            tau,
            delta,
            epsilon: 0.01,
            rule,
        }
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn r(&self, program: ProgramId) -> f64 {
        self.r[program]
    }

    /// Overwrites a program's moving average. Diagnostic surface for tests;
    /// training only ever moves R through [`record_validation`].
    pub fn set_moving_average(&mut self, program: ProgramId, r: f64) {
        self.r[program] = r;
    }

    /// `R_i <- beta*R_i + (1-beta)*r` with a validation success `r` in [0,1].
    pub fn record_validation(&mut self, program: ProgramId, reward: f64) {
        debug_assert!((0.0..=1.0).contains(&reward));
        self.r[program] = self.beta * self.r[program] + (1.0 - self.beta) * reward;
    }

    /// Trainable programs unlocked by the current maximum level.
    pub fn eligible(&self) -> Vec<ProgramId> {
        (0..self.levels.len())
            .filter(|&i| self.levels[i] >= 1 && self.levels[i] <= self.l_max)
            .collect()
    }

    /// Selection distribution over eligible programs.
    pub fn probabilities(&self) -> Vec<(ProgramId, f64)> {
        let eligible = self.eligible();
        assert!(!eligible.is_empty(), "no eligible programs");
        let scores: Vec<f64> = eligible
            .iter()
            .map(|&i| match self.rule {
                ScoreRule::Inverse => 1.0 / self.r[i].max(self.epsilon),
                ScoreRule::OneMinus => 1.0 - self.r[i],
            })
            .collect();
        let probs = crate::nn::softmax(&scores, self.tau);
        eligible.into_iter().zip(probs).collect()
    }

    pub fn next_program(&self, rng: &mut ChaCha8Rng) -> ProgramId {
        let probs = self.probabilities();
        let draw: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        for (program, p) in &probs {
            acc += p;
            if draw < acc {
                return *program;
            }
        }
        probs.last().unwrap().0
    }

    /// Minimum moving average among unlocked trainable programs.
    pub fn min_eligible_r(&self) -> f64 {
        self.eligible()
            .iter()
            .map(|&i| self.r[i])
            .fold(f64::INFINITY, f64::min)
    }

    /// Unlocks the next level when every unlocked program clears the
    /// threshold; the maximum library level caps the unlock.
    pub fn maybe_advance_level(&mut self) -> bool {
        if self.l_max < self.max_level && self.min_eligible_r() > self.delta {
            self.l_max += 1;
            return true;
        }
        false
    }

    /// Training is finished when the top level is unlocked and every
    /// trainable program clears the threshold.
    pub fn done(&self) -> bool {
        self.l_max == self.max_level && self.min_eligible_r() > self.delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ProgramSpec;
    use rand::SeedableRng;

    fn lib() -> ProgramLibrary {
        ProgramLibrary::new(vec![
            ProgramSpec {
                name: "STOP".into(),
                level: 0,
                recursive: false,
            },
            ProgramSpec {
                name: "A".into(),
                level: 1,
                recursive: false,
            },
            ProgramSpec {
                name: "B".into(),
                level: 1,
                recursive: false,
            },
            ProgramSpec {
                name: "C".into(),
                level: 2,
                recursive: false,
            },
        ])
    }

    fn cur() -> CurriculumState {
        CurriculumState::new(&lib(), 0.99, 2.0, 0.97, ScoreRule::Inverse)
    }

    #[test]
    fn moving_average_hand_example() {
        let mut c = cur();
        c.r[1] = 0.5;
        c.record_validation(1, 1.0);
        assert!((c.r(1) - 0.505).abs() < 1e-12);
    }

    #[test]
    fn moving_average_fixed_point_and_contraction() {
        let mut c = cur();
        c.r[1] = 0.4;
        c.record_validation(1, 0.4);
        assert!((c.r(1) - 0.4).abs() < 1e-12);
        let mut prev = c.r(1);
        for _ in 0..200 {
            c.record_validation(1, 1.0);
            assert!(c.r(1) > prev);
            prev = c.r(1);
        }
        assert!(c.r(1) < 1.0 && c.r(1) > 0.8);
    }

    #[test]
    fn selection_probabilities_hand_example() {
        let mut c = cur();
        c.r[1] = 0.5; // score 2
        c.r[2] = 1.0; // score 1
        let probs = c.probabilities();
        assert_eq!(probs.len(), 2);
        assert!((probs[0].1 - 0.8808).abs() < 1e-4);
        assert!((probs[1].1 - 0.1192).abs() < 1e-4);
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_rewards_give_uniform_selection() {
        let mut c = cur();
        c.r[1] = 0.3;
        c.r[2] = 0.3;
        let probs = c.probabilities();
        assert!((probs[0].1 - 0.5).abs() < 1e-12);
        assert!((probs[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn locked_levels_are_excluded_and_sampling_respects_that() {
        let c = cur();
        assert_eq!(c.eligible(), vec![1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let p = c.next_program(&mut rng);
            assert!(p == 1 || p == 2);
        }
    }

    #[test]
    fn level_advance_thresholds() {
        let mut c = cur();
        c.r[1] = 0.98;
        c.r[2] = 0.5;
        assert!(!c.maybe_advance_level());
        c.r[2] = 0.98;
        assert!(c.maybe_advance_level());
        assert_eq!(c.l_max(), 2);
        // Cap at the library maximum.
        c.r[3] = 0.99;
        assert!(!c.maybe_advance_level());
        assert_eq!(c.l_max(), 2);
        assert!(c.done());
    }

    #[test]
    fn selection_pressure_decreases_with_reward() {
        let mut c = cur();
        c.r[1] = 0.1;
        c.r[2] = 0.9;
        let probs = c.probabilities();
        assert!(probs[0].1 > probs[1].1);
        // Raising a program's reward lowers its selection probability.
        let before = probs[0].1;
        c.r[1] = 0.5;
        let after = c.probabilities()[0].1;
        assert!(after < before);
    }

    #[test]
    fn one_minus_rule_is_available() {
        let mut c = CurriculumState::new(&lib(), 0.99, 2.0, 0.97, ScoreRule::OneMinus);
        c.r[1] = 0.5;
        c.r[2] = 1.0;
        let probs = c.probabilities();
        // Scores 0.5 and 0.0 with tau 2: softmax(1.0, 0.0).
        assert!((probs[0].1 - (1.0f64.exp() / (1.0f64.exp() + 1.0))).abs() < 1e-9);
    }
}
