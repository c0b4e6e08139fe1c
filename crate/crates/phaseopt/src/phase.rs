//! Per-leg phase schedules: cumulative boundaries, stance/swing classification and
//! phase-normalized time.
//!
//! Every leg alternates stance and swing and both begins and ends in stance, so the
//! per-leg phase count is odd. Intervals are half-open `[sigma_{q-1}, sigma_q)`, with
//! the right end closed only at the final time, so each query time is claimed by
//! exactly one phase.

use thiserror::Error;

/// Durations below this are treated as degenerate; the optimizer keeps phase
/// durations above it with an inequality constraint.
pub const DEFAULT_MIN_PHASE_DURATION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("phase count must be odd, got {0}")]
    EvenPhaseCount(usize),
    #[error("leg {leg}: expected {expected} phases, got {got}")]
    InconsistentPhaseCount { leg: usize, expected: usize, got: usize },
    #[error("leg {leg}, phase {phase}: non-positive duration {duration}")]
    NonPositiveDuration { leg: usize, phase: usize, duration: f64 },
    #[error("leg index {0} out of range")]
    LegOutOfRange(usize),
    #[error("time {t} outside horizon [0, {total}]")]
    TimeOutOfHorizon { t: f64, total: f64 },
    #[error("schedule must have at least one leg")]
    NoLegs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Stance,
    Swing,
}

/// Location of a query time within a leg's schedule.
#[derive(Debug, Clone, Copy)]
pub struct PhaseLocator {
    pub leg: usize,
    /// 1-based phase index q.
    pub phase_index: usize,
    pub kind: PhaseKind,
    /// 1-based stance/swing cycle counter d.
    pub cycle: usize,
    /// Normalized time within the phase, in [0, 1); exactly 1 at the horizon end.
    pub s: f64,
}

/// Alternating stance/swing durations for every leg.
#[derive(Debug, Clone)]
pub struct PhaseSchedule {
    durations: Vec<Vec<f64>>,
    n_phase: usize,
    total: f64,
}

impl PhaseSchedule {
    /// Build a schedule from per-leg duration lists. All legs must share an odd
    /// phase count and all durations must be positive. Mismatch between the sum of
    /// durations and `total` is not repaired here; it is reported by
    /// [`PhaseSchedule::duration_residual`].
    pub fn new(durations: Vec<Vec<f64>>, total: f64) -> Result<Self, PhaseError> {
        let n_phase = durations.first().ok_or(PhaseError::NoLegs)?.len();
        if n_phase % 2 == 0 {
            return Err(PhaseError::EvenPhaseCount(n_phase));
        }
        for (leg, d) in durations.iter().enumerate() {
            if d.len() != n_phase {
                return Err(PhaseError::InconsistentPhaseCount {
                    leg,
                    expected: n_phase,
                    got: d.len(),
                });
            }
            for (phase, &dt) in d.iter().enumerate() {
                if !(dt > 0.0) {
                    return Err(PhaseError::NonPositiveDuration { leg, phase, duration: dt });
                }
            }
        }
        Ok(Self { durations, n_phase, total })
    }

    pub fn n_legs(&self) -> usize {
        self.durations.len()
    }

    pub fn n_phase(&self) -> usize {
        self.n_phase
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn durations(&self, leg: usize) -> &[f64] {
        &self.durations[leg]
    }

    /// Residual of the per-leg duration-sum constraint, `sum_q dT - total`.
    pub fn duration_residual(&self, leg: usize) -> f64 {
        self.durations[leg].iter().sum::<f64>() - self.total
    }

    /// Cumulative phase boundaries `sigma_l = sum_{q<=l} dT_q` for one leg.
    pub fn cumulative_times(&self, leg: usize) -> Result<Vec<f64>, PhaseError> {
        let d = self
            .durations
            .get(leg)
            .ok_or(PhaseError::LegOutOfRange(leg))?;
        let mut acc = 0.0;
        Ok(d.iter()
            .map(|dt| {
                acc += dt;
                acc
            })
            .collect())
    }

    /// Locate the phase containing `t`. Intervals are half-open on the right; the
    /// horizon end maps to the final stance phase with `s` clamped to 1.
    pub fn locate(&self, leg: usize, t: f64) -> Result<PhaseLocator, PhaseError> {
        if leg >= self.durations.len() {
            return Err(PhaseError::LegOutOfRange(leg));
        }
        let leg_total: f64 = self.durations[leg].iter().sum();
        let end = self.total.max(leg_total);
        if !(0.0..=end).contains(&t) || !t.is_finite() {
            return Err(PhaseError::TimeOutOfHorizon { t, total: end });
        }
        let d = &self.durations[leg];
        let mut start = 0.0;
        for (q0, &dt) in d.iter().enumerate() {
            let stop = start + dt;
            if t < stop || q0 + 1 == d.len() {
                let s = ((t - start) / dt).min(1.0);
                return Ok(PhaseLocator {
                    leg,
                    phase_index: q0 + 1,
                    kind: if q0 % 2 == 0 { PhaseKind::Stance } else { PhaseKind::Swing },
                    cycle: q0 / 2 + 1,
                    s,
                });
            }
            start = stop;
        }
        unreachable!("final phase claims the horizon end");
    }

    /// True iff the leg is in stance at `t`.
    pub fn in_contact(&self, leg: usize, t: f64) -> Result<bool, PhaseError> {
        Ok(self.locate(leg, t)?.kind == PhaseKind::Stance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform_schedule() -> PhaseSchedule {
        PhaseSchedule::new(vec![vec![0.5; 7]; 2], 3.5).unwrap()
    }

    #[test]
    fn cumulative_running_sum() {
        let s = PhaseSchedule::new(vec![vec![0.5, 0.5, 0.5]], 1.5).unwrap();
        assert_eq!(s.cumulative_times(0).unwrap(), vec![0.5, 1.0, 1.5]);
    }

    #[test]
    fn cumulative_single_phase() {
        let s = PhaseSchedule::new(vec![vec![3.0]], 3.0).unwrap();
        assert_eq!(s.cumulative_times(0).unwrap(), vec![3.0]);
    }

    #[test]
    fn cumulative_by_hand() {
        let s = PhaseSchedule::new(vec![vec![0.3, 0.7, 0.5, 0.5, 1.0]], 3.0).unwrap();
        let sigma = s.cumulative_times(0).unwrap();
        let expected = [0.3, 1.0, 1.5, 2.0, 3.0];
        for (a, b) in sigma.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(sigma.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn locate_first_stance() {
        let s = uniform_schedule();
        let loc = s.locate(0, 0.25).unwrap();
        assert_eq!(loc.phase_index, 1);
        assert_eq!(loc.kind, PhaseKind::Stance);
        assert_eq!(loc.cycle, 1);
        assert!((loc.s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn locate_first_swing() {
        let s = uniform_schedule();
        let loc = s.locate(0, 0.75).unwrap();
        assert_eq!(loc.phase_index, 2);
        assert_eq!(loc.kind, PhaseKind::Swing);
        assert_eq!(loc.cycle, 1);
        assert!((loc.s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn locate_horizon_end_is_final_stance() {
        let s = uniform_schedule();
        let loc = s.locate(1, 3.5).unwrap();
        assert_eq!(loc.phase_index, 7);
        assert_eq!(loc.kind, PhaseKind::Stance);
        assert!((loc.s - 1.0).abs() < 1e-15);
        assert!(s.in_contact(1, 3.5).unwrap());
    }

    #[test]
    fn locate_rejects_outside_horizon() {
        let s = uniform_schedule();
        assert!(s.locate(0, -0.1).is_err());
        assert!(s.locate(0, 3.6).is_err());
    }

    #[test]
    fn contact_flags() {
        let s = uniform_schedule();
        assert!(s.in_contact(0, 0.1).unwrap());
        assert!(!s.in_contact(0, 0.6).unwrap());
    }

    #[test]
    fn locator_reconstructs_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d: Vec<f64> = (0..7).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = d.iter().sum();
        let s = PhaseSchedule::new(vec![d.clone()], total).unwrap();
        let sigma = s.cumulative_times(0).unwrap();
        for _ in 0..1000 {
            let t = rng.random_range(0.0..total);
            let loc = s.locate(0, t).unwrap();
            let start = if loc.phase_index == 1 { 0.0 } else { sigma[loc.phase_index - 2] };
            let reconstructed = start + loc.s * d[loc.phase_index - 1];
            assert!((reconstructed - t).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_each_time_claimed_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let d: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = d.iter().sum();
        let s = PhaseSchedule::new(vec![d], total).unwrap();
        let sigma = s.cumulative_times(0).unwrap();
        for _ in 0..1000 {
            let t = rng.random_range(0.0..total);
            let mut claims = 0;
            let mut start = 0.0;
            for &stop in &sigma {
                if t >= start && t < stop {
                    claims += 1;
                }
                start = stop;
            }
            assert_eq!(claims, 1);
            s.locate(0, t).unwrap();
        }
    }

    #[test]
    fn residual_reported_not_repaired() {
        let s = PhaseSchedule::new(vec![vec![0.5, 0.5, 0.6]], 1.5).unwrap();
        assert!((s.duration_residual(0) - 0.1).abs() < 1e-12);
        assert_eq!(s.durations(0), &[0.5, 0.5, 0.6]);
    }

    #[test]
    fn rejects_even_phase_count_and_bad_durations() {
        assert!(PhaseSchedule::new(vec![vec![0.5, 0.5]], 1.0).is_err());
        assert!(PhaseSchedule::new(vec![vec![0.5, -0.1, 0.5]], 1.0).is_err());
        assert!(PhaseSchedule::new(vec![vec![0.5; 3], vec![0.5; 5]], 1.5).is_err());
    }
}
