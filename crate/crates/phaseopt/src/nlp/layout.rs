//! Flat decision-vector layout: a deterministic index map from
//! (family, leg, phase, control point, axis) to positions in the flat vector.
//!
//! Family order: force control points, foot control points, phase durations,
//! per-node orientation increments and angular velocities, then per-segment initial
//! states (proposed mode) or body position/velocity nodes (baseline mode).
//!
//! Foot variables are owned by the swing curves. The d-th stance foothold resolves
//! to the first control point of swing d (for the opening stance) or the last
//! control point of swing d-1, which also bakes in the touchdown identity
//! `gamma_{(i,0)}^d = gamma_{(i,N)}^{d-1}`. A single-stance schedule has no swing
//! curves, so it gets one standalone foothold triple per leg.

use super::ProblemMode;

#[derive(Debug, Clone)]
pub struct Layout {
    pub mode: ProblemMode,
    pub n_legs: usize,
    pub n_phase: usize,
    pub n_stance: usize,
    pub n_swing: usize,
    /// Bezier degree N of swing foot curves.
    pub deg_feet: usize,
    /// Bezier degree M of stance force curves.
    pub deg_forces: usize,
    pub n_nodes: usize,
    forces_offset: usize,
    feet_offset: usize,
    durations_offset: usize,
    orientation_offset: usize,
    states_offset: usize,
    pub n_vars: usize,
}

impl Layout {
    pub fn new(
        mode: ProblemMode,
        n_legs: usize,
        n_phase: usize,
        deg_feet: usize,
        deg_forces: usize,
        n_nodes: usize,
    ) -> Self {
        assert!(n_phase % 2 == 1, "phase count must be odd");
        let n_stance = n_phase / 2 + 1;
        let n_swing = n_phase / 2;
        let forces_offset = 0;
        let n_forces = 3 * (deg_forces + 1) * n_stance * n_legs;
        let feet_offset = forces_offset + n_forces;
        let n_feet = if n_swing == 0 {
            3 * n_legs
        } else {
            3 * (deg_feet + 1) * n_swing * n_legs
        };
        let durations_offset = feet_offset + n_feet;
        let n_durations = n_phase * n_legs;
        let orientation_offset = durations_offset + n_durations;
        let n_orientation = 6 * n_nodes;
        let states_offset = orientation_offset + n_orientation;
        let n_states = match mode {
            ProblemMode::Proposed => 6 * n_phase * n_legs,
            ProblemMode::Baseline => 6 * n_nodes,
        };
        Self {
            mode,
            n_legs,
            n_phase,
            n_stance,
            n_swing,
            deg_feet,
            deg_forces,
            n_nodes,
            forces_offset,
            feet_offset,
            durations_offset,
            orientation_offset,
            states_offset,
            n_vars: states_offset + n_states,
        }
    }

    /// Base index of force control point `k` of stance cycle `d` of `leg`.
    pub fn force_cp(&self, leg: usize, d: usize, k: usize) -> usize {
        debug_assert!(leg < self.n_legs && d < self.n_stance && k <= self.deg_forces);
        self.forces_offset + 3 * ((leg * self.n_stance + d) * (self.deg_forces + 1) + k)
    }

    /// Base index of foot control point `k` of swing cycle `d` of `leg`.
    pub fn swing_cp(&self, leg: usize, d: usize, k: usize) -> usize {
        debug_assert!(leg < self.n_legs && d < self.n_swing && k <= self.deg_feet);
        self.feet_offset + 3 * ((leg * self.n_swing + d) * (self.deg_feet + 1) + k)
    }

    /// Base index of the foothold of stance cycle `d` of `leg` (resolved through
    /// the owning swing curve).
    pub fn foothold(&self, leg: usize, d: usize) -> usize {
        debug_assert!(d < self.n_stance);
        if self.n_swing == 0 {
            self.feet_offset + 3 * leg
        } else if d == 0 {
            self.swing_cp(leg, 0, 0)
        } else {
            self.swing_cp(leg, d - 1, self.deg_feet)
        }
    }

    /// Index of the duration of phase `q` (0-based) of `leg`.
    pub fn duration(&self, leg: usize, q: usize) -> usize {
        debug_assert!(leg < self.n_legs && q < self.n_phase);
        self.durations_offset + leg * self.n_phase + q
    }

    /// Base index of the orientation tangent increment at node `k`.
    pub fn dtheta(&self, k: usize) -> usize {
        debug_assert!(k < self.n_nodes);
        self.orientation_offset + 6 * k
    }

    /// Base index of the angular velocity at node `k`.
    pub fn omega(&self, k: usize) -> usize {
        self.dtheta(k) + 3
    }

    /// Base index of segment initial position chi of segment `q` (proposed mode).
    pub fn chi(&self, leg: usize, q: usize) -> usize {
        debug_assert!(self.mode == ProblemMode::Proposed);
        debug_assert!(leg < self.n_legs && q < self.n_phase);
        self.states_offset + 6 * (leg * self.n_phase + q)
    }

    /// Base index of segment initial velocity chi-dot of segment `q` (proposed mode).
    pub fn chi_dot(&self, leg: usize, q: usize) -> usize {
        self.chi(leg, q) + 3
    }

    /// Base index of the body position node `k` (baseline mode).
    pub fn xnode(&self, k: usize) -> usize {
        debug_assert!(self.mode == ProblemMode::Baseline);
        debug_assert!(k < self.n_nodes);
        self.states_offset + 6 * k
    }

    /// Base index of the body velocity node `k` (baseline mode).
    pub fn vnode(&self, k: usize) -> usize {
        self.xnode(k) + 3
    }

    /// All flat indices belonging to `leg`'s translational families (forces, feet,
    /// durations, segment states); used for declared sparsity patterns.
    pub fn leg_block(&self, leg: usize) -> Vec<usize> {
        let mut idx = Vec::new();
        for d in 0..self.n_stance {
            for k in 0..=self.deg_forces {
                let b = self.force_cp(leg, d, k);
                idx.extend([b, b + 1, b + 2]);
            }
        }
        if self.n_swing == 0 {
            let b = self.foothold(leg, 0);
            idx.extend([b, b + 1, b + 2]);
        } else {
            for d in 0..self.n_swing {
                for k in 0..=self.deg_feet {
                    let b = self.swing_cp(leg, d, k);
                    idx.extend([b, b + 1, b + 2]);
                }
            }
        }
        for q in 0..self.n_phase {
            idx.push(self.duration(leg, q));
        }
        if self.mode == ProblemMode::Proposed {
            for q in 0..self.n_phase {
                let b = self.chi(leg, q);
                idx.extend([b, b + 1, b + 2, b + 3, b + 4, b + 5]);
            }
        }
        idx
    }

    /// Human-readable breakdown of where `n_vars` comes from.
    pub fn count_formula(&self) -> String {
        let forces = 3 * (self.deg_forces + 1) * self.n_stance * self.n_legs;
        let feet = if self.n_swing == 0 {
            3 * self.n_legs
        } else {
            3 * (self.deg_feet + 1) * self.n_swing * self.n_legs
        };
        let durations = self.n_phase * self.n_legs;
        let orientation = 6 * self.n_nodes;
        let states = match self.mode {
            ProblemMode::Proposed => 6 * self.n_phase * self.n_legs,
            ProblemMode::Baseline => 6 * self.n_nodes,
        };
        format!(
            "n_z = forces 3(M+1)*stance*legs [{forces}] + feet 3(N+1)*swing*legs [{feet}] \
             + durations n_phase*legs [{durations}] + orientation 6*n_nodes [{orientation}] \
             + states [{states}] = {}",
            forces + feet + durations + orientation + states
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_map_is_bijective() {
        let layout = Layout::new(ProblemMode::Proposed, 4, 7, 4, 4, 30);
        let mut seen = vec![false; layout.n_vars];
        let mut mark = |base: usize, len: usize| {
            for i in base..base + len {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        };
        for leg in 0..4 {
            for d in 0..layout.n_stance {
                for k in 0..=layout.deg_forces {
                    mark(layout.force_cp(leg, d, k), 3);
                }
            }
            for d in 0..layout.n_swing {
                for k in 0..=layout.deg_feet {
                    mark(layout.swing_cp(leg, d, k), 3);
                }
            }
            for q in 0..7 {
                mark(layout.duration(leg, q), 1);
            }
            for q in 0..7 {
                mark(layout.chi(leg, q), 6);
            }
        }
        for k in 0..30 {
            mark(layout.dtheta(k), 6);
        }
        assert!(seen.iter().all(|&b| b), "layout left holes");
    }

    #[test]
    fn foothold_resolves_to_swing_endpoints() {
        let layout = Layout::new(ProblemMode::Proposed, 2, 5, 3, 2, 10);
        assert_eq!(layout.foothold(0, 0), layout.swing_cp(0, 0, 0));
        assert_eq!(layout.foothold(0, 1), layout.swing_cp(0, 0, 3));
        assert_eq!(layout.foothold(0, 2), layout.swing_cp(0, 1, 3));
        assert_eq!(layout.foothold(1, 0), layout.swing_cp(1, 0, 0));
    }

    #[test]
    fn single_phase_layout_has_standalone_footholds() {
        let layout = Layout::new(ProblemMode::Proposed, 4, 1, 4, 4, 10);
        assert_eq!(layout.n_swing, 0);
        let f0 = layout.foothold(0, 0);
        let f1 = layout.foothold(1, 0);
        assert_eq!(f1 - f0, 3);
    }

    #[test]
    fn variable_count_formula() {
        // Counts by construction: forces 3(M+1)*stance*legs, feet 3(N+1)*swing*legs,
        // durations n_phase*legs, orientation 6*n_nodes, states 6*n_phase*legs.
        let layout = Layout::new(ProblemMode::Proposed, 4, 7, 4, 4, 30);
        let expected = 3 * 5 * 4 * 4 + 3 * 5 * 3 * 4 + 7 * 4 + 6 * 30 + 6 * 7 * 4;
        assert_eq!(layout.n_vars, expected);
        assert!(layout.count_formula().contains(&expected.to_string()));

        let baseline = Layout::new(ProblemMode::Baseline, 4, 7, 4, 4, 30);
        let expected_b = 3 * 5 * 4 * 4 + 3 * 5 * 3 * 4 + 7 * 4 + 6 * 30 + 6 * 30;
        assert_eq!(baseline.n_vars, expected_b);
    }
}
