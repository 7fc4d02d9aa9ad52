use crate::controller::ControllerSample;
use crate::state::ParticleState;

/// Per-substep metadata recorded during the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMeta {
    /// Absolute substep index.
    pub step: usize,
    pub controllers: Vec<ControllerSample>,
    /// Grid nodes whose velocity a controller overwrote.
    pub dirichlet_nodes: Vec<u32>,
}

/// Forward states kept for the reverse pass. With stride 1 every substep
/// state is stored, including the final one.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTape {
    /// Absolute substep of the first state.
    pub start: usize,
    pub steps: usize,
    pub stride: usize,
    pub dt: f64,
    /// `(substep relative to start, state before that substep)`.
    pub checkpoints: Vec<(usize, ParticleState)>,
    pub meta: Vec<StepMeta>,
}

impl RolloutTape {
    pub fn new(start: usize, steps: usize, stride: usize, dt: f64) -> Self {
        RolloutTape {
            start,
            steps,
            stride: stride.max(1),
            dt,
            checkpoints: Vec::new(),
            meta: Vec::with_capacity(steps),
        }
    }

    pub fn push_checkpoint(&mut self, k: usize, state: ParticleState) {
        debug_assert!(self.checkpoints.last().is_none_or(|(j, _)| *j < k));
        self.checkpoints.push((k, state));
    }

    /// Latest checkpoint at or before relative substep `k`.
    pub fn checkpoint_at_or_before(&self, k: usize) -> Option<&(usize, ParticleState)> {
        let i = self.checkpoints.partition_point(|(j, _)| *j <= k);
        i.checked_sub(1).map(|i| &self.checkpoints[i])
    }
}
