//! Heritable inner loop: `k` fast steps from the outer point, then a partial move of the
//! outer point toward where the fast steps ended.

use nalgebra::DVector;

use crate::error::{FmbError, Result};
use crate::objectives::Objective;
use crate::optim::{optimizer_rng, OptimizerSpec, OptimizerState};

#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadTrace {
    /// Outer iterates, starting with the initial point.
    pub outer: Vec<DVector<f64>>,
    /// Inner iterates of each round, after every fast step.
    pub inner: Vec<Vec<DVector<f64>>>,
}

/// Fast-step auxiliary state (momentum, curvature estimates) carries across rounds; only
/// the parameter is reset to the outer point. With `alpha = 1` the run is the inner
/// optimizer's own trajectory.
pub fn lookahead_meta(
    obj: &dyn Objective,
    inner: &OptimizerSpec,
    k: usize,
    alpha: f64,
    outer_steps: usize,
    theta0: DVector<f64>,
    seed: u64,
) -> Result<LookaheadTrace> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(FmbError::InvalidInput(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if k == 0 {
        return Err(FmbError::InvalidInput("inner_steps must be at least 1".into()));
    }
    let mut rng = optimizer_rng(seed);
    let mut state = OptimizerState::new(theta0.clone(), seed);
    let mut trace = LookaheadTrace { outer: vec![theta0], inner: Vec::with_capacity(outer_steps) };
    for _ in 0..outer_steps {
        let anchor = state.theta.clone();
        let mut round = Vec::with_capacity(k);
        for _ in 0..k {
            state = inner.step(obj, &state, &mut rng)?.0;
            round.push(state.theta.clone());
        }
        if alpha < 1.0 {
            state.theta = &anchor + (&state.theta - &anchor) * alpha;
        }
        trace.outer.push(state.theta.clone());
        trace.inner.push(round);
    }
    Ok(trace)
}
