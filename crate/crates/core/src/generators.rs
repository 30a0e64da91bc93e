//! Self-contained benchmark trace logs: the mountain-car dynamics driven by
//! small scripted policy families over seeded initial conditions.
//!
//! The update order follows the structural equations literally: the new
//! position uses the previous velocity, and the new velocity uses the
//! previous position for the gravity term. Both results are clamped to the
//! domain bounds. `cos` is evaluated in radians.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::signature::{Signature, VariableDecl, VarKind};
use crate::trace::{State, Trace, TraceLog};
use crate::value::{Token, Value};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("trace count must be at least 1")]
    NoTraces,
    #[error("policy family is empty")]
    NoPolicies,
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("goal {goal} lies outside the position bounds [{lo}, {hi}]")]
    GoalOutOfBounds { goal: f64, lo: f64, hi: f64 },
}

/// Physical and episode parameters of the mountain-car benchmark.
#[derive(Debug, Clone)]
pub struct MountainCarParams<S: Scalar> {
    pub gravity: S,
    pub horizon: usize,
    pub goal_pos: S,
    pub pos_lo: S,
    pub pos_hi: S,
    pub vel_lo: S,
    pub vel_hi: S,
}

impl<S: Scalar> MountainCarParams<S> {
    /// The standard setup: gravity 0.0025, horizon 100, goal at 0.6,
    /// position in [-1.2, 0.6], velocity in [-0.07, 0.07].
    pub fn standard() -> Self {
        MountainCarParams {
            gravity: S::from_f64_lossy(0.0025),
            horizon: 100,
            goal_pos: S::from_f64_lossy(0.6),
            pos_lo: S::from_f64_lossy(-1.2),
            pos_hi: S::from_f64_lossy(0.6),
            vel_lo: S::from_f64_lossy(-0.07),
            vel_hi: S::from_f64_lossy(0.07),
        }
    }

    fn validate(&self) -> Result<(), GenerateError> {
        if self.horizon < 1 {
            return Err(GenerateError::BadHorizon);
        }
        if !(self.goal_pos >= self.pos_lo && self.goal_pos <= self.pos_hi) {
            return Err(GenerateError::GoalOutOfBounds {
                goal: self.goal_pos.to_f64().unwrap_or(f64::NAN),
                lo: self.pos_lo.to_f64().unwrap_or(f64::NAN),
                hi: self.pos_hi.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }
}

/// A deterministic scripted controller: a rule from (pos, vel, step) to an
/// action in {-1, 0, 1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy<S: Scalar> {
    AlwaysRight,
    AlwaysLeft,
    Coast,
    /// Accelerate with the sign of the velocity (ties push right).
    BangBang,
    /// Accelerate right when the velocity is at least the threshold,
    /// otherwise left.
    VelocityThreshold(S),
}

impl<S: Scalar> Policy<S> {
    pub fn action(&self, _pos: S, vel: S, _step: usize) -> i64 {
        match self {
            Policy::AlwaysRight => 1,
            Policy::AlwaysLeft => -1,
            Policy::Coast => 0,
            Policy::BangBang => {
                if vel >= S::zero() {
                    1
                } else {
                    -1
                }
            }
            Policy::VelocityThreshold(t) => {
                if vel >= *t {
                    1
                } else {
                    -1
                }
            }
        }
    }
}

/// The mixed family used for benchmark generation: both doomed and capable
/// controllers, so generated logs contain failures with counterfactual
/// successes.
pub fn default_policy_family<S: Scalar>() -> Vec<Policy<S>> {
    vec![
        Policy::AlwaysRight,
        Policy::AlwaysLeft,
        Policy::Coast,
        Policy::BangBang,
        Policy::VelocityThreshold(S::from_f64_lossy(0.005)),
        Policy::VelocityThreshold(S::from_f64_lossy(-0.005)),
        Policy::VelocityThreshold(S::from_f64_lossy(0.015)),
        Policy::VelocityThreshold(S::from_f64_lossy(-0.015)),
    ]
}

/// One dynamics step. The new position uses the previous velocity; the new
/// velocity uses the previous position. Both are clamped to the bounds.
pub fn mountain_car_step<S: Scalar>(pos: S, vel: S, action: i64, p: &MountainCarParams<S>) -> (S, S) {
    let force = S::from_f64_lossy(0.001);
    let three = S::from_f64_lossy(3.0);
    let new_pos = (pos + vel).max(p.pos_lo).min(p.pos_hi);
    let accel = force * S::from_i64(action).expect("action fits scalar");
    let new_vel = (vel + accel - p.gravity * (three * pos).cos())
        .max(p.vel_lo)
        .min(p.vel_hi);
    (new_pos, new_vel)
}

/// Run one episode: record (pos, vel, action) per step, stopping at the first
/// state at or past the goal or after `horizon` steps. The action recorded in
/// the final state is the policy's choice there, even though it is never
/// applied.
pub fn simulate<S: Scalar>(
    policy: Policy<S>,
    init: (S, S),
    p: &MountainCarParams<S>,
) -> Vec<(S, S, i64)> {
    let (mut pos, mut vel) = init;
    let mut rows = Vec::new();
    for step in 0..=p.horizon {
        let action = policy.action(pos, vel, step);
        rows.push((pos, vel, action));
        if pos >= p.goal_pos || step == p.horizon {
            break;
        }
        let (np, nv) = mountain_car_step(pos, vel, action, p);
        pos = np;
        vel = nv;
    }
    rows
}

/// The signature shared by all generated mountain-car logs.
pub fn mountain_car_signature<S: Scalar>() -> Signature<S> {
    Signature::new(
        vec![
            VariableDecl::continuous("pos", VarKind::Endogenous, -1.2, 0.6),
            VariableDecl::continuous("vel", VarKind::Endogenous, -0.07, 0.07),
            VariableDecl::discrete_ints("action", VarKind::Endogenous, &[-1, 0, 1]),
            VariableDecl::continuous("pos0", VarKind::Exogenous, -1.2, 0.6),
            VariableDecl::continuous("vel0", VarKind::Exogenous, -0.07, 0.07),
            VariableDecl::continuous("g", VarKind::Exogenous, 0.0, 0.01),
        ],
        vec![
            ("action".into(), "vel".into()),
            ("vel".into(), "pos".into()),
            ("pos".into(), "vel".into()),
        ],
    )
    .expect("mountain-car signature is valid")
}

/// Generation outcome counters.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSummary {
    pub traces: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Set when the family produced a single outcome across the whole log.
    pub warning: Option<String>,
}

fn uniform<S: Scalar>(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> S {
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    S::from_f64_lossy(lo + u * (hi - lo))
}

/// Generate `n_traces` episodes: seeded initial conditions crossed with the
/// policy family, context-major order (all policies of one initial condition
/// before the next). Initial positions are drawn from the low-energy part of
/// the valley so the family produces a failure-heavy mix of outcomes.
pub fn generate_log<S: Scalar>(
    n_traces: usize,
    seed: u64,
    p: &MountainCarParams<S>,
    family: &[Policy<S>],
) -> Result<(TraceLog<S>, GenerationSummary), GenerateError> {
    if n_traces < 1 {
        return Err(GenerateError::NoTraces);
    }
    if family.is_empty() {
        return Err(GenerateError::NoPolicies);
    }
    p.validate()?;
    let sig = mountain_car_signature::<S>();
    let gravity = p.gravity;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::with_capacity(n_traces);
    let mut successes = 0usize;
    'outer: loop {
        let pos0: S = uniform(&mut rng, -0.8, 0.0);
        let vel0: S = uniform(&mut rng, -0.02, 0.02);
        for policy in family {
            if traces.len() == n_traces {
                break 'outer;
            }
            let rows = simulate(*policy, (pos0, vel0), p);
            if rows.last().map(|(pos, _, _)| *pos >= p.goal_pos).unwrap_or(false) {
                successes += 1;
            }
            let states = rows
                .into_iter()
                .map(|(pos, vel, action)| {
                    State::new(vec![
                        Value::Continuous(pos),
                        Value::Continuous(vel),
                        Value::Discrete(Token::Int(action)),
                        Value::Continuous(pos0),
                        Value::Continuous(vel0),
                        Value::Continuous(gravity),
                    ])
                })
                .collect();
            traces.push(Trace::new(format!("t{:05}", traces.len()), states));
        }
    }
    let log = TraceLog::new(sig, traces).expect("generated log is valid");
    let warning = if successes == 0 {
        Some("policy family produced no successful trace".to_string())
    } else if successes == n_traces {
        Some("policy family produced no failing trace".to_string())
    } else {
        None
    };
    let summary = GenerationSummary {
        traces: n_traces,
        successes,
        success_rate: successes as f64 / n_traces as f64,
        warning,
    };
    Ok((log, summary))
}
