//! The search driver: enumerates cause candidates, discharges the
//! existential conditions on an under-approximation, the universal condition
//! on an over-approximation with counterexample-guided refinement, and
//! confirms every reported cause on the full concrete log before returning
//! it.
//!
//! Four modes select the trace universe and the query backend:
//! `direct_full` and `backend_full` run all three conditions on the concrete
//! log; `direct_abs` and `backend_abs` run the refinement algorithm. The
//! `direct` backends search the trace set with early exits; the `backend`
//! ones evaluate the same queries by materializing per-trace satisfaction
//! tables and combining them. Both must answer identically, which the tests
//! enforce.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{
    over_approximate_with, under_approximate, AbstractAc2b, AbstractionError,
};
use crate::formula::{CausalFormula, EvalError};
use crate::hp::{
    ac1_satisfied, ac2b_qualifies, check_ac2a_with, check_ac2b_with, trace_equiv_idx,
    Ac2bOutcome, CandidateStream, CauseCandidate, CheckOpts, EffectIndex, PartitionError,
};
use crate::scalar::Scalar;
use crate::trace::TraceLog;
use crate::value::Value;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

/// Execution mode: trace universe (full vs. abstraction-refinement) crossed
/// with query backend (direct search vs. table evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    DirectFull,
    DirectAbs,
    BackendFull,
    BackendAbs,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::DirectFull, Mode::DirectAbs, Mode::BackendFull, Mode::BackendAbs];

    pub fn uses_abstraction(self) -> bool {
        matches!(self, Mode::DirectAbs | Mode::BackendAbs)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::DirectFull => "direct_full",
            Mode::DirectAbs => "direct_abs",
            Mode::BackendFull => "backend_full",
            Mode::BackendAbs => "backend_abs",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct_full" => Ok(Mode::DirectFull),
            "direct_abs" => Ok(Mode::DirectAbs),
            "backend_full" => Ok(Mode::BackendFull),
            "backend_abs" => Ok(Mode::BackendAbs),
            other => Err(format!(
                "unknown mode `{other}` (expected direct_full, direct_abs, backend_full, or backend_abs)"
            )),
        }
    }
}

/// Analysis configuration. All randomness flows from `seed`.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub mode: Mode,
    /// Initial under-approximation fraction, in (0, 1].
    pub alpha0: f64,
    /// Over-approximation grid width (normalized units); 0 is the identity.
    pub beta: f64,
    pub seed: u64,
    pub max_outer_iters: usize,
    /// Cap on over-approximation refinements; defaults to the total state
    /// count, the natural bound.
    pub max_inner_iters: Option<usize>,
    /// Endogenous variables whose decisions are candidate causes, in
    /// priority order.
    pub cause_vars: Vec<String>,
    pub max_conjuncts: usize,
    /// Require the counterfactual trace to share the witness's context.
    pub same_context: bool,
    /// Compare traces on the prefix up to the cause step instead of whole
    /// traces.
    pub equiv_prefix: bool,
    /// Split the log by context and analyze each group separately.
    pub partition_by_context: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            mode: Mode::DirectFull,
            alpha0: 0.1,
            beta: 0.0,
            seed: 0,
            max_outer_iters: 16,
            max_inner_iters: None,
            cause_vars: Vec::new(),
            max_conjuncts: 1,
            same_context: true,
            equiv_prefix: false,
            partition_by_context: false,
        }
    }
}

impl EngineConfig {
    fn validate(&self) -> Result<(), EngineError> {
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(EngineError::Config(format!("alpha must be in (0, 1], got {}", self.alpha0)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(EngineError::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.max_outer_iters < 1 {
            return Err(EngineError::Config("max_outer_iters must be at least 1".into()));
        }
        if self.max_conjuncts < 1 {
            return Err(EngineError::Config("max_conjuncts must be at least 1".into()));
        }
        if self.cause_vars.is_empty() {
            return Err(EngineError::Config("cause_vars must not be empty".into()));
        }
        Ok(())
    }

    fn opts(&self) -> CheckOpts {
        CheckOpts { same_context: self.same_context, equiv_prefix: self.equiv_prefix }
    }
}

/// Joint satisfiability answer for AC1 and AC2(a).
pub struct WitnessQuery {
    /// First (witness, counterfactual) pair in trace order, if any.
    pub pair: Option<(usize, usize)>,
    /// Whether AC1 alone had a witness.
    pub ac1_satisfiable: bool,
}

/// A query backend answers AC1 and AC2(a) as a satisfiability query over a
/// finite trace set and AC2(b) as a validity query. Backends must agree with
/// each other on every input.
pub trait Backend<S: Scalar> {
    fn name(&self) -> &'static str;

    fn witness_pair(
        &self,
        log: &TraceLog<S>,
        index: &EffectIndex,
        cand: &CauseCandidate<S>,
        opts: CheckOpts,
    ) -> WitnessQuery;

    fn sufficiency(
        &self,
        log: &TraceLog<S>,
        index: &EffectIndex,
        tau: usize,
        cand: &CauseCandidate<S>,
        opts: CheckOpts,
    ) -> Ac2bOutcome;
}

/// Direct search with early exits, built on the trace-level checks.
pub struct SearchBackend;

impl<S: Scalar> Backend<S> for SearchBackend {
    fn name(&self) -> &'static str {
        "search"
    }

    fn witness_pair(
        &self,
        log: &TraceLog<S>,
        index: &EffectIndex,
        cand: &CauseCandidate<S>,
        opts: CheckOpts,
    ) -> WitnessQuery {
        let mut ac1_satisfiable = false;
        for tau in 0..log.len() {
            if !ac1_satisfied(log, index, cand, tau) {
                continue;
            }
            ac1_satisfiable = true;
            if let Some(tp) = check_ac2a_with(log, index, tau, cand, opts) {
                return WitnessQuery { pair: Some((tau, tp)), ac1_satisfiable };
            }
        }
        WitnessQuery { pair: None, ac1_satisfiable }
    }

    fn sufficiency(
        &self,
        log: &TraceLog<S>,
        index: &EffectIndex,
        tau: usize,
        cand: &CauseCandidate<S>,
        opts: CheckOpts,
    ) -> Ac2bOutcome {
        check_ac2b_with(log, index, tau, cand, opts)
    }
}

/// Table evaluation: materializes per-trace satisfaction columns for each
/// query and combines them, in the style of a constraint evaluator over a
/// finite universe. No early exits on the column computations.
pub struct TableBackend;

impl TableBackend {
    fn columns<S: Scalar>(
        log: &TraceLog<S>,
        index: &EffectIndex,
        cand: &CauseCandidate<S>,
    ) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
        let sig = log.signature();
        let anchor = cand.anchor();
        let holds: Vec<bool> = log
            .traces()
            .iter()
            .map(|t| anchor < t.len() && cand.holds_in(sig, t))
            .collect();
        let fires: Vec<bool> = (0..log.len())
            .map(|i| holds[i] && index.none_before(i, anchor))
            .collect();
        let ac1: Vec<bool> = (0..log.len())
            .map(|i| fires[i] && index.ever_from(i, anchor))
            .collect();
        (holds, fires, ac1)
    }
}

impl<S: Scalar> Backend<S> for TableBackend {
    fn name(&self) -> &'static str {
        "table"
    }

    fn witness_pair(
        &self,
        log: &TraceLog<S>,
        index: &EffectIndex,
        cand: &CauseCandidate<S>,
        opts: CheckOpts,
    ) -> WitnessQuery {
        let sig = log.signature();
        let (holds, _, ac1) = Self::columns(log, index, cand);
        let neither: Vec<bool> = (0..log.len()).map(|i| !holds[i] && index.never(i)).collect();
        let z_idx: Vec<usize> = cand.partition.z.iter().filter_map(|v| sig.index_of(v)).collect();
        let w_idx: Vec<usize> = cand.partition.w.iter().filter_map(|v| sig.index_of(v)).collect();
        let prefix = opts.equiv_prefix.then(|| cand.anchor() + 1);
        let ac1_satisfiable = ac1.iter().any(|b| *b);
        for tau in (0..log.len()).filter(|&i| ac1[i]) {
            let witness = log.trace(tau);
            let found = (0..log.len()).find(|&tp| {
                neither[tp]
                    && (!opts.same_context || crate::hp::same_context(sig, witness, log.trace(tp)))
                    && (!trace_equiv_idx(sig, witness, log.trace(tp), &z_idx, prefix)
                        || !trace_equiv_idx(sig, witness, log.trace(tp), &w_idx, prefix))
            });
            if let Some(tp) = found {
                return WitnessQuery { pair: Some((tau, tp)), ac1_satisfiable };
            }
        }
        WitnessQuery { pair: None, ac1_satisfiable }
    }

    fn sufficiency(
        &self,
        log: &TraceLog<S>,
        index: &EffectIndex,
        tau: usize,
        cand: &CauseCandidate<S>,
        opts: CheckOpts,
    ) -> Ac2bOutcome {
        let sig = log.signature();
        let (_, fires, _) = Self::columns(log, index, cand);
        let z_idx: Vec<usize> = cand.partition.z.iter().filter_map(|v| sig.index_of(v)).collect();
        let w_idx: Vec<usize> = cand.partition.w.iter().filter_map(|v| sig.index_of(v)).collect();
        let prefix = opts.equiv_prefix.then(|| cand.anchor() + 1);
        let witness = log.trace(tau);
        let qualifies: Vec<bool> = (0..log.len())
            .map(|i| {
                fires[i]
                    && trace_equiv_idx(sig, witness, log.trace(i), &z_idx, prefix)
                    && (w_idx.is_empty() || !trace_equiv_idx(sig, witness, log.trace(i), &w_idx, prefix))
            })
            .collect();
        let violation = (0..log.len()).find(|&i| qualifies[i] && !index.ever(i));
        match violation {
            Some(v) => Ac2bOutcome::Counterexample {
                trace: v,
                checked: qualifies[..=v].iter().filter(|b| **b).count(),
            },
            None => Ac2bOutcome::Holds { checked: qualifies.iter().filter(|b| **b).count() },
        }
    }
}

fn backend_for<S: Scalar>(mode: Mode) -> Box<dyn Backend<S>> {
    match mode {
        Mode::DirectFull | Mode::DirectAbs => Box::new(SearchBackend),
        Mode::BackendFull | Mode::BackendAbs => Box::new(TableBackend),
    }
}

/// Per-condition result of re-checking a cause on the full concrete log.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub ac1: bool,
    pub ac2a: bool,
    pub ac2b: bool,
    pub witness: Option<String>,
    pub counterfactual: Option<String>,
    pub counterexample: Option<String>,
    pub checked_universe: usize,
}

impl Verification {
    pub fn passes(&self) -> bool {
        self.ac1 && self.ac2a && self.ac2b
    }
}

/// The soundness oracle: re-check all three conditions on the concrete log.
/// A cause stands when some witness pair (in trace order) satisfies AC1,
/// AC2(a), and AC2(b) together; the breakdown names the first failing
/// condition otherwise.
pub fn verify_cause<S: Scalar>(
    log: &TraceLog<S>,
    cand: &CauseCandidate<S>,
    effect: &CausalFormula<S>,
    opts: CheckOpts,
) -> Result<Verification, EvalError> {
    let index = EffectIndex::build(log, effect)?;
    Ok(verify_cause_with(log, &index, cand, opts))
}

fn verify_cause_with<S: Scalar>(
    log: &TraceLog<S>,
    index: &EffectIndex,
    cand: &CauseCandidate<S>,
    opts: CheckOpts,
) -> Verification {
    let mut ac1_any = false;
    let mut first_failed: Option<(usize, usize, usize, usize)> = None;
    for tau in 0..log.len() {
        if !ac1_satisfied(log, index, cand, tau) {
            continue;
        }
        ac1_any = true;
        let Some(tp) = check_ac2a_with(log, index, tau, cand, opts) else {
            continue;
        };
        match check_ac2b_with(log, index, tau, cand, opts) {
            Ac2bOutcome::Holds { checked } => {
                return Verification {
                    ac1: true,
                    ac2a: true,
                    ac2b: true,
                    witness: Some(log.trace(tau).id().to_string()),
                    counterfactual: Some(log.trace(tp).id().to_string()),
                    counterexample: None,
                    checked_universe: checked,
                }
            }
            Ac2bOutcome::Counterexample { trace, checked } => {
                first_failed.get_or_insert((tau, tp, trace, checked));
            }
        }
    }
    match first_failed {
        Some((tau, tp, cex, checked)) => Verification {
            ac1: true,
            ac2a: true,
            ac2b: false,
            witness: Some(log.trace(tau).id().to_string()),
            counterfactual: Some(log.trace(tp).id().to_string()),
            counterexample: Some(log.trace(cex).id().to_string()),
            checked_universe: checked,
        },
        None => Verification {
            ac1: ac1_any,
            ac2a: false,
            ac2b: false,
            witness: None,
            counterfactual: None,
            counterexample: None,
            checked_universe: 0,
        },
    }
}

/// Why no cause was returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NoCauseReason {
    Ac1Unsat,
    Ac2aUnsat,
    Ac2bCex,
    Caps,
}

impl fmt::Display for NoCauseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoCauseReason::Ac1Unsat => "ac1-unsat",
            NoCauseReason::Ac2aUnsat => "ac2a-unsat",
            NoCauseReason::Ac2bCex => "ac2b-cex",
            NoCauseReason::Caps => "caps",
        };
        f.write_str(s)
    }
}

/// Iteration and refinement counters for one analysis run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub alpha_final: f64,
    pub abstract_states: usize,
    /// State count of each abstract model built or refined during the run,
    /// in order, so refinement progress is visible in the report.
    pub abstract_state_history: Vec<usize>,
    pub checked_universe: usize,
    pub wall_ms: u64,
}

impl RunStats {
    /// Total refinement steps: under-approximation growths plus
    /// over-approximation splits.
    pub fn refinements(&self) -> usize {
        self.outer_iters.saturating_sub(1) + self.inner_iters
    }
}

/// A confirmed cause.
#[derive(Debug, Clone)]
pub struct CauseFound<S: Scalar> {
    pub candidate: CauseCandidate<S>,
    pub witness: String,
    pub counterfactual: String,
    pub verification: Verification,
    pub stats: RunStats,
}

/// A no-cause result with its machine-readable reason.
#[derive(Debug, Clone)]
pub struct NoCause {
    pub reason: NoCauseReason,
    pub stats: RunStats,
}

/// Result of one analysis.
#[derive(Debug, Clone)]
pub enum Outcome<S: Scalar> {
    Cause(Box<CauseFound<S>>),
    NoCause(NoCause),
}

impl<S: Scalar> Outcome<S> {
    pub fn stats(&self) -> &RunStats {
        match self {
            Outcome::Cause(c) => &c.stats,
            Outcome::NoCause(n) => &n.stats,
        }
    }

    pub fn cause_string(&self) -> Option<String> {
        match self {
            Outcome::Cause(c) => Some(c.candidate.to_string()),
            Outcome::NoCause(_) => None,
        }
    }
}

enum RunResult<S: Scalar> {
    Done(Outcome<S>),
    TimedOut,
}

/// Find an actual cause of `effect` in `log` under `cfg`. Deterministic
/// given (log, cfg); exhaustion and iteration caps yield a no-cause outcome
/// with a reason rather than an error.
pub fn find_actual_cause<S: Scalar>(
    log: &TraceLog<S>,
    effect: &CausalFormula<S>,
    cfg: &EngineConfig,
) -> Result<Outcome<S>, EngineError> {
    match run_analysis(log, effect, cfg, None)? {
        RunResult::Done(outcome) => Ok(outcome),
        RunResult::TimedOut => unreachable!("no deadline was set"),
    }
}

fn run_analysis<S: Scalar>(
    log: &TraceLog<S>,
    effect: &CausalFormula<S>,
    cfg: &EngineConfig,
    deadline: Option<Instant>,
) -> Result<RunResult<S>, EngineError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut result = if cfg.partition_by_context {
        run_per_context(log, effect, cfg, deadline)?
    } else {
        run_one(log, effect, cfg, deadline)?
    };
    if let RunResult::Done(outcome) = &mut result {
        let stats = match outcome {
            Outcome::Cause(c) => &mut c.stats,
            Outcome::NoCause(n) => &mut n.stats,
        };
        stats.wall_ms = started.elapsed().as_millis() as u64;
    }
    Ok(result)
}

fn run_per_context<S: Scalar>(
    log: &TraceLog<S>,
    effect: &CausalFormula<S>,
    cfg: &EngineConfig,
    deadline: Option<Instant>,
) -> Result<RunResult<S>, EngineError> {
    let groups = context_groups(log);
    let mut merged = RunStats::default();
    let mut worst_reason = NoCauseReason::Ac1Unsat;
    for group in groups {
        let sub = log.select(&group);
        match run_one(&sub, effect, cfg, deadline)? {
            RunResult::TimedOut => return Ok(RunResult::TimedOut),
            RunResult::Done(Outcome::Cause(mut found)) => {
                found.stats.outer_iters += merged.outer_iters;
                found.stats.inner_iters += merged.inner_iters;
                let mut history = merged.abstract_state_history;
                history.extend(found.stats.abstract_state_history.iter());
                found.stats.abstract_state_history = history;
                return Ok(RunResult::Done(Outcome::Cause(found)));
            }
            RunResult::Done(Outcome::NoCause(nc)) => {
                merged.outer_iters += nc.stats.outer_iters;
                merged.inner_iters += nc.stats.inner_iters;
                merged.alpha_final = nc.stats.alpha_final;
                merged.abstract_states = merged.abstract_states.max(nc.stats.abstract_states);
                merged.abstract_state_history.extend(nc.stats.abstract_state_history.iter());
                worst_reason = worst_reason.max(nc.reason);
            }
        }
    }
    Ok(RunResult::Done(Outcome::NoCause(NoCause { reason: worst_reason, stats: merged })))
}

fn context_groups<S: Scalar>(log: &TraceLog<S>) -> Vec<Vec<usize>> {
    #[derive(PartialEq, Eq, Hash)]
    enum Key {
        Bits(u64),
        Token(crate::value::Token),
    }
    let exo = log.signature().exogenous_indices();
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut by_key: HashMap<Vec<Key>, usize> = HashMap::new();
    for (i, trace) in log.traces().iter().enumerate() {
        let key: Vec<Key> = exo
            .iter()
            .map(|&v| match trace.state(0).value(v) {
                Value::Continuous(x) => Key::Bits(x.canonical_bits()),
                Value::Discrete(t) => Key::Token(t.clone()),
            })
            .collect();
        match by_key.get(&key) {
            Some(&g) => order[g].push(i),
            None => {
                by_key.insert(key, order.len());
                order.push(vec![i]);
            }
        }
    }
    order
}

fn out_of_time(deadline: Option<Instant>) -> bool {
    deadline.is_some_and(|d| Instant::now() >= d)
}

fn run_one<S: Scalar>(
    log: &TraceLog<S>,
    effect: &CausalFormula<S>,
    cfg: &EngineConfig,
    deadline: Option<Instant>,
) -> Result<RunResult<S>, EngineError> {
    let opts = cfg.opts();
    let mut stats = RunStats { alpha_final: if cfg.mode.uses_abstraction() { cfg.alpha0 } else { 1.0 }, ..RunStats::default() };
    if log.is_empty() {
        stats.outer_iters = 1;
        return Ok(RunResult::Done(Outcome::NoCause(NoCause { reason: NoCauseReason::Ac1Unsat, stats })));
    }
    let backend = backend_for::<S>(cfg.mode);
    let full_index = EffectIndex::build(log, effect)?;
    let mut saw_ac1 = false;
    let mut saw_pair = false;
    let mut saw_cex = false;

    let exhausted_reason = |saw_cex: bool, saw_pair: bool, saw_ac1: bool| {
        if saw_cex || saw_pair {
            NoCauseReason::Ac2bCex
        } else if saw_ac1 {
            NoCauseReason::Ac2aUnsat
        } else {
            NoCauseReason::Ac1Unsat
        }
    };

    if !cfg.mode.uses_abstraction() {
        stats.outer_iters = 1;
        let stream = CandidateStream::new(log, &full_index, &cfg.cause_vars, cfg.max_conjuncts)?;
        for cand in stream {
            if out_of_time(deadline) {
                return Ok(RunResult::TimedOut);
            }
            let query = backend.witness_pair(log, &full_index, &cand, opts);
            saw_ac1 |= query.ac1_satisfiable;
            let Some((tau, _)) = query.pair else { continue };
            saw_pair = true;
            match backend.sufficiency(log, &full_index, tau, &cand, opts) {
                Ac2bOutcome::Holds { .. } => {
                    let verification = verify_cause_with(log, &full_index, &cand, opts);
                    if verification.passes() {
                        stats.checked_universe = verification.checked_universe;
                        return Ok(done_cause(cand, verification, stats));
                    }
                    saw_cex = true;
                }
                Ac2bOutcome::Counterexample { .. } => {
                    saw_cex = true;
                }
            }
        }
        let reason = exhausted_reason(saw_cex, saw_pair, saw_ac1);
        return Ok(RunResult::Done(Outcome::NoCause(NoCause { reason, stats })));
    }

    // abstraction-refinement: existential conditions on a growing trace
    // subset, the universal one on the merged model of the full log
    let beta = S::from_f64_lossy(cfg.beta);
    let max_inner = cfg.max_inner_iters.unwrap_or_else(|| log.state_count().max(1));
    let mut under = under_approximate(log, cfg.alpha0, cfg.seed)?;
    for outer in 1..=cfg.max_outer_iters {
        stats.outer_iters = outer;
        stats.alpha_final = under.alpha();
        let sub = under.selected();
        let sub_index = EffectIndex::build(sub, effect)?;
        let stream = CandidateStream::new(sub, &sub_index, &cfg.cause_vars, cfg.max_conjuncts)?;
        'candidates: for cand in stream {
            if out_of_time(deadline) {
                return Ok(RunResult::TimedOut);
            }
            let query = backend.witness_pair(sub, &sub_index, &cand, opts);
            saw_ac1 |= query.ac1_satisfiable;
            let Some((tau_sub, _)) = query.pair else { continue };
            saw_pair = true;
            let tau_full = under.selected_indices()[tau_sub];
            let mut model = over_approximate_with(log, &full_index, beta, &cand)?;
            stats.abstract_states = model.state_count();
            stats.abstract_state_history.push(model.state_count());
            loop {
                if out_of_time(deadline) {
                    return Ok(RunResult::TimedOut);
                }
                match model.ac2b(log, tau_full, opts) {
                    AbstractAc2b::Holds { .. } => {
                        // confirm on the concrete log before reporting
                        let verification = verify_cause_with(log, &full_index, &cand, opts);
                        if verification.passes() {
                            stats.checked_universe = verification.checked_universe;
                            return Ok(done_cause(cand, verification, stats));
                        }
                        saw_cex = true;
                        continue 'candidates;
                    }
                    AbstractAc2b::Counterexample { unique_trace, .. } => {
                        let cex = model.unique_traces()[unique_trace].clone();
                        let genuine = cex.concrete.iter().any(|&ci| {
                            ac2b_qualifies(log, &full_index, tau_full, &cand, opts, ci)
                                && !full_index.ever(ci)
                        });
                        if genuine {
                            saw_cex = true;
                            continue 'candidates;
                        }
                        if stats.inner_iters >= max_inner {
                            let reason = NoCauseReason::Caps;
                            return Ok(RunResult::Done(Outcome::NoCause(NoCause { reason, stats })));
                        }
                        match model.refine_over(log, &cex) {
                            Ok(refined) => {
                                model = refined;
                                stats.inner_iters += 1;
                                stats.abstract_states = model.state_count();
                                stats.abstract_state_history.push(model.state_count());
                            }
                            Err(AbstractionError::NoSplittableState) => {
                                saw_cex = true;
                                continue 'candidates;
                            }
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
        }
        match under.refine(log) {
            Ok(u) => under = u,
            Err(AbstractionError::Exhausted) => {
                let reason = exhausted_reason(saw_cex, saw_pair, saw_ac1);
                return Ok(RunResult::Done(Outcome::NoCause(NoCause { reason, stats })));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(RunResult::Done(Outcome::NoCause(NoCause { reason: NoCauseReason::Caps, stats })))
}

fn done_cause<S: Scalar>(cand: CauseCandidate<S>, verification: Verification, stats: RunStats) -> RunResult<S> {
    let witness = verification.witness.clone().unwrap_or_default();
    let counterfactual = verification.counterfactual.clone().unwrap_or_default();
    RunResult::Done(Outcome::Cause(Box::new(CauseFound {
        candidate: cand,
        witness,
        counterfactual,
        verification,
        stats,
    })))
}

/// One cell of the benchmark table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub mode: String,
    pub alpha: f64,
    pub wall_ms: u64,
    pub refinements: usize,
    pub outcome: String,
    pub cause: Option<String>,
}

/// Run each requested mode (and optionally each alpha) on a prefix of the
/// log per size. Timeouts are data, not failures.
pub fn bench_modes<S: Scalar>(
    log: &TraceLog<S>,
    effect: &CausalFormula<S>,
    base: &EngineConfig,
    sizes: &[usize],
    modes: &[Mode],
    alphas: Option<&[f64]>,
    timeout: Option<Duration>,
) -> Result<Vec<BenchRow>, EngineError> {
    for &size in sizes {
        if size > log.len() {
            return Err(EngineError::Config(format!(
                "size {size} exceeds the log's {} traces",
                log.len()
            )));
        }
    }
    let default_alphas = [base.alpha0];
    let alphas = alphas.unwrap_or(&default_alphas);
    let mut rows = Vec::new();
    for &size in sizes {
        let prefix = log.prefix(size);
        for &mode in modes {
            for &alpha in alphas {
                let mut cfg = base.clone();
                cfg.mode = mode;
                cfg.alpha0 = alpha;
                let deadline = timeout.map(|d| Instant::now() + d);
                let started = Instant::now();
                let result = run_analysis(&prefix, effect, &cfg, deadline)?;
                let wall_ms = started.elapsed().as_millis() as u64;
                let row = match result {
                    RunResult::TimedOut => BenchRow {
                        size,
                        mode: mode.to_string(),
                        alpha,
                        wall_ms,
                        refinements: 0,
                        outcome: "timeout".into(),
                        cause: None,
                    },
                    RunResult::Done(outcome) => BenchRow {
                        size,
                        mode: mode.to_string(),
                        alpha,
                        wall_ms,
                        refinements: outcome.stats().refinements(),
                        outcome: match &outcome {
                            Outcome::Cause(_) => "cause-found".into(),
                            Outcome::NoCause(nc) => format!("no-cause({})", nc.reason),
                        },
                        cause: outcome.cause_string(),
                    },
                };
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Versioned machine-readable report.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub report_version: u32,
    pub outcome: String,
    pub cause: Option<String>,
    pub reason: Option<String>,
    pub witness: Option<String>,
    pub counterfactual: Option<String>,
    pub partition: Option<PartitionReport>,
    pub mode: String,
    pub stats: StatsReport,
    pub verification: Option<VerificationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    #[serde(rename = "Z")]
    pub z: Vec<String>,
    #[serde(rename = "W")]
    pub w: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub alpha_final: f64,
    pub abstract_states: usize,
    pub abstract_state_history: Vec<usize>,
    pub checked_universe: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub ac1: bool,
    pub ac2a: bool,
    pub ac2b: bool,
}

/// Assemble the report for an analysis outcome.
pub fn build_report<S: Scalar>(outcome: &Outcome<S>, cfg: &EngineConfig) -> Report {
    let stats = outcome.stats();
    let stats_report = StatsReport {
        outer_iters: stats.outer_iters,
        inner_iters: stats.inner_iters,
        alpha_final: stats.alpha_final,
        abstract_states: stats.abstract_states,
        abstract_state_history: stats.abstract_state_history.clone(),
        checked_universe: stats.checked_universe,
        wall_ms: stats.wall_ms,
    };
    match outcome {
        Outcome::Cause(found) => Report {
            report_version: 1,
            outcome: "cause-found".into(),
            cause: Some(found.candidate.to_string()),
            reason: None,
            witness: Some(found.witness.clone()),
            counterfactual: Some(found.counterfactual.clone()),
            partition: Some(PartitionReport {
                z: found.candidate.partition.z.iter().cloned().collect(),
                w: found.candidate.partition.w.iter().cloned().collect(),
            }),
            mode: cfg.mode.to_string(),
            stats: stats_report,
            verification: Some(VerificationReport {
                ac1: found.verification.ac1,
                ac2a: found.verification.ac2a,
                ac2b: found.verification.ac2b,
            }),
        },
        Outcome::NoCause(nc) => Report {
            report_version: 1,
            outcome: "no-cause".into(),
            cause: None,
            reason: Some(nc.reason.to_string()),
            witness: None,
            counterfactual: None,
            partition: None,
            mode: cfg.mode.to_string(),
            stats: stats_report,
            verification: None,
        },
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
