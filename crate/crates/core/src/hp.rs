//! Trace-level actual-cause conditions: the (Z, W) partition, stepwise trace
//! equivalence, the AC1/AC2(a)/AC2(b) checks, and candidate enumeration.
//!
//! A cause candidate is a conjunction of primitive equalities at concrete
//! steps. Its *anchor* is the largest step it mentions: the candidate "fires"
//! at the anchor, so the until-shaped conditions read as: the effect is false
//! strictly before the anchor, the candidate holds, and (for AC1) the effect
//! appears at or after the anchor. A trace too short to contain the anchor
//! never satisfies the candidate.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::formula::{CausalFormula, Cmp, EvalError, PrimitiveEvent, TimeIndex};
use crate::scalar::Scalar;
use crate::signature::Signature;
use crate::trace::{Trace, TraceLog};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` is not endogenous")]
    NotEndogenous(String),
    #[error("cause variable set is empty")]
    Empty,
}

/// The split of endogenous variables into the causal path Z (cause variables
/// plus their dependency-graph descendants) and the off-path rest W.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub cause_vars: BTreeSet<String>,
    pub z: BTreeSet<String>,
    pub w: BTreeSet<String>,
}

/// Z = cause variables and everything reachable from them along dependency
/// edges; W = the remaining endogenous variables.
pub fn derive_partition<S: Scalar>(
    sig: &Signature<S>,
    cause_vars: &BTreeSet<String>,
) -> Result<Partition, PartitionError> {
    if cause_vars.is_empty() {
        return Err(PartitionError::Empty);
    }
    let mut roots = BTreeSet::new();
    for name in cause_vars {
        let idx = sig
            .index_of(name)
            .ok_or_else(|| PartitionError::UnknownVariable(name.clone()))?;
        if !sig.is_endogenous(idx) {
            return Err(PartitionError::NotEndogenous(name.clone()));
        }
        roots.insert(idx);
    }
    let mut z: BTreeSet<String> = cause_vars.clone();
    for idx in sig.descendants(&roots) {
        if sig.is_endogenous(idx) {
            z.insert(sig.name(idx).to_string());
        }
    }
    let w = sig.endogenous_names().difference(&z).cloned().collect();
    Ok(Partition { cause_vars: cause_vars.clone(), z, w })
}

/// One conjunct of a cause candidate: `var(step) = value`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePrim<S: Scalar> {
    pub var: usize,
    pub name: String,
    pub step: usize,
    pub value: Value<S>,
}

/// A hypothesised cause: a conjunction of primitive equalities at concrete
/// steps, together with the (Z, W) partition derived from its variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseCandidate<S: Scalar> {
    pub prims: Vec<CandidatePrim<S>>,
    pub partition: Partition,
}

impl<S: Scalar> CauseCandidate<S> {
    /// The step at which the candidate fires: the largest step it mentions.
    pub fn anchor(&self) -> usize {
        self.prims.iter().map(|p| p.step).max().unwrap_or(0)
    }

    /// Whether every conjunct holds in `trace` (within tolerances). A trace
    /// shorter than a mentioned step does not satisfy the candidate.
    pub fn holds_in(&self, sig: &Signature<S>, trace: &Trace<S>) -> bool {
        self.prims.iter().all(|p| {
            p.step < trace.len() && sig.values_equal(p.var, trace.state(p.step).value(p.var), &p.value)
        })
    }

    /// The candidate as a causal formula (a conjunction of equalities).
    pub fn to_formula(&self) -> CausalFormula<S> {
        let mut prims = self.prims.iter().map(|p| {
            CausalFormula::Prim(PrimitiveEvent {
                var: p.var,
                name: p.name.clone(),
                index: TimeIndex::Step(p.step),
                cmp: Cmp::Eq,
                value: p.value.clone(),
            })
        });
        let first = prims.next().expect("candidates are non-empty");
        prims.fold(first, |acc, p| CausalFormula::And(Box::new(acc), Box::new(p)))
    }
}

impl<S: Scalar> fmt::Display for CauseCandidate<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.prims.iter().enumerate() {
            if i > 0 {
                write!(f, " & ")?;
            }
            write!(f, "{}({}) = {}", p.name, p.step, p.value)?;
        }
        Ok(())
    }
}

/// Options shared by the equivalence-sensitive checks.
#[derive(Debug, Clone, Copy)]
pub struct CheckOpts {
    /// AC2(a): require the counterfactual trace to share the witness's
    /// context (exogenous values at step 0).
    pub same_context: bool,
    /// Compare traces only on the prefix up to the candidate's anchor instead
    /// of whole traces.
    pub equiv_prefix: bool,
}

impl Default for CheckOpts {
    fn default() -> Self {
        CheckOpts { same_context: true, equiv_prefix: false }
    }
}

/// Stepwise equivalence of two traces restricted to `vars`: equal length and,
/// at every step, agreement on every listed variable (exact for discrete,
/// within tolerance for continuous). An empty variable set is vacuously
/// equivalent.
pub fn trace_equiv<S: Scalar>(
    a: &Trace<S>,
    b: &Trace<S>,
    vars: &BTreeSet<String>,
    sig: &Signature<S>,
) -> bool {
    let idx: Vec<usize> = vars.iter().filter_map(|v| sig.index_of(v)).collect();
    debug_assert_eq!(idx.len(), vars.len(), "trace_equiv called with undeclared variables");
    trace_equiv_idx(sig, a, b, &idx, None)
}

/// Index-resolved equivalence. With `prefix = Some(k)`, compares steps
/// `0..k` and requires both traces to be at least `k` long; otherwise
/// compares whole traces and unequal lengths are never equivalent.
pub(crate) fn trace_equiv_idx<S: Scalar>(
    sig: &Signature<S>,
    a: &Trace<S>,
    b: &Trace<S>,
    vars: &[usize],
    prefix: Option<usize>,
) -> bool {
    let upto = match prefix {
        Some(k) => {
            if a.len() < k || b.len() < k {
                return false;
            }
            k
        }
        None => {
            if a.len() != b.len() {
                return false;
            }
            a.len()
        }
    };
    for step in 0..upto {
        let sa = a.state(step);
        let sb = b.state(step);
        for &v in vars {
            if !sig.values_equal(v, sa.value(v), sb.value(v)) {
                return false;
            }
        }
    }
    true
}

/// Whether two traces share the same context: agreement on every exogenous
/// variable at step 0.
pub fn same_context<S: Scalar>(sig: &Signature<S>, a: &Trace<S>, b: &Trace<S>) -> bool {
    sig.exogenous_indices()
        .into_iter()
        .all(|v| sig.values_equal(v, a.state(0).value(v), b.state(0).value(v)))
}

/// Per-trace satisfaction table for the effect formula, shared across
/// candidate checks so repeated scans do not re-evaluate the formula.
pub struct EffectIndex {
    /// `bits[i][j]` = effect holds at step j of trace i.
    bits: Vec<Vec<bool>>,
    /// Effect holds at some step of trace i.
    ever: Vec<bool>,
}

impl EffectIndex {
    pub fn build<S: Scalar>(log: &TraceLog<S>, effect: &CausalFormula<S>) -> Result<Self, EvalError> {
        let sig = log.signature();
        let mut bits = Vec::with_capacity(log.len());
        let mut ever = Vec::with_capacity(log.len());
        for trace in log.traces() {
            let mut row = Vec::with_capacity(trace.len());
            for step in 0..trace.len() {
                row.push(effect.eval_at(sig, trace, step)?);
            }
            ever.push(row.iter().any(|b| *b));
            bits.push(row);
        }
        Ok(EffectIndex { bits, ever })
    }

    pub fn holds_at(&self, trace: usize, step: usize) -> bool {
        self.bits[trace][step]
    }

    pub fn ever(&self, trace: usize) -> bool {
        self.ever[trace]
    }

    /// Effect holds at some step `>= from` of the trace.
    pub fn ever_from(&self, trace: usize, from: usize) -> bool {
        self.bits[trace][from..].iter().any(|b| *b)
    }

    /// Effect is false at every step `< upto` of the trace.
    pub fn none_before(&self, trace: usize, upto: usize) -> bool {
        !self.bits[trace][..upto.min(self.bits[trace].len())].iter().any(|b| *b)
    }

    pub fn never(&self, trace: usize) -> bool {
        !self.ever[trace]
    }
}

/// Outcome of the universal AC2(b) check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ac2bOutcome {
    /// Every qualifying trace exhibits the effect. `checked` counts the
    /// traces that satisfied the premise.
    Holds { checked: usize },
    /// The first qualifying trace (in log order) that fails to exhibit the
    /// effect.
    Counterexample { trace: usize, checked: usize },
}

/// Does the candidate fire in this trace in the until sense: the trace is
/// long enough, every conjunct holds, and the effect is false strictly
/// before the anchor.
pub(crate) fn fires_in<S: Scalar>(
    sig: &Signature<S>,
    trace: &Trace<S>,
    trace_idx: usize,
    cand: &CauseCandidate<S>,
    index: &EffectIndex,
) -> bool {
    cand.anchor() < trace.len() && cand.holds_in(sig, trace) && index.none_before(trace_idx, cand.anchor())
}

/// AC1: the first trace in which the candidate fires and the effect then
/// appears at or after the anchor.
pub fn check_ac1<S: Scalar>(
    log: &TraceLog<S>,
    cand: &CauseCandidate<S>,
    effect: &CausalFormula<S>,
) -> Result<Option<usize>, EvalError> {
    let index = EffectIndex::build(log, effect)?;
    Ok(check_ac1_with(log, &index, cand))
}

pub fn check_ac1_with<S: Scalar>(
    log: &TraceLog<S>,
    index: &EffectIndex,
    cand: &CauseCandidate<S>,
) -> Option<usize> {
    (0..log.len()).find(|&i| ac1_satisfied(log, index, cand, i))
}

/// AC1 restricted to one trace: the candidate fires there and the effect
/// appears at or after the anchor.
pub(crate) fn ac1_satisfied<S: Scalar>(
    log: &TraceLog<S>,
    index: &EffectIndex,
    cand: &CauseCandidate<S>,
    i: usize,
) -> bool {
    let trace = log.trace(i);
    fires_in(log.signature(), trace, i, cand, index) && index.ever_from(i, cand.anchor())
}

/// The AC2(b) premise restricted to one trace: it fires the candidate, is
/// Z-equivalent to the witness, and (when W is non-empty) differs on W.
pub(crate) fn ac2b_qualifies<S: Scalar>(
    log: &TraceLog<S>,
    index: &EffectIndex,
    tau: usize,
    cand: &CauseCandidate<S>,
    opts: CheckOpts,
    i: usize,
) -> bool {
    let sig = log.signature();
    let z_idx = resolve(sig, &cand.partition.z);
    let w_idx = resolve(sig, &cand.partition.w);
    let prefix = opts.equiv_prefix.then(|| cand.anchor() + 1);
    let t = log.trace(i);
    let witness = log.trace(tau);
    fires_in(sig, t, i, cand, index)
        && trace_equiv_idx(sig, witness, t, &z_idx, prefix)
        && (w_idx.is_empty() || !trace_equiv_idx(sig, witness, t, &w_idx, prefix))
}

/// AC2(a): the first trace in which neither the candidate nor the effect
/// ever holds and which differs from the witness on Z or on W.
pub fn check_ac2a<S: Scalar>(
    log: &TraceLog<S>,
    tau: usize,
    cand: &CauseCandidate<S>,
    effect: &CausalFormula<S>,
    opts: CheckOpts,
) -> Result<Option<usize>, EvalError> {
    let index = EffectIndex::build(log, effect)?;
    Ok(check_ac2a_with(log, &index, tau, cand, opts))
}

pub fn check_ac2a_with<S: Scalar>(
    log: &TraceLog<S>,
    index: &EffectIndex,
    tau: usize,
    cand: &CauseCandidate<S>,
    opts: CheckOpts,
) -> Option<usize> {
    let sig = log.signature();
    let witness = log.trace(tau);
    let z_idx = resolve(sig, &cand.partition.z);
    let w_idx = resolve(sig, &cand.partition.w);
    let prefix = opts.equiv_prefix.then(|| cand.anchor() + 1);
    (0..log.len()).find(|&i| {
        let t = log.trace(i);
        if opts.same_context && !same_context(sig, witness, t) {
            return false;
        }
        // [](!phi_c & !phi_e): the candidate never fires and the effect never
        // holds anywhere in the trace.
        if cand.anchor() < t.len() && cand.holds_in(sig, t) {
            return false;
        }
        if !index.never(i) {
            return false;
        }
        !trace_equiv_idx(sig, witness, t, &z_idx, prefix)
            || !trace_equiv_idx(sig, witness, t, &w_idx, prefix)
    })
}

/// AC2(b): every trace that fires the candidate, is Z-equivalent to the
/// witness, and (when W is non-empty) differs from it on W, must exhibit the
/// effect. With W empty the W-disequivalence conjunct is dropped.
pub fn check_ac2b<S: Scalar>(
    log: &TraceLog<S>,
    tau: usize,
    cand: &CauseCandidate<S>,
    effect: &CausalFormula<S>,
    opts: CheckOpts,
) -> Result<Ac2bOutcome, EvalError> {
    let index = EffectIndex::build(log, effect)?;
    Ok(check_ac2b_with(log, &index, tau, cand, opts))
}

pub fn check_ac2b_with<S: Scalar>(
    log: &TraceLog<S>,
    index: &EffectIndex,
    tau: usize,
    cand: &CauseCandidate<S>,
    opts: CheckOpts,
) -> Ac2bOutcome {
    let sig = log.signature();
    let witness = log.trace(tau);
    let z_idx = resolve(sig, &cand.partition.z);
    let w_idx = resolve(sig, &cand.partition.w);
    let prefix = opts.equiv_prefix.then(|| cand.anchor() + 1);
    let mut checked = 0;
    for i in 0..log.len() {
        let t = log.trace(i);
        if !fires_in(sig, t, i, cand, index) {
            continue;
        }
        if !trace_equiv_idx(sig, witness, t, &z_idx, prefix) {
            continue;
        }
        if !w_idx.is_empty() && trace_equiv_idx(sig, witness, t, &w_idx, prefix) {
            continue;
        }
        checked += 1;
        if !index.ever(i) {
            return Ac2bOutcome::Counterexample { trace: i, checked };
        }
    }
    Ac2bOutcome::Holds { checked }
}

fn resolve<S: Scalar>(sig: &Signature<S>, vars: &BTreeSet<String>) -> Vec<usize> {
    vars.iter().filter_map(|v| sig.index_of(v)).collect()
}

/// Enumerates cause candidates in deterministic order: singletons first
/// (ascending step, then cause-variable list position, then log order of the
/// observing failing trace), then conjunctions of increasing size in
/// colexicographic order over the singleton list. Values are drawn only from
/// failing traces.
pub struct CandidateStream<'a, S: Scalar> {
    log: &'a TraceLog<S>,
    cause_vars: Vec<(usize, String)>,
    failing: Vec<usize>,
    partitions: Vec<Partition>,
    max_conjuncts: usize,
    // singleton enumeration state
    step: usize,
    var_pos: usize,
    trace_pos: usize,
    max_len: usize,
    seen: BTreeSet<(usize, usize, SingletonKey)>,
    singletons: Vec<CandidatePrim<S>>,
    // conjunction enumeration state
    size: usize,
    combo: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum SingletonKey {
    Bits(u64),
    Token(crate::value::Token),
}

impl<'a, S: Scalar> CandidateStream<'a, S> {
    /// `cause_vars` keeps the caller's order; it sub-orders candidates within
    /// one step. Failing traces are those in which the effect ever holds.
    pub fn new(
        log: &'a TraceLog<S>,
        effect_index: &EffectIndex,
        cause_vars: &[String],
        max_conjuncts: usize,
    ) -> Result<Self, PartitionError> {
        let sig = log.signature();
        let mut vars = Vec::new();
        for name in cause_vars {
            let idx = sig
                .index_of(name)
                .ok_or_else(|| PartitionError::UnknownVariable(name.clone()))?;
            if !sig.is_endogenous(idx) {
                return Err(PartitionError::NotEndogenous(name.clone()));
            }
            if !vars.iter().any(|(i, _)| *i == idx) {
                vars.push((idx, name.clone()));
            }
        }
        if vars.is_empty() {
            return Err(PartitionError::Empty);
        }
        let failing: Vec<usize> = (0..log.len()).filter(|&i| effect_index.ever(i)).collect();
        let max_len = failing.iter().map(|&i| log.trace(i).len()).max().unwrap_or(0);
        // Partitions depend only on the variable set; precompute one per
        // conjunction size over the full cause-variable set and per single
        // variable.
        let mut partitions = Vec::new();
        for (_, name) in &vars {
            partitions.push(derive_partition(sig, &BTreeSet::from([name.clone()]))?);
        }
        Ok(CandidateStream {
            log,
            cause_vars: vars,
            failing,
            partitions,
            max_conjuncts: max_conjuncts.max(1),
            step: 0,
            var_pos: 0,
            trace_pos: 0,
            max_len,
            seen: BTreeSet::new(),
            singletons: Vec::new(),
            size: 1,
            combo: Vec::new(),
        })
    }

    fn key_of(value: &Value<S>) -> SingletonKey {
        match value {
            Value::Continuous(v) => SingletonKey::Bits(v.canonical_bits()),
            Value::Discrete(t) => SingletonKey::Token(t.clone()),
        }
    }

    fn next_singleton(&mut self) -> Option<CauseCandidate<S>> {
        while self.step < self.max_len {
            while self.var_pos < self.cause_vars.len() {
                let (var, name) = self.cause_vars[self.var_pos].clone();
                while self.trace_pos < self.failing.len() {
                    let trace = self.log.trace(self.failing[self.trace_pos]);
                    self.trace_pos += 1;
                    if self.step >= trace.len() {
                        continue;
                    }
                    let value = trace.state(self.step).value(var).clone();
                    let key = (var, self.step, Self::key_of(&value));
                    if !self.seen.insert(key) {
                        continue;
                    }
                    let prim = CandidatePrim { var, name: name.clone(), step: self.step, value };
                    self.singletons.push(prim.clone());
                    let partition = self.partitions[self.var_pos].clone();
                    return Some(CauseCandidate { prims: vec![prim], partition });
                }
                self.trace_pos = 0;
                self.var_pos += 1;
            }
            self.var_pos = 0;
            self.step += 1;
        }
        None
    }

    fn next_conjunction(&mut self) -> Option<CauseCandidate<S>> {
        let sig = self.log.signature();
        loop {
            if self.size > self.max_conjuncts || self.singletons.len() < self.size {
                return None;
            }
            if self.combo.is_empty() {
                self.combo = (0..self.size).collect();
            } else if !colex_advance(&mut self.combo, self.singletons.len()) {
                self.size += 1;
                self.combo.clear();
                continue;
            }
            let prims: Vec<CandidatePrim<S>> =
                self.combo.iter().map(|&i| self.singletons[i].clone()).collect();
            // one equality per (variable, step)
            let mut slots: Vec<(usize, usize)> = prims.iter().map(|p| (p.var, p.step)).collect();
            slots.sort_unstable();
            slots.dedup();
            if slots.len() != prims.len() {
                continue;
            }
            let names: BTreeSet<String> = prims.iter().map(|p| p.name.clone()).collect();
            let partition = derive_partition(sig, &names).expect("cause vars validated");
            return Some(CauseCandidate { prims, partition });
        }
    }
}

impl<'a, S: Scalar> Iterator for CandidateStream<'a, S> {
    type Item = CauseCandidate<S>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.size == 1 {
            if let Some(c) = self.next_singleton() {
                return Some(c);
            }
            self.size = 2;
        }
        self.next_conjunction()
    }
}

/// Advance a k-subset of `0..n` in colexicographic order (largest member
/// grows last). Returns false when exhausted.
fn colex_advance(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in 0..k {
        let limit = if i + 1 < k { combo[i + 1] } else { n };
        if combo[i] + 1 < limit {
            combo[i] += 1;
            for (j, slot) in combo.iter_mut().enumerate().take(i) {
                *slot = j;
            }
            return true;
        }
    }
    false
}
