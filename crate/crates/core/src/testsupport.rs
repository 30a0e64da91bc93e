//! Independent oracles and random-input builders for tests.
//!
//! Everything here re-derives its answers from first principles with plain
//! nested loops: formula evaluation recurses over the AST and compares raw
//! values, the condition checks expand their quantifiers literally, and
//! nothing calls into the checking code under test. Kept out of `#[cfg(test)]`
//! so integration tests of dependent crates can use the same oracles.

#![doc(hidden)]

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::formula::{CausalFormula, Cmp, EvalError, TimeIndex};
use crate::hp::{Ac2bOutcome, CauseCandidate, CheckOpts};
use crate::scalar::Scalar;
use crate::signature::{Domain, Signature, VarKind, VariableDecl};
use crate::trace::{State, Trace, TraceLog};
use crate::value::Value;

/// Literal recursive evaluation of a formula at one step.
pub fn bf_eval<S: Scalar>(
    f: &CausalFormula<S>,
    sig: &Signature<S>,
    trace: &Trace<S>,
    step: usize,
) -> Result<bool, EvalError> {
    if step >= trace.len() {
        return Err(EvalError::StepOutOfRange { step, len: trace.len() });
    }
    match f {
        CausalFormula::Not(inner) => Ok(!bf_eval(inner, sig, trace, step)?),
        CausalFormula::And(a, b) => {
            let x = bf_eval(a, sig, trace, step)?;
            let y = bf_eval(b, sig, trace, step)?;
            Ok(x && y)
        }
        CausalFormula::Or(a, b) => {
            let x = bf_eval(a, sig, trace, step)?;
            let y = bf_eval(b, sig, trace, step)?;
            Ok(x || y)
        }
        CausalFormula::Prim(p) => {
            let at = match p.index {
                TimeIndex::Step(k) => {
                    if k >= trace.len() {
                        return Err(EvalError::IndexOutOfRange {
                            var: p.name.clone(),
                            index: k,
                            len: trace.len(),
                        });
                    }
                    k
                }
                TimeIndex::Last => trace.len() - 1,
                TimeIndex::Current => step,
            };
            Ok(bf_compare(sig, p.var, trace.state(at).value(p.var), p.cmp, &p.value))
        }
    }
}

fn bf_compare<S: Scalar>(sig: &Signature<S>, var: usize, observed: &Value<S>, cmp: Cmp, lit: &Value<S>) -> bool {
    let eq = match (observed, lit) {
        (Value::Continuous(x), Value::Continuous(y)) => {
            let d = if *x > *y { *x - *y } else { *y - *x };
            d <= sig.tolerance(var)
        }
        (Value::Discrete(a), Value::Discrete(b)) => a == b,
        _ => false,
    };
    match cmp {
        Cmp::Eq => eq,
        Cmp::Ne => !eq,
        _ => match (observed, lit) {
            (Value::Continuous(x), Value::Continuous(y)) => match cmp {
                Cmp::Lt => x < y,
                Cmp::Le => x <= y,
                Cmp::Gt => x > y,
                Cmp::Ge => x >= y,
                _ => unreachable!(),
            },
            _ => false,
        },
    }
}

/// `[] f` by explicit index scan.
pub fn bf_always<S: Scalar>(
    f: &CausalFormula<S>,
    sig: &Signature<S>,
    trace: &Trace<S>,
) -> Result<bool, EvalError> {
    let mut all = true;
    for i in 0..trace.len() {
        all = all && bf_eval(f, sig, trace, i)?;
    }
    Ok(all)
}

/// `<> f` by explicit index scan.
pub fn bf_eventually<S: Scalar>(
    f: &CausalFormula<S>,
    sig: &Signature<S>,
    trace: &Trace<S>,
) -> Result<bool, EvalError> {
    let mut any = false;
    for i in 0..trace.len() {
        any = any || bf_eval(f, sig, trace, i)?;
    }
    Ok(any)
}

/// `p U q` by explicit double index scan.
pub fn bf_until<S: Scalar>(
    p: &CausalFormula<S>,
    q: &CausalFormula<S>,
    sig: &Signature<S>,
    trace: &Trace<S>,
) -> Result<bool, EvalError> {
    for i in 0..trace.len() {
        let q_here = bf_eval(q, sig, trace, i)?;
        let mut p_before = true;
        for j in 0..i {
            p_before = p_before && bf_eval(p, sig, trace, j)?;
        }
        if q_here && p_before {
            return Ok(true);
        }
    }
    Ok(false)
}

fn bf_values_equal<S: Scalar>(sig: &Signature<S>, var: usize, a: &Value<S>, b: &Value<S>) -> bool {
    match (a, b) {
        (Value::Continuous(x), Value::Continuous(y)) => {
            let d = if *x > *y { *x - *y } else { *y - *x };
            d <= sig.tolerance(var)
        }
        (Value::Discrete(x), Value::Discrete(y)) => x == y,
        _ => false,
    }
}

/// The candidate viewed as a state predicate: it holds at exactly its anchor
/// step, in traces where every conjunct matches.
fn bf_candidate_at<S: Scalar>(
    sig: &Signature<S>,
    cand: &CauseCandidate<S>,
    trace: &Trace<S>,
    step: usize,
) -> bool {
    let anchor = cand.prims.iter().map(|p| p.step).max().unwrap_or(0);
    if step != anchor {
        return false;
    }
    cand.prims.iter().all(|p| {
        p.step < trace.len() && bf_values_equal(sig, p.var, trace.state(p.step).value(p.var), &p.value)
    })
}

fn bf_equiv<S: Scalar>(
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
        for &v in vars {
            if !bf_values_equal(sig, v, a.state(step).value(v), b.state(step).value(v)) {
                return false;
            }
        }
    }
    true
}

fn bf_same_context<S: Scalar>(sig: &Signature<S>, a: &Trace<S>, b: &Trace<S>) -> bool {
    (0..sig.len())
        .filter(|&v| sig.var(v).kind == VarKind::Exogenous)
        .all(|v| bf_values_equal(sig, v, a.state(0).value(v), b.state(0).value(v)))
}

fn bf_vars<S: Scalar>(sig: &Signature<S>, names: &std::collections::BTreeSet<String>) -> Vec<usize> {
    names.iter().filter_map(|n| sig.index_of(n)).collect()
}

/// AC1 by literal expansion: the first trace with some step i where the
/// candidate-and-eventually-effect holds and the effect is false at every
/// earlier step.
pub fn bf_check_ac1<S: Scalar>(
    log: &TraceLog<S>,
    cand: &CauseCandidate<S>,
    effect: &CausalFormula<S>,
) -> Result<Option<usize>, EvalError> {
    let sig = log.signature();
    for t in 0..log.len() {
        let trace = log.trace(t);
        for i in 0..trace.len() {
            if !bf_candidate_at(sig, cand, trace, i) {
                continue;
            }
            let mut sometime_after = false;
            for k in i..trace.len() {
                sometime_after = sometime_after || bf_eval(effect, sig, trace, k)?;
            }
            if !sometime_after {
                continue;
            }
            let mut clear_before = true;
            for j in 0..i {
                clear_before = clear_before && !bf_eval(effect, sig, trace, j)?;
            }
            if clear_before {
                return Ok(Some(t));
            }
        }
    }
    Ok(None)
}

/// AC2(a) by literal expansion.
pub fn bf_check_ac2a<S: Scalar>(
    log: &TraceLog<S>,
    tau: usize,
    cand: &CauseCandidate<S>,
    effect: &CausalFormula<S>,
    opts: CheckOpts,
) -> Result<Option<usize>, EvalError> {
    let sig = log.signature();
    let witness = log.trace(tau);
    let z = bf_vars(sig, &cand.partition.z);
    let w = bf_vars(sig, &cand.partition.w);
    let anchor = cand.prims.iter().map(|p| p.step).max().unwrap_or(0);
    let prefix = if opts.equiv_prefix { Some(anchor + 1) } else { None };
    for t in 0..log.len() {
        let trace = log.trace(t);
        if opts.same_context && !bf_same_context(sig, witness, trace) {
            continue;
        }
        let mut never_either = true;
        for i in 0..trace.len() {
            never_either = never_either
                && !bf_candidate_at(sig, cand, trace, i)
                && !bf_eval(effect, sig, trace, i)?;
        }
        if !never_either {
            continue;
        }
        if !bf_equiv(sig, witness, trace, &z, prefix) || !bf_equiv(sig, witness, trace, &w, prefix) {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// AC2(b) by literal expansion of the universal quantifier.
pub fn bf_check_ac2b<S: Scalar>(
    log: &TraceLog<S>,
    tau: usize,
    cand: &CauseCandidate<S>,
    effect: &CausalFormula<S>,
    opts: CheckOpts,
) -> Result<Ac2bOutcome, EvalError> {
    let sig = log.signature();
    let witness = log.trace(tau);
    let z = bf_vars(sig, &cand.partition.z);
    let w = bf_vars(sig, &cand.partition.w);
    let anchor = cand.prims.iter().map(|p| p.step).max().unwrap_or(0);
    let prefix = if opts.equiv_prefix { Some(anchor + 1) } else { None };
    let mut checked = 0;
    for t in 0..log.len() {
        let trace = log.trace(t);
        // premise: (!phi_e U phi_c) via the candidate's anchored reading
        let mut premise_until = false;
        for i in 0..trace.len() {
            if !bf_candidate_at(sig, cand, trace, i) {
                continue;
            }
            let mut clear_before = true;
            for j in 0..i {
                clear_before = clear_before && !bf_eval(effect, sig, trace, j)?;
            }
            premise_until = premise_until || clear_before;
        }
        if !premise_until {
            continue;
        }
        if !bf_equiv(sig, witness, trace, &z, prefix) {
            continue;
        }
        if !w.is_empty() && bf_equiv(sig, witness, trace, &w, prefix) {
            continue;
        }
        checked += 1;
        if !bf_eventually(effect, sig, trace)? {
            return Ok(Ac2bOutcome::Counterexample { trace: t, checked });
        }
    }
    Ok(Ac2bOutcome::Holds { checked })
}

/// Deterministic random-input builders for property and oracle tests.
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n.max(1) as u64) as usize
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.next_u64() % 100 < percent
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }
}

/// A small mixed signature: 2-4 endogenous variables (continuous and
/// discrete), 0-2 exogenous, and a random acyclic-ish edge set.
pub fn random_signature(rng: &mut Rng) -> Signature<f64> {
    loop {
        let n_endo = 2 + rng.below(3);
        let n_exo = rng.below(3);
        let mut vars: Vec<VariableDecl<f64>> = Vec::new();
        for i in 0..n_endo {
            let name = format!("v{i}");
            if rng.chance(50) {
                let mut decl = VariableDecl::continuous(&name, VarKind::Endogenous, -1.0, 1.0);
                decl.tolerance = Some(if rng.chance(50) { 0.0 } else { 1e-3 });
                vars.push(decl);
            } else {
                vars.push(VariableDecl::discrete_ints(&name, VarKind::Endogenous, &[0, 1, 2]));
            }
        }
        for i in 0..n_exo {
            vars.push(VariableDecl::continuous(&format!("u{i}"), VarKind::Exogenous, -1.0, 1.0));
        }
        let mut edges = Vec::new();
        for a in 0..n_endo {
            for b in 0..n_endo {
                if a != b && rng.chance(30) {
                    edges.push((format!("v{a}"), format!("v{b}")));
                }
            }
        }
        if let Ok(sig) = Signature::new(vars, edges) {
            return sig;
        }
    }
}

fn random_value(rng: &mut Rng, domain: &Domain<f64>) -> Value<f64> {
    match domain {
        Domain::Continuous { lo, hi } => {
            // a coarse lattice so coincidences (equal values across traces)
            // actually happen
            let steps = 4.0;
            let k = rng.below(5) as f64;
            Value::Continuous(lo + (hi - lo) * k / steps)
        }
        Domain::Discrete { values } => Value::Discrete(values[rng.below(values.len())].clone()),
    }
}

/// A random log over `sig`: up to `max_traces` traces of up to `max_len`
/// steps, values drawn from a coarse lattice so traces collide often.
pub fn random_log(rng: &mut Rng, sig: &Signature<f64>, max_traces: usize, max_len: usize) -> TraceLog<f64> {
    let n = 1 + rng.below(max_traces);
    let equal_lengths = rng.chance(50);
    let shared_len = 1 + rng.below(max_len);
    let mut traces = Vec::with_capacity(n);
    for t in 0..n {
        let len = if equal_lengths { shared_len } else { 1 + rng.below(max_len) };
        let mut states = Vec::with_capacity(len);
        for _ in 0..len {
            let values = (0..sig.len())
                .map(|v| random_value(rng, &sig.var(v).domain))
                .collect();
            states.push(State::new(values));
        }
        traces.push(Trace::new(format!("r{t}"), states));
    }
    TraceLog::new(sig.clone(), traces).expect("random log is valid")
}

/// A random state-based formula of depth <= 3. Concrete indices stay below
/// `min_len` so evaluation never errors.
pub fn random_formula(rng: &mut Rng, sig: &Signature<f64>, min_len: usize, depth: usize) -> CausalFormula<f64> {
    use crate::formula::PrimitiveEvent;
    if depth == 0 || rng.chance(40) {
        let var = rng.below(sig.len());
        let decl = sig.var(var);
        let cmp = match &decl.domain {
            Domain::Discrete { .. } => {
                if rng.chance(50) {
                    Cmp::Eq
                } else {
                    Cmp::Ne
                }
            }
            Domain::Continuous { .. } => {
                [Cmp::Eq, Cmp::Ne, Cmp::Lt, Cmp::Le, Cmp::Gt, Cmp::Ge][rng.below(6)]
            }
        };
        let index = match rng.below(3) {
            0 => TimeIndex::Current,
            1 => TimeIndex::Last,
            _ => TimeIndex::Step(rng.below(min_len.max(1))),
        };
        let value = random_value(rng, &decl.domain);
        return CausalFormula::Prim(PrimitiveEvent {
            var,
            name: decl.name.clone(),
            index,
            cmp,
            value,
        });
    }
    match rng.below(3) {
        0 => CausalFormula::Not(Box::new(random_formula(rng, sig, min_len, depth - 1))),
        1 => CausalFormula::And(
            Box::new(random_formula(rng, sig, min_len, depth - 1)),
            Box::new(random_formula(rng, sig, min_len, depth - 1)),
        ),
        _ => CausalFormula::Or(
            Box::new(random_formula(rng, sig, min_len, depth - 1)),
            Box::new(random_formula(rng, sig, min_len, depth - 1)),
        ),
    }
}

/// A random cause candidate over endogenous variables, with values picked
/// from observed states so satisfying traces exist.
pub fn random_candidate(rng: &mut Rng, log: &TraceLog<f64>, max_prims: usize) -> Option<CauseCandidate<f64>> {
    use crate::hp::{derive_partition, CandidatePrim};
    let sig = log.signature();
    let endo: Vec<usize> = (0..sig.len()).filter(|&v| sig.is_endogenous(v)).collect();
    if endo.is_empty() || log.is_empty() {
        return None;
    }
    let n_prims = 1 + rng.below(max_prims);
    let mut prims: Vec<CandidatePrim<f64>> = Vec::new();
    for _ in 0..n_prims {
        let trace = log.trace(rng.below(log.len()));
        // bias toward step 0: anchored conditions are satisfiable far more
        // often when nothing has to precede the anchor
        let step = if rng.chance(60) { 0 } else { rng.below(trace.len()) };
        let var = endo[rng.below(endo.len())];
        if prims.iter().any(|p| p.var == var && p.step == step) {
            continue;
        }
        prims.push(CandidatePrim {
            var,
            name: sig.name(var).to_string(),
            step,
            value: trace.state(step).value(var).clone(),
        });
    }
    let names: std::collections::BTreeSet<String> = prims.iter().map(|p| p.name.clone()).collect();
    let partition = derive_partition(sig, &names).ok()?;
    Some(CauseCandidate { prims, partition })
}
