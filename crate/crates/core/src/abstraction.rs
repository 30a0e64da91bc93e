//! The two approximations that make the cause search scale: a seeded trace
//! subset (under-approximation) for the existential conditions, and a
//! state-merged model (over-approximation) for the universal one.
//!
//! Merging is grid quantization, not pairwise clustering: each concrete state
//! maps to a key of (step, candidate bit, effect bit, per-variable grid cell
//! for continuous causal-path variables, exact value for discrete ones), and
//! states sharing a key become one abstract state. States at different steps,
//! with different discrete causal-path values, or with different candidate or
//! effect satisfaction are therefore never merged, which keeps the universal
//! check on the abstract model meaningful. Refinement splits the merged
//! states along a spurious counterexample trace into singletons.

use std::collections::{BTreeSet, HashMap};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::formula::{CausalFormula, EvalError};
use crate::hp::{trace_equiv_idx, CauseCandidate, CheckOpts, EffectIndex};
use crate::scalar::Scalar;
use crate::signature::Domain;
use crate::trace::{State, TraceLog};
use crate::value::{Token, Value};

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("alpha must be in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("beta must be non-negative and finite")]
    BadBeta,
    #[error("cannot sample from an empty log")]
    EmptyLog,
    #[error("under-approximation already covers the whole log")]
    Exhausted,
    #[error("counterexample has no splittable state; it is genuine")]
    NoSplittableState,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A deterministic sample of the trace log.
#[derive(Debug, Clone)]
pub struct UnderApprox<S: Scalar> {
    selected: TraceLog<S>,
    selected_indices: Vec<usize>,
    permutation: Vec<usize>,
    alpha: f64,
    seed: u64,
}

/// Sample size for a fraction of `n` traces: `max(1, ceil(alpha * n))`, with
/// float dust snapped away so doubling 0.05 on 1000 traces yields exactly
/// 100.
fn sample_size(alpha: f64, n: usize) -> usize {
    let raw = alpha * n as f64;
    let snapped = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    (snapped as usize).clamp(1, n)
}

/// Deterministically sample `ceil(alpha * N)` traces: shuffle the trace
/// indices with a generator seeded by `seed`, take the prefix, and present it
/// in original log order.
pub fn under_approximate<S: Scalar>(
    log: &TraceLog<S>,
    alpha: f64,
    seed: u64,
) -> Result<UnderApprox<S>, AbstractionError> {
    if log.is_empty() {
        return Err(AbstractionError::EmptyLog);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(AbstractionError::BadAlpha(alpha));
    }
    let mut permutation: Vec<usize> = (0..log.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // explicit Fisher-Yates so the selection is stable across library versions
    for i in (1..permutation.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        permutation.swap(i, j);
    }
    Ok(build_sample(log, permutation, alpha, seed))
}

fn build_sample<S: Scalar>(
    log: &TraceLog<S>,
    permutation: Vec<usize>,
    alpha: f64,
    seed: u64,
) -> UnderApprox<S> {
    let k = sample_size(alpha, log.len());
    let mut selected_indices: Vec<usize> = permutation[..k].to_vec();
    selected_indices.sort_unstable();
    let selected = log.select(&selected_indices);
    UnderApprox { selected, selected_indices, permutation, alpha, seed }
}

impl<S: Scalar> UnderApprox<S> {
    pub fn selected(&self) -> &TraceLog<S> {
        &self.selected
    }

    /// Indices of the selected traces in the full log, ascending.
    pub fn selected_indices(&self) -> &[usize] {
        &self.selected_indices
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Double alpha (capped at 1.0) and extend the sample along the same
    /// shuffled order, so the previous selection is always retained. Errors
    /// with [`AbstractionError::Exhausted`] once the whole log is selected.
    pub fn refine(&self, full: &TraceLog<S>) -> Result<UnderApprox<S>, AbstractionError> {
        if self.selected_indices.len() >= full.len() {
            return Err(AbstractionError::Exhausted);
        }
        let mut alpha = self.alpha;
        let old_k = sample_size(alpha, full.len());
        while alpha < 1.0 && sample_size(alpha, full.len()) <= old_k {
            alpha = (alpha * 2.0).min(1.0);
        }
        Ok(build_sample(full, self.permutation.clone(), alpha, self.seed))
    }
}

/// One component of a merge key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KeyPart {
    /// Grid cell of a continuous causal-path variable.
    Cell(i64),
    /// Exact value bits (identity abstraction or split singleton).
    Exact(u64),
    /// Exact discrete value.
    Token(Token),
}

/// Merge key of an abstract state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub step: usize,
    pub candidate_bit: bool,
    pub effect_bit: bool,
    pub z_parts: Vec<KeyPart>,
}

/// A merged state: its key, a representative valuation (centroid of
/// continuous variables, first member's discrete values), and the concrete
/// member states.
#[derive(Debug, Clone)]
pub struct AbstractState<S: Scalar> {
    pub id: usize,
    pub key: StateKey,
    pub representative: State<S>,
    pub members: Vec<(usize, usize)>,
}

/// One distinct abstract trace: a sequence of abstract state ids together
/// with the concrete traces mapping onto it.
#[derive(Debug, Clone)]
pub struct AbstractTrace {
    pub sequence: Vec<usize>,
    pub concrete: Vec<usize>,
}

/// The state-merged over-approximation of a log, specific to one cause
/// candidate (whose satisfaction the merge key protects).
#[derive(Debug, Clone)]
pub struct AbstractModel<S: Scalar> {
    states: Vec<AbstractState<S>>,
    h_map: HashMap<(usize, usize), usize>,
    abstract_traces: Vec<Vec<usize>>,
    unique_traces: Vec<AbstractTrace>,
    beta: S,
    candidate: CauseCandidate<S>,
    z_idx: Vec<usize>,
    w_idx: Vec<usize>,
}

/// Outcome of the universal check on the abstract model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbstractAc2b {
    Holds { checked: usize },
    /// Index into [`AbstractModel::unique_traces`] of the first violating
    /// abstract trace.
    Counterexample { unique_trace: usize, checked: usize },
}

/// Build the over-approximation of `log` for `candidate` with grid width
/// `beta`. `beta = 0` yields the identity abstraction (exact values as
/// cells).
pub fn over_approximate<S: Scalar>(
    log: &TraceLog<S>,
    beta: S,
    candidate: &CauseCandidate<S>,
    effect: &CausalFormula<S>,
) -> Result<AbstractModel<S>, AbstractionError> {
    let index = EffectIndex::build(log, effect)?;
    over_approximate_with(log, &index, beta, candidate)
}

/// As [`over_approximate`], reusing a prebuilt effect satisfaction table.
pub fn over_approximate_with<S: Scalar>(
    log: &TraceLog<S>,
    effect_index: &EffectIndex,
    beta: S,
    candidate: &CauseCandidate<S>,
) -> Result<AbstractModel<S>, AbstractionError> {
    if beta < S::zero() || !beta.is_finite() {
        return Err(AbstractionError::BadBeta);
    }
    let sig = log.signature();
    let z_idx: Vec<usize> = candidate.partition.z.iter().filter_map(|v| sig.index_of(v)).collect();
    let w_idx: Vec<usize> = candidate.partition.w.iter().filter_map(|v| sig.index_of(v)).collect();
    let anchor = candidate.anchor();

    let mut key_to_id: HashMap<StateKey, usize> = HashMap::new();
    let mut states: Vec<AbstractState<S>> = Vec::new();
    let mut h_map = HashMap::new();
    let mut abstract_traces = Vec::with_capacity(log.len());

    for (i, trace) in log.traces().iter().enumerate() {
        let fires = candidate.holds_in(sig, trace);
        let mut seq = Vec::with_capacity(trace.len());
        for (j, state) in trace.states().iter().enumerate() {
            let key = StateKey {
                step: j,
                candidate_bit: fires && j == anchor,
                effect_bit: effect_index.holds_at(i, j),
                z_parts: z_idx.iter().map(|&v| key_part(sig.var(v).domain.clone(), state.value(v), beta)).collect(),
            };
            let id = match key_to_id.get(&key) {
                Some(&id) => id,
                None => {
                    let id = states.len();
                    key_to_id.insert(key.clone(), id);
                    states.push(AbstractState {
                        id,
                        key,
                        representative: state.clone(),
                        members: Vec::new(),
                    });
                    id
                }
            };
            states[id].members.push((i, j));
            h_map.insert((i, j), id);
            seq.push(id);
        }
        abstract_traces.push(seq);
    }
    compute_representatives(log, &mut states);
    let unique_traces = group_unique(&abstract_traces);
    Ok(AbstractModel {
        states,
        h_map,
        abstract_traces,
        unique_traces,
        beta,
        candidate: candidate.clone(),
        z_idx,
        w_idx,
    })
}

fn key_part<S: Scalar>(domain: Domain<S>, value: &Value<S>, beta: S) -> KeyPart {
    match value {
        Value::Discrete(t) => KeyPart::Token(t.clone()),
        Value::Continuous(v) => {
            if beta <= S::zero() {
                return KeyPart::Exact(v.canonical_bits());
            }
            let (lo, width) = match domain {
                Domain::Continuous { lo, hi } => (lo, hi - lo),
                Domain::Discrete { .. } => unreachable!("continuous value in discrete domain"),
            };
            let norm = if width > S::zero() { (*v - lo) / width } else { S::zero() };
            let cell = (norm / beta).floor().to_f64().unwrap_or(0.0);
            KeyPart::Cell(cell as i64)
        }
    }
}

fn compute_representatives<S: Scalar>(log: &TraceLog<S>, states: &mut [AbstractState<S>]) {
    for state in states.iter_mut() {
        if state.members.len() < 2 {
            continue;
        }
        let n = S::from_usize(state.members.len()).expect("member count fits scalar");
        let mut values: Vec<Value<S>> = state.representative.values().to_vec();
        for (v, slot) in values.iter_mut().enumerate() {
            if let Value::Continuous(_) = slot {
                let mut sum = S::zero();
                for &(ti, si) in &state.members {
                    sum = sum + log.trace(ti).state(si).value(v).as_continuous().unwrap();
                }
                *slot = Value::Continuous(sum / n);
            }
        }
        state.representative = State::new(values);
    }
}

fn group_unique(abstract_traces: &[Vec<usize>]) -> Vec<AbstractTrace> {
    let mut by_seq: HashMap<&[usize], usize> = HashMap::new();
    let mut unique: Vec<AbstractTrace> = Vec::new();
    for (i, seq) in abstract_traces.iter().enumerate() {
        match by_seq.get(seq.as_slice()) {
            Some(&u) => unique[u].concrete.push(i),
            None => {
                by_seq.insert(seq.as_slice(), unique.len());
                unique.push(AbstractTrace { sequence: seq.clone(), concrete: vec![i] });
            }
        }
    }
    unique
}

impl<S: Scalar> AbstractModel<S> {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[AbstractState<S>] {
        &self.states
    }

    pub fn beta(&self) -> S {
        self.beta
    }

    pub fn candidate(&self) -> &CauseCandidate<S> {
        &self.candidate
    }

    /// Abstract state id of a concrete state. Total over the input log.
    pub fn image(&self, trace: usize, step: usize) -> Option<usize> {
        self.h_map.get(&(trace, step)).copied()
    }

    /// The abstract trace (id sequence) of a concrete trace.
    pub fn abstract_trace(&self, trace: usize) -> &[usize] {
        &self.abstract_traces[trace]
    }

    pub fn unique_traces(&self) -> &[AbstractTrace] {
        &self.unique_traces
    }

    fn z_key_equal(&self, a: usize, b: usize) -> bool {
        self.states[a].key.z_parts == self.states[b].key.z_parts
    }

    fn seq_z_equiv(&self, a: &[usize], b: &[usize], prefix: Option<usize>) -> bool {
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
        (0..upto).all(|j| self.z_key_equal(a[j], b[j]))
    }

    /// The universal sufficiency check over distinct abstract traces. The
    /// witness is re-anchored through its image. W-disequivalence (when W is
    /// non-empty) is decided on the concretization, since off-path variables
    /// are deliberately blurred by the merge key.
    pub fn ac2b(&self, log: &TraceLog<S>, witness: usize, opts: CheckOpts) -> AbstractAc2b {
        let sig = log.signature();
        let anchor = self.candidate.anchor();
        let witness_seq = &self.abstract_traces[witness];
        let witness_trace = log.trace(witness);
        let prefix = opts.equiv_prefix.then_some(anchor + 1);
        let mut checked = 0;
        for (u, at) in self.unique_traces.iter().enumerate() {
            let seq = &at.sequence;
            if anchor >= seq.len() || !self.states[seq[anchor]].key.candidate_bit {
                continue;
            }
            if (0..anchor).any(|j| self.states[seq[j]].key.effect_bit) {
                continue;
            }
            if !self.seq_z_equiv(witness_seq, seq, prefix) {
                continue;
            }
            if !self.w_idx.is_empty()
                && !at.concrete.iter().any(|&ci| {
                    !trace_equiv_idx(sig, witness_trace, log.trace(ci), &self.w_idx, prefix)
                })
            {
                continue;
            }
            checked += 1;
            if !seq.iter().any(|&id| self.states[id].key.effect_bit) {
                return AbstractAc2b::Counterexample { unique_trace: u, checked };
            }
        }
        AbstractAc2b::Holds { checked }
    }

    /// Split every multi-member state along the counterexample trace into
    /// singleton states. Errors when all of them are already singletons,
    /// which certifies the counterexample as genuine.
    pub fn refine_over(&self, log: &TraceLog<S>, cex: &AbstractTrace) -> Result<AbstractModel<S>, AbstractionError> {
        let to_split: BTreeSet<usize> = cex
            .sequence
            .iter()
            .copied()
            .filter(|&id| self.states[id].members.len() > 1)
            .collect();
        if to_split.is_empty() {
            return Err(AbstractionError::NoSplittableState);
        }
        let mut states: Vec<AbstractState<S>> = Vec::with_capacity(self.states.len() + cex.sequence.len());
        let mut h_map = HashMap::with_capacity(self.h_map.len());
        for old in &self.states {
            if !to_split.contains(&old.id) {
                let id = states.len();
                for &(ti, si) in &old.members {
                    h_map.insert((ti, si), id);
                }
                states.push(AbstractState {
                    id,
                    key: old.key.clone(),
                    representative: old.representative.clone(),
                    members: old.members.clone(),
                });
            } else {
                for &(ti, si) in &old.members {
                    let id = states.len();
                    let concrete = log.trace(ti).state(si).clone();
                    let mut key = old.key.clone();
                    // singletons carry exact values so further comparisons
                    // are as fine as the concrete states
                    key.z_parts = self
                        .z_idx
                        .iter()
                        .map(|&v| match concrete.value(v) {
                            Value::Discrete(t) => KeyPart::Token(t.clone()),
                            Value::Continuous(x) => KeyPart::Exact(x.canonical_bits()),
                        })
                        .collect();
                    h_map.insert((ti, si), id);
                    states.push(AbstractState { id, key, representative: concrete, members: vec![(ti, si)] });
                }
            }
        }
        let abstract_traces: Vec<Vec<usize>> = (0..log.len())
            .map(|i| (0..log.trace(i).len()).map(|j| h_map[&(i, j)]).collect())
            .collect();
        let unique_traces = group_unique(&abstract_traces);
        Ok(AbstractModel {
            states,
            h_map,
            abstract_traces,
            unique_traces,
            beta: self.beta,
            candidate: self.candidate.clone(),
            z_idx: self.z_idx.clone(),
            w_idx: self.w_idx.clone(),
        })
    }

    /// Check the merge-key invariants pairwise over every state's members:
    /// totality of the mapping, exact agreement on discrete causal-path
    /// values and on the candidate/effect bits, and continuous causal-path
    /// values within one grid cell. Returns a description of the first
    /// violation.
    pub fn validate_merge_invariants(&self, log: &TraceLog<S>) -> Result<(), String> {
        let sig = log.signature();
        let mut covered = 0usize;
        for (i, trace) in log.traces().iter().enumerate() {
            for j in 0..trace.len() {
                let id = self
                    .h_map
                    .get(&(i, j))
                    .ok_or_else(|| format!("state ({i}, {j}) has no abstract image"))?;
                covered += 1;
                if !self.states[*id].members.contains(&(i, j)) {
                    return Err(format!("state ({i}, {j}) missing from members of its image"));
                }
            }
        }
        let member_total: usize = self.states.iter().map(|s| s.members.len()).sum();
        if covered != member_total {
            return Err(format!("{member_total} members recorded for {covered} concrete states"));
        }
        for state in &self.states {
            for &(ti, si) in &state.members {
                let concrete = log.trace(ti).state(si);
                if si != state.key.step {
                    return Err(format!("state ({ti}, {si}) merged across steps"));
                }
                for (pos, &v) in self.z_idx.iter().enumerate() {
                    let expected = key_part(sig.var(v).domain.clone(), concrete.value(v), self.beta);
                    let actual = &state.key.z_parts[pos];
                    let ok = match (&expected, actual) {
                        // split singletons carry exact parts finer than cells
                        (KeyPart::Cell(_), KeyPart::Exact(bits)) => {
                            concrete.value(v).as_continuous().map(|x| x.canonical_bits()) == Some(*bits)
                        }
                        (e, a) => e == a,
                    };
                    if !ok {
                        return Err(format!(
                            "state ({ti}, {si}) disagrees with its key on `{}`",
                            sig.name(v)
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A concrete intervention: force the listed variables to the listed values.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention<S: Scalar> {
    pub assignments: Vec<(usize, Value<S>)>,
}

/// The image of a concrete intervention in the abstract model.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractIntervention<S: Scalar> {
    /// Per intervened variable, the shared abstract value (representative).
    pub assignments: Vec<(usize, Value<S>)>,
    /// Abstract states whose restriction equals the intervention image.
    pub states: Vec<usize>,
}

/// Map a concrete intervention into the abstract model, or return `None`
/// when it has no exact image. The image exists when the concrete
/// restriction set is a union of whole abstract states whose restrictions
/// agree, and no other abstract state shares that restriction.
pub fn map_intervention<S: Scalar>(
    iv: &Intervention<S>,
    model: &AbstractModel<S>,
    log: &TraceLog<S>,
) -> Option<AbstractIntervention<S>> {
    let sig = log.signature();
    // Rst(Sigma | x): all concrete states whose restriction matches
    let mut restricted: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (i, trace) in log.traces().iter().enumerate() {
        for j in 0..trace.len() {
            let state = trace.state(j);
            if iv
                .assignments
                .iter()
                .all(|(v, x)| sig.values_equal(*v, state.value(*v), x))
            {
                restricted.insert((i, j));
            }
        }
    }
    if restricted.is_empty() {
        return None;
    }
    let image: BTreeSet<usize> = restricted.iter().map(|&(i, j)| model.image(i, j).unwrap()).collect();
    // the preimage of the image must add nothing
    let mut preimage: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &id in &image {
        preimage.extend(model.states()[id].members.iter().copied());
    }
    if preimage != restricted {
        return None;
    }
    // all image states must agree on the restricted coordinates
    let first = *image.iter().next().unwrap();
    for &id in &image {
        for (v, _) in &iv.assignments {
            let a = model.states()[first].representative.value(*v);
            let b = model.states()[id].representative.value(*v);
            if !sig.values_equal(*v, a, b) {
                return None;
            }
        }
    }
    // and no outside state may share that restriction
    let reference = &model.states()[first].representative;
    for state in model.states() {
        if image.contains(&state.id) {
            continue;
        }
        if iv
            .assignments
            .iter()
            .all(|(v, _)| sig.values_equal(*v, state.representative.value(*v), reference.value(*v)))
        {
            return None;
        }
    }
    let assignments = iv
        .assignments
        .iter()
        .map(|(v, _)| (*v, reference.value(*v).clone()))
        .collect();
    Some(AbstractIntervention { assignments, states: image.into_iter().collect() })
}

/// The partial map from concrete interventions to abstract ones, alongside
/// the interventions that have no image.
#[derive(Debug, Clone)]
pub struct InterventionMap<S: Scalar> {
    pub defined: Vec<(Intervention<S>, AbstractIntervention<S>)>,
    pub undefined: Vec<Intervention<S>>,
}

impl<S: Scalar> InterventionMap<S> {
    pub fn build(model: &AbstractModel<S>, log: &TraceLog<S>, interventions: &[Intervention<S>]) -> Self {
        let mut defined = Vec::new();
        let mut undefined = Vec::new();
        for iv in interventions {
            match map_intervention(iv, model, log) {
                Some(ai) => defined.push((iv.clone(), ai)),
                None => undefined.push(iv.clone()),
            }
        }
        InterventionMap { defined, undefined }
    }
}
