//! Discovery of actual causes of an observed effect — typically a safety
//! failure — inside a log of finite execution traces.
//!
//! The library ingests a trace log (CSV plus a JSON signature sidecar),
//! evaluates state-based causal formulas with finite-trace temporal
//! operators, and searches for a cause candidate satisfying the three
//! trace-level conditions AC1, AC2(a), and AC2(b): the cause and then the
//! effect actually occur; some counterfactual trace avoids both; and every
//! trace agreeing with the witness on the causal path also exhibits the
//! effect. Two approximations make the search scale: a seeded
//! under-approximation (a subset of traces, grown on demand) discharges the
//! existential conditions, and a state-merged over-approximation (grid
//! quantization controlled by a width parameter) discharges the universal
//! one, with counterexample-guided refinement in between.
//!
//! Everything numeric is generic over the [`Scalar`] type; `f64` aliases for
//! the main types live at the crate root.

pub mod abstraction;
pub mod engine;
pub mod formula;
pub mod generators;
pub mod hp;
pub mod scalar;
pub mod signature;
pub mod testsupport;
pub mod trace;
pub mod value;

pub use formula::{CausalFormula, Cmp, EvalError, FormulaParseError, PrimitiveEvent, TimeIndex};
pub use hp::{
    check_ac1, check_ac2a, check_ac2b, derive_partition, trace_equiv, Ac2bOutcome, CandidateStream,
    CauseCandidate, CheckOpts, Partition,
};
pub use scalar::Scalar;
pub use signature::{Domain, Signature, SignatureError, VarKind, VariableDecl};
pub use trace::{state_distance, IngestMode, State, Trace, TraceLog, TraceLogError};
pub use value::{Token, Value};

/// `f64` instantiations of the main types.
pub type Signature64 = signature::Signature<f64>;
pub type State64 = trace::State<f64>;
pub type Trace64 = trace::Trace<f64>;
pub type TraceLog64 = trace::TraceLog<f64>;
pub type CausalFormula64 = formula::CausalFormula<f64>;
pub type CauseCandidate64 = hp::CauseCandidate<f64>;
pub type Value64 = value::Value<f64>;

/// `f32` instantiations of the main types.
pub type Signature32 = signature::Signature<f32>;
pub type State32 = trace::State<f32>;
pub type Trace32 = trace::Trace<f32>;
pub type TraceLog32 = trace::TraceLog<f32>;
pub type CausalFormula32 = formula::CausalFormula<f32>;
pub type CauseCandidate32 = hp::CauseCandidate<f32>;
pub type Value32 = value::Value<f32>;
