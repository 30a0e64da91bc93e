//! Variable declarations for a trace log: the exogenous/endogenous split,
//! per-variable domains and tolerances, and the dependency edges between
//! variables.
//!
//! A signature arrives as a JSON sidecar document next to the trace CSV. An
//! edge `[parent, child]` states that the parent's value at one step
//! influences the child's value at the next step, so feedback pairs such as
//! `vel -> pos` together with `pos -> vel` are well-formed; only self-edges
//! are rejected as cyclic.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::value::{Token, Value};

/// Sidecar schema version understood by this crate.
pub const SIGNATURE_FORMAT_VERSION: u32 = 1;

/// Default equality slack for continuous variables when the sidecar omits one.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("sidecar is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format_version {0} (expected {SIGNATURE_FORMAT_VERSION})")]
    FormatVersion(u32),
    #[error("signature declares no variables")]
    EmptySignature,
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("variable `{name}`: malformed domain: {reason}")]
    MalformedDomain { name: String, reason: String },
    #[error("variable `{name}`: tolerance must be {expected}")]
    BadTolerance { name: String, expected: &'static str },
    #[error("dependency edge references undeclared variable `{0}`")]
    UndeclaredEdgeVariable(String),
    #[error("cyclic dependency: variable `{0}` depends on itself")]
    CyclicDependency(String),
    #[error("duplicate dependency edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("dependency edge child `{0}` is not endogenous")]
    EdgeIntoExogenous(String),
}

/// Whether a variable is set by the environment or by the system under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Exogenous,
    Endogenous,
}

/// Value domain of a variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound = "S: Scalar")]
pub enum Domain<S: Scalar> {
    Continuous { lo: S, hi: S },
    Discrete { values: Vec<Token> },
}

impl<S: Scalar> Domain<S> {
    pub fn is_continuous(&self) -> bool {
        matches!(self, Domain::Continuous { .. })
    }

    /// Width `hi - lo` of a continuous domain.
    pub fn width(&self) -> Option<S> {
        match self {
            Domain::Continuous { lo, hi } => Some(*hi - *lo),
            Domain::Discrete { .. } => None,
        }
    }

    pub fn contains(&self, value: &Value<S>) -> bool {
        match (self, value) {
            (Domain::Continuous { lo, hi }, Value::Continuous(v)) => *lo <= *v && *v <= *hi,
            (Domain::Discrete { values }, Value::Discrete(t)) => values.contains(t),
            _ => false,
        }
    }
}

/// One declared variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct VariableDecl<S: Scalar> {
    pub name: String,
    pub kind: VarKind,
    pub domain: Domain<S>,
    /// Equality slack for continuous variables; exactly zero for discrete.
    /// Defaults to 1e-6 for continuous variables and 0 for discrete ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<S>,
}

impl<S: Scalar> VariableDecl<S> {
    pub fn continuous(name: &str, kind: VarKind, lo: f64, hi: f64) -> Self {
        VariableDecl {
            name: name.to_string(),
            kind,
            domain: Domain::Continuous {
                lo: S::from_f64_lossy(lo),
                hi: S::from_f64_lossy(hi),
            },
            tolerance: None,
        }
    }

    pub fn discrete_ints(name: &str, kind: VarKind, values: &[i64]) -> Self {
        VariableDecl {
            name: name.to_string(),
            kind,
            domain: Domain::Discrete {
                values: values.iter().map(|v| Token::Int(*v)).collect(),
            },
            tolerance: Some(S::zero()),
        }
    }

    fn validate(&self) -> Result<S, SignatureError> {
        match &self.domain {
            Domain::Continuous { lo, hi } => {
                if *lo > *hi || lo.is_nan() || hi.is_nan() {
                    return Err(SignatureError::MalformedDomain {
                        name: self.name.clone(),
                        reason: format!("lo {lo} > hi {hi}"),
                    });
                }
                let tol = self.tolerance.unwrap_or_else(|| S::from_f64_lossy(DEFAULT_TOLERANCE));
                if tol < S::zero() || !tol.is_finite() {
                    return Err(SignatureError::BadTolerance {
                        name: self.name.clone(),
                        expected: "a finite non-negative real",
                    });
                }
                Ok(tol)
            }
            Domain::Discrete { values } => {
                if values.is_empty() {
                    return Err(SignatureError::MalformedDomain {
                        name: self.name.clone(),
                        reason: "discrete value set is empty".to_string(),
                    });
                }
                let tol = self.tolerance.unwrap_or_else(S::zero);
                if tol != S::zero() {
                    return Err(SignatureError::BadTolerance {
                        name: self.name.clone(),
                        expected: "0 for discrete variables",
                    });
                }
                Ok(tol)
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
struct SignatureDoc<S: Scalar> {
    format_version: u32,
    variables: Vec<VariableDecl<S>>,
    #[serde(default)]
    edges: Vec<(String, String)>,
}

/// A validated signature: variables plus dependency edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature<S: Scalar> {
    variables: Vec<VariableDecl<S>>,
    dependency_edges: Vec<(usize, usize)>,
    tolerances: Vec<S>,
    index: HashMap<String, usize>,
    children: Vec<Vec<usize>>,
}

impl<S: Scalar> Signature<S> {
    pub fn new(
        variables: Vec<VariableDecl<S>>,
        edges: Vec<(String, String)>,
    ) -> Result<Self, SignatureError> {
        if variables.is_empty() {
            return Err(SignatureError::EmptySignature);
        }
        let mut index = HashMap::new();
        let mut tolerances = Vec::with_capacity(variables.len());
        for (i, decl) in variables.iter().enumerate() {
            if index.insert(decl.name.clone(), i).is_some() {
                return Err(SignatureError::DuplicateName(decl.name.clone()));
            }
            tolerances.push(decl.validate()?);
        }
        let mut children = vec![Vec::new(); variables.len()];
        let mut dependency_edges = Vec::with_capacity(edges.len());
        let mut seen = HashSet::new();
        for (parent, child) in &edges {
            let p = *index
                .get(parent)
                .ok_or_else(|| SignatureError::UndeclaredEdgeVariable(parent.clone()))?;
            let c = *index
                .get(child)
                .ok_or_else(|| SignatureError::UndeclaredEdgeVariable(child.clone()))?;
            if p == c {
                return Err(SignatureError::CyclicDependency(parent.clone()));
            }
            if variables[c].kind != VarKind::Endogenous {
                return Err(SignatureError::EdgeIntoExogenous(child.clone()));
            }
            if !seen.insert((p, c)) {
                return Err(SignatureError::DuplicateEdge(parent.clone(), child.clone()));
            }
            children[p].push(c);
            dependency_edges.push((p, c));
        }
        Ok(Signature {
            variables,
            dependency_edges,
            tolerances,
            index,
            children,
        })
    }

    /// Parse and validate a JSON sidecar document.
    pub fn parse(source: &str) -> Result<Self, SignatureError> {
        let doc: SignatureDoc<S> = serde_json::from_str(source)?;
        if doc.format_version != SIGNATURE_FORMAT_VERSION {
            return Err(SignatureError::FormatVersion(doc.format_version));
        }
        let edges = doc.edges;
        Signature::new(doc.variables, edges)
    }

    /// Serialize back to the sidecar format.
    pub fn to_json(&self) -> String {
        let doc = SignatureDoc {
            format_version: SIGNATURE_FORMAT_VERSION,
            variables: self.variables.clone(),
            edges: self
                .dependency_edges
                .iter()
                .map(|(p, c)| {
                    (
                        self.variables[*p].name.clone(),
                        self.variables[*c].name.clone(),
                    )
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("signature serializes")
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variables(&self) -> &[VariableDecl<S>] {
        &self.variables
    }

    pub fn var(&self, idx: usize) -> &VariableDecl<S> {
        &self.variables[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.variables[idx].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn tolerance(&self, idx: usize) -> S {
        self.tolerances[idx]
    }

    pub fn is_endogenous(&self, idx: usize) -> bool {
        self.variables[idx].kind == VarKind::Endogenous
    }

    pub fn endogenous_names(&self) -> BTreeSet<String> {
        self.variables
            .iter()
            .filter(|v| v.kind == VarKind::Endogenous)
            .map(|v| v.name.clone())
            .collect()
    }

    pub fn exogenous_indices(&self) -> Vec<usize> {
        (0..self.variables.len())
            .filter(|i| self.variables[*i].kind == VarKind::Exogenous)
            .collect()
    }

    /// Tolerance-aware equality of two values of the variable at `idx`.
    /// Continuous values are equal within the declared tolerance; discrete
    /// tokens compare exactly.
    pub fn values_equal(&self, idx: usize, a: &Value<S>, b: &Value<S>) -> bool {
        match (a, b) {
            (Value::Continuous(x), Value::Continuous(y)) => (*x - *y).abs() <= self.tolerances[idx],
            (Value::Discrete(x), Value::Discrete(y)) => x == y,
            _ => false,
        }
    }

    /// All endogenous variables reachable from `roots` along dependency edges.
    pub fn descendants(&self, roots: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut queue: VecDeque<usize> = roots.iter().copied().collect();
        while let Some(v) = queue.pop_front() {
            for &c in &self.children[v] {
                if seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        seen
    }
}
