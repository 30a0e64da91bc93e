//! Scalar values carried by states: continuous reals and exact discrete tokens.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// An exact discrete value. Stored as an integer or string token, never as a
/// float, so equality is exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Token {
    Int(i64),
    Str(String),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Int(v) => write!(f, "{v}"),
            Token::Str(s) => write!(f, "{s}"),
        }
    }
}

/// A single variable's value in one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound = "S: Scalar")]
pub enum Value<S: Scalar> {
    Continuous(S),
    Discrete(Token),
}

impl<S: Scalar> Value<S> {
    pub fn as_continuous(&self) -> Option<S> {
        match self {
            Value::Continuous(v) => Some(*v),
            Value::Discrete(_) => None,
        }
    }

    pub fn as_token(&self) -> Option<&Token> {
        match self {
            Value::Discrete(t) => Some(t),
            Value::Continuous(_) => None,
        }
    }
}

impl<S: Scalar> fmt::Display for Value<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Continuous(v) => write!(f, "{v}"),
            Value::Discrete(t) => write!(f, "{t}"),
        }
    }
}
