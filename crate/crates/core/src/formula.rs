//! Causal formulas: boolean combinations of primitive comparison events over
//! indexed variables, plus the finite-trace temporal operators used by the
//! actual-cause conditions.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! formula := or
//! or      := and ('|' and)*
//! and     := unary ('&' unary)*
//! unary   := '!' unary | '(' formula ')' | prim
//! prim    := IDENT '(' (INT | 'n' | '*') ')' CMP NUMBER
//! CMP     := '=' | '!=' | '<' | '<=' | '>' | '>='
//! ```
//!
//! The time index `n` denotes the last step of the trace under evaluation and
//! `*` the step currently bound by a temporal operator. Formulas are state
//! based: there are no nested temporal operators. Equality on a continuous
//! variable holds within the variable's declared tolerance; `!=` is its
//! negation. Out-of-range concrete indices are evaluation errors, not `false`.

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::signature::{Domain, Signature};
use crate::trace::Trace;
use crate::value::{Token, Value};

#[derive(Debug, Error, PartialEq)]
pub enum FormulaParseError {
    #[error("syntax error at column {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown variable `{name}` at column {pos}")]
    UnknownVariable { pos: usize, name: String },
    #[error("comparator `{cmp}` is not allowed for discrete variable `{name}` (column {pos})")]
    BadDiscreteComparator { pos: usize, name: String, cmp: String },
    #[error("discrete variable `{name}` must be compared against an integer (column {pos})")]
    NonIntegerDiscreteValue { pos: usize, name: String },
}

impl FormulaParseError {
    /// Column (0-based) the error points at, for caret rendering.
    pub fn position(&self) -> usize {
        match self {
            FormulaParseError::Syntax { pos, .. }
            | FormulaParseError::UnknownVariable { pos, .. }
            | FormulaParseError::BadDiscreteComparator { pos, .. }
            | FormulaParseError::NonIntegerDiscreteValue { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("index {index} of `{var}` is out of range for a trace of length {len}")]
    IndexOutOfRange { var: String, index: usize, len: usize },
    #[error("step {step} is out of range for a trace of length {len}")]
    StepOutOfRange { step: usize, len: usize },
}

/// Time index of a primitive event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeIndex {
    /// A concrete step `k >= 0`.
    Step(usize),
    /// `n`: the last step of the trace.
    Last,
    /// `*`: the step currently under temporal evaluation.
    Current,
}

impl fmt::Display for TimeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeIndex::Step(k) => write!(f, "{k}"),
            TimeIndex::Last => write!(f, "n"),
            TimeIndex::Current => write!(f, "*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Cmp::Eq => "=",
            Cmp::Ne => "!=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        };
        f.write_str(s)
    }
}

/// A comparison of one indexed variable against a literal.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveEvent<S: Scalar> {
    pub var: usize,
    pub name: String,
    pub index: TimeIndex,
    pub cmp: Cmp,
    pub value: Value<S>,
}

impl<S: Scalar> fmt::Display for PrimitiveEvent<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}) {} {}", self.name, self.index, self.cmp, self.value)
    }
}

/// A state-based causal formula.
#[derive(Debug, Clone, PartialEq)]
pub enum CausalFormula<S: Scalar> {
    Prim(PrimitiveEvent<S>),
    Not(Box<CausalFormula<S>>),
    And(Box<CausalFormula<S>>, Box<CausalFormula<S>>),
    Or(Box<CausalFormula<S>>, Box<CausalFormula<S>>),
}

impl<S: Scalar> fmt::Display for CausalFormula<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CausalFormula::Prim(p) => write!(f, "{p}"),
            CausalFormula::Not(inner) => match inner.as_ref() {
                CausalFormula::Prim(p) => write!(f, "!{p}"),
                other => write!(f, "!({other})"),
            },
            // parsing is left-associative, so right-nested operands of the
            // same operator keep their parentheses
            CausalFormula::And(a, b) => {
                match a.as_ref() {
                    CausalFormula::Or(..) => write!(f, "({a})")?,
                    other => write!(f, "{other}")?,
                }
                write!(f, " & ")?;
                match b.as_ref() {
                    CausalFormula::Or(..) | CausalFormula::And(..) => write!(f, "({b})"),
                    other => write!(f, "{other}"),
                }
            }
            CausalFormula::Or(a, b) => {
                write!(f, "{a} | ")?;
                match b.as_ref() {
                    CausalFormula::Or(..) => write!(f, "({b})"),
                    other => write!(f, "{other}"),
                }
            }
        }
    }
}

impl<S: Scalar> CausalFormula<S> {
    /// Parse a formula and resolve its variables against `sig`.
    pub fn parse(text: &str, sig: &Signature<S>) -> Result<Self, FormulaParseError> {
        let mut parser = Parser::new(text, sig);
        let formula = parser.formula()?;
        parser.expect_end()?;
        Ok(formula)
    }

    /// Evaluate at one step of a trace. `*` binds to `step`, `n` to the last
    /// step. Out-of-range indices (including `step` itself) are errors.
    pub fn eval_at(&self, sig: &Signature<S>, trace: &Trace<S>, step: usize) -> Result<bool, EvalError> {
        if step >= trace.len() {
            return Err(EvalError::StepOutOfRange { step, len: trace.len() });
        }
        self.eval_inner(sig, trace, step)
    }

    fn eval_inner(&self, sig: &Signature<S>, trace: &Trace<S>, step: usize) -> Result<bool, EvalError> {
        match self {
            CausalFormula::Prim(p) => eval_prim(p, sig, trace, step),
            CausalFormula::Not(inner) => Ok(!inner.eval_inner(sig, trace, step)?),
            // Both sides always evaluate so out-of-range indices are never
            // masked by short-circuiting.
            CausalFormula::And(a, b) => {
                let x = a.eval_inner(sig, trace, step)?;
                let y = b.eval_inner(sig, trace, step)?;
                Ok(x && y)
            }
            CausalFormula::Or(a, b) => {
                let x = a.eval_inner(sig, trace, step)?;
                let y = b.eval_inner(sig, trace, step)?;
                Ok(x || y)
            }
        }
    }

    /// `[] f`: f holds at every step of the trace.
    pub fn holds_always(&self, sig: &Signature<S>, trace: &Trace<S>) -> Result<bool, EvalError> {
        for step in 0..trace.len() {
            if !self.eval_at(sig, trace, step)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `<> f`: f holds at some step of the trace.
    pub fn holds_eventually(&self, sig: &Signature<S>, trace: &Trace<S>) -> Result<bool, EvalError> {
        for step in 0..trace.len() {
            if self.eval_at(sig, trace, step)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// `p U q`: some step satisfies q and every earlier step satisfies p.
pub fn holds_until<S: Scalar>(
    p: &CausalFormula<S>,
    q: &CausalFormula<S>,
    sig: &Signature<S>,
    trace: &Trace<S>,
) -> Result<bool, EvalError> {
    for i in 0..trace.len() {
        if q.eval_at(sig, trace, i)? {
            let mut prefix_ok = true;
            for j in 0..i {
                if !p.eval_at(sig, trace, j)? {
                    prefix_ok = false;
                    break;
                }
            }
            if prefix_ok {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn eval_prim<S: Scalar>(
    p: &PrimitiveEvent<S>,
    sig: &Signature<S>,
    trace: &Trace<S>,
    step: usize,
) -> Result<bool, EvalError> {
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
    Ok(compare(sig, p.var, trace.state(at).value(p.var), p.cmp, &p.value))
}

/// Tolerance-aware comparison of an observed value against a literal.
pub(crate) fn compare<S: Scalar>(
    sig: &Signature<S>,
    var: usize,
    observed: &Value<S>,
    cmp: Cmp,
    literal: &Value<S>,
) -> bool {
    match cmp {
        Cmp::Eq => sig.values_equal(var, observed, literal),
        Cmp::Ne => !sig.values_equal(var, observed, literal),
        ordering => {
            let (x, y) = match (observed.as_continuous(), literal.as_continuous()) {
                (Some(x), Some(y)) => (x, y),
                // ordering comparators are rejected for discrete variables at
                // parse time
                _ => return false,
            };
            match ordering {
                Cmp::Lt => x < y,
                Cmp::Le => x <= y,
                Cmp::Gt => x > y,
                Cmp::Ge => x >= y,
                Cmp::Eq | Cmp::Ne => unreachable!(),
            }
        }
    }
}

struct Parser<'a, S: Scalar> {
    chars: Vec<char>,
    pos: usize,
    sig: &'a Signature<S>,
}

impl<'a, S: Scalar> Parser<'a, S> {
    fn new(text: &str, sig: &'a Signature<S>) -> Self {
        Parser { chars: text.chars().collect(), pos: 0, sig }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        Some(c)
    }

    fn syntax<T>(&self, pos: usize, message: impl Into<String>) -> Result<T, FormulaParseError> {
        Err(FormulaParseError::Syntax { pos, message: message.into() })
    }

    fn expect(&mut self, c: char) -> Result<(), FormulaParseError> {
        match self.bump() {
            Some(got) if got == c => Ok(()),
            Some(got) => self.syntax(self.pos - 1, format!("expected `{c}`, found `{got}`")),
            None => self.syntax(self.chars.len(), format!("expected `{c}`, found end of input")),
        }
    }

    fn expect_end(&mut self) -> Result<(), FormulaParseError> {
        match self.peek() {
            None => Ok(()),
            Some(c) => self.syntax(self.pos, format!("unexpected `{c}` after formula")),
        }
    }

    fn formula(&mut self) -> Result<CausalFormula<S>, FormulaParseError> {
        let mut left = self.and()?;
        while self.peek() == Some('|') {
            self.bump();
            let right = self.and()?;
            left = CausalFormula::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<CausalFormula<S>, FormulaParseError> {
        let mut left = self.unary()?;
        while self.peek() == Some('&') {
            self.bump();
            let right = self.unary()?;
            left = CausalFormula::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<CausalFormula<S>, FormulaParseError> {
        match self.peek() {
            Some('!') => {
                // `!=` cannot start a formula, so `!` here is negation.
                self.bump();
                Ok(CausalFormula::Not(Box::new(self.unary()?)))
            }
            Some('(') => {
                self.bump();
                let inner = self.formula()?;
                self.expect(')')?;
                Ok(inner)
            }
            Some(c) if c.is_alphabetic() || c == '_' => self.prim(),
            Some(c) => self.syntax(self.pos, format!("expected a primitive event, found `{c}`")),
            None => self.syntax(self.chars.len(), "expected a primitive event, found end of input"),
        }
    }

    fn ident(&mut self) -> Result<(usize, String), FormulaParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_alphanumeric() || self.chars[self.pos] == '_')
        {
            self.pos += 1;
        }
        if self.pos == start {
            return self.syntax(start, "expected an identifier");
        }
        Ok((start, self.chars[start..self.pos].iter().collect()))
    }

    fn number(&mut self) -> Result<(usize, String), FormulaParseError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.chars.get(self.pos), Some('+') | Some('-')) {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_ascii_digit()
                || self.chars[self.pos] == '.'
                || self.chars[self.pos] == 'e'
                || self.chars[self.pos] == 'E'
                || ((self.chars[self.pos] == '+' || self.chars[self.pos] == '-')
                    && matches!(self.chars.get(self.pos - 1), Some('e') | Some('E'))))
        {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return self.syntax(start, "expected a number");
        }
        Ok((start, self.chars[start..self.pos].iter().collect()))
    }

    fn prim(&mut self) -> Result<CausalFormula<S>, FormulaParseError> {
        let (name_pos, name) = self.ident()?;
        let var = self
            .sig
            .index_of(&name)
            .ok_or_else(|| FormulaParseError::UnknownVariable { pos: name_pos, name: name.clone() })?;
        self.expect('(')?;
        let index = self.time_index()?;
        self.expect(')')?;
        let (cmp_pos, cmp) = self.cmp()?;
        let (num_pos, num_text) = self.number()?;

        let decl = self.sig.var(var);
        let value = match &decl.domain {
            Domain::Continuous { .. } => {
                let v: S = num_text
                    .parse::<S>()
                    .map_err(|_| FormulaParseError::Syntax {
                        pos: num_pos,
                        message: format!("`{num_text}` is not a number"),
                    })?;
                Value::Continuous(v)
            }
            Domain::Discrete { .. } => {
                if !matches!(cmp, Cmp::Eq | Cmp::Ne) {
                    return Err(FormulaParseError::BadDiscreteComparator {
                        pos: cmp_pos,
                        name,
                        cmp: cmp.to_string(),
                    });
                }
                let i: i64 = num_text.parse().map_err(|_| {
                    FormulaParseError::NonIntegerDiscreteValue { pos: num_pos, name: name.clone() }
                })?;
                Value::Discrete(Token::Int(i))
            }
        };
        Ok(CausalFormula::Prim(PrimitiveEvent { var, name, index, cmp, value }))
    }

    fn time_index(&mut self) -> Result<TimeIndex, FormulaParseError> {
        match self.peek() {
            Some('*') => {
                self.bump();
                Ok(TimeIndex::Current)
            }
            Some('n') => {
                self.bump();
                Ok(TimeIndex::Last)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                text.parse()
                    .map(TimeIndex::Step)
                    .map_err(|_| FormulaParseError::Syntax {
                        pos: start,
                        message: format!("`{text}` is not a valid step index"),
                    })
            }
            Some(c) => self.syntax(self.pos, format!("expected a step index, `n`, or `*`, found `{c}`")),
            None => self.syntax(self.chars.len(), "expected a step index, `n`, or `*`"),
        }
    }

    fn cmp(&mut self) -> Result<(usize, Cmp), FormulaParseError> {
        let pos = {
            self.skip_ws();
            self.pos
        };
        let cmp = match self.bump() {
            Some('=') => Cmp::Eq,
            Some('!') => {
                self.expect('=')?;
                Cmp::Ne
            }
            Some('<') => {
                if self.chars.get(self.pos) == Some(&'=') {
                    self.pos += 1;
                    Cmp::Le
                } else {
                    Cmp::Lt
                }
            }
            Some('>') => {
                if self.chars.get(self.pos) == Some(&'=') {
                    self.pos += 1;
                    Cmp::Ge
                } else {
                    Cmp::Gt
                }
            }
            Some(c) => return self.syntax(pos, format!("expected a comparator, found `{c}`")),
            None => return self.syntax(pos, "expected a comparator, found end of input"),
        };
        Ok((pos, cmp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::{VariableDecl, VarKind};
    use crate::trace::State;

    fn sig() -> Signature<f64> {
        Signature::new(
            vec![
                VariableDecl::continuous("pos", VarKind::Endogenous, -1.2, 0.6),
                VariableDecl::continuous("vel", VarKind::Endogenous, -0.07, 0.07),
                VariableDecl::discrete_ints("action", VarKind::Endogenous, &[-1, 0, 1]),
            ],
            vec![],
        )
        .unwrap()
    }

    fn state(pos: f64, vel: f64, action: i64) -> State<f64> {
        State::new(vec![
            Value::Continuous(pos),
            Value::Continuous(vel),
            Value::Discrete(Token::Int(action)),
        ])
    }

    fn tau0() -> Trace<f64> {
        Trace::new(
            "tau0",
            vec![
                state(0.0, 0.02, 1),
                state(0.018, 0.018, 1),
                state(0.12, 0.0, 1),
                state(0.11, -0.001, 1),
            ],
        )
    }

    fn tau1() -> Trace<f64> {
        Trace::new(
            "tau1",
            vec![
                state(0.0, 0.02, -1),
                state(-0.01, -0.01, -1),
                state(0.58, 0.051, 1),
                state(0.6, 0.052, 1),
            ],
        )
    }

    #[test]
    fn parses_failure_predicate() {
        let sig = sig();
        let f = CausalFormula::parse("pos(n) != 0.6", &sig).unwrap();
        match &f {
            CausalFormula::Prim(p) => {
                assert_eq!(p.name, "pos");
                assert_eq!(p.index, TimeIndex::Last);
                assert_eq!(p.cmp, Cmp::Ne);
                assert_eq!(p.value, Value::Continuous(0.6));
            }
            other => panic!("expected primitive, got {other:?}"),
        }
        assert_eq!(f.to_string(), "pos(n) != 0.6");
    }

    #[test]
    fn parses_discrete_step_primitive() {
        let sig = sig();
        let f = CausalFormula::parse("action(0) = 1", &sig).unwrap();
        match &f {
            CausalFormula::Prim(p) => {
                assert_eq!(p.index, TimeIndex::Step(0));
                assert_eq!(p.value, Value::Discrete(Token::Int(1)));
            }
            other => panic!("expected primitive, got {other:?}"),
        }
        assert_eq!(f.to_string(), "action(0) = 1");
    }

    #[test]
    fn parses_conjunction_with_current_index() {
        let sig = sig();
        let f = CausalFormula::parse("pos(*) >= 0.6 & vel(*) > 0", &sig).unwrap();
        assert!(matches!(f, CausalFormula::And(..)));
        assert_eq!(f.to_string(), "pos(*) >= 0.6 & vel(*) > 0");
        // whitespace is insignificant
        let g = CausalFormula::parse("pos(*)>=0.6&vel(*)>0", &sig).unwrap();
        assert_eq!(f, g);
        let h = CausalFormula::parse("  pos( * )  >=  0.6  &  vel(*) > 0 ", &sig).unwrap();
        assert_eq!(f, h);
    }

    #[test]
    fn reports_syntax_error_position() {
        let sig = sig();
        match CausalFormula::parse("pos(n) >", &sig) {
            Err(e @ FormulaParseError::Syntax { .. }) => assert_eq!(e.position(), 8),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_variable_and_bad_discrete_comparator() {
        let sig = sig();
        assert!(matches!(
            CausalFormula::parse("foo(0) = 1", &sig),
            Err(FormulaParseError::UnknownVariable { .. })
        ));
        assert!(matches!(
            CausalFormula::parse("action(0) < 1", &sig),
            Err(FormulaParseError::BadDiscreteComparator { .. })
        ));
        assert!(matches!(
            CausalFormula::parse("action(0) = 0.5", &sig),
            Err(FormulaParseError::NonIntegerDiscreteValue { .. })
        ));
    }

    #[test]
    fn failure_predicate_on_fig4_traces() {
        let sig = sig();
        let fail = CausalFormula::parse("pos(n) != 0.6", &sig).unwrap();
        let t0 = tau0();
        let t1 = tau1();
        assert!(fail.eval_at(&sig, &t0, t0.len() - 1).unwrap());
        assert!(!fail.eval_at(&sig, &t1, t1.len() - 1).unwrap());
    }

    #[test]
    fn continuous_equality_is_exact_at_zero_tolerance() {
        let mut decl = VariableDecl::<f64>::continuous("x", VarKind::Endogenous, 0.0, 1.0);
        decl.tolerance = Some(0.0);
        let sig = Signature::new(vec![decl], vec![]).unwrap();
        let trace = Trace::new("t", vec![State::new(vec![Value::Continuous(0.25)])]);
        let f = CausalFormula::parse("x(*) = 0.25", &sig).unwrap();
        assert!(f.eval_at(&sig, &trace, 0).unwrap());
        let g = CausalFormula::parse("x(*) = 0.250000001", &sig).unwrap();
        assert!(!g.eval_at(&sig, &trace, 0).unwrap());
    }

    #[test]
    fn until_with_immediate_q_ignores_p() {
        let sig = sig();
        let t0 = tau0();
        // q true at step 0 makes the prefix quantifier vacuous
        let q = CausalFormula::parse("action(*) = 1", &sig).unwrap();
        let p = CausalFormula::parse("pos(*) > 100", &sig).unwrap(); // never true
        assert!(holds_until(&p, &q, &sig, &t0).unwrap());
    }

    #[test]
    fn eventually_reaches_goal_on_tau1() {
        let sig = sig();
        let f = CausalFormula::parse("pos(*) >= 0.6", &sig).unwrap();
        assert!(f.holds_eventually(&sig, &tau1()).unwrap());
        assert!(!f.holds_eventually(&sig, &tau0()).unwrap());
    }

    #[test]
    fn always_holds_for_domain_bound() {
        let sig = sig();
        let f = CausalFormula::parse("vel(*) <= 0.07", &sig).unwrap();
        assert!(f.holds_always(&sig, &tau0()).unwrap());
        assert!(f.holds_always(&sig, &tau1()).unwrap());
    }

    #[test]
    fn out_of_range_concrete_index_is_an_error() {
        let sig = sig();
        let f = CausalFormula::parse("pos(9) = 0.0", &sig).unwrap();
        assert!(matches!(
            f.eval_at(&sig, &tau0(), 0),
            Err(EvalError::IndexOutOfRange { index: 9, .. })
        ));
        // also under a negation: errors are not masked
        let g = CausalFormula::parse("!(pos(9) = 0.0) | pos(0) = 0.0", &sig).unwrap();
        assert!(g.eval_at(&sig, &tau0(), 0).is_err());
    }

    #[test]
    fn display_round_trips_through_parser() {
        let sig = sig();
        for text in [
            "pos(n) != 0.6",
            "!(pos(*) >= 0.6 & vel(*) > 0)",
            "action(0) = 1 | action(1) = -1 & pos(2) < 0",
            "!action(n) = 0",
        ] {
            let f = CausalFormula::parse(text, &sig).unwrap();
            let printed = f.to_string();
            let g = CausalFormula::parse(&printed, &sig).unwrap();
            assert_eq!(f, g, "round trip changed `{text}` -> `{printed}`");
        }
    }
}
