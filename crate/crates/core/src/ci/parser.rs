//! Test-condition language.
//!
//! ```text
//! condition := expr cmp number [ "+/-" number ]
//! expr      := [sign] term { sign term }
//! term      := number "*" var | var
//! var       := "n" | "o" | "d"
//! cmp       := ">" | "<" | ">=" | "<="
//! ```
//!
//! `n` and `o` are the accuracies of the new and old model, `d` the fraction
//! of test samples on which they disagree. Whitespace is insignificant.
//! Columns in errors are 1-based character positions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    /// Accuracy of the new model.
    #[serde(rename = "n")]
    New,
    /// Accuracy of the old model.
    #[serde(rename = "o")]
    Old,
    /// Fraction of differing predictions.
    #[serde(rename = "d")]
    Diff,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::New, Variable::Old, Variable::Diff];

    pub fn symbol(self) -> char {
        match self {
            Variable::New => 'n',
            Variable::Old => 'o',
            Variable::Diff => 'd',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub var: Variable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

impl Comparison {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Gt => ">",
            Comparison::Lt => "<",
            Comparison::Ge => ">=",
            Comparison::Le => "<=",
        }
    }

    /// The operator obtained by swapping both sides.
    pub fn flipped(self) -> Self {
        match self {
            Comparison::Gt => Comparison::Lt,
            Comparison::Lt => Comparison::Gt,
            Comparison::Ge => Comparison::Le,
            Comparison::Le => Comparison::Ge,
        }
    }

    pub fn is_lower_bound(self) -> bool {
        matches!(self, Comparison::Gt | Comparison::Ge)
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Gt => lhs > rhs,
            Comparison::Lt => lhs < rhs,
            Comparison::Ge => lhs >= rhs,
            Comparison::Le => lhs <= rhs,
        }
    }
}

/// A parsed condition `sum(coef * var) cmp threshold +/- epsilon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCondition {
    pub terms: Vec<Term>,
    pub op: Comparison,
    pub threshold: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnknownVariable(String),
    MalformedNumber(String),
    EmptyExpression,
    UnexpectedToken { found: String, expected: &'static str },
    UnexpectedEnd { expected: &'static str },
    NegativeEpsilon,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at column {column}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub column: usize,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnknownVariable(v) => {
                write!(f, "unknown variable `{v}` (expected n, o or d)")
            }
            ParseErrorKind::MalformedNumber(t) => write!(f, "malformed number `{t}`"),
            ParseErrorKind::EmptyExpression => write!(f, "empty expression"),
            ParseErrorKind::UnexpectedToken { found, expected } => {
                write!(f, "unexpected `{found}`, expected {expected}")
            }
            ParseErrorKind::UnexpectedEnd { expected } => {
                write!(f, "unexpected end of input, expected {expected}")
            }
            ParseErrorKind::NegativeEpsilon => write!(f, "tolerance after `+/-` must be nonnegative"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Cmp(Comparison),
    PlusMinus,
}

impl Tok {
    fn text(&self) -> String {
        match self {
            Tok::Num(v) => v.to_string(),
            Tok::Ident(s) => s.clone(),
            Tok::Plus => "+".into(),
            Tok::Minus => "-".into(),
            Tok::Star => "*".into(),
            Tok::Cmp(c) => c.symbol().into(),
            Tok::PlusMinus => "+/-".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '+' if chars[i..].starts_with(&['+', '/', '-']) => {
                i += 3;
                Tok::PlusMinus
            }
            '+' => {
                i += 1;
                Tok::Plus
            }
            '-' => {
                i += 1;
                Tok::Minus
            }
            '*' => {
                i += 1;
                Tok::Star
            }
            '>' | '<' => {
                let eq = chars.get(i + 1) == Some(&'=');
                i += if eq { 2 } else { 1 };
                Tok::Cmp(match (c, eq) {
                    ('>', false) => Comparison::Gt,
                    ('>', true) => Comparison::Ge,
                    ('<', false) => Comparison::Lt,
                    _ => Comparison::Le,
                })
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                    // exponent sign, as in 1e-3
                    if matches!(chars[i], 'e' | 'E') && matches!(chars.get(i + 1), Some('+' | '-')) {
                        i += 1;
                    }
                    i += 1;
                }
                let lexeme: String = chars[start..i].iter().collect();
                let v: f64 = lexeme.parse().map_err(|_| ParseError {
                    kind: ParseErrorKind::MalformedNumber(lexeme.clone()),
                    column: col,
                })?;
                if !v.is_finite() {
                    return Err(ParseError {
                        kind: ParseErrorKind::MalformedNumber(lexeme),
                        column: col,
                    });
                }
                Tok::Num(v)
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                Tok::Ident(chars[start..i].iter().collect())
            }
            other => {
                return Err(ParseError {
                    kind: ParseErrorKind::UnexpectedToken {
                        found: other.to_string(),
                        expected: "a term, comparison or number",
                    },
                    column: col,
                })
            }
        };
        out.push((tok, col));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_column: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_column, |(_, c)| *c)
    }

    fn fail<T>(&self, expected: &'static str) -> Result<T, ParseError> {
        let kind = match self.peek() {
            Some(t) => ParseErrorKind::UnexpectedToken {
                found: t.text(),
                expected,
            },
            None => ParseErrorKind::UnexpectedEnd { expected },
        };
        Err(ParseError {
            kind,
            column: self.column(),
        })
    }

    fn variable(&mut self) -> Result<Variable, ParseError> {
        match self.peek() {
            Some(Tok::Ident(name)) => {
                let var = match name.as_str() {
                    "n" => Variable::New,
                    "o" => Variable::Old,
                    "d" => Variable::Diff,
                    _ => {
                        return Err(ParseError {
                            kind: ParseErrorKind::UnknownVariable(name.clone()),
                            column: self.column(),
                        })
                    }
                };
                self.pos += 1;
                Ok(var)
            }
            _ => self.fail("a variable (n, o or d)"),
        }
    }

    fn term(&mut self, sign: f64) -> Result<Term, ParseError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let coef = *v;
                self.pos += 1;
                if self.peek() != Some(&Tok::Star) {
                    return self.fail("`*` after a coefficient");
                }
                self.pos += 1;
                Ok(Term {
                    coef: sign * coef,
                    var: self.variable()?,
                })
            }
            Some(Tok::Ident(_)) => Ok(Term {
                coef: sign,
                var: self.variable()?,
            }),
            _ => self.fail("a term"),
        }
    }

    fn expr(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut terms = Vec::new();
        let mut sign = match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                -1.0
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                1.0
            }
            Some(Tok::Cmp(_)) | None if terms.is_empty() => {
                return Err(ParseError {
                    kind: ParseErrorKind::EmptyExpression,
                    column: self.column(),
                })
            }
            _ => 1.0,
        };
        loop {
            terms.push(self.term(sign)?);
            sign = match self.peek() {
                Some(Tok::Plus) => 1.0,
                Some(Tok::Minus) => -1.0,
                _ => return Ok(terms),
            };
            self.pos += 1;
        }
    }

    fn number(&mut self, allow_sign: bool) -> Result<f64, ParseError> {
        let mut sign = 1.0;
        if allow_sign {
            match self.peek() {
                Some(Tok::Minus) => {
                    sign = -1.0;
                    self.pos += 1;
                }
                Some(Tok::Plus) => self.pos += 1,
                _ => {}
            }
        }
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = sign * *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.fail("a number"),
        }
    }
}

/// Parses a condition such as `n - o > 0.02 +/- 0.01`.
pub fn parse_condition(text: &str) -> Result<TestCondition, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end_column: text.chars().count() + 1,
    };
    let terms = p.expr()?;
    let op = match p.peek() {
        Some(Tok::Cmp(c)) => *c,
        _ => return p.fail("a comparison (>, <, >=, <=)"),
    };
    p.pos += 1;
    let threshold = p.number(true)?;
    let epsilon = match p.peek() {
        Some(Tok::PlusMinus) => {
            p.pos += 1;
            let column = p.column();
            if p.peek() == Some(&Tok::Minus) {
                return Err(ParseError {
                    kind: ParseErrorKind::NegativeEpsilon,
                    column,
                });
            }
            p.number(false)?
        }
        _ => 0.0,
    };
    if p.peek().is_some() {
        return p.fail("end of condition");
    }
    Ok(TestCondition {
        terms,
        op,
        threshold,
        epsilon,
    })
}

impl FromStr for TestCondition {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_condition(s)
    }
}

fn write_term(f: &mut fmt::Formatter<'_>, magnitude: f64, var: Variable) -> fmt::Result {
    if magnitude == 1.0 {
        write!(f, "{}", var.symbol())
    } else {
        write!(f, "{magnitude}*{}", var.symbol())
    }
}

impl fmt::Display for TestCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            let negative = t.coef.is_sign_negative();
            match (i, negative) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            write_term(f, t.coef.abs(), t.var)?;
        }
        write!(f, " {} {}", self.op.symbol(), self.threshold)?;
        if self.epsilon != 0.0 {
            write!(f, " +/- {}", self.epsilon)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_the_reference_condition() {
        let c = parse_condition("n - o > 0.02 +/- 0.01").unwrap();
        assert_eq!(
            c,
            TestCondition {
                terms: vec![
                    Term { coef: 1.0, var: Variable::New },
                    Term { coef: -1.0, var: Variable::Old },
                ],
                op: Comparison::Gt,
                threshold: 0.02,
                epsilon: 0.01,
            }
        );
    }

    #[test]
    fn single_variable_without_tolerance() {
        let c = parse_condition("d < 0.1").unwrap();
        assert_eq!(c.terms, vec![Term { coef: 1.0, var: Variable::Diff }]);
        assert_eq!((c.op, c.threshold, c.epsilon), (Comparison::Lt, 0.1, 0.0));
    }

    #[test]
    fn unknown_variable_reports_column() {
        let err = parse_condition("n - q > 0").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownVariable("q".into()));
        assert_eq!(err.column, 5);
        assert_eq!(err.to_string(), "unknown variable `q` (expected n, o or d) at column 5");
    }

    #[test]
    fn error_paths() {
        assert_eq!(parse_condition("> 0.1").unwrap_err().kind, ParseErrorKind::EmptyExpression);
        assert_eq!(parse_condition("").unwrap_err().kind, ParseErrorKind::EmptyExpression);
        let e = parse_condition("n > 0.1.2").unwrap_err();
        assert_eq!((e.kind, e.column), (ParseErrorKind::MalformedNumber("0.1.2".into()), 5));
        let e = parse_condition("n > 0.1 +/- -0.1").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::NegativeEpsilon);
        assert!(matches!(parse_condition("n >").unwrap_err().kind, ParseErrorKind::UnexpectedEnd { .. }));
        assert!(parse_condition("n o > 1").is_err());
        assert!(parse_condition("2 n > 1").is_err());
        assert!(parse_condition("n > 1 extra").is_err());
        assert!(parse_condition("n == 1").is_err());
    }

    #[test]
    fn whitespace_and_coefficients() {
        let a = parse_condition("-0.5*n+2*o-d>=-1e-3+/-1e-4").unwrap();
        let b = parse_condition("  - 0.5 * n + 2 * o - d >= - 0.001 +/- 0.0001 ").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.terms[0].coef, -0.5);
        assert_eq!(a.to_string(), "-0.5*n + 2*o - d >= -0.001 +/- 0.0001");
    }

    fn condition_strategy() -> impl Strategy<Value = TestCondition> {
        let coef = prop_oneof![
            Just(1.0),
            Just(-1.0),
            -100.0f64..100.0,
            (-1000i32..1000).prop_map(|v| v as f64 / 100.0),
        ];
        let var = prop_oneof![Just(Variable::New), Just(Variable::Old), Just(Variable::Diff)];
        let op = prop_oneof![
            Just(Comparison::Gt),
            Just(Comparison::Lt),
            Just(Comparison::Ge),
            Just(Comparison::Le)
        ];
        (
            prop::collection::vec((coef, var).prop_map(|(coef, var)| Term { coef, var }), 1..5),
            op,
            -10.0f64..10.0,
            prop_oneof![Just(0.0), 0.0f64..1.0],
        )
            .prop_map(|(terms, op, threshold, epsilon)| TestCondition { terms, op, threshold, epsilon })
    }

    proptest! {
        #[test]
        fn pretty_print_round_trips(c in condition_strategy()) {
            let printed = c.to_string();
            let back = parse_condition(&printed).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_string(), printed);
        }
    }
}
