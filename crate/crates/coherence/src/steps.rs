//! Deterministic extraction and verification of arithmetic steps, plus
//! `\boxed{}` detection. Covers the machine-checkable half of the error
//! taxonomy: calculator errors and format errors.
//!
//! Extraction is deliberately conservative. Equations are only read where a
//! run of purely arithmetic tokens ends in `= <number>`; words break a run,
//! so "4 tables × 4 legs = 16" is not a step while "5 × 6 = 30" is. In a
//! chain `a = b = c` each adjacent pair is considered independently, and a
//! pair is verified only when its right side is a bare numeric literal —
//! running-total chains like "16 + 4 = 20 + 9 = 29" would otherwise flag
//! correct traces. Natural-language arithmetic ("one-third of 9") is never
//! parsed; the judge covers it.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::model::Answer;
use crate::par;
use crate::scan::scan_number_at;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num { value: BigRational, percent: bool },
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

enum EvalFailure {
    DivisionByZero,
}

impl Expr {
    fn eval(&self) -> Result<BigRational, EvalFailure> {
        match self {
            // A percent literal only ever evaluates under × or ÷ (validated
            // at extraction); v% reads as v/100 there.
            Expr::Num { value, percent } => Ok(if *percent {
                value / BigRational::from_integer(BigInt::from(100))
            } else {
                value.clone()
            }),
            Expr::Neg(inner) => Ok(-inner.eval()?),
            Expr::Bin(op, lhs, rhs) => {
                let l = lhs.eval()?;
                let r = rhs.eval()?;
                Ok(match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r.is_zero() {
                            return Err(EvalFailure::DivisionByZero);
                        }
                        l / r
                    }
                })
            }
        }
    }

    fn binary_op_count(&self) -> usize {
        match self {
            Expr::Num { .. } => 0,
            Expr::Neg(inner) => inner.binary_op_count(),
            Expr::Bin(_, lhs, rhs) => 1 + lhs.binary_op_count() + rhs.binary_op_count(),
        }
    }

    /// Percent literals are only meaningful multiplied against a count;
    /// anywhere else the equation's intent is ambiguous and we skip it.
    fn percents_valid(&self, under_product: bool) -> bool {
        match self {
            Expr::Num { percent, .. } => !*percent || under_product,
            Expr::Neg(inner) => inner.percents_valid(false),
            Expr::Bin(op, lhs, rhs) => {
                let product = matches!(op, BinOp::Mul | BinOp::Div);
                lhs.percents_valid(product) && rhs.percents_valid(product)
            }
        }
    }
}

/// One extracted equation: an arithmetic expression and the result the trace
/// states for it.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationStep {
    lhs: Expr,
    /// Source text of the expression side.
    pub lhs_text: String,
    pub stated: Answer,
    /// Decimal places shown for the stated result; bounds the rounding a
    /// verdict will accept.
    pub stated_decimals: u32,
    /// Byte range in the source text, expression through stated result.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictKind {
    Exact,
    Rounded,
    Wrong,
}

/// The verdict for one step: what the expression actually evaluates to and
/// whether the stated result is acceptable.
#[derive(Debug, Clone, PartialEq)]
pub struct StepVerdict {
    pub step: EquationStep,
    /// Absent exactly when the expression divides by zero.
    pub computed: Option<Answer>,
    pub ok: bool,
    pub kind: VerdictKind,
    pub division_by_zero: bool,
}

/// Everything the deterministic pass can say about one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicAudit {
    pub steps: Vec<StepVerdict>,
    pub calculator_errors: usize,
    pub format_error: bool,
    pub boxed_present: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num {
        value: BigRational,
        decimals: u32,
        percent: bool,
        span: (usize, usize),
    },
    Op {
        op: BinOp,
        span: (usize, usize),
    },
    Eq,
    LParen,
    RParen,
    /// Anything non-arithmetic; breaks a token run.
    Break,
}

fn tokenize(text: &str) -> Vec<Tok> {
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let mut pos = 0;
    let push_break = |toks: &mut Vec<Tok>| {
        if !matches!(toks.last(), Some(Tok::Break)) {
            toks.push(Tok::Break);
        }
    };
    while pos < bytes.len() {
        let b = bytes[pos];
        if b.is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        if b.is_ascii_digit() || (b == b'$' && scan_number_at(text, pos).is_some()) {
            if let Some(n) = scan_number_at(text, pos) {
                toks.push(Tok::Num {
                    value: n.value,
                    decimals: n.decimals,
                    percent: n.percent,
                    span: (n.start, n.end),
                });
                pos = n.end;
                continue;
            }
        }
        match b {
            b'+' => toks.push(Tok::Op {
                op: BinOp::Add,
                span: (pos, pos + 1),
            }),
            b'-' => toks.push(Tok::Op {
                op: BinOp::Sub,
                span: (pos, pos + 1),
            }),
            b'*' | b'/' => toks.push(Tok::Op {
                op: if b == b'*' { BinOp::Mul } else { BinOp::Div },
                span: (pos, pos + 1),
            }),
            b'=' => toks.push(Tok::Eq),
            b'(' => toks.push(Tok::LParen),
            b')' => toks.push(Tok::RParen),
            _ => {
                let ch = text[pos..].chars().next().expect("in-bounds char");
                match ch {
                    '\u{00d7}' => toks.push(Tok::Op {
                        op: BinOp::Mul,
                        span: (pos, pos + ch.len_utf8()),
                    }),
                    '\u{00f7}' => toks.push(Tok::Op {
                        op: BinOp::Div,
                        span: (pos, pos + ch.len_utf8()),
                    }),
                    '\u{2212}' => toks.push(Tok::Op {
                        op: BinOp::Sub,
                        span: (pos, pos + ch.len_utf8()),
                    }),
                    _ => push_break(&mut toks),
                }
                pos += ch.len_utf8();
                continue;
            }
        }
        pos += 1;
    }
    toks
}

fn tok_start(tok: &Tok) -> Option<usize> {
    match tok {
        Tok::Num { span, .. } | Tok::Op { span, .. } => Some(span.0),
        _ => None,
    }
}

fn tok_end(tok: &Tok) -> Option<usize> {
    match tok {
        Tok::Num { span, .. } | Tok::Op { span, .. } => Some(span.1),
        _ => None,
    }
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn parse_all(toks: &'a [Tok]) -> Option<Expr> {
        let mut p = Parser { toks, pos: 0 };
        let expr = p.expr()?;
        (p.pos == toks.len()).then_some(expr)
    }

    fn expr(&mut self) -> Option<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op {
            op: op @ (BinOp::Add | BinOp::Sub),
            ..
        }) = self.toks.get(self.pos)
        {
            let op = *op;
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Some(lhs)
    }

    fn term(&mut self) -> Option<Expr> {
        let mut lhs = self.factor()?;
        while let Some(Tok::Op {
            op: op @ (BinOp::Mul | BinOp::Div),
            ..
        }) = self.toks.get(self.pos)
        {
            let op = *op;
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Some(lhs)
    }

    fn factor(&mut self) -> Option<Expr> {
        if let Some(Tok::Op {
            op: BinOp::Sub, ..
        }) = self.toks.get(self.pos)
        {
            self.pos += 1;
            return Some(Expr::Neg(Box::new(self.factor()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Option<Expr> {
        match self.toks.get(self.pos)? {
            Tok::Num {
                value, percent, ..
            } => {
                let e = Expr::Num {
                    value: value.clone(),
                    percent: *percent,
                };
                self.pos += 1;
                Some(e)
            }
            Tok::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                matches!(self.toks.get(self.pos), Some(Tok::RParen)).then(|| {
                    self.pos += 1;
                    inner
                })
            }
            _ => None,
        }
    }
}

/// The stated side of a verified pair must be a bare literal, optionally
/// negated. Percent-stated results are ambiguous and skipped.
fn stated_literal(toks: &[Tok]) -> Option<(BigRational, u32, usize)> {
    match toks {
        [Tok::Num {
            value,
            decimals,
            percent: false,
            span,
        }] => Some((value.clone(), *decimals, span.1)),
        [Tok::Op {
            op: BinOp::Sub, ..
        }, Tok::Num {
            value,
            decimals,
            percent: false,
            span,
        }] => Some((-value.clone(), *decimals, span.1)),
        _ => None,
    }
}

/// Parse an expression element, shedding leading tokens (markdown debris,
/// stray operators) until the remainder parses completely.
fn parse_element(toks: &[Tok]) -> Option<(Expr, usize)> {
    (0..toks.len()).find_map(|skip| {
        Parser::parse_all(&toks[skip..]).map(|expr| (expr, skip))
    })
}

/// Every maximal arithmetic run matching `expr (= expr)* = number`, one step
/// per adjacent pair whose right side is a bare number. Unparseable text
/// yields zero steps, never a failure, and spans never overlap.
pub fn extract_equations(raw_text: &str) -> Vec<EquationStep> {
    let toks = tokenize(raw_text);
    let mut steps = Vec::new();

    for run in toks.split(|t| matches!(t, Tok::Break)) {
        if run.is_empty() {
            continue;
        }
        let elements: Vec<&[Tok]> = run.split(|t| matches!(t, Tok::Eq)).collect();
        if elements.len() < 2 {
            continue;
        }
        for pair in elements.windows(2) {
            let (lhs_toks, rhs_toks) = (pair[0], pair[1]);
            let Some((stated_value, stated_decimals, stated_end)) = stated_literal(rhs_toks)
            else {
                continue;
            };
            let Some((expr, skipped)) = parse_element(lhs_toks) else {
                continue;
            };
            if expr.binary_op_count() == 0 || !expr.percents_valid(false) {
                continue;
            }
            let used = &lhs_toks[skipped..];
            let start = used.iter().find_map(tok_start).expect("used tokens have spans");
            let lhs_end = used.iter().rev().find_map(tok_end).expect("spans");
            steps.push(EquationStep {
                lhs: expr,
                lhs_text: raw_text[start..lhs_end].to_string(),
                stated: Answer::new(stated_value),
                stated_decimals,
                span: (start, stated_end),
            });
        }
    }
    steps
}

fn pow10(exp: u32) -> BigRational {
    BigRational::from_integer(BigInt::from(10u32).pow(exp))
}

/// Accept a stated result at the precision the trace displayed: either
/// rounded half-away-from-zero or truncated toward zero. Only applies when
/// the computed value is not exactly representable at that precision.
fn matches_at_displayed_precision(
    computed: &BigRational,
    stated: &BigRational,
    decimals: u32,
) -> bool {
    let scale = pow10(decimals);
    let scaled = computed * &scale;
    if scaled.is_integer() {
        return false;
    }
    let stated_scaled = stated * &scale;
    if !stated_scaled.is_integer() {
        return false;
    }
    scaled.round() == stated_scaled || scaled.trunc() == stated_scaled
}

/// Evaluate a step's expression in exact rational arithmetic and grade the
/// stated result. Division by zero grades Wrong with a flag, never a crash.
pub fn verify_step(step: EquationStep) -> StepVerdict {
    match step.lhs.eval() {
        Err(EvalFailure::DivisionByZero) => StepVerdict {
            step,
            computed: None,
            ok: false,
            kind: VerdictKind::Wrong,
            division_by_zero: true,
        },
        Ok(computed) => {
            let kind = if &computed == step.stated.as_ratio() {
                VerdictKind::Exact
            } else if matches_at_displayed_precision(
                &computed,
                step.stated.as_ratio(),
                step.stated_decimals,
            ) {
                VerdictKind::Rounded
            } else {
                VerdictKind::Wrong
            };
            StepVerdict {
                step,
                computed: Some(Answer::new(computed)),
                ok: kind != VerdictKind::Wrong,
                kind,
                division_by_zero: false,
            }
        }
    }
}

/// Contents of the last `\boxed{...}` with balanced braces; absent when
/// there is none (unbalanced occurrences are skipped).
pub fn detect_boxed(raw_text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let occurrences: Vec<usize> = raw_text.match_indices(MARKER).map(|(i, _)| i).collect();
    for &start in occurrences.iter().rev() {
        let inner_start = start + MARKER.len();
        let mut depth = 1usize;
        for (offset, ch) in raw_text[inner_start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(raw_text[inner_start..inner_start + offset].to_string());
                    }
                }
                _ => {}
            }
        }
    }
    None
}

/// Run the whole deterministic pass over one trace.
pub fn audit_trace(raw_text: &str) -> DeterministicAudit {
    let steps: Vec<StepVerdict> = extract_equations(raw_text)
        .into_iter()
        .map(verify_step)
        .collect();
    let calculator_errors = steps.iter().filter(|v| v.kind == VerdictKind::Wrong).count();
    let boxed_present = detect_boxed(raw_text).is_some();
    DeterministicAudit {
        steps,
        calculator_errors,
        format_error: !boxed_present,
        boxed_present,
    }
}

/// Audit a batch of traces, in parallel when the `parallel` feature is on.
pub fn audit_traces<S: AsRef<str> + Sync>(texts: &[S]) -> Vec<DeterministicAudit> {
    par::map_slice(texts, |t| audit_trace(t.as_ref()))
}
