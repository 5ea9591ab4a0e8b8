//! Lexer and recursive-descent parser for factor expressions.
//!
//! Precedence, loosest first: `?:`, `||`, `&&`, comparisons, `+ -`, `* /`,
//! unary `-`. Function names are case-insensitive.

use thiserror::Error;

use super::ast::{check_param, Expr, FactorExpr, Variable};
use super::catalogue::{catalogue, Op, Slot};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown operator `{name}` at position {pos}")]
    UnknownOperator { pos: usize, name: String },
    #[error("unknown variable `{name}` at position {pos}")]
    UnknownVariable { pos: usize, name: String },
    #[error("arity mismatch at position {pos}: {op} takes {expected} arguments, got {got}")]
    Arity { pos: usize, op: String, expected: String, got: usize },
    #[error("invalid expression at position {pos}: {message}")]
    Invalid { pos: usize, message: String },
}

impl DslError {
    pub fn position(&self) -> usize {
        match self {
            DslError::Syntax { pos, .. }
            | DslError::UnknownOperator { pos, .. }
            | DslError::UnknownVariable { pos, .. }
            | DslError::Arity { pos, .. }
            | DslError::Invalid { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Gt,
    Lt,
    Ge,
    Le,
    EqEq,
    Ne,
    AndAnd,
    OrOr,
    Question,
    Colon,
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, DslError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| DslError::Syntax {
                pos: start,
                message: format!("malformed number `{lit}`"),
            })?;
            out.push((Tok::Number(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), start));
            continue;
        }
        let two = text.get(i..i + 2).unwrap_or("");
        let (tok, len) = match two {
            ">=" => (Tok::Ge, 2),
            "<=" => (Tok::Le, 2),
            "==" => (Tok::EqEq, 2),
            "!=" => (Tok::Ne, 2),
            "&&" => (Tok::AndAnd, 2),
            "||" => (Tok::OrOr, 2),
            _ => match c {
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                ',' => (Tok::Comma, 1),
                '+' => (Tok::Plus, 1),
                '-' => (Tok::Minus, 1),
                '*' => (Tok::Star, 1),
                '/' => (Tok::Slash, 1),
                '>' => (Tok::Gt, 1),
                '<' => (Tok::Lt, 1),
                '?' => (Tok::Question, 1),
                ':' => (Tok::Colon, 1),
                _ => {
                    return Err(DslError::Syntax { pos: start, message: format!("unexpected character `{c}`") })
                }
            },
        };
        out.push((tok, start));
        i += len;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), DslError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn unexpected(&self, what: &str) -> DslError {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            t => format!("{t:?}"),
        };
        DslError::Syntax { pos: self.pos(), message: format!("expected {what}, found {found}") }
    }

    fn ternary(&mut self) -> Result<Expr, DslError> {
        let pos = self.pos();
        let cond = self.or()?;
        if *self.peek() == Tok::Question {
            self.bump();
            let a = self.ternary()?;
            self.expect(Tok::Colon, "`:`")?;
            let b = self.ternary()?;
            return make_call(Op::IfElse, vec![cond, a, b], pos);
        }
        Ok(cond)
    }

    fn or(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::OrOr {
            let pos = self.pos();
            self.bump();
            let rhs = self.and()?;
            lhs = make_call(Op::Or, vec![lhs, rhs], pos)?;
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.cmp()?;
        while *self.peek() == Tok::AndAnd {
            let pos = self.pos();
            self.bump();
            let rhs = self.cmp()?;
            lhs = make_call(Op::And, vec![lhs, rhs], pos)?;
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.add()?;
        loop {
            let op = match self.peek() {
                Tok::Gt => Op::Gt,
                Tok::Lt => Op::Lt,
                Tok::Ge => Op::Ge,
                Tok::Le => Op::Le,
                Tok::EqEq => Op::Eq,
                Tok::Ne => Op::Ne,
                _ => return Ok(lhs),
            };
            let pos = self.pos();
            self.bump();
            let rhs = self.add()?;
            lhs = make_call(op, vec![lhs, rhs], pos)?;
        }
    }

    fn add(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.mul()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => Op::Add,
                Tok::Minus => Op::Sub,
                _ => return Ok(lhs),
            };
            let pos = self.pos();
            self.bump();
            let rhs = self.mul()?;
            lhs = make_call(op, vec![lhs, rhs], pos)?;
        }
    }

    fn mul(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => Op::Mul,
                Tok::Slash => Op::Div,
                _ => return Ok(lhs),
            };
            let pos = self.pos();
            self.bump();
            let rhs = self.unary()?;
            lhs = make_call(op, vec![lhs, rhs], pos)?;
        }
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if *self.peek() == Tok::Minus {
            let pos = self.pos();
            self.bump();
            if let Tok::Number(v) = *self.peek() {
                self.bump();
                return Ok(Expr::Num(-v));
            }
            let inner = self.unary()?;
            return make_call(Op::Neg, vec![inner], pos);
        }
        if *self.peek() == Tok::Plus {
            self.bump();
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Number(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.ternary()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.ternary()?);
                            if *self.peek() == Tok::Comma {
                                self.bump();
                                continue;
                            }
                            break;
                        }
                    }
                    self.expect(Tok::RParen, "`,` or `)`")?;
                    let op = match catalogue().lookup(&name, args.len()) {
                        None => return Err(DslError::UnknownOperator { pos, name }),
                        Some(Err(arities)) => {
                            let expected = arities.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" or ");
                            return Err(DslError::Arity {
                                pos,
                                op: name.to_ascii_uppercase(),
                                expected,
                                got: args.len(),
                            });
                        }
                        Some(Ok(op)) => op,
                    };
                    make_call(op, args, pos)
                } else {
                    Variable::from_name(&name)
                        .map(Expr::Var)
                        .ok_or(DslError::UnknownVariable { pos, name })
                }
            }
            _ => {
                self.at = self.at.saturating_sub(1);
                Err(self.unexpected("an expression"))
            }
        }
    }
}

fn make_call(op: Op, args: Vec<Expr>, pos: usize) -> Result<Expr, DslError> {
    for (i, (slot, arg)) in op.slots().iter().zip(&args).enumerate() {
        match slot {
            Slot::Param(kind) => {
                check_param(op, i, *kind, arg).map_err(|message| DslError::Invalid { pos, message })?
            }
            Slot::Series => {
                if matches!(arg, Expr::Call { op: Op::Sequence, .. }) {
                    return Err(DslError::Invalid {
                        pos,
                        message: "SEQUENCE(n) is only allowed as the regressor of REGBETA or REGRESI".into(),
                    });
                }
            }
            Slot::Regressor => {}
        }
    }
    Ok(Expr::call(op, args))
}

/// Parses and validates expression text.
pub fn parse(text: &str) -> Result<FactorExpr, DslError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    let root = p.ternary()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("end of input"));
    }
    FactorExpr::new(root).map_err(|message| DslError::Invalid { pos: 0, message })
}
