//! Boolean formulas over predicate ids: `a AND (b OR NOT c)`.
//! `&&`, `||`, `!` and the logic glyphs are accepted on input; output always
//! uses the keyword form with minimal parentheses.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::LogicError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Pred(String),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    /// Conjunction of the given ids; a single id stays bare.
    pub fn all_of<S: AsRef<str>>(ids: &[S]) -> Formula {
        let mut parts: Vec<Formula> = ids.iter().map(|s| Formula::Pred(s.as_ref().to_string())).collect();
        if parts.len() == 1 {
            parts.pop().expect("one element")
        } else {
            Formula::And(parts)
        }
    }

    pub fn parse(text: &str) -> Result<Formula, LogicError> {
        let tokens = lex(text)?;
        let mut p = Parser { tokens, pos: 0 };
        let f = p.or()?;
        if p.pos != p.tokens.len() {
            return Err(LogicError::Formula(format!("unexpected {:?} after complete formula", p.tokens[p.pos])));
        }
        Ok(f)
    }

    /// Ids referenced, in first-appearance order, each once.
    pub fn references(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        self.collect(&mut out, &mut seen);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a str>, seen: &mut BTreeSet<&'a str>) {
        match self {
            Formula::Pred(id) => {
                if seen.insert(id) {
                    out.push(id);
                }
            }
            Formula::Not(f) => f.collect(out, seen),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.collect(out, seen)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Or(_) => 0,
            Formula::And(_) => 1,
            _ => 2,
        }
    }

    fn write_child(&self, child: &Formula, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if child.precedence() <= self.precedence() {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Pred(id) => f.write_str(id),
            Formula::Not(inner) => {
                f.write_str("NOT ")?;
                if matches!(**inner, Formula::Pred(_) | Formula::Not(_)) {
                    write!(f, "{inner}")
                } else {
                    write!(f, "({inner})")
                }
            }
            Formula::And(parts) | Formula::Or(parts) => {
                let sep = if matches!(self, Formula::And(_)) { " AND " } else { " OR " };
                for (i, part) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    self.write_child(part, f)?;
                }
                Ok(())
            }
        }
    }
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Formula::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    And,
    Or,
    Not,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<Tok>, LogicError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        match c {
            _ if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            '∧' | '&' if two != "&&" => {
                out.push(Tok::And);
                i += 1
            }
            '∨' | '|' if two != "||" => {
                out.push(Tok::Or);
                i += 1
            }
            '¬' | '!' | '~' => {
                out.push(Tok::Not);
                i += 1
            }
            '&' => {
                out.push(Tok::And);
                i += 2
            }
            '|' => {
                out.push(Tok::Or);
                i += 2
            }
            _ if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '.' | '-')) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push(match word.to_ascii_uppercase().as_str() {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    _ => Tok::Id(word),
                });
            }
            _ => return Err(LogicError::Formula(format!("unexpected character {c:?} at {i}"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn or(&mut self) -> Result<Formula, LogicError> {
        let mut parts = vec![self.and()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(flatten(parts, true))
    }

    fn and(&mut self) -> Result<Formula, LogicError> {
        let mut parts = vec![self.unary()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            parts.push(self.unary()?);
        }
        Ok(flatten(parts, false))
    }

    fn unary(&mut self) -> Result<Formula, LogicError> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(Formula::Not(Box::new(self.unary()?)))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let f = self.or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(LogicError::Formula("missing closing parenthesis".into()));
                }
                self.pos += 1;
                Ok(f)
            }
            Some(Tok::Id(id)) => {
                self.pos += 1;
                Ok(Formula::Pred(id))
            }
            Some(t) => Err(LogicError::Formula(format!("expected a predicate id, found {t:?}"))),
            None => Err(LogicError::Formula("formula ended early".into())),
        }
    }
}

fn flatten(parts: Vec<Formula>, is_or: bool) -> Formula {
    if parts.len() == 1 {
        return parts.into_iter().next().expect("one element");
    }
    let mut flat = Vec::new();
    for p in parts {
        match (p, is_or) {
            (Formula::Or(inner), true) | (Formula::And(inner), false) => flat.extend(inner),
            (other, _) => flat.push(other),
        }
    }
    if is_or {
        Formula::Or(flat)
    } else {
        Formula::And(flat)
    }
}
