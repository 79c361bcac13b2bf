//! Rule expression language: parsing, static checks and three-valued evaluation.

use std::fmt;

use crate::features::{lookup, FeatureDescriptor, FeatureScope, FeatureSet};
use crate::ptbxl::LEAD_NAMES;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unknown lead {0:?}")]
    UnknownLead(String),
    #[error("{0}")]
    Type(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Quoted(String),
    Op(&'static str),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |column: usize, message: &str| ExprError::Syntax {
        column: column + 1,
        message: message.to_string(),
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse().map_err(|_| err(start, "malformed number"))?;
            out.push((start, Tok::Num(v)));
        } else if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((start, Tok::Ident(chars[start..i].iter().collect())));
        } else if c == '"' || c == '\'' {
            i += 1;
            while i < chars.len() && chars[i] != c {
                i += 1;
            }
            if i == chars.len() {
                return Err(err(start, "unterminated quoted name"));
            }
            out.push((start, Tok::Quoted(chars[start + 1..i].iter().collect())));
            i += 1;
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op = match two.as_str() {
                "<=" => Some("<="),
                ">=" => Some(">="),
                "==" => Some("=="),
                "!=" => Some("!="),
                _ => None,
            };
            if let Some(op) = op {
                out.push((start, Tok::Op(op)));
                i += 2;
                continue;
            }
            let op = match c {
                '<' => "<",
                '>' => ">",
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '/' => "/",
                '(' => "(",
                ')' => ")",
                '[' => "[",
                ']' => "]",
                ',' => ",",
                _ => return Err(err(start, &format!("unexpected character {c:?}"))),
            };
            out.push((start, Tok::Op(op)));
            i += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantifier {
    Any,
    All,
}

/// A feature reference. `lead` is `None` for global features and for lead
/// features bound by an enclosing quantifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRef {
    pub feature: &'static FeatureDescriptor,
    pub lead: Option<String>,
}

impl fmt::Display for FeatureRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.lead {
            Some(l) => write!(f, "{}[{l}]", self.feature.name),
            None => f.write_str(self.feature.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Ref(FeatureRef),
    Neg(Box<Expr>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    Count(Vec<String>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Present(FeatureRef),
    Absent(FeatureRef),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Quant(Quantifier, Vec<String>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Num,
    Bool,
}

pub const LIMB_LEADS: [&str; 6] = ["I", "II", "III", "aVR", "aVL", "aVF"];
pub const PRECORDIAL_LEADS: [&str; 6] = ["V1", "V2", "V3", "V4", "V5", "V6"];

fn canonical_lead(name: &str) -> Option<&'static str> {
    LEAD_NAMES.iter().copied().find(|l| l.eq_ignore_ascii_case(name))
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map(|(c, _)| c + 1).unwrap_or(self.end + 1)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            column: self.column(),
            message: message.into(),
        })
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Some(Tok::Op(o)) if *o == op)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == w)
    }

    fn expect_op(&mut self, op: &str) -> Result<(), ExprError> {
        if self.is_op(op) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {op:?}"))
        }
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and()?;
        while self.is_word("or") {
            self.pos += 1;
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.not()?;
        while self.is_word("and") {
            self.pos += 1;
            lhs = Expr::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, ExprError> {
        if self.is_word("not") {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.comparison()
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        match self.peek() {
            Some(Tok::Op("<")) => Some(CmpOp::Lt),
            Some(Tok::Op("<=")) => Some(CmpOp::Le),
            Some(Tok::Op(">")) => Some(CmpOp::Gt),
            Some(Tok::Op(">=")) => Some(CmpOp::Ge),
            Some(Tok::Op("==")) => Some(CmpOp::Eq),
            Some(Tok::Op("!=")) => Some(CmpOp::Ne),
            _ => None,
        }
    }

    /// `a op b` or the chained form `a op b op c`, meaning `a op b and b op c`.
    fn comparison(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.sum()?;
        let Some(op) = self.cmp_op() else { return Ok(lhs) };
        self.pos += 1;
        let mid = self.sum()?;
        let first = Expr::Cmp(op, Box::new(lhs), Box::new(mid.clone()));
        match self.cmp_op() {
            Some(op2) => {
                self.pos += 1;
                let rhs = self.sum()?;
                Ok(Expr::And(Box::new(first), Box::new(Expr::Cmp(op2, Box::new(mid), Box::new(rhs)))))
            }
            None => Ok(first),
        }
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_op("+") {
                ArithOp::Add
            } else if self.is_op("-") {
                ArithOp::Sub
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.is_op("*") {
                ArithOp::Mul
            } else if self.is_op("/") {
                ArithOp::Div
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.is_op("-") {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn lead_list(&mut self) -> Result<Vec<String>, ExprError> {
        self.expect_op("[")?;
        let mut leads = Vec::new();
        loop {
            let name = match self.peek() {
                Some(Tok::Ident(s)) => s.clone(),
                _ => return self.fail("expected a lead name"),
            };
            self.pos += 1;
            match name.as_str() {
                "limb" => leads.extend(LIMB_LEADS.iter().map(|s| s.to_string())),
                "precordial" => leads.extend(PRECORDIAL_LEADS.iter().map(|s| s.to_string())),
                "all" => leads.extend(LEAD_NAMES.iter().map(|s| s.to_string())),
                other => {
                    let l = canonical_lead(other).ok_or_else(|| ExprError::UnknownLead(other.to_string()))?;
                    leads.push(l.to_string());
                }
            }
            if self.is_op(",") {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect_op("]")?;
        leads.dedup();
        Ok(leads)
    }

    fn feature_ref(&mut self, name: &str) -> Result<FeatureRef, ExprError> {
        let feature = lookup(name).ok_or_else(|| ExprError::UnknownFeature(name.to_string()))?;
        let lead = if self.is_op("[") {
            self.pos += 1;
            let l = match self.peek() {
                Some(Tok::Ident(s)) => s.clone(),
                _ => return self.fail("expected a lead name"),
            };
            self.pos += 1;
            self.expect_op("]")?;
            Some(canonical_lead(&l).ok_or(ExprError::UnknownLead(l))?.to_string())
        } else {
            None
        };
        Ok(FeatureRef { feature, lead })
    }

    fn ref_arg(&mut self) -> Result<FeatureRef, ExprError> {
        self.expect_op("(")?;
        let name = match self.peek().cloned() {
            Some(Tok::Ident(s)) | Some(Tok::Quoted(s)) => s,
            _ => return self.fail("expected a feature name"),
        };
        self.pos += 1;
        let r = self.feature_ref(&name)?;
        self.expect_op(")")?;
        Ok(r)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return self.fail("unexpected end of expression");
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op("(") => {
                let e = self.or()?;
                self.expect_op(")")?;
                Ok(e)
            }
            Tok::Quoted(name) => Ok(Expr::Ref(self.feature_ref(&name)?)),
            Tok::Ident(word) => match word.as_str() {
                "any" | "all" | "count" => {
                    let leads = self.lead_list()?;
                    self.expect_op("(")?;
                    let body = self.or()?;
                    self.expect_op(")")?;
                    Ok(match word.as_str() {
                        "any" => Expr::Quant(Quantifier::Any, leads, Box::new(body)),
                        "all" => Expr::Quant(Quantifier::All, leads, Box::new(body)),
                        _ => Expr::Count(leads, Box::new(body)),
                    })
                }
                "present" => Ok(Expr::Present(self.ref_arg()?)),
                "absent" => Ok(Expr::Absent(self.ref_arg()?)),
                "abs" | "min" | "max" => {
                    let f = match word.as_str() {
                        "abs" => Func::Abs,
                        "min" => Func::Min,
                        _ => Func::Max,
                    };
                    self.expect_op("(")?;
                    let mut args = vec![self.sum()?];
                    while self.is_op(",") {
                        self.pos += 1;
                        args.push(self.sum()?);
                    }
                    self.expect_op(")")?;
                    if f == Func::Abs && args.len() != 1 {
                        return self.fail("abs takes one argument");
                    }
                    Ok(Expr::Call(f, args))
                }
                "and" | "or" | "not" => {
                    self.pos -= 1;
                    self.fail(format!("unexpected {word:?}"))
                }
                _ => Ok(Expr::Ref(self.feature_ref(&word)?)),
            },
            Tok::Op(op) => {
                self.pos -= 1;
                self.fail(format!("unexpected {op:?}"))
            }
        }
    }
}

fn check(e: &Expr, bound: bool) -> Result<Kind, ExprError> {
    let num = |e: &Expr, bound| match check(e, bound)? {
        Kind::Num => Ok(()),
        Kind::Bool => Err(ExprError::Type("expected a number, found a condition".into())),
    };
    let boolean = |e: &Expr, bound| match check(e, bound)? {
        Kind::Bool => Ok(()),
        Kind::Num => Err(ExprError::Type("expected a condition, found a number".into())),
    };
    let reference = |r: &FeatureRef| match (r.feature.scope, &r.lead) {
        (FeatureScope::Global, Some(l)) => Err(ExprError::Type(format!("global feature {:?} cannot take lead [{l}]", r.feature.name))),
        (FeatureScope::Lead, None) if !bound => Err(ExprError::Type(format!(
            "lead feature {:?} needs a lead, e.g. [V1], or an enclosing any/all/count",
            r.feature.name
        ))),
        _ => Ok(()),
    };
    match e {
        Expr::Num(_) => Ok(Kind::Num),
        Expr::Ref(r) => reference(r).map(|_| Kind::Num),
        Expr::Neg(a) => num(a, bound).map(|_| Kind::Num),
        Expr::Arith(_, a, b) => {
            num(a, bound)?;
            num(b, bound)?;
            Ok(Kind::Num)
        }
        Expr::Call(_, args) => {
            for a in args {
                num(a, bound)?;
            }
            Ok(Kind::Num)
        }
        Expr::Count(_, body) => boolean(body, true).map(|_| Kind::Num),
        Expr::Cmp(_, a, b) => {
            num(a, bound)?;
            num(b, bound)?;
            Ok(Kind::Bool)
        }
        Expr::Present(r) | Expr::Absent(r) => reference(r).map(|_| Kind::Bool),
        Expr::Not(a) => boolean(a, bound).map(|_| Kind::Bool),
        Expr::And(a, b) | Expr::Or(a, b) => {
            boolean(a, bound)?;
            boolean(b, bound)?;
            Ok(Kind::Bool)
        }
        Expr::Quant(_, _, body) => boolean(body, true).map(|_| Kind::Bool),
    }
}

/// Parses a condition and checks feature references, lead qualifiers and types.
pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.chars().count(),
    };
    let e = p.or()?;
    if p.pos != p.toks.len() {
        return p.fail("unexpected trailing input");
    }
    match check(&e, false)? {
        Kind::Bool => Ok(e),
        Kind::Num => Err(ExprError::Type("a rule condition must be a comparison, not a number".into())),
    }
}

/// Kleene truth value: comparisons involving absent features are unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    fn from_bool(b: bool) -> Self {
        if b {
            Truth::True
        } else {
            Truth::False
        }
    }

    fn not(self) -> Self {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Unknown => Truth::Unknown,
        }
    }

    fn and(self, o: Self) -> Self {
        match (self, o) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, Truth::True) => Truth::True,
            _ => Truth::Unknown,
        }
    }

    fn or(self, o: Self) -> Self {
        match (self, o) {
            (Truth::True, _) | (_, Truth::True) => Truth::True,
            (Truth::False, Truth::False) => Truth::False,
            _ => Truth::Unknown,
        }
    }

    pub fn is_true(self) -> bool {
        self == Truth::True
    }
}

fn resolve(r: &FeatureRef, fs: &FeatureSet, lead: Option<&str>) -> Option<f64> {
    match r.feature.scope {
        FeatureScope::Global => fs.value(r.feature.key, None),
        FeatureScope::Lead => fs.value(r.feature.key, r.lead.as_deref().or(lead)),
    }
}

fn num(e: &Expr, fs: &FeatureSet, lead: Option<&str>) -> Option<f64> {
    let v = match e {
        Expr::Num(v) => Some(*v),
        Expr::Ref(r) => resolve(r, fs, lead),
        Expr::Neg(a) => num(a, fs, lead).map(|v| -v),
        Expr::Arith(op, a, b) => {
            let (a, b) = (num(a, fs, lead)?, num(b, fs, lead)?);
            match op {
                ArithOp::Add => Some(a + b),
                ArithOp::Sub => Some(a - b),
                ArithOp::Mul => Some(a * b),
                ArithOp::Div => (b != 0.0).then(|| a / b),
            }
        }
        Expr::Call(Func::Abs, args) => num(&args[0], fs, lead).map(f64::abs),
        // min/max skip absent arguments.
        Expr::Call(f, args) => args.iter().filter_map(|a| num(a, fs, lead)).reduce(|x, y| match f {
            Func::Min => x.min(y),
            _ => x.max(y),
        }),
        Expr::Count(leads, body) => Some(leads.iter().filter(|l| truth(body, fs, Some(l.as_str())).is_true()).count() as f64),
        _ => unreachable!("type-checked at load"),
    };
    v.filter(|x| x.is_finite())
}

fn truth(e: &Expr, fs: &FeatureSet, lead: Option<&str>) -> Truth {
    match e {
        Expr::Cmp(op, a, b) => match (num(a, fs, lead), num(b, fs, lead)) {
            (Some(a), Some(b)) => Truth::from_bool(op.apply(a, b)),
            _ => Truth::Unknown,
        },
        Expr::Present(r) => Truth::from_bool(resolve(r, fs, lead).is_some()),
        Expr::Absent(r) => Truth::from_bool(resolve(r, fs, lead).is_none()),
        Expr::Not(a) => truth(a, fs, lead).not(),
        Expr::And(a, b) => truth(a, fs, lead).and(truth(b, fs, lead)),
        Expr::Or(a, b) => truth(a, fs, lead).or(truth(b, fs, lead)),
        Expr::Quant(q, leads, body) => {
            let vals = leads.iter().map(|l| truth(body, fs, Some(l.as_str())));
            match q {
                Quantifier::Any => vals.fold(Truth::False, Truth::or),
                Quantifier::All => vals.fold(Truth::True, Truth::and),
            }
        }
        _ => unreachable!("type-checked at load"),
    }
}

impl Expr {
    /// Three-valued result; a rule fires only on [`Truth::True`].
    pub fn eval(&self, fs: &FeatureSet) -> Truth {
        truth(self, fs, None)
    }

    /// Every feature reference with quantifier leads expanded.
    pub fn references(&self) -> Vec<FeatureRef> {
        let mut out = Vec::new();
        self.collect_refs(None, &mut out);
        out
    }

    fn collect_refs(&self, leads: Option<&[String]>, out: &mut Vec<FeatureRef>) {
        let mut push = |r: &FeatureRef| {
            let expanded: Vec<FeatureRef> = match (&r.lead, r.feature.scope, leads) {
                (None, FeatureScope::Lead, Some(ls)) => ls
                    .iter()
                    .map(|l| FeatureRef {
                        feature: r.feature,
                        lead: Some(l.clone()),
                    })
                    .collect(),
                _ => vec![r.clone()],
            };
            for e in expanded {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        };
        match self {
            Expr::Num(_) => {}
            Expr::Ref(r) | Expr::Present(r) | Expr::Absent(r) => push(r),
            Expr::Neg(a) | Expr::Not(a) => a.collect_refs(leads, out),
            Expr::Arith(_, a, b) | Expr::Cmp(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_refs(leads, out);
                b.collect_refs(leads, out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_refs(leads, out)),
            Expr::Count(ls, body) | Expr::Quant(_, ls, body) => body.collect_refs(Some(ls), out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs_with(pairs: &[(&str, Option<&str>, f64)]) -> FeatureSet {
        let mut fs = FeatureSet::absent(1);
        for &(k, lead, v) in pairs {
            match lead {
                Some(l) => fs.lead_mut(l).unwrap().set(k, Some(v)),
                None => fs.global.set(k, Some(v)),
            }
        }
        fs
    }

    #[test]
    fn parses_and_evaluates() {
        let fs = fs_with(&[("heart_rate", None, 50.0), ("r_prime_amplitude", Some("V1"), 300.0)]);
        assert_eq!(parse("heart_rate < 60").unwrap().eval(&fs), Truth::True);
        assert_eq!(parse("'heart rate' >= 60").unwrap().eval(&fs), Truth::False);
        assert_eq!(parse("40 <= heart_rate < 60").unwrap().eval(&fs), Truth::True);
        assert_eq!(parse("any[V1, V2](r_prime_amplitude > 0)").unwrap().eval(&fs), Truth::True);
        assert_eq!(parse("all[V1, V2](r_prime_amplitude > 0)").unwrap().eval(&fs), Truth::Unknown);
        assert_eq!(parse("count[precordial](present(r_prime_amplitude)) == 1").unwrap().eval(&fs), Truth::True);
        assert_eq!(parse("max(r_amplitude[V5], r_prime_amplitude[V1]) > 200").unwrap().eval(&fs), Truth::True);
        assert_eq!(parse("not (qtc_bazett > 460)").unwrap().eval(&fs), Truth::Unknown);
        assert_eq!(parse("qtc_bazett > 460 or heart_rate < 60").unwrap().eval(&fs), Truth::True);
        assert_eq!(parse("-heart_rate * 2 + 100 == 0").unwrap().eval(&fs), Truth::True);
    }

    #[test]
    fn rejects_bad_references() {
        assert_eq!(parse("'QRSS duration' > 120"), Err(ExprError::UnknownFeature("QRSS duration".into())));
        assert!(matches!(parse("qrs_duration > 120"), Err(ExprError::Type(_))));
        assert!(matches!(parse("heart_rate[II] > 1"), Err(ExprError::Type(_))));
        assert_eq!(parse("qrs_duration[V7] > 1"), Err(ExprError::UnknownLead("V7".into())));
        assert!(matches!(parse("heart_rate"), Err(ExprError::Type(_))));
        assert!(matches!(parse("heart_rate < 60 and"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("(heart_rate < 60) + 1 > 0"), Err(ExprError::Type(_))));
    }

    #[test]
    fn references_expand_quantified_leads() {
        let e = parse("any[V1,V2](r_prime_amplitude > 0) and global_qrs_duration >= 120").unwrap();
        let refs: Vec<String> = e.references().iter().map(|r| r.to_string()).collect();
        assert_eq!(refs, ["R' amplitude[V1]", "R' amplitude[V2]", "global QRS duration"]);
    }
}
