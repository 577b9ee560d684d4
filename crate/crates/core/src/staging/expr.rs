//! Expression trees for staged user code.
//!
//! Quoted expressions have a dual life: they are evaluated directly while the
//! stage-one program runs (and later by plan interpreters), and they are
//! printed into per-location plans as canonical text. The canonical form is a
//! whitespace-normalized single line, so determinism can be checked byte-wise.

use std::collections::BTreeSet;
use std::fmt;

/// Unary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    /// Logical negation `!`.
    Not,
    /// Arithmetic negation `-`.
    Neg,
}

/// Binary operators, Rust-flavored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Rem => "%",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::And => "&&",
            BinaryOp::Or => "||",
        }
    }

    /// Binding strength; larger binds tighter. Mirrors Rust's operator table.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => prec::OR,
            BinaryOp::And => prec::AND,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt
            | BinaryOp::Ge => prec::CMP,
            BinaryOp::Add | BinaryOp::Sub => prec::ADD,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => prec::MUL,
        }
    }

    /// Comparisons are non-associative; everything else chains to the left.
    pub fn left_assoc(self) -> bool {
        !matches!(
            self,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge
        )
    }
}

/// Precedence levels used by both the printer and the parser.
pub(crate) mod prec {
    pub const EXPR: u8 = 0; // full expression, including ranges
    pub const RANGE: u8 = 1;
    pub const OR: u8 = 2;
    pub const AND: u8 = 3;
    pub const CMP: u8 = 4;
    pub const ADD: u8 = 5;
    pub const MUL: u8 = 6;
    pub const UNARY: u8 = 7;
    pub const POSTFIX: u8 = 8;
}

/// A staged expression. Lambdas may appear only at the top level of a quoted
/// expression; everything below them is first-order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Int(i64),
    Bool(bool),
    Str(String),
    /// Reference to a lambda parameter or (before splicing) a captured name.
    Ident(String),
    /// `(a, b, ...)`; the empty tuple is unit. One-element tuples do not exist.
    Tuple(Vec<Expr>),
    /// `[a, b, ...]`
    List(Vec<Expr>),
    /// `lo .. hi`, half-open.
    Range(Box<Expr>, Box<Expr>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Tuple projection `e.0`.
    Field(Box<Expr>, usize),
    /// Built-in call, e.g. `hash(w)`. Only names in [`super::eval::BUILTINS`]
    /// parse.
    Call(String, Vec<Expr>),
    /// `if c { t } else { e }`; both branches are expressions.
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    /// `|a, b| body`. Top level only.
    Lambda(Vec<String>, Box<Expr>),
}

impl Expr {
    /// Canonical single-line text. Parsing this back yields an equal tree.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, prec::EXPR);
        out
    }

    fn write(&self, out: &mut String, min: u8) {
        match self {
            // A negative literal lexes as unary minus plus a numeral, so in
            // postfix position it needs parens: (-1).0, not -1.0.
            Expr::Int(n) if *n < 0 && min > prec::UNARY => {
                out.push('(');
                out.push_str(&n.to_string());
                out.push(')');
            }
            Expr::Int(n) => out.push_str(&n.to_string()),
            Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Expr::Str(s) => write_str_literal(out, s),
            Expr::Ident(name) => out.push_str(name),
            Expr::Tuple(items) => {
                out.push('(');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.write(out, prec::EXPR);
                }
                out.push(')');
            }
            Expr::List(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.write(out, prec::EXPR);
                }
                out.push(']');
            }
            Expr::Range(lo, hi) => {
                let wrap = min > prec::RANGE;
                if wrap {
                    out.push('(');
                }
                lo.write(out, prec::RANGE + 1);
                out.push_str(" .. ");
                hi.write(out, prec::RANGE + 1);
                if wrap {
                    out.push(')');
                }
            }
            Expr::Unary(op, inner) => {
                let wrap = min > prec::UNARY;
                if wrap {
                    out.push('(');
                }
                out.push(match op {
                    UnaryOp::Not => '!',
                    UnaryOp::Neg => '-',
                });
                inner.write(out, prec::UNARY);
                if wrap {
                    out.push(')');
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let p = op.precedence();
                let wrap = min > p;
                if wrap {
                    out.push('(');
                }
                let (lp, rp) = if op.left_assoc() { (p, p + 1) } else { (p + 1, p + 1) };
                lhs.write(out, lp);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                rhs.write(out, rp);
                if wrap {
                    out.push(')');
                }
            }
            Expr::Field(base, idx) => {
                base.write(out, prec::POSTFIX);
                out.push('.');
                out.push_str(&idx.to_string());
            }
            Expr::Call(name, args) => {
                out.push_str(name);
                out.push('(');
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    arg.write(out, prec::EXPR);
                }
                out.push(')');
            }
            Expr::If(cond, then, alt) => {
                out.push_str("if ");
                cond.write(out, prec::RANGE);
                out.push_str(" { ");
                then.write(out, prec::EXPR);
                out.push_str(" } else { ");
                alt.write(out, prec::EXPR);
                out.push_str(" }");
            }
            Expr::Lambda(params, body) => {
                out.push('|');
                for (i, p) in params.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(p);
                }
                out.push_str("| ");
                body.write(out, prec::EXPR);
            }
        }
    }

    /// Free identifiers: names referenced but not bound by an enclosing lambda.
    pub fn free_idents(&self) -> BTreeSet<String> {
        let mut free = BTreeSet::new();
        let mut bound = Vec::new();
        self.collect_free(&mut bound, &mut free);
        free
    }

    fn collect_free(&self, bound: &mut Vec<String>, free: &mut BTreeSet<String>) {
        match self {
            Expr::Ident(name) => {
                if !bound.iter().any(|b| b == name) {
                    free.insert(name.clone());
                }
            }
            Expr::Lambda(params, body) => {
                let depth = bound.len();
                bound.extend(params.iter().cloned());
                body.collect_free(bound, free);
                bound.truncate(depth);
            }
            _ => {
                self.visit_children(&mut |child| child.collect_free(bound, free));
            }
        }
    }

    /// Replace every free occurrence of `name` with `value`.
    pub fn substitute(&self, name: &str, value: &Expr) -> Expr {
        match self {
            Expr::Ident(id) if id == name => value.clone(),
            Expr::Lambda(params, _) if params.iter().any(|p| p == name) => self.clone(),
            Expr::Lambda(params, body) => {
                Expr::Lambda(params.clone(), Box::new(body.substitute(name, value)))
            }
            Expr::Int(_) | Expr::Bool(_) | Expr::Str(_) | Expr::Ident(_) => self.clone(),
            Expr::Tuple(items) => {
                Expr::Tuple(items.iter().map(|e| e.substitute(name, value)).collect())
            }
            Expr::List(items) => {
                Expr::List(items.iter().map(|e| e.substitute(name, value)).collect())
            }
            Expr::Range(lo, hi) => Expr::Range(
                Box::new(lo.substitute(name, value)),
                Box::new(hi.substitute(name, value)),
            ),
            Expr::Unary(op, inner) => Expr::Unary(*op, Box::new(inner.substitute(name, value))),
            Expr::Binary(op, lhs, rhs) => Expr::Binary(
                *op,
                Box::new(lhs.substitute(name, value)),
                Box::new(rhs.substitute(name, value)),
            ),
            Expr::Field(base, idx) => Expr::Field(Box::new(base.substitute(name, value)), *idx),
            Expr::Call(f, args) => Expr::Call(
                f.clone(),
                args.iter().map(|e| e.substitute(name, value)).collect(),
            ),
            Expr::If(c, t, e) => Expr::If(
                Box::new(c.substitute(name, value)),
                Box::new(t.substitute(name, value)),
                Box::new(e.substitute(name, value)),
            ),
        }
    }

    /// Whether any call to builtin `name` appears in the tree.
    pub fn contains_call(&self, name: &str) -> bool {
        if let Expr::Call(f, _) = self {
            if f == name {
                return true;
            }
        }
        let mut found = false;
        self.visit_children(&mut |child| {
            if child.contains_call(name) {
                found = true;
            }
        });
        found
    }

    fn visit_children(&self, f: &mut impl FnMut(&Expr)) {
        match self {
            Expr::Int(_) | Expr::Bool(_) | Expr::Str(_) | Expr::Ident(_) => {}
            Expr::Tuple(items) | Expr::List(items) => items.iter().for_each(|e| f(e)),
            Expr::Range(a, b) => {
                f(a);
                f(b);
            }
            Expr::Unary(_, e) => f(e),
            Expr::Binary(_, a, b) => {
                f(a);
                f(b);
            }
            Expr::Field(e, _) => f(e),
            Expr::Call(_, args) => args.iter().for_each(|e| f(e)),
            Expr::If(c, t, e) => {
                f(c);
                f(t);
                f(e);
            }
            Expr::Lambda(_, body) => f(body),
        }
    }
}

fn write_str_literal(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{{{:x}}}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// A runtime value flowing through streams.
///
/// Cluster ids are kept distinct from plain integers so addressing and
/// provenance tags cannot be confused with payload data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Str(String),
    ClusterId(u32),
    Tuple(Vec<Value>),
    List(Vec<Value>),
    Unit,
}

impl Value {
    pub fn pair(a: Value, b: Value) -> Value {
        Value::Tuple(vec![a, b])
    }

    /// The literal expression this constant splices to, or `None` when the
    /// value has no textual form (one-element tuples).
    pub fn literal_expr(&self) -> Option<Expr> {
        match self {
            Value::Int(n) => Some(Expr::Int(*n)),
            Value::Bool(b) => Some(Expr::Bool(*b)),
            Value::Str(s) => Some(Expr::Str(s.clone())),
            Value::ClusterId(id) => Some(Expr::Call("cid".into(), vec![Expr::Int(*id as i64)])),
            Value::Unit => Some(Expr::Tuple(Vec::new())),
            Value::Tuple(items) if items.len() == 1 => None,
            Value::Tuple(items) => {
                let exprs: Option<Vec<Expr>> = items.iter().map(Value::literal_expr).collect();
                Some(Expr::Tuple(exprs?))
            }
            Value::List(items) => {
                let exprs: Option<Vec<Expr>> = items.iter().map(Value::literal_expr).collect();
                Some(Expr::List(exprs?))
            }
        }
    }

    fn write_nested(&self, out: &mut String) {
        match self {
            Value::Int(n) => out.push_str(&n.to_string()),
            Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Value::Str(s) => write_str_literal(out, s),
            Value::ClusterId(id) => out.push_str(&id.to_string()),
            Value::Tuple(items) => {
                out.push('(');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    v.write_nested(out);
                }
                out.push(')');
            }
            Value::List(items) => {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    v.write_nested(out);
                }
                out.push(']');
            }
            Value::Unit => out.push_str("()"),
        }
    }
}

/// Top-level display: bare strings print their characters verbatim, the way
/// `println!("{}", s)` would; inside containers they are quoted and escaped.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => f.write_str(s),
            other => {
                let mut out = String::new();
                other.write_nested(&mut out);
                f.write_str(&out)
            }
        }
    }
}
