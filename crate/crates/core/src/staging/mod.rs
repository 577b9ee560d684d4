//! Staged user code: quoting, parsing, evaluation, and type inference.
//!
//! Programs are written in two stages. Stage one runs ordinary Rust that
//! builds a dataflow graph; the per-element logic inside that graph is staged
//! code, captured here as [`Quoted`] expressions. A quoted expression keeps
//! both an evaluable tree and its canonical source text, so the same logic
//! can run in-process, travel inside a location plan, and be re-parsed by a
//! worker on another machine, always meaning the same thing.

pub mod eval;
pub mod expr;
pub mod parse;
pub mod types;

pub use eval::{eval_call, EvalContext};
pub use expr::{Expr, Value};
pub use types::TypeTag;

use crate::error::StageError;

/// A staged expression: its tree, its canonical text, and the constants that
/// were spliced into it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Quoted {
    expr: Expr,
    source_text: String,
    captures: Vec<(String, Value)>,
}

impl Quoted {
    /// The canonical single-line source text. Two quotings of equivalent
    /// code produce byte-identical text, which is what lands in plans.
    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Captured constants in splice order, for inspection.
    pub fn captures(&self) -> &[(String, Value)] {
        &self.captures
    }

    /// Apply to arguments. Non-lambda expressions take no arguments.
    pub fn eval_call(
        &self,
        args: &[Value],
        ctx: &mut EvalContext,
    ) -> Result<Value, crate::error::EvalError> {
        eval::eval_call(&self.expr, args, ctx)
    }

    /// Number of parameters a use site must supply.
    pub fn arity(&self) -> usize {
        match &self.expr {
            Expr::Lambda(params, _) => params.len(),
            _ => 0,
        }
    }

    pub(crate) fn from_expr(expr: Expr) -> Quoted {
        let source_text = expr.canonical();
        Quoted { expr, source_text, captures: Vec::new() }
    }
}

/// Quote a source string with no captures. Free identifiers outside lambda
/// parameters are rejected, since nothing would bind them at a remote site.
pub fn quote(src: &str) -> Result<Quoted, StageError> {
    quote_with(src, &[])
}

/// Quote a source string, splicing named constants. Each capture is replaced
/// by its literal before the free-variable check, so the resulting text is
/// fully closed over lambda parameters.
pub fn quote_with(src: &str, captures: &[(&str, Value)]) -> Result<Quoted, StageError> {
    let mut expr = parse::parse(src)?;
    if expr.contains_call("self_id") {
        // Placement identity is wired up by the graph builder, not user code;
        // letting it into arbitrary expressions would make their meaning
        // depend on which instance happens to evaluate them.
        return Err(StageError::Parse {
            pos: 0,
            msg: "self_id() is reserved for builder-generated sources".into(),
        });
    }
    for (name, value) in captures {
        let Some(literal) = value.literal_expr() else {
            return Err(StageError::UnquotableCapture(format!(
                "{name}: value has no literal form"
            )));
        };
        expr = expr.substitute(name, &literal);
    }
    let free = expr.free_idents();
    if let Some(name) = free.into_iter().next() {
        return Err(StageError::UnquotableCapture(name));
    }
    let source_text = expr.canonical();
    Ok(Quoted {
        expr,
        source_text,
        captures: captures
            .iter()
            .map(|(n, v)| ((*n).to_string(), v.clone()))
            .collect(),
    })
}

/// Quote an expression written inline, panicking on malformed input:
///
/// ```
/// use weft::q;
/// let double = q!(|v| v * 2);
/// assert_eq!(double.source_text(), "|v| v * 2");
/// ```
///
/// With captures, local constants splice in as literals:
///
/// ```
/// use weft::q;
/// let n = 3i64;
/// let modn = q!([n] |v| v % n);
/// assert_eq!(modn.source_text(), "|v| v % 3");
/// ```
#[macro_export]
macro_rules! q {
    ([$($cap:ident),+ $(,)?] $($body:tt)+) => {
        $crate::staging::quote_with(
            stringify!($($body)+),
            &[$((stringify!($cap), $crate::staging::Value::from($cap.clone()))),+],
        )
        .expect("q! body must be a valid staged expression")
    };
    ($($body:tt)+) => {
        $crate::staging::quote(stringify!($($body)+))
            .expect("q! body must be a valid staged expression")
    };
}

impl From<i64> for Value {
    fn from(n: i64) -> Value {
        Value::Int(n)
    }
}

impl From<i32> for Value {
    fn from(n: i32) -> Value {
        Value::Int(i64::from(n))
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Value {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Value {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Value {
        Value::Str(s)
    }
}
