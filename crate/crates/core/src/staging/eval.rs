//! Evaluation of staged expressions.
//!
//! The same evaluator runs in three places: under the single-process oracle,
//! inside distributed workers interpreting their location plan, and directly
//! when user code evaluates a quoted expression for its value. All integer
//! arithmetic wraps; division and remainder by zero are errors rather than
//! panics so a bad plan fails the instance instead of the process.

use std::collections::BTreeMap;

use super::expr::{BinaryOp, Expr, UnaryOp, Value};
use super::types::TypeTag;
use crate::error::EvalError;

/// Names callable from staged code. `self_id` is reserved: it only appears in
/// payloads the builder generates itself, never in user-quoted sources.
pub const BUILTINS: &[&str] =
    &["hash", "pick", "cid", "print", "bump", "cluster_ids", "self_id"];

pub fn is_builtin(name: &str) -> bool {
    BUILTINS.contains(&name)
}

/// Per-instance evaluation state.
///
/// `cluster_sizes` comes from the deployment manifest, `self_member` is set
/// for cluster members only, and `output` collects everything printed, one
/// entry per `print` call, in order.
#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    pub cluster_sizes: BTreeMap<u32, u32>,
    pub self_member: Option<u32>,
    pub output: Vec<String>,
}

impl EvalContext {
    pub fn new(cluster_sizes: BTreeMap<u32, u32>) -> Self {
        EvalContext { cluster_sizes, self_member: None, output: Vec::new() }
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes, masked to the non-negative i64 range
/// so `hash(w) % n` behaves the same everywhere.
pub fn fnv1a64(text: &str) -> i64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h & 0x7fff_ffff_ffff_ffff) as i64
}

/// SplitMix64 finalizer; the engine behind `pick`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic choice of a member id from `0..n` for (seed, draw) pairs.
pub fn pick_member(seed: i64, draw: i64, n: i64) -> Result<u32, EvalError> {
    if n <= 0 {
        return Err(EvalError::Arithmetic(format!("pick needs a positive member count, got {n}")));
    }
    let mixed = splitmix64((seed as u64) ^ (draw as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    Ok((mixed % n as u64) as u32)
}

pub fn eval(expr: &Expr, env: &BTreeMap<String, Value>, ctx: &mut EvalContext) -> Result<Value, EvalError> {
    match expr {
        Expr::Int(n) => Ok(Value::Int(*n)),
        Expr::Bool(b) => Ok(Value::Bool(*b)),
        Expr::Str(s) => Ok(Value::Str(s.clone())),
        Expr::Ident(name) => env
            .get(name)
            .cloned()
            .ok_or_else(|| EvalError::Unbound(name.clone())),
        Expr::Tuple(items) if items.is_empty() => Ok(Value::Unit),
        Expr::Tuple(items) => {
            let vals: Result<Vec<Value>, EvalError> =
                items.iter().map(|e| eval(e, env, ctx)).collect();
            Ok(Value::Tuple(vals?))
        }
        Expr::List(items) => {
            let vals: Result<Vec<Value>, EvalError> =
                items.iter().map(|e| eval(e, env, ctx)).collect();
            Ok(Value::List(vals?))
        }
        Expr::Range(lo, hi) => {
            let lo = expect_int(eval(lo, env, ctx)?, "range start")?;
            let hi = expect_int(eval(hi, env, ctx)?, "range end")?;
            let mut items = Vec::new();
            let mut v = lo;
            while v < hi {
                items.push(Value::Int(v));
                v += 1;
            }
            Ok(Value::List(items))
        }
        Expr::Unary(UnaryOp::Not, inner) => match eval(inner, env, ctx)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            other => Err(EvalError::Type(format!("! needs a bool, got {other}"))),
        },
        Expr::Unary(UnaryOp::Neg, inner) => {
            let n = expect_int(eval(inner, env, ctx)?, "negation")?;
            Ok(Value::Int(n.wrapping_neg()))
        }
        Expr::Binary(op, lhs, rhs) => eval_binary(*op, lhs, rhs, env, ctx),
        Expr::Field(base, idx) => match eval(base, env, ctx)? {
            Value::Tuple(items) => items
                .get(*idx)
                .cloned()
                .ok_or_else(|| {
                    EvalError::Type(format!(
                        "tuple has {} fields, no .{idx}",
                        items.len()
                    ))
                }),
            other => Err(EvalError::Type(format!("field access on non-tuple {other}"))),
        },
        Expr::Call(name, args) => {
            let vals: Result<Vec<Value>, EvalError> =
                args.iter().map(|e| eval(e, env, ctx)).collect();
            eval_builtin(name, vals?, ctx)
        }
        Expr::If(cond, then, alt) => match eval(cond, env, ctx)? {
            Value::Bool(true) => eval(then, env, ctx),
            Value::Bool(false) => eval(alt, env, ctx),
            other => Err(EvalError::Type(format!("if condition must be bool, got {other}"))),
        },
        Expr::Lambda(..) => Err(EvalError::Type(
            "lambdas are not values; apply them through eval_call".into(),
        )),
    }
}

/// Apply a quoted expression to arguments. Lambdas bind their parameters;
/// other expressions take no arguments and evaluate closed.
pub fn eval_call(
    expr: &Expr,
    args: &[Value],
    ctx: &mut EvalContext,
) -> Result<Value, EvalError> {
    match expr {
        Expr::Lambda(params, body) => {
            if params.len() != args.len() {
                return Err(EvalError::Arity {
                    expected: params.len(),
                    got: args.len(),
                });
            }
            let env: BTreeMap<String, Value> = params
                .iter()
                .cloned()
                .zip(args.iter().cloned())
                .collect();
            eval(body, &env, ctx)
        }
        _ => {
            if !args.is_empty() {
                return Err(EvalError::Arity { expected: 0, got: args.len() });
            }
            eval(expr, &BTreeMap::new(), ctx)
        }
    }
}

fn eval_binary(
    op: BinaryOp,
    lhs: &Expr,
    rhs: &Expr,
    env: &BTreeMap<String, Value>,
    ctx: &mut EvalContext,
) -> Result<Value, EvalError> {
    // && and || short-circuit; everything else evaluates both sides.
    match op {
        BinaryOp::And => {
            return match eval(lhs, env, ctx)? {
                Value::Bool(false) => Ok(Value::Bool(false)),
                Value::Bool(true) => match eval(rhs, env, ctx)? {
                    Value::Bool(b) => Ok(Value::Bool(b)),
                    other => Err(EvalError::Type(format!("&& needs bools, got {other}"))),
                },
                other => Err(EvalError::Type(format!("&& needs bools, got {other}"))),
            };
        }
        BinaryOp::Or => {
            return match eval(lhs, env, ctx)? {
                Value::Bool(true) => Ok(Value::Bool(true)),
                Value::Bool(false) => match eval(rhs, env, ctx)? {
                    Value::Bool(b) => Ok(Value::Bool(b)),
                    other => Err(EvalError::Type(format!("|| needs bools, got {other}"))),
                },
                other => Err(EvalError::Type(format!("|| needs bools, got {other}"))),
            };
        }
        _ => {}
    }
    let a = eval(lhs, env, ctx)?;
    let b = eval(rhs, env, ctx)?;
    match op {
        BinaryOp::Add => {
            // `+` also concatenates strings, matching how the word-count and
            // logging examples build keys.
            match (a, b) {
                (Value::Int(x), Value::Int(y)) => Ok(Value::Int(x.wrapping_add(y))),
                (Value::Str(x), Value::Str(y)) => Ok(Value::Str(x + &y)),
                (a, b) => Err(EvalError::Type(format!("cannot add {a} and {b}"))),
            }
        }
        BinaryOp::Sub => Ok(Value::Int(expect_int(a, "-")?.wrapping_sub(expect_int(b, "-")?))),
        BinaryOp::Mul => Ok(Value::Int(expect_int(a, "*")?.wrapping_mul(expect_int(b, "*")?))),
        BinaryOp::Div => {
            let (x, y) = (expect_int(a, "/")?, expect_int(b, "/")?);
            if y == 0 {
                return Err(EvalError::Arithmetic("division by zero".into()));
            }
            Ok(Value::Int(x.wrapping_div(y)))
        }
        BinaryOp::Rem => {
            let (x, y) = (expect_int(a, "%")?, expect_int(b, "%")?);
            if y == 0 {
                return Err(EvalError::Arithmetic("remainder by zero".into()));
            }
            Ok(Value::Int(x.wrapping_rem(y)))
        }
        BinaryOp::Eq | BinaryOp::Ne => {
            let same = values_comparable(&a, &b);
            if !same {
                return Err(EvalError::Type(format!("cannot compare {a} with {b}")));
            }
            let eq = a == b;
            Ok(Value::Bool(if op == BinaryOp::Eq { eq } else { !eq }))
        }
        BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
            let (x, y) = (expect_int(a, "comparison")?, expect_int(b, "comparison")?);
            Ok(Value::Bool(match op {
                BinaryOp::Lt => x < y,
                BinaryOp::Le => x <= y,
                BinaryOp::Gt => x > y,
                _ => x >= y,
            }))
        }
        BinaryOp::And | BinaryOp::Or => unreachable!("handled above"),
    }
}

fn values_comparable(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(_), Value::Int(_))
        | (Value::Bool(_), Value::Bool(_))
        | (Value::Str(_), Value::Str(_))
        | (Value::ClusterId(_), Value::ClusterId(_))
        | (Value::Unit, Value::Unit) => true,
        (Value::Tuple(x), Value::Tuple(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(u, v)| values_comparable(u, v))
        }
        (Value::List(_), Value::List(_)) => true,
        _ => false,
    }
}

fn expect_int(v: Value, what: &str) -> Result<i64, EvalError> {
    match v {
        Value::Int(n) => Ok(n),
        other => Err(EvalError::Type(format!("{what} needs an int, got {other}"))),
    }
}

fn eval_builtin(name: &str, args: Vec<Value>, ctx: &mut EvalContext) -> Result<Value, EvalError> {
    match name {
        "hash" => match args.as_slice() {
            [Value::Str(s)] => Ok(Value::Int(fnv1a64(s))),
            [other] => Err(EvalError::Type(format!("hash needs a str, got {other}"))),
            _ => Err(EvalError::Arity { expected: 1, got: args.len() }),
        },
        "pick" => match args.as_slice() {
            [Value::Int(seed), Value::Int(draw), Value::Int(n)] => {
                Ok(Value::ClusterId(pick_member(*seed, *draw, *n)?))
            }
            [_, _, _] => Err(EvalError::Type("pick needs three ints".into())),
            _ => Err(EvalError::Arity { expected: 3, got: args.len() }),
        },
        "cid" => match args.as_slice() {
            [Value::Int(n)] if *n >= 0 && *n <= i64::from(u32::MAX) => {
                Ok(Value::ClusterId(*n as u32))
            }
            [Value::Int(n)] => Err(EvalError::Arithmetic(format!(
                "cid needs a member id in 0..=u32::MAX, got {n}"
            ))),
            [other] => Err(EvalError::Type(format!("cid needs an int, got {other}"))),
            _ => Err(EvalError::Arity { expected: 1, got: args.len() }),
        },
        "print" => match args.as_slice() {
            [v] => {
                ctx.output.push(v.to_string());
                Ok(Value::Unit)
            }
            _ => Err(EvalError::Arity { expected: 1, got: args.len() }),
        },
        "bump" => match args.len() {
            2 => {
                let mut it = args.into_iter();
                let acc = it.next().unwrap();
                let key = it.next().unwrap();
                bump(acc, key)
            }
            n => Err(EvalError::Arity { expected: 2, got: n }),
        },
        "cluster_ids" => match args.as_slice() {
            [Value::Int(idx)] if *idx >= 0 => {
                let idx = *idx as u32;
                let size = ctx
                    .cluster_sizes
                    .get(&idx)
                    .copied()
                    .ok_or(EvalError::UnknownCluster(idx))?;
                Ok(Value::List((0..size).map(Value::ClusterId).collect()))
            }
            [other] => Err(EvalError::Type(format!(
                "cluster_ids needs a cluster index, got {other}"
            ))),
            _ => Err(EvalError::Arity { expected: 1, got: args.len() }),
        },
        "self_id" => {
            if !args.is_empty() {
                return Err(EvalError::Arity { expected: 0, got: args.len() });
            }
            let member = ctx.self_member.ok_or(EvalError::NoSelfId)?;
            Ok(Value::List(vec![Value::ClusterId(member)]))
        }
        other => Err(EvalError::Type(format!("unknown builtin {other:?}"))),
    }
}

/// Association-list counter: increment `key` in `acc`, appending new keys at
/// the end so fold output order follows first occurrence.
fn bump(acc: Value, key: Value) -> Result<Value, EvalError> {
    let mut entries = match acc {
        Value::List(items) => items,
        other => return Err(EvalError::Type(format!("bump accumulates a list, got {other}"))),
    };
    for entry in entries.iter_mut() {
        let Value::Tuple(pair) = entry else {
            return Err(EvalError::Type("bump entries must be (key, count) pairs".into()));
        };
        if pair.len() != 2 {
            return Err(EvalError::Type("bump entries must be (key, count) pairs".into()));
        }
        if pair[0] == key {
            let Value::Int(n) = pair[1] else {
                return Err(EvalError::Type("bump counts must be ints".into()));
            };
            pair[1] = Value::Int(n.wrapping_add(1));
            return Ok(Value::List(entries));
        }
    }
    entries.push(Value::Tuple(vec![key, Value::Int(1)]));
    Ok(Value::List(entries))
}

/// Best-effort result type of applying a quoted expression to inputs of the
/// given types. Falls back to `Unknown` where the answer depends on values.
pub fn infer_result(expr: &Expr, params: &[TypeTag]) -> Result<TypeTag, EvalError> {
    match expr {
        Expr::Lambda(names, body) => {
            if names.len() != params.len() {
                return Err(EvalError::Arity { expected: names.len(), got: params.len() });
            }
            let env: BTreeMap<&str, &TypeTag> =
                names.iter().map(String::as_str).zip(params.iter()).collect();
            Ok(infer(body, &env))
        }
        _ => {
            if !params.is_empty() {
                return Err(EvalError::Arity { expected: 0, got: params.len() });
            }
            Ok(infer(expr, &BTreeMap::new()))
        }
    }
}

fn infer(expr: &Expr, env: &BTreeMap<&str, &TypeTag>) -> TypeTag {
    match expr {
        Expr::Int(_) => TypeTag::Int,
        Expr::Bool(_) => TypeTag::Bool,
        Expr::Str(_) => TypeTag::Str,
        Expr::Ident(name) => env.get(name.as_str()).map(|t| (*t).clone()).unwrap_or(TypeTag::Unknown),
        Expr::Tuple(items) if items.is_empty() => TypeTag::Unit,
        Expr::Tuple(items) => TypeTag::Tuple(items.iter().map(|e| infer(e, env)).collect()),
        Expr::List(items) => {
            let mut elem = TypeTag::Unknown;
            for item in items {
                if let Some(merged) = elem.unify(&infer(item, env)) {
                    elem = merged;
                }
            }
            TypeTag::List(Box::new(elem))
        }
        Expr::Range(..) => TypeTag::List(Box::new(TypeTag::Int)),
        Expr::Unary(UnaryOp::Not, _) => TypeTag::Bool,
        Expr::Unary(UnaryOp::Neg, _) => TypeTag::Int,
        Expr::Binary(op, lhs, _) => match op {
            BinaryOp::Add => infer(lhs, env),
            BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => TypeTag::Int,
            _ => TypeTag::Bool,
        },
        Expr::Field(base, idx) => match infer(base, env) {
            TypeTag::Tuple(items) => items.get(*idx).cloned().unwrap_or(TypeTag::Unknown),
            _ => TypeTag::Unknown,
        },
        Expr::Call(name, _) => match name.as_str() {
            "hash" => TypeTag::Int,
            "pick" | "cid" => TypeTag::ClusterId,
            "print" => TypeTag::Unit,
            "bump" => TypeTag::List(Box::new(TypeTag::pair(TypeTag::Unknown, TypeTag::Int))),
            "cluster_ids" | "self_id" => TypeTag::List(Box::new(TypeTag::ClusterId)),
            _ => TypeTag::Unknown,
        },
        Expr::If(_, then, alt) => {
            let t = infer(then, env);
            let e = infer(alt, env);
            t.unify(&e).unwrap_or(TypeTag::Unknown)
        }
        Expr::Lambda(..) => TypeTag::Unknown,
    }
}
