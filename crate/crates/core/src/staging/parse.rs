//! Recursive-descent parser for the staged expression language.
//!
//! The grammar is a small Rust subset:
//!
//! ```text
//! quoted   := lambda | expr
//! lambda   := '|' params? '|' expr
//! expr     := range
//! range    := or ('..' or)?
//! or       := and ('||' and)*
//! and      := cmp ('&&' cmp)*
//! cmp      := add (('==' | '!=' | '<' | '<=' | '>' | '>=') add)?
//! add      := mul (('+' | '-') mul)*
//! mul      := unary (('*' | '/' | '%') unary)*
//! unary    := ('!' | '-') unary | postfix
//! postfix  := atom ('.' INT)*
//! atom     := INT | STR | 'true' | 'false' | IDENT call? | '(' tuple ')'
//!           | '[' list ']' | 'if' expr '{' expr '}' 'else' '{' expr '}'
//! ```
//!
//! Comparisons and ranges do not chain. Lambdas appear only at the top level.

use super::eval::{is_builtin, BUILTINS};
use super::expr::{BinaryOp, Expr, UnaryOp};
use crate::error::StageError;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Int(i64),
    /// The numeral 9223372036854775808 (2^63): only valid directly under a
    /// unary minus, where it folds to `i64::MIN`.
    IntMin,
    Str(String),
    Ident(String),
    Punct(&'static str),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0 }
    }

    fn error(&self, msg: impl Into<String>) -> StageError {
        StageError::Parse { pos: self.pos, msg: msg.into() }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Token)>, StageError> {
        let mut out = Vec::new();
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            let start = self.pos;
            let c = bytes[self.pos];
            match c {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    let mut end = self.pos;
                    while end < bytes.len() && bytes[end].is_ascii_digit() {
                        end += 1;
                    }
                    let text = &self.src[self.pos..end];
                    let tok = match text.parse::<i64>() {
                        Ok(n) => Token::Int(n),
                        Err(_) if text == "9223372036854775808" => Token::IntMin,
                        Err(_) => {
                            return Err(
                                self.error(format!("integer literal out of range: {text}"))
                            )
                        }
                    };
                    self.pos = end;
                    out.push((start, tok));
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let mut end = self.pos;
                    while end < bytes.len()
                        && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                    {
                        end += 1;
                    }
                    out.push((start, Token::Ident(self.src[self.pos..end].to_string())));
                    self.pos = end;
                }
                b'"' => {
                    self.pos += 1;
                    let mut text = String::new();
                    loop {
                        let Some(&b) = bytes.get(self.pos) else {
                            return Err(self.error("unterminated string literal"));
                        };
                        match b {
                            b'"' => {
                                self.pos += 1;
                                break;
                            }
                            b'\\' => {
                                self.pos += 1;
                                let Some(&esc) = bytes.get(self.pos) else {
                                    return Err(self.error("unterminated escape"));
                                };
                                self.pos += 1;
                                match esc {
                                    b'"' => text.push('"'),
                                    b'\\' => text.push('\\'),
                                    b'n' => text.push('\n'),
                                    b'r' => text.push('\r'),
                                    b't' => text.push('\t'),
                                    b'u' => {
                                        if bytes.get(self.pos) != Some(&b'{') {
                                            return Err(self.error("expected { after \\u"));
                                        }
                                        self.pos += 1;
                                        let hex_start = self.pos;
                                        while bytes.get(self.pos).is_some_and(|b| *b != b'}') {
                                            self.pos += 1;
                                        }
                                        if bytes.get(self.pos) != Some(&b'}') {
                                            return Err(self.error("unterminated \\u escape"));
                                        }
                                        let hex = &self.src[hex_start..self.pos];
                                        self.pos += 1;
                                        let code = u32::from_str_radix(hex, 16).map_err(|_| {
                                            self.error(format!("bad unicode escape: {hex}"))
                                        })?;
                                        let ch = char::from_u32(code).ok_or_else(|| {
                                            self.error(format!("invalid code point: {code:#x}"))
                                        })?;
                                        text.push(ch);
                                    }
                                    other => {
                                        return Err(self.error(format!(
                                            "unknown escape: \\{}",
                                            other as char
                                        )));
                                    }
                                }
                            }
                            _ => {
                                // Multi-byte UTF-8 sequences pass through whole.
                                let rest = &self.src[self.pos..];
                                let ch = rest.chars().next().unwrap();
                                text.push(ch);
                                self.pos += ch.len_utf8();
                            }
                        }
                    }
                    out.push((start, Token::Str(text)));
                }
                _ => {
                    let two = self.src.get(self.pos..self.pos + 2);
                    let punct2 = match two {
                        Some("==") => Some("=="),
                        Some("!=") => Some("!="),
                        Some("<=") => Some("<="),
                        Some(">=") => Some(">="),
                        Some("&&") => Some("&&"),
                        Some("||") => Some("||"),
                        Some("..") => Some(".."),
                        _ => None,
                    };
                    if let Some(p) = punct2 {
                        self.pos += 2;
                        out.push((start, Token::Punct(p)));
                        continue;
                    }
                    let punct1 = match c {
                        b'+' => "+",
                        b'-' => "-",
                        b'*' => "*",
                        b'/' => "/",
                        b'%' => "%",
                        b'<' => "<",
                        b'>' => ">",
                        b'!' => "!",
                        b'|' => "|",
                        b'(' => "(",
                        b')' => ")",
                        b'[' => "[",
                        b']' => "]",
                        b'{' => "{",
                        b'}' => "}",
                        b',' => ",",
                        b'.' => ".",
                        other => {
                            return Err(self.error(format!(
                                "unexpected character: {:?}",
                                other as char
                            )));
                        }
                    };
                    self.pos += 1;
                    out.push((start, Token::Punct(punct1)));
                }
            }
        }
        Ok(out)
    }
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    idx: usize,
    src_len: usize,
}

impl Parser {
    fn error(&self, msg: impl Into<String>) -> StageError {
        let pos = self.tokens.get(self.idx).map(|(p, _)| *p).unwrap_or(self.src_len);
        StageError::Parse { pos, msg: msg.into() }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx).map(|(_, t)| t)
    }

    fn bump(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.idx).map(|(_, t)| t.clone());
        if tok.is_some() {
            self.idx += 1;
        }
        tok
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Some(Token::Punct(q)) if *q == p) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &'static str) -> Result<(), StageError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.error(format!("expected {p:?}")))
        }
    }

    fn parse_quoted(&mut self) -> Result<Expr, StageError> {
        let expr = if self.peek() == Some(&Token::Punct("|")) {
            self.idx += 1;
            let mut params = Vec::new();
            if self.peek() != Some(&Token::Punct("|")) {
                loop {
                    match self.bump() {
                        Some(Token::Ident(name)) => {
                            if is_builtin(&name) {
                                return Err(self.error(format!(
                                    "parameter {name:?} shadows a builtin"
                                )));
                            }
                            if name == "true" || name == "false" || name == "if" || name == "else" {
                                return Err(self.error(format!(
                                    "parameter {name:?} is a keyword"
                                )));
                            }
                            if params.contains(&name) {
                                return Err(self.error(format!("duplicate parameter {name:?}")));
                            }
                            params.push(name);
                        }
                        _ => return Err(self.error("expected parameter name")),
                    }
                    if !self.eat_punct(",") {
                        break;
                    }
                }
            }
            self.expect_punct("|")?;
            if params.is_empty() {
                return Err(self.error("lambdas need at least one parameter"));
            }
            let body = self.parse_expr()?;
            Expr::Lambda(params, Box::new(body))
        } else {
            self.parse_expr()?
        };
        if self.idx != self.tokens.len() {
            return Err(self.error("trailing input after expression"));
        }
        Ok(expr)
    }

    fn parse_expr(&mut self) -> Result<Expr, StageError> {
        let lhs = self.parse_or()?;
        if self.eat_punct("..") {
            let rhs = self.parse_or()?;
            Ok(Expr::Range(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn parse_or(&mut self) -> Result<Expr, StageError> {
        let mut lhs = self.parse_and()?;
        while self.eat_punct("||") {
            let rhs = self.parse_and()?;
            lhs = Expr::Binary(BinaryOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr, StageError> {
        let mut lhs = self.parse_cmp()?;
        while self.eat_punct("&&") {
            let rhs = self.parse_cmp()?;
            lhs = Expr::Binary(BinaryOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_cmp(&mut self) -> Result<Expr, StageError> {
        let lhs = self.parse_add()?;
        let op = match self.peek() {
            Some(Token::Punct("==")) => Some(BinaryOp::Eq),
            Some(Token::Punct("!=")) => Some(BinaryOp::Ne),
            Some(Token::Punct("<")) => Some(BinaryOp::Lt),
            Some(Token::Punct("<=")) => Some(BinaryOp::Le),
            Some(Token::Punct(">")) => Some(BinaryOp::Gt),
            Some(Token::Punct(">=")) => Some(BinaryOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.idx += 1;
            let rhs = self.parse_add()?;
            Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn parse_add(&mut self) -> Result<Expr, StageError> {
        let mut lhs = self.parse_mul()?;
        loop {
            let op = match self.peek() {
                Some(Token::Punct("+")) => BinaryOp::Add,
                Some(Token::Punct("-")) => BinaryOp::Sub,
                _ => break,
            };
            self.idx += 1;
            let rhs = self.parse_mul()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_mul(&mut self) -> Result<Expr, StageError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Punct("*")) => BinaryOp::Mul,
                Some(Token::Punct("/")) => BinaryOp::Div,
                Some(Token::Punct("%")) => BinaryOp::Rem,
                _ => break,
            };
            self.idx += 1;
            let rhs = self.parse_unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, StageError> {
        if self.eat_punct("!") {
            let inner = self.parse_unary()?;
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(inner)));
        }
        if self.eat_punct("-") {
            if self.peek() == Some(&Token::IntMin) {
                self.idx += 1;
                return Ok(Expr::Int(i64::MIN));
            }
            let inner = self.parse_unary()?;
            // Fold negated literals so -3 round-trips as Int(-3).
            if let Expr::Int(n) = inner {
                return Ok(Expr::Int(n.wrapping_neg()));
            }
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> Result<Expr, StageError> {
        let mut expr = self.parse_atom()?;
        while self.eat_punct(".") {
            match self.bump() {
                Some(Token::Int(n)) if n >= 0 => {
                    expr = Expr::Field(Box::new(expr), n as usize);
                }
                _ => return Err(self.error("expected tuple index after '.'")),
            }
        }
        Ok(expr)
    }

    fn parse_atom(&mut self) -> Result<Expr, StageError> {
        match self.bump() {
            Some(Token::Int(n)) => Ok(Expr::Int(n)),
            Some(Token::IntMin) => {
                Err(self.error("integer literal out of range: 9223372036854775808"))
            }
            Some(Token::Str(s)) => Ok(Expr::Str(s)),
            Some(Token::Ident(name)) => match name.as_str() {
                "true" => Ok(Expr::Bool(true)),
                "false" => Ok(Expr::Bool(false)),
                "if" => {
                    let cond = self.parse_expr()?;
                    self.expect_punct("{")?;
                    let then = self.parse_expr()?;
                    self.expect_punct("}")?;
                    match self.bump() {
                        Some(Token::Ident(kw)) if kw == "else" => {}
                        _ => return Err(self.error("if expressions require an else branch")),
                    }
                    self.expect_punct("{")?;
                    let alt = self.parse_expr()?;
                    self.expect_punct("}")?;
                    Ok(Expr::If(Box::new(cond), Box::new(then), Box::new(alt)))
                }
                "else" => Err(self.error("unexpected keyword: else")),
                _ if self.peek() == Some(&Token::Punct("(")) => {
                    if name == "q" || name == "quote" {
                        return Err(StageError::NestedQuote);
                    }
                    if !is_builtin(&name) {
                        return Err(self.error(format!(
                            "unknown function {name:?}; builtins are {}",
                            BUILTINS.join(", ")
                        )));
                    }
                    self.idx += 1;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Token::Punct(")")) {
                        loop {
                            args.push(self.parse_expr()?);
                            if !self.eat_punct(",") {
                                break;
                            }
                        }
                    }
                    self.expect_punct(")")?;
                    Ok(Expr::Call(name, args))
                }
                _ => {
                    if is_builtin(&name) {
                        return Err(self.error(format!("builtin {name:?} must be called")));
                    }
                    Ok(Expr::Ident(name))
                }
            },
            Some(Token::Punct("(")) => {
                if self.eat_punct(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let first = self.parse_expr()?;
                if self.eat_punct(")") {
                    // Plain grouping; one-element tuples do not exist.
                    return Ok(first);
                }
                self.expect_punct(",")?;
                let mut items = vec![first];
                if self.peek() != Some(&Token::Punct(")")) {
                    loop {
                        items.push(self.parse_expr()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect_punct(")")?;
                if items.len() == 1 {
                    return Err(self.error("one-element tuples are not supported"));
                }
                Ok(Expr::Tuple(items))
            }
            Some(Token::Punct("[")) => {
                let mut items = Vec::new();
                if self.peek() != Some(&Token::Punct("]")) {
                    loop {
                        items.push(self.parse_expr()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect_punct("]")?;
                Ok(Expr::List(items))
            }
            Some(Token::Punct("|")) => Err(self.error("lambdas are only allowed at the top level")),
            Some(other) => Err(self.error(format!("unexpected token: {other:?}"))),
            None => Err(self.error("unexpected end of input")),
        }
    }
}

/// Parse a full quoted expression (possibly a top-level lambda).
pub fn parse(src: &str) -> Result<Expr, StageError> {
    let tokens = Lexer::new(src).tokens()?;
    let src_len = src.len();
    let mut parser = Parser { tokens, idx: 0, src_len };
    parser.parse_quoted()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(src: &str) -> String {
        parse(src).unwrap().canonical()
    }

    #[test]
    fn parses_ranges_and_lambdas() {
        assert_eq!(roundtrip("0..5"), "0 .. 5");
        assert_eq!(roundtrip("|v| v > 2"), "|v| v > 2");
        assert_eq!(roundtrip("|v| v*2"), "|v| v * 2");
    }

    #[test]
    fn canonical_text_is_a_fixed_point() {
        for src in [
            "|a, b| (a + b) * 2",
            "|t| (cid(hash(t.0) % t.1), t.0)",
            "|w| (w, 1)",
            "if x > 0 { x } else { -x }",
            "[(\"a\", 1), (\"b\", 2)]",
            "1 + 2 - 3 * 4",
            "-(1 + 2)",
            "|t| t.0.1",
        ] {
            let once = roundtrip(src);
            let twice = parse(&once).unwrap().canonical();
            assert_eq!(once, twice, "printing {src:?} must reach a fixed point");
        }
    }

    #[test]
    fn nested_field_access_lexes_as_two_projections() {
        // `t.0.1` must not lex `.0.1` as anything float-like.
        let e = parse("|t| t.0.1").unwrap();
        assert_eq!(e.canonical(), "|t| t.0.1");
    }

    #[test]
    fn negative_literals_fold() {
        assert_eq!(parse("-3").unwrap(), Expr::Int(-3));
        assert_eq!(roundtrip("-3"), "-3");
    }

    #[test]
    fn negative_literal_in_postfix_position_gets_parens() {
        let e = Expr::Field(Box::new(Expr::Int(-1)), 0);
        assert_eq!(e.canonical(), "(-1).0");
        assert_eq!(parse("(-1).0").unwrap(), e);
    }

    #[test]
    fn extreme_integer_literals_round_trip() {
        assert_eq!(parse("-9223372036854775808").unwrap(), Expr::Int(i64::MIN));
        assert_eq!(roundtrip("-9223372036854775808"), "-9223372036854775808");
        assert_eq!(roundtrip("9223372036854775807"), "9223372036854775807");
        assert!(parse("9223372036854775808").is_err());
        assert!(parse("99999999999999999999").is_err());
    }

    #[test]
    fn rejects_nested_quoting() {
        assert!(matches!(parse("q(|v| v)"), Err(StageError::NestedQuote)));
        assert!(matches!(parse("|v| quote(v)"), Err(StageError::NestedQuote)));
    }

    #[test]
    fn rejects_unknown_functions_and_shadowed_builtins() {
        assert!(parse("frob(1)").is_err());
        assert!(parse("|hash| hash + 1").is_err());
    }

    #[test]
    fn rejects_inner_lambdas_and_empty_params() {
        assert!(parse("|v| |w| w").is_err());
        assert!(parse("|| 3").is_err());
    }

    #[test]
    fn string_escapes_roundtrip() {
        let e = parse("\"a\\\"b\\nc\"").unwrap();
        assert_eq!(e, Expr::Str("a\"b\nc".into()));
        assert_eq!(e.canonical(), "\"a\\\"b\\nc\"");
    }

    #[test]
    fn comparison_does_not_chain() {
        assert!(parse("1 < 2 < 3").is_err());
    }
}
