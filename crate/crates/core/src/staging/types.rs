//! Element type tags carried on streams.
//!
//! These are deliberately coarse: just enough structure to pick a wire codec
//! for network channels and to catch the obvious mistakes (sending a list,
//! joining streams whose keys disagree) while the graph is being built.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The element type of a stream, as far as the builder can tell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TypeTag {
    Int,
    Bool,
    Str,
    ClusterId,
    Unit,
    Tuple(Vec<TypeTag>),
    List(Box<TypeTag>),
    /// Not yet determined; unifies with anything.
    Unknown,
}

impl TypeTag {
    /// Merge two tags, treating `Unknown` as a wildcard.
    pub fn unify(&self, other: &TypeTag) -> Option<TypeTag> {
        match (self, other) {
            (TypeTag::Unknown, t) | (t, TypeTag::Unknown) => Some(t.clone()),
            (TypeTag::Tuple(a), TypeTag::Tuple(b)) if a.len() == b.len() => {
                let items: Option<Vec<TypeTag>> =
                    a.iter().zip(b).map(|(x, y)| x.unify(y)).collect();
                Some(TypeTag::Tuple(items?))
            }
            (TypeTag::List(a), TypeTag::List(b)) => Some(TypeTag::List(Box::new(a.unify(b)?))),
            (a, b) if a == b => Some(a.clone()),
            _ => None,
        }
    }

    /// Whether values of this type have a defined wire encoding. Lists, unit,
    /// and anything still unknown stay process-local.
    pub fn is_wire(&self) -> bool {
        match self {
            TypeTag::Int | TypeTag::Bool | TypeTag::Str | TypeTag::ClusterId => true,
            TypeTag::Tuple(items) => !items.is_empty() && items.iter().all(TypeTag::is_wire),
            TypeTag::Unit | TypeTag::List(_) | TypeTag::Unknown => false,
        }
    }

    pub fn pair(a: TypeTag, b: TypeTag) -> TypeTag {
        TypeTag::Tuple(vec![a, b])
    }

    /// Tuple element type, when this is a tuple wide enough.
    pub fn field(&self, idx: usize) -> Option<&TypeTag> {
        match self {
            TypeTag::Tuple(items) => items.get(idx),
            _ => None,
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            TypeTag::Int => out.push_str("int"),
            TypeTag::Bool => out.push_str("bool"),
            TypeTag::Str => out.push_str("str"),
            TypeTag::ClusterId => out.push_str("cid"),
            TypeTag::Unit => out.push_str("unit"),
            TypeTag::Unknown => out.push('?'),
            TypeTag::Tuple(items) => {
                out.push('(');
                for (i, t) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    t.write(out);
                }
                out.push(')');
            }
            TypeTag::List(inner) => {
                out.push('[');
                inner.write(out);
                out.push(']');
            }
        }
    }

    /// Parse the textual form produced by `Display`.
    pub fn parse(src: &str) -> Option<TypeTag> {
        let mut p = TagParser { src: src.as_bytes(), pos: 0 };
        let tag = p.parse()?;
        p.skip_ws();
        if p.pos == p.src.len() {
            Some(tag)
        } else {
            None
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        self.write(&mut out);
        f.write_str(&out)
    }
}

impl From<TypeTag> for String {
    fn from(tag: TypeTag) -> String {
        tag.to_string()
    }
}

impl TryFrom<String> for TypeTag {
    type Error = String;

    fn try_from(s: String) -> Result<TypeTag, String> {
        TypeTag::parse(&s).ok_or_else(|| format!("bad type tag: {s:?}"))
    }
}

struct TagParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> TagParser<'a> {
    fn skip_ws(&mut self) {
        while self.src.get(self.pos) == Some(&b' ') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn parse(&mut self) -> Option<TypeTag> {
        self.skip_ws();
        match self.src.get(self.pos)? {
            b'?' => {
                self.pos += 1;
                Some(TypeTag::Unknown)
            }
            b'(' => {
                self.pos += 1;
                let mut items = Vec::new();
                if self.eat(b')') {
                    return Some(TypeTag::Unit);
                }
                loop {
                    items.push(self.parse()?);
                    if !self.eat(b',') {
                        break;
                    }
                }
                if !self.eat(b')') || items.len() < 2 {
                    return None;
                }
                Some(TypeTag::Tuple(items))
            }
            b'[' => {
                self.pos += 1;
                let inner = self.parse()?;
                if !self.eat(b']') {
                    return None;
                }
                Some(TypeTag::List(Box::new(inner)))
            }
            _ => {
                let start = self.pos;
                while self
                    .src
                    .get(self.pos)
                    .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
                {
                    self.pos += 1;
                }
                match &self.src[start..self.pos] {
                    b"int" => Some(TypeTag::Int),
                    b"bool" => Some(TypeTag::Bool),
                    b"str" => Some(TypeTag::Str),
                    b"cid" => Some(TypeTag::ClusterId),
                    b"unit" => Some(TypeTag::Unit),
                    _ => None,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse_roundtrip() {
        let tags = [
            TypeTag::Int,
            TypeTag::Str,
            TypeTag::pair(TypeTag::ClusterId, TypeTag::Int),
            TypeTag::Tuple(vec![
                TypeTag::Str,
                TypeTag::pair(TypeTag::Int, TypeTag::Bool),
                TypeTag::Unit,
            ]),
            TypeTag::List(Box::new(TypeTag::pair(TypeTag::Str, TypeTag::Int))),
            TypeTag::Unknown,
        ];
        for tag in tags {
            let text = tag.to_string();
            assert_eq!(TypeTag::parse(&text), Some(tag), "parsing {text:?}");
        }
    }

    #[test]
    fn renders_match_documented_forms() {
        assert_eq!(TypeTag::pair(TypeTag::ClusterId, TypeTag::Int).to_string(), "(cid, int)");
        assert_eq!(TypeTag::List(Box::new(TypeTag::Int)).to_string(), "[int]");
        assert_eq!(TypeTag::Unit.to_string(), "unit");
    }

    #[test]
    fn unknown_unifies_with_anything() {
        let pair = TypeTag::pair(TypeTag::Str, TypeTag::Unknown);
        let concrete = TypeTag::pair(TypeTag::Str, TypeTag::Int);
        assert_eq!(pair.unify(&concrete), Some(concrete.clone()));
        assert_eq!(TypeTag::Int.unify(&TypeTag::Str), None);
    }

    #[test]
    fn wire_types_exclude_lists_and_unit() {
        assert!(TypeTag::pair(TypeTag::ClusterId, TypeTag::Str).is_wire());
        assert!(!TypeTag::List(Box::new(TypeTag::Int)).is_wire());
        assert!(!TypeTag::Unit.is_wire());
        assert!(!TypeTag::pair(TypeTag::Int, TypeTag::Unknown).is_wire());
    }
}
