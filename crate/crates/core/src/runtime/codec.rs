//! Wire format for values and frames.
//!
//! Every channel carries length-prefixed frames:
//!
//! ```text
//! +----------------+------------------+
//! | length (u32 LE)| payload bytes    |
//! +----------------+------------------+
//! ```
//!
//! A zero-length frame marks end of stream; no value encodes to zero bytes,
//! so the two can never collide. Payloads are encoded by the channel's
//! static element type rather than any self-describing format:
//!
//! ```text
//! int   i64, 8 bytes LE        bool  1 byte, 0 or 1
//! cid   u32, 4 bytes LE        str   u32 LE byte length, then UTF-8
//! (a, b, ...)  each field in order, concatenated
//! ```
//!
//! Decoding must consume the payload exactly; trailing bytes are an error.
//! Frames larger than [`MAX_FRAME_SIZE`] are rejected on read, so a corrupt
//! length prefix cannot trigger an enormous allocation.

use std::io::{Read, Write};

use crate::error::RunError;
use crate::staging::{TypeTag, Value};

/// Upper bound on a frame payload: 16 MiB.
pub const MAX_FRAME_SIZE: u32 = 16 * 1024 * 1024;

/// One unit on the wire: a payload or the end-of-stream marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Data(Vec<u8>),
    Eos,
}

/// Encode `value` as `tag` dictates.
pub fn encode(value: &Value, tag: &TypeTag) -> Result<Vec<u8>, RunError> {
    let mut out = Vec::new();
    encode_into(value, tag, &mut out)?;
    if out.is_empty() {
        return Err(RunError::Decode(format!(
            "type {tag} has an empty encoding, which would collide with end-of-stream"
        )));
    }
    Ok(out)
}

fn encode_into(value: &Value, tag: &TypeTag, out: &mut Vec<u8>) -> Result<(), RunError> {
    match (tag, value) {
        (TypeTag::Int, Value::Int(n)) => out.extend_from_slice(&n.to_le_bytes()),
        (TypeTag::Bool, Value::Bool(b)) => out.push(u8::from(*b)),
        (TypeTag::ClusterId, Value::ClusterId(id)) => out.extend_from_slice(&id.to_le_bytes()),
        (TypeTag::Str, Value::Str(s)) => {
            let len = u32::try_from(s.len())
                .map_err(|_| RunError::Decode("string too long for the wire".into()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        (TypeTag::Tuple(tags), Value::Tuple(items)) if tags.len() == items.len() => {
            for (item, tag) in items.iter().zip(tags) {
                encode_into(item, tag, out)?;
            }
        }
        (tag, value) => {
            return Err(RunError::Decode(format!(
                "value {value} does not encode as {tag}"
            )));
        }
    }
    Ok(())
}

/// Decode a payload produced by [`encode`] with the same tag.
pub fn decode(bytes: &[u8], tag: &TypeTag) -> Result<Value, RunError> {
    let mut cursor = bytes;
    let value = decode_from(&mut cursor, tag)?;
    if !cursor.is_empty() {
        return Err(RunError::Decode(format!(
            "{} trailing byte(s) after a {tag}",
            cursor.len()
        )));
    }
    Ok(value)
}

fn decode_from(cursor: &mut &[u8], tag: &TypeTag) -> Result<Value, RunError> {
    fn take<'a>(cursor: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], RunError> {
        if cursor.len() < n {
            return Err(RunError::Decode(format!(
                "truncated {what}: wanted {n} bytes, had {}",
                cursor.len()
            )));
        }
        let (head, tail) = cursor.split_at(n);
        *cursor = tail;
        Ok(head)
    }
    match tag {
        TypeTag::Int => {
            let raw = take(cursor, 8, "int")?;
            Ok(Value::Int(i64::from_le_bytes(raw.try_into().unwrap())))
        }
        TypeTag::Bool => match take(cursor, 1, "bool")?[0] {
            0 => Ok(Value::Bool(false)),
            1 => Ok(Value::Bool(true)),
            other => Err(RunError::Decode(format!("bad bool byte {other:#04x}"))),
        },
        TypeTag::ClusterId => {
            let raw = take(cursor, 4, "cid")?;
            Ok(Value::ClusterId(u32::from_le_bytes(raw.try_into().unwrap())))
        }
        TypeTag::Str => {
            let raw = take(cursor, 4, "string length")?;
            let len = u32::from_le_bytes(raw.try_into().unwrap());
            if len > MAX_FRAME_SIZE {
                return Err(RunError::Decode(format!("string length {len} exceeds frame cap")));
            }
            let bytes = take(cursor, len as usize, "string body")?;
            let text = std::str::from_utf8(bytes)
                .map_err(|e| RunError::Decode(format!("invalid UTF-8: {e}")))?;
            Ok(Value::Str(text.to_string()))
        }
        TypeTag::Tuple(tags) if !tags.is_empty() => {
            let items: Result<Vec<Value>, RunError> =
                tags.iter().map(|t| decode_from(cursor, t)).collect();
            Ok(Value::Tuple(items?))
        }
        other => Err(RunError::Decode(format!("{other} is not a wire type"))),
    }
}

/// Write one frame: length prefix, then payload.
pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), RunError> {
    let payload: &[u8] = match frame {
        Frame::Data(bytes) => bytes,
        Frame::Eos => &[],
    };
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|len| *len <= MAX_FRAME_SIZE)
        .ok_or_else(|| RunError::Decode(format!("frame of {} bytes exceeds cap", payload.len())))?;
    w.write_all(&len.to_le_bytes())
        .and_then(|()| w.write_all(payload))
        .map_err(|e| RunError::Transport(format!("write failed: {e}")))
}

/// Read one frame, or `None` at a clean end of the byte stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, RunError> {
    let mut len_raw = [0u8; 4];
    match r.read_exact(&mut len_raw) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(RunError::Transport(format!("read failed: {e}"))),
    }
    let len = u32::from_le_bytes(len_raw);
    if len == 0 {
        return Ok(Some(Frame::Eos));
    }
    if len > MAX_FRAME_SIZE {
        return Err(RunError::Decode(format!("frame length {len} exceeds cap")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)
        .map_err(|e| RunError::Transport(format!("read failed mid-frame: {e}")))?;
    Ok(Some(Frame::Data(payload)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(value: Value, tag: TypeTag) {
        let bytes = encode(&value, &tag).unwrap();
        assert_eq!(decode(&bytes, &tag).unwrap(), value, "via {tag}");
    }

    #[test]
    fn scalar_layouts_are_pinned() {
        assert_eq!(
            encode(&Value::Int(-2), &TypeTag::Int).unwrap(),
            vec![0xfe, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff]
        );
        assert_eq!(encode(&Value::Bool(true), &TypeTag::Bool).unwrap(), vec![1]);
        assert_eq!(
            encode(&Value::ClusterId(258), &TypeTag::ClusterId).unwrap(),
            vec![2, 1, 0, 0]
        );
        assert_eq!(
            encode(&Value::Str("hi".into()), &TypeTag::Str).unwrap(),
            vec![2, 0, 0, 0, b'h', b'i']
        );
    }

    #[test]
    fn tuples_concatenate_fields() {
        let tag = TypeTag::pair(TypeTag::ClusterId, TypeTag::Str);
        let value = Value::pair(Value::ClusterId(1), Value::Str("ok".into()));
        let bytes = encode(&value, &tag).unwrap();
        assert_eq!(bytes, vec![1, 0, 0, 0, 2, 0, 0, 0, b'o', b'k']);
        roundtrip(value, tag);
    }

    #[test]
    fn nested_tuples_and_empty_strings_roundtrip() {
        roundtrip(Value::Str(String::new()), TypeTag::Str);
        roundtrip(
            Value::pair(
                Value::Int(i64::MIN),
                Value::pair(Value::Str("\u{1f600} mixed".into()), Value::Bool(false)),
            ),
            TypeTag::pair(
                TypeTag::Int,
                TypeTag::pair(TypeTag::Str, TypeTag::Bool),
            ),
        );
    }

    #[test]
    fn trailing_and_truncated_bytes_are_errors() {
        let bytes = encode(&Value::Int(7), &TypeTag::Int).unwrap();
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long, &TypeTag::Int).is_err());
        assert!(decode(&bytes[..4], &TypeTag::Int).is_err());
        assert!(decode(&[2], &TypeTag::Bool).is_err());
    }

    #[test]
    fn type_value_mismatches_are_errors() {
        assert!(encode(&Value::Int(1), &TypeTag::Str).is_err());
        assert!(encode(&Value::List(vec![]), &TypeTag::Int).is_err());
        assert!(encode(&Value::Unit, &TypeTag::Unit).is_err());
    }

    #[test]
    fn frames_roundtrip_and_zero_length_means_eos() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Frame::Data(vec![1, 2, 3])).unwrap();
        write_frame(&mut buf, &Frame::Eos).unwrap();
        assert_eq!(&buf[..4], &[3, 0, 0, 0]);
        assert_eq!(&buf[7..11], &[0, 0, 0, 0]);
        let mut cursor = buf.as_slice();
        assert_eq!(
            read_frame(&mut cursor).unwrap(),
            Some(Frame::Data(vec![1, 2, 3]))
        );
        assert_eq!(read_frame(&mut cursor).unwrap(), Some(Frame::Eos));
        assert_eq!(read_frame(&mut cursor).unwrap(), None);
    }

    #[test]
    fn oversized_frames_are_rejected_on_read() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(MAX_FRAME_SIZE + 1).to_le_bytes());
        let mut cursor = buf.as_slice();
        assert!(matches!(read_frame(&mut cursor), Err(RunError::Decode(_))));
    }
}
