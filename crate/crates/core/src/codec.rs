//! Canonical binary encoding of [`Value`].
//!
//! Every value is a one-byte tag followed by its payload. Integers, floats
//! and lengths are big-endian. The grammar (see `docs/value-encoding.md`):
//!
//! ```text
//! value   := 0x00                               Null
//!          | 0x01 | 0x02                        Bool false / true
//!          | 0x03 i64                           Int
//!          | 0x04 u64                           Float, IEEE-754 bits
//!          | 0x05 len:u32 utf8[len]             Text
//!          | 0x06 len:u32 byte[len]             Bytes
//!          | 0x07 n:u32 value{n}                Seq
//!          | 0x08 n:u32 (key value){n}          Rec, keys strictly ascending
//!          | 0x09 n:u32 (keypath value){n}      Table, insertion order, unique keys
//! key     := len:u32 utf8[len]
//! keypath := n:u32 scalar{n}                    n >= 1, scalar = tags 0x01..=0x06
//! ```
//!
//! Decoding is strict: out-of-order or duplicate `Rec` keys, duplicate
//! `Table` keys, invalid UTF-8, trailing bytes and nesting deeper than
//! [`MAX_DEPTH`] are all rejected, so each value has exactly one encoding.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::value::{KeyPath, Table, Value};

pub const TAG_NULL: u8 = 0x00;
pub const TAG_FALSE: u8 = 0x01;
pub const TAG_TRUE: u8 = 0x02;
pub const TAG_INT: u8 = 0x03;
pub const TAG_FLOAT: u8 = 0x04;
pub const TAG_TEXT: u8 = 0x05;
pub const TAG_BYTES: u8 = 0x06;
pub const TAG_SEQ: u8 = 0x07;
pub const TAG_REC: u8 = 0x08;
pub const TAG_TABLE: u8 = 0x09;

/// Deepest container nesting accepted by [`decode_value`].
pub const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed encoding at byte {offset}: {reason}")]
pub struct DecodeError {
    pub offset: usize,
    pub reason: &'static str,
}

/// Encodes `v` canonically.
///
/// # Panics
///
/// If a string, byte array or container holds more than `u32::MAX`
/// elements.
pub fn encode_value(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_value(&mut out, v);
    out
}

fn write_len(out: &mut Vec<u8>, n: usize) {
    let n = u32::try_from(n).expect("length exceeds u32::MAX");
    out.extend_from_slice(&n.to_be_bytes());
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    write_len(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn write_value(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Null => out.push(TAG_NULL),
        Value::Bool(false) => out.push(TAG_FALSE),
        Value::Bool(true) => out.push(TAG_TRUE),
        Value::Int(i) => {
            out.push(TAG_INT);
            out.extend_from_slice(&i.to_be_bytes());
        }
        Value::Float(x) => {
            out.push(TAG_FLOAT);
            out.extend_from_slice(&x.to_bits().to_be_bytes());
        }
        Value::Text(s) => {
            out.push(TAG_TEXT);
            write_str(out, s);
        }
        Value::Bytes(b) => {
            out.push(TAG_BYTES);
            write_len(out, b.len());
            out.extend_from_slice(b);
        }
        Value::Seq(items) => {
            out.push(TAG_SEQ);
            write_len(out, items.len());
            for item in items {
                write_value(out, item);
            }
        }
        Value::Rec(fields) => {
            out.push(TAG_REC);
            write_len(out, fields.len());
            for (k, v) in fields {
                write_str(out, k);
                write_value(out, v);
            }
        }
        Value::Table(t) => {
            out.push(TAG_TABLE);
            write_len(out, t.len());
            for (k, v) in t.iter() {
                write_len(out, k.len());
                for c in k.components() {
                    write_value(out, c);
                }
                write_value(out, v);
            }
        }
    }
}

/// Decodes a byte string produced by [`encode_value`].
pub fn decode_value(bytes: &[u8]) -> Result<Value, DecodeError> {
    let mut r = Reader { bytes, pos: 0 };
    let v = r.value(0)?;
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after value"));
    }
    Ok(v)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: &'static str) -> DecodeError {
        DecodeError { offset: self.pos, reason }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("unexpected end of input"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(self.take(8)?);
        Ok(u64::from_be_bytes(buf))
    }

    fn len(&mut self) -> Result<usize, DecodeError> {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(self.take(4)?);
        Ok(u32::from_be_bytes(buf) as usize)
    }

    /// Element count that cannot possibly fit in the remaining input is
    /// rejected before allocating for it.
    fn count(&mut self) -> Result<usize, DecodeError> {
        let n = self.len()?;
        if n > self.bytes.len() - self.pos {
            return Err(self.err("element count exceeds remaining input"));
        }
        Ok(n)
    }

    fn string(&mut self) -> Result<String, DecodeError> {
        let n = self.len()?;
        let start = self.pos;
        let raw = self.take(n)?;
        core::str::from_utf8(raw)
            .map(String::from)
            .map_err(|_| DecodeError { offset: start, reason: "invalid utf-8" })
    }

    fn value(&mut self, depth: usize) -> Result<Value, DecodeError> {
        if depth > MAX_DEPTH {
            return Err(self.err("nesting too deep"));
        }
        let tag = self.u8()?;
        Ok(match tag {
            TAG_NULL => Value::Null,
            TAG_FALSE => Value::Bool(false),
            TAG_TRUE => Value::Bool(true),
            TAG_INT => Value::Int(self.u64()? as i64),
            TAG_FLOAT => Value::Float(f64::from_bits(self.u64()?)),
            TAG_TEXT => Value::Text(self.string()?),
            TAG_BYTES => {
                let n = self.len()?;
                Value::Bytes(self.take(n)?.to_vec())
            }
            TAG_SEQ => {
                let n = self.count()?;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    items.push(self.value(depth + 1)?);
                }
                Value::Seq(items)
            }
            TAG_REC => {
                let n = self.count()?;
                let mut fields = BTreeMap::new();
                let mut last: Option<String> = None;
                for _ in 0..n {
                    let at = self.pos;
                    let k = self.string()?;
                    if last.as_ref().is_some_and(|prev| *prev >= k) {
                        return Err(DecodeError { offset: at, reason: "rec keys not strictly ascending" });
                    }
                    let v = self.value(depth + 1)?;
                    last = Some(k.clone());
                    fields.insert(k, v);
                }
                Value::Rec(fields)
            }
            TAG_TABLE => {
                let n = self.count()?;
                let mut table = Table::new();
                for _ in 0..n {
                    let at = self.pos;
                    let key = self.keypath()?;
                    if table.contains_key(&key) {
                        return Err(DecodeError { offset: at, reason: "duplicate table key" });
                    }
                    let v = self.value(depth + 1)?;
                    table.insert(key, v);
                }
                Value::Table(table)
            }
            _ => {
                self.pos -= 1;
                return Err(self.err("unknown tag"));
            }
        })
    }

    fn keypath(&mut self) -> Result<KeyPath, DecodeError> {
        let n = self.count()?;
        if n == 0 {
            return Err(self.err("empty key path"));
        }
        let mut parts = Vec::with_capacity(n);
        for _ in 0..n {
            let at = self.pos;
            let tag = *self.bytes.get(at).ok_or_else(|| self.err("unexpected end of input"))?;
            if !(TAG_FALSE..=TAG_BYTES).contains(&tag) {
                return Err(DecodeError { offset: at, reason: "key path component is not a scalar" });
            }
            parts.push(self.value(MAX_DEPTH)?);
        }
        KeyPath::new(parts).map_err(|_| self.err("invalid key path"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn null_encodes_to_single_tag() {
        assert_eq!(encode_value(&Value::Null), [TAG_NULL]);
        assert_eq!(decode_value(&[TAG_NULL]), Ok(Value::Null));
    }

    #[test]
    fn int_layout_is_big_endian() {
        let bytes = encode_value(&Value::Int(7));
        assert_eq!(bytes, [TAG_INT, 0, 0, 0, 0, 0, 0, 0, 7]);
        assert_eq!(decode_value(&bytes), Ok(Value::Int(7)));
    }

    #[test]
    fn rec_round_trip() {
        let v = Value::rec([("keyword", Value::from("cat"))]);
        assert_eq!(decode_value(&encode_value(&v)), Ok(v));
    }

    #[test]
    fn table_round_trip_keeps_order() {
        let mut t = Table::new();
        t.insert(KeyPath::from_slashed("b.txt").unwrap(), "second".into());
        t.insert(KeyPath::from_slashed("a.txt").unwrap(), "contents".into());
        let v = Value::Table(t);
        let back = decode_value(&encode_value(&v)).unwrap();
        assert_eq!(back, v);
        let keys: Vec<_> = back.as_table().unwrap().keys().map(|k| k.to_string()).collect();
        assert_eq!(keys, ["b.txt", "a.txt"]);
    }

    #[test]
    fn truncated_input_is_malformed() {
        let bytes = encode_value(&Value::from("hello"));
        for cut in 0..bytes.len() {
            assert!(decode_value(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
        }
    }

    #[test]
    fn strictness() {
        // trailing garbage
        assert!(decode_value(&[TAG_NULL, 0]).is_err());
        // unknown tag
        assert_eq!(decode_value(&[0x7f]).unwrap_err().reason, "unknown tag");
        // rec keys out of order
        let mut bad = vec![TAG_REC, 0, 0, 0, 2];
        for k in ["b", "a"] {
            bad.extend_from_slice(&[0, 0, 0, 1]);
            bad.extend_from_slice(k.as_bytes());
            bad.push(TAG_NULL);
        }
        assert_eq!(decode_value(&bad).unwrap_err().reason, "rec keys not strictly ascending");
        // null is not a valid key component
        let bad = [TAG_TABLE, 0, 0, 0, 1, 0, 0, 0, 1, TAG_NULL, TAG_NULL];
        assert!(decode_value(&bad).is_err());
        // invalid utf-8
        let bad = [TAG_TEXT, 0, 0, 0, 1, 0xff];
        assert_eq!(decode_value(&bad).unwrap_err().reason, "invalid utf-8");
        // huge count with no data
        let bad = [TAG_SEQ, 0xff, 0xff, 0xff, 0xff];
        assert!(decode_value(&bad).is_err());
    }

    #[test]
    fn deep_nesting_rejected() {
        let mut bytes = Vec::new();
        for _ in 0..=MAX_DEPTH + 1 {
            bytes.extend_from_slice(&[TAG_SEQ, 0, 0, 0, 1]);
        }
        bytes.push(TAG_NULL);
        assert_eq!(decode_value(&bytes).unwrap_err().reason, "nesting too deep");
    }
}
