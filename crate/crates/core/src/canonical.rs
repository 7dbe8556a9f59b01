//! Canonical structured-text encoding.
//!
//! Every persisted record, wire message and hashed structure goes through this
//! module. The form is JSON with object keys sorted lexicographically, no
//! insignificant whitespace, integers in decimal, big integers as decimal
//! strings and digests as lowercase hex strings. Decoding is strict: input is
//! accepted only if re-encoding the parsed value reproduces it byte for byte,
//! so every byte of a stored record is covered by the parse.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("record is not in canonical form")]
    NotCanonical,
    #[error("floating point numbers are not permitted")]
    FloatNotAllowed,
}

/// Encodes `value` into its canonical text form.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("canonical types always serialize");
    let mut out = String::new();
    write_value(&value, &mut out);
    out
}

pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    to_canonical(value).into_bytes()
}

/// Decodes a canonical record, rejecting any input that is not exactly the
/// canonical encoding of the decoded value.
pub fn from_canonical<T: DeserializeOwned + Serialize>(text: &str) -> Result<T, CanonicalError> {
    let decoded: T =
        serde_json::from_str(text).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    let reencoded = to_canonical(&decoded);
    if reencoded != text {
        return Err(CanonicalError::NotCanonical);
    }
    Ok(decoded)
}

pub fn from_canonical_bytes<T: DeserializeOwned + Serialize>(
    bytes: &[u8],
) -> Result<T, CanonicalError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    from_canonical(text)
}

/// Checks that an arbitrary JSON value contains no floats.
pub fn check_value(value: &Value) -> Result<(), CanonicalError> {
    match value {
        Value::Number(n) if !(n.is_u64() || n.is_i64()) => Err(CanonicalError::FloatNotAllowed),
        Value::Array(items) => items.iter().try_for_each(check_value),
        Value::Object(map) => map.values().try_for_each(check_value),
        _ => Ok(()),
    }
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            assert!(n.is_u64() || n.is_i64(), "floats have no canonical form");
            out.push_str(&n.to_string());
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"))
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(
                    &serde_json::to_string(key).expect("string serialization is infallible"),
                );
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}

/// Serde adapter storing a `BigUint` as a decimal string.
pub mod decimal {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&value.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text).ok_or_else(|| D::Error::custom(format!("invalid decimal integer {text:?}")))
    }

    /// Strict decimal parse: digits only, no sign, no leading zeros.
    pub fn parse(text: &str) -> Option<BigUint> {
        if text.is_empty()
            || !text.bytes().all(|b| b.is_ascii_digit())
            || (text.len() > 1 && text.starts_with('0'))
        {
            return None;
        }
        BigUint::parse_bytes(text.as_bytes(), 10)
    }
}
