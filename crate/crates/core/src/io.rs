//! Artifact formatting helpers: stable float rounding, JSON writing, hashing.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Significant digits kept in every exported float.
pub const EXPORT_DIGITS: usize = 12;

/// Rounds to [`EXPORT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", EXPORT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                if let Some(f) = n.as_f64() {
                    if let Some(r) = serde_json::Number::from_f64(round_sig(f)) {
                        *n = r;
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with sorted keys and floats rounded to [`EXPORT_DIGITS`] digits.
pub fn to_stable_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    // serde_json's default map is a BTreeMap, so keys come out sorted
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_stable_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = to_stable_json(value).map_err(std::io::Error::other)?;
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)
}

/// Short hex SHA-256 of a canonical serialization.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

/// Formats a float for delimited text with [`EXPORT_DIGITS`] significant digits.
pub fn fmt_f64(x: f64) -> String {
    let r = round_sig(x);
    format!("{r}")
}

/// Serde adapter mapping `+inf` to JSON `null`.
pub mod inf_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(0.15000000000000002), 0.15);
        assert_eq!(round_sig(0.005), 0.005);
        assert_eq!(round_sig(1.234567890123456), 1.23456789012);
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn stable_json_sorts_keys() {
        let mut m = HashMap::new();
        m.insert("b", 1.0000000000000002);
        m.insert("a", 2.0);
        let s = to_stable_json(&m).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("1.0"));
        assert!(!s.contains("1.0000000000000002"));
    }
}
