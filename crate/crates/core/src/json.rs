//! Canonical JSON output.
//!
//! Every document this crate writes goes through [`to_canonical_string`]:
//! object keys are sorted bytewise and floating-point numbers are printed
//! with 17 significant digits, which is enough for any `f64` to parse back
//! to the identical bit pattern. Two serializations of equal values are
//! therefore byte-identical.

use serde::Serialize;
use serde_json::{Number, Value};
use std::fmt::Write as _;

/// Serializes `value` into its canonical JSON text (no trailing newline).
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, &mut out);
    Ok(out)
}

/// Formats a finite `f64` with 17 significant digits in scientific notation.
///
/// Non-finite values have no JSON representation and are written as `null`.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn write_number(n: &Number, out: &mut String) {
    if let Some(u) = n.as_u64() {
        let _ = write!(out, "{u}");
    } else if let Some(i) = n.as_i64() {
        let _ = write!(out, "{i}");
    } else if let Some(f) = n.as_f64() {
        out.push_str(&format_f64(f));
    }
}

fn write_string(s: &str, out: &mut String) {
    // serde_json's escaping of a bare string cannot fail
    out.push_str(&serde_json::to_string(s).expect("string serialization"));
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(n, out),
        Value::String(s) => write_string(s, out),
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
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(k, out);
                out.push(':');
                write_value(v, out);
            }
            out.push('}');
        }
    }
}
