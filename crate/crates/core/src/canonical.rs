//! Canonical JSON: compact, object keys sorted at every level.
//!
//! Feed records, verification reports, the ingestion log and the watcher's
//! seen-set all use this form so they can be compared byte-for-byte.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

/// Serializes `value` in canonical form.
pub fn to_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    // Keys are ordered here rather than trusting serde_json's map type, which
    // preserves insertion order when its `preserve_order` feature is on.
    let mut out = String::new();
    write_value(&v, &mut out);
    Ok(out)
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let ordered: BTreeMap<&String, &Value> = map.iter().collect();
            out.push('{');
            for (i, (k, v)) in ordered.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string keys serialize"));
                out.push(':');
                write_value(v, out);
            }
            out.push('}');
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
        scalar => out.push_str(&scalar.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_recursively() {
        let v = json!({"b": 1, "a": {"z": [ {"y": 2, "x": 1} ], "c": "s"}});
        assert_eq!(
            to_string(&v).unwrap(),
            r#"{"a":{"c":"s","z":[{"x":1,"y":2}]},"b":1}"#
        );
    }
}
