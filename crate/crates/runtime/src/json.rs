//! JSON rendering of [`Value`].
//!
//! JSON has no bytes, no ordered keyed maps and no non-finite numbers, so
//! three tagged single-key objects carry them:
//!
//! ```text
//! Bytes            {"$bytes": "<base64>"}
//! Table            {"$table": [[[component, ...], value], ...]}
//! NaN / +-inf      {"$float": "NaN" | "inf" | "-inf"}
//! ```
//!
//! Integers that fit in `i64` become `Int`; every other number is `Float`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use eight_core::{KeyPath, Table, Value};
use serde_json::{json, Map, Number, Value as Json};

pub fn to_json(v: &Value) -> Json {
    match v {
        Value::Null => Json::Null,
        Value::Bool(b) => Json::Bool(*b),
        Value::Int(i) => Json::from(*i),
        Value::Float(x) => match Number::from_f64(*x) {
            Some(n) => Json::Number(n),
            None if x.is_nan() => json!({"$float": "NaN"}),
            None if *x > 0.0 => json!({"$float": "inf"}),
            None => json!({"$float": "-inf"}),
        },
        Value::Text(s) => Json::String(s.clone()),
        Value::Bytes(b) => json!({"$bytes": STANDARD.encode(b)}),
        Value::Seq(items) => Json::Array(items.iter().map(to_json).collect()),
        Value::Rec(fields) => Json::Object(fields.iter().map(|(k, v)| (k.clone(), to_json(v))).collect()),
        Value::Table(t) => {
            let rows = t
                .iter()
                .map(|(k, v)| json!([Json::Array(k.components().iter().map(to_json).collect()), to_json(v)]))
                .collect();
            json!({"$table": Json::Array(rows)})
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot read value from JSON: {0}")]
pub struct JsonValueError(pub String);

pub fn from_json(j: &Json) -> Result<Value, JsonValueError> {
    Ok(match j {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().ok_or_else(|| JsonValueError(n.to_string()))?),
        },
        Json::String(s) => Value::Text(s.clone()),
        Json::Array(items) => Value::Seq(items.iter().map(from_json).collect::<Result<_, _>>()?),
        Json::Object(map) => match tagged(map)? {
            Some(v) => v,
            None => Value::Rec(map.iter().map(|(k, v)| Ok((k.clone(), from_json(v)?))).collect::<Result<_, _>>()?),
        },
    })
}

fn tagged(map: &Map<String, Json>) -> Result<Option<Value>, JsonValueError> {
    if map.len() != 1 {
        return Ok(None);
    }
    let (k, v) = map.iter().next().unwrap();
    let bad = |what: &str| JsonValueError(format!("malformed {what}"));
    Ok(Some(match (k.as_str(), v) {
        ("$bytes", Json::String(s)) => Value::Bytes(STANDARD.decode(s).map_err(|_| bad("$bytes"))?),
        ("$float", Json::String(s)) => Value::Float(match s.as_str() {
            "NaN" => f64::NAN,
            "inf" => f64::INFINITY,
            "-inf" => f64::NEG_INFINITY,
            _ => return Err(bad("$float")),
        }),
        ("$table", Json::Array(rows)) => {
            let mut t = Table::new();
            for row in rows {
                let [key, value] = row.as_array().map(Vec::as_slice).unwrap_or_default() else {
                    return Err(bad("$table row"));
                };
                let parts = key.as_array().ok_or_else(|| bad("$table key"))?;
                let parts = parts.iter().map(from_json).collect::<Result<Vec<_>, _>>()?;
                let key = KeyPath::new(parts).map_err(|e| JsonValueError(e.to_string()))?;
                if t.insert(key, from_json(value)?).is_some() {
                    return Err(bad("$table (duplicate key)"));
                }
            }
            Value::Table(t)
        }
        _ => return Ok(None),
    }))
}

/// `#[serde(with = "crate::json::serde_value")]` for [`Value`] fields.
pub mod serde_value {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Value, s: S) -> Result<S::Ok, S::Error> {
        to_json(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Value, D::Error> {
        from_json(&Json::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}
