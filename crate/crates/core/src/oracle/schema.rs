//! Checker for the JSON Schema keywords the bundled corpus schema uses:
//! `type`, `required`, `properties`, `additionalProperties: false`, `enum`,
//! `minimum`, `maximum`, `minLength`, `items`, `minItems`, `maxItems` and
//! `propertyNames`. Unknown keywords are ignored.

use serde_json::Value;

fn type_matches(name: &str, v: &Value) -> bool {
    match name {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => true,
    }
}

/// Every violation of `schema` by `v`, as `"<path>: <message>"`.
pub fn check(schema: &Value, v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    walk(schema, v, "", &mut out);
    out
}

fn walk(schema: &Value, v: &Value, path: &str, out: &mut Vec<String>) {
    let at = if path.is_empty() { "/" } else { path };
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        if !type_matches(t, v) {
            out.push(format!("{at}: expected {t}"));
            return;
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(v) {
            out.push(format!(
                "{at}: {v} is not one of {}",
                Value::Array(options.clone())
            ));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
            if x < min {
                out.push(format!("{at}: {x} is below {min}"));
            }
        }
        if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
            if x > max {
                out.push(format!("{at}: {x} is above {max}"));
            }
        }
    }
    if let (Some(s), Some(min)) = (v.as_str(), schema.get("minLength").and_then(Value::as_u64)) {
        if (s.chars().count() as u64) < min {
            out.push(format!("{at}: shorter than {min}"));
        }
    }
    if let Some(items) = v.as_array() {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                out.push(format!("{at}: fewer than {min} items"));
            }
        }
        if let Some(max) = schema.get("maxItems").and_then(Value::as_u64) {
            if (items.len() as u64) > max {
                out.push(format!("{at}: more than {max} items"));
            }
        }
        if let Some(item_schema) = schema.get("items") {
            for (k, item) in items.iter().enumerate() {
                walk(item_schema, item, &format!("{path}/{k}"), out);
            }
        }
    }
    if let Some(obj) = v.as_object() {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for name in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(name) {
                    out.push(format!("{at}: missing required property {name:?}"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        let closed = schema.get("additionalProperties") == Some(&Value::Bool(false));
        let names = schema.get("propertyNames");
        for (key, child) in obj {
            if let Some(names) = names {
                walk(
                    names,
                    &Value::String(key.clone()),
                    &format!("{path}/{key}"),
                    out,
                );
            }
            match props.and_then(|p| p.get(key)) {
                Some(s) => walk(s, child, &format!("{path}/{key}"), out),
                None if closed => out.push(format!("{at}: unexpected property {key:?}")),
                None => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn reports_each_keyword() {
        let schema = json!({
            "type": "object",
            "required": ["a", "b"],
            "additionalProperties": false,
            "properties": {
                "a": {"type": "integer", "minimum": 1},
                "b": {"type": "array", "maxItems": 1, "items": {"enum": ["x"]}}
            }
        });
        assert!(check(&schema, &json!({"a": 1, "b": ["x"]})).is_empty());
        let errs = check(&schema, &json!({"a": 0, "b": ["y", "x"], "c": 1}));
        assert_eq!(errs.len(), 4, "{errs:?}");
        assert_eq!(
            check(&schema, &json!([])),
            vec!["/: expected object".to_string()]
        );
        assert_eq!(
            check(&schema, &json!({"a": 1.5, "b": []})),
            vec!["/a: expected integer".to_string()]
        );
    }
}
