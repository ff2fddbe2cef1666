//! Stdout rendering. Human mode prints compact space-aligned lines; `--json`
//! switches every report to one JSON object per line with the same fields.

use serde_json::Value;

fn human(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One report line: `k v  k v ...` or a single JSON object.
pub fn print_row(json: bool, pairs: &[(&str, Value)]) {
    if json {
        let mut map = serde_json::Map::new();
        for (k, v) in pairs {
            map.insert(k.to_string(), v.clone());
        }
        println!("{}", Value::Object(map));
    } else {
        let parts: Vec<String> = pairs.iter().map(|(k, v)| format!("{k} {}", human(v))).collect();
        println!("{}", parts.join("  "));
    }
}

/// Metric table: aligned name/value rows, or one JSON object per metric.
pub fn print_metric_table(json: bool, rows: &[(String, f64)]) {
    if json {
        for (name, value) in rows {
            println!(
                "{}",
                serde_json::json!({ "metric": name, "value": value })
            );
        }
    } else {
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        for (name, value) in rows {
            println!("{name:<width$}  {value:.6}");
        }
    }
}
