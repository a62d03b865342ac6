//! Deterministic rendering and atomic file writes.
//!
//! Every floating-point number leaving the CLI — in JSON, CSV, or the
//! stdout summary — is printed with 17 significant digits (`{:.16e}`), the
//! shortest width that round-trips every `f64`, so identical runs produce
//! byte-identical files.

use serde_json::Value;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// 17-significant-digit rendering used for every float the CLI emits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders a JSON value with sorted object keys (the default `serde_json`
/// map is ordered) and all floats at 17 significant digits. Non-finite
/// floats have already been mapped to `null` by `serde_json`.
pub fn render_json(v: &Value) -> String {
    let mut out = String::new();
    render(v, 0, &mut out);
    out.push('\n');
    out
}

fn render(v: &Value, indent: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                out.push_str(&fmt_f64(n.as_f64().expect("JSON number fits f64")));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("strings serialize"));
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                pad(indent + 1, out);
                render(item, indent + 1, out);
            }
            out.push('\n');
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (k, val)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('\n');
                pad(indent + 1, out);
                out.push_str(&serde_json::to_string(k).expect("keys serialize"));
                out.push_str(": ");
                render(val, indent + 1, out);
            }
            out.push('\n');
            pad(indent, out);
            out.push('}');
        }
    }
}

fn pad(indent: usize, out: &mut String) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

/// Writes `dir/name` atomically: the content lands in a temp file in the
/// same directory and is renamed into place, so readers never observe a
/// half-written file.
pub fn write_atomic(dir: &Path, name: &str, content: &str) -> io::Result<PathBuf> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{}.tmp-{}", name, std::process::id()));
    fs::write(&tmp, content)?;
    match fs::rename(&tmp, &path) {
        Ok(()) => Ok(path),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}
