//! Flat `key = value` run configuration.
//!
//! A run is fully described by a subcommand name plus a string map of
//! parameters. Values come from three layers, later layers winning:
//! built-in defaults, then the `--config` file, then command-line flags.
//! The resolved configuration is echoed next to the result files as
//! `<subcommand>-<seed>.config`; loading that echo reproduces the run
//! exactly (`load(emit(config)) == config`).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

/// CLI failure: `exit` is 1 for usage errors (bad flags, malformed config,
/// missing keys, invalid parameter values) and 2 for runs that executed but
/// failed an assertion or left a numerical domain.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub exit: i32,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { message: message.into(), exit: 1 }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError { message: message.into(), exit: 2 }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<designforge::Error> for CliError {
    fn from(e: designforge::Error) -> Self {
        match e {
            // Invalid inputs are the caller's mistake: usage error.
            designforge::Error::InvalidInput(_) => CliError::usage(e.to_string()),
            // Anything else failed after valid inputs were accepted.
            _ => CliError::failure(e.to_string()),
        }
    }
}

/// A resolved run: subcommand plus flat parameter map. Values stay strings
/// so the configuration round-trips losslessly; typed accessors parse on
/// use and name the offending key on failure.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    pub subcommand: String,
    pub values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Required string value (present after resolution for every key with a
    /// default or `required` marker).
    pub fn str(&self, key: &str) -> Result<&str, CliError> {
        self.get(key).ok_or_else(|| {
            CliError::usage(format!(
                "missing required key `{key}` for `{}` (pass --{key} or set it in the config file)",
                self.subcommand
            ))
        })
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        parse_f64(key, self.str(key)?)
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        let v = self.str(key)?;
        v.parse::<usize>()
            .map_err(|_| CliError::usage(format!("key `{key}`: cannot parse `{v}` as a non-negative integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        let v = self.str(key)?;
        v.parse::<u64>()
            .map_err(|_| CliError::usage(format!("key `{key}`: cannot parse `{v}` as a non-negative integer")))
    }

    /// Comma-separated float list, e.g. `l_grid = 4,8,16`.
    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.str(key)?
            .split(',')
            .map(|tok| parse_f64(key, tok.trim()))
            .collect()
    }

    /// Comma-separated unsigned-integer list.
    pub fn list_usize(&self, key: &str) -> Result<Vec<usize>, CliError> {
        self.str(key)?
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<usize>().map_err(|_| {
                    CliError::usage(format!(
                        "key `{key}`: cannot parse `{tok}` as a non-negative integer"
                    ))
                })
            })
            .collect()
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    v.parse::<f64>()
        .map_err(|_| CliError::usage(format!("key `{key}`: cannot parse `{v}` as a number")))
}

/// One parameter a subcommand accepts: its key name, an optional built-in
/// default, and whether resolution fails when no layer supplies it.
pub struct KeySpec {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub required: bool,
}

pub const fn key(name: &'static str, default: Option<&'static str>, required: bool) -> KeySpec {
    KeySpec { name, default, required }
}

/// Parses the flat config format: one `key = value` per line, `#` comments,
/// blank lines ignored. A `subcommand` key names the subcommand. Malformed
/// lines and duplicate keys are usage errors naming the line.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!(
                "malformed config line {}: expected `key = value`, got `{line}`",
                i + 1
            ))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::usage(format!("malformed config line {}: empty key", i + 1)));
        }
        if k == "subcommand" {
            if !cfg.subcommand.is_empty() {
                return Err(CliError::usage(format!(
                    "config line {}: duplicate key `subcommand`",
                    i + 1
                )));
            }
            cfg.subcommand = v.to_string();
            continue;
        }
        if cfg.values.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::usage(format!("config line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::usage(format!("cannot read config file `{}`: {e}", path.display()))
    })?;
    parse_config(&text)
}

/// Inverse of [`parse_config`]: `parse_config(emit_config(cfg)) == cfg`.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut out = format!("subcommand = {}\n", cfg.subcommand);
    for (k, v) in &cfg.values {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

/// Merges defaults, the optional config file, and flag overrides (flags
/// win) into a resolved [`RunConfig`], rejecting keys the subcommand does
/// not accept and enforcing unconditionally required keys.
pub fn resolve(
    subcommand: &str,
    keys: &[KeySpec],
    config: Option<RunConfig>,
    flags: &[(&'static str, Option<String>)],
) -> Result<RunConfig, CliError> {
    let mut resolved = RunConfig { subcommand: subcommand.to_string(), values: BTreeMap::new() };
    if let Some(cfg) = config {
        if !cfg.subcommand.is_empty() && cfg.subcommand != subcommand {
            return Err(CliError::usage(format!(
                "config file is for subcommand `{}`, but `{subcommand}` was invoked",
                cfg.subcommand
            )));
        }
        for (k, v) in cfg.values {
            if !keys.iter().any(|spec| spec.name == k) {
                return Err(CliError::usage(format!(
                    "config key `{k}` is not recognized for subcommand `{subcommand}`"
                )));
            }
            resolved.values.insert(k, v);
        }
    }
    for (name, value) in flags {
        if let Some(v) = value {
            debug_assert!(keys.iter().any(|spec| spec.name == *name));
            resolved.set(name, v.clone());
        }
    }
    for spec in keys {
        if resolved.get(spec.name).is_none() {
            if let Some(d) = spec.default {
                resolved.set(spec.name, d);
            } else if spec.required {
                return Err(CliError::usage(format!(
                    "missing required key `{}` for `{subcommand}` (pass --{} or set it in the config file)",
                    spec.name, spec.name
                )));
            }
        }
    }
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[KeySpec] = &[
        key("manifold", None, true),
        key("L", None, true),
        key("tol", Some("1e-10"), false),
        key("seed", None, false),
    ];

    #[test]
    fn config_round_trips_through_emit() {
        let text = "# comment\nsubcommand = design\nmanifold = torus1\nL = 8\n\ntol = 1e-9\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.subcommand, "design");
        assert_eq!(cfg.get("L"), Some("8"));
        let emitted = emit_config(&cfg);
        assert_eq!(parse_config(&emitted).unwrap(), cfg);
    }

    #[test]
    fn malformed_lines_and_duplicates_name_the_line() {
        let err = parse_config("manifold = torus1\nbogus line\n").unwrap_err();
        assert!(err.message.contains("line 2"), "{}", err.message);
        assert_eq!(err.exit, 1);
        let err = parse_config("a = 1\na = 2\n").unwrap_err();
        assert!(err.message.contains("duplicate key `a`"), "{}", err.message);
    }

    #[test]
    fn flags_override_config_and_defaults_fill() {
        let cfg = parse_config("manifold = torus1\nL = 4\n").unwrap();
        let resolved = resolve(
            "design",
            KEYS,
            Some(cfg),
            &[("L", Some("8".to_string())), ("seed", None)],
        )
        .unwrap();
        assert_eq!(resolved.get("L"), Some("8"), "flag wins over config");
        assert_eq!(resolved.get("tol"), Some("1e-10"), "default fills");
        assert_eq!(resolved.get("seed"), None, "optional key stays unset");
    }

    #[test]
    fn unknown_config_key_is_a_usage_error_naming_it() {
        let cfg = parse_config("manifold = torus1\nL = 4\nwibble = 3\n").unwrap();
        let err = resolve("design", KEYS, Some(cfg), &[]).unwrap_err();
        assert!(err.message.contains("`wibble`"), "{}", err.message);
        assert_eq!(err.exit, 1);
    }

    #[test]
    fn missing_required_key_is_a_usage_error() {
        let err = resolve("design", KEYS, None, &[("manifold", Some("torus1".into()))])
            .unwrap_err();
        assert!(err.message.contains("`L`"), "{}", err.message);
        assert_eq!(err.exit, 1);
    }

    #[test]
    fn typed_accessors_name_the_key_on_parse_failure() {
        let mut cfg = RunConfig { subcommand: "x".into(), values: BTreeMap::new() };
        cfg.set("L", "abc");
        cfg.set("grid", "1,2,oops");
        let err = cfg.f64("L").unwrap_err();
        assert!(err.message.contains("key `L`"), "{}", err.message);
        let err = cfg.list_f64("grid").unwrap_err();
        assert!(err.message.contains("key `grid`"), "{}", err.message);
        assert!(cfg.list_usize("grid").is_err());
        assert_eq!(cfg.list_f64("missing").unwrap_err().exit, 1);
    }
}
