use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

fn as_object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("option structs serialize to objects"),
    }
}

/// Whether a serialized flag value means "not given on the command line".
fn is_unset(v: &Value) -> bool {
    match v {
        Value::Null | Value::Bool(false) => true,
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

/// Overlays command-line flags onto the JSON config at `config`.
///
/// Config keys are the long flag names; underscores are accepted in place
/// of hyphens. An optional `"command"` key must name `command`.
pub fn merge<A>(flags: &A, config: Option<&Path>, command: &str) -> CliResult<A>
where
    A: Serialize + DeserializeOwned + Default,
{
    let usage = |m: String| CliError::Usage(m);
    let mut merged = as_object(serde_json::to_value(A::default()).map_err(|e| usage(e.to_string()))?);
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: invalid JSON config: {e}", path.display())))?;
        let Value::Object(entries) = parsed else {
            return Err(usage(format!("{}: config must be a JSON object", path.display())));
        };
        for (key, value) in entries {
            let key = key.replace('_', "-");
            if key == "command" {
                if value.as_str() != Some(command) {
                    return Err(usage(format!("config is for command {value}, not `{command}`")));
                }
                continue;
            }
            if !merged.contains_key(&key) {
                return Err(usage(format!("unknown config key `{key}` for `{command}`")));
            }
            merged.insert(key, value);
        }
    }
    for (key, value) in as_object(serde_json::to_value(flags).map_err(|e| usage(e.to_string()))?) {
        if !is_unset(&value) {
            merged.insert(key, value);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("invalid option value: {e}")))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;
    use crate::args::{EstimateArgs, SimulateArgs};

    fn config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn flags_override_config() {
        let f = config(
            r#"{"outcome": "y", "treatment": "t", "level": 0.9, "covariates": ["a", "b"], "drop_missing": true}"#,
        );
        let mut flags = EstimateArgs {
            level: Some(0.8),
            ..EstimateArgs::default()
        };
        let m = merge(&flags, Some(f.path()), "estimate").unwrap();
        assert_eq!(m.level, Some(0.8));
        assert_eq!(m.data.outcome.as_deref(), Some("y"));
        assert_eq!(m.data.covariates, ["a", "b"]);
        assert!(m.data.drop_missing);
        flags.data.covariates = vec!["c".into()];
        assert_eq!(
            merge(&flags, Some(f.path()), "estimate").unwrap().data.covariates,
            ["c"]
        );
    }

    #[test]
    fn rejects_unknown_keys_and_wrong_command() {
        let f = config(r#"{"outcome": "y", "bogus": 1}"#);
        assert!(matches!(
            merge(&EstimateArgs::default(), Some(f.path()), "estimate"),
            Err(CliError::Usage(_))
        ));
        let g = config(r#"{"command": "simulate", "delta": 1.0}"#);
        assert!(merge(&EstimateArgs::default(), Some(g.path()), "estimate").is_err());
        let m = merge(&SimulateArgs::default(), Some(g.path()), "simulate").unwrap();
        assert_eq!(m.delta, Some(1.0));
        let bad_type = config(r#"{"delta": "two"}"#);
        assert!(matches!(
            merge(&SimulateArgs::default(), Some(bad_type.path()), "simulate"),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn config_key_set_matches_flags() {
        let keys = as_object(serde_json::to_value(SimulateArgs::default()).unwrap());
        for k in [
            "seed",
            "threads",
            "out",
            "format",
            "reps",
            "methods",
            "sb",
            "x-model",
            "emit-data",
        ] {
            assert!(keys.contains_key(k), "{k}");
        }
        assert!(!keys.contains_key("config"));
    }
}
