//! Layered configuration: defaults, then a TOML file, then `key=value`
//! overrides. Keys that do not exist in the configuration are rejected.

use relwitness::pipeline::PipelineConfig;
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config file: {0}")]
    File(String),
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("config value: {0}")]
    Value(String),
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, l) => *b = l,
    }
}

fn leaf_paths(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, v) in m {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                leaf_paths(v, &p, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |v, k| v.as_object()?.get(k))
}

/// Parses the right-hand side as a TOML value, falling back to a string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn parse_override(spec: &str) -> Result<Value, ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(spec.into()));
    }
    Ok(key.rsplit('.').fold(parse_value(raw.trim()), |acc, k| {
        Value::Object(Map::from_iter([(k.to_string(), acc)]))
    }))
}

/// Resolves defaults < `file` (TOML text) < `overrides`.
pub fn resolve(file: Option<&str>, overrides: &[Value]) -> Result<PipelineConfig, ConfigError> {
    let mut resolved = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    let mut layers = Vec::new();
    if let Some(text) = file {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::File(e.to_string()))?;
        layers.push(serde_json::to_value(table).map_err(|e| ConfigError::File(e.to_string()))?);
    }
    layers.extend(overrides.iter().cloned());
    let mut keys = Vec::new();
    for l in layers {
        leaf_paths(&l, "", &mut keys);
        merge(&mut resolved, l);
    }
    let config: PipelineConfig = serde_json::from_value(resolved).map_err(|e| ConfigError::Value(e.to_string()))?;
    let back = serde_json::to_value(&config).expect("config serializes");
    if let Some(k) = keys.into_iter().find(|k| lookup(&back, k).is_none()) {
        return Err(ConfigError::UnknownKey(k));
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let file = "seed = 9\nscenes = 4\n[decode]\ntop_n = 2\n";
        let c = resolve(Some(file), &[parse_override("scenes=6").unwrap()]).unwrap();
        assert_eq!((c.seed, c.scenes, c.decode.decode.top_n), (9, 6, 2));
        assert_eq!(
            c.decode.decode.lambda_q,
            PipelineConfig::default().decode.decode.lambda_q
        );
    }

    #[test]
    fn nested_overrides_and_types() {
        let c = resolve(
            None,
            &[
                parse_override("trainer.lambdas.miss=0.25").unwrap(),
                parse_override("audit.strata.unannotated=10").unwrap(),
                parse_override("scene.furniture=[2, 3]").unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(c.trainer.lambdas.miss, 0.25);
        assert_eq!(c.audit.strata.unannotated, Some(10));
        assert_eq!(c.scene.furniture, (2, 3));
    }

    #[test]
    fn typos_and_bad_values_are_errors() {
        assert_eq!(
            resolve(None, &[parse_override("trainer.lamdas.miss=1").unwrap()]),
            Err(ConfigError::UnknownKey("trainer.lamdas.miss".into()))
        );
        assert!(matches!(
            resolve(None, &[parse_override("scenes=lots").unwrap()]),
            Err(ConfigError::Value(_))
        ));
        assert!(matches!(resolve(Some("scenes = "), &[]), Err(ConfigError::File(_))));
        assert!(parse_override("scenes").is_err());
        assert!(parse_override("a..b=1").is_err());
    }
}
