//! Configuration assembly: built-in defaults, then the JSON file, then
//! `--override KEY=VALUE` pairs in order, then `--seed`.
//!
//! Overrides are merged as JSON values and the result is deserialized once,
//! so the field names, accepted enum spellings, and rejection of unknown
//! keys are identical between the file and the command line.

use scfde::link_sim::SimConfig;
use serde_json::{Map, Value};

use crate::{CliError, RunArgs};

pub fn load(args: &RunArgs) -> Result<SimConfig, CliError> {
    let mut merged = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!("{} is not valid JSON: {e}", path.display()))
            })?;
            match value {
                Value::Object(map) => map,
                _ => {
                    return Err(CliError::Config(format!(
                        "{} must contain a JSON object",
                        path.display()
                    )))
                }
            }
        }
        None => Map::new(),
    };

    for pair in &args.overrides {
        let (key, raw) = pair.split_once('=').ok_or_else(|| {
            CliError::Config(format!("override `{pair}` is not of the form KEY=VALUE"))
        })?;
        merged.insert(key.to_string(), override_value(key, raw)?);
    }
    if let Some(seed) = args.seed {
        merged.insert("base_seed".to_string(), Value::from(seed));
    }

    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Config(format!("bad configuration: {e}")))
}

/// Parse one override's value with the type its key calls for, so that
/// `trials=1e3` or `m=big` fail here with the key named instead of
/// surfacing as an opaque deserialization error.
fn override_value(key: &str, raw: &str) -> Result<Value, CliError> {
    let invalid =
        |expected: &str| CliError::Config(format!("value `{raw}` for `{key}` is not {expected}"));
    match key {
        "m" | "l_cp" | "n_r" | "n_d" | "l_h" | "l_g" | "b_h" | "b_g" | "max_iterations"
        | "trials" | "base_seed" => raw
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| invalid("a non-negative integer")),
        "sigma_t" | "p_s" | "p_r" | "epsilon" => parse_finite(raw)
            .map(Value::from)
            .ok_or_else(|| invalid("a finite number")),
        "snr_db_grid" => raw
            .split(',')
            .map(|part| parse_finite(part.trim()).map(Value::from))
            .collect::<Option<Vec<_>>>()
            .map(Value::Array)
            .ok_or_else(|| invalid("a comma-separated list of finite numbers")),
        "scheme" | "power_alloc" | "feedback_mode" => Ok(Value::String(raw.to_string())),
        other => Err(CliError::Config(format!("unknown override key `{other}`"))),
    }
}

fn parse_finite(raw: &str) -> Option<f64> {
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}
