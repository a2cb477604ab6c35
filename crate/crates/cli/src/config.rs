//! Run configuration: one JSON file, optionally patched by `--set` flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hhk_core::constructor::ConstructorOptions;
use hhk_core::oracle::AscentOptions;
use hhk_core::{ConsumptionPlan, DpOptions, FelicityChoice, KktTolerances, MarketParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketParams<f64>,
    #[serde(default)]
    pub felicity: Option<FelicityChoice<f64>>,
    /// Inline plan for `evaluate` and `verify`.
    #[serde(default)]
    pub plan: Option<ConsumptionPlan<f64>>,
    /// Plan file: a bare plan, or any JSON object with a `plan` field.
    #[serde(default)]
    pub plan_file: Option<PathBuf>,
    #[serde(default)]
    pub kkt: KktTolerances,
    #[serde(default)]
    pub constructor: ConstructorOptions,
    #[serde(default)]
    pub dp: DpOptions,
    #[serde(default)]
    pub ascent: AscentOptions,
    #[serde(default)]
    pub exhaustive: ExhaustiveConfig,
    /// Parameter grid for `sweep`: dotted config path to values.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExhaustiveConfig {
    pub points: usize,
    pub quanta: usize,
}

impl Default for ExhaustiveConfig {
    fn default() -> Self {
        ExhaustiveConfig { points: 5, quanta: 12 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Time slices written by `dp`, as grid step indices.
    pub dp_slices: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("."), dp_slices: vec![0] }
    }
}

/// Reads `path` and applies `key=value` overrides before validation.
pub fn load(path: &Path, overrides: &[String]) -> Result<(RunConfig, Value), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut raw: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
        let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        set_path(&mut raw, key, value)?;
    }
    Ok((parse(&raw)?, raw))
}

pub fn parse(raw: &Value) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_value(raw.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.market.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Sets a dotted path such as `market.w`, creating objects on the way.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| CliError::Config(format!("`{key}` does not name an object field")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(CliError::Config("empty override key".into()))
}

impl RunConfig {
    pub fn felicity(&self) -> Result<FelicityChoice<f64>, CliError> {
        self.felicity.ok_or_else(|| CliError::Config("missing `felicity` block".into()))
    }

    /// Plan from `plan` or `plan_file`, or the empty plan when neither is given.
    pub fn plan_or_empty(&self) -> Result<ConsumptionPlan<f64>, CliError> {
        match (&self.plan, &self.plan_file) {
            (Some(_), Some(_)) => Err(CliError::Config("give either `plan` or `plan_file`, not both".into())),
            (Some(p), None) => Ok(p.clone()),
            (None, Some(path)) => read_plan(path),
            (None, None) => Ok(ConsumptionPlan::empty_for(&self.market)),
        }
    }
}

fn read_plan(path: &Path) -> Result<ConsumptionPlan<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let plan = find_plan(&v).ok_or_else(|| CliError::Config(format!("{} holds no plan", path.display())))?;
    serde_json::from_value(plan.clone()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn find_plan(v: &Value) -> Option<&Value> {
    let obj = v.as_object()?;
    if obj.contains_key("rate") && obj.contains_key("atoms") {
        return Some(v);
    }
    obj.values().find_map(find_plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({"market": {"T": 1.0, "r": 0.05, "beta": 1.0, "y": 1.0, "w": 1.0, "grid_n": 50}})
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = base();
        v["colour"] = json!(3);
        assert!(matches!(parse(&v), Err(CliError::Config(_))));
        let mut v = base();
        v["market"]["gamma"] = json!(1);
        assert!(parse(&v).is_err());
    }

    #[test]
    fn overrides_patch_nested_fields() {
        let mut v = base();
        set_path(&mut v, "market.w", json!(2.5)).unwrap();
        set_path(&mut v, "dp.nt", json!(7)).unwrap();
        let cfg = parse(&v).unwrap();
        assert_eq!(cfg.market.w, 2.5);
        assert_eq!(cfg.dp.nt, 7);
        assert_eq!(cfg.dp.nx, DpOptions::default().nx);
    }

    #[test]
    fn plan_is_found_inside_solver_output() {
        let v = json!({"solution": {"case": "gulp", "plan": {"atoms": [], "rate": [1.0], "grid_n": 1, "T": 1.0}}});
        assert_eq!(find_plan(&v).unwrap()["grid_n"], json!(1));
    }
}
