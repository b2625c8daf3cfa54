//! Run configuration: one flat JSON object holding every [`TrainConfig`] key
//! plus the keys below. Unknown keys are rejected.
//!
//! | key            | meaning                                            |
//! |----------------|----------------------------------------------------|
//! | `dataset_path` | directory in the neutral dataset format            |
//! | `synthetic`    | inline SBM spec, generated instead of loaded       |
//! | `output_dir`   | where `train` and friends write their files        |
//! | `variants`     | variant list for `sweep-time`                      |
//! | `t_list`       | end times for `sweep-time` and `mem-report`        |
//!
//! Relative paths resolve against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use cgnn::datasets::{generate_sbm, load_dataset, Dataset, SbmSpec};
use cgnn::model::{TrainConfig, Variant};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_path: Option<PathBuf>,
    pub synthetic: Option<SbmSpec>,
    pub output_dir: Option<PathBuf>,
    pub variants: Option<Vec<Variant>>,
    pub t_list: Option<Vec<f64>>,
    pub train: TrainConfig,
}

fn take<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str, path: &Path) -> Result<Option<T>> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v).map(Some).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        }),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, path, base)
    }

    /// `source` only labels errors; relative paths are joined onto `base`.
    pub fn parse(text: &str, source: &Path, base: &Path) -> Result<Self> {
        let config_err = |source_err| CliError::Config {
            path: source.to_path_buf(),
            source: source_err,
        };
        let mut map: Map<String, Value> = serde_json::from_str(text).map_err(config_err)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let dataset_path = take::<PathBuf>(&mut map, "dataset_path", source)?.map(resolve);
        let output_dir = take::<PathBuf>(&mut map, "output_dir", source)?.map(resolve);
        let synthetic = take(&mut map, "synthetic", source)?;
        let variants = take(&mut map, "variants", source)?;
        let t_list = take(&mut map, "t_list", source)?;
        let train = serde_json::from_value(Value::Object(map)).map_err(config_err)?;
        let cfg = Self {
            dataset_path,
            synthetic,
            output_dir,
            variants,
            t_list,
            train,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.dataset_path.is_some() == self.synthetic.is_some() {
            return Err(CliError::Invalid("config needs exactly one of dataset_path and synthetic".into()));
        }
        if let Some(spec) = &self.synthetic {
            spec.validate()?;
        }
        if let Some(ts) = &self.t_list {
            check_times(ts)?;
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match (&self.dataset_path, &self.synthetic) {
            (Some(path), _) => Ok(load_dataset(path)?),
            (None, Some(spec)) => Ok(generate_sbm(spec)?),
            (None, None) => Err(CliError::Invalid("no dataset configured".into())),
        }
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .ok_or_else(|| CliError::Invalid("no output directory: set output_dir or pass --out".into()))
    }

    /// The effective configuration as one flat object.
    pub fn to_json(&self) -> Value {
        let mut map = match serde_json::to_value(&self.train) {
            Ok(Value::Object(map)) => map,
            _ => unreachable!("TrainConfig serializes to an object"),
        };
        let mut put = |key: &str, value: Value| {
            if !value.is_null() {
                map.insert(key.to_string(), value);
            }
        };
        put("dataset_path", serde_json::json!(self.dataset_path));
        put("synthetic", serde_json::json!(self.synthetic));
        put("output_dir", serde_json::json!(self.output_dir));
        put("variants", serde_json::json!(self.variants));
        put("t_list", serde_json::json!(self.t_list));
        Value::Object(map)
    }
}

pub fn check_times(ts: &[f64]) -> Result<()> {
    if ts.is_empty() {
        return Err(CliError::Invalid("t_list is empty".into()));
    }
    if let Some(t) = ts.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(CliError::Invalid(format!("t_list entry {t} must be finite and positive")));
    }
    Ok(())
}
