//! Run configuration: one JSON file plus `key=value` overrides addressed by
//! dotted paths such as `ddr.epsilon` or `loss.lambda_grad`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scene::{BakeOptions, Rig, SceneSpec};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub samples: usize,
    pub frame: usize,
    /// Image row for weight maps; the middle row when absent.
    pub row: Option<usize>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples: 128,
            frame: 0,
            row: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckOptions {
    pub points: usize,
    pub seed: u64,
    pub step: f64,
    pub tol_deterministic: f64,
    pub tol_stochastic: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            points: 20,
            seed: 0,
            step: 1e-6,
            tol_deterministic: 1e-6,
            tol_stochastic: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Pixel stride of the grid used for the unimodality report.
    pub stride: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { stride: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub scene: SceneSpec,
    pub rig: Rig,
    pub bake: BakeOptions,
    pub render: RenderOptions,
    pub gradcheck: GradcheckOptions,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            scene: SceneSpec::two_spheres(),
            rig: Rig::default(),
            bake: BakeOptions::default(),
            render: RenderOptions::default(),
            gradcheck: GradcheckOptions::default(),
            eval: EvalOptions::default(),
        }
    }
}

/// Recursively overlay `user` onto `base`. Objects merge key by key;
/// anything else replaces. Keys absent from `base` are rejected.
fn merge(base: &mut Value, user: Value, path: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(Error::Config(format!("unknown key `{sub}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parse `key=value`. The value is read as JSON when it parses, otherwise
/// as a bare string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{text}` has an empty key")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((key.to_string(), value))
}

fn nest(key: &str, value: Value) -> Value {
    key.rsplit('.').fold(value, |acc, part| {
        let mut m = serde_json::Map::new();
        m.insert(part.to_string(), acc);
        Value::Object(m)
    })
}

impl RunConfig {
    /// Defaults, overlaid with `file` (if any) and then each override.
    pub fn resolve(file: Option<Value>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(user) = file {
            if !user.is_object() {
                return Err(Error::Config("config file must hold a JSON object".into()));
            }
            merge(&mut value, user, "")?;
        }
        for o in overrides {
            let (key, v) = parse_override(o)?;
            merge(&mut value, nest(&key, v), "")?;
        }
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config does not deserialize: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file = path.map(crate::io::read_json::<Value>).transpose()?;
        Self::resolve(file, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.scene.validate()?;
        if self.render.samples < 2 {
            return Err(Error::Config("render.samples must be >= 2".into()));
        }
        if self.eval.stride == 0 {
            return Err(Error::Config("eval.stride must be >= 1".into()));
        }
        if self.gradcheck.points == 0 || !(self.gradcheck.step > 0.0) {
            return Err(Error::Config("gradcheck needs points >= 1 and a positive step".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["ddr"]["epsilon"], json!(2.0));
        assert_eq!(v["ddr"]["density_margin"], json!(2));
        assert_eq!(v["loss"]["lambda_grad"], json!(0.1));
    }

    #[test]
    fn file_and_overrides_apply_in_order() {
        let file = json!({"iterations": 50, "ddr": {"epsilon": 0.5}, "loss": {"lambda_weight": 0.0}});
        let sets = vec!["ddr.epsilon=0.25".to_string(), "sampling=midpoint".to_string()];
        let cfg = RunConfig::resolve(Some(file), &sets).unwrap();
        assert_eq!(cfg.train.iterations, 50);
        assert_eq!(cfg.train.ddr.gumbel.epsilon, 0.25);
        assert_eq!(cfg.train.ddr.gumbel.n_samples, 30);
        assert_eq!(cfg.train.lambdas.weight, 0.0);
        assert_eq!(cfg.train.sampling, crate::render::SamplingMode::Midpoint);
    }

    #[test]
    fn unknown_and_invalid_keys_are_rejected() {
        assert!(RunConfig::resolve(None, &["ddr.epsilom=1".into()]).is_err());
        assert!(RunConfig::resolve(Some(json!({"bogus": 1})), &[]).is_err());
        assert!(RunConfig::resolve(None, &["ddr.epsilon=-1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["iterations".into()]).is_err());
        assert!(RunConfig::resolve(None, &["iterations=many".into()]).is_err());
    }
}
