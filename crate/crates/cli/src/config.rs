//! Training run configuration: TOML file merged over architecture defaults,
//! then command-line overrides.

use std::path::Path;

use least_volume::model::ModelSpec;
use least_volume::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ARCHS: [&str; 5] = ["toy1d", "toy2d", "conv_synthetic", "conv_synthetic_small", "linear"];

/// Fully resolved training run, echoed into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    pub arch: String,
    /// Overrides the architecture's latent size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    pub spectral_norm: bool,
    pub data: String,
    pub train: TrainConfig,
}

/// Values given on the command line; `None` defers to the file or defaults.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub arch: Option<String>,
    pub latent_dim: Option<usize>,
    pub no_spectral_norm: bool,
    pub data: Option<String>,
    pub train: Vec<(&'static str, toml::Value)>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Default hyperparameters of an architecture.
pub fn arch_defaults(arch: &str) -> Result<TrainConfig, CliError> {
    match arch {
        "toy1d" => Ok(TrainConfig::toy1d()),
        "toy2d" => Ok(TrainConfig::toy2d()),
        "conv_synthetic" | "conv_synthetic_small" => Ok(TrainConfig::synthetic()),
        "linear" => Ok(TrainConfig::default()),
        other => Err(usage(format!("unknown arch {other:?}; expected one of {ARCHS:?}"))),
    }
}

/// Model spec for the run on samples of shape `sample_shape`.
pub fn build_spec(cfg: &RunConfig, sample_shape: &[usize]) -> Result<ModelSpec, CliError> {
    if !ARCHS.contains(&cfg.arch.as_str()) {
        return Err(usage(format!("unknown arch {:?}; expected one of {ARCHS:?}", cfg.arch)));
    }
    let spec = ModelSpec::for_data(&cfg.arch, cfg.latent_dim, sample_shape).map_err(|e| usage(e.to_string()))?;
    Ok(if cfg.spectral_norm { spec } else { spec.without_spectral_norm() })
}

fn merge(base: &mut toml::Table, top: &toml::Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Resolves flags over the optional config file over architecture defaults.
pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<RunConfig, CliError> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| usage(format!("invalid config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for key in table.keys() {
        if !["version", "arch", "latent_dim", "spectral_norm", "data", "train"].contains(&key.as_str()) {
            return Err(usage(format!("unknown config key {key:?}")));
        }
    }
    let arch = match (&flags.arch, table.get("arch")) {
        (Some(a), _) => a.clone(),
        (None, Some(toml::Value::String(a))) => a.clone(),
        (None, Some(_)) => return Err(usage("config arch must be a string")),
        (None, None) => "toy1d".to_string(),
    };
    let defaults = arch_defaults(&arch)?;
    let mut train = toml::Table::try_from(&defaults).map_err(|e| usage(format!("defaults do not serialize: {e}")))?;
    match table.remove("train") {
        Some(toml::Value::Table(t)) => merge(&mut train, &t),
        Some(_) => return Err(usage("config train must be a table")),
        None => {}
    }
    for (k, v) in &flags.train {
        train.insert((*k).to_string(), v.clone());
    }
    let train: TrainConfig = toml::Value::Table(train)
        .try_into()
        .map_err(|e| usage(format!("invalid train config: {e}")))?;
    train.validate().map_err(|e| usage(e.to_string()))?;

    let latent_dim = match (flags.latent_dim, table.get("latent_dim")) {
        (Some(m), _) => Some(m),
        (None, Some(toml::Value::Integer(m))) if *m > 0 => Some(*m as usize),
        (None, Some(_)) => return Err(usage("config latent_dim must be a positive integer")),
        (None, None) => None,
    };
    let spectral_norm = match table.get("spectral_norm") {
        _ if flags.no_spectral_norm => false,
        Some(toml::Value::Boolean(b)) => *b,
        Some(_) => return Err(usage("config spectral_norm must be a boolean")),
        None => true,
    };
    let data = match (&flags.data, table.get("data")) {
        (Some(d), _) => d.clone(),
        (None, Some(toml::Value::String(d))) => d.clone(),
        _ => return Err(usage("no dataset given (--data or config data)")),
    };
    Ok(RunConfig { version: env!("CARGO_PKG_VERSION").to_string(), arch, latent_dim, spectral_norm, data, train })
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use least_volume::objectives::RegularizerKind;

    fn flags(data: &str) -> Overrides {
        Overrides { data: Some(data.into()), ..Overrides::default() }
    }

    #[test]
    fn defaults_follow_arch() {
        let c = resolve(None, &flags("d.lvds")).unwrap();
        assert_eq!(c.train, TrainConfig::toy1d());
        let f = Overrides { arch: Some("toy2d".into()), ..flags("d.lvds") };
        assert_eq!(resolve(None, &f).unwrap().train, TrainConfig::toy2d());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "arch = \"toy1d\"\n[train]\nepochs = 7\nlambda = 0.5\n[train.adam]\nbeta1 = 0.8\n").unwrap();
        let mut f = flags("d.lvds");
        f.train.push(("lambda", toml::Value::Float(0.25)));
        let c = resolve(Some(&p), &f).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.lambda, 0.25);
        assert_eq!(c.train.adam.beta1, 0.8);
        assert_eq!(c.train.adam.beta2, 0.999);
        assert_eq!(c.train.batch_size, 50);
    }

    #[test]
    fn echo_round_trips() {
        let mut f = flags("d.lvds");
        f.train.push(("regularizer", toml::Value::String("none".into())));
        f.no_spectral_norm = true;
        let c = resolve(None, &f).unwrap();
        assert_eq!(c.train.regularizer, RegularizerKind::None);
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(resolve(None, &Overrides::default()), Err(CliError::Usage(_))));
        let f = Overrides { arch: Some("vgg".into()), ..flags("d") };
        assert!(resolve(None, &f).is_err());
        let mut f = flags("d");
        f.train.push(("epochs", toml::Value::Integer(0)));
        assert!(resolve(None, &f).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nepoch = 3\n").unwrap();
        assert!(resolve(Some(&p), &flags("d")).is_err());
    }
}
