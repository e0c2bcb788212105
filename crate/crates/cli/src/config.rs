use std::fs;
use std::path::{Path, PathBuf};

use burnscan::segmodel::{LossKind, ModelConfig};
use burnscan::transfer::{Period, PeriodKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Run configuration file (TOML). Every field is optional; command-line flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
    pub districts: Option<PathBuf>,
    pub region: Option<PathBuf>,
    /// ModelConfig document (TOML or JSON).
    pub model_config: Option<PathBuf>,
    pub stride: Option<usize>,
    pub window_days: Option<i64>,
    pub threshold: Option<f64>,
    pub split_seed: Option<u64>,
    pub train_ratio: Option<f64>,
    pub periods: Option<PeriodSpec>,
    #[serde(default)]
    pub model: ModelOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodSpec {
    pub kind: PeriodKind,
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for PeriodSpec {
    fn default() -> Self {
        Self {
            kind: PeriodKind::Yearly,
            first_year: 2015,
            last_year: 2020,
        }
    }
}

impl PeriodSpec {
    pub fn periods(&self) -> Vec<Period> {
        Period::range(self.kind, self.first_year, self.last_year)
    }
}

/// Training settings layered over the model preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub preset: Option<String>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub loss: Option<LossKind>,
    pub holdout_fraction: Option<f64>,
}

impl RunConfig {
    /// Reads and validates a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data_root, &mut cfg.output_root, &mut cfg.districts, &mut cfg.region, &mut cfg.model_config]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate().map_err(|e| match e {
            CliError::Usage(m) => CliError::usage(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        for (field, p) in [
            ("data_root", &self.data_root),
            ("districts", &self.districts),
            ("region", &self.region),
            ("model_config", &self.model_config),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::usage(format!("{field}: {} does not exist", p.display())));
                }
            }
        }
        if let Some(t) = self.threshold {
            check_threshold(t)?;
        }
        if let Some(d) = self.window_days {
            check_window_days(d)?;
        }
        if self.stride == Some(0) {
            return Err(CliError::usage("stride must be at least 1"));
        }
        if let Some(r) = self.train_ratio {
            check_unit("train_ratio", r)?;
        }
        if let Some(p) = &self.periods {
            if p.last_year < p.first_year {
                return Err(CliError::usage(format!("periods: last_year {} is before first_year {}", p.last_year, p.first_year)));
            }
        }
        if let Some(name) = &self.model.preset {
            if ModelConfig::preset_named(name).is_none() {
                return Err(CliError::usage(format!("model.preset: unknown preset {name:?} (full, reduced, tiny)")));
            }
        }
        if let Some(f) = self.model.holdout_fraction {
            check_unit("model.holdout_fraction", f)?;
        }
        Ok(())
    }
}

pub fn check_unit(field: &str, v: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(CliError::usage(format!("{field} must lie in [0, 1], got {v}")))
    }
}

pub fn check_threshold(t: f64) -> CliResult<()> {
    check_unit("threshold", t)
}

pub fn check_window_days(d: i64) -> CliResult<()> {
    if d >= 1 {
        Ok(())
    } else {
        Err(CliError::usage(format!("window_days must be at least 1, got {d}")))
    }
}

/// Reads a ModelConfig from TOML, or JSON when the extension says so.
pub fn load_model_config(path: &Path) -> CliResult<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    let cfg: ModelConfig = parsed.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("data")).unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "data_root = \"data\"\nthreshold = 0.4\nwindow_days = 60\n[periods]\nkind = \"monthly\"\nfirst_year = 2016\nlast_year = 2016\n[model]\npreset = \"tiny\"\nloss = \"cross-entropy\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.data_root.unwrap(), dir.path().join("data"));
        assert_eq!(cfg.threshold, Some(0.4));
        assert_eq!(cfg.periods.unwrap().periods().len(), 12);
        assert_eq!(cfg.model.loss, Some(LossKind::CrossEntropy));
    }

    #[test]
    fn rejects_out_of_range_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        for bad in ["threshold = 1.5", "window_days = 0", "districts = \"nope.geojson\"", "colour = 3", "[model]\npreset = \"huge\""] {
            fs::write(&path, bad).unwrap();
            assert!(matches!(RunConfig::load(&path), Err(CliError::Usage(_))), "{bad}");
        }
    }
}
