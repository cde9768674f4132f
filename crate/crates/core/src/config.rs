//! TOML experiment files.
//!
//! ```toml
//! objective = "garland"
//! clients = 10
//! horizon = 5000
//! variants = ["pfpne", "global-only"]
//! seeds = [0, 1, 2]
//!
//! [domain]          # optional
//! lower = [0.0]
//! upper = [1.0]
//! ```
//!
//! Every other key (`shift_std`, `noise`, `nu1`, `rho`, `c`, `c1`,
//! `delta_conf`, `delta_gap`, `arity`, `depth_cap`, `checkpoint_stride`) is
//! optional. A single `variant = "..."` may replace `variants`. Unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, Variant};
use crate::objectives::ObjectiveKind;
use crate::partition::BoxDomain;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub objective: Option<String>,
    pub clients: Option<usize>,
    pub horizon: Option<u64>,
    pub shift_std: Option<f64>,
    pub noise: Option<f64>,
    pub nu1: Option<f64>,
    pub rho: Option<f64>,
    pub c: Option<f64>,
    pub c1: Option<f64>,
    pub delta_conf: Option<f64>,
    pub delta_gap: Option<f64>,
    pub arity: Option<u32>,
    pub depth_cap: Option<u32>,
    pub variant: Option<String>,
    pub variants: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub checkpoint_stride: Option<u64>,
    pub domain: Option<DomainSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    /// Fills unset keys with defaults and validates.
    pub fn into_experiment(self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let variants = match (self.variant, self.variants) {
            (Some(_), Some(_)) => return Err(Error::config("give either `variant` or `variants`, not both")),
            (Some(v), None) => vec![v.parse()?],
            (None, Some(vs)) => vs.iter().map(|v| v.parse()).collect::<Result<Vec<Variant>>>()?,
            (None, None) => d.variants,
        };
        let objective: ObjectiveKind = match self.objective {
            Some(o) => o.parse()?,
            None => d.objective,
        };
        let domain = self.domain.map(|s| BoxDomain::new(s.lower, s.upper)).transpose()?;
        let cfg = ExperimentConfig {
            objective,
            domain,
            clients: self.clients.unwrap_or(d.clients),
            horizon: self.horizon.unwrap_or(d.horizon),
            shift_std: self.shift_std.or(d.shift_std),
            noise: self.noise.unwrap_or(d.noise),
            nu1: self.nu1.unwrap_or(d.nu1),
            rho: self.rho.unwrap_or(d.rho),
            c: self.c.unwrap_or(d.c),
            c1: self.c1.unwrap_or(d.c1),
            delta_conf: self.delta_conf.or(d.delta_conf),
            delta_gap: self.delta_gap.unwrap_or(d.delta_gap),
            arity: self.arity.unwrap_or(d.arity),
            depth_cap: self.depth_cap.unwrap_or(d.depth_cap),
            variants,
            seeds: self.seeds.unwrap_or(d.seeds),
            checkpoint_stride: self.checkpoint_stride.unwrap_or(d.checkpoint_stride),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key set explicitly, derived defaults resolved.
    pub fn canonical(cfg: &ExperimentConfig) -> Self {
        Self {
            objective: Some(cfg.objective.name().to_string()),
            clients: Some(cfg.clients),
            horizon: Some(cfg.horizon),
            shift_std: Some(cfg.resolved_shift_std()),
            noise: Some(cfg.noise),
            nu1: Some(cfg.nu1),
            rho: Some(cfg.rho),
            c: Some(cfg.c),
            c1: Some(cfg.c1),
            delta_conf: Some(cfg.resolved_delta_conf()),
            delta_gap: Some(cfg.delta_gap),
            arity: Some(cfg.arity),
            depth_cap: Some(cfg.depth_cap),
            variant: None,
            variants: Some(cfg.variants.iter().map(|v| v.name().to_string()).collect()),
            seeds: Some(cfg.seeds.clone()),
            checkpoint_stride: Some(cfg.checkpoint_stride),
            domain: cfg
                .domain
                .as_ref()
                .map(|d| DomainSection { lower: d.lower().to_vec(), upper: d.upper().to_vec() }),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    ConfigFile::load(path)?.into_experiment().map_err(|e| e.context(path.display()))
}

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig> {
    ConfigFile::parse(text)?.into_experiment()
}

/// The canonical TOML text of a configuration.
pub fn canonical_toml(cfg: &ExperimentConfig) -> Result<String> {
    ConfigFile::canonical(cfg).to_toml()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_experiment("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_experiment("objective = \"garland\"\nbudget = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("budget")), "{err}");
        assert!(parse_experiment("[domain]\nlower=[0.0]\nupper=[1.0]\nmid=[0.5]\n").is_err());
    }

    #[test]
    fn variant_and_variants_are_exclusive() {
        assert!(parse_experiment("variant = \"pfpne\"\nvariants = [\"pfpne\"]").is_err());
        let cfg = parse_experiment("variant = \"local-only\"").unwrap();
        assert_eq!(cfg.variants, vec![Variant::LocalOnly]);
        assert!(parse_experiment("variant = \"ucb\"").is_err());
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in ["rho = 1.5", "clients = 0", "objective = \"sphere\"", "arity = 1", "horizon = -3"] {
            assert!(matches!(parse_experiment(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn canonical_form_round_trips() {
        let text = r#"
objective = "himmelblau"
clients = 4
variants = ["pfpne", "local-only"]
seeds = [3, 9]
noise = 0.25
[domain]
lower = [-4.0, -4.0]
upper = [4.0, 4.5]
"#;
        let cfg = parse_experiment(text).unwrap();
        let canon = canonical_toml(&cfg).unwrap();
        let again = parse_experiment(&canon).unwrap();
        assert_eq!(canonical_toml(&again).unwrap(), canon);
        assert_eq!(again.shift_std, Some(0.05 * 8.5));
        assert_eq!(again.delta_conf, Some(0.25));
        assert_eq!(again.domain, cfg.domain);
        assert!(canon.starts_with("objective = \"himmelblau\"\n"));
    }

    #[test]
    fn domain_dimension_is_checked() {
        let err = parse_experiment("objective = \"garland\"\n[domain]\nlower=[0.0,0.0]\nupper=[1.0,1.0]\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
