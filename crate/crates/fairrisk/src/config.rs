//! Versioned run configuration.
//!
//! One JSON file holds every tunable of every subcommand. Missing fields take
//! their defaults, unknown fields are rejected, and the hash of the resolved
//! configuration (after command-line overrides) is embedded in the names of
//! all output files.

use std::path::{Path, PathBuf};

use fairrisk_core::distortion::WeightFunction;
use fairrisk_core::fairness::Variant;
use fairrisk_core::pipeline::{AuditConfig, GeneratorTruth, Grid, SimulateConfig};
use fairrisk_core::sensitivity::{GaussianLinear, McOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Seed used when neither the config file nor `--seed` sets one.
pub const DEFAULT_SEED: u64 = 20_240_701;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Seeds every random stream of every subcommand.
    pub seed: u64,
    pub out: PathBuf,
    pub simulate: SimulateSection,
    pub generate: GenerateSection,
    pub audit: AuditSection,
    pub sensitivity: SensitivitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: DEFAULT_SEED,
            out: PathBuf::from("out"),
            simulate: SimulateSection::default(),
            generate: GenerateSection::default(),
            audit: AuditSection::default(),
            sensitivity: SensitivitySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub model: GaussianLinear,
    pub grid: Grid,
    pub es_level: f64,
    pub draws: usize,
    pub batches: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = SimulateConfig::default();
        Self { model: d.model, grid: d.grid, es_level: d.es_level, draws: d.mc.draws, batches: d.mc.batches }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub n: usize,
    pub truth: GeneratorTruth,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { n: 100_000, truth: GeneratorTruth::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    /// Policy CSV; without it the audit runs on a freshly generated portfolio.
    pub input: Option<PathBuf>,
    pub settings: AuditConfig,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self { input: None, settings: AuditConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    pub model: GaussianLinear,
    pub x: Vec<f64>,
    /// `ev` or `es:<level>`.
    pub rho: Vec<String>,
    pub variant: Variant,
    /// Step of the finite-difference oracle.
    pub delta: f64,
    pub draws: usize,
    pub batches: usize,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            model: GaussianLinear::default(),
            x: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            rho: vec!["ev".into(), "es:0.95".into()],
            variant: Variant::Marginal,
            delta: 1e-3,
            draws: 100_000,
            batches: McOptions::default().batches,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub rho: Option<String>,
    pub variant: Option<Variant>,
    pub input: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a JSON config; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.into(), source })?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out.clone_from(out);
        }
        if let Some(rho) = &o.rho {
            WeightFunction::parse(rho)?;
            if let Some(level) = es_level(rho) {
                self.simulate.es_level = level;
                self.audit.settings.es_level = level;
            }
            self.sensitivity.rho = vec![rho.clone()];
        }
        if let Some(v) = o.variant {
            self.sensitivity.variant = v;
        }
        if let Some(input) = &o.input {
            self.audit.input = Some(input.clone());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.simulate_config().model.validate()?;
        self.simulate.grid.points()?;
        WeightFunction::expected_shortfall(self.simulate.es_level)?;
        for (name, draws, batches) in [
            ("simulate", self.simulate.draws, self.simulate.batches),
            ("sensitivity", self.sensitivity.draws, self.sensitivity.batches),
        ] {
            if batches < 2 || draws < McOptions::default().min_draws {
                return Err(CliError::Config(format!(
                    "{name}: draws must be at least {} with at least 2 batches",
                    McOptions::default().min_draws
                )));
            }
        }
        if self.generate.n == 0 {
            return Err(CliError::Config("generate.n must be at least 1".into()));
        }
        self.generate.truth.validate()?;
        self.audit.settings.validate()?;
        for r in &self.sensitivity.rho {
            WeightFunction::parse(r)?;
        }
        if self.sensitivity.x.is_empty() {
            return Err(CliError::Config("sensitivity.x must not be empty".into()));
        }
        if !(self.sensitivity.delta > 0.0 && self.sensitivity.delta <= 0.1) {
            return Err(CliError::Config("sensitivity.delta must lie in (0, 0.1]".into()));
        }
        if let Some(input) = &self.audit.input {
            if !input.is_file() {
                return Err(CliError::Config(format!("audit input {} does not exist", input.display())));
            }
        }
        Ok(())
    }

    #[must_use]
    pub fn simulate_config(&self) -> SimulateConfig {
        let s = &self.simulate;
        SimulateConfig {
            model: s.model,
            grid: s.grid,
            es_level: s.es_level,
            mc: McOptions { draws: s.draws, batches: s.batches, seed: self.seed, ..McOptions::default() },
        }
    }

    #[must_use]
    pub fn audit_config(&self) -> AuditConfig {
        AuditConfig { split_seed: self.seed, ..self.audit.settings.clone() }
    }

    #[must_use]
    pub fn sensitivity_mc(&self) -> McOptions {
        McOptions {
            draws: self.sensitivity.draws,
            batches: self.sensitivity.batches,
            seed: self.seed,
            ..McOptions::default()
        }
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    #[must_use]
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        let digest = Sha256::digest(&json);
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn es_level(rho: &str) -> Option<f64> {
    let s = rho.trim().to_ascii_lowercase();
    s.strip_prefix("es:").or_else(|| s.strip_prefix("es")).and_then(|l| l.parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hash().len(), 12);
    }

    #[test]
    fn hash_follows_overrides() {
        let mut cfg = RunConfig::default();
        let h = cfg.hash();
        cfg.apply(&Overrides { seed: Some(1), ..Overrides::default() }).unwrap();
        assert_ne!(cfg.hash(), h);
    }

    #[test]
    fn rho_override_sets_levels() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides { rho: Some("es:0.8".into()), ..Overrides::default() }).unwrap();
        assert_eq!(cfg.simulate.es_level, 0.8);
        assert_eq!(cfg.audit.settings.es_level, 0.8);
        assert!(cfg.apply(&Overrides { rho: Some("es:1.5".into()), ..Overrides::default() }).is_err());
    }

    #[test]
    fn partial_file_takes_defaults_and_rejects_unknown_fields() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 3, "simulate": {"draws": 5000}}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.simulate.draws, 5000);
        assert_eq!(cfg.simulate.es_level, 0.95);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 3}"#).is_err());
    }
}
