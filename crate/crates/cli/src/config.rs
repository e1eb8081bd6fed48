//! JSON run configuration. Every section is optional and falls back to the
//! defaults of the synthetic-phantom experiment; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use petbd::phantom::{Disk, PhantomSpec};
use petbd::solver::{BdConfig, RhoConfig};

use crate::error::CliError;

/// Published reference values of the synthetic-phantom experiment:
/// `(bsnr_db, rsnr_h_db, isnr_x_db)`.
pub const REFERENCE_TABLE: [(f64, f64, f64); 4] = [
    (40.0, 19.47, 11.38),
    (30.0, 16.34, 10.18),
    (20.0, 12.60, 7.82),
    (10.0, 6.20, 4.71),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskConfig {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
    #[serde(default = "one")]
    pub intensity: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub n: usize,
    pub disks: Vec<DiskConfig>,
    pub background: f64,
    pub omega_disk_count: usize,
    /// Standard deviation of the Gaussian PSF in pixels.
    pub psf_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let spec = PhantomSpec::default();
        Self {
            n: spec.n,
            disks: spec
                .disks
                .iter()
                .map(|d| DiskConfig {
                    row: d.row,
                    col: d.col,
                    radius: d.radius,
                    intensity: d.intensity,
                })
                .collect(),
            background: spec.background,
            omega_disk_count: spec.omega_disk_count,
            psf_sigma: 1.3,
        }
    }
}

impl PhantomConfig {
    pub fn spec(&self) -> PhantomSpec {
        PhantomSpec {
            n: self.n,
            disks: self
                .disks
                .iter()
                .map(|d| Disk::new(d.row, d.col, d.radius, d.intensity))
                .collect(),
            background: self.background,
            omega_disk_count: self.omega_disk_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RhoSection {
    pub gamma: f64,
    pub epsilon_c: f64,
    pub sigma: Option<f64>,
    pub initial: Option<f64>,
    pub min_factor: f64,
    pub max_factor: f64,
    pub floor: f64,
    pub frozen: bool,
}

impl Default for RhoSection {
    fn default() -> Self {
        let d = RhoConfig::default();
        Self {
            gamma: d.gamma,
            epsilon_c: d.epsilon_c,
            sigma: d.sigma,
            initial: d.initial,
            min_factor: d.min_factor,
            max_factor: d.max_factor,
            floor: d.floor,
            frozen: d.frozen,
        }
    }
}

impl RhoSection {
    pub fn to_core(&self) -> RhoConfig {
        RhoConfig {
            gamma: self.gamma,
            epsilon_c: self.epsilon_c,
            sigma: self.sigma,
            initial: self.initial,
            min_factor: self.min_factor,
            max_factor: self.max_factor,
            floor: self.floor,
            frozen: self.frozen,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_outer: usize,
    pub inner_x_iters: usize,
    pub inner_h_iters: usize,
    pub lambda_x: f64,
    pub lambda_h: f64,
    pub objective_tol: f64,
    pub inner_tol: f64,
    pub psf_support: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = BdConfig::default();
        Self {
            max_outer: d.max_outer,
            inner_x_iters: d.inner_x_iters,
            inner_h_iters: d.inner_h_iters,
            lambda_x: d.lambda_x,
            lambda_h: d.lambda_h,
            objective_tol: d.objective_tol,
            inner_tol: d.inner_tol,
            psf_support: d.psf_support,
        }
    }
}

/// Budget of the non-blind pass: `max_outer` weight updates, each after
/// `inner_iters` primal-dual steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NbdConfig {
    pub max_outer: usize,
    pub inner_iters: usize,
}

impl Default for NbdConfig {
    fn default() -> Self {
        Self {
            max_outer: 20,
            inner_iters: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `null` stands for a noiseless observation (infinite BSNR).
    #[serde(deserialize_with = "bsnr_list")]
    pub bsnr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Run the non-blind pass on a second, independent noise realization
    /// instead of the observation used for PSF estimation.
    pub independent_nbd_observation: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bsnr_db: REFERENCE_TABLE.iter().map(|r| r.0).collect(),
            trials: 10,
            seed: 2017,
            independent_nbd_observation: false,
        }
    }
}

/// Reads one BSNR value, mapping `null` to infinity.
pub(crate) fn bsnr_value<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

fn bsnr_list<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|b| b.unwrap_or(f64::INFINITY))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub phantom: PhantomConfig,
    pub solver: SolverConfig,
    pub rho: RhoSection,
    pub nbd: NbdConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |e: petbd::Error| CliError::Config(e.to_string());
        self.phantom.spec().validate().map_err(cfg_err)?;
        if !(self.phantom.psf_sigma >= 0.0 && self.phantom.psf_sigma.is_finite()) {
            return Err(CliError::Config("phantom.psf_sigma must be >= 0".into()));
        }
        self.bd_config().validate().map_err(cfg_err)?;
        self.nbd_config().validate().map_err(cfg_err)?;
        if self.experiment.trials == 0 {
            return Err(CliError::Config("experiment.trials must be >= 1".into()));
        }
        if self.experiment.bsnr_db.iter().any(|b| b.is_nan()) {
            return Err(CliError::Config("experiment.bsnr_db contains NaN".into()));
        }
        Ok(())
    }

    pub fn bd_config(&self) -> BdConfig {
        let s = &self.solver;
        BdConfig {
            max_outer: s.max_outer,
            inner_x_iters: s.inner_x_iters,
            inner_h_iters: s.inner_h_iters,
            lambda_x: s.lambda_x,
            lambda_h: s.lambda_h,
            rho: self.rho.to_core(),
            objective_tol: s.objective_tol,
            inner_tol: s.inner_tol,
            psf_support: s.psf_support,
        }
    }

    pub fn nbd_config(&self) -> BdConfig {
        BdConfig {
            max_outer: self.nbd.max_outer,
            inner_x_iters: self.nbd.inner_iters,
            ..self.bd_config()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.phantom.n, 64);
        assert_eq!(cfg.phantom.psf_sigma, 1.3);
        assert_eq!(cfg.experiment.trials, 10);
        assert_eq!(cfg.experiment.bsnr_db, vec![40.0, 30.0, 20.0, 10.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"solvr": {}}"#,
            r#"{"solver": {"max_outr": 3}}"#,
            r#"{"phantom": {"disks": [{"row": 10, "col": 10, "radius": 2, "colour": 1}]}}"#,
        ] {
            assert!(
                matches!(RunConfig::from_json(doc), Err(CliError::Config(_))),
                "{doc}"
            );
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for doc in [
            r#"{"solver": {"lambda_x": 0}}"#,
            r#"{"solver": {"max_outer": 0}}"#,
            r#"{"solver": {"psf_support": 4}}"#,
            r#"{"rho": {"gamma": 1.0}}"#,
            r#"{"experiment": {"trials": 0}}"#,
            r#"{"phantom": {"n": 16}}"#,
        ] {
            assert!(RunConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg =
            RunConfig::from_json(r#"{"solver": {"max_outer": 7}, "experiment": {"seed": 9}}"#)
                .unwrap();
        assert_eq!(cfg.solver.max_outer, 7);
        assert_eq!(
            cfg.solver.inner_x_iters,
            SolverConfig::default().inner_x_iters
        );
        assert_eq!(cfg.experiment.seed, 9);
        assert_eq!(cfg.experiment.trials, 10);
    }

    #[test]
    fn null_bsnr_means_noiseless() {
        let cfg = RunConfig::from_json(r#"{"experiment": {"bsnr_db": [null, 20]}}"#).unwrap();
        assert_eq!(cfg.experiment.bsnr_db, vec![f64::INFINITY, 20.0]);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
    }
}
