//! JSON run configuration.
//!
//! ```json
//! {
//!   "mesh":    { "dim": 3, "cells": 16 },
//!   "physics": { "chi": 500 },
//!   "solver":  { "tol": 1e-6, "inner": "exact" },
//!   "sim":     { "dt_ms": 0.1, "t_end_ms": 45, "snapshot_every": 50 },
//!   "bench":   { "series": [8, 16, 32], "seed": 1 }
//! }
//! ```
//!
//! Every section and field is optional. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::conductivity::ConductivityParams;
use crate::error::{Error, Result};
use crate::ionic::{IonicParams, StimulusProtocol, StimulusSite};
use crate::krylov::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::mesh::MeshSpec;
use crate::precond::InnerKind;
use crate::simulate::SimulationConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mesh: MeshSpec,
    pub physics: PhysicsOverrides,
    pub ionic: IonicParams,
    pub stimulus: StimulusOverrides,
    pub solver: SolverSection,
    pub sim: SimSection,
    pub bench: BenchSection,
}

/// Conductivities (mS/cm), surface-to-volume ratio (1/cm) and membrane
/// capacitance (μF/cm²); unset fields keep the defaults of the mesh
/// dimension.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsOverrides {
    pub g_i_l: Option<f64>,
    pub g_i_t: Option<f64>,
    pub g_e_l: Option<f64>,
    pub g_e_t: Option<f64>,
    pub k_lung: Option<f64>,
    pub k_cavity: Option<f64>,
    pub k_other: Option<f64>,
    pub chi: Option<f64>,
    pub c_m: Option<f64>,
}

impl PhysicsOverrides {
    pub fn apply(&self, mut p: ConductivityParams) -> ConductivityParams {
        let fields = [
            (&mut p.g_i_l, self.g_i_l),
            (&mut p.g_i_t, self.g_i_t),
            (&mut p.g_e_l, self.g_e_l),
            (&mut p.g_e_t, self.g_e_t),
            (&mut p.k_lung, self.k_lung),
            (&mut p.k_cavity, self.k_cavity),
            (&mut p.k_other, self.k_other),
            (&mut p.chi, self.chi),
            (&mut p.c_m, self.c_m),
        ];
        for (slot, value) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
        p
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimulusOverrides {
    pub sites: Option<Vec<StimulusSite>>,
    pub radius: Option<f64>,
    pub duration_ms: Option<f64>,
    pub amplitude: Option<f64>,
}

impl StimulusOverrides {
    pub fn apply(&self, mut s: StimulusProtocol) -> StimulusProtocol {
        if let Some(sites) = &self.sites {
            s.sites = sites.clone();
        }
        s.radius = self.radius.unwrap_or(s.radius);
        s.duration_ms = self.duration_ms.unwrap_or(s.duration_ms);
        s.amplitude = self.amplitude.unwrap_or(s.amplitude);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub inner: InnerKind,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, inner: InnerKind::Exact }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Defaults to 0.05 ms in 2D and 0.1 ms in 3D.
    pub dt_ms: Option<f64>,
    pub t_end_ms: f64,
    pub snapshot_every: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { dt_ms: None, t_end_ms: 10.0, snapshot_every: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub series: Vec<usize>,
    pub seed: u64,
    pub dt_coarse_ms: f64,
    pub t_end_ms: f64,
    pub calibration_trials: usize,
    pub concurrent: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        BenchSection {
            series: b.series,
            seed: b.seed,
            dt_coarse_ms: b.dt_coarse_ms,
            t_end_ms: b.t_end_ms,
            calibration_trials: b.calibration_trials,
            concurrent: b.concurrent,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn physics_for_dim(&self, dim: usize) -> ConductivityParams {
        let base = if dim == 2 { ConductivityParams::default_2d() } else { ConductivityParams::default_3d() };
        self.physics.apply(base)
    }

    /// Simulation settings for a mesh of dimension `dim` (normally
    /// `self.mesh.dim`, but a mesh read from file may differ).
    pub fn simulation_config_for_dim(&self, dim: usize) -> Result<SimulationConfig> {
        let mesh = MeshSpec { dim, ..self.mesh };
        let defaults = SimulationConfig::for_mesh(mesh);
        let cfg = SimulationConfig {
            physics: self.physics_for_dim(dim),
            ionic: self.ionic.clone(),
            stimulus: self.stimulus.apply(defaults.stimulus.clone()),
            dt_ms: self.sim.dt_ms.unwrap_or(defaults.dt_ms),
            t_end_ms: self.sim.t_end_ms,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            inner: self.solver.inner,
            snapshot_every: self.sim.snapshot_every,
            mesh,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn simulation_config(&self) -> Result<SimulationConfig> {
        self.simulation_config_for_dim(self.mesh.dim)
    }

    pub fn bench_config(&self) -> Result<BenchConfig> {
        let b = &self.bench;
        let cfg = BenchConfig {
            series: b.series.clone(),
            dt_coarse_ms: b.dt_coarse_ms,
            t_end_ms: b.t_end_ms,
            inner: self.solver.inner,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            calibration_trials: b.calibration_trials,
            seed: b.seed,
            concurrent: b.concurrent,
            physics: self.physics_for_dim(3),
            ionic: self.ionic.clone(),
            stimulus: self.stimulus.apply(StimulusProtocol::default_3d()),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = Config::from_json("{}").unwrap();
        assert_eq!(c, Config::default());
        let sim = c.simulation_config().unwrap();
        assert_eq!(sim.dt_ms, 0.1);
        assert_eq!(sim.inner, InnerKind::Exact);
        assert_eq!(c.bench_config().unwrap().series, vec![8, 16, 32]);
    }

    #[test]
    fn partial_overrides() {
        let c = Config::from_json(
            r#"{"mesh": {"dim": 2, "cells": 8, "coupled": true},
                "physics": {"g_i_l": 2.0},
                "stimulus": {"amplitude": 50},
                "solver": {"inner": "ic0"},
                "sim": {"t_end_ms": 0}}"#,
        )
        .unwrap();
        let sim = c.simulation_config().unwrap();
        assert_eq!(sim.physics.g_i_l, 2.0);
        assert_eq!(sim.physics.chi, 1500.0);
        assert_eq!(sim.stimulus.amplitude, 50.0);
        assert_eq!(sim.stimulus.sites.len(), 4);
        assert_eq!(sim.inner, InnerKind::Ic0);
        assert_eq!(sim.dt_ms, 0.05);
        assert_eq!(sim.n_steps(), 0);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = Config::from_json(r#"{"solver": {"tolerance": 1e-6}}"#).unwrap_err().to_string();
        assert!(err.contains("tolerance"), "{err}");
        let err = Config::from_json(r#"{"simulation": {}}"#).unwrap_err().to_string();
        assert!(err.contains("simulation"), "{err}");
        assert!(Config::from_json(r#"{"solver": {"inner": "lu"}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let c = Config::from_json(r#"{"sim": {"dt_ms": -1}}"#).unwrap();
        assert!(c.simulation_config().is_err());
        let c = Config::from_json(r#"{"physics": {"chi": 0}}"#).unwrap();
        assert!(c.simulation_config().is_err());
        let c = Config::from_json(r#"{"bench": {"series": [8]}}"#).unwrap();
        assert!(c.bench_config().is_err());
    }
}
