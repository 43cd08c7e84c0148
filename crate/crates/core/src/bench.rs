//! Mesh-refinement cost study.
//!
//! A series of cubes is simulated over a fixed physical window with the time
//! step halved whenever the mesh size is halved. For each mesh the mean PCG
//! iteration count and wall time per solve inside the depolarization window
//! are recorded, and the growth of the cost with the number of unknowns is
//! summarized by logarithmic growth rates and a least-squares slope.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conductivity::ConductivityParams;
use crate::error::{Error, Result};
use crate::ionic::{IonicParams, StimulusProtocol};
use crate::krylov::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::mesh::MeshSpec;
use crate::precond::{BlockLuPreconditioner, InnerKind};
use crate::simulate::{Simulation, SimulationConfig};
use crate::system::{BidomainSystem, BlockVector};

/// `log(c₁/c₀) / log(d₁/d₀)`: the exponent `r` in `cost ∝ dofʳ` between two
/// consecutive meshes.
pub fn growth_rate(cost_prev: f64, cost_cur: f64, dof_prev: f64, dof_cur: f64) -> Result<f64> {
    for (name, v) in [("cost_prev", cost_prev), ("cost_cur", cost_cur), ("dof_prev", dof_prev), ("dof_cur", dof_cur)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    if !(dof_cur > dof_prev) {
        return Err(Error::InvalidArgument(format!("dof must increase, got {dof_prev} then {dof_cur}")));
    }
    Ok((cost_cur / cost_prev).ln() / (dof_cur / dof_prev).ln())
}

/// Least-squares slope of `log(cost)` against `log(dof)`.
pub fn loglog_slope(dof: &[f64], cost: &[f64]) -> Result<f64> {
    if dof.len() != cost.len() || dof.len() < 2 {
        return Err(Error::InvalidArgument("need at least two (dof, cost) pairs of equal length".into()));
    }
    if dof.iter().chain(cost).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("dof and cost must be positive".into()));
    }
    let x: Vec<f64> = dof.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = cost.iter().map(|c| c.ln()).collect();
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("dof values must not all be equal".into()));
    }
    Ok(sxy / sxx)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len();
    if m % 2 == 1 {
        xs[m / 2]
    } else {
        0.5 * (xs[m / 2 - 1] + xs[m / 2])
    }
}

/// Cost of one preconditioner application in units of `Λ` products: the
/// median wall time of `P_Λ⁻¹ Y` over the median wall time of `Λ X`, both
/// measured on `trials` random vectors.
pub fn calibrate_costs<R: Rng>(
    sys: &BidomainSystem,
    precond: &BlockLuPreconditioner,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials < 10 {
        return Err(Error::InvalidArgument(format!("calibration needs at least 10 trials, got {trials}")));
    }
    let (n, nh) = (sys.n(), sys.n_heart());
    let mut t_lambda = Vec::with_capacity(trials);
    let mut t_precond = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut x = BlockVector::new(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..nh).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        x.project_u_mean_free();
        let start = Instant::now();
        let y = sys.apply_lambda(&x)?;
        t_lambda.push(start.elapsed().as_secs_f64());
        let start = Instant::now();
        let z = precond.apply_inverse(&y)?;
        t_precond.push(start.elapsed().as_secs_f64());
        std::hint::black_box(z);
    }
    let base = median(t_lambda);
    if !(base > 0.0) {
        return Err(Error::NumericalDegeneracy("Λ product too fast to time".into()));
    }
    Ok(median(t_precond) / base)
}

/// Settings of a scaling study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Cells per side of each cube, coarsest first.
    pub series: Vec<usize>,
    /// Time step on the coarsest cube; scaled with the mesh size after that.
    pub dt_coarse_ms: f64,
    pub t_end_ms: f64,
    pub inner: InnerKind,
    pub tol: f64,
    pub max_iter: usize,
    /// Random vectors per calibration (0 skips calibration).
    pub calibration_trials: usize,
    /// Seed for the calibration vectors.
    pub seed: u64,
    /// Run series entries on separate threads. Timings then compete for
    /// cores and memory bandwidth.
    pub concurrent: bool,
    pub physics: ConductivityParams,
    pub ionic: IonicParams,
    pub stimulus: StimulusProtocol,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            series: vec![8, 16, 32],
            dt_coarse_ms: 0.2,
            t_end_ms: 10.0,
            inner: InnerKind::Exact,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            calibration_trials: 10,
            seed: 0,
            concurrent: false,
            physics: ConductivityParams::default_3d(),
            ionic: IonicParams::default(),
            stimulus: StimulusProtocol::default_3d(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.series.len() < 2 {
            return Err(Error::InvalidArgument("a scaling study needs at least two meshes".into()));
        }
        if self.series.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("series must be strictly increasing".into()));
        }
        if self.calibration_trials != 0 && self.calibration_trials < 10 {
            return Err(Error::InvalidArgument("calibration_trials must be 0 or at least 10".into()));
        }
        for cells in &self.series {
            self.entry_config(*cells).validate()?;
        }
        Ok(())
    }

    /// Time step for a cube with `cells` cells per side.
    pub fn dt_for(&self, cells: usize) -> f64 {
        self.dt_coarse_ms * self.series[0] as f64 / cells as f64
    }

    fn entry_config(&self, cells: usize) -> SimulationConfig {
        SimulationConfig {
            physics: self.physics.clone(),
            ionic: self.ionic.clone(),
            stimulus: self.stimulus.clone(),
            dt_ms: self.dt_for(cells),
            t_end_ms: self.t_end_ms,
            tol: self.tol,
            max_iter: self.max_iter,
            inner: self.inner,
            snapshot_every: 0,
            ..SimulationConfig::for_mesh(MeshSpec { dim: 3, cells, coupled: false })
        }
    }
}

/// One row of the study.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    /// 1-based position in the series.
    pub n: usize,
    pub cells: usize,
    pub dt_ms: f64,
    /// `N + N_H`.
    pub dof: usize,
    pub iter_avg: f64,
    pub cpu_avg_s: f64,
    /// Growth rate of `dof · iter_avg` from the previous row.
    pub r_iter: Option<f64>,
    /// Growth rate of `cpu_avg_s` from the previous row.
    pub r_cpu: Option<f64>,
    pub mv_equivalent: Option<f64>,
    pub window_steps: usize,
    pub setup_s: f64,
    /// Residual history of the hardest window solve.
    pub residual_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingStudy {
    pub records: Vec<BenchRecord>,
    /// Least-squares slope of `log(dof · iter_avg)` against `log(dof)`.
    pub slope_iter: f64,
    /// Least-squares slope of `log(cpu_avg_s)` against `log(dof)`.
    pub slope_cpu: f64,
}

impl ScalingStudy {
    /// `iter_avg` of the finest mesh over that of the coarsest.
    pub fn iteration_ratio(&self) -> f64 {
        let first = self.records.first().map_or(f64::NAN, |r| r.iter_avg);
        let last = self.records.last().map_or(f64::NAN, |r| r.iter_avg);
        last / first
    }
}

/// A study that stopped early; `records` holds the completed rows.
#[derive(Debug)]
pub struct StudyFailure {
    pub records: Vec<BenchRecord>,
    pub error: Error,
}

impl fmt::Display for StudyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scaling study stopped after {} meshes: {}", self.records.len(), self.error)
    }
}

impl std::error::Error for StudyFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn run_entry(cfg: &BenchConfig, index: usize) -> Result<BenchRecord> {
    let cells = cfg.series[index];
    let sim_cfg = cfg.entry_config(cells);
    let dt_ms = sim_cfg.dt_ms;
    let mesh = sim_cfg.mesh.build()?;
    let sim = Simulation::new(mesh, sim_cfg)?;
    let dof = sim.system().n() + sim.system().n_heart();
    let mv_equivalent = if cfg.calibration_trials > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
        Some(calibrate_costs(sim.system(), sim.preconditioner(), cfg.calibration_trials, &mut rng)?)
    } else {
        None
    };
    let out = sim.run()?;
    let (Some(iter_avg), Some(cpu_avg_s)) = (out.stats.iter_avg(), out.stats.cpu_avg_s()) else {
        return Err(Error::NumericalDegeneracy(format!(
            "no solve fell inside the depolarization window on the {cells}-cell cube"
        )));
    };
    log::info!("{cells}^3 cells: dof {dof}, {iter_avg:.3} iterations, {cpu_avg_s:.4} s per solve");
    Ok(BenchRecord {
        n: index + 1,
        cells,
        dt_ms,
        dof,
        iter_avg,
        cpu_avg_s,
        r_iter: None,
        r_cpu: None,
        mv_equivalent,
        window_steps: out.stats.window_steps,
        setup_s: out.stats.setup_s,
        residual_history: out.stats.worst_window_history,
    })
}

fn fill_rates(records: &mut [BenchRecord]) -> Result<()> {
    for k in 1..records.len() {
        let (a, b) = (&records[k - 1], &records[k]);
        let (da, db) = (a.dof as f64, b.dof as f64);
        let r_iter = growth_rate(da * a.iter_avg, db * b.iter_avg, da, db)?;
        let r_cpu = growth_rate(a.cpu_avg_s, b.cpu_avg_s, da, db)?;
        records[k].r_iter = Some(r_iter);
        records[k].r_cpu = Some(r_cpu);
    }
    Ok(())
}

/// Runs the whole series. Entries run one after another unless
/// `cfg.concurrent` is set.
pub fn run_scaling_study(cfg: &BenchConfig) -> std::result::Result<ScalingStudy, Box<StudyFailure>> {
    let fail = |records: Vec<BenchRecord>, error: Error| Box::new(StudyFailure { records, error });
    cfg.validate().map_err(|e| fail(Vec::new(), e))?;
    let results: Vec<Result<BenchRecord>> = if cfg.concurrent {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.series.len()).map(|i| s.spawn(move || run_entry(cfg, i))).collect();
            handles.into_iter().map(|h| h.join().expect("scaling study worker panicked")).collect()
        })
    } else {
        let mut out = Vec::new();
        for i in 0..cfg.series.len() {
            let r = run_entry(cfg, i);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    };
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => return Err(fail(records, e)),
        }
    }
    if let Err(e) = fill_rates(&mut records) {
        return Err(fail(records, e));
    }
    let dof: Vec<f64> = records.iter().map(|r| r.dof as f64).collect();
    let work: Vec<f64> = records.iter().map(|r| r.dof as f64 * r.iter_avg).collect();
    let cpu: Vec<f64> = records.iter().map(|r| r.cpu_avg_s).collect();
    let slopes = loglog_slope(&dof, &work).and_then(|a| Ok((a, loglog_slope(&dof, &cpu)?)));
    match slopes {
        Ok((slope_iter, slope_cpu)) => Ok(ScalingStudy { records, slope_iter, slope_cpu }),
        Err(e) => Err(fail(records, e)),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

/// `n,dof,iter_avg,cpu_avg_s,r_iter,r_cpu`; rates are empty on the first row.
pub fn write_scaling_csv<W: Write>(mut w: W, records: &[BenchRecord]) -> Result<()> {
    writeln!(w, "n,dof,iter_avg,cpu_avg_s,r_iter,r_cpu")?;
    for r in records {
        writeln!(w, "{},{},{},{},{},{}", r.n, r.dof, r.iter_avg, r.cpu_avg_s, opt(r.r_iter), opt(r.r_cpu))?;
    }
    Ok(())
}

/// `dof,mv_equiv` for every calibrated record.
pub fn write_calibration_csv<W: Write>(mut w: W, records: &[BenchRecord]) -> Result<()> {
    writeln!(w, "dof,mv_equiv")?;
    for r in records {
        if let Some(m) = r.mv_equivalent {
            writeln!(w, "{},{m}", r.dof)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductivity::{Conductivity, FiberField};
    use crate::mesh::build_cube_mesh;
    use crate::system::gamma;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn growth_rate_values() {
        assert_abs_diff_eq!(growth_rate(1.0, 2.0, 100.0, 200.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(growth_rate(1.0, 4.0, 100.0, 200.0).unwrap(), 2.0, epsilon = 1e-15);
        assert!(growth_rate(0.0, 1.0, 1.0, 2.0).is_err());
        assert!(growth_rate(1.0, 1.0, 2.0, 2.0).is_err());
        assert!(growth_rate(1.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let dof = [10.0, 100.0, 1000.0];
        let cost: Vec<f64> = dof.iter().map(|d: &f64| 3.0 * d.powf(1.2)).collect();
        assert_abs_diff_eq!(loglog_slope(&dof, &cost).unwrap(), 1.2, epsilon = 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn proportional_cost_has_unit_rate(c in 1e-3f64..1e3, d in 1.0f64..1e6, f in 1.01f64..100.0) {
            let r = growth_rate(c, c * f, d, d * f).unwrap();
            prop_assert!((r - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_is_positive() {
        let mesh = build_cube_mesh(4).unwrap();
        let model = Conductivity::new(ConductivityParams::default_3d(), FiberField::Rotating3d);
        let sys = BidomainSystem::assemble(&mesh, &model, gamma(500.0, 1.0, 0.1).unwrap()).unwrap();
        let p = BlockLuPreconditioner::assemble(&mesh, &model, &sys, InnerKind::Jacobi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ratio = calibrate_costs(&sys, &p, 10, &mut rng).unwrap();
        assert!(ratio > 0.0 && ratio.is_finite());
        assert!(calibrate_costs(&sys, &p, 9, &mut rng).is_err());
    }

    #[test]
    fn config_checks() {
        let mut c = BenchConfig { series: vec![4], ..BenchConfig::default() };
        assert!(c.validate().is_err());
        c.series = vec![4, 4];
        assert!(c.validate().is_err());
        c.series = vec![4, 8];
        assert!(c.validate().is_ok());
        assert_abs_diff_eq!(c.dt_for(8), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn two_entry_smoke() {
        let cfg = BenchConfig { series: vec![4, 8], t_end_ms: 2.0, concurrent: true, ..BenchConfig::default() };
        let study = run_scaling_study(&cfg).unwrap();
        assert_eq!(study.records.len(), 2);
        assert!(study.records[0].dof < study.records[1].dof);
        assert!(study.records[1].r_iter.unwrap().is_finite());
        assert!(study.records.iter().all(|r| r.iter_avg >= 1.0));
        let mut buf = Vec::new();
        write_scaling_csv(&mut buf, &study.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn solver_failure_is_reported() {
        let cfg = BenchConfig { series: vec![4, 8], t_end_ms: 1.0, max_iter: 1, tol: 1e-14, ..BenchConfig::default() };
        let failure = run_scaling_study(&cfg).unwrap_err();
        assert!(failure.records.is_empty());
        assert!(failure.error.is_numerical());
    }
}
