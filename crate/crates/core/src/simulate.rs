//! Time integration and activation-time extraction.
//!
//! Each step at `t_n` does:
//!
//! 1. build the right-hand side from `V^n`, `I_ion(V^n, W^n)` and `I_st(t_n)`;
//! 2. solve `Λ (U^{n+1}, V^{n+1}) = Y` with PCG and normalize `U^{n+1}`;
//! 3. advance the gate with `V^n`.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conductivity::{Conductivity, ConductivityParams, FiberField};
use crate::error::{Error, Result};
use crate::ionic::{gate_update, i_ion, IonicParams, StimulusProtocol};
use crate::krylov::{pcg_solve, SolveStats, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::mesh::{Mesh, MeshSpec};
use crate::precond::{BlockLuPreconditioner, InnerKind};
use crate::system::{gamma, BidomainSystem, BlockVector};

/// Potential (mV) whose first upward crossing defines the activation time.
pub const ACTIVATION_THRESHOLD: f64 = -20.0;
/// Range of `v` (mV) that counts as "inside the wavefront".
pub const FRONT_RANGE: (f64, f64) = (-80.0, 40.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub mesh: MeshSpec,
    pub physics: ConductivityParams,
    pub ionic: IonicParams,
    pub stimulus: StimulusProtocol,
    pub dt_ms: f64,
    pub t_end_ms: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub inner: InnerKind,
    /// Keep a snapshot every this many steps; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl SimulationConfig {
    /// Defaults for a generated mesh: physics, stimulus and time step
    /// (`0.05 ms` in 2D, `0.1 ms` in 3D) follow the dimension.
    pub fn for_mesh(mesh: MeshSpec) -> Self {
        let (physics, dt_ms) = if mesh.dim == 2 {
            (ConductivityParams::default_2d(), 0.05)
        } else {
            (ConductivityParams::default_3d(), 0.1)
        };
        SimulationConfig {
            mesh,
            physics,
            ionic: IonicParams::default(),
            stimulus: StimulusProtocol::default_for_dim(mesh.dim),
            dt_ms,
            t_end_ms: 10.0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            inner: InnerKind::Exact,
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_ms > 0.0 && self.dt_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt_ms)));
        }
        if !(self.t_end_ms >= 0.0 && self.t_end_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_end must be non-negative, got {}", self.t_end_ms)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tol)));
        }
        self.physics.validate()?;
        self.ionic.validate()?;
        self.stimulus.validate()
    }

    /// Number of steps: `t_end / dt` rounded up, ignoring round-off.
    pub fn n_steps(&self) -> usize {
        let ratio = self.t_end_ms / self.dt_ms;
        (ratio - 1e-9 * ratio.max(1.0)).ceil().max(0.0) as usize
    }
}

/// Unknowns carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    /// Transmembrane potential on the heart, mV.
    pub v: Vec<f64>,
    /// Gate on the heart.
    pub w: Vec<f64>,
    /// Extracellular potential on `Ω`, mV.
    pub u: Vec<f64>,
}

impl State {
    /// Fully rested: `v = v_rest`, `w = 1`, `u = 0`.
    pub fn resting(n: usize, n_heart: usize, ionic: &IonicParams) -> Self {
        State { v: vec![ionic.v_rest; n_heart], w: vec![1.0; n_heart], u: vec![0.0; n] }
    }
}

/// Everything a time step needs besides the state.
pub struct StepContext<'a> {
    pub system: &'a BidomainSystem,
    pub precond: &'a BlockLuPreconditioner,
    /// Heart vertex coordinates.
    pub points: &'a [[f64; 3]],
    pub ionic: &'a IonicParams,
    pub stimulus: &'a StimulusProtocol,
    pub chi: f64,
    pub c_m: f64,
    pub dt_ms: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Advances `state` from `t_ms` to `t_ms + dt`.
pub fn time_step(state: &State, t_ms: f64, ctx: &StepContext) -> Result<(State, SolveStats)> {
    let nh = ctx.system.n_heart();
    let ion: Vec<f64> = (0..nh).map(|k| i_ion(state.v[k], state.w[k], ctx.c_m, ctx.ionic)).collect();
    let stim: Vec<f64> = ctx.points.iter().map(|&x| ctx.stimulus.current(x, t_ms)).collect();
    let rhs = ctx.system.build_rhs(&state.v, &ion, &stim, ctx.chi)?;
    let (x, stats) = pcg_solve(ctx.system, ctx.precond, &rhs, ctx.tol, ctx.max_iter)?;
    let w = (0..nh).map(|k| gate_update(state.w[k], state.v[k], ctx.dt_ms, ctx.ionic)).collect();
    let BlockVector { u, v } = x;
    Ok((State { v, w, u }, stats))
}

/// Per-vertex activation times in ms; `None` where `v` never reached the
/// threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub phi: Vec<Option<f64>>,
}

impl ActivationMap {
    pub fn not_activated(n: usize) -> Self {
        ActivationMap { phi: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn activated_count(&self) -> usize {
        self.phi.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.phi.iter().all(Option::is_some)
    }

    /// Rows `vertex_id,x,y,z,phi_ms`; `phi_ms` is empty when not activated.
    pub fn write_csv<W: Write>(&self, mut w: W, points: &[[f64; 3]]) -> Result<()> {
        writeln!(w, "vertex_id,x,y,z,phi_ms")?;
        for (k, (p, x)) in self.phi.iter().zip(points).enumerate() {
            match p {
                Some(t) => writeln!(w, "{k},{},{},{},{t}", x[0], x[1], x[2])?,
                None => writeln!(w, "{k},{},{},{},", x[0], x[1], x[2])?,
            }
        }
        Ok(())
    }
}

/// Running first-crossing detection with linear interpolation in time.
#[derive(Clone, Debug)]
pub struct ActivationTracker {
    threshold: f64,
    prev_t: f64,
    prev_v: Vec<f64>,
    map: ActivationMap,
    remaining: usize,
}

impl ActivationTracker {
    pub fn new(t0: f64, v0: &[f64], threshold: f64) -> Self {
        let phi: Vec<Option<f64>> = v0.iter().map(|&v| (v >= threshold).then_some(t0)).collect();
        let remaining = phi.iter().filter(|p| p.is_none()).count();
        ActivationTracker { threshold, prev_t: t0, prev_v: v0.to_vec(), map: ActivationMap { phi }, remaining }
    }

    pub fn update(&mut self, t: f64, v: &[f64]) {
        let thr = self.threshold;
        for (k, (&vn, phi)) in v.iter().zip(self.map.phi.iter_mut()).enumerate() {
            if phi.is_none() && vn >= thr {
                let vp = self.prev_v[k];
                let frac = ((thr - vp) / (vn - vp)).clamp(0.0, 1.0);
                *phi = Some(self.prev_t + frac * (t - self.prev_t));
                self.remaining -= 1;
            }
        }
        self.prev_t = t;
        self.prev_v.copy_from_slice(v);
    }

    pub fn all_activated(&self) -> bool {
        self.remaining == 0
    }

    pub fn map(&self) -> &ActivationMap {
        &self.map
    }

    pub fn into_map(self) -> ActivationMap {
        self.map
    }
}

/// Activation times from a stored history `v(times[j])`.
pub fn activation_times(times: &[f64], history: &[Vec<f64>], threshold: f64) -> ActivationMap {
    let Some(first) = history.first() else {
        return ActivationMap::not_activated(0);
    };
    let mut tracker = ActivationTracker::new(times[0], first, threshold);
    for (t, v) in times.iter().zip(history).skip(1) {
        tracker.update(*t, v);
    }
    tracker.into_map()
}

/// Fields at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time_ms: f64,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
}

/// Outcome of one step as reported to observers.
#[derive(Clone, Debug)]
pub struct StepReport {
    /// 1-based index of the step just taken.
    pub step: usize,
    /// Time at the end of the step.
    pub time_ms: f64,
    pub stats: SolveStats,
    /// Whether the step started inside the depolarization window.
    pub in_window: bool,
}

/// Aggregate statistics of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub total_iterations: usize,
    pub total_mv_count: usize,
    pub window_steps: usize,
    pub window_iterations: usize,
    pub window_cpu_s: f64,
    /// Residual history of the window solve that needed most iterations.
    pub worst_window_history: Vec<f64>,
    pub setup_s: f64,
    pub wall_s: f64,
}

impl RunStats {
    /// Mean PCG iterations per solve inside the depolarization window.
    pub fn iter_avg(&self) -> Option<f64> {
        (self.window_steps > 0).then(|| self.window_iterations as f64 / self.window_steps as f64)
    }

    /// Mean wall-clock seconds per solve inside the depolarization window.
    pub fn cpu_avg_s(&self) -> Option<f64> {
        (self.window_steps > 0).then(|| self.window_cpu_s / self.window_steps as f64)
    }

    fn record(&mut self, report: &StepReport) {
        self.steps += 1;
        self.total_iterations += report.stats.iterations;
        self.total_mv_count += report.stats.mv_count;
        if report.in_window {
            self.window_steps += 1;
            self.window_iterations += report.stats.iterations;
            self.window_cpu_s += report.stats.wall_time_ms * 1e-3;
            if report.stats.residual_history.len() > self.worst_window_history.len() {
                self.worst_window_history = report.stats.residual_history.clone();
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub activation: ActivationMap,
    pub stats: RunStats,
    pub snapshots: Vec<Snapshot>,
    pub final_state: State,
}

/// A simulation in progress on a fixed mesh.
pub struct Simulation {
    mesh: Mesh,
    config: SimulationConfig,
    system: BidomainSystem,
    precond: BlockLuPreconditioner,
    state: State,
    step: usize,
    tracker: ActivationTracker,
    setup_s: f64,
}

impl Simulation {
    /// Assembles the system and builds the preconditioner. `config.mesh` is
    /// ignored in favour of `mesh`.
    pub fn new(mesh: Mesh, config: SimulationConfig) -> Result<Self> {
        config.validate()?;
        let start = Instant::now();
        let model = Conductivity::new(config.physics.clone(), FiberField::default_for_dim(mesh.dim()));
        let g = gamma(config.physics.chi, config.physics.c_m, config.dt_ms)?;
        let system = BidomainSystem::assemble(&mesh, &model, g)?;
        let precond = BlockLuPreconditioner::assemble(&mesh, &model, &system, config.inner)?;
        let state = State::resting(mesh.n_vertices(), mesh.n_heart(), &config.ionic);
        let tracker = ActivationTracker::new(0.0, &state.v, ACTIVATION_THRESHOLD);
        Ok(Simulation {
            mesh,
            config,
            system,
            precond,
            state,
            step: 0,
            tracker,
            setup_s: start.elapsed().as_secs_f64(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn system(&self) -> &BidomainSystem {
        &self.system
    }

    pub fn preconditioner(&self) -> &BlockLuPreconditioner {
        &self.precond
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time_ms(&self) -> f64 {
        self.step as f64 * self.config.dt_ms
    }

    pub fn activation(&self) -> &ActivationMap {
        self.tracker.map()
    }

    /// Whether the current state lies in the depolarization window: some
    /// vertex is inside the front range and not every vertex has activated.
    pub fn in_depolarization_window(&self) -> bool {
        let (lo, hi) = FRONT_RANGE;
        !self.tracker.all_activated() && self.state.v.iter().any(|v| (lo..=hi).contains(v))
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { step: self.step, time_ms: self.time_ms(), v: self.state.v.clone(), u: self.state.u.clone() }
    }

    /// Takes one time step.
    pub fn advance(&mut self) -> Result<StepReport> {
        let t = self.time_ms();
        let in_window = self.in_depolarization_window();
        let ctx = StepContext {
            system: &self.system,
            precond: &self.precond,
            points: &self.mesh.vertices()[..self.mesh.n_heart()],
            ionic: &self.config.ionic,
            stimulus: &self.config.stimulus,
            chi: self.config.physics.chi,
            c_m: self.config.physics.c_m,
            dt_ms: self.config.dt_ms,
            tol: self.config.tol,
            max_iter: self.config.max_iter,
        };
        let (state, stats) = time_step(&self.state, t, &ctx)
            .map_err(|e| Error::TimeStep { step: self.step + 1, time_ms: t, source: Box::new(e) })?;
        self.state = state;
        self.step += 1;
        let time_ms = self.time_ms();
        self.tracker.update(time_ms, &self.state.v);
        Ok(StepReport { step: self.step, time_ms, stats, in_window })
    }

    /// Runs to `t_end`, calling `observer` after every step.
    pub fn run_with(mut self, mut observer: impl FnMut(&Simulation, &StepReport)) -> Result<SimulationOutput> {
        let start = Instant::now();
        let n_steps = self.config.n_steps();
        let every = self.config.snapshot_every;
        let mut stats = RunStats { setup_s: self.setup_s, ..RunStats::default() };
        let mut snapshots = Vec::new();
        if every > 0 {
            snapshots.push(self.snapshot());
        }
        for _ in 0..n_steps {
            let report = self.advance()?;
            stats.record(&report);
            if every > 0 && self.step.is_multiple_of(every) {
                snapshots.push(self.snapshot());
            }
            observer(&self, &report);
        }
        stats.wall_s = start.elapsed().as_secs_f64();
        log::info!(
            "{} steps, {} in the depolarization window, {:.2} PCG iterations on average there",
            stats.steps,
            stats.window_steps,
            stats.iter_avg().unwrap_or(0.0)
        );
        Ok(SimulationOutput { activation: self.tracker.into_map(), stats, snapshots, final_state: self.state })
    }

    pub fn run(self) -> Result<SimulationOutput> {
        self.run_with(|_, _| {})
    }
}

/// Builds the configured mesh and runs to `t_end`.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationOutput> {
    let mesh = config.mesh.build()?;
    Simulation::new(mesh, config.clone())?.run()
}
