//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for numerical
//! failures (non-convergence, breakdown, failed identity checks).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::bench::{run_scaling_study, write_calibration_csv, write_scaling_csv, BenchRecord};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::krylov::write_residual_csv;
use crate::mesh::Mesh;
use crate::oracle::run_all_checks;
use crate::precond::InnerKind;
use crate::simulate::Simulation;
use crate::system::BidomainSystem;
use crate::vtk;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bidomain", version, about = "Preconditioned bidomain solver")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for random test vectors (overrides `bench.seed`).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Inner solver: exact, ic0 or jacobi (overrides `solver.inner`).
    #[arg(long, global = true, value_name = "NAME")]
    pub inner: Option<InnerKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured mesh and write it as VTK.
    Mesh {
        /// Also write the assembled matrices in MatrixMarket format.
        #[arg(long)]
        matrices: bool,
    },
    /// Assemble the system and solve the first time step once.
    Solve {
        /// Read the mesh from a VTK file written by `mesh`.
        #[arg(long, value_name = "PATH")]
        mesh_file: Option<PathBuf>,
    },
    /// Run a simulation, writing activation times and snapshots.
    Simulate {
        /// Read the mesh from a VTK file written by `mesh`.
        #[arg(long, value_name = "PATH")]
        mesh_file: Option<PathBuf>,
        /// Also write the assembled matrices in MatrixMarket format.
        #[arg(long)]
        matrices: bool,
    },
    /// Run the mesh-refinement scaling study.
    Bench,
    /// Check the structural identities of the system on small instances.
    Verify,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Diagnostics go to standard error.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(inner) = cli.common.inner {
        config.solver.inner = inner;
    }
    if let Some(seed) = cli.common.seed {
        config.bench.seed = seed;
    }
    let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Mesh { matrices } => cmd_mesh(&config, &out, *matrices),
        Command::Solve { mesh_file } => cmd_solve(&config, mesh_file.as_deref()),
        Command::Simulate { mesh_file, matrices } => cmd_simulate(&config, &out, mesh_file.as_deref(), *matrices),
        Command::Bench => cmd_bench(&config, &out),
        Command::Verify => cmd_verify(&config),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::InvalidArgument(format!("cannot create {}: {e}", dir.display())))
}

fn load_mesh(config: &Config, mesh_file: Option<&Path>) -> Result<Mesh> {
    match mesh_file {
        Some(path) => {
            let f = File::open(path)
                .map_err(|e| Error::InvalidArgument(format!("cannot open {}: {e}", path.display())))?;
            vtk::read_mesh(BufReader::new(f))
        }
        None => config.mesh.build(),
    }
}

/// File names of the exported matrices.
pub const MATRIX_FILES: [&str; 5] = ["s1.mtx", "si.mtx", "se.mtx", "mass.mtx", "mass_heart.mtx"];

fn write_matrices(sys: &BidomainSystem, dir: &Path) -> Result<()> {
    let mats = [&sys.s1, &sys.si, &sys.se, &sys.mass, &sys.mass_heart];
    for (name, m) in MATRIX_FILES.iter().zip(mats) {
        let mut w = create(&dir.join(name))?;
        m.write_matrix_market(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_mesh(config: &Config, out: &Path, matrices: bool) -> Result<()> {
    let mesh = config.mesh.build()?;
    create_dir(out)?;
    let path = out.join("mesh.vtk");
    let mut w = create(&path)?;
    vtk::write_mesh(&mut w, &mesh)?;
    w.flush()?;
    if matrices {
        let sim = Simulation::new(mesh.clone(), config.simulation_config_for_dim(mesh.dim())?)?;
        write_matrices(sim.system(), out)?;
    }
    println!(
        "wrote {} ({} vertices, {} on the heart, {} elements)",
        path.display(),
        mesh.n_vertices(),
        mesh.n_heart(),
        mesh.n_elements()
    );
    Ok(())
}

fn cmd_solve(config: &Config, mesh_file: Option<&Path>) -> Result<()> {
    let mesh = load_mesh(config, mesh_file)?;
    let cfg = config.simulation_config_for_dim(mesh.dim())?;
    let mut sim = Simulation::new(mesh, cfg)?;
    let report = sim.advance()?;
    let s = &report.stats;
    let summary = json!({
        "n": sim.system().n(),
        "n_heart": sim.system().n_heart(),
        "inner": sim.config().inner.as_str(),
        "iterations": s.iterations,
        "final_residual": s.final_residual(),
        "mv_count": s.mv_count,
        "wall_time_ms": s.wall_time_ms,
    });
    println!("{summary:#}");
    Ok(())
}

fn cmd_simulate(config: &Config, out: &Path, mesh_file: Option<&Path>, matrices: bool) -> Result<()> {
    let mesh = load_mesh(config, mesh_file)?;
    let cfg = config.simulation_config_for_dim(mesh.dim())?;
    create_dir(out)?;
    let sim = Simulation::new(mesh.clone(), cfg)?;
    if matrices {
        write_matrices(sim.system(), out)?;
    }
    let output = sim.run()?;

    let heart = &mesh.vertices()[..mesh.n_heart()];
    let mut w = create(&out.join("activation.csv"))?;
    output.activation.write_csv(&mut w, heart)?;
    w.flush()?;
    for snap in &output.snapshots {
        let mut w = create(&out.join(format!("snapshot_{:05}.vtk", snap.step)))?;
        vtk::write_snapshot(&mut w, &mesh, snap.time_ms, &snap.v, &snap.u)?;
        w.flush()?;
    }
    if !output.stats.worst_window_history.is_empty() {
        let mut w = create(&out.join("residuals.csv"))?;
        write_residual_csv(&mut w, &output.stats.worst_window_history)?;
        w.flush()?;
    }
    let st = &output.stats;
    let summary = json!({
        "steps": st.steps,
        "activated": output.activation.activated_count(),
        "heart_vertices": output.activation.len(),
        "window_steps": st.window_steps,
        "iter_avg": st.iter_avg(),
        "cpu_avg_s": st.cpu_avg_s(),
        "total_iterations": st.total_iterations,
        "setup_s": st.setup_s,
        "wall_s": st.wall_s,
    });
    let mut w = create(&out.join("summary.json"))?;
    writeln!(w, "{summary:#}")?;
    w.flush()?;
    println!("{summary:#}");
    Ok(())
}

fn write_bench_outputs(out: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = create(&out.join("scaling.csv"))?;
    write_scaling_csv(&mut w, records)?;
    w.flush()?;
    let mut w = create(&out.join("calibration.csv"))?;
    write_calibration_csv(&mut w, records)?;
    w.flush()?;
    for r in records {
        let mut w = create(&out.join(format!("residuals_{}.csv", r.n)))?;
        write_residual_csv(&mut w, &r.residual_history)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_bench(config: &Config, out: &Path) -> Result<()> {
    let cfg = config.bench_config()?;
    create_dir(out)?;
    match run_scaling_study(&cfg) {
        Ok(study) => {
            write_bench_outputs(out, &study.records)?;
            for r in &study.records {
                println!(
                    "n={} dof={} iter_avg={:.3} cpu_avg_s={:.4e} r_iter={} r_cpu={}",
                    r.n,
                    r.dof,
                    r.iter_avg,
                    r.cpu_avg_s,
                    r.r_iter.map_or("-".into(), |x| format!("{x:.3}")),
                    r.r_cpu.map_or("-".into(), |x| format!("{x:.3}")),
                );
            }
            println!("slope(dof*iter) = {:.3}, slope(cpu) = {:.3}", study.slope_iter, study.slope_cpu);
            Ok(())
        }
        Err(failure) => {
            write_bench_outputs(out, &failure.records)?;
            eprintln!("{failure}");
            Err(failure.error)
        }
    }
}

fn cmd_verify(config: &Config) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.bench.seed);
    let checks = run_all_checks(&mut rng)?;
    let mut failed = 0;
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} (value {:.3e}, tolerance {:.1e})", c.name, c.value, c.tolerance);
        failed += usize::from(!c.passed);
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(Error::Oracle(format!("{failed} identity checks failed")));
    }
    Ok(())
}
