//! Preconditioned conjugate gradients for `Λ X = Y`.
//!
//! `Λ` is only semi-definite, with kernel `(𝟙, 0)`. The right-hand side must
//! lie in the range (`Y_u ⊥ 𝟙`); iterates are kept there by projecting the
//! `u` part of every preconditioned residual onto `𝟙^⊥`. The returned
//! solution is normalized so that `∫_Ω u = 0`.

use std::io::Write;
use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::precond::{BlockLuPreconditioner, OpCounts};
use crate::system::{BidomainSystem, BlockVector};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `‖Λ X_k − Y‖ / ‖Y‖` for `k = 0..=iterations`.
    pub residual_history: Vec<f64>,
    /// `(r_k, P⁻¹ r_k)` for every preconditioned residual that was formed.
    pub energy_history: Vec<f64>,
    pub wall_time_ms: f64,
    /// Products with `Λ`, the initial residual included.
    pub mv_count: usize,
    pub p1_count: usize,
    pub pk_count: usize,
    pub si_count: usize,
}

impl SolveStats {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    fn add_ops(&mut self, ops: OpCounts) {
        self.p1_count += ops.p1;
        self.pk_count += ops.pk;
        self.si_count += ops.si;
    }
}

/// Solves `Λ X = Y` to relative Euclidean residual `tol`, starting from zero.
pub fn pcg_solve(
    sys: &BidomainSystem,
    precond: &BlockLuPreconditioner,
    y: &BlockVector,
    tol: f64,
    max_iter: usize,
) -> Result<(BlockVector, SolveStats)> {
    pcg_observed(sys, precond, y, tol, max_iter, &mut |_| {})
}

/// [`pcg_solve`], calling `on_iterate` with every (unnormalized) iterate.
pub(crate) fn pcg_observed(
    sys: &BidomainSystem,
    precond: &BlockLuPreconditioner,
    y: &BlockVector,
    tol: f64,
    max_iter: usize,
    on_iterate: &mut dyn FnMut(&BlockVector),
) -> Result<(BlockVector, SolveStats)> {
    let start = Instant::now();
    let (n, nh) = (sys.n(), sys.n_heart());
    check_len("u block", y.u.len(), n)?;
    check_len("v block", y.v.len(), nh)?;
    check_len("preconditioner u block", precond.n(), n)?;
    check_len("preconditioner v block", precond.n_heart(), nh)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let ynorm = y.norm();
    if !ynorm.is_finite() {
        return Err(Error::InvalidArgument("right-hand side is not finite".into()));
    }
    let ysum: f64 = y.u.iter().sum();
    if ysum.abs() > 1e-10 * ynorm * (n as f64).sqrt() {
        return Err(Error::InvalidArgument(format!(
            "right-hand side is not in the range of the system (sum of u block {ysum:e})"
        )));
    }

    let mut stats = SolveStats::default();
    let mut x = BlockVector::zeros(n, nh);
    let mut q = BlockVector::zeros(n, nh);
    // r_0 = Y − Λ X_0
    sys.apply_lambda_into(&x, &mut q);
    stats.mv_count += 1;
    let mut r = y.clone();
    r.axpy(-1.0, &q);
    if ynorm == 0.0 {
        stats.residual_history.push(0.0);
        stats.wall_time_ms = elapsed_ms(start);
        return Ok((x, stats));
    }
    stats.residual_history.push(r.norm() / ynorm);

    let mut z = BlockVector::zeros(n, nh);
    let mut ops = OpCounts::default();
    precond.apply_inverse_into(&r, &mut z, &mut ops);
    z.project_u_mean_free();
    let mut rz = r.dot(&z);
    stats.energy_history.push(rz);
    let mut p = z.clone();

    let breakdown = |mut stats: SolveStats, ops: OpCounts| {
        stats.add_ops(ops);
        stats.wall_time_ms = elapsed_ms(start);
        Err(Error::NumericalBreakdown { stats: Box::new(stats) })
    };
    if !(rz > 0.0) || !rz.is_finite() {
        return breakdown(stats, ops);
    }

    loop {
        if stats.iterations == max_iter {
            stats.add_ops(ops);
            stats.wall_time_ms = elapsed_ms(start);
            return Err(Error::NonConvergence { stats: Box::new(stats) });
        }
        sys.apply_lambda_into(&p, &mut q);
        stats.mv_count += 1;
        stats.iterations += 1;
        let pq = p.dot(&q);
        if !(pq > 0.0) || !pq.is_finite() {
            return breakdown(stats, ops);
        }
        let alpha = rz / pq;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &q);
        on_iterate(&x);
        let rel = r.norm() / ynorm;
        stats.residual_history.push(rel);
        if !rel.is_finite() {
            return breakdown(stats, ops);
        }
        if rel <= tol {
            break;
        }
        precond.apply_inverse_into(&r, &mut z, &mut ops);
        z.project_u_mean_free();
        let rz_new = r.dot(&z);
        stats.energy_history.push(rz_new);
        if !rz_new.is_finite() || rz_new < 0.0 {
            return breakdown(stats, ops);
        }
        p.xpby(&z, rz_new / rz);
        rz = rz_new;
    }

    stats.add_ops(ops);
    let x = sys.normalize_u(&x);
    stats.wall_time_ms = elapsed_ms(start);
    Ok((x, stats))
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Writes `iter,rel_residual` rows.
pub fn write_residual_csv<W: Write>(mut w: W, history: &[f64]) -> Result<()> {
    writeln!(w, "iter,rel_residual")?;
    for (k, r) in history.iter().enumerate() {
        writeln!(w, "{k},{r:e}")?;
    }
    Ok(())
}
