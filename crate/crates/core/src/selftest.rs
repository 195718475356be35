//! Quick numerical self-checks on small grids, run by the `selftest` command.

use std::f64::consts::PI;

use crate::adjoint;
use crate::error::Result;
use crate::forward::{self, MeasurementTrace, SolverConfig};
use crate::grid::{self, Field, Grid2D};
use crate::inversion::{self, CgOptions};
use crate::medium::{self, Basis, MediumFields};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs every suite at `n` nodes per side (33 by default).
pub fn run_all(n: usize) -> Result<Vec<Check>> {
    Ok(vec![duality(n)?, energy(n)?, eigenmode(n)?, cg_envelope(n)?])
}

/// Relative duality gap on smooth random data, bounded by 5%.
pub fn duality(n: usize) -> Result<Check> {
    let g = Grid2D::unit_square(n)?;
    let m = MediumFields::uniform(g, 1.0, 0.01, 0.1)?;
    let cfg = SolverConfig::for_medium(1.0, 0.5, &m)?;
    let p0 = medium::bandlimited(&g, 4, Basis::Sine, 1);
    let eta = MeasurementTrace::from_fn(&m.obs, &cfg, |t, x, y| (4.0 * t).sin() * (2.0 * x - y).cos());
    let gap = adjoint::duality_gap(&p0, &eta, &m, &cfg)?;
    Ok(Check {
        name: "duality gap",
        passed: gap <= 0.05,
        detail: format!("relative gap {gap:.3e} (limit 5e-2)"),
    })
}

/// Energy never increases by more than 1e-10 relative per step.
pub fn energy(n: usize) -> Result<Check> {
    let g = Grid2D::unit_square(n)?;
    let m = MediumFields::uniform(g, 1.0, 0.01, 0.1)?;
    let cfg = SolverConfig::for_medium(2.0, 0.5, &m)?;
    let out = forward::forward_solve(&medium::shepp_logan(&g, 1.0)?, &m, &cfg)?;
    let worst = out
        .diagnostics
        .windows(2)
        .map(|w| (w[1].energy - w[0].energy) / w[0].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Check {
        name: "energy monotonicity",
        passed: worst <= 1e-10,
        detail: format!("largest relative step increase {worst:.3e} (limit 1e-10)"),
    })
}

/// `L²` error at `t = 1` of the standing wave `cos(√2πt)cos(πx)cos(πy)` on
/// the grid and its refinement; the observed order must reach 1.8.
pub fn eigenmode(n: usize) -> Result<Check> {
    let coarse = eigenmode_error(n)?;
    let fine = eigenmode_error(2 * n - 1)?;
    let order = (coarse / fine).log2();
    Ok(Check {
        name: "eigenmode order",
        passed: order >= 1.8,
        detail: format!("errors {coarse:.3e} -> {fine:.3e}, order {order:.2} (limit 1.8)"),
    })
}

pub fn eigenmode_error(n: usize) -> Result<f64> {
    let g = Grid2D::unit_square(n)?;
    let m = MediumFields::uniform(g, 1.0, 0.01, 0.0)?;
    let m = m.with_gamma(vec![0.0; m.obs.len()])?;
    let cfg = SolverConfig::for_medium(1.0, 0.5, &m)?;
    let mode = Field::from_fn(g, |x, y| (PI * x).cos() * (PI * y).cos());
    let out = forward::run(forward::init_state(&mode, &m, &cfg)?, &m, &cfg, false)?;
    let exact = mode.scaled((2f64.sqrt() * PI * cfg.tau).cos());
    Ok(grid::norm_h0(&out.final_state.p_curr.sub(&exact)))
}

/// CG on a diagonal SPD probe stays inside `exp(-σk)` times the initial error.
pub fn cg_envelope(n: usize) -> Result<Check> {
    let g = Grid2D::unit_square(n)?;
    let d = Field::from_fn(g, |x, y| 1.0 + 3.0 * x * y);
    let (lo, hi) = (d.min(), d.max());
    let sigma = ((hi + lo) / (hi - lo)).ln();
    let exact = medium::bandlimited(&g, 5, Basis::Cosine, 3);
    let apply = |f: &Field| Field::new(g, f.values().iter().zip(d.values()).map(|(a, b)| a * b).collect());
    let zeta = apply(&exact)?;
    let opt = CgOptions {
        tol: 1e-12,
        ..Default::default()
    };
    let rep = inversion::cg_solve(apply, &zeta, &Field::zeros(g), &opt)?;
    // the bound holds in the energy norm <e, Ne>^½; the plain norm is reported
    let energy = |e: &Field| -> Result<f64> { Ok(grid::inner_h0(e, &apply(e)?)?.sqrt()) };
    let (e0, p0) = (energy(&exact)?, grid::norm_h0(&exact));
    let (mut worst, mut worst_plain) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (k, it) in rep.iterates.iter().enumerate() {
        let err = exact.sub(it);
        let env = (-sigma * k as f64).exp();
        worst = worst.max(energy(&err)? / (e0 * env));
        worst_plain = worst_plain.max(grid::norm_h0(&err) / (p0 * env));
    }
    Ok(Check {
        name: "cg envelope",
        passed: worst <= 1.0 && rep.converged,
        detail: format!(
            "{} iterations, worst error/envelope ratio {worst:.3} (energy norm), {worst_plain:.3} (plain norm)",
            rep.iterations
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_suites_pass() {
        for c in run_all(17).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
