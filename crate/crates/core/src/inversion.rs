//! Reconstruction of `p0` from boundary traces: time reversal, the normal
//! operator `M*M` and conjugate gradients in the `H⁰` or two-grid `H¹` setting.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adjoint;
use crate::error::{Error, Result};
use crate::forward::{self, MeasurementTrace, SolverConfig};
use crate::grid::{self, Field};
use crate::medium::MediumFields;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    H0,
    H1,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "h0" => Some(Mode::H0),
            "h1" => Some(Mode::H1),
            _ => None,
        }
    }

    pub fn inner(self, a: &Field, b: &Field) -> Result<f64> {
        match self {
            Mode::H0 => grid::inner_h0(a, b),
            Mode::H1 => grid::inner_h1(a, b),
        }
    }

    pub fn norm(self, f: &Field) -> f64 {
        match self {
            Mode::H0 => grid::norm_h0(f),
            Mode::H1 => grid::norm_h1(f),
        }
    }
}

/// How `r_{k+1}` is formed. `Recompute` evaluates `ζ - Nφ_{k+1}`, which costs
/// a second application of `N` per iteration; `Update` uses `r_k - α_k N s_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Residual {
    Recompute,
    Update,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgOptions {
    pub mode: Mode,
    /// Stop once `‖r_k‖ ≤ tol ‖ζ‖`.
    pub tol: f64,
    pub k_max: usize,
    /// Ratio between the fine grid and the grid of the `H¹` lift (a power of 2).
    pub coarse_factor: usize,
    pub residual: Residual,
    /// Keep every iterate in the report.
    pub record_history: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            mode: Mode::H0,
            tol: 1e-6,
            k_max: 50,
            coarse_factor: 2,
            residual: Residual::Recompute,
            record_history: true,
        }
    }
}

impl CgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param("cg.tol", "must be positive"));
        }
        if self.k_max == 0 {
            return Err(Error::param("cg.k_max", "must be at least 1"));
        }
        if !self.coarse_factor.is_power_of_two() {
            return Err(Error::param("cg.coarse_factor", "must be a power of two"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReconReport {
    pub estimate: Field,
    /// `‖r_k‖` in the active norm, starting with `‖r_0‖`.
    pub residual_norms: Vec<f64>,
    /// Relative errors in percent per iterate (iterate 0 first), when the
    /// ground truth is known.
    pub errors_h0: Vec<f64>,
    pub errors_h1: Vec<f64>,
    pub iterates: Vec<Field>,
    pub iterations: usize,
    pub converged: bool,
    /// False if some `‖r_{k+1}‖ > ‖r_k‖`.
    pub monotone: bool,
    pub timings: Vec<(String, Duration)>,
}

/// `Mp0`: the boundary trace of the forward solution started from `p0`.
pub fn apply_m(p0: &Field, m: &MediumFields, cfg: &SolverConfig) -> Result<MeasurementTrace> {
    forward::measure(p0, m, cfg)
}

/// Back-projection of a trace: `Sη` in `H⁰`, lifted by [`riesz_lift_h1`] in `H¹`.
///
/// The exact `L²` adjoint of `M` also carries `c⁻²` and a boundary measure
/// `γψ(0)δ_Γ` (see [`adjoint::duality_pairings`]); the measure scales like
/// `1/h` on Γ and stalls CG, so the normal operator uses `S` alone.
pub fn apply_m_star(
    tr: &MeasurementTrace,
    m: &MediumFields,
    cfg: &SolverConfig,
    mode: Mode,
    coarse_factor: usize,
) -> Result<Field> {
    let f = adjoint::adjoint_solve(tr, m, cfg)?;
    match mode {
        Mode::H0 => Ok(f),
        Mode::H1 => riesz_lift_h1(&f, coarse_factor),
    }
}

/// Solves `<∇u, ∇v> = <f, v>` for `u, v ∈ H¹₀` on a grid `coarse_factor`
/// times coarser and interpolates back; a smoothing representative of `f`.
pub fn riesz_lift_h1(f: &Field, coarse_factor: usize) -> Result<Field> {
    if coarse_factor == 0 || !coarse_factor.is_power_of_two() {
        return Err(Error::param("coarse_factor", "must be a power of two"));
    }
    let mut levels = vec![*f.grid()];
    let mut rhs = f.clone();
    let mut k = coarse_factor;
    while k > 1 {
        rhs = grid::restrict(&rhs)?;
        levels.push(*rhs.grid());
        k /= 2;
    }
    let mut u = grid::poisson_dirichlet(&rhs, grid::ELLIPTIC_TOL)?;
    for g in levels.iter().rev().skip(1) {
        u = grid::prolong(&u, g)?;
    }
    Ok(u)
}

/// Purely acoustic back-propagation: the wave equation with `ε = 0` is run
/// backward from rest, with the recorded trace imposed as Dirichlet data on Γ
/// and the homogeneous Neumann condition elsewhere. Returns the field at `t = 0`.
pub fn time_reversal(tr: &MeasurementTrace, m: &MediumFields, cfg: &SolverConfig) -> Result<Field> {
    tr.check_compatible(m, cfg)?;
    let g = *m.grid();
    let n = cfg.n_steps;
    let c2dt2: Vec<f64> = m.c.values().iter().map(|c| c * c * cfg.dt * cfg.dt).collect();
    let nodes = m.obs.nodes();
    let impose = |f: &mut [f64], level: usize| {
        for (&k, &v) in nodes.iter().zip(tr.level(level)) {
            f[k] = v;
        }
    };
    let mut next = vec![0.0; g.len()];
    let mut curr = vec![0.0; g.len()];
    impose(&mut next, n);
    impose(&mut curr, n);
    let mut lap = vec![0.0; g.len()];
    let mut prev = vec![0.0; g.len()];
    for level in (0..n).rev() {
        grid::laplacian_neumann_into(cfg.exec, &g, &curr, &mut lap);
        for k in 0..g.len() {
            prev[k] = 2.0 * curr[k] - next[k] + c2dt2[k] * lap[k];
        }
        impose(&mut prev, level);
        if let Some(k) = prev.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                step: n - level,
                reason: format!("non-finite time-reversal field at node {k}"),
            });
        }
        std::mem::swap(&mut next, &mut curr);
        std::mem::swap(&mut curr, &mut prev);
    }
    Field::new(g, curr)
}

/// Conjugate gradients for `Nφ = ζ` with the inner product of `opt.mode`.
pub fn cg_solve<F>(mut apply_n: F, zeta: &Field, phi0: &Field, opt: &CgOptions) -> Result<ReconReport>
where
    F: FnMut(&Field) -> Result<Field>,
{
    opt.validate()?;
    zeta.ensure_same_grid(phi0)?;
    let mode = opt.mode;
    let target = opt.tol * mode.norm(zeta);

    let mut phi = phi0.clone();
    let mut r = zeta.sub(&apply_n(&phi)?);
    let mut rr = mode.inner(&r, &r)?;
    let mut report = ReconReport {
        estimate: Field::zeros(*zeta.grid()),
        residual_norms: vec![rr.sqrt()],
        errors_h0: Vec::new(),
        errors_h1: Vec::new(),
        iterates: Vec::new(),
        iterations: 0,
        converged: false,
        monotone: true,
        timings: Vec::new(),
    };
    if opt.record_history {
        report.iterates.push(phi.clone());
    }
    let mut s = r.clone();
    let mut converged = rr.sqrt() <= target;
    let mut k = 0;
    while !converged && k < opt.k_max {
        let ns = apply_n(&s)?;
        let sns = mode.inner(&s, &ns)?;
        if !(sns > 0.0) {
            return Err(Error::Indefinite {
                iteration: k,
                value: sns,
            });
        }
        let alpha = rr / sns;
        phi.axpy(alpha, &s);
        match opt.residual {
            Residual::Recompute => r = zeta.sub(&apply_n(&phi)?),
            Residual::Update => r.axpy(-alpha, &ns),
        }
        let rr_new = mode.inner(&r, &r)?;
        k += 1;
        let (prev, curr) = (rr.sqrt(), rr_new.sqrt());
        if curr > 10.0 * prev {
            return Err(Error::Diverged {
                iteration: k,
                previous: prev,
                current: curr,
            });
        }
        report.monotone &= curr <= prev;
        report.residual_norms.push(curr);
        if opt.record_history {
            report.iterates.push(phi.clone());
        }
        converged = curr <= target;
        let beta = rr_new / rr;
        rr = rr_new;
        s = r.add(&s.scaled(beta));
    }
    report.estimate = phi;
    report.iterations = k;
    report.converged = converged;
    Ok(report)
}

/// The full pipeline: `ζ = M*tr`, time-reversal initial guess, CG on `M*M`.
/// With `truth`, the report carries per-iteration errors in both norms.
pub fn reconstruct(
    tr: &MeasurementTrace,
    m: &MediumFields,
    cfg: &SolverConfig,
    opt: &CgOptions,
    truth: Option<&Field>,
) -> Result<ReconReport> {
    opt.validate()?;
    tr.check_compatible(m, cfg)?;
    let (mode, cf) = (opt.mode, opt.coarse_factor);
    let mut timings = Vec::new();

    let clock = Instant::now();
    let phi0 = time_reversal(tr, m, cfg)?;
    timings.push(("time reversal".to_string(), clock.elapsed()));

    let clock = Instant::now();
    let zeta = apply_m_star(tr, m, cfg, mode, cf)?;
    timings.push(("adjoint data".to_string(), clock.elapsed()));

    let clock = Instant::now();
    let mut opt = opt.clone();
    opt.record_history |= truth.is_some();
    let mut report = cg_solve(
        |f| apply_m_star(&apply_m(f, m, cfg)?, m, cfg, mode, cf),
        &zeta,
        &phi0,
        &opt,
    )?;
    timings.push(("conjugate gradients".to_string(), clock.elapsed()));

    if let Some(truth) = truth {
        for it in &report.iterates {
            report.errors_h0.push(relative_error(it, truth, Mode::H0)?);
            report.errors_h1.push(relative_error(it, truth, Mode::H1)?);
        }
    }
    report.timings = timings;
    Ok(report)
}

/// `100 ‖est - truth‖ / ‖truth‖` in the given norm.
pub fn relative_error(est: &Field, truth: &Field, mode: Mode) -> Result<f64> {
    est.ensure_same_grid(truth)?;
    let den = mode.norm(truth);
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(100.0 * mode.norm(&est.sub(truth)) / den)
}

/// Adds white Gaussian noise with standard deviation `level` times the RMS of
/// the trace.
pub fn add_noise(tr: &MeasurementTrace, level: f64, seed: u64) -> Result<MeasurementTrace> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::param("noise", "must be a non-negative number"));
    }
    let v = tr.values();
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    let mut out = tr.clone();
    if level == 0.0 || rms == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, level * rms).map_err(|e| Error::param("noise", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in out.values_mut() {
        *x += normal.sample(&mut rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::medium::{self, Basis};

    fn grid(n: usize) -> Grid2D {
        Grid2D::unit_square(n).unwrap()
    }

    #[test]
    fn cg_identity_one_step() {
        let g = grid(9);
        let zeta = medium::bandlimited(&g, 3, Basis::Cosine, 1);
        for mode in [Mode::H0, Mode::H1] {
            let opt = CgOptions { mode, ..Default::default() };
            let rep = cg_solve(|f| Ok(f.clone()), &zeta, &Field::zeros(g), &opt).unwrap();
            assert_eq!(rep.iterations, 1);
            assert!(rep.converged);
            assert!(rep.estimate.sub(&zeta).max_abs() < 1e-14);
        }
    }

    #[test]
    fn cg_diagonal_matches_pointwise_division() {
        let g = grid(17);
        let d = Field::from_fn(g, |x, _| 1.0 + x);
        let zeta = medium::bandlimited(&g, 5, Basis::Cosine, 2);
        let exact: Vec<f64> = zeta.values().iter().zip(d.values()).map(|(z, d)| z / d).collect();
        for residual in [Residual::Recompute, Residual::Update] {
            let opt = CgOptions { tol: 1e-10, residual, ..Default::default() };
            let apply = |f: &Field| Ok(Field::new(g, f.values().iter().zip(d.values()).map(|(a, b)| a * b).collect())?);
            let rep = cg_solve(apply, &zeta, &Field::zeros(g), &opt).unwrap();
            assert!(rep.converged && rep.iterations <= 50, "{}", rep.iterations);
            let err = rep.estimate.values().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "{err}");
            assert!(rep.monotone);
        }
    }

    #[test]
    fn cg_rejects_indefinite() {
        let g = grid(5);
        let zeta = Field::constant(g, 1.0);
        let err = cg_solve(|f| Ok(f.scaled(-1.0)), &zeta, &Field::zeros(g), &CgOptions::default());
        assert!(matches!(err, Err(Error::Indefinite { iteration: 0, .. })));
    }

    #[test]
    fn lift_filters_checkerboard() {
        let g = grid(65);
        let check = Field::from_fn(g, |x, y| {
            let (i, j) = ((x * 64.0).round() as i64, (y * 64.0).round() as i64);
            if (i + j) % 2 == 0 { 1.0 } else { -1.0 }
        });
        let smooth = Field::from_fn(g, |x, y| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin());
        let smooth = smooth.scaled(grid::norm_h0(&check) / grid::norm_h0(&smooth));
        let a = grid::norm_h1(&riesz_lift_h1(&check, 2).unwrap());
        let b = grid::norm_h1(&riesz_lift_h1(&smooth, 2).unwrap());
        assert!(a / b <= 0.1, "{}", a / b);
        assert_eq!(riesz_lift_h1(&Field::zeros(g), 2).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn lift_is_linear() {
        let g = grid(33);
        let f = medium::bandlimited(&g, 4, Basis::Cosine, 3);
        let h = medium::bandlimited(&g, 4, Basis::Sine, 4);
        let lhs = riesz_lift_h1(&f.add(&h.scaled(2.0)), 2).unwrap();
        let rhs = riesz_lift_h1(&f, 2).unwrap().add(&riesz_lift_h1(&h, 2).unwrap().scaled(2.0));
        assert!(lhs.sub(&rhs).max_abs() <= 1e-8 * lhs.max_abs());
    }

    #[test]
    fn lift_without_coarsening_solves_poisson() {
        // -Δ of sin(πx)sin(πy) is 2π² times itself
        let g = grid(65);
        let pi = std::f64::consts::PI;
        let u = Field::from_fn(g, |x, y| (pi * x).sin() * (pi * y).sin());
        let lifted = riesz_lift_h1(&u.scaled(2.0 * pi * pi), 1).unwrap();
        assert!(lifted.sub(&u).max_abs() < 1e-3);
        assert!(riesz_lift_h1(&u, 3).is_err());
    }

    #[test]
    fn relative_error_basics() {
        let g = grid(17);
        let t = medium::bandlimited(&g, 3, Basis::Cosine, 5);
        for mode in [Mode::H0, Mode::H1] {
            assert_eq!(relative_error(&t, &t, mode).unwrap(), 0.0);
            assert!((relative_error(&Field::zeros(g), &t, mode).unwrap() - 100.0).abs() < 1e-12);
            assert!((relative_error(&t.scaled(1.1), &t, mode).unwrap() - 10.0).abs() < 1e-10);
        }
        assert!(matches!(relative_error(&t, &Field::zeros(g), Mode::H0), Err(Error::ZeroNorm)));
    }

    fn setup(n: usize) -> (MediumFields, SolverConfig) {
        let m = MediumFields::uniform(grid(n), 1.0, 0.01, 0.1).unwrap();
        let cfg = SolverConfig::for_medium(1.0, 0.5, &m).unwrap();
        (m, cfg)
    }

    #[test]
    fn zero_inputs() {
        let (m, cfg) = setup(17);
        let g = *m.grid();
        let zero = MeasurementTrace::for_config(&m.obs, &cfg);
        assert_eq!(apply_m(&Field::zeros(g), &m, &cfg).unwrap().max_abs(), 0.0);
        assert_eq!(time_reversal(&zero, &m, &cfg).unwrap().max_abs(), 0.0);
        for mode in [Mode::H0, Mode::H1] {
            assert_eq!(apply_m_star(&zero, &m, &cfg, mode, 2).unwrap().max_abs(), 0.0);
        }
    }

    #[test]
    fn time_reversal_recovers_smooth_bump_roughly() {
        let (m, _) = setup(33);
        let cfg = SolverConfig::for_medium(2.0, 0.5, &m).unwrap();
        let m = m.with_epsilon(0.0).unwrap();
        let p0 = medium::gaussian_blobs(m.grid(), &[(0.5, 0.5, 0.1, 1.0)]);
        let tr = apply_m(&p0, &m, &cfg).unwrap();
        let est = time_reversal(&tr, &m, &cfg).unwrap();
        let err = relative_error(&est, &p0, Mode::H0).unwrap();
        assert!(err < 50.0, "{err}");
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let (m, cfg) = setup(9);
        let tr = MeasurementTrace::from_fn(&m.obs, &cfg, |t, x, _| (t + x).sin());
        let a = add_noise(&tr, 0.01, 7).unwrap();
        let b = add_noise(&tr, 0.01, 7).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), add_noise(&tr, 0.01, 8).unwrap().values());
        let mut d = a.clone();
        d.axpy(-1.0, &tr).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        let ratio = rms(d.values()) / rms(tr.values());
        assert!((ratio - 0.01).abs() < 0.002, "{ratio}");
        assert_eq!(add_noise(&tr, 0.0, 1).unwrap().values(), tr.values());
        assert!(add_noise(&tr, -1.0, 1).is_err());
    }
}
