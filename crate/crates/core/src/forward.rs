//! Time stepping of the coupled pressure-temperature system.
//!
//! Pressure lives on integer time levels and is advanced by leapfrog.
//! Temperature lives on half levels: `theta` in a state holds the temperature
//! at `t - dt/2`, the same instant at which `(p_curr - p_prev)/dt` is centred.
//! Each step solves one symmetric elliptic problem for the level-`n` average
//! `θ̄ = (θ^{n+1/2} + θ^{n-1/2})/2`, which enters the wave update as the
//! coupling term and the heat update as its Crank–Nicolson midpoint. The
//! impedance condition is closed through ghost nodes with the centred velocity
//! `(p^{n+1} - p^{n-1})/(2dt)`.
//!
//! With this arrangement the discrete energy obeys
//! `E^{n+1/2} - E^{n-1/2} = -dt (Σ arc γ v² + <α Δθ̄, Δθ̄>)` exactly (up to the
//! inner solve tolerance), and both conserved functionals are conserved to
//! rounding.

use crate::error::{Error, Result};
use crate::grid::{self, BoundarySet, Field, Grid2D};
use crate::medium::MediumFields;
use crate::par::{self, Exec};

/// Default relative tolerance of the per-step heat solve.
pub const HEAT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub tau: f64,
    pub cfl: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Keep a pressure snapshot after every step.
    pub record_full: bool,
    pub heat_tol: f64,
    pub exec: Exec,
}

impl SolverConfig {
    /// `dt = cfl·h/(√2 c_max)` shrunk so that an integer number of steps ends at `tau`.
    pub fn new(tau: f64, cfl: f64, grid: &Grid2D, c_max: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::param("tau", format!("must be positive, got {tau}")));
        }
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::param("cfl", format!("must lie in (0, 1], got {cfl}")));
        }
        if !(c_max.is_finite() && c_max > 0.0) {
            return Err(Error::param("c", "maximum wave speed must be positive"));
        }
        let dt_max = cfl * grid.h / (std::f64::consts::SQRT_2 * c_max);
        let n_steps = (tau / dt_max).ceil().max(1.0) as usize;
        Ok(Self {
            tau,
            cfl,
            dt: tau / n_steps as f64,
            n_steps,
            record_full: false,
            heat_tol: HEAT_TOL,
            exec: Exec::default(),
        })
    }

    pub fn for_medium(tau: f64, cfl: f64, m: &MediumFields) -> Result<Self> {
        Self::new(tau, cfl, m.grid(), m.c_max())
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThermoacousticState {
    pub p_curr: Field,
    pub p_prev: Field,
    /// Temperature at `t - dt/2`.
    pub theta: Field,
    pub t: f64,
    pub step_index: usize,
}

impl ThermoacousticState {
    pub fn zeros(g: Grid2D) -> Self {
        Self {
            p_curr: Field::zeros(g),
            p_prev: Field::zeros(g),
            theta: Field::zeros(g),
            t: 0.0,
            step_index: 0,
        }
    }
}

/// Pressure (or control) samples on Γ at every time level `0..=n_steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementTrace {
    obs: BoundarySet,
    dt: f64,
    n_steps: usize,
    values: Vec<f64>,
}

/// Boundary control for the adjoint system; same layout as a measurement.
pub type BoundaryControl = MeasurementTrace;

impl MeasurementTrace {
    pub fn zeros(obs: BoundarySet, dt: f64, n_steps: usize) -> Self {
        let values = vec![0.0; (n_steps + 1) * obs.len()];
        Self {
            obs,
            dt,
            n_steps,
            values,
        }
    }

    pub fn new(obs: BoundarySet, dt: f64, n_steps: usize, values: Vec<f64>) -> Result<Self> {
        let expected = (n_steps + 1) * obs.len();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                context: "trace".into(),
            });
        }
        Ok(Self {
            obs,
            dt,
            n_steps,
            values,
        })
    }

    /// Zero trace on the time grid of `cfg`.
    pub fn for_config(obs: &BoundarySet, cfg: &SolverConfig) -> Self {
        Self::zeros(obs.clone(), cfg.dt, cfg.n_steps)
    }

    /// Samples `f(t, x, y)` at every Γ node and time level.
    pub fn from_fn(obs: &BoundarySet, cfg: &SolverConfig, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut tr = Self::for_config(obs, cfg);
        let coords: Vec<(f64, f64)> = obs.nodes().iter().map(|&k| obs.grid().coords(k)).collect();
        for n in 0..=cfg.n_steps {
            let t = n as f64 * cfg.dt;
            for (v, &(x, y)) in tr.level_mut(n).iter_mut().zip(&coords) {
                *v = f(t, x, y);
            }
        }
        tr
    }

    pub fn obs(&self) -> &BoundarySet {
        &self.obs
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.obs.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let w = self.obs.len();
        &self.values[n * w..(n + 1) * w]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let w = self.obs.len();
        &mut self.values[n * w..(n + 1) * w]
    }

    /// Errors unless `cfg` and the grid of `m` match this trace.
    pub fn check_compatible(&self, m: &MediumFields, cfg: &SolverConfig) -> Result<()> {
        if self.obs != m.obs {
            return Err(Error::GridMismatch(
                "trace was recorded on a different observation boundary".into(),
            ));
        }
        if self.n_steps != cfg.n_steps || (self.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
            return Err(Error::GridMismatch(format!(
                "trace time grid ({} steps of {}) differs from solver ({} steps of {})",
                self.n_steps, self.dt, cfg.n_steps, cfg.dt
            )));
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.obs != other.obs || self.n_steps != other.n_steps {
            return Err(Error::GridMismatch("traces have different shapes".into()));
        }
        Ok(())
    }

    /// Space-time `L²((0,τ)×Γ)` pairing: trapezoid in time, arc weights in space.
    pub fn pairing(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        let arc = self.obs.arc_weights();
        let mut total = 0.0;
        for n in 0..=self.n_steps {
            let w = if n == 0 || n == self.n_steps { 0.5 } else { 1.0 };
            let s: f64 = self
                .level(n)
                .iter()
                .zip(other.level(n))
                .zip(arc)
                .map(|((a, b), w)| w * a * b)
                .sum();
            total += w * s;
        }
        Ok(total * self.dt)
    }

    pub fn norm(&self) -> f64 {
        self.pairing(self).expect("same shape").max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
        Ok(())
    }
}

/// Per-step energy and conservation record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub step: usize,
    /// Time at which the energy is centred (`t - dt/2`).
    pub t: f64,
    pub energy: f64,
    pub dissipation_rate: f64,
    /// Dissipation over the step that produced this row, evaluated with the
    /// centred velocity and the midpoint temperature (NaN on row 0).
    pub step_rate: f64,
    pub q_acoustic: f64,
    pub q_thermal: f64,
    pub q_thermal_alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conserved {
    pub acoustic: f64,
    /// `∫(θ - εp)`, conserved for constant diffusivity.
    pub thermal: f64,
    /// `∫α⁻¹(θ - εp)`, conserved for any positive diffusivity.
    pub thermal_alpha: f64,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub trace: MeasurementTrace,
    pub final_state: ThermoacousticState,
    pub diagnostics: Vec<DiagnosticRow>,
    /// Pressure after every step when `record_full` is set.
    pub snapshots: Vec<Field>,
}

/// Precomputed coefficients and work buffers for repeated steps.
pub(crate) struct Stepper<'a> {
    m: &'a MediumFields,
    cfg: &'a SolverConfig,
    g: Grid2D,
    c2dt2: Vec<f64>,
    /// `dt c² γ (2·dirs/h) / 2` per Γ node.
    gfac: Vec<f64>,
    /// `dt c² (2·dirs/h)` per Γ node, multiplies the boundary forcing.
    force: Vec<f64>,
    inv_kappa: Vec<f64>,
    /// `2/κ`, the mass term of the heat operator.
    a2: Vec<f64>,
    inv_diag: Vec<f64>,
    /// Coupling factor `ε dt² c² / (1 + G)` per node.
    couple: Vec<f64>,
    bounds: (f64, f64),
    iterations: usize,
    lap: Vec<f64>,
    pstar: Vec<f64>,
    rhs: Vec<f64>,
    tbar: Vec<f64>,
    tbar_prev: Option<Vec<f64>>,
    work: [Vec<f64>; 3],
    /// When set, `last_rate` receives `-(Σ arc γ v² + <αΔθ̄, Δθ̄>) + Σ arc η v`
    /// for the step just taken, which equals the energy change over `dt`.
    pub(crate) track_rate: bool,
    pub(crate) last_rate: f64,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(m: &'a MediumFields, cfg: &'a SolverConfig) -> Self {
        let g = *m.grid();
        let dt = cfg.dt;
        let eps = m.epsilon;
        let c = m.c.values();
        let c2dt2: Vec<f64> = c.iter().map(|c| c * c * dt * dt).collect();
        let mut gnode = vec![0.0; g.len()];
        let mut gfac = Vec::with_capacity(m.obs.len());
        let mut force = Vec::with_capacity(m.obs.len());
        for (k, (&node, &gam)) in m.obs.nodes().iter().zip(&m.gamma).enumerate() {
            let b = m.obs.flux_factor(k);
            let c2 = c[node] * c[node];
            gfac.push(0.5 * dt * c2 * b * gam);
            force.push(dt * dt * c2 * b);
            gnode[node] = 0.5 * dt * c2 * b * gam;
        }
        // spectrum of D⁻¹A for A = 2κ⁻¹ - dtΔ, D = diag(A): with a = 2/κ and
        // b = 4dt/h², it lies in [min a/(a+b), max (a+2b)/(a+b)]
        let b = 4.0 * dt / (g.h * g.h);
        let mut inv_kappa = vec![0.0; g.len()];
        let mut a2 = vec![0.0; g.len()];
        let mut inv_diag = vec![0.0; g.len()];
        let mut couple = vec![0.0; g.len()];
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for k in 0..g.len() {
            let one_g = 1.0 + gnode[k];
            let kappa = m.alpha.values()[k] + dt * c[k] * c[k] * eps * eps / (2.0 * one_g);
            let a = 2.0 / kappa;
            inv_kappa[k] = 1.0 / kappa;
            a2[k] = a;
            inv_diag[k] = 1.0 / (a + b);
            lo = lo.min(a / (a + b));
            hi = hi.max((a + 2.0 * b) / (a + b));
            couple[k] = eps * c2dt2[k] / one_g;
        }
        let iterations = grid::chebyshev_iterations(lo, hi, cfg.heat_tol);
        let n = g.len();
        Self {
            m,
            cfg,
            g,
            c2dt2,
            gfac,
            force,
            inv_kappa,
            a2,
            inv_diag,
            couple,
            bounds: (lo, hi),
            iterations,
            lap: vec![0.0; n],
            pstar: vec![0.0; n],
            rhs: vec![0.0; n],
            tbar: vec![0.0; n],
            tbar_prev: None,
            work: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            track_rate: false,
            last_rate: 0.0,
        }
    }

    /// Advances `s` by one step. `eta` is an outward flux added to the
    /// impedance closure at the Γ nodes (the adjoint forcing).
    pub(crate) fn step(&mut self, s: &mut ThermoacousticState, eta: Option<&[f64]>) -> Result<()> {
        let exec = self.cfg.exec;
        let g = self.g;
        let nx = g.nx;
        let dt = self.cfg.dt;
        let eps = self.m.epsilon;
        let p = s.p_curr.values();
        let pp = s.p_prev.values();

        grid::laplacian_neumann_into(exec, &g, p, &mut self.lap);
        {
            let lap = &self.lap;
            let c2dt2 = &self.c2dt2;
            par::for_each_row(exec, &mut self.pstar, nx, |j, row| {
                let off = j * nx;
                for (i, v) in row.iter_mut().enumerate() {
                    let k = off + i;
                    *v = 2.0 * p[k] - pp[k] + c2dt2[k] * lap[k];
                }
            });
        }
        for (q, &node) in self.m.obs.nodes().iter().enumerate() {
            let gq = self.gfac[q];
            let mut v = self.pstar[node] + gq * pp[node];
            if let Some(eta) = eta {
                v += self.force[q] * eta[q];
            }
            self.pstar[node] = v / (1.0 + gq);
        }

        // heat midpoint: (2κ⁻¹ - dt Δ) θ̄ = κ⁻¹ (2θ^{n-1/2} + ε (P* - p^{n-1}) / 2)
        let th = s.theta.values();
        for k in 0..g.len() {
            self.rhs[k] = self.inv_kappa[k] * (2.0 * th[k] + 0.5 * eps * (self.pstar[k] - pp[k]));
        }
        match &self.tbar_prev {
            Some(prev) => {
                for k in 0..g.len() {
                    self.tbar[k] = 2.0 * th[k] - prev[k];
                }
            }
            None => self.tbar.copy_from_slice(th),
        }
        let heat = HeatOperator {
            g: &g,
            dt,
            a2: &self.a2,
            inv_diag: &self.inv_diag,
        };
        heat.chebyshev(exec, self.bounds, self.iterations, &mut self.tbar, &self.rhs, &mut self.work);

        grid::laplacian_neumann_into(exec, &g, &self.tbar, &mut self.lap);
        if self.track_rate {
            let heat = grid::wdot3(exec, &g, self.m.alpha.values(), &self.lap, &self.lap);
            let mut wall = 0.0;
            for (q, &node) in self.m.obs.nodes().iter().enumerate() {
                let p_next = self.pstar[node] + self.couple[node] * self.lap[node];
                let v = (p_next - pp[node]) / (2.0 * dt);
                let arc = self.m.obs.arc_weights()[q];
                wall += arc * self.m.gamma[q] * v * v;
                if let Some(eta) = eta {
                    wall -= arc * eta[q] * v;
                }
            }
            self.last_rate = -heat - wall;
        }
        let mut p_new = std::mem::replace(&mut s.p_prev, Field::zeros(g)).into_values();
        for k in 0..g.len() {
            p_new[k] = self.pstar[k] + self.couple[k] * self.lap[k];
        }
        let theta = s.theta.values_mut();
        for k in 0..g.len() {
            theta[k] = 2.0 * self.tbar[k] - theta[k];
        }
        match &mut self.tbar_prev {
            Some(prev) => prev.copy_from_slice(&self.tbar),
            None => self.tbar_prev = Some(self.tbar.clone()),
        }

        let step = s.step_index + 1;
        if let Some(k) = p_new.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                step,
                reason: format!("non-finite pressure at node {k}"),
            });
        }
        if let Some(k) = s.theta.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                step,
                reason: format!("non-finite temperature at node {k}"),
            });
        }
        s.p_prev = std::mem::replace(&mut s.p_curr, Field::from_vec_unchecked(g, p_new));
        s.step_index = step;
        s.t = step as f64 * dt;
        Ok(())
    }
}

/// `A = 2/κ - dt Δ_N` with its Jacobi diagonal.
struct HeatOperator<'a> {
    g: &'a Grid2D,
    dt: f64,
    a2: &'a [f64],
    inv_diag: &'a [f64],
}

impl HeatOperator<'_> {
    /// Fixed-count Jacobi–Chebyshev solve of `A x = b` starting from `x`.
    ///
    /// `[lo, hi]` bounds the spectrum of `D⁻¹A`. Each iteration is one fused
    /// sweep and no inner products are taken, so the result is a fixed linear
    /// function of the initial guess and `b`.
    fn chebyshev(
        &self,
        exec: Exec,
        (lo, hi): (f64, f64),
        iterations: usize,
        x: &mut [f64],
        b: &[f64],
        work: &mut [Vec<f64>; 3],
    ) {
        let (nx, ny) = (self.g.nx, self.g.ny);
        let s = self.dt / (self.g.h * self.g.h);
        let (a2, inv_diag) = (self.a2, self.inv_diag);
        let theta = 0.5 * (hi + lo);
        let delta = 0.5 * (hi - lo);
        let [r, d, d_next] = work;
        {
            let xs = &*x;
            par::for_each_row2(exec, r, d, nx, |j, rr, dr| {
                let (c, so, no) = grid::stencil_rows(xs, nx, ny, j);
                let off = j * nx;
                for i in 0..nx {
                    let k = off + i;
                    let ax = a2[k] * c[i] - s * grid::stencil_at(c, so, no, i);
                    rr[i] = b[k] - ax;
                    dr[i] = inv_diag[k] * rr[i] / theta;
                }
            });
        }
        let sigma = if delta > 0.0 { theta / delta } else { f64::INFINITY };
        let mut rho = 1.0 / sigma;
        for _ in 0..iterations {
            let rho_new = 1.0 / (2.0 * sigma - rho);
            let c1 = rho_new * rho;
            let c2 = if delta > 0.0 { 2.0 * rho_new / delta } else { 0.0 };
            let ds = &*d;
            par::for_each_row3(exec, x, r, d_next, nx, |j, xr, rr, dn| {
                let (c, so, no) = grid::stencil_rows(ds, nx, ny, j);
                let off = j * nx;
                let a2 = &a2[off..off + nx];
                let idg = &inv_diag[off..off + nx];
                let mut update = |i: usize, lap: f64| {
                    let q = a2[i] * c[i] - s * lap;
                    xr[i] += c[i];
                    rr[i] -= q;
                    dn[i] = c1 * c[i] + c2 * idg[i] * rr[i];
                };
                update(0, 2.0 * c[1] + so[0] + no[0] - 4.0 * c[0]);
                update(nx - 1, 2.0 * c[nx - 2] + so[nx - 1] + no[nx - 1] - 4.0 * c[nx - 1]);
                let (xr, rr, dn) = (&mut xr[1..nx - 1], &mut rr[1..nx - 1], &mut dn[1..nx - 1]);
                let (w, e, cc) = (&c[..nx - 2], &c[2..], &c[1..nx - 1]);
                let (so, no) = (&so[1..nx - 1], &no[1..nx - 1]);
                let (a2, idg) = (&a2[1..nx - 1], &idg[1..nx - 1]);
                for i in 0..nx - 2 {
                    let q = a2[i] * cc[i] - s * (w[i] + e[i] + so[i] + no[i] - 4.0 * cc[i]);
                    xr[i] += cc[i];
                    rr[i] -= q;
                    dn[i] = c1 * cc[i] + c2 * idg[i] * rr[i];
                }
            });
            std::mem::swap(d, d_next);
            rho = rho_new;
        }
    }
}

/// Taylor start from `p(0) = p0`, `∂t p(0) = p1`, `θ(0) = theta0`.
pub fn init_state_general(
    p0: &Field,
    p1: &Field,
    theta0: &Field,
    m: &MediumFields,
    cfg: &SolverConfig,
) -> Result<ThermoacousticState> {
    let g = *m.grid();
    for f in [p0, p1, theta0] {
        f.grid().check_same(&g, "initial data")?;
        f.check_finite("initial data")?;
    }
    let dt = cfg.dt;
    let eps = m.epsilon;
    let exec = cfg.exec;
    let n = g.len();
    let mut total = p0.clone();
    total.axpy(eps, theta0);
    let mut lap = vec![0.0; n];
    grid::laplacian_neumann_into(exec, &g, total.values(), &mut lap);
    for (q, &node) in m.obs.nodes().iter().enumerate() {
        lap[node] -= m.obs.flux_factor(q) * m.gamma[q] * p1.values()[node];
    }
    let c = m.c.values();
    let p_prev: Vec<f64> = (0..n)
        .map(|k| p0.values()[k] - dt * p1.values()[k] + 0.5 * dt * dt * c[k] * c[k] * lap[k])
        .collect();
    grid::laplacian_neumann_into(exec, &g, theta0.values(), &mut lap);
    let alpha = m.alpha.values();
    let theta: Vec<f64> = (0..n)
        .map(|k| theta0.values()[k] - 0.5 * dt * (alpha[k] * lap[k] + eps * p1.values()[k]))
        .collect();
    Ok(ThermoacousticState {
        p_curr: p0.clone(),
        p_prev: Field::from_vec_unchecked(g, p_prev),
        theta: Field::from_vec_unchecked(g, theta),
        t: 0.0,
        step_index: 0,
    })
}

/// Initial state under rapid heat deposition: `∂t p = 0`, `θ = εp0`.
pub fn init_state(p0: &Field, m: &MediumFields, cfg: &SolverConfig) -> Result<ThermoacousticState> {
    let g = *m.grid();
    p0.grid().check_same(&g, "initial pressure")?;
    init_state_general(p0, &Field::zeros(g), &p0.scaled(m.epsilon), m, cfg)
}

/// Advances a state by one step.
pub fn step(s: &ThermoacousticState, m: &MediumFields, cfg: &SolverConfig) -> Result<ThermoacousticState> {
    let mut out = s.clone();
    Stepper::new(m, cfg).step(&mut out, None)?;
    Ok(out)
}

/// Runs `cfg.n_steps` steps from `state`, recording the trace and diagnostics.
pub fn run(
    mut state: ThermoacousticState,
    m: &MediumFields,
    cfg: &SolverConfig,
    diagnostics: bool,
) -> Result<ForwardOutput> {
    state.p_curr.grid().check_same(m.grid(), "state")?;
    let mut trace = MeasurementTrace::for_config(&m.obs, cfg);
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut stepper = Stepper::new(m, cfg);
    stepper.track_rate = diagnostics;
    let record = |s: &ThermoacousticState, rows: &mut Vec<DiagnosticRow>, step_rate: f64| {
        let q = conserved_quantities_with(s, m, cfg.dt);
        rows.push(DiagnosticRow {
            step: s.step_index,
            t: s.t - 0.5 * cfg.dt,
            energy: energy_with(s, m, cfg.dt),
            dissipation_rate: dissipation_rate_with(s, m, cfg.dt),
            step_rate,
            q_acoustic: q.acoustic,
            q_thermal: q.thermal,
            q_thermal_alpha: q.thermal_alpha,
        });
    };
    trace.level_mut(0).copy_from_slice(&m.obs.trace(&state.p_curr));
    if diagnostics {
        record(&state, &mut rows, f64::NAN);
    }
    for n in 1..=cfg.n_steps {
        stepper.step(&mut state, None)?;
        let tr = m.obs.trace(&state.p_curr);
        trace.level_mut(n).copy_from_slice(&tr);
        if diagnostics {
            record(&state, &mut rows, stepper.last_rate);
        }
        if cfg.record_full {
            snapshots.push(state.p_curr.clone());
        }
    }
    Ok(ForwardOutput {
        trace,
        final_state: state,
        diagnostics: rows,
        snapshots,
    })
}

/// Simulates from `p0` under rapid heat deposition and records `p` on Γ.
pub fn forward_solve(p0: &Field, m: &MediumFields, cfg: &SolverConfig) -> Result<ForwardOutput> {
    p0.check_finite("initial pressure")?;
    run(init_state(p0, m, cfg)?, m, cfg, true)
}

/// Trace only, without diagnostics.
pub fn measure(p0: &Field, m: &MediumFields, cfg: &SolverConfig) -> Result<MeasurementTrace> {
    p0.check_finite("initial pressure")?;
    Ok(run(init_state(p0, m, cfg)?, m, cfg, false)?.trace)
}

fn velocity(s: &ThermoacousticState, dt: f64) -> Vec<f64> {
    s.p_curr
        .values()
        .iter()
        .zip(s.p_prev.values())
        .map(|(a, b)| (a - b) / dt)
        .collect()
}

fn neg_lap(g: &Grid2D, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    grid::laplacian_neumann_into(Exec::default(), g, f, &mut out);
    out.iter_mut().for_each(|v| *v = -*v);
    out
}

fn energy_with(s: &ThermoacousticState, m: &MediumFields, dt: f64) -> f64 {
    let g = *m.grid();
    let exec = Exec::default();
    let v = velocity(s, dt);
    let inv_c2: Vec<f64> = m.c.values().iter().map(|c| 1.0 / (c * c)).collect();
    let kinetic = 0.5 * grid::wdot3(exec, &g, &inv_c2, &v, &v);
    let ap = grid::wdot(exec, &g, &neg_lap(&g, s.p_curr.values()), s.p_prev.values());
    let at = grid::wdot(exec, &g, &neg_lap(&g, s.theta.values()), s.theta.values());
    kinetic + 0.5 * ap + 0.5 * at
}

fn dissipation_rate_with(s: &ThermoacousticState, m: &MediumFields, dt: f64) -> f64 {
    let g = *m.grid();
    let exec = Exec::default();
    let lt = neg_lap(&g, s.theta.values());
    let heat = grid::wdot3(exec, &g, m.alpha.values(), &lt, &lt);
    let v = velocity(s, dt);
    let wall: f64 = m
        .obs
        .nodes()
        .iter()
        .zip(m.gamma.iter().zip(m.obs.arc_weights()))
        .map(|(&k, (ga, w))| w * ga * v[k] * v[k])
        .sum();
    -heat - wall
}

fn conserved_quantities_with(s: &ThermoacousticState, m: &MediumFields, dt: f64) -> Conserved {
    let g = *m.grid();
    let exec = Exec::default();
    let v = velocity(s, dt);
    let inv_c2: Vec<f64> = m.c.values().iter().map(|c| 1.0 / (c * c)).collect();
    let (pc, pp) = (s.p_curr.values(), s.p_prev.values());
    let wall: f64 = m
        .obs
        .nodes()
        .iter()
        .zip(m.gamma.iter().zip(m.obs.arc_weights()))
        .map(|(&k, (ga, w))| w * ga * 0.5 * (pc[k] + pp[k]))
        .sum();
    let excess: Vec<f64> = (0..g.len())
        .map(|k| s.theta.values()[k] - 0.5 * m.epsilon * (pc[k] + pp[k]))
        .collect();
    let ones = vec![1.0; g.len()];
    let inv_alpha: Vec<f64> = m.alpha.values().iter().map(|a| 1.0 / a).collect();
    Conserved {
        acoustic: grid::wdot(exec, &g, &inv_c2, &v) + wall,
        thermal: grid::wdot(exec, &g, &ones, &excess),
        thermal_alpha: grid::wdot(exec, &g, &inv_alpha, &excess),
    }
}

/// `½(‖∂t p‖²_{c⁻²} + <∇p_curr, ∇p_prev> + ‖∇θ‖²)` with the two-level velocity.
pub fn energy(s: &ThermoacousticState, m: &MediumFields, cfg: &SolverConfig) -> f64 {
    energy_with(s, m, cfg.dt)
}

/// `-∫α|Δθ|² - ∮γ|∂t p|²` evaluated on the state.
pub fn dissipation_rate(s: &ThermoacousticState, m: &MediumFields, cfg: &SolverConfig) -> f64 {
    dissipation_rate_with(s, m, cfg.dt)
}

pub fn conserved_quantities(s: &ThermoacousticState, m: &MediumFields, cfg: &SolverConfig) -> Conserved {
    conserved_quantities_with(s, m, cfg.dt)
}
