//! Backward solver for the adjoint system and the observability operator `S`.
//!
//! In reversed time `s = τ - t`, with `χ = εψ - ξ`, the adjoint system becomes
//!
//! ```text
//! ψ_ss - c²Δψ - εc²Δχ = 0,   χ_s - αΔχ - εψ_s = 0,
//! ∂νψ + γψ_s = η,            ∂νχ = 0,
//! ```
//!
//! with zero initial data: the forward system driven by a boundary flux. The
//! `α⁻¹` weight in the coupling cancels exactly, so the same stepper serves
//! both directions, including for variable diffusivity. The returned
//! `Sη = -∂tψ(0) = ∂sψ(τ)` uses a centred difference around `s = τ`.

use crate::error::{Error, Result};
use crate::forward::{self, BoundaryControl, MeasurementTrace, SolverConfig, Stepper, ThermoacousticState};
use crate::grid::{self, Field};
use crate::medium::MediumFields;
use crate::par::Exec;

/// Adjoint fields in physical (forward) time.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState {
    /// `ψ` at `t`.
    pub psi_curr: Field,
    /// `ψ` at `t + dt`.
    pub psi_next: Field,
    /// `ξ` at `t + dt/2`.
    pub xi: Field,
    pub t: f64,
    /// Number of backward steps taken from `t = τ`.
    pub step_index: usize,
}

impl AdjointState {
    fn from_reversed(s: &ThermoacousticState, m: &MediumFields, cfg: &SolverConfig) -> Self {
        // theta holds χ half a step behind in s, i.e. at t + dt/2, where ψ is
        // best represented by the average of the two levels
        let eps = m.epsilon;
        let xi: Vec<f64> = (0..s.theta.values().len())
            .map(|k| {
                let psi_mid = 0.5 * (s.p_curr.values()[k] + s.p_prev.values()[k]);
                eps * psi_mid - s.theta.values()[k]
            })
            .collect();
        Self {
            psi_curr: s.p_curr.clone(),
            psi_next: s.p_prev.clone(),
            xi: Field::new(*m.grid(), xi).expect("finite adjoint state"),
            t: cfg.tau - s.t,
            step_index: s.step_index,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdjointOutput {
    /// `Sη = -∂tψ(0)`.
    pub s_eta: Field,
    /// Discrete `γψ(0)δ_Γ`, the boundary part of the `L²` adjoint of `M`.
    pub boundary: Field,
    pub final_state: AdjointState,
}

/// Integrates the adjoint system from `t = τ` down to `t = 0`.
pub fn adjoint_solve_full(eta: &BoundaryControl, m: &MediumFields, cfg: &SolverConfig) -> Result<AdjointOutput> {
    eta.check_compatible(m, cfg)?;
    let g = *m.grid();
    let n = cfg.n_steps;
    let dt = cfg.dt;
    let mut s = ThermoacousticState::zeros(g);
    let mut stepper = Stepper::new(m, cfg);
    // the terminal level carries half the trapezoid weight; starting from
    // rest with half the forcing makes this the exact transpose of `measure`
    // in the uncoupled case
    let half: Vec<f64> = eta.level(n).iter().map(|e| 0.5 * e).collect();
    stepper.step(&mut s, Some(&half))?;
    for level in (1..n).rev() {
        stepper.step(&mut s, Some(eta.level(level)))?;
    }
    // one step past s = τ for the centred derivative
    let before = s.p_prev.clone();
    let at_zero = s.clone();
    stepper.step(&mut s, Some(eta.level(0)))?;
    let s_eta: Vec<f64> = s
        .p_curr
        .values()
        .iter()
        .zip(before.values())
        .map(|(a, b)| (a - b) / (2.0 * dt))
        .collect();
    // ∮γ p0 ψ(0) in the form that exactly transposes the start of
    // `measure`: c⁻²/dt [(1 + A/2)(Gψ^0) + G(ψ^1 + ψ^-1)/2], A = dt²c²Δ and
    // G the impedance factor. A spreads it one node into the interior.
    let c = m.c.values();
    let psi0 = at_zero.p_curr.values();
    let mut gpsi = vec![0.0; g.len()];
    for (q, (&k, &gam)) in m.obs.nodes().iter().zip(&m.gamma).enumerate() {
        gpsi[k] = 0.5 * dt * c[k] * c[k] * m.obs.flux_factor(q) * gam * psi0[k];
    }
    let mut lap = vec![0.0; g.len()];
    grid::laplacian_neumann_into(cfg.exec, &g, &gpsi, &mut lap);
    let mut boundary: Vec<f64> = (0..g.len())
        .map(|k| (gpsi[k] + 0.5 * dt * dt * c[k] * c[k] * lap[k]) / (c[k] * c[k] * dt))
        .collect();
    for (q, (&k, &gam)) in m.obs.nodes().iter().zip(&m.gamma).enumerate() {
        let side = 0.5 * (s.p_curr.values()[k] + before.values()[k]);
        boundary[k] += 0.5 * m.obs.flux_factor(q) * gam * side;
    }
    Ok(AdjointOutput {
        s_eta: Field::new(g, s_eta)?,
        boundary: Field::new(g, boundary)?,
        final_state: AdjointState::from_reversed(&at_zero, m, cfg),
    })
}

/// `Sη = -∂tψ|_{t=0}`.
pub fn adjoint_solve(eta: &BoundaryControl, m: &MediumFields, cfg: &SolverConfig) -> Result<Field> {
    Ok(adjoint_solve_full(eta, m, cfg)?.s_eta)
}

/// Uncoupled (`ε = 0`) adjoint written directly in backward physical time.
/// Kept as an independent code path for cross-checking [`adjoint_solve`].
pub fn adjoint_solve_acoustic(eta: &BoundaryControl, m: &MediumFields, cfg: &SolverConfig) -> Result<Field> {
    eta.check_compatible(m, cfg)?;
    let g = *m.grid();
    let n = cfg.n_steps;
    let dt = cfg.dt;
    let c2dt2: Vec<f64> = m.c.values().iter().map(|c| c * c * dt * dt).collect();
    let exec = Exec::default();

    // ψ^{N+1} = ψ^N = 0, terminal level forced with half weight
    let mut next = vec![0.0; g.len()];
    let mut curr = vec![0.0; g.len()];
    let mut lap = vec![0.0; g.len()];
    let mut prev = vec![0.0; g.len()];
    // march ψ^{level-1} from ψ^level and ψ^{level+1}, down to ψ^{-1}
    for level in (0..=n).rev() {
        grid::laplacian_neumann_into(exec, &g, &curr, &mut lap);
        for k in 0..g.len() {
            prev[k] = 2.0 * curr[k] - next[k] + c2dt2[k] * lap[k];
        }
        // ∂νψ = η + γ (ψ^{level+1} - ψ^{level-1}) / (2dt), solved for ψ^{level-1}
        let w = if level == n { 0.5 } else { 1.0 };
        for (q, (&node, &e)) in m.obs.nodes().iter().zip(eta.level(level)).enumerate() {
            let e = w * e;
            let b = m.obs.flux_factor(q);
            let gq = 0.5 * dt * c2dt2[node] / (dt * dt) * b * m.gamma[q];
            let v = prev[node] + gq * next[node] + c2dt2[node] * b * e;
            prev[node] = v / (1.0 + gq);
        }
        if let Some(k) = prev.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unstable {
                step: n + 1 - level,
                reason: format!("non-finite adjoint field at node {k}"),
            });
        }
        if level == 0 {
            break;
        }
        std::mem::swap(&mut next, &mut curr);
        std::mem::swap(&mut curr, &mut prev);
    }
    // at exit: curr = ψ^0, next = ψ^1, prev = ψ^{-1}
    let out: Vec<f64> = next
        .iter()
        .zip(&prev)
        .map(|(a, b)| -(a - b) / (2.0 * dt))
        .collect();
    Field::new(g, out)
}

/// Relative mismatch of `<p0, Sη> = <Mp0, η>`.
///
/// The left side is the exact `L²` adjoint pairing
/// `∫c⁻² p0 Sη + ∮γ p0 ψ(0)`, which reduces to `<p0, Sη>` when `c = 1` and
/// `p0` vanishes on the boundary. Returns 0 when both sides vanish.
pub fn duality_gap(p0: &Field, eta: &BoundaryControl, m: &MediumFields, cfg: &SolverConfig) -> Result<f64> {
    let (lhs, rhs) = duality_pairings(p0, eta, m, cfg)?;
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((lhs - rhs).abs() / scale)
}

/// The two sides of the duality identity, `(<p0, M*η>, <Mp0, η>)`.
pub fn duality_pairings(
    p0: &Field,
    eta: &BoundaryControl,
    m: &MediumFields,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    let trace: MeasurementTrace = forward::measure(p0, m, cfg)?;
    let rhs = trace.pairing(eta)?;
    let adj = adjoint_solve_full(eta, m, cfg)?;
    let lhs = grid::inner_h0(p0, &l2_adjoint_field(&adj, m))?;
    Ok((lhs, rhs))
}

/// `c⁻² Sη + γψ(0)δ_Γ`, so that `<p0, ·>_H0` reproduces
/// `∫c⁻² p0 Sη + ∮γ p0 ψ(0)`.
pub(crate) fn l2_adjoint_field(adj: &AdjointOutput, m: &MediumFields) -> Field {
    let out: Vec<f64> = adj
        .s_eta
        .values()
        .iter()
        .zip(m.c.values())
        .zip(adj.boundary.values())
        .map(|((s, c), b)| s / (c * c) + b)
        .collect();
    Field::from_vec_unchecked(*m.grid(), out)
}
