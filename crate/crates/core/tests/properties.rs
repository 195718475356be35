use proptest::prelude::*;

use thermoacoustic::adjoint;
use thermoacoustic::forward::{self, MeasurementTrace, SolverConfig};
use thermoacoustic::grid::{self, Field, Grid2D};
use thermoacoustic::inversion::{self, Mode};
use thermoacoustic::medium::{self, Basis, MediumFields};

fn setup(n: usize, eps: f64, tau: f64) -> (MediumFields, SolverConfig) {
    let g = Grid2D::unit_square(n).unwrap();
    let m = MediumFields::uniform(g, 1.0, 0.01, eps).unwrap();
    let cfg = SolverConfig::for_medium(tau, 0.5, &m).unwrap();
    (m, cfg)
}

fn field(g: Grid2D, v: Vec<f64>) -> Field {
    Field::new(g, v).unwrap()
}

fn trace_diff(a: &MeasurementTrace, b: &MeasurementTrace) -> f64 {
    let mut d = a.clone();
    d.axpy(-1.0, b).unwrap();
    d.max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn measurement_is_linear(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        s1 in 0u64..1000,
        s2 in 0u64..1000,
    ) {
        let (m, cfg) = setup(9, 0.2, 0.5);
        let g = *m.grid();
        let (u, v) = (medium::bandlimited(&g, 3, Basis::Cosine, s1), medium::bandlimited(&g, 3, Basis::Sine, s2));
        let mut combo = u.scaled(a);
        combo.axpy(b, &v);
        let lhs = forward::measure(&combo, &m, &cfg).unwrap();
        let mut rhs = forward::measure(&u, &m, &cfg).unwrap().scaled(a);
        rhs.axpy(b, &forward::measure(&v, &m, &cfg).unwrap()).unwrap();
        prop_assert!(trace_diff(&lhs, &rhs) <= 1e-11 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn adjoint_is_linear(a in -3.0f64..3.0, seed in 0u64..1000) {
        let (m, cfg) = setup(9, 0.2, 0.5);
        let eta = MeasurementTrace::from_fn(&m.obs, &cfg, |t, x, y| (3.0 * t + seed as f64).sin() * (x - 2.0 * y).cos());
        let base = adjoint::adjoint_solve(&eta, &m, &cfg).unwrap();
        let scaled = adjoint::adjoint_solve(&eta.scaled(a), &m, &cfg).unwrap();
        prop_assert!(scaled.sub(&base.scaled(a)).max_abs() <= 1e-11 * (1.0 + base.max_abs()));
    }

    #[test]
    fn energy_never_increases(values in prop::collection::vec(-1.0f64..1.0, 81), eps in 0.0f64..0.5) {
        let (m, cfg) = setup(9, eps, 1.0);
        let p0 = field(*m.grid(), values);
        let out = forward::forward_solve(&p0, &m, &cfg).unwrap();
        for w in out.diagnostics.windows(2) {
            prop_assert!(w[1].energy - w[0].energy <= 1e-10 * w[0].energy.max(1e-300));
        }
    }

    #[test]
    fn restriction_is_adjoint_to_prolongation(
        f in prop::collection::vec(-1.0f64..1.0, 81),
        c in prop::collection::vec(-1.0f64..1.0, 25),
    ) {
        let fine = Grid2D::unit_square(9).unwrap();
        let coarse = fine.coarsen().unwrap();
        let (f, c) = (field(fine, f), field(coarse, c));
        let lhs = grid::inner_h0(&grid::restrict(&f).unwrap(), &c).unwrap();
        let rhs = grid::inner_h0(&f, &grid::prolong(&c, &fine).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-13);
    }

    #[test]
    fn laplacian_is_weighted_symmetric(
        f in prop::collection::vec(-1.0f64..1.0, 49),
        h in prop::collection::vec(-1.0f64..1.0, 49),
    ) {
        let g = Grid2D::unit_square(7).unwrap();
        let (f, h) = (field(g, f), field(g, h));
        let lf = grid::laplacian(&f, grid::Closure::Neumann).unwrap();
        let lh = grid::laplacian(&h, grid::Closure::Neumann).unwrap();
        let (a, b) = (grid::inner_h0(&lf, &h).unwrap(), grid::inner_h0(&f, &lh).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        prop_assert!(grid::inner_h0(&lf, &f).unwrap() <= 1e-12);
    }

    #[test]
    fn uncoupled_duality_is_exact(seed in 0u64..1000, gamma in 0.0f64..2.0) {
        let (m, cfg) = setup(9, 0.0, 0.6);
        let m = m.with_gamma(vec![gamma; m.obs.len()]).unwrap();
        let p0 = medium::bandlimited(m.grid(), 3, Basis::Cosine, seed);
        let eta = MeasurementTrace::from_fn(&m.obs, &cfg, |t, x, y| (2.0 * t).cos() * (x + y + seed as f64).sin());
        prop_assert!(adjoint::duality_gap(&p0, &eta, &m, &cfg).unwrap() <= 1e-10);
    }

    #[test]
    fn relative_error_is_scale_invariant(k in 0.1f64..10.0, seed in 0u64..100) {
        let g = Grid2D::unit_square(9).unwrap();
        let truth = medium::bandlimited(&g, 3, Basis::Cosine, seed);
        let est = truth.map(|v| 0.9 * v + 0.01);
        for mode in [Mode::H0, Mode::H1] {
            let a = inversion::relative_error(&est, &truth, mode).unwrap();
            let b = inversion::relative_error(&est.scaled(k), &truth.scaled(k), mode).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
