use std::fs;
use std::path::Path;
use std::process::Command;

use thermoacoustic::forward::{self, MeasurementTrace, SolverConfig};
use thermoacoustic::grid::{self, Field, Grid2D};
use thermoacoustic::inversion::{self, CgOptions, Mode};
use thermoacoustic::io;
use thermoacoustic::medium::{self, Basis, MediumFields};
use thermoacoustic::par::Exec;

fn setup(n: usize, eps: f64) -> (MediumFields, SolverConfig) {
    let g = Grid2D::unit_square(n).unwrap();
    let m = MediumFields::uniform(g, 1.0, 0.01, eps).unwrap();
    let cfg = SolverConfig::for_medium(2.0, 0.5, &m).unwrap();
    (m, cfg)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thermoacoustic"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    let text = format!("grid.n = 17\ngrid.coarse = 9\ntime.tau = 1.0\ncg.k_max = 3\noutput.dir = out\n{extra}");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn serial_and_parallel_runs_are_bit_identical() {
    let (m, cfg) = setup(17, 0.1);
    let p0 = medium::shepp_logan(m.grid(), 1.0).unwrap();
    let a = forward::forward_solve(&p0, &m, &cfg.clone().with_exec(Exec::Serial)).unwrap();
    let b = forward::forward_solve(&p0, &m, &cfg.with_exec(Exec::Parallel)).unwrap();
    assert_eq!(a.trace.values(), b.trace.values());
    assert_eq!(a.final_state.theta.values(), b.final_state.theta.values());
    let ea: Vec<f64> = a.diagnostics.iter().map(|r| r.energy).collect();
    let eb: Vec<f64> = b.diagnostics.iter().map(|r| r.energy).collect();
    assert_eq!(ea, eb);
}

#[test]
fn scaling_the_phantom_scales_the_trace_and_reconstruction() {
    let (m, cfg) = setup(17, 0.1);
    let p0 = medium::bandlimited(m.grid(), 3, Basis::Cosine, 4);
    let tr = forward::measure(&p0, &m, &cfg).unwrap();
    let tr3 = forward::measure(&p0.scaled(3.0), &m, &cfg).unwrap();
    let mut d = tr3.clone();
    d.axpy(-3.0, &tr).unwrap();
    assert!(d.max_abs() <= 1e-12 * tr3.max_abs());
    let tr_a = inversion::time_reversal(&tr, &m, &cfg).unwrap();
    let tr_b = inversion::time_reversal(&tr3, &m, &cfg).unwrap();
    assert!(tr_b.sub(&tr_a.scaled(3.0)).max_abs() <= 1e-11 * tr_b.max_abs());
}

#[test]
fn normal_operator_is_positive_and_nearly_symmetric() {
    let (m, cfg) = setup(17, 0.1);
    let g = *m.grid();
    let n_op = |f: &Field| inversion::apply_m_star(&inversion::apply_m(f, &m, &cfg).unwrap(), &m, &cfg, Mode::H0, 1).unwrap();
    let u = medium::bandlimited(&g, 3, Basis::Cosine, 1);
    let v = medium::bandlimited(&g, 3, Basis::Sine, 2);
    let (nu, nv) = (n_op(&u), n_op(&v));
    assert!(grid::inner_h0(&u, &nu).unwrap() > 0.0);
    assert!(grid::inner_h0(&v, &nv).unwrap() > 0.0);
    let (a, b) = (grid::inner_h0(&nu, &v).unwrap(), grid::inner_h0(&u, &nv).unwrap());
    let scale = (grid::inner_h0(&u, &nu).unwrap() * grid::inner_h0(&v, &nv).unwrap()).sqrt();
    assert!((a - b).abs() <= 0.05 * scale, "asymmetry {} vs scale {scale}", (a - b).abs());
}

#[test]
fn uncoupled_reconstruction_improves_on_time_reversal() {
    let (m, cfg) = setup(33, 0.0);
    let p0 = medium::gaussian_blobs(m.grid(), &[(0.4, 0.45, 0.1, 1.0), (0.65, 0.6, 0.08, -0.5)]);
    let tr = forward::measure(&p0, &m, &cfg).unwrap();
    let opt = CgOptions {
        k_max: 4,
        ..Default::default()
    };
    let rep = inversion::reconstruct(&tr, &m, &cfg, &opt, Some(&p0)).unwrap();
    let (first, last) = (rep.errors_h0[0], *rep.errors_h0.last().unwrap());
    assert!(last < 0.5 * first, "time reversal {first:.1}%, final {last:.1}%");
}

#[test]
fn reconstruction_degrades_gracefully_with_noise() {
    let (m, cfg) = setup(33, 0.1);
    let p0 = medium::shepp_logan(m.grid(), 1.0).unwrap();
    let clean = forward::measure(&p0, &m, &cfg).unwrap();
    let opt = CgOptions {
        k_max: 3,
        ..Default::default()
    };
    let err = |tr: &MeasurementTrace| *inversion::reconstruct(tr, &m, &cfg, &opt, Some(&p0)).unwrap().errors_h0.last().unwrap();
    let base = err(&clean);
    let noisy = err(&inversion::add_noise(&clean, 0.05, 11).unwrap());
    assert!(noisy.is_finite() && noisy < base + 25.0, "clean {base:.1}%, noisy {noisy:.1}%");
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (m, cfg) = setup(9, 0.1);
    let p0 = medium::bandlimited(m.grid(), 2, Basis::Cosine, 7);
    let tr = forward::measure(&p0, &m, &cfg).unwrap();
    io::write_field(&dir.path().join("p.field"), &p0).unwrap();
    io::write_trace(&dir.path().join("t.txt"), &tr).unwrap();
    assert_eq!(io::read_field(&dir.path().join("p.field")).unwrap().values(), p0.values());
    let back = io::read_trace(&dir.path().join("t.txt")).unwrap();
    assert_eq!(back.values(), tr.values());
    assert_eq!(back.obs().nodes(), tr.obs().nodes());
    back.check_compatible(&m, &cfg).unwrap();
}

#[test]
fn cli_forward_then_reconstruct_from_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let status = bin().args(["--quiet", "--config"]).arg(&cfg).arg("forward").status().unwrap();
    assert!(status.success());
    let out = dir.path().join("out");
    for f in ["trace.txt", "diagnostics.csv", "run.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let status = bin().args(["--quiet", "--config"]).arg(&cfg).arg("phantom").status().unwrap();
    assert!(status.success());
    let cfg2 = write_config(dir.path(), "input.trace = out/trace.txt\ninput.truth = out/p0.field\n");
    let status = bin().args(["--quiet", "--iters", "2", "--config"]).arg(&cfg2).arg("reconstruct").status().unwrap();
    assert!(status.success());
    let table = fs::read_to_string(out.join("errors.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "iter,h1_error_pct,h0_error_pct");
    assert_eq!(table.lines().count(), 4);

    let res = bin()
        .arg("errors")
        .arg(out.join("estimate.field"))
        .arg(out.join("p0.field"))
        .output()
        .unwrap();
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("h0 ") && text.contains("h1 "));
}

#[test]
fn cli_rejects_bad_config_before_computing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "medium.epsilon = -1\n");
    let res = bin().arg("--config").arg(&cfg).arg("forward").output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("\"kind\": \"config\""));
    assert!(!dir.path().join("out").exists());

    let cfg = write_config(dir.path(), "grid.typo = 3\n");
    let res = bin().arg("--config").arg(&cfg).arg("forward").output().unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn cli_selftest_passes_on_a_small_grid() {
    let res = bin().args(["selftest", "--n", "17"]).output().unwrap();
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(res.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}
