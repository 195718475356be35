//! Text formats for fields and traces, PGM renders and CSV tables.
//!
//! Every writer goes through a temporary file in the target directory that is
//! renamed into place, so a failed run never leaves a partial file behind.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::forward::{DiagnosticRow, MeasurementTrace};
use crate::grid::{BoundarySet, Field, Grid2D};

const FIELD_MAGIC: &str = "THERMOAC-FIELD v1";
const TRACE_MAGIC: &str = "THERMOAC-TRACE v1";

/// Writes `path` atomically from the bytes produced by `fill`.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Lossless decimal form (17 significant digits).
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_field(path: &Path, f: &Field) -> Result<()> {
    let g = f.grid();
    write_atomic(path, |w| {
        writeln!(w, "{FIELD_MAGIC}")?;
        writeln!(w, "nx {}", g.nx)?;
        writeln!(w, "ny {}", g.ny)?;
        writeln!(w, "h {}", num(g.h))?;
        let mut line = String::new();
        for row in f.values().chunks(g.nx) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&num(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    })
}

/// Reads `key value` from the next header line.
fn header<'a>(path: &Path, lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines.next().ok_or_else(|| format_err(path, format!("missing `{key}` line")))?;
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => Ok(v),
        _ => Err(format_err(path, format!("expected `{key} <value>`, found `{line}`"))),
    }
}

fn parse<T: std::str::FromStr>(path: &Path, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| format_err(path, format!("cannot parse {what} from `{s}`")))
}

pub fn read_field(path: &Path) -> Result<Field> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(FIELD_MAGIC) {
        return Err(format_err(path, format!("missing `{FIELD_MAGIC}` header")));
    }
    let nx: usize = parse(path, "nx", header(path, &mut lines, "nx")?)?;
    let ny: usize = parse(path, "ny", header(path, &mut lines, "ny")?)?;
    let h: f64 = parse(path, "h", header(path, &mut lines, "h")?)?;
    let g = Grid2D::new(nx, ny, h)?;
    let mut values = Vec::with_capacity(g.len());
    for tok in lines.flat_map(str::split_whitespace) {
        values.push(parse::<f64>(path, "value", tok)?);
    }
    if values.len() != g.len() {
        return Err(format_err(
            path,
            format!("expected {} values for a {nx}x{ny} grid, found {}", g.len(), values.len()),
        ));
    }
    Field::new(g, values)
}

/// Trace file: header with the grid, time step and Γ node table (index,
/// coordinates, boundary directions, arc weight), then one comma-separated
/// row per time level.
pub fn write_trace(path: &Path, tr: &MeasurementTrace) -> Result<()> {
    let obs = tr.obs();
    let g = obs.grid();
    write_atomic(path, |w| {
        writeln!(w, "{TRACE_MAGIC}")?;
        writeln!(w, "grid {} {} {}", g.nx, g.ny, num(g.h))?;
        writeln!(w, "n_steps {}", tr.n_steps())?;
        writeln!(w, "dt {}", num(tr.dt()))?;
        writeln!(w, "nodes {}", obs.len())?;
        for (q, &k) in obs.nodes().iter().enumerate() {
            let (x, y) = g.coords(k);
            writeln!(
                w,
                "node {k} {} {} {} {}",
                num(x),
                num(y),
                obs.directions()[q],
                num(obs.arc_weights()[q])
            )?;
        }
        writeln!(w, "data")?;
        let mut line = String::new();
        for n in 0..=tr.n_steps() {
            line.clear();
            for (q, v) in tr.level(n).iter().enumerate() {
                if q > 0 {
                    line.push(',');
                }
                line.push_str(&num(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    })
}

pub fn read_trace(path: &Path) -> Result<MeasurementTrace> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRACE_MAGIC) {
        return Err(format_err(path, format!("missing `{TRACE_MAGIC}` header")));
    }
    let grid_line = lines.next().unwrap_or_default();
    let parts: Vec<&str> = grid_line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "grid" {
        return Err(format_err(path, format!("expected `grid <nx> <ny> <h>`, found `{grid_line}`")));
    }
    let g = Grid2D::new(parse(path, "nx", parts[1])?, parse(path, "ny", parts[2])?, parse(path, "h", parts[3])?)?;
    let n_steps: usize = parse(path, "n_steps", header(path, &mut lines, "n_steps")?)?;
    let dt: f64 = parse(path, "dt", header(path, &mut lines, "dt")?)?;
    let count: usize = parse(path, "nodes", header(path, &mut lines, "nodes")?)?;
    let mut nodes = Vec::with_capacity(count);
    let mut dirs = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| format_err(path, "truncated node table"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "node" {
            return Err(format_err(path, format!("malformed node line `{line}`")));
        }
        nodes.push(parse::<usize>(path, "node index", parts[1])?);
        dirs.push(parse::<u8>(path, "node directions", parts[4])?);
    }
    let obs = BoundarySet::from_nodes(g, &nodes, &dirs)?;
    if obs.nodes() != nodes.as_slice() {
        return Err(format_err(path, "node table must list indices in increasing order"));
    }
    if lines.next().map(str::trim) != Some("data") {
        return Err(format_err(path, "missing `data` line"));
    }
    let mut values = Vec::with_capacity((n_steps + 1) * count);
    let mut rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let before = values.len();
        for tok in line.split(',') {
            values.push(parse::<f64>(path, "trace value", tok.trim())?);
        }
        if values.len() - before != count {
            return Err(format_err(path, format!("row {rows} has {} values, expected {count}", values.len() - before)));
        }
        rows += 1;
    }
    if rows != n_steps + 1 {
        return Err(format_err(path, format!("expected {} time levels, found {rows}", n_steps + 1)));
    }
    MeasurementTrace::new(obs, dt, n_steps, values)
}

/// 16-bit binary PGM with a linear min-max gray map, `y` increasing upward.
pub fn write_pgm(path: &Path, f: &Field) -> Result<()> {
    let g = f.grid();
    let (lo, hi) = (f.min(), f.max());
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    write_atomic(path, |w| {
        write!(w, "P5\n# min {} max {}\n{} {}\n65535\n", num(lo), num(hi), g.nx, g.ny)?;
        let mut buf = Vec::with_capacity(2 * g.len());
        for row in f.values().chunks(g.nx).rev() {
            for v in row {
                let level = ((v - lo) * scale).round().clamp(0.0, 65535.0) as u16;
                buf.extend_from_slice(&level.to_be_bytes());
            }
        }
        w.write_all(&buf)
    })
}

/// Writes a CSV with a header row. Cells are written as given.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            writeln!(w, "{}", r.join(","))?;
        }
        Ok(())
    })
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let header = [
        "step",
        "t",
        "energy",
        "dissipation_rate",
        "step_rate",
        "q_acoustic",
        "q_thermal",
        "q_thermal_alpha",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                num(r.t),
                num(r.energy),
                num(r.dissipation_rate),
                num(r.step_rate),
                num(r.q_acoustic),
                num(r.q_thermal),
                num(r.q_thermal_alpha),
            ]
        })
        .collect();
    write_csv(path, &header, &body)
}

/// Error table layout: iteration, `H¹` and `H⁰` errors in percent, one decimal.
pub fn error_table(errors_h1: &[f64], errors_h0: &[f64]) -> String {
    let mut out = String::from("iter,h1_error_pct,h0_error_pct\n");
    for (k, (a, b)) in errors_h1.iter().zip(errors_h0).enumerate() {
        let _ = writeln!(out, "{k},{a:.1},{b:.1}");
    }
    out
}

pub fn write_error_table(path: &Path, errors_h1: &[f64], errors_h0: &[f64]) -> Result<()> {
    let table = error_table(errors_h1, errors_h0);
    write_atomic(path, |w| w.write_all(table.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SolverConfig;
    use crate::medium::{self, Basis};

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::unit_square(17).unwrap();
        let f = medium::bandlimited(&g, 6, Basis::Cosine, 11).map(|v| v * 1e-7 + 1.0 / 3.0);
        let path = dir.path().join("f.field");
        write_field(&path, &f).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn field_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.field");
        fs::write(&path, "THERMOAC-FIELD v1\nnx 3\nny 3\nh 0.5\n1 2 3\n").unwrap();
        assert!(matches!(read_field(&path), Err(Error::Format { .. })));
        fs::write(&path, "nope\n").unwrap();
        assert!(matches!(read_field(&path), Err(Error::Format { .. })));
        fs::write(&path, "THERMOAC-FIELD v1\nnx 2\nh 1\n").unwrap();
        assert!(matches!(read_field(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::unit_square(9).unwrap();
        let obs = BoundarySet::from_sides(g, crate::grid::Sides::parse("left,top").unwrap()).unwrap();
        let cfg = SolverConfig::new(0.3, 0.5, &g, 1.0).unwrap();
        let tr = MeasurementTrace::from_fn(&obs, &cfg, |t, x, y| (t * 7.0 + x).sin() / 3.0 + y);
        let path = dir.path().join("t.trace");
        write_trace(&path, &tr).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn constant_field_renders_single_level() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::unit_square(5).unwrap();
        let path = dir.path().join("c.pgm");
        write_pgm(&path, &Field::constant(g, 2.5)).unwrap();
        let bytes = fs::read(&path).unwrap();
        let pixels = &bytes[bytes.len() - 2 * 25..];
        assert!(pixels.chunks(2).all(|p| p == &pixels[..2]));
        assert!(String::from_utf8_lossy(&bytes[..40]).starts_with("P5\n# min"));
    }

    #[test]
    fn pgm_maps_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid2D::unit_square(3).unwrap();
        let f = Field::from_fn(g, |x, y| x + y);
        let path = dir.path().join("r.pgm");
        write_pgm(&path, &f).unwrap();
        let bytes = fs::read(&path).unwrap();
        let px = &bytes[bytes.len() - 18..];
        // first pixel is the top-left corner (0, 1), last the bottom-right (1, 0)
        assert_eq!(u16::from_be_bytes([px[0], px[1]]), 32768);
        assert_eq!(u16::from_be_bytes([px[12], px[13]]), 0);
        assert_eq!(u16::from_be_bytes([px[4], px[5]]), 65535);
    }

    #[test]
    fn error_table_has_one_decimal() {
        let t = error_table(&[52.64, 19.75], &[31.1, 12.849]);
        assert_eq!(t, "iter,h1_error_pct,h0_error_pct\n0,52.6,31.1\n1,19.8,12.8\n");
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let res = write_atomic(&path, |_| Err(std::io::Error::other("boom")));
        assert!(res.is_err());
        assert!(!path.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
