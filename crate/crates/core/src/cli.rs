//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::{self, RunConfig};
use crate::error::{Error, Result};
use crate::forward::{self, MeasurementTrace};
use crate::grid::Field;
use crate::inversion::{self, Mode};
use crate::io;
use crate::selftest;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_SELFTEST: i32 = 4;

fn config_help() -> String {
    let mut s = String::from("Config keys (key = value, `#` comments) and defaults:\n");
    for (k, d, what) in config::KEYS {
        let d = if d.is_empty() { "-" } else { d };
        let _ = writeln!(s, "  {k:<20} {d:<14} {what}");
    }
    s
}

#[derive(Parser, Debug)]
#[command(name = "thermoacoustic", version, about = "Thermoacoustic tomography: simulation and reconstruction")]
#[command(after_help = config_help())]
pub struct Cli {
    /// Configuration file; defaults apply when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.dir)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Noise seed (overrides noise.seed)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// CG iteration cap (overrides cg.k_max)
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    /// Inner-product setting (overrides cg.mode)
    #[arg(long, global = true, value_parser = ["h0", "h1"])]
    pub mode: Option<String>,
    /// Suppress progress output
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the initial pressure and wave speed fields with PGM renders
    Phantom,
    /// Simulate and write the boundary trace and the diagnostics table
    Forward,
    /// Purely acoustic time-reversal estimate
    Timereversal,
    /// Conjugate-gradient reconstruction started from time reversal
    Reconstruct,
    /// Relative error of a field against a reference in both norms
    Errors { estimate: PathBuf, truth: PathBuf },
    /// Run the numerical self-checks
    Selftest {
        /// Nodes per side
        #[arg(long, default_value_t = 33)]
        n: usize,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            let (kind, code) = if e.is_config_error() {
                ("config", EXIT_CONFIG)
            } else {
                ("numerical", EXIT_NUMERIC)
            };
            eprintln!("{{\"status\": \"error\", \"kind\": \"{kind}\", \"message\": {:?}}}", e.to_string());
            code
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => config::parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(k) = cli.iters {
        if k == 0 {
            return Err(Error::ConfigValue {
                key: "--iters".into(),
                message: "must be at least 1".into(),
            });
        }
        cfg.cg.k_max = k;
    }
    if let Some(m) = &cli.mode {
        cfg.cg.mode = Mode::parse(m).expect("validated by clap");
    }
    Ok(cfg)
}

struct Log {
    quiet: bool,
}

impl Log {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let log = Log { quiet: cli.quiet };
    if let Command::Selftest { n } = &cli.command {
        let checks = selftest::run_all(*n)?;
        let mut ok = true;
        for c in &checks {
            ok &= c.passed;
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        return Ok(if ok { 0 } else { EXIT_SELFTEST });
    }
    if let Command::Errors { estimate, truth } = &cli.command {
        let (est, truth) = (io::read_field(estimate)?, io::read_field(truth)?);
        println!("h0 {:.1}%", inversion::relative_error(&est, &truth, Mode::H0)?);
        println!("h1 {:.1}%", inversion::relative_error(&est, &truth, Mode::H1)?);
        return Ok(0);
    }

    // validate everything before computing
    let cfg = load(cli)?;
    let m = cfg.medium()?;
    let solver = cfg.solver(&m)?;
    let phantom = cfg.phantom()?;
    let truth = match &cfg.truth {
        Some(p) => Some(io::read_field(p)?),
        None if cfg.trace.is_none() => Some(phantom.clone()),
        None => None,
    };
    let given = match &cfg.trace {
        Some(p) => {
            let tr = io::read_trace(p)?;
            tr.check_compatible(&m, &solver)?;
            Some(tr)
        }
        None => None,
    };
    let out = cfg.out_dir.clone();
    log.say(format!("# {}", cfg.summary()));
    log.say(format!("# dt {:.6e}, {} steps", solver.dt, solver.n_steps));
    let mut manifest = format!("{}\ndt {:e}\nn_steps {}\n", cfg.summary(), solver.dt, solver.n_steps);

    let measured = |log: &Log| -> Result<MeasurementTrace> {
        if let Some(tr) = &given {
            return Ok(tr.clone());
        }
        let clock = Instant::now();
        let tr = forward::measure(&phantom, &m, &solver)?;
        log.say(format!("simulated trace in {:.1?}", clock.elapsed()));
        inversion::add_noise(&tr, cfg.noise_level, cfg.seed)
    };

    match &cli.command {
        Command::Phantom => {
            io::write_field(&out.join("p0.field"), &phantom)?;
            io::write_pgm(&out.join("p0.pgm"), &phantom)?;
            io::write_field(&out.join("speed.field"), &m.c)?;
            io::write_pgm(&out.join("speed.pgm"), &m.c)?;
            log.say(format!("wrote phantom and speed to {}", out.display()));
        }
        Command::Forward => {
            let clock = Instant::now();
            let res = forward::forward_solve(&phantom, &m, &solver)?;
            let e0 = res.diagnostics[0].energy;
            let e1 = res.diagnostics.last().map_or(e0, |r| r.energy);
            log.say(format!("forward solve in {:.1?}, E(tau)/E(0) = {:.4e}", clock.elapsed(), e1 / e0));
            let trace = inversion::add_noise(&res.trace, cfg.noise_level, cfg.seed)?;
            io::write_trace(&out.join("trace.txt"), &trace)?;
            io::write_diagnostics(&out.join("diagnostics.csv"), &res.diagnostics)?;
            let _ = writeln!(manifest, "energy_ratio {:e}", e1 / e0);
        }
        Command::Timereversal => {
            let tr = measured(&log)?;
            let clock = Instant::now();
            let est = inversion::time_reversal(&tr, &m, &solver)?;
            log.say(format!("time reversal in {:.1?}", clock.elapsed()));
            write_estimate(&out, "timereversal", &est)?;
            if let Some(t) = &truth {
                let h1 = inversion::relative_error(&est, t, Mode::H1)?;
                let h0 = inversion::relative_error(&est, t, Mode::H0)?;
                io::write_error_table(&out.join("errors.csv"), &[h1], &[h0])?;
                log.say(format!("relative error: H1 {h1:.1}%, H0 {h0:.1}%"));
            }
        }
        Command::Reconstruct => {
            let tr = measured(&log)?;
            let rep = inversion::reconstruct(&tr, &m, &solver, &cfg.cg, truth.as_ref())?;
            for (stage, t) in &rep.timings {
                log.say(format!("{stage}: {t:.1?}"));
                let _ = writeln!(manifest, "time {stage} {:.3}", t.as_secs_f64());
            }
            write_estimate(&out, "estimate", &rep.estimate)?;
            let rows: Vec<Vec<String>> = rep
                .residual_norms
                .iter()
                .enumerate()
                .map(|(k, r)| vec![k.to_string(), format!("{r:.16e}")])
                .collect();
            io::write_csv(&out.join("residuals.csv"), &["iter", "residual_norm"], &rows)?;
            if truth.is_some() {
                io::write_error_table(&out.join("errors.csv"), &rep.errors_h1, &rep.errors_h0)?;
                log.say("iter   H1 (%)   H0 (%)");
                for (k, (a, b)) in rep.errors_h1.iter().zip(&rep.errors_h0).enumerate() {
                    log.say(format!("{k:>4} {a:>8.1} {b:>8.1}"));
                }
            }
            let _ = writeln!(manifest, "iterations {}\nconverged {}\nmonotone {}", rep.iterations, rep.converged, rep.monotone);
        }
        Command::Errors { .. } | Command::Selftest { .. } => unreachable!(),
    }
    io::write_atomic(&out.join("run.txt"), |w| w.write_all(manifest.as_bytes()))?;
    Ok(0)
}

fn write_estimate(out: &Path, name: &str, f: &Field) -> Result<()> {
    io::write_field(&out.join(format!("{name}.field")), f)?;
    io::write_pgm(&out.join(format!("{name}.pgm")), f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_global_flags() {
        let cli = Cli::try_parse_from(["thermoacoustic", "reconstruct", "--iters", "5", "--mode", "h1", "--quiet"]).unwrap();
        assert_eq!(cli.iters, Some(5));
        assert!(matches!(cli.command, Command::Reconstruct));
        let cfg = load(&cli).unwrap();
        assert_eq!((cfg.cg.k_max, cfg.cg.mode), (5, Mode::H1));
        assert!(Cli::try_parse_from(["thermoacoustic", "reconstruct", "--mode", "h2"]).is_err());
    }
}
