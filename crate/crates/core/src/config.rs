//! Run configuration: a flat `key = value` file with dotted section prefixes.
//!
//! ```text
//! # constant-speed experiment
//! grid.n = 257
//! grid.coarse = 129
//! medium.speed = constant      # constant | layered | file
//! medium.c = 1.0
//! medium.gamma = inverse_speed # inverse_speed | constant | file
//! time.tau = 2.0
//! cg.mode = h0
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::SolverConfig;
use crate::grid::{BoundarySet, Field, Grid2D, Sides};
use crate::inversion::{CgOptions, Mode, Residual};
use crate::io;
use crate::medium::{self, EllipticAnnulus, MediumFields};

/// Every accepted key with its default, as shown by `--help`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("grid.n", "257", "fine grid nodes per side"),
    ("grid.coarse", "129", "nodes per side of the H1 lift grid; (n-1)/(coarse-1) must be a power of two"),
    ("medium.speed", "constant", "constant | layered | file"),
    ("medium.c", "1.0", "wave speed, or background speed for layered"),
    ("medium.layer_c", "1.5", "speed inside the elliptic annulus (layered)"),
    ("medium.speed_file", "", "field file with the wave speed (file)"),
    ("medium.alpha", "0.01", "thermal diffusivity"),
    ("medium.epsilon", "0.1", "thermoacoustic coupling"),
    ("medium.gamma", "inverse_speed", "inverse_speed | constant | file"),
    ("medium.gamma_value", "1.0", "impedance for gamma = constant"),
    ("medium.gamma_file", "", "one impedance value per observed node, in node order"),
    ("boundary.sides", "all", "all, or a comma list of left,right,bottom,top"),
    ("boundary.mask_file", "", "field file; nonzero boundary nodes form the observed set"),
    ("time.tau", "2.0", "final time"),
    ("time.cfl", "0.5", "time step as a fraction of h / (sqrt 2 c_max)"),
    ("cg.mode", "h0", "h0 | h1"),
    ("cg.tol", "1e-6", "relative residual tolerance"),
    ("cg.k_max", "50", "iteration cap"),
    ("cg.residual", "recompute", "recompute | update"),
    ("phantom.kind", "shepp_logan", "shepp_logan | file"),
    ("phantom.scale", "1.0", "phantom amplitude"),
    ("phantom.file", "", "field file with the initial pressure (file)"),
    ("input.trace", "", "trace file to invert instead of simulating one"),
    ("input.truth", "", "ground truth for error tables (defaults to the phantom when simulating)"),
    ("noise.level", "0", "Gaussian trace noise, relative to the trace RMS"),
    ("noise.seed", "0", "noise seed"),
    ("output.dir", "out", "output directory"),
];

#[derive(Clone, Debug, PartialEq)]
pub enum SpeedSpec {
    Constant(f64),
    Layered { base: f64, layer: f64 },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum GammaSpec {
    InverseSpeed,
    Constant(f64),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundarySpec {
    Sides(Sides),
    MaskFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum PhantomSpec {
    SheppLogan { scale: f64 },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid_n: usize,
    pub coarse_n: usize,
    pub speed: SpeedSpec,
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: GammaSpec,
    pub boundary: BoundarySpec,
    pub tau: f64,
    pub cfl: f64,
    pub cg: CgOptions,
    pub phantom: PhantomSpec,
    pub trace: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub noise_level: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_str("", Path::new(".")).expect("defaults are valid")
    }
}

struct Entries {
    map: HashMap<String, (usize, String)>,
    base: PathBuf,
}

fn value_err(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigValue {
        key: key.to_string(),
        message: message.into(),
    }
}

impl Entries {
    fn raw(&self, key: &str) -> String {
        match self.map.get(key) {
            Some((_, v)) => v.clone(),
            None => KEYS
                .iter()
                .find(|k| k.0 == key)
                .map(|k| k.1.to_string())
                .expect("key is declared"),
        }
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| value_err(key, format!("cannot parse `{v}`")))
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v: f64 = self.num(key)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(value_err(key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(None);
        }
        let p = self.base.join(v);
        if !p.exists() {
            return Err(value_err(key, format!("file {} does not exist", p.display())));
        }
        Ok(Some(p))
    }

    fn required_path(&self, key: &str, why: &str) -> Result<PathBuf> {
        self.path(key)?.ok_or_else(|| value_err(key, format!("required when {why}")))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::ConfigValue {
        key: "--config".into(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_str(&text, base)
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Parses configuration text; `base` anchors relative paths.
pub fn parse_str(text: &str, base: &Path) -> Result<RunConfig> {
    let mut map = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| Error::ConfigSyntax {
            line: line_no,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, found `{line}`")))?;
        let key = key.trim();
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if !KEYS.iter().any(|k| k.0 == key) {
            return Err(syntax(format!("unknown key `{key}`")));
        }
        if let Some((first, _)) = map.insert(key.to_string(), (line_no, value.to_string())) {
            return Err(syntax(format!("`{key}` already set on line {first}")));
        }
    }
    let e = Entries {
        map,
        base: base.to_path_buf(),
    };

    let grid_n: usize = e.num("grid.n")?;
    if grid_n < 3 {
        return Err(value_err("grid.n", "must be at least 3"));
    }
    let coarse_n: usize = e.num("grid.coarse")?;
    let ratio_ok = coarse_n >= 3
        && (grid_n - 1) % (coarse_n - 1) == 0
        && ((grid_n - 1) / (coarse_n - 1)).is_power_of_two();
    if !ratio_ok {
        return Err(value_err(
            "grid.coarse",
            format!("{coarse_n} does not coarsen {grid_n} by a power of two"),
        ));
    }

    let speed = match e.raw("medium.speed").as_str() {
        "constant" => SpeedSpec::Constant(e.positive("medium.c")?),
        "layered" => SpeedSpec::Layered {
            base: e.positive("medium.c")?,
            layer: e.positive("medium.layer_c")?,
        },
        "file" => SpeedSpec::File(e.required_path("medium.speed_file", "medium.speed = file")?),
        other => return Err(value_err("medium.speed", format!("unknown option `{other}`"))),
    };
    let gamma = match e.raw("medium.gamma").as_str() {
        "inverse_speed" => GammaSpec::InverseSpeed,
        "constant" => {
            let v: f64 = e.num("medium.gamma_value")?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(value_err("medium.gamma_value", "must be non-negative"));
            }
            GammaSpec::Constant(v)
        }
        "file" => GammaSpec::File(e.required_path("medium.gamma_file", "medium.gamma = file")?),
        other => return Err(value_err("medium.gamma", format!("unknown option `{other}`"))),
    };
    let boundary = match e.path("boundary.mask_file")? {
        Some(p) => BoundarySpec::MaskFile(p),
        None => {
            let s = e.raw("boundary.sides");
            BoundarySpec::Sides(Sides::parse(&s).ok_or_else(|| value_err("boundary.sides", format!("cannot parse `{s}`")))?)
        }
    };
    let epsilon: f64 = e.num("medium.epsilon")?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(value_err("medium.epsilon", format!("must be non-negative, got {epsilon}")));
    }
    let mode = e.raw("cg.mode");
    let cg = CgOptions {
        mode: Mode::parse(&mode).ok_or_else(|| value_err("cg.mode", format!("unknown mode `{mode}`")))?,
        tol: e.positive("cg.tol")?,
        k_max: e.num("cg.k_max")?,
        coarse_factor: (grid_n - 1) / (coarse_n - 1),
        residual: match e.raw("cg.residual").as_str() {
            "recompute" => Residual::Recompute,
            "update" => Residual::Update,
            other => return Err(value_err("cg.residual", format!("unknown option `{other}`"))),
        },
        record_history: true,
    };
    if cg.k_max == 0 {
        return Err(value_err("cg.k_max", "must be at least 1"));
    }
    let phantom = match e.raw("phantom.kind").as_str() {
        "shepp_logan" => PhantomSpec::SheppLogan {
            scale: e.positive("phantom.scale")?,
        },
        "file" => PhantomSpec::File(e.required_path("phantom.file", "phantom.kind = file")?),
        other => return Err(value_err("phantom.kind", format!("unknown option `{other}`"))),
    };
    let noise_level: f64 = e.num("noise.level")?;
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(value_err("noise.level", "must be non-negative"));
    }
    let cfl = e.positive("time.cfl")?;
    if cfl > 1.0 {
        return Err(value_err("time.cfl", format!("must not exceed 1, got {cfl}")));
    }

    Ok(RunConfig {
        grid_n,
        coarse_n,
        speed,
        alpha: e.positive("medium.alpha")?,
        epsilon,
        gamma,
        boundary,
        tau: e.positive("time.tau")?,
        cfl,
        cg,
        phantom,
        trace: e.path("input.trace")?,
        truth: e.path("input.truth")?,
        noise_level,
        seed: e.num("noise.seed")?,
        out_dir: base.join(e.raw("output.dir")),
    })
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::unit_square(self.grid_n)
    }

    pub fn speed_field(&self) -> Result<Field> {
        let g = self.grid()?;
        match &self.speed {
            SpeedSpec::Constant(c) => Ok(Field::constant(g, *c)),
            SpeedSpec::Layered { base, layer } => medium::layered_speed(&g, *base, *layer, &EllipticAnnulus::default()),
            SpeedSpec::File(p) => {
                let f = io::read_field(p)?;
                f.grid().check_same(&g, "speed file")?;
                if f.min() <= 0.0 {
                    return Err(value_err("medium.speed_file", "wave speed must be positive"));
                }
                Ok(f)
            }
        }
    }

    pub fn observed(&self) -> Result<BoundarySet> {
        let g = self.grid()?;
        match &self.boundary {
            BoundarySpec::Sides(s) => BoundarySet::from_sides(g, *s),
            BoundarySpec::MaskFile(p) => {
                let f = io::read_field(p)?;
                f.grid().check_same(&g, "boundary mask")?;
                let mask: Vec<bool> = f.values().iter().map(|v| *v != 0.0).collect();
                BoundarySet::from_mask(g, &mask)
            }
        }
    }

    pub fn medium(&self) -> Result<MediumFields> {
        let g = self.grid()?;
        let c = self.speed_field()?;
        let obs = self.observed()?;
        let gamma = match &self.gamma {
            GammaSpec::InverseSpeed => MediumFields::inverse_speed_impedance(&c, &obs),
            GammaSpec::Constant(v) => vec![*v; obs.len()],
            GammaSpec::File(p) => {
                let text = fs::read_to_string(p)?;
                let mut out = Vec::new();
                for tok in text.split_whitespace() {
                    out.push(tok.parse::<f64>().map_err(|_| value_err("medium.gamma_file", format!("cannot parse `{tok}`")))?);
                }
                if out.len() != obs.len() {
                    return Err(value_err(
                        "medium.gamma_file",
                        format!("{} values for {} observed nodes", out.len(), obs.len()),
                    ));
                }
                out
            }
        };
        MediumFields::new(c, Field::constant(g, self.alpha), gamma, obs, self.epsilon)
    }

    pub fn solver(&self, m: &MediumFields) -> Result<SolverConfig> {
        SolverConfig::for_medium(self.tau, self.cfl, m)
    }

    pub fn phantom(&self) -> Result<Field> {
        let g = self.grid()?;
        match &self.phantom {
            PhantomSpec::SheppLogan { scale } => medium::shepp_logan(&g, *scale),
            PhantomSpec::File(p) => {
                let f = io::read_field(p)?;
                f.grid().check_same(&g, "phantom file")?;
                Ok(f)
            }
        }
    }

    /// One comment line per setting, for output headers.
    pub fn summary(&self) -> String {
        format!(
            "grid {}^2 (lift {}^2), speed {:?}, alpha {}, epsilon {}, gamma {:?}, tau {}, cfl {}, cg {:?}/{:?} tol {} k_max {}",
            self.grid_n,
            self.coarse_n,
            self.speed,
            self.alpha,
            self.epsilon,
            self.gamma,
            self.tau,
            self.cfl,
            self.cg.mode,
            self.cg.residual,
            self.cg.tol,
            self.cg.k_max
        )
    }
}
