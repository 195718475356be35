//! Uniform node-centred grid calculus on a rectangle.
//!
//! Fields are stored row-major (`idx = j * nx + i`, `i` along x, `j` along y).
//! Integrals use trapezoidal weights (`h²` interior, `h²/2` edge, `h²/4`
//! corner), which makes the 5-point Laplacian with mirror ghosts symmetric in
//! the weighted pairing. That symmetry is what the forward and adjoint solvers
//! rely on for their discrete energy identities.

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Uniform grid with square cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, h: f64) -> Result<Self> {
        Self::with_origin(nx, ny, h, 0.0, 0.0)
    }

    pub fn with_origin(nx: usize, ny: usize, h: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, ny, h, x0, y0 })
    }

    /// `n x n` nodes on the unit square, `h = 1/(n-1)`.
    pub fn unit_square(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes per axis, got {n}")));
        }
        Self::new(n, n, 1.0 / (n - 1) as f64)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.h
    }

    pub fn coords(&self, idx: usize) -> (f64, f64) {
        (self.x(idx % self.nx), self.y(idx / self.nx))
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Side lengths of the rectangle.
    pub fn extent(&self) -> (f64, f64) {
        ((self.nx - 1) as f64 * self.h, (self.ny - 1) as f64 * self.h)
    }

    pub fn area(&self) -> f64 {
        let (lx, ly) = self.extent();
        lx * ly
    }

    #[inline]
    pub(crate) fn col_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.nx - 1 {
            0.5
        } else {
            1.0
        }
    }

    #[inline]
    pub(crate) fn row_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.ny - 1 {
            0.5
        } else {
            1.0
        }
    }

    /// Trapezoidal quadrature weight of node `(i, j)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.h * self.h * self.col_weight(i) * self.row_weight(j)
    }

    /// Factor-2 coarsening. Requires `nx - 1` and `ny - 1` to be even.
    pub fn coarsen(&self) -> Result<Grid2D> {
        if (self.nx - 1) % 2 != 0 || (self.ny - 1) % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "{}x{} grid cannot be coarsened by 2 (node count minus one must be even)",
                self.nx, self.ny
            )));
        }
        Grid2D::with_origin(
            (self.nx - 1) / 2 + 1,
            (self.ny - 1) / 2 + 1,
            2.0 * self.h,
            self.x0,
            self.y0,
        )
    }

    pub(crate) fn check_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self.nx != other.nx
            || self.ny != other.ny
            || (self.h - other.h).abs() > 1e-12 * self.h
        {
            return Err(Error::GridMismatch(format!(
                "{what}: {}x{} (h={}) vs {}x{} (h={})",
                self.nx, self.ny, self.h, other.nx, other.ny, other.h
            )));
        }
        Ok(())
    }
}

/// Grid function: one finite `f64` per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid2D,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let f = Self { grid, values };
        f.check_finite("field construction")?;
        Ok(f)
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self { grid, values }
    }

    pub(crate) fn from_vec_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; callers are responsible for keeping values finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite {
                index,
                context: context.to_string(),
            }),
            None => Ok(()),
        }
    }

    pub fn ensure_same_grid(&self, other: &Field) -> Result<()> {
        self.grid.check_same(&other.grid, "field grids differ")
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Field) {
        debug_assert_eq!(self.values.len(), x.values.len());
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Sides of the rectangle, used to describe the observed boundary portion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sides {
    pub left: bool,
    pub right: bool,
    pub bottom: bool,
    pub top: bool,
}

impl Sides {
    pub const ALL: Sides = Sides {
        left: true,
        right: true,
        bottom: true,
        top: true,
    };

    pub const NONE: Sides = Sides {
        left: false,
        right: false,
        bottom: false,
        top: false,
    };

    /// Parses `all` or a comma-separated list of `left,right,bottom,top`.
    pub fn parse(s: &str) -> Option<Sides> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Some(Sides::ALL);
        }
        let mut out = Sides::NONE;
        for part in s.split(',') {
            match part.trim().to_ascii_lowercase().as_str() {
                "left" => out.left = true,
                "right" => out.right = true,
                "bottom" => out.bottom = true,
                "top" => out.top = true,
                _ => return None,
            }
        }
        Some(out)
    }

    fn count_at(&self, grid: &Grid2D, i: usize, j: usize) -> u8 {
        (self.left && i == 0) as u8
            + (self.right && i == grid.nx - 1) as u8
            + (self.bottom && j == 0) as u8
            + (self.top && j == grid.ny - 1) as u8
    }
}

/// The observed boundary portion Γ with its surface quadrature.
///
/// Each Γ node carries the number of outward directions through which it
/// belongs to Γ (1 on an edge, up to 2 at a corner). The arc weight of a node
/// is the trapezoidal length it represents along those sides, which equals the
/// node's area weight times `2/h` per direction. This ties the ghost-node
/// closures of the Laplacian to the boundary quadrature exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySet {
    grid: Grid2D,
    mask: Vec<bool>,
    nodes: Vec<usize>,
    directions: Vec<u8>,
    arc: Vec<f64>,
}

impl BoundarySet {
    pub fn full(grid: Grid2D) -> Self {
        Self::from_sides(grid, Sides::ALL).expect("all sides is a valid selection")
    }

    pub fn from_sides(grid: Grid2D, sides: Sides) -> Result<Self> {
        let mut dirs = vec![0u8; grid.len()];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                dirs[grid.idx(i, j)] = sides.count_at(&grid, i, j);
            }
        }
        Self::build(grid, dirs)
    }

    /// Γ from an explicit per-node mask. Corner nodes count both adjacent sides.
    pub fn from_mask(grid: Grid2D, mask: &[bool]) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: mask.len(),
            });
        }
        let mut dirs = vec![0u8; grid.len()];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                if !mask[k] {
                    continue;
                }
                if !grid.is_boundary(i, j) {
                    return Err(Error::param(
                        "observation mask",
                        format!("node ({i}, {j}) is not a boundary node"),
                    ));
                }
                dirs[k] = Sides::ALL.count_at(&grid, i, j);
            }
        }
        Self::build(grid, dirs)
    }

    /// Γ from node indices and their direction counts (1 or 2).
    pub fn from_nodes(grid: Grid2D, nodes: &[usize], directions: &[u8]) -> Result<Self> {
        if nodes.len() != directions.len() {
            return Err(Error::LengthMismatch {
                expected: nodes.len(),
                got: directions.len(),
            });
        }
        let mut dirs = vec![0u8; grid.len()];
        for (&k, &d) in nodes.iter().zip(directions) {
            if k >= grid.len() {
                return Err(Error::param("boundary node", format!("index {k} out of range")));
            }
            let (i, j) = (k % grid.nx, k / grid.nx);
            if d == 0 || d > Sides::ALL.count_at(&grid, i, j) {
                return Err(Error::param(
                    "boundary node",
                    format!("node ({i}, {j}) cannot carry {d} boundary directions"),
                ));
            }
            dirs[k] = d;
        }
        Self::build(grid, dirs)
    }

    fn build(grid: Grid2D, dirs: Vec<u8>) -> Result<Self> {
        let mut mask = vec![false; grid.len()];
        let mut nodes = Vec::new();
        let mut directions = Vec::new();
        let mut arc = Vec::new();
        for (k, &d) in dirs.iter().enumerate() {
            if d == 0 {
                continue;
            }
            let (i, j) = (k % grid.nx, k / grid.nx);
            mask[k] = true;
            nodes.push(k);
            directions.push(d);
            arc.push(grid.weight(i, j) * 2.0 / grid.h * d as f64);
        }
        if nodes.is_empty() {
            return Err(Error::param("observation boundary", "selects no nodes"));
        }
        Ok(Self {
            grid,
            mask,
            nodes,
            directions,
            arc,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Grid indices of the Γ nodes, ascending.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn directions(&self) -> &[u8] {
        &self.directions
    }

    pub fn arc_weights(&self) -> &[f64] {
        &self.arc
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    /// Total length of the selected boundary portion.
    pub fn perimeter(&self) -> f64 {
        self.arc.iter().sum()
    }

    /// Ghost-closure factor `2·(directions)/h` for Γ node number `k`.
    #[inline]
    pub fn flux_factor(&self, k: usize) -> f64 {
        2.0 * self.directions[k] as f64 / self.grid.h
    }

    /// Samples a field at the Γ nodes.
    pub fn trace(&self, f: &Field) -> Vec<f64> {
        self.nodes.iter().map(|&k| f.values[k]).collect()
    }
}

/// Ghost-node closure for [`laplacian`].
#[derive(Clone, Copy, Debug)]
pub enum Closure<'a> {
    /// Mirror ghosts on every side (homogeneous Neumann).
    Neumann,
    /// Outward normal derivative prescribed at the Γ nodes, Neumann elsewhere.
    Flux(&'a BoundarySet, &'a [f64]),
}

/// 5-point Laplacian with the given ghost closure.
pub fn laplacian(f: &Field, closure: Closure<'_>) -> Result<Field> {
    f.check_finite("laplacian input")?;
    let g = f.grid;
    let mut out = vec![0.0; g.len()];
    laplacian_neumann_into(Exec::default(), &g, &f.values, &mut out);
    if let Closure::Flux(bset, flux) = closure {
        g.check_same(bset.grid(), "boundary set")?;
        if flux.len() != bset.len() {
            return Err(Error::LengthMismatch {
                expected: bset.len(),
                got: flux.len(),
            });
        }
        for (k, (&node, &q)) in bset.nodes().iter().zip(flux).enumerate() {
            if !q.is_finite() {
                return Err(Error::NonFinite {
                    index: node,
                    context: "boundary flux".into(),
                });
            }
            out[node] += bset.flux_factor(k) * q;
        }
    }
    Ok(Field::from_vec_unchecked(g, out))
}

/// Neumann (mirror-ghost) 5-point Laplacian, written into `dst`.
pub(crate) fn laplacian_neumann_into(exec: Exec, g: &Grid2D, src: &[f64], dst: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let inv_h2 = 1.0 / (g.h * g.h);
    par::for_each_row(exec, dst, nx, |j, out| {
        let jm = if j == 0 { 1 } else { j - 1 };
        let jp = if j == ny - 1 { ny - 2 } else { j + 1 };
        let c = &src[j * nx..(j + 1) * nx];
        let s = &src[jm * nx..(jm + 1) * nx];
        let n = &src[jp * nx..(jp + 1) * nx];
        out[0] = (2.0 * c[1] + s[0] + n[0] - 4.0 * c[0]) * inv_h2;
        for i in 1..nx - 1 {
            out[i] = (c[i - 1] + c[i + 1] + s[i] + n[i] - 4.0 * c[i]) * inv_h2;
        }
        out[nx - 1] = (2.0 * c[nx - 2] + s[nx - 1] + n[nx - 1] - 4.0 * c[nx - 1]) * inv_h2;
    });
}

/// Centre, south and north rows around row `j`, mirrored at the edges.
#[inline]
pub(crate) fn stencil_rows(src: &[f64], nx: usize, ny: usize, j: usize) -> (&[f64], &[f64], &[f64]) {
    let jm = if j == 0 { 1 } else { j - 1 };
    let jp = if j == ny - 1 { ny - 2 } else { j + 1 };
    (
        &src[j * nx..(j + 1) * nx],
        &src[jm * nx..(jm + 1) * nx],
        &src[jp * nx..(jp + 1) * nx],
    )
}

/// Unscaled mirrored 5-point sum at column `i` (multiply by `1/h²`).
#[inline(always)]
pub(crate) fn stencil_at(c: &[f64], s: &[f64], n: &[f64], i: usize) -> f64 {
    let nx = c.len();
    let w = if i == 0 { c[1] } else { c[i - 1] };
    let e = if i == nx - 1 { c[nx - 2] } else { c[i + 1] };
    w + e + s[i] + n[i] - 4.0 * c[i]
}

/// Weighted sum `Σ w_ij a_ij b_ij`.
pub(crate) fn wdot(exec: Exec, g: &Grid2D, a: &[f64], b: &[f64]) -> f64 {
    let nx = g.nx;
    let h2 = g.h * g.h;
    par::sum_rows(exec, g.ny, |j| {
        let ra = &a[j * nx..(j + 1) * nx];
        let rb = &b[j * nx..(j + 1) * nx];
        let mut s = 0.5 * (ra[0] * rb[0] + ra[nx - 1] * rb[nx - 1]);
        for i in 1..nx - 1 {
            s += ra[i] * rb[i];
        }
        s * g.row_weight(j) * h2
    })
}

/// Weighted sum `Σ w_ij a_ij b_ij c_ij`.
pub(crate) fn wdot3(exec: Exec, g: &Grid2D, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let nx = g.nx;
    let h2 = g.h * g.h;
    par::sum_rows(exec, g.ny, |j| {
        let r = j * nx..(j + 1) * nx;
        let (ra, rb, rc) = (&a[r.clone()], &b[r.clone()], &c[r]);
        let mut s = 0.5 * (ra[0] * rb[0] * rc[0] + ra[nx - 1] * rb[nx - 1] * rc[nx - 1]);
        for i in 1..nx - 1 {
            s += ra[i] * rb[i] * rc[i];
        }
        s * g.row_weight(j) * h2
    })
}

/// Discrete L² pairing (trapezoidal weights).
pub fn inner_h0(f: &Field, g: &Field) -> Result<f64> {
    f.ensure_same_grid(g)?;
    Ok(wdot(Exec::default(), &f.grid, &f.values, &g.values))
}

pub fn norm_h0(f: &Field) -> f64 {
    wdot(Exec::default(), &f.grid, &f.values, &f.values).max(0.0).sqrt()
}

/// Centred differences in the interior, one-sided first differences on the boundary.
pub fn gradient(f: &Field) -> (Field, Field) {
    let g = f.grid;
    let (nx, ny) = (g.nx, g.ny);
    let inv_h = 1.0 / g.h;
    let v = &f.values;
    let mut dx = vec![0.0; g.len()];
    let mut dy = vec![0.0; g.len()];
    for j in 0..ny {
        for i in 0..nx {
            let k = g.idx(i, j);
            dx[k] = if i == 0 {
                (v[k + 1] - v[k]) * inv_h
            } else if i == nx - 1 {
                (v[k] - v[k - 1]) * inv_h
            } else {
                0.5 * (v[k + 1] - v[k - 1]) * inv_h
            };
            dy[k] = if j == 0 {
                (v[k + nx] - v[k]) * inv_h
            } else if j == ny - 1 {
                (v[k] - v[k - nx]) * inv_h
            } else {
                0.5 * (v[k + nx] - v[k - nx]) * inv_h
            };
        }
    }
    (
        Field::from_vec_unchecked(g, dx),
        Field::from_vec_unchecked(g, dy),
    )
}

/// Discrete H¹ pairing: L² part plus L² pairing of the difference gradients.
pub fn inner_h1(f: &Field, g: &Field) -> Result<f64> {
    f.ensure_same_grid(g)?;
    let (fx, fy) = gradient(f);
    let (gx, gy) = gradient(g);
    let exec = Exec::default();
    let grid = &f.grid;
    Ok(wdot(exec, grid, &f.values, &g.values)
        + wdot(exec, grid, &fx.values, &gx.values)
        + wdot(exec, grid, &fy.values, &gy.values))
}

pub fn norm_h1(f: &Field) -> f64 {
    inner_h1(f, f).expect("same grid").max(0.0).sqrt()
}

/// Surface quadrature `Σ arc_k a_k b_k` over the Γ nodes.
pub fn boundary_inner(a: &[f64], b: &[f64], bset: &BoundarySet) -> Result<f64> {
    for v in [a, b] {
        if v.len() != bset.len() {
            return Err(Error::LengthMismatch {
                expected: bset.len(),
                got: v.len(),
            });
        }
    }
    Ok(bset
        .arc
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * x * y)
        .sum())
}

fn restrict_1d(src: &[f64], dst: &mut [f64]) {
    let nc = dst.len();
    let nf = src.len();
    dst[0] = 0.5 * (src[0] + src[1]);
    for ic in 1..nc - 1 {
        let f = 2 * ic;
        dst[ic] = 0.25 * (src[f - 1] + 2.0 * src[f] + src[f + 1]);
    }
    dst[nc - 1] = 0.5 * (src[nf - 1] + src[nf - 2]);
}

fn prolong_1d(src: &[f64], dst: &mut [f64]) {
    let nc = src.len();
    for ic in 0..nc - 1 {
        dst[2 * ic] = src[ic];
        dst[2 * ic + 1] = 0.5 * (src[ic] + src[ic + 1]);
    }
    dst[2 * (nc - 1)] = src[nc - 1];
}

/// Full-weighting restriction to the factor-2 coarse grid.
///
/// Interior coarse nodes get the 9-point `[1 2 1]⊗[1 2 1]/16` average; along the
/// boundary the stencil is cut to the weighted adjoint of bilinear prolongation,
/// so `<restrict f, g>_coarse = <f, prolong g>_fine` holds exactly and constants
/// are preserved.
pub fn restrict(f: &Field) -> Result<Field> {
    let fine = f.grid;
    let coarse = fine.coarsen()?;
    // x direction first: ny_f rows of nx_c
    let mut tmp = vec![0.0; coarse.nx * fine.ny];
    for j in 0..fine.ny {
        restrict_1d(
            &f.values[j * fine.nx..(j + 1) * fine.nx],
            &mut tmp[j * coarse.nx..(j + 1) * coarse.nx],
        );
    }
    let mut out = vec![0.0; coarse.len()];
    let mut col_f = vec![0.0; fine.ny];
    let mut col_c = vec![0.0; coarse.ny];
    for i in 0..coarse.nx {
        for j in 0..fine.ny {
            col_f[j] = tmp[j * coarse.nx + i];
        }
        restrict_1d(&col_f, &mut col_c);
        for j in 0..coarse.ny {
            out[j * coarse.nx + i] = col_c[j];
        }
    }
    Ok(Field::from_vec_unchecked(coarse, out))
}

/// Bilinear interpolation from `coarse` onto `fine` (which must coarsen to it).
pub fn prolong(f: &Field, fine: &Grid2D) -> Result<Field> {
    let coarse = f.grid;
    fine.coarsen()?.check_same(&coarse, "prolongation target")?;
    let mut tmp = vec![0.0; fine.nx * coarse.ny];
    for j in 0..coarse.ny {
        prolong_1d(
            &f.values[j * coarse.nx..(j + 1) * coarse.nx],
            &mut tmp[j * fine.nx..(j + 1) * fine.nx],
        );
    }
    let mut out = vec![0.0; fine.len()];
    let mut col_c = vec![0.0; coarse.ny];
    let mut col_f = vec![0.0; fine.ny];
    for i in 0..fine.nx {
        for j in 0..coarse.ny {
            col_c[j] = tmp[j * fine.nx + i];
        }
        prolong_1d(&col_c, &mut col_f);
        for j in 0..fine.ny {
            out[j * fine.nx + i] = col_f[j];
        }
    }
    Ok(Field::from_vec_unchecked(*fine, out))
}

/// Default relative tolerance of the inner elliptic solves.
pub const ELLIPTIC_TOL: f64 = 1e-10;

/// Solves `-Δu = rhs` with `u = 0` on the boundary (5-point stencil) by CG.
///
/// Boundary entries of `rhs` are ignored.
pub fn poisson_dirichlet(rhs: &Field, tol: f64) -> Result<Field> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    rhs.check_finite("poisson rhs")?;
    let g = rhs.grid;
    let (nx, ny) = (g.nx, g.ny);
    let inv_h2 = 1.0 / (g.h * g.h);
    let exec = Exec::default();

    let interior = |k: usize| {
        let (i, j) = (k % nx, k / nx);
        !g.is_boundary(i, j)
    };
    let mut b = rhs.values.clone();
    for (k, v) in b.iter_mut().enumerate() {
        if !interior(k) {
            *v = 0.0;
        }
    }
    let dot = |a: &[f64], c: &[f64]| -> f64 {
        par::sum_rows(exec, ny, |j| {
            let r = j * nx..(j + 1) * nx;
            a[r.clone()].iter().zip(&c[r]).map(|(x, y)| x * y).sum()
        })
    };
    // -Δ with zero Dirichlet data; boundary rows of the output stay zero
    let apply = |x: &[f64], y: &mut [f64]| {
        par::for_each_row(exec, y, nx, |j, out| {
            if j == 0 || j == ny - 1 {
                out.fill(0.0);
                return;
            }
            let c = &x[j * nx..(j + 1) * nx];
            let s = &x[(j - 1) * nx..j * nx];
            let n = &x[(j + 1) * nx..(j + 2) * nx];
            out[0] = 0.0;
            out[nx - 1] = 0.0;
            for i in 1..nx - 1 {
                out[i] = (4.0 * c[i] - c[i - 1] - c[i + 1] - s[i] - n[i]) * inv_h2;
            }
        });
    };
    let mut x = vec![0.0; g.len()];
    let precond = vec![1.0 / (4.0 * inv_h2); g.len()];
    let max_iter = 2000.max(20 * (nx + ny));
    pcg(&mut x, &b, apply, &precond, dot, tol, max_iter)?;
    Ok(Field::from_vec_unchecked(g, x))
}

/// Number of Chebyshev iterations that reduce the error by `tol` when the
/// preconditioned spectrum lies in `[lo, hi]`.
pub(crate) fn chebyshev_iterations(lo: f64, hi: f64, tol: f64) -> usize {
    let k = (hi / lo).max(1.0);
    let rate = (k.sqrt() - 1.0) / (k.sqrt() + 1.0);
    if rate <= 0.0 {
        return 1;
    }
    ((0.5 * tol).ln() / rate.ln()).ceil().max(1.0) as usize
}

/// Jacobi-preconditioned conjugate gradient for an operator that is
/// self-adjoint in the pairing `dot`. Solves in place starting from `x`.
///
/// Returns the number of iterations and the final relative residual.
pub(crate) fn pcg(
    x: &mut [f64],
    b: &[f64],
    mut apply: impl FnMut(&[f64], &mut [f64]),
    inv_diag: &[f64],
    dot: impl Fn(&[f64], &[f64]) -> f64,
    tol: f64,
    max_iter: usize,
) -> Result<(usize, f64)> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok((0, 0.0));
    }
    let mut r = vec![0.0; n];
    let mut q = vec![0.0; n];
    apply(x, &mut q);
    for k in 0..n {
        r[k] = b[k] - q[k];
    }
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / b_norm;
    if res <= tol {
        return Ok((0, res));
    }
    for it in 1..=max_iter {
        apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
            });
        }
        let a = rz / pq;
        for k in 0..n {
            x[k] += a * p[k];
            r[k] -= a * q[k];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        if !res.is_finite() {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
            });
        }
        if res <= tol {
            return Ok((it, res));
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}
