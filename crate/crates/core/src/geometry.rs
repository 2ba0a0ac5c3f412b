//! Uniform grids, cell masks and directional exit distances.
//!
//! Cells carry the domain and nodes carry function values. A node is
//! *active* when all of its `2^n` incident cells are active; every other node
//! touched by an active cell lies on the boundary of the cell union and
//! carries the value zero.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MAX_DIM: usize = 3;

/// Uniform tensor grid with isotropic spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    cells: [usize; MAX_DIM],
    h: f64,
    origin: [f64; MAX_DIM],
}

impl GridSpec {
    pub fn new(dim: usize, cells: &[usize], h: f64, origin: &[f64]) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(invalid(format!("dimension must be 1, 2 or 3 (got {dim})")));
        }
        if cells.len() != dim || origin.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: cells.len().min(origin.len()) });
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid(format!("spacing must be positive (got {h})")));
        }
        if cells.iter().any(|&c| c == 0) {
            return Err(invalid("every axis needs at least one cell"));
        }
        let mut c = [1; MAX_DIM];
        let mut o = [0.0; MAX_DIM];
        c[..dim].copy_from_slice(cells);
        o[..dim].copy_from_slice(origin);
        Ok(Self { dim, cells: c, h, origin: o })
    }

    /// `cells` cells per axis covering `[lo, hi]^dim`.
    pub fn cube(dim: usize, cells: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(invalid(format!("empty extent [{lo}, {hi}]")));
        }
        if cells == 0 {
            return Err(invalid("every axis needs at least one cell"));
        }
        let h = (hi - lo) / cells as f64;
        Self::new(dim, &vec![cells; dim], h, &vec![lo; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn nodes_per_axis(&self, axis: usize) -> usize {
        self.cells[axis] + 1
    }

    pub fn num_cells(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    pub fn num_nodes(&self) -> usize {
        self.cells[..self.dim].iter().map(|c| c + 1).product()
    }

    /// Volume `h^n` of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Length of the grid box diagonal.
    pub fn diameter(&self) -> f64 {
        self.h * self.cells[..self.dim].iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }

    /// Same index layout with spacing and origin multiplied by `t`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(invalid(format!("scale factor must be positive (got {t})")));
        }
        let origin: Vec<f64> = self.origin().iter().map(|o| o * t).collect();
        Self::new(self.dim, self.cells_per_axis(), self.h * t, &origin)
    }

    pub fn cell_index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for d in (0..self.dim).rev() {
            idx = idx * self.cells[d] + coords[d];
        }
        idx
    }

    pub fn cell_coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for d in 0..self.dim {
            c[d] = idx % self.cells[d];
            idx /= self.cells[d];
        }
        c
    }

    pub fn node_index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for d in (0..self.dim).rev() {
            idx = idx * (self.cells[d] + 1) + coords[d];
        }
        idx
    }

    pub fn node_coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for d in 0..self.dim {
            c[d] = idx % (self.cells[d] + 1);
            idx /= self.cells[d] + 1;
        }
        c
    }

    pub fn cell_center(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.cell_coords(idx);
        let mut x = [0.0; MAX_DIM];
        for d in 0..self.dim {
            x[d] = self.origin[d] + (c[d] as f64 + 0.5) * self.h;
        }
        x
    }

    pub fn node_position(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.node_coords(idx);
        let mut x = [0.0; MAX_DIM];
        for d in 0..self.dim {
            x[d] = self.origin[d] + c[d] as f64 * self.h;
        }
        x
    }

    /// Physical point to grid units (cell side = 1, origin at the low corner).
    pub fn to_grid_units(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for d in 0..self.dim {
            g[d] = (x[d] - self.origin[d]) / self.h;
        }
        g
    }

    /// Vertex offsets `{0,1}^dim` of a cell, in lexicographic bit order.
    pub fn corner_offsets(&self) -> Vec<[usize; MAX_DIM]> {
        (0..1usize << self.dim)
            .map(|bits| {
                let mut c = [0; MAX_DIM];
                for (d, cd) in c.iter_mut().enumerate().take(self.dim) {
                    *cd = (bits >> d) & 1;
                }
                c
            })
            .collect()
    }

    /// Node indices of the vertices of cell `idx`, ordered like [`corner_offsets`](Self::corner_offsets).
    pub fn cell_vertices(&self, idx: usize) -> Vec<usize> {
        let c = self.cell_coords(idx);
        self.corner_offsets()
            .iter()
            .map(|off| {
                let mut v = [0; MAX_DIM];
                for d in 0..self.dim {
                    v[d] = c[d] + off[d];
                }
                self.node_index(&v[..self.dim])
            })
            .collect()
    }

    /// Face neighbours of a cell.
    pub fn cell_neighbors(&self, idx: usize) -> Vec<usize> {
        let c = self.cell_coords(idx);
        let mut out = Vec::with_capacity(2 * self.dim);
        for d in 0..self.dim {
            if c[d] > 0 {
                let mut n = c;
                n[d] -= 1;
                out.push(self.cell_index(&n[..self.dim]));
            }
            if c[d] + 1 < self.cells[d] {
                let mut n = c;
                n[d] += 1;
                out.push(self.cell_index(&n[..self.dim]));
            }
        }
        out
    }
}

/// Shape descriptors accepted by [`make_mask`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Annulus { center: Vec<f64>, r_in: f64, r_out: f64 },
    Cells(Vec<Vec<usize>>),
    Bitmap(PathBuf),
}

/// Per-node data derived from a cell mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayout {
    /// Number of active cells incident to each grid node.
    pub incident: Vec<u8>,
    /// Grid indices of active nodes (the unknowns), lexicographic.
    pub active: Vec<usize>,
    /// Grid indices of nodes touched by at least one active cell.
    pub domain: Vec<usize>,
    /// Unknown index of each grid node, `usize::MAX` when not active.
    pub dof: Vec<usize>,
}

impl NodeLayout {
    pub fn num_dofs(&self) -> usize {
        self.active.len()
    }
}

/// Active cell set on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMask {
    grid: GridSpec,
    active: Vec<bool>,
}

impl DomainMask {
    /// Mask from explicit flags. Fails with "empty domain" when no cell is active.
    pub fn from_flags(grid: GridSpec, active: Vec<bool>) -> Result<Self> {
        if active.len() != grid.num_cells() {
            return Err(Error::DimensionMismatch { expected: grid.num_cells(), got: active.len() });
        }
        if !active.iter().any(|&a| a) {
            return Err(Error::EmptyDomain);
        }
        Ok(Self { grid, active })
    }

    /// All cells active.
    pub fn full(grid: GridSpec) -> Self {
        let n = grid.num_cells();
        Self { grid, active: vec![true; n] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn flags(&self) -> &[bool] {
        &self.active
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.active[cell]
    }

    pub fn active_cells(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// `Σ h^n` over active cells.
    pub fn volume(&self) -> f64 {
        self.active_count() as f64 * self.grid.cell_volume()
    }

    /// Same cell pattern on the grid scaled by `t`.
    pub fn rescaled(&self, t: f64) -> Result<Self> {
        Ok(Self { grid: self.grid.scaled(t)?, active: self.active.clone() })
    }

    pub fn node_layout(&self) -> NodeLayout {
        let g = &self.grid;
        let mut incident = vec![0u8; g.num_nodes()];
        for cell in 0..g.num_cells() {
            if self.active[cell] {
                for v in g.cell_vertices(cell) {
                    incident[v] += 1;
                }
            }
        }
        let full = 1u8 << g.dim();
        let mut dof = vec![usize::MAX; g.num_nodes()];
        let mut active = Vec::new();
        let mut domain = Vec::new();
        for (node, &count) in incident.iter().enumerate() {
            if count > 0 {
                domain.push(node);
            }
            if count == full {
                dof[node] = active.len();
                active.push(node);
            }
        }
        NodeLayout { incident, active, domain, dof }
    }

    /// Whether the grid-unit point lies in the closed union of active cells.
    pub(crate) fn contains_grid_point(&self, p: &[f64; MAX_DIM]) -> bool {
        let dim = self.grid.dim();
        let mut ranges = [[0usize; 2]; MAX_DIM];
        let mut counts = [1usize; MAX_DIM];
        for d in 0..dim {
            let n = self.grid.cells[d];
            let x = p[d];
            if !(x >= 0.0 && x <= n as f64) {
                return false;
            }
            let f = x.floor();
            let fi = f as usize;
            if x == f {
                // on a grid plane: both adjacent cells touch the point
                let mut k = 0;
                if fi > 0 {
                    ranges[d][k] = fi - 1;
                    k += 1;
                }
                if fi < n {
                    ranges[d][k] = fi;
                    k += 1;
                }
                counts[d] = k;
            } else {
                ranges[d][0] = fi.min(n - 1);
                counts[d] = 1;
            }
        }
        let total: usize = counts[..dim].iter().product();
        for combo in 0..total {
            let mut rem = combo;
            let mut c = [0usize; MAX_DIM];
            for d in 0..dim {
                c[d] = ranges[d][rem % counts[d]];
                rem /= counts[d];
            }
            if self.active[self.grid.cell_index(&c[..dim])] {
                return true;
            }
        }
        false
    }

    /// Whether a physical point lies in the closed union of active cells.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_grid_point(&self.grid.to_grid_units(x))
    }

    /// Connected components of the active cells under face adjacency.
    ///
    /// Components are listed in order of their smallest cell index; cells in
    /// each component are sorted.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.active.len();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if !self.active[start] || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![start];
            label[start] = id;
            let mut queue = VecDeque::from([start]);
            while let Some(c) = queue.pop_front() {
                for nb in self.grid.cell_neighbors(c) {
                    if self.active[nb] && label[nb] == usize::MAX {
                        label[nb] = id;
                        members.push(nb);
                        queue.push_back(nb);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }

    /// Inactive cells sharing a face with an active cell.
    pub fn boundary_adjacent_inactive(&self) -> Vec<usize> {
        (0..self.active.len())
            .filter(|&c| !self.active[c] && self.grid.cell_neighbors(c).iter().any(|&nb| self.active[nb]))
            .collect()
    }

    /// Mask restricted to the given cells.
    pub fn subset(&self, cells: &[usize]) -> Result<Self> {
        let mut flags = vec![false; self.active.len()];
        for &c in cells {
            if c >= flags.len() {
                return Err(Error::OutOfBounds(format!("cell {c}")));
            }
            flags[c] = true;
        }
        Self::from_flags(self.grid.clone(), flags)
    }
}

fn check_point_dim(grid: &GridSpec, v: &[f64], what: &str) -> Result<()> {
    if v.len() != grid.dim() {
        return Err(invalid(format!("{what} has {} coordinates, grid has dimension {}", v.len(), grid.dim())));
    }
    Ok(())
}

fn check_inside_grid(grid: &GridSpec, lo: &[f64], hi: &[f64]) -> Result<()> {
    let tol = 1e-12 * grid.spacing();
    for d in 0..grid.dim() {
        let glo = grid.origin()[d];
        let ghi = glo + grid.cells_per_axis()[d] as f64 * grid.spacing();
        if lo[d] < glo - tol || hi[d] > ghi + tol {
            return Err(Error::OutOfBounds(format!(
                "shape extent [{}, {}] on axis {d} exceeds grid [{glo}, {ghi}]",
                lo[d], hi[d]
            )));
        }
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Build a cell mask: a cell is active iff its center satisfies the shape predicate.
pub fn make_mask(grid: &GridSpec, shape: &Shape) -> Result<DomainMask> {
    let dim = grid.dim();
    let n = grid.num_cells();
    let flags: Vec<bool> = match shape {
        Shape::Ball { center, radius } => {
            check_point_dim(grid, center, "ball center")?;
            if !(*radius > 0.0) {
                return Err(invalid("ball radius must be positive"));
            }
            let lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
            let hi: Vec<f64> = center.iter().map(|c| c + radius).collect();
            check_inside_grid(grid, &lo, &hi)?;
            (0..n).map(|i| dist(&grid.cell_center(i)[..dim], center) < *radius).collect()
        }
        Shape::Box { lo, hi } => {
            check_point_dim(grid, lo, "box corner")?;
            check_point_dim(grid, hi, "box corner")?;
            check_inside_grid(grid, lo, hi)?;
            (0..n)
                .map(|i| {
                    let c = grid.cell_center(i);
                    (0..dim).all(|d| c[d] >= lo[d] && c[d] <= hi[d])
                })
                .collect()
        }
        Shape::Annulus { center, r_in, r_out } => {
            check_point_dim(grid, center, "annulus center")?;
            if !(*r_in >= 0.0 && r_out > r_in) {
                return Err(invalid("annulus needs 0 <= r_in < r_out"));
            }
            let lo: Vec<f64> = center.iter().map(|c| c - r_out).collect();
            let hi: Vec<f64> = center.iter().map(|c| c + r_out).collect();
            check_inside_grid(grid, &lo, &hi)?;
            (0..n)
                .map(|i| {
                    let r = dist(&grid.cell_center(i)[..dim], center);
                    r >= *r_in && r < *r_out
                })
                .collect()
        }
        Shape::Cells(list) => {
            let mut flags = vec![false; n];
            for c in list {
                if c.len() != dim || c.iter().zip(grid.cells_per_axis()).any(|(&i, &m)| i >= m) {
                    return Err(Error::OutOfBounds(format!("cell {c:?}")));
                }
                flags[grid.cell_index(c)] = true;
            }
            flags
        }
        Shape::Bitmap(path) => {
            let bm = crate::io::read_pbm(path)?;
            bitmap_flags(grid, &bm)?
        }
    };
    DomainMask::from_flags(grid.clone(), flags)
}

/// Map a P1 bitmap (top row = highest y) onto a 1D or 2D grid.
pub fn bitmap_flags(grid: &GridSpec, bm: &crate::io::Bitmap) -> Result<Vec<bool>> {
    let (w, h) = (bm.width, bm.height);
    let ok = match grid.dim() {
        1 => h == 1 && w == grid.cells_per_axis()[0],
        2 => w == grid.cells_per_axis()[0] && h == grid.cells_per_axis()[1],
        _ => false,
    };
    if !ok {
        return Err(Error::OutOfBounds(format!(
            "bitmap {w}x{h} does not match grid {:?}",
            grid.cells_per_axis()
        )));
    }
    let mut flags = vec![false; grid.num_cells()];
    for row in 0..h {
        let y = h - 1 - row;
        for x in 0..w {
            if bm.bits[row * w + x] {
                let idx = if grid.dim() == 1 { x } else { grid.cell_index(&[x, y]) };
                flags[idx] = true;
            }
        }
    }
    Ok(flags)
}

/// Quadrature directions on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionSet {
    pub dim: usize,
    pub directions: Vec<[f64; MAX_DIM]>,
    pub weights: Vec<f64>,
}

impl DirectionSet {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Equal-weight direction sets: `{±1}` in 1D, equi-angular in 2D, a
/// Fibonacci sphere in 3D.
pub fn direction_set(n: usize, count: usize) -> Result<DirectionSet> {
    if count < 4 {
        return Err(invalid(format!("direction count must be at least 4 (got {count})")));
    }
    let (directions, weights) = match n {
        1 => (vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], vec![1.0, 1.0]),
        2 => {
            let w = 2.0 * PI / count as f64;
            let dirs = (0..count)
                .map(|k| {
                    let (s, c) = (2.0 * PI * k as f64 / count as f64).sin_cos();
                    [c, s, 0.0]
                })
                .collect();
            (dirs, vec![w; count])
        }
        3 => {
            let w = 4.0 * PI / count as f64;
            let golden = PI * (3.0 - 5f64.sqrt());
            let dirs = (0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let (s, c) = (golden * k as f64).sin_cos();
                    [r * c, r * s, z]
                })
                .collect();
            (dirs, vec![w; count])
        }
        _ => return Err(invalid(format!("dimension must be 1, 2 or 3 (got {n})"))),
    };
    Ok(DirectionSet { dim: n, directions, weights })
}

const MARCH_STEPS_PER_CELL: f64 = 8.0;
const BISECTION_STEPS: usize = 30;

/// Exit distance along `±ω` in grid units, starting from a grid-unit point.
///
/// Marches in steps of 1/8 cell, then bisects the last step. Returns `None`
/// when the start point is outside.
pub(crate) fn directional_distance_grid(
    mask: &DomainMask,
    x: &[f64; MAX_DIM],
    omega: &[f64; MAX_DIM],
) -> Option<f64> {
    if !mask.contains_grid_point(x) {
        return None;
    }
    let g = mask.grid();
    let dim = g.dim();
    let cap = g.cells_per_axis().iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
    let step = 1.0 / MARCH_STEPS_PER_CELL;
    let at = |t: f64| {
        let mut p = [0.0; MAX_DIM];
        for d in 0..dim {
            p[d] = x[d] + t * omega[d];
        }
        p
    };
    let mut best = cap;
    for sign in [1.0, -1.0] {
        let mut k = 1usize;
        loop {
            let t = k as f64 * step;
            if t >= best {
                break;
            }
            if !mask.contains_grid_point(&at(sign * t)) {
                let (mut lo, mut hi) = (t - step, t);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if mask.contains_grid_point(&at(sign * mid)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                best = best.min(hi);
                break;
            }
            k += 1;
        }
    }
    Some(best)
}

/// `d_{ω,Ω}(x) = inf{|t| : x + tω ∉ Ω}` by ray marching (step h/8), capped
/// at the grid diameter.
pub fn directional_distance(mask: &DomainMask, x: &[f64], omega: &[f64]) -> Result<f64> {
    let g = mask.grid();
    if x.len() != g.dim() || omega.len() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: x.len().min(omega.len()) });
    }
    let norm = omega.iter().map(|w| w * w).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(invalid("direction must be a unit vector"));
    }
    let mut w = [0.0; MAX_DIM];
    w[..g.dim()].copy_from_slice(omega);
    let p = g.to_grid_units(x);
    directional_distance_grid(mask, &p, &w)
        .map(|d| d * g.spacing())
        .ok_or(Error::PointNotInDomain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square8() -> GridSpec {
        GridSpec::cube(2, 8, -1.0, 1.0).unwrap()
    }

    #[test]
    fn full_box_mask() {
        let g = square8();
        let m = make_mask(&g, &Shape::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] }).unwrap();
        assert_eq!(m.active_count(), 64);
        let layout = m.node_layout();
        assert_eq!(layout.num_dofs(), 49);
        assert_eq!(layout.domain.len(), 81);
    }

    #[test]
    fn ball_mask_matches_center_enumeration() {
        let g = square8();
        let m = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
        let mut count = 0;
        for i in 0..8 {
            for j in 0..8 {
                let x = -1.0 + 0.25 * (i as f64 + 0.5);
                let y = -1.0 + 0.25 * (j as f64 + 0.5);
                if x * x + y * y < 1.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(m.active_count(), count);
        assert_eq!(count, 52);
    }

    #[test]
    fn tiny_ball_is_empty() {
        let g = square8();
        let r = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 0.01 });
        assert!(matches!(r, Err(Error::EmptyDomain)));
    }

    #[test]
    fn shapes_outside_grid_are_rejected() {
        let g = square8();
        let r = make_mask(&g, &Shape::Ball { center: vec![0.5, 0.0], radius: 1.0 });
        assert!(matches!(r, Err(Error::OutOfBounds(_))));
        let r = make_mask(&g, &Shape::Cells(vec![vec![8, 0]]));
        assert!(matches!(r, Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn annulus_excludes_center() {
        let g = GridSpec::cube(2, 16, -1.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Annulus { center: vec![0.0, 0.0], r_in: 0.4, r_out: 0.9 }).unwrap();
        assert!(!m.contains(&[0.0, 0.0]));
        assert!(m.contains(&[0.6, 0.0]));
        assert_eq!(m.components().len(), 1);
    }

    #[test]
    fn node_layout_is_idempotent() {
        let g = GridSpec::cube(2, 12, -1.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 0.9 }).unwrap();
        assert_eq!(m.node_layout(), m.node_layout());
    }

    #[test]
    fn distance_in_full_box() {
        let g = square8();
        let m = DomainMask::full(g);
        let d = directional_distance(&m, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((d - 1.0).abs() <= 0.25 / 8.0);
        let d = directional_distance(&m, &[0.5, 0.0], &[1.0, 0.0]).unwrap();
        assert!((d - 0.5).abs() <= 0.25 / 8.0);
        let back = directional_distance(&m, &[0.5, 0.0], &[-1.0, 0.0]).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn distance_in_ball() {
        let g = GridSpec::cube(2, 64, -1.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
        let h = g.spacing();
        for k in 0..16 {
            let th = 2.0 * PI * k as f64 / 16.0;
            let d = directional_distance(&m, &[0.0, 0.0], &[th.cos(), th.sin()]).unwrap();
            assert!((d - 1.0).abs() <= 2.0 * h, "theta {th}: {d}");
        }
    }

    #[test]
    fn distance_outside_errors() {
        let g = GridSpec::cube(2, 16, -1.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 0.5 }).unwrap();
        assert!(matches!(
            directional_distance(&m, &[0.9, 0.9], &[1.0, 0.0]),
            Err(Error::PointNotInDomain)
        ));
    }

    #[test]
    fn direction_sets() {
        let s = direction_set(2, 4).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (d, e) in s.directions.iter().zip(expect) {
            assert!((d[0] - e[0]).abs() < 1e-15 && (d[1] - e[1]).abs() < 1e-15);
        }
        assert!(s.weights.iter().all(|&w| (w - PI / 2.0).abs() < 1e-15));
        let s1 = direction_set(1, 10).unwrap();
        assert_eq!(s1.len(), 2);
        assert_eq!(s1.weights, vec![1.0, 1.0]);
        let s360 = direction_set(2, 360).unwrap();
        assert_relative_eq!(s360.weights.iter().sum::<f64>(), 2.0 * PI, max_relative = 1e-14);
        let s3 = direction_set(3, 500).unwrap();
        for d in &s3.directions {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_relative_eq!(s3.weights.iter().sum::<f64>(), 4.0 * PI, max_relative = 1e-13);
        assert!(direction_set(2, 3).is_err());
    }

    #[test]
    fn components_split_disjoint_blobs() {
        let g = GridSpec::cube(2, 10, 0.0, 10.0).unwrap();
        let cells = vec![vec![1, 1], vec![1, 2], vec![6, 6], vec![7, 6], vec![2, 2]];
        let m = make_mask(&g, &Shape::Cells(cells)).unwrap();
        let comps = m.components();
        // (2,2) touches (1,2)? No: (1,2)-(2,2) share a face.
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].len(), 3);
    }
}
