//! The discrete regional Gagliardo form.
//!
//! Functions are multilinear (Q1) on the active cells and vanish at boundary
//! nodes. The form sums `∫_K ∫_L (u(x)-u(y))² |x-y|^{-n-2σ}` over ordered
//! pairs of active cells `(K, L)`:
//!
//! * pairs with `|L-K|_∞ ≤ R` (the near band) use precomputed local
//!   matrices of the exact cell-pair integral ([`NearTable`]);
//! * all other pairs use vertex quadrature, which collapses to node-pair
//!   weights `m_i m_j |x_i-x_j|^{-n-2σ}` away from the band.
//!
//! Everything is computed on the unit grid and multiplied by `h^{n-2σ}`, so
//! rescaling a mask changes the form by exactly that factor.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{DomainMask, NodeLayout, MAX_DIM};
use crate::quadrature::{adaptive_gk, GaussRule};

pub const DEFAULT_NEAR_RADIUS: usize = 2;
pub const DEFAULT_DEPTH: usize = 8;
/// Largest unknown count stored as a dense matrix.
pub const DENSE_LIMIT: usize = 8000;

const DEPTH_CHECK_INCREMENT: usize = 4;
const NEAR_TOLERANCE: f64 = 1e-6;

type IVec = [i64; MAX_DIM];

/// Exact cell-pair matrix on the unit grid.
///
/// For the pair `(K₀, K_Δ)` with `K₀ = [0,1]ⁿ`, entry `(a, b)` is
/// `∬_{K₀×K_Δ} (φ_a(x)-φ_a(y))(φ_b(x)-φ_b(y)) |x-y|^{-n-2σ} dy dx` where
/// `φ_a` is the hat function of `vertices[a]` (coordinates relative to `K₀`).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMatrix {
    pub vertices: Vec<IVec>,
    pub values: Vec<f64>,
}

impl LocalMatrix {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.vertices.len() + b]
    }

    fn position(&self, v: &IVec) -> Option<usize> {
        self.vertices.iter().position(|w| w == v)
    }
}

/// Local matrices for every cell offset in the near band.
#[derive(Debug, Clone)]
pub struct NearTable {
    dim: usize,
    sigma: f64,
    radius: usize,
    depth: usize,
    error_estimate: f64,
    entries: Vec<LocalMatrix>,
}

fn band_offsets(dim: usize, radius: usize) -> Vec<IVec> {
    let r = radius as i64;
    let side = 2 * radius + 1;
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            let mut v = [0i64; MAX_DIM];
            for vd in v.iter_mut().take(dim) {
                *vd = (k % side) as i64 - r;
                k /= side;
            }
            v
        })
        .collect()
}

fn band_index(delta: &IVec, dim: usize, radius: usize) -> Option<usize> {
    let side = 2 * radius + 1;
    let mut idx = 0;
    for d in (0..dim).rev() {
        let s = delta[d] + radius as i64;
        if s < 0 || s >= side as i64 {
            return None;
        }
        idx = idx * side + s as usize;
    }
    Some(idx)
}

fn local_vertices(dim: usize, delta: &IVec) -> Vec<IVec> {
    let mut set = BTreeSet::new();
    for bits in 0..1usize << dim {
        let mut v = [0i64; MAX_DIM];
        let mut w = [0i64; MAX_DIM];
        for d in 0..dim {
            let b = ((bits >> d) & 1) as i64;
            v[d] = b;
            w[d] = delta[d] + b;
        }
        set.insert(v);
        set.insert(w);
    }
    set.into_iter().collect()
}

fn hat(v: &IVec, x: &[f64; MAX_DIM], dim: usize) -> f64 {
    let mut p = 1.0;
    for d in 0..dim {
        p *= (1.0 - (x[d] - v[d] as f64).abs()).max(0.0);
    }
    p
}

/// Adds `weight · ∫_{B(z)} f_a f_b dx` (upper triangle) to `acc`, where
/// `f_a(x) = φ_a(x) - φ_a(x+z)` and `B(z) = {x ∈ K₀ : x+z ∈ K_Δ}`.
fn accumulate_moments(dim: usize, delta: &IVec, verts: &[IVec], z: &[f64; MAX_DIM], weight: f64, acc: &mut [f64]) {
    const G: f64 = 0.288_675_134_594_812_9; // 1/(2√3)
    let mut lo = [0.0; MAX_DIM];
    let mut len = [0.0; MAX_DIM];
    let mut vol = 1.0;
    for d in 0..dim {
        let a = (delta[d] as f64 - z[d]).max(0.0);
        let b = (delta[d] as f64 + 1.0 - z[d]).min(1.0);
        if b <= a {
            return;
        }
        lo[d] = a;
        len[d] = b - a;
        vol *= b - a;
    }
    let l = verts.len();
    let w = weight * vol / (1u32 << dim) as f64;
    let mut f = [0.0f64; 16];
    for q in 0..1usize << dim {
        let mut x = [0.0; MAX_DIM];
        let mut y = [0.0; MAX_DIM];
        for d in 0..dim {
            let s = if (q >> d) & 1 == 0 { 0.5 - G } else { 0.5 + G };
            x[d] = lo[d] + len[d] * s;
            y[d] = x[d] + z[d];
        }
        for (a, v) in verts.iter().enumerate() {
            f[a] = hat(v, &x, dim) - hat(v, &y, dim);
        }
        for a in 0..l {
            let fa = w * f[a];
            for b in a..l {
                acc[a * l + b] += fa * f[b];
            }
        }
    }
}

fn kernel(z: &[f64; MAX_DIM], dim: usize, sigma: f64) -> f64 {
    let r2: f64 = z[..dim].iter().map(|c| c * c).sum();
    r2.powf(-0.5 * (dim as f64 + 2.0 * sigma))
}

/// Cell-pair matrix for one offset at a given quadrature depth.
fn compute_local(dim: usize, sigma: f64, delta: &IVec, depth: usize) -> LocalMatrix {
    let verts = local_vertices(dim, delta);
    let l = verts.len();
    let mut acc = vec![0.0; l * l];
    let legendre = GaussRule::legendre(depth);
    let jacobi = GaussRule::jacobi(depth, 1.0 - 2.0 * sigma);
    let expo = -0.5 * (dim as f64 + 2.0 * sigma);

    for sub in 0..1usize << dim {
        // per axis: lower half [Δ-1, Δ] or upper half [Δ, Δ+1] of the z-range
        let mut lo = [0.0; MAX_DIM];
        let mut sign = [0.0; MAX_DIM];
        let mut singular = true;
        for d in 0..dim {
            let upper = (sub >> d) & 1 == 1;
            let a = if upper { delta[d] } else { delta[d] - 1 };
            lo[d] = a as f64;
            if a == 0 {
                sign[d] = 1.0;
            } else if a + 1 == 0 {
                sign[d] = -1.0;
            } else {
                singular = false;
            }
        }
        if singular {
            // Duffy split: the largest |z_d| is ρ, the others ρ·t
            let tcount = legendre.nodes.len().pow(dim as u32 - 1);
            for j in 0..dim {
                for (&rho, &wr) in jacobi.nodes.iter().zip(&jacobi.weights) {
                    for tk in 0..tcount {
                        let mut rem = tk;
                        let mut w = [0.0; MAX_DIM];
                        let mut wt = 1.0;
                        for d in 0..dim {
                            if d == j {
                                w[d] = 1.0;
                            } else {
                                let i = rem % legendre.nodes.len();
                                rem /= legendre.nodes.len();
                                w[d] = legendre.nodes[i];
                                wt *= legendre.weights[i];
                            }
                        }
                        let wn2: f64 = w[..dim].iter().map(|c| c * c).sum();
                        let mut z = [0.0; MAX_DIM];
                        for d in 0..dim {
                            z[d] = sign[d] * rho * w[d];
                        }
                        let weight = wr * wt * wn2.powf(expo) / (rho * rho);
                        accumulate_moments(dim, delta, &verts, &z, weight, &mut acc);
                    }
                }
            }
        } else {
            let m = legendre.nodes.len();
            for k in 0..m.pow(dim as u32) {
                let mut rem = k;
                let mut z = [0.0; MAX_DIM];
                let mut wq = 1.0;
                for d in 0..dim {
                    let i = rem % m;
                    rem /= m;
                    z[d] = lo[d] + legendre.nodes[i];
                    wq *= legendre.weights[i];
                }
                let weight = wq * kernel(&z, dim, sigma);
                accumulate_moments(dim, delta, &verts, &z, weight, &mut acc);
            }
        }
    }
    for a in 0..l {
        for b in 0..a {
            acc[a * l + b] = acc[b * l + a];
        }
    }
    LocalMatrix { vertices: verts, values: acc }
}

/// Axis permutation and reflections taking `delta` to its canonical
/// representative (absolute values, sorted descending).
fn canonical_transform(delta: &IVec, dim: usize) -> (IVec, [usize; MAX_DIM], [bool; MAX_DIM]) {
    let mut perm: Vec<usize> = (0..dim).collect();
    perm.sort_by(|&a, &b| delta[b].abs().cmp(&delta[a].abs()).then(a.cmp(&b)));
    let mut canon = [0i64; MAX_DIM];
    let mut p = [0usize; MAX_DIM];
    let mut flip = [false; MAX_DIM];
    for i in 0..dim {
        p[i] = perm[i];
        canon[i] = delta[perm[i]].abs();
        flip[i] = delta[perm[i]] < 0;
    }
    (canon, p, flip)
}

fn apply_transform(v: &IVec, dim: usize, perm: &[usize; MAX_DIM], flip: &[bool; MAX_DIM]) -> IVec {
    let mut q = [0i64; MAX_DIM];
    for i in 0..dim {
        let c = v[perm[i]];
        q[i] = if flip[i] { 1 - c } else { c };
    }
    q
}

/// Every axis permutation combined with every set of reflections.
fn hyperoctahedral(dim: usize) -> Vec<([usize; MAX_DIM], [bool; MAX_DIM])> {
    let perms: Vec<Vec<usize>> = match dim {
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]],
    };
    let mut out = Vec::new();
    for p in &perms {
        for bits in 0..1usize << dim {
            let mut perm = [0usize; MAX_DIM];
            let mut flip = [false; MAX_DIM];
            for i in 0..dim {
                perm[i] = p[i];
                flip[i] = (bits >> i) & 1 == 1;
            }
            out.push((perm, flip));
        }
    }
    out
}

/// Average over the symmetries fixing `c`, summed in sorted order so that
/// the result is exactly invariant under them.
fn symmetrize(dim: usize, c: &IVec, m: LocalMatrix) -> LocalMatrix {
    let group: Vec<Vec<usize>> = hyperoctahedral(dim)
        .into_iter()
        .filter(|(perm, flip)| {
            (0..dim).all(|i| {
                let v = c[perm[i]];
                (if flip[i] { -v } else { v }) == c[i]
            })
        })
        .map(|(perm, flip)| {
            m.vertices
                .iter()
                .map(|v| m.position(&apply_transform(v, dim, &perm, &flip)).expect("stabilizer maps the pair to itself"))
                .collect()
        })
        .collect();
    let l = m.len();
    let mut values = vec![0.0; l * l];
    let mut terms = Vec::with_capacity(group.len());
    for a in 0..l {
        for b in 0..l {
            terms.clear();
            terms.extend(group.iter().map(|g| m.get(g[a], g[b])));
            terms.sort_by(f64::total_cmp);
            values[a * l + b] = terms.iter().sum::<f64>() / group.len() as f64;
        }
    }
    LocalMatrix { vertices: m.vertices, values }
}

impl NearTable {
    /// Build the table for `|Δ|_∞ ≤ radius`.
    ///
    /// Each canonical offset is integrated at `depth` and `depth + 4`; the
    /// finer result is kept and the largest relative change must stay below
    /// `1e-6`. Other offsets are obtained by permuting vertices, so the table
    /// is exactly invariant under axis permutations and reflections.
    pub fn build_with_radius(dim: usize, sigma: f64, depth: usize, radius: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(invalid(format!("dimension must be 1, 2 or 3 (got {dim})")));
        }
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(invalid(format!("sigma must lie in (0, 1) (got {sigma})")));
        }
        if depth < 4 {
            return Err(invalid(format!("quadrature depth must be at least 4 (got {depth})")));
        }
        if radius < 1 {
            return Err(invalid("near radius must be at least 1"));
        }
        let offsets = band_offsets(dim, radius);
        let mut canon: BTreeSet<IVec> = BTreeSet::new();
        for d in &offsets {
            canon.insert(canonical_transform(d, dim).0);
        }
        let canon: Vec<IVec> = canon.into_iter().collect();
        let computed: Vec<(IVec, LocalMatrix, f64)> = canon
            .par_iter()
            .map(|c| {
                let coarse = compute_local(dim, sigma, c, depth);
                let fine = compute_local(dim, sigma, c, depth + DEPTH_CHECK_INCREMENT);
                let scale = fine.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let diff = coarse.values.iter().zip(&fine.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                (*c, symmetrize(dim, c, fine), if scale > 0.0 { diff / scale } else { 0.0 })
            })
            .collect();
        let mut error_estimate = 0.0f64;
        let mut by_canon = BTreeMap::new();
        for (c, m, err) in computed {
            if !(err <= NEAR_TOLERANCE) {
                return Err(Error::NearFieldQuadrature { change: err, depth: depth + DEPTH_CHECK_INCREMENT });
            }
            error_estimate = error_estimate.max(err);
            by_canon.insert(c, m);
        }
        let entries = offsets
            .iter()
            .map(|delta| {
                let (c, perm, flip) = canonical_transform(delta, dim);
                let base = &by_canon[&c];
                let verts = local_vertices(dim, delta);
                let map: Vec<usize> = verts
                    .iter()
                    .map(|v| {
                        base.position(&apply_transform(v, dim, &perm, &flip))
                            .expect("transformed vertex belongs to the canonical pair")
                    })
                    .collect();
                let l = verts.len();
                let mut values = vec![0.0; l * l];
                for a in 0..l {
                    for b in 0..l {
                        values[a * l + b] = base.get(map[a], map[b]);
                    }
                }
                LocalMatrix { vertices: verts, values }
            })
            .collect();
        Ok(Self { dim, sigma, radius, depth, error_estimate, entries })
    }

    pub fn build(dim: usize, sigma: f64, depth: usize) -> Result<Self> {
        Self::build_with_radius(dim, sigma, depth, DEFAULT_NEAR_RADIUS)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Largest relative change between the two quadrature depths.
    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    pub fn offsets(&self) -> Vec<IVec> {
        band_offsets(self.dim, self.radius)
    }

    /// Unit-grid matrix of the cell pair `(K₀, K_Δ)`; `None` outside the band.
    pub fn local(&self, delta: &[i64]) -> Option<&LocalMatrix> {
        let mut d = [0i64; MAX_DIM];
        d[..self.dim].copy_from_slice(delta.get(..self.dim)?);
        band_index(&d, self.dim, self.radius).map(|i| &self.entries[i])
    }

    /// Same matrix for spacing `h`: every entry times `h^{n-2σ}`.
    pub fn scaled_local(&self, delta: &[i64], h: f64) -> Option<Vec<f64>> {
        let s = h.powf(self.dim as f64 - 2.0 * self.sigma);
        self.local(delta).map(|m| m.values.iter().map(|v| v * s).collect())
    }

    /// Near-band contribution to the matrix entry between node `0` and node
    /// `delta` on the infinite unit lattice (all cells active).
    ///
    /// Off-diagonal values are the negated pair coupling; the diagonal is
    /// the near part of the self-interaction.
    pub fn lattice_entry(&self, delta: &[i64]) -> f64 {
        let dim = self.dim;
        let r = self.radius as i64;
        let mut target = [0i64; MAX_DIM];
        target[..dim].copy_from_slice(&delta[..dim]);
        let span = (2 * r + 2) as usize;
        let mut terms = Vec::new();
        for k in 0..span.pow(dim as u32) {
            let mut rem = k;
            let mut cell = [0i64; MAX_DIM];
            for cd in cell.iter_mut().take(dim) {
                *cd = (rem % span) as i64 - r - 1;
                rem /= span;
            }
            for off in self.offsets() {
                let m = self.local(&off[..dim]).expect("offset is in the band");
                let mut a = [0i64; MAX_DIM];
                let mut b = [0i64; MAX_DIM];
                for d in 0..dim {
                    a[d] = -cell[d];
                    b[d] = target[d] - cell[d];
                }
                if let (Some(ia), Some(ib)) = (m.position(&a), m.position(&b)) {
                    terms.push(m.get(ia, ib));
                }
            }
        }
        // fixed summation order so symmetric offsets give identical sums
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    }
}

/// Spec-level entry point: the table for the default near radius.
pub fn build_near_table(n: usize, sigma: f64, depth: usize) -> Result<NearTable> {
    NearTable::build(n, sigma, depth)
}

/// Assembly knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleOptions {
    pub near_radius: usize,
    pub depth: usize,
    pub dense_limit: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self { near_radius: DEFAULT_NEAR_RADIUS, depth: DEFAULT_DEPTH, dense_limit: DENSE_LIMIT }
    }
}

#[derive(Debug, Clone)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Operator {
    Dense(Vec<f64>),
    MatrixFree {
        /// near band, far entries inside the band and the full diagonal
        band: Csr,
        /// `|δ|^{-n-2σ}` indexed by per-axis node offsets
        ktab: Vec<f64>,
        separation: i64,
    },
}

/// Assembled regional form on the active nodes of a mask.
#[derive(Debug)]
pub struct RegionalForm {
    mask: DomainMask,
    sigma: f64,
    near_radius: usize,
    layout: NodeLayout,
    /// `h^{n-2σ}`
    scale: f64,
    /// node weights on the unit grid (incident fraction)
    mass_unit: Vec<f64>,
    op: Operator,
    diag_unit: Vec<f64>,
    kappa_unit: OnceLock<Vec<f64>>,
}

struct NodeGeom<'a> {
    dim: usize,
    nodes: [usize; MAX_DIM],
    cells: [usize; MAX_DIM],
    mask: &'a DomainMask,
}

impl NodeGeom<'_> {
    fn coords(&self, mut idx: usize) -> IVec {
        let mut c = [0i64; MAX_DIM];
        for d in 0..self.dim {
            c[d] = (idx % self.nodes[d]) as i64;
            idx /= self.nodes[d];
        }
        c
    }

    fn node(&self, c: &IVec) -> Option<usize> {
        let mut idx = 0;
        for d in (0..self.dim).rev() {
            if c[d] < 0 || c[d] >= self.nodes[d] as i64 {
                return None;
            }
            idx = idx * self.nodes[d] + c[d] as usize;
        }
        Some(idx)
    }

    fn active_cell(&self, c: &IVec) -> bool {
        let mut idx = 0;
        for d in (0..self.dim).rev() {
            if c[d] < 0 || c[d] >= self.cells[d] as i64 {
                return false;
            }
            idx = idx * self.cells[d] + c[d] as usize;
        }
        self.mask.is_active(idx)
    }

    /// Active cells having node `p` as a vertex.
    fn incident_cells(&self, p: &IVec) -> Vec<IVec> {
        (0..1usize << self.dim)
            .filter_map(|bits| {
                let mut c = *p;
                for (d, cd) in c.iter_mut().enumerate().take(self.dim) {
                    *cd -= ((bits >> d) & 1) as i64;
                }
                self.active_cell(&c).then_some(c)
            })
            .collect()
    }

    fn ktab_index(&self, delta: &IVec) -> usize {
        let mut idx = 0;
        for d in (0..self.dim).rev() {
            idx = idx * self.nodes[d] + delta[d].unsigned_abs() as usize;
        }
        idx
    }
}

fn chebyshev(a: &IVec, dim: usize) -> i64 {
    a[..dim].iter().map(|v| v.abs()).max().unwrap_or(0)
}

impl RegionalForm {
    /// Assemble with default options.
    pub fn new(mask: &DomainMask, sigma: f64) -> Result<Self> {
        Self::with_options(mask, sigma, &AssembleOptions::default())
    }

    pub fn with_options(mask: &DomainMask, sigma: f64, opts: &AssembleOptions) -> Result<Self> {
        let table = NearTable::build_with_radius(mask.grid().dim(), sigma, opts.depth, opts.near_radius)?;
        Self::assemble_with(mask, &table, opts.dense_limit)
    }

    /// Assemble against a prebuilt table (its `n`, `σ` and radius are used).
    pub fn assemble_with(mask: &DomainMask, table: &NearTable, dense_limit: usize) -> Result<Self> {
        let grid = mask.grid();
        let dim = grid.dim();
        if table.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: table.dim() });
        }
        if mask.active_count() == 0 {
            return Err(Error::EmptyDomain);
        }
        let sigma = table.sigma();
        let radius = table.radius() as i64;
        let layout = mask.node_layout();
        let nd = layout.num_dofs();
        let mut nodes = [1usize; MAX_DIM];
        let mut cells = [1usize; MAX_DIM];
        for d in 0..dim {
            nodes[d] = grid.nodes_per_axis(d);
            cells[d] = grid.cells_per_axis()[d];
        }
        let geom = NodeGeom { dim, nodes, cells, mask };
        let full = (1usize << dim) as f64;
        let inv_pairs = 1.0 / (full * full);
        let expo = -0.5 * (dim as f64 + 2.0 * sigma);

        let mut ktab = vec![0.0; grid.num_nodes()];
        for (i, k) in ktab.iter_mut().enumerate() {
            let c = geom.coords(i);
            let r2: f64 = c[..dim].iter().map(|v| (v * v) as f64).sum();
            *k = if i == 0 { 0.0 } else { r2.powf(expo) };
        }

        // near band, ordered cell pairs in lexicographic order
        let mut near: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let offsets = table.offsets();
        for cell in mask.active_cells() {
            let cc = grid.cell_coords(cell);
            let mut k0 = [0i64; MAX_DIM];
            for d in 0..dim {
                k0[d] = cc[d] as i64;
            }
            for off in &offsets {
                let mut l = k0;
                for d in 0..dim {
                    l[d] += off[d];
                }
                if !geom.active_cell(&l) {
                    continue;
                }
                let m = table.local(&off[..dim]).expect("offset is in the band");
                let dofs: Vec<usize> = m
                    .vertices
                    .iter()
                    .map(|v| {
                        let mut p = k0;
                        for d in 0..dim {
                            p[d] += v[d];
                        }
                        geom.node(&p).map_or(usize::MAX, |n| layout.dof[n])
                    })
                    .collect();
                for (a, &da) in dofs.iter().enumerate() {
                    if da == usize::MAX {
                        continue;
                    }
                    for (b, &db) in dofs.iter().enumerate() {
                        if db == usize::MAX {
                            continue;
                        }
                        *near.entry((da, db)).or_insert(0.0) += m.get(a, b);
                    }
                }
            }
        }

        let incident: Vec<f64> = layout.incident.iter().map(|&c| c as f64).collect();
        let domain_coords: Vec<IVec> = layout.domain.iter().map(|&n| geom.coords(n)).collect();
        let separation = radius + 2;

        // far weight between node a and domain node b for band offsets
        let band_far_weight = |pa: &IVec, pb: &IVec, ca: f64, cb: f64| -> f64 {
            let ka = geom.incident_cells(pa);
            let kb = geom.incident_cells(pb);
            let mut near_pairs = 0usize;
            for k in &ka {
                for l in &kb {
                    let mut diff = [0i64; MAX_DIM];
                    for d in 0..dim {
                        diff[d] = l[d] - k[d];
                    }
                    if chebyshev(&diff, dim) <= radius {
                        near_pairs += 1;
                    }
                }
            }
            (ca * cb - near_pairs as f64) * inv_pairs
        };

        let dense = nd <= dense_limit;
        // row-wise far contributions: (diagonal, explicit off-diagonals)
        let rows: Vec<(f64, Vec<(usize, f64)>)> = layout
            .active
            .par_iter()
            .map(|&na| {
                let pa = geom.coords(na);
                let ca = incident[na];
                let mut diag = 0.0;
                let mut off: Vec<(usize, f64)> = Vec::new();
                for (j, &nb) in layout.domain.iter().enumerate() {
                    if nb == na {
                        continue;
                    }
                    let pb = domain_coords[j];
                    let mut delta = [0i64; MAX_DIM];
                    for d in 0..dim {
                        delta[d] = pb[d] - pa[d];
                    }
                    let cheb = chebyshev(&delta, dim);
                    let cb = incident[nb];
                    let k = ktab[geom.ktab_index(&delta)];
                    let w = if cheb < separation {
                        band_far_weight(&pa, &pb, ca, cb) * k
                    } else {
                        ca * cb * inv_pairs * k
                    };
                    if w == 0.0 {
                        continue;
                    }
                    diag += 2.0 * w;
                    let db = layout.dof[nb];
                    if db != usize::MAX && (dense || cheb < separation) {
                        off.push((db, -2.0 * w));
                    }
                }
                (diag, off)
            })
            .collect();

        let (op, diag_unit) = if dense {
            let mut a = vec![0.0; nd * nd];
            for (&(i, j), &v) in &near {
                a[i * nd + j] += v;
            }
            for (i, (diag, off)) in rows.iter().enumerate() {
                a[i * nd + i] += diag;
                for &(j, v) in off {
                    a[i * nd + j] += v;
                }
            }
            for i in 0..nd {
                for j in 0..i {
                    let s = 0.5 * (a[i * nd + j] + a[j * nd + i]);
                    a[i * nd + j] = s;
                    a[j * nd + i] = s;
                }
            }
            let diag = (0..nd).map(|i| a[i * nd + i]).collect();
            (Operator::Dense(a), diag)
        } else {
            let mut entries = near;
            for (i, (diag, off)) in rows.iter().enumerate() {
                *entries.entry((i, i)).or_insert(0.0) += diag;
                for &(j, v) in off {
                    *entries.entry((i, j)).or_insert(0.0) += v;
                }
            }
            let keys: Vec<(usize, usize)> = entries.keys().cloned().collect();
            for (i, j) in keys {
                if j < i {
                    let s = 0.5 * (entries[&(i, j)] + entries.get(&(j, i)).copied().unwrap_or(0.0));
                    entries.insert((i, j), s);
                    entries.insert((j, i), s);
                }
            }
            let mut row_ptr = vec![0usize; nd + 1];
            let mut cols = Vec::with_capacity(entries.len());
            let mut vals = Vec::with_capacity(entries.len());
            let mut diag = vec![0.0; nd];
            for (&(i, j), &v) in &entries {
                row_ptr[i + 1] += 1;
                cols.push(j);
                vals.push(v);
                if i == j {
                    diag[i] = v;
                }
            }
            for i in 0..nd {
                row_ptr[i + 1] += row_ptr[i];
            }
            (Operator::MatrixFree { band: Csr { row_ptr, cols, vals }, ktab, separation }, diag)
        };

        let h = grid.spacing();
        let mass_unit = layout.active.iter().map(|&n| incident[n] / full).collect();
        Ok(Self {
            mask: mask.clone(),
            sigma,
            near_radius: table.radius(),
            layout,
            scale: h.powf(dim as f64 - 2.0 * sigma),
            mass_unit,
            op,
            diag_unit,
            kappa_unit: OnceLock::new(),
        })
    }

    pub fn mask(&self) -> &DomainMask {
        &self.mask
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mask.grid().dim()
    }

    pub fn near_radius(&self) -> usize {
        self.near_radius
    }

    pub fn layout(&self) -> &NodeLayout {
        &self.layout
    }

    pub fn num_dofs(&self) -> usize {
        self.layout.num_dofs()
    }

    pub fn spacing(&self) -> f64 {
        self.mask.grid().spacing()
    }

    /// The factor `h^{n-2σ}` relating the form to its unit-grid version.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.op, Operator::Dense(_))
    }

    /// Lumped node weights `m_i = h^n · (active incident cells)/2^n`.
    pub fn node_weights(&self) -> Vec<f64> {
        let vol = self.mask.grid().cell_volume();
        self.mass_unit.iter().map(|m| m * vol).collect()
    }

    pub(crate) fn mass_unit(&self) -> &[f64] {
        &self.mass_unit
    }

    pub(crate) fn diag_unit(&self) -> &[f64] {
        &self.diag_unit
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.num_dofs() {
            return Err(Error::DimensionMismatch { expected: self.num_dofs(), got: u.len() });
        }
        Ok(())
    }

    /// Unit-grid product `A₁ u` (no `h` factor).
    pub(crate) fn apply_unit_into(&self, u: &[f64], out: &mut [f64]) {
        let nd = self.num_dofs();
        match &self.op {
            Operator::Dense(a) => {
                out.par_iter_mut().enumerate().for_each(|(i, o)| {
                    let row = &a[i * nd..(i + 1) * nd];
                    *o = row.iter().zip(u).map(|(x, y)| x * y).sum();
                });
            }
            Operator::MatrixFree { band, ktab, separation } => {
                let g = self.mask.grid();
                let dim = g.dim();
                let mut nodes = [1usize; MAX_DIM];
                let mut cells = [1usize; MAX_DIM];
                for d in 0..dim {
                    nodes[d] = g.nodes_per_axis(d);
                    cells[d] = g.cells_per_axis()[d];
                }
                let geom = NodeGeom { dim, nodes, cells, mask: &self.mask };
                let coords: Vec<IVec> = self.layout.active.iter().map(|&n| geom.coords(n)).collect();
                // active nodes have all 2^n cells, so far weights are plain kernel values
                out.par_iter_mut().enumerate().for_each(|(i, o)| {
                    let mut s = 0.0;
                    for k in band.row_ptr[i]..band.row_ptr[i + 1] {
                        s += band.vals[k] * u[band.cols[k]];
                    }
                    let pa = coords[i];
                    let mut far = 0.0;
                    for (j, pb) in coords.iter().enumerate() {
                        let mut delta = [0i64; MAX_DIM];
                        for d in 0..dim {
                            delta[d] = pb[d] - pa[d];
                        }
                        if chebyshev(&delta, dim) >= *separation {
                            far += ktab[geom.ktab_index(&delta)] * u[j];
                        }
                    }
                    *o = s - 2.0 * far;
                });
            }
        }
    }

    /// `A u`: the discrete regional fractional Laplacian applied to `u`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let mut out = vec![0.0; u.len()];
        self.apply_unit_into(u, &mut out);
        for o in &mut out {
            *o *= self.scale;
        }
        Ok(out)
    }

    /// `⟨A u, u⟩`.
    pub fn energy(&self, u: &[f64]) -> Result<f64> {
        let au = self.apply(u)?;
        Ok(dot(&au, u))
    }

    /// `⟨A u, v⟩`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len(v)?;
        let au = self.apply(u)?;
        Ok(dot(&au, v))
    }

    /// Complement potential `κ_i = ∫_{ℝⁿ∖Ω_h} |x_i-y|^{-n-2σ} dy` per active node.
    pub fn kappa(&self) -> Vec<f64> {
        let s = self.spacing().powf(-2.0 * self.sigma);
        self.kappa_unit().iter().map(|k| k * s).collect()
    }

    fn kappa_unit(&self) -> &[f64] {
        self.kappa_unit.get_or_init(|| compute_kappa_unit(&self.mask, &self.layout, self.sigma))
    }

    /// `I_{ℝⁿ}[u] = B_Ω[u,u] + 2 Σ m_i u_i² κ_i` for `u` extended by zero.
    pub fn full_space_form(&self, u: &[f64]) -> Result<f64> {
        let regional = self.energy(u)?;
        Ok(regional + self.complement_term(u)?)
    }

    /// `2 Σ m_i u_i² κ_i`.
    pub fn complement_term(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        let m = self.node_weights();
        let k = self.kappa();
        Ok(2.0 * u.iter().zip(&m).zip(&k).map(|((ui, mi), ki)| mi * ui * ui * ki).sum::<f64>())
    }

    /// Dense copy of `A` (row-major, physical scaling).
    pub fn to_dense(&self) -> Vec<f64> {
        let nd = self.num_dofs();
        match &self.op {
            Operator::Dense(a) => a.iter().map(|v| v * self.scale).collect(),
            Operator::MatrixFree { .. } => {
                let mut out = vec![0.0; nd * nd];
                let mut e = vec![0.0; nd];
                let mut col = vec![0.0; nd];
                for j in 0..nd {
                    e[j] = 1.0;
                    self.apply_unit_into(&e, &mut col);
                    e[j] = 0.0;
                    for i in 0..nd {
                        out[i * nd + j] = col[i] * self.scale;
                    }
                }
                out
            }
        }
    }

    /// Values on every grid node (zero off the active nodes).
    pub fn extend_to_grid(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mask.grid().num_nodes()];
        for (i, &n) in self.layout.active.iter().enumerate() {
            out[n] = u[i];
        }
        out
    }

    /// Physical positions of the active nodes.
    pub fn dof_positions(&self) -> Vec<[f64; MAX_DIM]> {
        let g = self.mask.grid();
        self.layout.active.iter().map(|&n| g.node_position(n)).collect()
    }

    /// Binary dump: `RFRM`, n (u32), σ (f64), node count (u64), then `A`
    /// row-major and `κ`, all little-endian.
    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"RFRM")?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&self.sigma.to_le_bytes())?;
        w.write_all(&(self.num_dofs() as u64).to_le_bytes())?;
        for v in self.to_dense() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.kappa() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn dump_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn dump_to_file(&self, path: &Path, force: bool) -> Result<()> {
        crate::io::atomic_write(path, &self.dump_bytes(), force)
    }
}

/// Spec-level entry point.
pub fn assemble(mask: &DomainMask, sigma: f64, table: &NearTable) -> Result<RegionalForm> {
    if (table.sigma() - sigma).abs() > 0.0 {
        return Err(invalid(format!("near table built for sigma {} but {sigma} requested", table.sigma())));
    }
    RegionalForm::assemble_with(mask, table, DENSE_LIMIT)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const KAPPA_REFINE: usize = 4;
const KAPPA_REFINE_DIST: f64 = 2.0;

/// Exterior of the grid box seen from a point: `(1/2σ)∫_{S} r(ω)^{-2σ} dω`
/// written as a sum over faces. Unit-grid coordinates.
fn box_exterior(p: &[f64; MAX_DIM], extent: &[f64; MAX_DIM], dim: usize, sigma: f64) -> f64 {
    let two_s = 2.0 * sigma;
    let mut total = 0.0;
    for axis in 0..dim {
        for a in [p[axis], extent[axis] - p[axis]] {
            let pre = a.powf(-two_s) / two_s;
            let others: Vec<usize> = (0..dim).filter(|&d| d != axis).collect();
            let face = match dim {
                1 => 1.0,
                2 => {
                    let e = others[0];
                    let t0 = (-p[e] / a).atan();
                    let t1 = ((extent[e] - p[e]) / a).atan();
                    adaptive_gk(|t: f64| t.cos().powf(two_s), t0, t1, 1e-15, 1e-14, 2000)
                        .map(|r| r.value)
                        .expect("smooth integrand")
                }
                _ => {
                    let (e, f) = (others[0], others[1]);
                    let t0 = (-p[e] / a).atan();
                    let t1 = ((extent[e] - p[e]) / a).atan();
                    let (s0, s1) = (-p[f], extent[f] - p[f]);
                    adaptive_gk(
                        |t: f64| {
                            let c = t.cos();
                            let f0 = (s0 * c / a).atan();
                            let f1 = (s1 * c / a).atan();
                            let inner = adaptive_gk(|q: f64| q.cos().powf(1.0 + two_s), f0, f1, 1e-15, 1e-14, 2000)
                                .map(|r| r.value)
                                .expect("smooth integrand");
                            c.powf(two_s) * inner
                        },
                        t0,
                        t1,
                        1e-15,
                        1e-13,
                        2000,
                    )
                    .map(|r| r.value)
                    .expect("smooth integrand")
                }
            };
            total += pre * face;
        }
    }
    total
}

fn compute_kappa_unit(mask: &DomainMask, layout: &NodeLayout, sigma: f64) -> Vec<f64> {
    let g = mask.grid();
    let dim = g.dim();
    let expo = -0.5 * (dim as f64 + 2.0 * sigma);
    let mut extent = [0.0; MAX_DIM];
    for d in 0..dim {
        extent[d] = g.cells_per_axis()[d] as f64;
    }
    let inactive: Vec<[f64; MAX_DIM]> = (0..g.num_cells())
        .filter(|&c| !mask.is_active(c))
        .map(|c| {
            let cc = g.cell_coords(c);
            let mut lo = [0.0; MAX_DIM];
            for d in 0..dim {
                lo[d] = cc[d] as f64;
            }
            lo
        })
        .collect();
    let sub = KAPPA_REFINE.pow(dim as u32);
    let sub_w = 1.0 / sub as f64;
    layout
        .active
        .par_iter()
        .map(|&n| {
            let nc = g.node_coords(n);
            let mut p = [0.0; MAX_DIM];
            for d in 0..dim {
                p[d] = nc[d] as f64;
            }
            let mut s = 0.0;
            for lo in &inactive {
                // distance from the node to the cell
                let mut d2 = 0.0;
                for d in 0..dim {
                    let gap = (lo[d] - p[d]).max(p[d] - lo[d] - 1.0).max(0.0);
                    d2 += gap * gap;
                }
                if d2.sqrt() <= KAPPA_REFINE_DIST {
                    for k in 0..sub {
                        let mut rem = k;
                        let mut r2 = 0.0;
                        for d in 0..dim {
                            let i = rem % KAPPA_REFINE;
                            rem /= KAPPA_REFINE;
                            let x = lo[d] + (i as f64 + 0.5) / KAPPA_REFINE as f64 - p[d];
                            r2 += x * x;
                        }
                        s += sub_w * r2.powf(expo);
                    }
                } else {
                    let mut r2 = 0.0;
                    for d in 0..dim {
                        let x = lo[d] + 0.5 - p[d];
                        r2 += x * x;
                    }
                    s += r2.powf(expo);
                }
            }
            s + box_exterior(&p, &extent, dim, sigma)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_mask, GridSpec, Shape};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn ball_form(cells: usize, sigma: f64) -> RegionalForm {
        let g = GridSpec::cube(2, cells, -1.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
        RegionalForm::new(&m, sigma).unwrap()
    }

    #[test]
    fn local_matrices_annihilate_constants() {
        // (1,…,1) gives u(x) - u(y) = 0 on the pair
        for dim in 1..=3 {
            let t = NearTable::build(dim, 0.6, 6).unwrap();
            for off in t.offsets() {
                let m = t.local(&off[..dim]).unwrap();
                let l = m.len();
                for a in 0..l {
                    let row: f64 = (0..l).map(|b| m.get(a, b)).sum();
                    let scale = (0..l).map(|b| m.get(a, b).abs()).fold(0.0, f64::max);
                    assert!(row.abs() <= 1e-10 * scale.max(1e-300), "dim {dim} off {off:?}: {row}");
                }
            }
        }
    }

    #[test]
    fn table_symmetry_is_exact() {
        let t = NearTable::build(2, 0.75, 8).unwrap();
        let a = t.lattice_entry(&[1, 0]);
        assert_eq!(a, t.lattice_entry(&[0, 1]));
        assert_eq!(a, t.lattice_entry(&[-1, 0]));
        assert_eq!(t.lattice_entry(&[1, 2]), t.lattice_entry(&[-2, -1]));
    }

    #[test]
    fn lattice_couplings_finite_and_attractive() {
        let t = NearTable::build(2, 0.75, 8).unwrap();
        assert!(t.error_estimate() < 1e-6);
        for off in t.offsets() {
            let v = t.lattice_entry(&off[..2]);
            assert!(v.is_finite());
            if off[..2] == [0, 0] {
                assert!(v > 0.0);
            } else {
                assert!(v < 0.0, "offset {off:?}: {v}");
            }
        }
    }

    #[test]
    fn depth_must_be_at_least_four() {
        assert!(NearTable::build(2, 0.5, 3).is_err());
    }

    #[test]
    fn apply_zero_and_energy_consistency() {
        let f = ball_form(12, 0.75);
        let n = f.num_dofs();
        assert!(f.apply(&vec![0.0; n]).unwrap().iter().all(|&v| v == 0.0));
        let u = random_vec(n, 1);
        let e = f.energy(&u).unwrap();
        let au = f.apply(&u).unwrap();
        assert_relative_eq!(e, dot(&au, &u), max_relative = 1e-13);
        assert!(e > 0.0);
        assert!(f.apply(&u[..n - 1]).is_err());
    }

    #[test]
    fn full_box_ones_has_positive_response() {
        let g = GridSpec::cube(2, 10, 0.0, 1.0).unwrap();
        let f = RegionalForm::new(&DomainMask::full(g), 0.4).unwrap();
        let ones = vec![1.0; f.num_dofs()];
        assert!(f.apply(&ones).unwrap().iter().all(|&v| v > 0.0));
        assert!(f.energy(&ones).unwrap() > 0.0);
    }

    #[test]
    fn matrix_free_matches_dense() {
        let g = GridSpec::cube(2, 10, -1.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 0.95 }).unwrap();
        let dense = RegionalForm::new(&m, 0.7).unwrap();
        let opts = AssembleOptions { dense_limit: 0, ..AssembleOptions::default() };
        let free = RegionalForm::with_options(&m, 0.7, &opts).unwrap();
        assert!(dense.is_dense() && !free.is_dense());
        let u = random_vec(dense.num_dofs(), 3);
        let a = dense.apply(&u).unwrap();
        let b = free.apply(&u).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * a.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
    }

    #[test]
    fn rescaling_multiplies_entries() {
        let g = GridSpec::cube(2, 8, -1.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
        let sigma = 0.6;
        let a = RegionalForm::new(&m, sigma).unwrap();
        let b = RegionalForm::new(&m.rescaled(2.0).unwrap(), sigma).unwrap();
        let f = 2f64.powf(2.0 - 2.0 * sigma);
        for (x, y) in a.to_dense().iter().zip(b.to_dense()) {
            assert!((x * f - y).abs() <= 1e-13 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn exterior_matches_polar_oracle() {
        // (1/2σ)∫ r(θ)^{-2σ} dθ with r the ray length to the box boundary
        let p = [3.0, 1.5, 0.0];
        let ext = [5.0, 4.0, 0.0];
        let sigma = 0.7;
        let got = box_exterior(&p, &ext, 2, sigma);
        let mut cuts: Vec<f64> = [[0.0, 0.0], [5.0, 0.0], [5.0, 4.0], [0.0, 4.0]]
            .iter()
            .map(|c: &[f64; 2]| (c[1] - p[1]).atan2(c[0] - p[0]).rem_euclid(2.0 * std::f64::consts::PI))
            .collect();
        cuts.push(0.0);
        cuts.push(2.0 * std::f64::consts::PI);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = |t: f64| {
            let dir = [t.cos(), t.sin()];
            let mut best = f64::INFINITY;
            for d in 0..2 {
                if dir[d] > 0.0 {
                    best = best.min((ext[d] - p[d]) / dir[d]);
                } else if dir[d] < 0.0 {
                    best = best.min(-p[d] / dir[d]);
                }
            }
            best
        };
        let rule = GaussRule::legendre(40);
        let mut oracle = 0.0;
        for w in cuts.windows(2) {
            oracle += rule.integrate(w[0], w[1], |t| r(t).powf(-2.0 * sigma));
        }
        oracle /= 2.0 * sigma;
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
    }

    #[test]
    fn exterior_1d_closed_form() {
        let got = box_exterior(&[2.0, 0.0, 0.0], &[5.0, 0.0, 0.0], 1, 0.3);
        let expect = (2f64.powf(-0.6) + 3f64.powf(-0.6)) / 0.6;
        assert_relative_eq!(got, expect, max_relative = 1e-14);
    }

    #[test]
    fn exterior_3d_between_tail_bounds() {
        // cube of half side 4 around the point: tail(4√3) ≤ κ ≤ tail(4)
        let sigma = 0.5;
        let got = box_exterior(&[4.0, 4.0, 4.0], &[8.0, 8.0, 8.0], 3, sigma);
        let lo = crate::special::tail_integral(3, sigma, 4.0 * 3f64.sqrt()).unwrap();
        let hi = crate::special::tail_integral(3, sigma, 4.0).unwrap();
        assert!(lo < got && got < hi, "{lo} {got} {hi}");
    }

    #[test]
    fn kappa_positive_and_identity() {
        let f = ball_form(12, 0.75);
        assert!(f.kappa().iter().all(|&k| k > 0.0));
        let u = random_vec(f.num_dofs(), 9);
        let full = f.full_space_form(&u).unwrap();
        let reg = f.energy(&u).unwrap();
        let m = f.node_weights();
        let k = f.kappa();
        let comp: f64 = 2.0 * (0..u.len()).map(|i| m[i] * u[i] * u[i] * k[i]).sum::<f64>();
        assert!((full - reg - comp).abs() <= 1e-12 * full);
    }

    #[test]
    fn dump_layout() {
        let f = ball_form(8, 0.6);
        let bytes = f.dump_bytes();
        let n = f.num_dofs();
        assert_eq!(&bytes[..4], b"RFRM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), 0.6);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), n as u64);
        assert_eq!(bytes.len(), 24 + 8 * (n * n + n));
    }
}
