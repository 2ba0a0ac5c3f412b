//! Shape optimization for the first regional eigenvalue: fixed-volume
//! thresholding search, volume-penalized ladder, convex restriction,
//! reduction to one connected component, and boundary growth diagnostics.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::gagliardo::{NearTable, RegionalForm, DEFAULT_DEPTH, DENSE_LIMIT};
use crate::geometry::{DomainMask, GridSpec, MAX_DIM};
use crate::hull::{IPoint, IntHull};
use crate::spectral::{smallest_eigenpair_with, EigenOptions, EigenResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    pub perturb_attempts: usize,
    /// A candidate is accepted iff its objective is below the best one minus this.
    pub accept_tol: f64,
    pub eigen: EigenOptions,
    /// Project every candidate onto discretely convex masks.
    pub convex: bool,
    pub depth: usize,
    pub dense_limit: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 30,
            perturb_attempts: 5,
            accept_tol: 1e-12,
            eigen: EigenOptions::default(),
            convex: false,
            depth: DEFAULT_DEPTH,
            dense_limit: DENSE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub lambda: f64,
    pub volume: f64,
    pub energy: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct ShapeState {
    pub mask: DomainMask,
    pub eigen: EigenResult,
    pub volume: f64,
    /// Weight of the volume in `energy_penalized`.
    pub penalty: f64,
    /// `eigen.lambda + penalty * volume`
    pub energy_penalized: f64,
    pub iteration: usize,
    pub history: Vec<HistoryEntry>,
    /// Set when a later eigen solve failed; the state is the best one before it.
    pub aborted: Option<String>,
}

impl ShapeState {
    fn new(mask: DomainMask, eigen: EigenResult, penalty: f64) -> Self {
        let volume = mask.volume();
        let energy_penalized = eigen.lambda + penalty * volume;
        Self { mask, eigen, volume, penalty, energy_penalized, iteration: 0, history: Vec::new(), aborted: None }
    }

    fn entry(&self, iter: usize, accepted: bool) -> HistoryEntry {
        HistoryEntry { iter, lambda: self.eigen.lambda, volume: self.volume, energy: self.energy_penalized, accepted }
    }

    pub fn summary(&self) -> StateSummary {
        StateSummary {
            lambda: self.eigen.lambda,
            lambda2: self.eigen.lambda2,
            volume: self.volume,
            cells: self.mask.active_count(),
            penalty: self.penalty,
            energy_penalized: self.energy_penalized,
            iteration: self.iteration,
            residual: self.eigen.residual,
            converged: self.eigen.converged,
            components: self.mask.components().len(),
            aborted: self.aborted.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSummary {
    pub lambda: f64,
    pub lambda2: Option<f64>,
    pub volume: f64,
    pub cells: usize,
    pub penalty: f64,
    pub energy_penalized: f64,
    pub iteration: usize,
    pub residual: f64,
    pub converged: bool,
    pub components: usize,
    pub aborted: Option<String>,
}

/// Assembles and solves masks of one dimension and σ, sharing the near table.
pub struct Evaluator {
    table: NearTable,
    opts: OptimizeOptions,
}

impl Evaluator {
    pub fn new(dim: usize, sigma: f64, opts: &OptimizeOptions) -> Result<Self> {
        Ok(Self { table: NearTable::build(dim, sigma, opts.depth)?, opts: opts.clone() })
    }

    pub fn sigma(&self) -> f64 {
        self.table.sigma()
    }

    pub fn form(&self, mask: &DomainMask) -> Result<RegionalForm> {
        RegionalForm::assemble_with(mask, &self.table, self.opts.dense_limit)
    }

    /// First eigenpair; a warm start is transferred node by node from a previous form.
    pub fn solve(&self, mask: &DomainMask, warm: Option<(&RegionalForm, &[f64])>) -> Result<(RegionalForm, EigenResult)> {
        let form = self.form(mask)?;
        let start = warm.map(|(old, u)| transfer(old, u, &form));
        let start = start.filter(|v| v.iter().any(|&x| x > 0.0));
        let r = smallest_eigenpair_with(&form, &self.opts.eigen, start.as_deref())?;
        if !r.converged {
            return Err(Error::NotConverged { iterations: r.iterations, residual: r.residual });
        }
        Ok((form, r))
    }
}

fn transfer(old: &RegionalForm, u: &[f64], new: &RegionalForm) -> Vec<f64> {
    let dof = &old.layout().dof;
    new.layout().active.iter().map(|&node| if dof[node] == usize::MAX { 0.0 } else { u[dof[node]] }).collect()
}

/// Doubled integer coordinates of a cell center (unused axes are 0).
fn doubled_center(grid: &GridSpec, cell: usize) -> IPoint {
    let c = grid.cell_coords(cell);
    let mut p = [0i64; 3];
    for d in 0..grid.dim() {
        p[d] = 2 * c[d] as i64 + 1;
    }
    p
}

fn centroid(grid: &GridSpec, cells: &[usize]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for &c in cells {
        let p = doubled_center(grid, c);
        for d in 0..3 {
            g[d] += p[d] as f64;
        }
    }
    g.map(|v| v / cells.len() as f64)
}

fn dist2(p: &IPoint, g: &[f64; 3]) -> f64 {
    (0..3).map(|d| (p[d] as f64 - g[d]).powi(2)).sum()
}

/// Mean of `u²` over the vertices of every cell (`u` is 0 on inactive nodes).
pub fn cell_scores(form: &RegionalForm, u: &[f64]) -> Vec<f64> {
    let grid = form.mask().grid();
    let full = form.extend_to_grid(u);
    let inv = 1.0 / (1usize << grid.dim()) as f64;
    (0..grid.num_cells()).map(|c| grid.cell_vertices(c).iter().map(|&v| full[v] * full[v]).sum::<f64>() * inv).collect()
}

/// Top `count` cells by score; ties prefer cells of `mask`, then the lower index.
pub fn threshold_candidate(mask: &DomainMask, scores: &[f64], count: usize) -> Result<DomainMask> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then(mask.is_active(b).cmp(&mask.is_active(a))).then(a.cmp(&b))
    });
    order.truncate(count);
    mask.subset(&order)
}

/// Swap the `j`-th lowest-scoring active cell with the `j`-th best inactive
/// cell next to the mask. Inactive cells are ranked by the mean `u²` over the
/// active vertices of their active face neighbours.
pub fn perturbation(form: &RegionalForm, u: &[f64], scores: &[f64], j: usize) -> Result<Option<DomainMask>> {
    let mask = form.mask();
    let grid = mask.grid();
    let layout = form.layout();
    let mut active = mask.active_cells();
    active.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut cands: Vec<(f64, usize)> = mask
        .boundary_adjacent_inactive()
        .into_iter()
        .map(|c| {
            let mut verts: Vec<usize> = grid
                .cell_neighbors(c)
                .into_iter()
                .filter(|&nb| mask.is_active(nb))
                .flat_map(|nb| grid.cell_vertices(nb))
                .filter(|&v| layout.dof[v] != usize::MAX)
                .collect();
            verts.sort_unstable();
            verts.dedup();
            let s = if verts.is_empty() {
                0.0
            } else {
                verts.iter().map(|&v| u[layout.dof[v]].powi(2)).sum::<f64>() / verts.len() as f64
            };
            (s, c)
        })
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    if j >= active.len() || j >= cands.len() || active.len() < 2 {
        return Ok(None);
    }
    let mut cells: Vec<usize> = active.iter().copied().filter(|&c| c != active[j]).collect();
    cells.push(cands[j].1);
    Ok(Some(mask.subset(&cells)?))
}

/// Grow or shrink to `count` cells: keep the active cells closest to the
/// centroid, then add the nearest inactive ones (ties by index).
pub fn resize_mask(mask: &DomainMask, count: usize) -> Result<DomainMask> {
    let grid = mask.grid();
    if count == 0 || count > grid.num_cells() {
        return Err(invalid(format!("cannot resize to {count} cells (grid has {})", grid.num_cells())));
    }
    let g = centroid(grid, &mask.active_cells());
    let mut order: Vec<(bool, f64, usize)> =
        (0..grid.num_cells()).map(|c| (!mask.is_active(c), dist2(&doubled_center(grid, c), &g), c)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let cells: Vec<usize> = order.iter().take(count).map(|t| t.2).collect();
    mask.subset(&cells)
}

/// Cells whose centers lie in the convex hull of the active centers,
/// adjusted to the input volume.
pub fn convexify(mask: &DomainMask) -> Result<DomainMask> {
    convexify_to(mask, mask.active_count())
}

/// Hull mask adjusted to `count` cells: cells are taken in the order
/// (inside the hull first, gauge about the hull centroid, index). Taking
/// the first ones is a homothetic shrink of the hull when it overshoots and
/// adds the closest outside cells when it undershoots.
pub fn convexify_to(mask: &DomainMask, count: usize) -> Result<DomainMask> {
    let grid = mask.grid();
    let active = mask.active_cells();
    if active.is_empty() {
        return Err(Error::EmptyDomain);
    }
    if count == 0 || count > grid.num_cells() {
        return Err(invalid(format!("cannot convexify to {count} cells")));
    }
    let full_neighbors = 2 * grid.dim();
    // interior cells are midpoints of their neighbours and never extreme
    let pts: Vec<IPoint> = active
        .iter()
        .filter(|&&c| {
            let nb = grid.cell_neighbors(c);
            nb.len() < full_neighbors || nb.iter().any(|&n| !mask.is_active(n))
        })
        .map(|&c| doubled_center(grid, c))
        .collect();
    let hull = IntHull::new(&pts);
    let centers: Vec<IPoint> = (0..grid.num_cells()).map(|c| doubled_center(grid, c)).collect();
    let inside: Vec<usize> = (0..grid.num_cells()).filter(|&c| hull.contains(&centers[c])).collect();
    let g = centroid(grid, &inside);
    let mut order: Vec<(bool, f64, f64, usize)> = (0..grid.num_cells())
        .map(|c| {
            let contained = hull.contains(&centers[c]);
            let gauge = hull.gauge(&g, &centers[c]);
            (!contained, gauge, dist2(&centers[c], &g), c)
        })
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)).then(a.3.cmp(&b.3)));
    let cells: Vec<usize> = order.iter().take(count).map(|t| t.3).collect();
    mask.subset(&cells)
}

fn cells_for_volume(grid: &GridSpec, volume: f64) -> Result<usize> {
    let k = volume / grid.cell_volume();
    let r = k.round();
    if !(r >= 1.0) || (k - r).abs() > 1e-9 * r.max(1.0) {
        return Err(invalid(format!("volume {volume} is not a positive multiple of the cell volume {}", grid.cell_volume())));
    }
    Ok(r as usize)
}

/// Minimize λ₁ at fixed volume by eigenfunction thresholding with
/// swap perturbations; returns the best state seen.
pub fn optimize_fixed_measure(
    sigma: f64,
    volume: f64,
    init: &DomainMask,
    opts: &OptimizeOptions,
) -> Result<ShapeState> {
    let ev = Evaluator::new(init.grid().dim(), sigma, opts)?;
    optimize_fixed_with(&ev, volume, init, 0.0)
}

/// As [`optimize_fixed_measure`] with a shared evaluator; `penalty` only
/// enters the reported energy.
pub fn optimize_fixed_with(ev: &Evaluator, volume: f64, init: &DomainMask, penalty: f64) -> Result<ShapeState> {
    let opts = &ev.opts;
    let count = cells_for_volume(init.grid(), volume)?;
    if init.active_count() != count {
        return Err(invalid(format!(
            "initial mask has {} cells, target volume needs {count}",
            init.active_count()
        )));
    }
    let start = if opts.convex { convexify_to(init, count)? } else { init.clone() };
    let (mut form, eig) = ev.solve(&start, None)?;
    let mut best = ShapeState::new(start, eig, penalty);
    best.history.push(best.entry(0, true));
    let mut tried: Vec<Vec<bool>> = vec![best.mask.flags().to_vec()];

    for iter in 1..=opts.max_iter {
        best.iteration = iter;
        let scores = cell_scores(&form, &best.eigen.u);
        let mut candidates = vec![threshold_candidate(&best.mask, &scores, count)?];
        for j in 0..opts.perturb_attempts {
            if let Some(m) = perturbation(&form, &best.eigen.u, &scores, j)? {
                candidates.push(m);
            }
        }
        let mut accepted = false;
        for cand in candidates {
            let cand = if opts.convex { convexify_to(&cand, count)? } else { cand };
            if tried.iter().any(|f| f.as_slice() == cand.flags()) {
                continue;
            }
            tried.push(cand.flags().to_vec());
            let (cform, ceig) = match ev.solve(&cand, Some((&form, &best.eigen.u))) {
                Ok(r) => r,
                Err(Error::NoInteriorNodes) => continue,
                Err(e) => {
                    log::warn!("optimization stopped at iteration {iter}: {e}");
                    best.aborted = Some(e.to_string());
                    return Ok(best);
                }
            };
            let state = ShapeState::new(cand, ceig, penalty);
            if state.eigen.lambda < best.eigen.lambda - opts.accept_tol {
                let mut history = std::mem::take(&mut best.history);
                history.push(state.entry(iter, true));
                best = ShapeState { history, iteration: iter, ..state };
                form = cform;
                accepted = true;
                break;
            }
            best.history.push(state.entry(iter, false));
        }
        if !accepted {
            break;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderEntry {
    pub index: usize,
    pub cells: usize,
    pub volume: f64,
    pub lambda: f64,
    pub energy: f64,
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct PenalizedResult {
    pub state: ShapeState,
    pub ladder: Vec<LadderEntry>,
    pub best_index: usize,
}

/// Ladder of cell counts `n0·1.2^{(k-4)/4}`, `k = 0..9`.
pub fn volume_ladder(cells0: usize) -> Vec<usize> {
    (0..9).map(|k| ((cells0 as f64) * 1.2f64.powf((k as f64 - 4.0) / 4.0)).round().max(1.0) as usize).collect()
}

/// Minimize `λ₁ + c·|Ω|` over a volume ladder around the initial volume,
/// running the fixed-volume optimizer at each rung.
pub fn optimize_penalized(sigma: f64, penalty: f64, init: &DomainMask, opts: &OptimizeOptions) -> Result<PenalizedResult> {
    if !(penalty > 0.0) || !penalty.is_finite() {
        return Err(invalid(format!("penalty must be positive (got {penalty})")));
    }
    let ev = Evaluator::new(init.grid().dim(), sigma, opts)?;
    let ladder = volume_ladder(init.active_count());
    let hv = init.grid().cell_volume();
    let states: Vec<ShapeState> = ladder
        .par_iter()
        .map(|&k| {
            let start = if k == init.active_count() { init.clone() } else { resize_mask(init, k)? };
            optimize_fixed_with(&ev, k as f64 * hv, &start, penalty)
        })
        .collect::<Result<_>>()?;
    let entries: Vec<LadderEntry> = states
        .iter()
        .enumerate()
        .map(|(i, s)| LadderEntry {
            index: i,
            cells: s.mask.active_count(),
            volume: s.volume,
            lambda: s.eigen.lambda,
            energy: s.energy_penalized,
            aborted: s.aborted.is_some(),
        })
        .collect();
    let mut best_index = 0;
    for (i, s) in states.iter().enumerate() {
        if s.energy_penalized < states[best_index].energy_penalized {
            best_index = i;
        }
    }
    let state = states.into_iter().nth(best_index).expect("nonempty ladder");
    Ok(PenalizedResult { state, ladder: entries, best_index })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentEntry {
    pub index: usize,
    pub cells: usize,
    /// `|{u_i > 0}|`, the component volume.
    pub volume: f64,
    /// `Σ m u_i²` of the L²-normalized input.
    pub mass: f64,
    /// Regional form of `u_i` on its component.
    pub energy: f64,
    /// `(|{u_i>0}| / |{u>0}|)^{1/n}`
    pub r: f64,
    /// `R_i^{2σ} energy/mass + c|{u>0}|`
    pub rescaled_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentReport {
    pub components: Vec<ComponentEntry>,
    pub selected: usize,
    /// `B(u) + c|{u>0}|` for the normalized input.
    pub reference_energy: f64,
    pub total_volume: f64,
    /// Selected component rescaled by `1/R` about its centroid and sampled at
    /// the original cell centers.
    #[serde(skip)]
    pub resampled: Vec<bool>,
    pub resampled_cells: usize,
}

/// Replace a disconnected mask by one rescaled component whose penalized
/// energy does not exceed that of `u`. The positivity set of `u` is taken
/// to be the mask. Single-component masks are returned unchanged.
pub fn component_reduction(
    mask: &DomainMask,
    u: &[f64],
    sigma: f64,
    penalty: f64,
    opts: &OptimizeOptions,
) -> Result<(ShapeState, ComponentReport)> {
    let ev = Evaluator::new(mask.grid().dim(), sigma, opts)?;
    let form = ev.form(mask)?;
    if u.len() != form.num_dofs() {
        return Err(Error::DimensionMismatch { expected: form.num_dofs(), got: u.len() });
    }
    if u.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::NegativeValues);
    }
    let m = form.node_weights();
    let w: f64 = u.iter().zip(&m).map(|(x, mi)| mi * x * x).sum();
    if !(w > 0.0) {
        return Err(Error::UnsupportedFunction("u vanishes on the mask".into()));
    }
    let un: Vec<f64> = u.iter().map(|x| x / w.sqrt()).collect();
    let total = mask.volume();
    let reference = form.energy(&un)? + penalty * total;
    let comps = mask.components();
    let n = mask.grid().dim() as f64;

    if comps.len() == 1 {
        let (_, eig) = ev.solve(mask, Some((&form, u)))?;
        let state = ShapeState::new(mask.clone(), eig, penalty);
        let entry = ComponentEntry {
            index: 0,
            cells: mask.active_count(),
            volume: total,
            mass: 1.0,
            energy: reference - penalty * total,
            r: 1.0,
            rescaled_energy: reference,
        };
        let report = ComponentReport {
            components: vec![entry],
            selected: 0,
            reference_energy: reference,
            total_volume: total,
            resampled: mask.flags().to_vec(),
            resampled_cells: mask.active_count(),
        };
        return Ok((state, report));
    }

    let entries: Vec<(ComponentEntry, DomainMask)> = comps
        .iter()
        .enumerate()
        .map(|(i, cells)| {
            let sub = mask.subset(cells)?;
            let sform = ev.form(&sub)?;
            let ui = transfer(&form, &un, &sform);
            let mi = sform.node_weights();
            let mass: f64 = ui.iter().zip(&mi).map(|(x, w)| w * x * x).sum();
            let energy = if sform.num_dofs() > 0 { sform.energy(&ui)? } else { 0.0 };
            let volume = sub.volume();
            let r = (volume / total).powf(1.0 / n);
            let rescaled_energy =
                if mass > 0.0 { r.powf(2.0 * sigma) * energy / mass + penalty * total } else { f64::INFINITY };
            Ok((ComponentEntry { index: i, cells: cells.len(), volume, mass, energy, r, rescaled_energy }, sub))
        })
        .collect::<Result<_>>()?;
    let mut selected = 0;
    for (i, (e, _)) in entries.iter().enumerate() {
        if e.rescaled_energy < entries[selected].0.rescaled_energy {
            selected = i;
        }
    }
    let (sel, sub) = &entries[selected];
    if !sel.rescaled_energy.is_finite() {
        return Err(Error::UnsupportedFunction("u vanishes on every component".into()));
    }
    let scaled = sub.rescaled(1.0 / sel.r)?;
    let (_, eig) = ev.solve(&scaled, None)?;
    let state = ShapeState::new(scaled, eig, penalty);

    let grid = mask.grid();
    let g = centroid(grid, &comps[selected]);
    let resampled: Vec<bool> = (0..grid.num_cells())
        .map(|c| {
            let p = doubled_center(grid, c);
            // back to grid units, then shrink about the centroid
            let mut x = [0.0; MAX_DIM];
            for d in 0..grid.dim() {
                let q = 0.5 * (g[d] + (p[d] as f64 - g[d]) * sel.r);
                x[d] = grid.origin()[d] + q * grid.spacing();
            }
            sub.contains(&x[..grid.dim()])
        })
        .collect();
    let resampled_cells = resampled.iter().filter(|&&b| b).count();
    let report = ComponentReport {
        components: entries.into_iter().map(|(e, _)| e).collect(),
        selected,
        reference_energy: reference,
        total_volume: total,
        resampled,
        resampled_cells,
    };
    Ok((state, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub point: Vec<f64>,
    pub radius: Vec<f64>,
    pub sup: Vec<f64>,
    pub sup_over_r_sigma: Vec<f64>,
    pub sup_over_r_2sigma_minus_1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthDiagnostics {
    pub sup: f64,
    pub l2: f64,
    /// `‖u‖_∞ / ‖u‖_{L²}`
    pub ratio_sup_l2: f64,
    pub rows: Vec<GrowthRow>,
    pub components: usize,
    /// `|Ω Δ B| / |Ω|` with `B` the discrete ball of equal cell count about the centroid.
    pub asymmetry: f64,
}

/// Number of boundary sample points in [`growth_diagnostics`].
pub const GROWTH_SAMPLES: usize = 20;

pub fn growth_diagnostics(state: &ShapeState, sigma: f64) -> Result<GrowthDiagnostics> {
    let mask = &state.mask;
    let grid = mask.grid();
    let dim = grid.dim();
    let layout = mask.node_layout();
    let u = &state.eigen.u;
    if u.len() != layout.num_dofs() {
        return Err(Error::DimensionMismatch { expected: layout.num_dofs(), got: u.len() });
    }
    let m = grid.cell_volume();
    let sup = u.iter().cloned().fold(0.0, f64::max);
    let l2 = (m * u.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let positions: Vec<[f64; MAX_DIM]> = layout.active.iter().map(|&v| grid.node_position(v)).collect();

    let border = mask.boundary_adjacent_inactive();
    let picks: Vec<usize> = if border.len() <= GROWTH_SAMPLES {
        border.clone()
    } else {
        (0..GROWTH_SAMPLES).map(|i| border[i * border.len() / GROWTH_SAMPLES]).collect()
    };
    let mut radii = Vec::new();
    let mut r = grid.spacing();
    while r <= grid.diameter() * (1.0 + 1e-12) {
        radii.push(r);
        r *= 2.0;
    }
    let rows = picks
        .iter()
        .map(|&c| {
            let nb = grid.cell_neighbors(c).into_iter().find(|&n| mask.is_active(n)).expect("adjacent active cell");
            let (a, b) = (grid.cell_center(c), grid.cell_center(nb));
            let point: Vec<f64> = (0..dim).map(|d| 0.5 * (a[d] + b[d])).collect();
            let sups: Vec<f64> = radii
                .iter()
                .map(|&r| {
                    positions
                        .iter()
                        .zip(u)
                        .filter(|(p, _)| (0..dim).map(|d| (p[d] - point[d]).powi(2)).sum::<f64>() <= r * r)
                        .map(|(_, &v)| v)
                        .fold(0.0, f64::max)
                })
                .collect();
            GrowthRow {
                point,
                radius: radii.clone(),
                sup_over_r_sigma: sups.iter().zip(&radii).map(|(s, r)| s / r.powf(sigma)).collect(),
                sup_over_r_2sigma_minus_1: sups.iter().zip(&radii).map(|(s, r)| s / r.powf(2.0 * sigma - 1.0)).collect(),
                sup: sups,
            }
        })
        .collect();

    let active = mask.active_cells();
    let ball = {
        let g = centroid(grid, &active);
        let mut order: Vec<(f64, usize)> =
            (0..grid.num_cells()).map(|c| (dist2(&doubled_center(grid, c), &g), c)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut flags = vec![false; grid.num_cells()];
        for &(_, c) in order.iter().take(active.len()) {
            flags[c] = true;
        }
        flags
    };
    let diff = (0..grid.num_cells()).filter(|&c| ball[c] != mask.is_active(c)).count();
    Ok(GrowthDiagnostics {
        sup,
        l2,
        ratio_sup_l2: sup / l2,
        rows,
        components: mask.components().len(),
        asymmetry: diff as f64 / active.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_mask, Shape};

    fn grid(cells: usize, half: f64) -> GridSpec {
        GridSpec::cube(2, cells, -half, half).unwrap()
    }

    fn ball(g: &GridSpec, r: f64) -> DomainMask {
        make_mask(g, &Shape::Ball { center: vec![0.0, 0.0], radius: r }).unwrap()
    }

    fn quick() -> OptimizeOptions {
        OptimizeOptions { max_iter: 4, ..OptimizeOptions::default() }
    }

    #[test]
    fn threshold_on_ball_is_fixed() {
        let g = grid(17, 1.5);
        let m = ball(&g, 1.0);
        let ev = Evaluator::new(2, 0.75, &quick()).unwrap();
        let (form, eig) = ev.solve(&m, None).unwrap();
        let scores = cell_scores(&form, &eig.u);
        let cand = threshold_candidate(&m, &scores, m.active_count()).unwrap();
        assert_eq!(cand.flags(), m.flags());
    }

    #[test]
    fn fixed_measure_contracts() {
        let g = grid(16, 1.5);
        let init = make_mask(&g, &Shape::Box { lo: vec![-0.75, -0.75], hi: vec![0.75, 0.75] }).unwrap();
        let s = optimize_fixed_measure(0.75, init.volume(), &init, &quick()).unwrap();
        assert_eq!(s.mask.active_count(), init.active_count());
        assert!(s.eigen.lambda <= s.history[0].lambda);
        let acc: Vec<f64> = s.history.iter().filter(|h| h.accepted).map(|h| h.energy).collect();
        assert!(acc.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(s.energy_penalized, s.eigen.lambda);
    }

    #[test]
    fn bad_volume_rejected() {
        let g = grid(12, 1.5);
        let m = ball(&g, 1.0);
        assert!(optimize_fixed_measure(0.75, m.volume() * 1.5, &m, &quick()).is_err());
        assert!(optimize_fixed_measure(0.75, m.volume() + 0.3 * g.cell_volume(), &m, &quick()).is_err());
    }

    #[test]
    fn resize_keeps_inner_cells() {
        let g = grid(16, 1.5);
        let m = ball(&g, 1.0);
        let small = resize_mask(&m, m.active_count() - 10).unwrap();
        let big = resize_mask(&m, m.active_count() + 10).unwrap();
        assert!(small.active_cells().iter().all(|&c| m.is_active(c)));
        assert!(m.active_cells().iter().all(|&c| big.is_active(c)));
        assert_eq!(big.active_count(), m.active_count() + 10);
    }

    #[test]
    fn convexify_fixed_point_and_blobs() {
        let g = grid(16, 1.5);
        let m = ball(&g, 1.0);
        assert_eq!(convexify(&m).unwrap().flags(), m.flags());
        let a = make_mask(&g, &Shape::Box { lo: vec![-1.2, -0.3], hi: vec![-0.6, 0.3] }).unwrap();
        let b = make_mask(&g, &Shape::Box { lo: vec![0.6, -0.3], hi: vec![1.2, 0.3] }).unwrap();
        let cells: Vec<usize> = a.active_cells().into_iter().chain(b.active_cells()).collect();
        let two = m.subset(&cells).unwrap();
        assert_eq!(two.components().len(), 2);
        let c = convexify(&two).unwrap();
        assert_eq!(c.components().len(), 1);
        assert_eq!(c.active_count(), two.active_count());
    }

    #[test]
    fn single_component_unchanged() {
        let g = grid(12, 1.5);
        let m = ball(&g, 1.0);
        let ev = Evaluator::new(2, 0.6, &quick()).unwrap();
        let (_, eig) = ev.solve(&m, None).unwrap();
        let (s, rep) = component_reduction(&m, &eig.u, 0.6, 1.0, &quick()).unwrap();
        assert_eq!(s.mask.flags(), m.flags());
        assert_eq!(rep.components.len(), 1);
        assert!((s.eigen.lambda - eig.lambda).abs() <= 1e-8 * eig.lambda);
    }

    #[test]
    fn growth_is_finite_and_scales() {
        let g = grid(16, 1.5);
        let m = ball(&g, 1.0);
        let ev = Evaluator::new(2, 0.75, &quick()).unwrap();
        let (_, eig) = ev.solve(&m, None).unwrap();
        let s = ShapeState::new(m.clone(), eig, 1.0);
        let d = growth_diagnostics(&s, 0.75).unwrap();
        assert!(d.ratio_sup_l2.is_finite() && d.components == 1);
        assert_eq!(d.rows.len(), GROWTH_SAMPLES);
        assert!(d.rows.iter().all(|r| r.sup.iter().chain(&r.sup_over_r_2sigma_minus_1).all(|v| v.is_finite())));

        let t = 2.0;
        let (_, eig2) = ev.solve(&m.rescaled(t).unwrap(), None).unwrap();
        let s2 = ShapeState::new(m.rescaled(t).unwrap(), eig2, 1.0);
        let d2 = growth_diagnostics(&s2, 0.75).unwrap();
        assert!((d2.ratio_sup_l2 / d.ratio_sup_l2 - t.powf(-1.0)).abs() < 1e-7);
    }
}
