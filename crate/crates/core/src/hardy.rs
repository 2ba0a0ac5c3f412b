//! The pseudo-distance `m_{2σ}` and discrete checks of the fractional Hardy
//! inequality and of the regional/full-space norm equivalence.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::gagliardo::RegionalForm;
use crate::geometry::{directional_distance_grid, DirectionSet, DomainMask, GridSpec, MAX_DIM};
use crate::special::{hardy_constant, m_alpha_prefactor};
use crate::spectral::smallest_eigenpair;

fn sigma_range(sigma: f64) -> Result<()> {
    if !(sigma > 0.5 && sigma < 1.0) {
        return Err(Error::OutsideLossSloaneRange { p: 2.0, sigma });
    }
    Ok(())
}

fn m_from_distances(n: usize, alpha: f64, dirs: &DirectionSet, dist: &[f64]) -> Result<f64> {
    let pref = m_alpha_prefactor(n, alpha)?;
    let s: f64 = dirs.weights.iter().zip(dist).map(|(w, d)| w * d.powf(-alpha)).sum();
    Ok(pref.powf(1.0 / alpha) * s.powf(-1.0 / alpha))
}

/// Directional distances in grid units; a first march step already outside
/// counts as a boundary point.
fn grid_distances(mask: &DomainMask, p: &[f64; MAX_DIM], dirs: &DirectionSet) -> Result<Vec<f64>> {
    dirs.directions
        .iter()
        .map(|w| match directional_distance_grid(mask, p, w) {
            None => Err(Error::PointNotInDomain),
            Some(d) if d <= 1.0 / 8.0 => Err(Error::BoundaryPoint),
            Some(d) => Ok(d),
        })
        .collect()
}

/// `m_{2σ}(x) = c(n,2σ)^{1/2σ} (Σ_k w_k d_{ω_k}(x)^{-2σ})^{-1/2σ}`.
pub fn m_sigma(mask: &DomainMask, x: &[f64], sigma: f64, dirs: &DirectionSet) -> Result<f64> {
    let g = mask.grid();
    if x.len() != g.dim() || dirs.dim != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: x.len() });
    }
    let alpha = 2.0 * sigma;
    if !(alpha > 1.0) {
        return Err(invalid(format!("m_alpha needs alpha = 2 sigma > 1 (got {alpha})")));
    }
    let p = g.to_grid_units(x);
    let d = grid_distances(mask, &p, dirs)?;
    Ok(m_from_distances(g.dim(), alpha, dirs, &d)? * g.spacing())
}

/// Active nodes whose surrounding `4ⁿ` cells (distance ≥ 2h from the
/// boundary of the cell union) are all active.
pub fn hardy_support(form: &RegionalForm) -> Vec<bool> {
    let mask = form.mask();
    let g = mask.grid();
    let dim = g.dim();
    form.layout()
        .active
        .iter()
        .map(|&node| {
            let c = g.node_coords(node);
            let span = 4usize.pow(dim as u32);
            (0..span).all(|k| {
                let mut rem = k;
                let mut cell = [0usize; MAX_DIM];
                for d in 0..dim {
                    let v = c[d] as i64 + (rem % 4) as i64 - 2;
                    rem /= 4;
                    if v < 0 || v >= g.cells_per_axis()[d] as i64 {
                        return false;
                    }
                    cell[d] = v as usize;
                }
                mask.is_active(g.cell_index(&cell[..dim]))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardyReport {
    pub n: usize,
    pub sigma: f64,
    pub constant: f64,
    pub test_function: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub margin: f64,
}

/// Compare `B_Ω[u,u]` with `C_{n,2,σ} Σ m_i u_i² / m_{2σ}(x_i)^{2σ}`.
pub fn hardy_check(form: &RegionalForm, u: &[f64], dirs: &DirectionSet, test_function: &str) -> Result<HardyReport> {
    let n = form.dim();
    let sigma = form.sigma();
    sigma_range(sigma)?;
    if u.len() != form.num_dofs() {
        return Err(Error::DimensionMismatch { expected: form.num_dofs(), got: u.len() });
    }
    let support = hardy_support(form);
    if let Some(i) = (0..u.len()).find(|&i| u[i] != 0.0 && !support[i]) {
        return Err(Error::UnsupportedFunction(format!(
            "u is nonzero at node {} closer than 2h to the boundary",
            form.layout().active[i]
        )));
    }
    if u.iter().all(|&v| v == 0.0) {
        return Err(Error::UnsupportedFunction("u vanishes identically".into()));
    }
    let constant = hardy_constant(n, 2.0, sigma)?.value;
    let mask = form.mask();
    let g = mask.grid();
    let m = form.node_weights();
    let alpha = 2.0 * sigma;
    let idx: Vec<usize> = (0..u.len()).filter(|&i| u[i] != 0.0).collect();
    // m_{2σ} in grid units, then the h factor once: keeps grid scaling exact
    let terms: Vec<f64> = idx
        .par_iter()
        .map(|&i| -> Result<f64> {
            let c = g.node_coords(form.layout().active[i]);
            let mut p = [0.0; MAX_DIM];
            for d in 0..n {
                p[d] = c[d] as f64;
            }
            let dist = grid_distances(mask, &p, dirs)?;
            let mg = m_from_distances(n, alpha, dirs, &dist)?;
            Ok(m[i] * u[i] * u[i] / mg.powf(alpha))
        })
        .collect::<Result<_>>()?;
    let rhs = constant * terms.iter().sum::<f64>() * g.spacing().powf(-alpha);
    let lhs = form.energy(u)?;
    let ratio = lhs / rhs;
    Ok(HardyReport {
        n,
        sigma,
        constant,
        test_function: test_function.to_string(),
        lhs,
        rhs,
        ratio,
        margin: ratio - 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub full: f64,
    pub regional: f64,
    pub ratio: f64,
    /// `1 + c(n,2σ)/(σ C_{n,2,σ})`
    pub c_star: f64,
    pub bound: f64,
    pub holds: bool,
}

/// The composed constant of the regional/full-space norm equivalence.
pub fn equivalence_constant(n: usize, sigma: f64) -> Result<f64> {
    sigma_range(sigma)?;
    let c = m_alpha_prefactor(n, 2.0 * sigma)?;
    Ok(1.0 + c / (sigma * hardy_constant(n, 2.0, sigma)?.value))
}

/// Check `I_{ℝⁿ}[u] ≤ 1.1·C*·I_Ω[u]` for nonnegative `u`.
pub fn equivalence_check(form: &RegionalForm, u: &[f64]) -> Result<EquivalenceReport> {
    if u.iter().any(|&v| v < 0.0) {
        return Err(invalid("equivalence check needs nonnegative u"));
    }
    let c_star = equivalence_constant(form.dim(), form.sigma())?;
    let regional = form.energy(u)?;
    let full = regional + form.complement_term(u)?;
    let bound = 1.1 * c_star;
    let ratio = if regional > 0.0 { full / regional } else { 0.0 };
    Ok(EquivalenceReport { full, regional, ratio, c_star, bound, holds: full <= bound * regional })
}

/// Named test functions for the Hardy suite, all supported on [`hardy_support`].
///
/// Tensor sine bumps (modes 1 and 2 on the supported bounding box), three
/// seeded Gaussian bumps under a sine envelope, and the first eigenfunction
/// of the supported region.
pub fn hardy_corpus(form: &RegionalForm, seed: u64) -> Result<Vec<(String, Vec<f64>)>> {
    let support = hardy_support(form);
    if !support.iter().any(|&s| s) {
        return Err(Error::UnsupportedFunction("no node lies 2h inside the domain".into()));
    }
    let pos = form.dof_positions();
    let dim = form.dim();
    let h = form.spacing();
    let mut lo = [f64::INFINITY; MAX_DIM];
    let mut hi = [f64::NEG_INFINITY; MAX_DIM];
    for (p, _) in pos.iter().zip(&support).filter(|(_, &s)| s) {
        for d in 0..dim {
            lo[d] = lo[d].min(p[d] - h);
            hi[d] = hi[d].max(p[d] + h);
        }
    }
    let envelope = |p: &[f64; MAX_DIM], k: usize| -> f64 {
        (0..dim).map(|d| (k as f64 * PI * (p[d] - lo[d]) / (hi[d] - lo[d])).sin()).product()
    };
    let on_support = |f: &dyn Fn(&[f64; MAX_DIM]) -> f64| -> Vec<f64> {
        pos.iter().zip(&support).map(|(p, &s)| if s { f(p) } else { 0.0 }).collect()
    };
    let mut out = Vec::new();
    for k in [1usize, 2] {
        out.push((format!("sine_{k}"), on_support(&|p| envelope(p, k))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..3 {
        let mut c = [0.0; MAX_DIM];
        for d in 0..dim {
            c[d] = rng.random_range(lo[d]..hi[d]);
        }
        let width = rng.random_range(0.1..0.3) * (0..dim).map(|d| hi[d] - lo[d]).fold(f64::INFINITY, f64::min);
        let f = |p: &[f64; MAX_DIM]| {
            let r2: f64 = (0..dim).map(|d| (p[d] - c[d]).powi(2)).sum();
            envelope(p, 1) * (-r2 / (2.0 * width * width)).exp()
        };
        out.push((format!("gauss_{j}"), on_support(&f)));
    }
    // first eigenfunction on the cells all of whose vertices are supported nodes
    let mask = form.mask();
    let g = mask.grid();
    let layout = form.layout();
    let flags: Vec<bool> = (0..g.num_cells())
        .map(|c| {
            mask.is_active(c)
                && g.cell_vertices(c).iter().all(|&v| {
                    let dof = layout.dof[v];
                    dof != usize::MAX && support[dof]
                })
        })
        .collect();
    if let Ok(inner) = DomainMask::from_flags(g.clone(), flags) {
        let inner_form = RegionalForm::new(&inner, form.sigma())?;
        if inner_form.num_dofs() > 0 {
            let r = smallest_eigenpair(&inner_form, 1e-9, 5000, seed)?;
            let mut u = vec![0.0; form.num_dofs()];
            for (i, &node) in inner_form.layout().active.iter().enumerate() {
                u[layout.dof[node]] = r.u[i];
            }
            out.push(("eigen_inset".to_string(), u));
        }
    }
    Ok(out)
}

/// Random nonnegative vectors for the equivalence suite: uniform values on
/// a random subset of nodes.
pub fn random_nonnegative(form: &RegionalForm, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let density: f64 = rng.random_range(0.2..1.0);
            (0..form.num_dofs())
                .map(|_| if rng.random_bool(density) { rng.random_range(0.0..1.0) } else { 0.0 })
                .collect()
        })
        .collect()
}

/// The interval/ball-centre closed form `(c(n,α)/ω_{n-1})^{1/α}·R` used in tests and docs.
pub fn m_sigma_ball_center(n: usize, sigma: f64, radius: f64) -> Result<f64> {
    let alpha = 2.0 * sigma;
    let c = m_alpha_prefactor(n, alpha)?;
    Ok((c / crate::special::sphere_area(n)).powf(1.0 / alpha) * radius)
}

/// Grid helper for tests and the CLI: the full box `[lo, hi]ⁿ`.
pub fn full_box(n: usize, cells: usize, lo: f64, hi: f64) -> Result<DomainMask> {
    Ok(DomainMask::full(GridSpec::cube(n, cells, lo, hi)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{direction_set, make_mask, Shape};
    use crate::special::gamma;
    use approx::assert_relative_eq;

    #[test]
    fn interval_center_closed_form() {
        let g = GridSpec::cube(1, 64, -1.0, 1.0).unwrap();
        let mask = DomainMask::full(g);
        let dirs = direction_set(1, 4).unwrap();
        let m = m_sigma(&mask, &[0.0], 0.75, &dirs).unwrap();
        let expect = (2.0 * gamma(1.25).unwrap() / gamma(1.25).unwrap() / 2.0).powf(1.0 / 1.5);
        assert_relative_eq!(m, expect, max_relative = 1e-9);
    }

    #[test]
    fn ball_center_scaling_and_bound() {
        let g = GridSpec::cube(2, 128, -2.0, 2.0).unwrap();
        let dirs = direction_set(2, 180).unwrap();
        let b1 = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
        let m1 = m_sigma(&b1, &[0.0, 0.0], 0.75, &dirs).unwrap();
        let b2 = b1.rescaled(2.0).unwrap();
        let m2 = m_sigma(&b2, &[0.0, 0.0], 0.75, &dirs).unwrap();
        assert_relative_eq!(m2, 2.0 * m1, max_relative = 1e-12);
        // m ≤ c^{1/α} · max_k d_k
        let p = g.to_grid_units(&[0.0, 0.0]);
        let d = grid_distances(&b1, &p, &dirs).unwrap();
        let dmax = d.iter().cloned().fold(0.0, f64::max) * g.spacing();
        assert!(m1 <= m_alpha_prefactor(2, 1.5).unwrap().powf(1.0 / 1.5) * dmax);
    }

    #[test]
    fn boundary_point_rejected() {
        let g = GridSpec::cube(2, 16, -1.0, 1.0).unwrap();
        let mask = DomainMask::full(g);
        let dirs = direction_set(2, 8).unwrap();
        assert!(matches!(m_sigma(&mask, &[1.0, 0.0], 0.75, &dirs), Err(Error::BoundaryPoint)));
        assert!(m_sigma(&mask, &[0.0, 0.0], 0.4, &dirs).is_err());
    }

    #[test]
    fn hardy_rejects_unsupported() {
        let mask = full_box(2, 12, 0.0, 1.0).unwrap();
        let form = RegionalForm::new(&mask, 0.75).unwrap();
        let dirs = direction_set(2, 16).unwrap();
        let u = vec![1.0; form.num_dofs()];
        assert!(matches!(hardy_check(&form, &u, &dirs, "ones"), Err(Error::UnsupportedFunction(_))));
    }

    #[test]
    fn equivalence_zero_function() {
        let mask = full_box(2, 8, 0.0, 1.0).unwrap();
        let form = RegionalForm::new(&mask, 0.75).unwrap();
        let r = equivalence_check(&form, &vec![0.0; form.num_dofs()]).unwrap();
        assert_eq!(r.full, 0.0);
        assert!(r.holds);
    }
}
