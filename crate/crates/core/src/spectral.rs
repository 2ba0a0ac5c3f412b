//! Lumped mass, the smallest eigenpair of the regional form, and residual
//! certificates.
//!
//! The generalized problem `A u = λ M u` is solved by LOBPCG on
//! `B = M^{-1/2} A M^{-1/2}` with a Jacobi preconditioner. The form is
//! solved on its unit-grid version and rescaled, so `λ(tΩ) = t^{-2σ} λ(Ω)`
//! holds to rounding.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::gagliardo::{dot, RegionalForm};

/// Symmetric linear operator acting on dense vectors.
pub trait SymOperator: Sync {
    fn size(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

/// Row-major dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
        }
        Ok(Self { n, data })
    }
}

impl SymOperator for DenseOperator {
    fn size(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(&self.data[i * self.n..(i + 1) * self.n], x);
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.n + i]).collect()
    }
}

/// The unit-grid operator of a form.
struct UnitForm<'a>(&'a RegionalForm);

impl SymOperator for UnitForm<'_> {
    fn size(&self) -> usize {
        self.0.num_dofs()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.apply_unit_into(x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        self.0.diag_unit().to_vec()
    }
}

/// Diagonal (lumped) mass matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassMatrix {
    pub diag: Vec<f64>,
}

impl MassMatrix {
    pub fn from_form(form: &RegionalForm) -> Self {
        Self { diag: form.node_weights() }
    }

    pub fn total(&self) -> f64 {
        self.diag.iter().sum()
    }

    /// `Σ m_i u_i²`.
    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.diag).map(|(x, m)| m * x * x).sum()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.diag).map(|(x, m)| m * x).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenOptions {
    /// Absolute tolerance on `‖A u - λ M u‖_{M^{-1}}`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Block size; 2 also yields an estimate of λ₂.
    pub block: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 5000, seed: 0, block: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenResult {
    pub lambda: f64,
    /// Ritz estimate of the second eigenvalue (block size ≥ 2).
    pub lambda2: Option<f64>,
    /// Normalized by `Σ m_i u_i² = 1`, nonnegative.
    #[serde(skip)]
    pub u: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest Ritz value after each iteration.
    #[serde(skip)]
    pub history: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Append `v` to the orthonormal set `q` (two Gram–Schmidt passes); drop it
/// when it is numerically dependent.
fn push_orthonormal(q: &mut Vec<Vec<f64>>, mut v: Vec<f64>) -> bool {
    let n0 = norm(&v);
    if !(n0 > 0.0) || !n0.is_finite() {
        return false;
    }
    for _ in 0..2 {
        for b in q.iter() {
            let c = dot(b, &v);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
    }
    let n1 = norm(&v);
    if n1 <= 1e-10 * n0 {
        return false;
    }
    for vi in &mut v {
        *vi /= n1;
    }
    q.push(v);
    true
}

struct Scaled<'a> {
    op: &'a dyn SymOperator,
    inv_sqrt_m: Vec<f64>,
}

impl Scaled<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let t: Vec<f64> = x.iter().zip(&self.inv_sqrt_m).map(|(a, s)| a * s).collect();
        let mut y = vec![0.0; x.len()];
        self.op.apply(&t, &mut y);
        for (yi, s) in y.iter_mut().zip(&self.inv_sqrt_m) {
            *yi *= s;
        }
        y
    }
}

/// Smallest eigenpair of `A x = λ M x` for a symmetric operator and a
/// positive diagonal mass, in the operator's own units.
///
/// The returned vector is normalized by `Σ m x² = 1` and sign-fixed by
/// `Σ m x > 0`; tiny negative entries (`> -1e-12`) are clamped to zero.
pub fn smallest_generalized(
    op: &dyn SymOperator,
    mass: &[f64],
    opts: &EigenOptions,
    warm: Option<&[f64]>,
) -> Result<EigenResult> {
    let n = op.size();
    if n == 0 {
        return Err(Error::NoInteriorNodes);
    }
    if mass.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mass.len() });
    }
    if mass.iter().any(|&m| !(m > 0.0)) {
        return Err(invalid("mass entries must be positive"));
    }
    if !(opts.tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive (got {})", opts.tol)));
    }
    let sqrt_m: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let b = Scaled { op, inv_sqrt_m: sqrt_m.iter().map(|s| 1.0 / s).collect() };
    let precond: Vec<f64> = op
        .diagonal()
        .iter()
        .zip(mass)
        .map(|(d, m)| if *d > 0.0 { m / d } else { 1.0 })
        .collect();

    let k = opts.block.max(1).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first: Vec<f64> = match warm {
        Some(w) if w.len() == n && w.iter().any(|v| *v != 0.0) => w.iter().zip(&sqrt_m).map(|(a, s)| a * s).collect(),
        _ => (0..n).map(|_| rng.random_range(0.5..1.0)).collect(),
    };
    push_orthonormal(&mut x, first);
    let mut attempts = 0;
    while x.len() < k && attempts < 10 * k {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        push_orthonormal(&mut x, v);
        attempts += 1;
    }
    let k = x.len();

    // initial Rayleigh–Ritz on X
    let mut bx: Vec<Vec<f64>> = x.iter().map(|v| b.apply(v)).collect();
    let (mut lambdas, mut x_new, mut bx_new, _) = rayleigh_ritz(&x, &bx, k, 0);
    x = x_new;
    bx = bx_new;
    let mut p: Vec<Vec<f64>> = Vec::new();
    let mut history = vec![lambdas[0]];
    let mut iterations = 0;
    let mut residual;
    let mut converged = false;
    loop {
        let r: Vec<Vec<f64>> = (0..k)
            .map(|j| bx[j].iter().zip(&x[j]).map(|(a, v)| a - lambdas[j] * v).collect())
            .collect();
        residual = norm(&r[0]);
        if residual <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let mut basis = x.clone();
        for rj in &r {
            let w: Vec<f64> = rj.iter().zip(&precond).map(|(a, t)| a * t).collect();
            push_orthonormal(&mut basis, w);
        }
        for pj in &p {
            push_orthonormal(&mut basis, pj.clone());
        }
        let mut bbasis = bx.clone();
        for v in &basis[k..] {
            bbasis.push(b.apply(v));
        }
        let (l, xn, bxn, pn) = rayleigh_ritz(&basis, &bbasis, k, k);
        if basis.len() == k {
            // search space collapsed: nothing more to gain
            lambdas = l;
            x = xn;
            bx = bxn;
            history.push(lambdas[0]);
            break;
        }
        lambdas = l;
        x_new = xn;
        bx_new = bxn;
        x = x_new;
        bx = bx_new;
        p = pn;
        history.push(lambdas[0]);
    }
    if !converged {
        let r0: Vec<f64> = bx[0].iter().zip(&x[0]).map(|(a, v)| a - lambdas[0] * v).collect();
        residual = norm(&r0);
        converged = residual <= opts.tol;
    }

    let mut u: Vec<f64> = x[0].iter().zip(&sqrt_m).map(|(v, s)| v / s).collect();
    let weighted_sum: f64 = u.iter().zip(mass).map(|(a, m)| a * m).sum();
    if weighted_sum < 0.0 {
        for v in &mut u {
            *v = -*v;
        }
    }
    let norm_m: f64 = u.iter().zip(mass).map(|(a, m)| m * a * a).sum::<f64>().sqrt();
    for v in &mut u {
        *v /= norm_m;
    }
    let most_negative = u.iter().cloned().fold(0.0f64, f64::min);
    if most_negative < -1e-8 {
        warn!("eigenvector has negative entries down to {most_negative:.3e}");
    }
    for v in &mut u {
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
    }
    Ok(EigenResult {
        lambda: lambdas[0],
        lambda2: lambdas.get(1).copied(),
        u,
        residual,
        iterations,
        converged,
        history,
    })
}

type RitzOut = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Rayleigh–Ritz on an orthonormal basis; returns the `k` smallest Ritz
/// values, vectors, their images, and the part of the vectors outside the
/// first `split` basis columns.
fn rayleigh_ritz(basis: &[Vec<f64>], bbasis: &[Vec<f64>], k: usize, split: usize) -> RitzOut {
    let m = basis.len();
    let mut g = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = 0.5 * (dot(&basis[i], &bbasis[j]) + dot(&basis[j], &bbasis[i]));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let n = basis[0].len();
    let kk = k.min(m);
    let mut vals = Vec::with_capacity(kk);
    let mut xs = Vec::with_capacity(kk);
    let mut bxs = Vec::with_capacity(kk);
    let mut ps = Vec::with_capacity(kk);
    for &c in order.iter().take(kk) {
        vals.push(eig.eigenvalues[c]);
        let mut xv = vec![0.0; n];
        let mut bv = vec![0.0; n];
        let mut pv = vec![0.0; n];
        for i in 0..m {
            let coef = eig.eigenvectors[(i, c)];
            for t in 0..n {
                xv[t] += coef * basis[i][t];
                bv[t] += coef * bbasis[i][t];
            }
            if i >= split {
                for t in 0..n {
                    pv[t] += coef * basis[i][t];
                }
            }
        }
        xs.push(xv);
        bxs.push(bv);
        if split > 0 {
            ps.push(pv);
        }
    }
    (vals, xs, bxs, ps)
}

/// First eigenpair of the regional form with lumped mass.
pub fn smallest_eigenpair(form: &RegionalForm, tol: f64, max_iter: usize, seed: u64) -> Result<EigenResult> {
    let opts = EigenOptions { tol, max_iter, seed, ..EigenOptions::default() };
    smallest_eigenpair_with(form, &opts, None)
}

/// As [`smallest_eigenpair`], with all options and an optional warm start
/// (a node vector in physical normalization).
pub fn smallest_eigenpair_with(form: &RegionalForm, opts: &EigenOptions, warm: Option<&[f64]>) -> Result<EigenResult> {
    if form.num_dofs() == 0 {
        return Err(Error::NoInteriorNodes);
    }
    let h = form.spacing();
    let n = form.dim() as f64;
    let lambda_scale = h.powf(-2.0 * form.sigma());
    let unit_opts = EigenOptions { tol: opts.tol / lambda_scale, ..*opts };
    let mut r = smallest_generalized(&UnitForm(form), form.mass_unit(), &unit_opts, warm)?;
    r.lambda *= lambda_scale;
    r.lambda2 = r.lambda2.map(|l| l * lambda_scale);
    r.residual *= lambda_scale;
    for l in &mut r.history {
        *l *= lambda_scale;
    }
    let u_scale = h.powf(-n / 2.0);
    for v in &mut r.u {
        *v *= u_scale;
    }
    if !(r.lambda > 0.0) {
        return Err(Error::NotConverged { iterations: r.iterations, residual: r.residual });
    }
    Ok(r)
}

/// `⟨A u, u⟩ / ⟨M u, u⟩`.
pub fn rayleigh_quotient(form: &RegionalForm, mass: &MassMatrix, u: &[f64]) -> Result<f64> {
    let denom = mass.norm_sq(u);
    if !(denom > 0.0) {
        return Err(invalid("Rayleigh quotient of the zero vector"));
    }
    Ok(form.energy(u)? / denom)
}

/// Conjugate gradients for `A x = b` with a diagonal preconditioner.
#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

pub fn conjugate_gradient(op: &dyn SymOperator, rhs: &[f64], tol: f64, max_iter: usize) -> Result<CgResult> {
    let n = op.size();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rhs.len() });
    }
    let diag = op.diagonal();
    let pre = |r: &[f64]| -> Vec<f64> { r.iter().zip(&diag).map(|(a, d)| if *d > 0.0 { a / d } else { *a }).collect() };
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        return Ok(CgResult { x, iterations: 0, residual: 0.0, converged: true });
    }
    let mut z = pre(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rn = norm(&r);
        if rn <= tol * bnorm {
            return Ok(CgResult { x, iterations: it, residual: rn / bnorm, converged: true });
        }
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = pre(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rn = norm(&r) / bnorm;
    Ok(CgResult { x, iterations: max_iter, residual: rn, converged: rn <= tol })
}

/// Residual of the eigen-equation split by the support of `u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub threshold: f64,
    /// `‖Au - λMu‖_{M^{-1}}` over nodes whose whole neighbourhood lies in `{u > threshold}`.
    pub interior_residual: f64,
    /// Largest `(Au - λMu)_i / √m_i` over the remaining nodes.
    pub max_defect: f64,
    pub interior_nodes: usize,
    pub other_nodes: usize,
}

/// Residual report for an arbitrary pair `(u, λ)`.
pub fn residual_report(form: &RegionalForm, u: &[f64], lambda: f64, threshold: f64) -> Result<ResidualReport> {
    let au = form.apply(u)?;
    let m = form.node_weights();
    let layout = form.layout();
    let g = form.mask().grid();
    let dim = g.dim();
    let in_support: Vec<bool> = u.iter().map(|&v| v > threshold).collect();
    let mut interior_sq = 0.0;
    let mut max_defect = f64::NEG_INFINITY;
    let (mut ni, mut no) = (0, 0);
    let span = 3usize.pow(dim as u32);
    for (i, &node) in layout.active.iter().enumerate() {
        let r = (au[i] - lambda * m[i] * u[i]) / m[i].sqrt();
        let c = g.node_coords(node);
        let mut interior = in_support[i];
        if interior {
            for k in 0..span {
                let mut rem = k;
                let mut nb = [0usize; 3];
                let mut ok = true;
                for d in 0..dim {
                    let off = (rem % 3) as i64 - 1;
                    rem /= 3;
                    let v = c[d] as i64 + off;
                    if v < 0 || v > g.cells_per_axis()[d] as i64 {
                        ok = false;
                        break;
                    }
                    nb[d] = v as usize;
                }
                let dof = if ok { layout.dof[g.node_index(&nb[..dim])] } else { usize::MAX };
                if dof == usize::MAX || !in_support[dof] {
                    interior = false;
                    break;
                }
            }
        }
        if interior {
            interior_sq += r * r;
            ni += 1;
        } else {
            max_defect = max_defect.max(r);
            no += 1;
        }
    }
    Ok(ResidualReport {
        threshold,
        interior_residual: interior_sq.sqrt(),
        max_defect: if no == 0 { 0.0 } else { max_defect },
        interior_nodes: ni,
        other_nodes: no,
    })
}

/// Residual report of a solved eigenpair; the support threshold is `1e-8·max u`.
pub fn eigen_residual_report(form: &RegionalForm, result: &EigenResult) -> Result<ResidualReport> {
    let umax = result.u.iter().cloned().fold(0.0, f64::max);
    residual_report(form, &result.u, result.lambda, 1e-8 * umax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_mask, DomainMask, GridSpec, Shape};
    use approx::assert_relative_eq;

    #[test]
    fn two_by_two_injected() {
        let op = DenseOperator::new(2, vec![2.0, -1.0, -1.0, 2.0]).unwrap();
        let r = smallest_generalized(&op, &[1.0, 1.0], &EigenOptions { tol: 1e-12, ..Default::default() }, None).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.lambda, 1.0, max_relative = 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert_relative_eq!(r.u[0], s, max_relative = 1e-12);
        assert_relative_eq!(r.u[1], s, max_relative = 1e-12);
    }

    #[test]
    fn generalized_diagonal_mass() {
        // A = diag(3, 8), M = diag(1, 2): eigenvalues 3 and 4
        let op = DenseOperator::new(2, vec![3.0, 0.0, 0.0, 8.0]).unwrap();
        let r = smallest_generalized(&op, &[1.0, 2.0], &EigenOptions { tol: 1e-12, ..Default::default() }, None).unwrap();
        assert_relative_eq!(r.lambda, 3.0, max_relative = 1e-12);
        assert_relative_eq!(r.lambda2.unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn laplacian_chain_matches_closed_form() {
        let n = 40;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 2.0;
            if i + 1 < n {
                a[i * n + i + 1] = -1.0;
                a[(i + 1) * n + i] = -1.0;
            }
        }
        let op = DenseOperator::new(n, a).unwrap();
        let r = smallest_generalized(&op, &vec![1.0; n], &EigenOptions { tol: 1e-11, ..Default::default() }, None).unwrap();
        let expect = 2.0 - 2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!(r.converged);
        assert_relative_eq!(r.lambda, expect, max_relative = 1e-10);
        assert!(r.u.iter().all(|&v| v >= 0.0));
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-14, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let op = DenseOperator::new(3, vec![4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]).unwrap();
        let r = conjugate_gradient(&op, &[1.0, 2.0, 3.0], 1e-14, 50).unwrap();
        let mut y = vec![0.0; 3];
        op.apply(&r.x, &mut y);
        for (a, b) in y.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_eigenpair_properties() {
        let g = GridSpec::cube(2, 16, -1.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
        let form = RegionalForm::new(&m, 0.75).unwrap();
        let r = smallest_eigenpair(&form, 1e-9, 2000, 1).unwrap();
        assert!(r.converged && r.lambda > 0.0);
        let mass = MassMatrix::from_form(&form);
        assert_relative_eq!(mass.norm_sq(&r.u), 1.0, max_relative = 1e-12);
        assert_relative_eq!(rayleigh_quotient(&form, &mass, &r.u).unwrap(), r.lambda, max_relative = 1e-12);
        let scaled: Vec<f64> = r.u.iter().map(|v| 7.0 * v).collect();
        assert_relative_eq!(
            rayleigh_quotient(&form, &mass, &scaled).unwrap(),
            r.lambda,
            max_relative = 1e-13
        );
        assert!(r.u.iter().all(|&v| v >= 0.0));
        let rep = eigen_residual_report(&form, &r).unwrap();
        assert!(rep.interior_residual <= 1e-8);
        assert!(rep.max_defect <= 1e-8);
        let again = smallest_eigenpair(&form, 1e-9, 2000, 1).unwrap();
        assert_eq!(again.lambda.to_bits(), r.lambda.to_bits());
        assert_eq!(again.u, r.u);
    }

    #[test]
    fn perturbed_vector_is_detected() {
        let g = GridSpec::cube(2, 12, -1.0, 1.0).unwrap();
        let form = RegionalForm::new(&DomainMask::full(g), 0.6).unwrap();
        let r = smallest_eigenpair(&form, 1e-9, 2000, 3).unwrap();
        let mut v = r.u.clone();
        for (i, x) in v.iter_mut().enumerate() {
            *x *= 1.0 + 0.01 * ((i * 7919) % 13) as f64 / 13.0;
        }
        let rep = residual_report(&form, &v, r.lambda, 1e-12).unwrap();
        assert!(rep.interior_residual > 10.0 * 1e-9);
    }

    #[test]
    fn empty_interior_is_an_error() {
        let g = GridSpec::cube(2, 8, 0.0, 1.0).unwrap();
        let m = make_mask(&g, &Shape::Cells(vec![vec![3, 3]])).unwrap();
        let form = RegionalForm::new(&m, 0.6).unwrap();
        assert!(matches!(smallest_eigenpair(&form, 1e-9, 100, 0), Err(Error::NoInteriorNodes)));
    }
}
