//! Exact convex hulls of integer point sets in up to three dimensions.
//!
//! The hull is stored as integer half-spaces `n·y ≤ d` plus equalities
//! `n·y = d` describing its affine span, so membership of lattice points is
//! decided without rounding.

use std::collections::HashSet;

pub type IPoint = [i64; 3];

fn sub(a: &IPoint, b: &IPoint) -> IPoint {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &IPoint, b: &IPoint) -> i64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &IPoint, b: &IPoint) -> IPoint {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn is_zero(a: &IPoint) -> bool {
    a.iter().all(|&v| v == 0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntHull {
    /// `n·y ≤ d`
    pub halfspaces: Vec<(IPoint, i64)>,
    /// `n·y = d`
    pub equalities: Vec<(IPoint, i64)>,
    /// Dimension of the affine span.
    pub affine_dim: usize,
}

impl IntHull {
    /// Hull of a nonempty point set. Panics on an empty slice.
    pub fn new(points: &[IPoint]) -> Self {
        assert!(!points.is_empty(), "hull of an empty set");
        let p0 = points[0];
        let Some(p1) = points.iter().find(|p| **p != p0).copied() else {
            let equalities = (0..3)
                .map(|k| {
                    let mut e = [0; 3];
                    e[k] = 1;
                    (e, p0[k])
                })
                .collect();
            return Self { halfspaces: Vec::new(), equalities, affine_dim: 0 };
        };
        let u = sub(&p1, &p0);
        let Some(p2) = points.iter().find(|p| !is_zero(&cross(&u, &sub(p, &p0)))).copied() else {
            return Self::segment(points, &p0, &u);
        };
        let normal = cross(&u, &sub(&p2, &p0));
        let Some(p3) = points.iter().find(|p| dot(&normal, &sub(p, &p0)) != 0).copied() else {
            return Self::planar(points, &p0, &normal);
        };
        Self::solid(points, [p0, p1, p2, p3])
    }

    fn segment(points: &[IPoint], p0: &IPoint, u: &IPoint) -> Self {
        let ts: Vec<i64> = points.iter().map(|p| dot(u, p)).collect();
        let lo = *ts.iter().min().unwrap();
        let hi = *ts.iter().max().unwrap();
        let neg = [-u[0], -u[1], -u[2]];
        let mut equalities = Vec::new();
        for k in 0..3 {
            let mut e = [0; 3];
            e[k] = 1;
            let n = cross(u, &e);
            if !is_zero(&n) {
                equalities.push((n, dot(&n, p0)));
            }
        }
        Self { halfspaces: vec![(*u, hi), (neg, -lo)], equalities, affine_dim: 1 }
    }

    fn planar(points: &[IPoint], p0: &IPoint, normal: &IPoint) -> Self {
        // drop the axis with the largest normal component; the projection is
        // an affine bijection of the plane, so convexity is preserved
        let drop = (0..3).max_by_key(|&k| (normal[k].abs(), std::cmp::Reverse(k))).unwrap();
        let keep: Vec<usize> = (0..3).filter(|&k| k != drop).collect();
        let mut pts: Vec<(i64, i64)> = points.iter().map(|p| (p[keep[0]], p[keep[1]])).collect();
        pts.sort_unstable();
        pts.dedup();
        let ring = monotone_chain(&pts);
        let mut halfspaces = Vec::with_capacity(ring.len());
        for i in 0..ring.len() {
            let a = ring[i];
            let b = ring[(i + 1) % ring.len()];
            // counter-clockwise ring: interior on the left, outward normal (dy, -dx)
            let (nx, ny) = (b.1 - a.1, a.0 - b.0);
            let mut n = [0; 3];
            n[keep[0]] = nx;
            n[keep[1]] = ny;
            halfspaces.push((n, nx * a.0 + ny * a.1));
        }
        Self { halfspaces, equalities: vec![(*normal, dot(normal, p0))], affine_dim: 2 }
    }

    fn solid(points: &[IPoint], tet: [IPoint; 4]) -> Self {
        let mut faces: Vec<[IPoint; 3]> = Vec::new();
        for (i, j, k, o) in [(0, 1, 2, 3), (0, 1, 3, 2), (0, 2, 3, 1), (1, 2, 3, 0)] {
            let f = [tet[i], tet[j], tet[k]];
            if orient(&f, &tet[o]) > 0 {
                faces.push([f[0], f[2], f[1]]);
            } else {
                faces.push(f);
            }
        }
        for p in points {
            let visible: Vec<bool> = faces.iter().map(|f| orient(f, p) > 0).collect();
            if !visible.iter().any(|&v| v) {
                continue;
            }
            let mut edges = HashSet::new();
            for (f, _) in faces.iter().zip(&visible).filter(|(_, v)| **v) {
                for e in 0..3 {
                    edges.insert((f[e], f[(e + 1) % 3]));
                }
            }
            let mut horizon: Vec<(IPoint, IPoint)> =
                edges.iter().filter(|(a, b)| !edges.contains(&(*b, *a))).copied().collect();
            horizon.sort_unstable();
            let mut next: Vec<[IPoint; 3]> =
                faces.iter().zip(&visible).filter(|(_, v)| !**v).map(|(f, _)| *f).collect();
            next.extend(horizon.into_iter().map(|(a, b)| [a, b, *p]));
            faces = next;
        }
        let halfspaces = faces
            .iter()
            .map(|f| {
                let n = cross(&sub(&f[1], &f[0]), &sub(&f[2], &f[0]));
                (n, dot(&n, &f[0]))
            })
            .collect();
        Self { halfspaces, equalities: Vec::new(), affine_dim: 3 }
    }

    pub fn contains(&self, y: &IPoint) -> bool {
        self.equalities.iter().all(|(n, d)| dot(n, y) == *d) && self.halfspaces.iter().all(|(n, d)| dot(n, y) <= *d)
    }

    /// Minkowski gauge of `y` about the relative-interior point `c`:
    /// the smallest `s` with `y ∈ c + s (H - c)`; infinite off the affine span.
    pub fn gauge(&self, c: &[f64; 3], y: &IPoint) -> f64 {
        let fy = [y[0] as f64, y[1] as f64, y[2] as f64];
        for (n, d) in &self.equalities {
            if dot(n, y) != *d {
                return f64::INFINITY;
            }
        }
        let mut g: f64 = 0.0;
        for (n, d) in &self.halfspaces {
            let nf = [n[0] as f64, n[1] as f64, n[2] as f64];
            let nc = nf[0] * c[0] + nf[1] * c[1] + nf[2] * c[2];
            let ny = nf[0] * fy[0] + nf[1] * fy[1] + nf[2] * fy[2];
            let slack = *d as f64 - nc;
            if slack > 0.0 {
                g = g.max((ny - nc) / slack);
            }
        }
        g
    }
}

fn orient(f: &[IPoint; 3], p: &IPoint) -> i64 {
    let n = cross(&sub(&f[1], &f[0]), &sub(&f[2], &f[0]));
    dot(&n, &sub(p, &f[0]))
}

fn cross2(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise hull vertices of sorted, deduplicated points (collinear
/// points dropped).
fn monotone_chain(pts: &[(i64, i64)]) -> Vec<(i64, i64)> {
    if pts.len() < 3 {
        return pts.to_vec();
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in pts {
        while lower.len() >= 2 && cross2(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross2(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

#[cfg(test)]
mod tests {
    use super::*;

    fn in_triangle_oracle(pts: &[IPoint], q: &IPoint) -> bool {
        // Carathéodory in the plane: q lies in some triangle (possibly degenerate)
        let c = |o: &IPoint, a: &IPoint, b: &IPoint| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
        let on_seg = |a: &IPoint, b: &IPoint| {
            c(a, b, q) == 0
                && q[0] >= a[0].min(b[0])
                && q[0] <= a[0].max(b[0])
                && q[1] >= a[1].min(b[1])
                && q[1] <= a[1].max(b[1])
        };
        for i in 0..pts.len() {
            for j in i..pts.len() {
                if on_seg(&pts[i], &pts[j]) {
                    return true;
                }
                for k in j + 1..pts.len() {
                    let (a, b, d) = (&pts[i], &pts[j], &pts[k]);
                    let s = [c(a, b, q), c(b, d, q), c(d, a, q)];
                    if s.iter().all(|&v| v >= 0) || s.iter().all(|&v| v <= 0) {
                        if c(a, b, d) != 0 {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    #[test]
    fn planar_hull_matches_triangle_oracle() {
        let pts: Vec<IPoint> = vec![[0, 0, 0], [6, 0, 0], [0, 4, 0], [2, 2, 0], [5, 3, 0], [1, 6, 0]];
        let h = IntHull::new(&pts);
        assert_eq!(h.affine_dim, 2);
        for x in -1..8 {
            for y in -1..8 {
                let q = [x, y, 0];
                assert_eq!(h.contains(&q), in_triangle_oracle(&pts, &q), "{q:?}");
            }
        }
        assert!(!h.contains(&[1, 1, 1]));
    }

    #[test]
    fn cube_hull_membership() {
        let mut pts = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    pts.push([x, y, z]);
                }
            }
        }
        let h = IntHull::new(&pts);
        assert_eq!(h.affine_dim, 3);
        for x in -1..4 {
            for y in -1..4 {
                for z in -1..4 {
                    let inside = (0..3).contains(&x) && (0..3).contains(&y) && (0..3).contains(&z);
                    assert_eq!(h.contains(&[x, y, z]), inside);
                }
            }
        }
        let g = h.gauge(&[1.0, 1.0, 1.0], &[2, 1, 1]);
        assert!((g - 1.0).abs() < 1e-15);
    }

    #[test]
    fn octahedron_excludes_corners() {
        let pts = vec![[2, 0, 0], [-2, 0, 0], [0, 2, 0], [0, -2, 0], [0, 0, 2], [0, 0, -2], [0, 0, 0]];
        let h = IntHull::new(&pts);
        assert!(h.contains(&[1, 1, 0]));
        assert!(h.contains(&[0, 1, 1]));
        assert!(!h.contains(&[1, 1, 1]));
    }

    #[test]
    fn degenerate_sets() {
        let h = IntHull::new(&[[1, 1, 0]]);
        assert!(h.contains(&[1, 1, 0]) && !h.contains(&[1, 2, 0]));
        let s = IntHull::new(&[[0, 0, 0], [4, 2, 0], [2, 1, 0]]);
        assert_eq!(s.affine_dim, 1);
        assert!(s.contains(&[2, 1, 0]) && !s.contains(&[6, 3, 0]) && !s.contains(&[1, 1, 0]));
        let line_gauge = s.gauge(&[2.0, 1.0, 0.0], &[4, 2, 0]);
        assert!((line_gauge - 1.0).abs() < 1e-15);
    }
}
