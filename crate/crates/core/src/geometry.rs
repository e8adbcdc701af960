//! Compact convex sets in vertex (generator) form.
//!
//! A [`ConvexSet`] is the convex hull of a finite generator list. Minkowski
//! sums store every combination sum of the summands' generators, so the list
//! may contain redundant (non-extreme) points; supports and membership are
//! exact regardless. Constraint sets are axis-aligned boxes ([`AxisBox`]).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::opt::{solve_lp, SolverSettings};

fn check_scale(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) || !a.is_finite() {
        return Err(Error::Parameter(format!("scale factor {a} outside [0, 1]")));
    }
    Ok(())
}

/// Axis-aligned box `{x : lo <= x <= hi}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl AxisBox {
    /// Builds a box with the origin in its interior (`lo < 0 < hi`).
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::Parameter(format!("box bound {i} is not finite")));
            }
            if !(*l < 0.0 && 0.0 < *h) {
                return Err(Error::Parameter(format!(
                    "box coordinate {i} is [{l}, {h}]; the origin must be interior"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric box `|x_i| <= bound_i`.
    pub fn symmetric(bounds: &[f64]) -> Result<Self> {
        let hi = DVector::from_column_slice(bounds);
        Self::new(-&hi, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    /// `a·X`. Scaling by zero yields the degenerate box `{0}`.
    pub fn scale(&self, a: f64) -> Result<Self> {
        check_scale(a)?;
        Ok(Self {
            lo: &self.lo * a,
            hi: &self.hi * a,
        })
    }

    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> bool {
        p.len() == self.dim()
            && p
                .iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
    }

    /// Smallest signed distance to a face; negative when `p` is outside.
    pub fn margin(&self, p: &DVector<f64>) -> f64 {
        p.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .map(|(x, (l, h))| (x - l).min(h - x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Facets as `(normal, offset)` with `normal·x <= offset`: `+e_i` then `-e_i`.
    pub fn facets(&self) -> Vec<(DVector<f64>, f64)> {
        let n = self.dim();
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut c = DVector::zeros(n);
            c[i] = 1.0;
            out.push((c, self.hi[i]));
        }
        for i in 0..n {
            let mut c = DVector::zeros(n);
            c[i] = -1.0;
            out.push((c, -self.lo[i]));
        }
        out
    }

    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                DVector::from_iterator(
                    n,
                    (0..n).map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] }),
                )
            })
            .collect()
    }

    pub fn to_set(&self) -> ConvexSet {
        ConvexSet {
            dim: self.dim(),
            generators: self.vertices(),
        }
    }
}

/// Convex hull of a nonempty generator list.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSet {
    dim: usize,
    generators: Vec<DVector<f64>>,
}

impl ConvexSet {
    pub fn new(dim: usize, generators: Vec<DVector<f64>>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::Parameter("generator list is empty".into()));
        }
        if let Some(g) = generators.iter().find(|g| g.len() != dim) {
            return Err(Error::Dimension(format!(
                "generator of length {} in a set of dimension {dim}",
                g.len()
            )));
        }
        Ok(Self { dim, generators })
    }

    /// The singleton `{0}`.
    pub fn origin(dim: usize) -> Self {
        Self {
            dim,
            generators: vec![DVector::zeros(dim)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[DVector<f64>] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// True when every generator is the zero vector.
    pub fn is_origin(&self) -> bool {
        self.generators.iter().all(|g| g.iter().all(|v| *v == 0.0))
    }

    /// Generators as the columns of a `dim × len` matrix.
    pub fn generator_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.generators)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        check_scale(a)?;
        Ok(Self {
            dim: self.dim,
            generators: self.generators.iter().map(|g| g * a).collect(),
        })
    }

    pub fn linear_image(&self, t: &DMatrix<f64>) -> Result<Self> {
        if t.ncols() != self.dim {
            return Err(Error::Dimension(format!(
                "map with {} columns applied to a set of dimension {}",
                t.ncols(),
                self.dim
            )));
        }
        Ok(Self {
            dim: t.nrows(),
            generators: self.generators.iter().map(|g| t * g).collect(),
        })
    }

    pub fn minkowski_sum(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::Dimension(format!(
                "Minkowski sum of dimensions {} and {}",
                self.dim, other.dim
            )));
        }
        let generators = self
            .generators
            .iter()
            .flat_map(|a| other.generators.iter().map(move |b| a + b))
            .collect();
        Ok(Self {
            dim: self.dim,
            generators,
        })
    }

    /// Support function `max_{s in S} <d, s>`.
    pub fn support(&self, d: &DVector<f64>) -> f64 {
        debug_assert_eq!(d.len(), self.dim);
        self.generators
            .iter()
            .map(|g| g.dot(d))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Membership by a phase-1 LP over convex weights on the generators.
    pub fn contains_point(
        &self,
        p: &DVector<f64>,
        tol: f64,
        settings: &SolverSettings,
    ) -> Result<bool> {
        if p.len() != self.dim {
            return Err(Error::Dimension(format!(
                "point of length {} tested against a set of dimension {}",
                p.len(),
                self.dim
            )));
        }
        Ok(hull_residual(&self.generators, p, settings)? <= tol)
    }

    /// Same set with redundant generators removed (exact duplicates and points
    /// inside the hull of the others).
    pub fn pruned(&self, settings: &SolverSettings) -> Result<Self> {
        let mut gens: Vec<DVector<f64>> = Vec::with_capacity(self.generators.len());
        for g in &self.generators {
            if !gens.iter().any(|h| h == g) {
                gens.push(g.clone());
            }
        }
        let kept = match self.dim {
            1 => {
                let lo = gens.iter().map(|g| g[0]).fold(f64::INFINITY, f64::min);
                let hi = gens.iter().map(|g| g[0]).fold(f64::NEG_INFINITY, f64::max);
                let mut out = vec![DVector::from_element(1, lo)];
                if hi > lo {
                    out.push(DVector::from_element(1, hi));
                }
                out
            }
            2 => hull_2d(&gens),
            _ => {
                let scale = gens.iter().map(|g| g.amax()).fold(0.0, f64::max);
                let tol = 1e-10 * (1.0 + scale);
                let settings = &SolverSettings {
                    tol: 1e-12,
                    ..*settings
                };
                let mut i = 0;
                while i < gens.len() && gens.len() > 1 {
                    let others: Vec<DVector<f64>> = gens
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, g)| g.clone())
                        .collect();
                    if hull_residual(&others, &gens[i], settings)? <= tol {
                        gens.remove(i);
                    } else {
                        i += 1;
                    }
                }
                gens
            }
        };
        Ok(Self {
            dim: self.dim,
            generators: kept,
        })
    }
}

/// Minimum total residual of `sum λ_k g_k = p, sum λ_k = 1, λ >= 0`.
fn hull_residual(
    generators: &[DVector<f64>],
    p: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<f64> {
    // min Σ(e+ + e-)  s.t.  Σ λ_j g_j + e+ - e- = p,  Σ λ_j = 1,  λ, e± >= 0.
    let n = p.len();
    let k = generators.len();
    let nv = k + 2 * n;
    let mut a = DMatrix::zeros(n + 1, nv);
    for (j, g) in generators.iter().enumerate() {
        a.view_mut((0, j), (n, 1)).copy_from(g);
        a[(n, j)] = 1.0;
    }
    a.view_mut((0, k), (n, n)).fill_diagonal(1.0);
    a.view_mut((0, k + n), (n, n)).fill_diagonal(-1.0);
    let mut b = DVector::zeros(n + 1);
    b.rows_mut(0, n).copy_from(p);
    b[n] = 1.0;
    let mut c = DVector::zeros(nv);
    c.rows_mut(k, 2 * n).fill(1.0);
    let g = -DMatrix::<f64>::identity(nv, nv);
    let h = DVector::zeros(nv);
    let sol = solve_lp(&c, &a, &b, &g, &h, settings)?;
    if !sol.is_optimal() {
        return Err(Error::Solver("hull membership problem did not converge".into()));
    }
    let lambda = sol.z.rows(0, k).map(|v| v.max(0.0));
    let point = generators
        .iter()
        .zip(lambda.iter())
        .fold(DVector::zeros(n), |acc, (g, l)| acc + g * *l);
    Ok((point - p).iter().map(|v| v.abs()).sum::<f64>() + (lambda.sum() - 1.0).abs())
}

/// Extreme points of a planar point cloud (monotone chain, collinear points dropped).
fn hull_2d(points: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut pts: Vec<&DVector<f64>> = points.iter().collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    if pts.len() < 3 {
        return pts.into_iter().cloned().collect();
    }
    let cross = |o: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let scale = points.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let eps = 1e-14 * (1.0 + scale * scale);
    let mut hull: Vec<&DVector<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &&DVector<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= eps
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.is_empty() {
        return vec![pts[0].clone()];
    }
    hull.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn box_requires_interior_origin() {
        assert!(AxisBox::new(v(&[0.0]), v(&[1.0])).is_err());
        assert!(AxisBox::new(v(&[-1.0]), v(&[f64::INFINITY])).is_err());
        assert!(AxisBox::new(v(&[-1.0, -1.0]), v(&[1.0])).is_err());
    }

    #[test]
    fn scaling_boxes() {
        let b = AxisBox::symmetric(&[2.0, 2.0]).unwrap();
        assert_eq!(b.scale(0.5).unwrap(), AxisBox::symmetric(&[1.0, 1.0]).unwrap());
        assert_eq!(b.scale(1.0).unwrap(), b);
        let speed = AxisBox::symmetric(&[8.0]).unwrap().scale(0.9228).unwrap();
        assert_abs_diff_eq!(speed.hi()[0], 7.3824, epsilon = 1e-12);
        assert_abs_diff_eq!(speed.lo()[0], -7.3824, epsilon = 1e-12);
        assert!(matches!(b.scale(1.5), Err(Error::Parameter(_))));
        assert!(b.to_set().scale(-0.1).is_err());
    }

    #[test]
    fn images_and_sums() {
        let sq = AxisBox::symmetric(&[1.0, 1.0]).unwrap().to_set();
        assert_eq!(sq.linear_image(&DMatrix::identity(2, 2)).unwrap(), sq);
        assert!(sq.linear_image(&DMatrix::zeros(3, 2)).unwrap().is_origin());
        let seg = sq
            .linear_image(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))
            .unwrap();
        assert_eq!(seg.support(&v(&[1.0])), 2.0);
        assert_eq!(seg.support(&v(&[-1.0])), 2.0);
        assert!(sq.linear_image(&DMatrix::zeros(2, 3)).is_err());

        let a = AxisBox::symmetric(&[1.0]).unwrap().to_set();
        let b = AxisBox::symmetric(&[2.0]).unwrap().to_set();
        let s = a.minkowski_sum(&b).unwrap();
        assert_eq!(s.support(&v(&[1.0])), 3.0);
        assert_eq!(s.support(&v(&[-1.0])), 3.0);
        assert_eq!(sq.minkowski_sum(&ConvexSet::origin(2)).unwrap(), sq);
        assert!(a.minkowski_sum(&sq).is_err());
    }

    #[test]
    fn supports() {
        let sq = AxisBox::symmetric(&[2.0, 2.0]).unwrap().to_set();
        assert_eq!(sq.support(&v(&[1.0, 0.0])), 2.0);
        assert_eq!(ConvexSet::origin(3).support(&v(&[1.0, -2.0, 5.0])), 0.0);
    }

    #[test]
    fn membership() {
        let s = SolverSettings::default();
        let sq = AxisBox::symmetric(&[1.0, 1.0]).unwrap().to_set();
        assert!(sq.contains_point(&v(&[0.0, 0.0]), 1e-8, &s).unwrap());
        assert!(!sq.contains_point(&v(&[2.0, 0.0]), 1e-8, &s).unwrap());
        assert!(sq.contains_point(&v(&[1.0, -1.0]), 1e-8, &s).unwrap());
        assert!(sq.contains_point(&v(&[1.0]), 1e-8, &s).is_err());
    }

    #[test]
    fn empty_generator_list_rejected() {
        assert!(ConvexSet::new(2, vec![]).is_err());
        assert!(ConvexSet::new(2, vec![v(&[1.0])]).is_err());
    }

    #[test]
    fn pruning_keeps_extreme_points() {
        let s = SolverSettings::default();
        let sq = AxisBox::symmetric(&[1.0, 1.0]).unwrap().to_set();
        let sum = sq.minkowski_sum(&sq).unwrap();
        assert_eq!(sum.len(), 16);
        let p = sum.pruned(&s).unwrap();
        assert_eq!(p.len(), 4);
        for d in [v(&[1.0, 0.3]), v(&[-0.2, 1.0]), v(&[-1.0, -1.0])] {
            assert_abs_diff_eq!(p.support(&d), sum.support(&d), epsilon = 1e-12);
        }
        let cube = AxisBox::symmetric(&[1.0, 2.0, 3.0]).unwrap().to_set();
        let cube_sum = cube.minkowski_sum(&cube.scale(0.5).unwrap()).unwrap();
        let pc = cube_sum.pruned(&s).unwrap();
        assert_eq!(pc.len(), 8);
        let line = AxisBox::symmetric(&[1.0]).unwrap().to_set();
        assert_eq!(line.minkowski_sum(&line).unwrap().pruned(&s).unwrap().len(), 2);
        assert_eq!(ConvexSet::origin(2).pruned(&s).unwrap().len(), 1);
    }
}
