//! Newton-system solver for the primal-dual interior point iteration.
//!
//! Each iteration solves
//!
//! ```text
//! [ H   A' ] [dz]   [r1]
//! [ A   0  ] [dy] = [r2],      H = P + G' diag(sigma) G
//! ```
//!
//! Variables are partitioned into independent blocks (connected components of
//! the coupling graph induced by `P` and the rows of `G`). When every block
//! factors, the system is reduced onto the equality multipliers; otherwise a
//! dense LU of the whole (regularized) matrix is used. Both routes finish with
//! a few steps of iterative refinement against the unregularized matrix.

use std::cell::OnceCell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

const PRIMAL_REG: f64 = 1e-9;
const DUAL_REG: f64 = 1e-9;
const REFINE_STEPS: usize = 3;

/// Row-wise sparse view of a dense matrix.
#[derive(Debug, Clone)]
pub(crate) struct SparseRows {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter_map(|j| {
                        let v = m[(i, j)];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self {
            ncols: m.ncols(),
            rows,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .map(|r| r.iter().map(|&(j, v)| v * x[j]).sum::<f64>()),
        )
    }

    pub fn mul_t(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (r, &yi) in self.rows.iter().zip(y.iter()) {
            if yi != 0.0 {
                for &(j, v) in r {
                    out[j] += v * yi;
                }
            }
        }
        out
    }
}

/// Precomputed sparsity structure shared by every iteration of one solve.
#[derive(Debug, Clone)]
pub(crate) struct KktStructure {
    n: usize,
    p: usize,
    blocks: Vec<Vec<usize>>,
    /// Block index and position within the block for every variable.
    locate: Vec<(usize, usize)>,
    /// Inequality rows grouped by block.
    block_rows: Vec<Vec<usize>>,
    /// Equality rows touching each block.
    block_eq_rows: Vec<Vec<usize>>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

impl KktStructure {
    pub fn new(p_mat: &DMatrix<f64>, a: &SparseRows, g: &SparseRows) -> Self {
        let n = p_mat.nrows();
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if p_mat[(i, j)] != 0.0 || p_mat[(j, i)] != 0.0 {
                    union(&mut parent, i, j);
                }
            }
        }
        for row in &g.rows {
            if let Some(&(first, _)) = row.first() {
                for &(j, _) in &row[1..] {
                    union(&mut parent, first, j);
                }
            }
        }
        let mut root_to_block = vec![usize::MAX; n];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut locate = vec![(0, 0); n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if root_to_block[r] == usize::MAX {
                root_to_block[r] = blocks.len();
                blocks.push(Vec::new());
            }
            let b = root_to_block[r];
            locate[i] = (b, blocks[b].len());
            blocks[b].push(i);
        }
        let mut block_rows = vec![Vec::new(); blocks.len()];
        for (ri, row) in g.rows.iter().enumerate() {
            if let Some(&(first, _)) = row.first() {
                block_rows[locate[first].0].push(ri);
            }
        }
        let mut block_eq_rows = vec![Vec::new(); blocks.len()];
        for (ri, row) in a.rows.iter().enumerate() {
            let mut touched: Vec<usize> = row.iter().map(|&(j, _)| locate[j].0).collect();
            touched.sort_unstable();
            touched.dedup();
            for b in touched {
                block_eq_rows[b].push(ri);
            }
        }
        Self {
            n,
            p: a.nrows(),
            blocks,
            locate,
            block_rows,
            block_eq_rows,
        }
    }
}

enum Reduced {
    Chol(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

enum Factor {
    Blocked {
        blocks: Vec<Cholesky<f64, Dyn>>,
        schur: Option<Reduced>,
    },
    Full(LU<f64, Dyn, Dyn>),
}

/// One factorization of the Newton matrix for a fixed `sigma`.
pub(crate) struct KktFactor<'a> {
    st: &'a KktStructure,
    p_mat: &'a DMatrix<f64>,
    a: &'a SparseRows,
    g: &'a SparseRows,
    sigma: Vec<f64>,
    factor: Factor,
    fallback: OnceCell<Option<Factor>>,
}

impl<'a> KktFactor<'a> {
    pub fn new(
        st: &'a KktStructure,
        p_mat: &'a DMatrix<f64>,
        a: &'a SparseRows,
        g: &'a SparseRows,
        sigma: &[f64],
    ) -> Result<Self> {
        let factor = match Self::blocked(st, p_mat, a, g, sigma) {
            Some(f) => f,
            None => Self::full(st, p_mat, a, g, sigma)?,
        };
        Ok(Self {
            st,
            p_mat,
            a,
            g,
            sigma: sigma.to_vec(),
            factor,
            fallback: OnceCell::new(),
        })
    }

    fn block_hessian(
        st: &KktStructure,
        p_mat: &DMatrix<f64>,
        g: &SparseRows,
        sigma: &[f64],
        b: usize,
    ) -> DMatrix<f64> {
        let vars = &st.blocks[b];
        let nb = vars.len();
        let mut h = DMatrix::zeros(nb, nb);
        for (li, &i) in vars.iter().enumerate() {
            for (lj, &j) in vars.iter().enumerate() {
                h[(li, lj)] = p_mat[(i, j)];
            }
            h[(li, li)] += PRIMAL_REG;
        }
        for &r in &st.block_rows[b] {
            let s = sigma[r];
            let row = &g.rows[r];
            for &(i, vi) in row {
                let li = st.locate[i].1;
                for &(j, vj) in row {
                    h[(li, st.locate[j].1)] += s * vi * vj;
                }
            }
        }
        h
    }

    fn blocked(
        st: &KktStructure,
        p_mat: &DMatrix<f64>,
        a: &SparseRows,
        g: &SparseRows,
        sigma: &[f64],
    ) -> Option<Factor> {
        let mut chols = Vec::with_capacity(st.blocks.len());
        let mut schur = DMatrix::<f64>::zeros(st.p, st.p);
        for b in 0..st.blocks.len() {
            let chol = Cholesky::new(Self::block_hessian(st, p_mat, g, sigma, b))?;
            let rows = &st.block_eq_rows[b];
            if !rows.is_empty() {
                let nb = st.blocks[b].len();
                let mut a_sub = DMatrix::zeros(nb, rows.len());
                for (c, &r) in rows.iter().enumerate() {
                    for &(j, v) in &a.rows[r] {
                        let (bj, lj) = st.locate[j];
                        if bj == b {
                            a_sub[(lj, c)] = v;
                        }
                    }
                }
                let w = chol.solve(&a_sub);
                let contrib = a_sub.transpose() * w;
                for (ci, &ri) in rows.iter().enumerate() {
                    for (cj, &rj) in rows.iter().enumerate() {
                        schur[(ri, rj)] += contrib[(ci, cj)];
                    }
                }
            }
            chols.push(chol);
        }
        let schur = if st.p == 0 {
            None
        } else {
            for i in 0..st.p {
                schur[(i, i)] += DUAL_REG;
            }
            Some(match Cholesky::new(schur.clone()) {
                Some(c) => Reduced::Chol(c),
                None => Reduced::Lu(schur.lu()),
            })
        };
        Some(Factor::Blocked {
            blocks: chols,
            schur,
        })
    }

    fn full(
        st: &KktStructure,
        p_mat: &DMatrix<f64>,
        a: &SparseRows,
        g: &SparseRows,
        sigma: &[f64],
    ) -> Result<Factor> {
        let (n, p) = (st.n, st.p);
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n)).copy_from(p_mat);
        for i in 0..n {
            k[(i, i)] += PRIMAL_REG;
        }
        for (r, row) in g.rows.iter().enumerate() {
            let s = sigma[r];
            for &(i, vi) in row {
                for &(j, vj) in row {
                    k[(i, j)] += s * vi * vj;
                }
            }
        }
        for (r, row) in a.rows.iter().enumerate() {
            for &(j, v) in row {
                k[(n + r, j)] = v;
                k[(j, n + r)] = v;
            }
            k[(n + r, n + r)] = -DUAL_REG;
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return Err(Error::Solver("singular Newton system".into()));
        }
        Ok(Factor::Full(lu))
    }

    fn solve_h(&self, chols: &[Cholesky<f64, Dyn>], r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.st.n);
        for (b, vars) in self.st.blocks.iter().enumerate() {
            let local = DVector::from_iterator(vars.len(), vars.iter().map(|&i| r[i]));
            let x = chols[b].solve(&local);
            for (li, &i) in vars.iter().enumerate() {
                out[i] = x[li];
            }
        }
        out
    }

    fn solve_regularized(
        &self,
        factor: &Factor,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        match factor {
            Factor::Blocked { blocks, schur } => {
                let t = self.solve_h(blocks, r1);
                let dy = match schur {
                    None => DVector::zeros(0),
                    Some(s) => {
                        let rhs = self.a.mul(&t) - r2;
                        match s {
                            Reduced::Chol(c) => c.solve(&rhs),
                            Reduced::Lu(lu) => lu.solve(&rhs)?,
                        }
                    }
                };
                let dz = self.solve_h(blocks, &(r1 - self.a.mul_t(&dy)));
                Some((dz, dy))
            }
            Factor::Full(lu) => {
                let n = self.st.n;
                let mut rhs = DVector::zeros(n + self.st.p);
                rhs.rows_mut(0, n).copy_from(r1);
                rhs.rows_mut(n, self.st.p).copy_from(r2);
                let x = lu.solve(&rhs)?;
                Some((x.rows(0, n).into_owned(), x.rows(n, self.st.p).into_owned()))
            }
        }
    }

    /// Unregularized matrix-vector product with the Newton matrix.
    fn apply(&self, dz: &DVector<f64>, dy: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let gz = self.g.mul(dz);
        let weighted = DVector::from_iterator(
            gz.len(),
            gz.iter().zip(&self.sigma).map(|(v, s)| v * s),
        );
        let top = self.p_mat * dz + self.g.mul_t(&weighted) + self.a.mul_t(dy);
        (top, self.a.mul(dz))
    }

    fn refined(
        &self,
        factor: &Factor,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, f64)> {
        let (mut dz, mut dy) = self.solve_regularized(factor, r1, r2)?;
        let mut residual = f64::INFINITY;
        for step in 0..=REFINE_STEPS {
            let (k1, k2) = self.apply(&dz, &dy);
            let e1 = r1 - k1;
            let e2 = r2 - k2;
            residual = e1.amax().max(e2.amax());
            if step == REFINE_STEPS || !residual.is_finite() {
                break;
            }
            let (cz, cy) = self.solve_regularized(factor, &e1, &e2)?;
            dz += cz;
            dy += cy;
        }
        if !residual.is_finite() || dz.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dz, dy, residual))
    }

    pub fn solve(
        &self,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let scale = 1.0 + r1.amax().max(r2.amax());
        let primary = self.refined(&self.factor, r1, r2);
        if let Some((dz, dy, res)) = &primary {
            if *res <= 1e-9 * scale || matches!(self.factor, Factor::Full(_)) {
                return Ok((dz.clone(), dy.clone()));
            }
        }
        let fallback = self.fallback.get_or_init(|| {
            Self::full(self.st, self.p_mat, self.a, self.g, &self.sigma).ok()
        });
        let secondary = fallback
            .as_ref()
            .and_then(|f| self.refined(f, r1, r2));
        match (primary, secondary) {
            (Some(a), Some(b)) => Ok(if a.2 <= b.2 { (a.0, a.1) } else { (b.0, b.1) }),
            (Some(a), None) => Ok((a.0, a.1)),
            (None, Some(b)) => Ok((b.0, b.1)),
            (None, None) => Err(Error::Solver("Newton system solve failed".into())),
        }
    }
}
