//! Compressed sparse row matrices and the symmetric positive definite
//! solvers used by the truth model.
//!
//! Factorizations use reverse Cuthill–McKee ordering followed by an envelope
//! (variable-band) Cholesky factorization, which is compact and fast for the
//! 2D meshes handled here. A Jacobi-preconditioned conjugate gradient solver
//! is provided as the alternative backend.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from (row, col, value) triplets, summing duplicates.
    ///
    /// Duplicates are summed in their input order, so the result is a
    /// deterministic function of the triplet sequence.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut count = vec![0usize; nrows + 1];
        for &(i, _, _) in triplets {
            count[i + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            debug_assert!(j < ncols);
            let p = next[i];
            cols[p] = j;
            vals[p] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for i in 0..nrows {
            let (s, e) = (count[i], count[i + 1]);
            order.clear();
            order.extend(s..e);
            order.sort_by_key(|&p| cols[p]);
            let mut last = usize::MAX;
            for &p in &order {
                if cols[p] == last {
                    *values.last_mut().unwrap() += vals[p];
                } else {
                    indices.push(cols[p]);
                    values.push(vals[p]);
                    last = cols[p];
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(p) => v[p],
            Err(_) => 0.0,
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            let mut s = 0.0;
            for (j, a) in c.iter().zip(v) {
                s += a * x[*j];
            }
            *yi = s;
        }
    }

    /// y += alpha A x
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            let mut s = 0.0;
            for (j, a) in c.iter().zip(v) {
                s += a * x[*j];
            }
            *yi += alpha * s;
        }
    }

    /// y = A^T x
    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, xi) in x.iter().enumerate() {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                y[*j] += a * xi;
            }
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// Sum of `theta_p A_p` for matrices of equal shape (patterns may differ).
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?
            .1;
        let (nr, nc) = (first.nrows, first.ncols);
        if terms.iter().any(|(_, m)| m.nrows != nr || m.ncols != nc) {
            return Err(Error::InvalidArgument("shape mismatch in linear combination".into()));
        }
        if terms.iter().all(|(_, m)| m.indptr == first.indptr && m.indices == first.indices) {
            let mut out = first.clone();
            out.values.iter_mut().for_each(|v| *v = 0.0);
            for (t, m) in terms {
                for (o, v) in out.values.iter_mut().zip(&m.values) {
                    *o += t * v;
                }
            }
            return Ok(out);
        }
        let mut indptr = Vec::with_capacity(nr + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for i in 0..nr {
            acc.clear();
            for (t, m) in terms {
                let (c, v) = m.row(i);
                acc.extend(c.iter().zip(v).map(|(j, a)| (*j, t * a)));
            }
            acc.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(j, v) in &acc {
                if j == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                    last = j;
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows: nr,
            ncols: nc,
            indptr,
            indices,
            values,
        })
    }

    /// Extracts the block with the given row and column index lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &j) in cols.iter().enumerate() {
            col_map[j] = k;
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut row_buf: Vec<(usize, f64)> = Vec::new();
        for &i in rows {
            row_buf.clear();
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                let k = col_map[*j];
                if k != usize::MAX {
                    row_buf.push((k, *a));
                }
            }
            row_buf.sort_by_key(|e| e.0);
            for &(k, a) in &row_buf {
                indices.push(k);
                values.push(a);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: rows.len(),
            ncols: cols.len(),
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                d[(i, *j)] += a;
            }
        }
        d
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Largest |A_ij - A_ji| divided by the largest |A_ij|.
    pub fn symmetry_defect(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut defect: f64 = 0.0;
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                scale = scale.max(a.abs());
                defect = defect.max((a - self.get(*j, i)).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            defect / scale
        }
    }

    /// Coordinate text dump: a header `rows <m> cols <n> nnz <k>` followed by
    /// one `i j value` line per stored entry (zero-based indices).
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rows {} cols {} nnz {}", self.nrows, self.ncols, self.nnz());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                let _ = writeln!(s, "{i} {j} {a:?}");
            }
        }
        s
    }

    pub fn from_coordinate_text(text: &str) -> Result<CsrMatrix> {
        let bad = |m: &str| Error::Format(format!("coordinate text: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let h: Vec<&str> = lines.next().ok_or_else(|| bad("missing header"))?.split_whitespace().collect();
        if h.len() != 6 || h[0] != "rows" || h[2] != "cols" || h[4] != "nnz" {
            return Err(bad("malformed header"));
        }
        let p = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let (m, n, k) = (p(h[1])?, p(h[3])?, p(h[5])?);
        let mut t = Vec::with_capacity(k);
        for l in lines {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("entry line needs three values"));
            }
            let (i, j) = (p(f[0])?, p(f[1])?);
            if i >= m || j >= n {
                return Err(bad("index out of range"));
            }
            t.push((i, j, f[2].parse::<f64>().map_err(|_| bad("bad value"))?));
        }
        if t.len() != k {
            return Err(bad("entry count differs from header"));
        }
        Ok(CsrMatrix::from_triplets(m, n, &t))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Reverse Cuthill–McKee permutation of a structurally symmetric matrix.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, visited_global: &[bool]| -> (Vec<usize>, usize) {
        let mut level = vec![usize::MAX; n];
        let mut q = std::collections::VecDeque::new();
        level[start] = 0;
        q.push_back(start);
        let mut last = start;
        let mut depth = 0;
        while let Some(v) = q.pop_front() {
            last = v;
            depth = level[v];
            for &w in a.row(v).0 {
                if level[w] == usize::MAX && !visited_global[w] {
                    level[w] = level[v] + 1;
                    q.push_back(w);
                }
            }
        }
        let _ = last;
        let far: Vec<usize> = (0..n).filter(|&v| level[v] == depth).collect();
        (far, depth)
    };
    loop {
        let Some(seed) = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| degree[v]) else {
            break;
        };
        // pseudo-peripheral start node
        let mut start = seed;
        let (mut far, mut depth) = bfs_levels(start, &visited);
        for _ in 0..8 {
            let cand = *far.iter().min_by_key(|&&v| degree[v]).unwrap();
            let (f2, d2) = bfs_levels(cand, &visited);
            if d2 > depth {
                start = cand;
                far = f2;
                depth = d2;
            } else {
                break;
            }
        }
        let mut q = std::collections::VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        let mut nbrs = Vec::new();
        while let Some(v) = q.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(a.row(v).0.iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            for &w in &nbrs {
                visited[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Symbolic envelope structure of a symmetric matrix under a fixed ordering.
///
/// Row `i` of the factor stores columns `first[i]..=i` contiguously.
#[derive(Clone, Debug)]
pub struct EnvelopeSymbolic {
    perm: Vec<usize>,
    iperm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
}

impl EnvelopeSymbolic {
    /// Builds the envelope of `pattern` (any matrix with the sparsity pattern
    /// of every matrix that will later be factorized) under RCM ordering.
    pub fn new(pattern: &CsrMatrix) -> Result<Self> {
        if pattern.nrows() != pattern.ncols() {
            return Err(Error::InvalidArgument("envelope of non-square matrix".into()));
        }
        if pattern.nrows() == 0 {
            return Err(Error::EmptyMatrix("cannot factorize a 0x0 matrix".into()));
        }
        let perm = rcm_ordering(pattern);
        Ok(Self::with_permutation(pattern, perm))
    }

    pub fn with_permutation(pattern: &CsrMatrix, perm: Vec<usize>) -> Self {
        let n = pattern.nrows();
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = iperm[old];
            for &jo in pattern.row(old).0 {
                let j = iperm[jo];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        Self {
            perm,
            iperm,
            first,
            offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn envelope_size(&self) -> usize {
        *self.offset.last().unwrap()
    }

    /// Numeric factorization of `a`, whose pattern must fit the envelope.
    pub fn factor(&self, a: &CsrMatrix) -> Result<EnvelopeCholesky> {
        let n = self.dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{}, envelope is for dimension {n}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut l = vec![0.0; self.envelope_size()];
        for old in 0..n {
            let i = self.iperm[old];
            let (c, v) = a.row(old);
            for (jo, val) in c.iter().zip(v) {
                let j = self.iperm[*jo];
                if j <= i {
                    if j < self.first[i] {
                        return Err(Error::InvalidArgument(
                            "matrix pattern exceeds the symbolic envelope".into(),
                        ));
                    }
                    l[self.offset[i] + j - self.first[i]] += val;
                }
            }
        }
        let mut max_diag: f64 = 0.0;
        for i in 0..n {
            max_diag = max_diag.max(l[self.offset[i] + i - self.first[i]].abs());
        }
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let k0 = fi.max(fj);
                let (ri, rj) = (oi + k0 - fi, oj + k0 - fj);
                let len = j - k0;
                let mut s = 0.0;
                {
                    let (li, lj) = (&l[ri..ri + len], &l[rj..rj + len]);
                    for k in 0..len {
                        s += li[k] * lj[k];
                    }
                }
                let djj = l[oj + j - fj];
                let p = oi + j - fi;
                l[p] = (l[p] - s) / djj;
            }
            let row = &l[oi..oi + i - fi];
            let s: f64 = row.iter().map(|x| x * x).sum();
            let p = oi + i - fi;
            let d = l[p] - s;
            if !(d > 1e-14 * max_diag) {
                return Err(Error::NotCoercive(format!(
                    "non-positive pivot {d:.3e} at row {i} of {n}"
                )));
            }
            l[p] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            symbolic: self.clone(),
            l,
        })
    }
}

/// Numeric envelope Cholesky factor `P A P^T = L L^T`.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    symbolic: EnvelopeSymbolic,
    l: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        EnvelopeSymbolic::new(a)?.factor(a)
    }

    pub fn dim(&self) -> usize {
        self.symbolic.dim()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let s = &self.symbolic;
        let n = s.dim();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = (0..n).map(|i| b[s.perm[i]]).collect();
        // L y = Pb
        for i in 0..n {
            let fi = s.first[i];
            let oi = s.offset[i];
            let row = &self.l[oi..oi + i - fi];
            let mut acc = 0.0;
            for (k, lv) in row.iter().enumerate() {
                acc += lv * y[fi + k];
            }
            y[i] = (y[i] - acc) / self.l[oi + i - fi];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let fi = s.first[i];
            let oi = s.offset[i];
            y[i] /= self.l[oi + i - fi];
            let yi = y[i];
            let row = &self.l[oi..oi + i - fi];
            for (k, lv) in row.iter().enumerate() {
                y[fi + k] -= lv * yi;
            }
        }
        for i in 0..n {
            b[s.perm[i]] = y[i];
        }
    }

    /// log det A
    pub fn log_det(&self) -> f64 {
        let s = &self.symbolic;
        (0..s.dim())
            .map(|i| 2.0 * self.l[s.offset[i] + i - s.first[i]].ln())
            .sum()
    }
}

/// Settings of the conjugate gradient backend.
#[derive(Clone, Copy, Debug)]
pub struct CgSettings {
    /// Stop once ||r|| <= rel_tol ||b||.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_iter: 20_000,
        }
    }
}

/// Jacobi-preconditioned conjugate gradients.
pub fn pcg(a: &CsrMatrix, b: &[f64], settings: CgSettings) -> Result<Vec<f64>> {
    let n = a.nrows();
    let diag = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::NotCoercive("non-positive diagonal entry".into()));
    }
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..settings.max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotCoercive(format!("p^T A p = {pap:.3e} at iteration {it}")));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rn = norm2(&r);
        if rn <= settings.rel_tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: norm2(&r) / bnorm,
    })
}

/// SPD solver backend.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum SolverKind {
    /// Envelope Cholesky, accurate to rounding.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned CG to the given relative residual.
    Cg(f64),
}

/// Factorized or iterative solver for one SPD matrix.
pub enum SpdSolver {
    Direct(EnvelopeCholesky),
    Iterative(CsrMatrix, CgSettings),
}

impl SpdSolver {
    pub fn new(a: &CsrMatrix, kind: SolverKind, symbolic: Option<&EnvelopeSymbolic>) -> Result<Self> {
        match kind {
            SolverKind::Cholesky => {
                let f = match symbolic {
                    Some(s) => s.factor(a)?,
                    None => EnvelopeCholesky::new(a)?,
                };
                Ok(SpdSolver::Direct(f))
            }
            SolverKind::Cg(tol) => Ok(SpdSolver::Iterative(
                a.clone(),
                CgSettings {
                    rel_tol: tol,
                    ..CgSettings::default()
                },
            )),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpdSolver::Direct(f) => Ok(f.solve(b)),
            SpdSolver::Iterative(a, s) => pcg(a, b, *s),
        }
    }
}

/// Largest eigenvalue of a linear operator that is self-adjoint in the
/// inner product `inner`, by Lanczos with full reorthogonalization.
pub fn lanczos_max_eigenvalue(
    n: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    inner: impl Fn(&[f64], &[f64]) -> f64,
    steps: usize,
    seed: u64,
) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nv = inner(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let m = steps.min(n).max(1);
    for j in 0..m {
        let mut w = apply(&basis[j]);
        let a = inner(&w, &basis[j]);
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = inner(&w, q);
                axpy(-c, q, &mut w);
            }
        }
        let b = inner(&w, &w).max(0.0).sqrt();
        if j + 1 == m || b < 1e-12 * a.abs().max(1e-300) {
            break;
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t.symmetric_eigenvalues().max()
}
