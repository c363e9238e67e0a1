//! Reduced-basis trunks: weak greedy and POD construction, projection of the
//! affine terms, the online system and a-posteriori error estimation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::ParametricModel;
use crate::sparse::{axpy, dot, lanczos_max_eigenvalue, CsrMatrix};
use crate::{Error, Result};

/// Relative post-orthogonalization norm below which a candidate is treated
/// as linearly dependent.
pub const REJECT_TOL: f64 = 1e-10;

/// How a reduced space was obtained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub tolerance: f64,
    pub n_max: usize,
    /// Indices into the training set of the selected snapshots (greedy).
    pub selected: Vec<usize>,
    pub selected_parameters: Vec<Vec<f64>>,
    pub seed: Option<u64>,
    pub alpha_strategy: String,
    pub estimator_route: Option<String>,
    pub training_size: usize,
}

/// A reduced trunk together with every projected block.
#[derive(Clone, Debug)]
pub struct RBSpace {
    /// N0 x N, columns orthonormal in the reference energy inner product.
    pub basis: DMatrix<f64>,
    /// Reduced operator terms, one per affine operator term.
    pub operators: Vec<DMatrix<f64>>,
    /// Reduced load terms.
    pub loads: Vec<DVector<f64>>,
    /// Psi^T A*_II Psi.
    pub gram: DMatrix<f64>,
    /// Psi^T M_II Psi.
    pub mass: DMatrix<f64>,
    pub alpha_lb: f64,
    pub provenance: Provenance,
}

/// The N-sized part of an [`RBSpace`]; holds nothing proportional to N0.
#[derive(Clone, Debug)]
pub struct OnlineSystem {
    operators: Vec<DMatrix<f64>>,
    loads: Vec<DVector<f64>>,
    alpha_lb: f64,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Columns of `A * basis` for a sparse A.
pub fn apply_sparse_to_columns(a: &CsrMatrix, basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (n0, n) = basis.shape();
    let mut out = DMatrix::zeros(a.nrows(), n);
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| a.matvec(&basis.as_slice()[j * n0..(j + 1) * n0]))
        .collect();
    for (j, c) in cols.iter().enumerate() {
        out.column_mut(j).copy_from_slice(c);
    }
    out
}

/// Psi^T A Psi (symmetrized).
pub fn project_operator(a: &CsrMatrix, basis: &DMatrix<f64>) -> DMatrix<f64> {
    let ap = apply_sparse_to_columns(a, basis);
    let mut r = basis.tr_mul(&ap);
    symmetrize(&mut r);
    r
}

/// Reduced operator and load blocks: A_p^N = Psi^T A_p Psi, F_q^N = Psi^T F_q.
pub fn reduce_operators(
    model: &ParametricModel,
    basis: &DMatrix<f64>,
    loads: &[Vec<f64>],
) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
    let ops = (0..model.q_a())
        .map(|p| project_operator(model.term_ii(p), basis))
        .collect();
    let fs = loads
        .iter()
        .map(|f| basis.tr_mul(&DVector::from_column_slice(f)))
        .collect();
    (ops, fs)
}

impl RBSpace {
    /// Projects every block of `model` (and the given load terms) onto `basis`.
    pub fn from_basis(
        model: &ParametricModel,
        basis: DMatrix<f64>,
        loads: &[Vec<f64>],
        alpha_lb: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if basis.ncols() == 0 {
            return Err(Error::EmptySpace);
        }
        if basis.nrows() != model.n0() {
            return Err(Error::InvalidArgument("basis rows must equal N0".into()));
        }
        let (operators, loads) = reduce_operators(model, &basis, loads);
        let gram = project_operator(model.star_ii(), &basis);
        let mass = project_operator(model.mass_ii(), &basis);
        Ok(Self {
            basis,
            operators,
            loads,
            gram,
            mass,
            alpha_lb,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn n0(&self) -> usize {
        self.basis.nrows()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n0 = self.n0();
        &self.basis.as_slice()[j * n0..(j + 1) * n0]
    }

    /// The online view, without the trunk matrix.
    pub fn online(&self) -> OnlineSystem {
        OnlineSystem {
            operators: self.operators.clone(),
            loads: self.loads.clone(),
            alpha_lb: self.alpha_lb,
        }
    }

    /// Psi c in interior coordinates.
    pub fn reconstruct(&self, c: &[f64]) -> Vec<f64> {
        let v = &self.basis * DVector::from_column_slice(c);
        v.as_slice().to_vec()
    }

    /// Coefficients of the A*-orthogonal projection of w onto the trunk.
    pub fn project(&self, model: &ParametricModel, w: &[f64]) -> DVector<f64> {
        let aw = DVector::from_vec(model.star_ii().matvec(w));
        self.basis.tr_mul(&aw)
    }

    /// Largest deviation of the reference Gram from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        (&self.gram - DMatrix::<f64>::identity(n, n)).amax()
    }
}

impl OnlineSystem {
    pub fn new(operators: Vec<DMatrix<f64>>, loads: Vec<DVector<f64>>, alpha_lb: f64) -> Self {
        Self {
            operators,
            loads,
            alpha_lb,
        }
    }

    pub fn dim(&self) -> usize {
        self.operators.first().map_or(0, |a| a.nrows())
    }

    pub fn q_a(&self) -> usize {
        self.operators.len()
    }

    pub fn q_f(&self) -> usize {
        self.loads.len()
    }

    pub fn alpha_lb(&self) -> f64 {
        self.alpha_lb
    }

    pub fn operators(&self) -> &[DMatrix<f64>] {
        &self.operators
    }

    pub fn loads(&self) -> &[DVector<f64>] {
        &self.loads
    }

    /// sum_p theta_p A_p^N written into `out`.
    pub fn assemble_operator_into(&self, theta_a: &[f64], out: &mut DMatrix<f64>) {
        debug_assert_eq!(theta_a.len(), self.q_a());
        out.fill(0.0);
        for (t, a) in theta_a.iter().zip(&self.operators) {
            if *t != 0.0 {
                for (o, v) in out.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    *o += t * v;
                }
            }
        }
    }

    pub fn assemble_operator(&self, theta_a: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        self.assemble_operator_into(theta_a, &mut a);
        a
    }

    pub fn assemble_load(&self, theta_f: &[f64]) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim());
        self.assemble_load_into(theta_f, f.as_mut_slice());
        f
    }

    /// sum_q theta_q F_q^N written into `out`.
    pub fn assemble_load_into(&self, theta_f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(theta_f.len(), self.q_f());
        out.fill(0.0);
        for (t, b) in theta_f.iter().zip(&self.loads) {
            if *t != 0.0 {
                for (o, v) in out.iter_mut().zip(b.iter()) {
                    *o += t * v;
                }
            }
        }
    }

    /// (A_rb, F_rb) at the given coefficient values.
    pub fn assemble(&self, theta_a: &[f64], theta_f: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        (self.assemble_operator(theta_a), self.assemble_load(theta_f))
    }
}

/// Dense Cholesky solve of the reduced system A_rb c = F_rb.
pub fn rb_galerkin_solve(a_rb: &DMatrix<f64>, f_rb: &DVector<f64>) -> Result<DVector<f64>> {
    solve_reduced(a_rb, f_rb, 0)
}

pub(crate) fn solve_reduced(a: &DMatrix<f64>, f: &DVector<f64>, sample: usize) -> Result<DVector<f64>> {
    let ch = nalgebra::Cholesky::new(a.clone()).ok_or_else(|| Error::CoercivityViolation {
        sample,
        detail: "reduced operator is not positive definite".into(),
    })?;
    Ok(ch.solve(f))
}

/// Gram–Schmidt in the inner product induced by `apply`, applied twice.
///
/// `images[j]` must equal `apply(basis[j])`. Returns the normalized vector and
/// its image, or `None` when the candidate is dependent on the basis.
pub(crate) fn orthonormalize_against(
    basis: &[Vec<f64>],
    images: &[Vec<f64>],
    candidate: &[f64],
    apply: impl Fn(&[f64]) -> Vec<f64>,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let pre = dot(candidate, &apply(candidate)).max(0.0).sqrt();
    if pre == 0.0 || !pre.is_finite() {
        return None;
    }
    let mut v = candidate.to_vec();
    for _ in 0..2 {
        for (b, ib) in basis.iter().zip(images) {
            let c = dot(ib, &v);
            axpy(-c, b, &mut v);
        }
    }
    let mut av = apply(&v);
    let nv = dot(&v, &av).max(0.0).sqrt();
    if nv < REJECT_TOL * pre {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= nv);
    av.iter_mut().for_each(|x| *x /= nv);
    Some((v, av))
}

/// A*-orthonormalizes `candidate` against the columns of `basis`.
pub fn v_orthonormalize(model: &ParametricModel, basis: &DMatrix<f64>, candidate: &[f64]) -> Option<Vec<f64>> {
    let n0 = model.n0();
    let cols: Vec<Vec<f64>> = (0..basis.ncols())
        .map(|j| basis.as_slice()[j * n0..(j + 1) * n0].to_vec())
        .collect();
    let imgs: Vec<Vec<f64>> = cols.iter().map(|c| model.star_ii().matvec(c)).collect();
    orthonormalize_against(&cols, &imgs, candidate, |x| model.star_ii().matvec(x)).map(|(v, _)| v)
}

/// Residual-based error bound alpha_LB^-1 ||F - A_II(k) Psi c||_{(A*)^-1}.
pub fn estimator(
    model: &ParametricModel,
    space: &RBSpace,
    k: &[f64],
    c: &[f64],
    f_hat: &[f64],
) -> f64 {
    let psi_c = space.reconstruct(c);
    let mut rho = f_hat.to_vec();
    axpy(-1.0, &model.apply_a_ii_theta(&model.theta_a(k), &psi_c), &mut rho);
    let z = model.star_solve(&rho);
    dot(&rho, &z).max(0.0).sqrt() / space.alpha_lb
}

/// Strategies for the coercivity lower bound alpha_LB.
#[derive(Clone, Debug)]
pub enum CoercivityStrategy {
    /// min over the samples of min_p theta_p(k) / theta_p(k*), never below
    /// `floor`. Valid for parametrically coercive forms.
    MinTheta { samples: Vec<Vec<f64>>, floor: f64 },
    /// Smallest generalized eigenvalue of (A_II(k), A*_II) over the vertices
    /// of a parameter box, scaled by `safety`. Valid when the operator
    /// coefficients are affine in k, since the bound is concave in k.
    BoxVertices {
        lower: Vec<f64>,
        upper: Vec<f64>,
        safety: f64,
    },
    /// A value computed elsewhere.
    Fixed(f64),
}

impl CoercivityStrategy {
    pub fn label(&self) -> String {
        match self {
            CoercivityStrategy::MinTheta { floor, .. } => format!("min-theta(floor={floor})"),
            CoercivityStrategy::BoxVertices { safety, .. } => format!("box-vertices(safety={safety})"),
            CoercivityStrategy::Fixed(v) => format!("fixed({v})"),
        }
    }
}

/// Smallest eigenvalue of the pencil (A_II(theta), A*_II).
pub fn min_generalized_eigenvalue(model: &ParametricModel, theta: &[f64]) -> Result<f64> {
    let solver = model.truth_solver_theta(theta)?;
    let a = model.a_ii_theta(theta)?;
    let n = model.n0();
    let top = lanczos_max_eigenvalue(
        n,
        |x| solver.solve(&model.star_ii().matvec(x)).unwrap_or_else(|_| vec![f64::NAN; n]),
        |x, y| dot(x, &a.matvec(y)),
        120,
        7,
    );
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::NotCoercive("generalized eigenvalue estimate failed".into()));
    }
    Ok(1.0 / top)
}

pub fn coercivity_lower_bound(model: &ParametricModel, strategy: &CoercivityStrategy) -> Result<f64> {
    match strategy {
        CoercivityStrategy::Fixed(v) => Ok(*v),
        CoercivityStrategy::MinTheta { samples, floor } => {
            let star = model.theta_a(model.reference());
            let mut m = f64::INFINITY;
            for k in samples {
                for (t, s) in model.theta_a(k).iter().zip(&star) {
                    if *s <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "min-theta bound needs positive reference coefficients".into(),
                        ));
                    }
                    m = m.min(t / s);
                }
            }
            if !m.is_finite() {
                return Err(Error::InvalidArgument("no samples for the coercivity bound".into()));
            }
            Ok(m.max(*floor))
        }
        CoercivityStrategy::BoxVertices { lower, upper, safety } => {
            let d = lower.len();
            if upper.len() != d || d != model.parameter_dim() {
                return Err(Error::InvalidArgument("box dimension mismatch".into()));
            }
            let mut m = f64::INFINITY;
            for mask in 0..(1usize << d) {
                let k: Vec<f64> = (0..d)
                    .map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                    .collect();
                m = m.min(min_generalized_eigenvalue(model, &model.theta_a(&k))?);
            }
            Ok(safety * m)
        }
    }
}

/// One parameter of the greedy training set with its load coefficients.
#[derive(Clone, Debug)]
pub struct GreedySample {
    pub k: Vec<f64>,
    pub theta_f: Vec<f64>,
}

/// Greedy samples whose load coefficients come from the model's own
/// parameter map.
pub fn affine_samples(model: &ParametricModel, ks: &[Vec<f64>]) -> Vec<GreedySample> {
    ks.iter()
        .map(|k| GreedySample {
            k: k.clone(),
            theta_f: model.theta_f(k),
        })
        .collect()
}

/// How the dual norm of the residual is evaluated inside the greedy loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorRoute {
    /// Full-order residual and one reference solve per sample and iteration.
    Direct,
    /// Riesz representers of every affine residual term expanded in an
    /// A*-orthonormal basis, so per-sample work is independent of N0 and free
    /// of squared-norm cancellation.
    OfflineOnline,
}

#[derive(Clone, Debug)]
pub struct GreedyConfig {
    /// Stop once the largest estimator drops to this value.
    pub tol: f64,
    /// Hard cap on the basis size (the fixed-N mode uses tol = 0).
    pub n_max: usize,
    pub alpha_lb: f64,
    pub route: EstimatorRoute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub basis_size: usize,
    pub max_estimator: f64,
    pub argmax: usize,
    /// Training index selected for enrichment after this sweep.
    pub selected: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub steps: Vec<GreedyStep>,
    /// Training index of the initial snapshot.
    pub initial: usize,
}

impl GreedyTrace {
    pub fn max_estimators(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.max_estimator).collect()
    }
}

/// Per-sample reduced factorization grown one row at a time.
#[derive(Clone, Default)]
struct SampleState {
    theta_a: Vec<f64>,
    // packed rows of the Cholesky factor
    l: Vec<f64>,
    // L^{-1} F_rb
    y: Vec<f64>,
    c: Vec<f64>,
    load_coords: Vec<f64>,
    eta: f64,
}

/// A*-orthonormal basis of the span of all residual Riesz representers.
struct RieszBasis {
    u: Vec<Vec<f64>>,
    au: Vec<Vec<f64>>,
    // coordinates of A*^{-1} F_q
    load: Vec<Vec<f64>>,
    // [p][j]: coordinates of A*^{-1} A_p psi_j
    ops: Vec<Vec<Vec<f64>>>,
}

impl RieszBasis {
    fn new(q_a: usize) -> Self {
        Self {
            u: Vec::new(),
            au: Vec::new(),
            load: Vec::new(),
            ops: vec![Vec::new(); q_a],
        }
    }

    /// Adds A*^{-1} rhs and returns its coordinates.
    fn add(&mut self, model: &ParametricModel, rhs: &[f64]) -> Vec<f64> {
        let s = model.star_solve(rhs);
        let norm2 = dot(&s, rhs).max(0.0);
        let mut coords: Vec<f64> = self.u.iter().map(|u| dot(u, rhs)).collect();
        let mut v = s;
        for (c, u) in coords.iter().zip(&self.u) {
            axpy(-c, u, &mut v);
        }
        for (i, (u, au)) in self.u.iter().zip(&self.au).enumerate() {
            let c = dot(au, &v);
            coords[i] += c;
            axpy(-c, u, &mut v);
        }
        let av = model.star_ii().matvec(&v);
        let nv = dot(&v, &av).max(0.0).sqrt();
        if nv > 1e-13 * norm2.sqrt() {
            self.u.push(v.iter().map(|x| x / nv).collect());
            self.au.push(av.iter().map(|x| x / nv).collect());
            coords.push(nv);
        }
        coords
    }

    fn dim(&self) -> usize {
        self.u.len()
    }

    fn operator_matrix(&self, p: usize) -> DMatrix<f64> {
        let n = self.ops[p].len();
        let d = self.dim();
        let mut m = DMatrix::zeros(d, n);
        for (j, c) in self.ops[p].iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

/// Weak greedy construction of an A*-orthonormal trunk.
///
/// `loads` are the affine load terms (interior rows) combined with each
/// sample's `theta_f`. The first sample seeds the space; afterwards the
/// sample with the largest estimator is added until the largest estimator is
/// at most `tol` or the basis has `n_max` columns.
pub fn greedy_build(
    model: &ParametricModel,
    loads: &[Vec<f64>],
    samples: &[GreedySample],
    config: &GreedyConfig,
) -> Result<(RBSpace, GreedyTrace)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("greedy needs at least one sample".into()));
    }
    if config.n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be positive".into()));
    }
    if !(config.alpha_lb > 0.0) {
        return Err(Error::InvalidArgument("alpha_lb must be positive".into()));
    }
    let q_a = model.q_a();
    let n0 = model.n0();
    for s in samples {
        if s.theta_f.len() != loads.len() || s.k.len() != model.parameter_dim() {
            return Err(Error::InvalidArgument("sample does not match the affine terms".into()));
        }
    }
    let load_of = |s: &GreedySample| -> Vec<f64> {
        let mut f = vec![0.0; n0];
        for (t, fq) in s.theta_f.iter().zip(loads) {
            if *t != 0.0 {
                axpy(*t, fq, &mut f);
            }
        }
        f
    };

    let mut states: Vec<SampleState> = samples
        .iter()
        .map(|s| SampleState {
            theta_a: model.theta_a(&s.k),
            ..Default::default()
        })
        .collect();

    let mut riesz = RieszBasis::new(q_a);
    if config.route == EstimatorRoute::OfflineOnline {
        let coords: Vec<Vec<f64>> = loads.iter().map(|f| riesz.add(model, f)).collect();
        riesz.load = coords;
        let d = riesz.dim();
        let lm = {
            let mut m = DMatrix::zeros(d, loads.len());
            for (q, c) in riesz.load.iter().enumerate() {
                for (i, v) in c.iter().enumerate() {
                    m[(i, q)] = *v;
                }
            }
            m
        };
        states.par_iter_mut().zip(samples).for_each(|(st, s)| {
            st.load_coords = (&lm * DVector::from_column_slice(&s.theta_f)).as_slice().to_vec();
        });
    }

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    // [p][j] = A_p psi_j
    let mut ap_psi: Vec<Vec<Vec<f64>>> = vec![Vec::new(); q_a];
    // reduced operator entries, [p] as growing dense matrix
    let mut red: Vec<Vec<Vec<f64>>> = vec![Vec::new(); q_a];
    // [q][j] = psi_j^T F_q
    let mut red_f: Vec<Vec<f64>> = vec![Vec::new(); loads.len()];
    let mut trace = GreedyTrace {
        steps: Vec::new(),
        initial: 0,
    };
    let mut provenance = Provenance {
        method: "greedy".into(),
        tolerance: config.tol,
        n_max: config.n_max,
        estimator_route: Some(format!("{:?}", config.route)),
        training_size: samples.len(),
        ..Default::default()
    };

    let mut pick = 0usize;
    loop {
        // truth snapshot at the picked sample and enrichment
        let s = &samples[pick];
        let w = model.truth_solve(&s.k, &load_of(s))?;
        let (psi, apsi) = match orthonormalize_against(&basis, &images, &w, |x| model.star_ii().matvec(x)) {
            Some(v) => v,
            None => {
                let max_estimator = trace.steps.last().map_or(f64::INFINITY, |st| st.max_estimator);
                return Err(Error::Stagnation {
                    basis_size: basis.len(),
                    max_estimator,
                });
            }
        };
        provenance.selected.push(pick);
        provenance.selected_parameters.push(s.k.clone());
        let j_new = basis.len();
        for p in 0..q_a {
            let ap = model.term_ii(p).matvec(&psi);
            let mut row: Vec<f64> = basis.iter().map(|b| dot(b, &ap)).collect();
            row.push(dot(&psi, &ap));
            for (j, r) in red[p].iter_mut().enumerate() {
                r.push(row[j]);
            }
            red[p].push(row);
            ap_psi[p].push(ap);
        }
        for (q, f) in loads.iter().enumerate() {
            red_f[q].push(dot(&psi, f));
        }
        basis.push(psi);
        images.push(apsi);
        if config.route == EstimatorRoute::OfflineOnline {
            for p in 0..q_a {
                let c = riesz.add(model, &ap_psi[p][j_new]);
                riesz.ops[p].push(c);
            }
        }

        // extend every per-sample factorization by one row
        let n = basis.len();
        let red_ref = &red;
        let red_f_ref = &red_f;
        let grow: Result<()> = states
            .par_iter_mut()
            .zip(samples.par_iter())
            .enumerate()
            .try_for_each(|(i, (st, s))| {
                let a: Vec<f64> = (0..n)
                    .map(|j| (0..q_a).map(|p| st.theta_a[p] * red_ref[p][j_new][j]).sum())
                    .collect();
                let f_new: f64 = s.theta_f.iter().enumerate().map(|(q, t)| t * red_f_ref[q][j_new]).sum();
                // l = L^{-1} a[..j_new]
                let mut l = vec![0.0; j_new];
                for r in 0..j_new {
                    let row = &st.l[r * (r + 1) / 2..r * (r + 1) / 2 + r + 1];
                    let mut acc = a[r];
                    for t in 0..r {
                        acc -= row[t] * l[t];
                    }
                    l[r] = acc / row[r];
                }
                let d = a[j_new] - l.iter().map(|x| x * x).sum::<f64>();
                if !(d > 0.0) {
                    return Err(Error::CoercivityViolation {
                        sample: i,
                        detail: format!("reduced pivot {d:.3e} at N = {n}"),
                    });
                }
                let lam = d.sqrt();
                let y_new = (f_new - dot(&l, &st.y)) / lam;
                st.l.extend_from_slice(&l);
                st.l.push(lam);
                st.y.push(y_new);
                // back substitution L^T c = y
                let mut c = st.y.clone();
                for r in (0..n).rev() {
                    let diag = st.l[r * (r + 1) / 2 + r];
                    c[r] /= diag;
                    let cr = c[r];
                    let row = &st.l[r * (r + 1) / 2..r * (r + 1) / 2 + r];
                    for t in 0..r {
                        c[t] -= row[t] * cr;
                    }
                }
                st.c = c;
                Ok(())
            });
        grow?;

        // estimator sweep
        match config.route {
            EstimatorRoute::OfflineOnline => {
                let mats: Vec<DMatrix<f64>> = (0..q_a).map(|p| riesz.operator_matrix(p)).collect();
                let d = riesz.dim();
                states.par_iter_mut().for_each(|st| {
                    let c = DVector::from_column_slice(&st.c);
                    let mut v = DVector::zeros(d);
                    v.rows_mut(0, st.load_coords.len())
                        .copy_from_slice(&st.load_coords);
                    for (p, m) in mats.iter().enumerate() {
                        if st.theta_a[p] != 0.0 {
                            v.gemv(-st.theta_a[p], m, &c, 1.0);
                        }
                    }
                    st.eta = v.norm() / config.alpha_lb;
                });
            }
            EstimatorRoute::Direct => {
                let psi_mat = DMatrix::from_fn(n0, n, |r, j| basis[j][r]);
                states
                    .par_iter_mut()
                    .zip(samples.par_iter())
                    .for_each(|(st, s)| {
                        let psi_c = (&psi_mat * DVector::from_column_slice(&st.c)).as_slice().to_vec();
                        let mut rho = load_of(s);
                        axpy(-1.0, &model.apply_a_ii_theta(&st.theta_a, &psi_c), &mut rho);
                        let z = model.star_solve(&rho);
                        st.eta = dot(&rho, &z).max(0.0).sqrt() / config.alpha_lb;
                    });
            }
        }
        let mut argmax = 0;
        let mut max_eta = f64::NEG_INFINITY;
        for (i, st) in states.iter().enumerate() {
            if st.eta > max_eta {
                max_eta = st.eta;
                argmax = i;
            }
        }
        let done = max_eta <= config.tol || n >= config.n_max;
        trace.steps.push(GreedyStep {
            basis_size: n,
            max_estimator: max_eta,
            argmax,
            selected: if done { None } else { Some(argmax) },
        });
        if done {
            break;
        }
        pick = argmax;
    }

    let n = basis.len();
    let mut psi = DMatrix::zeros(n0, n);
    for (j, b) in basis.iter().enumerate() {
        psi.column_mut(j).copy_from_slice(b);
    }
    let space = RBSpace::from_basis(model, psi, loads, config.alpha_lb, provenance)?;
    Ok((space, trace))
}

/// Stopping rule of the POD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PodCriterion {
    /// Smallest N with (sum_{i>N} lambda_i) / (sum_i lambda_i) <= eps^2.
    Energy(f64),
    /// Smallest N with (sum_{i>N} lambda_i) / (sum_i lambda_i) <= tol.
    RelativeTail(f64),
    Fixed(usize),
}

#[derive(Clone, Debug)]
pub struct PodResult {
    pub space: RBSpace,
    /// Eigenvalues of the snapshot correlation matrix, descending, clipped.
    pub eigenvalues: Vec<f64>,
    /// Same eigenvalues before clipping. Only the leading part when the
    /// snapshot count exceeds [`DENSE_POD_LIMIT`].
    pub raw_eigenvalues: Vec<f64>,
    /// Trace of the correlation matrix, i.e. the sum of all eigenvalues.
    pub trace: f64,
    pub training_size: usize,
}

impl PodResult {
    /// sum_{i > n} lambda_i over the unclipped spectrum.
    pub fn tail(&self, n: usize) -> f64 {
        spectral_tail(&self.raw_eigenvalues, self.trace, self.training_size, n)
    }
}

/// Above this many snapshots the correlation eigenproblem is solved by
/// randomized subspace iteration for the leading pairs only.
pub const DENSE_POD_LIMIT: usize = 2500;

impl PodCriterion {
    fn bound(&self) -> f64 {
        match *self {
            PodCriterion::Energy(eps) => eps * eps,
            PodCriterion::RelativeTail(tol) => tol,
            PodCriterion::Fixed(_) => 0.0,
        }
    }
}

// Full spectrum: sum from the small end. Partial: trace minus the head.
fn spectral_tail(raw: &[f64], trace: f64, nk: usize, n: usize) -> f64 {
    if raw.len() == nk {
        raw.iter().skip(n).rev().sum()
    } else {
        (trace - raw.iter().take(n).sum::<f64>()).max(0.0)
    }
}

struct Spectrum {
    raw: Vec<f64>,
    vectors: DMatrix<f64>,
    trace: f64,
    nk: usize,
}

impl Spectrum {
    fn tail(&self, n: usize) -> f64 {
        spectral_tail(&self.raw, self.trace, self.nk, n)
    }

    fn criterion_met(&self, c: PodCriterion) -> bool {
        (1..self.raw.len()).any(|n| self.tail(n) / self.trace <= c.bound())
    }
}

fn dense_spectrum(model: &ParametricModel, s: &DMatrix<f64>) -> Spectrum {
    let nk = s.ncols();
    let g = snapshot_correlation(model, s);
    let trace = g.trace();
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..nk).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vectors = DMatrix::zeros(nk, nk);
    for (m, &i) in order.iter().enumerate() {
        vectors.column_mut(m).copy_from(&eig.eigenvectors.column(i));
    }
    Spectrum { raw: order.iter().map(|&i| eig.eigenvalues[i]).collect(), vectors, trace, nk }
}

// Leading k eigenpairs of G = S^T A* S / N_k by subspace iteration from a
// seeded uniform random block, finished with a Rayleigh-Ritz step.
fn randomized_spectrum(s: &DMatrix<f64>, a_s: &DMatrix<f64>, k: usize) -> Spectrum {
    use rand::{Rng, SeedableRng};
    const OVERSAMPLE: usize = 10;
    const POWER_STEPS: usize = 3;
    let nk = s.ncols();
    let l = (k + OVERSAMPLE).min(nk);
    let scale = 1.0 / nk as f64;
    let apply = |x: &DMatrix<f64>| s.tr_mul(&(a_s * x)) * scale;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9d0);
    let omega = DMatrix::from_fn(nk, l, |_, _| rng.random_range(-1.0..1.0));
    let mut q = apply(&omega).qr().q();
    for _ in 0..POWER_STEPS {
        q = apply(&q).qr().q();
    }
    let gq = apply(&q);
    let mut b = q.tr_mul(&gq);
    symmetrize(&mut b);
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(k);
    let mut v = DMatrix::zeros(l, k);
    for (m, &i) in order.iter().enumerate() {
        v.column_mut(m).copy_from(&eig.eigenvectors.column(i));
    }
    let trace = (0..nk).map(|j| s.column(j).dot(&a_s.column(j))).sum::<f64>() * scale;
    Spectrum {
        raw: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: q * v,
        trace,
        nk,
    }
}

/// Correlation matrix (w_i, w_j)_{A*} / N_k of the snapshots.
pub fn snapshot_correlation(model: &ParametricModel, snapshots: &DMatrix<f64>) -> DMatrix<f64> {
    let a_s = apply_sparse_to_columns(model.star_ii(), snapshots);
    let mut g = snapshots.tr_mul(&a_s);
    symmetrize(&mut g);
    g / snapshots.ncols() as f64
}

/// POD by the method of snapshots in the reference energy inner product.
pub fn pod_build(
    model: &ParametricModel,
    snapshots: &[Vec<f64>],
    criterion: PodCriterion,
    loads: &[Vec<f64>],
    alpha_lb: f64,
) -> Result<PodResult> {
    let nk = snapshots.len();
    if nk == 0 {
        return Err(Error::InvalidArgument("POD needs at least one snapshot".into()));
    }
    let n0 = model.n0();
    if snapshots.iter().any(|s| s.len() != n0) {
        return Err(Error::InvalidArgument("snapshot length differs from N0".into()));
    }
    let mut s = DMatrix::zeros(n0, nk);
    for (j, w) in snapshots.iter().enumerate() {
        s.column_mut(j).copy_from_slice(w);
    }
    let spec = if nk <= DENSE_POD_LIMIT {
        dense_spectrum(model, &s)
    } else {
        let a_s = apply_sparse_to_columns(model.star_ii(), &s);
        let mut k = match criterion {
            PodCriterion::Fixed(n) => n.max(1),
            _ => 24,
        }
        .min(nk);
        loop {
            let sp = randomized_spectrum(&s, &a_s, k);
            let done = match criterion {
                PodCriterion::Fixed(_) => true,
                _ => sp.criterion_met(criterion) || sp.raw.last().is_some_and(|l| *l < sp.raw[0] * 1e-14),
            };
            if done || k == nk {
                break sp;
            }
            k = (2 * k).min(nk);
        }
    };
    let lmax = spec.raw[0];
    if !(lmax > 0.0) {
        return Err(Error::EmptySpace);
    }
    let lambdas: Vec<f64> = spec.raw.iter().map(|&l| if l < lmax * 1e-14 { 0.0 } else { l }).collect();
    let rank = lambdas.iter().take_while(|l| **l > 0.0).count();
    let n = match criterion {
        PodCriterion::Fixed(n) => {
            if n == 0 {
                return Err(Error::InvalidArgument("fixed POD size must be positive".into()));
            }
            n.min(rank)
        }
        _ => (1..=rank).find(|&n| spec.tail(n) / spec.trace <= criterion.bound()).unwrap_or(rank),
    };
    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(n);
    for m in 0..n {
        let v = spec.vectors.column(m);
        let scale = 1.0 / (nk as f64 * lambdas[m]).sqrt();
        let psi: Vec<f64> = (&s * v).iter().map(|x| x * scale).collect();
        match orthonormalize_against(&modes, &images, &psi, |x| model.star_ii().matvec(x)) {
            Some((p, ap)) => {
                modes.push(p);
                images.push(ap);
            }
            None => break,
        }
    }
    if modes.is_empty() {
        return Err(Error::EmptySpace);
    }
    let mut psi = DMatrix::zeros(n0, modes.len());
    for (j, b) in modes.iter().enumerate() {
        psi.column_mut(j).copy_from_slice(b);
    }
    let provenance = Provenance {
        method: "pod".into(),
        tolerance: match criterion {
            PodCriterion::Energy(e) | PodCriterion::RelativeTail(e) => e,
            PodCriterion::Fixed(_) => 0.0,
        },
        n_max: n,
        training_size: nk,
        ..Default::default()
    };
    let space = RBSpace::from_basis(model, psi, loads, alpha_lb, provenance)?;
    Ok(PodResult {
        space,
        eigenvalues: lambdas,
        raw_eigenvalues: spec.raw,
        trace: spec.trace,
        training_size: nk,
    })
}
