//! Compression of exogenous data (Dirichlet traces and load functionals)
//! into low-dimensional modal coordinates, and the reduced right-hand side
//! assembled from those coordinates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::ParametricModel;
use crate::reduction::{RBSpace, REJECT_TOL};
use crate::sparse::{axpy, dot};
use crate::{Error, Result};

/// Outcome of a mode greedy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeTrace {
    /// Largest indicator after each accepted mode.
    pub max_indicator: Vec<f64>,
    /// Snapshot index of each accepted mode.
    pub selected: Vec<usize>,
    /// Snapshots skipped as linearly dependent.
    pub skipped: Vec<usize>,
    pub seed: u64,
    pub tolerance: f64,
    /// Largest snapshot norm.
    pub scale: f64,
}

struct ModeGreedy {
    modes: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
    trace: ModeTrace,
}

/// Greedy over explicit residual vectors in the inner product (x, B y).
///
/// Starts from a seeded random snapshot, then repeatedly adds the snapshot
/// with the largest projection error until that error is at most `tol` or
/// `r_max` modes exist.
fn mode_greedy(
    snapshots: Vec<Vec<f64>>,
    apply: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    tol: f64,
    r_max: usize,
    seed: u64,
) -> Result<ModeGreedy> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("mode greedy needs snapshots".into()));
    }
    if r_max == 0 {
        return Err(Error::InvalidArgument("r_max must be positive".into()));
    }
    let norm = |v: &[f64]| dot(v, &apply(v)).max(0.0).sqrt();
    let initial: Vec<f64> = snapshots.par_iter().map(|s| norm(s)).collect();
    let scale = initial.iter().cloned().fold(0.0f64, f64::max);
    if !(scale > 0.0) {
        return Err(Error::EmptySpace);
    }
    let mut residuals = snapshots;
    let mut current = initial.clone();
    let mut alive = vec![true; residuals.len()];
    let mut out = ModeGreedy {
        modes: Vec::new(),
        images: Vec::new(),
        trace: ModeTrace {
            seed,
            tolerance: tol,
            scale,
            ..Default::default()
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nonzero: Vec<usize> = (0..residuals.len()).filter(|&i| initial[i] > 0.0).collect();
    let mut pick = nonzero[rng.random_range(0..nonzero.len())];
    loop {
        // two passes of Gram-Schmidt on the stored residual
        let mut v = residuals[pick].clone();
        for _ in 0..2 {
            for (m, bm) in out.modes.iter().zip(&out.images) {
                let c = dot(bm, &v);
                axpy(-c, m, &mut v);
            }
        }
        let bv = apply(&v);
        let nv = dot(&v, &bv).max(0.0).sqrt();
        if nv <= REJECT_TOL * initial[pick] || nv == 0.0 {
            alive[pick] = false;
            out.trace.skipped.push(pick);
        } else {
            let m: Vec<f64> = v.iter().map(|x| x / nv).collect();
            let bm: Vec<f64> = bv.iter().map(|x| x / nv).collect();
            residuals
                .par_iter_mut()
                .zip(current.par_iter_mut())
                .for_each(|(r, cur)| {
                    let c = dot(&bm, r);
                    if c != 0.0 {
                        axpy(-c, &m, r);
                        *cur = dot(r, &apply(r)).max(0.0).sqrt();
                    }
                });
            current[pick] = 0.0;
            out.modes.push(m);
            out.images.push(bm);
            out.trace.selected.push(pick);
        }
        let (arg, worst) = current
            .iter()
            .enumerate()
            .filter(|(i, _)| alive[*i])
            .fold((usize::MAX, 0.0f64), |b, (i, c)| if *c > b.1 { (i, *c) } else { b });
        if nv > REJECT_TOL * initial[pick] {
            out.trace.max_indicator.push(worst);
        }
        if worst <= tol || out.modes.len() >= r_max || arg == usize::MAX {
            break;
        }
        pick = arg;
    }
    if out.modes.is_empty() {
        return Err(Error::EmptySpace);
    }
    Ok(out)
}

fn columns(v: &[Vec<f64>], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, v.len());
    for (j, c) in v.iter().enumerate() {
        m.column_mut(j).copy_from_slice(c);
    }
    m
}

/// Dirichlet-trace modes, orthonormal in the boundary metric W_Gamma.
#[derive(Clone, Debug)]
pub struct BoundaryModes {
    /// |B_D| x r_g
    pub modes: DMatrix<f64>,
    /// W_Gamma * modes
    pub weighted: DMatrix<f64>,
    /// Interior blocks of the discrete liftings, N0 x r_g.
    pub lifted: DMatrix<f64>,
    pub trace: ModeTrace,
}

/// Load modes: A*-orthonormal Riesz representers of the load snapshots.
#[derive(Clone, Debug)]
pub struct SourceModes {
    /// N0 x r_f
    pub modes: DMatrix<f64>,
    /// A*_II * modes, the functionals the modes represent.
    pub images: DMatrix<f64>,
    pub trace: ModeTrace,
}

impl ModeTrace {
    /// Smallest rank whose indicator is at most `tol`, if the run got there.
    pub fn rank_at(&self, tol: f64) -> Option<usize> {
        self.max_indicator.iter().position(|e| *e <= tol).map(|i| i + 1)
    }

    fn truncated(&self, r: usize) -> Self {
        let mut t = self.clone();
        t.max_indicator.truncate(r);
        t.selected.truncate(r);
        t
    }
}

impl BoundaryModes {
    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    /// The first `r` modes; greedy modes are nested.
    pub fn truncate(&self, r: usize) -> Self {
        let r = r.min(self.rank());
        Self {
            modes: self.modes.columns(0, r).into_owned(),
            weighted: self.weighted.columns(0, r).into_owned(),
            lifted: self.lifted.columns(0, r).into_owned(),
            trace: self.trace.truncated(r),
        }
    }

    pub fn gram_defect(&self) -> f64 {
        let g = self.modes.tr_mul(&self.weighted);
        (g - DMatrix::identity(self.rank(), self.rank())).abs().max()
    }

    /// b_n = eta_n^T W_Gamma g_B.
    pub fn encode(&self, g_b: &[f64]) -> Result<Vec<f64>> {
        if g_b.len() != self.modes.nrows() {
            return Err(Error::InvalidArgument("trace has wrong length".into()));
        }
        Ok(self.weighted.tr_mul(&DVector::from_column_slice(g_b)).as_slice().to_vec())
    }

    /// H b
    pub fn decode(&self, b: &[f64]) -> Vec<f64> {
        (&self.modes * DVector::from_column_slice(b)).as_slice().to_vec()
    }

    /// Interior block of the lifting of H b.
    pub fn lifted_interior(&self, b: &[f64]) -> Vec<f64> {
        (&self.lifted * DVector::from_column_slice(b)).as_slice().to_vec()
    }
}

impl SourceModes {
    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    pub fn truncate(&self, r: usize) -> Self {
        let r = r.min(self.rank());
        Self {
            modes: self.modes.columns(0, r).into_owned(),
            images: self.images.columns(0, r).into_owned(),
            trace: self.trace.truncated(r),
        }
    }

    pub fn gram_defect(&self) -> f64 {
        let g = self.modes.tr_mul(&self.images);
        (g - DMatrix::identity(self.rank(), self.rank())).abs().max()
    }

    /// a_m = W_m^T F_I
    pub fn encode(&self, f_i: &[f64]) -> Result<Vec<f64>> {
        if f_i.len() != self.modes.nrows() {
            return Err(Error::InvalidArgument("load has wrong length".into()));
        }
        Ok(self.modes.tr_mul(&DVector::from_column_slice(f_i)).as_slice().to_vec())
    }

    /// The projected functional sum_m a_m A* W_m.
    pub fn decode(&self, a: &[f64]) -> Vec<f64> {
        (&self.images * DVector::from_column_slice(a)).as_slice().to_vec()
    }
}

/// Greedy compression of Dirichlet traces (nodal vectors on the Dirichlet
/// nodes) in the W_Gamma norm; each mode is lifted A*-harmonically.
pub fn boundary_greedy(
    model: &ParametricModel,
    traces: Vec<Vec<f64>>,
    tol: f64,
    r_max: usize,
    seed: u64,
) -> Result<BoundaryModes> {
    let nd = model.n_dirichlet();
    if traces.iter().any(|t| t.len() != nd) {
        return Err(Error::InvalidArgument("trace has wrong length".into()));
    }
    let w = model.w_gamma();
    let apply = |v: &[f64]| (w * DVector::from_column_slice(v)).as_slice().to_vec();
    let g = mode_greedy(traces, &apply, tol, r_max, seed)?;
    let lifted: Vec<Vec<f64>> = g
        .modes
        .par_iter()
        .map(|m| model.lift_interior(m))
        .collect::<Result<_>>()?;
    Ok(BoundaryModes {
        modes: columns(&g.modes, nd),
        weighted: columns(&g.images, nd),
        lifted: columns(&lifted, model.n0()),
        trace: g.trace,
    })
}

/// Greedy compression of interior load functionals through their Riesz
/// representers in the A* inner product.
pub fn source_greedy(
    model: &ParametricModel,
    loads: &[Vec<f64>],
    tol: f64,
    r_max: usize,
    seed: u64,
) -> Result<SourceModes> {
    let n0 = model.n0();
    if loads.iter().any(|f| f.len() != n0) {
        return Err(Error::InvalidArgument("load has wrong length".into()));
    }
    let reps: Vec<Vec<f64>> = loads.par_iter().map(|f| model.star_solve(f)).collect();
    let apply = |v: &[f64]| model.star_ii().matvec(v);
    let g = mode_greedy(reps, &apply, tol, r_max, seed)?;
    Ok(SourceModes {
        modes: columns(&g.modes, n0),
        images: columns(&g.images, n0),
        trace: g.trace,
    })
}

/// Distance in the dual norm between a functional and its modal projection.
pub fn source_projection_error(model: &ParametricModel, modes: &SourceModes, f_i: &[f64]) -> Result<f64> {
    let a = modes.encode(f_i)?;
    let mut r = f_i.to_vec();
    axpy(-1.0, &modes.decode(&a), &mut r);
    Ok(dot(&r, &model.star_solve(&r)).max(0.0).sqrt())
}

/// Load terms of the Case-II problem written as one affine family:
/// the r_f source images A* W_m, then for each operator term p the r_g
/// vectors -(A_p E eta_n)_I. Combine with [`case2_theta_f`].
pub fn case2_loads(model: &ParametricModel, source: &SourceModes, boundary: &BoundaryModes) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = source.images.column_iter().map(|c| c.as_slice().to_vec()).collect();
    for p in 0..model.q_a() {
        let cols: Vec<Vec<f64>> = (0..boundary.rank())
            .into_par_iter()
            .map(|n| {
                let mut v = model.term_ii(p).matvec(boundary.lifted.column(n).as_slice());
                model.term_ib(p).matvec_add(1.0, boundary.modes.column(n).as_slice(), &mut v);
                v.iter_mut().for_each(|x| *x = -*x);
                v
            })
            .collect();
        out.extend(cols);
    }
    out
}

/// [a; theta_a[0] b; theta_a[1] b; ...]
pub fn case2_theta_f(theta_a: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut t = a.to_vec();
    for tp in theta_a {
        t.extend(b.iter().map(|v| tp * v));
    }
    t
}

/// Reduced blocks of the Case-II right-hand side.
#[derive(Clone, Debug)]
pub struct Case2Blocks {
    /// Psi^T A* W, N x r_f.
    pub source: DMatrix<f64>,
    /// Psi^T (A_p E eta)_I per operator term, N x r_g each.
    pub lifting: Vec<DMatrix<f64>>,
}

impl Case2Blocks {
    pub fn new(model: &ParametricModel, space: &RBSpace, source: &SourceModes, boundary: &BoundaryModes) -> Self {
        let psi = &space.basis;
        let s = psi.tr_mul(&source.images);
        let lifting = (0..model.q_a())
            .map(|p| {
                let mut m = DMatrix::zeros(psi.ncols(), boundary.rank());
                for n in 0..boundary.rank() {
                    let mut v = model.term_ii(p).matvec(boundary.lifted.column(n).as_slice());
                    model.term_ib(p).matvec_add(1.0, boundary.modes.column(n).as_slice(), &mut v);
                    m.column_mut(n).copy_from(&psi.tr_mul(&DVector::from_vec(v)));
                }
                m
            })
            .collect();
        Self { source: s, lifting }
    }

    /// F_rb = S a - sum_p theta_p G_p b.
    pub fn reduced_rhs(&self, theta_a: &[f64], a: &[f64], b: &[f64]) -> DVector<f64> {
        let mut f = &self.source * DVector::from_column_slice(a);
        let bv = DVector::from_column_slice(b);
        for (t, g) in theta_a.iter().zip(&self.lifting) {
            f.gemv(-t, g, &bv, 1.0);
        }
        f
    }
}

/// Network input [k; a; b].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedFeature {
    pub k: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AugmentedFeature {
    pub fn new(k: &[f64], a: &[f64], b: &[f64]) -> Self {
        Self {
            k: k.to_vec(),
            a: a.to_vec(),
            b: b.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.k.len() + self.a.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.k.clone();
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.b);
        v
    }

    pub fn from_slice(x: &[f64], p: usize, r_f: usize, r_g: usize) -> Result<Self> {
        if x.len() != p + r_f + r_g {
            return Err(Error::InvalidArgument(format!(
                "feature of length {} does not split into {p} + {r_f} + {r_g}",
                x.len()
            )));
        }
        Ok(Self::new(&x[..p], &x[p..p + r_f], &x[p + r_f..]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass, assemble_stiffness, build_model, AffineSpec, Coefficient, FnParameterMap, Region};
    use crate::mesh::{tag_boundary, unit_square_mesh, BoundaryKind, BoundaryRule};
    use crate::sparse::SolverKind;
    use std::sync::Arc;

    fn model() -> ParametricModel {
        let mesh = unit_square_mesh(8).unwrap();
        let rule = BoundaryRule::new()
            .with_segment("left", BoundaryKind::Dirichlet)
            .with_segment("top", BoundaryKind::Dirichlet)
            .with_segment("bottom", BoundaryKind::Neumann)
            .with_segment("right", BoundaryKind::Neumann);
        let mesh = tag_boundary(&mesh, &rule).unwrap();
        let s = assemble_stiffness(&mesh, &Region::All, &Coefficient::Unit).unwrap();
        let m = assemble_mass(&mesh);
        build_model(
            &mesh,
            AffineSpec {
                operators: vec![s, m],
                loads: vec![],
                theta: Arc::new(FnParameterMap {
                    dim: 2,
                    theta_a: |k: &[f64]| k.to_vec(),
                    theta_f: |_: &[f64]| vec![],
                }),
                reference: vec![1.0, 1.0],
                solver: SolverKind::Cholesky,
            },
        )
        .unwrap()
    }

    fn random_vecs(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..len).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect()
    }

    #[test]
    fn multiples_of_one_trace_give_rank_one() {
        let m = model();
        let g = random_vecs(1, m.n_dirichlet(), 1).pop().unwrap();
        let traces: Vec<Vec<f64>> = [1.0, -2.0, 0.5, 3.0].iter().map(|s| g.iter().map(|x| s * x).collect()).collect();
        let bm = boundary_greedy(&m, traces, 1e-12, 10, 3).unwrap();
        assert_eq!(bm.rank(), 1);
        assert!(*bm.trace.max_indicator.last().unwrap() < 1e-12);
    }

    #[test]
    fn boundary_modes_orthonormal_and_encode() {
        let m = model();
        let traces = random_vecs(40, m.n_dirichlet(), 2);
        let bm = boundary_greedy(&m, traces, 1e-12, 8, 5).unwrap();
        assert_eq!(bm.rank(), 8);
        assert!(bm.gram_defect() < 1e-8);
        for w in bm.trace.max_indicator.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let e3 = bm.encode(bm.modes.column(2).as_slice()).unwrap();
        for (i, v) in e3.iter().enumerate() {
            assert!((v - if i == 2 { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        let b = vec![0.3, -1.0, 0.0, 2.0, 0.1, 0.0, 0.0, -0.4];
        let g = bm.decode(&b);
        let back = bm.encode(&g).unwrap();
        let rec = bm.decode(&back);
        let d: Vec<f64> = g.iter().zip(&rec).map(|(a, b)| a - b).collect();
        assert!(m.w_inner(&d, &d).sqrt() < 1e-8);
        assert!(bm.encode(&vec![0.0; m.n_dirichlet()]).unwrap().iter().all(|v| *v == 0.0));
        for n in 0..bm.rank() {
            let li = m.lift_interior(bm.modes.column(n).as_slice()).unwrap();
            for (a, b) in li.iter().zip(bm.lifted.column(n).iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_load_gives_rank_one() {
        let m = model();
        let f = random_vecs(1, m.n0(), 4);
        let sm = source_greedy(&m, &f, 0.0, 5, 0).unwrap();
        assert_eq!(sm.rank(), 1);
        assert_eq!(sm.trace.max_indicator, vec![0.0]);
    }

    #[test]
    fn source_encoding_matches_dense_dual_norm() {
        let m = model();
        let loads = random_vecs(30, m.n0(), 6);
        let sm = source_greedy(&m, &loads, 0.0, 6, 11).unwrap();
        assert!(sm.gram_defect() < 1e-8);
        let e = sm.encode(sm.images.column(4).as_slice()).unwrap();
        for (i, v) in e.iter().enumerate() {
            assert!((v - if i == 4 { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        // dense oracle: min over span of the A*-distance of the representer
        let a = m.star_ii_dense();
        let ainv = a.clone().cholesky().unwrap().inverse();
        let w = &sm.modes;
        for f in loads.iter().take(10) {
            let fv = DVector::from_column_slice(f);
            let q = &ainv * &fv;
            let g = w.tr_mul(&(&a * w));
            let rhs = w.tr_mul(&(&a * &q));
            let c = g.cholesky().unwrap().solve(&rhs);
            let d = &q - w * c;
            let dense = d.dot(&(&a * &d)).sqrt();
            let ours = source_projection_error(&m, &sm, f).unwrap();
            assert!((dense - ours).abs() <= 1e-10 * fv.norm().max(1.0), "{dense} vs {ours}");
        }
    }

    #[test]
    fn feature_round_trip() {
        let f = AugmentedFeature::new(&[1.0, 2.0, 3.0], &[4.0; 128], &[5.0; 16]);
        assert_eq!(f.len(), 147);
        let back = AugmentedFeature::from_slice(&f.to_vec(), 3, 128, 16).unwrap();
        assert_eq!(back, f);
        let k_only = AugmentedFeature::new(&[1.0, 2.0], &[], &[]);
        assert_eq!(k_only.to_vec(), vec![1.0, 2.0]);
        assert!(AugmentedFeature::from_slice(&[1.0; 5], 3, 1, 2).is_err());
    }

    #[test]
    fn case2_theta_layout() {
        let t = case2_theta_f(&[2.0, 3.0], &[1.0], &[1.0, -1.0]);
        assert_eq!(t, vec![1.0, 2.0, -2.0, 3.0, -3.0]);
    }

    #[test]
    fn truncation_equals_shorter_run() {
        let m = model();
        let traces = random_vecs(30, m.n_dirichlet(), 8);
        let long = boundary_greedy(&m, traces.clone(), 0.0, 7, 4).unwrap();
        let short = boundary_greedy(&m, traces, 0.0, 4, 4).unwrap();
        let cut = long.truncate(4);
        assert_eq!(cut.modes, short.modes);
        assert_eq!(cut.lifted, short.lifted);
        assert_eq!(cut.trace.max_indicator, short.trace.max_indicator);
        assert_eq!(long.trace.rank_at(f64::INFINITY), Some(1));
        assert_eq!(long.trace.rank_at(-1.0), None);
        let loads = random_vecs(20, m.n0(), 9);
        let sm = source_greedy(&m, &loads, 0.0, 6, 1).unwrap();
        assert_eq!(sm.truncate(3).modes, source_greedy(&m, &loads, 0.0, 3, 1).unwrap().modes);
    }
}
