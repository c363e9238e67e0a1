//! P1 finite-element assembly, Dirichlet elimination, discrete lifting and
//! the truth solver.
//!
//! Quadrature:
//! * stiffness: exact for elementwise-constant coefficients, which are
//!   sampled at the triangle centroid;
//! * mass: exact consistent P1 mass;
//! * volume loads: three-point mid-edge rule (exact for quadratics);
//! * boundary loads: two-point Gauss rule per edge.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::mesh::{BoundaryKind, TriMesh};
use crate::sparse::{axpy, dot, CsrMatrix, EnvelopeCholesky, EnvelopeSymbolic, SolverKind, SpdSolver};
use crate::{Error, Result};

const CHUNK: usize = 512;

/// Selection of triangles by subdomain label.
#[derive(Clone, Debug)]
pub enum Region {
    All,
    Tags(Vec<u32>),
}

impl Region {
    pub fn tag(t: u32) -> Self {
        Region::Tags(vec![t])
    }

    fn contains(&self, tag: u32) -> bool {
        match self {
            Region::All => true,
            Region::Tags(t) => t.contains(&tag),
        }
    }
}

/// Scalar stiffness coefficient.
pub enum Coefficient<'a> {
    Unit,
    /// One value per triangle.
    PerTriangle(&'a [f64]),
    /// A field sampled at triangle centroids.
    Field(&'a (dyn Fn([f64; 2]) -> f64 + Sync)),
}

/// Symmetric 2x2 tensor stored as `[xx, xy, yy]`.
pub type SymTensor = [f64; 3];

fn gradients(mesh: &TriMesh, t: usize) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = mesh.triangles[t];
    let p = [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]];
    let area = mesh.signed_area(t);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[i] = [
            (p[j][1] - p[k][1]) / (2.0 * area),
            (p[k][0] - p[j][0]) / (2.0 * area),
        ];
    }
    (g, area)
}

/// Element stiffness `area * grad(phi_i)^T K grad(phi_j)`.
pub fn element_stiffness(mesh: &TriMesh, t: usize, k: SymTensor) -> [[f64; 3]; 3] {
    let (g, area) = gradients(mesh, t);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        let kg = [k[0] * g[i][0] + k[1] * g[i][1], k[1] * g[i][0] + k[2] * g[i][1]];
        for j in 0..3 {
            out[i][j] = area * (kg[0] * g[j][0] + kg[1] * g[j][1]);
        }
    }
    out
}

fn assemble_elements(
    mesh: &TriMesh,
    region: &Region,
    local: impl Fn(usize) -> [[f64; 3]; 3] + Sync,
) -> Result<CsrMatrix> {
    let selected: Vec<usize> = (0..mesh.n_triangles())
        .filter(|&t| region.contains(mesh.triangle_tags[t]))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyMatrix(format!("region {region:?} selects no triangles")));
    }
    let parts: Vec<Vec<(usize, usize, f64)>> = selected
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut trip = Vec::with_capacity(9 * chunk.len());
            for &t in chunk {
                let ke = local(t);
                let v = mesh.triangles[t];
                for i in 0..3 {
                    for j in 0..3 {
                        trip.push((v[i], v[j], ke[i][j]));
                    }
                }
            }
            trip
        })
        .collect();
    let trip: Vec<_> = parts.into_iter().flatten().collect();
    let n = mesh.n_nodes();
    Ok(CsrMatrix::from_triplets(n, n, &trip))
}

/// P1 stiffness matrix over the selected triangles.
pub fn assemble_stiffness(mesh: &TriMesh, region: &Region, coefficient: &Coefficient) -> Result<CsrMatrix> {
    if let Coefficient::PerTriangle(c) = coefficient {
        if c.len() != mesh.n_triangles() {
            return Err(Error::InvalidArgument("one coefficient per triangle expected".into()));
        }
    }
    assemble_elements(mesh, region, |t| {
        let c = match coefficient {
            Coefficient::Unit => 1.0,
            Coefficient::PerTriangle(c) => c[t],
            Coefficient::Field(f) => f(mesh.centroid(t)),
        };
        element_stiffness(mesh, t, [c, 0.0, c])
    })
}

/// P1 stiffness with one symmetric tensor coefficient per triangle.
pub fn assemble_stiffness_tensor(mesh: &TriMesh, region: &Region, tensors: &[SymTensor]) -> Result<CsrMatrix> {
    if tensors.len() != mesh.n_triangles() {
        return Err(Error::InvalidArgument("one tensor per triangle expected".into()));
    }
    assemble_elements(mesh, region, |t| element_stiffness(mesh, t, tensors[t]))
}

/// Consistent P1 mass matrix.
pub fn assemble_mass(mesh: &TriMesh) -> CsrMatrix {
    assemble_elements(mesh, &Region::All, |t| {
        let a = mesh.signed_area(t) / 12.0;
        [[2.0 * a, a, a], [a, 2.0 * a, a], [a, a, 2.0 * a]]
    })
    .expect("a valid mesh has triangles")
}

fn segment_edges<'a>(mesh: &'a TriMesh, segments: &[&str]) -> Result<Vec<[usize; 2]>> {
    for s in segments {
        if !mesh.segment_kinds.contains_key(*s) {
            return Err(Error::InvalidArgument(format!("unknown boundary segment '{s}'")));
        }
    }
    Ok(mesh.edges_of_segments(segments).map(|e| e.nodes).collect())
}

/// 1D P1 mass on the edges of the given segments.
pub fn assemble_boundary_mass(mesh: &TriMesh, segments: &[&str]) -> Result<CsrMatrix> {
    let edges = segment_edges(mesh, segments)?;
    let mut trip = Vec::with_capacity(4 * edges.len());
    for [a, b] in edges {
        let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
        let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        let (d, o) = (len / 3.0, len / 6.0);
        trip.extend([(a, a, d), (a, b, o), (b, a, o), (b, b, d)]);
    }
    let n = mesh.n_nodes();
    Ok(CsrMatrix::from_triplets(n, n, &trip))
}

/// Load vector of a volume source, three-point mid-edge rule.
pub fn assemble_load_volume(mesh: &TriMesh, f: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_nodes()];
    for (t, v) in mesh.triangles.iter().enumerate() {
        let w = mesh.signed_area(t) / 3.0;
        for i in 0..3 {
            let (a, b) = (v[i], v[(i + 1) % 3]);
            let m = [
                0.5 * (mesh.nodes[a][0] + mesh.nodes[b][0]),
                0.5 * (mesh.nodes[a][1] + mesh.nodes[b][1]),
            ];
            let fv = w * f(m) * 0.5;
            out[a] += fv;
            out[b] += fv;
        }
    }
    out
}

/// Load vector of a boundary datum on the given segments, two-point Gauss
/// rule per edge.
pub fn assemble_load_boundary(
    mesh: &TriMesh,
    segments: &[&str],
    g: &(dyn Fn([f64; 2]) -> f64 + Sync),
) -> Result<Vec<f64>> {
    let edges = segment_edges(mesh, segments)?;
    let mut out = vec![0.0; mesh.n_nodes()];
    let s = 0.5 / 3f64.sqrt();
    for [a, b] in edges {
        let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
        let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        for xi in [0.5 - s, 0.5 + s] {
            let x = [p[0] + xi * (q[0] - p[0]), p[1] + xi * (q[1] - p[1])];
            let gv = 0.5 * len * g(x);
            out[a] += gv * (1.0 - xi);
            out[b] += gv * xi;
        }
    }
    Ok(out)
}

/// Partition of mesh nodes into free (interior) and Dirichlet nodes.
///
/// A node belongs to the Dirichlet set as soon as one incident boundary edge
/// is on a Dirichlet segment. Both index lists are sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct DofSplit {
    pub interior: Vec<usize>,
    pub dirichlet: Vec<usize>,
    /// For each mesh node: `Ok(i)` for interior position i, `Err(j)` for
    /// Dirichlet position j.
    pub slot: Vec<std::result::Result<usize, usize>>,
}

impl DofSplit {
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        let mut is_d = vec![false; mesh.n_nodes()];
        for e in mesh.edges_of_kind(BoundaryKind::Dirichlet) {
            is_d[e.nodes[0]] = true;
            is_d[e.nodes[1]] = true;
        }
        let mut interior = Vec::new();
        let mut dirichlet = Vec::new();
        let mut slot = Vec::with_capacity(mesh.n_nodes());
        for (v, d) in is_d.iter().enumerate() {
            if *d {
                slot.push(Err(dirichlet.len()));
                dirichlet.push(v);
            } else {
                slot.push(Ok(interior.len()));
                interior.push(v);
            }
        }
        Self {
            interior,
            dirichlet,
            slot,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.slot.len()
    }

    pub fn n0(&self) -> usize {
        self.interior.len()
    }

    pub fn n_dirichlet(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn restrict_interior(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&v| full[v]).collect()
    }

    pub fn restrict_dirichlet(&self, full: &[f64]) -> Vec<f64> {
        self.dirichlet.iter().map(|&v| full[v]).collect()
    }

    /// Node-ordered vector from interior and Dirichlet blocks.
    pub fn scatter(&self, interior: &[f64], dirichlet: &[f64]) -> Vec<f64> {
        assert_eq!(interior.len(), self.n0());
        assert_eq!(dirichlet.len(), self.n_dirichlet());
        self.slot
            .iter()
            .map(|s| match s {
                Ok(i) => interior[*i],
                Err(j) => dirichlet[*j],
            })
            .collect()
    }
}

/// Parameter-to-coefficient maps of an affine decomposition.
pub trait ParameterMap: Send + Sync {
    /// Number of parameters.
    fn dim(&self) -> usize;
    /// Operator coefficients, one per affine operator term.
    fn theta_a(&self, k: &[f64]) -> Vec<f64>;
    /// Load coefficients, one per affine load term.
    fn theta_f(&self, k: &[f64]) -> Vec<f64>;
}

/// Parameter map given by closures.
pub struct FnParameterMap<A, F> {
    pub dim: usize,
    pub theta_a: A,
    pub theta_f: F,
}

impl<A, F> ParameterMap for FnParameterMap<A, F>
where
    A: Fn(&[f64]) -> Vec<f64> + Send + Sync,
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn theta_a(&self, k: &[f64]) -> Vec<f64> {
        (self.theta_a)(k)
    }
    fn theta_f(&self, k: &[f64]) -> Vec<f64> {
        (self.theta_f)(k)
    }
}

/// Assembled affine terms handed to [`build_model`].
pub struct AffineSpec {
    /// Operator terms on the full node set.
    pub operators: Vec<CsrMatrix>,
    /// Load terms on the full node set.
    pub loads: Vec<Vec<f64>>,
    pub theta: Arc<dyn ParameterMap>,
    pub reference: Vec<f64>,
    pub solver: SolverKind,
}

/// Exogenous data of one problem instance: the interior rows of the load
/// functional and the nodal Dirichlet values.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub load: Vec<f64>,
    pub dirichlet: Vec<f64>,
}

/// The full-order parametric problem.
pub struct ParametricModel {
    pub dofs: DofSplit,
    ii: Vec<CsrMatrix>,
    ib: Vec<CsrMatrix>,
    loads_i: Vec<Vec<f64>>,
    theta: Arc<dyn ParameterMap>,
    reference: Vec<f64>,
    solver: SolverKind,
    symbolic: EnvelopeSymbolic,
    star_ii: CsrMatrix,
    star_ib: CsrMatrix,
    star_factor: EnvelopeCholesky,
    w_gamma: DMatrix<f64>,
    w_gamma_definite: bool,
    mass: CsrMatrix,
    mass_ii: CsrMatrix,
}

/// Assembles every block of the parametric model.
pub fn build_model(mesh: &TriMesh, spec: AffineSpec) -> Result<ParametricModel> {
    let n = mesh.n_nodes();
    if spec.operators.is_empty() {
        return Err(Error::InvalidArgument("at least one operator term is required".into()));
    }
    if spec.operators.iter().any(|a| a.nrows() != n || a.ncols() != n) {
        return Err(Error::InvalidArgument("operator terms must be node-by-node".into()));
    }
    if spec.loads.iter().any(|f| f.len() != n) {
        return Err(Error::InvalidArgument("load terms must have one entry per node".into()));
    }
    if spec.reference.len() != spec.theta.dim() {
        return Err(Error::InvalidArgument("reference parameter has wrong dimension".into()));
    }
    let qa = spec.theta.theta_a(&spec.reference).len();
    if qa != spec.operators.len() {
        return Err(Error::InvalidArgument(format!(
            "parameter map yields {qa} operator coefficients for {} terms",
            spec.operators.len()
        )));
    }
    let qf = spec.theta.theta_f(&spec.reference).len();
    if qf != spec.loads.len() {
        return Err(Error::InvalidArgument(format!(
            "parameter map yields {qf} load coefficients for {} terms",
            spec.loads.len()
        )));
    }
    let dofs = DofSplit::from_mesh(mesh);
    if dofs.n0() == 0 {
        return Err(Error::InvalidArgument("no free degrees of freedom".into()));
    }
    let ii: Vec<CsrMatrix> = spec
        .operators
        .iter()
        .map(|a| a.submatrix(&dofs.interior, &dofs.interior))
        .collect();
    let ib: Vec<CsrMatrix> = spec
        .operators
        .iter()
        .map(|a| a.submatrix(&dofs.interior, &dofs.dirichlet))
        .collect();
    let loads_i: Vec<Vec<f64>> = spec.loads.iter().map(|f| dofs.restrict_interior(f)).collect();

    let ones: Vec<(f64, &CsrMatrix)> = ii.iter().map(|a| (1.0, a)).collect();
    let union = CsrMatrix::linear_combination(&ones)?;
    let symbolic = EnvelopeSymbolic::new(&union)?;

    let theta_star = spec.theta.theta_a(&spec.reference);
    let star_full = combine(&spec.operators, &theta_star)?;
    let star_ii = star_full.submatrix(&dofs.interior, &dofs.interior);
    let star_ib = star_full.submatrix(&dofs.interior, &dofs.dirichlet);
    let star_bb = star_full.submatrix(&dofs.dirichlet, &dofs.dirichlet);
    let star_factor = symbolic
        .factor(&star_ii)
        .map_err(|e| Error::NotCoercive(format!("reference operator: {e}")))?;

    let nb = dofs.n_dirichlet();
    let mut w = star_bb.to_dense();
    if nb > 0 {
        let ib_dense = star_ib.to_dense();
        for j in 0..nb {
            let col: Vec<f64> = ib_dense.column(j).iter().copied().collect();
            let x = star_factor.solve(&col);
            for i in 0..nb {
                let s: f64 = ib_dense.column(i).iter().zip(&x).map(|(a, b)| a * b).sum();
                w[(i, j)] -= s;
            }
        }
        w = 0.5 * (&w + w.transpose());
    }
    let w_gamma_definite = nb == 0 || {
        let ev = w.clone().symmetric_eigenvalues();
        let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ev.iter().all(|&l| l > 1e-12 * max)
    };

    let mass = assemble_mass(mesh);
    let mass_ii = mass.submatrix(&dofs.interior, &dofs.interior);
    Ok(ParametricModel {
        dofs,
        ii,
        ib,
        loads_i,
        theta: spec.theta,
        reference: spec.reference,
        solver: spec.solver,
        symbolic,
        star_ii,
        star_ib,
        star_factor,
        w_gamma: w,
        w_gamma_definite,
        mass,
        mass_ii,
    })
}

fn combine(terms: &[CsrMatrix], theta: &[f64]) -> Result<CsrMatrix> {
    let t: Vec<(f64, &CsrMatrix)> = theta.iter().copied().zip(terms.iter()).collect();
    CsrMatrix::linear_combination(&t)
}

impl ParametricModel {
    pub fn n0(&self) -> usize {
        self.dofs.n0()
    }

    pub fn n_dirichlet(&self) -> usize {
        self.dofs.n_dirichlet()
    }

    pub fn n_nodes(&self) -> usize {
        self.dofs.n_nodes()
    }

    pub fn q_a(&self) -> usize {
        self.ii.len()
    }

    pub fn q_f(&self) -> usize {
        self.loads_i.len()
    }

    pub fn parameter_dim(&self) -> usize {
        self.theta.dim()
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn theta_map(&self) -> &Arc<dyn ParameterMap> {
        &self.theta
    }

    pub fn theta_a(&self, k: &[f64]) -> Vec<f64> {
        self.theta.theta_a(k)
    }

    pub fn theta_f(&self, k: &[f64]) -> Vec<f64> {
        self.theta.theta_f(k)
    }

    /// Interior-interior block of operator term p.
    pub fn term_ii(&self, p: usize) -> &CsrMatrix {
        &self.ii[p]
    }

    /// Interior-Dirichlet block of operator term p.
    pub fn term_ib(&self, p: usize) -> &CsrMatrix {
        &self.ib[p]
    }

    /// Interior rows of load term q.
    pub fn load_term(&self, q: usize) -> &[f64] {
        &self.loads_i[q]
    }

    pub fn load_terms(&self) -> &[Vec<f64>] {
        &self.loads_i
    }

    pub fn a_ii_theta(&self, theta: &[f64]) -> Result<CsrMatrix> {
        if theta.len() != self.q_a() {
            return Err(Error::InvalidArgument("wrong number of operator coefficients".into()));
        }
        combine(&self.ii, theta)
    }

    pub fn a_ii(&self, k: &[f64]) -> Result<CsrMatrix> {
        self.a_ii_theta(&self.theta_a(k))
    }

    pub fn a_ib(&self, k: &[f64]) -> Result<CsrMatrix> {
        combine(&self.ib, &self.theta_a(k))
    }

    /// y = A_II(theta) x without forming the matrix.
    pub fn apply_a_ii_theta(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n0()];
        for (t, a) in theta.iter().zip(&self.ii) {
            if *t != 0.0 {
                a.matvec_add(*t, x, &mut y);
            }
        }
        y
    }

    /// y = A_IB(theta) g without forming the matrix.
    pub fn apply_a_ib_theta(&self, theta: &[f64], g: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n0()];
        for (t, a) in theta.iter().zip(&self.ib) {
            if *t != 0.0 {
                a.matvec_add(*t, g, &mut y);
            }
        }
        y
    }

    pub fn star_ii(&self) -> &CsrMatrix {
        &self.star_ii
    }

    pub fn star_ib(&self) -> &CsrMatrix {
        &self.star_ib
    }

    /// Solves A*_II z = b.
    pub fn star_solve(&self, b: &[f64]) -> Vec<f64> {
        self.star_factor.solve(b)
    }

    /// (x, y) in the reference energy inner product.
    pub fn star_inner(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.star_ii.matvec(y))
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn mass_ii(&self) -> &CsrMatrix {
        &self.mass_ii
    }

    /// Boundary metric E^T A* E on the Dirichlet nodes.
    pub fn w_gamma(&self) -> &DMatrix<f64> {
        &self.w_gamma
    }

    /// False when the reference operator has a kernel that reaches the
    /// Dirichlet nodes (e.g. pure stiffness with constants in its kernel),
    /// in which case the boundary metric is only a seminorm.
    pub fn w_gamma_is_definite(&self) -> bool {
        self.w_gamma_definite
    }

    pub fn symbolic(&self) -> &EnvelopeSymbolic {
        &self.symbolic
    }

    /// Interior block L_int g of the discrete lifting.
    pub fn lift_interior(&self, g_b: &[f64]) -> Result<Vec<f64>> {
        if g_b.len() != self.n_dirichlet() {
            return Err(Error::InvalidArgument(format!(
                "Dirichlet vector has length {}, expected {}",
                g_b.len(),
                self.n_dirichlet()
            )));
        }
        let mut r = self.star_ib.matvec(g_b);
        r.iter_mut().for_each(|v| *v = -*v);
        Ok(self.star_factor.solve(&r))
    }

    /// Node-ordered discrete lifting [L_int g; g].
    pub fn discrete_lifting(&self, g_b: &[f64]) -> Result<Vec<f64>> {
        let li = self.lift_interior(g_b)?;
        Ok(self.dofs.scatter(&li, g_b))
    }

    /// Load of the affine Case-I family at k with homogeneous Dirichlet data.
    pub fn affine_data(&self, k: &[f64]) -> ProblemData {
        let tf = self.theta_f(k);
        let mut load = vec![0.0; self.n0()];
        for (t, f) in tf.iter().zip(&self.loads_i) {
            axpy(*t, f, &mut load);
        }
        ProblemData {
            load,
            dirichlet: vec![0.0; self.n_dirichlet()],
        }
    }

    /// F_I - A_II L_int g - A_IB g with the blocks evaluated at k.
    pub fn aggregated_load(&self, k: &[f64], data: &ProblemData) -> Result<Vec<f64>> {
        if data.load.len() != self.n0() {
            return Err(Error::InvalidArgument("load has wrong length".into()));
        }
        let mut f = data.load.clone();
        if data.dirichlet.iter().any(|v| *v != 0.0) {
            let theta = self.theta_a(k);
            let lg = self.lift_interior(&data.dirichlet)?;
            axpy(-1.0, &self.apply_a_ii_theta(&theta, &lg), &mut f);
            axpy(-1.0, &self.apply_a_ib_theta(&theta, &data.dirichlet), &mut f);
        } else if data.dirichlet.len() != self.n_dirichlet() {
            return Err(Error::InvalidArgument("Dirichlet data has wrong length".into()));
        }
        Ok(f)
    }

    /// Solver for A_II(k), reusable across right-hand sides.
    pub fn truth_solver(&self, k: &[f64]) -> Result<SpdSolver> {
        self.truth_solver_theta(&self.theta_a(k))
    }

    pub fn truth_solver_theta(&self, theta: &[f64]) -> Result<SpdSolver> {
        let a = self.a_ii_theta(theta)?;
        SpdSolver::new(&a, self.solver, Some(&self.symbolic))
    }

    /// Solves A_II(k) w = f_hat.
    pub fn truth_solve(&self, k: &[f64], f_hat: &[f64]) -> Result<Vec<f64>> {
        if f_hat.len() != self.n0() {
            return Err(Error::InvalidArgument("right-hand side has wrong length".into()));
        }
        self.truth_solver(k)?.solve(f_hat)
    }

    /// Full nodal field u = [w + L_int g; g].
    pub fn full_field(&self, w_i: &[f64], g_b: &[f64]) -> Result<Vec<f64>> {
        let mut u = self.lift_interior(g_b)?;
        axpy(1.0, w_i, &mut u);
        Ok(self.dofs.scatter(&u, g_b))
    }

    /// Dense copy of the interior reference operator (small meshes only).
    pub fn star_ii_dense(&self) -> DMatrix<f64> {
        self.star_ii.to_dense()
    }

    /// A*-norm of an interior vector.
    pub fn star_norm(&self, x: &[f64]) -> f64 {
        self.star_inner(x, x).max(0.0).sqrt()
    }

    /// W_Gamma-inner product of two Dirichlet vectors.
    pub fn w_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let va = DVector::from_column_slice(a);
        let vb = DVector::from_column_slice(b);
        va.dot(&(&self.w_gamma * vb))
    }
}
