//! The three model problems.
//!
//! * Example 1: diffusion in (-1/2, 1/2)^2 with a disk inclusion of
//!   conductivity k1 and a Neumann flux k2 on the base; top Dirichlet.
//! * Example 2: diffusion-reaction on the unit square with Dirichlet,
//!   Neumann and Robin segments and manufactured data varying independently
//!   of the coefficients.
//! * Example 3: Example 1 with a variable inclusion radius k3, handled by a
//!   radial pull-back onto the fixed reference mesh.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_boundary_mass, assemble_load_boundary, assemble_load_volume, assemble_mass, assemble_stiffness,
    build_model, AffineSpec, Coefficient, FnParameterMap, ParametricModel, ProblemData, Region,
};
use crate::mesh::{
    square_with_inclusion_mesh, tag_boundary, unit_square_mesh, BoundaryKind, BoundaryRule, TriMesh,
    INCLUSION, MATRIX,
};
use crate::geomap::{
    assemble_eim_blocks, direct_operator, eim_build, EimParameterMap, EimSurrogate, RadialMap, RadialProfile,
};
use crate::sparse::{SolverKind, SpdSolver};
use crate::{Error, Result};

/// Axis-aligned parameter box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidArgument("parameter box needs lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, k: &[f64]) -> bool {
        k.len() == self.dim() && k.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (a, b))| a <= v && v <= b)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect()
    }

    /// `n` i.i.d. uniform samples from a seeded stream.
    pub fn sample_n(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

pub const EX1_RADIUS: f64 = 0.2;
/// Target edge length of the inclusion mesh (about 2000 vertices).
pub const EX1_MESH_H: f64 = 0.025;

pub fn example1_box() -> ParamBox {
    ParamBox::new(vec![0.1, -1.0], vec![10.0, 1.0]).unwrap()
}

pub fn example1_reference() -> Vec<f64> {
    vec![1.0, 1.0]
}

/// Example-1 boundary rule: `top` Dirichlet, `base` and `side` Neumann.
pub fn example1_rule() -> BoundaryRule {
    BoundaryRule::new()
        .with_segment("top", BoundaryKind::Dirichlet)
        .with_segment("base", BoundaryKind::Neumann)
        .with_segment("side", BoundaryKind::Neumann)
}

pub fn example1_mesh(h: f64) -> Result<TriMesh> {
    let m = square_with_inclusion_mesh(EX1_RADIUS, h)?;
    tag_boundary(&m, &example1_rule())
}

/// Operator terms (A_1 on the matrix, A_0 on the inclusion) with
/// coefficients (1, k1) and the unit base flux with coefficient k2.
pub fn example1_model(mesh: &TriMesh) -> Result<ParametricModel> {
    let a1 = assemble_stiffness(mesh, &Region::tag(MATRIX), &Coefficient::Unit)?;
    let a0 = assemble_stiffness(mesh, &Region::tag(INCLUSION), &Coefficient::Unit)?;
    let f = assemble_load_boundary(mesh, &["base"], &|_| 1.0)?;
    build_model(
        mesh,
        AffineSpec {
            operators: vec![a1, a0],
            loads: vec![f],
            theta: Arc::new(FnParameterMap {
                dim: 2,
                theta_a: |k: &[f64]| vec![1.0, k[0]],
                theta_f: |k: &[f64]| vec![k[1]],
            }),
            reference: example1_reference(),
            solver: SolverKind::Cholesky,
        },
    )
}

pub fn example2_box() -> ParamBox {
    ParamBox::new(vec![0.5, 0.0, 0.0], vec![2.0, 2.0, 10.0]).unwrap()
}

pub fn example2_reference() -> Vec<f64> {
    vec![1.2, 0.6, 1.0]
}

/// Cells per side of the Example-2 grid (64 x 64 nodes).
pub const EX2_CELLS: usize = 63;

/// Example-2 rule: x=0 and y=1 Dirichlet, y=0 Neumann, x=1 Robin.
pub fn example2_rule() -> BoundaryRule {
    BoundaryRule::new()
        .with_segment("left", BoundaryKind::Dirichlet)
        .with_segment("top", BoundaryKind::Dirichlet)
        .with_segment("bottom", BoundaryKind::Neumann)
        .with_segment("right", BoundaryKind::Robin)
}

pub fn example2_mesh(cells: usize) -> Result<TriMesh> {
    tag_boundary(&unit_square_mesh(cells)?, &example2_rule())
}

/// Operator terms (stiffness, mass, Robin boundary mass) with coefficients
/// (kappa0, alpha0, beta0). There are no affine load terms: loads and traces
/// come from the manufactured data.
pub fn example2_model(mesh: &TriMesh) -> Result<ParametricModel> {
    let s = assemble_stiffness(mesh, &Region::All, &Coefficient::Unit)?;
    let m = assemble_mass(mesh);
    let r = assemble_boundary_mass(mesh, &["right"])?;
    build_model(
        mesh,
        AffineSpec {
            operators: vec![s, m, r],
            loads: vec![],
            theta: Arc::new(FnParameterMap {
                dim: 3,
                theta_a: |k: &[f64]| k.to_vec(),
                theta_f: |_: &[f64]| Vec::new(),
            }),
            reference: example2_reference(),
            solver: SolverKind::Cholesky,
        },
    )
}

/// Shape parameters of the manufactured solution
/// `a1 sin(pi x) sin(pi y) + a2 sin(2 pi x) sin(pi y)
///  + a3 exp(-|x - c|^2 / (2 sigma^2)) + a4 cos(pi x) sinh(y - 1/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manufactured {
    pub a: [f64; 4],
    pub xc: f64,
    pub yc: f64,
    pub sigma: f64,
}

impl Manufactured {
    pub fn new(a: [f64; 4], xc: f64, yc: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { a, xc, yc, sigma })
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        let mut u = |a: f64, b: f64| a + (b - a) * rng.random::<f64>();
        let a1 = u(-1.0, 1.0);
        let a2 = u(-1.0, 1.0);
        let a3 = u(0.0, 1.0);
        let a4 = u(-1.0, 1.0);
        let xc = u(0.2, 0.8);
        let yc = u(0.2, 0.8);
        let sigma = u(0.05, 0.2);
        Self {
            a: [a1, a2, a3, a4],
            xc,
            yc,
            sigma,
        }
    }

    fn gauss(&self, p: [f64; 2]) -> f64 {
        let r2 = (p[0] - self.xc).powi(2) + (p[1] - self.yc).powi(2);
        (-r2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        let [a1, a2, a3, a4] = self.a;
        a1 * (PI * x).sin() * (PI * y).sin()
            + a2 * (2.0 * PI * x).sin() * (PI * y).sin()
            + a3 * self.gauss(p)
            + a4 * (PI * x).cos() * (y - 0.5).sinh()
    }

    pub fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        let [a1, a2, a3, a4] = self.a;
        let s2 = self.sigma * self.sigma;
        let g = self.gauss(p);
        [
            a1 * PI * (PI * x).cos() * (PI * y).sin()
                + a2 * 2.0 * PI * (2.0 * PI * x).cos() * (PI * y).sin()
                - a3 * g * (x - self.xc) / s2
                - a4 * PI * (PI * x).sin() * (y - 0.5).sinh(),
            a1 * PI * (PI * x).sin() * (PI * y).cos()
                + a2 * PI * (2.0 * PI * x).sin() * (PI * y).cos()
                - a3 * g * (y - self.yc) / s2
                + a4 * (PI * x).cos() * (y - 0.5).cosh(),
        ]
    }

    pub fn laplacian(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        let [a1, a2, a3, a4] = self.a;
        let s2 = self.sigma * self.sigma;
        let r2 = (x - self.xc).powi(2) + (y - self.yc).powi(2);
        -2.0 * PI * PI * a1 * (PI * x).sin() * (PI * y).sin()
            - 5.0 * PI * PI * a2 * (2.0 * PI * x).sin() * (PI * y).sin()
            + a3 * self.gauss(p) * (r2 / (s2 * s2) - 2.0 / s2)
            + a4 * (1.0 - PI * PI) * (PI * x).cos() * (y - 0.5).sinh()
    }

    /// f = kappa0 (-Laplace u) + alpha0 u
    pub fn source(&self, k: &[f64], p: [f64; 2]) -> f64 {
        -k[0] * self.laplacian(p) + k[1] * self.value(p)
    }

    /// h_N on y = 0, where the outward normal is (0, -1).
    pub fn neumann(&self, k: &[f64], p: [f64; 2]) -> f64 {
        -k[0] * self.gradient(p)[1]
    }

    /// r_R on x = 1, where the outward normal is (1, 0).
    pub fn robin(&self, k: &[f64], p: [f64; 2]) -> f64 {
        k[0] * self.gradient(p)[0] + k[2] * self.value(p)
    }
}

/// One Example-2 instance: coefficients and data shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example2Sample {
    pub k: [f64; 3],
    pub xi: Manufactured,
}

/// `n` i.i.d. Example-2 instances; coefficients and shapes are drawn from
/// the same stream, coefficients first.
pub fn example2_samples(n: usize, seed: u64) -> Vec<Example2Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = example2_box();
    (0..n)
        .map(|_| {
            let k = b.sample(&mut rng);
            let xi = Manufactured::sample(&mut rng);
            Example2Sample {
                k: [k[0], k[1], k[2]],
                xi,
            }
        })
        .collect()
}

/// Interior load rows and nodal Dirichlet trace of an Example-2 instance.
pub fn example2_data(mesh: &TriMesh, model: &ParametricModel, s: &Example2Sample) -> Result<ProblemData> {
    let k = s.k;
    let xi = s.xi;
    let mut f = assemble_load_volume(mesh, &|p| xi.source(&k, p));
    let hn = assemble_load_boundary(mesh, &["bottom"], &|p| xi.neumann(&k, p))?;
    let rr = assemble_load_boundary(mesh, &["right"], &|p| xi.robin(&k, p))?;
    for i in 0..f.len() {
        f[i] += hn[i] + rr[i];
    }
    let dofs = &model.dofs;
    Ok(ProblemData {
        load: dofs.restrict_interior(&f),
        dirichlet: dofs.dirichlet.iter().map(|&v| xi.value(mesh.nodes[v])).collect(),
    })
}

pub const EX3_R_MINUS: f64 = 0.03;
pub const EX3_R_PLUS: f64 = 0.5;
pub const EX3_Q: usize = 15;
/// Number of equispaced training radii for the EIM greedy.
pub const EX3_EIM_TRAINING: usize = 200;

pub fn example3_box() -> ParamBox {
    ParamBox::new(vec![0.1, -1.0, 0.05], vec![10.0, 1.0, 0.45]).unwrap()
}

pub fn example3_reference() -> Vec<f64> {
    vec![1.0, 1.0, EX1_RADIUS]
}

pub fn example3_map(profile: RadialProfile) -> Result<RadialMap> {
    let b = example3_box();
    RadialMap::new(EX3_R_MINUS, EX3_R_PLUS, EX1_RADIUS, b.lower[2], b.upper[2], profile)
}

pub fn triangle_centroids(mesh: &TriMesh) -> Vec<[f64; 2]> {
    (0..mesh.n_triangles()).map(|t| mesh.centroid(t)).collect()
}

/// EIM of the pulled-back tensor at the triangle centroids, seeded with the
/// reference radius so the identity field is reproduced exactly.
pub fn example3_surrogate(mesh: &TriMesh, map: &RadialMap, q_max: usize, training: usize) -> Result<EimSurrogate> {
    if training < 2 {
        return Err(Error::InvalidArgument("EIM training set needs at least two radii".into()));
    }
    let radii: Vec<f64> = (0..training)
        .map(|i| map.r_min + (map.r_max - map.r_min) * i as f64 / (training - 1) as f64)
        .collect();
    eim_build(map, &triangle_centroids(mesh), &radii, 0.0, q_max, Some(map.r0))
}

/// 2Q operator terms with coefficients (alpha(k3), k1 alpha(k3)) and the
/// base flux with coefficient k2.
pub fn example3_model(mesh: &TriMesh, surrogate: Arc<EimSurrogate>) -> Result<ParametricModel> {
    let operators = assemble_eim_blocks(mesh, &surrogate)?;
    let f = assemble_load_boundary(mesh, &["base"], &|_| 1.0)?;
    build_model(
        mesh,
        AffineSpec {
            operators,
            loads: vec![f],
            theta: Arc::new(EimParameterMap { surrogate }),
            reference: example3_reference(),
            solver: SolverKind::Cholesky,
        },
    )
}

/// min(1, k1_min) times the smallest eigenvalue of the interpolated tensor
/// over a fine radius grid, scaled by `safety`.
pub fn example3_alpha_lb(surrogate: &EimSurrogate, safety: f64) -> Result<f64> {
    let b = example3_box();
    let radii: Vec<f64> = (0..=1000)
        .map(|i| b.lower[2] + (b.upper[2] - b.lower[2]) * i as f64 / 1000.0)
        .collect();
    let lam = surrogate.min_eigenvalue(&radii)?;
    if !(lam > 0.0) {
        return Err(Error::NotCoercive(format!("interpolated tensor has eigenvalue {lam:.3e}")));
    }
    Ok(safety * lam * b.lower[0].min(1.0))
}

/// Truth solve with the exact pulled-back tensor (no interpolation).
pub fn example3_direct_solve(mesh: &TriMesh, model: &ParametricModel, map: &RadialMap, k: &[f64]) -> Result<Vec<f64>> {
    let a = direct_operator(mesh, map, k)?;
    let ii = &model.dofs.interior;
    let a_ii = a.submatrix(ii, ii);
    let solver = SpdSolver::new(&a_ii, SolverKind::Cholesky, Some(model.symbolic()))?;
    solver.solve(&model.affine_data(k).load)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::DofSplit;

    #[test]
    fn example2_grid_counts() {
        let m = example2_mesh(EX2_CELLS).unwrap();
        let d = DofSplit::from_mesh(&m);
        assert_eq!(m.n_nodes(), 4096);
        assert_eq!(d.n_dirichlet(), 127);
        assert_eq!(d.n0(), 3969);
        let four = example2_mesh(64).unwrap();
        assert_eq!(DofSplit::from_mesh(&four).n_dirichlet(), 129);
    }

    #[test]
    fn laplacian_and_gradient_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let xi = Manufactured::sample(&mut rng);
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            let h = 1e-4;
            let u = |x: f64, y: f64| xi.value([x, y]);
            let lap = (u(p[0] + h, p[1]) + u(p[0] - h, p[1]) + u(p[0], p[1] + h) + u(p[0], p[1] - h)
                - 4.0 * u(p[0], p[1]))
                / (h * h);
            let exact = xi.laplacian(p);
            assert!((lap - exact).abs() < 1e-6 * exact.abs().max(1.0) + 2e-4, "{lap} vs {exact}");
            let g = xi.gradient(p);
            let gx = (u(p[0] + h, p[1]) - u(p[0] - h, p[1])) / (2.0 * h);
            let gy = (u(p[0], p[1] + h) - u(p[0], p[1] - h)) / (2.0 * h);
            assert!((gx - g[0]).abs() < 1e-6 * g[0].abs().max(1.0) + 1e-5);
            assert!((gy - g[1]).abs() < 1e-6 * g[1].abs().max(1.0) + 1e-5);
        }
    }

    #[test]
    fn first_mode_laplacian() {
        let xi = Manufactured::new([1.0, 0.0, 0.0, 0.0], 0.5, 0.5, 0.1).unwrap();
        let p = [0.3, 0.7];
        let e = -2.0 * PI * PI * (PI * 0.3).sin() * (PI * 0.7).sin();
        assert!((xi.laplacian(p) - e).abs() < 1e-12);
        assert!(Manufactured::new([0.0; 4], 0.5, 0.5, 0.0).is_err());
    }
}
