//! Radial pull-back of a variable-radius inclusion onto a fixed reference
//! mesh, and empirical interpolation (EIM) of the resulting metric tensor.
//!
//! The map is `T(x) = phi(|x|) x`. Inside `r_minus` and outside `r_plus` it
//! is the identity; the reference circle `|x| = r0` is sent to radius `r`.
//! The pulled-back diffusion tensor is `G = |det J| J^-T J^-1`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_stiffness_tensor, ParameterMap, Region, SymTensor};
use crate::mesh::{TriMesh, INCLUSION, MATRIX};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Shape of the radial profile between the break circles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadialProfile {
    /// `phi` piecewise linear in rho. Folds (det J <= 0) when `r` is far
    /// from `r0`; evaluation then fails with a map-degenerate error.
    LinearScale,
    /// The image radius `T(rho) = rho phi(rho)` piecewise linear in rho.
    /// Bijective for every `r_minus < r < r_plus`.
    LinearRadius,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialMap {
    pub r_minus: f64,
    pub r_plus: f64,
    pub r0: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub profile: RadialProfile,
}

impl RadialMap {
    pub fn new(r_minus: f64, r_plus: f64, r0: f64, r_min: f64, r_max: f64, profile: RadialProfile) -> Result<Self> {
        let ok = 0.0 < r_minus
            && r_minus <= r_min
            && r_min < r_max
            && r_max < r_plus
            && r_plus < 1.0
            && r_minus < r0
            && r0 < r_plus;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "radii must satisfy 0 < r- <= r_min < r_max < r+ < 1 and r- < r0 < r+ \
                 (r- = {r_minus}, r_min = {r_min}, r_max = {r_max}, r+ = {r_plus}, r0 = {r0})"
            )));
        }
        Ok(Self {
            r_minus,
            r_plus,
            r0,
            r_min,
            r_max,
            profile,
        })
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if !(self.r_min <= r && r <= self.r_max) {
            return Err(Error::InvalidArgument(format!(
                "radius {r} outside [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    /// (phi, dphi/drho) at rho for radius r.
    pub fn phi_and_derivative(&self, rho: f64, r: f64) -> (f64, f64) {
        let (rm, rp, r0) = (self.r_minus, self.r_plus, self.r0);
        if rho < rm || rho >= rp {
            return (1.0, 0.0);
        }
        match self.profile {
            RadialProfile::LinearScale => {
                if rho < r0 {
                    let d = r0 * (r0 - rm);
                    ((r0 * (r0 - rho) + r * (rho - rm)) / d, (r - r0) / d)
                } else {
                    let d = r0 * (r0 - rp);
                    ((r0 * (r0 - rho) + r * (rho - rp)) / d, (r - r0) / d)
                }
            }
            RadialProfile::LinearRadius => {
                let (t, dt) = if rho < r0 {
                    let s = (r - rm) / (r0 - rm);
                    (rm + (rho - rm) * s, s)
                } else {
                    let s = (rp - r) / (rp - r0);
                    (r + (rho - r0) * s, s)
                };
                (t / rho, (dt * rho - t) / (rho * rho))
            }
        }
    }

    pub fn phi(&self, rho: f64, r: f64) -> f64 {
        self.phi_and_derivative(rho, r).0
    }

    pub fn map(&self, x: [f64; 2], r: f64) -> [f64; 2] {
        let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let p = self.phi(rho, r);
        [p * x[0], p * x[1]]
    }

    /// J_ij = d T_j / d x_i = phi delta_ij + (phi' / rho) x_i x_j.
    pub fn jacobian(&self, x: [f64; 2], r: f64) -> [[f64; 2]; 2] {
        let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let (p, dp) = self.phi_and_derivative(rho, r);
        if rho == 0.0 || dp == 0.0 {
            return [[p, 0.0], [0.0, p]];
        }
        let s = dp / rho;
        [
            [p + s * x[0] * x[0], s * x[0] * x[1]],
            [s * x[0] * x[1], p + s * x[1] * x[1]],
        ]
    }

    /// G = |det J| J^-T J^-1 as `[xx, xy, yy]`.
    pub fn tensor(&self, x: [f64; 2], r: f64) -> Result<SymTensor> {
        self.check_radius(r)?;
        let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let j = self.jacobian(x, r);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !(det > 0.0) {
            return Err(Error::MapDegenerate { rho, det });
        }
        // J is symmetric, so J^-T J^-1 = J^-2
        let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
        let xx = inv[0][0] * inv[0][0] + inv[0][1] * inv[1][0];
        let xy = inv[0][0] * inv[0][1] + inv[0][1] * inv[1][1];
        let yy = inv[1][0] * inv[0][1] + inv[1][1] * inv[1][1];
        Ok([det * xx, det * xy, det * yy])
    }

    /// G at every point, flattened point-major as `[xx, xy, yy]` triples.
    pub fn tensor_field(&self, points: &[[f64; 2]], r: f64) -> Result<Vec<f64>> {
        let parts: Vec<Result<SymTensor>> = points.par_iter().map(|p| self.tensor(*p, r)).collect();
        let mut out = Vec::with_capacity(3 * points.len());
        for t in parts {
            out.extend_from_slice(&t?);
        }
        Ok(out)
    }
}

/// Smallest eigenvalue of a symmetric 2x2 tensor.
pub fn tensor_min_eigenvalue(t: SymTensor) -> f64 {
    let m = 0.5 * (t[0] + t[2]);
    let d = (0.25 * (t[0] - t[2]).powi(2) + t[1] * t[1]).sqrt();
    m - d
}

/// Discrete EIM of the tensor field over the (point x component) grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EimSurrogate {
    pub map: RadialMap,
    pub points: Vec<[f64; 2]>,
    /// Basis fields, each flattened like [`RadialMap::tensor_field`].
    pub basis: Vec<Vec<f64>>,
    /// (point index, component index) of each pivot.
    pub pivots: Vec<(usize, usize)>,
    /// interp[i][j] = basis[j] at pivot i; unit lower triangular.
    pub interp: Vec<Vec<f64>>,
    /// Largest relative sup-norm training error after each added term.
    pub trace: Vec<f64>,
    /// Radii whose fields were selected.
    pub selected: Vec<f64>,
    pub training_size: usize,
}

/// Greedy EIM over the training radii.
///
/// When `seed_radius` is given, its field is the first basis function, so
/// that field is reproduced exactly; otherwise the field with the largest sup
/// norm starts the basis. Each further step adds the worst-approximated
/// training field, normalized at its largest residual entry. Stops when the
/// relative error is at most `tol`, at `q_max` terms, or when the residual
/// reaches rounding level.
pub fn eim_build(
    map: &RadialMap,
    points: &[[f64; 2]],
    training: &[f64],
    tol: f64,
    q_max: usize,
    seed_radius: Option<f64>,
) -> Result<EimSurrogate> {
    if training.is_empty() || points.is_empty() || q_max == 0 {
        return Err(Error::InvalidArgument("EIM needs training radii, points and q_max > 0".into()));
    }
    let mut residuals: Vec<Vec<f64>> = training
        .iter()
        .map(|r| map.tensor_field(points, *r))
        .collect::<Result<_>>()?;
    let scale = residuals
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut out = EimSurrogate {
        map: *map,
        points: points.to_vec(),
        basis: Vec::new(),
        pivots: Vec::new(),
        interp: Vec::new(),
        trace: Vec::new(),
        selected: Vec::new(),
        training_size: training.len(),
    };
    let mut seed = seed_radius.map(|r| map.tensor_field(points, r)).transpose()?;
    while out.basis.len() < q_max {
        let (cand, radius) = match seed.take() {
            Some(g) => {
                // residual of the seed against an empty basis is the field itself
                (g, seed_radius.unwrap())
            }
            None => {
                let (j, err) = residuals
                    .iter()
                    .enumerate()
                    .map(|(j, r)| (j, sup(r)))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                if err <= 1e-14 * scale {
                    break;
                }
                (residuals[j].clone(), training[j])
            }
        };
        let (idx, piv) = cand
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, *v) } else { best });
        if piv == 0.0 {
            break;
        }
        let h: Vec<f64> = cand.iter().map(|v| v / piv).collect();
        // new interpolation row and column
        let q = out.basis.len();
        for (i, row) in out.interp.iter_mut().enumerate() {
            let _ = i;
            row.push(0.0);
        }
        let mut row: Vec<f64> = out.basis.iter().map(|b| b[idx]).collect();
        row.push(1.0);
        out.interp.push(row);
        // upper entries stay zero because earlier basis fields vanish at later pivots
        for i in 0..q {
            out.interp[i][q] = h[out.pivots[i].0 * 3 + out.pivots[i].1];
        }
        out.pivots.push((idx / 3, idx % 3));
        out.basis.push(h);
        out.selected.push(radius);
        // Newton-form update of every training residual
        let hq = &out.basis[q];
        residuals.par_iter_mut().for_each(|r| {
            let beta = r[idx];
            if beta != 0.0 {
                for (ri, hi) in r.iter_mut().zip(hq) {
                    *ri -= beta * hi;
                }
            }
        });
        let err = residuals.iter().map(|r| sup(r)).fold(0.0f64, f64::max) / scale;
        out.trace.push(err);
        if err <= tol {
            break;
        }
    }
    Ok(out)
}

impl EimSurrogate {
    pub fn q(&self) -> usize {
        self.basis.len()
    }

    /// Values of G at the pivots for radius r (Q point evaluations).
    pub fn pivot_values(&self, r: f64) -> Result<Vec<f64>> {
        self.pivots
            .iter()
            .map(|&(p, c)| self.map.tensor(self.points[p], r).map(|t| t[c]))
            .collect()
    }

    /// Interpolation coefficients by forward substitution.
    pub fn coefficients(&self, r: f64) -> Result<Vec<f64>> {
        let v = self.pivot_values(r)?;
        let q = self.q();
        let mut a = vec![0.0; q];
        for i in 0..q {
            let mut s = v[i];
            for j in 0..i {
                s -= self.interp[i][j] * a[j];
            }
            a[i] = s / self.interp[i][i];
        }
        Ok(a)
    }

    /// sum_q alpha_q H_q, flattened.
    pub fn reconstruct(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.points.len() * 3];
        for (a, h) in alpha.iter().zip(&self.basis) {
            for (o, v) in out.iter_mut().zip(h) {
                *o += a * v;
            }
        }
        out
    }

    /// Basis field q as one tensor per point.
    pub fn basis_tensors(&self, q: usize) -> Vec<SymTensor> {
        self.basis[q].chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    /// Smallest eigenvalue of the reconstructed field over the given radii.
    pub fn min_eigenvalue(&self, radii: &[f64]) -> Result<f64> {
        let mut m = f64::INFINITY;
        for &r in radii {
            let g = self.reconstruct(&self.coefficients(r)?);
            for c in g.chunks(3) {
                m = m.min(tensor_min_eigenvalue([c[0], c[1], c[2]]));
            }
        }
        Ok(m)
    }
}

/// Per-term stiffness matrices: the Q matrix-region terms followed by the Q
/// inclusion-region terms. The evaluation points must be the triangle
/// centroids of `mesh`.
pub fn assemble_eim_blocks(mesh: &TriMesh, surrogate: &EimSurrogate) -> Result<Vec<CsrMatrix>> {
    if surrogate.points.len() != mesh.n_triangles() {
        return Err(Error::InvalidArgument("EIM points must be the triangle centroids".into()));
    }
    let mut outer = Vec::with_capacity(surrogate.q());
    let mut inner = Vec::with_capacity(surrogate.q());
    for q in 0..surrogate.q() {
        let t = surrogate.basis_tensors(q);
        outer.push(assemble_stiffness_tensor(mesh, &Region::tag(MATRIX), &t)?);
        inner.push(assemble_stiffness_tensor(mesh, &Region::tag(INCLUSION), &t)?);
    }
    outer.extend(inner);
    Ok(outer)
}

/// Exact pulled-back operator on all nodes for k = (k1, k2, r).
pub fn direct_operator(mesh: &TriMesh, map: &RadialMap, k: &[f64]) -> Result<CsrMatrix> {
    let cents: Vec<[f64; 2]> = (0..mesh.n_triangles()).map(|t| mesh.centroid(t)).collect();
    let g = map.tensor_field(&cents, k[2])?;
    let t: Vec<SymTensor> = g.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    let a1 = assemble_stiffness_tensor(mesh, &Region::tag(MATRIX), &t)?;
    let a0 = assemble_stiffness_tensor(mesh, &Region::tag(INCLUSION), &t)?;
    CsrMatrix::linear_combination(&[(1.0, &a1), (k[0], &a0)])
}

/// Operator coefficients (alpha(r), k1 alpha(r)) and load coefficient k2 for
/// k = (k1, k2, r).
pub struct EimParameterMap {
    pub surrogate: Arc<EimSurrogate>,
}

impl ParameterMap for EimParameterMap {
    fn dim(&self) -> usize {
        3
    }

    fn theta_a(&self, k: &[f64]) -> Vec<f64> {
        let a = self
            .surrogate
            .coefficients(k[2].clamp(self.surrogate.map.r_min, self.surrogate.map.r_max))
            .expect("radius clamped into the admissible range");
        let mut t = a.clone();
        t.extend(a.iter().map(|v| k[0] * v));
        t
    }

    fn theta_f(&self, k: &[f64]) -> Vec<f64> {
        vec![k[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn map() -> RadialMap {
        RadialMap::new(0.03, 0.5, 0.2, 0.05, 0.45, RadialProfile::LinearRadius).unwrap()
    }

    #[test]
    fn phi_branch_values() {
        for profile in [RadialProfile::LinearScale, RadialProfile::LinearRadius] {
            let m = RadialMap { profile, ..map() };
            for r in [0.1, 0.2, 0.3] {
                assert!((m.phi(0.2, r) - r / 0.2).abs() < 1e-14);
                assert_eq!(m.phi(0.01, r), 1.0);
                assert_eq!(m.phi(0.7, r), 1.0);
            }
            for rho in [0.0, 0.05, 0.2, 0.33, 0.49, 0.6] {
                assert!((m.phi(rho, 0.2) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn phi_continuous_at_breaks() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for profile in [RadialProfile::LinearScale, RadialProfile::LinearRadius] {
            let m = RadialMap { profile, ..map() };
            for _ in 0..20 {
                let r = 0.05 + 0.4 * rng.random::<f64>();
                for b in [m.r_minus, m.r0, m.r_plus] {
                    let lo = m.phi(b * (1.0 - 1e-15), r);
                    let hi = m.phi(b, r);
                    assert!((lo - hi).abs() <= 1e-12, "{profile:?} break {b}: {lo} vs {hi}");
                }
            }
        }
    }

    #[test]
    fn tensor_is_identity_at_reference_radius() {
        let m = map();
        for x in [[0.1, 0.05], [0.3, -0.2], [0.0, 0.0], [-0.45, 0.45]] {
            let g = m.tensor(x, 0.2).unwrap();
            assert!((g[0] - 1.0).abs() < 1e-14 && g[1].abs() < 1e-14 && (g[2] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn jacobian_matches_differences() {
        let m = map();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        while checked < 100 {
            let x = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let r = 0.05 + 0.4 * rng.random::<f64>();
            let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if [m.r_minus, m.r0, m.r_plus].iter().any(|b| (rho - b).abs() < 1e-4) {
                continue;
            }
            let j = m.jacobian(x, r);
            let h = 1e-6;
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let (tp, tm) = (m.map(xp, r), m.map(xm, r));
                for c in 0..2 {
                    let fd = (tp[c] - tm[c]) / (2.0 * h);
                    assert!((fd - j[i][c]).abs() < 1e-6, "J[{i}][{c}] {fd} vs {}", j[i][c]);
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn tensor_spd_and_boundary_fixed() {
        let m = map();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let r = 0.05 + 0.4 * rng.random::<f64>();
            let g = m.tensor(x, r).unwrap();
            assert!(tensor_min_eigenvalue(g) > 0.0);
            let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if rho >= m.r_plus {
                let y = m.map(x, r);
                assert!(((y[0] * y[0] + y[1] * y[1]).sqrt() - rho).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn linear_scale_profile_folds_for_large_radius() {
        let m = RadialMap {
            profile: RadialProfile::LinearScale,
            ..map()
        };
        let err = m.tensor([0.49, 0.0], 0.45);
        assert!(matches!(err, Err(Error::MapDegenerate { .. })));
        assert!(m.tensor([0.25, 0.0], 0.25).is_ok());
    }

    #[test]
    fn eim_single_parameter_is_exact() {
        let m = map();
        let pts: Vec<[f64; 2]> = (0..50).map(|i| [0.01 * i as f64 - 0.25, 0.005 * i as f64]).collect();
        let s = eim_build(&m, &pts, &[0.3], 1e-12, 10, None).unwrap();
        assert_eq!(s.q(), 1);
        let a = s.coefficients(0.3).unwrap();
        let g = m.tensor_field(&pts, 0.3).unwrap();
        let p = s.pivots[0];
        assert!((a[0] - g[p.0 * 3 + p.1] / s.basis[0][p.0 * 3 + p.1]).abs() < 1e-15);
        let rec = s.reconstruct(&a);
        for (x, y) in rec.iter().zip(&g) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eim_interpolates_at_pivots_and_selected() {
        let m = map();
        let pts: Vec<[f64; 2]> = (0..400)
            .map(|i| {
                let t = i as f64 * 0.37;
                let rad = 0.48 * ((i as f64 + 0.5) / 400.0);
                [rad * t.cos(), rad * t.sin()]
            })
            .collect();
        let train: Vec<f64> = (0..60).map(|i| 0.05 + 0.4 * i as f64 / 59.0).collect();
        let s = eim_build(&m, &pts, &train, 1e-12, 12, Some(0.2)).unwrap();
        for w in s.interp.iter().enumerate() {
            assert_eq!(w.1[w.0], 1.0);
            for j in w.0 + 1..s.q() {
                assert_eq!(w.1[j], 0.0);
            }
        }
        for &r in s.selected.iter() {
            let rec = s.reconstruct(&s.coefficients(r).unwrap());
            let g = m.tensor_field(&pts, r).unwrap();
            let err = rec.iter().zip(&g).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
            assert!(err < 1e-10, "radius {r}: {err}");
        }
        let rec = s.reconstruct(&s.coefficients(0.2).unwrap());
        for c in rec.chunks(3) {
            assert!((c[0] - 1.0).abs() < 1e-14 && c[1].abs() < 1e-14 && (c[2] - 1.0).abs() < 1e-14);
        }
        let r = 0.3137;
        let a = s.coefficients(r).unwrap();
        let rec = s.reconstruct(&a);
        let g = m.tensor_field(&pts, r).unwrap();
        for &(p, c) in &s.pivots {
            assert!((rec[p * 3 + c] - g[p * 3 + c]).abs() < 1e-12);
        }
        for w in s.trace.windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}
