//! Error measures on the free block and their aggregation.
//!
//! rel-L2 and rel-energy compare a predicted interior field with a reference
//! in the `M_II` and `A*_II` norms. rel-residual measures the reduced residual
//! `F_rb - A_rb(k) c` in the norm induced by `A_rb(k*)^{-1}`.
//!
//! Percentiles use the nearest-rank rule: for n sorted values the p-th
//! percentile is the value at 1-based index ceil(p n / 100).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sparse::CsrMatrix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub rel_l2: f64,
    pub rel_energy: f64,
    pub rel_residual: f64,
}

/// Norm ratio ‖pred - reference‖_M / ‖reference‖_M.
pub fn relative_norm_error(m: &CsrMatrix, reference: &[f64], prediction: &[f64]) -> f64 {
    let e: Vec<f64> = reference.iter().zip(prediction).map(|(r, p)| p - r).collect();
    let den = m.quad_form(reference).max(0.0).sqrt();
    let num = m.quad_form(&e).max(0.0).sqrt();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Cholesky factor of `A_rb(k*)`, the weight of the residual metric.
pub struct ResidualNorm {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl ResidualNorm {
    pub fn new(a_star_rb: &DMatrix<f64>) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(a_star_rb.clone())
            .ok_or_else(|| Error::NotCoercive("reduced reference operator".into()))?;
        Ok(Self { chol })
    }

    /// ‖A^{-1/2} x‖ = ‖L^{-1} x‖.
    pub fn norm(&self, x: &DVector<f64>) -> f64 {
        self.chol.l().solve_lower_triangular(x).map_or(f64::NAN, |y| y.norm())
    }

    /// ‖A_rb(k*)^{-1/2} (F - A c)‖ / ‖A_rb(k*)^{-1/2} F‖.
    pub fn relative_residual(&self, a_rb: &DMatrix<f64>, f_rb: &DVector<f64>, c: &DVector<f64>) -> f64 {
        let r = f_rb - a_rb * c;
        let den = self.norm(f_rb);
        if den == 0.0 {
            return if r.norm() == 0.0 { 0.0 } else { f64::INFINITY };
        }
        self.norm(&r) / den
    }
}

/// All three metrics of one sample.
#[allow(clippy::too_many_arguments)]
pub fn sample_metrics(
    mass_ii: &CsrMatrix,
    star_ii: &CsrMatrix,
    weight: &ResidualNorm,
    reference: &[f64],
    prediction: &[f64],
    a_rb: &DMatrix<f64>,
    f_rb: &DVector<f64>,
    c: &DVector<f64>,
) -> MetricTriple {
    MetricTriple {
        rel_l2: relative_norm_error(mass_ii, reference, prediction),
        rel_energy: relative_norm_error(star_ii, reference, prediction),
        rel_residual: weight.relative_residual(a_rb, f_rb, c),
    }
}

/// Nearest-rank percentile, `p` in (0, 100].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub p95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mean = if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Self { mean, p95: percentile(values, 95.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RbDeeponet,
    PodDeeponet,
    RbGalerkin,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::RbDeeponet => "rb_deeponet",
            Method::PodDeeponet => "pod_deeponet",
            Method::RbGalerkin => "rb_galerkin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub samples: Vec<MetricTriple>,
    pub rel_l2: Summary,
    pub rel_energy: Summary,
    pub rel_residual: Summary,
}

impl MethodMetrics {
    pub fn new(method: Method, samples: Vec<MetricTriple>) -> Self {
        let col = |f: fn(&MetricTriple) -> f64| samples.iter().map(f).collect::<Vec<_>>();
        Self {
            method,
            rel_l2: Summary::of(&col(|m| m.rel_l2)),
            rel_energy: Summary::of(&col(|m| m.rel_energy)),
            rel_residual: Summary::of(&col(|m| m.rel_residual)),
            samples,
        }
    }
}

/// Evaluation of every available method over one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub example: u8,
    pub test_size: usize,
    pub seed: u64,
    pub methods: Vec<MethodMetrics>,
    pub footnote: String,
}

pub const FOOTNOTE: &str =
    "Full-order operator-network baseline not computed; its column is omitted.";

impl MetricsReport {
    pub fn method(&self, m: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|x| x.method == m)
    }

    /// Aligned text table, one row per method.
    pub fn table(&self) -> String {
        let mut s = format!(
            "Example {} ({} test parameters, seed {})\n{:<14} {:>21} {:>21} {:>21}\n",
            self.example, self.test_size, self.seed, "method", "rel-L2 mean / p95", "rel-energy mean / p95",
            "rel-residual mean / p95"
        );
        for m in &self.methods {
            let cell = |x: &Summary| format!("{:.2e} / {:.2e}", x.mean, x.p95);
            s.push_str(&format!(
                "{:<14} {:>21} {:>21} {:>21}\n",
                m.method.label(),
                cell(&m.rel_l2),
                cell(&m.rel_energy),
                cell(&m.rel_residual)
            ));
        }
        s.push_str(&format!("note: {}\n", self.footnote));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).rev().collect();
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 950.0);
        assert!(percentile(&[], 95.0).is_nan());
    }

    #[test]
    fn identical_prediction_is_zero() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 1.0), (0, 1, 0.5), (1, 0, 0.5)]);
        let w = ResidualNorm::new(&DMatrix::identity(2, 2)).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = DVector::from_vec(vec![1.0, -1.0]);
        let c = a.clone().cholesky().unwrap().solve(&f);
        let t = sample_metrics(&m, &m, &w, &[1.0, 2.0], &[1.0, 2.0], &a, &f, &c);
        assert_eq!(t.rel_l2, 0.0);
        assert_eq!(t.rel_energy, 0.0);
        assert!(t.rel_residual < 1e-15);
    }

    #[test]
    fn two_dof_dense_formula() {
        let mass = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let star = CsrMatrix::from_triplets(2, 2, &[(0, 0, 4.0), (1, 1, 1.0)]);
        let u = [1.0, -2.0];
        let p = [1.5, -1.0];
        let md = mass.to_dense();
        let sd = star.to_dense();
        let e = DVector::from_vec(vec![0.5, 1.0]);
        let uv = DVector::from_vec(u.to_vec());
        let want_l2 = (e.dot(&(&md * &e)) / uv.dot(&(&md * &uv))).sqrt();
        let want_en = (e.dot(&(&sd * &e)) / uv.dot(&(&sd * &uv))).sqrt();
        let astar = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let a = DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 4.0]);
        let f = DVector::from_vec(vec![1.0, 2.0]);
        let c = DVector::from_vec(vec![0.1, 0.2]);
        let r = &f - &a * &c;
        let inv: DMatrix<f64> = astar.clone().try_inverse().unwrap();
        let want_res: f64 = (r.dot(&(&inv * &r)) / f.dot(&(&inv * &f))).sqrt();
        let w = ResidualNorm::new(&astar).unwrap();
        let t = sample_metrics(&mass, &star, &w, &u, &p, &a, &f, &c);
        assert!((t.rel_l2 - want_l2).abs() < 1e-12);
        assert!((t.rel_energy - want_en).abs() < 1e-12);
        assert!((t.rel_residual - want_res).abs() < 1e-12);
    }

    #[test]
    fn table_has_one_row_per_method() {
        let r = MetricsReport {
            example: 1,
            test_size: 2,
            seed: 7,
            methods: vec![
                MethodMetrics::new(Method::RbGalerkin, vec![MetricTriple::default(); 2]),
                MethodMetrics::new(Method::RbDeeponet, vec![MetricTriple { rel_l2: 1e-3, ..Default::default() }; 2]),
            ],
            footnote: FOOTNOTE.into(),
        };
        let t = r.table();
        assert_eq!(t.lines().count(), 5);
        assert!(t.contains("rb_deeponet"));
        assert!(t.contains("1.00e-3 / 1.00e-3"));
        assert_eq!(r.method(Method::RbDeeponet).unwrap().rel_l2.mean, 1e-3);
    }
}
