//! Branch network: a fully connected GELU network mapping (standardized)
//! inputs to trunk coefficients, its losses and the training loop.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::reduction::OnlineSystem;
use crate::{Error, Result};

pub const HIDDEN_WIDTH: usize = 256;
pub const HIDDEN_LAYERS: usize = 4;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// x Phi(x) with the exact normal CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Phi(x) + x phi(x)
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Layer sizes [d_in, 256, 256, 256, 256, n_out].
pub fn branch_sizes(d_in: usize, n_out: usize) -> Vec<usize> {
    let mut s = vec![d_in];
    s.extend(std::iter::repeat_n(HIDDEN_WIDTH, HIDDEN_LAYERS));
    s.push(n_out);
    s
}

/// C = alpha A B + beta C, all row-major with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe matrices that lie inside the slices:
    // a is m x k, b is k x n and c is m x n with row stride n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// z = x W + z for row-major x (rows x fi), W (fi x fo), z (rows x fo).
/// Every entry is summed over k in the same order whatever the row count,
/// and nothing is allocated.
fn affine_rows(x: &[f64], w: &[f64], fi: usize, fo: usize, z: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required target features were detected at runtime.
        unsafe { affine_rows_fma(x, w, fi, fo, z) };
        return;
    }
    affine_tiles::<false>(x, w, fi, fo, z);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn affine_rows_fma(x: &[f64], w: &[f64], fi: usize, fo: usize, z: &mut [f64]) {
    affine_tiles::<true>(x, w, fi, fo, z);
}

#[inline(always)]
fn madd<const FMA: bool>(acc: f64, a: f64, b: f64) -> f64 {
    if FMA { a.mul_add(b, acc) } else { acc + a * b }
}

#[inline(always)]
fn affine_tiles<const FMA: bool>(x: &[f64], w: &[f64], fi: usize, fo: usize, z: &mut [f64]) {
    const R: usize = 4;
    const C: usize = 8;
    let rows = z.len() / fo;
    assert!(x.len() >= rows * fi && w.len() >= fi * fo);
    let mut j0 = 0;
    while j0 < fo {
        let nc = C.min(fo - j0);
        let mut r0 = 0;
        while r0 < rows {
            let nr = R.min(rows - r0);
            if nr == R && nc == C {
                let mut acc = [[0.0f64; C]; R];
                for (r, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&z[(r0 + r) * fo + j0..][..C]);
                }
                let xs: [&[f64]; R] = std::array::from_fn(|r| &x[(r0 + r) * fi..][..fi]);
                for kk in 0..fi {
                    let wk: &[f64; C] = w[kk * fo + j0..][..C].try_into().unwrap();
                    for (row, xr) in acc.iter_mut().zip(&xs) {
                        let a = xr[kk];
                        for c in 0..C {
                            row[c] = madd::<FMA>(row[c], a, wk[c]);
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    z[(r0 + r) * fo + j0..][..C].copy_from_slice(row);
                }
            } else {
                for r in r0..r0 + nr {
                    for j in j0..j0 + nc {
                        let mut v = z[r * fo + j];
                        for kk in 0..fi {
                            v = madd::<FMA>(v, x[r * fi + kk], w[kk * fo + j]);
                        }
                        z[r * fo + j] = v;
                    }
                }
            }
            r0 += nr;
        }
        j0 += nc;
    }
}

/// Dense network with GELU on hidden layers and identity output. Parameters
/// live in one flat vector; layer l holds an in x out weight block (row
/// major) followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Buffers for one batch size: pre-activations and activations per layer.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    batch: usize,
    z: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub fn new(sizes: &[usize], batch: usize) -> Self {
        let widest = sizes.iter().copied().max().unwrap_or(0);
        Self {
            batch,
            z: sizes[1..].iter().map(|s| vec![0.0; s * batch]).collect(),
            a: sizes.iter().map(|s| vec![0.0; s * batch]).collect(),
            delta: vec![0.0; widest * batch],
            delta_prev: vec![0.0; widest * batch],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network output of the last forward pass (batch x n_out).
    pub fn output(&self) -> &[f64] {
        self.a.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.n_layers() {
            let (fi, fo) = (net.sizes[l], net.sizes[l + 1]);
            let bound = xavier_bound(fi, fo);
            let (w, _) = net.layer_range(l);
            for v in &mut net.params[w] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn d_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn d_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Weight and bias index ranges of layer l.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let off: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
        (off..off + fi * fo, off + fi * fo..off + fi * fo + fo)
    }

    /// true for weights, false for biases.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.params.len()];
        for l in 0..self.n_layers() {
            let (w, _) = self.layer_range(l);
            m[w].iter_mut().for_each(|v| *v = true);
        }
        m
    }

    /// Forward pass of `x` (ws.batch() rows of d_in) into the workspace.
    pub fn forward_into(&self, x: &[f64], ws: &mut Workspace) {
        let batch = ws.batch;
        assert_eq!(x.len(), batch * self.d_in());
        ws.a[0].copy_from_slice(x);
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_range(l);
            let (w, b) = (&self.params[w], &self.params[b]);
            let z = &mut ws.z[l];
            for row in z.chunks_mut(fo) {
                row.copy_from_slice(b);
            }
            affine_rows(&ws.a[l], w, fi, fo, z);
            let out = &mut ws.a[l + 1];
            if l == last {
                out.copy_from_slice(z);
            } else {
                for (o, v) in out.iter_mut().zip(z.iter()) {
                    *o = gelu(*v);
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut ws = Workspace::new(&self.sizes, batch);
        self.forward_into(x, &mut ws);
        ws.output().to_vec()
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output) in
    /// `grad_out` for the batch last passed through `forward_into`.
    pub fn backward(&self, ws: &mut Workspace, grad_out: &[f64], grad: &mut [f64]) {
        let batch = ws.batch;
        let nl = self.n_layers();
        ws.delta[..grad_out.len()].copy_from_slice(grad_out);
        for l in (0..nl).rev() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let (wr, br) = self.layer_range(l);
            let delta = &ws.delta[..batch * fo];
            // dW += a_l^T delta
            gemm(
                fi,
                batch,
                fo,
                1.0,
                &ws.a[l],
                (1, fi as isize),
                delta,
                (fo as isize, 1),
                1.0,
                &mut grad[wr.clone()],
            );
            let gb = &mut grad[br];
            for row in delta.chunks(fo) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                // delta_prev = (delta W^T) * gelu'(z_{l-1})
                let dp = &mut ws.delta_prev[..batch * fi];
                gemm(
                    batch,
                    fo,
                    fi,
                    1.0,
                    delta,
                    (fo as isize, 1),
                    &self.params[wr],
                    (1, fo as isize),
                    0.0,
                    dp,
                );
                for (d, z) in dp.iter_mut().zip(&ws.z[l - 1]) {
                    *d *= gelu_derivative(*z);
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// Per-feature affine standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub const STD_FLOOR: f64 = 1e-12;

    /// Mean and population standard deviation of the rows of `x`.
    pub fn fit(x: &[f64], d: usize) -> Result<Self> {
        if d == 0 || x.is_empty() || x.len() % d != 0 {
            return Err(Error::InvalidArgument("cannot fit a standardizer to empty data".into()));
        }
        let n = (x.len() / d) as f64;
        let mut mean = vec![0.0; d];
        for row in x.chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.chunks(d) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(Self::STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (o, i) in out.chunks_mut(d).zip(x.chunks(d)) {
            for j in 0..d {
                o[j] = (i[j] - self.mean[j]) / self.std[j];
            }
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.transform_into(x, &mut out);
        out
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = z.to_vec();
        for row in out.chunks_mut(d) {
            for j in 0..d {
                row[j] = row[j] * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

/// Standardizer plus network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchNet {
    pub standardizer: Standardizer,
    pub mlp: Mlp,
}

impl BranchNet {
    /// Coefficients for `batch` raw input rows.
    pub fn predict(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.mlp.forward(&self.standardizer.transform(x), batch)
    }

    /// Allocation-free prediction of one input through a batch-1 workspace.
    pub fn predict_into(&self, x: &[f64], scratch: &mut [f64], ws: &mut Workspace, out: &mut [f64]) {
        self.standardizer.transform_into(x, scratch);
        self.mlp.forward_into(scratch, ws);
        out.copy_from_slice(ws.output());
    }
}

/// A per-sample loss on the network output.
pub trait LossHead: Sync {
    fn n_out(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Loss of sample i at coefficients c; writes d(loss)/dc into `grad`.
    fn loss_grad(&self, i: usize, c: &[f64], grad: &mut [f64]) -> f64;
}

/// Per-sample data of the residual loss.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualSample {
    pub theta_a: Vec<f64>,
    pub f_rb: Vec<f64>,
    /// RB-Galerkin coefficients A_rb^{-1} F_rb.
    pub c_rb: Vec<f64>,
}

/// rᵀ A_rb⁻¹ r with r = F_rb - A_rb c. The solve reuses the cached Galerkin
/// coefficients: A_rb⁻¹ r = c_rb - c, and d/dc = -2 r.
pub struct ResidualLoss<'a> {
    pub system: &'a OnlineSystem,
    pub samples: &'a [ResidualSample],
}

impl ResidualLoss<'_> {
    /// r = F_rb - sum_p theta_p A_p c, written into `r`.
    pub fn residual_into(&self, i: usize, c: &[f64], r: &mut [f64]) {
        let s = &self.samples[i];
        r.copy_from_slice(&s.f_rb);
        let n = c.len();
        for (t, a) in s.theta_a.iter().zip(self.system.operators()) {
            if *t == 0.0 {
                continue;
            }
            let a = a.as_slice();
            // column-major: a[row + col * n]
            for (col, cv) in c.iter().enumerate() {
                let f = t * cv;
                if f == 0.0 {
                    continue;
                }
                for (rv, av) in r.iter_mut().zip(&a[col * n..(col + 1) * n]) {
                    *rv -= f * av;
                }
            }
        }
    }
}

impl LossHead for ResidualLoss<'_> {
    fn n_out(&self) -> usize {
        self.system.dim()
    }

    fn len(&self) -> usize {
        self.samples.len()
    }

    fn loss_grad(&self, i: usize, c: &[f64], grad: &mut [f64]) -> f64 {
        self.residual_into(i, c, grad);
        let s = &self.samples[i];
        let mut loss = 0.0;
        for ((g, cr), cv) in grad.iter_mut().zip(&s.c_rb).zip(c) {
            loss += *g * (cr - cv);
            *g *= -2.0;
        }
        loss
    }
}

/// Reference evaluation of rᵀ A⁻¹ r through a dense Cholesky factor.
pub fn residual_loss_cholesky(a_rb: &DMatrix<f64>, f_rb: &DVector<f64>, c: &DVector<f64>) -> Result<f64> {
    let r = f_rb - a_rb * c;
    let ch = a_rb
        .clone()
        .cholesky()
        .ok_or_else(|| Error::CoercivityViolation {
            sample: 0,
            detail: "reduced operator is not positive definite".into(),
        })?;
    let y = ch.l().solve_lower_triangular(&r).unwrap();
    Ok(y.norm_squared())
}

/// Per-sample data of the supervised loss.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupervisedSample {
    /// Psi^T M u
    pub t: Vec<f64>,
    /// u^T M u
    pub s: f64,
}

/// ‖Psi c - u‖²_M expanded as cᵀ M_N c - 2 cᵀ t + s.
pub struct SupervisedLoss<'a> {
    pub mass: &'a DMatrix<f64>,
    pub samples: &'a [SupervisedSample],
}

impl LossHead for SupervisedLoss<'_> {
    fn n_out(&self) -> usize {
        self.mass.nrows()
    }

    fn len(&self) -> usize {
        self.samples.len()
    }

    fn loss_grad(&self, i: usize, c: &[f64], grad: &mut [f64]) -> f64 {
        let s = &self.samples[i];
        let n = c.len();
        let m = self.mass.as_slice();
        let mut loss = s.s;
        for row in 0..n {
            let mut mc = 0.0;
            for col in 0..n {
                mc += m[row + col * n] * c[col];
            }
            loss += c[row] * (mc - 2.0 * s.t[row]);
            grad[row] = 2.0 * (mc - s.t[row]);
        }
        loss
    }
}

/// Mean loss over `idx` and, when `grad` is given, the gradient with
/// respect to the parameters (accumulated, not overwritten).
pub fn batch_loss(
    net: &Mlp,
    x: &[f64],
    idx: &[usize],
    head: &dyn LossHead,
    ws: &mut Workspace,
    grad: Option<&mut [f64]>,
) -> f64 {
    let d = net.d_in();
    let n = net.d_out();
    let b = idx.len();
    let mut xb = vec![0.0; b * d];
    for (row, &i) in xb.chunks_mut(d).zip(idx) {
        row.copy_from_slice(&x[i * d..(i + 1) * d]);
    }
    if ws.batch != b {
        *ws = Workspace::new(&net.sizes, b);
    }
    net.forward_into(&xb, ws);
    let out = ws.output().to_vec();
    let mut g_out = vec![0.0; b * n];
    let mut total = 0.0;
    for ((c, g), &i) in out.chunks(n).zip(g_out.chunks_mut(n)).zip(idx) {
        total += head.loss_grad(i, c, g);
    }
    let inv = 1.0 / b as f64;
    if let Some(grad) = grad {
        g_out.iter_mut().for_each(|v| *v *= inv);
        net.backward(ws, &g_out, grad);
    }
    total * inv
}

/// Mean loss over `idx`, evaluated in chunks.
pub fn mean_loss(net: &Mlp, x: &[f64], idx: &[usize], head: &dyn LossHead, chunk: usize) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let mut ws = Workspace::default();
    let mut total = 0.0;
    for part in idx.chunks(chunk.max(1)) {
        total += batch_loss(net, x, part, head, &mut ws, None) * part.len() as f64;
    }
    total / idx.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamW {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Decoupled decay on masked entries, then the bias-corrected Adam step.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, decay: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let shrink = 1.0 - lr * self.weight_decay;
        for i in 0..params.len() {
            if decay[i] {
                params[i] *= shrink;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Reduce-on-plateau learning-rate schedule on the validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Relative improvement threshold.
    pub threshold: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize, min_lr: f64, threshold: f64) -> Self {
        Self {
            factor,
            patience,
            min_lr,
            threshold,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Returns the learning rate for the next epoch.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best * (1.0 - self.threshold) {
            self.best = metric;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    Residual,
    Supervised,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub threshold: f64,
    pub early_stop: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch: 64,
            lr: 5e-4,
            weight_decay: 1e-6,
            plateau_factor: 0.5,
            plateau_patience: 20,
            min_lr: 1e-7,
            threshold: 1e-8,
            early_stop: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch > 0
            && self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.plateau_factor > 0.0
            && self.plateau_factor < 1.0
            && self.min_lr > 0.0
            && self.threshold >= 0.0
            && self.early_stop > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Mini-batch training on standardized inputs `x` (rows of d_in). Keeps the
/// weights with the lowest validation loss.
pub fn train(
    net: &mut Mlp,
    x: &[f64],
    head: &dyn LossHead,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<History> {
    config.validate()?;
    if head.n_out() != net.d_out() || x.len() != head.len() * net.d_in() {
        return Err(Error::InvalidArgument("network, inputs and loss head disagree in size".into()));
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    let mut history = History::default();
    if config.epochs == 0 {
        return Ok(history);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(net.param_count(), config.weight_decay);
    let mut plateau = Plateau::new(config.plateau_factor, config.plateau_patience, config.min_lr, config.threshold);
    let decay = net.decay_mask();
    let mut order = train_idx.to_vec();
    let mut grad = vec![0.0; net.param_count()];
    let mut ws = Workspace::new(&net.sizes, config.batch);
    let mut best = (f64::INFINITY, net.params.clone());
    let mut since_best = 0;
    let mut lr = config.lr;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let l = batch_loss(net, x, chunk, head, &mut ws, Some(&mut grad));
            if !l.is_finite() {
                return Err(Error::TrainingDiverged(epoch));
            }
            total += l * chunk.len() as f64;
            opt.step(&mut net.params, &grad, lr, &decay);
        }
        if !net.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
        let val = mean_loss(net, x, val_idx, head, 256);
        if !val.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
        history.train_loss.push(total / order.len() as f64);
        history.val_loss.push(val);
        history.lr.push(lr);
        if val < best.0 {
            best = (val, net.params.clone());
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        lr = plateau.step(val, lr);
        if since_best >= config.early_stop {
            history.stopped_early = true;
            break;
        }
    }
    net.params = best.1;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        let g = gelu(10.0);
        assert!((9.99999..=10.0).contains(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-5.0..5.0);
            let h = 1e-5;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn xavier_statistics() {
        assert!((xavier_bound(256, 256) - 0.10825).abs() < 1e-5);
        let a = Mlp::xavier(&[256, 256], 9).unwrap();
        let b = Mlp::xavier(&[256, 256], 9).unwrap();
        assert_eq!(a, b);
        let (w, bias) = a.layer_range(0);
        let ws = &a.params[w];
        let var = ws.iter().map(|v| v * v).sum::<f64>() / ws.len() as f64;
        let target = xavier_bound(256, 256).powi(2) / 3.0;
        assert!((var / target - 1.0).abs() < 0.1);
        assert!(a.params[bias].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Mlp::zeros(&branch_sizes(2, 3)).unwrap().param_count(), 198_915);
        assert_eq!(Mlp::zeros(&branch_sizes(147, 209)).unwrap().param_count(), 288_977);
        assert_eq!(Mlp::zeros(&branch_sizes(3, 5)).unwrap().param_count(), 199_685);
    }

    #[test]
    fn zero_and_single_layer_nets() {
        let z = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert!(z.forward(&[1.0, 2.0, 3.0], 1).iter().all(|v| *v == 0.0));
        let mut lin = Mlp::xavier(&[3, 2], 1).unwrap();
        let (_, b) = lin.layer_range(0);
        lin.params[b].copy_from_slice(&[0.5, -1.0]);
        let x = [1.0, -2.0, 0.25];
        let y = lin.forward(&x, 1);
        for o in 0..2 {
            let mut e = [0.5, -1.0][o];
            for i in 0..3 {
                e += x[i] * lin.params[i * 2 + o];
            }
            assert!((y[o] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn batching_is_bitwise_consistent() {
        let net = Mlp::xavier(&branch_sizes(4, 3), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..4 * 37).map(|_| rng.random::<f64>()).collect();
        let all = net.forward(&x, 37);
        for i in [0, 17, 36] {
            let one = net.forward(&x[i * 4..(i + 1) * 4], 1);
            assert_eq!(one, all[i * 3..(i + 1) * 3].to_vec());
        }
    }

    #[test]
    fn standardizer_round_trip() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin() * 3.0 + i as f64).collect();
        let s = Standardizer::fit(&x, 3).unwrap();
        let back = s.inverse(&s.transform(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
        let c = Standardizer::fit(&[1.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(c.std, vec![Standardizer::STD_FLOOR]);
    }

    #[test]
    fn adamw_scalar_recursion() {
        let (g, lr, t_max) = (0.3, 1e-2, 25);
        let mut p = [1.5];
        let mut opt = AdamW::new(1, 0.0);
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 1.5f64);
        for t in 1..=t_max {
            opt.step(&mut p, &[g], lr, &[true]);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - theta).abs() < 1e-12);
        }
        let mut q = [2.0, 3.0];
        let mut opt = AdamW::new(2, 0.0);
        opt.step(&mut q, &[0.0, 0.0], 0.1, &[true, true]);
        assert_eq!(q, [2.0, 3.0]);
        let mut q = [2.0];
        let mut opt = AdamW::new(1, 0.5);
        for _ in 0..4 {
            opt.step(&mut q, &[0.0], 0.1, &[true]);
        }
        assert!((q[0] - 2.0 * 0.95f64.powi(4)).abs() < 1e-15);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut p = Plateau::new(0.5, 2, 1e-3, 1e-8);
        let mut lr = 1.0;
        lr = p.step(1.0, lr);
        for _ in 0..2 {
            lr = p.step(1.0, lr);
            assert_eq!(lr, 1.0);
        }
        lr = p.step(1.0, lr);
        assert_eq!(lr, 0.5);
        for _ in 0..100 {
            lr = p.step(1.0, lr);
        }
        assert_eq!(lr, 1e-3);
    }

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn residual_loss_matches_matrix_square_root() {
        let a = spd(3, 1);
        let f = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let c = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        let eig = a.clone().symmetric_eigen();
        let inv_sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eig.eigenvectors.transpose();
        let r = &f - &a * &c;
        let oracle = (inv_sqrt * &r).norm_squared();
        let ours = residual_loss_cholesky(&a, &f, &c).unwrap();
        assert!((oracle - ours).abs() < 1e-10 * oracle);

        let system = OnlineSystem::new(vec![a.clone()], vec![f.clone()], 1.0);
        let c_rb = a.clone().cholesky().unwrap().solve(&f);
        let samples = vec![ResidualSample {
            theta_a: vec![1.0],
            f_rb: f.as_slice().to_vec(),
            c_rb: c_rb.as_slice().to_vec(),
        }];
        let head = ResidualLoss {
            system: &system,
            samples: &samples,
        };
        let mut g = vec![0.0; 3];
        let cached = head.loss_grad(0, c.as_slice(), &mut g);
        assert!((cached - oracle).abs() < 1e-10 * oracle);
        for (gi, ri) in g.iter().zip(r.iter()) {
            assert!((gi + 2.0 * ri).abs() < 1e-12);
        }
        // finite differences of the loss in c
        for j in 0..3 {
            let h = 1e-6;
            let mut cp = c.clone();
            let mut cm = c.clone();
            cp[j] += h;
            cm[j] -= h;
            let fd = (residual_loss_cholesky(&a, &f, &cp).unwrap() - residual_loss_cholesky(&a, &f, &cm).unwrap())
                / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-3));
        }
        let at_zero = head.loss_grad(0, &[0.0; 3], &mut g);
        let fa = f.dot(&c_rb);
        assert!((at_zero - fa).abs() < 1e-12 * fa);
        assert_eq!(head.loss_grad(0, c_rb.as_slice(), &mut g), 0.0);
    }

    #[test]
    fn supervised_loss_pythagoras() {
        let m = spd(4, 2);
        let u = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]);
        let t = &m * &u;
        let s = u.dot(&t);
        let samples = vec![SupervisedSample {
            t: t.as_slice().to_vec(),
            s,
        }];
        let head = SupervisedLoss {
            mass: &m,
            samples: &samples,
        };
        let mut g = vec![0.0; 4];
        assert!(head.loss_grad(0, u.as_slice(), &mut g).abs() < 1e-18 * s.max(1.0) + 1e-14);
        let c = [0.3, 0.1, -0.2, 1.0];
        let l = head.loss_grad(0, &c, &mut g);
        let d = DVector::from_column_slice(&c) - &u;
        assert!((l - d.dot(&(&m * &d))).abs() < 1e-12);
        for j in 0..4 {
            let h = 1e-6;
            let mut cp = c;
            let mut cm = c;
            cp[j] += h;
            cm[j] -= h;
            let mut tmp = vec![0.0; 4];
            let fd = (head.loss_grad(0, &cp, &mut tmp) - head.loss_grad(0, &cm, &mut tmp)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-3));
        }
    }

    fn fd_check(head: &dyn LossHead, x: &[f64], sizes: &[usize]) {
        let mut net = Mlp::xavier(sizes, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in net.params.iter_mut() {
            *v += 0.1 * (rng.random::<f64>() - 0.5);
        }
        let idx: Vec<usize> = (0..head.len()).collect();
        let mut ws = Workspace::default();
        let mut grad = vec![0.0; net.param_count()];
        batch_loss(&net, x, &idx, head, &mut ws, Some(&mut grad));
        let mut worst: f64 = 0.0;
        for p in 0..net.param_count() {
            let h = 1e-6;
            let orig = net.params[p];
            net.params[p] = orig + h;
            let lp = batch_loss(&net, x, &idx, head, &mut ws, None);
            net.params[p] = orig - h;
            let lm = batch_loss(&net, x, &idx, head, &mut ws, None);
            net.params[p] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            worst = worst.max((fd - grad[p]).abs() / scale);
        }
        assert!(worst < 1e-5, "relative gradient mismatch {worst}");
    }

    #[test]
    fn composite_gradients_match_differences() {
        let sizes = [2, 8, 3];
        let a = spd(3, 5);
        let b = spd(3, 6);
        let system = OnlineSystem::new(vec![a.clone(), b.clone()], vec![], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<ResidualSample> = (0..5)
            .map(|_| {
                let th = vec![rng.random::<f64>() + 0.5, rng.random::<f64>() + 0.5];
                let f = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);
                let full = &a * th[0] + &b * th[1];
                let c = full.cholesky().unwrap().solve(&f);
                ResidualSample {
                    theta_a: th,
                    f_rb: f.as_slice().to_vec(),
                    c_rb: c.as_slice().to_vec(),
                }
            })
            .collect();
        let x: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        fd_check(
            &ResidualLoss {
                system: &system,
                samples: &samples,
            },
            &x,
            &sizes,
        );
        let m = spd(3, 7);
        let sup: Vec<SupervisedSample> = (0..5)
            .map(|_| {
                let u = DVector::from_fn(3, |_, _| rng.random::<f64>());
                let t = &m * &u;
                SupervisedSample {
                    s: u.dot(&t),
                    t: t.as_slice().to_vec(),
                }
            })
            .collect();
        fd_check(
            &SupervisedLoss {
                mass: &m,
                samples: &sup,
            },
            &x,
            &sizes,
        );
    }

    #[test]
    fn training_keeps_best_weights_and_is_deterministic() {
        let m = spd(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..2 * 60).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let sup: Vec<SupervisedSample> = x
            .chunks(2)
            .map(|k| {
                let u = DVector::from_vec(vec![k[0] * k[1], k[0] + 0.5 * k[1].sin()]);
                let t = &m * &u;
                SupervisedSample {
                    s: u.dot(&t),
                    t: t.as_slice().to_vec(),
                }
            })
            .collect();
        let head = SupervisedLoss {
            mass: &m,
            samples: &sup,
        };
        let tr: Vec<usize> = (0..50).collect();
        let va: Vec<usize> = (50..60).collect();
        let cfg = TrainConfig {
            epochs: 30,
            batch: 8,
            lr: 1e-3,
            seed: 4,
            ..Default::default()
        };
        let mut a = Mlp::xavier(&[2, 16, 16, 2], 1).unwrap();
        let mut b = a.clone();
        let h = train(&mut a, &x, &head, &tr, &va, &cfg).unwrap();
        train(&mut b, &x, &head, &tr, &va, &cfg).unwrap();
        assert_eq!(a, b);
        let final_val = mean_loss(&a, &x, &va, &head, 256);
        for v in &h.val_loss {
            assert!(final_val <= *v);
        }
        assert!(h.val_loss.last().unwrap() < &h.val_loss[0]);
        let mut c = Mlp::xavier(&[2, 16, 16, 2], 1).unwrap();
        let before = c.clone();
        let h0 = train(&mut c, &x, &head, &tr, &va, &TrainConfig { epochs: 0, ..cfg }).unwrap();
        assert!(h0.train_loss.is_empty());
        assert_eq!(c, before);
    }
}
