//! Offline build, branch training, evaluation and the online audit.
//!
//! [`run_offline`] produces an [`Offline`] bundle: mesh, model, trunks, data
//! modes or EIM surrogate, and the per-sample training data. [`run_train`]
//! fits a branch net against it and [`run_eval`] compares the methods on
//! fresh test parameters.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{ParametricModel, ProblemData};
use crate::audit::{is_installed, AllocationScope, AllocationStats};
use crate::branchnet::{
    branch_sizes, train, BranchNet, History, LossHead, LossMode, Mlp, ResidualLoss, ResidualSample, Standardizer,
    SupervisedLoss, SupervisedSample, TrainConfig, Workspace,
};
use crate::datamodes::{boundary_greedy, case2_loads, case2_theta_f, source_greedy, AugmentedFeature, BoundaryModes, SourceModes};
use crate::geomap::{EimSurrogate, RadialMap, RadialProfile};
use crate::harness::artifact::{self, Artifact};
use crate::harness::examples::*;
use crate::harness::metrics::{sample_metrics, Method, MethodMetrics, MetricTriple, MetricsReport, ResidualNorm, FOOTNOTE};
use crate::mesh::TriMesh;
use crate::reduction::{
    coercivity_lower_bound, estimator, greedy_build, pod_build, rb_galerkin_solve, CoercivityStrategy, EstimatorRoute,
    GreedyConfig, GreedySample, GreedyTrace, PodCriterion, RBSpace,
};
use crate::sparse::axpy;
use crate::{Error, Result};

/// Everything that determines an offline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleConfig {
    pub example: u8,
    pub seed: u64,
    /// Target edge length (Examples 1 and 3).
    pub mesh_h: f64,
    /// Cells per side (Example 2).
    pub cells: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Leading training samples the trunk greedy searches over.
    pub greedy_training: usize,
    /// Tolerance for the trunk and POD size measurements.
    pub trunk_tol: f64,
    /// Largest greedy basis built while measuring N at `trunk_tol`.
    pub trunk_cap: usize,
    /// Trunk size used downstream (both greedy and POD).
    pub n: usize,
    pub pod: bool,
    /// POD snapshot count; parameters beyond `n_train` are drawn separately.
    pub pod_snapshots: usize,
    pub mode_tol: f64,
    pub r_f: usize,
    pub r_g: usize,
    pub r_f_cap: usize,
    pub r_g_cap: usize,
    pub eim_q: usize,
    pub eim_training: usize,
    /// Multiplier on the coercivity lower bound.
    pub alpha_safety: f64,
    pub route: EstimatorRoute,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self::example(1)
    }
}

impl ExampleConfig {
    /// Full-size settings of an example.
    pub fn example(id: u8) -> Self {
        let base = Self {
            example: id,
            seed: 2024,
            mesh_h: EX1_MESH_H,
            cells: EX2_CELLS,
            n_train: 2000,
            n_val: 200,
            greedy_training: 2000,
            trunk_tol: 1e-7,
            trunk_cap: 10,
            n: 3,
            pod: true,
            pod_snapshots: 2000,
            mode_tol: 1e-7,
            r_f: 0,
            r_g: 0,
            r_f_cap: 0,
            r_g_cap: 0,
            eim_q: EX3_Q,
            eim_training: EX3_EIM_TRAINING,
            alpha_safety: 1.0,
            route: EstimatorRoute::OfflineOnline,
        };
        match id {
            2 => Self {
                n_train: 8000,
                n_val: 2000,
                greedy_training: 1000,
                trunk_cap: 272,
                n: 209,
                pod_snapshots: 8000,
                r_f: 128,
                r_g: 16,
                r_f_cap: 167,
                r_g_cap: 127,
                alpha_safety: 0.95,
                ..base
            },
            3 => Self { n: 5, trunk_cap: 30, pod_snapshots: 4000, ..base },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(1..=3).contains(&self.example) {
            return bad("example must be 1, 2 or 3");
        }
        if self.n_train == 0 || self.n_val == 0 {
            return bad("training and validation sizes must be positive");
        }
        if self.greedy_training == 0 || self.greedy_training > self.n_train {
            return bad("greedy_training must lie in 1..=n_train");
        }
        if self.n == 0 || self.trunk_cap < self.n {
            return bad("need 0 < n <= trunk_cap");
        }
        if self.pod && self.pod_snapshots < self.n {
            return bad("pod_snapshots must be at least n");
        }
        if !(self.trunk_tol >= 0.0 && self.mode_tol >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if !(self.alpha_safety > 0.0 && self.alpha_safety <= 1.0) {
            return bad("alpha_safety must lie in (0, 1]");
        }
        if self.example == 1 || self.example == 3 {
            if !(self.mesh_h > 0.0 && self.mesh_h < 0.5) {
                return bad("mesh_h must lie in (0, 0.5)");
            }
        }
        if self.example == 2 {
            if self.cells < 2 {
                return bad("cells must be at least 2");
            }
            if self.r_f == 0 || self.r_g == 0 || self.r_f_cap < self.r_f || self.r_g_cap < self.r_g {
                return bad("need 0 < r_f <= r_f_cap and 0 < r_g <= r_g_cap");
            }
        }
        if self.example == 3 && (self.eim_q == 0 || self.eim_training < 2) {
            return bad("need eim_q > 0 and eim_training >= 2");
        }
        Ok(())
    }
}

/// Non-affine data attached to the model.
#[derive(Clone)]
pub enum Problem {
    Affine,
    Case2 { source: SourceModes, boundary: BoundaryModes },
    Eim { surrogate: Arc<EimSurrogate>, map: RadialMap },
}

/// One problem instance before reduction.
#[derive(Clone, Debug)]
pub enum RawSample {
    Coefficients(Vec<f64>),
    Data { k: Vec<f64>, data: ProblemData },
}

impl RawSample {
    pub fn k(&self) -> &[f64] {
        match self {
            RawSample::Coefficients(k) | RawSample::Data { k, .. } => k,
        }
    }
}

/// Reduced-coordinate description of one instance.
#[derive(Clone, Debug)]
pub struct Query {
    pub k: Vec<f64>,
    pub theta_a: Vec<f64>,
    pub theta_f: Vec<f64>,
    pub feature: Vec<f64>,
    /// Interior field added to Psi c (lifted boundary modes).
    pub offset: Option<Vec<f64>>,
}

/// Sizes measured at the configured tolerances. `None` means the cap was hit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasuredDims {
    pub n_greedy: Option<usize>,
    pub n_pod: Option<usize>,
    pub r_f: Option<usize>,
    pub r_g: Option<usize>,
    pub trunk_cap: usize,
    pub r_f_cap: usize,
    pub r_g_cap: usize,
}

/// Per-sample training data, training rows first, then validation rows.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub d_in: usize,
    /// Raw features, row-major.
    pub features: Vec<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub residual: Vec<ResidualSample>,
    pub supervised: Vec<SupervisedSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.n_train + self.n_val
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_in..(i + 1) * self.d_in]
    }
}

pub struct Offline {
    pub config: ExampleConfig,
    pub mesh: TriMesh,
    pub model: ParametricModel,
    pub problem: Problem,
    /// Load terms the trunks were projected with.
    pub loads: Vec<Vec<f64>>,
    pub greedy: RBSpace,
    pub greedy_trace: GreedyTrace,
    pub pod: Option<RBSpace>,
    pub pod_eigenvalues: Vec<f64>,
    pub dims: MeasuredDims,
    pub data: Dataset,
    pub timings: BTreeMap<String, f64>,
}

fn prefix_space(model: &ParametricModel, s: &RBSpace, n: usize, loads: &[Vec<f64>]) -> Result<RBSpace> {
    if n >= s.dim() {
        return Ok(s.clone());
    }
    let mut prov = s.provenance.clone();
    prov.selected.truncate(n);
    prov.selected_parameters.truncate(n);
    prov.n_max = n;
    RBSpace::from_basis(model, s.basis.columns(0, n).into_owned(), loads, s.alpha_lb, prov)
}

fn example_mesh(cfg: &ExampleConfig) -> Result<TriMesh> {
    match cfg.example {
        2 => example2_mesh(cfg.cells),
        _ => example1_mesh(cfg.mesh_h),
    }
}

/// The model for an example; Example 3 needs its surrogate.
pub fn example_model(id: u8, mesh: &TriMesh, surrogate: Option<Arc<EimSurrogate>>) -> Result<ParametricModel> {
    match (id, surrogate) {
        (1, _) => example1_model(mesh),
        (2, _) => example2_model(mesh),
        (3, Some(s)) => example3_model(mesh, s),
        _ => Err(Error::InvalidArgument("unknown example or missing surrogate".into())),
    }
}

fn example_box(id: u8) -> ParamBox {
    match id {
        2 => example2_box(),
        3 => example3_box(),
        _ => example1_box(),
    }
}

impl Offline {
    fn load_of(&self, theta_f: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.model.n0()];
        for (t, fq) in theta_f.iter().zip(&self.loads) {
            if *t != 0.0 {
                axpy(*t, fq, &mut f);
            }
        }
        f
    }

    /// Load vector of the reduced problem a query represents.
    pub fn query_load(&self, q: &Query) -> Vec<f64> {
        self.load_of(&q.theta_f)
    }

    /// `n` fresh instances drawn from `seed`.
    pub fn raw_samples(&self, n: usize, seed: u64) -> Result<Vec<RawSample>> {
        raw_samples(self.config.example, &self.mesh, &self.model, n, seed)
    }

    pub fn query(&self, raw: &RawSample) -> Result<Query> {
        make_query(&self.model, &self.problem, raw)
    }

    /// Truth solution of the reduced-data problem (what the trunk targets).
    pub fn snapshot(&self, q: &Query) -> Result<Vec<f64>> {
        self.model.truth_solve(&q.k, &self.load_of(&q.theta_f))
    }

    /// Reference interior solution: exact data, exact geometry.
    pub fn reference(&self, raw: &RawSample, q: &Query) -> Result<Vec<f64>> {
        match (&self.problem, raw) {
            (Problem::Case2 { .. }, RawSample::Data { k, data }) => {
                let mut u = self.model.truth_solve(k, &self.model.aggregated_load(k, data)?)?;
                axpy(1.0, &self.model.lift_interior(&data.dirichlet)?, &mut u);
                Ok(u)
            }
            (Problem::Eim { map, .. }, _) => example3_direct_solve(&self.mesh, &self.model, map, raw.k()),
            _ => self.snapshot(q),
        }
    }

    /// Psi c plus the query offset.
    pub fn field(&self, space: &RBSpace, q: &Query, c: &[f64]) -> Vec<f64> {
        let mut u = space.reconstruct(c);
        if let Some(o) = &q.offset {
            axpy(1.0, o, &mut u);
        }
        u
    }

    pub fn reference_parameter(&self) -> &[f64] {
        self.model.reference()
    }
}

fn raw_samples(id: u8, mesh: &TriMesh, model: &ParametricModel, n: usize, seed: u64) -> Result<Vec<RawSample>> {
    if id == 2 {
        example2_samples(n, seed)
            .par_iter()
            .map(|s| {
                Ok(RawSample::Data {
                    k: s.k.to_vec(),
                    data: example2_data(mesh, model, s)?,
                })
            })
            .collect()
    } else {
        Ok(example_box(id).sample_n(n, seed).into_iter().map(RawSample::Coefficients).collect())
    }
}

fn make_query(model: &ParametricModel, problem: &Problem, raw: &RawSample) -> Result<Query> {
    let k = raw.k().to_vec();
    let theta_a = model.theta_a(&k);
    match (problem, raw) {
        (Problem::Case2 { source, boundary }, RawSample::Data { data, .. }) => {
            let a = source.encode(&data.load)?;
            let b = boundary.encode(&data.dirichlet)?;
            Ok(Query {
                theta_f: case2_theta_f(&theta_a, &a, &b),
                feature: AugmentedFeature::new(&k, &a, &b).to_vec(),
                offset: Some(boundary.lifted_interior(&b)),
                theta_a,
                k,
            })
        }
        (Problem::Case2 { .. }, _) => Err(Error::InvalidArgument("Example 2 needs data samples".into())),
        _ => Ok(Query {
            theta_f: model.theta_f(&k),
            feature: k.clone(),
            offset: None,
            theta_a,
            k,
        }),
    }
}

fn residual_sample(space: &RBSpace, q: &Query) -> Result<ResidualSample> {
    let sys_a = reduced_operator(space, &q.theta_a);
    let f = reduced_load(space, &q.theta_f);
    let c = rb_galerkin_solve(&sys_a, &f)?;
    Ok(ResidualSample {
        theta_a: q.theta_a.clone(),
        f_rb: f.as_slice().to_vec(),
        c_rb: c.as_slice().to_vec(),
    })
}

fn reduced_operator(space: &RBSpace, theta_a: &[f64]) -> DMatrix<f64> {
    let n = space.dim();
    let mut a = DMatrix::zeros(n, n);
    for (t, op) in theta_a.iter().zip(&space.operators) {
        if *t != 0.0 {
            a += op * *t;
        }
    }
    a
}

fn reduced_load(space: &RBSpace, theta_f: &[f64]) -> DVector<f64> {
    let mut f = DVector::zeros(space.dim());
    for (t, b) in theta_f.iter().zip(&space.loads) {
        if *t != 0.0 {
            f.axpy(*t, b, 1.0);
        }
    }
    f
}

fn supervised_sample(model: &ParametricModel, pod: &RBSpace, w: &[f64]) -> SupervisedSample {
    let mw = model.mass_ii().matvec(w);
    let t = pod.basis.tr_mul(&DVector::from_column_slice(&mw));
    SupervisedSample {
        t: t.as_slice().to_vec(),
        s: w.iter().zip(&mw).map(|(a, b)| a * b).sum(),
    }
}

fn tick(timings: &mut BTreeMap<String, f64>, key: &str, t: Instant) {
    timings.insert(key.into(), t.elapsed().as_secs_f64());
}

/// Offline stage: mesh, model, data modes or surrogate, trunks and training
/// data.
pub fn run_offline(cfg: &ExampleConfig) -> Result<Offline> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let id = cfg.example;
    let t = Instant::now();
    let mesh = example_mesh(cfg)?;
    let (model, problem0) = if id == 3 {
        let map = example3_map(RadialProfile::LinearRadius)?;
        let surrogate = Arc::new(example3_surrogate(&mesh, &map, cfg.eim_q, cfg.eim_training)?);
        (example3_model(&mesh, surrogate.clone())?, Problem::Eim { surrogate, map })
    } else {
        (example_model(id, &mesh, None)?, Problem::Affine)
    };
    tick(&mut timings, "model", t);

    // parameters: training, validation, then POD-only extras
    let n_tv = cfg.n_train + cfg.n_val;
    let extra = if cfg.pod { cfg.pod_snapshots.saturating_sub(cfg.n_train) } else { 0 };
    let t = Instant::now();
    let raws = raw_samples(id, &mesh, &model, n_tv + extra, cfg.seed)?;
    tick(&mut timings, "samples", t);

    let mut dims = MeasuredDims { trunk_cap: cfg.trunk_cap, ..Default::default() };
    let (problem, loads) = if id == 2 {
        let t = Instant::now();
        let train: Vec<&ProblemData> = raws[..cfg.n_train]
            .iter()
            .map(|r| match r {
                RawSample::Data { data, .. } => data,
                RawSample::Coefficients(_) => unreachable!(),
            })
            .collect();
        let traces = train.iter().map(|d| d.dirichlet.clone()).collect();
        let bm = boundary_greedy(&model, traces, cfg.mode_tol, cfg.r_g_cap, cfg.seed ^ 0xb0)?;
        let loads: Vec<Vec<f64>> = train.iter().map(|d| d.load.clone()).collect();
        let sm = source_greedy(&model, &loads, cfg.mode_tol, cfg.r_f_cap, cfg.seed ^ 0x50)?;
        dims.r_g = bm.trace.rank_at(cfg.mode_tol);
        dims.r_f = sm.trace.rank_at(cfg.mode_tol);
        dims.r_g_cap = cfg.r_g_cap;
        dims.r_f_cap = cfg.r_f_cap;
        let bm = bm.truncate(cfg.r_g);
        let sm = sm.truncate(cfg.r_f);
        let unified = case2_loads(&model, &sm, &bm);
        tick(&mut timings, "modes", t);
        (Problem::Case2 { source: sm, boundary: bm }, unified)
    } else {
        (problem0, model.load_terms().to_vec())
    };

    let t = Instant::now();
    let queries: Vec<Query> = raws.par_iter().map(|r| make_query(&model, &problem, r)).collect::<Result<_>>()?;
    tick(&mut timings, "queries", t);

    let t = Instant::now();
    let b = example_box(id);
    let alpha = match &problem {
        Problem::Affine => coercivity_lower_bound(
            &model,
            &CoercivityStrategy::MinTheta { samples: raws[..cfg.n_train].iter().map(|r| r.k().to_vec()).collect(), floor: 0.0 },
        )?,
        Problem::Case2 { .. } => coercivity_lower_bound(
            &model,
            &CoercivityStrategy::BoxVertices { lower: b.lower.clone(), upper: b.upper.clone(), safety: 1.0 },
        )?,
        Problem::Eim { surrogate, .. } => example3_alpha_lb(surrogate, 1.0)?,
    } * cfg.alpha_safety;
    tick(&mut timings, "alpha", t);

    let t = Instant::now();
    let gsamples: Vec<GreedySample> = queries[..cfg.greedy_training]
        .iter()
        .map(|q| GreedySample { k: q.k.clone(), theta_f: q.theta_f.clone() })
        .collect();
    let gcfg = GreedyConfig { tol: cfg.trunk_tol, n_max: cfg.trunk_cap, alpha_lb: alpha, route: cfg.route };
    let (full, greedy_trace) = greedy_build(&model, &loads, &gsamples, &gcfg)?;
    let mut full = full;
    full.provenance.seed = Some(cfg.seed);
    full.provenance.alpha_strategy = format!("{} x {}", alpha_label(id), cfg.alpha_safety);
    dims.n_greedy = greedy_trace.max_estimators().iter().position(|e| *e <= cfg.trunk_tol).map(|i| i + 1);
    let greedy = prefix_space(&model, &full, cfg.n, &loads)?;
    drop(full);
    tick(&mut timings, "greedy", t);

    let mut pod = None;
    let mut pod_eigenvalues = Vec::new();
    let mut snapshots_tv: Vec<Vec<f64>> = Vec::new();
    if cfg.pod {
        let t = Instant::now();
        let pod_idx: Vec<usize> = (0..cfg.n_train).chain(n_tv..n_tv + extra).take(cfg.pod_snapshots).collect();
        let snap = |i: &usize| {
            let q = &queries[*i];
            let mut f = vec![0.0; model.n0()];
            for (t, fq) in q.theta_f.iter().zip(&loads) {
                if *t != 0.0 {
                    axpy(*t, fq, &mut f);
                }
            }
            model.truth_solve(&q.k, &f)
        };
        let all: Vec<usize> = (0..n_tv + extra).collect();
        let snaps: Vec<Vec<f64>> = all.par_iter().map(snap).collect::<Result<_>>()?;
        let pod_set: Vec<Vec<f64>> = pod_idx.iter().map(|i| snaps[*i].clone()).collect();
        let res = pod_build(&model, &pod_set, PodCriterion::Fixed(cfg.n), &loads, alpha)?;
        drop(pod_set);
        let total = res.trace;
        dims.n_pod = (1..=res.raw_eigenvalues.len()).find(|&n| res.tail(n) / total <= cfg.trunk_tol);
        pod_eigenvalues = res.eigenvalues.clone();
        let mut space = res.space;
        space.provenance.seed = Some(cfg.seed);
        pod = Some(space);
        snapshots_tv = snaps.into_iter().take(n_tv).collect();
        tick(&mut timings, "pod", t);
    }

    let t = Instant::now();
    let d_in = queries[0].feature.len();
    let mut features = Vec::with_capacity(n_tv * d_in);
    for q in &queries[..n_tv] {
        features.extend_from_slice(&q.feature);
    }
    let residual: Vec<ResidualSample> =
        queries[..n_tv].par_iter().map(|q| residual_sample(&greedy, q)).collect::<Result<_>>()?;
    let supervised = match &pod {
        Some(p) => snapshots_tv.par_iter().map(|w| supervised_sample(&model, p, w)).collect(),
        None => Vec::new(),
    };
    tick(&mut timings, "dataset", t);

    Ok(Offline {
        config: cfg.clone(),
        mesh,
        model,
        problem,
        loads,
        greedy,
        greedy_trace,
        pod,
        pod_eigenvalues,
        dims,
        data: Dataset { d_in, features, n_train: cfg.n_train, n_val: cfg.n_val, residual, supervised },
        timings,
    })
}

fn alpha_label(id: u8) -> &'static str {
    match id {
        2 => "box-vertices",
        3 => "eim-tensor-min",
        _ => "min-theta",
    }
}

/// A trained branch network and its history.
pub struct Trained {
    pub net: BranchNet,
    pub history: History,
    pub mode: LossMode,
    pub config: TrainConfig,
    pub n_train: usize,
    pub seconds: f64,
}

/// Trains on the first `n_train` training rows (all when `None`).
pub fn run_train(off: &Offline, mode: LossMode, cfg: &TrainConfig, n_train: Option<usize>) -> Result<Trained> {
    let data = &off.data;
    let nt = n_train.unwrap_or(data.n_train).min(data.n_train);
    if nt == 0 {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    let d = data.d_in;
    let standardizer = Standardizer::fit(&data.features[..nt * d], d)?;
    let x = standardizer.transform(&data.features);
    let train_idx: Vec<usize> = (0..nt).collect();
    let val_idx: Vec<usize> = (data.n_train..data.len()).collect();
    let t = Instant::now();
    let (mlp, history) = match mode {
        LossMode::Residual => {
            let system = off.greedy.online();
            let head = ResidualLoss { system: &system, samples: &data.residual };
            fit(&x, d, &head, &train_idx, &val_idx, cfg)?
        }
        LossMode::Supervised => {
            let pod = off.pod.as_ref().ok_or_else(|| Error::InvalidArgument("offline run has no POD trunk".into()))?;
            let head = SupervisedLoss { mass: &pod.mass, samples: &data.supervised };
            fit(&x, d, &head, &train_idx, &val_idx, cfg)?
        }
    };
    Ok(Trained {
        net: BranchNet { standardizer, mlp },
        history,
        mode,
        config: cfg.clone(),
        n_train: nt,
        seconds: t.elapsed().as_secs_f64(),
    })
}

fn fit(
    x: &[f64],
    d: usize,
    head: &dyn LossHead,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(Mlp, History)> {
    let mut mlp = Mlp::xavier(&branch_sizes(d, head.n_out()), cfg.seed)?;
    let h = train(&mut mlp, x, head, train_idx, val_idx, cfg)?;
    Ok((mlp, h))
}

/// Trained networks available for evaluation.
#[derive(Default)]
pub struct Nets<'a> {
    pub rb: Option<&'a BranchNet>,
    pub pod: Option<&'a BranchNet>,
}

/// Per-sample reduced data of an evaluation.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalSample {
    pub k: Vec<f64>,
    pub c_galerkin: Vec<f64>,
    pub c_rb_net: Option<Vec<f64>>,
}

/// Evaluates every available method on `test_size` fresh parameters.
pub fn run_eval(off: &Offline, nets: &Nets, test_size: usize, seed: u64) -> Result<(MetricsReport, Vec<EvalSample>)> {
    if test_size == 0 {
        return Err(Error::InvalidArgument("test size must be positive".into()));
    }
    let raws = off.raw_samples(test_size, seed)?;
    let star = off.model.theta_a(off.reference_parameter());
    let g_weight = ResidualNorm::new(&reduced_operator(&off.greedy, &star))?;
    let p_weight = match &off.pod {
        Some(p) => Some(ResidualNorm::new(&reduced_operator(p, &star))?),
        None => None,
    };
    let per: Vec<(Vec<(Method, MetricTriple)>, EvalSample)> = raws
        .par_iter()
        .map(|raw| {
            let q = off.query(raw)?;
            let reference = off.reference(raw, &q)?;
            let mut out = Vec::new();
            let ga = reduced_operator(&off.greedy, &q.theta_a);
            let gf = reduced_load(&off.greedy, &q.theta_f);
            let c = rb_galerkin_solve(&ga, &gf)?;
            let metric = |space: &RBSpace, w: &ResidualNorm, a: &DMatrix<f64>, f: &DVector<f64>, c: &DVector<f64>| {
                let u = off.field(space, &q, c.as_slice());
                sample_metrics(off.model.mass_ii(), off.model.star_ii(), w, &reference, &u, a, f, c)
            };
            out.push((Method::RbGalerkin, metric(&off.greedy, &g_weight, &ga, &gf, &c)));
            let mut es = EvalSample { k: q.k.clone(), c_galerkin: c.as_slice().to_vec(), c_rb_net: None };
            if let Some(net) = nets.rb {
                let cn = DVector::from_vec(net.predict(&q.feature, 1));
                out.push((Method::RbDeeponet, metric(&off.greedy, &g_weight, &ga, &gf, &cn)));
                es.c_rb_net = Some(cn.as_slice().to_vec());
            }
            if let (Some(net), Some(pod), Some(w)) = (nets.pod, &off.pod, &p_weight) {
                let pa = reduced_operator(pod, &q.theta_a);
                let pf = reduced_load(pod, &q.theta_f);
                let cn = DVector::from_vec(net.predict(&q.feature, 1));
                out.push((Method::PodDeeponet, metric(pod, w, &pa, &pf, &cn)));
            }
            Ok((out, es))
        })
        .collect::<Result<_>>()?;
    let mut methods = Vec::new();
    for m in [Method::RbDeeponet, Method::PodDeeponet, Method::RbGalerkin] {
        let s: Vec<MetricTriple> =
            per.iter().filter_map(|(v, _)| v.iter().find(|(mm, _)| *mm == m).map(|(_, t)| *t)).collect();
        if !s.is_empty() {
            methods.push(MethodMetrics::new(m, s));
        }
    }
    let report = MetricsReport {
        example: off.config.example,
        test_size,
        seed,
        methods,
        footnote: FOOTNOTE.into(),
    };
    Ok((report, per.into_iter().map(|(_, e)| e).collect()))
}

/// (energy error of RB-Galerkin, estimator) on fresh parameters, both
/// against the reduced-data truth.
pub fn reliability(off: &Offline, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let raws = off.raw_samples(n, seed)?;
    raws.par_iter()
        .map(|raw| {
            let q = off.query(raw)?;
            let f = off.query_load(&q);
            let truth = off.model.truth_solve(&q.k, &f)?;
            let c = rb_galerkin_solve(&reduced_operator(&off.greedy, &q.theta_a), &reduced_load(&off.greedy, &q.theta_f))?;
            let mut e = truth;
            axpy(-1.0, &off.greedy.reconstruct(c.as_slice()), &mut e);
            let eta = estimator(&off.model, &off.greedy, &q.k, c.as_slice(), &f);
            Ok((off.model.star_norm(&e), eta))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n0: usize,
    pub n: usize,
    pub queries: usize,
    pub seconds_per_query: f64,
    pub allocations: AllocationStats,
    /// Whether the counting allocator is the global allocator.
    pub instrumented: bool,
    /// Size in bytes of one N0-length float vector.
    pub n0_bytes: usize,
}

impl AuditReport {
    /// No allocation reached the size of an N0 vector.
    pub fn n0_free(&self) -> bool {
        self.instrumented && self.allocations.largest < self.n0_bytes
    }
}

/// Times the online path (features, branch forward, reduced assembly,
/// reduced residual) over `queries`, repeated `reps` times; reports the best
/// repetition. Allocation counts cover one full pass.
pub fn online_audit(off: &Offline, net: &BranchNet, queries: &[Query], reps: usize) -> Result<AuditReport> {
    let system = off.greedy.online();
    let n = system.dim();
    if queries.is_empty() || net.mlp.d_out() != n {
        return Err(Error::InvalidArgument("audit needs queries and a matching network".into()));
    }
    let theta = off.model.theta_map().clone();
    let d = net.mlp.d_in();
    let mut ws = Workspace::new(&net.mlp.sizes, 1);
    let mut scratch = vec![0.0; d];
    let mut c = vec![0.0; n];
    let mut a = DMatrix::zeros(n, n);
    let mut f = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut pass = |sink: &mut f64| {
        for q in queries {
            let ta = theta.theta_a(&q.k);
            net.predict_into(&q.feature, &mut scratch, &mut ws, &mut c);
            system.assemble_operator_into(&ta, &mut a);
            system.assemble_load_into(&q.theta_f, &mut f);
            r.copy_from_slice(&f);
            for (j, cj) in c.iter().enumerate() {
                for (ri, aij) in r.iter_mut().zip(a.column(j).iter()) {
                    *ri -= aij * cj;
                }
            }
            *sink += r.iter().map(|v| v * v).sum::<f64>();
        }
    };
    let mut sink = 0.0;
    pass(&mut sink);
    let scope = AllocationScope::begin();
    pass(&mut sink);
    let allocations = scope.finish();
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        pass(&mut sink);
        best = best.min(t.elapsed().as_secs_f64());
    }
    std::hint::black_box(sink);
    Ok(AuditReport {
        n0: off.model.n0(),
        n,
        queries: queries.len(),
        seconds_per_query: best / queries.len() as f64,
        allocations,
        instrumented: is_installed(),
        n0_bytes: off.model.n0() * std::mem::size_of::<f64>(),
    })
}

// ---- persistence ----

pub fn save_offline(off: &Offline, dir: &Path) -> Result<()> {
    let mut art = Artifact::new("offline");
    art.set_meta("config", &off.config)?;
    art.set_meta("dims", &off.dims)?;
    art.set_meta("greedy_trace", &off.greedy_trace)?;
    art.set_meta("pod_eigenvalues", &off.pod_eigenvalues)?;
    art.set_meta("timings", &off.timings)?;
    art.set_meta("n0", &off.model.n0())?;
    artifact::put_space(&mut art, "greedy", &off.greedy)?;
    if let Some(p) = &off.pod {
        artifact::put_space(&mut art, "pod", p)?;
    }
    art.put_columns("loads", &off.loads)?;
    match &off.problem {
        Problem::Case2 { source, boundary } => {
            artifact::put_source_modes(&mut art, source)?;
            artifact::put_boundary_modes(&mut art, boundary)?;
        }
        Problem::Eim { surrogate, .. } => artifact::put_surrogate(&mut art, surrogate)?,
        Problem::Affine => {}
    }
    let d = &off.data;
    art.set_meta("data.d_in", &d.d_in)?;
    art.set_meta("data.n_train", &d.n_train)?;
    art.set_meta("data.n_val", &d.n_val)?;
    art.put("data.features", [d.d_in, d.len()], d.features.clone())?;
    art.put_columns("data.theta_a", &d.residual.iter().map(|s| s.theta_a.clone()).collect::<Vec<_>>())?;
    art.put_columns("data.f_rb", &d.residual.iter().map(|s| s.f_rb.clone()).collect::<Vec<_>>())?;
    art.put_columns("data.c_rb", &d.residual.iter().map(|s| s.c_rb.clone()).collect::<Vec<_>>())?;
    if !d.supervised.is_empty() {
        art.put_columns("data.sup_t", &d.supervised.iter().map(|s| s.t.clone()).collect::<Vec<_>>())?;
        art.put_vector("data.sup_s", &d.supervised.iter().map(|s| s.s).collect::<Vec<_>>())?;
    }
    art.save(dir)?;
    off.mesh.write(&dir.join("mesh.txt"))
}

pub fn load_offline(dir: &Path) -> Result<Offline> {
    let art = Artifact::load(dir)?;
    if art.kind != "offline" {
        return Err(Error::Format(format!("expected an offline artifact, found '{}'", art.kind)));
    }
    let config: ExampleConfig = art.meta("config")?;
    let mesh = TriMesh::read(&dir.join("mesh.txt"))?;
    let (model, problem) = match config.example {
        3 => {
            let s = Arc::new(artifact::get_surrogate(&art)?);
            let map = s.map;
            (example3_model(&mesh, s.clone())?, Problem::Eim { surrogate: s, map })
        }
        2 => (
            example2_model(&mesh)?,
            Problem::Case2 { source: artifact::get_source_modes(&art)?, boundary: artifact::get_boundary_modes(&art)? },
        ),
        _ => (example1_model(&mesh)?, Problem::Affine),
    };
    let d_in: usize = art.meta("data.d_in")?;
    let theta = art.columns("data.theta_a")?;
    let f_rb = art.columns("data.f_rb")?;
    let c_rb = art.columns("data.c_rb")?;
    let residual = theta
        .into_iter()
        .zip(f_rb)
        .zip(c_rb)
        .map(|((theta_a, f_rb), c_rb)| ResidualSample { theta_a, f_rb, c_rb })
        .collect();
    let supervised = if art.has("data.sup_t") {
        art.columns("data.sup_t")?
            .into_iter()
            .zip(art.vector("data.sup_s")?)
            .map(|(t, s)| SupervisedSample { t, s })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Offline {
        mesh,
        model,
        problem,
        loads: art.columns("loads")?,
        greedy: artifact::get_space(&art, "greedy")?,
        greedy_trace: art.meta("greedy_trace")?,
        pod: if art.has("pod.basis") { Some(artifact::get_space(&art, "pod")?) } else { None },
        pod_eigenvalues: art.meta("pod_eigenvalues")?,
        dims: art.meta("dims")?,
        data: Dataset {
            d_in,
            features: art.vector("data.features")?,
            n_train: art.meta("data.n_train")?,
            n_val: art.meta("data.n_val")?,
            residual,
            supervised,
        },
        timings: art.meta("timings")?,
        config,
    })
}

pub fn save_trained(t: &Trained, dir: &Path, offline_dir: Option<&Path>) -> Result<()> {
    let mut art = Artifact::new("branch-net");
    artifact::put_net(&mut art, "net", &t.net)?;
    art.set_meta("mode", &t.mode)?;
    art.set_meta("config", &t.config)?;
    art.set_meta("history", &t.history)?;
    art.set_meta("n_train", &t.n_train)?;
    art.set_meta("param_count", &t.net.mlp.param_count())?;
    if let Some(p) = offline_dir {
        art.set_meta("offline", &p.display().to_string())?;
    }
    art.save(dir)
}

pub fn load_trained(dir: &Path) -> Result<(BranchNet, LossMode, History)> {
    let art = Artifact::load(dir)?;
    if art.kind != "branch-net" {
        return Err(Error::Format(format!("expected a branch-net artifact, found '{}'", art.kind)));
    }
    Ok((artifact::get_net(&art, "net")?, art.meta("mode")?, art.meta("history")?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: u8) -> ExampleConfig {
        let mut c = ExampleConfig::example(id);
        c.n_train = 40;
        c.n_val = 10;
        c.greedy_training = 40;
        c.pod_snapshots = 40;
        match id {
            2 => {
                c.cells = 12;
                c.n = 8;
                c.trunk_cap = 10;
                c.r_f = 6;
                c.r_g = 4;
                c.r_f_cap = 8;
                c.r_g_cap = 6;
            }
            _ => {
                c.mesh_h = 0.1;
                c.eim_q = 6;
                c.eim_training = 30;
            }
        }
        c
    }

    #[test]
    fn config_validation() {
        for id in 1..=3 {
            ExampleConfig::example(id).validate().unwrap();
        }
        let mut c = ExampleConfig::example(1);
        c.n = 0;
        assert!(c.validate().is_err());
        let mut c = ExampleConfig::example(2);
        c.r_f = 500;
        assert!(c.validate().is_err());
        let mut c = ExampleConfig::example(1);
        c.example = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn offline_round_trip_and_eval() {
        for id in 1..=3 {
            let cfg = small(id);
            let off = run_offline(&cfg).unwrap();
            assert!(off.greedy.orthonormality_defect() < 1e-10);
            assert_eq!(off.greedy.dim(), cfg.n);
            assert_eq!(off.data.len(), 50);
            let dir = tempfile::tempdir().unwrap();
            save_offline(&off, dir.path()).unwrap();
            let back = load_offline(dir.path()).unwrap();
            assert_eq!(back.greedy.basis, off.greedy.basis);
            assert_eq!(back.data.features, off.data.features);
            assert_eq!(back.loads, off.loads);
            let (rep, _) = run_eval(&back, &Nets::default(), 5, 3).unwrap();
            let g = rep.method(Method::RbGalerkin).unwrap();
            assert!(g.rel_residual.mean < 1e-10, "example {id}: {:?}", g.rel_residual);
            let rel = reliability(&back, 5, 4).unwrap();
            assert!(rel.iter().all(|(e, eta)| e <= &(eta * (1.0 + 1e-8))));
        }
    }

    #[test]
    fn offline_is_deterministic() {
        let cfg = small(1);
        let a = run_offline(&cfg).unwrap();
        let b = run_offline(&cfg).unwrap();
        assert_eq!(a.greedy.basis, b.greedy.basis);
        assert_eq!(a.pod.unwrap().basis, b.pod.unwrap().basis);
        assert_eq!(a.data.features, b.data.features);
    }

    #[test]
    fn short_training_and_audit() {
        let off = run_offline(&small(1)).unwrap();
        let cfg = TrainConfig { epochs: 3, batch: 16, ..Default::default() };
        let t = run_train(&off, LossMode::Residual, &cfg, None).unwrap();
        assert_eq!(t.history.train_loss.len(), 3);
        let p = run_train(&off, LossMode::Supervised, &cfg, Some(20)).unwrap();
        assert_eq!(p.n_train, 20);
        let (rep, _) = run_eval(&off, &Nets { rb: Some(&t.net), pod: Some(&p.net) }, 4, 1).unwrap();
        assert_eq!(rep.methods.len(), 3);
        let raws = off.raw_samples(5, 9).unwrap();
        let qs: Vec<Query> = raws.iter().map(|r| off.query(r).unwrap()).collect();
        let a = online_audit(&off, &t.net, &qs, 2).unwrap();
        assert_eq!(a.queries, 5);
        assert!(a.seconds_per_query > 0.0);
        let dir = tempfile::tempdir().unwrap();
        save_trained(&t, dir.path(), None).unwrap();
        let (net, mode, hist) = load_trained(dir.path()).unwrap();
        assert_eq!(net, t.net);
        assert_eq!(mode, LossMode::Residual);
        assert_eq!(hist, t.history);
    }
}
