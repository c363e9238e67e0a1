//! Run manifest and on-disk reports.
//!
//! A report directory holds `metrics.json`, `table.txt`, `manifest.json` and,
//! when requested, SVG figures.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::branchnet::{History, TrainConfig};
use crate::harness::metrics::{Method, MetricsReport};
use crate::harness::pipeline::{ExampleConfig, MeasuredDims, Offline};
use crate::harness::plot::{line_plot, Series};
use crate::Result;

/// Every tolerance, seed and dimension behind one set of numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExampleConfig,
    pub n0: usize,
    pub trunk_dim: usize,
    pub pod_dim: Option<usize>,
    pub feature_dim: usize,
    pub measured: MeasuredDims,
    pub alpha_lb: f64,
    pub alpha_strategy: String,
    /// Training settings by method label.
    pub training: BTreeMap<String, TrainConfig>,
    pub param_counts: BTreeMap<String, usize>,
    pub test_size: usize,
    pub test_seed: u64,
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(off: &Offline, test_size: usize, test_seed: u64) -> Self {
        Self {
            config: off.config.clone(),
            n0: off.model.n0(),
            trunk_dim: off.greedy.dim(),
            pod_dim: off.pod.as_ref().map(|p| p.dim()),
            feature_dim: off.data.d_in,
            measured: off.dims.clone(),
            alpha_lb: off.greedy.alpha_lb,
            alpha_strategy: off.greedy.provenance.alpha_strategy.clone(),
            training: BTreeMap::new(),
            param_counts: BTreeMap::new(),
            test_size,
            test_seed,
            timings: off.timings.clone(),
        }
    }

    pub fn with_training(mut self, label: &str, cfg: &TrainConfig, params: usize) -> Self {
        self.training.insert(label.into(), cfg.clone());
        self.param_counts.insert(label.into(), params);
        self
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    report: &'a MetricsReport,
    manifest: &'a RunManifest,
}

/// Writes `metrics.json`, `table.txt` and `manifest.json`.
pub fn write_report(dir: &Path, report: &MetricsReport, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&MetricsFile { report, manifest })?)?;
    fs::write(dir.join("table.txt"), report.table())?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Training and validation loss curves.
pub fn write_loss_plot(path: &Path, title: &str, history: &History) -> Result<()> {
    let svg = line_plot(
        title,
        "epoch",
        &[Series::indexed("train", &history.train_loss), Series::indexed("validation", &history.val_loss)],
        true,
    )?;
    fs::write(path, svg)?;
    Ok(())
}

/// Maximum greedy estimator against basis size.
pub fn write_greedy_plot(path: &Path, off: &Offline) -> Result<()> {
    let svg = line_plot("greedy estimator", "N", &[Series::indexed("max eta", &off.greedy_trace.max_estimators())], true)?;
    fs::write(path, svg)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    MeanRelL2,
    P95RelL2,
    MeanRelResidual,
}

/// Upper limit on one statistic of one method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub method: Method,
    pub stat: Stat,
    pub limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub gate: Gate,
    /// `None` when the method was not evaluated.
    pub value: Option<f64>,
    pub pass: bool,
}

/// Benchmark gates of an example.
pub fn gates(example: u8) -> Vec<Gate> {
    let g = |method, stat, limit| Gate { method, stat, limit };
    match example {
        1 => vec![
            g(Method::RbGalerkin, Stat::MeanRelL2, 1e-5),
            g(Method::RbGalerkin, Stat::MeanRelResidual, 1e-12),
            g(Method::RbDeeponet, Stat::MeanRelL2, 2e-2),
            g(Method::RbDeeponet, Stat::P95RelL2, 5e-2),
            g(Method::PodDeeponet, Stat::MeanRelL2, 2e-2),
        ],
        2 => vec![g(Method::RbGalerkin, Stat::MeanRelL2, 1e-2), g(Method::RbDeeponet, Stat::MeanRelL2, 5e-2)],
        _ => vec![g(Method::RbGalerkin, Stat::MeanRelL2, 5e-3), g(Method::RbDeeponet, Stat::MeanRelL2, 8e-2)],
    }
}

pub fn check_gates(report: &MetricsReport) -> Vec<GateResult> {
    gates(report.example)
        .into_iter()
        .map(|gate| {
            let value = report.method(gate.method).map(|m| match gate.stat {
                Stat::MeanRelL2 => m.rel_l2.mean,
                Stat::P95RelL2 => m.rel_l2.p95,
                Stat::MeanRelResidual => m.rel_residual.mean,
            });
            GateResult { gate, value, pass: value.is_some_and(|v| v <= gate.limit) }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{MethodMetrics, MetricTriple, FOOTNOTE};
    use crate::harness::pipeline::run_offline;

    #[test]
    fn report_files_round_trip() {
        let mut cfg = ExampleConfig::example(1);
        cfg.mesh_h = 0.1;
        cfg.n_train = 20;
        cfg.n_val = 5;
        cfg.greedy_training = 20;
        cfg.pod_snapshots = 20;
        let off = run_offline(&cfg).unwrap();
        let m = RunManifest::new(&off, 3, 11).with_training("rb_deeponet", &TrainConfig::default(), 42);
        let r = MetricsReport {
            example: 1,
            test_size: 3,
            seed: 11,
            methods: vec![MethodMetrics::new(Method::RbGalerkin, vec![MetricTriple::default(); 3])],
            footnote: FOOTNOTE.into(),
        };
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &r, &m).unwrap();
        let back: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config.seed, cfg.seed);
        assert_eq!(back.trunk_dim, 3);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(v["report"]["methods"][0]["method"], "rb_galerkin");
        assert!(fs::read_to_string(dir.path().join("table.txt")).unwrap().contains("rb_galerkin"));
        write_greedy_plot(&dir.path().join("g.svg"), &off).unwrap();
        let g = check_gates(&r);
        assert_eq!(g.len(), 5);
        assert!(g[0].pass && g[1].pass);
        assert!(g[2..].iter().all(|x| !x.pass && x.value.is_none()));
    }
}
