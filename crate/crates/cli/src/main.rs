//! `rb-operon` command-line interface.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or input,
//! 3 numerical failure, 4 a `bench --check` gate failed.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rb_operon::audit::CountingAllocator;
use rb_operon::branchnet::LossMode;
use rb_operon::datamodes::{boundary_greedy, source_greedy};
use rb_operon::geomap::RadialProfile;
use rb_operon::harness::artifact::{self, Artifact};
use rb_operon::harness::examples::*;
use rb_operon::harness::metrics::Method;
use rb_operon::harness::pipeline::{
    load_offline, load_trained, online_audit, run_eval, run_offline, run_train, save_offline, save_trained, Nets,
    Query,
};
use rb_operon::harness::plot::heatmap;
use rb_operon::harness::report::{check_gates, write_greedy_plot, write_loss_plot, write_report, RunManifest};
use rb_operon::mesh::{square_with_inclusion_mesh, tag_boundary, TriMesh};

use config::{CliError, Settings};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

#[derive(Parser)]
#[command(name = "rb-operon", version, about = "Reduced-basis trunks with label-free branch training")]
struct Cli {
    /// TOML file overriding defaults ([offline], [train], [eval] tables).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Geometry {
    Square,
    Inclusion,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrunkMethod {
    Greedy,
    Pod,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Residual,
    Supervised,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and tag a mesh.
    Mesh {
        #[arg(long, value_enum)]
        geometry: Geometry,
        /// Cells per side (square) or 1/h (inclusion).
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = EX1_RADIUS)]
        r0: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble the affine blocks of an example and dump them as coordinate text.
    Assemble {
        #[arg(long)]
        example: u8,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline stage: trunk(s) and training data.
    RbBuild {
        #[arg(long)]
        example: u8,
        #[arg(long, value_enum, default_value = "greedy")]
        method: TrunkMethod,
        #[arg(long)]
        tol: Option<f64>,
        /// Training parameters searched by the trunk builder.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Trunk dimension.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Example 2 source and boundary modes.
    Modes {
        #[arg(long, default_value_t = 2)]
        example: u8,
        #[arg(long)]
        snapshots: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Example 3 empirical interpolation of the pulled-back tensor.
    EimBuild {
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        training: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a branch network.
    Train {
        #[arg(long)]
        example: u8,
        #[arg(long, value_enum, default_value = "residual")]
        loss: Loss,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Offline artifact; built from the configuration when absent.
        #[arg(long)]
        offline: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare methods on fresh test parameters.
    Eval {
        #[arg(long)]
        offline: PathBuf,
        #[arg(long)]
        rb_net: Option<PathBuf>,
        #[arg(long)]
        pod_net: Option<PathBuf>,
        #[arg(long)]
        test_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the online path and count its allocations.
    Audit {
        #[arg(long)]
        offline: PathBuf,
        #[arg(long)]
        net: PathBuf,
        #[arg(long, default_value_t = 200)]
        queries: usize,
    },
    /// Full pipeline for one example.
    Bench {
        #[arg(long)]
        example: u8,
        /// Exit with code 4 when a gate fails.
        #[arg(long)]
        check: bool,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Settings::load(cli.config.as_deref()).and_then(|s| {
        s.install_threads()?;
        run(cli.command, &s)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn mode_of(l: Loss) -> LossMode {
    match l {
        Loss::Residual => LossMode::Residual,
        Loss::Supervised => LossMode::Supervised,
    }
}

fn run(cmd: Command, s: &Settings) -> Result<(), CliError> {
    match cmd {
        Command::Mesh { geometry, n, r0, out } => {
            if n == 0 {
                return Err(CliError::Config("--n must be positive".into()));
            }
            let m = match geometry {
                Geometry::Square => example2_mesh(n)?,
                Geometry::Inclusion => tag_boundary(&square_with_inclusion_mesh(r0, 1.0 / n as f64)?, &example1_rule())?,
            };
            m.write(&out)?;
            println!("{} nodes, {} triangles, {} boundary edges", m.n_nodes(), m.n_triangles(), m.boundary_edges.len());
        }
        Command::Assemble { example, mesh, out } => assemble(s, example, &mesh, &out)?,
        Command::RbBuild { example, method, tol, samples, seed, n, out } => {
            let mut cfg = s.offline(example)?;
            if let Some(t) = tol {
                cfg.trunk_tol = t;
            }
            if let Some(x) = seed {
                cfg.seed = x;
            }
            if let Some(n) = n {
                cfg.n = n;
                cfg.trunk_cap = cfg.trunk_cap.max(n);
            }
            cfg.pod = matches!(method, TrunkMethod::Pod);
            if let Some(k) = samples {
                cfg.n_train = cfg.n_train.max(k);
                match method {
                    TrunkMethod::Greedy => cfg.greedy_training = k,
                    TrunkMethod::Pod => cfg.pod_snapshots = k,
                }
            }
            let off = run_offline(&cfg)?;
            save_offline(&off, &out)?;
            println!("N0 = {}, N = {}, measured {:?}", off.model.n0(), off.greedy.dim(), off.dims);
        }
        Command::Modes { example, snapshots, tol, seed, out } => {
            if example != 2 {
                return Err(CliError::Config("data modes exist for example 2 only".into()));
            }
            let cfg = s.offline(2)?;
            let n = snapshots.unwrap_or(cfg.n_train);
            let tol = tol.unwrap_or(cfg.mode_tol);
            let seed = seed.unwrap_or(cfg.seed);
            let mesh = example2_mesh(cfg.cells)?;
            let model = example2_model(&mesh)?;
            let data: Vec<_> =
                example2_samples(n, seed).iter().map(|x| example2_data(&mesh, &model, x)).collect::<Result<_, _>>()?;
            let bm = boundary_greedy(&model, data.iter().map(|d| d.dirichlet.clone()).collect(), tol, cfg.r_g_cap, seed ^ 0xb0)?;
            let loads: Vec<Vec<f64>> = data.iter().map(|d| d.load.clone()).collect();
            let sm = source_greedy(&model, &loads, tol, cfg.r_f_cap, seed ^ 0x50)?;
            let mut art = Artifact::new("modes");
            art.set_meta("snapshots", &n)?;
            art.set_meta("tolerance", &tol)?;
            art.set_meta("seed", &seed)?;
            artifact::put_boundary_modes(&mut art, &bm)?;
            artifact::put_source_modes(&mut art, &sm)?;
            art.save(&out)?;
            println!(
                "r_g = {} (at tol: {:?}), r_f = {} (at tol: {:?})",
                bm.modes.ncols(),
                bm.trace.rank_at(tol),
                sm.modes.ncols(),
                sm.trace.rank_at(tol)
            );
        }
        Command::EimBuild { q, training, out } => {
            let cfg = s.offline(3)?;
            let mesh = example1_mesh(cfg.mesh_h)?;
            let map = example3_map(RadialProfile::LinearRadius)?;
            let sur = example3_surrogate(&mesh, &map, q.unwrap_or(cfg.eim_q), training.unwrap_or(cfg.eim_training))?;
            let mut art = Artifact::new("eim");
            artifact::put_surrogate(&mut art, &sur)?;
            art.save(&out)?;
            for (i, e) in sur.trace.iter().enumerate() {
                println!("Q = {:>2}  max error {e:.3e}", i + 1);
            }
        }
        Command::Train { example, loss, epochs, batch, seed, offline, out } => {
            let off = match &offline {
                Some(p) => load_offline(p)?,
                None => run_offline(&s.offline(example)?)?,
            };
            if off.config.example != example {
                return Err(CliError::Config(format!("offline artifact is for example {}", off.config.example)));
            }
            let mut tc = s.train.clone();
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            if let Some(b) = batch {
                tc.batch = b;
            }
            if let Some(x) = seed {
                tc.seed = x;
            }
            let t = run_train(&off, mode_of(loss), &tc, None)?;
            save_trained(&t, &out, offline.as_deref())?;
            write_loss_plot(&out.join("loss.svg"), "training loss", &t.history)?;
            println!(
                "{} parameters, {} epochs in {:.1}s, best validation loss {:.3e}",
                t.net.mlp.param_count(),
                t.history.train_loss.len(),
                t.seconds,
                t.history.val_loss.iter().cloned().fold(f64::INFINITY, f64::min)
            );
        }
        Command::Eval { offline, rb_net, pod_net, test_size, seed, out } => {
            let off = load_offline(&offline)?;
            let rb = rb_net.as_deref().map(load_trained).transpose()?;
            let pod = pod_net.as_deref().map(load_trained).transpose()?;
            let n = test_size.unwrap_or(s.eval.test_size);
            let seed = seed.unwrap_or(s.eval.seed);
            let nets = Nets { rb: rb.as_ref().map(|x| &x.0), pod: pod.as_ref().map(|x| &x.0) };
            let (report, _) = run_eval(&off, &nets, n, seed)?;
            let mut manifest = RunManifest::new(&off, n, seed);
            if let Some((net, ..)) = &rb {
                manifest.param_counts.insert(Method::RbDeeponet.label().into(), net.mlp.param_count());
            }
            if let Some((net, ..)) = &pod {
                manifest.param_counts.insert(Method::PodDeeponet.label().into(), net.mlp.param_count());
            }
            write_report(&out, &report, &manifest)?;
            print!("{}", report.table());
        }
        Command::Audit { offline, net, queries } => {
            let off = load_offline(&offline)?;
            let (net, ..) = load_trained(&net)?;
            let qs: Vec<Query> =
                off.raw_samples(queries, s.eval.seed)?.iter().map(|r| off.query(r)).collect::<Result<_, _>>()?;
            let a = online_audit(&off, &net, &qs, 5)?;
            println!(
                "N0 = {}, N = {}: {:.3e} s/query, {} allocations, largest {} B (N0 vector: {} B)",
                a.n0, a.n, a.seconds_per_query, a.allocations.count, a.allocations.largest, a.n0_bytes
            );
        }
        Command::Bench { example, check, out } => bench(s, example, check, &out)?,
    }
    Ok(())
}

fn assemble(s: &Settings, example: u8, mesh_path: &Path, out: &Path) -> Result<(), CliError> {
    let mesh = TriMesh::read(mesh_path)?;
    let model = match example {
        1 => example1_model(&mesh)?,
        2 => example2_model(&mesh)?,
        3 => {
            let cfg = s.offline(3)?;
            let map = example3_map(RadialProfile::LinearRadius)?;
            example3_model(&mesh, std::sync::Arc::new(example3_surrogate(&mesh, &map, cfg.eim_q, cfg.eim_training)?))?
        }
        _ => return Err(CliError::Config("example must be 1, 2 or 3".into())),
    };
    fs::create_dir_all(out)?;
    let q_a = model.theta_a(model.reference()).len();
    for p in 0..q_a {
        fs::write(out.join(format!("a_ii_{p:03}.coo")), model.term_ii(p).to_coordinate_text())?;
        fs::write(out.join(format!("a_ib_{p:03}.coo")), model.term_ib(p).to_coordinate_text())?;
    }
    for (q, f) in model.load_terms().iter().enumerate() {
        let mut t = format!("len {}\n", f.len());
        for v in f {
            t.push_str(&format!("{v:.17e}\n"));
        }
        fs::write(out.join(format!("f_{q:04}.txt")), t)?;
    }
    fs::write(out.join("star_ii.coo"), model.star_ii().to_coordinate_text())?;
    fs::write(out.join("mass_ii.coo"), model.mass_ii().to_coordinate_text())?;
    let mut art = Artifact::new("assembly");
    art.set_meta("example", &example)?;
    art.set_meta("n0", &model.n0())?;
    art.set_meta("q_a", &q_a)?;
    art.set_meta("q_f", &model.load_terms().len())?;
    art.set_meta("interior", &model.dofs.interior)?;
    art.set_meta("dirichlet", &model.dofs.dirichlet)?;
    art.save(out)?;
    println!("N0 = {}, {} operator terms, {} load terms", model.n0(), q_a, model.load_terms().len());
    Ok(())
}

fn bench(s: &Settings, example: u8, check: bool, out: &Path) -> Result<(), CliError> {
    let dir = out.join(format!("example{example}"));
    let cfg = s.offline(example)?;
    let off = run_offline(&cfg)?;
    save_offline(&off, &dir.join("offline"))?;
    write_greedy_plot(&dir.join("greedy.svg"), &off)?;
    let rb = run_train(&off, LossMode::Residual, &s.train, None)?;
    save_trained(&rb, &dir.join("rb_net"), None)?;
    write_loss_plot(&dir.join("rb_loss.svg"), "RB-DeepONet loss", &rb.history)?;
    let pod = if off.pod.is_some() {
        let t = run_train(&off, LossMode::Supervised, &s.train, None)?;
        save_trained(&t, &dir.join("pod_net"), None)?;
        write_loss_plot(&dir.join("pod_loss.svg"), "POD-DeepONet loss", &t.history)?;
        Some(t)
    } else {
        None
    };
    let nets = Nets { rb: Some(&rb.net), pod: pod.as_ref().map(|t| &t.net) };
    let (report, samples) = run_eval(&off, &nets, s.eval.test_size, s.eval.seed)?;
    let mut manifest = RunManifest::new(&off, s.eval.test_size, s.eval.seed)
        .with_training(Method::RbDeeponet.label(), &rb.config, rb.net.mlp.param_count());
    if let Some(t) = &pod {
        manifest = manifest.with_training(Method::PodDeeponet.label(), &t.config, t.net.mlp.param_count());
    }
    write_report(&dir, &report, &manifest)?;
    if let (Some(first), true) = (samples.first(), s.eval.plots) {
        let c = first.c_rb_net.as_deref().unwrap_or(&first.c_galerkin);
        let mut u = vec![0.0; off.mesh.n_nodes()];
        for (i, v) in off.model.dofs.interior.iter().zip(off.greedy.reconstruct(c)) {
            u[*i] = v;
        }
        fs::write(dir.join("field.svg"), heatmap("predicted interior field", &off.mesh, &u)?)?;
    }
    print!("{}", report.table());
    let gates = check_gates(&report);
    let mut ok = true;
    for g in &gates {
        ok &= g.pass;
        println!(
            "{} {} {:?} = {} (limit {:.1e})",
            if g.pass { "PASS" } else { "FAIL" },
            g.gate.method.label(),
            g.gate.stat,
            g.value.map_or("n/a".into(), |v| format!("{v:.3e}")),
            g.gate.limit
        );
    }
    if check && !ok {
        return Err(CliError::Gate);
    }
    Ok(())
}
