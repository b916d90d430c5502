//! Command-line pipeline: mesh, dataset, bases, training, ROM solves,
//! evaluation grids and benchmarks, all driven by one JSON configuration.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{runtime_benchmark, Appendix, EvalReport, ModelKind, Obtained};
use crate::fem::{FemModel, LoadParams};
use crate::manifold::Bundle;
use crate::pod::{build_bases, compute_svd};
use crate::rom::{rom_solve, write_trace};
use crate::snapshots::{generate_dataset, DatasetSplit, SnapshotSet};
use crate::training::LossMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "romforge", version, about = "Physics-informed training of PROM-ANN reduced-order models")]
pub struct Cli {
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 1 gives bitwise reproducible outputs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, overriding the configuration and ROMFORGE_OUT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Qloss,
    Sloss,
    Rloss,
}

impl From<TrainMode> for LossMode {
    fn from(m: TrainMode) -> Self {
        match m {
            TrainMode::Qloss => LossMode::QLoss,
            TrainMode::Sloss => LossMode::SLoss,
            TrainMode::Rloss => LossMode::RLoss,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the cantilever mesh listing.
    Mesh,
    /// Solve the full-order model on every sampled load.
    Generate {
        #[arg(long)]
        force: bool,
    },
    /// SVD of the training snapshots and the POD bases of `pod.n`, `pod.n_bar`.
    Svd {
        #[arg(long)]
        force: bool,
    },
    /// Train one network of sizes `pod.n`, `pod.n_bar`.
    Train {
        #[arg(long, value_enum)]
        mode: TrainMode,
        /// Bundle to fine-tune; required by rloss.
        #[arg(long, required_if_eq("mode", "rloss"))]
        from: Option<PathBuf>,
        /// Overrides the epoch count of the chosen regime.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Online ROM solve at one load.
    Rom {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, num_args = 2, value_names = ["PX", "PY"], allow_negative_numbers = true)]
        load: Vec<f64>,
    },
    /// Evaluation grid, optionally with sub-grids.
    Eval {
        /// Comma-separated sub-grids: a (reduced dataset), b (extrapolation), c (hyperparameters).
        #[arg(long, value_delimiter = ',')]
        appendix: Vec<char>,
        /// Retrain networks that already have a bundle.
        #[arg(long)]
        force: bool,
        /// Skip networks without a bundle instead of training them.
        #[arg(long)]
        no_train: bool,
    },
    /// Batch training and linear solve timings.
    Bench,
    /// Print the effective configuration.
    Config {
        /// Print the built-in defaults instead.
        #[arg(long)]
        dump_defaults: bool,
    },
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_convergence_failure() || matches!(err, Error::NonFiniteLoss { .. }) {
        return EXIT_CONVERGENCE;
    }
    match err {
        Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Format(_) | Error::AlreadyExists(_) | Error::HashMismatch { .. } => {
            EXIT_IO
        }
        _ => EXIT_CONFIG,
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::config("--threads", e.to_string()))?;
    }
    if let Command::Config { dump_defaults: true } = cli.command {
        println!("{}", RunConfig::defaults_json());
        return Ok(());
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.resolved_output_dir());
    match &cli.command {
        Command::Config { .. } => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
        Command::Mesh => cmd_mesh(&cfg, &out),
        Command::Generate { force } => cmd_generate(&cfg, &out, *force),
        Command::Svd { force } => cmd_svd(&cfg, &out, *force),
        Command::Train {
            mode,
            from,
            epochs,
            force,
        } => cmd_train(&cfg, &out, (*mode).into(), from.as_deref(), *epochs, *force),
        Command::Rom { bundle, load } => cmd_rom(&cfg, &out, bundle, LoadParams::new(load[0], load[1])),
        Command::Eval {
            appendix,
            force,
            no_train,
        } => {
            let appendices = appendix.iter().map(|&c| Appendix::from_letter(c)).collect::<Result<Vec<_>>>()?;
            cmd_eval(&cfg, &out, &appendices, *force, *no_train)
        }
        Command::Bench => cmd_bench(&cfg, &out),
    }
}

pub fn cmd_mesh(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mesh = cfg.fem.mesh()?;
    let dir = out.join("mesh");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("mesh.txt");
    mesh.write_listing(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    println!("{} nodes, {} triangles -> {}", mesh.node_count(), mesh.triangles.len(), path.display());
    Ok(())
}

const SETS: [&str; 4] = ["train", "validation", "test", "extrapolation"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_hash: String,
    pub counts: Vec<(String, usize)>,
    pub failures: Vec<FailureRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRecord {
    pub set: String,
    pub index: usize,
    pub px: f64,
    pub py: f64,
    pub error: String,
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let dir = out.join("data");
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() && !force {
        return Err(Error::AlreadyExists(dir));
    }
    std::fs::create_dir_all(&dir)?;
    let model = cfg.fem.build()?;
    let [train, validation, test] = cfg.sampling.split_params();
    let params = [train, validation, test, cfg.sampling.extrapolation_params()];
    let mut manifest = DatasetManifest {
        dataset_hash: cfg.dataset_hash(),
        counts: Vec::new(),
        failures: Vec::new(),
    };
    for (name, p) in SETS.iter().zip(&params) {
        let t0 = std::time::Instant::now();
        let generated = generate_dataset(&model, p, cfg.sampling.mu_res, &cfg.newton)?;
        generated.set.save(dir.join(format!("{name}.romf")))?;
        generated.set.write_params_csv(dir.join(format!("{name}_params.csv")))?;
        println!(
            "{name}: {} of {} solves in {:.1} s",
            generated.set.len(),
            p.len(),
            t0.elapsed().as_secs_f64()
        );
        manifest.counts.push((name.to_string(), generated.set.len()));
        manifest.failures.extend(generated.failures.iter().map(|f| FailureRecord {
            set: name.to_string(),
            index: f.index,
            px: f.load.px,
            py: f.load.py,
            error: f.error.to_string(),
        }));
    }
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Datasets written by `generate`, checked against the configuration.
pub struct LoadedData {
    pub split: DatasetSplit,
    pub extrapolation: SnapshotSet,
}

pub fn load_data(cfg: &RunConfig, out: &Path) -> Result<LoadedData> {
    let dir = out.join("data");
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let expected = cfg.dataset_hash();
    if manifest.dataset_hash != expected {
        return Err(Error::HashMismatch {
            artifact: dir.display().to_string(),
            recorded: manifest.dataset_hash,
            expected,
        });
    }
    let load = |name: &str| SnapshotSet::load(dir.join(format!("{name}.romf")));
    Ok(LoadedData {
        split: DatasetSplit {
            train: load("train")?,
            validation: load("validation")?,
            test: load("test")?,
        },
        extrapolation: load("extrapolation")?,
    })
}

pub fn cmd_svd(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let dir = out.join("pod");
    let bases_path = dir.join("bases.romb");
    if bases_path.exists() && !force {
        return Err(Error::AlreadyExists(bases_path));
    }
    let data = load_data(cfg, out)?;
    let model = cfg.fem.build()?;
    let train = &data.split.train;
    let svd = compute_svd(&train.u_star)?;
    std::fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("singular_values.csv"))?;
    w.write_record(["index", "sigma", "xi"])?;
    let m = train.len() as f64;
    for (i, s) in svd.sigma.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string(), (s / m.sqrt()).to_string()])?;
    }
    w.flush()?;
    let mut bases = build_bases(&svd, cfg.pod.n, cfg.pod.n_bar, train.len())?;
    bases.fill_pod_errors(&model, train)?;
    bases.save(&bases_path)?;
    println!(
        "{} singular values; n = {}, n_bar = {}, e_POD,d = {:.3e}, e_POD,R = {:.3e}",
        svd.sigma.len(),
        cfg.pod.n,
        cfg.pod.n_bar,
        bases.e_pod_d,
        bases.e_pod_r
    );
    Ok(())
}

fn bundle_dir(out: &Path) -> PathBuf {
    out.join("bundles")
}

pub fn cmd_train(
    cfg: &RunConfig,
    out: &Path,
    mode: LossMode,
    from: Option<&Path>,
    epochs: Option<usize>,
    force: bool,
) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(e) = epochs {
        match mode {
            LossMode::QLoss => cfg.training.q_loss.epochs = e,
            LossMode::SLoss => cfg.training.s_loss.epochs = e,
            LossMode::RLoss => cfg.training.r_loss.epochs = e,
        }
    }
    let data = load_data(&cfg, out)?;
    let model = cfg.fem.build()?;
    let grid = cfg.grid();
    let (n, n_bar) = (cfg.pod.n, cfg.pod.n_bar);
    let m = data.split.train.len();
    let mut exp = cfg.experiment(&model, &data.split, None, Some(bundle_dir(out)));
    let kind = match mode {
        LossMode::QLoss => ModelKind::QLoss,
        LossMode::SLoss => ModelKind::SLoss,
        LossMode::RLoss => ModelKind::RLoss,
    };
    let target = bundle_dir(out).join(exp.bundle_key(kind, n, n_bar, &grid.net, m));
    if target.join("manifest.json").exists() && !force {
        return Err(Error::AlreadyExists(target));
    }
    let trained = match mode {
        LossMode::RLoss => {
            let from = from.ok_or(Error::ColdResidualStart)?;
            let parent = Bundle::load(from)?;
            if parent.manifest.dataset_hash != cfg.dataset_hash() {
                return Err(Error::HashMismatch {
                    artifact: from.display().to_string(),
                    recorded: parent.manifest.dataset_hash,
                    expected: cfg.dataset_hash(),
                });
            }
            let parent = Obtained {
                manifold: parent.manifold,
                key: from.display().to_string(),
                lineage: parent.manifest.lineage,
                bundle_path: Some(from.to_path_buf()),
            };
            exp.fine_tune(n, n_bar, &grid.net, m, parent)?
        }
        _ => {
            if from.is_some() {
                return Err(Error::config("--from", "only residual fine-tuning starts from a bundle"));
            }
            exp.retrain(kind, n, n_bar, &grid.net, m)?
        }
    };
    println!("bundle {}", target.display());
    println!("lineage {}", trained.lineage.join(" -> "));
    Ok(())
}

pub fn cmd_rom(cfg: &RunConfig, out: &Path, bundle: &Path, load: LoadParams) -> Result<()> {
    let b = Bundle::load(bundle)?;
    if b.manifest.dataset_hash != cfg.dataset_hash() {
        return Err(Error::HashMismatch {
            artifact: bundle.display().to_string(),
            recorded: b.manifest.dataset_hash,
            expected: cfg.dataset_hash(),
        });
    }
    let model = cfg.fem.build()?;
    let dir = out.join("rom");
    std::fs::create_dir_all(&dir)?;
    let trace_path = dir.join("trace.csv");
    let sol = match rom_solve(&b.manifold, &model, &load, &cfg.rom) {
        Ok(s) => s,
        Err(e) => {
            if let Error::RomNonConvergence { trace, .. } = &e {
                write_trace(&trace_path, trace)?;
            }
            return Err(e);
        }
    };
    write_trace(&trace_path, &sol.trace)?;
    let u_path = dir.join("u.csv");
    write_nodal_csv(&model, &sol.u, &u_path)?;
    println!(
        "iterations per step {:?}; u -> {}, trace -> {}",
        sol.iterations,
        u_path.display(),
        trace_path.display()
    );
    if let Ok(data) = load_data(cfg, out) {
        let test = &data.split.test;
        if let Some(j) = test.params.iter().position(|p| same_load(p, &load)) {
            let truth = test.u_star.column(j);
            println!("e_u {:.6e} (test sample {j})", (&sol.u - truth).norm() / truth.norm());
        }
    }
    Ok(())
}

fn same_load(a: &LoadParams, b: &LoadParams) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0);
    close(a.px, b.px) && close(a.py, b.py)
}

/// `node,x,y,ux,uy` with the clamped nodes included as zeros.
pub fn write_nodal_csv(model: &FemModel, u: &nalgebra::DVector<f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "x", "y", "ux", "uy"])?;
    let coords = &model.mesh().node_coordinates;
    for (i, d) in model.nodal_displacements(u).iter().enumerate() {
        w.write_record([
            i.to_string(),
            coords[i][0].to_string(),
            coords[i][1].to_string(),
            d[0].to_string(),
            d[1].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, appendices: &[Appendix], force: bool, no_train: bool) -> Result<()> {
    let data = load_data(cfg, out)?;
    let model = cfg.fem.build()?;
    let mut ctx = cfg
        .experiment(&model, &data.split, Some(&data.extrapolation), Some(bundle_dir(out)))
        .into_context();
    ctx.train_missing = !no_train;
    ctx.retrain = force;
    let mut exp = crate::eval::Experiment::new(ctx);
    let reports = exp.run_all(&cfg.grid(), appendices)?;
    let written = reports.write(out.join("eval"))?;
    print_report(&reports.main);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("{:<6} {:>3} {:>4} {:<15} {:>11} {:>11} {:>9}", "model", "n", "nbar", "mode", "e_u", "e_R", "mean_iter");
    for r in &report.rows {
        println!(
            "{:<6} {:>3} {:>4} {:<15} {:>11.3e} {:>11.3e} {:>9.2}",
            r.model, r.n, r.nbar, r.mode, r.e_u, r.e_r, r.mean_iter
        );
    }
}

pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg, out)?;
    let model = cfg.fem.build()?;
    let mut exp = cfg.experiment(&model, &data.split, None, Some(bundle_dir(out)));
    let report = runtime_benchmark(&mut exp, &cfg.grid(), &cfg.bench, &cfg.newton)?;
    for r in &report.training {
        println!("{:<20} {:>12.3e} s/batch over {} batches", r.loss_type, r.mean_batch_secs, r.batches);
    }
    for r in &report.solves {
        let q = r.q_size.map_or("-".to_string(), |q| q.to_string());
        let e = r.e_u.map_or("-".to_string(), |e| format!("{e:.3e}"));
        println!(
            "{:<9} q={:<3} e_u={:<10} {:>12.3e} s/solve over {} solves",
            r.model, q, e, r.system_solve_secs, r.system_solves
        );
    }
    for p in report.write(out.join("bench"))? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
