mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{RunConfig, SweepConfig};
use hope_core::head::grad_check_composite;
use hope_core::head::HopeConfig;
use hope_core::synth::{generate, split, DatasetSpec, SyntheticDataset};
use hope_core::train::{
    bench_scaling, evaluate, routing_diagnostics, scaling_ratios, sweep, train, BenchConfig,
    HeadKind, Model, TrainOutcome, Variant,
};
use hope_core::{HopeError, Real};
use serde::Serialize;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hope",
    about = "Train, benchmark, and inspect the prototype-routed mixture-of-experts projection head",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset file from a spec
    GenData {
        /// Dataset spec (JSON, strict schema)
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset path (HGSB format)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one head per seed and write reports, checkpoints, and a summary
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long, default_value_t = 0.6)]
        train_frac: f64,
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
    /// Train every ablation variant on identical seeds and tabulate them
    Ablate(TrainArgs),
    /// Grid-sweep one hyperparameter, one full training run per value/seed
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
    /// Run the full gradient-check suite at 64-bit
    GradCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Corrupt one backward rule as a negative control; the suite must
        /// then fail
        #[arg(long, hide = true)]
        inject_fault: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure forward+backward wall-clock scaling over batch size
    Bench {
        /// Bench config (JSON, strict schema); defaults used when absent
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump routing behavior of a checkpoint on a dataset as JSON
    InspectRouting {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitName,
        #[arg(long, default_value_t = 0.6)]
        train_frac: f64,
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (JSON, strict schema)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's out_dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed list (repeatable)
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: msg.into(),
        }
    }
}

impl From<HopeError> for Failure {
    fn from(e: HopeError) -> Self {
        let code = match &e {
            HopeError::Diverged { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.cmd {
        Cmd::GenData { spec, out } => cmd_gen_data(&spec, &out),
        Cmd::Train(args) => match args.precision {
            Precision::F32 => cmd_train::<f32>(&args),
            Precision::F64 => cmd_train::<f64>(&args),
        },
        Cmd::Eval {
            checkpoint,
            dataset,
            split,
            train_frac,
            val_frac,
            out,
            precision,
        } => match precision {
            Precision::F32 => {
                cmd_eval::<f32>(&checkpoint, &dataset, split, train_frac, val_frac, out.as_deref())
            }
            Precision::F64 => {
                cmd_eval::<f64>(&checkpoint, &dataset, split, train_frac, val_frac, out.as_deref())
            }
        },
        Cmd::Ablate(args) => match args.precision {
            Precision::F32 => cmd_ablate::<f32>(&args),
            Precision::F64 => cmd_ablate::<f64>(&args),
        },
        Cmd::Sweep {
            config,
            out,
            precision,
        } => match precision {
            Precision::F32 => cmd_sweep::<f32>(&config, out.as_deref()),
            Precision::F64 => cmd_sweep::<f64>(&config, out.as_deref()),
        },
        Cmd::GradCheck {
            seed,
            inject_fault,
            out,
        } => cmd_grad_check(seed, inject_fault, out.as_deref()),
        Cmd::Bench { config, out } => cmd_bench(config.as_deref(), out.as_deref()),
        Cmd::InspectRouting {
            checkpoint,
            dataset,
            split,
            train_frac,
            val_frac,
            out,
            precision,
        } => match precision {
            Precision::F32 => {
                cmd_inspect::<f32>(&checkpoint, &dataset, split, train_frac, val_frac, out.as_deref())
            }
            Precision::F64 => {
                cmd_inspect::<f64>(&checkpoint, &dataset, split, train_frac, val_frac, out.as_deref())
            }
        },
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::input(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn split_indices<T: Real>(
    ds: &SyntheticDataset<T>,
    which: SplitName,
    train_frac: f64,
    val_frac: f64,
) -> Result<Vec<usize>, Failure> {
    Ok(match which {
        SplitName::All => (0..ds.spec.nodes).collect(),
        _ => {
            let s = split(ds, train_frac, val_frac, ds.spec.seed)?;
            match which {
                SplitName::Train => s.train,
                SplitName::Val => s.val,
                SplitName::Test => s.test,
                SplitName::All => unreachable!(),
            }
        }
    })
}

// ── gen-data ─────────────────────────────────────────────────────────

fn cmd_gen_data(spec_path: &Path, out: &Path) -> Result<ExitCode, Failure> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| Failure::input(format!("{}: {e}", spec_path.display())))?;
    let spec: DatasetSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::input(format!("{}: {e}", spec_path.display())))?;
    let ds = generate::<f32>(&spec)?;
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(out).map_err(|e| Failure::input(format!("{}: {e}", out.display())))?,
    );
    hope_core::io::write_dataset(&mut file, &ds)?;
    file.flush().map_err(HopeError::from)?;
    println!(
        "wrote {}: N={} M={} d={} classes={} cluster sizes {:?}",
        out.display(),
        spec.nodes,
        spec.views,
        spec.dim,
        spec.num_classes,
        ds.cluster_sizes
    );
    Ok(ExitCode::SUCCESS)
}

// ── train ────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    val_acc: f64,
    test_acc: f64,
    val_macro_f1: f64,
    test_macro_f1: f64,
    tail_head_gap: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    head_kind: HeadKind,
    variant: Variant,
    epochs: usize,
    per_seed: Vec<SeedResult>,
    mean_val_acc: f64,
    std_val_acc: f64,
    mean_test_acc: f64,
    std_test_acc: f64,
}

fn load_run_config(args: &TrainArgs) -> Result<(RunConfig, PathBuf, Vec<u64>), Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    let out_dir = cfg.out_dir.clone().ok_or_else(|| {
        Failure::input("no output directory: set out_dir in the config or pass --out")
    })?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::input(format!("{}: {e}", out_dir.display())))?;
    let seeds = if args.seed.is_empty() {
        cfg.seeds.clone()
    } else {
        args.seed.clone()
    };
    if seeds.is_empty() {
        return Err(Failure::input("no seeds given"));
    }
    Ok((cfg, out_dir, seeds))
}

fn run_one_seed<T: Real>(
    run: &RunConfig,
    ds: &SyntheticDataset<T>,
    seed: u64,
    variant: Variant,
) -> Result<(TrainOutcome<T>, HopeConfig), Failure> {
    let head_cfg = run.head_config(&ds.spec, seed);
    let outcome = train(run.head_kind, variant, ds, &head_cfg, &run.train_settings())?;
    Ok((outcome, head_cfg))
}

fn cmd_train<T: Real>(args: &TrainArgs) -> Result<ExitCode, Failure> {
    let (run, out_dir, seeds) = load_run_config(args)?;
    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let ds: SyntheticDataset<T> = run.dataset(&config_dir)?;

    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let (outcome, head_cfg) = run_one_seed(&run, &ds, seed, run.variant)?;

        let report_path = out_dir.join(format!("report_seed{seed}.jsonl"));
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(&report_path).map_err(HopeError::from)?);
        outcome.report.write_jsonl(&mut w)?;
        w.flush().map_err(HopeError::from)?;

        let ckpt_path = out_dir.join(format!("checkpoint_seed{seed}.hope"));
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(&ckpt_path).map_err(HopeError::from)?);
        hope_core::io::write_checkpoint(&mut w, &outcome.model, &head_cfg)?;
        w.flush().map_err(HopeError::from)?;

        let s = &outcome.report.summary;
        println!(
            "seed {seed}: val acc {:.4}, test acc {:.4} -> {}",
            s.final_val.accuracy,
            s.final_test.accuracy,
            report_path.display()
        );
        per_seed.push(SeedResult {
            seed,
            val_acc: s.final_val.accuracy,
            test_acc: s.final_test.accuracy,
            val_macro_f1: s.final_val.macro_f1,
            test_macro_f1: s.final_test.macro_f1,
            tail_head_gap: s.final_test.tail_head_gap,
        });
    }

    let (mean_val, std_val) = mean_std(&per_seed.iter().map(|r| r.val_acc).collect::<Vec<_>>());
    let (mean_test, std_test) = mean_std(&per_seed.iter().map(|r| r.test_acc).collect::<Vec<_>>());
    let summary = TrainSummary {
        head_kind: run.head_kind,
        variant: run.variant,
        epochs: run.epochs,
        per_seed,
        mean_val_acc: mean_val,
        std_val_acc: std_val,
        mean_test_acc: mean_test,
        std_test_acc: std_test,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    println!(
        "{} seeds: val acc {:.4} +/- {:.4}, test acc {:.4} +/- {:.4}",
        summary.per_seed.len(),
        mean_val,
        std_val,
        mean_test,
        std_test
    );
    Ok(ExitCode::SUCCESS)
}

// ── eval ─────────────────────────────────────────────────────────────

fn cmd_eval<T: Real>(
    checkpoint: &Path,
    dataset: &Path,
    which: SplitName,
    train_frac: f64,
    val_frac: f64,
    out: Option<&Path>,
) -> Result<ExitCode, Failure> {
    let mut r = std::io::BufReader::new(std::fs::File::open(checkpoint).map_err(|e| {
        Failure::input(format!("{}: {e}", checkpoint.display()))
    })?);
    let (model, _cfg): (Model<T>, _) = hope_core::io::read_checkpoint(&mut r)?;
    let mut r = std::io::BufReader::new(std::fs::File::open(dataset).map_err(|e| {
        Failure::input(format!("{}: {e}", dataset.display()))
    })?);
    let ds: SyntheticDataset<T> = hope_core::io::read_dataset(&mut r)?;
    let indices = split_indices(&ds, which, train_frac, val_frac)?;
    let metrics = evaluate(&model, &ds, &indices)?;
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| Failure::input(e.to_string()))?;
    println!("{text}");
    if let Some(path) = out {
        write_json(path, &metrics)?;
    }
    Ok(ExitCode::SUCCESS)
}

// ── ablate ───────────────────────────────────────────────────────────

#[derive(Serialize)]
struct AblateRow {
    variant: Variant,
    lambda: f64,
    mean_val_acc: f64,
    std_val_acc: f64,
    mean_test_acc: f64,
    mean_max_offdiag_cos: Option<f64>,
}

fn cmd_ablate<T: Real>(args: &TrainArgs) -> Result<ExitCode, Failure> {
    let (run, out_dir, seeds) = load_run_config(args)?;
    let config_dir = args.config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let ds: SyntheticDataset<T> = run.dataset(&config_dir)?;
    if run.head_kind != HeadKind::Hope {
        return Err(Failure::input("ablate requires head_kind = hope"));
    }

    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut val = Vec::new();
        let mut test = Vec::new();
        let mut cos = Vec::new();
        for &seed in &seeds {
            let (outcome, _) = run_one_seed(&run, &ds, seed, variant)?;
            let s = &outcome.report.summary;
            val.push(s.final_val.accuracy);
            test.push(s.final_test.accuracy);
            if let Some(c) = s.max_offdiag_cos {
                cos.push(c);
            }
        }
        let (mean_val, std_val) = mean_std(&val);
        let (mean_test, _) = mean_std(&test);
        rows.push(AblateRow {
            variant,
            lambda: match variant {
                Variant::NoOrthoLoss => 0.0,
                _ => run.head.lambda,
            },
            mean_val_acc: mean_val,
            std_val_acc: std_val,
            mean_test_acc: mean_test,
            mean_max_offdiag_cos: if cos.is_empty() {
                None
            } else {
                Some(cos.iter().sum::<f64>() / cos.len() as f64)
            },
        });
    }

    println!(
        "{:<22} {:>7} {:>12} {:>10} {:>13} {:>14}",
        "variant", "lambda", "val acc", "std", "test acc", "max |cos|"
    );
    for row in &rows {
        println!(
            "{:<22} {:>7.3} {:>12.4} {:>10.4} {:>13.4} {:>14}",
            row.variant.name(),
            row.lambda,
            row.mean_val_acc,
            row.std_val_acc,
            row.mean_test_acc,
            row.mean_max_offdiag_cos
                .map(|c| format!("{c:.4}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    write_json(&out_dir.join("ablation.json"), &rows)?;
    Ok(ExitCode::SUCCESS)
}

// ── sweep ────────────────────────────────────────────────────────────

fn cmd_sweep<T: Real>(config: &Path, out: Option<&Path>) -> Result<ExitCode, Failure> {
    let sc = SweepConfig::load(config)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| sc.run.out_dir.clone())
        .ok_or_else(|| Failure::input("no output directory: set run.out_dir or pass --out"))?;
    std::fs::create_dir_all(&out_dir).map_err(HopeError::from)?;
    let config_dir = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let ds: SyntheticDataset<T> = sc.run.dataset(&config_dir)?;
    let base_cfg = sc.run.head_config(&ds.spec, 0);
    let outcome = sweep(
        sc.param,
        &sc.values,
        &ds,
        &base_cfg,
        &sc.run.train_settings(),
        &sc.run.seeds,
    )?;

    println!("{:<10} {:>12} {:>10}", sc.param.name(), "val acc", "std");
    for e in &outcome.entries {
        println!("{:<10.4} {:>12.4} {:>10.4}", e.value, e.mean_val_acc, e.std_val_acc);
    }
    for (entry, reports) in outcome.entries.iter().zip(&outcome.reports) {
        for (report, &seed) in reports.iter().zip(&sc.run.seeds) {
            let path = out_dir.join(format!(
                "sweep_{}_{}_seed{}.jsonl",
                sc.param.name(),
                entry.value,
                seed
            ));
            let mut w =
                std::io::BufWriter::new(std::fs::File::create(&path).map_err(HopeError::from)?);
            report.write_jsonl(&mut w)?;
            w.flush().map_err(HopeError::from)?;
        }
    }
    write_json(
        &out_dir.join(format!("sweep_{}.json", sc.param.name())),
        &outcome.entries,
    )?;
    Ok(ExitCode::SUCCESS)
}

// ── grad-check ───────────────────────────────────────────────────────

#[derive(Serialize)]
struct GradCheckLine {
    op: String,
    max_rel_err: f64,
    threshold: f64,
    pass: bool,
}

fn cmd_grad_check(seed: u64, inject_fault: bool, out: Option<&Path>) -> Result<ExitCode, Failure> {
    let mut lines = Vec::new();
    for report in hope_core::diff::op_suite(seed, inject_fault)? {
        lines.push(GradCheckLine {
            op: report.name.to_string(),
            max_rel_err: report.max_rel_err,
            threshold: report.threshold,
            pass: report.passed(),
        });
    }
    // the composed head forward at the reference sizes
    let mut cfg = HopeConfig::with_dims(3, 4, 3);
    cfg.layers = 2;
    cfg.seed = seed;
    let composite = grad_check_composite(&cfg, 5, seed.wrapping_add(1))?;
    lines.push(GradCheckLine {
        op: "hope_forward".into(),
        max_rel_err: composite,
        threshold: 1e-4,
        pass: composite < 1e-4,
    });

    let mut failures = Vec::new();
    for line in &lines {
        println!(
            "{:<14} max rel err {:>12.3e}  threshold {:>8.0e}  {}",
            line.op,
            line.max_rel_err,
            line.threshold,
            if line.pass { "PASS" } else { "FAIL" }
        );
        if !line.pass {
            failures.push(line.op.clone());
        }
    }
    if let Some(path) = out {
        write_json(path, &lines)?;
    }
    if failures.is_empty() {
        println!("all {} gradient checks passed", lines.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient checks failed: {}", failures.join(", "));
        Ok(ExitCode::from(1))
    }
}

// ── bench ────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct BenchReport {
    rows: Vec<hope_core::train::BenchRow>,
    /// Consecutive-size time ratios, rounded to 3 decimal places.
    ratios: Vec<f64>,
}

fn cmd_bench(config: Option<&Path>, out: Option<&Path>) -> Result<ExitCode, Failure> {
    let cfg: BenchConfig = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?
        }
        None => BenchConfig::default(),
    };
    let rows = bench_scaling(&cfg)?;
    let ratios: Vec<f64> = scaling_ratios(&rows)
        .into_iter()
        .map(|r| (r * 1000.0).round() / 1000.0)
        .collect();
    for row in &rows {
        println!("B={:<6} median {:.3} ms", row.batch, row.median_s * 1e3);
    }
    for (w, ratio) in rows.windows(2).zip(&ratios) {
        println!("ratio {}/{} = {:.3}", w[1].batch, w[0].batch, ratio);
    }
    let report = BenchReport { rows, ratios };
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

// ── inspect-routing ──────────────────────────────────────────────────

const HISTOGRAM_BINS: usize = 20;

#[derive(Serialize)]
struct ExpertDump {
    expert: usize,
    count: usize,
    load: f64,
    histogram_counts: Vec<usize>,
}

#[derive(Serialize)]
struct RoutingDump {
    batch: usize,
    experts: usize,
    k_count: usize,
    c_count: usize,
    sparsity: f64,
    dead_node_rate: f64,
    dead_nodes: Vec<usize>,
    histogram_edges: Vec<f64>,
    per_expert: Vec<ExpertDump>,
}

fn cmd_inspect<T: Real>(
    checkpoint: &Path,
    dataset: &Path,
    which: SplitName,
    train_frac: f64,
    val_frac: f64,
    out: Option<&Path>,
) -> Result<ExitCode, Failure> {
    let mut r = std::io::BufReader::new(std::fs::File::open(checkpoint).map_err(|e| {
        Failure::input(format!("{}: {e}", checkpoint.display()))
    })?);
    let (model, _cfg): (Model<T>, _) = hope_core::io::read_checkpoint(&mut r)?;
    let mut r = std::io::BufReader::new(std::fs::File::open(dataset).map_err(|e| {
        Failure::input(format!("{}: {e}", dataset.display()))
    })?);
    let ds: SyntheticDataset<T> = hope_core::io::read_dataset(&mut r)?;
    let indices = split_indices(&ds, which, train_frac, val_frac)?;
    let batch = hope_core::synth::make_view_batch(&ds, &indices)?;
    let pass = model.forward_pass(&batch, hope_core::head::ExecMode::Sparse, false)?;
    let routing = pass
        .routing
        .ok_or_else(|| Failure::input("checkpoint model has no routing state"))?;
    let diag = routing_diagnostics(&routing);

    let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
        .map(|i| -1.0 + 2.0 * i as f64 / HISTOGRAM_BINS as f64)
        .collect();
    let per_expert = (0..routing.experts)
        .map(|m| {
            let mut hist = vec![0usize; HISTOGRAM_BINS];
            for v in 0..routing.batch {
                let s = routing.score(v, m).clamp(-1.0, 1.0);
                let bin =
                    (((s + 1.0) / 2.0 * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
                hist[bin] += 1;
            }
            ExpertDump {
                expert: m,
                count: diag.counts[m],
                load: diag.loads[m],
                histogram_counts: hist,
            }
        })
        .collect();

    let dump = RoutingDump {
        batch: routing.batch,
        experts: routing.experts,
        k_count: routing.k_count,
        c_count: routing.c_count,
        sparsity: diag.sparsity,
        dead_node_rate: diag.dead_node_rate,
        dead_nodes: diag.dead_nodes,
        histogram_edges: edges,
        per_expert,
    };
    let text = serde_json::to_string_pretty(&dump).map_err(|e| Failure::input(e.to_string()))?;
    println!("{text}");
    if let Some(path) = out {
        write_json(path, &dump)?;
    }
    Ok(ExitCode::SUCCESS)
}
