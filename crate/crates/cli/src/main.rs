use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pcrobust::corruption::{apply_corruption, corruption_suite, CorruptionKind, CorruptionSpec};
use pcrobust::geometry::io;
use pcrobust::harness::{
    self, ablate, evaluate, gen_dataset, load_dataset, save_dataset, write_curves_csv, write_history_csv,
    write_table_csv, AblationGrid, EvalSettings, ModelPredictor, RunConfig,
};
use pcrobust::model::{load_checkpoint, save_checkpoint};
use pcrobust::sampling::{self, SampleSpec, SamplerVariant};
use pcrobust::seed;

#[derive(Parser)]
#[command(name = "pcrobust", version, about = "Robust point-cloud classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset directory.
    GenData {
        /// Run-config file; only the data keys are used.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Per-epoch loss curve as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on the clean and corrupted test split.
    Eval(EvalArgs),
    /// Train and evaluate every point of an ablation grid.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use this dataset for every grid point instead of generating one.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Select anchor points from a cloud.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "das")]
        method: Method,
        /// Density definition for --method das.
        #[arg(long, value_enum, default_value = "l0")]
        variant: Variant,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = sampling::DEFAULT_DENSITY_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        fps_start: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Selected indices, one per line; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the selected points as a cloud.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Apply one corruption, or the whole severity suite with --suite.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        /// Corruption kind; repeatable with --suite, all kinds when omitted there.
        #[arg(long)]
        kind: Vec<CorruptionKind>,
        #[arg(long)]
        severity: Option<u8>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every kind x severity cell into the --output directory.
        #[arg(long)]
        suite: bool,
        #[arg(long, alias = "out")]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Das,
    Fps,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    L0,
    L1,
    Ballquery,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Run-config whose evaluation keys (kinds, seeds) apply.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the checkpoint's anchor sampler.
    #[arg(long)]
    sampler: Option<SamplerVariant>,
    /// Per-severity error curves as CSV.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Every individual prediction as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Train {
            config,
            out,
            data,
            history,
            quiet,
        } => train(&config, &out, data.as_deref(), history.as_deref(), quiet),
        Command::Eval(args) => eval(&args),
        Command::Ablate { grid, out, data } => run_ablation(&grid, &out, data.as_deref()),
        Command::Sample {
            input,
            method,
            variant,
            m,
            k,
            fps_start,
            seed: s,
            output,
            points,
        } => {
            let cloud = io::load(&input).with_context(|| format!("reading {}", input.display()))?;
            let sampler = match (method, variant) {
                (Method::Fps, _) => SamplerVariant::Fps,
                (Method::Random, _) => SamplerVariant::Random,
                (Method::Das, Variant::L0) => SamplerVariant::DasL0,
                (Method::Das, Variant::L1) => SamplerVariant::DasL1,
                (Method::Das, Variant::Ballquery) => SamplerVariant::DasBallqueryL0,
            };
            let spec = SampleSpec::new(m, sampler).with_k(k).with_fps_start(fps_start);
            let picked = sampling::sample(&cloud, &spec, &mut seed::rng(s))?;
            let listing: String = picked.iter().map(|i| format!("{i}\n")).collect();
            match output {
                Some(path) => fs::write(&path, listing).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{listing}"),
            }
            if let Some(path) = points {
                io::save(&cloud.select(&picked)?, &path)?;
            }
            Ok(())
        }
        Command::Corrupt {
            input,
            kind,
            severity,
            seed: s,
            suite,
            output,
        } => corrupt(&input, &kind, severity, s, suite, &output),
    }
}

fn gen_data(spec: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(spec).with_context(|| format!("reading {}", spec.display()))?;
    let data = gen_dataset(&cfg.data)?;
    save_dataset(&data, out)?;
    eprintln!(
        "wrote {} train and {} test clouds to {}",
        data.train.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn dataset(cfg: &RunConfig, dir: Option<&Path>) -> Result<harness::Dataset> {
    let data = match dir {
        Some(d) => load_dataset(d).with_context(|| format!("loading dataset {}", d.display()))?,
        None => gen_dataset(&cfg.data)?,
    };
    if data.num_classes() != cfg.train.dims.classes {
        bail!(
            "dataset has {} classes but the configuration expects {}",
            data.num_classes(),
            cfg.train.dims.classes
        );
    }
    Ok(data)
}

fn train(config: &Path, out: &Path, data: Option<&Path>, history: Option<&Path>, quiet: bool) -> Result<()> {
    let cfg = RunConfig::from_file(config).with_context(|| format!("reading {}", config.display()))?;
    let data = dataset(&cfg, data)?;
    let outcome = harness::train_with_progress(&data.train, &cfg.train, |s| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  ce {:.4}  sem {:.4}  train_err {:.3}  val_err {}",
                s.epoch + 1,
                s.loss,
                s.ce,
                s.sem,
                s.train_error,
                s.val_error.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
            );
        }
    })?;
    save_checkpoint(&outcome.checkpoint, out)?;
    if let Some(path) = history {
        write_history_csv(&outcome.history, fs::File::create(path)?)?;
    }
    if !quiet {
        eprintln!("best epoch {}; checkpoint written to {}", outcome.best_epoch + 1, out.display());
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt).with_context(|| format!("reading {}", args.ckpt.display()))?;
    let data = load_dataset(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    let settings = match &args.config {
        Some(path) => RunConfig::from_file(path)?.eval,
        None => EvalSettings::default(),
    };
    let mut sampler = ckpt.sampler;
    if let Some(v) = args.sampler {
        sampler.variant = v;
    }
    let predictor = ModelPredictor::with_sampler(&ckpt, sampler);
    let (report, log) = evaluate(&predictor, &data.test, &settings)?;
    fs::write(&args.report, serde_json::to_string_pretty(&report)? + "\n")?;
    if let Some(path) = &args.curves {
        write_curves_csv(&report, fs::File::create(path)?)?;
    }
    if let Some(path) = &args.log {
        fs::write(path, serde_json::to_string(&log)? + "\n")?;
    }
    eprintln!(
        "er_clean {:.4}  er_cor {}",
        report.er_clean,
        report.er_cor.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn run_ablation(grid: &Path, out: &Path, data: Option<&Path>) -> Result<()> {
    let grid = AblationGrid::from_file(grid).with_context(|| format!("reading {}", grid.display()))?;
    let data = data.map(load_dataset).transpose()?;
    let total = grid.expand()?.len();
    let table = ablate(&grid, data.as_ref(), |i, row| {
        let label: Vec<String> = row.assignments.iter().map(|(k, v)| format!("{k}={v}")).collect();
        eprintln!(
            "[{}/{total}] {}  er_clean {:.4}  er_cor {}",
            i + 1,
            label.join(" "),
            row.report.er_clean,
            row.report.er_cor.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
    })?;
    write_table_csv(&table, fs::File::create(out)?)?;
    Ok(())
}

fn corrupt(input: &Path, kinds: &[CorruptionKind], severity: Option<u8>, s: u64, suite: bool, out: &Path) -> Result<()> {
    let cloud = io::load(input).with_context(|| format!("reading {}", input.display()))?;
    if suite {
        let kinds = if kinds.is_empty() { CorruptionKind::ALL.to_vec() } else { kinds.to_vec() };
        let name = input.file_stem().and_then(|n| n.to_str()).unwrap_or("cloud");
        for (spec, corrupted) in corruption_suite(&cloud, &kinds, s)? {
            let dir = out.join(spec.kind.name()).join(spec.severity.to_string());
            fs::create_dir_all(&dir)?;
            io::save(&corrupted, &dir.join(format!("{name}.rpc")))?;
        }
        return Ok(());
    }
    let [kind] = kinds else {
        bail!("exactly one --kind is required without --suite");
    };
    let Some(severity) = severity else {
        bail!("--severity is required without --suite");
    };
    let spec = CorruptionSpec {
        kind: *kind,
        severity,
        seed: s,
    };
    io::save(&apply_corruption(&cloud, &spec)?, out)?;
    Ok(())
}
