use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use mpsurvey::classifier::{
    evaluate, read_dataset, synthesize_dataset, train, write_dataset, DatasetSpec,
    TrainedClassifier, Variant,
};
use mpsurvey::experiments::{
    run_sensitivity, run_sweep, write_sensitivity_csv, write_sweep_csv, SensitivityConfig,
    SweepConfig,
};
use mpsurvey::mission::{
    endurance_report, load_library, load_or_train, replay, run_mission_with, write_outputs,
    MissionConfig,
};
use mpsurvey::spectra::{MaterialLabel, WavelengthGrid};

#[derive(Parser)]
#[command(
    name = "mpsurvey",
    version,
    about = "Microplastics survey manipulator simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded survey mission and write its log, episodes and summary.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "mission_out")]
        out: PathBuf,
    },
    /// Monte-Carlo approach trials; before/after terminal error per trial.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Absorbance and validity against focus height over one particle.
    Sensitivity {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Heights above the particle (mm).
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 1.0, 2.0])]
        offsets: Vec<f64>,
        #[arg(long, default_value = "PP")]
        material: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sensitivity.csv")]
        out: PathBuf,
    },
    /// Train a classifier on a dataset directory or a synthetic dataset.
    Train {
        #[arg(long, default_value = "SVM3+I")]
        variant: Variant,
        /// Dataset directory (manifest.json plus per-row CSVs).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Seed of the synthetic dataset when no directory is given.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        /// Also write the synthetic dataset here.
        #[arg(long)]
        write_dataset: Option<PathBuf>,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Evaluate a model and write its confusion matrix.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Seed of the synthetic test set when no directory is given.
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value = "confusion.csv")]
        out: PathBuf,
    },
    /// Endurance arithmetic from the rover constants.
    Endurance {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded mission and compare outputs byte for byte.
    Replay {
        /// Run directory or any file inside it.
        log: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<MissionConfig> {
    match path {
        Some(p) => MissionConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(MissionConfig::default()),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn dataset(
    dir: Option<&Path>,
    seed: u64,
    per_class: usize,
    grid: &Arc<WavelengthGrid>,
) -> Result<Vec<mpsurvey::classifier::LabeledSpectrum>> {
    match dir {
        Some(d) => read_dataset(d).with_context(|| format!("reading dataset {}", d.display())),
        None => {
            let library = load_library(&Default::default(), grid)?;
            let spec = DatasetSpec {
                per_class,
                seed,
                ..Default::default()
            };
            Ok(synthesize_dataset(&library, grid, &spec)?)
        }
    }
}

#[derive(Serialize)]
struct SweepStats {
    trials: usize,
    completed: usize,
    within_1mm_after: usize,
    within_1mm_before: usize,
    success_rate: f64,
    out: PathBuf,
}

fn run(cli: Cli) -> Result<bool> {
    let grid = Arc::new(WavelengthGrid::default_nir());
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let library = load_library(&cfg.classifier, &grid)?;
            let classifier = load_or_train(&cfg.classifier, &library, &grid)?;
            let result = run_mission_with(&cfg, seed, &library, &classifier)?;
            write_outputs(&out, &cfg, seed, &result)?;
            let mut s = result.summary.clone();
            s.targets.clear();
            print_json(&s)?;
        }
        Command::Sweep {
            config,
            trials,
            seed,
            out,
        } => {
            let m = load_config(config.as_deref())?;
            let cfg = SweepConfig {
                trials,
                base_seed: seed,
                sim: m.sim,
                servo: m.servo,
                segmentation: m.segmentation,
                scene: m.scene.clone(),
                ..Default::default()
            };
            let library = load_library(&m.classifier, &grid)?;
            let rows = run_sweep(&cfg, &library, &grid)?;
            write_sweep_csv(&rows, create(&out)?)?;
            let after = rows.iter().filter(|r| r.success(1.0)).count();
            print_json(&SweepStats {
                trials,
                completed: rows.iter().filter(|r| r.after_mm.is_some()).count(),
                within_1mm_after: after,
                within_1mm_before: rows
                    .iter()
                    .filter(|r| r.before_mm.is_some_and(|b| b <= 1.0))
                    .count(),
                success_rate: after as f64 / trials.max(1) as f64,
                out,
            })?;
        }
        Command::Sensitivity {
            config,
            offsets,
            material,
            seed,
            out,
        } => {
            let m = load_config(config.as_deref())?;
            let material: MaterialLabel = material.parse().map_err(anyhow::Error::msg)?;
            let cfg = SensitivityConfig {
                offsets_mm: offsets,
                seed,
                material,
                sim: mpsurvey::sim::SimConfig {
                    actuation: mpsurvey::sim::ActuationParams::ideal(),
                    ..m.sim
                },
                servo: m.servo,
                ..Default::default()
            };
            let library = load_library(&m.classifier, &grid)?;
            let rows = run_sensitivity(&cfg, &library, &grid)?;
            write_sensitivity_csv(&rows, create(&out)?)?;
            print_json(&rows)?;
        }
        Command::Train {
            variant,
            dataset: dir,
            seed,
            per_class,
            write_dataset: dump,
            out,
        } => {
            let rows = dataset(dir.as_deref(), seed, per_class, &grid)?;
            if let Some(d) = dump {
                write_dataset(&d, &rows)?;
            }
            let model = train(&rows, variant, &Default::default())?;
            model.save(&out)?;
            print_json(&serde_json::json!({
                "variant": variant.to_string(),
                "rows": rows.len(),
                "classes": model.classes.len(),
                "support_vectors": model.support_vector_count(),
                "out": out,
            }))?;
        }
        Command::Eval {
            model,
            dataset: dir,
            seed,
            per_class,
            out,
        } => {
            let model = TrainedClassifier::load(&model)
                .with_context(|| format!("loading model {}", model.display()))?;
            let rows = dataset(dir.as_deref(), seed, per_class, &grid)?;
            let ev = evaluate(&model, &rows)?;
            ev.confusion.write_csv(create(&out)?)?;
            print_json(&serde_json::json!({
                "accuracy": ev.accuracy,
                "rows": rows.len(),
                "per_class": ev.per_class,
                "out": out,
            }))?;
        }
        Command::Endurance { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let report = endurance_report(&cfg.rover, &cfg.power)?;
            match out {
                Some(p) => serde_json::to_writer_pretty(create(&p)?, &report)?,
                None => print_json(&report)?,
            }
        }
        Command::Replay { log } => {
            if !log.exists() {
                bail!("{} does not exist", log.display());
            }
            let report = replay(&log)?;
            print_json(&report)?;
            return Ok(report.identical);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
