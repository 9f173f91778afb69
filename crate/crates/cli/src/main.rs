//! Command-line entry point wiring all subsystems together.
//!
//! Subcommands: `generate-data`, `train`, `evaluate`, `gradcheck`,
//! `ablate`. Every command is deterministic given its flags and seeds.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
//! failure, 5 compatibility mismatch, 6 gradient-check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deformer_core::config::{Config, Preset};
use deformer_core::fusion::AggregationMode;
use deformer_core::gradcheck;
use deformer_core::losses::LossReport;
use deformer_core::metrics::{evaluate, EvalReport};
use deformer_core::synthdata;
use deformer_core::training;
use deformer_core::Error;

#[derive(Parser)]
#[command(
    name = "deformer",
    about = "Spatiotemporal hand-pose estimation on a synthetic benchmark",
    version
)]
struct Cli {
    /// Worker cap for parallel sections (falls back to DEFORMER_THREADS;
    /// the current build computes on a single worker).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (train/test splits plus manifest).
    GenerateData {
        /// key = value configuration file; defaults to the desk preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Base preset when no --config is given.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train on a generated dataset; writes per-epoch checkpoints and a
    /// CSV loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split under one aggregation mode.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// center | average | weighted-occlusion | dynamic
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification suites.
    Gradcheck {
        /// ops | layers | end2end
        #[arg(long, default_value = "ops")]
        scope: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Ablation grids: fusion (one training, four aggregation modes) or
    /// loss (2x2 maxMSE x discriminator matrix).
    Ablate {
        /// fusion | loss
        #[arg(long)]
        grid: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse(_) => 2,
        Error::Io(_) => 3,
        Error::Incompatible(_) => 5,
        _ => 4,
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code_for(&err))
}

fn resolve_config(
    config_path: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<Config, Error> {
    let mut config = match (config_path, preset) {
        (Some(path), preset_flag) => {
            let text = std::fs::read_to_string(path)?;
            let parsed = Config::parse(&text)?;
            if let Some(p) = preset_flag {
                if Preset::parse(p)? != parsed.preset {
                    return Err(Error::Config(format!(
                        "--preset {p} conflicts with the config file's preset '{}'",
                        parsed.preset.name()
                    )));
                }
            }
            parsed
        }
        (None, Some(p)) => Config::from_preset(Preset::parse(p)?),
        (None, None) => Config::desk(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn check_threads(threads: Option<usize>) -> Result<(), Error> {
    let requested = match threads {
        Some(t) => Some(t),
        None => match std::env::var("DEFORMER_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::Config(format!("DEFORMER_THREADS must be a positive integer, got '{v}'"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(t) = requested {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
    }
    Ok(())
}

fn load_dataset(
    data_dir: &Path,
    config: &Config,
    split: &str,
) -> Result<Vec<synthdata::SequenceSample>, Error> {
    let manifest = synthdata::load_manifest(data_dir)?;
    let expect = format!("{:016x}", config.data_hash());
    if manifest.config_hash != expect {
        return Err(Error::Incompatible(format!(
            "dataset manifest hash {} does not match the configured data section {}",
            manifest.config_hash, expect
        )));
    }
    let samples = synthdata::load_split(data_dir, split)?;
    samples
        .into_iter()
        .map(|s| s.with_grid_shape(config.grid_h, config.grid_w, config.grid_c))
        .collect()
}

fn write_loss_log(history: &[LossReport], path: &Path) -> Result<(), Error> {
    let mut text = String::from(LossReport::CSV_HEADER);
    text.push('\n');
    for row in history {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_eval_report(report: &EvalReport, out_dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    let tag = report.mode.clone();
    std::fs::write(
        out_dir.join(format!("report_{tag}.json")),
        serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    )?;
    std::fs::write(
        out_dir.join(format!("report_{tag}.csv")),
        format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    )?;
    std::fs::write(
        out_dir.join(format!("per_joint_{tag}.csv")),
        report.per_joint_csv(),
    )?;
    Ok(())
}

fn cmd_generate_data(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    preset: Option<&str>,
) -> Result<(), Error> {
    let config = resolve_config(config, preset, seed)?;
    let manifest = synthdata::generate_dataset(&config, out)?;
    println!(
        "wrote {} train / {} test sequences ({} frames) to {}",
        manifest.train_sequences,
        manifest.test_sequences,
        manifest.total_frames,
        out.display()
    );
    println!(
        "occlusion histogram [0-25/25-50/50-75/75-100%]: {:?}",
        manifest.occlusion_histogram
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    preset: Option<&str>,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> Result<(), Error> {
    let config = resolve_config(config, preset, seed)?;
    let train_set = load_dataset(data, &config, "train")?;
    let resume_state = match resume {
        Some(path) => Some(training::load_checkpoint(path)?),
        None => None,
    };
    std::fs::create_dir_all(out)?;
    let state = training::train(&config, &train_set, Some(out), resume_state)?;
    write_loss_log(&state.history, &out.join("train_log.csv"))?;
    let last = state.history.last();
    println!(
        "trained {} epochs ({} steps); final total loss {}",
        state.epoch,
        state.global_step,
        last.map_or(f64::NAN, |r| r.total)
    );
    println!(
        "final checkpoint: {}",
        out.join(format!("epoch_{:04}.ckpt", state.epoch)).display()
    );
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, mode: &str, out: &Path) -> Result<(), Error> {
    let mode = AggregationMode::parse(mode)?;
    if !checkpoint.exists() {
        return Err(Error::Incompatible(format!(
            "checkpoint {} does not exist",
            checkpoint.display()
        )));
    }
    let state = training::load_checkpoint(checkpoint)?;
    let test_set = load_dataset(data, &state.models.config, "test")?;
    let report = evaluate(&state.models, &test_set, mode)?;
    write_eval_report(&report, out)?;
    println!(
        "mode {}: mpjpe {:.3} mm, auc {:.4}, F@5 {:.4}, F@15 {:.4}, accel {:.3} mm/s^2",
        report.mode,
        report.mpjpe_mm,
        report.auc,
        report.f_at_5,
        report.f_at_15,
        report.accel_error_mm_s2
    );
    Ok(())
}

fn cmd_gradcheck(scope: &str, seed: u64) -> Result<bool, Error> {
    let checks = match scope {
        "ops" => gradcheck::ops_suite(seed, 100)?,
        "layers" => gradcheck::layers_suite(seed)?,
        "end2end" => gradcheck::end2end_suite(seed)?,
        other => {
            return Err(Error::Config(format!(
                "unknown gradcheck scope '{other}' (expected ops|layers|end2end)"
            )))
        }
    };
    let mut all_passed = true;
    println!("{:<28} {:>14} {:>10} result", "check", "max rel err", "tol");
    for check in &checks {
        let status = if check.passed() { "PASS" } else { "FAIL" };
        all_passed &= check.passed();
        println!(
            "{:<28} {:>14.3e} {:>10.1e} {status}",
            check.name, check.max_rel_err, check.tolerance
        );
    }
    Ok(all_passed)
}

fn cmd_ablate(
    grid: &str,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let base = resolve_config(config, preset, seed)?;
    let train_set = load_dataset(data, &base, "train")?;
    let test_set = load_dataset(data, &base, "test")?;
    std::fs::create_dir_all(out)?;
    match grid {
        "fusion" => {
            // one training, four aggregation modes at evaluation time
            let state = training::train(&base, &train_set, None, None)?;
            let mut csv = format!("{},seed\n", EvalReport::CSV_HEADER);
            for mode in AggregationMode::ALL {
                let report = evaluate(&state.models, &test_set, mode)?;
                println!(
                    "fusion {}: mpjpe {:.3} mm (auc {:.4})",
                    report.mode, report.mpjpe_mm, report.auc
                );
                csv.push_str(&format!("{},{}\n", report.csv_row(), base.seed));
                write_eval_report(&report, out)?;
            }
            std::fs::write(out.join("fusion_grid.csv"), csv)?;
        }
        "loss" => {
            let mut csv =
                String::from("max_mse,discriminator,mpjpe_mm,joint_balance_std,seed\n");
            for (use_max_mse, use_disc) in
                [(false, false), (false, true), (true, false), (true, true)]
            {
                let mut config = base.clone();
                config.use_max_mse = use_max_mse;
                config.use_discriminator = use_disc;
                let state = training::train(&config, &train_set, None, None)?;
                let report = evaluate(&state.models, &test_set, config.fusion_mode)?;
                println!(
                    "loss grid maxMSE={use_max_mse} disc={use_disc}: mpjpe {:.3} mm, joint std {:.3}",
                    report.mpjpe_mm, report.joint_balance_std
                );
                csv.push_str(&format!(
                    "{},{},{:.6},{:.6},{}\n",
                    use_max_mse, use_disc, report.mpjpe_mm, report.joint_balance_std, base.seed
                ));
            }
            std::fs::write(out.join("loss_grid.csv"), csv)?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown ablation grid '{other}' (expected fusion|loss)"
            )))
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = check_threads(cli.threads) {
        return fail(e);
    }
    let result = match &cli.command {
        Command::GenerateData {
            config,
            out,
            seed,
            preset,
        } => cmd_generate_data(config.as_deref(), out, *seed, preset.as_deref()),
        Command::Train {
            config,
            data,
            out,
            preset,
            seed,
            resume,
        } => cmd_train(
            config.as_deref(),
            data,
            out,
            preset.as_deref(),
            *seed,
            resume.as_deref(),
        ),
        Command::Evaluate {
            checkpoint,
            data,
            mode,
            out,
        } => cmd_evaluate(checkpoint, data, mode, out),
        Command::Gradcheck { scope, seed } => {
            return match cmd_gradcheck(scope, *seed) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => {
                    eprintln!("error: gradient checks exceeded tolerance");
                    ExitCode::from(6)
                }
                Err(e) => fail(e),
            };
        }
        Command::Ablate {
            grid,
            data,
            out,
            config,
            preset,
            seed,
        } => cmd_ablate(
            grid,
            data,
            out,
            config.as_deref(),
            preset.as_deref(),
            *seed,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
