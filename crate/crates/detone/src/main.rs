//! Command-line interface. Every subcommand is a thin wrapper over the
//! library: read inputs, call through, write outputs. Exit codes: 0 on
//! success, 1 when a verification or training run fails, 2 for usage and
//! input errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use detone::config::{apply_config_file, print_config, Profile};
use detone::core::gradcheck;
use detone::core::halftone::{error_diffuse_fs_with, GrayImage, ScanOrder};
use detone::core::network::Checkpoint;
use detone::dataset::ingest_corpus;
use detone::imageio::{read_image, write_halftone, write_image};
use detone::report;
use detone::trainer::{evaluate_net, run_ablation, TrainConfig, TrainError, Trainer};

#[derive(Parser)]
#[command(
    name = "detone",
    version,
    about = "Inverse-halftoning toolkit: halftone images, train the structure-aware reconstruction network, reconstruct, and evaluate"
)]
struct Cli {
    /// Worker thread cap for data-parallel stages (fallback: HTF_THREADS,
    /// then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an image to grayscale and halftone it with
    /// Floyd-Steinberg error diffusion.
    Halftone {
        /// Input image (PGM/PPM).
        input: PathBuf,
        /// Output halftone (binary PGM).
        output: PathBuf,
        /// Scan alternate rows right-to-left with a mirrored kernel.
        #[arg(long)]
        serpentine: bool,
    },
    /// Train the structure-aware network: pretraining, then end-to-end.
    Train(TrainArgs),
    /// Reconstruct a continuous-tone image from a halftone.
    Infer {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input halftone image.
        input: PathBuf,
        /// Output reconstruction (PGM).
        output: PathBuf,
        /// Also write the predicted structure map.
        #[arg(long)]
        dump_structure_map: Option<PathBuf>,
        /// Also write the first-stage reconstruction.
        #[arg(long)]
        dump_initial: Option<PathBuf>,
    },
    /// Halftone a test directory, reconstruct, and report PSNR/SSIM per
    /// image plus the average.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of continuous-tone test images.
        #[arg(long)]
        test: PathBuf,
        /// CSV report destination.
        #[arg(long)]
        report: PathBuf,
    },
    /// Train the structure-aware model and the sequential baseline under
    /// one budget and emit a side-by-side table.
    Ablate(AblateArgs),
    /// Run the finite-difference gradient verification suite.
    Gradcheck {
        /// Include the whole-graph check.
        #[arg(long)]
        full: bool,
        /// Self-test hook: corrupt one analytic gradient to exercise the
        /// failure path.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of continuous-tone training images.
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint destination.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Flat key=value config file applied over the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a previous checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Append per-step losses to this CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// CSV report destination (the table always prints to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    overrides: Overrides,
}

/// Command-line overrides; applied after the profile and config file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "iters")]
    iters_per_epoch: Option<usize>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long = "lambda")]
    lambda_ismp: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pretrain_iters: Option<usize>,
    /// Holdout fraction for per-epoch PSNR logging.
    #[arg(long)]
    holdout: Option<f32>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    baseline_depth: Option<usize>,
    /// Keep the initial-reconstruction subnet fixed during end-to-end
    /// training.
    #[arg(long)]
    freeze_irs: bool,
}

impl Overrides {
    fn apply(&self, config: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { config.$field = v; })*
            };
        }
        set!(
            lr,
            batch,
            epochs,
            iters_per_epoch,
            momentum,
            lambda_ismp,
            seed,
            pretrain_iters,
            holdout,
            checkpoint_every,
            baseline_depth
        );
        if self.freeze_irs {
            config.freeze_irs = true;
        }
    }
}

fn effective_config(
    profile: Profile,
    config_file: Option<&Path>,
    overrides: &Overrides,
) -> Result<TrainConfig> {
    let mut config = profile.config();
    if let Some(path) = config_file {
        apply_config_file(&mut config, path)?;
    }
    overrides.apply(&mut config);
    Ok(config)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    Checkpoint::from_bytes(&bytes)
        .with_context(|| format!("checkpoint {} is not loadable", path.display()))
}

fn setup_threads(cap: Option<usize>) {
    let n = cap.or_else(|| {
        std::env::var("HTF_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            warn!("thread pool already initialized: {e}");
        }
    }
}

fn cmd_halftone(input: &Path, output: &Path, serpentine: bool) -> Result<()> {
    let gray = read_image(input)?.into_gray();
    let order = if serpentine {
        ScanOrder::Serpentine
    } else {
        ScanOrder::Raster
    };
    let ht = error_diffuse_fs_with(&gray, order)?;
    write_halftone(output, &ht)?;
    info!("halftoned {} -> {}", input.display(), output.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<ExitCode> {
    let config = effective_config(args.profile, args.config.as_deref(), &args.overrides)?;
    if args.print_config {
        print!("{}", print_config(&config));
        return Ok(ExitCode::SUCCESS);
    }
    let corpus = ingest_corpus(&args.corpus)?;
    info!(
        "corpus: {} images, profile {}, {} + {} steps",
        corpus.len(),
        args.profile,
        config.pretrain_iters,
        config.total_end_to_end_steps()
    );
    let trainer = Trainer::new(config, corpus)?
        .with_checkpoint_path(args.out.clone());
    let trainer = match &args.log {
        Some(path) => trainer.with_log_path(path.clone()),
        None => trainer,
    };
    let outcome = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            info!("resuming from {} (stage {}, step {})", path.display(), ck.stage, ck.step);
            trainer.resume(ck)
        }
        None => trainer.run(),
    };
    match outcome {
        Ok((ck, log)) => {
            // The trainer has already written the final state to --out.
            if let Some(rec) = log.records.last() {
                info!("final loss {:.6} at step {}", rec.total, rec.step);
            }
            info!("checkpoint at {} (stage {}, step {})", args.out.display(), ck.stage, ck.step);
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ TrainError::NonFiniteLoss { .. }) => {
            // The last good checkpoint is already on disk.
            eprintln!("error: {e}");
            Ok(ExitCode::from(1))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_infer(
    ckpt: &Path,
    input: &Path,
    output: &Path,
    dump_structure_map: Option<&Path>,
    dump_initial: Option<&Path>,
) -> Result<()> {
    let checkpoint = load_checkpoint(ckpt)?;
    let gray = read_image(input)?.into_gray();
    let tensor = gray.to_tensor();
    let out = checkpoint.net.infer(&tensor)?;
    write_image(output, &GrayImage::from_tensor_channel(&out.reconstruction, 0, 0))?;
    if let Some(path) = dump_structure_map {
        write_image(path, &GrayImage::from_tensor_channel(&out.structure_map, 0, 0))?;
    }
    if let Some(path) = dump_initial {
        write_image(path, &GrayImage::from_tensor_channel(&out.initial, 0, 0))?;
    }
    info!("reconstructed {} -> {}", input.display(), output.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, test: &Path, report_path: &Path) -> Result<()> {
    let checkpoint = load_checkpoint(ckpt)?;
    let triples = ingest_corpus(test)?;
    let eval = evaluate_net(&checkpoint.net, &triples)?;
    report::write_report(report_path, &report::eval_csv(&eval))?;
    print!("{}", report::eval_text(&eval));
    info!("report written to {}", report_path.display());
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<ExitCode> {
    let config = effective_config(args.profile, args.config.as_deref(), &args.overrides)?;
    if args.print_config {
        print!("{}", print_config(&config));
        return Ok(ExitCode::SUCCESS);
    }
    let corpus = ingest_corpus(&args.corpus)?;
    let test = ingest_corpus(&args.test)?;
    match run_ablation(config, corpus, &test) {
        Ok(outcome) => {
            print!("{}", report::ablation_text(&outcome));
            if let Some(path) = &args.report {
                report::write_report(path, &report::ablation_csv(&outcome))?;
                info!("report written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ TrainError::NonFiniteLoss { .. }) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(1))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_gradcheck(full: bool, corrupt: bool) -> ExitCode {
    let outcomes = gradcheck::run_suite(full, corrupt, 0xD1CE);
    let mut ok = true;
    for o in &outcomes {
        let verdict = if o.passed() { "ok" } else { "FAIL" };
        println!(
            "{verdict:>4}  {:<48}  max rel err {:.3e}  (threshold {:.0e})",
            o.name,
            o.max_rel_error,
            gradcheck::PASS_THRESHOLD
        );
        ok &= o.passed();
    }
    if ok {
        println!("all gradient checks passed");
        ExitCode::SUCCESS
    } else {
        println!("gradient verification FAILED");
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    setup_threads(cli.threads);
    match cli.command {
        Command::Halftone {
            input,
            output,
            serpentine,
        } => {
            cmd_halftone(&input, &output, serpentine)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => cmd_train(&args),
        Command::Infer {
            ckpt,
            input,
            output,
            dump_structure_map,
            dump_initial,
        } => {
            cmd_infer(
                &ckpt,
                &input,
                &output,
                dump_structure_map.as_deref(),
                dump_initial.as_deref(),
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { ckpt, test, report } => {
            cmd_eval(&ckpt, &test, &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Gradcheck { full, corrupt } => Ok(cmd_gradcheck(full, corrupt)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
