//! `b2v` — brain-to-video decoding pipeline over synthetic paired data:
//! generation, preprocessing, encoder/decoder training, reconstruction,
//! evaluation, and the comparison harnesses.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cli::{ablate, config::ExperimentConfig, stages};

#[derive(Parser)]
#[command(name = "b2v", about = "Brain-to-video decoding pipeline on synthetic paired data")]
struct Args {
    /// Experiment config file (JSON). Defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Named preset when no config file is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,

    /// Master seed (overrides the config/preset value).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory root.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for parallel sections (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth,
    /// Run the EEG/fMRI preprocessing chain over the dataset.
    Preprocess,
    /// Train the multi-modal fusion encoder.
    TrainEncoder,
    /// Train the latent diffusion decoder.
    TrainDecoder,
    /// Reconstruct the test split from brain signals.
    Reconstruct {
        /// Also export PNG frame sequences for inspection.
        #[arg(long)]
        png: bool,
    },
    /// Compute the metric report over reconstructions.
    Evaluate,
    /// Compare the five fusion architectures (seven budget-matched rows).
    AblateFusion,
    /// Compare alignment-loss ablations (full, w/o vision, w/o text, w/o across).
    AblateAlignment,
    /// Compare fused vs single-modality encoders.
    ModalityCompare,
    /// Run every stage end to end.
    Pipeline {
        #[arg(long)]
        png: bool,
    },
}

fn resolve_config(args: &Args) -> cli::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(&args.preset, 1234, &args.out)?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    cfg.out_dir = args.out.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> cli::Result<()> {
    if args.threads > 0 {
        // a failure here means a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global();
    }
    let cfg = resolve_config(args)?;
    println!("config hash: {}", cfg.hash());
    println!("artifacts:   {}", cfg.run_dir().display());

    match &args.command {
        Command::Synth => {
            let manifest = stages::stage_synth(&cfg)?;
            println!(
                "dataset: {} clips over {} episodes",
                manifest.clips.len(),
                cfg.synth.n_episodes
            );
        }
        Command::Preprocess => {
            stages::stage_preprocess(&cfg)?;
            println!("preprocessing complete");
        }
        Command::TrainEncoder => {
            let dir = stages::stage_train_encoder(&cfg)?;
            println!("encoder checkpoint: {}", dir.display());
        }
        Command::TrainDecoder => {
            let dir = stages::stage_train_decoder(&cfg)?;
            println!("decoder checkpoint: {}", dir.display());
        }
        Command::Reconstruct { png } => {
            let dir = stages::stage_reconstruct(&cfg, *png)?;
            println!("reconstructions: {}", dir.display());
        }
        Command::Evaluate => {
            let report = stages::stage_evaluate(&cfg)?;
            println!("{}", report.to_json());
        }
        Command::AblateFusion => {
            let table = ablate::ablate_fusion(&cfg)?;
            print!("{}", table.render());
        }
        Command::AblateAlignment => {
            let table = ablate::ablate_alignment(&cfg)?;
            print!("{}", table.render());
        }
        Command::ModalityCompare => {
            let table = ablate::modality_compare(&cfg)?;
            print!("{}", table.render());
        }
        Command::Pipeline { png } => {
            let report = stages::run_pipeline(&cfg, *png)?;
            println!("{}", report.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
