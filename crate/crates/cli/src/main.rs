//! `wavenet` command-line tool. See `wavenet --help`.

mod commands;
mod failure;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "wavenet", version, about = "Train, sample and verify WaveNet audio models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sample,
    Argmax,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a config file; writes report.jsonl and
    /// checkpoint.bin to the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides train.seed; also seeds parameter initialization.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides train.max_steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Start from these parameters instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sample audio from a checkpoint into a 16-bit WAV file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        global_class: Option<usize>,
        /// Control-rate features as a JSON array of rows.
        #[arg(long)]
        local: Option<PathBuf>,
        /// WAV file whose samples are fed before generation starts.
        #[arg(long)]
        primer: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, value_enum, default_value_t = Mode::Sample)]
        mode: Mode,
        #[arg(long, default_value_t = 16_000)]
        sample_rate: u32,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Use the [model] of this config instead of the built-in test model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute the receptive field and confirm it by perturbing inputs.
    #[command(name = "probe-rf")]
    ProbeRf {
        /// Use the [model] of this config instead of a 1..512 dilation block.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep the mu-law codec and report round-trip errors.
    #[command(name = "codec-roundtrip")]
    CodecRoundtrip {
        /// Grid points over [-1, 1].
        #[arg(long, default_value_t = 10_001)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            steps,
            out,
            checkpoint,
        } => commands::train(&config, seed, steps, out, checkpoint),
        Command::Generate {
            checkpoint,
            out,
            samples,
            seed,
            global_class,
            local,
            primer,
            temperature,
            mode,
            sample_rate,
        } => commands::generate(commands::GenerateArgs {
            checkpoint,
            out,
            samples,
            seed,
            global_class,
            local,
            primer,
            temperature,
            argmax: matches!(mode, Mode::Argmax),
            sample_rate,
        }),
        Command::Gradcheck { config, seed } => commands::gradcheck(config.as_deref(), seed),
        Command::ProbeRf { config, seed } => commands::probe_rf(config.as_deref(), seed),
        Command::CodecRoundtrip { samples } => commands::codec_roundtrip(samples),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
