use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sadnet::config::TrainConfig;
use sadnet::tools::{self, GradScope};
use sadnet::{infer, train, Error, Result};

#[derive(Parser)]
#[command(name = "sadnet", version, about = "Spatial-adaptive denoising network: train, denoise, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Ops,
    Model,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Denoise one PGM/PPM image.
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report PSNR/SSIM of the denoised noisy images of a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Print a table instead of tab-separated values.
        #[arg(long)]
        table: bool,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Run only one suite; both by default.
        #[arg(long, value_enum)]
        scope: Option<Scope>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Print the architecture, parameter count and arithmetic cost.
    Inspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 320)]
        height: usize,
        #[arg(long, default_value_t = 480)]
        width: usize,
    },
    /// Write noisy copies of a directory of images plus a manifest.
    MakeNoisy {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Dump the sampling positions and modulation of every deformable layer.
    ExportOffsets {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Spacing of the exported pixel grid.
        #[arg(long, default_value_t = 16)]
        step: usize,
    },
}

fn print(text: &str) -> Result<()> {
    std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let summary = train::run(&cfg, &mut std::io::stdout())?;
            eprintln!("wrote {}", summary.final_checkpoint.display());
        }
        Command::Denoise { ckpt, input, out } => infer::denoise_file(&ckpt, &input, &out)?,
        Command::Eval { ckpt, manifest, table } => {
            let report = infer::evaluate(&ckpt, &manifest)?;
            print(&if table { report.to_table() } else { report.to_tsv() })?;
        }
        Command::Gradcheck { scope, seed } => {
            let scope = match scope {
                None => GradScope::All,
                Some(Scope::Ops) => GradScope::Ops,
                Some(Scope::Model) => GradScope::Model,
            };
            let report = tools::gradcheck(scope, seed)?;
            print(&report.to_text())?;
            println!("worst_rel\t{:.3e}", report.worst_rel());
            if !report.passed() {
                let ops: Vec<String> = report.failures().map(|r| format!("{} ({})", r.op, r.group)).collect();
                return Err(Error::Numeric(format!("gradient check failed for {}", ops.join(", "))));
            }
        }
        Command::Inspect { config, height, width } => {
            print(&tools::inspect(&tools::load_model_config(&config)?, height, width)?)?;
        }
        Command::MakeNoisy { in_dir, sigma, seed, out_dir } => {
            let entries = tools::make_noisy(&in_dir, sigma, seed, &out_dir)?;
            eprintln!("wrote {} images and {}", entries.len(), out_dir.join("manifest.tsv").display());
        }
        Command::ExportOffsets { ckpt, input, out, step } => infer::export_offsets(&ckpt, &input, &out, step)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sadnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
