use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use raxelkit::eval::TrajectoryKind;
use raxelkit::ImageDims;
use raxelkit_cli::{
    bench, decode, encode, metrics, reverse, roundtrip, synth, BenchOptions, Camera, CliError, NoiseKind,
    Representation, RoundtripOptions, SynthOptions,
};

#[derive(Debug, Parser)]
#[command(name = "raxelkit", version, about = "Camera trajectories as ray images: encode, decode, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a trajectory file into one grid file per frame.
    Encode {
        trajectory: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value = "raxel")]
        representation: Representation,
    },
    /// Recover a trajectory from a directory of raxel files.
    Decode {
        raxel_dir: PathBuf,
        out: PathBuf,
        /// Full-resolution image width.
        #[arg(long)]
        width: u32,
        /// Full-resolution image height.
        #[arg(long)]
        height: u32,
        /// Frame index of the reference; detected when omitted.
        #[arg(long)]
        reference: Option<u32>,
    },
    /// Encode, perturb, decode and compare against the input.
    Roundtrip {
        trajectory: PathBuf,
        #[arg(long, default_value = "gaussian")]
        noise_kind: NoiseKind,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        magnitude: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append a result row to this CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Value of the CSV `kind` column (default: file stem).
        #[arg(long)]
        label: Option<String>,
    },
    /// Pose errors and mRRA@30 of a predicted trajectory.
    Metrics { predicted: PathBuf, ground_truth: PathBuf },
    /// Write a synthetic trajectory.
    Synth {
        kind: TrajectoryKind,
        frames: usize,
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        /// Horizontal field of view in degrees.
        #[arg(long, default_value_t = 60.0)]
        fov: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        reverse: bool,
        #[arg(long, default_value_t = 832)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
    },
    /// Time-reverse a trajectory file.
    Reverse { input: PathBuf, out: PathBuf },
    /// Gaussian-noise robustness sweep; resumes from an existing CSV.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "arcleft,arcright,orbit,line")]
        kinds: Vec<TrajectoryKind>,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.005,0.01,0.05")]
        sigmas: Vec<f64>,
        /// Seeds 0..N per cell.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 21)]
        frames: usize,
        #[arg(long, default_value_t = 832)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
        #[arg(long, default_value_t = 60.0)]
        fov: f64,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Encode {
            trajectory,
            out_dir,
            representation,
        } => {
            let written = encode(&trajectory, &out_dir, representation)?;
            println!("wrote {} files to {}", written.len(), out_dir.display());
        }
        Command::Decode {
            raxel_dir,
            out,
            width,
            height,
            reference,
        } => {
            let summary = decode(&raxel_dir, &out, ImageDims::new(width, height), reference)?;
            for (index, why) in &summary.failures {
                eprintln!("warning: frame {index} skipped: {why}");
            }
            println!("decoded {} frames to {}", summary.trajectory.len(), out.display());
        }
        Command::Roundtrip {
            trajectory,
            noise_kind,
            magnitude,
            seed,
            csv,
            label,
        } => {
            let opts = RoundtripOptions {
                noise: noise_kind,
                magnitude,
                seed,
                csv,
                label,
            };
            print!("{}", roundtrip(&trajectory, &opts)?);
        }
        Command::Metrics {
            predicted,
            ground_truth,
        } => print!("{}", metrics(&predicted, &ground_truth)?),
        Command::Synth {
            kind,
            frames,
            out,
            radius,
            fov,
            seed,
            reverse,
            width,
            height,
        } => {
            let opts = SynthOptions {
                camera: Camera {
                    width,
                    height,
                    fov_deg: fov,
                },
                radius,
                seed,
                reverse,
            };
            synth(kind, frames, &out, &opts)?;
        }
        Command::Reverse { input, out } => {
            reverse(&input, &out)?;
        }
        Command::Bench {
            out,
            kinds,
            sigmas,
            seeds,
            frames,
            width,
            height,
            fov,
            radius,
        } => {
            let opts = BenchOptions {
                kinds,
                sigmas,
                seeds,
                frames,
                camera: Camera {
                    width,
                    height,
                    fov_deg: fov,
                },
                radius,
                out,
            };
            let outcome = bench(&opts, |line| println!("{line}"))?;
            println!(
                "computed {} cells, skipped {} existing",
                outcome.computed.len(),
                outcome.skipped
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
