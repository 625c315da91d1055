//! Command-line front end: key generation, enrollment, gallery search,
//! lossless verification against a plaintext oracle, latency/size
//! benchmarking, and the permutation-degree study.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "securevector",
    version,
    about = "Privacy-preserving feature matching over sanitized vectors"
)]
struct Cli {
    /// Seed for deterministic randomness (reproducible runs); system
    /// entropy when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Emit machine-readable tab-separated output.
    #[arg(long, global = true)]
    porcelain: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair and print the recommended parameter set.
    Keygen(commands::KeygenArgs),
    /// Enroll a feature file into a gallery.
    Enroll(commands::EnrollArgs),
    /// Rank gallery entries against probe features.
    Search(commands::SearchArgs),
    /// Compare protected scores against the plaintext metric.
    Verify(commands::VerifyArgs),
    /// Measure enrollment/matching latency and artifact sizes.
    Bench(commands::BenchArgs),
    /// Tabulate similarities between features and their permuted versions.
    StudyPermutation(commands::StudyArgs),
}

fn main() -> ExitCode {
    // behave like other unix filters when the read end of a pipe closes
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let ctx = commands::Context {
        seed: cli.seed,
        porcelain: cli.porcelain,
    };
    let outcome = match cli.command {
        Command::Keygen(args) => commands::keygen(&ctx, args),
        Command::Enroll(args) => commands::enroll(&ctx, args),
        Command::Search(args) => commands::search(&ctx, args),
        Command::Verify(args) => commands::verify(&ctx, args),
        Command::Bench(args) => commands::bench(&ctx, args),
        Command::StudyPermutation(args) => commands::study_permutation(&ctx, args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
