//! `qst`: bosonic state tomography from Husimi-Q measurements.

use clap::{Parser, Subcommand};

use qst_cli::{bench, gen, reconstruct, show, train};

#[derive(Parser)]
#[command(
    name = "qst",
    version,
    about = "Bosonic state tomography: datasets, reconstruction, training, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled Husimi-Q dataset.
    Gen(gen::GenArgs),
    /// Render one record's Husimi grid as a graymap image.
    Show(show::ShowArgs),
    /// Reconstruct a density matrix from one record.
    Reconstruct(reconstruct::ReconstructArgs),
    /// Train a network and write checkpoints plus a history log.
    Train(train::TrainArgs),
    /// Sweep reconstruction fidelity across noise levels.
    BenchNoise(bench::BenchNoiseArgs),
    /// Compare reconstruction methods on the validation split.
    BenchCompare(bench::BenchCompareArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(args) => gen::run(args),
        Command::Show(args) => show::run(args),
        Command::Reconstruct(args) => reconstruct::run(args),
        Command::Train(args) => train::run(args),
        Command::BenchNoise(args) => bench::run_noise(args),
        Command::BenchCompare(args) => bench::run_compare(args),
    };
    if let Err(error) = outcome {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}
