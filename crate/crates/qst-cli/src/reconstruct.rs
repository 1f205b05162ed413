//! `qst reconstruct`: rebuild one record's density matrix and report
//! fidelity, loss, iteration count, and wall time.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use qst_core::dataset;
use qst_core::states::Family;

use crate::engine::{self, EngineConfig, NeuralState};
use crate::report::{fmt_f64, Table, EMPTY_CELL};
use crate::util::{self, CliResult, Method};

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Dataset directory; falls back to QST_DATA_DIR.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Record index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,

    #[arg(long, value_enum)]
    pub method: Method,

    /// Trained checkpoint; required for rfb and msnn.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Iteration budget for mle and the gradient methods.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,

    /// Adam learning rate for the gradient methods.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,

    /// Adam epsilon for the gradient methods.
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,

    /// Initialization seed for the gradient methods.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Damping for the iterative maximum-likelihood update.
    #[arg(long, default_value_t = 0.2)]
    pub damping: f64,

    /// Ridge added to the linear-inversion normal equations.
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,

    /// Optional report file (structured text, `#qst-table v1`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(args: &ReconstructArgs) -> CliResult {
    let dir = util::resolve_data_dir(args.input.clone(), "--input")?;
    let config = EngineConfig {
        iters: args.iters,
        lr: args.lr,
        epsilon: args.epsilon,
        seed: args.seed,
        damping: args.damping,
        ridge: args.ridge,
    };

    let mut entries = vec![
        ("input", dir.display().to_string()),
        ("index", args.index.to_string()),
        ("method", args.method.name().to_string()),
        (
            "checkpoint",
            args.checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into()),
        ),
    ];
    entries.extend(config.entries());
    util::print_config("reconstruct", &entries);

    if args.method.is_neural() && args.checkpoint.is_none() {
        return Err(util::CliError::Usage(format!(
            "--method {} requires --checkpoint",
            args.method.name()
        )));
    }
    let methods = [args.method];
    let mut neural = if args.method.is_neural() {
        // `reconstruct` exposes a single --checkpoint flag; route it to
        // whichever loader the method needs.
        let path = args.checkpoint.as_deref();
        NeuralState::load(&methods, path, path)?
    } else {
        NeuralState::empty()
    };

    let (records, manifest) = dataset::load(&dir)?;
    let record = util::pick_record(&records, args.index)?;
    let geometry = manifest.geometry()?;
    let grid = record.husimi_grid(&geometry)?;

    let started = Instant::now();
    let outcome = if args.method.is_neural() {
        engine::run_neural(args.method, &grid, &record.rho, record.label as usize, &mut neural)?
    } else {
        engine::run_classical(args.method, &grid, &record.rho, &config)?
    };
    let wall_ms = started.elapsed().as_millis();

    println!("method = {}", args.method.name());
    println!("fidelity = {:.6}", outcome.fidelity);
    match outcome.loss {
        Some(loss) => println!("loss = {loss:.6e}"),
        None => println!("loss = {EMPTY_CELL}"),
    }
    println!("iterations = {}", outcome.iterations);
    println!("wall_ms = {wall_ms}");
    if let Some(class) = outcome.predicted_class {
        let name = Family::from_label(class as u8).map(|f| f.name()).unwrap_or("?");
        println!("predicted_class = {name}");
    }

    if let Some(path) = &args.report {
        let mut table = Table::new(vec!["method", "fidelity", "loss", "iterations", "wall_ms"]);
        table.meta("command", "reconstruct");
        table.meta("index", args.index);
        table.row(vec![
            args.method.name().to_string(),
            fmt_f64(outcome.fidelity),
            outcome.loss.map(fmt_f64).unwrap_or_else(|| EMPTY_CELL.into()),
            outcome.iterations.to_string(),
            wall_ms.to_string(),
        ]);
        table.write(path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}
