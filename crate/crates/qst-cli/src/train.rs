//! `qst train`: fit one of the two networks on a dataset and leave behind
//! checkpoints plus a history log.
//!
//! The history records, per epoch, the training loss and the eval-mode
//! validation loss; classification accuracy and mean reconstruction
//! fidelity on the validation split are computed only at `--eval-every`
//! strides because they rebuild a density matrix per record. Validation
//! loss is evaluated with the stochastic layers disabled, so a run with
//! learning rate zero logs a perfectly flat column.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use qst_core::dataset;
use qst_core::measurement::normalize_for_net;
use qst_core::nn::{
    evaluate_msnn, evaluate_rfb, msnn_validation_loss, rfb_validation_loss, save_checkpoint,
    train_msnn_with, train_rfb_with, Checkpoint, MsModel, MsSample, OptimConfig, RfbModel,
    RfbSample, TrainConfig, TrainReport,
};
use qst_core::states::CoefficientTable;

use crate::report::{fmt_f64, Table, EMPTY_CELL};
use crate::util::{self, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Rfb,
    Msnn,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Rfb => "rfb",
            Mode::Msnn => "msnn",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Network to train.
    #[arg(long, value_enum)]
    pub mode: Mode,

    /// Dataset directory; falls back to QST_DATA_DIR.
    #[arg(long)]
    pub data: Option<PathBuf>,

    #[arg(long, default_value_t = 30)]
    pub epochs: usize,

    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,

    /// Seed for initialization, shuffling, and the stochastic layers.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    /// Fraction of each class held out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,

    /// Directory receiving checkpoints and the history log.
    #[arg(long)]
    pub checkpoint_out: PathBuf,

    /// Evaluate validation fidelity (and save a checkpoint) every this
    /// many epochs; zero disables both.
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
}

/// Validation metrics gathered by the per-epoch observer.
struct EpochEval {
    val_loss: f64,
    accuracy: Option<f64>,
    fidelity: Option<f64>,
}

pub fn run(args: &TrainArgs) -> CliResult {
    let dir = util::resolve_data_dir(args.data.clone(), "--data")?;
    util::print_config(
        "train",
        &[
            ("mode", args.mode.name().to_string()),
            ("data", dir.display().to_string()),
            ("epochs", args.epochs.to_string()),
            ("lr", args.lr.to_string()),
            ("seed", args.seed.to_string()),
            ("batch_size", args.batch_size.to_string()),
            ("val_fraction", args.val_fraction.to_string()),
            ("checkpoint_out", args.checkpoint_out.display().to_string()),
            ("eval_every", args.eval_every.to_string()),
        ],
    );

    let (records, manifest) = dataset::load(&dir)?;
    let (train_idx, val_idx) =
        dataset::split(&manifest, (1.0 - args.val_fraction, args.val_fraction), args.seed)?;
    if val_idx.is_empty() {
        return Err(CliError::Usage(format!(
            "--val-fraction {} leaves no validation records",
            args.val_fraction
        )));
    }
    println!("training on {} records, validating on {}", train_idx.len(), val_idx.len());
    fs::create_dir_all(&args.checkpoint_out)?;

    let geometry = manifest.geometry()?;
    let config = TrainConfig {
        optim: OptimConfig {
            learning_rate: args.lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: args.epochs,
            seed: args.seed,
        },
        batch_size: args.batch_size,
        checkpoint_stride: args.eval_every,
        checkpoint_dir: Some(args.checkpoint_out.clone()),
        divergence_limit: 1e8,
    };

    let (report, evals) = match args.mode {
        Mode::Rfb => {
            let build = |indices: &[usize]| -> CliResult<Vec<RfbSample>> {
                indices
                    .iter()
                    .map(|&i| {
                        let r = &records[i];
                        let grid = r.husimi_grid(&geometry)?;
                        Ok(RfbSample {
                            grid: normalize_for_net(&grid)?.values().to_vec(),
                            label: r.label as usize,
                            features: r.features,
                            truth: r.rho.clone(),
                        })
                    })
                    .collect()
            };
            let train_samples = build(&train_idx)?;
            let val_samples = build(&val_idx)?;
            let table = CoefficientTable::bundled();
            let mut model = RfbModel::new(args.seed);
            let mut evals: Vec<EpochEval> = Vec::with_capacity(args.epochs);
            let report = train_rfb_with(&mut model, &train_samples, &config, &mut |epoch, m| {
                let val_loss = rfb_validation_loss(m, &val_samples, args.batch_size)?;
                let mut eval = EpochEval { val_loss, accuracy: None, fidelity: None };
                if args.eval_every != 0 && epoch % args.eval_every == 0 {
                    let e = evaluate_rfb(m, &val_samples, manifest.dim, &table)?;
                    eval.accuracy = Some(e.accuracy);
                    eval.fidelity = Some(e.mean_fidelity);
                    println!(
                        "epoch {epoch}: val_loss={val_loss:.6} accuracy={:.4} fidelity={:.4}",
                        e.accuracy, e.mean_fidelity
                    );
                } else {
                    println!("epoch {epoch}: val_loss={val_loss:.6}");
                }
                evals.push(eval);
                Ok(())
            })?;
            save_checkpoint(
                &args.checkpoint_out.join("rfb-final.qstnn"),
                &Checkpoint::from_rfb(&model),
            )?;
            (report, evals)
        }
        Mode::Msnn => {
            let build = |indices: &[usize]| -> CliResult<Vec<MsSample>> {
                indices
                    .iter()
                    .map(|&i| {
                        let r = &records[i];
                        let grid = r.husimi_grid(&geometry)?;
                        Ok(MsSample {
                            grid_norm: normalize_for_net(&grid)?.values().to_vec(),
                            grid_raw: r.husimi.clone(),
                            label: r.label as usize,
                            truth: r.rho.clone(),
                        })
                    })
                    .collect()
            };
            let train_samples = build(&train_idx)?;
            let val_samples = build(&val_idx)?;
            let mut model = MsModel::new(args.seed);
            let mut evals: Vec<EpochEval> = Vec::with_capacity(args.epochs);
            let report = train_msnn_with(&mut model, &train_samples, &config, &mut |epoch, m| {
                let val_loss = msnn_validation_loss(m, &val_samples, args.batch_size)?;
                let mut eval = EpochEval { val_loss, accuracy: None, fidelity: None };
                if args.eval_every != 0 && epoch % args.eval_every == 0 {
                    let e = evaluate_msnn(m, &val_samples)?;
                    eval.fidelity = Some(e.mean_fidelity);
                    println!(
                        "epoch {epoch}: val_loss={val_loss:.6} fidelity={:.4}",
                        e.mean_fidelity
                    );
                } else {
                    println!("epoch {epoch}: val_loss={val_loss:.6}");
                }
                evals.push(eval);
                Ok(())
            })?;
            save_checkpoint(
                &args.checkpoint_out.join("msnn-final.qstnn"),
                &Checkpoint::from_msnn(&model),
            )?;
            (report, evals)
        }
    };

    write_history(args, &report, &evals)?;
    println!(
        "best epoch {} (training loss {:.6}); final checkpoint and history in {}",
        report.best_epoch,
        report.best_loss,
        args.checkpoint_out.display()
    );
    Ok(())
}

fn write_history(args: &TrainArgs, report: &TrainReport, evals: &[EpochEval]) -> CliResult {
    let mut table = Table::new(vec![
        "epoch",
        "train_loss",
        "val_loss",
        "val_accuracy",
        "val_fidelity",
    ]);
    table.meta("command", "train");
    table.meta("mode", args.mode.name());
    table.meta("epochs", args.epochs);
    table.meta("lr", args.lr);
    table.meta("seed", args.seed);
    table.meta("batch_size", args.batch_size);
    table.meta("val_fraction", args.val_fraction);
    table.meta("eval_every", args.eval_every);
    for (stats, eval) in report.epochs.iter().zip(evals) {
        table.row(vec![
            stats.epoch.to_string(),
            fmt_f64(stats.mean_loss),
            fmt_f64(eval.val_loss),
            eval.accuracy.map(fmt_f64).unwrap_or_else(|| EMPTY_CELL.into()),
            eval.fidelity.map(fmt_f64).unwrap_or_else(|| EMPTY_CELL.into()),
        ]);
    }
    let path = args.checkpoint_out.join("history.tsv");
    table.write(&path)?;
    println!("history written to {}", path.display());
    Ok(())
}
