//! `qst show`: render one record's Husimi grid as a graymap image.

use std::path::PathBuf;

use clap::Args;
use qst_core::dataset;

use crate::pgm;
use crate::util::{self, CliResult};

#[derive(Debug, Args)]
pub struct ShowArgs {
    /// Dataset directory; falls back to QST_DATA_DIR.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Record index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,

    /// Destination image path (binary 8-bit PGM, 32x32).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &ShowArgs) -> CliResult {
    let dir = util::resolve_data_dir(args.input.clone(), "--input")?;
    util::print_config(
        "show",
        &[
            ("input", dir.display().to_string()),
            ("index", args.index.to_string()),
            ("out", args.out.display().to_string()),
        ],
    );

    let (records, manifest) = dataset::load(&dir)?;
    let record = util::pick_record(&records, args.index)?;
    pgm::write_pgm(&args.out, manifest.grid_side, &record.husimi)?;

    let peak = record.husimi.iter().copied().fold(0.0_f64, f64::max);
    println!(
        "wrote {} (label {}, peak Q = {peak:.6})",
        args.out.display(),
        record.label
    );
    Ok(())
}
