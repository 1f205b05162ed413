//! `qst gen`: write a labeled Husimi-Q dataset to disk.

use std::path::PathBuf;

use clap::Args;
use qst_core::dataset;

use crate::util::{self, CliResult};

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Total record count, distributed round-robin over the classes.
    #[arg(long)]
    pub count: usize,

    /// Global dataset seed; every record derives its own stream from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Comma-separated family names; all seven when omitted.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,

    /// Corruption channel as kind:level, e.g. mixed:0.25, photon-loss:0.5,
    /// pepper:0.1. Omit for clean data.
    #[arg(long)]
    pub noise: Option<String>,

    /// Output directory; falls back to QST_DATA_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &GenArgs) -> CliResult {
    let out = util::resolve_data_dir(args.out.clone(), "--out")?;
    let classes = util::parse_classes(&args.classes)?;
    let noise = args.noise.as_deref().map(util::parse_noise).transpose()?;
    util::print_config(
        "gen",
        &[
            ("count", args.count.to_string()),
            ("seed", args.seed.to_string()),
            (
                "classes",
                classes.iter().map(|f| f.name()).collect::<Vec<_>>().join(","),
            ),
            ("noise", args.noise.clone().unwrap_or_else(|| "none".into())),
            ("out", out.display().to_string()),
        ],
    );

    let manifest = dataset::generate(args.count, args.seed, &classes, noise, &out)?;

    println!(
        "wrote {} records in {} shard(s) to {}",
        manifest.record_count,
        manifest.shards.len(),
        out.display()
    );
    for (name, count) in manifest.classes.iter().zip(&manifest.class_counts) {
        println!("  class {name}: {count}");
    }
    for shard in &manifest.shards {
        println!("shard {} records={} sha256={}", shard.file, shard.records, shard.sha256);
    }
    Ok(())
}
