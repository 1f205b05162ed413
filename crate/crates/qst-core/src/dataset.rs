//! Generation, sharding, and loading of the labeled Husimi corpus.
//!
//! A dataset is a directory holding binary record shards plus a TOML
//! manifest carrying the geometry, the class list, the global seed, and a
//! SHA-256 checksum per shard. Record generation is seeded per index, so
//! any single record can be regenerated and byte-compared against its
//! shard without touching its predecessors.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hilbert::{ComplexMatrix, DensityMatrix};
use crate::measurement::{GridGeometry, GridKets, HusimiGrid};
use crate::noise::{mix_with_random, pepper, photon_loss, NoiseKind, NoiseSpec};
use crate::states::{build_state, sample_spec, CoefficientTable, Family, StateSpec};
use crate::{par, C64};

/// Bumped only on layout changes; loaders reject anything else.
pub const FORMAT_VERSION: u32 = 1;

/// Leading bytes of every shard file.
pub const SHARD_MAGIC: &[u8; 6] = b"QSTDS1";

/// Records per shard file; the last shard holds the remainder.
pub const SHARD_CAPACITY: usize = 1000;

/// Truncation dimension pinned by the record layout.
pub const RECORD_DIM: usize = 32;

/// Grid points per record, side 32 squared.
const GRID_LEN: usize = 1024;

/// Fixed record footprint: label byte, six feature reals, interleaved
/// re/im density matrix, Husimi values, noise tag byte plus two reals.
pub const RECORD_STRIDE: usize = 1 + 6 * 8 + 2 * RECORD_DIM * RECORD_DIM * 8 + GRID_LEN * 8 + 1 + 2 * 8;

/// Seeds are stored in a shard's real-valued noise slot, so they must fit
/// a 53-bit mantissa exactly.
pub const MAX_STORED_SEED: u64 = (1 << 53) - 1;

const NOISE_TAG_NONE: u8 = 0;
const NOISE_TAG_MIXED: u8 = 1;
const NOISE_TAG_LOSS: u8 = 2;
const NOISE_TAG_PEPPER: u8 = 3;

/// One labeled sample: the family label, the sampled feature slots, the
/// ground-truth density matrix, and the (possibly corrupted) Husimi data.
/// For mixed-state and photon-loss corruption the stored truth is the
/// post-noise state, since that is the state the measurement actually saw;
/// pepper corrupts the data alone, so its truth stays pre-noise.
#[derive(Clone, Debug)]
pub struct DatasetRecord {
    pub label: u8,
    pub features: [f64; 6],
    pub rho: DensityMatrix,
    pub husimi: Vec<f64>,
    pub noise_applied: Option<NoiseSpec>,
}

impl DatasetRecord {
    /// Checks every stored-field invariant; the density matrix was already
    /// validated by its own constructor.
    pub fn validate(&self) -> Result<()> {
        StateSpec::from_stored(self.label, self.features, RECORD_DIM)?;
        if self.rho.dim() != RECORD_DIM {
            return Err(Error::DimensionMismatch(self.rho.dim(), RECORD_DIM));
        }
        if self.husimi.len() != GRID_LEN {
            return Err(Error::Inconsistency(format!(
                "husimi length {} != {GRID_LEN}",
                self.husimi.len()
            )));
        }
        if self.husimi.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Inconsistency(
                "husimi values must be finite and non-negative".into(),
            ));
        }
        if let Some(spec) = &self.noise_applied {
            spec.kind.validate()?;
            if spec.seed > MAX_STORED_SEED {
                return Err(Error::Inconsistency(format!(
                    "noise seed {} exceeds the 53-bit storage limit",
                    spec.seed
                )));
            }
        }
        Ok(())
    }

    /// The stored Husimi values wrapped back into a grid.
    pub fn husimi_grid(&self, geometry: &GridGeometry) -> Result<HusimiGrid> {
        HusimiGrid::new(geometry.clone(), self.husimi.clone())
    }
}

/// Shard listing inside a manifest: file name, record count, checksum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub records: usize,
    pub sha256: String,
}

/// Corruption channel recorded dataset-wide; per-record seeds vary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestNoise {
    pub kind: String,
    pub level: f64,
}

/// Dataset description stored as `manifest.toml` next to the shards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub grid_side: usize,
    pub grid_extent: f64,
    pub record_count: usize,
    pub classes: Vec<String>,
    pub global_seed: u64,
    pub class_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<ManifestNoise>,
    #[serde(default)]
    pub shards: Vec<ShardEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.dim != RECORD_DIM || self.grid_side * self.grid_side != GRID_LEN {
            return Err(Error::Inconsistency(format!(
                "geometry dim={} side={} does not match the record layout",
                self.dim, self.grid_side
            )));
        }
        if self.classes.is_empty() || self.classes.len() != self.class_counts.len() {
            return Err(Error::Inconsistency(
                "class list and class counts must align and be non-empty".into(),
            ));
        }
        if self.class_counts.iter().sum::<usize>() != self.record_count {
            return Err(Error::Inconsistency(format!(
                "class counts sum to {}, manifest says {} records",
                self.class_counts.iter().sum::<usize>(),
                self.record_count
            )));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.grid_side, self.grid_extent)
    }

    pub fn families(&self) -> Result<Vec<Family>> {
        self.classes.iter().map(|n| Family::from_name(n)).collect()
    }

    pub fn noise_kind(&self) -> Result<Option<NoiseKind>> {
        match &self.noise {
            None => Ok(None),
            Some(n) => Ok(Some(noise_kind_from_name(&n.kind, n.level)?)),
        }
    }
}

/// Canonical name/level pair for a noise channel, shared by manifests and
/// command-line flags.
pub fn noise_kind_name(kind: NoiseKind) -> (&'static str, f64) {
    match kind {
        NoiseKind::MixedState { zeta } => ("mixed", zeta),
        NoiseKind::PhotonLoss { gamma_tau } => ("photon-loss", gamma_tau),
        NoiseKind::Pepper { fraction } => ("pepper", fraction),
    }
}

pub fn noise_kind_from_name(name: &str, level: f64) -> Result<NoiseKind> {
    let kind = match name {
        "mixed" => NoiseKind::MixedState { zeta: level },
        "photon-loss" => NoiseKind::PhotonLoss { gamma_tau: level },
        "pepper" => NoiseKind::Pepper { fraction: level },
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "unknown noise kind {other:?}"
            )))
        }
    };
    kind.validate()?;
    Ok(kind)
}

/// splitmix64 finalizer; a full-avalanche mix of the 64-bit input.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for record `index`: the splitmix64 stream over the global seed,
/// masked to the 53 storable bits.
pub fn record_seed(global_seed: u64, index: u64) -> u64 {
    splitmix64(global_seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
        & MAX_STORED_SEED
}

/// Seed for the record's stochastic noise draws, decoupled from the spec
/// sampling stream so a stored `NoiseSpec` reproduces its draws alone.
pub fn noise_seed(spec_seed: u64) -> u64 {
    splitmix64(spec_seed) & MAX_STORED_SEED
}

fn generate_record(
    index: usize,
    global_seed: u64,
    families: &[Family],
    noise: Option<NoiseKind>,
    table: &CoefficientTable,
    kets: &GridKets,
) -> Result<DatasetRecord> {
    let family = families[index % families.len()];
    let spec_seed = record_seed(global_seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec_seed);
    let spec = sample_spec(family, RECORD_DIM, &mut rng)?;
    let clean = build_state(&spec, table)?;

    let draw_seed = noise_seed(spec_seed);
    let (truth, grid) = match noise {
        None => {
            let grid = kets.evaluate(&clean)?;
            (clean, grid)
        }
        Some(NoiseKind::MixedState { zeta }) => {
            let mut noise_rng = ChaCha8Rng::seed_from_u64(draw_seed);
            let noisy = mix_with_random(&clean, zeta, &mut noise_rng)?;
            let grid = kets.evaluate(&noisy)?;
            (noisy, grid)
        }
        Some(NoiseKind::PhotonLoss { gamma_tau }) => {
            let noisy = photon_loss(&clean, gamma_tau)?;
            let grid = kets.evaluate(&noisy)?;
            (noisy, grid)
        }
        Some(NoiseKind::Pepper { fraction }) => {
            let mut noise_rng = ChaCha8Rng::seed_from_u64(draw_seed);
            let grid = pepper(&kets.evaluate(&clean)?, fraction, &mut noise_rng)?;
            (clean, grid)
        }
    };

    // The measurement floor tolerates -1e-12 of eigensolver dust; records
    // store the mathematical Q >= 0, so negatives are clamped here.
    let husimi: Vec<f64> = grid
        .values()
        .iter()
        .map(|&v| if v < 0.0 { 0.0 } else { v })
        .collect();

    Ok(DatasetRecord {
        label: spec.label(),
        features: spec.features_as_reals(),
        rho: truth,
        husimi,
        noise_applied: noise.map(|kind| NoiseSpec {
            kind,
            seed: draw_seed,
        }),
    })
}

/// Generates `count` records round-robin over `classes`, writes them as
/// shards plus a manifest under `out_dir`, and returns the manifest. The
/// remainder of `count` over the class count lands on the first classes in
/// list order, one extra record each.
pub fn generate(
    count: usize,
    seed: u64,
    classes: &[Family],
    noise: Option<NoiseKind>,
    out_dir: &Path,
) -> Result<Manifest> {
    if classes.is_empty() || count < classes.len() {
        return Err(Error::InvalidParameter {
            name: "count",
            value: count as f64,
            expected: "at least one record per class",
        });
    }
    if seed > i64::MAX as u64 {
        return Err(Error::InvalidParameter {
            name: "seed",
            value: seed as f64,
            expected: "within the manifest's signed 64-bit range",
        });
    }
    if let Some(kind) = noise {
        kind.validate()?;
    }

    let table = CoefficientTable::bundled();
    let geometry = GridGeometry::standard();
    let kets = GridKets::new(&geometry, RECORD_DIM)?;

    let records: Result<Vec<DatasetRecord>> =
        par::map_indexed(count, |i| {
            generate_record(i, seed, classes, noise, &table, &kets)
                .map_err(|e| Error::Inconsistency(format!("record {i}: {e}")))
        })
        .into_iter()
        .collect();
    let records = records?;

    let n = classes.len();
    let class_counts: Vec<usize> = (0..n)
        .map(|k| count / n + usize::from(k < count % n))
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dim: RECORD_DIM,
        grid_side: geometry.side(),
        grid_extent: geometry.extent(),
        record_count: count,
        classes: classes.iter().map(|f| f.name().to_string()).collect(),
        global_seed: seed,
        class_counts,
        noise: noise.map(|kind| {
            let (name, level) = noise_kind_name(kind);
            ManifestNoise {
                kind: name.to_string(),
                level,
            }
        }),
        shards: Vec::new(),
    };

    save(&records, &manifest, out_dir)
}

/// Rebuilds the record at `index` from the manifest alone; byte-identical
/// to the shard content because generation is seeded per index.
pub fn regenerate_record(manifest: &Manifest, index: usize) -> Result<DatasetRecord> {
    manifest.validate()?;
    if index >= manifest.record_count {
        return Err(Error::Inconsistency(format!(
            "record index {index} outside 0..{}",
            manifest.record_count
        )));
    }
    let families = manifest.families()?;
    let noise = manifest.noise_kind()?;
    let table = CoefficientTable::bundled();
    let kets = GridKets::new(&manifest.geometry()?, RECORD_DIM)?;
    generate_record(
        index,
        manifest.global_seed,
        &families,
        noise,
        &table,
        &kets,
    )
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn encode_record(record: &DatasetRecord) -> Result<Vec<u8>> {
    record.validate()?;
    let mut buf = Vec::with_capacity(RECORD_STRIDE);
    buf.push(record.label);
    for v in record.features {
        push_f64(&mut buf, v);
    }
    let mat = record.rho.mat();
    for i in 0..RECORD_DIM {
        for j in 0..RECORD_DIM {
            let z = mat[(i, j)];
            push_f64(&mut buf, z.re);
            push_f64(&mut buf, z.im);
        }
    }
    for &v in &record.husimi {
        push_f64(&mut buf, v);
    }
    let (tag, level, seed) = match &record.noise_applied {
        None => (NOISE_TAG_NONE, 0.0, 0.0),
        Some(spec) => {
            let (tag, level) = match spec.kind {
                NoiseKind::MixedState { zeta } => (NOISE_TAG_MIXED, zeta),
                NoiseKind::PhotonLoss { gamma_tau } => (NOISE_TAG_LOSS, gamma_tau),
                NoiseKind::Pepper { fraction } => (NOISE_TAG_PEPPER, fraction),
            };
            (tag, level, spec.seed as f64)
        }
    };
    buf.push(tag);
    push_f64(&mut buf, level);
    push_f64(&mut buf, seed);
    debug_assert_eq!(buf.len(), RECORD_STRIDE);
    Ok(buf)
}

struct RecordReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RecordReader<'a> {
    fn u8(&mut self) -> u8 {
        let v = self.bytes[self.pos];
        self.pos += 1;
        v
    }

    fn f64(&mut self) -> f64 {
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&self.bytes[self.pos..self.pos + 8]);
        self.pos += 8;
        f64::from_le_bytes(raw)
    }
}

fn decode_record(bytes: &[u8]) -> Result<DatasetRecord> {
    debug_assert_eq!(bytes.len(), RECORD_STRIDE);
    let mut r = RecordReader { bytes, pos: 0 };
    let label = r.u8();
    let mut features = [0.0; 6];
    for slot in &mut features {
        *slot = r.f64();
    }
    let mut entries = Vec::with_capacity(RECORD_DIM * RECORD_DIM);
    for _ in 0..RECORD_DIM * RECORD_DIM {
        let re = r.f64();
        let im = r.f64();
        entries.push(C64::new(re, im));
    }
    let mat = ComplexMatrix::from_fn(RECORD_DIM, |i, j| entries[i * RECORD_DIM + j])?;
    let rho = DensityMatrix::new(mat)
        .map_err(|e| Error::Corruption(format!("stored density matrix invalid: {e}")))?;
    let husimi: Vec<f64> = (0..GRID_LEN).map(|_| r.f64()).collect();
    let tag = r.u8();
    let level = r.f64();
    let seed_real = r.f64();
    let noise_applied = if tag == NOISE_TAG_NONE {
        None
    } else {
        if !(seed_real >= 0.0
            && seed_real <= MAX_STORED_SEED as f64
            && seed_real.fract() == 0.0)
        {
            return Err(Error::Corruption(format!(
                "noise seed slot holds {seed_real}, not a 53-bit integer"
            )));
        }
        let kind = match tag {
            NOISE_TAG_MIXED => NoiseKind::MixedState { zeta: level },
            NOISE_TAG_LOSS => NoiseKind::PhotonLoss { gamma_tau: level },
            NOISE_TAG_PEPPER => NoiseKind::Pepper { fraction: level },
            other => {
                return Err(Error::Corruption(format!("unknown noise tag {other}")));
            }
        };
        Some(NoiseSpec {
            kind,
            seed: seed_real as u64,
        })
    };
    let record = DatasetRecord {
        label,
        features,
        rho,
        husimi,
        noise_applied,
    };
    record
        .validate()
        .map_err(|e| Error::Corruption(format!("stored record invalid: {e}")))?;
    Ok(record)
}

fn encode_shard(records: &[DatasetRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(SHARD_MAGIC.len() + records.len() * RECORD_STRIDE);
    buf.extend_from_slice(SHARD_MAGIC);
    for record in records {
        buf.extend_from_slice(&encode_record(record)?);
    }
    Ok(buf)
}

fn decode_shard(bytes: &[u8]) -> Result<Vec<DatasetRecord>> {
    if bytes.len() < SHARD_MAGIC.len() || &bytes[..SHARD_MAGIC.len()] != SHARD_MAGIC {
        return Err(Error::Corruption("shard magic missing".into()));
    }
    let payload = &bytes[SHARD_MAGIC.len()..];
    if payload.len() % RECORD_STRIDE != 0 {
        return Err(Error::Corruption(format!(
            "shard payload of {} bytes is not a whole number of records",
            payload.len()
        )));
    }
    payload
        .chunks_exact(RECORD_STRIDE)
        .map(decode_record)
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn shard_file_name(index: usize) -> String {
    format!("shard-{index:04}.qstds")
}

/// Writes the records as checksummed shards plus `manifest.toml` under
/// `dir`, returning the manifest with its shard table filled in.
pub fn save(records: &[DatasetRecord], manifest: &Manifest, dir: &Path) -> Result<Manifest> {
    manifest.validate()?;
    if records.len() != manifest.record_count {
        return Err(Error::Inconsistency(format!(
            "{} records supplied, manifest says {}",
            records.len(),
            manifest.record_count
        )));
    }
    fs::create_dir_all(dir)?;

    let mut written = manifest.clone();
    written.shards = Vec::new();
    for (i, chunk) in records.chunks(SHARD_CAPACITY).enumerate() {
        let bytes = encode_shard(chunk)?;
        let file = shard_file_name(i);
        fs::write(dir.join(&file), &bytes)?;
        written.shards.push(ShardEntry {
            file,
            records: chunk.len(),
            sha256: sha256_hex(&bytes),
        });
    }

    let text = toml::to_string_pretty(&written)
        .map_err(|e| Error::Inconsistency(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(written)
}

/// Loads a dataset directory, verifying the format version, every shard
/// checksum, and the record counts before any record is trusted.
pub fn load(dir: &Path) -> Result<(Vec<DatasetRecord>, Manifest)> {
    let text = fs::read_to_string(dir.join("manifest.toml"))?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::Corruption(format!("manifest parse: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "manifest format_version {} (this build reads {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    manifest.validate()?;

    let mut records = Vec::with_capacity(manifest.record_count);
    for entry in &manifest.shards {
        let bytes = fs::read(dir.join(&entry.file))?;
        let digest = sha256_hex(&bytes);
        if digest != entry.sha256 {
            return Err(Error::Corruption(format!(
                "checksum mismatch for {}: manifest {} vs file {digest}",
                entry.file, entry.sha256
            )));
        }
        let shard = decode_shard(&bytes)?;
        if shard.len() != entry.records {
            return Err(Error::Inconsistency(format!(
                "{} holds {} records, manifest says {}",
                entry.file,
                shard.len(),
                entry.records
            )));
        }
        records.extend(shard);
    }
    if records.len() != manifest.record_count {
        return Err(Error::Inconsistency(format!(
            "shards hold {} records, manifest says {}",
            records.len(),
            manifest.record_count
        )));
    }
    Ok((records, manifest))
}

/// Stratified train/validation index split over a generated dataset. The
/// index-to-class map is the manifest's round-robin rule, so the manifest
/// alone determines the split; per-class sizes are the rounded fractions,
/// with the validation side truncated before the train side overflows.
pub fn split(
    manifest: &Manifest,
    fractions: (f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    manifest.validate()?;
    let (train_frac, val_frac) = fractions;
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac <= 1.0 + 1e-12) {
        return Err(Error::InvalidParameter {
            name: "fractions",
            value: train_frac + val_frac,
            expected: "positive with sum at most 1",
        });
    }
    let n = manifest.classes.len();
    for (k, &count) in manifest.class_counts.iter().enumerate() {
        let implied = manifest.record_count / n + usize::from(k < manifest.record_count % n);
        if count != implied {
            return Err(Error::Inconsistency(format!(
                "class {k} holds {count} records where round-robin implies {implied}; \
                 stratification needs the generated layout"
            )));
        }
        if count < 2 {
            return Err(Error::Stratification { class: k });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for k in 0..n {
        let mut indices: Vec<usize> =
            (k..manifest.record_count).step_by(n).collect();
        indices.shuffle(&mut rng);
        let count = indices.len();
        let n_train = ((count as f64 * train_frac) + 0.5).floor() as usize;
        let n_train = n_train.min(count);
        let n_val = (((count as f64 * val_frac) + 0.5).floor() as usize).min(count - n_train);
        train.extend_from_slice(&indices[..n_train]);
        val.extend_from_slice(&indices[n_train..n_train + n_val]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
