//! Generators for the seven bosonic state families and their parameter
//! sampling.
//!
//! Every family maps onto a canonical 3-slot complex feature vector so one
//! record layout serves the whole dataset:
//!
//! | family   | f1   | f2 | f3 |
//! |----------|------|----|----|
//! | Fock     | n    | 0  | 0  |
//! | Coherent | α    | 0  | 0  |
//! | Thermal  | n_th | 0  | 0  |
//! | Cat      | α    | S  | r  |
//! | Num      | n̄    | 0  | 0  |
//! | Binomial | S    | N  | μ  |
//! | Gkp      | μ    | δ  | 0  |
//!
//! Integer-valued slots hold exact integers in the real part. Sampling draws
//! uniformly inside each constraint region and rejects states whose mean
//! photon number exceeds [`MAX_MEAN_PHOTON`].

use crate::error::{Error, Result};
use crate::hilbert::{displacement_op, ComplexMatrix, DensityMatrix};
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::Deserialize;

const CZERO: C64 = C64::new(0.0, 0.0);

/// States with a larger mean photon number are resampled.
pub const MAX_MEAN_PHOTON: f64 = 16.0;

/// The n̄ values the sampler draws for the Num family.
pub const NUM_N_BAR_SET: [f64; 5] = [1.56, 2.67, 2.77, 4.15, 4.34];

// ── Families and specs ──────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Fock,
    Coherent,
    Thermal,
    Cat,
    Num,
    Binomial,
    Gkp,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Fock,
        Family::Coherent,
        Family::Thermal,
        Family::Cat,
        Family::Num,
        Family::Binomial,
        Family::Gkp,
    ];

    /// Class index used by labels, one-hot encodings, and record headers.
    pub fn label(self) -> u8 {
        match self {
            Family::Fock => 0,
            Family::Coherent => 1,
            Family::Thermal => 2,
            Family::Cat => 3,
            Family::Num => 4,
            Family::Binomial => 5,
            Family::Gkp => 6,
        }
    }

    pub fn from_label(label: u8) -> Result<Family> {
        Family::ALL
            .get(label as usize)
            .copied()
            .ok_or(Error::InvalidParameter {
                name: "family label",
                value: label as f64,
                expected: "0..=6",
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Fock => "fock",
            Family::Coherent => "coherent",
            Family::Thermal => "thermal",
            Family::Cat => "cat",
            Family::Num => "num",
            Family::Binomial => "binomial",
            Family::Gkp => "gkp",
        }
    }

    pub fn from_name(name: &str) -> Result<Family> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == name)
            .ok_or(Error::UnsupportedFormat(format!("unknown family {name:?}")))
    }
}

/// A family tag plus its canonical feature slots; the unit of dataset
/// labeling and of regeneration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateSpec {
    pub family: Family,
    pub features: [C64; 3],
    pub dim: usize,
}

fn as_exact_int(z: C64, name: &'static str, lo: i64, hi: i64) -> Result<i64> {
    let r = z.re.round();
    if z.im != 0.0 || z.re != r || r < lo as f64 || r > hi as f64 {
        return Err(Error::InvalidParameter {
            name,
            value: z.re,
            expected: "exact integer in range",
        });
    }
    Ok(r as i64)
}

fn require_zero(z: C64, name: &'static str) -> Result<()> {
    if z != CZERO {
        return Err(Error::InvalidParameter {
            name,
            value: z.norm(),
            expected: "exactly 0",
        });
    }
    Ok(())
}

impl StateSpec {
    pub fn new(family: Family, features: [C64; 3], dim: usize) -> Result<Self> {
        let spec = StateSpec {
            family,
            features,
            dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the feature slots against the family's constraint region.
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidDimension(self.dim));
        }
        let [f1, f2, f3] = self.features;
        match self.family {
            Family::Fock => {
                let n = as_exact_int(f1, "fock n", 1, 16)?;
                if n as usize >= self.dim {
                    return Err(Error::CutoffViolation {
                        index: n as usize,
                        dim: self.dim,
                    });
                }
                require_zero(f2, "fock f2")?;
                require_zero(f3, "fock f3")
            }
            Family::Coherent => {
                let m2 = f1.norm_sqr();
                if !(1e-6..=3.0).contains(&m2) {
                    return Err(Error::InvalidParameter {
                        name: "coherent |α|²",
                        value: m2,
                        expected: "[1e-6, 3]",
                    });
                }
                require_zero(f2, "coherent f2")?;
                require_zero(f3, "coherent f3")
            }
            Family::Thermal => {
                if f1.im != 0.0 || !(1.0..=16.0).contains(&f1.re) {
                    return Err(Error::InvalidParameter {
                        name: "thermal n_th",
                        value: f1.re,
                        expected: "[1, 16]",
                    });
                }
                require_zero(f2, "thermal f2")?;
                require_zero(f3, "thermal f3")
            }
            Family::Cat => {
                let m = f1.norm();
                if !(1.0..=3.0).contains(&m) {
                    return Err(Error::InvalidParameter {
                        name: "cat |α|",
                        value: m,
                        expected: "[1, 3]",
                    });
                }
                let s = as_exact_int(f2, "cat S", 0, 2)?;
                as_exact_int(f3, "cat r", 0, 2 * s + 1)?;
                Ok(())
            }
            Family::Num => {
                if f1.im != 0.0
                    || !NUM_N_BAR_SET
                        .iter()
                        .any(|k| (k - f1.re).abs() <= 1e-6)
                {
                    return Err(Error::InvalidParameter {
                        name: "num n̄",
                        value: f1.re,
                        expected: "one of the tabulated n̄ values",
                    });
                }
                require_zero(f2, "num f2")?;
                require_zero(f3, "num f3")
            }
            Family::Binomial => {
                let s = as_exact_int(f1, "binomial S", 0, 2)?;
                let n_hi = binomial_n_max(s as usize, self.dim)? as i64;
                as_exact_int(f2, "binomial N", 2, n_hi)?;
                as_exact_int(f3, "binomial μ", 0, 1)?;
                Ok(())
            }
            Family::Gkp => {
                as_exact_int(f1, "gkp μ", 0, 1)?;
                if f2.im != 0.0 || !(0.2..=0.5).contains(&f2.re) {
                    return Err(Error::InvalidParameter {
                        name: "gkp δ",
                        value: f2.re,
                        expected: "[0.2, 0.5]",
                    });
                }
                require_zero(f3, "gkp f3")
            }
        }
    }

    pub fn label(&self) -> u8 {
        self.family.label()
    }

    /// Feature slots flattened to (re, im) pairs for fixed-width storage.
    pub fn features_as_reals(&self) -> [f64; 6] {
        let [a, b, c] = self.features;
        [a.re, a.im, b.re, b.im, c.re, c.im]
    }

    pub fn from_stored(label: u8, reals: [f64; 6], dim: usize) -> Result<StateSpec> {
        let family = Family::from_label(label)?;
        let features = [
            C64::new(reals[0], reals[1]),
            C64::new(reals[2], reals[3]),
            C64::new(reals[4], reals[5]),
        ];
        StateSpec::new(family, features, dim)
    }
}

// ── Kets ────────────────────────────────────────────────────────────────

/// Normalized pure-state amplitude vector in the Fock basis.
#[derive(Clone, Debug)]
pub struct KetVector {
    dim: usize,
    amplitudes: Vec<C64>,
}

impl KetVector {
    /// Normalizes the given amplitudes; errors if they are numerically zero.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::DegenerateState { norm });
        }
        let amplitudes = amplitudes.into_iter().map(|z| z / norm).collect();
        Ok(KetVector { dim, amplitudes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// Outer product |ψ⟩⟨ψ|.
    pub fn density(&self) -> Result<DensityMatrix> {
        let a = &self.amplitudes;
        let mat = ComplexMatrix::from_fn(self.dim, |i, j| a[i] * a[j].conj())?;
        DensityMatrix::from_psd_construction(mat, Some(1.0))
    }
}

/// Truncated coherent ket D(α)|0⟩, the displacement operator's first column.
/// Exactly normalized because the truncated D(α) is unitary.
pub fn displaced_vacuum(alpha: C64, dim: usize) -> Result<Vec<C64>> {
    let d = displacement_op(alpha, dim)?;
    Ok((0..dim).map(|i| d[(i, 0)]).collect())
}

/// Analytic coherent amplitudes e^{−|α|²/2} αⁿ/√(n!), truncated without
/// renormalizing; the tail mass beyond the cutoff is simply dropped. Used
/// where amplitude vectors are accumulated rather than states prepared.
pub fn coherent_amplitudes(alpha: C64, dim: usize) -> Vec<C64> {
    let mut amps = vec![CZERO; dim];
    amps[0] = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..dim - 1 {
        amps[n + 1] = amps[n] * alpha / ((n + 1) as f64).sqrt();
    }
    amps
}

// ── Generators ──────────────────────────────────────────────────────────

/// Photon-number eigenstate |n⟩⟨n|.
pub fn fock_state(n: usize, dim: usize) -> Result<DensityMatrix> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    if n >= dim {
        return Err(Error::CutoffViolation { index: n, dim });
    }
    let mat = ComplexMatrix::from_fn(dim, |i, j| {
        if i == n && j == n {
            C64::new(1.0, 0.0)
        } else {
            CZERO
        }
    })?;
    DensityMatrix::from_psd_construction(mat, Some(1.0))
}

/// Displaced vacuum |α⟩⟨α| with the truncated displacement operator.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<DensityMatrix> {
    KetVector::new(displaced_vacuum(alpha, dim)?)?.density()
}

/// Thermal state: diagonal p_n ∝ (n_th/(n_th+1))ⁿ/(n_th+1), renormalized
/// over the truncated basis so the dropped geometric tail does not dent the
/// trace.
pub fn thermal_state(n_th: f64, dim: usize) -> Result<DensityMatrix> {
    if !n_th.is_finite() || n_th < 0.0 {
        return Err(Error::InvalidParameter {
            name: "n_th",
            value: n_th,
            expected: "nonnegative real",
        });
    }
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let x = n_th / (n_th + 1.0);
    let mut p = vec![0.0f64; dim];
    let mut w = 1.0 / (n_th + 1.0);
    for pn in p.iter_mut() {
        *pn = w;
        w *= x;
    }
    let total: f64 = p.iter().sum();
    let mat = ComplexMatrix::from_fn(dim, |i, j| {
        if i == j {
            C64::new(p[i] / total, 0.0)
        } else {
            CZERO
        }
    })?;
    let purity = p.iter().map(|q| (q / total).powi(2)).sum();
    DensityMatrix::from_psd_construction(mat, Some(purity))
}

/// Cat state: the equal-weight superposition of the 2(S+1) coherent
/// components |α e^{iπk/(S+1)}⟩ projected onto Fock indices
/// n ≡ r (mod 2(S+1)).
///
/// The superposition-then-project composition equals projecting the single
/// ket D(α)|0⟩, because summing the component phases e^{iπk(n−r)/(S+1)}
/// annihilates every other residue class; the truncated displacement obeys
/// the same parity algebra (P D(α) P = D(−α) holds exactly for the truncated
/// matrices), so this identity is exact at any cutoff. Building it this way
/// costs one displacement instead of 2(S+1).
pub fn cat_state(alpha: C64, s: usize, r: usize, dim: usize) -> Result<DensityMatrix> {
    if s > 2 {
        return Err(Error::InvalidParameter {
            name: "cat S",
            value: s as f64,
            expected: "{0, 1, 2}",
        });
    }
    let modulus = 2 * (s + 1);
    if r >= modulus {
        return Err(Error::InvalidParameter {
            name: "cat r",
            value: r as f64,
            expected: "0..=2S+1",
        });
    }
    let ket = displaced_vacuum(alpha, dim)?;
    let projected: Vec<C64> = ket
        .iter()
        .enumerate()
        .map(|(n, &c)| if n % modulus == r { c } else { CZERO })
        .collect();
    let norm = projected.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::DegenerateProjection { norm });
    }
    KetVector::new(projected)?.density()
}

/// Row of the Num coefficient table: a target mean photon number and the
/// Fock amplitudes realizing it.
#[derive(Clone, Debug)]
pub struct NumEntry {
    pub n_bar: f64,
    pub amplitudes: Vec<(usize, C64)>,
}

#[derive(Deserialize)]
struct RawAmplitude {
    fock_index: usize,
    re: f64,
    im: f64,
}

#[derive(Deserialize)]
struct RawEntry {
    n_bar: f64,
    amplitudes: Vec<RawAmplitude>,
}

#[derive(Deserialize)]
struct RawTable {
    entries: Vec<RawEntry>,
}

/// Coefficient table for numerically optimized states, keyed by n̄.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    entries: Vec<NumEntry>,
}

impl CoefficientTable {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawTable = serde_json::from_str(text)
            .map_err(|e| Error::UnsupportedFormat(format!("coefficient table: {e}")))?;
        let entries = raw
            .entries
            .into_iter()
            .map(|e| NumEntry {
                n_bar: e.n_bar,
                amplitudes: e
                    .amplitudes
                    .into_iter()
                    .map(|a| (a.fock_index, C64::new(a.re, a.im)))
                    .collect(),
            })
            .collect();
        Ok(CoefficientTable { entries })
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// The table compiled into the crate. Placeholder values; see the note
    /// inside the asset file.
    pub fn bundled() -> Self {
        Self::from_json_str(include_str!("../assets/num_coefficients.json"))
            .expect("bundled coefficient table parses")
    }

    /// Exact key match after rounding to 1e−6.
    pub fn lookup(&self, n_bar: f64) -> Result<&NumEntry> {
        let key = (n_bar * 1e6).round();
        self.entries
            .iter()
            .find(|e| (e.n_bar * 1e6).round() == key)
            .ok_or(Error::MissingCoefficient(n_bar))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Numerically optimized code state, built from a coefficient-table entry
/// and normalized (so pre-normalized and raw coefficient sets agree).
pub fn num_state(n_bar: f64, dim: usize, table: &CoefficientTable) -> Result<DensityMatrix> {
    let entry = table.lookup(n_bar)?;
    let mut amps = vec![CZERO; dim.max(2)];
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    for &(idx, c) in &entry.amplitudes {
        if idx >= dim {
            return Err(Error::CutoffViolation { index: idx, dim });
        }
        amps[idx] += c;
    }
    KetVector::new(amps)?.density()
}

/// Largest admissible binomial N for spacing S at the given cutoff: the top
/// occupied level (S+1)(N+1) must stay below dim, and Table I additionally
/// caps N at dim/(S+1) − 1.
pub fn binomial_n_max(s: usize, dim: usize) -> Result<usize> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let table_cap = (dim / (s + 1)) as i64 - 1;
    let cutoff_cap = ((dim - 1) / (s + 1)) as i64 - 1;
    let n_max = table_cap.min(cutoff_cap);
    if n_max < 2 {
        return Err(Error::InvalidParameter {
            name: "binomial N range",
            value: n_max as f64,
            expected: "cutoff admits N ≥ 2",
        });
    }
    Ok(n_max as usize)
}

fn binom_coeff(n: usize, k: usize) -> f64 {
    // exact in f64 for n ≤ 64
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Binomial code state: amplitudes (−1)^{μm} √(C(N+1,m)/2^{N+1}) on Fock
/// levels (S+1)m, m = 0…N+1. The norm is exactly 1 since ΣC(N+1,m) = 2^{N+1}.
pub fn binomial_state(s: usize, n: usize, mu: usize, dim: usize) -> Result<DensityMatrix> {
    if mu > 1 {
        return Err(Error::InvalidParameter {
            name: "binomial μ",
            value: mu as f64,
            expected: "{0, 1}",
        });
    }
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let top = (s + 1) * (n + 1);
    if top >= dim {
        return Err(Error::CutoffViolation { index: top, dim });
    }
    let scale = 0.5f64.powi((n + 1) as i32);
    let mut amps = vec![CZERO; dim];
    for m in 0..=(n + 1) {
        let sign = if mu == 1 && m % 2 == 1 { -1.0 } else { 1.0 };
        amps[(s + 1) * m] = C64::new(sign * (binom_coeff(n + 1, m) * scale).sqrt(), 0.0);
    }
    KetVector::new(amps)?.density()
}

/// Lattice terms with envelope weight below this are skipped.
pub const GKP_ENVELOPE_CUTOFF: f64 = 1e-12;

/// Finite-energy GKP state: Σ_{α∈K(μ)} e^{−δ²|α|²} e^{−i Re[α] Im[α]} |α⟩
/// over the lattice K(μ) = √(π/2)(2n₁+μ) + i√(π/2)n₂ with n₁, n₂ ∈ [−20, 20],
/// accumulated as analytic coherent amplitude vectors and normalized at the
/// end.
pub fn gkp_state(mu: usize, delta: f64, dim: usize) -> Result<DensityMatrix> {
    if mu > 1 {
        return Err(Error::InvalidParameter {
            name: "gkp μ",
            value: mu as f64,
            expected: "{0, 1}",
        });
    }
    if !(0.2..=0.5).contains(&delta) {
        return Err(Error::InvalidParameter {
            name: "gkp δ",
            value: delta,
            expected: "[0.2, 0.5]",
        });
    }
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let step = (std::f64::consts::PI / 2.0).sqrt();
    let mut acc = vec![CZERO; dim];
    for n1 in -20i32..=20 {
        for n2 in -20i32..=20 {
            let re = step * (2 * n1 + mu as i32) as f64;
            let im = step * n2 as f64;
            let weight = (-delta * delta * (re * re + im * im)).exp();
            if weight < GKP_ENVELOPE_CUTOFF {
                continue;
            }
            let phase = C64::new(0.0, -re * im).exp();
            let coeff = phase * weight;
            let amps = coherent_amplitudes(C64::new(re, im), dim);
            for (a, c) in acc.iter_mut().zip(&amps) {
                *a += coeff * c;
            }
        }
    }
    let norm = acc.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::DegenerateState { norm });
    }
    KetVector::new(acc)?.density()
}

/// Applies the displacement D(β) to a state; augmentation utility, not part
/// of the default sampling path. Rejects results pushed past the photon
/// budget.
pub fn displace_state(rho: &DensityMatrix, beta: C64) -> Result<DensityMatrix> {
    let d = displacement_op(beta, rho.dim())?;
    let moved = d.matmul(rho.mat()).matmul(&d.dagger());
    let out = DensityMatrix::from_psd_construction(moved, rho.purity_hint())?;
    let mean = out.mean_photon();
    if mean > MAX_MEAN_PHOTON {
        return Err(Error::InvalidParameter {
            name: "displaced mean photon",
            value: mean,
            expected: "≤ 16",
        });
    }
    Ok(out)
}

// ── Sampling and dispatch ───────────────────────────────────────────────

fn complex_from_modulus_sqr(m2_lo: f64, m2_hi: f64, rng: &mut impl Rng) -> C64 {
    let m2 = rng.gen_range(m2_lo..=m2_hi);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    C64::from_polar(m2.sqrt(), phase)
}

/// Draws a StateSpec uniformly inside the family's constraint region,
/// resampling (up to 100 times) any draw whose state carries mean photon
/// number above [`MAX_MEAN_PHOTON`].
pub fn sample_spec(family: Family, dim: usize, rng: &mut impl Rng) -> Result<StateSpec> {
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let features = match family {
            Family::Fock => {
                let n = rng.gen_range(1..=16i64).min(dim as i64 - 1);
                [C64::new(n as f64, 0.0), CZERO, CZERO]
            }
            Family::Coherent => [complex_from_modulus_sqr(1e-6, 3.0, rng), CZERO, CZERO],
            Family::Thermal => {
                let n_th = rng.gen_range(1..=16i64);
                [C64::new(n_th as f64, 0.0), CZERO, CZERO]
            }
            Family::Cat => {
                let alpha = complex_from_modulus_sqr(1.0, 9.0, rng);
                let s = rng.gen_range(0..=2i64);
                let r = rng.gen_range(0..=2 * s + 1);
                [alpha, C64::new(s as f64, 0.0), C64::new(r as f64, 0.0)]
            }
            Family::Num => {
                let n_bar = NUM_N_BAR_SET[rng.gen_range(0..NUM_N_BAR_SET.len())];
                [C64::new(n_bar, 0.0), CZERO, CZERO]
            }
            Family::Binomial => {
                let s = rng.gen_range(0..=2i64) as usize;
                let n = rng.gen_range(2..=binomial_n_max(s, dim)?);
                let mu = rng.gen_range(0..=1i64);
                [
                    C64::new(s as f64, 0.0),
                    C64::new(n as f64, 0.0),
                    C64::new(mu as f64, 0.0),
                ]
            }
            Family::Gkp => {
                let mu = rng.gen_range(0..=1i64);
                let delta = rng.gen_range(0.2..=0.5);
                [C64::new(mu as f64, 0.0), C64::new(delta, 0.0), CZERO]
            }
        };
        let spec = StateSpec {
            family,
            features,
            dim,
        };
        let mean = match family {
            Family::Fock => features[0].re,
            Family::Coherent => features[0].norm_sqr(),
            // exact mean of the entry by table construction
            Family::Num => features[0].re,
            // (S+1)(N+1)/2 by the symmetry of the binomial weights
            Family::Binomial => (features[0].re + 1.0) * (features[1].re + 1.0) / 2.0,
            // the truncated tail shifts these; measure the built state
            Family::Thermal | Family::Cat | Family::Gkp => {
                build_state(&spec, &CoefficientTable::bundled())?.mean_photon()
            }
        };
        if mean <= MAX_MEAN_PHOTON {
            return Ok(spec);
        }
    }
    Err(Error::SamplingFailure {
        family: family.name(),
        attempts: ATTEMPTS,
    })
}

/// Builds the density matrix a spec describes.
pub fn build_state(spec: &StateSpec, table: &CoefficientTable) -> Result<DensityMatrix> {
    spec.validate()?;
    let [f1, f2, f3] = spec.features;
    match spec.family {
        Family::Fock => fock_state(f1.re as usize, spec.dim),
        Family::Coherent => coherent_state(f1, spec.dim),
        Family::Thermal => thermal_state(f1.re, spec.dim),
        Family::Cat => cat_state(f1, f2.re as usize, f3.re as usize, spec.dim),
        Family::Num => num_state(f1.re, spec.dim, table),
        Family::Binomial => binomial_state(f1.re as usize, f2.re as usize, f3.re as usize, spec.dim),
        Family::Gkp => gkp_state(f1.re as usize, f2.re, spec.dim),
    }
}
