//! Deterministic Sobol' point sets on `[0,1)^d` and their randomizations.
//!
//! Point sets carry a provenance record and regenerate bit-identically from
//! it. Coordinates live on the `2^-32` grid (32 fractional bits) and are
//! exposed as `f64`.

mod discrepancy;
mod scramble;
mod sobol;

pub use discrepancy::{dyadic_balance, star_discrepancy};
pub use scramble::{draw_digital_masks, draw_shift_bits, owen_scramble_coord};
pub use sobol::{bits_to_unit, sobol_bits, sobol_coord_bits, MAX_DIMENSION, MAX_LOG2N, SOBOL_BITS};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// How a point set was randomized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RandomizationKind {
    #[default]
    None,
    RandomShift,
    DigitalShift,
    OwenScramble,
}

/// Randomization scheme plus its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomizationSpec {
    pub kind: RandomizationKind,
    pub seed: u64,
}

impl RandomizationSpec {
    pub fn none() -> Self {
        Self { kind: RandomizationKind::None, seed: 0 }
    }

    pub fn owen(seed: u64) -> Self {
        Self { kind: RandomizationKind::OwenScramble, seed }
    }
}

/// Generation record sufficient to rebuild a point set bit-identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Underlying deterministic sequence. Only Sobol' is implemented.
    pub sequence: String,
    pub log2n: u32,
    pub randomization: RandomizationKind,
    pub seed: Option<u64>,
    /// First sequence index included (1 when the origin is skipped).
    pub index_offset: u64,
}

/// An `n x d` point set in `[0,1)^d` with provenance.
#[derive(Debug, Clone)]
pub struct PointSet {
    bits: Array2<u32>,
    points: Array2<f64>,
    provenance: Provenance,
}

impl PointSet {
    fn from_bits(bits: Array2<u32>, provenance: Provenance) -> Self {
        let points = bits.mapv(bits_to_unit);
        Self { bits, points, provenance }
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    /// Points as reals in `[0,1)`, row-major `n x d`.
    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    /// Raw 32-bit fractions.
    pub fn bits(&self) -> &Array2<u32> {
        &self.bits
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn star_discrepancy(&self) -> Result<f64> {
        star_discrepancy(self.points.view())
    }
}

/// The first `2^m` Sobol' points in dimension `d`, natural index order,
/// origin included.
pub fn sobol_points(d: usize, m: u32) -> Result<PointSet> {
    sobol_points_opts(d, m, false)
}

/// As [`sobol_points`], with `skip_origin` shifting the index window to
/// start at sequence index 1 (the origin maps to `-inf` under the logit,
/// so downstream transports may want it gone).
pub fn sobol_points_opts(d: usize, m: u32, skip_origin: bool) -> Result<PointSet> {
    let offset = u64::from(skip_origin);
    let raw = sobol_bits(d, m, offset)?;
    let n = 1usize << m;
    let bits = Array2::from_shape_vec((n, d), raw).expect("shape");
    Ok(PointSet::from_bits(
        bits,
        Provenance {
            sequence: "sobol".into(),
            log2n: m,
            randomization: RandomizationKind::None,
            seed: None,
            index_offset: offset,
        },
    ))
}

/// Applies a randomization scheme. Valid on any point set; marginal
/// uniformity of the output assumes the input is unrandomized.
pub fn randomize(ps: &PointSet, spec: &RandomizationSpec) -> PointSet {
    let d = ps.d();
    let bits = match spec.kind {
        RandomizationKind::None => ps.bits.clone(),
        RandomizationKind::RandomShift => {
            let delta = draw_shift_bits(d, spec.seed);
            shift_bits(&ps.bits, &delta)
        }
        RandomizationKind::DigitalShift => {
            let masks = draw_digital_masks(d, spec.seed);
            let mut b = ps.bits.clone();
            for (j, &mask) in masks.iter().enumerate() {
                b.column_mut(j).mapv_inplace(|x| x ^ mask);
            }
            b
        }
        RandomizationKind::OwenScramble => {
            let mut b = ps.bits.clone();
            for j in 0..d {
                b.column_mut(j)
                    .mapv_inplace(|x| owen_scramble_coord(x, j, spec.seed));
            }
            b
        }
    };
    let provenance = Provenance {
        randomization: spec.kind,
        seed: Some(spec.seed),
        ..ps.provenance.clone()
    };
    PointSet::from_bits(bits, provenance)
}

/// Random shift with an explicit offset vector (quantized to the 32-bit
/// grid). `randomize` draws the offset from the seed; tests inject
/// degenerate offsets here.
pub fn apply_random_shift(ps: &PointSet, delta: &[f64]) -> PointSet {
    assert_eq!(delta.len(), ps.d(), "shift dimension mismatch");
    let delta_bits: Vec<u32> = delta
        .iter()
        .map(|&x| ((x.rem_euclid(1.0)) * 4294967296.0).round() as u64 as u32)
        .collect();
    let bits = shift_bits(&ps.bits, &delta_bits);
    let provenance = Provenance {
        randomization: RandomizationKind::RandomShift,
        ..ps.provenance.clone()
    };
    PointSet::from_bits(bits, provenance)
}

/// Mixes a base seed with a stream index into an independent child seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    scramble::mix64(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn shift_bits(bits: &Array2<u32>, delta: &[u32]) -> Array2<u32> {
    let mut out = bits.clone();
    for (j, &dj) in delta.iter().enumerate() {
        out.column_mut(j).mapv_inplace(|x| x.wrapping_add(dj));
    }
    out
}
