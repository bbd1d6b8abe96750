//! Photon-counting acquisition behind a programmable mask.
//!
//! Each exposure switches a ±1 mask onto the facet image and counts
//! herald-signal coincidences on a bucket detector for a fixed integration
//! time. The expected rate has three parts:
//!
//! * true coincidences: the all-ON coincidence rate times the fraction of
//!   image intensity under the ON pixels;
//! * accidental coincidences: herald singles times signal singles times the
//!   coincidence window, with the signal singles apportioned by the same ON
//!   fraction;
//! * a dark floor on the signal arm that survives even an all-OFF mask.
//!
//! Counts are Poisson samples drawn from per-record seeds derived from the
//! master seed by position, so each record is reproducible on its own and a
//! partial acquisition is a bit-exact prefix of a longer one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facet::{PixelImage, SuperpixelAssignment};
use crate::masks::{Mask, MaskSet};
use crate::walk::ModeSpectrum;

/// Source and detector rates of the simulated setup. Defaults match the
/// reference experiment: 5e5 pairs/s at the source, 25% heralding, 2% system
/// transmission, 1.9e6 herald singles/s, 4.5e3 signal singles/s, 1e3
/// coincidences/s with every pixel ON, a 16 ns window and a 100/s dark floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceDetectorModel {
    /// Photon pairs per second leaving the source.
    pub pair_rate: f64,
    /// Probability that a signal photon has a detected herald partner.
    pub heralding_efficiency: f64,
    /// End-to-end transmission of the signal arm.
    pub system_transmission: f64,
    /// Singles rate on the herald detector (1/s).
    pub herald_singles_rate: f64,
    /// Singles rate on the signal detector with every pixel ON (1/s).
    pub signal_singles_rate: f64,
    /// True coincidence rate with every pixel ON (1/s).
    pub coincidence_rate: f64,
    /// Coincidence window (s).
    pub coincidence_window: f64,
    /// Signal-arm dark rate that does not depend on the mask (1/s).
    pub signal_dark_rate: f64,
}

impl Default for SourceDetectorModel {
    fn default() -> Self {
        Self {
            pair_rate: 5e5,
            heralding_efficiency: 0.25,
            system_transmission: 0.02,
            herald_singles_rate: 1.9e6,
            signal_singles_rate: 4.5e3,
            coincidence_rate: 1e3,
            coincidence_window: 16e-9,
            signal_dark_rate: 100.0,
        }
    }
}

impl SourceDetectorModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pair_rate", self.pair_rate),
            ("heralding_efficiency", self.heralding_efficiency),
            ("system_transmission", self.system_transmission),
            ("herald_singles_rate", self.herald_singles_rate),
            ("signal_singles_rate", self.signal_singles_rate),
            ("coincidence_rate", self.coincidence_rate),
            ("coincidence_window", self.coincidence_window),
            ("signal_dark_rate", self.signal_dark_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("heralding_efficiency", self.heralding_efficiency),
            ("system_transmission", self.system_transmission),
        ] {
            if v > 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} is a fraction, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// The model with accidental and dark contributions switched off.
    fn noiseless(&self) -> Self {
        Self {
            signal_singles_rate: 0.0,
            signal_dark_rate: 0.0,
            ..self.clone()
        }
    }
}

/// Whether an exposure uses the +1 or the -1 pixels of a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Whether counts are Poisson samples or rounded expectations with the
/// accidental and dark contributions removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    On,
    Off,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(NoiseMode::On),
            "off" => Ok(NoiseMode::Off),
            other => Err(Error::InvalidParameter(format!(
                "noise mode must be 'on' or 'off', got '{other}'"
            ))),
        }
    }
}

/// One differential exposure: the counts seen with a mask and with its
/// complement, plus everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    /// Position of the mask in the measurement ordering.
    pub mask_index: usize,
    /// The mask's natural Hadamard row index.
    pub natural_row: usize,
    pub counts_pos: u64,
    pub counts_neg: u64,
    /// Integration time per polarity (s).
    pub integration_time: f64,
    /// Seed this record's samples were drawn from.
    pub rng_seed: u64,
}

/// Accidental coincidence rate for two detectors firing independently at
/// `singles_a` and `singles_b` within a coincidence `window`.
pub fn accidental_rate(singles_a: f64, singles_b: f64, window: f64) -> f64 {
    singles_a * singles_b * window
}

/// Stable per-stream seed derivation (splitmix64 finalizer applied twice).
/// Changing this changes every simulated data set, so it is pinned by tests.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
    let a = mix(master.wrapping_add(0x9E3779B97F4A7C15));
    mix(a ^ stream.wrapping_mul(0xD1B54A32D192ED03).wrapping_add(0x8BB84B93962EACC9))
}

fn check_unit_sum(image: &PixelImage) -> Result<()> {
    let s = image.sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::ContractViolation(format!(
            "image must be normalized to unit total before rate evaluation, got {s}"
        )));
    }
    Ok(())
}

/// Expected coincidence rate with the `polarity` pixels of `mask` switched
/// ON, for a unit-sum `image` and an all-ON true rate `total_true_rate`.
pub fn expected_coincidence_rate(
    image: &PixelImage,
    mask: &Mask,
    polarity: Polarity,
    model: &SourceDetectorModel,
    total_true_rate: f64,
) -> Result<f64> {
    model.validate()?;
    if !total_true_rate.is_finite() || total_true_rate < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "total true rate must be finite and nonnegative, got {total_true_rate}"
        )));
    }
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::DimensionMismatch {
            expected: image.num_pixels(),
            got: mask.values().len(),
            context: "mask grid vs image grid",
        });
    }
    check_unit_sum(image)?;
    let sign = match polarity {
        Polarity::Positive => 1,
        Polarity::Negative => -1,
    };
    let on_fraction: f64 = image
        .values()
        .iter()
        .zip(mask.values())
        .filter(|(_, m)| **m == sign)
        .map(|(v, _)| *v)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(rate_for_on_fraction(on_fraction, model, total_true_rate))
}

/// True + accidental + dark rate when a fraction `on_fraction` of the image
/// intensity falls on ON pixels. Signal singles scale with the same fraction,
/// so accidentals track the scene; the dark floor does not.
fn rate_for_on_fraction(
    on_fraction: f64,
    model: &SourceDetectorModel,
    total_true_rate: f64,
) -> f64 {
    let true_rate = total_true_rate * on_fraction;
    let signal_singles = model.signal_singles_rate * on_fraction + model.signal_dark_rate;
    true_rate
        + accidental_rate(
            model.herald_singles_rate,
            signal_singles,
            model.coincidence_window,
        )
}

/// One Poisson draw with mean `rate * integration_time`, from a dedicated
/// generator seeded with `seed`. Identical inputs give identical counts on
/// every platform and thread count.
pub fn sample_counts(rate: f64, integration_time: f64, seed: u64) -> Result<u64> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rate must be finite and nonnegative, got {rate}"
        )));
    }
    if !integration_time.is_finite() || integration_time < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "integration time must be finite and nonnegative, got {integration_time}"
        )));
    }
    let mean = rate * integration_time;
    if mean == 0.0 {
        return Ok(0);
    }
    let poisson = Poisson::new(mean)
        .map_err(|e| Error::InvalidParameter(format!("invalid Poisson mean {mean}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(poisson.sample(&mut rng) as u64)
}

/// Runs the masked acquisition over the first `ceil(fraction * n)` masks of
/// `masks`, two exposures (mask and complement) per record.
///
/// With [`NoiseMode::Off`] the accidental and dark terms are dropped and
/// counts are rounded expectations, so the differential signal equals the
/// exact mask projection up to count rounding. Record `k` depends only on
/// `(master_seed, k)` and is the same whether or not later records exist.
pub fn run_acquisition(
    image: &PixelImage,
    masks: &MaskSet,
    fraction: f64,
    integration_time: f64,
    model: &SourceDetectorModel,
    noise: NoiseMode,
    master_seed: u64,
) -> Result<Vec<MeasurementRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if !integration_time.is_finite() || integration_time <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "integration time must be positive, got {integration_time}"
        )));
    }
    model.validate()?;
    check_unit_sum(image)?;
    if masks.is_empty() {
        return Err(Error::InvalidParameter("mask set is empty".into()));
    }
    if masks.width() != image.width() || masks.height() != image.height() {
        return Err(Error::DimensionMismatch {
            expected: image.num_pixels(),
            got: masks.width() * masks.height(),
            context: "mask grid vs image grid",
        });
    }
    let n = masks.len();
    let take = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let effective = match noise {
        NoiseMode::On => model.clone(),
        NoiseMode::Off => model.noiseless(),
    };

    (0..take)
        .into_par_iter()
        .map(|position| {
            let mask = masks.mask(position);
            let rate_pos = expected_coincidence_rate(
                image,
                mask,
                Polarity::Positive,
                &effective,
                effective.coincidence_rate,
            )?;
            let rate_neg = expected_coincidence_rate(
                image,
                mask,
                Polarity::Negative,
                &effective,
                effective.coincidence_rate,
            )?;
            let seed = derive_seed(master_seed, position as u64);
            let (counts_pos, counts_neg) = match noise {
                NoiseMode::On => (
                    sample_counts(rate_pos, integration_time, derive_seed(seed, 0))?,
                    sample_counts(rate_neg, integration_time, derive_seed(seed, 1))?,
                ),
                NoiseMode::Off => (
                    (rate_pos * integration_time).round() as u64,
                    (rate_neg * integration_time).round() as u64,
                ),
            };
            Ok(MeasurementRecord {
                mask_index: position,
                natural_row: masks.natural_row(position),
                counts_pos,
                counts_neg,
                integration_time,
                rng_seed: seed,
            })
        })
        .collect()
}

/// Raster-scan reference: one exposure per mode with only that mode's
/// superpixel ON. Counts are background-subtracted using the model's expected
/// accidental-plus-dark rate for the exposure, clamped at zero, and
/// normalized to unit sum. An image with no intensity yields the all-zero
/// spectrum (left unnormalized, since there is nothing to normalize).
pub fn raster_scan(
    image: &PixelImage,
    superpixels: &SuperpixelAssignment,
    integration_time: f64,
    model: &SourceDetectorModel,
    noise: NoiseMode,
    master_seed: u64,
) -> Result<ModeSpectrum> {
    if !integration_time.is_finite() || integration_time <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "integration time must be positive, got {integration_time}"
        )));
    }
    model.validate()?;
    if superpixels.grid_width() != image.width() || superpixels.grid_height() != image.height() {
        return Err(Error::DimensionMismatch {
            expected: image.num_pixels(),
            got: superpixels.grid_width() * superpixels.grid_height(),
            context: "superpixel grid vs image grid",
        });
    }
    let effective = match noise {
        NoiseMode::On => model.clone(),
        NoiseMode::Off => model.noiseless(),
    };
    let total = image.sum();
    let mut net = Vec::with_capacity(superpixels.num_modes());
    for k in 0..superpixels.num_modes() {
        let on_intensity: f64 = superpixels
            .set(k)
            .iter()
            .map(|&(r, c)| image.value(r, c))
            .sum();
        let on_fraction = if total > 0.0 {
            (on_intensity / total).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let rate = rate_for_on_fraction(on_fraction, &effective, effective.coincidence_rate);
        let background = accidental_rate(
            effective.herald_singles_rate,
            effective.signal_singles_rate * on_fraction + effective.signal_dark_rate,
            effective.coincidence_window,
        );
        let counts = match noise {
            NoiseMode::On => {
                sample_counts(rate, integration_time, derive_seed(master_seed, k as u64))? as f64
            }
            NoiseMode::Off => (rate * integration_time).round(),
        };
        net.push((counts - background * integration_time).max(0.0));
    }
    let spectrum = ModeSpectrum::new(net)?;
    if spectrum.sum() > 0.0 {
        spectrum.unit_sum()
    } else {
        Ok(spectrum)
    }
}

/// Acquisition log header; fixed so logs round-trip bit-exactly.
pub const RECORDS_CSV_HEADER: &str =
    "ordering_position,natural_row_index,counts_pos,counts_neg,integration_time_s,seed";

/// Serializes records in measurement order.
pub fn write_records_csv(records: &[MeasurementRecord]) -> String {
    let mut out = String::from(RECORDS_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.mask_index, r.natural_row, r.counts_pos, r.counts_neg, r.integration_time, r.rng_seed
        ));
    }
    out
}

/// Parses a log written by [`write_records_csv`]. Counts must be integers;
/// fractional counts mean the file was not produced by this pipeline.
pub fn read_records_csv(text: &str) -> Result<Vec<MeasurementRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RECORDS_CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "bad acquisition log header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!(
                "line {}: expected 6 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let int = |tok: &str, what: &str| -> Result<u64> {
            tok.trim().parse::<u64>().map_err(|_| {
                Error::Parse(format!(
                    "line {}: {what} '{tok}' is not a nonnegative integer",
                    lineno + 2
                ))
            })
        };
        let integration_time = fields[4].trim().parse::<f64>().map_err(|_| {
            Error::Parse(format!(
                "line {}: bad integration time '{}'",
                lineno + 2,
                fields[4]
            ))
        })?;
        records.push(MeasurementRecord {
            mask_index: int(fields[0], "ordering position")? as usize,
            natural_row: int(fields[1], "natural row")? as usize,
            counts_pos: int(fields[2], "counts_pos")?,
            counts_neg: int(fields[3], "counts_neg")?,
            integration_time,
            rng_seed: int(fields[5], "seed")?,
        });
    }
    Ok(records)
}
