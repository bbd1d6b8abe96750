//! Compression sweep: reconstruction quality versus sampling fraction,
//! mask ordering, and noise seed.
//!
//! For each (ordering, seed) pair one full acquisition is simulated and each
//! requested fraction reconstructs from a prefix of it. The quality metric
//! is the mean squared difference of peak-normalized spectra against the
//! same pair's fully sampled TV reconstruction, so a fraction-1.0 row is an
//! exact self-comparison and reads 0.
//!
//! Points are computed in parallel but emitted in the deterministic order
//! orderings x seeds x fractions.

use rayon::prelude::*;

use crate::acquire::{derive_seed, run_acquisition, MeasurementRecord};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::pipeline::STREAM_ACQUISITION;
use crate::masks::{MaskOrdering, MaskSet};
use crate::recon::{differential_signal, tv_reconstruct};
use crate::spectrum::{column_profile, fit_gaussians, mse};
use crate::walk::ModeSpectrum;

/// One sweep measurement: quality of one (ordering, fraction, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub ordering: MaskOrdering,
    pub fraction: f64,
    pub seed: u64,
    pub measurements: usize,
    pub spectrum_mse_vs_full: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "ordering,fraction,seed,measurements,spectrum_mse_vs_full,iterations,converged,final_objective";

fn spectrum_of(
    records: &[MeasurementRecord],
    masks: &MaskSet,
    cfg: &ExperimentConfig,
) -> Result<(ModeSpectrum, crate::recon::TvDiagnostics)> {
    let mv = differential_signal(records)?;
    let solution = tv_reconstruct(&mv, masks, &cfg.tv)?;
    let geometry = cfg.optical_geometry()?;
    let centers: Vec<f64> = (0..geometry.num_modes())
        .map(|k| geometry.mode_center(k).1)
        .collect();
    let profile = column_profile(&solution.image);
    let fit = fit_gaussians(&profile, &centers, geometry.sigma_px())?;
    Ok((fit.intensities()?, solution.diagnostics))
}

/// Runs the sweep over every (ordering, seed, fraction) cell. Each seed is
/// an independent acquisition master; the config's own master seed is not
/// consulted so sweeps are reproducible from their seed list alone.
pub fn sweep_ratios(
    cfg: &ExperimentConfig,
    fractions: &[f64],
    orderings: &[MaskOrdering],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if fractions.is_empty() || orderings.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one fraction, one ordering, and one seed".into(),
        ));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling fractions must lie in (0, 1], got {f}"
            )));
        }
    }
    let truth = crate::harness::pipeline::ground_truth_spectrum(cfg)?;
    let geometry = cfg.optical_geometry()?;
    let truth_image =
        crate::facet::render_image(&truth, &geometry)?.unit_sum()?;
    let natural = MaskSet::from_grid(cfg.geometry.grid_width, cfg.geometry.grid_height)?;

    let mut cells = Vec::new();
    for &ordering in orderings {
        let masks = std::sync::Arc::new(natural.with_ordering(ordering)?);
        for &seed in seeds {
            cells.push((ordering, masks.clone(), seed));
        }
    }

    let nested: Vec<Result<Vec<SweepPoint>>> = cells
        .par_iter()
        .map(|(ordering, masks, seed)| {
            let n = masks.len();
            let records = run_acquisition(
                &truth_image,
                masks,
                1.0,
                cfg.acquisition.integration_time_s,
                &cfg.source,
                cfg.run.noise,
                derive_seed(*seed, STREAM_ACQUISITION),
            )?;
            let (reference, _) = spectrum_of(&records, masks, cfg)?;
            let reference_peak = reference.peak_normalized()?;
            let mut points = Vec::with_capacity(fractions.len());
            for &fraction in fractions {
                let take = ((fraction * n as f64).ceil() as usize).clamp(1, n);
                let (spectrum, diagnostics) = spectrum_of(&records[..take], masks, cfg)?;
                let value = mse(&spectrum.peak_normalized()?, &reference_peak)?;
                points.push(SweepPoint {
                    ordering: *ordering,
                    fraction,
                    seed: *seed,
                    measurements: take,
                    spectrum_mse_vs_full: value,
                    iterations: diagnostics.iterations,
                    converged: diagnostics.converged,
                    final_objective: diagnostics.final_objective,
                });
            }
            Ok(points)
        })
        .collect();

    let mut points = Vec::with_capacity(cells.len() * fractions.len());
    for group in nested {
        points.extend(group?);
    }
    Ok(points)
}

pub fn write_sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.ordering,
            p.fraction,
            p.seed,
            p.measurements,
            p.spectrum_mse_vs_full,
            p.iterations,
            p.converged,
            p.final_objective
        ));
    }
    out
}

pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepPoint>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SWEEP_CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "bad sweep header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse(format!(
                "line {}: expected 8 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_f64 = |tok: &str, what: &str| -> Result<f64> {
            tok.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad {what} '{tok}'", lineno + 2)))
        };
        points.push(SweepPoint {
            ordering: fields[0].trim().parse()?,
            fraction: parse_f64(fields[1], "fraction")?,
            seed: fields[2].trim().parse().map_err(|_| {
                Error::Parse(format!("line {}: bad seed '{}'", lineno + 2, fields[2]))
            })?,
            measurements: fields[3].trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}: bad measurement count '{}'",
                    lineno + 2,
                    fields[3]
                ))
            })?,
            spectrum_mse_vs_full: parse_f64(fields[4], "mse")?,
            iterations: fields[5].trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "line {}: bad iteration count '{}'",
                    lineno + 2,
                    fields[5]
                ))
            })?,
            converged: match fields[6].trim() {
                "true" => true,
                "false" => false,
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: bad converged flag '{other}'",
                        lineno + 2
                    )))
                }
            },
            final_objective: parse_f64(fields[7], "objective")?,
        });
    }
    Ok(points)
}

/// Median quality per fraction for the two named orderings, and the sign of
/// their difference (-1: cake-cutting better, 0: tied, 1: russian-dolls
/// better). Every fraction must have points for both orderings.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingComparison {
    pub fraction: f64,
    pub median_mse_cake_cutting: f64,
    pub median_mse_russian_dolls: f64,
    pub sign_cake_minus_russian: i8,
}

pub const COMPARISON_CSV_HEADER: &str =
    "fraction,median_mse_cake_cutting,median_mse_russian_dolls,sign_cake_minus_russian";

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn compare_orderings(points: &[SweepPoint]) -> Result<Vec<OrderingComparison>> {
    let mut fractions: Vec<f64> = Vec::new();
    for p in points {
        if !fractions.iter().any(|f| f.to_bits() == p.fraction.to_bits()) {
            fractions.push(p.fraction);
        }
    }
    fractions.sort_by(|a, b| a.total_cmp(b));
    if fractions.is_empty() {
        return Err(Error::InvalidParameter("no sweep points".into()));
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for fraction in fractions {
        let collect = |ordering: MaskOrdering| -> Vec<f64> {
            points
                .iter()
                .filter(|p| {
                    p.ordering == ordering && p.fraction.to_bits() == fraction.to_bits()
                })
                .map(|p| p.spectrum_mse_vs_full)
                .collect()
        };
        let mut cake = collect(MaskOrdering::CakeCutting);
        let mut russian = collect(MaskOrdering::RussianDolls);
        if cake.is_empty() || russian.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "fraction {fraction} lacks points for {}",
                if cake.is_empty() {
                    "cake_cutting"
                } else {
                    "russian_dolls"
                }
            )));
        }
        let medians = (median(&mut cake), median(&mut russian));
        rows.push(OrderingComparison {
            fraction,
            median_mse_cake_cutting: medians.0,
            median_mse_russian_dolls: medians.1,
            sign_cake_minus_russian: match medians.0.total_cmp(&medians.1) {
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
                std::cmp::Ordering::Greater => 1,
            },
        });
    }
    Ok(rows)
}

pub fn write_comparison_csv(rows: &[OrderingComparison]) -> String {
    let mut out = String::from(COMPARISON_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.fraction,
            r.median_mse_cake_cutting,
            r.median_mse_russian_dolls,
            r.sign_cake_minus_russian
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(ordering: MaskOrdering, fraction: f64, seed: u64, value: f64) -> SweepPoint {
        SweepPoint {
            ordering,
            fraction,
            seed,
            measurements: 10,
            spectrum_mse_vs_full: value,
            iterations: 50,
            converged: true,
            final_objective: 1.25,
        }
    }

    #[test]
    fn sweep_csv_round_trips() {
        let points = vec![
            point(MaskOrdering::CakeCutting, 0.25, 1, 0.013),
            point(MaskOrdering::RussianDolls, 0.5, 2, 0.004),
        ];
        let text = write_sweep_csv(&points);
        let back = read_sweep_csv(&text).unwrap();
        assert_eq!(points, back);
        assert_eq!(write_sweep_csv(&back), text);
    }

    #[test]
    fn sweep_csv_rejects_malformed_rows() {
        let bad = format!("{SWEEP_CSV_HEADER}\ncake_cutting,0.25,1,10,0.01,50\n");
        assert!(read_sweep_csv(&bad).is_err());
        let bad = format!("{SWEEP_CSV_HEADER}\nshuffled,0.25,1,10,0.01,50,true,1.0\n");
        assert!(read_sweep_csv(&bad).is_err());
    }

    #[test]
    fn comparison_medians_and_signs() {
        let points = vec![
            point(MaskOrdering::CakeCutting, 0.25, 1, 0.010),
            point(MaskOrdering::CakeCutting, 0.25, 2, 0.020),
            point(MaskOrdering::CakeCutting, 0.25, 3, 0.030),
            point(MaskOrdering::RussianDolls, 0.25, 1, 0.040),
            point(MaskOrdering::RussianDolls, 0.25, 2, 0.050),
            point(MaskOrdering::RussianDolls, 0.25, 3, 0.060),
            point(MaskOrdering::CakeCutting, 0.5, 1, 0.5),
            point(MaskOrdering::CakeCutting, 0.5, 2, 0.7),
            point(MaskOrdering::RussianDolls, 0.5, 1, 0.1),
            point(MaskOrdering::RussianDolls, 0.5, 2, 0.2),
        ];
        let rows = compare_orderings(&points).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].fraction, 0.25);
        assert!((rows[0].median_mse_cake_cutting - 0.020).abs() < 1e-15);
        assert!((rows[0].median_mse_russian_dolls - 0.050).abs() < 1e-15);
        assert_eq!(rows[0].sign_cake_minus_russian, -1);
        // Even count: median is the midpoint.
        assert!((rows[1].median_mse_cake_cutting - 0.6).abs() < 1e-15);
        assert_eq!(rows[1].sign_cake_minus_russian, 1);
    }

    #[test]
    fn comparison_requires_both_orderings() {
        let points = vec![point(MaskOrdering::CakeCutting, 0.25, 1, 0.01)];
        assert!(compare_orderings(&points).is_err());
    }
}
