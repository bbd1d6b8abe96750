//! End-to-end run: simulate the walk, render the facet, acquire masked
//! counts, reconstruct at each sampling fraction, extract spectra, and write
//! every artifact to one output directory.
//!
//! All files are deterministic functions of the config, including the
//! acquisition (per-record seeds derive from the master seed), so two runs
//! of the same config produce byte-identical output.

use std::path::{Path, PathBuf};

use crate::acquire::{
    derive_seed, raster_scan, run_acquisition, write_records_csv, MeasurementRecord,
};
use crate::error::{Error, Result};
use crate::facet::{build_superpixels, render_image, PixelImage};
use crate::harness::config::{ExperimentConfig, InputKind};
use crate::masks::MaskSet;
use crate::recon::{differential_signal, invert_full, tv_reconstruct, TvDiagnostics};
use crate::spectrum::{column_profile, fit_gaussians, mse, GaussianFit};
use crate::walk::{
    single_photon_distribution, two_photon_correlation, two_photon_marginal, ModeSpectrum,
};

/// Seed stream of the masked acquisition.
pub const STREAM_ACQUISITION: u64 = 1;
/// Seed stream of the raster reference scan.
pub const STREAM_RASTER: u64 = 2;

/// Mode spectrum CSV layout.
pub const SPECTRUM_CSV_HEADER: &str = "mode,intensity";

pub fn write_spectrum_csv(spectrum: &ModeSpectrum) -> String {
    let mut out = String::from(SPECTRUM_CSV_HEADER);
    out.push('\n');
    for (k, v) in spectrum.values().iter().enumerate() {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

pub fn read_spectrum_csv(text: &str) -> Result<ModeSpectrum> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SPECTRUM_CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "bad spectrum header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, val) = line.split_once(',').ok_or_else(|| {
            Error::Parse(format!("line {}: expected mode,intensity", lineno + 2))
        })?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad mode index", lineno + 2)))?;
        if idx != values.len() {
            return Err(Error::Parse(format!(
                "line {}: mode {idx} out of order",
                lineno + 2
            )));
        }
        let val: f64 = val
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad intensity", lineno + 2)))?;
        values.push(val);
    }
    ModeSpectrum::new(values)
}

/// The walk output the experiment is trying to image: the single-photon
/// distribution or the pair marginal at the end of the array.
pub fn ground_truth_spectrum(cfg: &ExperimentConfig) -> Result<ModeSpectrum> {
    let u = cfg.walk.unitary()?;
    match cfg.walk.input {
        InputKind::Single => single_photon_distribution(&u, cfg.walk.input_guide()),
        InputKind::Pair => {
            let [a, b] = cfg.walk.pair_guides();
            let corr = two_photon_correlation(&u, a, b, cfg.walk.indistinguishable)?;
            two_photon_marginal(&corr)
        }
    }
}

/// Fraction label used in file names: `0.25` becomes `0p25`.
fn fraction_tag(f: f64) -> String {
    format!("{f}").replace('.', "p")
}

fn image_mse_peak_normalized(a: &PixelImage, b: &PixelImage) -> Result<f64> {
    if a.num_pixels() != b.num_pixels() {
        return Err(Error::DimensionMismatch {
            expected: a.num_pixels(),
            got: b.num_pixels(),
            context: "image sizes in mse",
        });
    }
    let pa = a.max().max(f64::MIN_POSITIVE);
    let pb = b.max().max(f64::MIN_POSITIVE);
    let total: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| {
            let d = x / pa - y / pb;
            d * d
        })
        .sum();
    Ok(total / a.num_pixels() as f64)
}

struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, content)?;
        self.written.push(path);
        Ok(())
    }
}

struct FractionOutputs {
    fraction: f64,
    measurements: usize,
    image: PixelImage,
    fit: GaussianFit,
    spectrum: ModeSpectrum,
    diagnostics: TvDiagnostics,
}

fn fit_image_spectrum(
    image: &PixelImage,
    cfg: &ExperimentConfig,
) -> Result<(GaussianFit, ModeSpectrum)> {
    let geometry = cfg.optical_geometry()?;
    let centers: Vec<f64> = (0..geometry.num_modes())
        .map(|k| geometry.mode_center(k).1)
        .collect();
    let profile = column_profile(image);
    let fit = fit_gaussians(&profile, &centers, geometry.sigma_px())?;
    let spectrum = fit.intensities()?;
    Ok((fit, spectrum))
}

/// Runs the whole experiment described by `cfg` and writes the artifacts
/// into `out_dir` (created if missing). Returns the written paths in order.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut w = ArtifactWriter {
        dir: out_dir.to_path_buf(),
        written: Vec::new(),
    };

    // Ground truth.
    let truth_spectrum = ground_truth_spectrum(cfg)?;
    w.write("ground_truth_spectrum.csv", &write_spectrum_csv(&truth_spectrum))?;
    let geometry = cfg.optical_geometry()?;
    let truth_image = render_image(&truth_spectrum, &geometry)?.unit_sum()?;
    w.write("ground_truth_image.csv", &truth_image.to_csv_string())?;
    w.write("ground_truth_image.pgm", &truth_image.to_pgm_string())?;

    // Acquisition out to the largest requested fraction; smaller fractions
    // reuse prefixes of the same log.
    let masks = MaskSet::from_grid(cfg.geometry.grid_width, cfg.geometry.grid_height)?
        .with_ordering(cfg.acquisition.ordering)?;
    let n = masks.len();
    let fmax = cfg
        .acquisition
        .fractions
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max);
    let acq_seed = derive_seed(cfg.run.master_seed, STREAM_ACQUISITION);
    let records = run_acquisition(
        &truth_image,
        &masks,
        fmax,
        cfg.acquisition.integration_time_s,
        &cfg.source,
        cfg.run.noise,
        acq_seed,
    )?;
    w.write("acquisition_log.csv", &write_records_csv(&records))?;

    // Exact inversion when the acquisition covered every mask.
    let mut inversion: Option<(PixelImage, ModeSpectrum)> = None;
    if records.len() == n {
        let mv = differential_signal(&records)?;
        let image = invert_full(&mv, &masks)?;
        w.write("full_inversion.csv", &image.to_csv_string())?;
        w.write("full_inversion.pgm", &image.to_pgm_string())?;
        let (_, spectrum) = fit_image_spectrum(&image.clamped_nonneg(), cfg)?;
        w.write("spectrum_full_inversion.csv", &write_spectrum_csv(&spectrum))?;
        inversion = Some((image, spectrum));
    }

    // Per-fraction compressive reconstructions.
    let mut fraction_outputs = Vec::new();
    for &fraction in &cfg.acquisition.fractions {
        let take = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        let prefix: &[MeasurementRecord] = &records[..take];
        let mv = differential_signal(prefix)?;
        let solution = tv_reconstruct(&mv, &masks, &cfg.tv)?;
        let (fit, spectrum) = fit_image_spectrum(&solution.image, cfg)?;
        let tag = fraction_tag(fraction);
        w.write(&format!("recon_f{tag}.csv"), &solution.image.to_csv_string())?;
        w.write(&format!("recon_f{tag}.pgm"), &solution.image.to_pgm_string())?;
        w.write(&format!("spectrum_f{tag}.csv"), &write_spectrum_csv(&spectrum))?;
        fraction_outputs.push(FractionOutputs {
            fraction,
            measurements: take,
            image: solution.image,
            fit,
            spectrum,
            diagnostics: solution.diagnostics,
        });
    }

    // Raster reference scan.
    let superpixels = build_superpixels(&geometry, cfg.geometry.superpixel_radius_px)?;
    let raster = raster_scan(
        &truth_image,
        &superpixels,
        cfg.acquisition.raster_integration_time_s,
        &cfg.source,
        cfg.run.noise,
        derive_seed(cfg.run.master_seed, STREAM_RASTER),
    )?;
    w.write("raster_spectrum.csv", &write_spectrum_csv(&raster))?;

    // Fitted components per fraction.
    let mut fit_csv = String::from("fraction,component,amplitude,center_px,width_px\n");
    for out in &fraction_outputs {
        for (k, c) in out.fit.components.iter().enumerate() {
            fit_csv.push_str(&format!(
                "{},{k},{},{},{}\n",
                out.fraction, c.amplitude, c.center, c.width
            ));
        }
    }
    w.write("gaussian_fit.csv", &fit_csv)?;

    // Error report. Spectra are compared unit-sum (as stored) and
    // peak-normalized; images peak-normalized.
    let mut report = String::from("comparison,normalization,value\n");
    let spectrum_rows = |report: &mut String,
                             label: &str,
                             a: &ModeSpectrum,
                             b: &ModeSpectrum|
     -> Result<()> {
        report.push_str(&format!("{label},unit_sum,{}\n", mse(a, b)?));
        report.push_str(&format!(
            "{label},peak,{}\n",
            mse(&a.peak_normalized()?, &b.peak_normalized()?)?
        ));
        Ok(())
    };
    for out in &fraction_outputs {
        spectrum_rows(
            &mut report,
            &format!("spectrum_tv_f{}_vs_truth", out.fraction),
            &out.spectrum,
            &truth_spectrum,
        )?;
        report.push_str(&format!(
            "image_tv_f{}_vs_truth,peak,{}\n",
            out.fraction,
            image_mse_peak_normalized(&out.image, &truth_image)?
        ));
    }
    if let Some((inv_image, inv_spectrum)) = &inversion {
        spectrum_rows(
            &mut report,
            "spectrum_full_inversion_vs_truth",
            inv_spectrum,
            &truth_spectrum,
        )?;
        report.push_str(&format!(
            "image_full_inversion_vs_truth,peak,{}\n",
            image_mse_peak_normalized(&inv_image.clamped_nonneg(), &truth_image)?
        ));
        spectrum_rows(
            &mut report,
            "spectrum_raster_vs_full_inversion",
            &raster,
            inv_spectrum,
        )?;
    }
    spectrum_rows(&mut report, "spectrum_raster_vs_truth", &raster, &truth_spectrum)?;
    w.write("mse_report.csv", &report)?;

    // Solver health per fraction.
    let mut diag = String::from(
        "fraction,measurements,iterations,converged,final_objective,max_lagrangian_increase\n",
    );
    for out in &fraction_outputs {
        diag.push_str(&format!(
            "{},{},{},{},{},{}\n",
            out.fraction,
            out.measurements,
            out.diagnostics.iterations,
            out.diagnostics.converged,
            out.diagnostics.final_objective,
            out.diagnostics.max_lagrangian_increase
        ));
    }
    w.write("tv_diagnostics.csv", &diag)?;

    // Run summary, including the simulated wall-clock cost of the
    // acquisition: two exposures per mask, each charged integration plus
    // switching overhead.
    let measured = records.len();
    let acq_time = 2.0
        * measured as f64
        * (cfg.acquisition.integration_time_s + cfg.acquisition.per_mask_overhead_s);
    let raster_time = geometry.num_modes() as f64
        * (cfg.acquisition.raster_integration_time_s + cfg.acquisition.per_mask_overhead_s);
    let fractions_list = cfg
        .acquisition
        .fractions
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(";");
    let mut summary = String::from("key,value\n");
    for (k, v) in [
        ("schema", cfg.schema.clone()),
        ("input", format!("{:?}", cfg.walk.input).to_lowercase()),
        ("num_guides", cfg.walk.num_guides.to_string()),
        ("grid_width", cfg.geometry.grid_width.to_string()),
        ("grid_height", cfg.geometry.grid_height.to_string()),
        ("ordering", cfg.acquisition.ordering.to_string()),
        ("masks_total", n.to_string()),
        ("masks_measured", measured.to_string()),
        ("exposures", (2 * measured).to_string()),
        ("fractions", fractions_list),
        (
            "integration_time_s",
            cfg.acquisition.integration_time_s.to_string(),
        ),
        (
            "per_mask_overhead_s",
            cfg.acquisition.per_mask_overhead_s.to_string(),
        ),
        ("simulated_acquisition_s", acq_time.to_string()),
        ("raster_modes", geometry.num_modes().to_string()),
        (
            "raster_integration_time_s",
            cfg.acquisition.raster_integration_time_s.to_string(),
        ),
        ("simulated_raster_s", raster_time.to_string()),
        (
            "noise",
            match cfg.run.noise {
                crate::acquire::NoiseMode::On => "on".to_string(),
                crate::acquire::NoiseMode::Off => "off".to_string(),
            },
        ),
        ("master_seed", cfg.run.master_seed.to_string()),
    ] {
        summary.push_str(&format!("{k},{v}\n"));
    }
    w.write("run_summary.csv", &summary)?;

    w.write("config_used.toml", &cfg.to_toml_string()?)?;
    Ok(w.written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_csv_round_trips() {
        let s = ModeSpectrum::new(vec![0.25, 0.5, 0.125, 0.0625]).unwrap();
        let text = write_spectrum_csv(&s);
        let back = read_spectrum_csv(&text).unwrap();
        assert_eq!(s.values(), back.values());
        assert_eq!(write_spectrum_csv(&back), text);
    }

    #[test]
    fn spectrum_csv_rejects_gaps_and_bad_headers() {
        assert!(read_spectrum_csv("mode,intensity\n1,0.5\n").is_err());
        assert!(read_spectrum_csv("a,b\n0,0.5\n").is_err());
    }

    #[test]
    fn ground_truth_is_unit_sum_for_both_inputs() {
        let mut cfg = ExperimentConfig::default();
        let s = ground_truth_spectrum(&cfg).unwrap();
        assert_eq!(s.len(), 13);
        assert!((s.sum() - 1.0).abs() < 1e-10);

        cfg.walk.input = InputKind::Pair;
        let s = ground_truth_spectrum(&cfg).unwrap();
        assert_eq!(s.len(), 13);
        assert!((s.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fraction_tags_have_no_dots() {
        assert_eq!(fraction_tag(0.25), "0p25");
        assert_eq!(fraction_tag(1.0), "1");
        assert_eq!(fraction_tag(0.125), "0p125");
    }

    #[test]
    fn image_mse_is_scale_invariant() {
        let a = PixelImage::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = PixelImage::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(image_mse_peak_normalized(&a, &b).unwrap() < 1e-30);
    }
}
