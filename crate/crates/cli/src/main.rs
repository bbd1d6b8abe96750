//! `qwspi` command line. Every subcommand reads one experiment config
//! (built-in defaults unless `--config` points at a TOML file), applies the
//! global overrides, and writes CSV/PGM artifacts into `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qwspi::acquire::{derive_seed, raster_scan, run_acquisition, write_records_csv, NoiseMode};
use qwspi::facet::{build_superpixels, render_image, PixelImage};
use qwspi::harness::{
    compare_orderings, ground_truth_spectrum, read_sweep_csv, run_pipeline, sweep_ratios,
    write_comparison_csv, write_spectrum_csv, write_sweep_csv, ExperimentConfig,
    STREAM_ACQUISITION, STREAM_RASTER,
};
use qwspi::masks::{write_masks_csv, write_permutation, MaskOrdering, MaskSet};
use qwspi::Result;

#[derive(Parser)]
#[command(
    name = "qwspi",
    version,
    about = "Simulate and reconstruct single-pixel read-out of photonic quantum walks"
)]
struct Cli {
    /// Experiment config (TOML). Omit to use built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the master seed from the config.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Override photon noise: "on" (Poisson counts) or "off" (expected values).
    #[arg(long, global = true, value_name = "on|off")]
    noise: Option<NoiseMode>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the quantum-walk output spectrum and write it as CSV.
    Walk,
    /// Render the walk spectrum onto the pixel grid (CSV + PGM).
    Render,
    /// Emit the ordered Hadamard mask set, its permutation, and block counts.
    Masks,
    /// Simulate the differential mask acquisition and write the count log.
    Acquire,
    /// Run the full pipeline: acquire, reconstruct at every configured
    /// fraction, raster-scan reference, fits, and MSE report.
    Reconstruct,
    /// Simulate the superpixel raster scan and write its spectrum.
    Raster,
    /// Re-reconstruct one acquisition per (ordering, seed) at several
    /// fractions and tabulate spectrum MSE against the full reconstruction.
    Sweep {
        /// Comma-separated sampling fractions in (0, 1]. Default: the
        /// config's fraction list.
        #[arg(long, value_delimiter = ',', value_name = "F,F,...")]
        fractions: Vec<f64>,

        /// Comma-separated acquisition seeds. Default: five consecutive
        /// seeds starting at the master seed.
        #[arg(long, value_delimiter = ',', value_name = "S,S,...")]
        seeds: Vec<u64>,

        /// Comma-separated orderings (natural, cake_cutting, russian_dolls).
        /// Default: cake_cutting,russian_dolls.
        #[arg(long, value_delimiter = ',', value_name = "NAME,...")]
        orderings: Vec<MaskOrdering>,
    },
    /// Summarize a sweep CSV into per-fraction ordering medians.
    Report {
        /// Sweep CSV to read. Default: <out>/sweep.csv.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Walk => cmd_walk(&cfg, &cli.out),
        Command::Render => cmd_render(&cfg, &cli.out),
        Command::Masks => cmd_masks(&cfg, &cli.out),
        Command::Acquire => cmd_acquire(&cfg, &cli.out),
        Command::Reconstruct => cmd_reconstruct(&cfg, &cli.out),
        Command::Raster => cmd_raster(&cfg, &cli.out),
        Command::Sweep {
            fractions,
            seeds,
            orderings,
        } => cmd_sweep(&cfg, &cli.out, fractions, seeds, orderings),
        Command::Report { input } => cmd_report(&cli.out, input.as_deref()),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_toml_str(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.master_seed = seed;
    }
    if let Some(noise) = cli.noise {
        cfg.run.noise = noise;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn truth_image(cfg: &ExperimentConfig) -> Result<PixelImage> {
    let spectrum = ground_truth_spectrum(cfg)?;
    render_image(&spectrum, &cfg.optical_geometry()?)
}

fn cmd_walk(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let spectrum = ground_truth_spectrum(cfg)?;
    write_text(out, "ground_truth_spectrum.csv", &write_spectrum_csv(&spectrum))?;
    println!(
        "{} modes, total intensity {:.6}",
        spectrum.len(),
        spectrum.sum()
    );
    Ok(())
}

fn cmd_render(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let image = truth_image(cfg)?;
    write_text(out, "ground_truth_image.csv", &image.to_csv_string())?;
    write_text(out, "ground_truth_image.pgm", &image.to_pgm_string())?;
    Ok(())
}

fn cmd_masks(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let set = MaskSet::from_grid(cfg.geometry.grid_width, cfg.geometry.grid_height)?
        .with_ordering(cfg.acquisition.ordering)?;
    write_text(out, "masks.csv", &write_masks_csv(&set))?;
    write_text(out, "mask_order.txt", &write_permutation(set.natural_rows()))?;
    let mut blocks = String::from("position,natural_row,block_count\n");
    for p in 0..set.len() {
        blocks.push_str(&format!(
            "{},{},{}\n",
            p,
            set.natural_row(p),
            set.block_count(p)
        ));
    }
    write_text(out, "mask_blocks.csv", &blocks)?;
    println!("{} masks in {} order", set.len(), set.ordering());
    Ok(())
}

/// Largest configured fraction; the acquisition log covers it and every
/// smaller fraction is a prefix.
fn max_fraction(cfg: &ExperimentConfig) -> f64 {
    cfg.acquisition
        .fractions
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

fn cmd_acquire(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let image = truth_image(cfg)?;
    let masks = MaskSet::from_grid(cfg.geometry.grid_width, cfg.geometry.grid_height)?
        .with_ordering(cfg.acquisition.ordering)?;
    let records = run_acquisition(
        &image.unit_sum()?,
        &masks,
        max_fraction(cfg),
        cfg.acquisition.integration_time_s,
        &cfg.source,
        cfg.run.noise,
        derive_seed(cfg.run.master_seed, STREAM_ACQUISITION),
    )?;
    write_text(out, "acquisition_log.csv", &write_records_csv(&records))?;
    println!("{} differential measurements", records.len());
    Ok(())
}

fn cmd_reconstruct(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let paths = run_pipeline(cfg, out)?;
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_raster(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let geometry = cfg.optical_geometry()?;
    let superpixels = build_superpixels(&geometry, cfg.geometry.superpixel_radius_px)?;
    let image = truth_image(cfg)?;
    let spectrum = raster_scan(
        &image.unit_sum()?,
        &superpixels,
        cfg.acquisition.raster_integration_time_s,
        &cfg.source,
        cfg.run.noise,
        derive_seed(cfg.run.master_seed, STREAM_RASTER),
    )?;
    write_text(out, "raster_spectrum.csv", &write_spectrum_csv(&spectrum))?;
    Ok(())
}

fn cmd_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    fractions: &[f64],
    seeds: &[u64],
    orderings: &[MaskOrdering],
) -> Result<()> {
    let fractions = if fractions.is_empty() {
        cfg.acquisition.fractions.clone()
    } else {
        fractions.to_vec()
    };
    let seeds = if seeds.is_empty() {
        (cfg.run.master_seed..cfg.run.master_seed + 5).collect()
    } else {
        seeds.to_vec()
    };
    let orderings = if orderings.is_empty() {
        vec![MaskOrdering::CakeCutting, MaskOrdering::RussianDolls]
    } else {
        orderings.to_vec()
    };
    let points = sweep_ratios(cfg, &fractions, &orderings, &seeds)?;
    write_text(out, "sweep.csv", &write_sweep_csv(&points))?;
    println!(
        "{} sweep points ({} orderings x {} seeds x {} fractions)",
        points.len(),
        orderings.len(),
        seeds.len(),
        fractions.len()
    );
    let has_both = orderings.contains(&MaskOrdering::CakeCutting)
        && orderings.contains(&MaskOrdering::RussianDolls);
    if has_both {
        let rows = compare_orderings(&points)?;
        write_text(out, "ordering_comparison.csv", &write_comparison_csv(&rows))?;
        print_comparison(&rows);
    } else {
        println!("single ordering swept; comparison skipped");
    }
    Ok(())
}

fn cmd_report(out: &Path, input: Option<&Path>) -> Result<()> {
    let path = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("sweep.csv"));
    let points = read_sweep_csv(&fs::read_to_string(&path)?)?;
    let rows = compare_orderings(&points)?;
    write_text(out, "ordering_comparison.csv", &write_comparison_csv(&rows))?;
    print_comparison(&rows);
    Ok(())
}

fn print_comparison(rows: &[qwspi::harness::OrderingComparison]) {
    println!("fraction  cake_cutting  russian_dolls  better");
    for r in rows {
        let better = match r.sign_cake_minus_russian {
            -1 => "cake_cutting",
            1 => "russian_dolls",
            _ => "tie",
        };
        println!(
            "{:<8}  {:<12.6}  {:<13.6}  {}",
            r.fraction, r.median_mse_cake_cutting, r.median_mse_russian_dolls, better
        );
    }
}
