//! On-disk format contracts: CSV/PGM/permutation round trips and config
//! schema enforcement.

use proptest::collection::vec;
use proptest::prelude::*;

use qwspi::facet::PixelImage;
use qwspi::harness::{
    read_spectrum_csv, read_sweep_csv, write_spectrum_csv, write_sweep_csv, ExperimentConfig,
    SweepPoint, CONFIG_SCHEMA,
};
use qwspi::masks::{
    read_masks_csv, read_permutation, write_masks_csv, write_permutation, MaskOrdering, MaskSet,
};
use qwspi::walk::ModeSpectrum;

proptest! {
    #[test]
    fn image_csv_round_trips_exactly(
        w in 1usize..8,
        h in 1usize..8,
        seed_values in vec(0.0f64..1e3, 64),
    ) {
        let values: Vec<f64> = seed_values.iter().cycle().take(w * h).copied().collect();
        let image = PixelImage::new(w, h, values).unwrap();
        let parsed = PixelImage::from_csv_str(&image.to_csv_string()).unwrap();
        prop_assert_eq!(parsed.width(), w);
        prop_assert_eq!(parsed.height(), h);
        // f64 Display prints shortest round-trip representations.
        prop_assert_eq!(parsed.values(), image.values());
    }

    #[test]
    fn image_pgm_round_trips_within_quantization(
        w in 1usize..8,
        h in 1usize..8,
        seed_values in vec(0.0f64..1e3, 64),
    ) {
        let values: Vec<f64> = seed_values.iter().cycle().take(w * h).copied().collect();
        let image = PixelImage::new(w, h, values).unwrap();
        let parsed = PixelImage::from_pgm_str(&image.to_pgm_string()).unwrap();
        prop_assert_eq!(parsed.width(), w);
        prop_assert_eq!(parsed.height(), h);
        // 16-bit quantization against the recorded peak.
        let tol = 8e-6 * image.max().max(f64::MIN_POSITIVE);
        for (a, b) in image.values().iter().zip(parsed.values()) {
            prop_assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
        }
    }

    #[test]
    fn spectrum_csv_round_trips_exactly(values in vec(0.0f64..10.0, 1..32)) {
        let spectrum = ModeSpectrum::new(values).unwrap();
        let parsed = read_spectrum_csv(&write_spectrum_csv(&spectrum)).unwrap();
        prop_assert_eq!(parsed.values(), spectrum.values());
    }

    #[test]
    fn sweep_csv_serialization_is_idempotent(
        fraction in 0.01f64..1.0,
        seed in any::<u64>(),
        mse in 0.0f64..1.0,
        iterations in 0usize..1000,
        converged in any::<bool>(),
        objective in -1e6f64..1e6,
    ) {
        let points = vec![
            SweepPoint {
                ordering: MaskOrdering::CakeCutting,
                fraction,
                seed,
                measurements: 77,
                spectrum_mse_vs_full: mse,
                iterations,
                converged,
                final_objective: objective,
            },
            SweepPoint {
                ordering: MaskOrdering::RussianDolls,
                fraction,
                seed: seed ^ 1,
                measurements: 78,
                spectrum_mse_vs_full: mse / 2.0,
                iterations,
                converged: !converged,
                final_objective: -objective,
            },
        ];
        let once = write_sweep_csv(&points);
        let twice = write_sweep_csv(&read_sweep_csv(&once).unwrap());
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn mask_set_and_permutations_round_trip() {
    for (w, h) in [(2, 2), (4, 2), (4, 4), (8, 2)] {
        let base = MaskSet::from_grid(w, h).unwrap();
        for ordering in [
            MaskOrdering::Natural,
            MaskOrdering::CakeCutting,
            MaskOrdering::RussianDolls,
        ] {
            let set = base.with_ordering(ordering).unwrap();
            let parsed = read_masks_csv(&write_masks_csv(&set), w, h).unwrap();
            assert_eq!(parsed.len(), set.len());
            for (p, mask) in parsed.iter().enumerate() {
                assert_eq!(mask.values(), set.mask(p).values(), "{w}x{h} {ordering}");
            }
            let perm = read_permutation(&write_permutation(set.natural_rows())).unwrap();
            assert_eq!(perm, set.natural_rows());
        }
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = ExperimentConfig::default();
    let text = cfg.to_toml_string().unwrap();
    let parsed = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(parsed, cfg);
}

#[test]
fn config_requires_the_schema_tag() {
    assert_eq!(CONFIG_SCHEMA, "qwspi/1");
    // The tag alone is a complete config; everything else has defaults.
    ExperimentConfig::from_toml_str("schema = \"qwspi/1\"\n").unwrap();
    // Missing or wrong tags are rejected.
    assert!(ExperimentConfig::from_toml_str("").is_err());
    assert!(ExperimentConfig::from_toml_str("schema = \"qwspi/2\"\n").is_err());
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let unknown = "schema = \"qwspi/1\"\n\n[tv]\nmystery = 1\n";
    assert!(ExperimentConfig::from_toml_str(unknown).is_err());

    let bad_fraction = "schema = \"qwspi/1\"\n\n[acquisition]\nfractions = [0.0]\n";
    assert!(ExperimentConfig::from_toml_str(bad_fraction).is_err());

    let bad_grid = "schema = \"qwspi/1\"\n\n[geometry]\ngrid_width = 63\n";
    assert!(ExperimentConfig::from_toml_str(bad_grid).is_err());
}
