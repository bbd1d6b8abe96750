//! Experiment configuration: one TOML file describing the chip, the facet
//! optics, the source, the acquisition plan, and the solver.
//!
//! Files carry a `schema = "qwspi/1"` tag and unknown keys are rejected, so
//! a stale or foreign file fails loudly instead of running with defaults.
//! Every section is optional; omitted keys take the defaults shown by
//! [`ExperimentConfig::to_toml_string`] on a default config.

use serde::{Deserialize, Serialize};

use crate::acquire::{NoiseMode, SourceDetectorModel};
use crate::error::{Error, Result};
use crate::facet::OpticalGeometry;
use crate::masks::MaskOrdering;
use crate::recon::TvParams;
use crate::walk::{build_hamiltonian, evolve, UnitaryMatrix, WaveguideArray};

pub const CONFIG_SCHEMA: &str = "qwspi/1";

/// Which photon state is launched into the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// One photon in one guide.
    Single,
    /// A photon pair in two guides; the spectrum is the pair marginal.
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkSection {
    pub num_guides: usize,
    /// Nearest-neighbor coupling per millimeter.
    pub coupling_per_mm: f64,
    /// On-site propagation constant per millimeter (common offset).
    pub propagation_per_mm: f64,
    /// Overall Hamiltonian scale factor.
    pub hamiltonian_scale: f64,
    pub length_mm: f64,
    pub input: InputKind,
    /// Launch guide for a single photon; default is the center guide.
    pub input_guide: Option<usize>,
    /// Launch guides for a pair; default is the two center guides.
    pub pair_guides: Option<[usize; 2]>,
    pub indistinguishable: bool,
}

impl Default for WalkSection {
    fn default() -> Self {
        Self {
            num_guides: 13,
            coupling_per_mm: 0.34,
            propagation_per_mm: 0.0,
            hamiltonian_scale: 1.0,
            length_mm: 9.0,
            input: InputKind::Single,
            input_guide: None,
            pair_guides: None,
            indistinguishable: true,
        }
    }
}

impl WalkSection {
    pub fn input_guide(&self) -> usize {
        self.input_guide.unwrap_or(self.num_guides / 2)
    }

    pub fn pair_guides(&self) -> [usize; 2] {
        self.pair_guides
            .unwrap_or([self.num_guides / 2, self.num_guides / 2 + 1])
    }

    pub fn to_waveguide_array(&self) -> Result<WaveguideArray> {
        WaveguideArray::new(
            self.num_guides,
            self.coupling_per_mm,
            self.propagation_per_mm,
            self.length_mm,
        )?
        .with_scale(self.hamiltonian_scale)
    }

    /// The evolution operator at the end of the array.
    pub fn unitary(&self) -> Result<UnitaryMatrix> {
        let array = self.to_waveguide_array()?;
        evolve(&build_hamiltonian(&array), array.length())
    }

    fn validate(&self) -> Result<()> {
        self.to_waveguide_array()?;
        match self.input {
            InputKind::Single => {
                let g = self.input_guide();
                if g >= self.num_guides {
                    return Err(Error::Config(format!(
                        "input_guide {g} is outside the {}-guide array",
                        self.num_guides
                    )));
                }
            }
            InputKind::Pair => {
                let [a, b] = self.pair_guides();
                if a >= self.num_guides || b >= self.num_guides {
                    return Err(Error::Config(format!(
                        "pair_guides [{a}, {b}] fall outside the {}-guide array",
                        self.num_guides
                    )));
                }
                if a == b {
                    return Err(Error::Config(
                        "pair_guides must name two distinct guides".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub grid_width: usize,
    pub grid_height: usize,
    pub mode_pitch_px: f64,
    /// 1/e^2 intensity radius of a mode spot, in pixels.
    pub mode_waist_px: f64,
    pub center_row: f64,
    pub first_mode_col: f64,
    pub superpixel_radius_px: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            grid_width: 64,
            grid_height: 16,
            mode_pitch_px: 4.6,
            mode_waist_px: 1.8,
            center_row: 8.0,
            first_mode_col: 4.0,
            superpixel_radius_px: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSection {
    pub ordering: MaskOrdering,
    /// Sampling fractions the pipeline reconstructs at.
    pub fractions: Vec<f64>,
    /// Per-polarity exposure time for one mask (s).
    pub integration_time_s: f64,
    /// Exposure time per mode in the raster reference scan (s).
    pub raster_integration_time_s: f64,
    /// Mask switching and settling cost charged per exposure (s).
    pub per_mask_overhead_s: f64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            ordering: MaskOrdering::CakeCutting,
            fractions: vec![0.25, 0.5, 1.0],
            integration_time_s: 1.0,
            raster_integration_time_s: 10.0,
            per_mask_overhead_s: 0.17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub master_seed: u64,
    pub noise: NoiseMode,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            master_seed: 1,
            noise: NoiseMode::On,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schema: String,
    #[serde(default)]
    pub walk: WalkSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub source: SourceDetectorModel,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub tv: TvParams,
    #[serde(default)]
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            walk: WalkSection::default(),
            geometry: GeometrySection::default(),
            source: SourceDetectorModel::default(),
            acquisition: AcquisitionSection::default(),
            tv: TvParams::default(),
            run: RunSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema tag must be \"{CONFIG_SCHEMA}\", got \"{}\"",
                self.schema
            )));
        }
        self.walk.validate()?;
        self.optical_geometry()?;
        let g = &self.geometry;
        if !(g.superpixel_radius_px >= 0.0 && g.superpixel_radius_px.is_finite()) {
            return Err(Error::Config(format!(
                "superpixel_radius_px must be finite and nonnegative, got {}",
                g.superpixel_radius_px
            )));
        }
        let n = g.grid_width * g.grid_height;
        if !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid {}x{} has {n} pixels; a power of two is required for the mask basis",
                g.grid_width, g.grid_height
            )));
        }
        self.source.validate().map_err(as_config)?;
        let a = &self.acquisition;
        if a.fractions.is_empty() {
            return Err(Error::Config("fractions must not be empty".into()));
        }
        for &f in &a.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "sampling fractions must lie in (0, 1], got {f}"
                )));
            }
        }
        for (name, v, strict) in [
            ("integration_time_s", a.integration_time_s, true),
            ("raster_integration_time_s", a.raster_integration_time_s, true),
            ("per_mask_overhead_s", a.per_mask_overhead_s, false),
        ] {
            if !v.is_finite() || v < 0.0 || (strict && v == 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be {} and finite, got {v}",
                    if strict { "positive" } else { "nonnegative" }
                )));
            }
        }
        self.tv.validate().map_err(as_config)?;
        Ok(())
    }

    /// Facet geometry with one mode spot per waveguide.
    pub fn optical_geometry(&self) -> Result<OpticalGeometry> {
        let g = &self.geometry;
        OpticalGeometry::new(
            g.grid_width,
            g.grid_height,
            self.walk.num_guides,
            g.mode_pitch_px,
            g.mode_waist_px,
            g.center_row,
            g.first_mode_col,
        )
        .map_err(as_config)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn minimal_file_with_schema_tag_loads_defaults() {
        let cfg = ExperimentConfig::from_toml_str("schema = \"qwspi/1\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.walk.input_guide(), 6);
        assert_eq!(cfg.walk.pair_guides(), [6, 7]);
    }

    #[test]
    fn missing_or_wrong_schema_tag_is_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("[walk]\nnum_guides = 13\n"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml_str("schema = \"qwspi/2\"\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "schema = \"qwspi/1\"\n[walk]\nnum_guides = 13\nbogus_knob = 2\n";
        let err = ExperimentConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("bogus_knob"), "{err}");
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for bad in [
            "schema = \"qwspi/1\"\n[walk]\ninput_guide = 40\n",
            "schema = \"qwspi/1\"\n[walk]\ninput = \"pair\"\npair_guides = [3, 3]\n",
            "schema = \"qwspi/1\"\n[acquisition]\nfractions = [0.0]\n",
            "schema = \"qwspi/1\"\n[acquisition]\nfractions = []\n",
            "schema = \"qwspi/1\"\n[acquisition]\nintegration_time_s = 0.0\n",
            "schema = \"qwspi/1\"\n[geometry]\ngrid_width = 60\n",
        ] {
            assert!(ExperimentConfig::from_toml_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn walk_section_builds_the_unitary() {
        let cfg = ExperimentConfig::default();
        let u = cfg.walk.unitary().unwrap();
        assert_eq!(u.dim(), 13);
    }
}
