//! Output-facet image synthesis and per-mode superpixels.
//!
//! The chip's output facet is imaged onto a `grid_width x grid_height` pixel
//! grid. Each waveguide mode appears as a round Gaussian spot on a common
//! row, spaced by a fixed pitch. A rendered image is the intensity-weighted
//! sum of unit-integral spots, so it is linear in the mode spectrum and its
//! total equals the spectrum total up to truncation at the grid edges.
//!
//! Superpixels group the pixels nearest each mode center; they are what the
//! raster-scan reference measurement switches on one mode at a time.

use crate::error::{Error, Result};
use crate::walk::ModeSpectrum;

/// Placement of the mode spots on the pixel grid.
///
/// Pixel `(row, col)` is centered at real coordinates `(row, col)`; mode `k`
/// is centered at `(center_row, first_mode_col + k * mode_pitch_px)`.
/// `mode_waist_px` is the 1/e² intensity radius of a spot, i.e. twice the
/// Gaussian sigma of the intensity profile.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalGeometry {
    grid_width: usize,
    grid_height: usize,
    num_modes: usize,
    mode_pitch_px: f64,
    mode_waist_px: f64,
    center_row: f64,
    first_mode_col: f64,
}

impl OpticalGeometry {
    pub fn new(
        grid_width: usize,
        grid_height: usize,
        num_modes: usize,
        mode_pitch_px: f64,
        mode_waist_px: f64,
        center_row: f64,
        first_mode_col: f64,
    ) -> Result<Self> {
        if grid_width == 0 || grid_height == 0 {
            return Err(Error::Geometry("pixel grid must be nonempty".into()));
        }
        if num_modes == 0 {
            return Err(Error::Geometry("need at least one mode".into()));
        }
        for (name, v) in [
            ("mode_pitch_px", mode_pitch_px),
            ("mode_waist_px", mode_waist_px),
            ("center_row", center_row),
            ("first_mode_col", first_mode_col),
        ] {
            if !v.is_finite() {
                return Err(Error::Geometry(format!("{name} must be finite")));
            }
        }
        if mode_pitch_px <= 0.0 {
            return Err(Error::Geometry("mode pitch must be positive".into()));
        }
        if mode_waist_px <= 0.0 {
            return Err(Error::Geometry("mode waist must be positive".into()));
        }
        let geom = Self {
            grid_width,
            grid_height,
            num_modes,
            mode_pitch_px,
            mode_waist_px,
            center_row,
            first_mode_col,
        };
        for k in 0..num_modes {
            let (row, col) = geom.mode_center(k);
            if row < 0.0
                || row > (grid_height - 1) as f64
                || col < 0.0
                || col > (grid_width - 1) as f64
            {
                return Err(Error::Geometry(format!(
                    "mode {k} center ({row:.2}, {col:.2}) lies outside the {grid_width}x{grid_height} grid"
                )));
            }
        }
        Ok(geom)
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn mode_pitch_px(&self) -> f64 {
        self.mode_pitch_px
    }

    pub fn mode_waist_px(&self) -> f64 {
        self.mode_waist_px
    }

    pub fn center_row(&self) -> f64 {
        self.center_row
    }

    pub fn first_mode_col(&self) -> f64 {
        self.first_mode_col
    }

    /// `(row, col)` center of mode `k`.
    pub fn mode_center(&self, k: usize) -> (f64, f64) {
        (
            self.center_row,
            self.first_mode_col + k as f64 * self.mode_pitch_px,
        )
    }

    /// Gaussian sigma of the intensity spot.
    pub fn sigma_px(&self) -> f64 {
        self.mode_waist_px / 2.0
    }
}

impl Default for OpticalGeometry {
    /// 13 modes on a 64x16 grid: pitch 4.6 px (spanning ~60 of 64 columns),
    /// spot FWHM ~2 px, centered on row 8.
    fn default() -> Self {
        OpticalGeometry::new(64, 16, 13, 4.6, 1.8, 8.0, 4.0)
            .expect("default geometry is valid")
    }
}

/// A row-major grid of pixel intensities.
///
/// Images built through [`PixelImage::new`] are nonnegative. Reconstructions
/// may carry small negative excursions; they enter through
/// [`PixelImage::from_signed`] and are clamped to zero only on export.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let img = Self::from_signed(width, height, values)?;
        if let Some(v) = img.values.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pixel values must be nonnegative, got {v}"
            )));
        }
        Ok(img)
    }

    /// Like [`PixelImage::new`] but permits negative values.
    pub fn from_signed(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image must be nonempty".into()));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: values.len(),
                context: "pixel buffer length",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "pixel values must be finite".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Rescaled to unit total. Errors when the total is not positive.
    pub fn unit_sum(&self) -> Result<PixelImage> {
        let s = self.sum();
        if s <= 0.0 {
            return Err(Error::InvalidParameter(
                "cannot unit-sum normalize an image with nonpositive total".into(),
            ));
        }
        PixelImage::from_signed(
            self.width,
            self.height,
            self.values.iter().map(|v| v / s).collect(),
        )
    }

    /// Negative values clamped to zero.
    pub fn clamped_nonneg(&self) -> PixelImage {
        PixelImage {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v.max(0.0)).collect(),
        }
    }

    /// CSV grid, one image row per line. Negative values are clamped at
    /// export; nonnegative values round-trip exactly.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|c| format!("{}", self.value(r, c).max(0.0)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<PixelImage> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| {
                        Error::Parse(format!("line {}: bad pixel value '{tok}'", lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        let height = rows.len();
        if height == 0 {
            return Err(Error::Parse("image CSV has no rows".into()));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Parse("image CSV rows have unequal lengths".into()));
        }
        PixelImage::from_signed(width, height, rows.concat())
    }

    /// Plain-text portable graymap (P2). Intensities are clamped to zero and
    /// quantized to 16 bits against the image maximum, which is recorded in a
    /// comment so imports can undo the scaling.
    pub fn to_pgm_string(&self) -> String {
        const MAXVAL: f64 = 65535.0;
        let peak = self.max().max(0.0);
        let mut out = format!(
            "P2\n# scale={}\n{} {}\n65535\n",
            peak, self.width, self.height
        );
        for r in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|c| {
                    let v = self.value(r, c).max(0.0);
                    let q = if peak > 0.0 {
                        (v / peak * MAXVAL).round() as u32
                    } else {
                        0
                    };
                    q.to_string()
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_pgm_str(text: &str) -> Result<PixelImage> {
        let mut scale: Option<f64> = None;
        let mut tokens: Vec<&str> = Vec::new();
        for line in text.lines() {
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("scale=") {
                    scale = v.trim().parse::<f64>().ok();
                }
                continue;
            }
            tokens.extend(line.split_whitespace());
        }
        if tokens.first() != Some(&"P2") {
            return Err(Error::Parse("not a plain-text P2 graymap".into()));
        }
        if tokens.len() < 4 {
            return Err(Error::Parse("truncated graymap header".into()));
        }
        let parse = |tok: &str| -> Result<u64> {
            tok.parse::<u64>()
                .map_err(|_| Error::Parse(format!("bad graymap integer '{tok}'")))
        };
        let width = parse(tokens[1])? as usize;
        let height = parse(tokens[2])? as usize;
        let maxval = parse(tokens[3])?;
        if maxval == 0 {
            return Err(Error::Parse("graymap maxval must be positive".into()));
        }
        let data = &tokens[4..];
        if data.len() != width * height {
            return Err(Error::Parse(format!(
                "graymap has {} samples, expected {}",
                data.len(),
                width * height
            )));
        }
        let factor = scale.map(|s| s / maxval as f64).unwrap_or(1.0);
        let values: Vec<f64> = data
            .iter()
            .map(|tok| parse(tok).map(|q| q as f64 * factor))
            .collect::<Result<_>>()?;
        PixelImage::new(width, height, values)
    }
}

/// Renders the facet image for `spectrum`: the sum over modes of the mode
/// intensity times a unit-integral round Gaussian at the mode center,
/// sampled at pixel centers. Linear in the spectrum; the image total equals
/// the spectrum total up to sampling error and truncation at the grid edges.
pub fn render_image(spectrum: &ModeSpectrum, geometry: &OpticalGeometry) -> Result<PixelImage> {
    if spectrum.len() != geometry.num_modes() {
        return Err(Error::DimensionMismatch {
            expected: geometry.num_modes(),
            got: spectrum.len(),
            context: "spectrum length vs configured mode count",
        });
    }
    let (w, h) = (geometry.grid_width(), geometry.grid_height());
    let sigma = geometry.sigma_px();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let mut values = vec![0.0; w * h];
    for (k, &intensity) in spectrum.values().iter().enumerate() {
        if intensity == 0.0 {
            continue;
        }
        let (cr, cc) = geometry.mode_center(k);
        for r in 0..h {
            let dr = r as f64 - cr;
            for c in 0..w {
                let dc = c as f64 - cc;
                values[r * w + c] += intensity * norm * (-(dr * dr + dc * dc) * inv2s2).exp();
            }
        }
    }
    PixelImage::new(w, h, values)
}

/// Disjoint pixel sets addressing one mode each. Pixels are `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelAssignment {
    grid_width: usize,
    grid_height: usize,
    sets: Vec<Vec<(usize, usize)>>,
}

impl SuperpixelAssignment {
    pub fn num_modes(&self) -> usize {
        self.sets.len()
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn set(&self, mode: usize) -> &[(usize, usize)] {
        &self.sets[mode]
    }

    pub fn sets(&self) -> &[Vec<(usize, usize)>] {
        &self.sets
    }
}

/// Groups pixels into per-mode superpixels.
///
/// A pixel joins mode `k` when it lies within `radius` of the center of `k`
/// and `k` is its nearest center (distance ties go to the lower mode index).
/// A mode whose disc captures no pixel still gets its single nearest pixel
/// (ties to the lower pixel index), so every set is nonempty. Layouts that
/// would force two modes onto one pixel are rejected, as is any pitch below
/// one pixel.
pub fn build_superpixels(
    geometry: &OpticalGeometry,
    radius: f64,
) -> Result<SuperpixelAssignment> {
    if !radius.is_finite() || radius < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "superpixel radius must be finite and nonnegative, got {radius}"
        )));
    }
    if geometry.mode_pitch_px() < 1.0 {
        return Err(Error::Geometry(format!(
            "mode pitch {} px is below one pixel; superpixels would overlap",
            geometry.mode_pitch_px()
        )));
    }
    let (w, h, m) = (
        geometry.grid_width(),
        geometry.grid_height(),
        geometry.num_modes(),
    );
    let centers: Vec<(f64, f64)> = (0..m).map(|k| geometry.mode_center(k)).collect();
    let dist2 = |r: usize, c: usize, center: &(f64, f64)| -> f64 {
        let dr = r as f64 - center.0;
        let dc = c as f64 - center.1;
        dr * dr + dc * dc
    };

    // owner[pixel] = mode whose disc claims it, after nearest-center tie-break.
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let r2 = radius * radius;
    for r in 0..h {
        for c in 0..w {
            let mut best: Option<(f64, usize)> = None;
            for (k, center) in centers.iter().enumerate() {
                let d2 = dist2(r, c, center);
                match best {
                    Some((bd, _)) if d2 >= bd => {}
                    _ => best = Some((d2, k)),
                }
            }
            if let Some((d2, k)) = best {
                if d2 <= r2 {
                    owner[r * w + c] = Some(k);
                }
            }
        }
    }

    let mut sets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
    for r in 0..h {
        for c in 0..w {
            if let Some(k) = owner[r * w + c] {
                sets[k].push((r, c));
            }
        }
    }

    // Guarantee nonempty sets: a starved mode takes its single nearest pixel.
    for (k, center) in centers.iter().enumerate() {
        if !sets[k].is_empty() {
            continue;
        }
        let mut best = (f64::INFINITY, 0usize);
        for r in 0..h {
            for c in 0..w {
                let d2 = dist2(r, c, center);
                let idx = r * w + c;
                if d2 < best.0 {
                    best = (d2, idx);
                }
            }
        }
        let idx = best.1;
        if let Some(other) = owner[idx] {
            return Err(Error::Geometry(format!(
                "modes {other} and {k} both claim pixel ({}, {}); widen the pitch or shrink the radius",
                idx / w,
                idx % w
            )));
        }
        owner[idx] = Some(k);
        sets[k].push((idx / w, idx % w));
    }

    Ok(SuperpixelAssignment {
        grid_width: w,
        grid_height: h,
        sets,
    })
}
