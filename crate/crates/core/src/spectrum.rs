//! Mode-intensity extraction from reconstructed facet images.
//!
//! The image is collapsed to a per-column intensity profile, a sum of
//! Gaussians is fitted to the profile, and each mode's intensity is the area
//! of its component. Abscissae are column centers (`column + 0.5`), the same
//! coordinate system the rendering geometry uses for mode centers, so
//! geometry mode positions can seed the fit directly.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::facet::PixelImage;
use crate::walk::ModeSpectrum;

/// Per-column intensity totals of an image; negatives are clamped before
/// summing since intensity below zero is reconstruction artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnProfile {
    values: Vec<f64>,
}

impl ColumnProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty column profile".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "profile values must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Collapses an image to its per-column profile.
pub fn column_profile(image: &PixelImage) -> ColumnProfile {
    let mut cols = vec![0.0f64; image.width()];
    for r in 0..image.height() {
        for (c, col) in cols.iter_mut().enumerate() {
            *col += image.value(r, c).max(0.0);
        }
    }
    ColumnProfile { values: cols }
}

/// One Gaussian of the sum: `amplitude * exp(-(x - center)^2 / (2 width^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

/// Converged (or best-effort) Gaussian-sum fit. Components are sorted by
/// center. `degenerate` marks fits whose components collapsed onto each
/// other or went negative; their intensities are still defined but suspect.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub components: Vec<GaussianComponent>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub degenerate: bool,
}

impl GaussianFit {
    /// Component areas `amplitude * width * sqrt(2 pi)`, clamped at zero and
    /// normalized to unit sum. An all-zero fit yields the all-zero spectrum.
    pub fn intensities(&self) -> Result<ModeSpectrum> {
        let areas: Vec<f64> = self
            .components
            .iter()
            .map(|c| (c.amplitude * c.width.abs() * (2.0 * std::f64::consts::PI).sqrt()).max(0.0))
            .collect();
        let spectrum = ModeSpectrum::new(areas)?;
        if spectrum.sum() > 0.0 {
            spectrum.unit_sum()
        } else {
            Ok(spectrum)
        }
    }
}

/// Mean squared difference of two spectra of equal length.
pub fn mse(a: &ModeSpectrum, b: &ModeSpectrum) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
            context: "spectrum lengths in mse",
        });
    }
    let total: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(total / a.len() as f64)
}

/// Gaussian-sum model and its Jacobian at abscissae `x`, parameters packed
/// `[a0, c0, s0, a1, c1, s1, ...]`.
fn model_into(theta: &[f64], x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for k in 0..theta.len() / 3 {
        let (a, c, s) = (theta[3 * k], theta[3 * k + 1], theta[3 * k + 2]);
        let s2 = (s * s).max(1e-12);
        for (o, &xi) in out.iter_mut().zip(x) {
            let d = xi - c;
            *o += a * (-d * d / (2.0 * s2)).exp();
        }
    }
}

fn jacobian_into(theta: &[f64], x: &[f64], jac: &mut DMatrix<f64>) {
    for k in 0..theta.len() / 3 {
        let (a, c, s) = (theta[3 * k], theta[3 * k + 1], theta[3 * k + 2]);
        let s2 = (s * s).max(1e-12);
        // d/ds of exp(-d^2 / 2s^2) = e * d^2 / s^3, odd in s.
        let s3 = s2 * if s.abs() < 1e-6 { 1e-6f64.copysign(s) } else { s };
        for (j, &xi) in x.iter().enumerate() {
            let d = xi - c;
            let e = (-d * d / (2.0 * s2)).exp();
            jac[(j, 3 * k)] = e;
            jac[(j, 3 * k + 1)] = a * e * d / s2;
            jac[(j, 3 * k + 2)] = a * e * d * d / s3;
        }
    }
}

fn sse(theta: &[f64], x: &[f64], y: &[f64], scratch: &mut [f64]) -> f64 {
    model_into(theta, x, scratch);
    scratch
        .iter()
        .zip(y)
        .map(|(m, v)| (m - v) * (m - v))
        .sum()
}

const MAX_FIT_ITERATIONS: usize = 500;

/// Per-parameter search boxes. A sum-of-Gaussians fit with no bounds is
/// unstable when a component sits on near-zero intensity: its residual
/// landscape is flat and the component drifts off to model background,
/// taking the rest of the fit with it. Seeds come from known optics, so each
/// parameter is confined to a box around its seed instead.
struct ParameterBoxes {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ParameterBoxes {
    fn new(init_centers: &[f64], init_width: f64, profile: &ColumnProfile) -> Self {
        let peak = profile.values().iter().cloned().fold(0.0f64, f64::max);
        let span = profile.len() as f64;
        let mut sorted = init_centers.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let min_gap = sorted
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(f64::INFINITY, f64::min);
        // Half the seed spacing keeps components from crossing; a lone
        // component may roam the whole profile.
        let center_halfwidth = if min_gap.is_finite() {
            (min_gap / 2.0).max(0.25)
        } else {
            span
        };
        let mut lo = Vec::with_capacity(3 * init_centers.len());
        let mut hi = Vec::with_capacity(3 * init_centers.len());
        for &c in init_centers {
            lo.push(0.0);
            hi.push(2.0 * peak);
            lo.push((c - center_halfwidth).max(0.5));
            hi.push((c + center_halfwidth).min(span - 0.5));
            lo.push(init_width / 3.0);
            hi.push(init_width * 3.0);
        }
        Self { lo, hi }
    }

    fn clamp(&self, theta: &mut [f64]) {
        for ((t, lo), hi) in theta.iter_mut().zip(&self.lo).zip(&self.hi) {
            *t = t.clamp(*lo, *hi);
        }
    }
}

/// Fits a sum of `init_centers.len()` Gaussians to `profile` by
/// Levenberg-Marquardt with an analytic Jacobian. Initial amplitudes are the
/// profile heights at the seed centers, all widths start at `init_width`.
/// Parameters stay inside boxes around their seeds: centers within half the
/// seed spacing, widths within a factor 3 of `init_width`, amplitudes in
/// `[0, 2 * peak]`; candidate steps are projected onto the boxes.
///
/// Runs out of iterations without meeting the relative-improvement stop and
/// you get [`Error::NonConvergedFit`] carrying the best iterate; a profile
/// that is identically zero short-circuits to the zero fit.
pub fn fit_gaussians(
    profile: &ColumnProfile,
    init_centers: &[f64],
    init_width: f64,
) -> Result<GaussianFit> {
    if init_centers.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one initial center is required".into(),
        ));
    }
    if !(init_width > 0.0 && init_width.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "initial width must be positive and finite, got {init_width}"
        )));
    }
    if let Some(c) = init_centers.iter().find(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite initial center {c}"
        )));
    }
    let n_params = 3 * init_centers.len();
    if n_params > profile.len() {
        return Err(Error::InvalidParameter(format!(
            "{n_params} parameters cannot be determined from {} columns",
            profile.len()
        )));
    }

    let x: Vec<f64> = (0..profile.len()).map(|j| j as f64 + 0.5).collect();
    let y = profile.values();

    if y.iter().all(|v| *v == 0.0) {
        let components = init_centers
            .iter()
            .map(|&c| GaussianComponent {
                amplitude: 0.0,
                center: c,
                width: init_width,
            })
            .collect();
        return Ok(GaussianFit {
            components,
            residual_norm: 0.0,
            iterations: 0,
            degenerate: false,
        });
    }

    let boxes = ParameterBoxes::new(init_centers, init_width, profile);
    let mut theta = Vec::with_capacity(n_params);
    for &c in init_centers {
        let j = (c - 0.5).round().clamp(0.0, (profile.len() - 1) as f64) as usize;
        theta.push(y[j].max(y.iter().cloned().fold(0.0f64, f64::max) * 1e-3));
        theta.push(c);
        theta.push(init_width);
    }
    boxes.clamp(&mut theta);

    let mut scratch = vec![0.0; x.len()];
    let mut jac = DMatrix::zeros(x.len(), n_params);
    let mut current_sse = sse(&theta, &x, y, &mut scratch);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        jacobian_into(&theta, &x, &mut jac);
        model_into(&theta, &x, &mut scratch);
        let residual = DVector::from_iterator(
            x.len(),
            scratch.iter().zip(y).map(|(m, v)| m - v),
        );
        let gradient = jac.tr_mul(&residual);

        // Active set: a parameter pinned at a box face whose gradient
        // points outward is frozen, and the step is solved in the free
        // subspace. At the constrained optimum the free gradient vanishes,
        // which plain clamp-after-step never achieves.
        let free: Vec<usize> = (0..n_params)
            .filter(|&i| {
                let at_lo = theta[i] <= boxes.lo[i];
                let at_hi = theta[i] >= boxes.hi[i];
                !((at_lo && gradient[i] > 0.0) || (at_hi && gradient[i] < 0.0))
            })
            .collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        let free_gradient_max = free
            .iter()
            .map(|&i| gradient[i].abs())
            .fold(0.0f64, f64::max);
        if free_gradient_max < 1e-12 * current_sse.max(1.0) {
            converged = true;
            break;
        }
        let jac_free = jac.select_columns(free.iter());
        let gradient_free = jac_free.tr_mul(&residual);
        let hessian_free = jac_free.tr_mul(&jac_free);

        let mut damped = hessian_free.clone();
        for i in 0..free.len() {
            damped[(i, i)] += lambda * hessian_free[(i, i)].max(1e-12);
        }
        let step = match Cholesky::new(damped) {
            Some(chol) => chol.solve(&(-&gradient_free)),
            None => {
                lambda = (lambda * 10.0).min(1e12);
                continue;
            }
        };
        let mut candidate = theta.clone();
        for (slot, &i) in free.iter().enumerate() {
            candidate[i] += step[slot];
        }
        boxes.clamp(&mut candidate);
        let candidate_sse = sse(&candidate, &x, y, &mut scratch);
        if candidate_sse <= current_sse {
            let improvement = current_sse - candidate_sse;
            // Projection can pin parameters at a box face, where progress
            // stalls with the raw step still large; the actual (clamped)
            // move is the step that matters.
            let moved = theta
                .iter()
                .zip(&candidate)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let scale = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
            theta = candidate;
            lambda = (lambda / 3.0).max(1e-12);
            current_sse = candidate_sse;
            // MINPACK-style ftol/xtol: stop when an accepted step neither
            // improves the fit nor moves the parameters meaningfully.
            if improvement <= 1.5e-8 * current_sse.max(1e-300)
                || moved <= 1.5e-8 * (1.0 + scale)
            {
                converged = true;
                break;
            }
        } else {
            lambda = (lambda * 3.0).min(1e12);
        }
    }

    let mut components: Vec<GaussianComponent> = (0..init_centers.len())
        .map(|k| GaussianComponent {
            amplitude: theta[3 * k],
            center: theta[3 * k + 1],
            width: theta[3 * k + 2].abs(),
        })
        .collect();
    components.sort_by(|a, b| a.center.total_cmp(&b.center));
    let mut degenerate = components.iter().any(|c| c.amplitude < 0.0);
    for pair in components.windows(2) {
        if (pair[1].center - pair[0].center).abs() < 0.5 {
            degenerate = true;
        }
    }
    let fit = GaussianFit {
        components,
        residual_norm: current_sse.sqrt(),
        iterations,
        degenerate,
    };
    if converged {
        Ok(fit)
    } else {
        Err(Error::NonConvergedFit(Box::new(fit)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_profile(components: &[(f64, f64, f64)], len: usize) -> ColumnProfile {
        let mut v = vec![0.0; len];
        for (j, val) in v.iter_mut().enumerate() {
            let x = j as f64 + 0.5;
            for &(a, c, s) in components {
                *val += a * (-(x - c) * (x - c) / (2.0 * s * s)).exp();
            }
        }
        ColumnProfile::new(v).unwrap()
    }

    #[test]
    fn column_profile_sums_columns_and_clamps_negatives() {
        let img = PixelImage::from_signed(3, 2, vec![1.0, -2.0, 0.5, 2.0, 1.0, -0.5]).unwrap();
        let p = column_profile(&img);
        assert_eq!(p.values(), &[3.0, 1.0, 0.5]);
    }

    #[test]
    fn exact_profile_is_recovered_to_machine_precision() {
        let truth = [(2.0, 10.0, 0.9), (1.0, 20.0, 1.1), (3.0, 30.5, 0.8)];
        let profile = synth_profile(&truth, 40);
        let fit = fit_gaussians(&profile, &[10.8, 19.4, 31.0], 1.4).unwrap();
        assert!(!fit.degenerate);
        assert!(fit.residual_norm < 1e-6, "residual {}", fit.residual_norm);
        for (comp, (a, c, s)) in fit.components.iter().zip(truth) {
            assert!((comp.amplitude - a).abs() < 1e-6);
            assert!((comp.center - c).abs() < 1e-6);
            assert!((comp.width - s).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_peaks_give_equal_intensities() {
        let profile = synth_profile(&[(1.5, 8.0, 1.0), (1.5, 24.0, 1.0)], 32);
        let fit = fit_gaussians(&profile, &[7.0, 25.0], 1.5).unwrap();
        let spectrum = fit.intensities().unwrap();
        assert!((spectrum.values()[0] - 0.5).abs() < 1e-9);
        assert!((spectrum.values()[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn intensities_track_component_areas() {
        // Areas a*s: 2*1 and 1*2 are equal; 2*0.5 is half of each.
        let truth = [(2.0, 8.0, 1.0), (1.0, 16.0, 2.0), (2.0, 26.0, 0.5)];
        let profile = synth_profile(&truth, 34);
        let fit = fit_gaussians(&profile, &[8.5, 15.5, 26.5], 1.2).unwrap();
        let spectrum = fit.intensities().unwrap();
        assert!((spectrum.values()[0] - 0.4).abs() < 1e-6);
        assert!((spectrum.values()[1] - 0.4).abs() < 1e-6);
        assert!((spectrum.values()[2] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn noisy_profile_still_yields_a_unit_sum_spectrum() {
        let mut profile = synth_profile(&[(2.0, 10.0, 1.0), (1.0, 20.0, 1.0)], 30).values.clone();
        for (j, v) in profile.iter_mut().enumerate() {
            // Deterministic ripple, bounded away from negative.
            *v = (*v + 0.02 * ((j * 37 % 11) as f64 / 11.0 - 0.5)).max(0.0);
        }
        let profile = ColumnProfile::new(profile).unwrap();
        let fit = fit_gaussians(&profile, &[9.0, 21.0], 1.5).unwrap();
        let spectrum = fit.intensities().unwrap();
        assert!((spectrum.sum() - 1.0).abs() < 1e-12);
        assert!(spectrum.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn collapsed_centers_are_flagged_degenerate() {
        let profile = synth_profile(&[(2.0, 16.0, 1.0)], 32);
        // Two seeds for one true peak: the components merge.
        let fit = match fit_gaussians(&profile, &[15.0, 17.0], 1.0) {
            Ok(f) => f,
            Err(Error::NonConvergedFit(f)) => *f,
            Err(e) => panic!("unexpected error {e}"),
        };
        assert!(fit.degenerate);
    }

    #[test]
    fn zero_profile_short_circuits() {
        let profile = ColumnProfile::new(vec![0.0; 16]).unwrap();
        let fit = fit_gaussians(&profile, &[4.0, 12.0], 1.0).unwrap();
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.residual_norm, 0.0);
        let spectrum = fit.intensities().unwrap();
        assert!(spectrum.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mse_hand_values_and_length_check() {
        let a = ModeSpectrum::new(vec![0.0, 1.0]).unwrap();
        let b = ModeSpectrum::new(vec![0.5, 0.5]).unwrap();
        assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!((mse(&a, &a).unwrap()).abs() < 1e-15);
        let c = ModeSpectrum::new(vec![1.0]).unwrap();
        assert!(matches!(
            mse(&a, &c),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn overparameterized_fit_is_rejected() {
        let profile = ColumnProfile::new(vec![1.0; 5]).unwrap();
        assert!(fit_gaussians(&profile, &[1.0, 3.0], 1.0).is_err());
    }
}
