//! Image recovery from differential mask measurements.
//!
//! Two routes are provided. [`invert_full`] is the exact orthogonal inverse
//! and needs every mask; [`tv_reconstruct`] minimizes total variation plus a
//! quadratic data term under a nonnegativity constraint and works from any
//! subset of masks.
//!
//! The solver is ADMM on the split `w = Dx` with `D` the forward-difference
//! gradient (Neumann boundary):
//!
//! * `w` step: shrinkage of `Dx + u` at threshold `1/beta` (the exact prox
//!   of the TV norm);
//! * `x` step: the unconstrained quadratic minimizer from a cached Cholesky
//!   factorization, pulled back onto `x >= 0` by a projected backtracking
//!   line search, with a projected-gradient fallback;
//! * scaled dual update `u += Dx - w`.
//!
//! Both steps are descent steps on the augmented Lagrangian at the multiplier
//! in effect, so within an iteration the augmented Lagrangian cannot rise;
//! the worst observed rise is reported in the diagnostics. Across iterations
//! the dual update adds `beta * ||Dx - w||^2`, so no cross-iteration claim is
//! made.
//!
//! Measurements are sorted by natural mask row and the target is scaled by
//! its peak before solving, which makes the output invariant to measurement
//! order (bit-exact) and the default weights usable at any count scale.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acquire::MeasurementRecord;
use crate::error::{Error, Result};
use crate::facet::PixelImage;
use crate::masks::MaskSet;

/// Differential measurements keyed by natural Hadamard row. Rows are unique;
/// order is whatever the acquisition produced.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    values: Vec<f64>,
    rows: Vec<usize>,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>, rows: Vec<usize>) -> Result<Self> {
        if values.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: values.len(),
                context: "measurement values vs selected rows",
            });
        }
        if values.is_empty() {
            return Err(Error::InvalidParameter(
                "measurement vector is empty".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite measurement value {v}"
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(rows.len());
        for &row in &rows {
            if !seen.insert(row) {
                return Err(Error::DuplicateMask { natural_row: row });
            }
        }
        Ok(Self { values, rows })
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

    pub fn selected_rows(&self) -> &[usize] {
        &self.rows
    }

    /// Pairs sorted ascending by natural row; the canonical internal order.
    fn sorted_pairs(&self) -> Vec<(usize, f64)> {
        let mut pairs: Vec<(usize, f64)> =
            self.rows.iter().copied().zip(self.values.iter().copied()).collect();
        pairs.sort_by_key(|&(row, _)| row);
        pairs
    }
}

/// Per-second differential signal `(counts_pos - counts_neg) / T` of each
/// record. The true rate and the intensity-tracking accidental rate both
/// enter this difference in proportion to the mask projection, while the
/// dark floor cancels, so the result is a uniformly scaled projection.
pub fn differential_signal(records: &[MeasurementRecord]) -> Result<MeasurementVector> {
    let mut values = Vec::with_capacity(records.len());
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        if !(r.integration_time > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "record {} has nonpositive integration time {}",
                r.mask_index, r.integration_time
            )));
        }
        values.push((r.counts_pos as f64 - r.counts_neg as f64) / r.integration_time);
        rows.push(r.natural_row);
    }
    MeasurementVector::new(values, rows)
}

/// Builds the sensing matrix whose row `i` is the mask for `pairs[i].0`,
/// flattened row-major to `n` entries of value plus or minus one.
fn sensing_matrix(pairs: &[(usize, f64)], masks: &MaskSet) -> Result<DMatrix<f64>> {
    let n = masks.width() * masks.height();
    let mut a = DMatrix::zeros(pairs.len(), n);
    for (i, &(row, _)) in pairs.iter().enumerate() {
        let mask = masks.mask_by_natural_row(row)?;
        for (j, &v) in mask.values().iter().enumerate() {
            a[(i, j)] = v as f64;
        }
    }
    Ok(a)
}

/// Exact inverse from a complete measurement set. Hadamard rows are mutually
/// orthogonal with squared norm `n`, so the image is `A^T y / n` up to the
/// acquisition gain; output is the raw signed inverse, not normalized.
pub fn invert_full(measurements: &MeasurementVector, masks: &MaskSet) -> Result<PixelImage> {
    let n = masks.width() * masks.height();
    if masks.len() != n {
        return Err(Error::InvalidParameter(format!(
            "mask set holds {} of the {} rows needed for exact inversion",
            masks.len(),
            n
        )));
    }
    if measurements.len() != n {
        return Err(Error::IncompleteSampling {
            have: measurements.len(),
            need: n,
        });
    }
    let pairs = measurements.sorted_pairs();
    let mut x = vec![0.0f64; n];
    for &(row, y) in &pairs {
        let mask = masks.mask_by_natural_row(row)?;
        for (j, &v) in mask.values().iter().enumerate() {
            x[j] += y * v as f64;
        }
    }
    for v in &mut x {
        *v /= n as f64;
    }
    PixelImage::from_signed(masks.width(), masks.height(), x)
}

/// The smooth half of the reconstruction objective,
/// `weight / 2 * ||A x - y||^2`, exposed so the gradient can be checked
/// against finite differences independently of the solver.
#[derive(Debug, Clone)]
pub struct DataFidelity {
    matrix: DMatrix<f64>,
    target: DVector<f64>,
    weight: f64,
}

impl DataFidelity {
    pub fn new(matrix: DMatrix<f64>, target: Vec<f64>, weight: f64) -> Result<Self> {
        if matrix.nrows() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: target.len(),
                context: "sensing matrix rows vs target length",
            });
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fidelity weight must be positive and finite, got {weight}"
            )));
        }
        Ok(Self {
            matrix,
            target: DVector::from_vec(target),
            weight,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        let r = &self.matrix * x - &self.target;
        0.5 * self.weight * r.norm_squared()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let r = &self.matrix * x - &self.target;
        (self.weight * self.matrix.tr_mul(&r)).data.into()
    }
}

/// Which TV norm the solver minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvVariant {
    /// Sum of absolute gradient components.
    Anisotropic,
    /// Sum of per-pixel gradient magnitudes.
    Isotropic,
}

impl std::str::FromStr for TvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anisotropic" => Ok(TvVariant::Anisotropic),
            "isotropic" => Ok(TvVariant::Isotropic),
            other => Err(Error::InvalidParameter(format!(
                "TV variant must be 'anisotropic' or 'isotropic', got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for TvVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TvVariant::Anisotropic => "anisotropic",
            TvVariant::Isotropic => "isotropic",
        })
    }
}

/// Solver weights and stopping rules. The defaults assume the target has
/// been scaled to unit peak, which [`tv_reconstruct`] does internally, so
/// they work unchanged across count scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvParams {
    /// Data-term weight (`mu`). Larger trusts the measurements more.
    pub penalty_weight: f64,
    /// Augmented Lagrangian step (`beta`).
    pub lagrangian_step: f64,
    /// Relative sup-norm change of the image that counts as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub variant: TvVariant,
}

impl Default for TvParams {
    fn default() -> Self {
        Self {
            penalty_weight: 256.0,
            lagrangian_step: 32.0,
            tolerance: 1e-6,
            max_iterations: 500,
            variant: TvVariant::Anisotropic,
        }
    }
}

impl TvParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("penalty_weight", self.penalty_weight),
            ("lagrangian_step", self.lagrangian_step),
            ("tolerance", self.tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Health record of one solver run. The objective trace is evaluated on the
/// peak-scaled problem, so values are comparable across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TvDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Objective `TV(x) + mu/2 ||Ax - y||^2` at the final iterate (scaled
    /// problem).
    pub final_objective: f64,
    /// Worst within-iteration rise of the augmented Lagrangian at the
    /// multiplier in effect. Descent steps keep this at rounding level.
    pub max_lagrangian_increase: f64,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TvSolution {
    pub image: PixelImage,
    pub diagnostics: TvDiagnostics,
}

/// Forward-difference gradient with Neumann boundary: horizontal block then
/// vertical block, each of length `n`, zeros on the last column and row.
struct GradientOp {
    width: usize,
    height: usize,
}

impl GradientOp {
    fn n(&self) -> usize {
        self.width * self.height
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (w, h, n) = (self.width, self.height, self.n());
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                out[i] = if c + 1 < w { x[i + 1] - x[i] } else { 0.0 };
                out[n + i] = if r + 1 < h { x[i + w] - x[i] } else { 0.0 };
            }
        }
    }

    /// `out = D^T g`.
    fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        let (w, h, n) = (self.width, self.height, self.n());
        out.fill(0.0);
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    out[i] -= g[i];
                    out[i + 1] += g[i];
                }
                if r + 1 < h {
                    out[i] -= g[n + i];
                    out[i + w] += g[n + i];
                }
            }
        }
    }

    /// Adds `weight * D^T D` (the Neumann graph Laplacian) to `m`.
    fn add_laplacian(&self, m: &mut DMatrix<f64>, weight: f64) {
        let (w, h) = (self.width, self.height);
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    m[(i, i)] += weight;
                    m[(i + 1, i + 1)] += weight;
                    m[(i, i + 1)] -= weight;
                    m[(i + 1, i)] -= weight;
                }
                if r + 1 < h {
                    m[(i, i)] += weight;
                    m[(i + w, i + w)] += weight;
                    m[(i, i + w)] -= weight;
                    m[(i + w, i)] -= weight;
                }
            }
        }
    }
}

fn tv_norm(g: &[f64], n: usize, variant: TvVariant) -> f64 {
    match variant {
        TvVariant::Anisotropic => g.iter().map(|v| v.abs()).sum(),
        TvVariant::Isotropic => (0..n).map(|i| g[i].hypot(g[n + i])).sum(),
    }
}

/// Exact prox of the TV norm at threshold `1/beta`: componentwise soft
/// shrinkage, or per-pixel group shrinkage of the gradient pair.
fn shrink(v: &[f64], n: usize, threshold: f64, variant: TvVariant, out: &mut [f64]) {
    match variant {
        TvVariant::Anisotropic => {
            for (o, &x) in out.iter_mut().zip(v) {
                *o = x.signum() * (x.abs() - threshold).max(0.0);
            }
        }
        TvVariant::Isotropic => {
            for i in 0..n {
                let rho = v[i].hypot(v[n + i]);
                let scale = if rho > threshold {
                    (rho - threshold) / rho
                } else {
                    0.0
                };
                out[i] = v[i] * scale;
                out[n + i] = v[n + i] * scale;
            }
        }
    }
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// TV-regularized nonnegative reconstruction from any subset of masks.
pub fn tv_reconstruct(
    measurements: &MeasurementVector,
    masks: &MaskSet,
    params: &TvParams,
) -> Result<TvSolution> {
    params.validate()?;
    let (w, h) = (masks.width(), masks.height());
    let n = w * h;
    if measurements.len() > n {
        return Err(Error::InvalidParameter(format!(
            "{} measurements exceed the {} masks of the basis",
            measurements.len(),
            n
        )));
    }

    let pairs = measurements.sorted_pairs();
    let scale = pairs.iter().fold(0.0f64, |m, &(_, y)| m.max(y.abs()));
    if scale == 0.0 {
        return Ok(TvSolution {
            image: PixelImage::zeros(w, h)?,
            diagnostics: TvDiagnostics {
                iterations: 0,
                converged: true,
                final_objective: 0.0,
                max_lagrangian_increase: 0.0,
                objective_trace: Vec::new(),
            },
        });
    }

    let a = sensing_matrix(&pairs, masks)?;
    let y: Vec<f64> = pairs.iter().map(|&(_, y)| y / scale).collect();
    let mu = params.penalty_weight;
    let beta = params.lagrangian_step;
    let grad = GradientOp { width: w, height: h };
    let fidelity = DataFidelity::new(a.clone(), y.clone(), mu)?;

    // Normal matrix of the x step, factored once.
    let aty = a.tr_mul(&DVector::from_column_slice(&y));
    let mut normal = mu * a.tr_mul(&a);
    grad.add_laplacian(&mut normal, beta);
    let chol = cholesky_with_ridge(normal)?;

    // Warm start from the clamped orthogonal back-projection.
    let mut x: Vec<f64> = aty.iter().map(|v| (v / n as f64).max(0.0)).collect();
    let mut dx = vec![0.0; 2 * n];
    grad.apply(&x, &mut dx);
    let mut wvar = dx.clone();
    let mut u = vec![0.0; 2 * n];
    let rhs_base: Vec<f64> = aty.iter().map(|v| mu * v).collect();

    let threshold = 1.0 / beta;
    // L bounds the x-step Hessian: Hadamard rows give A^T A <= n I, and the
    // 4-connected Laplacian D^T D <= 8 I.
    let lipschitz = mu * n as f64 + 8.0 * beta;

    let q_of = |x_val: &[f64], dx_val: &[f64], wv: &[f64], uv: &[f64]| -> f64 {
        let mut coupling = 0.0;
        for i in 0..2 * n {
            let d = dx_val[i] - wv[i] + uv[i];
            coupling += d * d;
        }
        fidelity.value(x_val) + 0.5 * beta * coupling
    };

    let mut diagnostics = TvDiagnostics {
        iterations: 0,
        converged: false,
        final_objective: 0.0,
        max_lagrangian_increase: 0.0,
        objective_trace: Vec::with_capacity(params.max_iterations.min(1024)),
    };

    let mut shrunk = vec![0.0; 2 * n];
    let mut v = vec![0.0; 2 * n];
    let mut dx_new = vec![0.0; 2 * n];
    for iter in 1..=params.max_iterations {
        let al_in = tv_norm(&wvar, n, params.variant) + q_of(&x, &dx, &wvar, &u);

        for i in 0..2 * n {
            v[i] = dx[i] + u[i];
        }
        shrink(&v, n, threshold, params.variant, &mut shrunk);
        std::mem::swap(&mut wvar, &mut shrunk);

        // x step: exact unconstrained minimizer, then pull back to x >= 0.
        let mut rhs = vec![0.0; n];
        for i in 0..2 * n {
            v[i] = wvar[i] - u[i];
        }
        grad.apply_transpose(&v, &mut rhs);
        for i in 0..n {
            rhs[i] = rhs_base[i] + beta * rhs[i];
        }
        let x_uc = chol.solve(&DVector::from_column_slice(&rhs));
        let q_prev = q_of(&x, &dx, &wvar, &u);

        let mut x_new: Option<Vec<f64>> = None;
        let mut t = 1.0;
        for _ in 0..=20 {
            let cand: Vec<f64> = x
                .iter()
                .zip(x_uc.iter())
                .map(|(&xi, &ui)| (xi + t * (ui - xi)).max(0.0))
                .collect();
            grad.apply(&cand, &mut dx_new);
            if q_of(&cand, &dx_new, &wvar, &u) <= q_prev {
                x_new = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let x_next = match x_new {
            Some(cand) => cand,
            None => {
                // Projected gradient with the global Lipschitz step.
                let mut g = fidelity.gradient(&x);
                for i in 0..2 * n {
                    v[i] = dx[i] - wvar[i] + u[i];
                }
                let mut gtv = vec![0.0; n];
                grad.apply_transpose(&v, &mut gtv);
                for i in 0..n {
                    g[i] += beta * gtv[i];
                }
                let cand: Vec<f64> = x
                    .iter()
                    .zip(&g)
                    .map(|(&xi, &gi)| (xi - gi / lipschitz).max(0.0))
                    .collect();
                grad.apply(&cand, &mut dx_new);
                if q_of(&cand, &dx_new, &wvar, &u) <= q_prev {
                    cand
                } else {
                    // Stationary: keep the iterate.
                    grad.apply(&x, &mut dx_new);
                    x.clone()
                }
            }
        };

        let al_out = tv_norm(&wvar, n, params.variant) + q_of(&x_next, &dx_new, &wvar, &u);
        diagnostics.max_lagrangian_increase =
            diagnostics.max_lagrangian_increase.max(al_out - al_in);

        for i in 0..2 * n {
            u[i] += dx_new[i] - wvar[i];
        }

        let step = x_next
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let denom = sup_norm(&x_next).max(1e-12);
        x = x_next;
        std::mem::swap(&mut dx, &mut dx_new);
        let mut true_grad = vec![0.0; 2 * n];
        grad.apply(&x, &mut true_grad);
        diagnostics
            .objective_trace
            .push(tv_norm(&true_grad, n, params.variant) + fidelity.value(&x));
        diagnostics.iterations = iter;
        if step / denom < params.tolerance {
            diagnostics.converged = true;
            break;
        }
    }

    diagnostics.final_objective = *diagnostics.objective_trace.last().unwrap_or(&0.0);
    let image = PixelImage::new(w, h, x.iter().map(|v| v * scale).collect())?;
    Ok(TvSolution { image, diagnostics })
}

/// Cholesky with a diagonal ridge retry. The normal matrix is singular when
/// the all-ones mask is absent (constants are then invisible to every term),
/// so a relative ridge keeps the factorization alive.
fn cholesky_with_ridge(m: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let diag_mean = m.diagonal().mean().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0f64;
    for _ in 0..6 {
        let mut trial = m.clone();
        if ridge > 0.0 {
            for i in 0..trial.nrows() {
                trial[(i, i)] += ridge;
            }
        }
        if let Some(c) = Cholesky::new(trial) {
            return Ok(c);
        }
        ridge = if ridge == 0.0 {
            1e-12 * diag_mean
        } else {
            ridge * 100.0
        };
    }
    Err(Error::ContractViolation(
        "normal matrix could not be factored even with a diagonal ridge".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::MaskSet;

    /// Exact noiseless measurement of `image` with every mask: the plain
    /// mask projections, no gain.
    fn exact_measurements(image: &PixelImage, masks: &MaskSet) -> MeasurementVector {
        let mut values = Vec::new();
        let mut rows = Vec::new();
        for pos in 0..masks.len() {
            let mask = masks.mask(pos);
            let projection: f64 = image
                .values()
                .iter()
                .zip(mask.values())
                .map(|(v, m)| v * *m as f64)
                .sum();
            values.push(projection);
            rows.push(masks.natural_row(pos));
        }
        MeasurementVector::new(values, rows).unwrap()
    }

    fn test_image_8x4() -> PixelImage {
        // A blocky two-level scene: TV-friendly, not constant.
        let mut v = vec![0.0; 32];
        for r in 1..3 {
            for c in 2..6 {
                v[r * 8 + c] = 1.0;
            }
        }
        v[9] = 0.5;
        PixelImage::new(8, 4, v).unwrap()
    }

    #[test]
    fn duplicate_rows_are_rejected() {
        let err = MeasurementVector::new(vec![1.0, 2.0], vec![3, 3]).unwrap_err();
        assert!(matches!(err, Error::DuplicateMask { natural_row: 3 }));
    }

    #[test]
    fn differential_signal_divides_by_integration_time() {
        let records = vec![MeasurementRecord {
            mask_index: 0,
            natural_row: 5,
            counts_pos: 700,
            counts_neg: 200,
            integration_time: 2.0,
            rng_seed: 1,
        }];
        let mv = differential_signal(&records).unwrap();
        assert_eq!(mv.values(), &[250.0]);
        assert_eq!(mv.selected_rows(), &[5]);
    }

    #[test]
    fn full_inversion_recovers_the_exact_image() {
        let masks = MaskSet::from_grid(8, 4).unwrap();
        let img = test_image_8x4();
        let mv = exact_measurements(&img, &masks);
        let rec = invert_full(&mv, &masks).unwrap();
        for (a, b) in rec.values().iter().zip(img.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inversion_requires_every_mask() {
        let masks = MaskSet::from_grid(8, 4).unwrap();
        let mv = MeasurementVector::new(vec![1.0; 10], (0..10).collect()).unwrap();
        assert!(matches!(
            invert_full(&mv, &masks),
            Err(Error::IncompleteSampling { have: 10, need: 32 })
        ));
    }

    #[test]
    fn fidelity_gradient_matches_finite_differences() {
        let masks = MaskSet::from_grid(4, 2).unwrap();
        let pairs: Vec<(usize, f64)> = (0..8).map(|k| (k, (k as f64 * 0.7).sin())).collect();
        let a = sensing_matrix(&pairs, &masks).unwrap();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let fidelity = DataFidelity::new(a, y, 3.5).unwrap();
        let x: Vec<f64> = (0..8).map(|i| 0.1 * (i as f64) - 0.3).collect();
        let grad = fidelity.gradient(&x);
        let eps = 1e-6;
        for i in 0..8 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (fidelity.value(&xp) - fidelity.value(&xm)) / (2.0 * eps);
            assert!(
                (fd - grad[i]).abs() / grad[i].abs().max(1.0) < 1e-6,
                "component {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn full_sampling_tv_matches_inversion() {
        let masks = MaskSet::from_grid(8, 4).unwrap();
        let img = test_image_8x4();
        let mv = exact_measurements(&img, &masks);
        let exact = invert_full(&mv, &masks).unwrap();
        // The TV bias at full sampling shrinks as penalty_weight * n grows;
        // this grid has only n = 32 pixels, so the data term needs more
        // weight than the 1024-pixel default assumes.
        let params = TvParams {
            penalty_weight: 4096.0,
            ..Default::default()
        };
        let sol = tv_reconstruct(&mv, &masks, &params).unwrap();
        let peak = exact.max();
        for (a, b) in sol.image.values().iter().zip(exact.values()) {
            assert!(
                (a - b).abs() / peak < 1e-3,
                "tv {a} vs exact {b} at peak {peak}"
            );
        }
        assert!(sol.diagnostics.converged);
    }

    #[test]
    fn lagrangian_never_rises_within_iterations() {
        let masks = MaskSet::from_grid(8, 4).unwrap();
        let img = test_image_8x4();
        let mut mv = exact_measurements(&img, &masks);
        // Perturb the measurements so the solver has real work to do.
        for (k, v) in mv.values.iter_mut().enumerate() {
            *v += 0.05 * ((k * 2654435761) as f64 / usize::MAX as f64 - 0.5);
        }
        for variant in [TvVariant::Anisotropic, TvVariant::Isotropic] {
            let params = TvParams {
                variant,
                ..Default::default()
            };
            let sol = tv_reconstruct(&mv, &masks, &params).unwrap();
            assert!(
                sol.diagnostics.max_lagrangian_increase <= 1e-8,
                "{variant}: rise {}",
                sol.diagnostics.max_lagrangian_increase
            );
            assert!(sol.image.values().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn zero_measurements_give_the_zero_image() {
        let masks = MaskSet::from_grid(4, 2).unwrap();
        let mv = MeasurementVector::new(vec![0.0; 4], vec![0, 1, 2, 3]).unwrap();
        let sol = tv_reconstruct(&mv, &masks, &TvParams::default()).unwrap();
        assert!(sol.image.values().iter().all(|v| *v == 0.0));
        assert!(sol.diagnostics.converged);
        assert_eq!(sol.diagnostics.iterations, 0);
    }

    #[test]
    fn reconstruction_ignores_measurement_order() {
        let masks = MaskSet::from_grid(8, 4).unwrap();
        let img = test_image_8x4();
        let mv = exact_measurements(&img, &masks);
        // Keep half the masks, in two different orders.
        let keep = 16;
        let fwd = MeasurementVector::new(
            mv.values()[..keep].to_vec(),
            mv.selected_rows()[..keep].to_vec(),
        )
        .unwrap();
        let mut rev_vals = mv.values()[..keep].to_vec();
        let mut rev_rows = mv.selected_rows()[..keep].to_vec();
        rev_vals.reverse();
        rev_rows.reverse();
        let rev = MeasurementVector::new(rev_vals, rev_rows).unwrap();
        let a = tv_reconstruct(&fwd, &masks, &TvParams::default()).unwrap();
        let b = tv_reconstruct(&rev, &masks, &TvParams::default()).unwrap();
        let bits_a: Vec<u64> = a.image.values().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.image.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn subset_without_the_mean_mask_still_solves() {
        // Without natural row 0 the normal matrix is singular in the
        // constant direction; the ridge retry must absorb that.
        let masks = MaskSet::from_grid(4, 2).unwrap();
        let img =
            PixelImage::new(4, 2, vec![0.0, 0.2, 0.3, 0.0, 0.0, 0.3, 0.2, 0.0]).unwrap();
        let mv = exact_measurements(&img, &masks);
        let sub = MeasurementVector::new(
            mv.values()[1..].to_vec(),
            mv.selected_rows()[1..].to_vec(),
        )
        .unwrap();
        let sol = tv_reconstruct(&sub, &masks, &TvParams::default()).unwrap();
        assert!(sol.image.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [TvVariant::Anisotropic, TvVariant::Isotropic] {
            assert_eq!(v.to_string().parse::<TvVariant>().unwrap(), v);
        }
        assert!("diagonal".parse::<TvVariant>().is_err());
    }

    #[test]
    fn invalid_params_are_rejected() {
        let bad = TvParams {
            penalty_weight: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TvParams {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
