//! Continuous-time quantum walk on a linear waveguide array.
//!
//! The array is a chain of evanescently coupled single-mode waveguides. Its
//! coupled-mode Hamiltonian is real, symmetric and tridiagonal: a uniform
//! propagation constant on the diagonal and the nearest-neighbour coupling on
//! the off-diagonals, both multiplied by a global scale. Propagation over a
//! length `t` applies `U = exp(-i H t)`, evaluated through an
//! eigendecomposition of `H`.
//!
//! All observable statistics derive from `U` alone. The same output
//! distribution therefore serves bright-light alignment previews and
//! single-photon counting; there is no separate classical-light engine.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Maximum tolerated deviation of `U† U` from the identity.
pub const UNITARITY_TOL: f64 = 1e-10;

/// Maximum tolerated deviation of a probability sum from one.
pub const PROBABILITY_TOL: f64 = 1e-10;

/// A uniform linear array of coupled waveguides.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveguideArray {
    num_guides: usize,
    coupling: f64,
    propagation: f64,
    length: f64,
    scale: f64,
}

impl WaveguideArray {
    /// A uniform array with `num_guides` guides, nearest-neighbour coupling
    /// `coupling` (1/mm), on-site propagation constant `propagation` (1/mm)
    /// and physical length `length` (mm). The global Hamiltonian scale is 1;
    /// see [`WaveguideArray::with_scale`].
    pub fn new(num_guides: usize, coupling: f64, propagation: f64, length: f64) -> Result<Self> {
        if num_guides < 2 {
            return Err(Error::InvalidParameter(format!(
                "waveguide array needs at least 2 guides, got {num_guides}"
            )));
        }
        for (name, v) in [
            ("coupling", coupling),
            ("propagation", propagation),
            ("length", length),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if coupling < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "coupling must be nonnegative, got {coupling}"
            )));
        }
        if length < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "length must be nonnegative, got {length}"
            )));
        }
        Ok(Self {
            num_guides,
            coupling,
            propagation,
            length,
            scale: 1.0,
        })
    }

    /// Replaces the global Hamiltonian scale (dimensionless, default 1).
    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::InvalidParameter("scale must be finite".into()));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn num_guides(&self) -> usize {
        self.num_guides
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn propagation(&self) -> f64 {
        self.propagation
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Builds the coupled-mode Hamiltonian of `array`: tridiagonal, with
/// `scale * propagation` on the diagonal and `scale * coupling` on the first
/// off-diagonals. Boundaries are open (no wrap-around coupling).
pub fn build_hamiltonian(array: &WaveguideArray) -> DMatrix<f64> {
    let n = array.num_guides;
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = array.scale * array.propagation;
        if i + 1 < n {
            h[(i, i + 1)] = array.scale * array.coupling;
            h[(i + 1, i)] = array.scale * array.coupling;
        }
    }
    h
}

/// A validated unitary evolution operator.
#[derive(Debug, Clone)]
pub struct UnitaryMatrix {
    matrix: DMatrix<Complex64>,
}

impl UnitaryMatrix {
    /// Wraps a matrix after checking `U† U = I` to [`UNITARITY_TOL`].
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
                context: "unitary matrix must be square",
            });
        }
        let dev = unitarity_deviation(&matrix);
        if dev > UNITARITY_TOL {
            return Err(Error::ContractViolation(format!(
                "matrix is not unitary: max |U†U - I| = {dev:.3e}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }
}

/// Max-abs deviation of `U† U` from the identity.
pub fn unitarity_deviation(matrix: &DMatrix<Complex64>) -> f64 {
    let n = matrix.nrows();
    let gram = matrix.adjoint() * matrix;
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
            dev = dev.max((gram[(i, j)] - expect).norm());
        }
    }
    dev
}

/// Evolution operator `U = exp(-i H t)` for a real symmetric `hamiltonian`.
///
/// `H = V Λ Vᵀ` gives `U = V exp(-i Λ t) Vᵀ`, so unitarity holds to the
/// accuracy of the eigendecomposition. `t` is the propagation length in the
/// units dual to `H` (mm for a 1/mm Hamiltonian).
pub fn evolve(hamiltonian: &DMatrix<f64>, t: f64) -> Result<UnitaryMatrix> {
    let n = hamiltonian.nrows();
    if n == 0 || hamiltonian.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: hamiltonian.ncols(),
            context: "hamiltonian must be square and nonempty",
        });
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "evolution length must be finite and nonnegative, got {t}"
        )));
    }
    let scale = hamiltonian.amax().max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((hamiltonian[(i, j)] - hamiltonian[(j, i)]).abs());
        }
    }
    if asym > 1e-12 * scale {
        return Err(Error::ContractViolation(format!(
            "hamiltonian is not symmetric: max |H - Hᵀ| = {asym:.3e}"
        )));
    }

    let eig = hamiltonian.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let mut u = DMatrix::<Complex64>::zeros(n, n);
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -lambda * t);
        let col = v.column(k);
        for j in 0..n {
            let vj = col[j];
            if vj == 0.0 {
                continue;
            }
            let w = phase * vj;
            for i in 0..n {
                u[(i, j)] += w * col[i];
            }
        }
    }
    UnitaryMatrix::new(u)
}

/// Per-mode intensities; the common currency between the walk, the raster
/// scan and spectrum extraction. Entries are nonnegative and carry whatever
/// normalization the producer chose.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    intensities: Vec<f64>,
}

impl ModeSpectrum {
    pub fn new(intensities: Vec<f64>) -> Result<Self> {
        if intensities.is_empty() {
            return Err(Error::InvalidParameter(
                "mode spectrum must not be empty".into(),
            ));
        }
        for (k, v) in intensities.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "mode intensity {k} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(Self { intensities })
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.intensities
    }

    pub fn sum(&self) -> f64 {
        self.intensities.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.intensities.iter().copied().fold(0.0, f64::max)
    }

    /// Rescaled so entries sum to one. Errors on an all-zero spectrum.
    pub fn unit_sum(&self) -> Result<ModeSpectrum> {
        let s = self.sum();
        if s <= 0.0 {
            return Err(Error::InvalidParameter(
                "cannot unit-sum normalize a zero spectrum".into(),
            ));
        }
        ModeSpectrum::new(self.intensities.iter().map(|v| v / s).collect())
    }

    /// Rescaled so the largest entry is one. Errors on an all-zero spectrum.
    pub fn peak_normalized(&self) -> Result<ModeSpectrum> {
        let m = self.max();
        if m <= 0.0 {
            return Err(Error::InvalidParameter(
                "cannot peak-normalize a zero spectrum".into(),
            ));
        }
        ModeSpectrum::new(self.intensities.iter().map(|v| v / m).collect())
    }
}

/// Output probability distribution for one photon injected into
/// `input_guide`: the squared magnitudes of column `input_guide` of `U`.
pub fn single_photon_distribution(u: &UnitaryMatrix, input_guide: usize) -> Result<ModeSpectrum> {
    let n = u.dim();
    if input_guide >= n {
        return Err(Error::InvalidParameter(format!(
            "input guide {input_guide} out of range for {n} guides"
        )));
    }
    let p: Vec<f64> = (0..n).map(|q| u.entry(q, input_guide).norm_sqr()).collect();
    ModeSpectrum::new(p)
}

/// Symmetric two-photon coincidence matrix. Entry `(q, r)` with `q != r`
/// holds half the probability of the unordered detection pair `{q, r}`;
/// the diagonal holds the full bunching probability of `{q, q}`. The full
/// matrix sums to one.
#[derive(Debug, Clone)]
pub struct TwoPhotonCorrelation {
    values: DMatrix<f64>,
}

impl TwoPhotonCorrelation {
    /// Wraps a precomputed coincidence matrix, validating symmetry,
    /// nonnegativity and unit total.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n || n == 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: values.ncols(),
                context: "correlation matrix must be square and nonempty",
            });
        }
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "correlation entry ({i},{j}) must be finite and nonnegative"
                    )));
                }
                if (v - values[(j, i)]).abs() > PROBABILITY_TOL {
                    return Err(Error::ContractViolation(
                        "correlation matrix must be symmetric".into(),
                    ));
                }
                total += v;
            }
        }
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::ContractViolation(format!(
                "correlation matrix must sum to 1, got {total}"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, q: usize, r: usize) -> f64 {
        self.values[(q, r)]
    }
}

/// Coincidence statistics for two photons injected into distinct guides
/// `input_a` and `input_b`.
///
/// Indistinguishable photons interfere: the pair amplitude is
/// `U[q,a] U[r,b] + U[q,b] U[r,a]`. Distinguishable photons add
/// probabilities instead. The result is normalized to unit total.
pub fn two_photon_correlation(
    u: &UnitaryMatrix,
    input_a: usize,
    input_b: usize,
    indistinguishable: bool,
) -> Result<TwoPhotonCorrelation> {
    let n = u.dim();
    if input_a >= n || input_b >= n {
        return Err(Error::InvalidParameter(format!(
            "input guides ({input_a}, {input_b}) out of range for {n} guides"
        )));
    }
    if input_a == input_b {
        return Err(Error::InvalidParameter(
            "two-photon inputs must be distinct guides".into(),
        ));
    }
    let m = u.matrix();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for q in 0..n {
        for r in 0..n {
            let v = if indistinguishable {
                if q == r {
                    // Bunched amplitude into |2_q> carries a sqrt(2) factor.
                    2.0 * (m[(q, input_a)] * m[(q, input_b)]).norm_sqr()
                } else {
                    0.5 * (m[(q, input_a)] * m[(r, input_b)]
                        + m[(q, input_b)] * m[(r, input_a)])
                        .norm_sqr()
                }
            } else {
                0.5 * ((m[(q, input_a)] * m[(r, input_b)]).norm_sqr()
                    + (m[(q, input_b)] * m[(r, input_a)]).norm_sqr())
            };
            g[(q, r)] = v;
        }
    }
    // Unitarity makes the total 1 already; dividing removes rounding drift.
    let total: f64 = g.iter().sum();
    if total <= 0.0 {
        return Err(Error::ContractViolation(
            "two-photon correlation has zero total probability".into(),
        ));
    }
    g /= total;
    TwoPhotonCorrelation::from_matrix(g)
}

/// What a single bucket detector sees for a two-photon input: the row sums
/// of the coincidence matrix, i.e. the expected fraction of detected photons
/// per output mode. Sums to one.
pub fn two_photon_marginal(correlation: &TwoPhotonCorrelation) -> Result<ModeSpectrum> {
    let n = correlation.dim();
    let mut intensities = vec![0.0; n];
    for q in 0..n {
        let mut acc = 0.0;
        for r in 0..n {
            acc += correlation.get(q, r);
        }
        intensities[q] = acc.max(0.0);
    }
    ModeSpectrum::new(intensities)?.unit_sum()
}
