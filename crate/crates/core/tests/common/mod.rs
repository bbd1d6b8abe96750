//! Independent oracles shared by the integration suites. These deliberately
//! avoid the library's own algorithms: evolution is checked against a
//! fixed-step ODE integrator, block counts against a breadth-first flood
//! fill.

// Each integration test target compiles this module separately and uses a
// different subset of it.
#![allow(dead_code)]

use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;
use qwspi::facet::{OpticalGeometry, PixelImage};
use qwspi::masks::Mask;
use qwspi::spectrum::{column_profile, fit_gaussians};
use qwspi::walk::ModeSpectrum;

/// Spectrum extraction used on reconstructed images: column profile, then a
/// Gaussian-sum fit seeded at the known mode centers.
pub fn fitted_spectrum(image: &PixelImage, geometry: &OpticalGeometry) -> ModeSpectrum {
    let profile = column_profile(image);
    let centers: Vec<f64> = (0..geometry.num_modes())
        .map(|k| geometry.mode_center(k).1)
        .collect();
    let fit = fit_gaussians(&profile, &centers, geometry.sigma_px()).unwrap();
    fit.intensities().unwrap()
}

/// Integrates dU/dt = -i H U from the identity with classic fixed-step
/// Runge-Kutta 4. Accuracy is O((|H| t / steps)^4); the callers pick step
/// counts that land far below their comparison tolerance.
pub fn rk4_unitary(hamiltonian: &DMatrix<f64>, t: f64, steps: usize) -> DMatrix<Complex64> {
    let n = hamiltonian.nrows();
    let minus_i_h = hamiltonian.map(|v| Complex64::new(0.0, -v));
    let mut u = DMatrix::<Complex64>::identity(n, n);
    let h = t / steps as f64;
    for _ in 0..steps {
        let k1 = &minus_i_h * &u;
        let k2 = &minus_i_h * (&u + &k1 * Complex64::from(h / 2.0));
        let k3 = &minus_i_h * (&u + &k2 * Complex64::from(h / 2.0));
        let k4 = &minus_i_h * (&u + &k3 * Complex64::from(h));
        u += (k1 + k2 * Complex64::from(2.0) + k3 * Complex64::from(2.0) + k4)
            * Complex64::from(h / 6.0);
    }
    u
}

pub fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Counts 4-connected same-sign regions by explicit BFS.
pub fn flood_fill_blocks(mask: &Mask) -> usize {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut blocks = 0;
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        blocks += 1;
        let sign = mask.values()[start];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(idx) = queue.pop_front() {
            let (r, c) = (idx / w, idx % w);
            let mut push = |rr: usize, cc: usize| {
                let j = rr * w + cc;
                if !seen[j] && mask.values()[j] == sign {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < h {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < w {
                push(r, c + 1);
            }
        }
    }
    blocks
}

/// Median of a nonempty sample; averages the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}
