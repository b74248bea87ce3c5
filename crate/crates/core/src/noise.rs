//! Synthesis and validation of the driving Gaussian noise: white in time,
//! spatially correlated by a Riesz-type kernel `f(x) = phi(x) |x|^{-beta}`.
//!
//! The lattice covariance is defined by its spectral weights: for the uniform
//! taper, `mu(k) = c0 * omega(k)^(beta - dim)` with `mu(0) = 0`. One noise
//! increment over a step of length `dt` carries independent complex Gaussians
//! on conjugate mode pairs with `E |W_hat(k)|^2 = dt * mu(k)`, which makes
//!
//! ```text
//!   <a, b>_H = sum_k mu(k) a_hat(k) conj(b_hat(k))
//! ```
//!
//! the covariance inner product of the per-step increments under the pairing
//! `F(phi) = n^{-dim} sum_j sum_x phi_j(x) dW_j(x)`.
//!
//! Sampling is counter-based: every increment is generated by a stream keyed
//! on (experiment seed, sample id, step id), so results do not depend on
//! execution order or the number of workers.

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::lattice::{Field, Grid, LatticeError, Spectrum, Transforms};
use crate::stats::KahanSum;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("H.2: covariance exponent beta must lie in (0, 2) for dim = 3, got {0}")]
    BetaOutOfRange3d(f64),
    #[error("H.2: covariance exponent beta must lie in (0, 1) for dim = 1, got {0}")]
    BetaOutOfRange1d(f64),
    #[error("H.2: covariance amplitude must be positive, got {0}")]
    BadAmplitude(f64),
    #[error("covariance dimension {spec} does not match grid dimension {grid}")]
    DimensionMismatch { spec: usize, grid: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("covariance check needs at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Spatial taper `phi(x)` modulating the Riesz kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Taper {
    /// `phi == 1`.
    Uniform,
    /// `phi(x) = base + amplitude * exp(-|x|^2 / (2 width^2))`, a smooth
    /// positive bounded bump (`|x|` is the torus distance to the origin).
    Bump {
        base: f64,
        amplitude: f64,
        width: f64,
    },
}

/// Covariance kernel specification `f(x) = phi(x) |x|^{-beta}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    pub dim: usize,
    pub beta: f64,
    pub amplitude: f64,
    pub taper: Taper,
}

impl CovarianceSpec {
    pub fn new(dim: usize, beta: f64, amplitude: f64, taper: Taper) -> Result<Self, NoiseError> {
        match dim {
            3 if !(beta > 0.0 && beta < 2.0) => return Err(NoiseError::BetaOutOfRange3d(beta)),
            // In one dimension the integrability condition for the wave
            // propagator, sum_k mu(k) / (1 + omega(k)^2) < inf, needs beta < 1.
            1 if !(beta > 0.0 && beta < 1.0) => return Err(NoiseError::BetaOutOfRange1d(beta)),
            _ => {}
        }
        if !(amplitude > 0.0) {
            return Err(NoiseError::BadAmplitude(amplitude));
        }
        Ok(CovarianceSpec {
            dim,
            beta,
            amplitude,
            taper,
        })
    }
}

/// Spectral weights `mu(k) >= 0` of the lattice covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    pub grid: Grid,
    pub weights: Vec<f64>,
}

impl SpectralMeasure {
    pub fn max_weight(&self) -> f64 {
        self.weights.iter().fold(0.0f64, |m, w| m.max(*w))
    }

    /// Number of modes with `mu(k) > 0`.
    pub fn active_modes(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }
}

/// Build the spectral weights of the covariance on the given grid.
///
/// Uniform taper: `mu(k) = c0 * omega(k)^(beta - dim)`, `mu(0) = 0` (the
/// single divergent lattice mode is dropped). A non-uniform taper modifies the
/// weights by spectral convolution with the taper transform; small negative
/// values produced by truncation are clamped to zero.
pub fn spectral_density(spec: &CovarianceSpec, grid: Grid) -> Result<SpectralMeasure, NoiseError> {
    if spec.dim != grid.dim {
        return Err(NoiseError::DimensionMismatch {
            spec: spec.dim,
            grid: grid.dim,
        });
    }
    // re-validate so measures can only exist for admissible kernels
    CovarianceSpec::new(spec.dim, spec.beta, spec.amplitude, spec.taper)?;
    let size = grid.size();
    let exponent = spec.beta - spec.dim as f64;
    let mut weights: Vec<f64> = (0..size)
        .map(|i| {
            let om = grid.omega(i);
            if om == 0.0 {
                0.0
            } else {
                spec.amplitude * om.powf(exponent)
            }
        })
        .collect();

    if let Taper::Bump {
        base,
        amplitude,
        width,
    } = spec.taper
    {
        let taper_field = Field::from_fn(grid, |x| {
            let mut r2 = 0.0;
            for a in 0..grid.dim {
                let d = torus_distance(x[a], grid.length);
                r2 += d * d;
            }
            base + amplitude * (-r2 / (2.0 * width * width)).exp()
        });
        let mut tr = Transforms::new(grid);
        let taper_hat = tr.forward(&taper_field)?;
        let mut tapered = vec![0.0f64; size];
        for (m, t) in tapered.iter_mut().enumerate() {
            let mut acc = KahanSum::new();
            for (k, w) in weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let d = diff_index(grid, m, k);
                acc.add(w * taper_hat.coeffs[d].re);
            }
            *t = acc.value().max(0.0);
        }
        weights = tapered;
        weights[0] = 0.0;
        // exact evenness: average conjugate pairs
        for i in 0..size {
            let j = grid.conjugate_index(i);
            if j > i {
                let avg = 0.5 * (weights[i] + weights[j]);
                weights[i] = avg;
                weights[j] = avg;
            }
        }
    }
    Ok(SpectralMeasure { grid, weights })
}

fn torus_distance(x: f64, length: f64) -> f64 {
    let r = x.rem_euclid(length);
    r.min(length - r)
}

/// Flat index of the mode difference `k_m - k_k` (componentwise mod n).
fn diff_index(grid: Grid, m: usize, k: usize) -> usize {
    let n = grid.n;
    match grid.dim {
        1 => (m + n - k) % n,
        _ => {
            let (m0, m1, m2) = (m / (n * n), (m / n) % n, m % n);
            let (k0, k1, k2) = (k / (n * n), (k / n) % n, k % n);
            (((m0 + n - k0) % n) * n + ((m1 + n - k1) % n)) * n + ((m2 + n - k2) % n)
        }
    }
}

// ---------------------------------------------------------------------------
// Counter-based sampling
// ---------------------------------------------------------------------------

const GOLDEN: u64 = 0x9e3779b97f4a7c15;
const KEY_SALT: u64 = 0x5eed_c0de_d15c_0b5e;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// SplitMix64 stream keyed by an arbitrary tuple of identifiers. The mapping
/// (key, counter) -> output is pure, so any draw can be regenerated from its
/// seed coordinates regardless of execution order.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn keyed(parts: &[u64]) -> Self {
        let mut key = KEY_SALT;
        for &p in parts {
            key = mix64(key ^ p.wrapping_mul(GOLDEN));
        }
        CounterRng { state: key }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in the half-open interval (0, 1].
    pub fn next_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal pair via Box-Muller.
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u = self.next_unit();
        let v = self.next_unit();
        let r = (-2.0 * u.ln()).sqrt();
        let phase = 2.0 * std::f64::consts::PI * v;
        (r * phase.cos(), r * phase.sin())
    }

    pub fn next_normal(&mut self) -> f64 {
        self.next_normal_pair().0
    }
}

/// Seed coordinates of one increment: (experiment seed, sample id, step id).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedCoords {
    pub experiment_seed: u64,
    pub sample_id: u64,
    pub step_id: u64,
}

/// One time-step noise increment: spectral coefficients with
/// `E |W_hat(k)|^2 = dt * mu(k)`, Hermitian so the physical field is real.
#[derive(Debug, Clone)]
pub struct NoiseIncrement {
    pub spectrum: Spectrum,
    pub seeds: SeedCoords,
}

impl NoiseIncrement {
    /// Physical-space field of the increment.
    pub fn field(&self, transforms: &mut Transforms) -> Result<Field, LatticeError> {
        transforms.inverse(&self.spectrum)
    }
}

/// Draw the increment for one step. Conjugate mode pairs get one complex
/// Gaussian split as `sqrt(dt mu / 2) (xi + i eta)`; self-conjugate modes get
/// a real `sqrt(dt mu) xi`.
pub fn sample_noise_increment(
    measure: &SpectralMeasure,
    dt: f64,
    seeds: SeedCoords,
) -> NoiseIncrement {
    assert!(dt > 0.0, "dt must be positive");
    let grid = measure.grid;
    let mut rng = CounterRng::keyed(&[seeds.experiment_seed, seeds.sample_id, seeds.step_id]);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.size()];
    for i in 0..coeffs.len() {
        let j = grid.conjugate_index(i);
        if j < i {
            continue; // filled when its canonical partner was visited
        }
        let mu = measure.weights[i];
        if mu <= 0.0 {
            continue;
        }
        if i == j {
            coeffs[i] = Complex64::new((dt * mu).sqrt() * rng.next_normal(), 0.0);
        } else {
            let (xi, eta) = rng.next_normal_pair();
            let amp = (0.5 * dt * mu).sqrt();
            coeffs[i] = Complex64::new(amp * xi, amp * eta);
            coeffs[j] = coeffs[i].conj();
        }
    }
    NoiseIncrement {
        spectrum: Spectrum { grid, coeffs },
        seeds,
    }
}

// ---------------------------------------------------------------------------
// Inner products
// ---------------------------------------------------------------------------

/// Covariance inner product `<a, b>_H = sum_k mu(k) a_hat(k) conj(b_hat(k))`.
pub fn h_inner(a: &Field, b: &Field, measure: &SpectralMeasure) -> Result<f64, NoiseError> {
    if a.grid != measure.grid || b.grid != measure.grid {
        return Err(NoiseError::GridMismatch);
    }
    let mut tr = Transforms::new(measure.grid);
    let ah = tr.forward(a)?;
    let bh = tr.forward(b)?;
    Ok(h_inner_spectra(&ah.coeffs, &bh.coeffs, measure))
}

/// Same inner product on already-transformed coefficients.
pub fn h_inner_spectra(a: &[Complex64], b: &[Complex64], measure: &SpectralMeasure) -> f64 {
    let mut acc = KahanSum::new();
    for ((ca, cb), mu) in a.iter().zip(b).zip(&measure.weights) {
        if *mu > 0.0 {
            acc.add(mu * (ca * cb.conj()).re);
        }
    }
    acc.value()
}

/// Discretized element of `H_T = L^2([0,T]; H)`: one spectrum per time slot,
/// supported on modes with `mu(k) > 0` and Hermitian so that each slot is a
/// real field.
#[derive(Debug, Clone)]
pub struct Control {
    pub grid: Grid,
    pub slots: Vec<Vec<Complex64>>,
}

impl Control {
    pub fn zero(grid: Grid) -> Self {
        Control {
            grid,
            slots: vec![vec![Complex64::new(0.0, 0.0); grid.size()]; grid.nt],
        }
    }

    /// Build a control from per-slot spectral coefficients, projecting onto
    /// the support of the measure and enforcing Hermitian symmetry.
    pub fn from_slots(
        measure: &SpectralMeasure,
        mut slots: Vec<Vec<Complex64>>,
    ) -> Result<Self, NoiseError> {
        let grid = measure.grid;
        if slots.len() != grid.nt || slots.iter().any(|s| s.len() != grid.size()) {
            return Err(NoiseError::GridMismatch);
        }
        for slot in &mut slots {
            for (k, c) in slot.iter_mut().enumerate() {
                if measure.weights[k] == 0.0 {
                    *c = Complex64::new(0.0, 0.0);
                }
            }
            let mut s = Spectrum {
                grid,
                coeffs: std::mem::take(slot),
            };
            s.symmetrize();
            *slot = s.coeffs;
        }
        Ok(Control { grid, slots })
    }

    /// Deterministic pseudo-random control supported on the measure (handy
    /// for adjoint and homogeneity checks).
    pub fn random(measure: &SpectralMeasure, seed: u64) -> Self {
        let grid = measure.grid;
        let mut slots = Vec::with_capacity(grid.nt);
        for slot_id in 0..grid.nt {
            let mut rng = CounterRng::keyed(&[seed, 0xc0_17_01, slot_id as u64]);
            let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.size()];
            for i in 0..coeffs.len() {
                let j = grid.conjugate_index(i);
                if j < i || measure.weights[i] == 0.0 {
                    continue;
                }
                if i == j {
                    coeffs[i] = Complex64::new(rng.next_normal(), 0.0);
                } else {
                    let (x, y) = rng.next_normal_pair();
                    coeffs[i] = Complex64::new(x, y);
                    coeffs[j] = coeffs[i].conj();
                }
            }
            slots.push(coeffs);
        }
        Control { grid, slots }
    }

    pub fn scaled(&self, c: f64) -> Control {
        Control {
            grid: self.grid,
            slots: self
                .slots
                .iter()
                .map(|s| s.iter().map(|z| z * c).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &Control) -> Control {
        assert_eq!(self.grid, other.grid);
        Control {
            grid: self.grid,
            slots: self
                .slots
                .iter()
                .zip(&other.slots)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        }
    }
}

/// Squared `H_T` norm: `dt * sum_slots sum_k mu(k) |h_hat(k)|^2`.
pub fn ht_norm_squared(h: &Control, measure: &SpectralMeasure) -> Result<f64, NoiseError> {
    if h.grid != measure.grid {
        return Err(NoiseError::GridMismatch);
    }
    let mut acc = KahanSum::new();
    for slot in &h.slots {
        for (c, mu) in slot.iter().zip(&measure.weights) {
            if *mu > 0.0 {
                acc.add(mu * c.norm_sqr());
            }
        }
    }
    Ok(h.grid.dt * acc.value())
}

/// `H_T` inner product of two controls.
pub fn ht_inner(a: &Control, b: &Control, measure: &SpectralMeasure) -> Result<f64, NoiseError> {
    if a.grid != measure.grid || b.grid != measure.grid {
        return Err(NoiseError::GridMismatch);
    }
    let mut acc = KahanSum::new();
    for (sa, sb) in a.slots.iter().zip(&b.slots) {
        acc.add(h_inner_spectra(sa, sb, measure));
    }
    Ok(a.grid.dt * acc.value())
}

// ---------------------------------------------------------------------------
// Covariance validation
// ---------------------------------------------------------------------------

/// A deterministic space-time test function: one field per time step.
#[derive(Debug, Clone)]
pub struct CovTestFunction {
    pub label: String,
    pub slots: Vec<Field>,
}

impl CovTestFunction {
    pub fn time_constant(label: impl Into<String>, grid: Grid, field: Field) -> Self {
        CovTestFunction {
            label: label.into(),
            slots: vec![field; grid.nt],
        }
    }
}

/// Outcome of one covariance comparison.
#[derive(Debug, Clone)]
pub struct CovariancePairReport {
    pub pair: String,
    pub mc: f64,
    pub analytic: f64,
    pub std_error: f64,
    pub rel_err: f64,
    pub pass: bool,
}

pub const COVARIANCE_CHECK_MIN_SAMPLES: usize = 1000;

/// Monte Carlo validation of `E[F(phi) F(psi)] = dt * sum_j <phi_j, psi_j>_H`
/// under the lattice pairing `F(phi) = n^{-dim} sum_j sum_x phi_j(x) dW_j(x)`,
/// evaluated spectrally as `sum_j sum_k phi_hat_j(k) conj(W_hat_j(k))`.
pub fn covariance_check(
    measure: &SpectralMeasure,
    n_samples: usize,
    pairs: &[(CovTestFunction, CovTestFunction)],
    experiment_seed: u64,
) -> Result<Vec<CovariancePairReport>, NoiseError> {
    if n_samples < COVARIANCE_CHECK_MIN_SAMPLES {
        return Err(NoiseError::TooFewSamples {
            got: n_samples,
            min: COVARIANCE_CHECK_MIN_SAMPLES,
        });
    }
    let grid = measure.grid;
    let mut tr = Transforms::new(grid);

    // analytic values and spectral slot transforms
    let mut labels = Vec::with_capacity(pairs.len());
    let mut spectra = Vec::with_capacity(pairs.len());
    for (phi, psi) in pairs {
        let mut analytic = KahanSum::new();
        let mut phi_hat = Vec::with_capacity(grid.nt);
        let mut psi_hat = Vec::with_capacity(grid.nt);
        for j in 0..grid.nt {
            let ph = tr.forward(&phi.slots[j])?;
            let ps = tr.forward(&psi.slots[j])?;
            analytic.add(h_inner_spectra(&ph.coeffs, &ps.coeffs, measure));
            phi_hat.push(ph.coeffs);
            psi_hat.push(ps.coeffs);
        }
        spectra.push((phi_hat, psi_hat));
        labels.push((
            format!("{}|{}", phi.label, psi.label),
            grid.dt * analytic.value(),
        ));
    }

    let mut products: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); pairs.len()];
    for sample in 0..n_samples {
        let mut f_phi = vec![KahanSum::new(); pairs.len()];
        let mut f_psi = vec![KahanSum::new(); pairs.len()];
        for step in 0..grid.nt {
            let inc = sample_noise_increment(
                measure,
                grid.dt,
                SeedCoords {
                    experiment_seed,
                    sample_id: sample as u64,
                    step_id: step as u64,
                },
            );
            for (p, (phi_hat, psi_hat)) in spectra.iter().enumerate() {
                let mut acc_phi = Complex64::new(0.0, 0.0);
                let mut acc_psi = Complex64::new(0.0, 0.0);
                for (k, w) in inc.spectrum.coeffs.iter().enumerate() {
                    if measure.weights[k] > 0.0 {
                        acc_phi += phi_hat[step][k] * w.conj();
                        acc_psi += psi_hat[step][k] * w.conj();
                    }
                }
                f_phi[p].add(acc_phi.re);
                f_psi[p].add(acc_psi.re);
            }
        }
        for p in 0..pairs.len() {
            products[p].push(f_phi[p].value() * f_psi[p].value());
        }
    }

    let mut out = Vec::with_capacity(pairs.len());
    for (p, (pair, analytic)) in labels.into_iter().enumerate() {
        let (mc, se) = crate::stats::jackknife_mean(&products[p]);
        let rel_err = if analytic != 0.0 {
            (mc - analytic).abs() / analytic.abs()
        } else {
            f64::NAN
        };
        let pass = (mc - analytic).abs() <= 4.0 * se;
        out.push(CovariancePairReport {
            pair,
            mc,
            analytic,
            std_error: se,
            rel_err,
            pass,
        });
    }
    Ok(out)
}
