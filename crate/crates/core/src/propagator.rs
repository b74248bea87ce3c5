//! The wave group as a per-mode multiplier, the homogeneous solution, and the
//! libraries of coefficients and initial data admitted by the hypotheses.
//!
//! In Fourier space the wave propagator over a step `dt` acts on the pair
//! (displacement, velocity) of mode `k` as the rotation
//!
//! ```text
//!   u_hat' = c u_hat + s v_hat             c = cos(omega dt)
//!   v_hat' = -omega^2 s u_hat + c v_hat    s = sin(omega dt) / omega
//! ```
//!
//! which conserves `|v_hat|^2 + omega^2 |u_hat|^2` exactly.

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::lattice::{Field, Grid, LatticeError, Transforms, Window};
use crate::noise::{spectral_density, CovarianceSpec, NoiseError, SpectralMeasure};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{hypothesis}: {detail}")]
    Hypothesis {
        hypothesis: &'static str,
        detail: String,
    },
    #[error("deviation scale: theta must lie in (0, 1/2) so that h(eps) -> inf and sqrt(eps) h(eps) -> 0, got theta = {0}")]
    DeviationScale(f64),
    #[error("torus too small: need L >= 2 (T + r0) = {needed}, got L = {got}")]
    DomainClosure { got: f64, needed: f64 },
    #[error("unknown coefficient family '{0}'")]
    UnknownCoefficients(String),
    #[error("unknown initial data profile '{0}'")]
    UnknownProfile(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

// ---------------------------------------------------------------------------
// Per-mode propagator
// ---------------------------------------------------------------------------

/// `(c, s) = (cos(omega dt), sin(omega dt)/omega)`, with `s -> dt` as
/// `omega -> 0`. Rejects negative arguments.
pub fn wave_multiplier(dt: f64, omega: f64) -> Result<(f64, f64), LatticeError> {
    if dt < 0.0 {
        return Err(LatticeError::NonPositive {
            name: "dt",
            value: dt,
        });
    }
    if omega < 0.0 {
        return Err(LatticeError::NonPositive {
            name: "omega",
            value: omega,
        });
    }
    let c = (omega * dt).cos();
    let s = if omega == 0.0 {
        dt
    } else {
        (omega * dt).sin() / omega
    };
    Ok((c, s))
}

/// Exact one-step Duhamel weights for a forcing held constant over the step:
/// `Phi_u = (1 - cos(omega dt)) / omega^2` and `Phi_v = sin(omega dt)/omega`,
/// evaluated through sinc for stability near omega = 0.
pub fn duhamel_weights(dt: f64, omega: f64) -> (f64, f64) {
    let sinc = |y: f64| {
        if y.abs() < 1e-8 {
            1.0 - y * y / 6.0
        } else {
            y.sin() / y
        }
    };
    let half = 0.5 * omega * dt;
    let phi_u = 0.5 * dt * dt * sinc(half) * sinc(half);
    let phi_v = dt * sinc(omega * dt);
    (phi_u, phi_v)
}

// ---------------------------------------------------------------------------
// Coefficients sigma, b (and b' under condition (D))
// ---------------------------------------------------------------------------

/// Scalar coefficient function from the library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoeffFn {
    Constant(f64),
    /// `b0 + b1 * u`
    Affine {
        b0: f64,
        b1: f64,
    },
    /// `amp * cos(u)`
    Cos {
        amp: f64,
    },
    /// `amp * sin(u)`
    Sin {
        amp: f64,
    },
    /// `amp * u / sqrt(1 + u^2)`
    Saturating {
        amp: f64,
    },
    /// `amp / (1 + u^2)^{3/2}` (derivative of the saturating family)
    SaturatingDeriv {
        amp: f64,
    },
}

impl CoeffFn {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            CoeffFn::Constant(c) => c,
            CoeffFn::Affine { b0, b1 } => b0 + b1 * u,
            CoeffFn::Cos { amp } => amp * u.cos(),
            CoeffFn::Sin { amp } => amp * u.sin(),
            CoeffFn::Saturating { amp } => amp * u / (1.0 + u * u).sqrt(),
            CoeffFn::SaturatingDeriv { amp } => amp * (1.0 + u * u).powf(-1.5),
        }
    }
}

/// Coefficient pair (sigma, b) with Lipschitz constants, plus b' when the
/// drift is differentiable with Lipschitz derivative (condition (D)).
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub name: String,
    pub sigma: CoeffFn,
    pub b: CoeffFn,
    pub b_prime: Option<CoeffFn>,
    /// Lipschitz constant of sigma and b (H.1) and bound on |b'|.
    pub lip_k: f64,
    /// Lipschitz constant of b' (condition (D)); 0 when b' is constant.
    pub lip_k_prime: f64,
    pub sigma_constant: bool,
    pub b_affine: bool,
}

impl Coefficients {
    pub fn has_condition_d(&self) -> bool {
        self.b_prime.is_some()
    }
}

/// Parameters of the coefficient families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffParams {
    pub sigma0: f64,
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for CoeffParams {
    fn default() -> Self {
        CoeffParams {
            sigma0: 1.0,
            beta0: 0.0,
            beta1: 0.0,
        }
    }
}

/// Library constructor. Families:
/// - `constant_sigma_affine_b`: sigma = sigma0, b(u) = beta0 + beta1 u
/// - `trig`: sigma(u) = sigma0 cos(u), b(u) = beta0 sin(u)
/// - `saturating`: sigma(u) = sigma0 u/sqrt(1+u^2), b likewise with beta0
pub fn make_coeffs(name: &str, params: CoeffParams) -> Result<Coefficients, ConfigError> {
    let CoeffParams {
        sigma0,
        beta0,
        beta1,
    } = params;
    let coeffs = match name {
        "constant_sigma_affine_b" => Coefficients {
            name: name.into(),
            sigma: CoeffFn::Constant(sigma0),
            b: CoeffFn::Affine {
                b0: beta0,
                b1: beta1,
            },
            b_prime: Some(CoeffFn::Constant(beta1)),
            lip_k: beta1.abs(),
            lip_k_prime: 0.0,
            sigma_constant: true,
            b_affine: true,
        },
        "trig" => Coefficients {
            name: name.into(),
            sigma: CoeffFn::Cos { amp: sigma0 },
            b: CoeffFn::Sin { amp: beta0 },
            b_prime: Some(CoeffFn::Cos { amp: beta0 }),
            lip_k: sigma0.abs().max(beta0.abs()),
            lip_k_prime: beta0.abs(),
            sigma_constant: false,
            b_affine: false,
        },
        "saturating" => Coefficients {
            name: name.into(),
            sigma: CoeffFn::Saturating { amp: sigma0 },
            b: CoeffFn::Saturating { amp: beta0 },
            b_prime: Some(CoeffFn::SaturatingDeriv { amp: beta0 }),
            lip_k: sigma0.abs().max(beta0.abs()),
            // max |d/du (1+u^2)^{-3/2}| = 3/2 * (5/4)^{-5/2} at u = 1/2
            lip_k_prime: beta0.abs() * 1.5 * 1.25_f64.powf(-2.5),
            sigma_constant: false,
            b_affine: false,
        },
        other => return Err(ConfigError::UnknownCoefficients(other.into())),
    };
    Ok(coeffs)
}

/// Sampled verification of the declared Lipschitz constants on a 1000-point
/// range, used by `validate_config`.
fn check_lipschitz(coeffs: &Coefficients) -> Result<(), ConfigError> {
    const POINTS: usize = 1000;
    const RANGE: f64 = 8.0;
    let tol = 1.0 + 1e-9;
    let grid: Vec<f64> = (0..POINTS)
        .map(|i| -RANGE + 2.0 * RANGE * i as f64 / (POINTS - 1) as f64)
        .collect();
    for pair in grid.windows(2) {
        let (x, y) = (pair[0], pair[1]);
        let dx = y - x;
        if (coeffs.sigma.eval(y) - coeffs.sigma.eval(x)).abs() > coeffs.lip_k * dx * tol + 1e-14 {
            return Err(ConfigError::Hypothesis {
                hypothesis: "H.1",
                detail: format!(
                    "sigma violates the sampled Lipschitz bound K = {}",
                    coeffs.lip_k
                ),
            });
        }
        if (coeffs.b.eval(y) - coeffs.b.eval(x)).abs() > coeffs.lip_k * dx * tol + 1e-14 {
            return Err(ConfigError::Hypothesis {
                hypothesis: "H.1",
                detail: format!(
                    "b violates the sampled Lipschitz bound K = {}",
                    coeffs.lip_k
                ),
            });
        }
        if let Some(bp) = coeffs.b_prime {
            if (bp.eval(y) - bp.eval(x)).abs() > coeffs.lip_k_prime * dx * tol + 1e-14 {
                return Err(ConfigError::Hypothesis {
                    hypothesis: "(D)",
                    detail: format!(
                        "b' violates the sampled Lipschitz bound K' = {}",
                        coeffs.lip_k_prime
                    ),
                });
            }
        }
    }
    if let Some(bp) = coeffs.b_prime {
        for &x in &grid {
            if bp.eval(x).abs() > coeffs.lip_k * tol + 1e-14 {
                return Err(ConfigError::Hypothesis {
                    hypothesis: "(D)",
                    detail: format!("|b'| exceeds the Lipschitz bound K = {}", coeffs.lip_k),
                });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Initial data
// ---------------------------------------------------------------------------

/// Spatial profile from the initial-data library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Zero,
    Constant(f64),
    /// `amp * cos(2 pi (m . x) / L + phase)`, a single Fourier mode pair.
    HarmonicCos {
        amp: f64,
        mode: [i64; 3],
        phase: f64,
    },
    /// `amp * (1 - (r/r0)^2)^3` inside the ball `r < r0` around the domain
    /// center, 0 outside; twice differentiable with Lipschitz second
    /// derivative.
    PolyBump {
        amp: f64,
        radius: f64,
    },
    /// `amp * exp(-r^2 / (2 width^2))` around the domain center.
    Gaussian {
        amp: f64,
        width: f64,
    },
}

impl Profile {
    pub fn evaluate(&self, grid: Grid) -> Field {
        let l = grid.length;
        let center = 0.5 * l;
        match *self {
            Profile::Zero => Field::zeros(grid),
            Profile::Constant(c) => Field::constant(grid, c),
            Profile::HarmonicCos { amp, mode, phase } => Field::from_fn(grid, |x| {
                let mut dot = 0.0;
                for a in 0..grid.dim {
                    dot += mode[a] as f64 * x[a];
                }
                amp * (2.0 * std::f64::consts::PI * dot / l + phase).cos()
            }),
            Profile::PolyBump { amp, radius } => Field::from_fn(grid, |x| {
                let r2 = centered_r2(x, grid, center);
                let s = r2 / (radius * radius);
                if s < 1.0 {
                    amp * (1.0 - s).powi(3)
                } else {
                    0.0
                }
            }),
            Profile::Gaussian { amp, width } => Field::from_fn(grid, |x| {
                let r2 = centered_r2(x, grid, center);
                amp * (-r2 / (2.0 * width * width)).exp()
            }),
        }
    }

    /// Support radius entering the domain-closure requirement; periodic
    /// profiles report 0 because they are native to the torus.
    pub fn support_radius(&self) -> f64 {
        match *self {
            Profile::Zero | Profile::Constant(_) | Profile::HarmonicCos { .. } => 0.0,
            Profile::PolyBump { radius, .. } => radius,
            Profile::Gaussian { width, .. } => 5.0 * width,
        }
    }
}

fn centered_r2(x: [f64; 3], grid: Grid, center: f64) -> f64 {
    let mut r2 = 0.0;
    for a in 0..grid.dim {
        let mut d = (x[a] - center).abs();
        if d > 0.5 * grid.length {
            d = grid.length - d;
        }
        r2 += d * d;
    }
    r2
}

/// Initial displacement and velocity with their Holder degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub name: String,
    pub nu0: Profile,
    pub nu0_dot: Profile,
    /// Holder degrees of the second derivative of nu0 and of nu0_dot;
    /// everything in the library is smooth enough for degree 1.
    pub gamma1: f64,
    pub gamma2: f64,
}

impl InitialData {
    pub fn new(name: impl Into<String>, nu0: Profile, nu0_dot: Profile) -> Self {
        InitialData {
            name: name.into(),
            nu0,
            nu0_dot,
            gamma1: 1.0,
            gamma2: 1.0,
        }
    }

    pub fn support_radius(&self) -> f64 {
        self.nu0.support_radius().max(self.nu0_dot.support_radius())
    }
}

/// Homogeneous wave solution at frame `t_index`:
/// `w_hat(t, k) = cos(omega t) nu0_hat(k) + (sin(omega t)/omega) nu0_dot_hat(k)`.
pub fn homogeneous_solution(
    init: &InitialData,
    grid: Grid,
    t_index: usize,
) -> Result<Field, ConfigError> {
    if t_index > grid.nt {
        return Err(ConfigError::Lattice(LatticeError::FrameOutOfRange {
            index: t_index,
            max: grid.nt,
        }));
    }
    let mut tr = Transforms::new(grid);
    let nu0 = tr.forward(&init.nu0.evaluate(grid))?;
    let nu0_dot = tr.forward(&init.nu0_dot.evaluate(grid))?;
    let t = t_index as f64 * grid.dt;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.size()];
    for (i, c) in coeffs.iter_mut().enumerate() {
        let (cos_t, s_t) = wave_multiplier(t, grid.omega(i))?;
        *c = cos_t * nu0.coeffs[i] + s_t * nu0_dot.coeffs[i];
    }
    Ok(tr.inverse(&crate::lattice::Spectrum { grid, coeffs })?)
}

// ---------------------------------------------------------------------------
// Deviation scale
// ---------------------------------------------------------------------------

/// Power-family deviation scale `h(eps) = eps^{-theta}` with theta in
/// (0, 1/2), so that `h(eps) -> inf` while `sqrt(eps) h(eps) -> 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationScale {
    pub theta: f64,
}

impl DeviationScale {
    pub fn new(theta: f64) -> Result<Self, ConfigError> {
        if !(theta > 0.0 && theta < 0.5) {
            return Err(ConfigError::DeviationScale(theta));
        }
        Ok(DeviationScale { theta })
    }

    pub fn h(&self, eps: f64) -> f64 {
        eps.powf(-self.theta)
    }

    /// Speed `h^2(eps)` of the deviation probabilities.
    pub fn speed(&self, eps: f64) -> f64 {
        self.h(eps).powi(2)
    }
}

// ---------------------------------------------------------------------------
// Validated configuration
// ---------------------------------------------------------------------------

/// A configuration that passed every hypothesis check. All solvers and
/// estimators take one of these.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: Grid,
    pub cov: CovarianceSpec,
    pub measure: SpectralMeasure,
    pub coeffs: Coefficients,
    pub init: InitialData,
    pub scale: DeviationScale,
    pub window: Window,
}

/// Validate all hypotheses jointly and assemble the configuration. Errors
/// name the violated hypothesis; the caller decides whether a missing
/// condition (D) is fatal for the requested experiment.
pub fn validate_config(
    grid: Grid,
    cov: CovarianceSpec,
    coeffs: Coefficients,
    init: InitialData,
    scale: DeviationScale,
    window: Option<Window>,
) -> Result<SimConfig, ConfigError> {
    // re-run the grid invariants so a hand-built Grid cannot sneak through
    let grid = Grid::new(grid.dim, grid.n, grid.length, grid.dt, grid.nt)?;
    // H.2 and the measure
    let cov = CovarianceSpec::new(cov.dim, cov.beta, cov.amplitude, cov.taper)?;
    let measure = spectral_density(&cov, grid)?;
    // H.1 and (D)
    check_lipschitz(&coeffs)?;
    // H.3: library profiles are bounded and smooth by construction; what
    // remains is finiteness of the sampled values.
    for profile in [&init.nu0, &init.nu0_dot] {
        if !profile.evaluate(grid).is_finite() {
            return Err(ConfigError::Hypothesis {
                hypothesis: "H.3",
                detail: "initial data evaluates to non-finite values".into(),
            });
        }
    }
    // finite propagation speed: the torus must contain the light cone of the
    // initial support over [0, T]
    let needed = 2.0 * (grid.horizon() + init.support_radius());
    if grid.length < needed - 1e-12 {
        return Err(ConfigError::DomainClosure {
            got: grid.length,
            needed,
        });
    }
    let scale = DeviationScale::new(scale.theta)?;
    let window = window.unwrap_or_else(|| Window::default_for(grid));
    Ok(SimConfig {
        grid,
        cov,
        measure,
        coeffs,
        init,
        scale,
        window,
    })
}
