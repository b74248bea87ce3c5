//! One-step spectral integration of the six field equations: the limit field
//! `u0`, the perturbed field `u_eps`, the first-order fluctuation `Y`, the
//! skeleton `V^h`, its linearization `Z^h = A h`, and the controlled
//! deviation field `Z^{eps,v}`, plus the adjoint of the linear map `A`.
//!
//! All equations share one step. Per mode `k`, with `c = cos(omega dt)`,
//! `s = sin(omega dt)/omega` and the exact cell weights
//! `Phi_u = (1-c)/omega^2`, `Phi_v = s`:
//!
//! ```text
//!   u' = c u + s v      + Phi_u g + s (dt p + amp n)
//!   v' = -w^2 s u + c v + Phi_v g + c (dt p + amp n)
//! ```
//!
//! where `g` is the drift transform averaged over the two trapezoid stages
//! (the corrector evaluates the drift at a predicted state), `p` is the
//! covariance pairing of the control realized as
//! `transform(sigma_factor * hw)` with `hw = inverse(mu * h_hat)`, and `n` is
//! the noise term `transform(sigma_factor * dW)` entering at the left
//! endpoint only, which keeps the Walsh (Ito) convention and the per-step
//! variance `dt mu(k)`.
//!
//! Degenerate inputs reduce exactly: a zero noise amplitude skips the noise
//! term, a zero control contributes exact zeros, and the co-evolved copy of
//! `u0` runs the same arithmetic as `solve_deterministic`.

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::lattice::{Field, FieldPath, Grid, LatticeError, Spectrum, Transforms};
use crate::noise::{sample_noise_increment, Control, NoiseError, SeedCoords, SpectralMeasure};
use crate::propagator::{duhamel_weights, wave_multiplier, CoeffFn, ConfigError, SimConfig};
use crate::stats::KahanSum;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("(D): this equation needs a differentiable drift with Lipschitz derivative b'")]
    MissingConditionD,
    #[error("solution blew up (non-finite values) at step {step}")]
    BlowUp { step: usize },
    #[error("eps must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("control does not live on the configuration grid")]
    ControlGridMismatch,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Identity of a driving path: increments are regenerated on demand from
/// (experiment seed, sample id, step), so a path never stores state and two
/// solvers fed the same identity are driven by the same realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoisePath {
    pub experiment_seed: u64,
    pub sample_id: u64,
    pub zero: bool,
}

impl NoisePath {
    pub fn new(experiment_seed: u64, sample_id: u64) -> Self {
        NoisePath {
            experiment_seed,
            sample_id,
            zero: false,
        }
    }

    /// A path whose every increment is zero.
    pub fn null() -> Self {
        NoisePath {
            experiment_seed: 0,
            sample_id: 0,
            zero: true,
        }
    }

    fn increment(&self, measure: &SpectralMeasure, dt: f64, step: usize) -> Spectrum {
        if self.zero {
            Spectrum::zeros(measure.grid)
        } else {
            sample_noise_increment(
                measure,
                dt,
                SeedCoords {
                    experiment_seed: self.experiment_seed,
                    sample_id: self.sample_id,
                    step_id: step as u64,
                },
            )
            .spectrum
        }
    }
}

/// Per-mode propagator tables.
struct ModeTables {
    c: Vec<f64>,
    s: Vec<f64>,
    w2s: Vec<f64>,
    phi_u: Vec<f64>,
    phi_v: Vec<f64>,
}

impl ModeTables {
    fn new(grid: Grid) -> Result<Self, LatticeError> {
        let size = grid.size();
        let mut t = ModeTables {
            c: Vec::with_capacity(size),
            s: Vec::with_capacity(size),
            w2s: Vec::with_capacity(size),
            phi_u: Vec::with_capacity(size),
            phi_v: Vec::with_capacity(size),
        };
        for i in 0..size {
            let omega = grid.omega(i);
            let (c, s) = wave_multiplier(grid.dt, omega)?;
            let (phi_u, phi_v) = duhamel_weights(grid.dt, omega);
            t.c.push(c);
            t.s.push(s);
            t.w2s.push(omega * omega * s);
            t.phi_u.push(phi_u);
            t.phi_v.push(phi_v);
        }
        Ok(t)
    }
}

/// Spectral state (displacement, velocity) of one trajectory.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub u_hat: Vec<Complex64>,
    pub v_hat: Vec<Complex64>,
    pub step: usize,
}

impl SolverState {
    fn zeros(size: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); size];
        SolverState {
            u_hat: z.clone(),
            v_hat: z,
            step: 0,
        }
    }
}

enum Equation<'a> {
    Deterministic,
    Spde {
        eps: f64,
        noise: &'a NoisePath,
    },
    FirstOrder {
        noise: &'a NoisePath,
    },
    Skeleton {
        control: &'a Control,
    },
    LinearSkeleton {
        control: &'a Control,
    },
    Controlled {
        eps: f64,
        control: Option<&'a Control>,
        noise: &'a NoisePath,
    },
}

impl Equation<'_> {
    fn needs_u0(&self) -> bool {
        matches!(
            self,
            Equation::FirstOrder { .. }
                | Equation::LinearSkeleton { .. }
                | Equation::Controlled { .. }
        )
    }

    fn starts_from_initial_data(&self) -> bool {
        matches!(
            self,
            Equation::Deterministic | Equation::Spde { .. } | Equation::Skeleton { .. }
        )
    }
}

struct Integrator<'c> {
    config: &'c SimConfig,
    tables: ModeTables,
    tr: Transforms,
}

impl<'c> Integrator<'c> {
    fn new(config: &'c SimConfig) -> Result<Self, SolverError> {
        Ok(Integrator {
            config,
            tables: ModeTables::new(config.grid)?,
            tr: Transforms::new(config.grid),
        })
    }

    fn transform_values(&mut self, values: &[f64]) -> Vec<Complex64> {
        let mut out = Vec::new();
        self.tr.forward_into(values, &mut out);
        out
    }

    fn to_physical(&mut self, coeffs: &[Complex64], step: usize) -> Result<Vec<f64>, SolverError> {
        let mut out = Vec::new();
        self.tr
            .inverse_into(coeffs, &mut out)
            .map_err(|e| match e {
                LatticeError::ImaginaryResidue { .. } => SolverError::BlowUp { step },
                other => SolverError::Lattice(other),
            })?;
        Ok(out)
    }

    /// Predictor displacement only: u* = c u + s v + fu.
    fn predict_u(&self, state: &SolverState, fu: &[Complex64], out: &mut Vec<Complex64>) {
        let t = &self.tables;
        out.clear();
        out.extend(
            (0..state.u_hat.len())
                .map(|k| t.c[k] * state.u_hat[k] + t.s[k] * state.v_hat[k] + fu[k]),
        );
    }

    fn integrate(&mut self, eq: Equation<'_>) -> Result<FieldPath, SolverError> {
        let grid = self.config.grid;
        let size = grid.size();
        let nt = grid.nt;
        let dt = grid.dt;
        let measure = &self.config.measure;
        let coeffs = &self.config.coeffs;
        let sigma = coeffs.sigma;
        let b = coeffs.b;
        let b_prime = coeffs.b_prime;
        let sigma_const = coeffs.sigma_constant;
        let sigma0 = if let CoeffFn::Constant(v) = sigma {
            v
        } else {
            f64::NAN
        };

        match &eq {
            Equation::FirstOrder { .. } | Equation::LinearSkeleton { .. } if b_prime.is_none() => {
                return Err(SolverError::MissingConditionD)
            }
            Equation::Spde { eps, .. } if *eps < 0.0 => return Err(SolverError::BadEpsilon(*eps)),
            Equation::Controlled { eps, .. } if !(*eps > 0.0) => {
                return Err(SolverError::BadEpsilon(*eps))
            }
            _ => {}
        }
        if let Equation::Skeleton { control } | Equation::LinearSkeleton { control } = &eq {
            if control.grid != grid {
                return Err(SolverError::ControlGridMismatch);
            }
        }
        if let Equation::Controlled {
            control: Some(control),
            ..
        } = &eq
        {
            if control.grid != grid {
                return Err(SolverError::ControlGridMismatch);
            }
        }

        // noise amplitude per equation
        let noise_spec: Option<(&NoisePath, f64)> = match &eq {
            Equation::Spde { eps, noise } => {
                let amp = eps.sqrt();
                if amp > 0.0 {
                    Some((noise, amp))
                } else {
                    None
                }
            }
            Equation::FirstOrder { noise } => Some((noise, 1.0)),
            Equation::Controlled { eps, noise, .. } => {
                Some((noise, 1.0 / self.config.scale.h(*eps)))
            }
            _ => None,
        };
        // amplitude sqrt(eps) h(eps) multiplying Z inside sigma and the
        // drift difference quotient of the controlled equation
        let ehz = match &eq {
            Equation::Controlled { eps, .. } => eps.sqrt() * self.config.scale.h(*eps),
            _ => 0.0,
        };

        // initial state
        let mut state = SolverState::zeros(size);
        if eq.starts_from_initial_data() {
            let nu0 = self.config.init.nu0.evaluate(grid);
            let dot = self.config.init.nu0_dot.evaluate(grid);
            state.u_hat = self.transform_values(&nu0.values);
            state.v_hat = self.transform_values(&dot.values);
        }
        // co-evolved deterministic state (same arithmetic as solve_deterministic)
        let mut u0_state = if eq.needs_u0() {
            let nu0 = self.config.init.nu0.evaluate(grid);
            let dot = self.config.init.nu0_dot.evaluate(grid);
            let mut st = SolverState::zeros(size);
            st.u_hat = self.transform_values(&nu0.values);
            st.v_hat = self.transform_values(&dot.values);
            Some(st)
        } else {
            None
        };

        let mut frames: Vec<Field> = Vec::with_capacity(nt + 1);
        let mut scratch = vec![0.0f64; size];
        let mut direct = vec![Complex64::new(0.0, 0.0); size];
        let mut fu = vec![Complex64::new(0.0, 0.0); size];
        let mut fv = vec![Complex64::new(0.0, 0.0); size];
        let mut u_star_hat: Vec<Complex64> = Vec::with_capacity(size);
        let mut u0_star_hat: Vec<Complex64> = Vec::with_capacity(size);

        for j in 0..nt {
            // physical frame j
            let u_phys = self.to_physical(&state.u_hat, j)?;
            if !u_phys.iter().all(|v| v.is_finite()) {
                return Err(SolverError::BlowUp { step: j });
            }
            let u0_phys = match &u0_state {
                Some(st) => Some(self.to_physical(&st.u_hat, j)?),
                None => None,
            };
            frames.push(Field {
                grid,
                values: u_phys.clone(),
            });

            // state entering the sigma factor of the pairing and noise terms
            let sigma_state: Option<Vec<f64>> = match &eq {
                Equation::Deterministic => None,
                Equation::Spde { .. } | Equation::Skeleton { .. } => Some(u_phys.clone()),
                Equation::FirstOrder { .. } | Equation::LinearSkeleton { .. } => {
                    Some(u0_phys.as_ref().unwrap().clone())
                }
                Equation::Controlled { .. } => {
                    let u0 = u0_phys.as_ref().unwrap();
                    Some(u0.iter().zip(&u_phys).map(|(a, z)| a + ehz * z).collect())
                }
            };

            // direct forcing: dt * pairing + amp * noise (left endpoint)
            for d in direct.iter_mut() {
                *d = Complex64::new(0.0, 0.0);
            }
            let control = match &eq {
                Equation::Skeleton { control } | Equation::LinearSkeleton { control } => {
                    Some(*control)
                }
                Equation::Controlled { control, .. } => *control,
                _ => None,
            };
            if let Some(h) = control {
                let slot = &h.slots[j];
                if sigma_const {
                    for k in 0..size {
                        direct[k] += dt * sigma0 * measure.weights[k] * slot[k];
                    }
                } else {
                    let weighted: Vec<Complex64> = (0..size)
                        .map(|k| Complex64::new(measure.weights[k], 0.0) * slot[k])
                        .collect();
                    let hw = self.to_physical(&weighted, j)?;
                    let sf = sigma_state.as_ref().unwrap();
                    for (i, v) in scratch.iter_mut().enumerate() {
                        *v = sigma.eval(sf[i]) * hw[i];
                    }
                    let paired = self.transform_values(&scratch);
                    for k in 0..size {
                        direct[k] += dt * paired[k];
                    }
                }
            }
            if let Some((path, amp)) = noise_spec {
                let inc = path.increment(measure, dt, j);
                if sigma_const {
                    for k in 0..size {
                        direct[k] += amp * sigma0 * inc.coeffs[k];
                    }
                } else {
                    let dw = self.to_physical(&inc.coeffs, j)?;
                    let sf = sigma_state.as_ref().unwrap();
                    for (i, v) in scratch.iter_mut().enumerate() {
                        *v = sigma.eval(sf[i]) * dw[i];
                    }
                    let forced = self.transform_values(&scratch);
                    for k in 0..size {
                        direct[k] += amp * forced[k];
                    }
                }
            }

            // left drift
            let mut d_left = Vec::with_capacity(size);
            match &eq {
                Equation::Deterministic | Equation::Spde { .. } | Equation::Skeleton { .. } => {
                    d_left.extend(u_phys.iter().map(|&x| b.eval(x)));
                }
                Equation::FirstOrder { .. } | Equation::LinearSkeleton { .. } => {
                    let bp = b_prime.unwrap();
                    let base = u0_phys.as_ref().unwrap();
                    d_left.extend(base.iter().zip(&u_phys).map(|(&a, &z)| bp.eval(a) * z));
                }
                Equation::Controlled { .. } => {
                    let base = u0_phys.as_ref().unwrap();
                    d_left.extend(
                        base.iter()
                            .zip(&u_phys)
                            .map(|(&a, &z)| (b.eval(a + ehz * z) - b.eval(a)) / ehz),
                    );
                }
            }
            let g1 = self.transform_values(&d_left);

            // u0 co-evolution: left drift and predictor
            let mut g1_u0: Option<Vec<Complex64>> = None;
            if let Some(st) = &u0_state {
                let base = u0_phys.as_ref().unwrap();
                scratch.clear();
                scratch.extend(base.iter().map(|&u| b.eval(u)));
                let g = self.transform_values(&scratch);
                for k in 0..size {
                    fu[k] = self.tables.phi_u[k] * g[k];
                }
                self.predict_u(st, &fu, &mut u0_star_hat);
                g1_u0 = Some(g);
            }
            let u0_star_phys = match &u0_state {
                Some(_) => Some(self.to_physical(&u0_star_hat, j)?),
                None => None,
            };

            // predictor for the main equation (includes direct forcing)
            for k in 0..size {
                fu[k] = self.tables.phi_u[k] * g1[k] + self.tables.s[k] * direct[k];
            }
            self.predict_u(&state, &fu, &mut u_star_hat);
            let u_star_phys = self.to_physical(&u_star_hat, j)?;

            // right drift at the predicted states
            let mut d_right = Vec::with_capacity(size);
            match &eq {
                Equation::Deterministic | Equation::Spde { .. } | Equation::Skeleton { .. } => {
                    d_right.extend(u_star_phys.iter().map(|&x| b.eval(x)));
                }
                Equation::FirstOrder { .. } | Equation::LinearSkeleton { .. } => {
                    let bp = b_prime.unwrap();
                    let base = u0_star_phys.as_ref().unwrap();
                    d_right.extend(base.iter().zip(&u_star_phys).map(|(&a, &z)| bp.eval(a) * z));
                }
                Equation::Controlled { .. } => {
                    let base = u0_star_phys.as_ref().unwrap();
                    d_right.extend(
                        base.iter()
                            .zip(&u_star_phys)
                            .map(|(&a, &z)| (b.eval(a + ehz * z) - b.eval(a)) / ehz),
                    );
                }
            }
            let g2 = self.transform_values(&d_right);

            // final update
            for k in 0..size {
                let g = 0.5 * (g1[k] + g2[k]);
                fu[k] = self.tables.phi_u[k] * g + self.tables.s[k] * direct[k];
                fv[k] = self.tables.phi_v[k] * g + self.tables.c[k] * direct[k];
            }
            let t = &self.tables;
            for k in 0..size {
                let u = state.u_hat[k];
                let v = state.v_hat[k];
                state.u_hat[k] = t.c[k] * u + t.s[k] * v + fu[k];
                state.v_hat[k] = -t.w2s[k] * u + t.c[k] * v + fv[k];
            }
            state.step += 1;

            // u0 corrector
            if let Some(st) = &mut u0_state {
                let g1 = g1_u0.as_ref().unwrap();
                let base = u0_star_phys.as_ref().unwrap();
                scratch.clear();
                scratch.extend(base.iter().map(|&u| b.eval(u)));
                let mut g2 = Vec::new();
                self.tr.forward_into(&scratch, &mut g2);
                let t = &self.tables;
                for k in 0..size {
                    let g = 0.5 * (g1[k] + g2[k]);
                    let u = st.u_hat[k];
                    let v = st.v_hat[k];
                    st.u_hat[k] = t.c[k] * u + t.s[k] * v + t.phi_u[k] * g;
                    st.v_hat[k] = -t.w2s[k] * u + t.c[k] * v + t.phi_v[k] * g;
                }
                st.step += 1;
            }
        }

        let last = self.to_physical(&state.u_hat, nt)?;
        if !last.iter().all(|v| v.is_finite()) {
            return Err(SolverError::BlowUp { step: nt });
        }
        frames.push(Field { grid, values: last });
        Ok(FieldPath { grid, frames })
    }
}

// ---------------------------------------------------------------------------
// Public solver entry points
// ---------------------------------------------------------------------------

/// Deterministic limit field `u0` (drift only).
pub fn solve_deterministic(config: &SimConfig) -> Result<FieldPath, SolverError> {
    Integrator::new(config)?.integrate(Equation::Deterministic)
}

/// Perturbed field `u_eps` driven by `sqrt(eps) sigma(u) dW + b(u) dt`.
pub fn solve_spde(
    config: &SimConfig,
    eps: f64,
    noise: &NoisePath,
) -> Result<FieldPath, SolverError> {
    Integrator::new(config)?.integrate(Equation::Spde { eps, noise })
}

/// First-order fluctuation field `Y`: linear equation with forcing
/// `sigma(u0) dW + b'(u0) Y dt` and zero initial data.
pub fn solve_first_order(config: &SimConfig, noise: &NoisePath) -> Result<FieldPath, SolverError> {
    Integrator::new(config)?.integrate(Equation::FirstOrder { noise })
}

/// Rescaled fluctuation `q_eps = Y / h(eps)`.
pub fn q_eps(config: &SimConfig, eps: f64, y: &FieldPath) -> FieldPath {
    y.scaled(1.0 / config.scale.h(eps))
}

/// Skeleton field `V^h` with the noise replaced by the control pairing.
pub fn solve_skeleton(config: &SimConfig, control: &Control) -> Result<FieldPath, SolverError> {
    Integrator::new(config)?.integrate(Equation::Skeleton { control })
}

/// Linearized skeleton `Z^h`: forcing `<G sigma(u0), h>_H + b'(u0) Z^h dt`,
/// zero initial data. This is the linear map `A: h -> Z^h`.
pub fn solve_linear_skeleton(
    config: &SimConfig,
    control: &Control,
) -> Result<FieldPath, SolverError> {
    Integrator::new(config)?.integrate(Equation::LinearSkeleton { control })
}

/// Alias for the linear control-to-solution map.
pub fn apply_a(config: &SimConfig, control: &Control) -> Result<FieldPath, SolverError> {
    solve_linear_skeleton(config, control)
}

/// Controlled deviation field `Z^{eps,v}`: noise at amplitude `1/h(eps)`,
/// control pairing through `sigma(u0 + sqrt(eps) h(eps) Z)`, and the drift
/// difference quotient; `v = None` gives the rescaled deviation `Z^eps`.
pub fn solve_controlled(
    config: &SimConfig,
    eps: f64,
    control: Option<&Control>,
    noise: &NoisePath,
) -> Result<FieldPath, SolverError> {
    Integrator::new(config)?.integrate(Equation::Controlled {
        eps,
        control,
        noise,
    })
}

/// Plain path pairing `sum_j sum_x a_j(x) b_j(x)` over all frames.
pub fn path_inner(a: &FieldPath, b: &FieldPath) -> f64 {
    let mut acc = KahanSum::new();
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (x, y) in fa.values.iter().zip(&fb.values) {
            acc.add(x * y);
        }
    }
    acc.value()
}

/// Adjoint of `A` with respect to the path pairing on the output and the
/// `H_T` inner product on controls: `<A h, w>_path = <h, A* w>_{H_T}`.
///
/// `weights` is a full path of observation weights (frame 0 is inert because
/// `Z^h(0) = 0`). The backward recursion transposes the forward step; the
/// slot gradient is `n^dim * transform(sigma(u0_j) * f_j)` restricted to the
/// support of the measure, where `f_j` collects the propagated adjoints.
pub fn apply_a_adjoint(config: &SimConfig, weights: &FieldPath) -> Result<Control, SolverError> {
    let grid = config.grid;
    if weights.grid != grid || weights.frames.len() != grid.nt + 1 {
        return Err(SolverError::ControlGridMismatch);
    }
    let b_prime = config
        .coeffs
        .b_prime
        .ok_or(SolverError::MissingConditionD)?;
    let sigma = config.coeffs.sigma;
    let sigma_const = config.coeffs.sigma_constant;
    let sigma0 = if let CoeffFn::Constant(v) = sigma {
        v
    } else {
        f64::NAN
    };
    let size = grid.size();
    let nt = grid.nt;
    let n_f = size as f64;
    let tables = ModeTables::new(grid)?;
    let mut tr = Transforms::new(grid);

    // forward sweep of the deterministic state, keeping both the frame and
    // the predictor frame used by the trapezoid corrector
    let mut u0_frames: Vec<Vec<f64>> = Vec::with_capacity(nt);
    let mut u0_star_frames: Vec<Vec<f64>> = Vec::with_capacity(nt);
    {
        let nu0 = config.init.nu0.evaluate(grid);
        let dot = config.init.nu0_dot.evaluate(grid);
        let mut u_hat = Vec::new();
        tr.forward_into(&nu0.values, &mut u_hat);
        let mut v_hat = Vec::new();
        tr.forward_into(&dot.values, &mut v_hat);
        let b = config.coeffs.b;
        let mut phys = Vec::new();
        let mut drift = vec![0.0f64; size];
        let mut g1 = Vec::new();
        let mut g2 = Vec::new();
        let mut star = vec![Complex64::new(0.0, 0.0); size];
        for j in 0..nt {
            tr.inverse_into(&u_hat, &mut phys)?;
            if !phys.iter().all(|v| v.is_finite()) {
                return Err(SolverError::BlowUp { step: j });
            }
            u0_frames.push(phys.clone());
            for (d, &u) in drift.iter_mut().zip(&phys) {
                *d = b.eval(u);
            }
            tr.forward_into(&drift, &mut g1);
            for k in 0..size {
                star[k] = tables.c[k] * u_hat[k] + tables.s[k] * v_hat[k] + tables.phi_u[k] * g1[k];
            }
            tr.inverse_into(&star, &mut phys)?;
            u0_star_frames.push(phys.clone());
            for (d, &u) in drift.iter_mut().zip(&phys) {
                *d = b.eval(u);
            }
            tr.forward_into(&drift, &mut g2);
            for k in 0..size {
                let u = u_hat[k];
                let v = v_hat[k];
                let g = 0.5 * (g1[k] + g2[k]);
                u_hat[k] = tables.c[k] * u + tables.s[k] * v + tables.phi_u[k] * g;
                v_hat[k] = -tables.w2s[k] * u + tables.c[k] * v + tables.phi_v[k] * g;
            }
        }
    }

    // backward sweep
    let mut p_hat = Vec::new();
    tr.forward_into(&weights.frames[nt].values, &mut p_hat);
    let mut q_hat = vec![Complex64::new(0.0, 0.0); size];
    let mut slots: Vec<Vec<Complex64>> = vec![Vec::new(); nt];

    let mut r1_hat = vec![Complex64::new(0.0, 0.0); size];
    let mut r1 = Vec::new();
    let mut a_star = vec![0.0f64; size];
    let mut a_star_hat = Vec::new();
    let mut f_hat = vec![Complex64::new(0.0, 0.0); size];
    let mut f_phys = Vec::new();
    let mut slot_phys = vec![0.0f64; size];
    let mut m_phys = Vec::new();
    let mut bm = vec![0.0f64; size];
    let mut bm_hat = Vec::new();
    let mut w_hat = Vec::new();
    let mut phiu_astar = vec![Complex64::new(0.0, 0.0); size];

    for j in (0..nt).rev() {
        // a* = 1/2 b'(u0*_j) . IT(Phi_u p + Phi_v q)
        for k in 0..size {
            r1_hat[k] = tables.phi_u[k] * p_hat[k] + tables.phi_v[k] * q_hat[k];
        }
        tr.inverse_into(&r1_hat, &mut r1)?;
        for i in 0..size {
            a_star[i] = 0.5 * b_prime.eval(u0_star_frames[j][i]) * r1[i];
        }
        tr.forward_into(&a_star, &mut a_star_hat);

        // slot gradient: f = S(p + a*) + C q, then sigma-weight and lift
        for k in 0..size {
            f_hat[k] = tables.s[k] * (p_hat[k] + a_star_hat[k]) + tables.c[k] * q_hat[k];
        }
        let mut slot = if sigma_const {
            let mut slot = vec![Complex64::new(0.0, 0.0); size];
            for k in 0..size {
                if config.measure.weights[k] > 0.0 {
                    slot[k] = n_f * sigma0 * f_hat[k];
                }
            }
            slot
        } else {
            tr.inverse_into(&f_hat, &mut f_phys)?;
            for i in 0..size {
                slot_phys[i] = sigma.eval(u0_frames[j][i]) * f_phys[i];
            }
            let mut slot = Vec::new();
            tr.forward_into(&slot_phys, &mut slot);
            for (k, c) in slot.iter_mut().enumerate() {
                if config.measure.weights[k] > 0.0 {
                    *c *= n_f;
                } else {
                    *c = Complex64::new(0.0, 0.0);
                }
            }
            slot
        };
        // enforce the Control invariant exactly; a slot that cancels to
        // roundoff must not carry an asymmetric residue of larger scales
        let mut spectrum = Spectrum {
            grid,
            coeffs: std::mem::take(&mut slot),
        };
        spectrum.symmetrize();
        slots[j] = spectrum.coeffs;

        // state adjoint propagation:
        //   p_j = w_j + C (p + a*) - O q + B . (r1/2 + IT(Phi_u a*))
        //   q_j = S (p + a*) + C q
        for k in 0..size {
            phiu_astar[k] = tables.phi_u[k] * a_star_hat[k];
        }
        tr.inverse_into(&phiu_astar, &mut m_phys)?;
        for i in 0..size {
            bm[i] = b_prime.eval(u0_frames[j][i]) * (0.5 * r1[i] + m_phys[i]);
        }
        tr.forward_into(&bm, &mut bm_hat);
        tr.forward_into(&weights.frames[j].values, &mut w_hat);
        for k in 0..size {
            let p = p_hat[k];
            let q = q_hat[k];
            let new_q = tables.s[k] * (p + a_star_hat[k]) + tables.c[k] * q;
            let new_p =
                w_hat[k] + tables.c[k] * (p + a_star_hat[k]) - tables.w2s[k] * q + bm_hat[k];
            p_hat[k] = new_p;
            q_hat[k] = new_q;
        }
    }

    Ok(Control { grid, slots })
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Maximal relative per-mode energy drift of the noiseless, drift-free
/// evolution over `steps` applications of the propagator.
pub fn energy_drift(config: &SimConfig, steps: usize) -> Result<f64, SolverError> {
    let grid = config.grid;
    let tables = ModeTables::new(grid)?;
    let mut tr = Transforms::new(grid);
    let nu0 = config.init.nu0.evaluate(grid);
    let dot = config.init.nu0_dot.evaluate(grid);
    let mut u_hat = Vec::new();
    tr.forward_into(&nu0.values, &mut u_hat);
    let mut v_hat = Vec::new();
    tr.forward_into(&dot.values, &mut v_hat);
    let energy = |u: &[Complex64], v: &[Complex64]| -> Vec<f64> {
        (0..u.len())
            .map(|k| {
                let om = grid.omega(k);
                v[k].norm_sqr() + om * om * u[k].norm_sqr()
            })
            .collect()
    };
    let initial = energy(&u_hat, &v_hat);
    let scale = initial.iter().fold(0.0f64, |m, e| m.max(*e));
    for _ in 0..steps {
        for k in 0..u_hat.len() {
            let u = u_hat[k];
            let v = v_hat[k];
            u_hat[k] = tables.c[k] * u + tables.s[k] * v;
            v_hat[k] = -tables.w2s[k] * u + tables.c[k] * v;
        }
    }
    let last = energy(&u_hat, &v_hat);
    let mut worst = 0.0f64;
    for (a, b) in initial.iter().zip(&last) {
        worst = worst.max((a - b).abs());
    }
    Ok(worst / scale.max(1e-300))
}

/// Sup error of the homogeneous evolution stepped forward `nt` steps and then
/// back with the exact inverse rotation.
pub fn reversibility_error(config: &SimConfig) -> Result<f64, SolverError> {
    let grid = config.grid;
    let tables = ModeTables::new(grid)?;
    let mut tr = Transforms::new(grid);
    let nu0 = config.init.nu0.evaluate(grid);
    let dot = config.init.nu0_dot.evaluate(grid);
    let mut u_hat = Vec::new();
    tr.forward_into(&nu0.values, &mut u_hat);
    let mut v_hat = Vec::new();
    tr.forward_into(&dot.values, &mut v_hat);
    let nt = grid.nt;
    for _ in 0..nt {
        for k in 0..u_hat.len() {
            let u = u_hat[k];
            let v = v_hat[k];
            u_hat[k] = tables.c[k] * u + tables.s[k] * v;
            v_hat[k] = -tables.w2s[k] * u + tables.c[k] * v;
        }
    }
    // inverse rotation: the step matrix has determinant exactly 1
    for _ in 0..nt {
        for k in 0..u_hat.len() {
            let u = u_hat[k];
            let v = v_hat[k];
            u_hat[k] = tables.c[k] * u - tables.s[k] * v;
            v_hat[k] = tables.w2s[k] * u + tables.c[k] * v;
        }
    }
    let back = tr.inverse(&Spectrum {
        grid,
        coeffs: u_hat,
    })?;
    let mut worst = 0.0f64;
    for (a, b) in back.values.iter().zip(&nu0.values) {
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

/// Residual of the discrete path in the rectangle-rule mild equation,
/// `sup_m sup_x | u_m - w_m - sum_{j<m} s(t_m - t_j) dt b(u_j) |`.
/// The time-marching scheme integrates the drift with second-order cell
/// weights, so this residual is O(dt) by construction; it is a coarse
/// independent diagnostic, not a convergence test.
pub fn mild_residual_deterministic(
    config: &SimConfig,
    path: &FieldPath,
) -> Result<f64, SolverError> {
    let grid = config.grid;
    let size = grid.size();
    let mut tr = Transforms::new(grid);
    let nu0 = config.init.nu0.evaluate(grid);
    let dot = config.init.nu0_dot.evaluate(grid);
    let mut nu0_hat = Vec::new();
    tr.forward_into(&nu0.values, &mut nu0_hat);
    let mut dot_hat = Vec::new();
    tr.forward_into(&dot.values, &mut dot_hat);

    let mut drift_hats: Vec<Vec<Complex64>> = Vec::with_capacity(grid.nt);
    let mut drift = vec![0.0f64; size];
    for j in 0..grid.nt {
        for (d, &u) in drift.iter_mut().zip(&path.frames[j].values) {
            *d = config.coeffs.b.eval(u);
        }
        let mut hat = Vec::new();
        tr.forward_into(&drift, &mut hat);
        drift_hats.push(hat);
    }

    let mut worst = 0.0f64;
    for m in 1..=grid.nt {
        let t = m as f64 * grid.dt;
        let mut mild = vec![Complex64::new(0.0, 0.0); size];
        for (k, c) in mild.iter_mut().enumerate() {
            let om = grid.omega(k);
            let (cos_t, s_t) = wave_multiplier(t, om)?;
            *c = cos_t * nu0_hat[k] + s_t * dot_hat[k];
        }
        for j in 0..m {
            let lag = (m - j) as f64 * grid.dt;
            for (k, c) in mild.iter_mut().enumerate() {
                let om = grid.omega(k);
                let (_, s_lag) = wave_multiplier(lag, om)?;
                *c += grid.dt * s_lag * drift_hats[j][k];
            }
        }
        let field = tr.inverse(&Spectrum { grid, coeffs: mild })?;
        for (a, b) in field.values.iter().zip(&path.frames[m].values) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}
