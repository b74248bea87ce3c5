//! Batch experiment runner: config parsing, validation, experiment
//! orchestration, and persistence of results with a reproducibility manifest.
//!
//! A run is fully described by one TOML config file plus the seed inside it;
//! outputs (CSV data, JSON summaries, binary field dumps) land in the
//! declared output directory together with a manifest listing every emitted
//! file with its checksum. Re-running the same config and seed reproduces the
//! data files byte for byte, for any worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    fit_rate, holder_estimate, mc_moment, tail_probability, weak_continuity_check, AnalysisError,
    HolderSource, IncrementAxis, ProbePoint, Quantity,
};
use crate::lattice::{write_field, Grid, LatticeError};
use crate::noise::{covariance_check, CovTestFunction, CovarianceSpec, NoiseError, Taper};
use crate::propagator::{
    make_coeffs, validate_config, CoeffParams, ConfigError, DeviationScale, InitialData, Profile,
    SimConfig,
};
use crate::ratefn::{gaussian_point_rate, rate_function, RateError, TargetSpec, RATE_DEFAULT_TOL};
use crate::solver::{solve_deterministic, solve_spde, NoisePath, SolverError};
use crate::stats::normal_quantile;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable overriding the configured output directory (the only
/// environment knob; everything else lives in the config file so the
/// manifest captures the entire run).
pub const OUTPUT_DIR_ENV: &str = "STOCHWAVE_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Validation(#[from] ConfigError),
    #[error("unknown experiment '{0}' (run `list` for the available names)")]
    UnknownExperiment(String),
    #[error("experiment parameter error: {0}")]
    Parameter(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl RunError {
    /// Process exit code: 1 for configuration problems, 2 for runtime ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Parse(_)
            | RunError::Validation(_)
            | RunError::UnknownExperiment(_)
            | RunError::Parameter(_) => 1,
            _ => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Config file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub grid: GridBlock,
    pub covariance: CovarianceBlock,
    pub coefficients: CoefficientsBlock,
    pub initial: InitialBlock,
    pub deviation: DeviationBlock,
    pub experiment: ExperimentBlock,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    pub nt: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceBlock {
    pub beta: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "uniform")]
    pub taper: String,
    #[serde(default)]
    pub taper_base: Option<f64>,
    #[serde(default)]
    pub taper_amplitude: Option<f64>,
    #[serde(default)]
    pub taper_width: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn uniform() -> String {
    "uniform".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsBlock {
    pub name: String,
    #[serde(default = "one")]
    pub sigma0: f64,
    #[serde(default)]
    pub beta0: f64,
    #[serde(default)]
    pub beta1: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub nu0: ProfileBlock,
    pub nu0_dot: ProfileBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileBlock {
    Zero,
    Constant {
        value: f64,
    },
    HarmonicCos {
        amplitude: f64,
        mode: Vec<i64>,
        #[serde(default)]
        phase: f64,
    },
    PolyBump {
        amplitude: f64,
        radius: f64,
    },
    Gaussian {
        amplitude: f64,
        width: f64,
    },
}

impl ProfileBlock {
    fn to_profile(&self) -> Result<Profile, RunError> {
        Ok(match self {
            ProfileBlock::Zero => Profile::Zero,
            ProfileBlock::Constant { value } => Profile::Constant(*value),
            ProfileBlock::HarmonicCos {
                amplitude,
                mode,
                phase,
            } => {
                if mode.is_empty() || mode.len() > 3 {
                    return Err(RunError::Parameter(
                        "harmonic mode must have 1..=3 components".into(),
                    ));
                }
                let mut m = [0i64; 3];
                for (i, v) in mode.iter().enumerate() {
                    m[i] = *v;
                }
                Profile::HarmonicCos {
                    amp: *amplitude,
                    mode: m,
                    phase: *phase,
                }
            }
            ProfileBlock::PolyBump { amplitude, radius } => Profile::PolyBump {
                amp: *amplitude,
                radius: *radius,
            },
            ProfileBlock::Gaussian { amplitude, width } => Profile::Gaussian {
                amp: *amplitude,
                width: *width,
            },
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationBlock {
    pub theta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub name: String,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub quantity: Option<String>,
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Threshold as a z-score of the Gaussian point law (linear case only).
    #[serde(default)]
    pub z_score: Option<f64>,
    #[serde(default)]
    pub axis: Option<String>,
    /// Holder source: "simulated" (default) or "deterministic".
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub max_j: Option<u32>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub probe_frame: Option<usize>,
    #[serde(default)]
    pub probe_index: Option<usize>,
    #[serde(default)]
    pub dump_fields: Option<bool>,
}

/// Parse the config file text.
pub fn parse_config(text: &str) -> Result<RunConfig, RunError> {
    toml::from_str(text).map_err(|e| RunError::Parse(e.to_string()))
}

/// Build the validated simulation configuration from the parsed file.
pub fn build_sim_config(run: &RunConfig) -> Result<SimConfig, RunError> {
    let grid = Grid::new(
        run.grid.dim,
        run.grid.n,
        run.grid.length,
        run.grid.dt,
        run.grid.nt,
    )
    .map_err(ConfigError::from)?;
    let taper = match run.covariance.taper.as_str() {
        "uniform" => Taper::Uniform,
        "bump" => Taper::Bump {
            base: run.covariance.taper_base.unwrap_or(0.5),
            amplitude: run.covariance.taper_amplitude.unwrap_or(1.0),
            width: run.covariance.taper_width.unwrap_or(0.25 * run.grid.length),
        },
        other => return Err(RunError::Parameter(format!("unknown taper '{other}'"))),
    };
    let cov = CovarianceSpec::new(
        run.grid.dim,
        run.covariance.beta,
        run.covariance.amplitude,
        taper,
    )
    .map_err(ConfigError::from)?;
    let coeffs = make_coeffs(
        &run.coefficients.name,
        CoeffParams {
            sigma0: run.coefficients.sigma0,
            beta0: run.coefficients.beta0,
            beta1: run.coefficients.beta1,
        },
    )?;
    let init = InitialData::new(
        "config",
        run.initial.nu0.to_profile()?,
        run.initial.nu0_dot.to_profile()?,
    );
    let scale = DeviationScale {
        theta: run.deviation.theta,
    };
    Ok(validate_config(grid, cov, coeffs, init, scale, None)?)
}

// ---------------------------------------------------------------------------
// Experiment registry
// ---------------------------------------------------------------------------

/// Stable listing of the built-in experiments with one-line descriptions.
pub fn list_experiments() -> Vec<(&'static str, &'static str)> {
    vec![
        ("simulate", "integrate u0 and u_eps on one noise path and dump field snapshots"),
        ("noise-check", "validate the noise covariance E[F(phi)F(psi)] against the spectral inner product"),
        ("clt", "fit the eps-scaling exponent of the coupled moments E|u_eps - u0|^p (expected slope p/2)"),
        ("holder", "estimate joint Holder regularity exponents from dyadic increment moments"),
        ("mdp-rate", "evaluate the deviation rate function by least-norm control inversion, with its Gaussian oracle"),
        ("mdp-tail", "estimate deviation tail probabilities at speed h^2(eps) against the Gaussian closed form"),
        ("weak-continuity", "scan oscillatory control perturbations for weak-topology continuity of h -> Z^h"),
    ]
}

/// Whether an experiment exercises equations that need condition (D).
fn needs_condition_d(name: &str) -> bool {
    matches!(name, "clt" | "mdp-rate" | "mdp-tail" | "weak-continuity")
}

// ---------------------------------------------------------------------------
// Output collection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub experiment: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: BTreeMap<String, FileEntry>,
}

struct OutputWriter {
    dir: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl OutputWriter {
    fn new(dir: PathBuf) -> Result<Self, RunError> {
        std::fs::create_dir_all(&dir)?;
        Ok(OutputWriter {
            dir,
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        assert!(
            !name.contains("..") && !name.starts_with('/'),
            "output names are relative to the output directory"
        );
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        let digest = Sha256::digest(bytes);
        self.files.insert(
            name.to_string(),
            FileEntry {
                sha256: hex::encode(digest),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// Summary returned by `run`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// The runner
// ---------------------------------------------------------------------------

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Execute the experiment named in the config file; outputs land in the
/// configured (or overridden) output directory.
pub fn run(config_path: &Path) -> Result<RunSummary, RunError> {
    let text = std::fs::read_to_string(config_path)?;
    let run_cfg = parse_config(&text)?;
    let config_hash = hex::encode(Sha256::digest(text.as_bytes()));
    let sim = build_sim_config(&run_cfg)?;

    let mut warnings = Vec::new();
    if needs_condition_d(&run_cfg.experiment.name) && !sim.coeffs.has_condition_d() {
        warnings.push(format!(
            "experiment '{}' probes the linearized dynamics but the drift has no b'; \
             dependent stages will fail",
            run_cfg.experiment.name
        ));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let out_dir = std::env::var(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(&run_cfg.output_dir));
    let mut writer = OutputWriter::new(out_dir.clone())?;
    let started = unix_now();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run_cfg.workers.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    pool.install(|| execute_experiment(&run_cfg, &sim, &mut writer))?;

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        config_hash,
        seed: run_cfg.seed,
        experiment: run_cfg.experiment.name.clone(),
        started_unix: started,
        finished_unix: unix_now(),
        files: writer.files.clone(),
    };
    writer.write_json("manifest.json", &manifest)?;

    Ok(RunSummary {
        output_dir: out_dir,
        files: writer.files.keys().cloned().collect(),
        warnings,
    })
}

fn probe_from(exp: &ExperimentBlock, sim: &SimConfig) -> ProbePoint {
    let default = ProbePoint::default_for(sim);
    ProbePoint {
        t_index: exp.probe_frame.unwrap_or(default.t_index),
        flat_index: exp.probe_index.unwrap_or(default.flat_index),
    }
}

fn default_eps_grid() -> Vec<f64> {
    (4..=10).map(|i| 2f64.powi(-i)).collect()
}

fn execute_experiment(
    run_cfg: &RunConfig,
    sim: &SimConfig,
    writer: &mut OutputWriter,
) -> Result<(), RunError> {
    let exp = &run_cfg.experiment;
    let seed = run_cfg.seed;
    match exp.name.as_str() {
        "simulate" => {
            let eps = exp.eps.unwrap_or(0.01);
            let u0 = solve_deterministic(sim)?;
            let ue = solve_spde(sim, eps, &NoisePath::new(seed, 0))?;
            let mut trace = String::from("step,sup_u0,sup_u_eps\n");
            for j in 0..=sim.grid.nt {
                let s0 = u0.frames[j].max_abs();
                let se = ue.frames[j].max_abs();
                let _ = writeln!(trace, "{j},{s0},{se}");
            }
            writer.write("trace.csv", trace.as_bytes())?;
            if exp.dump_fields.unwrap_or(true) {
                let mut buf = Vec::new();
                write_field(&u0.frames[sim.grid.nt], sim.grid.nt as u32, &mut buf)?;
                writer.write("u0_final.field", &buf)?;
                let mut buf = Vec::new();
                write_field(&ue.frames[sim.grid.nt], sim.grid.nt as u32, &mut buf)?;
                writer.write("u_eps_final.field", &buf)?;
            }
            let summary = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "experiment": "simulate",
                "eps": eps,
                "sup_u0": crate::lattice::sup_norm_path(&u0, sim.grid.nt)?,
                "sup_u_eps": crate::lattice::sup_norm_path(&ue, sim.grid.nt)?,
            });
            writer.write_json("simulate.json", &summary)?;
        }
        "noise-check" => {
            let samples = exp.samples.unwrap_or(20_000);
            let grid = sim.grid;
            let om = 2.0 * std::f64::consts::PI / grid.length;
            let mode_field =
                |m: f64| crate::lattice::Field::from_fn(grid, move |x| (m * om * x[0]).cos());
            let phi = CovTestFunction::time_constant("mode1", grid, mode_field(1.0));
            let psi = CovTestFunction::time_constant("mode3", grid, mode_field(3.0));
            let reports = covariance_check(
                &sim.measure,
                samples,
                &[
                    (phi.clone(), phi.clone()),
                    (phi.clone(), psi.clone()),
                    (psi.clone(), psi),
                ],
                seed,
            )?;
            let mut csv = String::from("pair,mc,analytic,std_error,rel_err,pass\n");
            for r in &reports {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    r.pair, r.mc, r.analytic, r.std_error, r.rel_err, r.pass
                );
            }
            writer.write("covariance_check.csv", csv.as_bytes())?;
            let all_pass = reports.iter().all(|r| r.pass);
            let summary = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "experiment": "noise-check",
                "samples": samples,
                "pairs": reports.len(),
                "all_pass": all_pass,
            });
            writer.write_json("noise_check.json", &summary)?;
        }
        "clt" => {
            let eps_grid = exp.eps_grid.clone().unwrap_or_else(default_eps_grid);
            let samples = exp.samples.unwrap_or(400);
            let p = exp.p.unwrap_or(2.0);
            let quantity = Quantity::parse(exp.quantity.as_deref().unwrap_or("sup_diff"))?;
            let probe = probe_from(exp, sim);
            let mut results = Vec::new();
            let mut csv = String::from("eps,p,quantity,estimate,std_error,n_samples\n");
            for &eps in &eps_grid {
                let r = mc_moment(sim, eps, p, samples, quantity, Some(probe), seed)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    r.eps, r.p, r.quantity, r.estimate, r.std_error, r.n_samples
                );
                results.push(r);
            }
            writer.write("moments.csv", csv.as_bytes())?;
            let fit = fit_rate(&results)?;
            let summary = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "experiment": "clt",
                "quantity": quantity.name(),
                "p": p,
                "samples": samples,
                "slope": fit.slope,
                "slope_se": fit.slope_se,
                "r_squared": fit.r_squared,
                "expected_slope": p / 2.0,
                "dropped_eps": fit.dropped,
            });
            writer.write_json("ratefit.json", &summary)?;
        }
        "holder" => {
            let p = exp.p.unwrap_or(4.0);
            let samples = exp.samples.unwrap_or(64);
            let axis = match exp.axis.as_deref().unwrap_or("time") {
                "time" => IncrementAxis::Time,
                "space" | "space0" => IncrementAxis::Space(0),
                "space1" => IncrementAxis::Space(1),
                "space2" => IncrementAxis::Space(2),
                other => return Err(RunError::Parameter(format!("unknown axis '{other}'"))),
            };
            let source = match exp.source.as_deref().unwrap_or("simulated") {
                "deterministic" => HolderSource::Deterministic,
                "simulated" => HolderSource::Simulated {
                    eps: exp.eps.unwrap_or(1.0),
                    n_samples: samples,
                },
                other => {
                    return Err(RunError::Parameter(format!(
                        "unknown holder source '{other}'"
                    )))
                }
            };
            let est = holder_estimate(sim, source, p, axis, seed)?;
            let mut csv = String::from("scale,moment\n");
            for (s, m) in est.scales.iter().zip(&est.moments) {
                let _ = writeln!(csv, "{s},{m}");
            }
            writer.write("holder.csv", csv.as_bytes())?;
            let summary = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "experiment": "holder",
                "p": p,
                "samples": samples,
                "alpha_hat": est.alpha_hat,
                "alpha_se": est.alpha_se,
                "exponent": est.exponent,
                "degenerate": est.degenerate,
            });
            writer.write_json("holder.json", &summary)?;
        }
        "mdp-rate" => {
            let probe = probe_from(exp, sim);
            let r = exp.threshold.unwrap_or(1.0);
            let tol = exp.tolerance.unwrap_or(RATE_DEFAULT_TOL);
            let target = TargetSpec::Point {
                t_index: probe.t_index,
                flat_index: probe.flat_index,
                value: r,
            };
            let res = rate_function(sim, &target, tol)?;
            let oracle = if sim.coeffs.sigma_constant && sim.coeffs.b_affine {
                Some(gaussian_point_rate(
                    sim,
                    probe.t_index,
                    probe.flat_index,
                    r,
                )?)
            } else {
                None
            };
            let summary = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "experiment": "mdp-rate",
                "threshold": r,
                "probe_frame": probe.t_index,
                "probe_index": probe.flat_index,
                "value": res.value,
                "energy": res.energy,
                "residual": res.residual,
                "iterations": res.iterations,
                "converged": res.converged,
                "gaussian_oracle": oracle,
            });
            writer.write_json("rate.json", &summary)?;
        }
        "mdp-tail" => {
            let eps = exp.eps.unwrap_or(1e-4);
            let samples = exp.samples.unwrap_or(100_000);
            let probe = probe_from(exp, sim);
            let r = match (exp.threshold, exp.z_score) {
                (Some(r), _) => r,
                (None, Some(z)) => {
                    let s2 = crate::ratefn::gaussian_point_variance(
                        sim,
                        probe.t_index,
                        probe.flat_index,
                    )?;
                    z * s2.sqrt() / sim.scale.h(eps)
                }
                (None, None) => {
                    return Err(RunError::Parameter(
                        "mdp-tail needs `threshold` or `z_score`".into(),
                    ))
                }
            };
            let t = tail_probability(sim, eps, r, samples, Some(probe), seed)?;
            let mut csv = String::from(
                "eps,h_eps,threshold,n_samples,exceedances,probability,std_error,is_upper_bound,normalized\n",
            );
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                t.eps,
                t.h_eps,
                t.threshold,
                t.n_samples,
                t.exceedances,
                t.probability,
                t.std_error,
                t.is_upper_bound,
                t.normalized
            );
            writer.write("tail.csv", csv.as_bytes())?;
            let summary = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "experiment": "mdp-tail",
                "eps": t.eps,
                "threshold": t.threshold,
                "probability": t.probability,
                "std_error": t.std_error,
                "normalized": t.normalized,
                "exceedances": t.exceedances,
                "sufficient_count": t.sufficient_count,
                "gaussian_tail": t.gaussian_tail,
                "rate_prediction": t.rate_prediction,
            });
            writer.write_json("tail.json", &summary)?;
        }
        "weak-continuity" => {
            let max_j = exp.max_j.unwrap_or(6);
            let tol = exp.tolerance.unwrap_or(0.05);
            let h = crate::noise::Control::random(&sim.measure, seed).scaled(0.5);
            let mut g = vec![Complex64::new(0.0, 0.0); sim.grid.size()];
            // fixed low-mode spatial profile at modest amplitude
            let k = (0..sim.grid.size())
                .find(|&k| sim.measure.weights[k] > 0.0)
                .ok_or_else(|| RunError::Parameter("covariance has no active modes".into()))?;
            let kc = sim.grid.conjugate_index(k);
            g[k] = Complex64::new(0.2, 0.05);
            g[kc] = g[k].conj();
            let rep = weak_continuity_check(sim, &h, &g, max_j, tol)?;
            let mut csv = String::from("j,distance\n");
            for (j, d) in rep.js.iter().zip(&rep.distances) {
                let _ = writeln!(csv, "{j},{d}");
            }
            writer.write("weak_continuity.csv", csv.as_bytes())?;
            let summary = serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "experiment": "weak-continuity",
                "max_j": max_j,
                "base_sup": rep.base_sup,
                "monotone_tail": rep.monotone_tail,
                "final_ratio": rep.final_ratio,
                "tolerance": rep.tolerance,
                "pass": rep.pass,
            });
            writer.write_json("weak_continuity.json", &summary)?;
        }
        other => return Err(RunError::UnknownExperiment(other.into())),
    }
    Ok(())
}

/// Convenience used by the tail experiment and the acceptance suite: the
/// threshold whose closed-form expected exceedance count at `n` samples is
/// `count` in the linear Gaussian case.
pub fn threshold_for_expected_count(
    sim: &SimConfig,
    eps: f64,
    probe: ProbePoint,
    n: usize,
    count: f64,
) -> Result<f64, RateError> {
    let s2 = crate::ratefn::gaussian_point_variance(sim, probe.t_index, probe.flat_index)?;
    let p = count / n as f64;
    let z = normal_quantile(1.0 - 0.5 * p);
    Ok(z * s2.sqrt() / sim.scale.h(eps))
}
