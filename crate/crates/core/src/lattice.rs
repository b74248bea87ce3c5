//! Periodic spatial lattices, real scalar fields, spectral transforms and the
//! norms used throughout the crate.
//!
//! Spectral convention (used everywhere, fixed here once): the forward
//! transform carries the `1/n^dim` factor,
//!
//! ```text
//!   a_hat(k) = n^{-dim} sum_x a(x) exp(-2 pi i k.x / n),
//!   a(x)     = sum_k a_hat(k) exp(+2 pi i k.x / n),
//! ```
//!
//! so Parseval reads `sum_x a(x)^2 = n^dim * sum_k |a_hat(k)|^2` and the
//! transform of a pointwise product is the plain (unweighted) circular
//! convolution of the normalized spectra.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Magic bytes opening every binary field snapshot.
pub const FIELD_MAGIC: &[u8; 8] = b"SWFIELD1";
/// Header length of the binary field format.
pub const FIELD_HEADER_LEN: usize = 32;

/// Relative tolerance for the imaginary residue of an inverse transform.
pub const IM_RESIDUE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("unsupported dimension {0} (only 1 and 3 are supported)")]
    UnsupportedDimension(usize),
    #[error("grid size {0} must be a power of two and at least 4")]
    BadGridSize(usize),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("nt must be at least 1")]
    NoTimeSteps,
    #[error("time step {dt} exceeds the accuracy bound L/n = {bound}")]
    TimeStepTooLarge { dt: f64, bound: f64 },
    #[error("field size {got} does not match grid size {expected}")]
    SizeMismatch { got: usize, expected: usize },
    #[error("time index {index} out of range 0..={max}")]
    FrameOutOfRange { index: usize, max: usize },
    #[error("Holder exponent must lie in (0, 1], got {0}")]
    BadHolderExponent(f64),
    #[error("empty window")]
    EmptyWindow,
    #[error("inverse transform left an imaginary residue {residue:.3e} (field scale {scale:.3e})")]
    ImaginaryResidue { residue: f64, scale: f64 },
    #[error("path frames do not share one grid")]
    MixedGrids,
    #[error("non-finite field entry")]
    NonFinite,
    #[error("bad field header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Periodic spatial grid together with the time discretization.
///
/// `n` points per axis over a torus of side `length`; `nt` time steps of
/// size `dt` cover the horizon `T = nt * dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub dt: f64,
    pub nt: usize,
}

impl Grid {
    pub fn new(
        dim: usize,
        n: usize,
        length: f64,
        dt: f64,
        nt: usize,
    ) -> Result<Self, LatticeError> {
        if dim != 1 && dim != 3 {
            return Err(LatticeError::UnsupportedDimension(dim));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(LatticeError::BadGridSize(n));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(LatticeError::NonPositive {
                name: "L",
                value: length,
            });
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(LatticeError::NonPositive {
                name: "dt",
                value: dt,
            });
        }
        if nt == 0 {
            return Err(LatticeError::NoTimeSteps);
        }
        // The exact per-mode propagator is unconditionally stable; this bound
        // only keeps the highest retained frequency resolved within one step.
        let bound = length / n as f64;
        if dt > bound * (1.0 + 1e-12) {
            return Err(LatticeError::TimeStepTooLarge { dt, bound });
        }
        Ok(Grid {
            dim,
            n,
            length,
            dt,
            nt,
        })
    }

    /// Number of lattice points, `n^dim`.
    pub fn size(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Time horizon `T = nt * dt`.
    pub fn horizon(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    /// Lattice spacing `L / n`.
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Signed integer mode vector of the flat spectral index.
    pub fn mode_vector(&self, flat: usize) -> [i64; 3] {
        let n = self.n;
        let signed = |i: usize| -> i64 {
            if i <= n / 2 {
                i as i64
            } else {
                i as i64 - n as i64
            }
        };
        match self.dim {
            1 => [signed(flat), 0, 0],
            _ => {
                let i2 = flat % n;
                let i1 = (flat / n) % n;
                let i0 = flat / (n * n);
                [signed(i0), signed(i1), signed(i2)]
            }
        }
    }

    /// Angular frequency `omega(k) = 2 pi |k| / L` of a flat spectral index.
    pub fn omega(&self, flat: usize) -> f64 {
        let k = self.mode_vector(flat);
        let norm2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        2.0 * std::f64::consts::PI * norm2.sqrt() / self.length
    }

    /// Table of `omega(k)` for every flat index.
    pub fn omega_table(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.omega(i)).collect()
    }

    /// Flat index of the conjugate mode `-k`.
    pub fn conjugate_index(&self, flat: usize) -> usize {
        let n = self.n;
        let refl = |i: usize| (n - i) % n;
        match self.dim {
            1 => refl(flat),
            _ => {
                let i2 = flat % n;
                let i1 = (flat / n) % n;
                let i0 = flat / (n * n);
                (refl(i0) * n + refl(i1)) * n + refl(i2)
            }
        }
    }

    /// Physical coordinates of a flat lattice point.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let h = self.spacing();
        match self.dim {
            1 => [flat as f64 * h, 0.0, 0.0],
            _ => {
                let n = self.n;
                let i2 = flat % n;
                let i1 = (flat / n) % n;
                let i0 = flat / (n * n);
                [i0 as f64 * h, i1 as f64 * h, i2 as f64 * h]
            }
        }
    }

    /// Flat index from per-axis indices (unused axes ignored).
    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => (idx[0] * self.n + idx[1]) * self.n + idx[2],
        }
    }
}

/// Real scalar field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.size()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field {
            grid,
            values: vec![c; grid.size()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, LatticeError> {
        if values.len() != grid.size() {
            return Err(LatticeError::SizeMismatch {
                got: values.len(),
                expected: grid.size(),
            });
        }
        Ok(Field { grid, values })
    }

    /// Evaluate a function of the physical coordinates on every lattice point.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.size()).map(|i| f(grid.point(i))).collect();
        Field { grid, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Field {
            grid: self.grid,
            values,
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Field {
            grid: self.grid,
            values,
        }
    }
}

/// Complex spectral coefficients of a field, in the crate normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub grid: Grid,
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: Grid) -> Self {
        Spectrum {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.size()],
        }
    }

    /// Hermitian symmetry defect `max_k |c(k) - conj(c(-k))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.coeffs.len() {
            let j = self.grid.conjugate_index(i);
            let d = (self.coeffs[i] - self.coeffs[j].conj()).norm();
            worst = worst.max(d);
        }
        worst
    }

    /// Enforce `c(-k) = conj(c(k))` by averaging conjugate pairs.
    pub fn symmetrize(&mut self) {
        for i in 0..self.coeffs.len() {
            let j = self.grid.conjugate_index(i);
            if j < i {
                continue;
            }
            if i == j {
                self.coeffs[i] = Complex64::new(self.coeffs[i].re, 0.0);
            } else {
                let avg = 0.5 * (self.coeffs[i] + self.coeffs[j].conj());
                self.coeffs[i] = avg;
                self.coeffs[j] = avg.conj();
            }
        }
    }
}

/// Time-indexed sequence of fields; frame `j` sits at time `j * dt`.
#[derive(Debug, Clone)]
pub struct FieldPath {
    pub grid: Grid,
    pub frames: Vec<Field>,
}

impl FieldPath {
    pub fn new(grid: Grid, frames: Vec<Field>) -> Result<Self, LatticeError> {
        if frames.iter().any(|f| f.grid != grid) {
            return Err(LatticeError::MixedGrids);
        }
        Ok(FieldPath { grid, frames })
    }

    pub fn zeros(grid: Grid) -> Self {
        FieldPath {
            grid,
            frames: vec![Field::zeros(grid); grid.nt + 1],
        }
    }

    pub fn sub(&self, other: &FieldPath) -> FieldPath {
        assert_eq!(self.grid, other.grid);
        let frames = self
            .frames
            .iter()
            .zip(&other.frames)
            .map(|(a, b)| a.sub(b))
            .collect();
        FieldPath {
            grid: self.grid,
            frames,
        }
    }

    pub fn scaled(&self, c: f64) -> FieldPath {
        FieldPath {
            grid: self.grid,
            frames: self.frames.iter().map(|f| f.scaled(c)).collect(),
        }
    }

    /// Value at frame `t_idx` and flat spatial index.
    pub fn value(&self, t_idx: usize, flat: usize) -> f64 {
        self.frames[t_idx].values[flat]
    }
}

/// Sup norm of the path over frames `0..=t_index` and the whole grid.
pub fn sup_norm_path(path: &FieldPath, t_index: usize) -> Result<f64, LatticeError> {
    if t_index >= path.frames.len() {
        return Err(LatticeError::FrameOutOfRange {
            index: t_index,
            max: path.frames.len() - 1,
        });
    }
    let mut m = 0.0f64;
    for frame in &path.frames[..=t_index] {
        m = m.max(frame.max_abs());
    }
    Ok(m)
}

/// Sup norm of `a - b` over all frames and points.
pub fn sup_norm_diff(a: &FieldPath, b: &FieldPath) -> f64 {
    let mut m = 0.0f64;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (x, y) in fa.values.iter().zip(&fb.values) {
            m = m.max((x - y).abs());
        }
    }
    m
}

/// Space-time observation window: inclusive frame range times an inclusive
/// sub-box of the grid. Distances inside the window are plain Euclidean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub frame_lo: usize,
    pub frame_hi: usize,
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Window {
    /// Default window: centered sub-box of half the side length, full time range.
    pub fn default_for(grid: Grid) -> Window {
        let q = grid.n / 4;
        let lo = q;
        let hi = q + grid.n / 2 - 1;
        let (mut los, mut his) = ([0usize; 3], [0usize; 3]);
        for a in 0..grid.dim {
            los[a] = lo;
            his[a] = hi;
        }
        Window {
            frame_lo: 0,
            frame_hi: grid.nt,
            lo: los,
            hi: his,
        }
    }

    /// Full grid, full time range.
    pub fn full(grid: Grid) -> Window {
        let (los, mut his) = ([0usize; 3], [0usize; 3]);
        for a in 0..grid.dim {
            his[a] = grid.n - 1;
        }
        Window {
            frame_lo: 0,
            frame_hi: grid.nt,
            lo: los,
            hi: his,
        }
    }

    fn validate(&self, grid: Grid, nt: usize) -> Result<(), LatticeError> {
        if self.frame_lo > self.frame_hi || self.frame_hi > nt {
            return Err(LatticeError::EmptyWindow);
        }
        for a in 0..grid.dim {
            if self.lo[a] > self.hi[a] || self.hi[a] >= grid.n {
                return Err(LatticeError::EmptyWindow);
            }
        }
        Ok(())
    }

    fn extent(&self, axis: usize) -> usize {
        self.hi[axis] - self.lo[axis]
    }

    /// Flat indices of all window points.
    fn points(&self, grid: Grid) -> Vec<usize> {
        let mut out = Vec::new();
        match grid.dim {
            1 => {
                for i in self.lo[0]..=self.hi[0] {
                    out.push(i);
                }
            }
            _ => {
                for i0 in self.lo[0]..=self.hi[0] {
                    for i1 in self.lo[1]..=self.hi[1] {
                        for i2 in self.lo[2]..=self.hi[2] {
                            out.push(grid.flat_index([i0, i1, i2]));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Pair-separation set for the discrete Holder seminorm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeparationSet {
    /// Dyadic offsets 1, 2, 4, ... per axis and in time (default).
    Dyadic,
    /// Every pair in the window; O(N^2), intended for small grids and oracles.
    Exhaustive,
}

fn dyadic_offsets(max: usize) -> Vec<usize> {
    let mut v = vec![0];
    let mut d = 1;
    while d <= max {
        v.push(d);
        d *= 2;
    }
    v
}

/// Discrete Holder seminorm
/// `sup |g(t,x) - g(s,y)| / (|t-s| + |x-y|)^alpha` over the window.
///
/// The dyadic mode scans offsets (time and one axis at a time) of dyadic
/// length from every base point; the exhaustive mode enumerates all pairs.
pub fn holder_seminorm(
    path: &FieldPath,
    alpha: f64,
    window: &Window,
    set: SeparationSet,
) -> Result<f64, LatticeError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(LatticeError::BadHolderExponent(alpha));
    }
    let grid = path.grid;
    window.validate(grid, path.frames.len() - 1)?;
    let h = grid.spacing();
    let dt = grid.dt;
    let mut best = 0.0f64;

    match set {
        SeparationSet::Dyadic => {
            let t_offs = dyadic_offsets(window.frame_hi - window.frame_lo);
            // Per-axis dyadic space offsets; time offsets combine with each.
            for axis in 0..grid.dim {
                let x_offs = dyadic_offsets(window.extent(axis));
                for &dt_off in &t_offs {
                    for &dx_off in &x_offs {
                        if dt_off == 0 && dx_off == 0 {
                            continue;
                        }
                        let dist = dt_off as f64 * dt + dx_off as f64 * h;
                        let denom = dist.powf(alpha);
                        let mut shifted = window.lo;
                        shifted[axis] += dx_off;
                        if shifted[axis] > window.hi[axis] {
                            continue;
                        }
                        let hi_base = window.hi[axis] - dx_off;
                        for t in window.frame_lo..=(window.frame_hi - dt_off) {
                            let fa = &path.frames[t];
                            let fb = &path.frames[t + dt_off];
                            let mut base = *window;
                            base.hi[axis] = hi_base;
                            for p in base.points(grid) {
                                let mut idx = decompose(grid, p);
                                idx[axis] += dx_off;
                                let q = grid.flat_index(idx);
                                let diff = (fb.values[q] - fa.values[p]).abs();
                                let quot = diff / denom;
                                if quot > best {
                                    best = quot;
                                }
                            }
                        }
                    }
                }
            }
        }
        SeparationSet::Exhaustive => {
            let pts = window.points(grid);
            let frames: Vec<usize> = (window.frame_lo..=window.frame_hi).collect();
            for (ia, &ta) in frames.iter().enumerate() {
                for &pa in &pts {
                    let ca = grid.point(pa);
                    let va = path.frames[ta].values[pa];
                    for &tb in &frames[ia..] {
                        for &pb in &pts {
                            if tb == ta && pb == pa {
                                continue;
                            }
                            let cb = grid.point(pb);
                            let dx = ((ca[0] - cb[0]).powi(2)
                                + (ca[1] - cb[1]).powi(2)
                                + (ca[2] - cb[2]).powi(2))
                            .sqrt();
                            let dist = (tb - ta) as f64 * dt + dx;
                            let diff = (path.frames[tb].values[pb] - va).abs();
                            let quot = diff / dist.powf(alpha);
                            if quot > best {
                                best = quot;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(best)
}

fn decompose(grid: Grid, flat: usize) -> [usize; 3] {
    match grid.dim {
        1 => [flat, 0, 0],
        _ => {
            let n = grid.n;
            [flat / (n * n), (flat / n) % n, flat % n]
        }
    }
}

// ---------------------------------------------------------------------------
// Spectral transforms
// ---------------------------------------------------------------------------

type PlanKey = (usize, bool);

fn plan_cache() -> &'static Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = plan_cache().lock().unwrap();
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Reusable transform context for one grid (plans are shared process-wide,
/// scratch buffers are confined to the instance).
pub struct Transforms {
    pub grid: Grid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Transforms {
    pub fn new(grid: Grid) -> Self {
        let fwd = plan(grid.n, false);
        let inv = plan(grid.n, true);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Transforms {
            grid,
            fwd,
            inv,
            line: vec![Complex64::new(0.0, 0.0); grid.n],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    fn fft_all_axes(&mut self, buf: &mut [Complex64], inverse: bool) {
        let n = self.grid.n;
        let fft = if inverse {
            self.inv.clone()
        } else {
            self.fwd.clone()
        };
        match self.grid.dim {
            1 => fft.process_with_scratch(buf, &mut self.scratch),
            _ => {
                // axis 2: contiguous lines
                for chunk in buf.chunks_mut(n) {
                    fft.process_with_scratch(chunk, &mut self.scratch);
                }
                // axis 1: stride n
                for plane in 0..n {
                    for col in 0..n {
                        let base = plane * n * n + col;
                        for j in 0..n {
                            self.line[j] = buf[base + j * n];
                        }
                        fft.process_with_scratch(&mut self.line, &mut self.scratch);
                        for j in 0..n {
                            buf[base + j * n] = self.line[j];
                        }
                    }
                }
                // axis 0: stride n^2
                for row in 0..n {
                    for col in 0..n {
                        let base = row * n + col;
                        for j in 0..n {
                            self.line[j] = buf[base + j * n * n];
                        }
                        fft.process_with_scratch(&mut self.line, &mut self.scratch);
                        for j in 0..n {
                            buf[base + j * n * n] = self.line[j];
                        }
                    }
                }
            }
        }
    }

    /// Forward transform of raw values into `out` (crate normalization).
    pub fn forward_into(&mut self, values: &[f64], out: &mut Vec<Complex64>) {
        let size = self.grid.size();
        assert_eq!(values.len(), size);
        out.clear();
        out.extend(values.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fft_all_axes(out, false);
        let scale = 1.0 / size as f64;
        for c in out.iter_mut() {
            *c *= scale;
        }
    }

    pub fn forward(&mut self, field: &Field) -> Result<Spectrum, LatticeError> {
        if field.values.len() != self.grid.size() {
            return Err(LatticeError::SizeMismatch {
                got: field.values.len(),
                expected: self.grid.size(),
            });
        }
        let mut coeffs = Vec::new();
        self.forward_into(&field.values, &mut coeffs);
        Ok(Spectrum {
            grid: self.grid,
            coeffs,
        })
    }

    /// Inverse transform; fails if the imaginary residue exceeds
    /// `IM_RESIDUE_TOL` relative to the field scale. The residue is discarded
    /// only after this check passes.
    pub fn inverse_into(
        &mut self,
        coeffs: &[Complex64],
        out: &mut Vec<f64>,
    ) -> Result<(), LatticeError> {
        let size = self.grid.size();
        assert_eq!(coeffs.len(), size);
        let mut buf: Vec<Complex64> = coeffs.to_vec();
        self.fft_all_axes(&mut buf, true);
        let mut max_im = 0.0f64;
        let mut max_re = 0.0f64;
        for c in &buf {
            max_im = max_im.max(c.im.abs());
            max_re = max_re.max(c.re.abs());
        }
        if max_im > IM_RESIDUE_TOL * max_re + 1e-300 {
            return Err(LatticeError::ImaginaryResidue {
                residue: max_im,
                scale: max_re,
            });
        }
        out.clear();
        out.extend(buf.iter().map(|c| c.re));
        Ok(())
    }

    pub fn inverse(&mut self, spectrum: &Spectrum) -> Result<Field, LatticeError> {
        if spectrum.coeffs.len() != self.grid.size() {
            return Err(LatticeError::SizeMismatch {
                got: spectrum.coeffs.len(),
                expected: self.grid.size(),
            });
        }
        let mut values = Vec::new();
        self.inverse_into(&spectrum.coeffs, &mut values)?;
        Ok(Field {
            grid: self.grid,
            values,
        })
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Write one field snapshot in the binary layout: 32-byte header
/// (magic, dim, n, frame index, zero padding), then `n^dim` little-endian
/// f64 values in row-major order.
pub fn write_field(
    field: &Field,
    frame_index: u32,
    w: &mut impl Write,
) -> Result<(), LatticeError> {
    let mut header = [0u8; FIELD_HEADER_LEN];
    header[..8].copy_from_slice(FIELD_MAGIC);
    header[8..12].copy_from_slice(&(field.grid.dim as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(field.grid.n as u32).to_le_bytes());
    header[16..20].copy_from_slice(&frame_index.to_le_bytes());
    w.write_all(&header)?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read one binary field snapshot; returns `(dim, n, frame_index, values)`.
pub fn read_field(r: &mut impl Read) -> Result<(usize, usize, u32, Vec<f64>), LatticeError> {
    let mut header = [0u8; FIELD_HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[..8] != FIELD_MAGIC {
        return Err(LatticeError::BadHeader("magic mismatch".into()));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let frame = u32::from_le_bytes(header[16..20].try_into().unwrap());
    if dim != 1 && dim != 3 {
        return Err(LatticeError::BadHeader(format!("dimension {dim}")));
    }
    let size = n.pow(dim as u32);
    let mut values = Vec::with_capacity(size);
    let mut buf = [0u8; 8];
    for _ in 0..size {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((dim, n, frame, values))
}

/// CSV rendering for small grids: per-axis indices then the value.
pub fn field_to_csv(field: &Field) -> String {
    let mut out = String::new();
    match field.grid.dim {
        1 => {
            out.push_str("i,value\n");
            for (i, v) in field.values.iter().enumerate() {
                out.push_str(&format!("{i},{v}\n"));
            }
        }
        _ => {
            out.push_str("i0,i1,i2,value\n");
            let n = field.grid.n;
            for (i, v) in field.values.iter().enumerate() {
                let i2 = i % n;
                let i1 = (i / n) % n;
                let i0 = i / (n * n);
                out.push_str(&format!("{i0},{i1},{i2},{v}\n"));
            }
        }
    }
    out
}
