//! Zernike-coefficient retrieval from measured intensity PSF frames.
//!
//! The modulus in `I = |F{pupil}|²` destroys phase information, so the
//! coefficients are recovered by fitting the full detector-plane forward
//! model — pupil phase, Fourier propagation, sub-pixel centering, pixel
//! integration, amplitude and background — to the measured counts with
//! damped least squares, restarted from multiple starting points.
//!
//! Two exact degeneracies are handled structurally:
//!
//! * tilts are exactly equivalent to image translation, so they are excluded
//!   from the default basis and absorbed by the center nuisance parameters;
//! * a single intensity frame cannot distinguish an expansion from its
//!   *twin* with every even-|m| coefficient negated
//!   ([`ZernikeExpansion::twin`]); results are reported up to this class.
//!
//! The noise model is Poisson-dominated counting statistics,
//! `σ² = max(counts, 1) + read_noise²`.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftDirection;
use serde::Serialize;
use std::f64::consts::TAU;

use crate::diffraction::{OpticalConfig, PupilGrid};
use crate::error::{Error, Result};
use crate::fft2::{unshifted_index, Fft2};
use crate::frame::{Frame, Plane};
use crate::lm::{minimize, LeastSquaresProblem, LmOptions, LmOutcome};
use crate::scene::{two_ion_distance, IonSpecies};
use crate::zernike::{ZernikeExpansion, ZernikeIndex};

/// How the fit obtains derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    /// Chain-rule derivatives through the pupil (one extra transform per
    /// parameter, exact for the discrete model).
    Analytic,
    /// Forward finite differences of the residuals; fallback for model
    /// variations without analytic derivatives.
    ForwardDiff,
}

/// The fixed part of the retrieval problem.
#[derive(Debug, Clone)]
pub struct FitModel {
    /// Zernike terms to fit. Defaults to every valid index with `n <= 5`
    /// except piston and the two tilts (21 polynomials minus the 3 that are
    /// degenerate with normalization and translation).
    pub basis: Vec<ZernikeIndex>,
    pub cfg: OpticalConfig,
    pub grid: PupilGrid,
    /// Width and height of the detector window, pixels.
    pub detector_shape: (usize, usize),
    /// Integrate the PSF over square detector pixels; set `false` to sample
    /// at pixel centers instead.
    pub pixel_integration: bool,
    /// RMS read noise entering the per-pixel σ model, counts.
    pub read_noise_rms: f64,
    pub jacobian: JacobianMode,
}

impl FitModel {
    pub fn new(cfg: OpticalConfig, grid: PupilGrid, detector_shape: (usize, usize)) -> Self {
        Self {
            basis: Self::default_basis(5),
            cfg,
            grid,
            detector_shape,
            pixel_integration: true,
            read_noise_rms: 0.0,
            jacobian: JacobianMode::Analytic,
        }
    }

    /// All valid indices with `n <= max_order`, excluding piston and tilts,
    /// ordered by (n, m).
    pub fn default_basis(max_order: u32) -> Vec<ZernikeIndex> {
        ZernikeIndex::up_to_order(max_order)
            .into_iter()
            .filter(|idx| !idx.is_piston_or_tilt())
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.basis.len() + 4
    }
}

/// Center, amplitude and background of a fitted PSF.
///
/// `(x0_px, y0_px)` is the PSF center in detector pixel coordinates of the
/// data frame (origin at the center of pixel (0, 0)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitNuisance {
    pub amplitude: f64,
    pub background: f64,
    pub x0_px: f64,
    pub y0_px: f64,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Number of starts: index 0 starts from zero coefficients, the rest from
    /// random draws uniform in [-0.5, 0.5] waves.
    pub restarts: usize,
    pub max_iter: usize,
    /// Convergence threshold on the relative χ² decrease.
    pub tol: f64,
    /// Seed of the restart generator; restarts are reproducible and
    /// independent of thread scheduling.
    pub seed: u64,
    /// Worker threads for restart evaluation (0 = available parallelism).
    pub threads: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iter: 100,
            tol: 1e-10,
            seed: 0,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Recovered expansion (defined up to [`FitResult::twin`]).
    pub coefficients: ZernikeExpansion,
    pub nuisance: FitNuisance,
    /// χ² per degree of freedom, `χ² / (N_pixels − N_params)`.
    pub chi_nu: f64,
    /// LM iterations of the winning restart.
    pub iterations: usize,
    pub converged: bool,
    /// Which restart produced the winning optimum.
    pub restart_index: usize,
    /// Per-coefficient 1σ estimates from the final-iteration curvature
    /// (square roots of the diagonal of (JᵀJ)⁻¹), ordered like
    /// `coefficients.terms()`; NaN if the curvature is singular.
    pub coefficient_sigmas: Vec<f64>,
    /// Best χ² reached by every restart, for diagnostics.
    pub restart_chi2: Vec<f64>,
    /// Amplitude indistinguishable from the background noise floor.
    pub low_signal: bool,
}

impl FitResult {
    /// The equally likely sign twin of the recovered expansion (every
    /// even-|m| coefficient negated); single-frame intensity data cannot
    /// break this degeneracy.
    pub fn twin(&self) -> ZernikeExpansion {
        self.coefficients.twin()
    }

    /// JSON report with provenance: the input frame hash and the model
    /// configuration.
    pub fn to_json(&self, model: &FitModel, data: &Frame) -> String {
        #[derive(Serialize)]
        struct Term {
            c: f64,
            m: i64,
            n: i64,
            sigma: f64,
        }
        #[derive(Serialize)]
        struct Provenance {
            detector_shape: (usize, usize),
            frame_hash: String,
            grid_n_samples: usize,
            grid_pupil_fill: f64,
            magnification: f64,
            numerical_aperture: f64,
            pixel_integration: bool,
            pixel_pitch_um: f64,
            read_noise_rms: f64,
            wavelength_nm: f64,
        }
        #[derive(Serialize)]
        struct Report<'a> {
            chi_nu: f64,
            coefficients: Vec<Term>,
            converged: bool,
            iterations: usize,
            low_signal: bool,
            nuisance: &'a FitNuisance,
            provenance: Provenance,
            restart_chi2: &'a [f64],
            restart_index: usize,
            wavelength_nm: f64,
        }
        let coefficients = self
            .coefficients
            .terms()
            .iter()
            .zip(&self.coefficient_sigmas)
            .map(|((idx, c), sigma)| Term {
                c: *c,
                m: idx.m() as i64,
                n: idx.n() as i64,
                sigma: *sigma,
            })
            .collect();
        let report = Report {
            chi_nu: self.chi_nu,
            coefficients,
            converged: self.converged,
            iterations: self.iterations,
            low_signal: self.low_signal,
            nuisance: &self.nuisance,
            provenance: Provenance {
                detector_shape: model.detector_shape,
                frame_hash: format!("fnv1a64:{:016x}", frame_hash(data)),
                grid_n_samples: model.grid.n_samples,
                grid_pupil_fill: model.grid.pupil_fill,
                magnification: model.cfg.magnification,
                numerical_aperture: model.cfg.numerical_aperture,
                pixel_integration: model.pixel_integration,
                pixel_pitch_um: model.cfg.detector_pixel_pitch_um,
                read_noise_rms: model.read_noise_rms,
                wavelength_nm: model.cfg.wavelength_nm,
            },
            restart_chi2: &self.restart_chi2,
            restart_index: self.restart_index,
            wavelength_nm: self.coefficients.wavelength_nm(),
        };
        serde_json::to_string_pretty(&report).expect("fit report serialization")
    }
}

/// FNV-1a over the frame geometry and pixel values.
fn frame_hash(frame: &Frame) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    eat(&(frame.width() as u64).to_le_bytes());
    eat(&(frame.height() as u64).to_le_bytes());
    eat(&frame.pixel_pitch_um().to_bits().to_le_bytes());
    for v in frame.data() {
        eat(&v.to_bits().to_le_bytes());
    }
    hash
}

// ---------------------------------------------------------------------------
// forward model machinery

/// Precomputed geometry shared by every evaluation of one fit.
struct FitGeometry {
    n: usize,
    k: usize,
    /// Spatial pupil-grid indices inside the disc.
    inside: Vec<usize>,
    /// Basis values per inside pixel, `[pixel * k + basis]`.
    basis_flat: Vec<f64>,
    xhat: Vec<f64>,
    yhat: Vec<f64>,
    fft: Fft2,
    /// Total energy of the raw intensity (Parseval: n² · #inside).
    norm: f64,
    det_w: usize,
    det_h: usize,
    /// Per detector column: (raw FFT column, weight) bands.
    weights_x: Vec<Vec<(usize, f64)>>,
    weights_y: Vec<Vec<(usize, f64)>>,
    /// Pupil-tilt amount per detector-pixel of decentering.
    tilt_per_px: f64,
}

impl FitGeometry {
    fn build(model: &FitModel) -> Result<Self> {
        model.cfg.validate()?;
        model.grid.validate()?;
        let n = model.grid.n_samples;
        let radius = model.grid.pupil_radius_samples();
        if radius < 16.0 {
            return Err(Error::Sampling(format!(
                "pupil diameter of {:.1} samples is too coarse for fitting",
                2.0 * radius
            )));
        }
        let k = model.basis.len();
        let center = (n / 2) as f64;
        let mut inside = Vec::new();
        let mut basis_flat = Vec::new();
        let mut xhat = Vec::new();
        let mut yhat = Vec::new();
        for iy in 0..n {
            let yh = (iy as f64 - center) / radius;
            for ix in 0..n {
                let xh = (ix as f64 - center) / radius;
                let r = (xh * xh + yh * yh).sqrt();
                if r <= 1.0 {
                    inside.push(iy * n + ix);
                    xhat.push(xh);
                    yhat.push(yh);
                    let phi = yh.atan2(xh);
                    for idx in &model.basis {
                        basis_flat.push(idx.eval(r, phi));
                    }
                }
            }
        }

        let (det_w, det_h) = model.detector_shape;
        if det_w == 0 || det_h == 0 {
            return Err(Error::Config("detector window must be nonempty".into()));
        }
        let pitch_obj = model.grid.object_pitch_um(&model.cfg);
        let px_obj = model.cfg.object_referred_pixel_pitch_um();
        let field_um = n as f64 * pitch_obj;
        let window_um = det_w.max(det_h) as f64 * px_obj;
        if window_um > field_um {
            return Err(Error::Sampling(format!(
                "detector window of {window_um:.1} µm exceeds the simulated field of \
                 {field_um:.1} µm; enlarge n_samples or shrink the window"
            )));
        }

        let weights_x = resample_bands(det_w, px_obj, n, pitch_obj, model.pixel_integration);
        let weights_y = resample_bands(det_h, px_obj, n, pitch_obj, model.pixel_integration);

        // a pupil tilt of t waves translates the PSF by -t · λ/NA in the
        // object plane; one detector pixel is px_obj of translation
        let shift_per_wave = model.cfg.wavelength_um() / model.cfg.numerical_aperture;
        let tilt_per_px = -px_obj / shift_per_wave;

        Ok(Self {
            n,
            k,
            norm: (n * n) as f64 * inside.len() as f64,
            inside,
            basis_flat,
            xhat,
            yhat,
            fft: Fft2::new(n, n, FftDirection::Forward),
            det_w,
            det_h,
            weights_x,
            weights_y,
            tilt_per_px,
        })
    }

    fn n_pixels(&self) -> usize {
        self.det_w * self.det_h
    }
}

/// Bands mapping one detector axis onto raw FFT indices of the object grid.
///
/// Detector pixel `a` covers `[(a - (n_det-1)/2) ∓ 1/2] · det_pitch` around
/// the PSF center; object sample `j` is a cell of width `obj_pitch` centered
/// at `(j - n/2) · obj_pitch`. With pixel integration the weights are
/// fractional cell overlaps (mass-conserving); without, two bilinear taps at
/// the pixel center scaled by the pixel/sample pitch ratio.
fn resample_bands(
    n_det: usize,
    det_pitch: f64,
    n_obj: usize,
    obj_pitch: f64,
    integrate: bool,
) -> Vec<Vec<(usize, f64)>> {
    let det_center = (n_det as f64 - 1.0) / 2.0;
    let obj_center = (n_obj / 2) as f64;
    (0..n_det)
        .map(|a| {
            let center_um = (a as f64 - det_center) * det_pitch;
            let mut band = Vec::new();
            if integrate {
                let lo = center_um - det_pitch / 2.0;
                let hi = center_um + det_pitch / 2.0;
                let j_lo = (lo / obj_pitch + obj_center - 0.5).floor().max(0.0) as usize;
                let j_hi = ((hi / obj_pitch + obj_center + 0.5).ceil() as usize).min(n_obj);
                for j in j_lo..j_hi {
                    let cell_lo = (j as f64 - obj_center - 0.5) * obj_pitch;
                    let cell_hi = cell_lo + obj_pitch;
                    let overlap = (hi.min(cell_hi) - lo.max(cell_lo)).max(0.0);
                    if overlap > 0.0 {
                        band.push((unshifted_1d(j, n_obj), overlap / obj_pitch));
                    }
                }
            } else {
                let pos = center_um / obj_pitch + obj_center;
                let j0 = pos.floor() as usize;
                let frac = pos - pos.floor();
                let scale = det_pitch / obj_pitch;
                if j0 + 1 < n_obj {
                    band.push((unshifted_1d(j0, n_obj), (1.0 - frac) * scale));
                    band.push((unshifted_1d(j0 + 1, n_obj), frac * scale));
                }
            }
            band
        })
        .collect()
}

fn unshifted_1d(centered: usize, n: usize) -> usize {
    unshifted_index(centered, 0, n, 1) % n
}

/// Per-evaluation scratch buffers.
struct Scratch {
    pupil: Vec<Complex<f64>>,
    field: Vec<Complex<f64>>,
    work: Vec<Complex<f64>>,
    fft_scratch: Vec<Complex<f64>>,
    intensity: Vec<f64>,
    derivative: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            pupil: vec![Complex::new(0.0, 0.0); n * n],
            field: Vec::new(),
            work: Vec::new(),
            fft_scratch: Vec::new(),
            intensity: vec![0.0; n * n],
            derivative: vec![0.0; n * n],
        }
    }
}

/// Parameter layout: `[c_0 .. c_{k-1}, x0_px, y0_px, amplitude, background]`.
fn fill_pupil(geo: &FitGeometry, s: &mut Scratch, params: &[f64]) {
    let k = geo.k;
    let (x0, y0) = (params[k], params[k + 1]);
    let det_cx = (geo.det_w as f64 - 1.0) / 2.0;
    let det_cy = (geo.det_h as f64 - 1.0) / 2.0;
    let tx = (x0 - det_cx) * geo.tilt_per_px;
    let ty = (y0 - det_cy) * geo.tilt_per_px;

    s.pupil.iter_mut().for_each(|v| *v = Complex::new(0.0, 0.0));
    for (i, &raw) in geo.inside.iter().enumerate() {
        let mut w = tx * geo.xhat[i] + ty * geo.yhat[i];
        let base = i * k;
        for (j, c) in params[..k].iter().enumerate() {
            w += c * geo.basis_flat[base + j];
        }
        s.pupil[raw] = Complex::from_polar(1.0, -TAU * w);
    }
}

/// Propagate the current pupil and fill `s.intensity` (raw layout).
fn propagate(geo: &FitGeometry, s: &mut Scratch) {
    s.field.clear();
    s.field.extend_from_slice(&s.pupil);
    geo.fft.process(&mut s.field, &mut s.fft_scratch);
    for (i, a) in s.field.iter().enumerate() {
        s.intensity[i] = a.norm_sqr();
    }
}

/// Gather a raw-layout object-plane image onto the detector window.
fn resample(geo: &FitGeometry, raw: &[f64], out: &mut [f64]) {
    let n = geo.n;
    for (b, band_y) in geo.weights_y.iter().enumerate() {
        for (a, band_x) in geo.weights_x.iter().enumerate() {
            let mut acc = 0.0;
            for (iy, wy) in band_y {
                let row = iy * n;
                let mut row_acc = 0.0;
                for (ix, wx) in band_x {
                    row_acc += raw[row + ix] * wx;
                }
                acc += row_acc * wy;
            }
            out[b * geo.det_w + a] = acc;
        }
    }
}

fn eval_model_into(geo: &FitGeometry, s: &mut Scratch, params: &[f64], out: &mut [f64]) {
    let k = geo.k;
    fill_pupil(geo, s, params);
    propagate(geo, s);
    resample(geo, &s.intensity, out);
    let (amp, bg) = (params[k + 2], params[k + 3]);
    for v in out.iter_mut() {
        *v = amp * *v / geo.norm + bg;
    }
}

/// Analytic Jacobian of the detector model. Column order follows the
/// parameter layout. `model_out` receives the model itself.
fn eval_jacobian_into(
    geo: &FitGeometry,
    s: &mut Scratch,
    params: &[f64],
    model_out: &mut [f64],
    jac: &mut DMatrix<f64>,
) {
    let k = geo.k;
    let n_px = geo.n_pixels();
    let (amp, bg) = (params[k + 2], params[k + 3]);

    fill_pupil(geo, s, params);
    propagate(geo, s);

    // model and its amplitude derivative share the resampled intensity
    let mut resampled = vec![0.0; n_px];
    resample(geo, &s.intensity, &mut resampled);
    for i in 0..n_px {
        model_out[i] = amp * resampled[i] / geo.norm + bg;
        jac[(i, k + 2)] = resampled[i] / geo.norm; // d/d amplitude
        jac[(i, k + 3)] = 1.0; // d/d background
    }

    // dI/dθ_j = 2 Re(conj(A) · F{-i 2π Z_j P}) for any pupil-phase mode Z_j;
    // the coefficient modes use the basis maps, the centering modes use the
    // tilt maps scaled to pixels.
    let mut column = vec![0.0; n_px];
    for j in 0..k + 2 {
        s.work.clear();
        s.work.resize(geo.n * geo.n, Complex::new(0.0, 0.0));
        for (i, &rawix) in geo.inside.iter().enumerate() {
            let z = if j < k {
                geo.basis_flat[i * k + j]
            } else if j == k {
                geo.xhat[i] * geo.tilt_per_px
            } else {
                geo.yhat[i] * geo.tilt_per_px
            };
            // -i 2π z · P
            s.work[rawix] = Complex::new(0.0, -TAU * z) * s.pupil[rawix];
        }
        geo.fft.process(&mut s.work, &mut s.fft_scratch);
        for (i, (a, b)) in s.field.iter().zip(s.work.iter()).enumerate() {
            s.derivative[i] = 2.0 * (a.conj() * b).re;
        }
        resample(geo, &s.derivative, &mut column);
        for i in 0..n_px {
            jac[(i, j)] = amp * column[i] / geo.norm;
        }
    }
}

/// Expected detector counts for the given coefficients and nuisance values.
///
/// The coefficient slice must match the model's basis length.
pub fn forward_model(
    model: &FitModel,
    coefficients: &[f64],
    nuisance: &FitNuisance,
) -> Result<Frame> {
    if coefficients.len() != model.basis.len() {
        return Err(Error::Config(format!(
            "expected {} coefficients, got {}",
            model.basis.len(),
            coefficients.len()
        )));
    }
    let geo = FitGeometry::build(model)?;
    let mut scratch = Scratch::new(geo.n);
    let params = pack_params(coefficients, nuisance);
    let mut out = vec![0.0; geo.n_pixels()];
    eval_model_into(&geo, &mut scratch, &params, &mut out);
    Frame::new(
        geo.det_w,
        geo.det_h,
        model.cfg.detector_pixel_pitch_um,
        Plane::Detector,
        out.iter().map(|v| v.max(0.0)).collect(),
    )
}

fn pack_params(coefficients: &[f64], nuisance: &FitNuisance) -> Vec<f64> {
    let mut params = coefficients.to_vec();
    params.extend_from_slice(&[
        nuisance.x0_px,
        nuisance.y0_px,
        nuisance.amplitude,
        nuisance.background,
    ]);
    params
}

/// Analytic model Jacobian at the given point (rows: detector pixels in
/// row-major order; columns: coefficients, x0, y0, amplitude, background).
pub fn model_jacobian(
    model: &FitModel,
    coefficients: &[f64],
    nuisance: &FitNuisance,
) -> Result<DMatrix<f64>> {
    let geo = FitGeometry::build(model)?;
    let mut scratch = Scratch::new(geo.n);
    let params = pack_params(coefficients, nuisance);
    let mut jac = DMatrix::zeros(geo.n_pixels(), params.len());
    let mut out = vec![0.0; geo.n_pixels()];
    eval_jacobian_into(&geo, &mut scratch, &params, &mut out, &mut jac);
    Ok(jac)
}

/// Central-difference model Jacobian, for derivative verification.
pub fn model_jacobian_central_diff(
    model: &FitModel,
    coefficients: &[f64],
    nuisance: &FitNuisance,
    step: f64,
) -> Result<DMatrix<f64>> {
    let geo = FitGeometry::build(model)?;
    let mut scratch = Scratch::new(geo.n);
    let params = pack_params(coefficients, nuisance);
    let n_px = geo.n_pixels();
    let mut jac = DMatrix::zeros(n_px, params.len());
    let mut plus = vec![0.0; n_px];
    let mut minus = vec![0.0; n_px];
    for j in 0..params.len() {
        let h = step * params[j].abs().max(1.0);
        let mut p = params.clone();
        p[j] += h;
        eval_model_into(&geo, &mut scratch, &p, &mut plus);
        p[j] = params[j] - h;
        eval_model_into(&geo, &mut scratch, &p, &mut minus);
        for i in 0..n_px {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

struct PsfProblem<'a> {
    geo: &'a FitGeometry,
    scratch: Scratch,
    data: &'a [f64],
    inv_sigma: &'a [f64],
    mode: JacobianMode,
    model_buf: Vec<f64>,
}

impl LeastSquaresProblem for PsfProblem<'_> {
    fn n_params(&self) -> usize {
        self.geo.k + 4
    }

    fn n_residuals(&self) -> usize {
        self.geo.n_pixels()
    }

    fn residuals(&mut self, params: &[f64], out: &mut [f64]) -> Result<()> {
        eval_model_into(self.geo, &mut self.scratch, params, &mut self.model_buf);
        for (i, r) in out.iter_mut().enumerate() {
            *r = (self.model_buf[i] - self.data[i]) * self.inv_sigma[i];
        }
        Ok(())
    }

    fn jacobian(&mut self, params: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        match self.mode {
            JacobianMode::Analytic => {
                eval_jacobian_into(
                    self.geo,
                    &mut self.scratch,
                    params,
                    &mut self.model_buf,
                    jac,
                );
                for j in 0..jac.ncols() {
                    for (i, w) in self.inv_sigma.iter().enumerate() {
                        jac[(i, j)] *= w;
                    }
                }
            }
            JacobianMode::ForwardDiff => {
                let n_px = self.geo.n_pixels();
                let mut base = vec![0.0; n_px];
                eval_model_into(self.geo, &mut self.scratch, params, &mut base);
                let mut bumped = vec![0.0; n_px];
                let mut p = params.to_vec();
                for j in 0..params.len() {
                    let h = 1e-6 * params[j].abs().max(1.0);
                    p[j] = params[j] + h;
                    eval_model_into(self.geo, &mut self.scratch, &p, &mut bumped);
                    p[j] = params[j];
                    for i in 0..n_px {
                        jac[(i, j)] = (bumped[i] - base[i]) / h * self.inv_sigma[i];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fit the model to a measured detector frame.
///
/// Restarts run independently (in parallel when `options.threads != 1`) and
/// the best local optimum wins, ties broken by restart index, so the result
/// is deterministic for a given seed regardless of scheduling.
pub fn fit_psf(data: &Frame, model: &FitModel, options: &FitOptions) -> Result<FitResult> {
    if data.width() != model.detector_shape.0 || data.height() != model.detector_shape.1 {
        return Err(Error::Config(format!(
            "data frame is {}x{} but the model expects {}x{}",
            data.width(),
            data.height(),
            model.detector_shape.0,
            model.detector_shape.1
        )));
    }
    let rel_pitch = (data.pixel_pitch_um() - model.cfg.detector_pixel_pitch_um).abs()
        / model.cfg.detector_pixel_pitch_um;
    if data.plane() == Plane::Detector && rel_pitch > 1e-6 {
        return Err(Error::Config(format!(
            "data pitch {} µm disagrees with the configured detector pitch {} µm",
            data.pixel_pitch_um(),
            model.cfg.detector_pixel_pitch_um
        )));
    }
    let n_px = data.data().len();
    let n_params = model.n_params();
    if n_px < 10 * n_params {
        return Err(Error::Config(format!(
            "{n_px} pixels cannot constrain {n_params} parameters (need 10x)"
        )));
    }
    let total = data.total();
    if !(total > 0.0) {
        return Err(Error::Config("data frame carries no counts".into()));
    }
    if options.restarts == 0 {
        return Err(Error::Config("at least one restart is required".into()));
    }

    let geo = FitGeometry::build(model)?;
    let inv_sigma: Vec<f64> = data
        .data()
        .iter()
        .map(|v| 1.0 / (v.max(1.0) + model.read_noise_rms * model.read_noise_rms).sqrt())
        .collect();

    // nuisance starting values from the data itself
    let (px, py) = data.argmax();
    let background0 = border_median(data);
    let amplitude0 = (total - background0 * n_px as f64).max(data.max_value());
    let k = model.basis.len();

    let starts: Vec<Vec<f64>> = (0..options.restarts)
        .map(|r| {
            let mut coeffs = vec![0.0; k];
            if r > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    options
                        .seed
                        .wrapping_add(r as u64)
                        .wrapping_mul(0x9E3779B97F4A7C15),
                );
                for c in &mut coeffs {
                    *c = rng.random_range(-0.5..=0.5);
                }
            }
            pack_params(
                &coeffs,
                &FitNuisance {
                    amplitude: amplitude0,
                    background: background0,
                    x0_px: px as f64,
                    y0_px: py as f64,
                },
            )
        })
        .collect();

    let lm_options = LmOptions {
        max_iter: options.max_iter,
        tol: options.tol,
        ..LmOptions::default()
    };

    let n_threads = if options.threads == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(options.restarts)
    } else {
        options.threads.min(options.restarts)
    };

    let run_restart = |start: &[f64]| -> Result<LmOutcome> {
        let mut problem = PsfProblem {
            geo: &geo,
            scratch: Scratch::new(geo.n),
            data: data.data(),
            inv_sigma: &inv_sigma,
            mode: model.jacobian,
            model_buf: vec![0.0; geo.n_pixels()],
        };
        minimize(&mut problem, start, &lm_options)
    };

    let mut outcomes: Vec<Option<Result<LmOutcome>>> = Vec::with_capacity(options.restarts);
    if n_threads <= 1 {
        for start in &starts {
            outcomes.push(Some(run_restart(start)));
        }
    } else {
        outcomes.resize_with(options.restarts, || None);
        let outcome_slots: Vec<std::sync::Mutex<Option<Result<LmOutcome>>>> = (0..options.restarts)
            .map(|_| std::sync::Mutex::new(None))
            .collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..n_threads {
                scope.spawn(|| loop {
                    let r = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if r >= options.restarts {
                        break;
                    }
                    let result = run_restart(&starts[r]);
                    *outcome_slots[r].lock().unwrap() = Some(result);
                });
            }
        });
        for (slot, out) in outcome_slots.into_iter().zip(outcomes.iter_mut()) {
            *out = slot.into_inner().unwrap();
        }
    }

    let mut best: Option<(usize, LmOutcome)> = None;
    let mut restart_chi2 = Vec::with_capacity(options.restarts);
    let mut diagnostics = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome.expect("every restart ran") {
            Ok(out) => {
                restart_chi2.push(out.chi2);
                let better = match &best {
                    None => true,
                    Some((_, b)) => out.chi2 < b.chi2,
                };
                if better {
                    best = Some((r, out));
                }
            }
            Err(e) => {
                restart_chi2.push(f64::NAN);
                diagnostics.push(format!("restart {r}: {e}"));
            }
        }
    }
    let (restart_index, outcome) = best.ok_or(Error::FitFailure { diagnostics })?;

    let params = outcome.params;
    let coefficients = ZernikeExpansion::new(
        model.cfg.wavelength_nm,
        model
            .basis
            .iter()
            .zip(&params[..k])
            .map(|(idx, c)| (*idx, *c))
            .collect(),
    )?;
    let nuisance = FitNuisance {
        amplitude: params[k + 2],
        background: params[k + 3],
        x0_px: params[k],
        y0_px: params[k + 1],
    };
    let chi_nu = outcome.chi2 / (n_px - n_params) as f64;

    // 1σ from the curvature at the optimum, reordered from the parameter
    // layout to the sorted term order of the reported expansion
    let sigmas_by_param: Vec<f64> = match Cholesky::new(outcome.normal_matrix.clone()) {
        Some(ch) => {
            let cov = ch.inverse();
            (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect()
        }
        None => vec![f64::NAN; k],
    };
    let sigmas = coefficients
        .terms()
        .iter()
        .map(|(idx, _)| {
            let param = model
                .basis
                .iter()
                .position(|b| b == idx)
                .expect("term from basis");
            sigmas_by_param[param]
        })
        .collect();

    let noise_floor =
        (nuisance.background.max(0.0) + model.read_noise_rms * model.read_noise_rms + 1.0).sqrt();
    Ok(FitResult {
        coefficients,
        nuisance,
        chi_nu,
        iterations: outcome.iterations,
        converged: outcome.converged,
        restart_index,
        coefficient_sigmas: sigmas,
        restart_chi2,
        low_signal: nuisance.amplitude < 10.0 * noise_floor,
    })
}

fn border_median(frame: &Frame) -> f64 {
    let (w, h) = (frame.width(), frame.height());
    let mut border = Vec::with_capacity(2 * (w + h));
    for x in 0..w {
        border.push(frame.get(x, 0));
        border.push(frame.get(x, h - 1));
    }
    for y in 1..h - 1 {
        border.push(frame.get(0, y));
        border.push(frame.get(w - 1, y));
    }
    border.sort_by(|a, b| a.partial_cmp(b).unwrap());
    border[border.len() / 2]
}

/// Magnification from the pixel separation of a balanced two-ion crystal:
/// `M = (pixel_distance · detector_pitch) / d_two-ion`. Exactly linear in
/// the measured pixel distance.
pub fn estimate_magnification(
    pixel_distance: f64,
    detector_pitch_um: f64,
    species: IonSpecies,
    omega_z_rad_s: f64,
) -> Result<f64> {
    if !(detector_pitch_um > 0.0) {
        return Err(Error::Config("detector pitch must be positive".into()));
    }
    Ok(pixel_distance * detector_pitch_um / two_ion_distance(species, omega_z_rad_s)?)
}

/// Model an optical correction in coefficient space: the termwise sum of the
/// fitted expansion and a correction `delta`.
///
/// A cylindrical compensation lens maps to a `delta` that cancels the
/// astigmatism terms and shifts the defocus term (the tangential focus
/// translates onto the sagittal one). Wavelengths must match.
pub fn apply_correction(
    expansion: &ZernikeExpansion,
    delta: &ZernikeExpansion,
) -> Result<ZernikeExpansion> {
    expansion.sum(delta)
}
