//! Generalized pupil sampling and FFT propagation to the intensity PSF.
//!
//! The pupil is a uniform-amplitude unit disc carrying the phase
//! `exp(-i 2π W(r, φ))` with the wave aberration `W` in wavelength units.
//! Its discrete Fourier transform, squared, is the intensity PSF. Lengths in
//! the PSF plane are referred to the object plane and calibrated through the
//! numerical aperture: with a pupil filling a fraction `pupil_fill` of the
//! grid, the PSF sample pitch is
//!
//! ```text
//! Δ_obj = λ · pupil_fill / (2 NA)
//! ```
//!
//! which puts the first zero of the unaberrated Airy pattern at
//! `0.61 λ / NA` and the intensity-PSF band edge exactly at the Nyquist
//! frequency of the grid when `pupil_fill = 1/2`. Absolute pupil-to-image
//! distances drop out of every downstream metric and are not represented;
//! the PSF is normalized to unit total energy instead.

use num_complex::Complex;
use rustfft::FftDirection;
use serde::Deserialize;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::fft2::{fftshift2, Fft2};
use crate::frame::{Axis, Frame, Plane};
use crate::zernike::{wavelengths_match, ZernikeExpansion};

/// Physical scales of the imaging system.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalConfig {
    /// Detector pixel pitch, µm.
    pub detector_pixel_pitch_um: f64,
    /// Transverse magnification object → detector.
    pub magnification: f64,
    /// Object-side numerical aperture, in (0, 1).
    pub numerical_aperture: f64,
    /// Vacuum wavelength, nm.
    pub wavelength_nm: f64,
}

impl OpticalConfig {
    pub fn new(
        wavelength_nm: f64,
        numerical_aperture: f64,
        magnification: f64,
        detector_pixel_pitch_um: f64,
    ) -> Result<Self> {
        let cfg = Self {
            detector_pixel_pitch_um,
            magnification,
            numerical_aperture,
            wavelength_nm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm > 0.0) || !self.wavelength_nm.is_finite() {
            return Err(Error::Config(format!(
                "wavelength_nm must be positive, got {}",
                self.wavelength_nm
            )));
        }
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture < 1.0) {
            return Err(Error::Config(format!(
                "numerical_aperture must lie in (0, 1), got {}",
                self.numerical_aperture
            )));
        }
        if !(self.magnification > 0.0) || !self.magnification.is_finite() {
            return Err(Error::Config(format!(
                "magnification must be positive, got {}",
                self.magnification
            )));
        }
        if !(self.detector_pixel_pitch_um > 0.0) || !self.detector_pixel_pitch_um.is_finite() {
            return Err(Error::Config(format!(
                "detector_pixel_pitch_um must be positive, got {}",
                self.detector_pixel_pitch_um
            )));
        }
        Ok(())
    }

    /// Wavelength in µm.
    pub fn wavelength_um(&self) -> f64 {
        self.wavelength_nm * 1e-3
    }

    /// Detector pixel pitch referred to the object plane, µm.
    pub fn object_referred_pixel_pitch_um(&self) -> f64 {
        self.detector_pixel_pitch_um / self.magnification
    }

    /// Incoherent cutoff frequency `2 NA / λ`, mm⁻¹ in the object plane.
    pub fn cutoff_frequency_mm(&self) -> f64 {
        2.0 * self.numerical_aperture / (self.wavelength_um() * 1e-3)
    }
}

/// Discretization of the pupil plane.
///
/// `n_samples` is the grid side; `pupil_fill` is the fraction of the grid
/// diameter the pupil disc occupies. A fill of at most 1/2 guarantees the
/// intensity PSF is sampled at or above its Nyquist rate.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PupilGrid {
    pub n_samples: usize,
    pub pupil_fill: f64,
}

impl PupilGrid {
    pub fn new(n_samples: usize, pupil_fill: f64) -> Result<Self> {
        let grid = Self {
            n_samples,
            pupil_fill,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 128 || !self.n_samples.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "n_samples must be an even integer >= 128, got {}",
                self.n_samples
            )));
        }
        if !(self.pupil_fill > 0.0 && self.pupil_fill <= 0.5) {
            return Err(Error::Config(format!(
                "pupil_fill must lie in (0, 0.5] so the padding factor is >= 2, got {}",
                self.pupil_fill
            )));
        }
        Ok(())
    }

    /// Pupil radius on the grid, samples.
    pub fn pupil_radius_samples(&self) -> f64 {
        self.pupil_fill * self.n_samples as f64 / 2.0
    }

    /// PSF sample pitch in the object plane, µm.
    pub fn object_pitch_um(&self, cfg: &OpticalConfig) -> f64 {
        cfg.wavelength_um() * self.pupil_fill / (2.0 * cfg.numerical_aperture)
    }
}

impl Default for PupilGrid {
    /// 1024 samples with the pupil filling half the grid: intensity-Nyquist
    /// sampling with sub-second transforms.
    fn default() -> Self {
        Self {
            n_samples: 1024,
            pupil_fill: 0.5,
        }
    }
}

/// The sampled generalized pupil: unit modulus inside the disc, zero outside.
#[derive(Debug, Clone)]
pub struct ComplexPupil {
    n_samples: usize,
    pupil_radius_samples: f64,
    data: Vec<Complex<f64>>,
}

impl ComplexPupil {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn data(&self) -> &[Complex<f64>] {
        &self.data
    }

    /// Pupil sample at grid position, centered coordinates.
    pub fn at(&self, ix: usize, iy: usize) -> Complex<f64> {
        self.data[iy * self.n_samples + ix]
    }
}

/// Sample `exp(-i 2π W(r, φ))` over the embedded unit disc.
///
/// The expansion's reference wavelength must match the configuration.
pub fn build_pupil(
    cfg: &OpticalConfig,
    grid: &PupilGrid,
    aberration: &ZernikeExpansion,
) -> Result<ComplexPupil> {
    cfg.validate()?;
    grid.validate()?;
    if !wavelengths_match(aberration.wavelength_nm(), cfg.wavelength_nm) {
        return Err(Error::WavelengthMismatch {
            expansion_nm: aberration.wavelength_nm(),
            config_nm: cfg.wavelength_nm,
        });
    }
    let n = grid.n_samples;
    let radius = grid.pupil_radius_samples();
    if radius < 16.0 {
        return Err(Error::Sampling(format!(
            "pupil diameter of {:.1} samples is too coarse; raise n_samples or pupil_fill",
            2.0 * radius
        )));
    }
    let center = (n / 2) as f64;
    let mut data = vec![Complex::new(0.0, 0.0); n * n];
    for iy in 0..n {
        let yh = (iy as f64 - center) / radius;
        for ix in 0..n {
            let xh = (ix as f64 - center) / radius;
            let r = (xh * xh + yh * yh).sqrt();
            if r <= 1.0 {
                let phase = if aberration.is_empty() {
                    0.0
                } else {
                    -TAU * aberration.eval(r, yh.atan2(xh))
                };
                data[iy * n + ix] = Complex::from_polar(1.0, phase);
            }
        }
    }
    Ok(ComplexPupil {
        n_samples: n,
        pupil_radius_samples: radius,
        data,
    })
}

/// Raw (unshifted) complex PSF amplitude: the unnormalized DFT of the pupil.
pub(crate) fn psf_amplitude_raw(pupil: &ComplexPupil) -> Vec<Complex<f64>> {
    let n = pupil.n_samples;
    let mut field = pupil.data.clone();
    let fft = Fft2::new(n, n, FftDirection::Forward);
    let mut scratch = Vec::new();
    fft.process(&mut field, &mut scratch);
    field
}

/// Intensity PSF of the pupil: centered `|FFT|²`, normalized to unit total
/// energy. The returned frame lives in the image plane with its pitch
/// referred to the object plane ([`PupilGrid::object_pitch_um`]).
pub fn psf_intensity(pupil: &ComplexPupil, cfg: &OpticalConfig, grid: &PupilGrid) -> Result<Frame> {
    if pupil.n_samples != grid.n_samples
        || (pupil.pupil_radius_samples - grid.pupil_radius_samples()).abs() > 1e-9
    {
        return Err(Error::Config(
            "pupil was sampled on a different grid than the one supplied".into(),
        ));
    }
    let n = pupil.n_samples;
    let field = psf_amplitude_raw(pupil);
    let intensity: Vec<f64> = field.iter().map(|a| a.norm_sqr()).collect();
    let total: f64 = intensity.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Sampling("pupil contains no energy".into()));
    }
    let centered = fftshift2(&intensity, n, n);
    let data: Vec<f64> = centered.iter().map(|v| (v / total).max(0.0)).collect();
    Frame::new(n, n, grid.object_pitch_um(cfg), Plane::Image, data)
}

/// Full width at half maximum of the profile through the peak, µm.
///
/// The half-maximum crossings are located by linear interpolation between the
/// bracketing samples. Requires a unique global maximum away from the frame
/// border and a profile that falls below half maximum on both sides.
pub fn fwhm(frame: &Frame, axis: Axis) -> Result<f64> {
    let max = frame.max_value();
    if !(max > 0.0) {
        return Err(Error::Measurement(
            "frame is flat; FWHM is undefined".into(),
        ));
    }
    let (px, py) = frame.argmax();
    if px == 0 || py == 0 || px == frame.width() - 1 || py == frame.height() - 1 {
        return Err(Error::Measurement(format!(
            "peak lies on the frame border at ({px}, {py})"
        )));
    }
    let profile = frame.profile_through(px, py, axis);
    let peak_pos = match axis {
        Axis::Horizontal => px,
        Axis::Vertical => py,
    };
    let half = profile[peak_pos] / 2.0;

    let crossing = |mut i: usize, step: isize| -> Option<f64> {
        loop {
            let next = i as isize + step;
            if next < 0 || next as usize >= profile.len() {
                return None;
            }
            let next = next as usize;
            if profile[next] < half {
                let frac = (profile[i] - half) / (profile[i] - profile[next]);
                return Some(i as f64 + frac * step as f64);
            }
            i = next;
        }
    };
    let left = crossing(peak_pos, -1).ok_or_else(|| {
        Error::Measurement("profile does not fall below half maximum on the left".into())
    })?;
    let right = crossing(peak_pos, 1).ok_or_else(|| {
        Error::Measurement("profile does not fall below half maximum on the right".into())
    })?;
    Ok((right - left) * frame.pixel_pitch_um())
}

/// Intensity-weighted RMS distance from the intensity centroid, µm.
pub fn rms_spot_radius(frame: &Frame) -> Result<f64> {
    let (cx, cy) = frame.centroid()?;
    let total = frame.total();
    let mut acc = 0.0;
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            acc += frame.get(x, y) * (dx * dx + dy * dy);
        }
    }
    Ok((acc / total).sqrt() * frame.pixel_pitch_um())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zernike::ZernikeIndex;
    use std::f64::consts::PI;

    fn test_cfg() -> OpticalConfig {
        OpticalConfig::new(397.0, 0.26, 15.4, 13.0).unwrap()
    }

    fn small_grid() -> PupilGrid {
        PupilGrid::new(256, 0.5).unwrap()
    }

    fn airy(cfg: &OpticalConfig, grid: &PupilGrid) -> Frame {
        let pupil = build_pupil(cfg, grid, &ZernikeExpansion::flat(cfg.wavelength_nm)).unwrap();
        psf_intensity(&pupil, cfg, grid).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(PupilGrid::new(100, 0.5).is_err());
        assert!(PupilGrid::new(129, 0.5).is_err());
        assert!(PupilGrid::new(128, 0.6).is_err());
        assert!(PupilGrid::new(128, 0.5).is_ok());
    }

    #[test]
    fn empty_expansion_gives_binary_disc() {
        let cfg = test_cfg();
        let grid = small_grid();
        let pupil = build_pupil(&cfg, &grid, &ZernikeExpansion::flat(397.0)).unwrap();
        let n = grid.n_samples;
        let radius = grid.pupil_radius_samples();
        let mut inside = 0usize;
        for iy in 0..n {
            for ix in 0..n {
                let v = pupil.at(ix, iy);
                let r = ((ix as f64 - (n / 2) as f64).powi(2)
                    + (iy as f64 - (n / 2) as f64).powi(2))
                .sqrt();
                if r <= radius {
                    assert_eq!(v, Complex::new(1.0, 0.0));
                    inside += 1;
                } else {
                    assert_eq!(v, Complex::new(0.0, 0.0));
                }
            }
        }
        let expected = PI * radius * radius;
        assert!((inside as f64 - expected).abs() / expected < 0.01);
    }

    #[test]
    fn piston_gives_constant_phasor() {
        let cfg = test_cfg();
        let grid = small_grid();
        let piston =
            ZernikeExpansion::new(397.0, vec![(ZernikeIndex::new(0, 0).unwrap(), 0.7)]).unwrap();
        let pupil = build_pupil(&cfg, &grid, &piston).unwrap();
        let expected = Complex::from_polar(1.0, -TAU * 0.7);
        let n = grid.n_samples;
        let v = pupil.at(n / 2, n / 2);
        assert!((v - expected).norm() < 1e-12);
    }

    #[test]
    fn astigmatism_phase_at_pupil_edge() {
        let cfg = test_cfg();
        let grid = small_grid();
        let astig =
            ZernikeExpansion::new(397.0, vec![(ZernikeIndex::new(2, -2).unwrap(), 0.25)]).unwrap();
        let pupil = build_pupil(&cfg, &grid, &astig).unwrap();
        // sample on the +x axis at the outermost inside pixel, where
        // Z_2^{-2} = r² cos(2·0) = r²
        let n = grid.n_samples;
        let radius = grid.pupil_radius_samples();
        let ix = n / 2 + radius.floor() as usize;
        let v = pupil.at(ix, n / 2);
        let r = (ix as f64 - (n / 2) as f64) / radius;
        let expected = -TAU * 0.25 * r * r;
        assert!(
            (v.arg() - expected).abs() < 1e-12,
            "{} vs {}",
            v.arg(),
            expected
        );
        // at the disc edge the phase is exactly -π/2
        assert!((astig.eval(1.0, 0.0) * -TAU - (-PI / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn wavelength_mismatch_is_rejected() {
        let cfg = test_cfg();
        let grid = small_grid();
        let off = ZernikeExpansion::flat(399.0);
        assert!(matches!(
            build_pupil(&cfg, &grid, &off),
            Err(Error::WavelengthMismatch { .. })
        ));
    }

    #[test]
    fn psf_is_normalized_and_centered() {
        let cfg = test_cfg();
        let grid = small_grid();
        let psf = airy(&cfg, &grid);
        assert!((psf.total() - 1.0).abs() < 1e-9);
        assert_eq!(psf.argmax(), (grid.n_samples / 2, grid.n_samples / 2));
    }

    #[test]
    fn airy_first_zero_lands_at_rayleigh_radius() {
        // 4x oversampled grid (small pupil fill) so the ring minima are
        // resolved sample to sample
        let cfg = test_cfg();
        let grid = PupilGrid::new(512, 0.125).unwrap();
        let psf = airy(&cfg, &grid);
        let n = grid.n_samples;
        let pitch = psf.pixel_pitch_um();
        let profile = psf.profile_through(n / 2, n / 2, Axis::Horizontal);
        // first local minimum right of the peak
        let mut i = n / 2;
        while i + 1 < n && profile[i + 1] < profile[i] {
            i += 1;
        }
        let zero_radius_um = (i as f64 - (n / 2) as f64) * pitch;
        let expected = 0.61 * cfg.wavelength_um() / cfg.numerical_aperture;
        assert!(
            (zero_radius_um - expected).abs() < pitch,
            "first zero at {zero_radius_um} µm, expected {expected} µm"
        );
    }

    #[test]
    fn piston_leaves_intensity_unchanged() {
        let cfg = test_cfg();
        let grid = small_grid();
        let reference = airy(&cfg, &grid);
        let piston =
            ZernikeExpansion::new(397.0, vec![(ZernikeIndex::new(0, 0).unwrap(), 0.7)]).unwrap();
        let pupil = build_pupil(&cfg, &grid, &piston).unwrap();
        let shifted = psf_intensity(&pupil, &cfg, &grid).unwrap();
        for (a, b) in reference.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tilt_translates_the_centroid_linearly() {
        let cfg = test_cfg();
        let grid = small_grid();
        let reference = airy(&cfg, &grid);
        let (cx0, _) = reference.centroid().unwrap();
        let second_moment = |f: &Frame| {
            let (cx, cy) = f.centroid().unwrap();
            let mut m = 0.0;
            for y in 0..f.height() {
                for x in 0..f.width() {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    m += f.get(x, y) * (dx * dx + dy * dy);
                }
            }
            m
        };
        let m0 = second_moment(&reference);
        let pitch = reference.pixel_pitch_um();
        let shift_per_wave_um = cfg.wavelength_um() / cfg.numerical_aperture;

        let mut shifts = Vec::new();
        for &c in &[0.05, 0.10] {
            let tilt =
                ZernikeExpansion::new(397.0, vec![(ZernikeIndex::new(1, -1).unwrap(), c)]).unwrap();
            let pupil = build_pupil(&cfg, &grid, &tilt).unwrap();
            let psf = psf_intensity(&pupil, &cfg, &grid).unwrap();
            let (cx, _) = psf.centroid().unwrap();
            let shift_um = (cx - cx0) * pitch;
            assert!(
                (shift_um.abs() - c * shift_per_wave_um).abs() < 0.02 * shift_per_wave_um,
                "tilt {c}: shift {shift_um} µm"
            );
            let m = second_moment(&psf);
            assert!((m - m0).abs() / m0 < 5e-3);
            shifts.push(shift_um);
        }
        // linear in the coefficient
        assert!((shifts[1] / shifts[0] - 2.0).abs() < 0.02);
    }

    #[test]
    fn even_cosine_expansions_give_centrosymmetric_psf() {
        let cfg = test_cfg();
        let grid = small_grid();
        let even = ZernikeExpansion::new(
            397.0,
            vec![
                (ZernikeIndex::new(2, -2).unwrap(), 0.3),
                (ZernikeIndex::new(2, 0).unwrap(), 0.2),
                (ZernikeIndex::new(4, -4).unwrap(), 0.1),
            ],
        )
        .unwrap();
        let pupil = build_pupil(&cfg, &grid, &even).unwrap();
        let psf = psf_intensity(&pupil, &cfg, &grid).unwrap();
        let n = grid.n_samples;
        for y in 1..n {
            for x in 1..n {
                let a = psf.get(x, y);
                let b = psf.get(n - x, n - y);
                assert!((a - b).abs() < 1e-9, "asymmetry at ({x}, {y})");
            }
        }
    }

    #[test]
    fn fwhm_of_synthetic_gaussian() {
        let n = 64;
        let sigma = 2.0;
        let mut data = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let dx = x as f64 - 32.0;
                let dy = y as f64 - 32.0;
                data[y * n + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
        let frame = Frame::new(n, n, 1.0, Plane::Image, data).unwrap();
        let w = fwhm(&frame, Axis::Horizontal).unwrap();
        assert!((w - 4.71).abs() < 0.05, "gaussian FWHM {w}");
    }

    /// Oracle: the continuous Airy intensity (2 J1(v)/v)² evaluated densely,
    /// with J1 from its integral representation by Simpson quadrature.
    #[test]
    fn airy_fwhm_matches_dense_bessel_profile() {
        let bessel_j1 = |x: f64| -> f64 {
            let n = 2000;
            let h = std::f64::consts::PI / n as f64;
            let f = |theta: f64| (theta - x * theta.sin()).cos();
            let mut acc = f(0.0) + f(std::f64::consts::PI);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(i as f64 * h);
            }
            acc * h / 3.0 / std::f64::consts::PI
        };
        let cfg = test_cfg();
        // v = 2π NA r / λ; intensity (2 J1(v)/v)², half maximum by bisection
        let v_of_r =
            |r_um: f64| std::f64::consts::TAU * cfg.numerical_aperture * r_um / cfg.wavelength_um();
        let intensity = |r_um: f64| {
            let v = v_of_r(r_um);
            let a = 2.0 * bessel_j1(v) / v;
            a * a
        };
        let (mut lo, mut hi) = (1e-3, 0.61 * cfg.wavelength_um() / cfg.numerical_aperture);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if intensity(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle_fwhm = lo + hi; // twice the half-maximum radius
        assert!((oracle_fwhm - 0.514 * cfg.wavelength_um() / cfg.numerical_aperture).abs() < 1e-3);

        let grid = small_grid();
        let measured = fwhm(&airy(&cfg, &grid), Axis::Horizontal).unwrap();
        assert!(
            (measured - oracle_fwhm).abs() < 0.02,
            "measured {measured} µm vs dense-profile oracle {oracle_fwhm} µm"
        );
    }

    #[test]
    fn fwhm_errors() {
        let flat = Frame::zeros(16, 16, 1.0, Plane::Image).unwrap();
        assert!(fwhm(&flat, Axis::Horizontal).is_err());

        let mut data = vec![0.0; 16 * 16];
        data[0] = 1.0; // peak on the border
        let border = Frame::new(16, 16, 1.0, Plane::Image, data).unwrap();
        assert!(fwhm(&border, Axis::Horizontal).is_err());
    }

    #[test]
    fn rms_spot_radius_basics() {
        let mut data = vec![0.0; 32 * 32];
        data[16 * 32 + 16] = 2.0;
        let single = Frame::new(32, 32, 1.0, Plane::Image, data).unwrap();
        assert!(rms_spot_radius(&single).unwrap() < 1e-12);

        let mut data = vec![0.0; 32 * 32];
        data[16 * 32 + 11] = 1.0;
        data[16 * 32 + 21] = 1.0; // 10 px apart, pitch 1 µm
        let pair = Frame::new(32, 32, 1.0, Plane::Image, data).unwrap();
        assert!((rms_spot_radius(&pair).unwrap() - 5.0).abs() < 1e-12);

        let zero = Frame::zeros(8, 8, 1.0, Plane::Image).unwrap();
        assert!(rms_spot_radius(&zero).is_err());
    }

    #[test]
    fn defocus_grows_the_spot() {
        let cfg = test_cfg();
        let grid = small_grid();
        let sharp = airy(&cfg, &grid);
        let defocus =
            ZernikeExpansion::new(397.0, vec![(ZernikeIndex::new(2, 0).unwrap(), 0.5)]).unwrap();
        let pupil = build_pupil(&cfg, &grid, &defocus).unwrap();
        let blurred = psf_intensity(&pupil, &cfg, &grid).unwrap();
        assert!(rms_spot_radius(&blurred).unwrap() > rms_spot_radius(&sharp).unwrap());
    }

    #[test]
    fn grid_doubling_changes_fwhm_below_half_percent() {
        let cfg = test_cfg();
        let coarse = PupilGrid::new(256, 0.5).unwrap();
        let fine = PupilGrid::new(512, 0.5).unwrap();
        let w_coarse = fwhm(&airy(&cfg, &coarse), Axis::Horizontal).unwrap();
        let w_fine = fwhm(&airy(&cfg, &fine), Axis::Horizontal).unwrap();
        assert!(
            (w_coarse - w_fine).abs() / w_fine < 5e-3,
            "{w_coarse} vs {w_fine}"
        );
    }
}
