//! Object-plane scenes and their detection.
//!
//! Point-like emitters (laser-cooled ions in a linear Coulomb crystal), the
//! three-bar square-wave targets used for contrast measurements, incoherent
//! image formation through an intensity PSF, and a detector model that
//! magnifies, integrates over square pixels and applies shot and read noise.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::constants::{ATOMIC_MASS_KG, ELEMENTARY_CHARGE_C, VACUUM_PERMITTIVITY_F_PER_M};
use crate::diffraction::OpticalConfig;
use crate::error::{Error, Result};
use crate::fft2::{next_fast_len, Fft2};
use crate::frame::{Axis, Frame, Plane};

/// An ion species: mass in unified atomic mass units, charge in elementary
/// charges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonSpecies {
    pub mass_u: f64,
    pub charge_e: u32,
}

/// ⁴⁰Ca⁺ (isotopic mass of the neutral atom; the electron deficit is far
/// below every tolerance in this crate).
pub const CALCIUM_40: IonSpecies = IonSpecies {
    mass_u: 39.9625909,
    charge_e: 1,
};

impl IonSpecies {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass_u > 0.0) || !self.mass_u.is_finite() {
            return Err(Error::Config(format!(
                "ion mass must be positive, got {} u",
                self.mass_u
            )));
        }
        if self.charge_e < 1 {
            return Err(Error::Config("ion charge must be at least 1 e".into()));
        }
        Ok(())
    }

    fn mass_kg(&self) -> f64 {
        self.mass_u * ATOMIC_MASS_KG
    }

    fn charge_c(&self) -> f64 {
        self.charge_e as f64 * ELEMENTARY_CHARGE_C
    }
}

/// Equilibrium spacing of a balanced two-ion crystal,
/// `d = (q² / (2π ε₀ m ω_z²))^(1/3)`, in µm.
pub fn two_ion_distance(species: IonSpecies, omega_z_rad_s: f64) -> Result<f64> {
    species.validate()?;
    if !(omega_z_rad_s > 0.0) {
        return Err(Error::Config(format!(
            "axial frequency must be positive, got {omega_z_rad_s} rad/s"
        )));
    }
    let q = species.charge_c();
    let denom = 2.0
        * std::f64::consts::PI
        * VACUUM_PERMITTIVITY_F_PER_M
        * species.mass_kg()
        * omega_z_rad_s
        * omega_z_rad_s;
    Ok((q * q / denom).cbrt() * 1e6)
}

/// Characteristic length of the scaled equilibrium problem,
/// `ℓ = (q² / (4π ε₀ m ω_z²))^(1/3)`, in µm. The two-ion spacing is
/// `2^(1/3) ℓ`.
fn scale_length_um(species: IonSpecies, omega_z_rad_s: f64) -> f64 {
    let q = species.charge_c();
    let denom = 4.0
        * std::f64::consts::PI
        * VACUUM_PERMITTIVITY_F_PER_M
        * species.mass_kg()
        * omega_z_rad_s
        * omega_z_rad_s;
    (q * q / denom).cbrt() * 1e6
}

/// A linear ion chain at its equilibrium configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct IonChain {
    species: IonSpecies,
    omega_z_rad_s: f64,
    positions_um: Vec<f64>,
}

impl IonChain {
    pub fn species(&self) -> IonSpecies {
        self.species
    }

    pub fn omega_z_rad_s(&self) -> f64 {
        self.omega_z_rad_s
    }

    /// Axial positions in µm, ascending, centered on the origin.
    pub fn positions_um(&self) -> &[f64] {
        &self.positions_um
    }

    /// Adjacent ion-ion spacings, µm.
    pub fn spacings_um(&self) -> Vec<f64> {
        self.positions_um.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// JSON document `{charge_e, mass_u, omega_z_hz, positions_um}`;
    /// `omega_z_hz` is the axial frequency `ω_z / 2π`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct ChainDoc<'a> {
            charge_e: u32,
            mass_u: f64,
            omega_z_hz: f64,
            positions_um: &'a [f64],
        }
        serde_json::to_string_pretty(&ChainDoc {
            charge_e: self.species.charge_e,
            mass_u: self.species.mass_u,
            omega_z_hz: self.omega_z_rad_s / std::f64::consts::TAU,
            positions_um: &self.positions_um,
        })
        .expect("chain serialization")
    }

    /// A single ion at the origin, for rendering pipelines; the equilibrium
    /// solver proper requires at least two ions.
    pub fn single(species: IonSpecies, omega_z_rad_s: f64) -> Result<IonChain> {
        species.validate()?;
        if !(omega_z_rad_s > 0.0) {
            return Err(Error::Config("axial frequency must be positive".into()));
        }
        Ok(IonChain {
            species,
            omega_z_rad_s,
            positions_um: vec![0.0],
        })
    }
}

/// Equilibrium positions of `n_ions` identical ions in a common harmonic
/// axial potential, balancing mutual Coulomb repulsion.
///
/// Works in the standard dimensionless coordinates `u = z / ℓ` where the
/// potential is `Σ u_i²/2 + Σ_{i<j} 1/|u_i − u_j|`, and drives the gradient
/// below 1e-13 (scaled) by a damped Newton iteration. For two ions the
/// spacing reproduces the closed form of [`two_ion_distance`] to better than
/// 1e-9 relative.
pub fn chain_equilibrium(
    species: IonSpecies,
    omega_z_rad_s: f64,
    n_ions: usize,
) -> Result<IonChain> {
    species.validate()?;
    if !(omega_z_rad_s > 0.0) {
        return Err(Error::Config(format!(
            "axial frequency must be positive, got {omega_z_rad_s} rad/s"
        )));
    }
    if !(2..=20).contains(&n_ions) {
        return Err(Error::Config(format!(
            "the solver supports 2 to 20 ions, got {n_ions}"
        )));
    }

    let n = n_ions;
    // uniform spacing near the large-N minimum-gap estimate is within the
    // Newton basin for every n <= 20
    let spacing = 2.0 / (n as f64).powf(0.56);
    let mut u: Vec<f64> = (0..n)
        .map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * spacing)
        .collect();

    let potential = |u: &[f64]| -> f64 {
        let mut v = u.iter().map(|x| 0.5 * x * x).sum::<f64>();
        for i in 0..n {
            for j in i + 1..n {
                v += 1.0 / (u[j] - u[i]).abs();
            }
        }
        v
    };
    let gradient = |u: &[f64], g: &mut DVector<f64>| {
        for i in 0..n {
            let mut gi = u[i];
            for j in 0..n {
                if j != i {
                    let d = u[i] - u[j];
                    gi -= d.signum() / (d * d);
                }
            }
            g[i] = gi;
        }
    };

    let mut grad = DVector::zeros(n);
    let mut trial_grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut converged = false;
    for _ in 0..200 {
        gradient(&u, &mut grad);
        if grad.amax() < 1e-13 {
            converged = true;
            break;
        }
        hess.fill(0.0);
        for i in 0..n {
            let mut diag = 1.0;
            for j in 0..n {
                if j != i {
                    let d = (u[i] - u[j]).abs();
                    let curv = 2.0 / (d * d * d);
                    diag += curv;
                    hess[(i, j)] = -curv;
                }
            }
            hess[(i, i)] = diag;
        }
        let step = match Cholesky::new(hess.clone()) {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(), // fall back to gradient descent
        };
        // backtrack: keep the ordering intact and either the potential or
        // the gradient norm decreasing (near the optimum the potential
        // decrease falls below f64 resolution while Newton still converges
        // quadratically on the gradient)
        let v0 = potential(&u);
        let g0 = grad.amax();
        let mut t = 1.0;
        let trial_ok = loop {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, s)| x - t * s).collect();
            let ordered = trial.windows(2).all(|w| w[1] > w[0]);
            if ordered {
                gradient(&trial, &mut trial_grad);
                if potential(&trial) < v0 || trial_grad.amax() < g0 {
                    u = trial;
                    break true;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                break false;
            }
        };
        if !trial_ok {
            return Err(Error::Solver(format!(
                "line search stalled at gradient norm {:.3e}",
                grad.amax()
            )));
        }
    }
    if !converged {
        gradient(&u, &mut grad);
        return Err(Error::Solver(format!(
            "no convergence after 200 iterations, gradient norm {:.3e}",
            grad.amax()
        )));
    }

    // remove the numerically tiny center-of-mass drift
    let mean = u.iter().sum::<f64>() / n as f64;
    let scale = scale_length_um(species, omega_z_rad_s);
    let positions_um: Vec<f64> = u.iter().map(|x| (x - mean) * scale).collect();
    Ok(IonChain {
        species,
        omega_z_rad_s,
        positions_um,
    })
}

/// Rasterize a chain as unit-intensity point emitters on a square
/// object-plane frame of the given extent, bilinear sub-pixel placement.
/// The chain lies along x through the frame center.
pub fn chain_scene(chain: &IonChain, pitch_um: f64, extent_um: f64) -> Result<Frame> {
    if !(pitch_um > 0.0) || !(extent_um > 0.0) {
        return Err(Error::Config("pitch and extent must be positive".into()));
    }
    let max_abs = chain
        .positions_um()
        .iter()
        .fold(0.0f64, |a, z| a.max(z.abs()));
    if max_abs + 5.0 > extent_um / 2.0 {
        return Err(Error::Geometry(format!(
            "chain span ±{max_abs:.2} µm plus a 5 µm margin exceeds the extent {extent_um} µm"
        )));
    }
    let n = (extent_um / pitch_um).round().max(2.0) as usize;
    let mut frame = Frame::zeros(n, n, pitch_um, Plane::Object)?;
    let center = (n as f64 - 1.0) / 2.0;
    for z in chain.positions_um() {
        let x = z / pitch_um + center;
        let y = center;
        deposit_bilinear(&mut frame, x, y, 1.0)?;
    }
    Ok(frame)
}

fn deposit_bilinear(frame: &mut Frame, x: f64, y: f64, weight: f64) -> Result<()> {
    let (w, h) = (frame.width(), frame.height());
    let x0 = x.floor();
    let y0 = y.floor();
    if x0 < 0.0 || y0 < 0.0 || x0 + 1.0 >= w as f64 || y0 + 1.0 >= h as f64 {
        return Err(Error::Geometry(format!(
            "emitter at pixel ({x:.2}, {y:.2}) falls outside the {w}x{h} frame"
        )));
    }
    let (fx, fy) = (x - x0, y - y0);
    let (ix, iy) = (x0 as usize, y0 as usize);
    let mut data = frame.data().to_vec();
    data[iy * w + ix] += weight * (1.0 - fx) * (1.0 - fy);
    data[iy * w + ix + 1] += weight * fx * (1.0 - fy);
    data[(iy + 1) * w + ix] += weight * (1.0 - fx) * fy;
    data[(iy + 1) * w + ix + 1] += weight * fx * fy;
    *frame = Frame::new(w, h, frame.pixel_pitch_um(), frame.plane(), data)?;
    Ok(())
}

/// Binary three-bar resolution pattern (bar width = period/2, bar length
/// 5× the bar width), centered on a square frame of the given extent.
/// `orientation` is the modulation axis: `Horizontal` makes vertical
/// stripes whose intensity varies along x.
pub fn bar_target(
    period_um: f64,
    n_bars: usize,
    orientation: Axis,
    pitch_um: f64,
    extent_um: f64,
) -> Result<Frame> {
    if !(pitch_um > 0.0) || !(extent_um > 0.0) || n_bars == 0 {
        return Err(Error::Config(
            "pitch, extent and bar count must be positive".into(),
        ));
    }
    if period_um < 4.0 * pitch_um {
        return Err(Error::Sampling(format!(
            "period {period_um} µm needs at least 4 samples, pitch is {pitch_um} µm"
        )));
    }
    let pattern_width = (2 * n_bars - 1) as f64 * period_um / 2.0;
    let bar_length = 5.0 * period_um / 2.0;
    if pattern_width > extent_um || bar_length > extent_um {
        return Err(Error::Geometry(format!(
            "pattern {pattern_width:.1} x {bar_length:.1} µm exceeds the extent {extent_um} µm"
        )));
    }
    let n = (extent_um / pitch_um).round().max(2.0) as usize;
    let half = n as f64 / 2.0;
    let mut data = vec![0.0; n * n];
    for iy in 0..n {
        // coordinates of the pixel center, frame-centered, in µm
        let v = ((iy as f64 + 0.5) - half) * pitch_um;
        for ix in 0..n {
            let u = ((ix as f64 + 0.5) - half) * pitch_um;
            let (across, along) = match orientation {
                Axis::Horizontal => (u, v),
                Axis::Vertical => (v, u),
            };
            if along.abs() > bar_length / 2.0 {
                continue;
            }
            let offset = across + pattern_width / 2.0;
            if offset < 0.0 || offset >= pattern_width {
                continue;
            }
            if (offset / (period_um / 2.0)).floor() as i64 % 2 == 0 {
                data[iy * n + ix] = 1.0;
            }
        }
    }
    Frame::new(n, n, pitch_um, Plane::Object, data)
}

/// Incoherent image formation: the discrete linear convolution of the
/// object-plane intensity with a unit-energy intensity PSF, computed in the
/// Fourier domain with zero padding. The output keeps the full support
/// `(w_obj + w_psf − 1)`, so the total intensity is conserved exactly up to
/// FFT round-off.
pub fn incoherent_image(obj: &Frame, psf: &Frame) -> Result<Frame> {
    if (obj.pixel_pitch_um() - psf.pixel_pitch_um()).abs() > 1e-9 * obj.pixel_pitch_um() {
        return Err(Error::Config(format!(
            "object pitch {} µm and PSF pitch {} µm differ",
            obj.pixel_pitch_um(),
            psf.pixel_pitch_um()
        )));
    }
    if (psf.total() - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "PSF must be normalized to unit energy, total is {}",
            psf.total()
        )));
    }
    let out_w = obj.width() + psf.width() - 1;
    let out_h = obj.height() + psf.height() - 1;
    let w = next_fast_len(out_w);
    let h = next_fast_len(out_h);

    let embed = |frame: &Frame| -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); w * h];
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                buf[y * w + x].re = frame.get(x, y);
            }
        }
        buf
    };
    let mut a = embed(obj);
    let mut b = embed(psf);
    let forward = Fft2::new(w, h, FftDirection::Forward);
    let mut scratch = Vec::new();
    forward.process(&mut a, &mut scratch);
    forward.process(&mut b, &mut scratch);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    Fft2::new(w, h, FftDirection::Inverse).process(&mut a, &mut scratch);
    let scale = 1.0 / (w * h) as f64;
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            data.push((a[y * w + x].re * scale).max(0.0));
        }
    }
    Frame::new(out_w, out_h, obj.pixel_pitch_um(), Plane::Image, data)
}

/// Detector response model.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    /// Physical pixel pitch, µm.
    pub pixel_pitch_um: f64,
    /// Photon-to-count conversion efficiency, in [0, 1].
    pub quantum_efficiency: f64,
    /// Integration time, s.
    pub exposure_s: f64,
    /// Expected counts per second per unit of source intensity.
    pub flux_scale: f64,
    /// RMS Gaussian read noise, counts.
    pub read_noise_rms: f64,
    /// Seed of the value-passed noise generator.
    #[serde(default)]
    pub seed: u64,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_pitch_um > 0.0) {
            return Err(Error::Config(
                "detector pixel pitch must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return Err(Error::Config(
                "quantum efficiency must lie in [0, 1]".into(),
            ));
        }
        if self.exposure_s < 0.0 || self.flux_scale < 0.0 || self.read_noise_rms < 0.0 {
            return Err(Error::Config(
                "exposure, flux scale and read noise must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Noiseless detector projection: magnify the object-plane image, integrate
/// the intensity over square detector pixels and scale to expected counts.
/// The detector grid is centered on the image frame and sized to cover it.
pub fn detect_expectation(img: &Frame, cfg: &OpticalConfig, det: &DetectorModel) -> Result<Frame> {
    cfg.validate()?;
    det.validate()?;
    if img.plane() == Plane::Detector {
        return Err(Error::Config(
            "input already lives in the detector plane".into(),
        ));
    }
    // detector pixel footprint in object-plane µm
    let pitch_obj = det.pixel_pitch_um / cfg.magnification;
    let n_x = ((img.width() as f64 * img.pixel_pitch_um()) / pitch_obj).ceil() as usize;
    let n_y = ((img.height() as f64 * img.pixel_pitch_um()) / pitch_obj).ceil() as usize;
    let weights_x = overlap_weights(n_x, pitch_obj, img.width(), img.pixel_pitch_um());
    let weights_y = overlap_weights(n_y, pitch_obj, img.height(), img.pixel_pitch_um());

    let gain = det.quantum_efficiency * det.flux_scale * det.exposure_s;
    // separable two-pass integration
    let mut partial = vec![0.0; img.height() * n_x]; // rows: source y, cols: detector x
    for y in 0..img.height() {
        for (a, band) in weights_x.iter().enumerate() {
            let mut acc = 0.0;
            for (j, w) in band {
                acc += img.get(*j, y) * w;
            }
            partial[y * n_x + a] = acc;
        }
    }
    let mut data = vec![0.0; n_x * n_y];
    for (b, band) in weights_y.iter().enumerate() {
        for a in 0..n_x {
            let mut acc = 0.0;
            for (i, w) in band {
                acc += partial[i * n_x + a] * w;
            }
            data[b * n_x + a] = acc * gain;
        }
    }
    Frame::new(n_x, n_y, det.pixel_pitch_um, Plane::Detector, data)
}

/// For each detector pixel, the source pixels it overlaps and the overlap
/// fraction of each source pixel (so a fully covered source pixel
/// contributes its whole intensity exactly once across the detector grid).
fn overlap_weights(
    n_det: usize,
    det_pitch: f64,
    n_src: usize,
    src_pitch: f64,
) -> Vec<Vec<(usize, f64)>> {
    let det_extent = n_det as f64 * det_pitch;
    let src_extent = n_src as f64 * src_pitch;
    let offset = (src_extent - det_extent) / 2.0; // centered grids
    (0..n_det)
        .map(|a| {
            let lo = offset + a as f64 * det_pitch;
            let hi = lo + det_pitch;
            let j_lo = (lo / src_pitch).floor().max(0.0) as usize;
            let j_hi = ((hi / src_pitch).ceil() as usize).min(n_src);
            let mut band = Vec::new();
            for j in j_lo..j_hi {
                let s_lo = j as f64 * src_pitch;
                let s_hi = s_lo + src_pitch;
                let overlap = (hi.min(s_hi) - lo.max(s_lo)).max(0.0);
                if overlap > 0.0 {
                    band.push((j, overlap / src_pitch));
                }
            }
            band
        })
        .collect()
}

/// A detected frame together with its saturation report.
#[derive(Debug, Clone)]
pub struct Detection {
    /// Integer counts, clamped to the 16-bit full well.
    pub frame: Frame,
    /// Pixels that hit the full well (reported, not fatal).
    pub saturated_pixels: usize,
}

/// Simulate an exposure: [`detect_expectation`] followed by seeded Poisson
/// sampling and Gaussian read noise, rounded to integer counts and clamped
/// at the 16-bit full well. Zero exposure produces an all-zero frame (no
/// readout). Identical inputs and seed reproduce the frame bit for bit.
pub fn detect(img: &Frame, cfg: &OpticalConfig, det: &DetectorModel) -> Result<Detection> {
    let expected = detect_expectation(img, cfg, det)?;
    if det.exposure_s == 0.0 {
        return Ok(Detection {
            frame: Frame::zeros(
                expected.width(),
                expected.height(),
                det.pixel_pitch_um,
                Plane::Detector,
            )?,
            saturated_pixels: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(det.seed);
    let read_noise = if det.read_noise_rms > 0.0 {
        Some(Normal::new(0.0, det.read_noise_rms).expect("finite read noise"))
    } else {
        None
    };
    let mut saturated = 0usize;
    let mut data = Vec::with_capacity(expected.data().len());
    for lam in expected.data() {
        let mut counts = if *lam > 0.0 {
            Poisson::new(*lam).expect("positive rate").sample(&mut rng)
        } else {
            0.0
        };
        if let Some(noise) = &read_noise {
            counts += noise.sample(&mut rng);
        }
        let counts = counts.round();
        if counts > 65535.0 {
            saturated += 1;
        }
        data.push(counts.clamp(0.0, 65535.0));
    }
    Ok(Detection {
        frame: Frame::new(
            expected.width(),
            expected.height(),
            det.pixel_pitch_um,
            Plane::Detector,
            data,
        )?,
        saturated_pixels: saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    const OMEGA_333_KHZ: f64 = TAU * 333.0e3;

    #[test]
    fn two_ion_distance_for_calcium() {
        let d = two_ion_distance(CALCIUM_40, OMEGA_333_KHZ).unwrap();
        assert!((d - 11.66).abs() < 0.01, "two-ion distance {d} µm");
    }

    /// Oracle: direct numeric minimization of the symmetric two-ion
    /// potential U(d) = 2·(m ω²/2)(d/2)² + q²/(4π ε₀ d) by golden-section
    /// search, independent of the closed form.
    #[test]
    fn closed_form_matches_potential_minimization() {
        let m = CALCIUM_40.mass_u * ATOMIC_MASS_KG;
        let q = ELEMENTARY_CHARGE_C;
        let w2 = OMEGA_333_KHZ * OMEGA_333_KHZ;
        let coulomb = q * q / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY_F_PER_M);
        let energy = |d_m: f64| 0.25 * m * w2 * d_m * d_m + coulomb / d_m;

        let (mut a, mut b) = (1e-6, 100e-6);
        let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if energy(c) < energy(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let d_oracle_um = 0.5 * (a + b) * 1e6;
        let d_closed = two_ion_distance(CALCIUM_40, OMEGA_333_KHZ).unwrap();
        // value-comparison searches localize a smooth argmin only to ~√ε
        assert!(
            (d_closed - d_oracle_um).abs() / d_oracle_um < 1e-7,
            "closed form {d_closed} vs oracle {d_oracle_um}"
        );
    }

    #[test]
    fn two_ion_scaling_laws() {
        let d0 = two_ion_distance(CALCIUM_40, OMEGA_333_KHZ).unwrap();
        let d_quad = two_ion_distance(CALCIUM_40, 4.0 * OMEGA_333_KHZ).unwrap();
        assert!((d0 / d_quad - 4.0f64.powf(2.0 / 3.0)).abs() < 1e-12);

        let heavy = IonSpecies {
            mass_u: 2.0 * CALCIUM_40.mass_u,
            charge_e: 1,
        };
        let d_heavy = two_ion_distance(heavy, OMEGA_333_KHZ).unwrap();
        assert!((d0 / d_heavy - 2.0f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn chain_of_two_matches_closed_form() {
        let chain = chain_equilibrium(CALCIUM_40, OMEGA_333_KHZ, 2).unwrap();
        let spacing = chain.spacings_um()[0];
        let closed = two_ion_distance(CALCIUM_40, OMEGA_333_KHZ).unwrap();
        assert!(
            (spacing - closed).abs() / closed < 1e-9,
            "solver {spacing} vs closed form {closed}"
        );
    }

    /// Oracle for n=5: coarse-to-fine exhaustive scan over the symmetric
    /// configuration (0, ±a, ±b). Pair distances: center-to-inner a (×2),
    /// center-to-outer b (×2), inner-inner 2a, outer-outer 2b, adjacent
    /// inner-outer b-a (×2), crossed inner-outer a+b (×2).
    #[test]
    fn five_ion_chain_matches_grid_scan() {
        let v = |a: f64, b: f64| {
            a * a
                + b * b
                + 2.0 / a
                + 2.0 / b
                + 1.0 / (2.0 * a)
                + 1.0 / (2.0 * b)
                + 2.0 / (b - a)
                + 2.0 / (a + b)
        };
        let mut best = (f64::MAX, 0.0, 0.0);
        let (mut a_lo, mut a_hi, mut b_lo, mut b_hi) = (0.3, 1.5, 1.0, 2.5);
        for _ in 0..6 {
            let (da, db) = ((a_hi - a_lo) / 200.0, (b_hi - b_lo) / 200.0);
            best = (f64::MAX, 0.0, 0.0);
            for i in 0..=200 {
                let a = a_lo + i as f64 * da;
                for j in 0..=200 {
                    let b = b_lo + j as f64 * db;
                    if b > a && v(a, b) < best.0 {
                        best = (v(a, b), a, b);
                    }
                }
            }
            (a_lo, a_hi) = (best.1 - 2.0 * da, best.1 + 2.0 * da);
            (b_lo, b_hi) = (best.2 - 2.0 * db, best.2 + 2.0 * db);
        }
        let chain = chain_equilibrium(CALCIUM_40, OMEGA_333_KHZ, 5).unwrap();
        let scale = scale_length_um(CALCIUM_40, OMEGA_333_KHZ);
        let inner = chain.positions_um()[3] / scale;
        let outer = chain.positions_um()[4] / scale;
        assert!(
            (inner - best.1).abs() < 1e-5,
            "inner {inner} vs scan {}",
            best.1
        );
        assert!(
            (outer - best.2).abs() < 1e-5,
            "outer {outer} vs scan {}",
            best.2
        );
    }

    /// Oracle for n=7: the same nested scan over (0, ±a, ±b, ±c). Expected
    /// spacings frozen from the converged scan; at ω_z = 2π×333 kHz for
    /// ⁴⁰Ca⁺ the adjacent gaps are {6.36, 6.72, 7.79} µm.
    #[test]
    fn seven_ion_chain_matches_grid_scan() {
        let v = |a: f64, b: f64, c: f64| {
            let coulomb = |d: f64| 1.0 / d;
            a * a
                + b * b
                + c * c
                + 2.0 * (coulomb(a) + coulomb(b) + coulomb(c))
                + coulomb(2.0 * a)
                + coulomb(2.0 * b)
                + coulomb(2.0 * c)
                + 2.0 * (coulomb(b - a) + coulomb(c - b) + coulomb(c - a))
                + 2.0 * (coulomb(a + b) + coulomb(b + c) + coulomb(a + c))
        };
        let mut best = (f64::MAX, 0.0, 0.0, 0.0);
        let (mut lo, mut hi) = ([0.4, 1.0, 1.8], [1.0, 1.8, 2.8]);
        for _ in 0..6 {
            let step: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| (h - l) / 60.0).collect();
            best = (f64::MAX, 0.0, 0.0, 0.0);
            for i in 0..=60 {
                let a = lo[0] + i as f64 * step[0];
                for j in 0..=60 {
                    let b = lo[1] + j as f64 * step[1];
                    if b <= a {
                        continue;
                    }
                    for k in 0..=60 {
                        let c = lo[2] + k as f64 * step[2];
                        if c > b && v(a, b, c) < best.0 {
                            best = (v(a, b, c), a, b, c);
                        }
                    }
                }
            }
            for (axis, center) in [best.1, best.2, best.3].iter().enumerate() {
                lo[axis] = center - 2.0 * step[axis];
                hi[axis] = center + 2.0 * step[axis];
            }
        }
        let chain = chain_equilibrium(CALCIUM_40, OMEGA_333_KHZ, 7).unwrap();
        let scale = scale_length_um(CALCIUM_40, OMEGA_333_KHZ);
        for (pos, expected) in chain.positions_um()[4..]
            .iter()
            .zip([best.1, best.2, best.3])
        {
            assert!(
                (pos / scale - expected).abs() < 1e-4,
                "position {} vs scan {expected}",
                pos / scale
            );
        }
        let gaps = chain.spacings_um();
        for (gap, frozen) in gaps.iter().zip([7.79, 6.72, 6.36, 6.36, 6.72, 7.79]) {
            assert!((gap - frozen).abs() < 0.01, "gap {gap} vs {frozen}");
        }
    }

    /// Oracle for n=3: exhaustive symmetric-coordinate scan. The outer ion
    /// position a minimizes a² + 2.5/a in scaled units; the scan refines an
    /// 1e-4-resolution grid around the coarse minimum.
    #[test]
    fn three_ion_chain_matches_grid_scan() {
        let chain = chain_equilibrium(CALCIUM_40, OMEGA_333_KHZ, 3).unwrap();
        let scaled_outer = chain.positions_um()[2] / scale_length_um(CALCIUM_40, OMEGA_333_KHZ);

        let v = |a: f64| a * a + 2.5 / a;
        let mut best = (f64::MAX, 0.0);
        let mut a = 0.5;
        while a <= 2.0 {
            if v(a) < best.0 {
                best = (v(a), a);
            }
            a += 1e-4;
        }
        // refine once around the coarse winner
        let center = best.1;
        let mut a = center - 2e-4;
        while a <= center + 2e-4 {
            if v(a) < best.0 {
                best = (v(a), a);
            }
            a += 1e-7;
        }
        assert!(
            (scaled_outer - best.1).abs() < 1e-6,
            "solver {scaled_outer} vs scan {}",
            best.1
        );
        // the middle ion rests at the center
        assert!(chain.positions_um()[1].abs() < 1e-9);
    }

    #[test]
    fn chains_are_antisymmetric_with_ordered_gaps() {
        for n in 3..=10 {
            let chain = chain_equilibrium(CALCIUM_40, OMEGA_333_KHZ, n).unwrap();
            let z = chain.positions_um();
            let scale = scale_length_um(CALCIUM_40, OMEGA_333_KHZ);
            for i in 0..n {
                assert!(
                    (z[i] + z[n - 1 - i]).abs() / scale < 1e-9,
                    "n={n}: positions not antisymmetric"
                );
            }
            let gaps = chain.spacings_um();
            for i in 0..gaps.len() / 2 {
                assert!(
                    gaps[i] >= gaps[gaps.len() / 2] - 1e-12,
                    "n={n}: interior gap larger than exterior"
                );
            }
            // strictly increasing from the center outwards
            for i in 0..gaps.len() - 1 {
                let (inner, outer) = if i < gaps.len() / 2 {
                    (gaps[i + 1], gaps[i])
                } else {
                    (gaps[i], gaps[i + 1])
                };
                assert!(outer >= inner - 1e-12, "n={n}: gap ordering violated");
            }
        }
    }

    #[test]
    fn single_ion_scene_is_a_unit_cluster() {
        let chain = IonChain::single(CALCIUM_40, OMEGA_333_KHZ).unwrap();
        let frame = chain_scene(&chain, 0.5, 20.0).unwrap();
        assert!((frame.total() - 1.0).abs() < 1e-12);
        let nonzero = frame.data().iter().filter(|v| **v > 0.0).count();
        assert!(nonzero <= 4, "bilinear cluster has {nonzero} pixels");
    }

    #[test]
    fn two_ion_scene_total_intensity() {
        let chain = chain_equilibrium(CALCIUM_40, OMEGA_333_KHZ, 2).unwrap();
        let frame = chain_scene(&chain, 0.2, 40.0).unwrap();
        assert!((frame.total() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn seven_ion_scene_reproduces_positions() {
        let chain = chain_equilibrium(CALCIUM_40, OMEGA_333_KHZ, 7).unwrap();
        let pitch = 0.2;
        let frame = chain_scene(&chain, pitch, 64.0).unwrap();
        // extract cluster centroids column-wise
        let w = frame.width();
        let mut column_mass = vec![0.0; w];
        for y in 0..frame.height() {
            let row = &frame.data()[y * w..(y + 1) * w];
            for (mass, v) in column_mass.iter_mut().zip(row) {
                *mass += v;
            }
        }
        let mut clusters: Vec<f64> = Vec::new();
        let mut x = 0;
        while x < w {
            if column_mass[x] > 0.0 {
                let (mut mass, mut moment) = (0.0, 0.0);
                while x < w && column_mass[x] > 0.0 {
                    mass += column_mass[x];
                    moment += column_mass[x] * x as f64;
                    x += 1;
                }
                clusters.push(moment / mass);
            } else {
                x += 1;
            }
        }
        assert_eq!(clusters.len(), 7);
        let center = (w as f64 - 1.0) / 2.0;
        for (c, z) in clusters.iter().zip(chain.positions_um()) {
            let expected = z / pitch + center;
            assert!(
                (c - expected).abs() < 0.5,
                "cluster at {c}, expected {expected}"
            );
        }
    }

    #[test]
    fn ion_outside_extent_is_rejected() {
        let chain = chain_equilibrium(CALCIUM_40, OMEGA_333_KHZ, 7).unwrap();
        assert!(matches!(
            chain_scene(&chain, 0.5, 30.0),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn bar_target_exact_columns() {
        // period of 16 px on a 64 px frame: exact 8-on/8-off columns
        let frame = bar_target(16.0, 3, Axis::Horizontal, 1.0, 64.0).unwrap();
        let mut runs = Vec::new();
        let mut count = 0;
        let mut last = frame.get(0, 32) > 0.5;
        for x in 0..frame.width() {
            let on = frame.get(x, 32) > 0.5;
            if on == last {
                count += 1;
            } else {
                runs.push((last, count));
                last = on;
                count = 1;
            }
        }
        runs.push((last, count));
        let on_runs: Vec<usize> = runs.iter().filter(|(on, _)| *on).map(|(_, c)| *c).collect();
        let interior_off: Vec<usize> = runs[1..runs.len() - 1]
            .iter()
            .filter(|(on, _)| !on)
            .map(|(_, c)| *c)
            .collect();
        assert_eq!(on_runs, vec![8, 8, 8]);
        assert_eq!(interior_off, vec![8, 8]);
    }

    #[test]
    fn bar_target_group_element_period() {
        // group 5, element 1: 32 lp/mm, period 31.25 µm
        let lp_mm = 2.0f64.powf(5.0 + (1.0 - 1.0) / 6.0);
        let period = 1000.0 / lp_mm;
        assert!((period - 31.25).abs() < 1e-12);
        let frame = bar_target(period, 3, Axis::Horizontal, 1.0, 128.0).unwrap();
        assert!(frame.total() > 0.0);
    }

    #[test]
    fn bar_orientation_swap_transposes() {
        let h = bar_target(16.0, 3, Axis::Horizontal, 1.0, 64.0).unwrap();
        let v = bar_target(16.0, 3, Axis::Vertical, 1.0, 64.0).unwrap();
        assert_eq!(h.transposed().data(), v.data());
    }

    #[test]
    fn undersampled_bar_target_is_rejected() {
        assert!(matches!(
            bar_target(3.0, 3, Axis::Horizontal, 1.0, 64.0),
            Err(Error::Sampling(_))
        ));
    }

    fn delta_frame(n: usize, x: usize, y: usize, pitch: f64) -> Frame {
        let mut data = vec![0.0; n * n];
        data[y * n + x] = 1.0;
        Frame::new(n, n, pitch, Plane::Object, data).unwrap()
    }

    #[test]
    fn convolving_a_delta_returns_the_psf() {
        let psf = {
            let mut data = vec![0.0; 9];
            data[4] = 0.6;
            data[1] = 0.4;
            Frame::new(3, 3, 0.5, Plane::Image, data).unwrap()
        };
        let obj = delta_frame(8, 2, 5, 0.5);
        let img = incoherent_image(&obj, &psf).unwrap();
        assert_eq!(img.width(), 8 + 3 - 1);
        assert!((img.total() - 1.0).abs() < 1e-9);
        // psf copy lands at the delta position offset
        assert!((img.get(2 + 1, 5 + 1) - 0.6).abs() < 1e-12);
        assert!((img.get(2 + 1, 5).max(0.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn convolving_with_a_delta_psf_returns_the_object() {
        let obj = bar_target(16.0, 3, Axis::Horizontal, 1.0, 64.0).unwrap();
        let psf = {
            let mut data = vec![0.0; 9];
            data[4] = 1.0;
            Frame::new(3, 3, 1.0, Plane::Image, data).unwrap()
        };
        let img = incoherent_image(&obj, &psf).unwrap();
        for y in 0..obj.height() {
            for x in 0..obj.width() {
                assert!((img.get(x + 1, y + 1) - obj.get(x, y)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn distant_deltas_image_independently() {
        let mut data = vec![0.0; 64 * 64];
        data[20 * 64 + 12] = 1.0;
        data[40 * 64 + 50] = 1.0;
        let obj = Frame::new(64, 64, 1.0, Plane::Object, data).unwrap();
        let psf = {
            let mut d = vec![0.0; 25];
            d[12] = 0.5;
            d[11] = 0.25;
            d[13] = 0.25;
            Frame::new(5, 5, 1.0, Plane::Image, d).unwrap()
        };
        let img = incoherent_image(&obj, &psf).unwrap();
        let peak1 = img.get(12 + 2, 20 + 2);
        let peak2 = img.get(50 + 2, 40 + 2);
        assert!((peak1 / peak2 - 1.0).abs() < 1e-6);
        assert!((img.total() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn pitch_mismatch_is_rejected() {
        let obj = delta_frame(8, 4, 4, 0.5);
        let psf = delta_frame(3, 1, 1, 0.7);
        assert!(incoherent_image(&obj, &psf).is_err());
    }

    fn test_detector(seed: u64) -> DetectorModel {
        DetectorModel {
            pixel_pitch_um: 13.0,
            quantum_efficiency: 0.9,
            exposure_s: 1.0,
            flux_scale: 1.0e4,
            read_noise_rms: 2.0,
            seed,
        }
    }

    fn test_cfg() -> OpticalConfig {
        OpticalConfig::new(397.0, 0.26, 15.4, 13.0).unwrap()
    }

    #[test]
    fn zero_exposure_detects_nothing() {
        let obj = delta_frame(32, 16, 16, 0.5);
        let mut det = test_detector(1);
        det.exposure_s = 0.0;
        let detection = detect(&obj, &test_cfg(), &det).unwrap();
        assert!(detection.frame.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn detection_is_deterministic_and_concentrated() {
        let obj = delta_frame(64, 32, 32, 0.5);
        let det = test_detector(42);
        let cfg = test_cfg();
        let first = detect(&obj, &cfg, &det).unwrap();
        let second = detect(&obj, &cfg, &det).unwrap();
        assert_eq!(first.frame.data(), second.frame.data());

        let expected = detect_expectation(&obj, &cfg, &det).unwrap();
        let peak_expected = expected.max_value();
        assert!(peak_expected > 1e3);
        let (px, py) = expected.argmax();
        let measured = first.frame.get(px, py);
        assert!(
            (measured - peak_expected).abs() < 3.0 * peak_expected.sqrt() + 3.0 * 2.0,
            "peak {measured} vs expected {peak_expected}"
        );
    }

    #[test]
    fn expectation_conserves_counts() {
        // detector grid covers the source: integrated counts = total x gain
        let obj = delta_frame(64, 30, 33, 0.5);
        let det = test_detector(0);
        let cfg = test_cfg();
        let expected = detect_expectation(&obj, &cfg, &det).unwrap();
        let gain = det.quantum_efficiency * det.flux_scale * det.exposure_s;
        assert!(
            (expected.total() - obj.total() * gain).abs() / (obj.total() * gain) < 1e-9,
            "total {} vs {}",
            expected.total(),
            obj.total() * gain
        );
    }

    #[test]
    fn detection_mean_over_seeds_matches_expectation() {
        let obj = delta_frame(32, 16, 16, 0.5);
        let cfg = test_cfg();
        let det = test_detector(0);
        let expected = detect_expectation(&obj, &cfg, &det).unwrap();
        let n_seeds = 100;
        let mut sums = vec![0.0; expected.data().len()];
        for seed in 0..n_seeds {
            let d = detect(&obj, &cfg, &DetectorModel { seed, ..det }).unwrap();
            for (s, v) in sums.iter_mut().zip(d.frame.data()) {
                *s += v;
            }
        }
        // aggregate z-score over the signal pixels (at λ ≈ 0 the nonnegative
        // clamp cuts the read-noise tail, which is a property of the
        // detector, not a bias of the sampling)
        let mut total_expected = 0.0;
        let mut total_measured = 0.0;
        let mut var_per_frame = 0.0;
        for (s, lam) in sums.iter().zip(expected.data()) {
            if *lam > 5.0 {
                total_expected += lam * n_seeds as f64;
                total_measured += s;
                var_per_frame += lam + det.read_noise_rms * det.read_noise_rms;
            }
        }
        let z = (total_measured - total_expected) / (var_per_frame * n_seeds as f64).sqrt();
        assert!(z.abs() < 3.0, "aggregate z-score {z}");

        // per-pixel standardized deviations of the seed mean, RMS ≈ 1
        let mut z2_sum = 0.0;
        let mut n_used = 0;
        for (s, lam) in sums.iter().zip(expected.data()) {
            if *lam > 5.0 {
                let mean = s / n_seeds as f64;
                let sigma_mean =
                    ((lam + det.read_noise_rms * det.read_noise_rms) / n_seeds as f64).sqrt();
                z2_sum += ((mean - lam) / sigma_mean).powi(2);
                n_used += 1;
            }
        }
        if n_used > 0 {
            let rms = (z2_sum / n_used as f64).sqrt();
            assert!((0.2..2.0).contains(&rms), "standardized RMS {rms}");
        }
    }

    #[test]
    fn two_seeds_differ_only_at_noise_level() {
        // extended source so plenty of detector pixels carry signal
        let mut data = vec![0.0; 64 * 64];
        for y in 12..52 {
            for x in 12..52 {
                data[y * 64 + x] = 0.2 + 0.8 * ((x + y) % 7) as f64 / 7.0;
            }
        }
        let obj = Frame::new(64, 64, 0.5, Plane::Object, data).unwrap();
        let cfg = test_cfg();
        let det = DetectorModel {
            flux_scale: 1.0e3,
            ..test_detector(0)
        };
        let expected = detect_expectation(&obj, &cfg, &det).unwrap();
        let a = detect(&obj, &cfg, &DetectorModel { seed: 1, ..det }).unwrap();
        let b = detect(&obj, &cfg, &DetectorModel { seed: 2, ..det }).unwrap();

        // standardized residuals over the signal pixels
        let standardize = |f: &Frame| -> Vec<f64> {
            f.data()
                .iter()
                .zip(expected.data())
                .filter(|(_, lam)| **lam > 1.0)
                .map(|(v, lam)| (v - lam) / (lam + det.read_noise_rms * det.read_noise_rms).sqrt())
                .collect()
        };
        let mut ra = standardize(&a.frame);
        let mut rb = standardize(&b.frame);
        assert!(ra.len() > 50, "too few signal pixels for the KS test");
        ra.sort_by(|x, y| x.partial_cmp(y).unwrap());
        rb.sort_by(|x, y| x.partial_cmp(y).unwrap());

        // two-sample Kolmogorov-Smirnov test at α = 0.05, tie-aware
        let (n, m) = (ra.len() as f64, rb.len() as f64);
        let mut d_max = 0.0f64;
        let (mut i, mut j) = (0usize, 0usize);
        while i < ra.len() && j < rb.len() {
            let v = ra[i].min(rb[j]);
            while i < ra.len() && ra[i] <= v {
                i += 1;
            }
            while j < rb.len() && rb[j] <= v {
                j += 1;
            }
            d_max = d_max.max((i as f64 / n - j as f64 / m).abs());
        }
        let critical = 1.36 * ((n + m) / (n * m)).sqrt();
        assert!(d_max < critical, "KS statistic {d_max} >= {critical}");
    }
}
