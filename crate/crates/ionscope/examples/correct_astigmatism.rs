//! The full correction workflow: image an astigmatic system, retrieve its
//! wavefront, model a cylindrical-lens correction in coefficient space, and
//! compare the Rayleigh resolutions before and after.
//!
//! ```text
//! cargo run --release --example correct_astigmatism
//! ```

use ionscope::diffraction::{build_pupil, psf_intensity, OpticalConfig, PupilGrid};
use ionscope::retrieval::{
    apply_correction, fit_psf, forward_model, FitModel, FitNuisance, FitOptions,
};
use ionscope::transfer::{mtf_from_psf, rayleigh_resolution};
use ionscope::zernike::{ZernikeExpansion, ZernikeIndex};
use ionscope::{Axis, Frame};

fn resolutions(
    cfg: &OpticalConfig,
    grid: &PupilGrid,
    e: &ZernikeExpansion,
) -> ionscope::Result<(f64, f64)> {
    let pupil = build_pupil(cfg, grid, e)?;
    let psf = psf_intensity(&pupil, cfg, grid)?;
    Ok((
        rayleigh_resolution(&mtf_from_psf(&psf, Axis::Horizontal)?, 0.2)?,
        rayleigh_resolution(&mtf_from_psf(&psf, Axis::Vertical)?, 0.2)?,
    ))
}

fn main() -> ionscope::Result<()> {
    let cfg = OpticalConfig::new(397.0, 0.26, 15.4, 13.0)?;
    let sim_grid = PupilGrid::new(512, 0.5)?;

    // the misaligned system: strong astigmatism with its focus offset
    let before = ZernikeExpansion::new(
        cfg.wavelength_nm,
        vec![
            (ZernikeIndex::new(2, -2)?, 0.65),
            (ZernikeIndex::new(2, 0)?, 0.10),
        ],
    )?;
    let (bx, by) = resolutions(&cfg, &sim_grid, &before)?;

    // what the camera sees: a synthetic single-ion exposure
    let fit_grid = PupilGrid::new(160, 0.5)?;
    let model = FitModel::new(cfg, fit_grid, (48, 48));
    let truth: Vec<f64> = model
        .basis
        .iter()
        .map(|idx| before.coefficient(*idx).unwrap_or(0.0))
        .collect();
    let data: Frame = forward_model(
        &model,
        &truth,
        &FitNuisance {
            amplitude: 5.0e4,
            background: 0.0,
            x0_px: 23.5,
            y0_px: 23.5,
        },
    )?;

    // retrieve the wavefront from the image
    let fit = fit_psf(
        &data,
        &model,
        &FitOptions {
            restarts: 12,
            ..FitOptions::default()
        },
    )?;
    println!("fit chi_nu = {:.2e}", fit.chi_nu);

    // a negative cylindrical lens cancels the astigmatism and pulls the
    // tangential focus onto the sagittal one: in coefficient space, negate
    // the fitted second-order terms
    let mut delta_terms = Vec::new();
    for (n, m) in [(2u32, -2i32), (2, 2), (2, 0)] {
        let idx = ZernikeIndex::new(n, m)?;
        if let Some(c) = fit.coefficients.coefficient(idx) {
            delta_terms.push((idx, -c));
        }
    }
    let delta = ZernikeExpansion::new(cfg.wavelength_nm, delta_terms)?;
    let corrected = apply_correction(&fit.coefficients, &delta)?;
    let (ax, ay) = resolutions(&cfg, &sim_grid, &corrected)?;

    println!(
        "{:12} {:>12} {:>12} {:>8}",
        "state", "horiz µm", "vert µm", "asym"
    );
    println!("{:12} {:>12.2} {:>12.2} {:>8.2}", "before", bx, by, bx / by);
    println!("{:12} {:>12.2} {:>12.2} {:>8.2}", "after", ax, ay, ax / ay);
    Ok(())
}
