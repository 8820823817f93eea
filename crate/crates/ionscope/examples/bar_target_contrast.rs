//! Image three-bar resolution targets through the optics and measure the
//! square-wave contrast (CTF) plus the MTF recovered by spectral
//! deconvolution of object and image.
//!
//! ```text
//! cargo run --release --example bar_target_contrast
//! ```

use ionscope::diffraction::{build_pupil, psf_intensity, OpticalConfig, PupilGrid};
use ionscope::scene::{bar_target, incoherent_image};
use ionscope::transfer::{ctf_measure, mtf_by_deconvolution, mtf_diffraction_limited};
use ionscope::zernike::ZernikeExpansion;
use ionscope::Axis;

fn main() -> ionscope::Result<()> {
    let cfg = OpticalConfig::new(397.0, 0.26, 16.8, 6.5)?;
    let grid = PupilGrid::new(512, 0.5)?;
    let pupil = build_pupil(&cfg, &grid, &ZernikeExpansion::flat(cfg.wavelength_nm))?;
    let psf = psf_intensity(&pupil, &cfg, &grid)?;
    let pitch = psf.pixel_pitch_um();

    // groups 5..7, element 1: line-pair frequencies 32, 64, 128 per mm
    println!(
        "{:>6} {:>10} {:>8} {:>12} {:>12}",
        "group", "period µm", "ctf", "mtf(f0)", "analytic"
    );
    for group in [5, 6, 7] {
        let lp_mm = 2.0_f64.powi(group);
        let period = 1000.0 / lp_mm;
        let extent = (2.5 * period + 64.0 * pitch) * 1.3;
        let object = bar_target(period, 3, Axis::Horizontal, pitch, extent)?;
        let image_full = incoherent_image(&object, &psf.crop_centered(129, 129)?.normalized()?)?;
        let image = image_full.crop_centered(object.width(), object.height())?;

        let ctf = ctf_measure(&image, 3, Axis::Horizontal)?;
        let recovered = mtf_by_deconvolution(&object, &image, &[1])?;
        let analytic = mtf_diffraction_limited(&cfg, &[lp_mm])?;
        println!(
            "{:>6} {:>10.2} {:>8.4} {:>12.4} {:>12.4}",
            group,
            period,
            ctf,
            recovered[0].1,
            analytic.modulation()[0]
        );
    }
    Ok(())
}
