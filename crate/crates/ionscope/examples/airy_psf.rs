//! Simulate the diffraction-limited intensity PSF and measure its scale.
//!
//! ```text
//! cargo run --release --example airy_psf
//! ```

use ionscope::diffraction::{
    build_pupil, fwhm, psf_intensity, rms_spot_radius, OpticalConfig, PupilGrid,
};
use ionscope::zernike::ZernikeExpansion;
use ionscope::Axis;

fn main() -> ionscope::Result<()> {
    // 397 nm fluorescence, NA 0.26, 15.4x onto 13 µm pixels
    let cfg = OpticalConfig::new(397.0, 0.26, 15.4, 13.0)?;
    let grid = PupilGrid::default(); // 1024 samples, pupil fills half the grid

    let pupil = build_pupil(&cfg, &grid, &ZernikeExpansion::flat(cfg.wavelength_nm))?;
    let psf = psf_intensity(&pupil, &cfg, &grid)?;

    println!("object-plane pitch   : {:.4} µm/px", psf.pixel_pitch_um());
    println!(
        "fwhm (horizontal)    : {:.4} µm",
        fwhm(&psf, Axis::Horizontal)?
    );
    println!(
        "fwhm (vertical)      : {:.4} µm",
        fwhm(&psf, Axis::Vertical)?
    );
    println!("rms spot radius      : {:.4} µm", rms_spot_radius(&psf)?);
    println!(
        "first Airy zero      : {:.4} µm (0.61 λ/NA)",
        0.61 * cfg.wavelength_um() / cfg.numerical_aperture
    );

    let out = std::path::Path::new("target/example-output");
    std::fs::create_dir_all(out)?;
    let path = out.join("airy.pgm");
    psf.write_pgm16(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
