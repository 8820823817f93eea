//! Compare PSFs under a few classic aberrations at the half-wave level.
//!
//! ```text
//! cargo run --release --example aberrated_psf
//! ```

use ionscope::diffraction::{
    build_pupil, fwhm, psf_intensity, rms_spot_radius, OpticalConfig, PupilGrid,
};
use ionscope::zernike::{ZernikeExpansion, ZernikeIndex};
use ionscope::Axis;

fn main() -> ionscope::Result<()> {
    let cfg = OpticalConfig::new(397.0, 0.26, 15.4, 13.0)?;
    let grid = PupilGrid::new(512, 0.5)?;

    let cases: Vec<(&str, Vec<(ZernikeIndex, f64)>)> = vec![
        ("unaberrated", vec![]),
        ("defocus 0.5 λ", vec![(ZernikeIndex::new(2, 0)?, 0.5)]),
        ("astigmatism 0.5 λ", vec![(ZernikeIndex::new(2, -2)?, 0.5)]),
        (
            "astigmatism + defocus",
            vec![
                (ZernikeIndex::new(2, -2)?, 0.5),
                (ZernikeIndex::new(2, 0)?, 0.25),
            ],
        ),
        ("coma 0.3 λ", vec![(ZernikeIndex::new(3, -1)?, 0.3)]),
        ("spherical 0.3 λ", vec![(ZernikeIndex::new(4, 0)?, 0.3)]),
    ];

    println!(
        "{:24} {:>10} {:>10} {:>10}",
        "aberration", "fwhm_x µm", "fwhm_y µm", "rms µm"
    );
    let out = std::path::Path::new("target/example-output");
    std::fs::create_dir_all(out)?;
    for (label, terms) in cases {
        let expansion = ZernikeExpansion::new(cfg.wavelength_nm, terms)?;
        let pupil = build_pupil(&cfg, &grid, &expansion)?;
        let psf = psf_intensity(&pupil, &cfg, &grid)?;
        println!(
            "{:24} {:>10.3} {:>10.3} {:>10.3}",
            label,
            fwhm(&psf, Axis::Horizontal)?,
            fwhm(&psf, Axis::Vertical)?,
            rms_spot_radius(&psf)?
        );
        let name: String = label
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect();
        psf.write_pgm16(out.join(format!("{name}.pgm")))?;
    }
    println!("frames written to {}", out.display());
    Ok(())
}
