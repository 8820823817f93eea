//! Solve linear Coulomb-crystal equilibria and render a seven-ion chain
//! onto the detector through the imaging system.
//!
//! ```text
//! cargo run --release --example ion_chain
//! ```

use ionscope::diffraction::{build_pupil, psf_intensity, OpticalConfig, PupilGrid};
use ionscope::scene::{
    chain_equilibrium, chain_scene, detect, incoherent_image, two_ion_distance, DetectorModel,
    CALCIUM_40,
};
use ionscope::zernike::ZernikeExpansion;

fn main() -> ionscope::Result<()> {
    let omega_z = std::f64::consts::TAU * 333.0e3; // 333 kHz axial frequency

    println!(
        "two-ion spacing at 333 kHz: {:.3} µm",
        two_ion_distance(CALCIUM_40, omega_z)?
    );
    for n in 2..=8 {
        let chain = chain_equilibrium(CALCIUM_40, omega_z, n)?;
        let gaps: Vec<String> = chain
            .spacings_um()
            .iter()
            .map(|g| format!("{g:.2}"))
            .collect();
        println!("{n} ions: gaps [{}] µm", gaps.join(", "));
    }

    // image the 7-ion chain: scene -> incoherent image -> detector counts
    let cfg = OpticalConfig::new(397.0, 0.26, 15.4, 13.0)?;
    let grid = PupilGrid::new(512, 0.5)?;
    let pupil = build_pupil(&cfg, &grid, &ZernikeExpansion::flat(cfg.wavelength_nm))?;
    let psf = psf_intensity(&pupil, &cfg, &grid)?;
    let psf_core = psf.crop_centered(129, 129)?.normalized()?;

    let chain = chain_equilibrium(CALCIUM_40, omega_z, 7)?;
    let scene = chain_scene(&chain, psf.pixel_pitch_um(), 110.0)?;
    let image = incoherent_image(&scene, &psf_core)?;
    let detector = DetectorModel {
        pixel_pitch_um: 13.0,
        quantum_efficiency: 0.9,
        exposure_s: 1.0,
        flux_scale: 2.0e5,
        read_noise_rms: 2.0,
        seed: 1,
    };
    let detection = detect(&image, &cfg, &detector)?;
    println!(
        "detector frame {}x{} px, peak {} counts, {} saturated",
        detection.frame.width(),
        detection.frame.height(),
        detection.frame.max_value(),
        detection.saturated_pixels
    );

    let out = std::path::Path::new("target/example-output");
    std::fs::create_dir_all(out)?;
    let path = out.join("seven_ion_chain.pgm");
    detection.frame.write_pgm16(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
