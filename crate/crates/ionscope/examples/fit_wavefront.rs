//! Retrieve Zernike coefficients from a noisy synthetic ion image and
//! compare them with the injected truth (up to the intensity twin).
//!
//! ```text
//! cargo run --release --example fit_wavefront
//! ```

use ionscope::diffraction::{OpticalConfig, PupilGrid};
use ionscope::retrieval::{fit_psf, forward_model, FitModel, FitNuisance, FitOptions};
use ionscope::{Frame, Plane};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn main() -> ionscope::Result<()> {
    let cfg = OpticalConfig::new(397.0, 0.26, 15.4, 13.0)?;
    let grid = PupilGrid::new(256, 0.5)?;
    let mut model = FitModel::new(cfg, grid, (48, 48));
    model.basis = FitModel::default_basis(4);

    // the truth: astigmatism-dominated wavefront with a touch of coma
    let mut truth = vec![0.0; model.basis.len()];
    for (idx, value) in [
        ((2, -2), 0.31),
        ((2, 0), 0.10),
        ((3, -1), 0.12),
        ((4, 0), -0.05),
    ] {
        let position = model
            .basis
            .iter()
            .position(|b| (b.n() as i32, b.m()) == (idx.0, idx.1))
            .unwrap();
        truth[position] = value;
    }
    let nuisance = FitNuisance {
        amplitude: 2.0e5,
        background: 30.0,
        x0_px: 23.5,
        y0_px: 23.5,
    };
    let clean = forward_model(&model, &truth, &nuisance)?;

    // Poisson shot noise on the expected counts
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let noisy: Vec<f64> = clean
        .data()
        .iter()
        .map(|lam| Poisson::new(lam.max(1e-9)).unwrap().sample(&mut rng))
        .collect();
    let data = Frame::new(48, 48, 13.0, Plane::Detector, noisy)?;

    let fit = fit_psf(&data, &model, &FitOptions::default())?;
    println!(
        "chi_nu = {:.3}, converged = {}, winning restart = {}",
        fit.chi_nu, fit.converged, fit.restart_index
    );
    println!(
        "{:>8} {:>10} {:>10} {:>10}",
        "(n, m)", "true", "fitted", "sigma"
    );
    let twin = fit.twin();
    // report the twin member closer to the truth
    let distance = |e: &ionscope::zernike::ZernikeExpansion| -> f64 {
        model
            .basis
            .iter()
            .zip(&truth)
            .map(|(idx, t)| (e.coefficient(*idx).unwrap() - t).powi(2))
            .sum()
    };
    let recovered = if distance(&fit.coefficients) <= distance(&twin) {
        fit.coefficients.clone()
    } else {
        twin
    };
    for ((idx, t), sigma) in model.basis.iter().zip(&truth).zip(&fit.coefficient_sigmas) {
        let fitted = recovered.coefficient(*idx).unwrap();
        if t.abs() > 0.0 || fitted.abs() > 0.01 {
            println!(
                "({:>2},{:>3}) {:>10.4} {:>10.4} {:>10.4}",
                idx.n(),
                idx.m(),
                t,
                fitted,
                sigma
            );
        }
    }
    Ok(())
}
