//! Command-line surface: `psf`, `mtf`, `target`, `chain`, `fit`, `correct`.
//!
//! Every command reads one JSON run configuration (explicit units in the key
//! names) plus per-command flags, and writes frames (PGM16 + sidecar), CSV
//! curves and JSON reports. Outputs are deterministic for a given
//! configuration and seed: reruns are byte-identical.
//!
//! Exit codes: 0 success, 2 configuration/parse error, 3 numeric failure,
//! 4 I/O error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diffraction::{
    build_pupil, fwhm, psf_intensity, rms_spot_radius, OpticalConfig, PupilGrid,
};
use crate::error::{Error, Result};
use crate::frame::{Axis, Frame, Plane};
use crate::retrieval::{apply_correction, fit_psf, FitModel, FitOptions};
use crate::scene::{
    bar_target, chain_equilibrium, chain_scene, detect, incoherent_image, two_ion_distance,
    DetectorModel, IonChain, IonSpecies,
};
use crate::transfer::{
    ctf_measure, detector_mtf, mtf_by_deconvolution, mtf_diffraction_limited, mtf_from_psf,
    rayleigh_resolution, MTFCurve,
};
use crate::zernike::ZernikeExpansion;

/// Run configuration: `{"grid": {...}, "optics": {...}, "detector": {...}?, "seed": ...?}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Detector response block; required by commands that simulate exposures.
    pub detector: Option<DetectorModel>,
    #[serde(default)]
    pub grid: PupilGrid,
    pub optics: OpticalConfig,
    /// Seed for every stochastic step (detector noise, fit restarts).
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            Error::Parse(format!(
                "{}: line {}, column {}: {}",
                path.display(),
                e.line(),
                e.column(),
                e
            ))
        })?;
        config.optics.validate()?;
        config.grid.validate()?;
        if let Some(det) = &config.detector {
            det.validate()?;
        }
        Ok(config)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn detector_required(&self) -> Result<DetectorModel> {
        self.detector.ok_or_else(|| {
            Error::Config("this command needs a \"detector\" block in the configuration".into())
        })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ionscope",
    version,
    about = "Diffraction, transfer-function and wavefront-retrieval toolbox for ion imaging"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Horizontal,
    Vertical,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Axis {
        match a {
            AxisArg::Horizontal => Axis::Horizontal,
            AxisArg::Vertical => Axis::Vertical,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the intensity PSF of a wavefront expansion.
    ///
    /// Writes <out>.pgm(+.json sidecar) and <out>.summary.json with the
    /// FWHM along both axes and the RMS spot radius.
    Psf {
        #[arg(long)]
        config: PathBuf,
        /// Zernike expansion JSON (use "terms": [] for the unaberrated case).
        #[arg(long)]
        expansion: PathBuf,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure the MTF of a PSF frame and report the Rayleigh resolution.
    ///
    /// Writes <out>.csv; optionally <out>.diffraction.csv (analytic
    /// circular-aperture reference) and <out>.detector.csv (that reference
    /// composed with the pixel-averaging transmission).
    Mtf {
        #[arg(long)]
        config: PathBuf,
        /// Input PSF frame (PGM16 + sidecar). Detector-plane frames are
        /// referred to the object plane using the configured magnification.
        #[arg(long)]
        psf: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "horizontal")]
        axis: AxisArg,
        /// Also emit the diffraction-limited reference curve.
        #[arg(long)]
        diffraction_reference: bool,
        /// Also emit the reference composed with the detector pixel MTF.
        #[arg(long)]
        detector: bool,
    },
    /// Image a three-bar target through the configured optics and measure
    /// its square-wave contrast and deconvolved MTF.
    Target {
        #[arg(long)]
        config: PathBuf,
        /// 1951-style group index (with --element); period doubles every
        /// group, 2^(group + (element-1)/6) line pairs per mm.
        #[arg(long, allow_hyphen_values = true)]
        group: Option<i32>,
        #[arg(long)]
        element: Option<u32>,
        /// Direct bar period in µm (alternative to --group/--element).
        #[arg(long)]
        period_um: Option<f64>,
        #[arg(long, default_value_t = 3)]
        bars: usize,
        #[arg(long, value_enum, default_value = "horizontal")]
        orientation: AxisArg,
        /// Optional aberration expansion JSON.
        #[arg(long)]
        expansion: Option<PathBuf>,
        /// Odd harmonics for the deconvolution analysis.
        #[arg(long, value_delimiter = ',', default_values_t = [1u32, 3u32])]
        harmonics: Vec<u32>,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a linear ion chain equilibrium and optionally render it onto
    /// the detector.
    Chain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ions: usize,
        /// Axial frequency ω_z / 2π in kHz.
        #[arg(long)]
        omega_z_khz: f64,
        #[arg(long, default_value_t = 39.9625909)]
        mass_u: f64,
        #[arg(long, default_value_t = 1)]
        charge_e: u32,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Render a synthetic detector frame to this path (requires a
        /// detector block in the configuration).
        #[arg(long)]
        render_out: Option<PathBuf>,
        /// Optional aberration expansion used for the rendering.
        #[arg(long)]
        expansion: Option<PathBuf>,
    },
    /// Retrieve Zernike coefficients from a measured PSF frame.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Measured detector frame (PGM16 + sidecar).
        #[arg(long)]
        data: PathBuf,
        /// Highest radial order of the fitted basis (piston and tilts are
        /// always excluded).
        #[arg(long, default_value_t = 5)]
        order: u32,
        #[arg(long, default_value_t = 16)]
        restarts: usize,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a coefficient-space correction to an expansion and re-run the
    /// PSF and MTF analyses on the corrected state.
    Correct {
        #[arg(long)]
        config: PathBuf,
        /// Expansion to correct (e.g. fitted coefficients).
        #[arg(long)]
        expansion: PathBuf,
        /// Correction to add termwise (e.g. negated astigmatism).
        #[arg(long)]
        delta: PathBuf,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Psf {
            config,
            expansion,
            out,
        } => cmd_psf(&config, &expansion, &out),
        Command::Mtf {
            config,
            psf,
            out,
            axis,
            diffraction_reference,
            detector,
        } => cmd_mtf(
            &config,
            &psf,
            &out,
            axis.into(),
            diffraction_reference,
            detector,
        ),
        Command::Target {
            config,
            group,
            element,
            period_um,
            bars,
            orientation,
            expansion,
            harmonics,
            out,
        } => cmd_target(
            &config,
            group,
            element,
            period_um,
            bars,
            orientation.into(),
            expansion.as_deref(),
            &harmonics,
            &out,
        ),
        Command::Chain {
            config,
            ions,
            omega_z_khz,
            mass_u,
            charge_e,
            out,
            render_out,
            expansion,
        } => cmd_chain(
            &config,
            ions,
            omega_z_khz,
            mass_u,
            charge_e,
            &out,
            render_out.as_deref(),
            expansion.as_deref(),
        ),
        Command::Fit {
            config,
            data,
            order,
            restarts,
            max_iter,
            tol,
            out,
        } => cmd_fit(&config, &data, order, restarts, max_iter, tol, &out),
        Command::Correct {
            config,
            expansion,
            delta,
            out,
        } => cmd_correct(&config, &expansion, &delta, &out),
    }
}

fn load_expansion(path: &Path) -> Result<ZernikeExpansion> {
    let text = fs::read_to_string(path)?;
    ZernikeExpansion::from_json(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn simulate_psf(config: &RunConfig, expansion: &ZernikeExpansion) -> Result<Frame> {
    let pupil = build_pupil(&config.optics, &config.grid, expansion)?;
    psf_intensity(&pupil, &config.optics, &config.grid)
}

#[derive(Serialize)]
struct PsfSummary {
    fwhm_horizontal_um: f64,
    fwhm_vertical_um: f64,
    pixel_pitch_um: f64,
    rms_spot_radius_um: f64,
    total_intensity: f64,
}

fn cmd_psf(config_path: &Path, expansion_path: &Path, out: &Path) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let expansion = load_expansion(expansion_path)?;
    let psf = simulate_psf(&config, &expansion)?;
    psf.write_pgm16(with_suffix(out, ".pgm"))?;

    let summary = PsfSummary {
        fwhm_horizontal_um: fwhm(&psf, Axis::Horizontal)?,
        fwhm_vertical_um: fwhm(&psf, Axis::Vertical)?,
        pixel_pitch_um: psf.pixel_pitch_um(),
        rms_spot_radius_um: rms_spot_radius(&psf)?,
        total_intensity: psf.total(),
    };
    fs::write(
        with_suffix(out, ".summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialization"),
    )?;
    println!(
        "psf: fwhm_h={:.4} µm fwhm_v={:.4} µm rms={:.4} µm pitch={:.4} µm",
        summary.fwhm_horizontal_um,
        summary.fwhm_vertical_um,
        summary.rms_spot_radius_um,
        summary.pixel_pitch_um
    );
    Ok(())
}

fn provenance_lines(config: &RunConfig, source: &str, axis: Axis) -> Vec<String> {
    vec![
        "ionscope mtf curve".to_string(),
        format!("source: {source}"),
        format!(
            "wavelength_nm={} numerical_aperture={} magnification={} detector_pixel_pitch_um={}",
            config.optics.wavelength_nm,
            config.optics.numerical_aperture,
            config.optics.magnification,
            config.optics.detector_pixel_pitch_um
        ),
        format!(
            "axis={}",
            match axis {
                Axis::Horizontal => "horizontal",
                Axis::Vertical => "vertical",
            }
        ),
    ]
}

fn report_resolution(label: &str, curve: &MTFCurve) {
    match rayleigh_resolution(curve, 0.2) {
        Ok(res) => println!("{label}: rayleigh_resolution_um={res:.4}"),
        Err(Error::ResolutionUnbounded { band_edge_mm, .. }) => println!(
            "{label}: no 0.2 crossing within the sampled band (edge {band_edge_mm:.1} mm^-1)"
        ),
        Err(e) => println!("{label}: resolution unavailable ({e})"),
    }
}

fn cmd_mtf(
    config_path: &Path,
    psf_path: &Path,
    out: &Path,
    axis: Axis,
    diffraction_reference: bool,
    detector: bool,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let raw = Frame::read_pgm16(psf_path)?;
    let frame = if raw.plane() == Plane::Detector {
        raw.referred_to_object(config.optics.magnification)?
    } else {
        raw
    };
    let measured = mtf_from_psf(&frame, axis)?;
    let lines = provenance_lines(&config, &psf_path.display().to_string(), axis);
    fs::write(with_suffix(out, ".csv"), measured.to_csv(&lines))?;
    report_resolution("measured", &measured);

    if diffraction_reference || detector {
        let reference = mtf_diffraction_limited(&config.optics, measured.frequencies_mm())?;
        if diffraction_reference {
            fs::write(
                with_suffix(out, ".diffraction.csv"),
                reference.to_csv(&lines),
            )?;
        }
        if detector {
            let pixels = detector_mtf(
                config.optics.object_referred_pixel_pitch_um(),
                measured.frequencies_mm(),
            )?;
            let composed = reference.composed_with(&pixels);
            fs::write(with_suffix(out, ".detector.csv"), composed.to_csv(&lines))?;
        }
    }
    Ok(())
}

/// Crop the PSF to an odd window holding at least `keep` of the energy,
/// centered on the peak, and renormalize. Keeps bar-target convolutions
/// affordable without visible truncation.
fn crop_psf_for_convolution(psf: &Frame, keep: f64) -> Result<Frame> {
    let (px, py) = psf.argmax();
    let max_radius = px
        .min(py)
        .min(psf.width() - 1 - px)
        .min(psf.height() - 1 - py);
    let mut radius = 8usize.min(max_radius);
    loop {
        let side = 2 * radius + 1;
        let mut energy = 0.0;
        for y in py - radius..=py + radius {
            for x in px - radius..=px + radius {
                energy += psf.get(x, y);
            }
        }
        if energy >= keep || radius == max_radius {
            let mut data = Vec::with_capacity(side * side);
            for y in py - radius..=py + radius {
                for x in px - radius..=px + radius {
                    data.push(psf.get(x, y));
                }
            }
            let cropped = Frame::new(side, side, psf.pixel_pitch_um(), psf.plane(), data)?;
            return cropped.normalized();
        }
        radius = (radius * 2).min(max_radius);
    }
}

#[derive(Serialize)]
struct HarmonicEntry {
    frequency_mm: f64,
    harmonic: u32,
    modulation: f64,
}

#[derive(Serialize)]
struct TargetReport {
    ctf: f64,
    ctf_plane: String,
    fundamental_mm: f64,
    harmonics: Vec<HarmonicEntry>,
    period_um: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_target(
    config_path: &Path,
    group: Option<i32>,
    element: Option<u32>,
    period_um: Option<f64>,
    bars: usize,
    orientation: Axis,
    expansion_path: Option<&Path>,
    harmonics: &[u32],
    out: &Path,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let period = match (period_um, group, element) {
        (Some(p), None, None) => p,
        (None, Some(g), Some(e)) => {
            if !(1..=6).contains(&e) {
                return Err(Error::Config("element must lie in 1..=6".into()));
            }
            let lp_mm = 2.0_f64.powf(g as f64 + (e as f64 - 1.0) / 6.0);
            1000.0 / lp_mm
        }
        _ => {
            return Err(Error::Config(
                "specify either --period-um or both --group and --element".into(),
            ))
        }
    };

    let expansion = match expansion_path {
        Some(p) => load_expansion(p)?,
        None => ZernikeExpansion::flat(config.optics.wavelength_nm),
    };
    let psf = simulate_psf(&config, &expansion)?;
    let psf_cropped = crop_psf_for_convolution(&psf, 0.999)?;

    let pitch = psf.pixel_pitch_um();
    let pattern_width = (2 * bars - 1) as f64 * period / 2.0;
    let bar_length = 2.5 * period;
    let psf_margin = psf_cropped.width() as f64 * pitch;
    let extent = (pattern_width.max(bar_length) + psf_margin).max(16.0 * pitch) * 1.25;
    let object = bar_target(period, bars, orientation, pitch, extent)?;

    let image_full = incoherent_image(&object, &psf_cropped)?;
    let image = image_full.crop_centered(object.width(), object.height())?;

    object.write_pgm16(with_suffix(out, ".object.pgm"))?;
    image.write_pgm16(with_suffix(out, ".image.pgm"))?;

    let (ctf, ctf_plane) = if let Some(det) = config.detector {
        let det = DetectorModel {
            seed: config.seed(),
            ..det
        };
        let detection = detect(&image, &config.optics, &det)?;
        detection
            .frame
            .write_pgm16(with_suffix(out, ".detector.pgm"))?;
        if detection.saturated_pixels > 0 {
            println!("target: {} saturated pixels", detection.saturated_pixels);
        }
        (
            ctf_measure(&detection.frame, bars, orientation)?,
            "detector".to_string(),
        )
    } else {
        (ctf_measure(&image, bars, orientation)?, "image".to_string())
    };

    let recovered = mtf_by_deconvolution(&object, &image, harmonics)?;
    let report = TargetReport {
        ctf,
        ctf_plane,
        fundamental_mm: 1000.0 / period,
        harmonics: harmonics
            .iter()
            .zip(&recovered)
            .map(|(h, (f, m))| HarmonicEntry {
                frequency_mm: *f,
                harmonic: *h,
                modulation: *m,
            })
            .collect(),
        period_um: period,
    };
    fs::write(
        with_suffix(out, ".report.json"),
        serde_json::to_string_pretty(&report).expect("report serialization"),
    )?;
    println!(
        "target: period={period:.3} µm ctf={ctf:.4} ({}) fundamental={:.2} mm^-1",
        report.ctf_plane, report.fundamental_mm
    );
    for h in &report.harmonics {
        println!(
            "target: harmonic {} at {:.2} mm^-1 -> modulation {:.4}",
            h.harmonic, h.frequency_mm, h.modulation
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_chain(
    config_path: &Path,
    ions: usize,
    omega_z_khz: f64,
    mass_u: f64,
    charge_e: u32,
    out: &Path,
    render_out: Option<&Path>,
    expansion_path: Option<&Path>,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let species = IonSpecies { mass_u, charge_e };
    let omega_z = std::f64::consts::TAU * omega_z_khz * 1e3;
    let chain = if ions == 1 {
        IonChain::single(species, omega_z)?
    } else {
        chain_equilibrium(species, omega_z, ions)?
    };
    fs::write(out, chain.to_json())?;

    let spacings = chain.spacings_um();
    if spacings.is_empty() {
        println!("chain: 1 ion at the trap center");
    } else {
        let min = spacings.iter().cloned().fold(f64::MAX, f64::min);
        let max = spacings.iter().cloned().fold(f64::MIN, f64::max);
        println!(
            "chain: {} ions, spacings {:.3} - {:.3} µm (two-ion reference {:.3} µm)",
            ions,
            min,
            max,
            two_ion_distance(species, omega_z)?
        );
    }

    if let Some(render_path) = render_out {
        let det = DetectorModel {
            seed: config.seed(),
            ..config.detector_required()?
        };
        let expansion = match expansion_path {
            Some(p) => load_expansion(p)?,
            None => ZernikeExpansion::flat(config.optics.wavelength_nm),
        };
        let psf = simulate_psf(&config, &expansion)?;
        // the scene is rasterized at the PSF pitch so the convolution
        // operates on matching grids
        let pitch = psf.pixel_pitch_um();
        let span = chain
            .positions_um()
            .iter()
            .fold(0.0f64, |a, z| a.max(z.abs()));
        let extent = (2.0 * span + 12.0).max(24.0);
        let scene = chain_scene(&chain, pitch, extent)?;
        let psf_cropped = crop_psf_for_convolution(&psf, 0.999)?;
        let image_full = incoherent_image(&scene, &psf_cropped)?;
        let image = image_full.crop_centered(scene.width(), scene.height())?;
        let detection = detect(&image, &config.optics, &det)?;
        detection.frame.write_pgm16(render_path)?;
        println!(
            "chain: rendered {}x{} detector frame ({} saturated)",
            detection.frame.width(),
            detection.frame.height(),
            detection.saturated_pixels
        );
    }
    Ok(())
}

fn cmd_fit(
    config_path: &Path,
    data_path: &Path,
    order: u32,
    restarts: usize,
    max_iter: usize,
    tol: f64,
    out: &Path,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let data = Frame::read_pgm16(data_path)?;
    let mut model = FitModel::new(config.optics, config.grid, (data.width(), data.height()));
    model.basis = FitModel::default_basis(order);
    if let Some(det) = &config.detector {
        model.read_noise_rms = det.read_noise_rms;
    }
    let options = FitOptions {
        restarts,
        max_iter,
        tol,
        seed: config.seed(),
        threads: 0,
    };
    let result = fit_psf(&data, &model, &options)?;
    fs::write(out, result.to_json(&model, &data))?;
    println!(
        "fit: chi_nu={:.6} converged={} restart={} low_signal={}",
        result.chi_nu, result.converged, result.restart_index, result.low_signal
    );
    let mut strongest: Vec<_> = result.coefficients.terms().to_vec();
    strongest.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
    for (idx, c) in strongest.iter().take(5) {
        println!("fit: c({}, {}) = {:+.4} waves", idx.n(), idx.m(), c);
    }
    Ok(())
}

#[derive(Serialize)]
struct CorrectSummary {
    fwhm_horizontal_um: f64,
    fwhm_vertical_um: f64,
    resolution_horizontal_um: Option<f64>,
    resolution_vertical_um: Option<f64>,
    rms_spot_radius_um: f64,
}

fn cmd_correct(
    config_path: &Path,
    expansion_path: &Path,
    delta_path: &Path,
    out: &Path,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let expansion = load_expansion(expansion_path)?;
    let delta = load_expansion(delta_path)?;
    let corrected = apply_correction(&expansion, &delta)?;
    fs::write(with_suffix(out, ".expansion.json"), corrected.to_json())?;

    let psf = simulate_psf(&config, &corrected)?;
    psf.write_pgm16(with_suffix(out, ".psf.pgm"))?;

    let mut resolutions = [None, None];
    for (slot, axis) in resolutions
        .iter_mut()
        .zip([Axis::Horizontal, Axis::Vertical])
    {
        let curve = mtf_from_psf(&psf, axis)?;
        let lines = provenance_lines(&config, &expansion_path.display().to_string(), axis);
        let suffix = match axis {
            Axis::Horizontal => ".mtf_horizontal.csv",
            Axis::Vertical => ".mtf_vertical.csv",
        };
        fs::write(with_suffix(out, suffix), curve.to_csv(&lines))?;
        *slot = rayleigh_resolution(&curve, 0.2).ok();
        report_resolution(
            match axis {
                Axis::Horizontal => "corrected horizontal",
                Axis::Vertical => "corrected vertical",
            },
            &curve,
        );
    }

    let summary = CorrectSummary {
        fwhm_horizontal_um: fwhm(&psf, Axis::Horizontal)?,
        fwhm_vertical_um: fwhm(&psf, Axis::Vertical)?,
        resolution_horizontal_um: resolutions[0],
        resolution_vertical_um: resolutions[1],
        rms_spot_radius_um: rms_spot_radius(&psf)?,
    };
    fs::write(
        with_suffix(out, ".summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialization"),
    )?;
    Ok(())
}
