//! Frequency-domain performance metrics.
//!
//! All spatial frequencies are referred to the object plane and expressed in
//! mm⁻¹. Detector frames must be re-referred with
//! [`Frame::referred_to_object`] before analysis; the conversion by the
//! magnification happens at ingestion, never inside the metric functions.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::diffraction::OpticalConfig;
use crate::error::{Error, Result};
use crate::frame::{Axis, Frame, Plane};

/// Sampled modulation versus object-plane spatial frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct MTFCurve {
    frequencies_mm: Vec<f64>,
    modulation: Vec<f64>,
}

impl MTFCurve {
    /// Frequencies must be strictly increasing and nonnegative.
    pub fn new(frequencies_mm: Vec<f64>, modulation: Vec<f64>) -> Result<Self> {
        if frequencies_mm.len() != modulation.len() || frequencies_mm.is_empty() {
            return Err(Error::Config(
                "curve needs matching, nonempty frequency and modulation arrays".into(),
            ));
        }
        if frequencies_mm[0] < 0.0
            || frequencies_mm.windows(2).any(|w| w[1] <= w[0])
            || frequencies_mm.iter().any(|f| !f.is_finite())
        {
            return Err(Error::Config(
                "frequencies must be nonnegative and strictly increasing".into(),
            ));
        }
        if modulation.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("modulation values must be finite".into()));
        }
        Ok(Self {
            frequencies_mm,
            modulation,
        })
    }

    pub fn frequencies_mm(&self) -> &[f64] {
        &self.frequencies_mm
    }

    pub fn modulation(&self) -> &[f64] {
        &self.modulation
    }

    pub fn len(&self) -> usize {
        self.frequencies_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_mm.is_empty()
    }

    /// Highest sampled frequency, mm⁻¹.
    pub fn band_edge_mm(&self) -> f64 {
        *self.frequencies_mm.last().expect("nonempty curve")
    }

    /// Linear interpolation inside the sampled band.
    pub fn modulation_at(&self, freq_mm: f64) -> Result<f64> {
        let f = &self.frequencies_mm;
        if freq_mm < f[0] || freq_mm > self.band_edge_mm() {
            return Err(Error::Config(format!(
                "frequency {freq_mm} mm^-1 outside the sampled band [{}, {}]",
                f[0],
                self.band_edge_mm()
            )));
        }
        let i = match f.binary_search_by(|v| v.partial_cmp(&freq_mm).unwrap()) {
            Ok(i) => return Ok(self.modulation[i]),
            Err(i) => i - 1,
        };
        let t = (freq_mm - f[i]) / (f[i + 1] - f[i]);
        Ok(self.modulation[i] * (1.0 - t) + self.modulation[i + 1] * t)
    }

    /// Pointwise product with `other` (interpolated onto this curve's
    /// frequencies). Frequencies beyond `other`'s band contribute zero.
    pub fn composed_with(&self, other: &MTFCurve) -> MTFCurve {
        let modulation = self
            .frequencies_mm
            .iter()
            .zip(&self.modulation)
            .map(|(f, m)| m * other.modulation_at(*f).unwrap_or(0.0))
            .collect();
        MTFCurve {
            frequencies_mm: self.frequencies_mm.clone(),
            modulation,
        }
    }

    /// Two-column CSV with `#`-prefixed provenance lines, 9-digit decimals.
    pub fn to_csv(&self, provenance: &[String]) -> String {
        let mut out = String::new();
        for line in provenance {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("frequency_mm^-1,modulation\n");
        for (f, m) in self.frequencies_mm.iter().zip(&self.modulation) {
            out.push_str(&format!("{f:.9},{m:.9}\n"));
        }
        out
    }
}

/// MTF measured from an intensity PSF: modulus of its normalized discrete
/// Fourier transform, cut along `axis`.
///
/// The cut through frequency space at zero perpendicular frequency equals the
/// 1-D transform of the PSF projected along the other axis, which is how it
/// is computed. The frame's pitch converts bin indices to object-plane mm⁻¹;
/// pass detector frames through [`Frame::referred_to_object`] first.
pub fn mtf_from_psf(psf: &Frame, axis: Axis) -> Result<MTFCurve> {
    if psf.plane() == Plane::Detector {
        return Err(Error::Config(
            "detector frames must be referred to the object plane before MTF analysis".into(),
        ));
    }
    if psf.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Measurement("PSF contains non-finite values".into()));
    }
    let (w, h) = (psf.width(), psf.height());
    let len = match axis {
        Axis::Horizontal => w,
        Axis::Vertical => h,
    };
    let mut projected = vec![Complex::new(0.0, 0.0); len];
    for y in 0..h {
        for x in 0..w {
            let i = match axis {
                Axis::Horizontal => x,
                Axis::Vertical => y,
            };
            projected[i].re += psf.get(x, y);
        }
    }
    FftPlanner::new()
        .plan_fft_forward(len)
        .process(&mut projected);
    let dc = projected[0].norm();
    if !(dc > 0.0) {
        return Err(Error::Measurement("PSF has zero total intensity".into()));
    }
    let n_out = len / 2 + 1;
    let pitch_mm = psf.pixel_pitch_um() * 1e-3;
    let mut frequencies = Vec::with_capacity(n_out);
    let mut modulation = Vec::with_capacity(n_out);
    for (k, value) in projected.iter().take(n_out).enumerate() {
        frequencies.push(k as f64 / (len as f64 * pitch_mm));
        modulation.push(value.norm() / dc);
    }
    MTFCurve::new(frequencies, modulation)
}

/// Analytic MTF of an unaberrated circular aperture:
/// `(2/π)(arccos ρ − ρ √(1−ρ²))` with `ρ = ν/νc`, zero beyond the cutoff
/// `νc = 2 NA / λ`.
pub fn mtf_diffraction_limited(cfg: &OpticalConfig, frequencies_mm: &[f64]) -> Result<MTFCurve> {
    let cutoff = cfg.cutoff_frequency_mm();
    let modulation = frequencies_mm
        .iter()
        .map(|f| {
            let rho = f / cutoff;
            if rho >= 1.0 {
                0.0
            } else {
                2.0 / std::f64::consts::PI * (rho.acos() - rho * (1.0 - rho * rho).sqrt())
            }
        })
        .collect();
    MTFCurve::new(frequencies_mm.to_vec(), modulation)
}

/// Frequency transmission of square-pixel averaging:
/// `|sinc(π ν p)|` with `p` the pixel pitch referred to the object plane.
/// Composes multiplicatively with the optical MTF.
pub fn detector_mtf(pitch_object_plane_um: f64, frequencies_mm: &[f64]) -> Result<MTFCurve> {
    if !(pitch_object_plane_um > 0.0) {
        return Err(Error::Config(format!(
            "pixel pitch must be positive, got {pitch_object_plane_um}"
        )));
    }
    let pitch_mm = pitch_object_plane_um * 1e-3;
    let modulation = frequencies_mm
        .iter()
        .map(|f| {
            let x = std::f64::consts::PI * f * pitch_mm;
            if x.abs() < 1e-12 {
                1.0
            } else {
                (x.sin() / x).abs()
            }
        })
        .collect();
    MTFCurve::new(frequencies_mm.to_vec(), modulation)
}

/// Highest object-plane frequency representable on a detector:
/// the Nyquist frequency of the re-referred pixel grid, `M / (2 p)` in mm⁻¹.
pub fn object_plane_frequency_ceiling_mm(magnification: f64, pixel_pitch_um: f64) -> f64 {
    magnification / (2.0 * pixel_pitch_um * 1e-3)
}

/// Square-wave contrast `(I_max − I_min) / (I_max + I_min)` of a bar image.
///
/// `I_max` is the mean over the plateau samples of each detected bar and
/// `I_min` the same over the interior troughs. A plateau is the set of
/// samples within 5% of the run's local extremum swing (at least two
/// samples), which rejects single-pixel extrema while tracking the true
/// crest even when blur rounds the bars. The profile across the bars is
/// averaged over the rows (or columns) that carry bar structure. A frame
/// without modulation is degenerate and reports zero contrast.
pub fn ctf_measure(img: &Frame, n_bars: usize, orientation: Axis) -> Result<f64> {
    if n_bars < 1 {
        return Err(Error::Config("n_bars must be at least 1".into()));
    }
    let profile = bar_profile(img, orientation);
    let max = profile.iter().cloned().fold(f64::MIN, f64::max);
    let min = profile.iter().cloned().fold(f64::MAX, f64::min);
    if max - min <= 1e-12 * max.abs().max(1e-300) {
        // uniform frame: no bars to find, contrast is zero by definition
        return Ok(0.0);
    }
    let threshold = 0.5 * (max + min);
    let runs = threshold_runs(&profile, threshold);

    let highs: Vec<&Run> = runs.iter().filter(|r| r.high).collect();
    if highs.len() < n_bars {
        return Err(Error::Pattern(format!(
            "detected {} bars, expected at least {n_bars}",
            highs.len()
        )));
    }
    // interior troughs: low runs strictly between the first and last bar
    let first_bar = highs[0].start;
    let last_bar_end = highs[highs.len() - 1].end;
    let lows: Vec<&Run> = runs
        .iter()
        .filter(|r| !r.high && r.start > first_bar && r.end < last_bar_end)
        .collect();
    if lows.is_empty() {
        return Err(Error::Pattern("no trough between the detected bars".into()));
    }

    let plateau_mean = |run: &Run, maximum: bool| -> f64 {
        let slice = &profile[run.start..run.end];
        let extremum = if maximum {
            slice.iter().cloned().fold(f64::MIN, f64::max)
        } else {
            slice.iter().cloned().fold(f64::MAX, f64::min)
        };
        let band = 0.05 * (extremum - threshold).abs();
        let mut selected: Vec<f64> = slice
            .iter()
            .cloned()
            .filter(|v| (v - extremum).abs() <= band)
            .collect();
        if selected.len() < 2 {
            // widen to the two samples nearest the extremum
            let mut by_distance: Vec<f64> = slice.to_vec();
            by_distance.sort_by(|a, b| {
                (a - extremum)
                    .abs()
                    .partial_cmp(&(b - extremum).abs())
                    .unwrap()
            });
            selected = by_distance.into_iter().take(2.min(slice.len())).collect();
        }
        selected.iter().sum::<f64>() / selected.len() as f64
    };
    let i_max = highs.iter().map(|r| plateau_mean(r, true)).sum::<f64>() / highs.len() as f64;
    let i_min = lows.iter().map(|r| plateau_mean(r, false)).sum::<f64>() / lows.len() as f64;
    Ok((i_max - i_min) / (i_max + i_min))
}

struct Run {
    start: usize,
    end: usize, // exclusive
    high: bool,
}

fn threshold_runs(profile: &[f64], threshold: f64) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for (i, v) in profile.iter().enumerate() {
        let high = *v >= threshold;
        match runs.last_mut() {
            Some(run) if run.high == high => run.end = i + 1,
            _ => runs.push(Run {
                start: i,
                end: i + 1,
                high,
            }),
        }
    }
    runs
}

/// Profile across the bars, averaged over the rows/columns that carry the
/// bar structure (those whose variance reaches half the maximum row
/// variance), then lightly smoothed.
fn bar_profile(img: &Frame, orientation: Axis) -> Vec<f64> {
    let work = match orientation {
        Axis::Horizontal => img.clone(),
        Axis::Vertical => img.transposed(),
    };
    let (w, h) = (work.width(), work.height());
    let mut row_var = vec![0.0; h];
    for (y, var) in row_var.iter_mut().enumerate() {
        let mean = (0..w).map(|x| work.get(x, y)).sum::<f64>() / w as f64;
        *var = (0..w).map(|x| (work.get(x, y) - mean).powi(2)).sum::<f64>() / w as f64;
    }
    let max_var = row_var.iter().cloned().fold(0.0, f64::max);
    let selected: Vec<usize> = if max_var > 0.0 {
        (0..h).filter(|y| row_var[*y] >= 0.5 * max_var).collect()
    } else {
        (0..h).collect()
    };
    let mut profile = vec![0.0; w];
    for y in &selected {
        for (x, p) in profile.iter_mut().enumerate() {
            *p += work.get(x, *y);
        }
    }
    for p in &mut profile {
        *p /= selected.len() as f64;
    }
    // 3-point moving average guards the threshold runs against shot noise
    let mut smooth = profile.clone();
    for i in 1..w - 1 {
        smooth[i] = (profile[i - 1] + profile[i] + profile[i + 1]) / 3.0;
    }
    smooth
}

/// MTF values recovered from a bar target by spectral division:
/// `MTF(k f₀) = |F{image}| / |F{object}|` at the fundamental `f₀` and the
/// requested odd harmonics `k`.
///
/// The fundamental is located as the strongest non-DC peak of the object
/// spectrum. Harmonics whose object-spectrum power sits at the noise floor,
/// or which fall beyond the representable band, are rejected as
/// ill-conditioned. Both frames must share pitch and geometry.
pub fn mtf_by_deconvolution(
    obj: &Frame,
    img: &Frame,
    harmonics: &[u32],
) -> Result<Vec<(f64, f64)>> {
    if (obj.pixel_pitch_um() - img.pixel_pitch_um()).abs() > 1e-9 * obj.pixel_pitch_um() {
        return Err(Error::Config(format!(
            "object pitch {} µm and image pitch {} µm differ",
            obj.pixel_pitch_um(),
            img.pixel_pitch_um()
        )));
    }
    if obj.width() != img.width() || obj.height() != img.height() {
        return Err(Error::Config(format!(
            "object {}x{} and image {}x{} must share geometry",
            obj.width(),
            obj.height(),
            img.width(),
            img.height()
        )));
    }
    if harmonics.is_empty() {
        return Err(Error::Config("no harmonics requested".into()));
    }
    if harmonics.iter().any(|k| k % 2 == 0 || *k == 0) {
        return Err(Error::Config(
            "only odd harmonics carry square-wave power".into(),
        ));
    }

    // modulation axis: the one with the stronger mean-removed structure
    let orientation = dominant_axis(obj);
    let spec_obj = spectrum(obj, orientation);
    let spec_img = spectrum(img, orientation);
    let len = spec_obj.len();
    let pitch_mm = obj.pixel_pitch_um() * 1e-3;
    let n_bins = len / 2 + 1;

    // The strongest non-DC bin of a finite bar pattern is an envelope lobe
    // near DC, not the bar fundamental. Locate the period in real space on
    // the (clean) object profile instead, then refine on the spectrum.
    let profile = bar_profile(obj, orientation);
    let p_max = profile.iter().cloned().fold(f64::MIN, f64::max);
    let p_min = profile.iter().cloned().fold(f64::MAX, f64::min);
    if p_max - p_min <= 1e-12 * p_max.abs().max(1e-300) {
        return Err(Error::IllConditioned(
            "object frame carries no bar modulation".into(),
        ));
    }
    let rising: Vec<usize> = threshold_runs(&profile, 0.5 * (p_max + p_min))
        .iter()
        .filter(|r| r.high)
        .map(|r| r.start)
        .collect();
    if rising.len() < 2 {
        return Err(Error::IllConditioned(
            "object frame shows fewer than two bars; no fundamental".into(),
        ));
    }
    let period_px = (rising[rising.len() - 1] - rising[0]) as f64 / (rising.len() - 1) as f64;
    let k0 = (len as f64 / period_px).round() as usize;
    if k0 < 1 || k0 >= n_bins {
        return Err(Error::IllConditioned(format!(
            "bar fundamental at bin {k0} is outside the representable band"
        )));
    }

    let mut out = Vec::with_capacity(harmonics.len());
    for &harmonic in harmonics {
        let target = harmonic as usize * k0;
        if target >= n_bins {
            return Err(Error::IllConditioned(format!(
                "harmonic {harmonic} of the fundamental (bin {target}) exceeds the \
                 representable band ({} bins)",
                n_bins - 1
            )));
        }
        // local peak search absorbs slight period misalignment
        let lo = target.saturating_sub(1).max(1);
        let hi = (target + 1).min(n_bins - 1);
        let bin = (lo..=hi)
            .max_by(|a, b| spec_obj[*a].partial_cmp(&spec_obj[*b]).unwrap())
            .unwrap();
        if spec_obj[bin] <= 1e-4 * spec_obj[k0] {
            return Err(Error::IllConditioned(format!(
                "object spectrum at harmonic {harmonic} is at the noise floor"
            )));
        }
        let freq = bin as f64 / (len as f64 * pitch_mm);
        out.push((freq, spec_img[bin] / spec_obj[bin]));
    }
    Ok(out)
}

fn dominant_axis(frame: &Frame) -> Axis {
    let columns: Vec<f64> = (0..frame.width())
        .map(|x| (0..frame.height()).map(|y| frame.get(x, y)).sum())
        .collect();
    let rows: Vec<f64> = (0..frame.height())
        .map(|y| (0..frame.width()).map(|x| frame.get(x, y)).sum())
        .collect();
    let variance = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
    };
    if variance(&columns) >= variance(&rows) {
        Axis::Horizontal
    } else {
        Axis::Vertical
    }
}

/// Modulus of the 1-D spectrum of the projected frame.
fn spectrum(frame: &Frame, orientation: Axis) -> Vec<f64> {
    let work = match orientation {
        Axis::Horizontal => frame.clone(),
        Axis::Vertical => frame.transposed(),
    };
    let (w, h) = (work.width(), work.height());
    let mut projected = vec![Complex::new(0.0, 0.0); w];
    for y in 0..h {
        let row = &work.data()[y * w..(y + 1) * w];
        for (p, v) in projected.iter_mut().zip(row) {
            p.re += v;
        }
    }
    FftPlanner::new()
        .plan_fft_forward(w)
        .process(&mut projected);
    projected.iter().map(|c| c.norm()).collect()
}

/// Two-point resolution at the given modulation threshold (0.2 = Rayleigh):
/// `1/ν*` in µm, with `ν*` the first downward crossing of the threshold,
/// linearly interpolated. Aberrated curves can re-cross; only the first
/// crossing from above counts.
pub fn rayleigh_resolution(curve: &MTFCurve, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let f = curve.frequencies_mm();
    let m = curve.modulation();
    for i in 0..m.len() - 1 {
        if m[i] >= threshold && m[i + 1] < threshold {
            let t = (m[i] - threshold) / (m[i] - m[i + 1]);
            let nu_star = f[i] + t * (f[i + 1] - f[i]);
            return Ok(1000.0 / nu_star);
        }
    }
    Err(Error::ResolutionUnbounded {
        threshold,
        band_edge_mm: curve.band_edge_mm(),
    })
}
