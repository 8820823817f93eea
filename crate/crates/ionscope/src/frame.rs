//! Rectangular intensity frames and their on-disk format.
//!
//! Frames are nonnegative f64 intensity arrays with a pixel pitch and a
//! declared plane. On disk a frame is a 16-bit big-endian binary PGM (`P5`,
//! maxval 65535) scaled to the maximum pixel, accompanied by a JSON sidecar
//! (`<file>.pgm.json`) carrying the pitch, the plane and the scale factor
//! that restores physical values.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which optical plane a frame lives in.
///
/// `Image` frames produced by the PSF pipeline carry their pitch already
/// referred to the object plane; `Detector` frames carry the physical sensor
/// pitch and must be re-referred (divide the pitch by the magnification)
/// before frequency analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Object,
    Image,
    Detector,
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Plane::Object => write!(f, "object"),
            Plane::Image => write!(f, "image"),
            Plane::Detector => write!(f, "detector"),
        }
    }
}

/// Axis selector for profiles and frequency cuts.
///
/// `Horizontal` always refers to structure along x (frame columns): a
/// horizontal FWHM is the peak width along x, a horizontal MTF cut samples
/// frequencies along x, and a horizontal bar target modulates along x
/// (vertical stripes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixel_pitch_um: f64,
    plane: Plane,
    data: Vec<f64>,
}

impl Frame {
    /// Row-major data; every value must be finite and nonnegative.
    pub fn new(
        width: usize,
        height: usize,
        pixel_pitch_um: f64,
        plane: Plane,
        data: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("frame dimensions must be nonzero".into()));
        }
        if data.len() != width * height {
            return Err(Error::Config(format!(
                "frame data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if !(pixel_pitch_um > 0.0) || !pixel_pitch_um.is_finite() {
            return Err(Error::Config(format!(
                "pixel pitch must be positive, got {pixel_pitch_um}"
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "frame values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            pixel_pitch_um,
            plane,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, pixel_pitch_um: f64, plane: Plane) -> Result<Self> {
        Self::new(
            width,
            height,
            pixel_pitch_um,
            plane,
            vec![0.0; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_pitch_um(&self) -> f64 {
        self.pixel_pitch_um
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    /// Coordinates of the maximum pixel (first occurrence in row-major order).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0.0);
        for (i, v) in self.data.iter().enumerate() {
            if *v > best.1 {
                best = (i, *v);
            }
        }
        (best.0 % self.width, best.0 / self.width)
    }

    /// Intensity centroid in pixel coordinates.
    pub fn centroid(&self) -> Result<(f64, f64)> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::Measurement("zero total intensity".into()));
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                cx += v * x as f64;
                cy += v * y as f64;
            }
        }
        Ok((cx / total, cy / total))
    }

    /// Rescale so the total intensity is exactly 1.
    pub fn normalized(mut self) -> Result<Frame> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::Measurement(
                "cannot normalize a frame with zero total intensity".into(),
            ));
        }
        for v in &mut self.data {
            *v /= total;
        }
        Ok(self)
    }

    /// View a detector frame in object-plane coordinates by dividing the
    /// pitch by the magnification. The result is tagged `Image`.
    pub fn referred_to_object(&self, magnification: f64) -> Result<Frame> {
        if !(magnification > 0.0) {
            return Err(Error::Config(format!(
                "magnification must be positive, got {magnification}"
            )));
        }
        Frame::new(
            self.width,
            self.height,
            self.pixel_pitch_um / magnification,
            Plane::Image,
            self.data.clone(),
        )
    }

    /// Centered crop; `w`, `h` must not exceed the current size.
    pub fn crop_centered(&self, w: usize, h: usize) -> Result<Frame> {
        if w == 0 || h == 0 || w > self.width || h > self.height {
            return Err(Error::Geometry(format!(
                "cannot crop {}x{} out of {}x{}",
                w, h, self.width, self.height
            )));
        }
        let x0 = (self.width - w) / 2;
        let y0 = (self.height - h) / 2;
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Frame::new(w, h, self.pixel_pitch_um, self.plane, data)
    }

    pub fn transposed(&self) -> Frame {
        let mut data = vec![0.0; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                data[x * self.height + y] = self.get(x, y);
            }
        }
        Frame {
            width: self.height,
            height: self.width,
            pixel_pitch_um: self.pixel_pitch_um,
            plane: self.plane,
            data,
        }
    }

    /// 1-D profile through `(x, y)` along `axis`.
    pub fn profile_through(&self, x: usize, y: usize, axis: Axis) -> Vec<f64> {
        match axis {
            Axis::Horizontal => (0..self.width).map(|i| self.get(i, y)).collect(),
            Axis::Vertical => (0..self.height).map(|j| self.get(x, j)).collect(),
        }
    }

    /// Write `<path>` as 16-bit PGM plus the `<path>.json` sidecar.
    pub fn write_pgm16<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let max = self.max_value();
        // scale restores physical values: value = pixel * scale
        let scale = if max > 0.0 { max / 65535.0 } else { 1.0 };
        let mut bytes = Vec::with_capacity(self.data.len() * 2 + 32);
        bytes.extend_from_slice(format!("P5\n{} {}\n65535\n", self.width, self.height).as_bytes());
        for v in &self.data {
            let q = (v / scale).round().clamp(0.0, 65535.0) as u16;
            bytes.extend_from_slice(&q.to_be_bytes());
        }
        fs::write(path, bytes)?;

        let sidecar = Sidecar {
            height: self.height,
            pixel_pitch_um: self.pixel_pitch_um,
            plane: self.plane,
            scale,
            width: self.width,
        };
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialization");
        fs::write(sidecar_path(path), text)?;
        Ok(())
    }

    /// Read a frame written by [`Frame::write_pgm16`]; the sidecar is required.
    pub fn read_pgm16<P: AsRef<Path>>(path: P) -> Result<Frame> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        let (width, height, maxval, offset) = parse_pgm_header(&bytes)?;
        if maxval != 65535 {
            return Err(Error::Parse(format!(
                "{}: expected 16-bit PGM (maxval 65535), got {maxval}",
                path.display()
            )));
        }
        let expected = width * height * 2;
        if bytes.len() < offset + expected {
            return Err(Error::Parse(format!(
                "{}: truncated PGM payload",
                path.display()
            )));
        }

        let sidecar_file = sidecar_path(path);
        let sidecar_text = fs::read_to_string(&sidecar_file)?;
        let sidecar: Sidecar = serde_json::from_str(&sidecar_text)
            .map_err(|e| Error::Parse(format!("{}: {e}", sidecar_file.display())))?;
        if sidecar.width != width || sidecar.height != height {
            return Err(Error::Parse(format!(
                "{}: sidecar dimensions {}x{} disagree with PGM {}x{}",
                sidecar_file.display(),
                sidecar.width,
                sidecar.height,
                width,
                height
            )));
        }

        let mut data = Vec::with_capacity(width * height);
        for chunk in bytes[offset..offset + expected].chunks_exact(2) {
            let q = u16::from_be_bytes([chunk[0], chunk[1]]);
            data.push(q as f64 * sidecar.scale);
        }
        Frame::new(width, height, sidecar.pixel_pitch_um, sidecar.plane, data)
    }
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".json");
    PathBuf::from(name)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    height: usize,
    pixel_pitch_um: f64,
    plane: Plane,
    scale: f64,
    width: usize,
}

fn parse_pgm_header(bytes: &[u8]) -> Result<(usize, usize, u32, usize)> {
    let mut pos = 0;
    let mut fields: Vec<u64> = Vec::new();
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::Parse("not a binary PGM (missing P5 magic)".into()));
    }
    pos += 2;
    while fields.len() < 3 {
        // skip whitespace and comment lines
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("malformed PGM header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf-8");
        fields.push(
            text.parse::<u64>()
                .map_err(|e| Error::Parse(format!("PGM header: {e}")))?,
        );
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse("PGM header not followed by whitespace".into()));
    }
    pos += 1; // single whitespace before the payload
    Ok((
        fields[0] as usize,
        fields[1] as usize,
        fields[2] as u32,
        pos,
    ))
}
