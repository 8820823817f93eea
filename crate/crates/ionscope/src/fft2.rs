//! Thin 2-D FFT helpers over rustfft.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

/// Planned 2-D transform for a fixed (width, height).
pub(crate) struct Fft2 {
    width: usize,
    height: usize,
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize, direction: FftDirection) -> Self {
        let mut planner = FftPlanner::new();
        let row = planner.plan_fft(width, direction);
        let col = planner.plan_fft(height, direction);
        Self {
            width,
            height,
            row,
            col,
        }
    }

    /// In-place unnormalized transform of row-major `data`.
    pub fn process(&self, data: &mut [Complex<f64>], scratch: &mut Vec<Complex<f64>>) {
        assert_eq!(data.len(), self.width * self.height);
        self.row.process(data);
        scratch.resize(data.len(), Complex::default());
        transpose(data, scratch, self.width, self.height);
        self.col.process(scratch);
        transpose(scratch, data, self.height, self.width);
    }
}

fn transpose(src: &[Complex<f64>], dst: &mut [Complex<f64>], width: usize, height: usize) {
    // blocked for cache locality; the transforms call this twice per pass
    const TILE: usize = 32;
    for y0 in (0..height).step_by(TILE) {
        for x0 in (0..width).step_by(TILE) {
            for y in y0..(y0 + TILE).min(height) {
                for x in x0..(x0 + TILE).min(width) {
                    dst[x * height + y] = src[y * width + x];
                }
            }
        }
    }
}

/// Move DC from index (0, 0) to (width/2, height/2).
pub(crate) fn fftshift2<T: Copy + Default>(data: &[T], width: usize, height: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    let (sx, sy) = (width / 2, height / 2);
    for y in 0..height {
        let ty = (y + sy) % height;
        for x in 0..width {
            let tx = (x + sx) % width;
            out[ty * width + tx] = data[y * width + x];
        }
    }
    out
}

/// Raw FFT index of the sample that lands at centered position `(x, y)`
/// after [`fftshift2`].
#[inline]
pub(crate) fn unshifted_index(x: usize, y: usize, width: usize, height: usize) -> usize {
    let sx = (x + width - width / 2) % width;
    let sy = (y + height - height / 2) % height;
    sy * width + sx
}

/// Smallest 5-smooth integer >= n (fast FFT length).
pub(crate) fn next_fast_len(n: usize) -> usize {
    let mut n = n.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m.is_multiple_of(p) {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_round_trip() {
        let n = 6;
        let data: Vec<usize> = (0..n * n).collect();
        let shifted = fftshift2(&data, n, n);
        // DC lands in the middle
        assert_eq!(shifted[(n / 2) * n + n / 2], 0);
        for y in 0..n {
            for x in 0..n {
                assert_eq!(shifted[y * n + x], data[unshifted_index(x, y, n, n)]);
            }
        }
    }

    #[test]
    fn fast_lengths_are_5_smooth() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(243), 243);
        assert_eq!(next_fast_len(244), 250);
        assert_eq!(next_fast_len(1023), 1024);
    }

    #[test]
    fn parseval_on_impulse() {
        let n = 8;
        let mut data = vec![Complex::new(0.0, 0.0); n * n];
        data[3 * n + 5] = Complex::new(1.0, 0.0);
        let fft = Fft2::new(n, n, FftDirection::Forward);
        let mut scratch = Vec::new();
        fft.process(&mut data, &mut scratch);
        for v in &data {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
