//! Zernike polynomials and wave-aberration expansions on the unit disc.
//!
//! The polynomials are **unnormalized** (Born & Wolf convention,
//! `R_n^|m|(1) = 1`), with the azimuthal branch chosen as
//!
//! | index        | angular factor    |
//! |--------------|-------------------|
//! | `m < 0`      | `cos(|m| φ)`      |
//! | `m = 0`      | `1`               |
//! | `m > 0`      | `sin(|m| φ)`      |
//!
//! Mind that this mirrors the more common ANSI/Noll layout, which puts the
//! cosine branch on positive `m`: our `(2, -2)` is 0°/90° astigmatism
//! (`r² cos 2φ`), our `(2, 2)` the 45° one. The low orders map to
//!
//! | (n, m)   | aberration              |
//! |----------|-------------------------|
//! | (0, 0)   | piston                  |
//! | (1, -1)  | tilt along x            |
//! | (1, 1)   | tilt along y            |
//! | (2, 0)   | defocus                 |
//! | (2, ±2)  | primary astigmatism     |
//! | (3, ±1)  | primary coma            |
//! | (3, ±3)  | trefoil                 |
//! | (4, 0)   | primary spherical       |
//!
//! Coefficients are expressed in units of the expansion's reference
//! wavelength, so a coefficient of 0.5 means half a wave of optical path
//! difference at the pupil edge.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A valid radial/azimuthal index pair of the Zernike basis.
///
/// Invariants enforced at construction: `|m| <= n` and `n - |m|` even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZernikeIndex {
    n: u32,
    m: i32,
}

impl ZernikeIndex {
    pub fn new(n: u32, m: i32) -> Result<Self> {
        if m.unsigned_abs() > n {
            return Err(Error::InvalidIndex {
                n: n as i64,
                m: m as i64,
                reason: "|m| must not exceed n",
            });
        }
        if !(n - m.unsigned_abs()).is_multiple_of(2) {
            return Err(Error::InvalidIndex {
                n: n as i64,
                m: m as i64,
                reason: "n - |m| must be even",
            });
        }
        Ok(Self { n, m })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> i32 {
        self.m
    }

    /// Piston and the two tilts are degenerate with image normalization and
    /// translation; fits exclude them by default.
    pub fn is_piston_or_tilt(&self) -> bool {
        self.n == 0 || self.n == 1
    }

    /// Radial polynomial `R_n^|m|(r)`.
    ///
    /// Evaluated from the explicit factorial sum, with the coefficients
    /// produced by an exact multiplicative recurrence and the sum taken as a
    /// Horner scheme in `r²`; exact to better than 1e-12 relative error for
    /// `n <= 10`.
    pub fn radial(&self, r: f64) -> f64 {
        radial_unchecked(self.n, self.m.unsigned_abs(), r)
    }

    /// Full polynomial `Z_n^m(r, φ)`; see the module table for the branch
    /// convention.
    pub fn eval(&self, r: f64, phi: f64) -> f64 {
        let m_abs = self.m.unsigned_abs();
        let radial = self.radial(r);
        if self.m > 0 {
            radial * (m_abs as f64 * phi).sin()
        } else if self.m < 0 {
            radial * (m_abs as f64 * phi).cos()
        } else {
            radial
        }
    }

    /// Normalization factor of the Noll/ANSI orthonormal convention,
    /// `sqrt(2(n+1)/(1+δ_{m0}))`. Provided as a conversion helper only; the
    /// crate itself always works with unnormalized polynomials.
    pub fn noll_factor(&self) -> f64 {
        let two_n_plus_2 = 2.0 * (self.n as f64 + 1.0);
        if self.m == 0 {
            (two_n_plus_2 / 2.0).sqrt()
        } else {
            two_n_plus_2.sqrt()
        }
    }

    /// All valid indices with `n <= max_order`, sorted by (n, m).
    pub fn up_to_order(max_order: u32) -> Vec<ZernikeIndex> {
        let mut out = Vec::new();
        for n in 0..=max_order {
            let mut m = -(n as i32);
            while m <= n as i32 {
                out.push(ZernikeIndex { n, m });
                m += 2;
            }
        }
        out
    }
}

/// Radial polynomial for a validated `(n, m_abs)` pair.
///
/// Free-function form of [`ZernikeIndex::radial`] that validates its inputs.
pub fn radial_poly(n: u32, m_abs: u32, r: f64) -> Result<f64> {
    ZernikeIndex::new(n, m_abs as i32)?;
    Ok(radial_unchecked(n, m_abs, r))
}

fn radial_unchecked(n: u32, m_abs: u32, r: f64) -> f64 {
    let q = ((n - m_abs) / 2) as i64; // upper summation limit
    let p = ((n + m_abs) / 2) as i64;
    let n = n as i64;

    // coef(0) = n! / (p! q!), built without large intermediates
    let mut coef = 1.0;
    for k in 1..=q {
        coef *= (p + k) as f64 / k as f64;
    }

    // coef(s+1) = -coef(s) (p-s)(q-s) / ((n-s)(s+1)), Horner over u = r²
    let u = r * r;
    let mut acc = coef;
    for s in 0..q {
        coef *= -(((p - s) * (q - s)) as f64) / (((n - s) * (s + 1)) as f64);
        acc = acc * u + coef;
    }
    acc * r.powi(m_abs as i32)
}

/// A wave aberration `W(r, φ) = Σ c_nm Z_n^m(r, φ)` in wavelength units.
///
/// Terms are kept sorted by (n, m) and duplicate indices are rejected.
/// Serializes to/from a strict JSON document:
///
/// ```json
/// {"terms": [{"c": 0.31, "m": -2, "n": 2}], "wavelength_nm": 397.0}
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ZernikeExpansion {
    terms: Vec<(ZernikeIndex, f64)>,
    wavelength_nm: f64,
}

impl ZernikeExpansion {
    pub fn new(wavelength_nm: f64, terms: Vec<(ZernikeIndex, f64)>) -> Result<Self> {
        if !(wavelength_nm > 0.0) || !wavelength_nm.is_finite() {
            return Err(Error::Config(format!(
                "reference wavelength must be positive, got {wavelength_nm}"
            )));
        }
        let mut terms = terms;
        terms.sort_by_key(|(idx, _)| *idx);
        for pair in terms.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Config(format!(
                    "duplicate Zernike term (n={}, m={})",
                    pair[0].0.n(),
                    pair[0].0.m()
                )));
            }
        }
        for (idx, c) in &terms {
            if !c.is_finite() {
                return Err(Error::Config(format!(
                    "non-finite coefficient for (n={}, m={})",
                    idx.n(),
                    idx.m()
                )));
            }
        }
        Ok(Self {
            terms,
            wavelength_nm,
        })
    }

    /// Aberration-free expansion at the given wavelength.
    pub fn flat(wavelength_nm: f64) -> Self {
        Self::new(wavelength_nm, Vec::new()).expect("positive wavelength")
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    /// Terms sorted by (n ascending, m ascending).
    pub fn terms(&self) -> &[(ZernikeIndex, f64)] {
        &self.terms
    }

    pub fn coefficient(&self, idx: ZernikeIndex) -> Option<f64> {
        self.terms
            .binary_search_by_key(&idx, |(i, _)| *i)
            .ok()
            .map(|pos| self.terms[pos].1)
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// True if the expansion carries piston or tilt terms. Those are flagged
    /// in reports because they do not change the intensity PSF shape.
    pub fn has_piston_or_tilt(&self) -> bool {
        self.terms.iter().any(|(idx, _)| idx.is_piston_or_tilt())
    }

    /// Wavefront value `W(r, φ)` in wavelength units.
    pub fn eval(&self, r: f64, phi: f64) -> f64 {
        self.terms.iter().map(|(idx, c)| c * idx.eval(r, phi)).sum()
    }

    /// The intensity-equivalent sign twin: a single measured intensity PSF
    /// cannot distinguish an expansion from the one with every even-|m|
    /// coefficient negated. `twin(twin(e)) == e`.
    pub fn twin(&self) -> ZernikeExpansion {
        let terms = self
            .terms
            .iter()
            .map(|(idx, c)| {
                let flipped = if idx.m().unsigned_abs().is_multiple_of(2) {
                    -c
                } else {
                    *c
                };
                (*idx, flipped)
            })
            .collect();
        Self {
            terms,
            wavelength_nm: self.wavelength_nm,
        }
    }

    /// Termwise sum with `delta`; terms whose coefficients cancel exactly are
    /// dropped. Errors if the reference wavelengths differ.
    pub fn sum(&self, delta: &ZernikeExpansion) -> Result<ZernikeExpansion> {
        if !wavelengths_match(self.wavelength_nm, delta.wavelength_nm) {
            return Err(Error::WavelengthMismatch {
                expansion_nm: delta.wavelength_nm,
                config_nm: self.wavelength_nm,
            });
        }
        let mut merged: Vec<(ZernikeIndex, f64)> = self.terms.clone();
        for (idx, c) in &delta.terms {
            match merged.binary_search_by_key(idx, |(i, _)| *i) {
                Ok(pos) => merged[pos].1 += c,
                Err(pos) => merged.insert(pos, (*idx, *c)),
            }
        }
        merged.retain(|(_, c)| *c != 0.0);
        Self::new(self.wavelength_nm, merged)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ExpansionDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("expansion JSON: {e}")))?;
        let mut terms = Vec::with_capacity(doc.terms.len());
        for t in doc.terms {
            let n = u32::try_from(t.n).map_err(|_| Error::InvalidIndex {
                n: t.n,
                m: t.m,
                reason: "n must be a nonnegative integer",
            })?;
            let m = i32::try_from(t.m).map_err(|_| Error::InvalidIndex {
                n: t.n,
                m: t.m,
                reason: "m out of range",
            })?;
            terms.push((ZernikeIndex::new(n, m)?, t.c));
        }
        Self::new(doc.wavelength_nm, terms)
    }

    pub fn to_json(&self) -> String {
        let doc = ExpansionDoc {
            terms: self
                .terms
                .iter()
                .map(|(idx, c)| TermDoc {
                    c: *c,
                    m: idx.m() as i64,
                    n: idx.n() as i64,
                })
                .collect(),
            wavelength_nm: self.wavelength_nm,
        };
        serde_json::to_string_pretty(&doc).expect("expansion serialization")
    }
}

pub(crate) fn wavelengths_match(a_nm: f64, b_nm: f64) -> bool {
    (a_nm - b_nm).abs() <= 1e-9 * a_nm.abs().max(b_nm.abs())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpansionDoc {
    terms: Vec<TermDoc>,
    wavelength_nm: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermDoc {
    c: f64,
    m: i64,
    n: i64,
}

/// Numerical Gram matrix `G_ij = ∫∫ Z_i Z_j r dr dφ` over the unit disc.
///
/// Midpoint quadrature with `n_radial × n_azimuthal` cells; sampling below
/// 64 × 64 is raised to that floor. Off-diagonal entries tend to zero as the
/// sampling grows (the basis is orthogonal, not orthonormal).
pub fn gram_matrix(indices: &[ZernikeIndex], n_radial: usize, n_azimuthal: usize) -> DMatrix<f64> {
    let n_radial = n_radial.max(64);
    let n_azimuthal = n_azimuthal.max(64);
    let k = indices.len();
    let mut gram = DMatrix::zeros(k, k);
    let dr = 1.0 / n_radial as f64;
    let dphi = std::f64::consts::TAU / n_azimuthal as f64;
    let mut values = vec![0.0; k];
    for ir in 0..n_radial {
        let r = (ir as f64 + 0.5) * dr;
        let weight_r = r * dr * dphi;
        for ip in 0..n_azimuthal {
            let phi = (ip as f64 + 0.5) * dphi;
            for (v, idx) in values.iter_mut().zip(indices) {
                *v = idx.eval(r, phi);
            }
            for i in 0..k {
                for j in i..k {
                    gram[(i, j)] += values[i] * values[j] * weight_r;
                }
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    gram
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn idx(n: u32, m: i32) -> ZernikeIndex {
        ZernikeIndex::new(n, m).unwrap()
    }

    #[test]
    fn rejects_invalid_indices() {
        assert!(ZernikeIndex::new(2, 3).is_err()); // |m| > n
        assert!(ZernikeIndex::new(3, 0).is_err()); // parity
        assert!(ZernikeIndex::new(3, -2).is_err());
        assert!(ZernikeIndex::new(0, 0).is_ok());
        assert!(radial_poly(2, 1, 0.5).is_err());
    }

    #[test]
    fn radial_matches_closed_forms() {
        // R_n^n(r) = r^n
        assert!((radial_poly(2, 2, 0.5).unwrap() - 0.25).abs() < 1e-15);
        // R_2^0(r) = 2r² - 1
        assert!((radial_poly(2, 0, 0.0).unwrap() + 1.0).abs() < 1e-15);
        // R_4^0(0.5) = 6r⁴ - 6r² + 1 = -0.125
        assert!((radial_poly(4, 0, 0.5).unwrap() + 0.125).abs() < 1e-15);
    }

    /// Independent oracle: Kintner's three-term recurrence in n at fixed m.
    ///
    ///   R_m^m = r^m,  R_{m+2}^m = ((m+2) r² - (m+1)) r^m
    ///   K1 R_n^m = (K2 r² + K3) R_{n-2}^m + K4 R_{n-4}^m
    fn radial_recurrence(n: u32, m: u32, r: f64) -> f64 {
        assert!(n >= m && (n - m).is_multiple_of(2));
        if n == m {
            return r.powi(m as i32);
        }
        if n == m + 2 {
            return ((m as f64 + 2.0) * r * r - (m as f64 + 1.0)) * r.powi(m as i32);
        }
        let (nf, mf) = (n as f64, m as f64);
        let k1 = (nf + mf) * (nf - mf) * (nf - 2.0) / 2.0;
        let k2 = 2.0 * nf * (nf - 1.0) * (nf - 2.0);
        let k3 = -mf * mf * (nf - 1.0) - nf * (nf - 1.0) * (nf - 2.0);
        let k4 = -nf * (nf + mf - 2.0) * (nf - mf - 2.0) / 2.0;
        ((k2 * r * r + k3) * radial_recurrence(n - 2, m, r) + k4 * radial_recurrence(n - 4, m, r))
            / k1
    }

    #[test]
    fn factorial_sum_agrees_with_recurrence() {
        for n in 0..=10u32 {
            for m in (n % 2..=n).step_by(2) {
                for step in 0..=10 {
                    let r = step as f64 / 10.0;
                    let direct = radial_poly(n, m, r).unwrap();
                    let recur = radial_recurrence(n, m, r);
                    assert!(
                        (direct - recur).abs() <= 1e-10 * recur.abs().max(1.0),
                        "n={n} m={m} r={r}: {direct} vs {recur}"
                    );
                }
            }
        }
    }

    #[test]
    fn boundary_value_is_one() {
        for n in 0..=10u32 {
            for m in (n % 2..=n).step_by(2) {
                let v = radial_poly(n, m, 1.0).unwrap();
                assert!((v - 1.0).abs() < 1e-12, "R_{n}^{m}(1) = {v}");
            }
        }
    }

    #[test]
    fn branch_convention() {
        // piston
        assert_eq!(idx(0, 0).eval(0.3, 1.1), 1.0);
        // X tilt at pupil edge, cosine branch on negative m
        assert!((idx(1, -1).eval(1.0, 0.0) - 1.0).abs() < 1e-15);
        // astigmatism node at 45°
        assert!(idx(2, -2).eval(1.0, PI / 4.0).abs() < 1e-15);
        // sine branch on positive m
        assert!((idx(2, 2).eval(1.0, PI / 4.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parity_under_half_turn() {
        for &(n, m) in &[(2, -2), (2, 0), (3, -1), (3, 3), (4, 2), (5, -5), (6, 4)] {
            let z = idx(n, m);
            let sign = if m.unsigned_abs() % 2 == 0 { 1.0 } else { -1.0 };
            for ir in 1..6 {
                let r = ir as f64 / 5.0;
                for ip in 0..8 {
                    let phi = ip as f64 * PI / 4.0 + 0.1;
                    let direct = z.eval(r, phi + PI);
                    let mirrored = sign * z.eval(r, phi);
                    assert!((direct - mirrored).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn wavefront_linearity() {
        let empty = ZernikeExpansion::flat(397.0);
        assert_eq!(empty.eval(0.7, 2.0), 0.0);

        let single = ZernikeExpansion::new(397.0, vec![(idx(2, 0), 1.0)]).unwrap();
        assert!((single.eval(1.0, 0.3) - 1.0).abs() < 1e-15);

        let two = ZernikeExpansion::new(397.0, vec![(idx(2, 0), 0.5), (idx(2, -2), 0.3)]).unwrap();
        assert!((two.eval(1.0, 0.0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn expansion_rejects_duplicates() {
        let dup = ZernikeExpansion::new(397.0, vec![(idx(2, 0), 0.5), (idx(2, 0), 0.1)]);
        assert!(dup.is_err());
    }

    #[test]
    fn twin_flips_even_azimuthal_orders() {
        let e = ZernikeExpansion::new(
            397.0,
            vec![(idx(2, -2), 0.3), (idx(2, 0), 0.2), (idx(3, -1), 0.1)],
        )
        .unwrap();
        let t = e.twin();
        assert_eq!(t.coefficient(idx(2, -2)), Some(-0.3));
        assert_eq!(t.coefficient(idx(2, 0)), Some(-0.2));
        assert_eq!(t.coefficient(idx(3, -1)), Some(0.1));
        assert_eq!(t.twin(), e);
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let e = ZernikeExpansion::new(397.0, vec![(idx(2, -2), 0.31)]).unwrap();
        let back = ZernikeExpansion::from_json(&e.to_json()).unwrap();
        assert_eq!(e, back);

        let with_unknown = r#"{"terms": [], "wavelength_nm": 397.0, "note": "x"}"#;
        assert!(ZernikeExpansion::from_json(with_unknown).is_err());
        let bad_term = r#"{"terms": [{"n": 2, "m": 0, "c": 1.0, "w": 2}], "wavelength_nm": 397.0}"#;
        assert!(ZernikeExpansion::from_json(bad_term).is_err());
        let bad_index = r#"{"terms": [{"n": 2, "m": 1, "c": 1.0}], "wavelength_nm": 397.0}"#;
        assert!(ZernikeExpansion::from_json(bad_index).is_err());
    }

    #[test]
    fn gram_of_piston_is_disc_area() {
        let g = gram_matrix(&[idx(0, 0)], 64, 64);
        assert!((g[(0, 0)] - PI).abs() < 1e-12);
    }

    #[test]
    fn gram_of_tilt_matches_dense_quadrature() {
        // oracle: the same quadrature at 4x the sampling
        let coarse = gram_matrix(&[idx(1, -1)], 128, 128)[(0, 0)];
        let dense = gram_matrix(&[idx(1, -1)], 512, 512)[(0, 0)];
        assert!((coarse - dense).abs() < 1e-4);
        assert!((dense - PI / 4.0).abs() < 1e-5);
    }

    #[test]
    fn distinct_indices_are_orthogonal() {
        let indices = ZernikeIndex::up_to_order(5);
        let g = gram_matrix(&indices, 512, 512);
        for i in 0..indices.len() {
            for j in 0..indices.len() {
                if i != j {
                    let cross = g[(i, j)].abs() / (g[(i, i)] * g[(j, j)]).sqrt();
                    assert!(
                        cross < 1e-3,
                        "({:?}, {:?}) normalized inner product {cross}",
                        indices[i],
                        indices[j]
                    );
                }
            }
        }
    }
}
