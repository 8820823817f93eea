//! Fourier-optics simulation and Zernike wavefront retrieval for
//! trapped-ion fluorescence imaging.
//!
//! The crate models the full analysis chain of a high-magnification imaging
//! system for single ions and linear Coulomb crystals:
//!
//! * [`zernike`] — wave-aberration expansions on the unit pupil disc
//!   (unnormalized polynomials, cosine branch on negative m);
//! * [`diffraction`] — generalized pupil sampling and FFT propagation to the
//!   unit-energy intensity PSF, with the object-plane pitch calibrated
//!   through the numerical aperture;
//! * [`transfer`] — MTF measurement and analytic references, square-wave
//!   contrast (CTF), bar-target deconvolution, Rayleigh-criterion resolution
//!   at modulation 0.2;
//! * [`scene`] — ion-chain equilibria, three-bar targets, incoherent image
//!   formation and a seeded detector model (pixel integration, shot noise,
//!   read noise);
//! * [`retrieval`] — multi-start damped least-squares recovery of Zernike
//!   coefficients from measured intensity PSF frames, with curvature-based
//!   uncertainties;
//! * [`cli`] — the `ionscope` binary: `psf`, `mtf`, `target`, `chain`,
//!   `fit`, `correct`.
//!
//! # Units and conventions
//!
//! Wavelengths are nm, lengths µm, spatial frequencies mm⁻¹ referred to the
//! object plane, Zernike coefficients in units of the reference wavelength.
//! The pupil phase convention is `exp(-i 2π W)`; intensity metrics are
//! invariant under conjugation, the sign is fixed so fitted coefficient
//! signs are reproducible. All functions are pure; the only randomness is
//! the value-passed seed of [`scene::detect`] and of the fit restart
//! generator.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

// validation guards are written `!(x > 0.0)` so NaN takes the error path
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod constants;
pub mod diffraction;
pub mod error;
pub mod frame;
pub mod retrieval;
pub mod scene;
pub mod transfer;
pub mod zernike;

mod fft2;
mod lm;

pub use error::{Error, Result};
pub use frame::{Axis, Frame, Plane};
