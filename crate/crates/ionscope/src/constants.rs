//! Physical constants (CODATA 2018).
//!
//! Every unit conversion in the crate goes through this table so that ion
//! spacings, magnifications and frequencies are all derived from one set of
//! values.

/// Elementary charge, C (exact since the 2019 SI redefinition).
pub const ELEMENTARY_CHARGE_C: f64 = 1.602_176_634e-19;

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY_F_PER_M: f64 = 8.854_187_812_8e-12;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_KG: f64 = 1.660_539_066_60e-27;
