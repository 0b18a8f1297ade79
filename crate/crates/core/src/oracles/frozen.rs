//! Frozen oracle constants consumed by the test suite.
//!
//! Each value was computed by the named oracle ahead of the main build and
//! is asserted against fresh oracle runs as a regression check. Method tags
//! follow [`super::OracleMethod`].

/// Canonical two-type instance (values +1/-1, uniform prior, sqrt cost),
/// single step of size 0.25.
///
/// Method: binomial fixed point (`oracle_onestep_equilibrium`), iterated to
/// 1e-12; cross-checked against the closed form `Δt sqrt(2)`.
pub const ONESTEP_CANONICAL_Y0: f64 = 0.353_553_390_593_273_8;

/// Filter weight on the high type after the up move `ΔB = +sqrt(Δt)`:
/// `0.5 + 0.5 (1/sqrt(2)) sqrt(0.25)`.
///
/// Method: binomial fixed point, same run as [`ONESTEP_CANONICAL_Y0`].
pub const ONESTEP_CANONICAL_X1_UP: f64 = 0.676_776_695_296_636_9;

/// Filter weight on the high type after the down move.
pub const ONESTEP_CANONICAL_X1_DOWN: f64 = 0.323_223_304_703_363_1;

/// `H(1)` and the arg-max for the sqrt cost, by dense grid sup with
/// golden-section refinement (`oracle_hamiltonian`); they reproduce
/// `sqrt(2)` and `1/sqrt(2)`.
pub const SQRT_HAMILTONIAN_AT_ONE: f64 = 1.414_213_562_373_095_1;
pub const SQRT_FEEDBACK_AT_ONE: f64 = 0.707_106_781_186_547_6;

/// Second moment of the bridge defect `E|Q_t - v|^2` at `(v, t) = (1, 0.5)`:
/// Itô isometry on `(1-t)∫ dB/(1-s)` gives `v²(1-t)² + t(1-t)`.
///
/// Method: closed form (`oracle_bridge_moments`).
pub const BRIDGE_SECOND_MOMENT_V1_T05: f64 = 0.5;
