//! Exact homological algebra over the Novikov ring.
//!
//! The engine computes with formal sums `Σ cᵢ T^{λᵢ}` with rational
//! coefficients and exponents, graded action-weighted chain complexes over
//! them, the homotopical toolbox (cubes, cones, telescopes), valuation-pivot
//! matrix reduction into barcodes, and model builders for the toy geometries
//! whose completed telescope homology and capacities the engine reports.
//!
//! All arithmetic is exact. The scalar layer is generic over the rational
//! type through the [`Rational`] trait; the crate-root aliases fix the
//! default choice used by the models and the CLI.

pub mod complex;
pub mod cubes;
pub mod json;
pub mod models;
pub mod novikov;
pub mod rational;
pub mod reduction;

pub use rational::Rational;

/// Default exact rational scalar (arbitrary precision).
pub type Rat = num_rational::BigRational;
/// Machine-word rationals, handy in tests where values stay small.
pub type Rat64 = num_rational::Rational64;

/// Novikov scalar over the default rationals.
pub type Scalar = novikov::NovikovScalar<Rat>;
/// Weighted complex over the default rationals.
pub type Complex = complex::WeightedComplex<Rat>;
/// Barcode over the default rationals.
pub type Barcode = reduction::Barcode<Rat>;
