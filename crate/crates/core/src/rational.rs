//! The exact scalar the engine is generic over.
//!
//! Valuations, actions and capacity thresholds all need decidable comparison,
//! so the scalar is an ordered field of rationals rather than a float. Both
//! `Ratio<i64>` and `BigRational` qualify; the crate-root aliases pick
//! `BigRational` as the default since elimination can grow coefficients.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{FromPrimitive, Num, Signed};

/// An exact ordered field of rationals.
pub trait Rational:
    Num + Signed + Ord + Clone + Debug + Display + FromStr + FromPrimitive + Send + Sync + 'static
{
    fn from_int(n: i64) -> Self {
        Self::from_i64(n).expect("integer embeds into the rationals")
    }

    fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Self::from_int(num) / Self::from_int(den)
    }

    /// Parses `p/q` or `p`, the textual form used in every JSON artifact.
    fn parse(text: &str) -> Result<Self, ParseRationalError> {
        Self::from_str(text.trim()).map_err(|_| ParseRationalError(text.to_owned()))
    }

    fn half(&self) -> Self {
        self.clone() / Self::from_int(2)
    }
}

impl<T> Rational for T where
    T: Num
        + Signed
        + Ord
        + Clone
        + Debug
        + Display
        + FromStr
        + FromPrimitive
        + Send
        + Sync
        + 'static
{
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a rational number: `{0}`")]
pub struct ParseRationalError(pub String);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Rat, Rat64};

    #[test]
    fn parse_and_print_round_trip() {
        for text in ["3/10", "-7/2", "4", "0", "-12"] {
            let q = Rat::parse(text).unwrap();
            assert_eq!(q.to_string(), text);
            let q64 = Rat64::parse(text).unwrap();
            assert_eq!(q64.to_string(), text);
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(Rat::parse("1.5").is_err());
        assert!(Rat::parse("").is_err());
        assert!(Rat::parse("x/y").is_err());
    }

    #[test]
    fn ratio_reduces() {
        assert_eq!(Rat64::ratio(2, 4), Rat64::ratio(1, 2));
        assert_eq!(Rat64::ratio(-3, 6).to_string(), "-1/2");
    }
}
