//! Exact arithmetic in the Novikov ring and field.
//!
//! A scalar is a finite formal sum `Σ cᵢ T^{λᵢ}` with rational coefficients
//! and strictly increasing rational exponents, optionally carrying a
//! precision `r` meaning "exact modulo T^r". Infinite series are never
//! materialized: anything that would need one (inverses, completions) is
//! computed inside a truncation quotient at a caller-chosen level, and the
//! precision field records the guarantee.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use crate::rational::Rational;

/// One term `c·T^e` of a Novikov scalar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Term<Q> {
    pub coefficient: Q,
    pub exponent: Q,
}

/// Finite formal sum `Σ cᵢ T^{λᵢ}`, exact or exact-modulo-`T^r`.
///
/// Invariants: exponents strictly increasing, no zero coefficients, and all
/// exponents below the precision when one is present. The zero element is
/// the empty sum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NovikovScalar<Q: Rational> {
    terms: Vec<Term<Q>>,
    precision: Option<Q>,
}

/// Valuation of a scalar: minimal exponent, `Infinite` for zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Valuation<Q> {
    Finite(Q),
    Infinite,
}

impl<Q: Rational> Valuation<Q> {
    pub fn is_finite(&self) -> bool {
        matches!(self, Valuation::Finite(_))
    }

    pub fn finite(self) -> Option<Q> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }
}

impl<Q: Rational> PartialOrd for Valuation<Q> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<Q: Rational> Ord for Valuation<Q> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use Valuation::*;
        match (self, other) {
            (Infinite, Infinite) => std::cmp::Ordering::Equal,
            (Infinite, Finite(_)) => std::cmp::Ordering::Greater,
            (Finite(_), Infinite) => std::cmp::Ordering::Less,
            (Finite(a), Finite(b)) => a.cmp(b),
        }
    }
}

/// Positive truncation level `r`, the parameter of the quotient `Λ≥0/Λ≥r`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TruncationLevel<Q>(Q);

impl<Q: Rational> TruncationLevel<Q> {
    pub fn new(r: Q) -> Result<Self, NovikovError> {
        if r <= Q::zero() {
            return Err(NovikovError::InvalidTruncation(r.to_string()));
        }
        Ok(TruncationLevel(r))
    }

    pub fn of_int(r: i64) -> Self {
        Self::new(Q::from_int(r)).expect("positive level")
    }

    pub fn value(&self) -> &Q {
        &self.0
    }

    pub fn scaled(&self, factor: &Q) -> Self {
        TruncationLevel(self.0.clone() * factor.clone())
    }
}

impl<Q: Rational> fmt::Display for TruncationLevel<Q> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NovikovError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("leading term unknown at the available precision")]
    IndeterminateLeadingTerm,
    #[error("truncation level must be positive, got {0}")]
    InvalidTruncation(String),
    #[error("cannot parse Novikov scalar from `{0}`")]
    Parse(String),
}

impl<Q: Rational> NovikovScalar<Q> {
    pub fn zero() -> Self {
        NovikovScalar {
            terms: Vec::new(),
            precision: None,
        }
    }

    pub fn one() -> Self {
        Self::monomial(Q::one(), Q::zero())
    }

    /// `c·T^e`; the zero monomial collapses to the canonical zero.
    pub fn monomial(coefficient: Q, exponent: Q) -> Self {
        if coefficient.is_zero() {
            return Self::zero();
        }
        NovikovScalar {
            terms: vec![Term {
                coefficient,
                exponent,
            }],
            precision: None,
        }
    }

    pub fn from_int(n: i64) -> Self {
        Self::monomial(Q::from_int(n), Q::zero())
    }

    /// Builds a scalar from arbitrary `(coefficient, exponent)` pairs,
    /// merging equal exponents and restoring canonical form.
    pub fn from_terms<I: IntoIterator<Item = (Q, Q)>>(terms: I) -> Self {
        Self::assemble(
            terms
                .into_iter()
                .map(|(c, e)| Term {
                    coefficient: c,
                    exponent: e,
                })
                .collect(),
            None,
        )
    }

    pub fn from_terms_mod<I: IntoIterator<Item = (Q, Q)>>(terms: I, precision: Q) -> Self {
        Self::assemble(
            terms
                .into_iter()
                .map(|(c, e)| Term {
                    coefficient: c,
                    exponent: e,
                })
                .collect(),
            Some(precision),
        )
    }

    fn assemble(mut terms: Vec<Term<Q>>, precision: Option<Q>) -> Self {
        terms.sort_by(|a, b| a.exponent.cmp(&b.exponent));
        let mut merged: Vec<Term<Q>> = Vec::with_capacity(terms.len());
        for t in terms {
            if t.coefficient.is_zero() {
                continue;
            }
            match merged.last_mut() {
                Some(last) if last.exponent == t.exponent => {
                    last.coefficient = last.coefficient.clone() + t.coefficient;
                    if last.coefficient.is_zero() {
                        merged.pop();
                    }
                }
                _ => merged.push(t),
            }
        }
        if let Some(r) = &precision {
            merged.retain(|t| t.exponent < *r);
        }
        NovikovScalar {
            terms: merged,
            precision,
        }
    }

    pub fn terms(&self) -> &[Term<Q>] {
        &self.terms
    }

    pub fn precision(&self) -> Option<&Q> {
        self.precision.as_ref()
    }

    /// True when the known part is empty. An imprecise scalar with empty
    /// known part is "zero as far as we can tell"; [`Self::is_exact_zero`]
    /// distinguishes the canonical zero.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_exact_zero(&self) -> bool {
        self.terms.is_empty() && self.precision.is_none()
    }

    pub fn is_one(&self) -> bool {
        self.precision.is_none()
            && self.terms.len() == 1
            && self.terms[0].exponent.is_zero()
            && self.terms[0].coefficient.is_one()
    }

    /// Minimal exponent with nonzero coefficient, `Infinite` for (known) zero.
    pub fn val(&self) -> Valuation<Q> {
        match self.terms.first() {
            Some(t) => Valuation::Finite(t.exponent.clone()),
            None => Valuation::Infinite,
        }
    }

    /// Leading `(coefficient, exponent)` pair, if any.
    pub fn leading(&self) -> Option<(&Q, &Q)> {
        self.terms.first().map(|t| (&t.coefficient, &t.exponent))
    }

    /// True when `self ≡ 0` modulo `T^r`, to the extent the precision can
    /// certify it.
    pub fn is_zero_mod(&self, r: &TruncationLevel<Q>) -> bool {
        self.terms.iter().all(|t| t.exponent >= *r.value())
    }

    pub fn add(&self, other: &Self) -> Self {
        let precision = min_precision(self.precision.clone(), other.precision.clone());
        let terms = self
            .terms
            .iter()
            .chain(other.terms.iter())
            .cloned()
            .collect();
        Self::assemble(terms, precision)
    }

    pub fn neg(&self) -> Self {
        NovikovScalar {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coefficient: -t.coefficient.clone(),
                    exponent: t.exponent.clone(),
                })
                .collect(),
            precision: self.precision.clone(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_exact_zero() || other.is_exact_zero() {
            return Self::zero();
        }
        // The unknown tail of each factor shifts by the valuation of the
        // other side; the weakest resulting guarantee wins.
        let mut bounds: Vec<Q> = Vec::new();
        if let Some(px) = &self.precision {
            match other.val() {
                Valuation::Finite(v) => bounds.push(px.clone() + v),
                Valuation::Infinite => {}
            }
            if let Some(py) = &other.precision {
                bounds.push(px.clone() + py.clone());
            }
        }
        if let Some(py) = &other.precision {
            match self.val() {
                Valuation::Finite(v) => bounds.push(py.clone() + v),
                Valuation::Infinite => {}
            }
        }
        let precision = bounds.into_iter().min();
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(Term {
                    coefficient: a.coefficient.clone() * b.coefficient.clone(),
                    exponent: a.exponent.clone() + b.exponent.clone(),
                });
            }
        }
        Self::assemble(terms, precision)
    }

    pub fn scale(&self, c: &Q) -> Self {
        if c.is_zero() {
            return NovikovScalar {
                terms: Vec::new(),
                precision: self.precision.clone(),
            };
        }
        NovikovScalar {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coefficient: t.coefficient.clone() * c.clone(),
                    exponent: t.exponent.clone(),
                })
                .collect(),
            precision: self.precision.clone(),
        }
    }

    /// Multiplies all exponents (and the precision) by a positive factor.
    /// This is the scalar-level half of conformal rescaling.
    pub fn scale_exponents(&self, factor: &Q) -> Self {
        assert!(*factor > Q::zero(), "conformal factor must be positive");
        NovikovScalar {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coefficient: t.coefficient.clone(),
                    exponent: t.exponent.clone() * factor.clone(),
                })
                .collect(),
            precision: self.precision.as_ref().map(|p| p.clone() * factor.clone()),
        }
    }

    /// Drops all terms with exponent `≥ r` and records the quotient level.
    pub fn truncate(&self, r: &TruncationLevel<Q>) -> Self {
        let precision = Some(match &self.precision {
            Some(p) if p < r.value() => p.clone(),
            _ => r.value().clone(),
        });
        let terms = self
            .terms
            .iter()
            .filter(|t| t.exponent < *r.value())
            .cloned()
            .collect();
        NovikovScalar { terms, precision }
    }

    /// Inverse of `self` modulo `T^r`, by geometric-series expansion of the
    /// unit part. A single exact term inverts exactly (monomial inverse);
    /// otherwise the result carries precision `min(r, pₓ − val x) − val x`,
    /// which is exactly what makes `x · invert(x, r) ≡ 1 (mod T^r)` hold.
    pub fn invert(&self, r: &TruncationLevel<Q>) -> Result<Self, NovikovError> {
        let Some(lead) = self.terms.first().cloned() else {
            return Err(if self.precision.is_none() {
                NovikovError::DivisionByZero
            } else {
                NovikovError::IndeterminateLeadingTerm
            });
        };
        let v = lead.exponent.clone();
        if let Some(px) = &self.precision {
            if *px <= v {
                return Err(NovikovError::IndeterminateLeadingTerm);
            }
        }
        let lead_inv = Self::monomial(Q::one() / lead.coefficient.clone(), -v.clone());
        if self.terms.len() == 1 && self.precision.is_none() {
            return Ok(lead_inv);
        }
        // w inverts the unit part 1 + z with val z > 0, modulo T^pw.
        let pw = match &self.precision {
            Some(px) => {
                let shifted = px.clone() - v.clone();
                if shifted < *r.value() {
                    shifted
                } else {
                    r.value().clone()
                }
            }
            None => r.value().clone(),
        };
        let pw_level = TruncationLevel::new(pw.clone())?;
        let unit = self.mul(&lead_inv);
        let z = unit.sub(&Self::one());
        let minus_z = z.neg().truncate(&pw_level);
        let mut w = Self::one();
        let mut acc = Self::one();
        loop {
            acc = acc.mul(&minus_z).truncate(&pw_level);
            if acc.is_zero() {
                break;
            }
            w = w.add(&acc);
        }
        let w = NovikovScalar {
            terms: w.terms,
            precision: Some(pw),
        };
        Ok(lead_inv.mul(&w))
    }
}

fn min_precision<Q: Rational>(a: Option<Q>, b: Option<Q>) -> Option<Q> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if x < y { x } else { y }),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    }
}

impl<'a, Q: Rational> Add for &'a NovikovScalar<Q> {
    type Output = NovikovScalar<Q>;
    fn add(self, rhs: Self) -> NovikovScalar<Q> {
        NovikovScalar::add(self, rhs)
    }
}

impl<'a, Q: Rational> Sub for &'a NovikovScalar<Q> {
    type Output = NovikovScalar<Q>;
    fn sub(self, rhs: Self) -> NovikovScalar<Q> {
        NovikovScalar::sub(self, rhs)
    }
}

impl<'a, Q: Rational> Mul for &'a NovikovScalar<Q> {
    type Output = NovikovScalar<Q>;
    fn mul(self, rhs: Self) -> NovikovScalar<Q> {
        NovikovScalar::mul(self, rhs)
    }
}

impl<'a, Q: Rational> Neg for &'a NovikovScalar<Q> {
    type Output = NovikovScalar<Q>;
    fn neg(self) -> NovikovScalar<Q> {
        NovikovScalar::neg(self)
    }
}

impl<Q: Rational> fmt::Display for NovikovScalar<Q> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            write!(f, "0")?;
        } else {
            for (i, t) in self.terms.iter().enumerate() {
                if i > 0 {
                    write!(f, " + ")?;
                }
                if t.exponent.is_zero() {
                    write!(f, "{}", t.coefficient)?;
                } else {
                    write!(f, "{}*T^({})", t.coefficient, t.exponent)?;
                }
            }
        }
        if let Some(r) = &self.precision {
            write!(f, " (mod T^({}))", r)?;
        }
        Ok(())
    }
}

impl<Q: Rational> FromStr for NovikovScalar<Q> {
    type Err = NovikovError;

    fn from_str(input: &str) -> Result<Self, NovikovError> {
        let bad = || NovikovError::Parse(input.to_owned());
        let mut body = input.trim();
        let mut precision = None;
        if let Some(idx) = body.find("(mod ") {
            let suffix = body[idx + 5..].trim_end();
            let suffix = suffix.strip_suffix(')').ok_or_else(bad)?;
            let r = parse_t_power::<Q>(suffix).ok_or_else(bad)?;
            precision = Some(r);
            body = body[..idx].trim_end();
        }
        if body.is_empty() {
            return Err(bad());
        }
        if body == "0" {
            return Ok(NovikovScalar {
                terms: Vec::new(),
                precision,
            });
        }
        let mut terms = Vec::new();
        for piece in body.split('+') {
            let piece = piece.trim();
            if piece.is_empty() {
                return Err(bad());
            }
            let (coeff_text, exp_text) = match piece.find("*T^") {
                Some(i) => (&piece[..i], Some(&piece[i + 3..])),
                None => match piece.strip_prefix("T^") {
                    Some(rest) => ("1", Some(rest)),
                    None => match piece.strip_prefix("-T^") {
                        Some(rest) => ("-1", Some(rest)),
                        None => (piece, None),
                    },
                },
            };
            let coefficient = Q::parse(coeff_text).map_err(|_| bad())?;
            let exponent = match exp_text {
                Some(e) => {
                    let e = e.trim();
                    let e = e
                        .strip_prefix('(')
                        .and_then(|s| s.strip_suffix(')'))
                        .unwrap_or(e);
                    Q::parse(e).map_err(|_| bad())?
                }
                None => Q::zero(),
            };
            terms.push((coefficient, exponent));
        }
        Ok(match precision {
            Some(r) => NovikovScalar::from_terms_mod(terms, r),
            None => NovikovScalar::from_terms(terms),
        })
    }
}

fn parse_t_power<Q: Rational>(text: &str) -> Option<Q> {
    let rest = text.trim().strip_prefix("T^")?;
    let rest = rest.trim();
    let rest = rest
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .unwrap_or(rest);
    Q::parse(rest).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rat64;

    type S = NovikovScalar<Rat64>;

    fn q(n: i64, d: i64) -> Rat64 {
        Rat64::ratio(n, d)
    }

    fn mono(c: i64, num: i64, den: i64) -> S {
        S::monomial(Rat64::from_int(c), q(num, den))
    }

    fn level(num: i64, den: i64) -> TruncationLevel<Rat64> {
        TruncationLevel::new(q(num, den)).unwrap()
    }

    #[test]
    fn val_of_sum_is_min_exponent() {
        // 2T^{1/2} + T^2
        let x = S::from_terms(vec![(q(2, 1), q(1, 2)), (q(1, 1), q(2, 1))]);
        assert_eq!(x.val(), Valuation::Finite(q(1, 2)));
    }

    #[test]
    fn val_of_zero_is_infinite() {
        assert_eq!(S::zero().val(), Valuation::Infinite);
    }

    #[test]
    fn product_valuation_of_units() {
        // (1 − T)(1 + T) = 1 − T², val 0
        let a = S::from_terms(vec![(q(1, 1), q(0, 1)), (q(-1, 1), q(1, 1))]);
        let b = S::from_terms(vec![(q(1, 1), q(0, 1)), (q(1, 1), q(1, 1))]);
        let p = a.mul(&b);
        assert_eq!(
            p,
            S::from_terms(vec![(q(1, 1), q(0, 1)), (q(-1, 1), q(2, 1))])
        );
        assert_eq!(p.val(), Valuation::Finite(q(0, 1)));
    }

    #[test]
    fn addition_cancels() {
        // (T^{1/2} + 2T) + (−T^{1/2}) = 2T
        let a = S::from_terms(vec![(q(1, 1), q(1, 2)), (q(2, 1), q(1, 1))]);
        let b = mono(-1, 1, 2);
        assert_eq!(a.add(&b), mono(2, 1, 1));
    }

    #[test]
    fn telescoping_product() {
        // (1 − T)(1 + T + T²) = 1 − T³
        let a = S::from_terms(vec![(q(1, 1), q(0, 1)), (q(-1, 1), q(1, 1))]);
        let b = S::from_terms(vec![
            (q(1, 1), q(0, 1)),
            (q(1, 1), q(1, 1)),
            (q(1, 1), q(2, 1)),
        ]);
        assert_eq!(
            a.mul(&b),
            S::from_terms(vec![(q(1, 1), q(0, 1)), (q(-1, 1), q(3, 1))])
        );
    }

    #[test]
    fn mul_shifts_precision_of_unknown_tail() {
        // x with precision 1, times the exact monomial T²: precision 3
        let x = S::from_terms_mod(vec![(q(1, 1), q(0, 1))], q(1, 1));
        let t2 = mono(1, 2, 1);
        let p = x.mul(&t2);
        assert_eq!(p.precision(), Some(&q(3, 1)));
        assert_eq!(p.terms().len(), 1);
    }

    #[test]
    fn invert_geometric_series() {
        // invert(1 − T, 3) = 1 + T + T² (mod T³)
        let x = S::from_terms(vec![(q(1, 1), q(0, 1)), (q(-1, 1), q(1, 1))]);
        let y = x.invert(&level(3, 1)).unwrap();
        assert_eq!(
            y,
            S::from_terms_mod(
                vec![(q(1, 1), q(0, 1)), (q(1, 1), q(1, 1)), (q(1, 1), q(2, 1))],
                q(3, 1)
            )
        );
    }

    #[test]
    fn invert_monomial_is_exact() {
        let t = mono(1, 1, 1);
        let y = t.invert(&level(2, 1)).unwrap();
        assert_eq!(y, mono(1, -1, 1));
        assert!(y.precision().is_none());

        let two = S::from_int(2);
        assert_eq!(
            two.invert(&level(1, 1)).unwrap(),
            S::monomial(q(1, 2), q(0, 1))
        );
    }

    #[test]
    fn invert_zero_fails() {
        assert_eq!(
            S::zero().invert(&level(1, 1)),
            Err(NovikovError::DivisionByZero)
        );
    }

    #[test]
    fn truncate_drops_high_terms() {
        let x = S::from_terms(vec![
            (q(1, 1), q(0, 1)),
            (q(1, 1), q(1, 1)),
            (q(1, 1), q(5, 2)),
        ]);
        let t = x.truncate(&level(2, 1));
        assert_eq!(
            t,
            S::from_terms_mod(vec![(q(1, 1), q(0, 1)), (q(1, 1), q(1, 1))], q(2, 1))
        );
        assert_eq!(
            S::zero().truncate(&level(1, 1)),
            S::from_terms_mod(vec![], q(1, 1))
        );
        // an exponent at the cut is dropped
        assert!(mono(1, 3, 10).truncate(&level(3, 10)).is_zero());
    }

    #[test]
    fn display_round_trip() {
        let samples = [
            S::zero(),
            S::one(),
            mono(-1, 1, 2),
            S::from_terms(vec![
                (q(1, 2), q(-1, 1)),
                (q(3, 1), q(0, 1)),
                (q(-2, 3), q(7, 5)),
            ]),
            S::from_terms_mod(vec![(q(1, 1), q(0, 1)), (q(1, 1), q(1, 1))], q(3, 2)),
            S::from_terms_mod(vec![], q(1, 1)),
        ];
        for s in samples {
            let text = s.to_string();
            let back: S = text.parse().unwrap();
            assert_eq!(back, s, "round-trip failed for `{text}`");
        }
    }

    #[test]
    fn parse_tolerates_unparenthesized_exponents() {
        let s: S = "2*T^1/2 + -1*T^(2)".parse().unwrap();
        assert_eq!(
            s,
            S::from_terms(vec![(q(2, 1), q(1, 2)), (q(-1, 1), q(2, 1))])
        );
        let t: S = "T^(1) (mod T^2)".parse().unwrap();
        assert_eq!(t, S::from_terms_mod(vec![(q(1, 1), q(1, 1))], q(2, 1)));
    }
}
