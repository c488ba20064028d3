//! Homology computation over the Novikov ring.
//!
//! Everything here rests on one primitive: Smith-style elimination with the
//! minimal-valuation pivot rule (ties broken by position, and positions are
//! ordered by generator id). Minimal-valuation pivots keep every elimination
//! multiplier inside `Λ≥0`, so kernels and images are honest lattices and the
//! diagonal valuations are the bar lengths of the structure theorem.

use std::collections::BTreeMap;
use std::fmt;

use crate::complex::{Chain, CoefficientMode, GeneratorId, LinearMap, WeightedComplex};
use crate::novikov::{NovikovScalar, TruncationLevel, Valuation};
use crate::rational::Rational;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ReductionError {
    #[error("differential does not square to zero in degree {0}")]
    NotAComplex(i64),
    #[error("chain is not a cycle (degree {0})")]
    NotACycle(i64),
    #[error("vector does not lie in the expected lattice")]
    NotInLattice,
    #[error("map is not a chain map modulo the working precision")]
    NotAChainMap,
    #[error("novikov arithmetic: {0}")]
    Arithmetic(#[from] crate::novikov::NovikovError),
}

// ---------------------------------------------------------------------------
// dense matrices over Novikov scalars
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matrix<Q: Rational> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<NovikovScalar<Q>>,
}

impl<Q: Rational> Matrix<Q> {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![NovikovScalar::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zero(n, n);
        for i in 0..n {
            m.set(i, i, NovikovScalar::one());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> NovikovScalar<Q>) -> Self {
        let mut m = Self::zero(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> &NovikovScalar<Q> {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: NovikovScalar<Q>) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<NovikovScalar<Q>> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zero(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_exact_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.get(k, j);
                    if b.is_exact_zero() {
                        continue;
                    }
                    let sum = out.get(i, j).add(&a.mul(b));
                    out.set(i, j, sum);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[NovikovScalar<Q>]) -> Vec<NovikovScalar<Q>> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = NovikovScalar::zero();
                for j in 0..self.cols {
                    acc = acc.add(&self.get(i, j).mul(&v[j]));
                }
                acc
            })
            .collect()
    }

    pub fn hstack(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows);
        let mut out = Self::zero(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(i, j, self.get(i, j).clone());
            }
            for j in 0..other.cols {
                out.set(i, self.cols + j, other.get(i, j).clone());
            }
        }
        out
    }

    pub fn columns_range(&self, from: usize, to: usize) -> Self {
        let mut out = Self::zero(self.rows, to - from);
        for i in 0..self.rows {
            for j in from..to {
                out.set(i, j - from, self.get(i, j).clone());
            }
        }
        out
    }

    pub fn is_zero_mod(&self, r: &TruncationLevel<Q>) -> bool {
        self.data.iter().all(|s| s.is_zero_mod(r))
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for i in 0..self.rows {
            self.data.swap(i * self.cols + a, i * self.cols + b);
        }
    }

    /// row_i −= q · row_k
    fn row_sub(&mut self, i: usize, k: usize, q: &NovikovScalar<Q>) {
        for j in 0..self.cols {
            let v = self.get(i, j).sub(&q.mul(self.get(k, j)));
            self.set(i, j, v);
        }
    }

    /// col_j −= q · col_k
    fn col_sub(&mut self, j: usize, k: usize, q: &NovikovScalar<Q>) {
        for i in 0..self.rows {
            let v = self.get(i, j).sub(&q.mul(self.get(i, k)));
            self.set(i, j, v);
        }
    }
}

impl<Q: Rational> fmt::Display for Matrix<Q> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            write!(f, "[ ")?;
            for j in 0..self.cols {
                write!(
                    f,
                    "{}{}",
                    self.get(i, j),
                    if j + 1 < self.cols { ", " } else { " " }
                )?;
            }
            writeln!(f, "]")?;
        }
        Ok(())
    }
}

/// `u · a · v = d` with `u, v` unimodular over `Λ≥0` and `d` diagonal with
/// valuations ascending. `uinv` is kept alongside `u` because homology bases
/// are read off its columns.
#[derive(Clone, Debug)]
pub struct SmithForm<Q: Rational> {
    pub d: Matrix<Q>,
    pub rank: usize,
    pub u: Matrix<Q>,
    pub uinv: Matrix<Q>,
    pub v: Matrix<Q>,
}

impl<Q: Rational> SmithForm<Q> {
    pub fn diagonal_valuation(&self, i: usize) -> Q {
        match self.d.get(i, i).val() {
            Valuation::Finite(v) => v,
            Valuation::Infinite => unreachable!("pivots are nonzero"),
        }
    }
}

/// Smith normal form by min-valuation pivoting. The level `r` bounds the
/// precision requested from non-monomial pivot inverses; every zero/nonzero
/// decision on inexact scalars is certified to at least `r`.
pub fn smith<Q: Rational>(a: &Matrix<Q>, r: &TruncationLevel<Q>) -> SmithForm<Q> {
    let mut m = a.clone();
    let mut u = Matrix::identity(m.rows);
    let mut uinv = Matrix::identity(m.rows);
    let mut v = Matrix::identity(m.cols);
    let mut k = 0usize;
    while k < m.rows && k < m.cols {
        let mut pivot: Option<(usize, usize)> = None;
        for i in k..m.rows {
            for j in k..m.cols {
                if m.get(i, j).is_zero() {
                    continue;
                }
                let better = match pivot {
                    None => true,
                    Some((pi, pj)) => m.get(i, j).val() < m.get(pi, pj).val(),
                };
                if better {
                    pivot = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = pivot else { break };
        m.swap_rows(k, pi);
        u.swap_rows(k, pi);
        uinv.swap_cols(k, pi);
        m.swap_cols(k, pj);
        v.swap_cols(k, pj);
        let p = m.get(k, k).clone();
        let p_inv = p.invert(r).expect("pivot is nonzero");
        for i in 0..m.rows {
            if i == k || m.get(i, k).is_zero() {
                continue;
            }
            let q = m.get(i, k).mul(&p_inv);
            m.row_sub(i, k, &q);
            u.row_sub(i, k, &q);
            // (I − q e_ik)^{-1} = I + q e_ik : col k of uinv += q · col i
            for t in 0..uinv.rows {
                let val = uinv.get(t, k).add(&q.mul(uinv.get(t, i)));
                uinv.set(t, k, val);
            }
        }
        for j in 0..m.cols {
            if j == k || m.get(k, j).is_zero() {
                continue;
            }
            let q = m.get(k, j).mul(&p_inv);
            m.col_sub(j, k, &q);
            v.col_sub(j, k, &q);
        }
        k += 1;
    }
    SmithForm {
        rank: k,
        d: m,
        u,
        uinv,
        v,
    }
}

/// Basis of the kernel lattice `{x ∈ Λ≥0^n : a·x = 0}`, as columns.
pub fn kernel_basis<Q: Rational>(a: &Matrix<Q>, r: &TruncationLevel<Q>) -> Matrix<Q> {
    let s = smith(a, r);
    s.v.columns_range(s.rank, a.cols)
}

/// Solves `a·x = b` over `Λ≥0` when a solution exists in the lattice.
pub fn solve_exact<Q: Rational>(
    a: &Matrix<Q>,
    b: &[NovikovScalar<Q>],
    r: &TruncationLevel<Q>,
) -> Option<Vec<NovikovScalar<Q>>> {
    let s = smith(a, r);
    solve_in_span(&s, b, r)
}

fn solve_in_span<Q: Rational>(
    s: &SmithForm<Q>,
    b: &[NovikovScalar<Q>],
    r: &TruncationLevel<Q>,
) -> Option<Vec<NovikovScalar<Q>>> {
    let y = s.u.mul_vec(b);
    let mut z = vec![NovikovScalar::zero(); s.v.rows];
    for (i, yi) in y.iter().enumerate() {
        if yi.is_zero() {
            continue;
        }
        if i >= s.rank {
            return None;
        }
        let p = s.d.get(i, i);
        if yi.val() < p.val() {
            return None;
        }
        z[i] = yi.mul(&p.invert(r).expect("pivot nonzero"));
    }
    Some(s.v.mul_vec(&z))
}

// ---------------------------------------------------------------------------
// finitely presented modules over Λ≥0/T^r
// ---------------------------------------------------------------------------

/// Annihilator order of a class: the least λ with `T^λ·x = 0`, or unbounded
/// at the working precision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClassOrder<Q> {
    Dies(Q),
    Survives,
}

impl<Q: Rational> ClassOrder<Q> {
    pub fn dies_below(&self, r: &TruncationLevel<Q>) -> bool {
        match self {
            ClassOrder::Dies(l) => l < r.value(),
            ClassOrder::Survives => false,
        }
    }
}

/// The module `Λ≥0^dim / (column span of relations + T^r)`.
///
/// Homology groups, images and kernels all funnel into this form: bar
/// decomposition, membership and annihilator orders are read off one Smith
/// form of the augmented relation matrix.
#[derive(Clone, Debug)]
pub struct Presentation<Q: Rational> {
    pub dim: usize,
    pub level: TruncationLevel<Q>,
    relations: Matrix<Q>,
    smith: SmithForm<Q>,
}

impl<Q: Rational> Presentation<Q> {
    pub fn new(dim: usize, relations: &Matrix<Q>, level: TruncationLevel<Q>) -> Self {
        assert_eq!(relations.rows, dim);
        let augmented = relations.hstack(&t_scaled_identity(dim, &level));
        let smith = smith(&augmented, &level);
        Presentation {
            dim,
            level,
            relations: relations.clone(),
            smith,
        }
    }

    /// Bars of the module: lengths in `(0, r)` are finite, length `r` means
    /// "≥ r" and is reported as infinite.
    pub fn bars(&self) -> (usize, Vec<Q>) {
        let mut infinite = 0usize;
        let mut finite = Vec::new();
        for i in 0..self.smith.rank {
            let lam = self.smith.diagonal_valuation(i);
            if lam >= *self.level.value() {
                infinite += 1;
            } else if lam > Q::zero() {
                finite.push(lam);
            }
        }
        finite.sort();
        (infinite, finite)
    }

    /// Least `λ` with `T^λ·[x] = 0` in the module.
    pub fn order_of(&self, x: &[NovikovScalar<Q>]) -> ClassOrder<Q> {
        assert_eq!(x.len(), self.dim);
        let y = self.smith.u.mul_vec(x);
        // the T^r block forces full row rank, so every row has a pivot
        let mut need = Q::zero();
        for (i, yi) in y.iter().enumerate() {
            if yi.is_zero() {
                continue;
            }
            let lam = self.smith.diagonal_valuation(i);
            if let Valuation::Finite(v) = yi.val() {
                if v < lam {
                    let d = lam - v;
                    if d > need {
                        need = d;
                    }
                }
            }
        }
        if need >= *self.level.value() {
            ClassOrder::Survives
        } else {
            ClassOrder::Dies(need)
        }
    }

    pub fn is_zero_class(&self, x: &[NovikovScalar<Q>]) -> bool {
        matches!(self.order_of(x), ClassOrder::Dies(l) if l.is_zero())
    }

    /// Least `λ` such that `T^λ·b` lies in the span of the columns of `map`
    /// inside this module, with a witness solution over the map columns.
    pub fn order_in_image(
        &self,
        map: &Matrix<Q>,
        b: &[NovikovScalar<Q>],
    ) -> (ClassOrder<Q>, Option<Vec<NovikovScalar<Q>>>) {
        assert_eq!(map.rows, self.dim);
        let full = map
            .hstack(&self.relations)
            .hstack(&t_scaled_identity(self.dim, &self.level));
        let s = smith(&full, &self.level);
        let y = s.u.mul_vec(b);
        let mut need = Q::zero();
        for (i, yi) in y.iter().enumerate() {
            if yi.is_zero() {
                continue;
            }
            let lam = if i < s.rank {
                s.diagonal_valuation(i)
            } else {
                self.level.value().clone()
            };
            if let Valuation::Finite(v) = yi.val() {
                if v < lam {
                    let d = lam - v;
                    if d > need {
                        need = d;
                    }
                }
            }
        }
        if need >= *self.level.value() {
            return (ClassOrder::Survives, None);
        }
        let t_need = NovikovScalar::monomial(Q::one(), need.clone());
        let scaled: Vec<_> = b.iter().map(|x| x.mul(&t_need)).collect();
        let witness = solve_in_span(&s, &scaled, &self.level).map(|z| z[..map.cols].to_vec());
        (ClassOrder::Dies(need), witness)
    }

    /// Generators of the kernel of `map : Λ^cols → self`, i.e. vectors whose
    /// image lands in the relation span (including `T^r`). Returned as
    /// columns.
    pub fn kernel_of_map(&self, map: &Matrix<Q>) -> Matrix<Q> {
        assert_eq!(map.rows, self.dim);
        let full = map
            .hstack(&self.relations)
            .hstack(&t_scaled_identity(self.dim, &self.level));
        let k = kernel_basis(&full, &self.level);
        k.rows_range_projection(map.cols)
    }

    /// Kernel of the map into `Λ^dim / relations` over `Λ≥0` itself, without
    /// the ambient `T^r` quotient. This is the honest kernel lattice used by
    /// exactness verification.
    pub fn kernel_of_map_exact(&self, map: &Matrix<Q>) -> Matrix<Q> {
        assert_eq!(map.rows, self.dim);
        let full = map.hstack(&self.relations);
        let k = kernel_basis(&full, &self.level);
        k.rows_range_projection(map.cols)
    }
}

fn t_scaled_identity<Q: Rational>(dim: usize, level: &TruncationLevel<Q>) -> Matrix<Q> {
    let mut tr = Matrix::zero(dim, dim);
    let t_r = NovikovScalar::monomial(Q::one(), level.value().clone());
    for i in 0..dim {
        tr.set(i, i, t_r.clone());
    }
    tr
}

impl<Q: Rational> Matrix<Q> {
    /// Keeps the first `n` rows (projection used for augmented kernels).
    fn rows_range_projection(&self, n: usize) -> Matrix<Q> {
        let mut out = Matrix::zero(n, self.cols);
        for i in 0..n.min(self.rows) {
            for j in 0..self.cols {
                out.set(i, j, self.get(i, j).clone());
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// barcodes
// ---------------------------------------------------------------------------

/// Bars of one degree: free summands (length ≥ r) and torsion lengths.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DegreeBars<Q> {
    pub infinite: usize,
    pub finite: Vec<Q>,
}

/// Homology report over the truncation quotient at `precision`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Barcode<Q: Rational> {
    pub precision: TruncationLevel<Q>,
    pub degrees: BTreeMap<i64, DegreeBars<Q>>,
}

impl<Q: Rational> Barcode<Q> {
    pub fn empty(precision: TruncationLevel<Q>) -> Self {
        Barcode {
            precision,
            degrees: BTreeMap::new(),
        }
    }

    pub fn total_infinite(&self) -> usize {
        self.degrees.values().map(|d| d.infinite).sum()
    }

    pub fn total_finite(&self) -> usize {
        self.degrees.values().map(|d| d.finite.len()).sum()
    }

    /// Count of bars of length ≥ r in the given degree (graded free rank).
    pub fn graded_rank(&self, degree: i64) -> usize {
        self.degrees.get(&degree).map(|d| d.infinite).unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.total_infinite() == 0 && self.total_finite() == 0
    }

    /// No bars of length ≥ r anywhere: acyclic to precision.
    pub fn no_infinite_bars(&self) -> bool {
        self.total_infinite() == 0
    }

    /// Forgets torsion, keeping free ranks only (the Λ-coefficient view).
    pub fn infinite_only(&self) -> Self {
        let degrees = self
            .degrees
            .iter()
            .filter(|(_, b)| b.infinite > 0)
            .map(|(d, b)| {
                (
                    *d,
                    DegreeBars {
                        infinite: b.infinite,
                        finite: Vec::new(),
                    },
                )
            })
            .collect();
        Barcode {
            precision: self.precision.clone(),
            degrees,
        }
    }

    /// Re-truncates all bars at a coarser level.
    pub fn truncated_at(&self, coarser: &TruncationLevel<Q>) -> Self {
        assert!(coarser.value() <= self.precision.value());
        let degrees = self
            .degrees
            .iter()
            .map(|(deg, b)| {
                let mut out = DegreeBars {
                    infinite: b.infinite,
                    finite: Vec::new(),
                };
                for l in &b.finite {
                    if l >= coarser.value() {
                        out.infinite += 1;
                    } else {
                        out.finite.push(l.clone());
                    }
                }
                (*deg, out)
            })
            .filter(|(_, b)| b.infinite > 0 || !b.finite.is_empty())
            .collect();
        Barcode {
            precision: coarser.clone(),
            degrees,
        }
    }

    pub fn insert(&mut self, degree: i64, bars: DegreeBars<Q>) {
        if bars.infinite > 0 || !bars.finite.is_empty() {
            self.degrees.insert(degree, bars);
        }
    }
}

impl<Q: Rational> fmt::Display for Barcode<Q> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "barcode (mod T^{})", self.precision)?;
        for (deg, bars) in &self.degrees {
            write!(f, "\n  degree {deg}: {} infinite", bars.infinite)?;
            if !bars.finite.is_empty() {
                let lens: Vec<String> = bars.finite.iter().map(|l| l.to_string()).collect();
                write!(f, ", finite [{}]", lens.join(", "))?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// homology of a weighted complex
// ---------------------------------------------------------------------------

/// Label of a homology basis class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClassKind {
    Torsion(usize),
    Free(usize),
}

#[derive(Clone, Debug)]
pub struct HomologyClass<Q: Rational> {
    pub degree: i64,
    pub kind: ClassKind,
    /// Representative cycle.
    pub chain: Chain<Q>,
    /// Bar length; `None` for free classes.
    pub order: Option<Q>,
}

struct DegreeData<Q: Rational> {
    ids: Vec<GeneratorId>,
    /// Smith form of the incoming differential.
    incoming: SmithForm<Q>,
    /// Rank of the incoming differential.
    s: usize,
    /// Indices `< s` with positive diagonal valuation: torsion classes.
    torsion_idx: Vec<usize>,
    /// Kernel of the outgoing differential on the complementary coordinates.
    k2: Matrix<Q>,
    k2_smith: SmithForm<Q>,
}

/// Reduction context: deterministic homology bases for one complex.
pub struct Reduction<Q: Rational> {
    complex: WeightedComplex<Q>,
    pub level: TruncationLevel<Q>,
    degrees: BTreeMap<i64, DegreeData<Q>>,
}

/// Gaussian elimination into homology data with minimal-valuation pivots.
/// The barcode lists free summands as bars of length ≥ r and torsion
/// summands `Λ≥0/T^λ` by their exact lengths.
pub fn reduce<Q: Rational>(
    c: &WeightedComplex<Q>,
    r: &TruncationLevel<Q>,
) -> Result<Reduction<Q>, ReductionError> {
    let mut degrees = BTreeMap::new();
    for &deg in c.degrees().iter() {
        let ids = c.ids_of_degree(deg);
        let below = c.ids_of_degree(deg - 1);
        let above = c.ids_of_degree(deg + 1);
        let d_in = differential_matrix(c, &below, &ids);
        let d_out = differential_matrix(c, &ids, &above);
        let incoming = smith(&d_in, r);
        let s = incoming.rank;
        // change source basis to the columns of uinv: the image of the
        // incoming differential becomes diagonal on the first s of them
        let d_out_f = d_out.mul(&incoming.uinv);
        for j in 0..s {
            for i in 0..d_out_f.rows {
                if !d_out_f.get(i, j).is_zero_mod(r) {
                    return Err(ReductionError::NotAComplex(deg));
                }
            }
        }
        let rest = d_out_f.columns_range(s, ids.len());
        let k2 = kernel_basis(&rest, r);
        let k2_smith = smith(&k2, r);
        let torsion_idx = (0..s)
            .filter(|&i| incoming.diagonal_valuation(i) > Q::zero())
            .collect();
        degrees.insert(
            deg,
            DegreeData {
                ids,
                incoming,
                s,
                torsion_idx,
                k2,
                k2_smith,
            },
        );
    }
    Ok(Reduction {
        complex: c.clone(),
        level: r.clone(),
        degrees,
    })
}

fn differential_matrix<Q: Rational>(
    c: &WeightedComplex<Q>,
    sources: &[GeneratorId],
    targets: &[GeneratorId],
) -> Matrix<Q> {
    let target_index: BTreeMap<&GeneratorId, usize> =
        targets.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut m = Matrix::zero(targets.len(), sources.len());
    for (j, src) in sources.iter().enumerate() {
        for (tgt, s) in c.d_of(src) {
            if let Some(&i) = target_index.get(&tgt) {
                m.set(i, j, s.clone());
            }
        }
    }
    m
}

impl<Q: Rational> Reduction<Q> {
    pub fn complex(&self) -> &WeightedComplex<Q> {
        &self.complex
    }

    pub fn barcode(&self) -> Barcode<Q> {
        let field = self.complex.coefficient_mode == CoefficientMode::Field;
        let mut barcode = Barcode::empty(self.level.clone());
        for (&deg, data) in &self.degrees {
            let mut bars = DegreeBars {
                infinite: data.k2.cols,
                finite: Vec::new(),
            };
            if !field {
                for &i in &data.torsion_idx {
                    let lam = data.incoming.diagonal_valuation(i);
                    if lam >= *self.level.value() {
                        bars.infinite += 1;
                    } else {
                        bars.finite.push(lam);
                    }
                }
                bars.finite.sort();
            }
            barcode.insert(deg, bars);
        }
        barcode
    }

    /// Homology basis classes of one degree, torsion classes first.
    pub fn classes(&self, degree: i64) -> Vec<HomologyClass<Q>> {
        let Some(data) = self.degrees.get(&degree) else {
            return Vec::new();
        };
        let field = self.complex.coefficient_mode == CoefficientMode::Field;
        let mut out = Vec::new();
        if !field {
            for (t, &i) in data.torsion_idx.iter().enumerate() {
                let rep = data.incoming.uinv.column(i);
                out.push(HomologyClass {
                    degree,
                    kind: ClassKind::Torsion(t),
                    chain: dense_to_chain(&data.ids, &rep),
                    order: Some(data.incoming.diagonal_valuation(i)),
                });
            }
        }
        for j in 0..data.k2.cols {
            let mut f_coords = vec![NovikovScalar::zero(); data.ids.len()];
            for i in 0..data.k2.rows {
                f_coords[data.s + i] = data.k2.get(i, j).clone();
            }
            let rep = data.incoming.uinv.mul_vec(&f_coords);
            out.push(HomologyClass {
                degree,
                kind: ClassKind::Free(j),
                chain: dense_to_chain(&data.ids, &rep),
                order: None,
            });
        }
        out
    }

    /// Coordinates of a cycle in the homology basis of its degree: torsion
    /// residues (canonicalized below their bar) followed by free coordinates.
    pub fn express(
        &self,
        chain: &Chain<Q>,
        degree: i64,
    ) -> Result<Vec<NovikovScalar<Q>>, ReductionError> {
        let Some(data) = self.degrees.get(&degree) else {
            return if chain.is_empty() {
                Ok(Vec::new())
            } else {
                Err(ReductionError::NotACycle(degree))
            };
        };
        let field = self.complex.coefficient_mode == CoefficientMode::Field;
        let x = chain_to_dense(&data.ids, chain).ok_or(ReductionError::NotInLattice)?;
        let y = data.incoming.u.mul_vec(&x);
        let mut coords = Vec::new();
        if !field {
            for &i in &data.torsion_idx {
                let lam = data.incoming.diagonal_valuation(i);
                let cap = if lam < *self.level.value() {
                    lam
                } else {
                    self.level.value().clone()
                };
                let level = TruncationLevel::new(cap).expect("positive bar");
                coords.push(y[i].truncate(&level));
            }
        }
        let tail: Vec<_> = y[data.s..].to_vec();
        let w = solve_in_span(&data.k2_smith, &tail, &self.level)
            .ok_or(ReductionError::NotACycle(degree))?;
        coords.extend(w.into_iter().take(data.k2.cols));
        Ok(coords)
    }

    /// Presentation of the degree-`deg` homology as a module mod `T^r`,
    /// in the basis order used by [`Self::classes`].
    pub fn presentation(&self, degree: i64) -> Presentation<Q> {
        let (torsion, free) = self.class_counts(degree);
        let dim = torsion + free;
        let mut rels = Matrix::zero(dim, torsion);
        for (t, lam) in self.torsion_orders(degree).into_iter().enumerate() {
            rels.set(t, t, NovikovScalar::monomial(Q::one(), lam));
        }
        Presentation::new(dim, &rels, self.level.clone())
    }

    pub fn class_counts(&self, degree: i64) -> (usize, usize) {
        let field = self.complex.coefficient_mode == CoefficientMode::Field;
        match self.degrees.get(&degree) {
            Some(d) => (if field { 0 } else { d.torsion_idx.len() }, d.k2.cols),
            None => (0, 0),
        }
    }

    pub fn torsion_orders(&self, degree: i64) -> Vec<Q> {
        if self.complex.coefficient_mode == CoefficientMode::Field {
            return Vec::new();
        }
        match self.degrees.get(&degree) {
            Some(d) => d
                .torsion_idx
                .iter()
                .map(|&i| d.incoming.diagonal_valuation(i))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Annihilator order of a cycle's class: least `λ` with `T^λ·[z] = 0`.
    pub fn class_order(
        &self,
        chain: &Chain<Q>,
        degree: i64,
    ) -> Result<ClassOrder<Q>, ReductionError> {
        let coords = self.express(chain, degree)?;
        if coords.is_empty() {
            return Ok(ClassOrder::Dies(Q::zero()));
        }
        let orders = self.torsion_orders(degree);
        let mut need = Q::zero();
        for (t, c) in coords.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let cap = if t < orders.len() {
                if orders[t] < *self.level.value() {
                    orders[t].clone()
                } else {
                    self.level.value().clone()
                }
            } else {
                // free summand: only the ambient T^r quotient kills it
                self.level.value().clone()
            };
            if let Valuation::Finite(v) = c.val() {
                if v < cap {
                    let d = cap - v;
                    if d > need {
                        need = d;
                    }
                }
            }
        }
        if need >= *self.level.value() {
            Ok(ClassOrder::Survives)
        } else {
            Ok(ClassOrder::Dies(need))
        }
    }
}

fn dense_to_chain<Q: Rational>(ids: &[GeneratorId], v: &[NovikovScalar<Q>]) -> Chain<Q> {
    let mut chain = Chain::new();
    for (i, s) in v.iter().enumerate() {
        if !s.is_zero() || s.precision().is_some() {
            chain.insert(ids[i].clone(), s.clone());
        }
    }
    chain
}

fn chain_to_dense<Q: Rational>(
    ids: &[GeneratorId],
    chain: &Chain<Q>,
) -> Option<Vec<NovikovScalar<Q>>> {
    let index: BTreeMap<&GeneratorId, usize> =
        ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut v = vec![NovikovScalar::zero(); ids.len()];
    for (id, s) in chain {
        let &i = index.get(id)?;
        v[i] = s.clone();
    }
    Some(v)
}

// ---------------------------------------------------------------------------
// induced maps on homology
// ---------------------------------------------------------------------------

/// Matrix of a chain map on the chosen homology bases, one block per source
/// degree. Rows are target classes (torsion then free), columns source
/// classes. Deterministic bases make these reproducible bit for bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InducedBlock<Q: Rational> {
    pub src_degree: i64,
    pub tgt_degree: i64,
    pub src_torsion: Vec<Q>,
    pub tgt_torsion: Vec<Q>,
    pub src_free: usize,
    pub tgt_free: usize,
    pub matrix: Matrix<Q>,
}

impl<Q: Rational> InducedBlock<Q> {
    /// The free-to-free submatrix (the Λ-coefficient part of the map).
    pub fn free_block(&self) -> Matrix<Q> {
        let ti = self.tgt_torsion.len();
        let tj = self.src_torsion.len();
        Matrix::from_fn(self.tgt_free, self.src_free, |i, j| {
            self.matrix.get(ti + i, tj + j).clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InducedMap<Q: Rational> {
    pub degree: i64,
    pub blocks: BTreeMap<i64, InducedBlock<Q>>,
}

/// Expresses `f` on the homology bases of `src` and `tgt`. Fails if `f` is
/// not a chain map modulo the working precision.
pub fn induced_map<Q: Rational>(
    f: &LinearMap<Q>,
    src: &Reduction<Q>,
    tgt: &Reduction<Q>,
) -> Result<InducedMap<Q>, ReductionError> {
    let r = &src.level;
    if !f.is_chain_map_graded(src.complex(), tgt.complex(), r) {
        return Err(ReductionError::NotAChainMap);
    }
    let mut blocks = BTreeMap::new();
    let mut all_degrees = src.complex().degrees();
    for d in tgt.complex().degrees() {
        all_degrees.insert(d - f.degree);
    }
    for &deg in all_degrees.iter() {
        let tgt_deg = deg + f.degree;
        let classes = src.classes(deg);
        let (_, src_f) = src.class_counts(deg);
        let (tgt_t, tgt_f) = tgt.class_counts(tgt_deg);
        if classes.is_empty() && tgt_t + tgt_f == 0 {
            continue;
        }
        let mut matrix = Matrix::zero(tgt_t + tgt_f, classes.len());
        for (j, class) in classes.iter().enumerate() {
            let image = f.apply(&class.chain);
            let coords = tgt.express(&image, tgt_deg)?;
            for (i, c) in coords.into_iter().enumerate() {
                matrix.set(i, j, c);
            }
        }
        let src_torsion: Vec<Q> = classes.iter().filter_map(|c| c.order.clone()).collect();
        let tgt_torsion = tgt.torsion_orders(tgt_deg);
        blocks.insert(
            deg,
            InducedBlock {
                src_degree: deg,
                tgt_degree: tgt_deg,
                src_torsion,
                tgt_torsion,
                src_free: src_f,
                tgt_free: tgt_f,
                matrix,
            },
        );
    }
    let mut out = InducedMap {
        degree: f.degree,
        blocks,
    };
    out.canonicalize(r);
    Ok(out)
}

impl<Q: Rational> InducedMap<Q> {
    /// All entries vanish in the target modules, to the working precision.
    pub fn is_zero(&self, r: &TruncationLevel<Q>) -> bool {
        self.blocks.values().all(|b| {
            (0..b.matrix.rows).all(|i| {
                let cap = row_cap(b, i, r);
                match TruncationLevel::new(cap) {
                    Ok(level) => (0..b.matrix.cols).all(|j| b.matrix.get(i, j).is_zero_mod(&level)),
                    Err(_) => true,
                }
            })
        })
    }

    /// Composition `self ∘ first` on homology, canonicalized. Blocks without
    /// source or target classes carry no entries and are dropped.
    pub fn compose(&self, first: &InducedMap<Q>, r: &TruncationLevel<Q>) -> InducedMap<Q> {
        let mut blocks = BTreeMap::new();
        for (&deg, fb) in &first.blocks {
            let Some(sb) = self.blocks.get(&fb.tgt_degree) else {
                continue;
            };
            if sb.matrix.rows == 0 || fb.matrix.cols == 0 {
                continue;
            }
            let matrix = sb.matrix.mul(&fb.matrix);
            blocks.insert(
                deg,
                InducedBlock {
                    src_degree: deg,
                    tgt_degree: sb.tgt_degree,
                    src_torsion: fb.src_torsion.clone(),
                    tgt_torsion: sb.tgt_torsion.clone(),
                    src_free: fb.src_free,
                    tgt_free: sb.tgt_free,
                    matrix,
                },
            );
        }
        let mut out = InducedMap {
            degree: self.degree + first.degree,
            blocks,
        };
        out.canonicalize(r);
        out
    }

    /// Truncates torsion-row entries below their bar, making matrices
    /// directly comparable. Free-row coordinates are unique over `Λ≥0` and
    /// stay exact.
    pub fn canonicalize(&mut self, r: &TruncationLevel<Q>) {
        for b in self.blocks.values_mut() {
            for i in 0..b.tgt_torsion.len().min(b.matrix.rows) {
                let cap = row_cap(b, i, r);
                let Ok(level) = TruncationLevel::new(cap) else {
                    continue;
                };
                for j in 0..b.matrix.cols {
                    let t = b.matrix.get(i, j).truncate(&level);
                    b.matrix.set(i, j, t);
                }
            }
        }
    }

    /// Field-level rank of the block at the given source degree.
    pub fn field_rank(&self, deg: i64, r: &TruncationLevel<Q>) -> usize {
        match self.blocks.get(&deg) {
            Some(b) => smith(&b.free_block(), r).rank,
            None => 0,
        }
    }
}

fn row_cap<Q: Rational>(b: &InducedBlock<Q>, i: usize, r: &TruncationLevel<Q>) -> Q {
    if i < b.tgt_torsion.len() {
        let lam = &b.tgt_torsion[i];
        if lam < r.value() {
            lam.clone()
        } else {
            r.value().clone()
        }
    } else {
        r.value().clone()
    }
}

impl<Q: Rational> LinearMap<Q> {
    /// Chain-map condition `d∘f = (−1)^{deg f}·f∘d` modulo `T^r`.
    pub fn is_chain_map_graded(
        &self,
        src: &WeightedComplex<Q>,
        tgt: &WeightedComplex<Q>,
        r: &TruncationLevel<Q>,
    ) -> bool {
        use crate::complex::{chain_is_zero_mod, chain_of, chain_sub};
        let negate = self.degree.rem_euclid(2) == 1;
        src.generators().iter().all(|g| {
            let mut fd = self.apply(&src.d_of(&g.id));
            let df = tgt.apply_d(&self.apply(&chain_of(&g.id)));
            if negate {
                fd = fd.iter().map(|(id, s)| (id.clone(), s.neg())).collect();
            }
            chain_is_zero_mod(&chain_sub(&fd, &df), r)
        })
    }
}


// ---------------------------------------------------------------------------
// spectral sequence of the u-power filtration
// ---------------------------------------------------------------------------

/// One page of the spectral sequence. Entries are indexed by `(p, q)` where
/// `p` is the filtration level (the u-power) and `q = n + 2p` recovers the
/// internal degree of the base complex, so that with vanishing higher
/// structure maps the second page at `(p, q)` is the degree-q homology of
/// the base.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpectralPage<Q: Rational> {
    pub page: usize,
    pub entries: BTreeMap<(usize, i64), DegreeBars<Q>>,
    /// Rank of the page differential out of each position.
    pub differential_ranks: BTreeMap<(usize, i64), usize>,
}

impl<Q: Rational> SpectralPage<Q> {
    pub fn total_infinite(&self) -> usize {
        self.entries.values().map(|b| b.infinite).sum()
    }

    pub fn total_finite(&self) -> usize {
        self.entries.values().map(|b| b.finite.len()).sum()
    }

    pub fn rank_at(&self, p: usize, q: i64) -> usize {
        self.entries.get(&(p, q)).map(|b| b.infinite).unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct SpectralSequence<Q: Rational> {
    pub precision: TruncationLevel<Q>,
    pub pages: Vec<SpectralPage<Q>>,
}

/// Pages `E_1 .. E_max` of the spectral sequence of an increasing exhaustive
/// filtration given by a level function on generators. The differential must
/// not increase levels.
pub fn spectral_pages<Q: Rational>(
    complex: &WeightedComplex<Q>,
    levels: &BTreeMap<GeneratorId, usize>,
    r: &TruncationLevel<Q>,
    max_page: usize,
) -> Result<SpectralSequence<Q>, ReductionError> {
    let max_level = levels.values().copied().max().unwrap_or(0);
    let degrees: Vec<i64> = complex.degrees().into_iter().collect();
    let mut pages = Vec::new();
    for s in 1..=max_page {
        // cycle lattices and their relation matrices for the whole page
        let mut data: BTreeMap<(usize, i64), (CycleLattice<Q>, Matrix<Q>)> = BTreeMap::new();
        for p in 0..=max_level {
            for &n in &degrees {
                let p = p as i64;
                let s = s as i64;
                let z = cycle_lattice(complex, levels, p, p - s, n, r);
                if z.basis.cols == 0 {
                    continue;
                }
                let below = cycle_lattice(complex, levels, p - 1, p - s, n, r);
                let mut relations = expressed_in(&z, &below, r)?;
                // boundaries of elements reaching down into F_p from above
                let src = cycle_lattice(
                    complex,
                    levels,
                    (p + s - 1).min(max_level as i64),
                    p,
                    n - 1,
                    r,
                );
                let boundaries: Vec<Chain<Q>> = (0..src.basis.cols)
                    .map(|j| complex.apply_d(&src.chain_of_column(j)))
                    .collect();
                let expressed = express_vectors(&z, &boundaries, r)?;
                relations = relations.hstack(&expressed);
                data.insert((p as usize, n), (z, relations));
            }
        }
        let mut entries = BTreeMap::new();
        let mut differential_ranks = BTreeMap::new();
        for (&(p, n), (z, relations)) in &data {
            let pres = Presentation::new(z.basis.cols, relations, r.clone());
            let (infinite, finite) = pres.bars();
            let q = n + 2 * p as i64;
            if infinite > 0 || !finite.is_empty() {
                entries.insert((p, q), DegreeBars { infinite, finite });
            }
            // induced differential into position (p−s, n+1), as a map of
            // page modules: its field rank is rank[M | R_tgt] − rank R_tgt
            if p >= s {
                if let Some((tgt, tgt_rel)) = data.get(&(p - s, n + 1)) {
                    // induced map of page modules
                    let images: Vec<Vec<NovikovScalar<Q>>> = (0..z.basis.cols)
                        .map(|j| {
                            let dchain = complex.apply_d(&z.chain_of_column(j));
                            dense_in(&tgt.ids, &dchain)
                        })
                        .collect();
                    let m = express_vectors_dense(tgt, &images, r)?;
                    let rank_with = smith(&m.hstack(tgt_rel), r).rank;
                    let rank_rel = smith(tgt_rel, r).rank;
                    if rank_with > rank_rel {
                        differential_ranks.insert((p, q), rank_with - rank_rel);
                    }
                }
            }
        }
        pages.push(SpectralPage {
            page: s,
            entries,
            differential_ranks,
        });
    }
    Ok(SpectralSequence {
        precision: r.clone(),
        pages,
    })
}

struct CycleLattice<Q: Rational> {
    ids: Vec<GeneratorId>,
    basis: Matrix<Q>,
    basis_smith: SmithForm<Q>,
}

impl<Q: Rational> CycleLattice<Q> {
    fn chain_of_column(&self, j: usize) -> Chain<Q> {
        let mut chain = Chain::new();
        for (i, id) in self.ids.iter().enumerate() {
            let s = self.basis.get(i, j);
            if !s.is_zero() || s.precision().is_some() {
                chain.insert(id.clone(), s.clone());
            }
        }
        chain
    }
}

/// Basis of `{x ∈ F_src of degree n : dx ∈ F_tgt}` in the coordinates of the
/// degree-n generators of level ≤ src.
fn cycle_lattice<Q: Rational>(
    complex: &WeightedComplex<Q>,
    levels: &BTreeMap<GeneratorId, usize>,
    src_level: i64,
    tgt_level: i64,
    n: i64,
    r: &TruncationLevel<Q>,
) -> CycleLattice<Q> {
    let ids: Vec<GeneratorId> = complex
        .ids_of_degree(n)
        .into_iter()
        .filter(|id| {
            src_level >= 0
                && levels
                    .get(id)
                    .map(|&l| l as i64 <= src_level)
                    .unwrap_or(false)
        })
        .collect();
    let high_rows: Vec<GeneratorId> = complex
        .ids_of_degree(n + 1)
        .into_iter()
        .filter(|id| {
            levels
                .get(id)
                .map(|&l| l as i64 > tgt_level)
                .unwrap_or(false)
        })
        .collect();
    let index: BTreeMap<&GeneratorId, usize> = high_rows
        .iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let mut m = Matrix::zero(high_rows.len(), ids.len());
    for (j, src) in ids.iter().enumerate() {
        for (tgt, v) in complex.d_of(src) {
            if let Some(&i) = index.get(&tgt) {
                m.set(i, j, v);
            }
        }
    }
    let basis = kernel_basis(&m, r);
    let basis_smith = smith(&basis, r);
    CycleLattice {
        ids,
        basis,
        basis_smith,
    }
}

fn dense_in<Q: Rational>(ids: &[GeneratorId], chain: &Chain<Q>) -> Vec<NovikovScalar<Q>> {
    let index: BTreeMap<&GeneratorId, usize> =
        ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let mut v = vec![NovikovScalar::zero(); ids.len()];
    for (id, s) in chain {
        if let Some(&i) = index.get(id) {
            v[i] = s.clone();
        }
    }
    v
}

/// Coordinates of the columns of `sub`'s basis inside `z`'s basis.
fn expressed_in<Q: Rational>(
    z: &CycleLattice<Q>,
    sub: &CycleLattice<Q>,
    r: &TruncationLevel<Q>,
) -> Result<Matrix<Q>, ReductionError> {
    let vectors: Vec<Vec<NovikovScalar<Q>>> = (0..sub.basis.cols)
        .map(|j| {
            let chain = sub.chain_of_column(j);
            dense_in(&z.ids, &chain)
        })
        .collect();
    express_vectors_dense(z, &vectors, r)
}

fn express_vectors<Q: Rational>(
    z: &CycleLattice<Q>,
    chains: &[Chain<Q>],
    r: &TruncationLevel<Q>,
) -> Result<Matrix<Q>, ReductionError> {
    let vectors: Vec<Vec<NovikovScalar<Q>>> = chains.iter().map(|c| dense_in(&z.ids, c)).collect();
    express_vectors_dense(z, &vectors, r)
}

fn express_vectors_dense<Q: Rational>(
    z: &CycleLattice<Q>,
    vectors: &[Vec<NovikovScalar<Q>>],
    r: &TruncationLevel<Q>,
) -> Result<Matrix<Q>, ReductionError> {
    let mut out = Matrix::zero(z.basis.cols, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        let w = solve_in_span(&z.basis_smith, v, r).ok_or(ReductionError::NotInLattice)?;
        for i in 0..z.basis.cols {
            out.set(i, j, w[i].clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod spectral_tests {
    use super::*;
    use crate::complex::{CoefficientMode, EquivariantComplex, Generator, GeneratorKind};
    use crate::Rat64;

    type S = NovikovScalar<Rat64>;

    fn q(n: i64, d: i64) -> Rat64 {
        Rat64::ratio(n, d)
    }

    fn lvl(n: i64) -> TruncationLevel<Rat64> {
        TruncationLevel::of_int(n)
    }

    fn base() -> WeightedComplex<Rat64> {
        // x →(T^{2/5}) y plus a free generator z
        let gens = vec![
            Generator {
                id: GeneratorId::new("x"),
                degree: 0,
                action: q(-2, 5),
                kind: GeneratorKind::NonconstantLower,
                orbit: None,
            },
            Generator {
                id: GeneratorId::new("y"),
                degree: 1,
                action: q(0, 1),
                kind: GeneratorKind::ConstantLower,
                orbit: None,
            },
            Generator {
                id: GeneratorId::new("z"),
                degree: 0,
                action: q(0, 1),
                kind: GeneratorKind::ConstantLower,
                orbit: None,
            },
        ];
        let mut d: BTreeMap<GeneratorId, Chain<Rat64>> = BTreeMap::new();
        let mut col = Chain::new();
        col.insert(GeneratorId::new("y"), S::monomial(q(1, 1), q(2, 5)));
        d.insert(GeneratorId::new("x"), col);
        WeightedComplex::new(gens, d, CoefficientMode::Ring, true).unwrap()
    }

    #[test]
    fn pages_of_a_product_filtration_are_constant() {
        let n_trunc = 2usize;
        let ec = EquivariantComplex::new(base(), n_trunc, vec![], &lvl(1)).unwrap();
        let complex = ec.complex();
        let levels = ec.levels();
        let ss = spectral_pages(&complex, &levels, &lvl(1), 3).unwrap();
        let base_bc = reduce(&base(), &lvl(1)).unwrap().barcode();
        for page in &ss.pages {
            // with no higher structure maps nothing ever differentiates
            assert!(page.differential_ranks.is_empty());
            for p in 0..=n_trunc {
                for (&deg, bars) in &base_bc.degrees {
                    assert_eq!(
                        page.entries.get(&(p, deg)).cloned().unwrap_or_default(),
                        bars.clone(),
                        "page {} at (p={p}, q={deg})",
                        page.page
                    );
                }
            }
        }
        // E_∞ totals equal the homology of the total complex
        let total_bc = reduce(&complex, &lvl(1)).unwrap().barcode();
        let last = ss.pages.last().unwrap();
        assert_eq!(last.total_infinite(), total_bc.total_infinite());
        assert_eq!(last.total_finite(), total_bc.total_finite());
    }

    #[test]
    fn spectral_sequence_of_zero_complex_is_empty() {
        let empty = WeightedComplex::<Rat64>::empty(CoefficientMode::Ring);
        let ss = spectral_pages(&empty, &BTreeMap::new(), &lvl(1), 2).unwrap();
        for page in &ss.pages {
            assert!(page.entries.is_empty());
        }
    }
}
