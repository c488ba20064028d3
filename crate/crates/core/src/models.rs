//! Model builders and the capacity layer.
//!
//! A `ModelSpec` declaratively describes a toy geometry; `Model::build` turns
//! it into a ray of weighted complexes with upper counterparts, a designated
//! fundamental class, and everything the capacity scans need. The disk model
//! realizes the two-copy staircase complex with `dβ_{i+1} = T^Δ γ_i +
//! T^{1−Δ} γ_{i+1}`; abstract staircases make one `Max`/`min` generator pair
//! per Reeb orbit with the bookkeeping grading `−cz`, `−cz − 1`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::complex::{
    chain_of, ActionLevel, Chain, CoefficientMode, ComplexError, EquivariantComplex, Generator,
    GeneratorId, GeneratorKind, LinearMap, OrbitMeta, WeightedComplex,
};
use crate::cubes::{
    completed_telescope_homology, les_from_ses, LesError, LesReport, Ray, StabilizationPolicy,
    TelescopeError,
};
use crate::novikov::{NovikovScalar, TruncationLevel};
use crate::rational::Rational;
use crate::reduction::{
    reduce, spectral_pages, Barcode, ClassOrder, Presentation, ReductionError, SpectralSequence,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReebOrbitSpec<Q> {
    pub period: Q,
    pub cz: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MorseGenerator<Q> {
    pub degree: i64,
    pub action: Q,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelVariant<Q> {
    DiskInSphere {
        delta: Q,
    },
    Staircase {
        half_dim: i64,
        reeb: Vec<ReebOrbitSpec<Q>>,
        morse: Vec<MorseGenerator<Q>>,
    },
    DisjointUnion {
        parts: Vec<ModelSpec<Q>>,
    },
    Scaled {
        factor: Q,
        base: Box<ModelSpec<Q>>,
    },
}

/// Declarative description of a toy geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec<Q> {
    pub variant: ModelVariant<Q>,
    pub orbit_truncation: usize,
    pub index_bounded: bool,
}

/// Designated constant-lower generators whose sum represents the relative
/// fundamental class; the equivariant version pairs it with `u⁰`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FundamentalClass {
    pub parts: Vec<GeneratorId>,
}

#[derive(Clone, Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("operation needs a staircase model")]
    NotStaircase,
    #[error("u-truncation {n} too small for k = {k} (need N ≥ k − 1)")]
    TruncationTooSmall { k: usize, n: usize },
    #[error("capacity scan did not stabilize within {0} slices")]
    NoStabilization(usize),
    #[error(transparent)]
    Complex(#[from] ComplexError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Telescope(#[from] TelescopeError),
    #[error(transparent)]
    Les(#[from] LesError),
}

impl<Q: Rational> ModelSpec<Q> {
    pub fn disk(delta: Q, orbit_truncation: usize) -> Self {
        ModelSpec {
            variant: ModelVariant::DiskInSphere { delta },
            orbit_truncation,
            index_bounded: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.orbit_truncation == 0 {
            return Err(ModelError::InvalidSpec(
                "orbit truncation must be positive".into(),
            ));
        }
        match &self.variant {
            ModelVariant::DiskInSphere { delta } => {
                if *delta <= Q::zero() || *delta >= Q::one() {
                    return Err(ModelError::InvalidSpec(format!(
                        "disk area must lie in (0,1), got {delta}"
                    )));
                }
            }
            ModelVariant::Staircase { reeb, morse, .. } => {
                if morse.is_empty() {
                    return Err(ModelError::InvalidSpec(
                        "staircase needs at least one constant generator".into(),
                    ));
                }
                let top = morse.iter().map(|m| m.degree).max().unwrap();
                if morse.iter().filter(|m| m.degree == top).count() != 1 {
                    return Err(ModelError::InvalidSpec(
                        "top Morse degree must be unique (it carries the fundamental class)".into(),
                    ));
                }
                let min_period = reeb.iter().map(|o| o.period.clone()).min();
                for o in reeb {
                    if o.period <= Q::zero() {
                        return Err(ModelError::InvalidSpec("periods must be positive".into()));
                    }
                }
                for m in morse {
                    if m.action > Q::zero() {
                        return Err(ModelError::InvalidSpec(
                            "constant generators need action ≤ 0".into(),
                        ));
                    }
                    if let Some(p) = &min_period {
                        if -m.action.clone() >= p.half() {
                            return Err(ModelError::InvalidSpec(
                                "constant actions must stay above half the minimal period".into(),
                            ));
                        }
                    }
                }
            }
            ModelVariant::DisjointUnion { parts } => {
                if parts.is_empty() {
                    return Err(ModelError::InvalidSpec("empty disjoint union".into()));
                }
                for p in parts {
                    p.validate()?;
                }
            }
            ModelVariant::Scaled { factor, base } => {
                if *factor <= Q::zero() {
                    return Err(ModelError::InvalidSpec(
                        "scale factor must be positive".into(),
                    ));
                }
                base.validate()?;
            }
        }
        Ok(())
    }
}

/// A built model: slice generator plus fundamental-class bookkeeping.
#[derive(Clone, Debug)]
pub struct Model<Q: Rational> {
    pub spec: ModelSpec<Q>,
    pub fundamental: FundamentalClass,
}

/// Turns a declarative spec into slices, connecting maps and the fundamental
/// class.
pub fn build<Q: Rational>(spec: &ModelSpec<Q>) -> Result<Model<Q>, ModelError> {
    spec.validate()?;
    let fundamental = FundamentalClass {
        parts: fundamental_ids(&spec.variant),
    };
    Ok(Model {
        spec: spec.clone(),
        fundamental,
    })
}

fn fundamental_ids<Q: Rational>(variant: &ModelVariant<Q>) -> Vec<GeneratorId> {
    match variant {
        ModelVariant::DiskInSphere { .. } => {
            vec![GeneratorId::new("c0:g0"), GeneratorId::new("c1:g0")]
        }
        ModelVariant::Staircase { morse, .. } => {
            let top = morse.iter().map(|m| m.degree).max().unwrap();
            let idx = morse.iter().position(|m| m.degree == top).unwrap();
            vec![GeneratorId::new(format!("m{idx}"))]
        }
        ModelVariant::DisjointUnion { parts } => parts
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                fundamental_ids(&p.variant)
                    .into_iter()
                    .map(move |id| id.prefixed(&format!("p{i}")))
            })
            .collect(),
        ModelVariant::Scaled { base, .. } => fundamental_ids(&base.variant),
    }
}

impl<Q: Rational> Model<Q> {
    /// Slice k of the ray, upper counterparts included.
    pub fn slice(&self, k: usize) -> WeightedComplex<Q> {
        build_slice(&self.spec, k)
    }

    /// Connecting chain map `slice(k) → slice(k+1)`.
    pub fn connecting(&self, k: usize) -> LinearMap<Q> {
        build_connecting(&self.spec, k)
    }

    /// Slice with upper orbits removed when the boundary is index-bounded.
    pub fn processed_slice(&self, k: usize) -> WeightedComplex<Q> {
        let s = self.slice(k);
        if self.spec.index_bounded {
            s.prune_upper().expect("flag checked")
        } else {
            s
        }
    }

    pub fn processed_connecting(&self, k: usize) -> LinearMap<Q> {
        let f = self.connecting(k);
        if !self.spec.index_bounded {
            return f;
        }
        let src = self.processed_slice(k);
        let tgt = self.processed_slice(k + 1);
        restrict_map(&f, &src, &tgt)
    }

    /// The (pruned) ray of the model with the requested coefficients.
    pub fn ray(&self, mode: CoefficientMode) -> Ray<Q> {
        let model = Arc::new(self.clone());
        let m1 = model.clone();
        let m2 = model;
        Ray::from_fn(
            move |k| m1.processed_slice(k).with_mode(mode),
            move |k| m2.processed_connecting(k),
        )
    }

    /// Equivariant (u-truncated) slice; structure maps `ψ_{i≥1}` are zero.
    pub fn equivariant_slice(&self, k: usize, n: usize) -> WeightedComplex<Q> {
        EquivariantComplex {
            base: self.processed_slice(k),
            u_truncation: n,
            higher: Vec::new(),
        }
        .complex()
    }

    pub fn equivariant_ray(&self, n: usize, mode: CoefficientMode) -> Ray<Q> {
        let model = Arc::new(self.clone());
        let m1 = model.clone();
        let m2 = model;
        Ray::from_fn(
            move |k| m1.equivariant_slice(k, n).with_mode(mode),
            move |k| u_extend(&m2.processed_connecting(k), n),
        )
    }

    pub fn fundamental_chain(&self) -> Chain<Q> {
        let mut chain = Chain::new();
        for id in &self.fundamental.parts {
            chain.insert(id.clone(), NovikovScalar::one());
        }
        chain
    }

    pub fn fundamental_equivariant_chain(&self) -> Chain<Q> {
        let mut chain = Chain::new();
        for id in &self.fundamental.parts {
            chain.insert(crate::complex::u_generator_id(0, id), NovikovScalar::one());
        }
        chain
    }
}

/// Extends a degree-0 chain map to `id ⊗ f` on u-truncated complexes.
fn u_extend<Q: Rational>(f: &LinearMap<Q>, n: usize) -> LinearMap<Q> {
    let mut columns = BTreeMap::new();
    for k in 0..=n {
        for (src, col) in f.columns() {
            let mapped: Chain<Q> = col
                .iter()
                .map(|(tgt, s)| (crate::complex::u_generator_id(k, tgt), s.clone()))
                .collect();
            columns.insert(crate::complex::u_generator_id(k, src), mapped);
        }
    }
    LinearMap::from_columns(0, columns)
}

/// Restricts a chain map to generators present in the given source and
/// target complexes.
fn restrict_map<Q: Rational>(
    f: &LinearMap<Q>,
    src: &WeightedComplex<Q>,
    tgt: &WeightedComplex<Q>,
) -> LinearMap<Q> {
    let mut columns = BTreeMap::new();
    for (s, col) in f.columns() {
        if !src.contains(s) {
            continue;
        }
        let kept: Chain<Q> = col
            .iter()
            .filter(|(t, _)| tgt.contains(t))
            .map(|(t, v)| (t.clone(), v.clone()))
            .collect();
        if !kept.is_empty() {
            columns.insert(s.clone(), kept);
        }
    }
    LinearMap::from_columns(f.degree, columns)
}

// ---------------------------------------------------------------------------
// slice construction
// ---------------------------------------------------------------------------

fn build_slice<Q: Rational>(spec: &ModelSpec<Q>, k: usize) -> WeightedComplex<Q> {
    match &spec.variant {
        ModelVariant::DiskInSphere { delta } => disk_slice(delta, k, spec.index_bounded),
        ModelVariant::Staircase { reeb, morse, .. } => {
            staircase_slice(reeb, morse, k, spec.index_bounded)
        }
        ModelVariant::DisjointUnion { parts } => {
            let mut total = WeightedComplex::empty(CoefficientMode::Ring);
            total.index_bounded = true;
            for (i, p) in parts.iter().enumerate() {
                let s = build_slice(p, k).prefixed(&format!("p{i}"));
                total = total.direct_sum(&s).expect("prefixed parts are disjoint");
            }
            total
        }
        ModelVariant::Scaled { factor, base } => build_slice(base, k).scale_actions(factor),
    }
}

fn build_connecting<Q: Rational>(spec: &ModelSpec<Q>, k: usize) -> LinearMap<Q> {
    match &spec.variant {
        ModelVariant::DiskInSphere { delta } => disk_connecting(delta, k),
        ModelVariant::Staircase { reeb, morse, .. } => staircase_connecting(reeb, morse, k),
        ModelVariant::DisjointUnion { parts } => {
            let mut columns = BTreeMap::new();
            for (i, p) in parts.iter().enumerate() {
                let f = build_connecting(p, k).prefixed(&format!("p{i}"), &format!("p{i}"));
                for (src, col) in f.columns() {
                    columns.insert(src.clone(), col.clone());
                }
            }
            LinearMap::from_columns(0, columns)
        }
        ModelVariant::Scaled { factor, base } => {
            let f = build_connecting(base, k);
            let columns = f
                .columns()
                .iter()
                .map(|(src, col)| {
                    (
                        src.clone(),
                        col.iter()
                            .map(|(t, s)| (t.clone(), s.scale_exponents(factor)))
                            .collect(),
                    )
                })
                .collect();
            LinearMap::from_columns(0, columns)
        }
    }
}

/// Offset separating the upper copy from the lower part of slice k. It grows
/// with the slice so the uppers stay strictly above every lower generator.
fn upper_offset<Q: Rational>(delta_gap: &Q, k: usize) -> Q {
    let spread = if *delta_gap < Q::zero() {
        -delta_gap.clone()
    } else {
        delta_gap.clone()
    };
    Q::from_int(k as i64 + 2) + spread * Q::from_int(k as i64)
}

/// One copy of the disk staircase: `γ_0..γ_k`, `β_1..β_k` with
/// `dβ_{i+1} = T^Δ γ_i + T^{1−Δ} γ_{i+1}`. Actions are pinned by the energy
/// identity: `A(γ_i) = i(1−2Δ)`, `A(β_{i+1}) = A(γ_i) − Δ`.
fn disk_slice<Q: Rational>(delta: &Q, k: usize, index_bounded: bool) -> WeightedComplex<Q> {
    let gap = Q::one() - Q::from_int(2) * delta.clone(); // γ-action step 1 − 2Δ
    let up = upper_offset(&gap, k);
    let mut generators = Vec::new();
    let mut differential: BTreeMap<GeneratorId, Chain<Q>> = BTreeMap::new();
    for (copy, base_degree) in [("c0", 0i64), ("c1", 1i64)] {
        for upper in [false, true] {
            let gid = |name: &str| {
                if upper {
                    GeneratorId::new(format!("{copy}:u:{name}"))
                } else {
                    GeneratorId::new(format!("{copy}:{name}"))
                }
            };
            let shift = if upper { up.clone() } else { Q::zero() };
            for i in 0..=k {
                let action = gap.clone() * Q::from_int(i as i64) + shift.clone();
                generators.push(Generator {
                    id: gid(&format!("g{i}")),
                    degree: base_degree,
                    action,
                    kind: if upper {
                        GeneratorKind::Upper
                    } else if i == 0 {
                        GeneratorKind::ConstantLower
                    } else {
                        GeneratorKind::NonconstantLower
                    },
                    orbit: None,
                });
            }
            for i in 0..k {
                let action = gap.clone() * Q::from_int(i as i64) - delta.clone() + shift.clone();
                let id = gid(&format!("b{}", i + 1));
                generators.push(Generator {
                    id: id.clone(),
                    degree: base_degree - 1,
                    action,
                    kind: if upper {
                        GeneratorKind::Upper
                    } else {
                        GeneratorKind::NonconstantLower
                    },
                    orbit: None,
                });
                let mut col = Chain::new();
                col.insert(
                    gid(&format!("g{i}")),
                    NovikovScalar::monomial(Q::one(), delta.clone()),
                );
                col.insert(
                    gid(&format!("g{}", i + 1)),
                    NovikovScalar::monomial(Q::one(), Q::one() - delta.clone()),
                );
                differential.insert(id, col);
            }
        }
    }
    WeightedComplex::new(
        generators,
        differential,
        CoefficientMode::Ring,
        index_bounded,
    )
    .expect("disk slice is well-formed")
}

fn disk_connecting<Q: Rational>(delta: &Q, k: usize) -> LinearMap<Q> {
    let gap = Q::one() - Q::from_int(2) * delta.clone();
    let up_now = upper_offset(&gap, k);
    let up_next = upper_offset(&gap, k + 1);
    let bump = up_next - up_now;
    let src = disk_slice(delta, k, true);
    let mut columns = BTreeMap::new();
    for g in src.generators() {
        let mut col = Chain::new();
        let weight = if g.kind == GeneratorKind::Upper {
            NovikovScalar::monomial(Q::one(), bump.clone())
        } else {
            NovikovScalar::one()
        };
        col.insert(g.id.clone(), weight);
        columns.insert(g.id.clone(), col);
    }
    LinearMap::from_columns(0, columns)
}

/// Staircase slice: the first `min(k, all)` orbits in period order, each
/// contributing a `Max`/`min` pair graded `−cz`, `−cz − 1` with action
/// `−period`, plus the constant Morse part and mirrored uppers. The
/// differential is zero: the staircases are generator bookkeeping.
fn staircase_slice<Q: Rational>(
    reeb: &[ReebOrbitSpec<Q>],
    morse: &[MorseGenerator<Q>],
    k: usize,
    index_bounded: bool,
) -> WeightedComplex<Q> {
    let mut sorted: Vec<(usize, &ReebOrbitSpec<Q>)> = reeb.iter().enumerate().collect();
    sorted.sort_by(|a, b| a.1.period.cmp(&b.1.period).then(a.0.cmp(&b.0)));
    let take = k.min(sorted.len());
    let max_period = sorted
        .iter()
        .take(take)
        .map(|(_, o)| o.period.clone())
        .max()
        .unwrap_or_else(Q::zero);
    let up = upper_offset(&max_period, k);
    let mut generators = Vec::new();
    for (idx, m) in morse.iter().enumerate() {
        generators.push(Generator {
            id: GeneratorId::new(format!("m{idx}")),
            degree: m.degree,
            action: m.action.clone(),
            kind: GeneratorKind::ConstantLower,
            orbit: None,
        });
    }
    for (orbit_idx, orbit) in sorted.iter().take(take) {
        for upper in [false, true] {
            let prefix = if upper { "u:" } else { "" };
            let shift = if upper { up.clone() } else { Q::zero() };
            let kind = if upper {
                GeneratorKind::Upper
            } else {
                GeneratorKind::NonconstantLower
            };
            let meta = OrbitMeta {
                reeb_period: orbit.period.clone(),
                reeb_cz: orbit.cz,
            };
            generators.push(Generator {
                id: GeneratorId::new(format!("{prefix}o{orbit_idx}:max")),
                degree: -orbit.cz,
                action: -orbit.period.clone() + shift.clone(),
                kind,
                orbit: Some(meta.clone()),
            });
            generators.push(Generator {
                id: GeneratorId::new(format!("{prefix}o{orbit_idx}:min")),
                degree: -orbit.cz - 1,
                action: -orbit.period.clone() + shift.clone(),
                kind,
                orbit: Some(meta),
            });
        }
    }
    WeightedComplex::new(
        generators,
        BTreeMap::new(),
        CoefficientMode::Ring,
        index_bounded,
    )
    .expect("staircase slice is well-formed")
}

fn staircase_connecting<Q: Rational>(
    reeb: &[ReebOrbitSpec<Q>],
    morse: &[MorseGenerator<Q>],
    k: usize,
) -> LinearMap<Q> {
    let src = staircase_slice(reeb, morse, k, true);
    let tgt = staircase_slice(reeb, morse, k + 1, true);
    let mut columns = BTreeMap::new();
    for g in src.generators() {
        let target = tgt.generator(&g.id).expect("slices grow");
        let gap = target.action.clone() - g.action.clone();
        let mut col = Chain::new();
        col.insert(g.id.clone(), NovikovScalar::monomial(Q::one(), gap));
        columns.insert(g.id.clone(), col);
    }
    LinearMap::from_columns(0, columns)
}

// ---------------------------------------------------------------------------
// homology pipelines
// ---------------------------------------------------------------------------

/// `SH` of the model: prune uppers when justified, then stabilized completed
/// telescope homology modulo `T^r`.
pub fn sh<Q: Rational>(
    spec: &ModelSpec<Q>,
    r: &TruncationLevel<Q>,
    mode: CoefficientMode,
    policy: &StabilizationPolicy,
) -> Result<Barcode<Q>, ModelError> {
    let model = build(spec)?;
    Ok(completed_telescope_homology(&model.ray(mode), r, policy)?)
}

/// Equivariant `SH` at u-truncation `n`.
pub fn sh_equivariant<Q: Rational>(
    spec: &ModelSpec<Q>,
    r: &TruncationLevel<Q>,
    n: usize,
    mode: CoefficientMode,
    policy: &StabilizationPolicy,
) -> Result<Barcode<Q>, ModelError> {
    let model = build(spec)?;
    Ok(completed_telescope_homology(
        &model.equivariant_ray(n, mode),
        r,
        policy,
    )?)
}

/// The long exact sequence of the `U`-map short exact sequence
/// `0 → CF → CF^{S¹} → CF^{S¹}[+2] → 0` at a fixed slice and action level.
pub fn gysin_les<Q: Rational>(
    spec: &ModelSpec<Q>,
    r: &TruncationLevel<Q>,
    n: usize,
    level: &ActionLevel<Q>,
) -> Result<LesReport<Q>, ModelError> {
    let model = build(spec)?;
    let base = model
        .processed_slice(spec.orbit_truncation)
        .action_subcomplex(level);
    let eq = EquivariantComplex {
        base: base.clone(),
        u_truncation: n,
        higher: Vec::new(),
    };
    let mid = eq.complex();
    let include = eq.unit_inclusion();
    let (quot, project) = if n == 0 {
        (
            WeightedComplex::empty(base.coefficient_mode),
            LinearMap::zero(2),
        )
    } else {
        let smaller = EquivariantComplex {
            base: base.clone(),
            u_truncation: n - 1,
            higher: Vec::new(),
        };
        (smaller.complex(), eq.u_map())
    };
    Ok(les_from_ses(&base, &mid, &quot, &include, &project, r)?)
}

/// The action SES `0 → CF^{>−ε} → CF → CF⁻ → 0` at a fixed slice, whose
/// connecting map realizes `δ`. With `n = Some(N)` the complexes are
/// u-extended first.
pub fn delta_les<Q: Rational>(
    spec: &ModelSpec<Q>,
    r: &TruncationLevel<Q>,
    n: Option<usize>,
) -> Result<LesReport<Q>, ModelError> {
    let model = build(spec)?;
    let full = match n {
        Some(n) => model.equivariant_slice(spec.orbit_truncation, n),
        None => model.processed_slice(spec.orbit_truncation),
    };
    let eps = full.default_epsilon();
    let sub = full.action_subcomplex(&ActionLevel::At(-eps.clone()));
    let quot = full.negative_quotient(Some(eps))?;
    let include = LinearMap::inclusion(&sub);
    let mut project = LinearMap::zero(0);
    for g in quot.generators() {
        project.set_column(g.id.clone(), chain_of(&g.id));
    }
    Ok(les_from_ses(&sub, &full, &quot, &include, &project, r)?)
}

/// Spectral sequence of the u-power filtration on the model's equivariant
/// slice.
pub fn spectral_of_model<Q: Rational>(
    spec: &ModelSpec<Q>,
    r: &TruncationLevel<Q>,
    n: usize,
    max_page: usize,
) -> Result<SpectralSequence<Q>, ModelError> {
    let model = build(spec)?;
    let eq = EquivariantComplex {
        base: model.processed_slice(spec.orbit_truncation),
        u_truncation: n,
        higher: Vec::new(),
    };
    Ok(spectral_pages(&eq.complex(), &eq.levels(), r, max_page)?)
}

/// True iff every listed Reeb orbit has `cz ≥ n + 1`.
pub fn is_dynamically_convex<Q: Rational>(spec: &ModelSpec<Q>) -> Result<bool, ModelError> {
    match &spec.variant {
        ModelVariant::Staircase { half_dim, reeb, .. } => {
            Ok(reeb.iter().all(|o| o.cz >= half_dim + 1))
        }
        ModelVariant::Scaled { base, .. } => is_dynamically_convex(base),
        _ => Err(ModelError::NotStaircase),
    }
}

// ---------------------------------------------------------------------------
// capacities
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CapacityValue<Q> {
    Finite(Q),
    Infinite,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Finiteness {
    ProvedFinite,
    StableAtInfinity { budget: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CapacityWitness<Q: Rational> {
    /// The threshold `L*` whose negation is the capacity; the vanishing
    /// holds at every level strictly below it.
    pub level: Q,
    /// Order of vanishing: `T^order · [fundamental]` becomes a boundary.
    pub order: Q,
    /// Primitive certifying the vanishing; its generators sit at actions
    /// `≥ L*`, so it lives in `CF^{>L}` for every `L < L*`.
    pub primitive: Chain<Q>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CapacityReport<Q: Rational> {
    pub value: CapacityValue<Q>,
    pub witness: Option<CapacityWitness<Q>>,
    pub precision: TruncationLevel<Q>,
    pub slices_used: usize,
    pub finiteness: Finiteness,
}

/// One scan step: the vanishing set is downward closed, so the supremum is
/// the upper end of the highest vanishing interval between spectrum values.
struct ScanOutcome<Q: Rational> {
    value: CapacityValue<Q>,
    witness: Option<CapacityWitness<Q>>,
}

impl<Q: Rational> PartialEq for ScanOutcome<Q> {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

/// Candidate levels between consecutive negative spectrum values, one point
/// below the minimum, and the midpoint up to zero; `j_L` only changes when L
/// crosses the spectrum.
fn candidate_levels<Q: Rational>(spectrum: &[Q]) -> Vec<(Q, Q)> {
    let negatives: Vec<Q> = spectrum
        .iter()
        .filter(|a| **a < Q::zero())
        .cloned()
        .collect();
    if negatives.is_empty() {
        return vec![(Q::from_int(-1), Q::zero())];
    }
    let mut out = Vec::new();
    out.push((negatives[0].clone() - Q::one(), negatives[0].clone()));
    for w in negatives.windows(2) {
        out.push(((w[0].clone() + w[1].clone()).half(), w[1].clone()));
    }
    let last = negatives.last().unwrap().clone();
    out.push((last.half(), Q::zero()));
    out
}

/// Whether `T^λ · fundamental` becomes a boundary in the complex for some
/// `λ < r`, with the primitive as a witness. The fundamental chain may be
/// inhomogeneous (one part per copy); every part must die.
fn fundamental_dies<Q: Rational>(
    complex: &WeightedComplex<Q>,
    fund: &Chain<Q>,
    r: &TruncationLevel<Q>,
) -> Option<(Q, Chain<Q>)> {
    let mut by_degree: BTreeMap<i64, Chain<Q>> = BTreeMap::new();
    for (id, s) in fund {
        let g = complex.generator(id)?;
        by_degree
            .entry(g.degree)
            .or_default()
            .insert(id.clone(), s.clone());
    }
    let mut worst = Q::zero();
    let mut pieces: Vec<(Q, Chain<Q>)> = Vec::new();
    for (deg, part) in by_degree {
        let rows = complex.ids_of_degree(deg);
        let cols = complex.ids_of_degree(deg - 1);
        let index: BTreeMap<&GeneratorId, usize> =
            rows.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let mut matrix = crate::reduction::Matrix::zero(rows.len(), cols.len());
        for (j, src) in cols.iter().enumerate() {
            for (tgt, v) in complex.d_of(src) {
                if let Some(&i) = index.get(&tgt) {
                    matrix.set(i, j, v);
                }
            }
        }
        let mut b = vec![NovikovScalar::zero(); rows.len()];
        for (id, s) in &part {
            b[index[id]] = s.clone();
        }
        let pres = Presentation::new(
            rows.len(),
            &crate::reduction::Matrix::zero(rows.len(), 0),
            r.clone(),
        );
        match pres.order_in_image(&matrix, &b) {
            (ClassOrder::Dies(lam), Some(w)) => {
                if lam > worst {
                    worst = lam.clone();
                }
                let mut primitive = Chain::new();
                for (j, id) in cols.iter().enumerate() {
                    if !w[j].is_zero() {
                        primitive.insert(id.clone(), w[j].clone());
                    }
                }
                pieces.push((lam, primitive));
            }
            _ => return None,
        }
    }
    // rescale the per-degree primitives to the common order
    let mut primitive = Chain::new();
    for (lam, piece) in pieces {
        let scale = NovikovScalar::monomial(Q::one(), worst.clone() - lam);
        for (id, s) in piece {
            crate::complex::chain_insert(&mut primitive, id, s.mul(&scale));
        }
    }
    Some((worst, primitive))
}

/// Shared scan-and-stabilize driver for the capacity definitions. The
/// `vanishes` callback decides the fundamental-class condition at one slice
/// and level.
fn capacity_scan<Q: Rational>(
    spec: &ModelSpec<Q>,
    r: &TruncationLevel<Q>,
    policy: &StabilizationPolicy,
    spectrum_of: impl Fn(usize) -> Vec<Q>,
    vanishes: impl Fn(usize, &Q) -> Result<Option<(Q, Chain<Q>)>, ModelError>,
) -> Result<CapacityReport<Q>, ModelError> {
    let _ = spec;
    let mut previous: Option<ScanOutcome<Q>> = None;
    let mut agreement = 1usize;
    for s in 1..=policy.budget {
        let slices_used = s;
        let spectrum = spectrum_of(s);
        let mut outcome = ScanOutcome {
            value: CapacityValue::Infinite,
            witness: None,
        };
        for (level, upper) in candidate_levels(&spectrum).into_iter().rev() {
            if let Some((order, primitive)) = vanishes(s, &level)? {
                outcome = ScanOutcome {
                    value: CapacityValue::Finite(-upper.clone()),
                    witness: Some(CapacityWitness {
                        level: upper,
                        order,
                        primitive,
                    }),
                };
                break;
            }
        }
        match &previous {
            Some(prev) if *prev == outcome => {
                agreement += 1;
                if agreement >= policy.consecutive {
                    let finiteness = match outcome.value {
                        CapacityValue::Finite(_) => Finiteness::ProvedFinite,
                        CapacityValue::Infinite => Finiteness::StableAtInfinity {
                            budget: policy.budget,
                        },
                    };
                    return Ok(CapacityReport {
                        value: outcome.value,
                        witness: outcome.witness,
                        precision: r.clone(),
                        slices_used,
                        finiteness,
                    });
                }
            }
            _ => agreement = 1,
        }
        previous = Some(outcome);
    }
    Err(ModelError::NoStabilization(policy.budget))
}

/// Relative symplectic (co)homology capacity: `−sup{L < 0 : j_L kills the
/// fundamental class}` at precision `r`.
pub fn csh<Q: Rational>(
    spec: &ModelSpec<Q>,
    r: &TruncationLevel<Q>,
    policy: &StabilizationPolicy,
) -> Result<CapacityReport<Q>, ModelError> {
    let model = build(spec)?;
    let fund = model.fundamental_chain();
    let m1 = model.clone();
    let m2 = model;
    capacity_scan(
        spec,
        r,
        policy,
        move |s| m1.processed_slice(s).action_spectrum(),
        move |s, level| {
            let filtered = m2
                .processed_slice(s)
                .action_subcomplex(&ActionLevel::At(level.clone()));
            Ok(fundamental_dies(&filtered, &fund, r))
        },
    )
}

/// k-th relative Gutt-Hutchings capacity. For `k = 1` the condition is the
/// vanishing of `j_L^{S¹}` on `[fund] ⊗ [pt]`; for `k > 1` the equation
/// `δ U^{k−1} ι_L(α) = [fund] ⊗ [pt]` is solved by linear algebra over the
/// truncation quotient.
pub fn cgh<Q: Rational>(
    spec: &ModelSpec<Q>,
    k: usize,
    r: &TruncationLevel<Q>,
    n: usize,
    policy: &StabilizationPolicy,
) -> Result<CapacityReport<Q>, ModelError> {
    if k == 0 {
        return Err(ModelError::InvalidSpec(
            "capacity index k starts at 1".into(),
        ));
    }
    if n + 1 < k {
        return Err(ModelError::TruncationTooSmall { k, n });
    }
    let model = build(spec)?;
    if k == 1 {
        let fund = model.fundamental_equivariant_chain();
        let m1 = model.clone();
        let m2 = model;
        return capacity_scan(
            spec,
            r,
            policy,
            move |s| m1.processed_slice(s).action_spectrum(),
            move |s, level| {
                let filtered = m2
                    .equivariant_slice(s, n)
                    .action_subcomplex(&ActionLevel::At(level.clone()));
                Ok(fundamental_dies(&filtered, &fund, r))
            },
        );
    }
    let m1 = model.clone();
    let m2 = model;
    capacity_scan(
        spec,
        r,
        policy,
        move |s| m1.processed_slice(s).action_spectrum(),
        move |s, level| gh_condition(&m2, s, n, k, level, r),
    )
}

/// Decides `∃α ∈ SH^{S¹,−,>L}: δ U^{k−1} ι_L(α) = T^λ·([fund]⊗[pt])` for
/// some λ below the precision, returning λ and the witness combination.
fn gh_condition<Q: Rational>(
    model: &Model<Q>,
    s: usize,
    n: usize,
    k: usize,
    level: &Q,
    r: &TruncationLevel<Q>,
) -> Result<Option<(Q, Chain<Q>)>, ModelError> {
    let full = model.equivariant_slice(s, n);
    let mut eps = full.default_epsilon();
    let minus_level = -level.clone();
    if eps >= minus_level {
        eps = minus_level.half();
    }
    if full.generators().iter().any(|g| g.action == -eps.clone()) {
        eps = eps.half();
    }
    let sub_morse = full.action_subcomplex(&ActionLevel::At(-eps.clone()));
    let minus = full.negative_quotient(Some(eps.clone()))?;
    let minus_l = full
        .action_subcomplex(&ActionLevel::At(level.clone()))
        .negative_quotient(Some(eps))?;

    let red_morse = reduce(&sub_morse, r)?;
    let red_minus_l = reduce(&minus_l, r)?;

    // U^{k−1} ∘ ι_L at chain level: the inclusion into CF^{S¹,−} followed by
    // u-shifts restricted to it
    let u = EquivariantComplex {
        base: model.processed_slice(s),
        u_truncation: n,
        higher: vec![],
    }
    .u_map();
    let u_minus = restrict_map(&u, &minus, &minus);
    let mut composite = LinearMap::identity(&minus_l);
    for _ in 1..k {
        composite = u_minus.compose(&composite);
    }
    // δ: lift a minus-cycle to the full complex, differentiate, land in the
    // morse part, assembled per homology class of minus_l
    let fund = model.fundamental_equivariant_chain();
    let fund_degrees: Vec<i64> = {
        let mut ds: Vec<i64> = fund
            .keys()
            .filter_map(|id| sub_morse.generator(id).map(|g| g.degree))
            .collect();
        ds.sort();
        ds.dedup();
        ds
    };
    if fund.keys().any(|id| !sub_morse.contains(id)) {
        return Ok(None);
    }
    let mut worst = Q::zero();
    let mut witness = Chain::new();
    for &fdeg in &fund_degrees {
        let src_deg = fdeg - 1 - 2 * (k as i64 - 1);
        let classes = red_minus_l.classes(src_deg);
        let fund_part: Chain<Q> = fund
            .iter()
            .filter(|(id, _)| sub_morse.generator(id).map(|g| g.degree) == Some(fdeg))
            .map(|(id, s)| (id.clone(), s.clone()))
            .collect();
        let fund_coords = red_morse.express(&fund_part, fdeg)?;
        let (t_cnt, f_cnt) = red_morse.class_counts(fdeg);
        let mut matrix = crate::reduction::Matrix::zero(t_cnt + f_cnt, classes.len());
        for (j, class) in classes.iter().enumerate() {
            let moved = composite.apply(&class.chain);
            // canonical lift: same generator names inside the full complex
            let d_lift = full.apply_d(&moved);
            let coords = red_morse.express(&d_lift, fdeg)?;
            for (i, c) in coords.into_iter().enumerate() {
                matrix.set(i, j, c);
            }
        }
        let pres = red_morse.presentation(fdeg);
        let fund_dense: Vec<NovikovScalar<Q>> = fund_coords;
        match pres.order_in_image(&matrix, &fund_dense) {
            (ClassOrder::Dies(lam), Some(w)) => {
                if lam > worst {
                    worst = lam.clone();
                }
                for (j, class) in classes.iter().enumerate() {
                    if !w[j].is_zero() {
                        for (id, s) in crate::complex::chain_scale(&class.chain, &w[j]) {
                            crate::complex::chain_insert(&mut witness, id, s);
                        }
                    }
                }
            }
            _ => return Ok(None),
        }
    }
    Ok(Some((worst, witness)))
}

/// Both sides of the disjoint-union identity, for `csh` and `cgh_k`.
#[derive(Clone, Debug)]
pub struct DisjointCheck<Q: Rational> {
    pub union_value: CapacityValue<Q>,
    pub max_of_parts: CapacityValue<Q>,
    pub equal: bool,
}

fn max_value<Q: Rational>(a: &CapacityValue<Q>, b: &CapacityValue<Q>) -> CapacityValue<Q> {
    match (a, b) {
        (CapacityValue::Infinite, _) | (_, CapacityValue::Infinite) => CapacityValue::Infinite,
        (CapacityValue::Finite(x), CapacityValue::Finite(y)) => {
            CapacityValue::Finite(if x > y { x.clone() } else { y.clone() })
        }
    }
}

pub fn disjoint_capacity_check<Q: Rational>(
    spec_a: &ModelSpec<Q>,
    spec_b: &ModelSpec<Q>,
    gh_index: Option<(usize, usize)>,
    r: &TruncationLevel<Q>,
    policy: &StabilizationPolicy,
) -> Result<DisjointCheck<Q>, ModelError> {
    let union = ModelSpec {
        variant: ModelVariant::DisjointUnion {
            parts: vec![spec_a.clone(), spec_b.clone()],
        },
        orbit_truncation: spec_a.orbit_truncation.max(spec_b.orbit_truncation),
        index_bounded: spec_a.index_bounded && spec_b.index_bounded,
    };
    let (u, a, b) = match gh_index {
        None => (
            csh(&union, r, policy)?.value,
            csh(spec_a, r, policy)?.value,
            csh(spec_b, r, policy)?.value,
        ),
        Some((k, n)) => (
            cgh(&union, k, r, n, policy)?.value,
            cgh(spec_a, k, r, n, policy)?.value,
            cgh(spec_b, k, r, n, policy)?.value,
        ),
    };
    let rhs = max_value(&a, &b);
    let equal = u == rhs;
    Ok(DisjointCheck {
        union_value: u,
        max_of_parts: rhs,
        equal,
    })
}

/// Homology-level restriction-map logic: vanishing of `j_L` propagates along
/// a restriction, and an injective restriction forces equal capacities.
#[derive(Clone, Debug)]
pub struct RestrictionReport<Q: Rational> {
    pub maps_fundamental: bool,
    pub vanishing_propagates: bool,
    pub injective: bool,
    pub csh_source: CapacityValue<Q>,
    pub csh_target: CapacityValue<Q>,
    /// `Some(true/false)` once injectivity licenses the comparison.
    pub capacities_equal: Option<bool>,
}

pub fn restriction_logic_check<Q: Rational>(
    spec_from: &ModelSpec<Q>,
    spec_to: &ModelSpec<Q>,
    restriction: &LinearMap<Q>,
    r: &TruncationLevel<Q>,
    policy: &StabilizationPolicy,
) -> Result<RestrictionReport<Q>, ModelError> {
    let from = build(spec_from)?;
    let to = build(spec_to)?;
    let s = spec_from.orbit_truncation.min(spec_to.orbit_truncation);
    let src = from.processed_slice(s);
    let tgt = to.processed_slice(s);
    let fund_src = from.fundamental_chain();
    let fund_tgt = to.fundamental_chain();
    let maps_fundamental = restriction.apply(&fund_src) == fund_tgt;

    // vanishing propagates: j_L(fund_src) = 0 ⟹ j_L(fund_tgt) = 0 across
    // the union of candidate levels
    let mut spectrum = src.action_spectrum();
    spectrum.extend(tgt.action_spectrum());
    spectrum.sort();
    spectrum.dedup();
    let mut vanishing_propagates = true;
    for (level, _) in candidate_levels(&spectrum) {
        let sv = fundamental_dies(
            &src.action_subcomplex(&ActionLevel::At(level.clone())),
            &fund_src,
            r,
        )
        .is_some();
        let tv = fundamental_dies(
            &tgt.action_subcomplex(&ActionLevel::At(level.clone())),
            &fund_tgt,
            r,
        )
        .is_some();
        if sv && !tv {
            vanishing_propagates = false;
        }
    }

    // injectivity of the induced map with Λ coefficients at this slice
    let red_src = reduce(&src.clone().with_mode(CoefficientMode::Field), r)?;
    let red_tgt = reduce(&tgt.clone().with_mode(CoefficientMode::Field), r)?;
    let induced = crate::reduction::induced_map(restriction, &red_src, &red_tgt)?;
    let mut injective = true;
    for &deg in induced.blocks.keys() {
        let (_, src_free) = red_src.class_counts(deg);
        if src_free == 0 {
            continue;
        }
        if induced.field_rank(deg, r) < src_free {
            injective = false;
        }
    }
    let csh_source = csh(spec_from, r, policy)?.value;
    let csh_target = csh(spec_to, r, policy)?.value;
    let capacities_equal = injective.then(|| csh_source == csh_target);
    Ok(RestrictionReport {
        maps_fundamental,
        vanishing_propagates,
        injective,
        csh_source,
        csh_target,
        capacities_equal,
    })
}

/// Annihilator order of a designated class in the completed limit: the
/// stabilized order of its image in `H(C_{k+w} mod T^r)`.
pub fn class_death_time<Q: Rational>(
    model: &Model<Q>,
    chain: &Chain<Q>,
    degree: i64,
    r: &TruncationLevel<Q>,
    policy: &StabilizationPolicy,
) -> Result<ClassOrder<Q>, ModelError> {
    let mut previous: Option<ClassOrder<Q>> = None;
    let mut agreement = 1usize;
    for k in 1..=policy.budget {
        let far = 2 * k;
        let tgt = model.processed_slice(far);
        let map = {
            let mut acc = LinearMap::identity(&model.processed_slice(k));
            for i in k..far {
                acc = model.processed_connecting(i).compose(&acc);
            }
            acc
        };
        let moved = map.apply(chain);
        let red = reduce(&tgt, r)?;
        let order = red.class_order(&moved, degree)?;
        match &previous {
            Some(prev) if *prev == order => {
                agreement += 1;
                if agreement >= policy.consecutive {
                    return Ok(order);
                }
            }
            _ => agreement = 1,
        }
        previous = Some(order);
    }
    Err(ModelError::NoStabilization(policy.budget))
}
