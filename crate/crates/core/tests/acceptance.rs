//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use novhom::complex::{
    chain_of, ActionLevel, Chain, CoefficientMode, Generator, GeneratorId, GeneratorKind,
    LinearMap, WeightedComplex,
};
use novhom::cubes::StabilizationPolicy;
use novhom::cubes::{telescope, Cube, Face, Ray};
use novhom::models::{
    self, build, CapacityValue, Finiteness, ModelSpec, ModelVariant, MorseGenerator, ReebOrbitSpec,
};
use novhom::novikov::{NovikovScalar, TruncationLevel};
use novhom::rational::Rational;
use novhom::reduction::{reduce, smith, Matrix};
use novhom::Rat;
use num_traits::{One, Zero};

type S = NovikovScalar<Rat>;

fn q(n: i64, d: i64) -> Rat {
    Rat::ratio(n, d)
}

fn lvl(n: i64) -> TruncationLevel<Rat> {
    TruncationLevel::of_int(n)
}

fn policy() -> StabilizationPolicy {
    StabilizationPolicy {
        consecutive: 2,
        budget: 24,
    }
}

fn conclude(criterion: usize, description: &str, ok: bool) {
    println!(
        "criterion {criterion}: {} - {description}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {description}");
}

fn disk(delta: Rat) -> ModelSpec<Rat> {
    ModelSpec::disk(delta, 16)
}

fn staircase(orbits: Vec<(Rat, i64)>, half_dim: i64) -> ModelSpec<Rat> {
    ModelSpec {
        variant: ModelVariant::Staircase {
            half_dim,
            reeb: orbits
                .into_iter()
                .map(|(period, cz)| ReebOrbitSpec { period, cz })
                .collect(),
            morse: vec![
                MorseGenerator {
                    degree: 0,
                    action: q(0, 1),
                },
                MorseGenerator {
                    degree: -1,
                    action: q(-1, 50),
                },
            ],
        },
        orbit_truncation: 5,
        index_bounded: true,
    }
}

/// Small deterministic generator for the randomized suites.
struct Rng(u64);

impl Rng {
    fn new(seed: u64) -> Self {
        Rng(seed.max(1))
    }

    fn next(&mut self) -> u64 {
        // xorshift64
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    fn rat(&mut self, max_num: u64, max_den: u64) -> Rat {
        let num = self.below(max_num) + 1;
        let den = self.below(max_den) + 1;
        q(num as i64, den as i64)
    }
}

// --------------------------------------------------------------------- 1

#[test]
fn criterion_01_disk_dichotomy() {
    let mut ok = true;
    for (num, den) in [(1i64, 10i64), (3, 10), (2, 5)] {
        let t = Instant::now();
        let bc = models::sh(
            &disk(q(num, den)),
            &lvl(1),
            CoefficientMode::Field,
            &policy(),
        )
        .expect("stabilizes");
        ok &= bc.total_infinite() == 0;
        ok &= t.elapsed() < Duration::from_secs(1);
    }
    for (num, den) in [(1i64, 2i64), (3, 5), (9, 10)] {
        let t = Instant::now();
        let bc = models::sh(
            &disk(q(num, den)),
            &lvl(1),
            CoefficientMode::Field,
            &policy(),
        )
        .expect("stabilizes");
        ok &= bc.total_infinite() == 2;
        ok &= t.elapsed() < Duration::from_secs(1);
    }
    conclude(1, "disk-in-sphere dichotomy at precision 1", ok);
}

// --------------------------------------------------------------------- 2

#[test]
fn criterion_02_equivariant_disk() {
    let mut ok = true;
    for n in 0..=3usize {
        let t = Instant::now();
        let big = models::sh_equivariant(
            &disk(q(3, 5)),
            &lvl(1),
            n,
            CoefficientMode::Field,
            &policy(),
        )
        .expect("stabilizes");
        ok &= big.total_infinite() == 2 * (n + 1);
        let small = models::sh_equivariant(
            &disk(q(3, 10)),
            &lvl(1),
            n,
            CoefficientMode::Field,
            &policy(),
        )
        .expect("stabilizes");
        ok &= small.total_infinite() == 0;
        ok &= t.elapsed() < Duration::from_secs(2);
    }
    conclude(2, "equivariant disk totals 2(N+1) and 0", ok);
}

// --------------------------------------------------------------------- 3

fn random_staircase(rng: &mut Rng) -> ModelSpec<Rat> {
    let half_dim = 1 + rng.below(2) as i64;
    let count = 1 + rng.below(3) as usize;
    let orbits = (0..count)
        .map(|_| {
            let period = rng.rat(6, 3);
            let cz = half_dim + rng.below(4) as i64; // may dip below n+1
            (period, cz)
        })
        .collect();
    staircase(orbits, half_dim)
}

#[test]
fn criterion_03_gysin_exactness() {
    let mut ok = true;
    let mut rng = Rng::new(7);
    let mut specs = vec![disk(q(3, 10)), disk(q(3, 5))];
    specs[0].orbit_truncation = 3;
    specs[1].orbit_truncation = 3;
    specs.push(random_staircase(&mut rng));
    specs.push(random_staircase(&mut rng));
    for spec in &specs {
        let model = build(spec).expect("valid spec");
        let slice = model.processed_slice(spec.orbit_truncation);
        let spectrum = slice.action_spectrum();
        let mut levels = vec![ActionLevel::NegInfinity];
        // five sampled levels: midpoints straddling the spectrum
        let mut sampled = Vec::new();
        if !spectrum.is_empty() {
            sampled.push(spectrum[0].clone() - Rat::one());
            for w in spectrum.windows(2) {
                sampled.push((w[0].clone() + w[1].clone()).half());
            }
            sampled.push(spectrum.last().unwrap().clone() + Rat::one());
        }
        sampled.truncate(5);
        levels.extend(sampled.into_iter().map(ActionLevel::At));
        for level in levels {
            let report = models::gysin_les(spec, &lvl(1), 2, &level).expect("ses is exact");
            if !report.all_exact() {
                ok = false;
            }
        }
    }
    conclude(
        3,
        "U-map long exact sequence exact at every node and level",
        ok,
    );
}

// --------------------------------------------------------------------- 4

#[test]
fn criterion_04_spectral_second_page() {
    let mut ok = true;
    let n = 2usize;
    for spec in [
        disk(q(3, 10)),
        disk(q(3, 5)),
        staircase(vec![(q(1, 1), 2)], 1),
    ] {
        let mut spec = spec;
        spec.orbit_truncation = 3;
        let model = build(&spec).expect("valid");
        let base = model.processed_slice(spec.orbit_truncation);
        let base_bars = reduce(&base, &lvl(1)).expect("reduces").barcode();
        let ss = models::spectral_of_model(&spec, &lvl(1), n, n + 2).expect("pages");
        let e2 = &ss.pages[1];
        for p in 0..=n {
            for (&deg, bars) in &base_bars.degrees {
                let got = e2.entries.get(&(p, deg)).cloned().unwrap_or_default();
                if got != *bars {
                    ok = false;
                }
            }
        }
        let last = ss.pages.last().unwrap();
        let eq = model.equivariant_slice(spec.orbit_truncation, n);
        let total = reduce(&eq, &lvl(1)).expect("reduces").barcode();
        ok &= last.total_infinite() == total.total_infinite();
        ok &= last.total_finite() == total.total_finite();
    }
    conclude(
        4,
        "second page is H(BS1)-constant in p; E_inf matches homology",
        ok,
    );
}

// --------------------------------------------------------------------- 5

/// A random model together with a precision adequate for it: rescaling by a
/// conformal factor stretches every exponent, so the truncation level must
/// stretch along or nothing is visible modulo T^r.
fn random_model(rng: &mut Rng) -> (ModelSpec<Rat>, TruncationLevel<Rat>) {
    match rng.below(4) {
        0 => {
            let num = 1 + rng.below(9) as i64;
            (disk(q(num, 10)), lvl(1))
        }
        1 => (random_staircase(rng), lvl(1)),
        2 => {
            let base = if rng.below(2) == 0 {
                disk(q(1 + rng.below(9) as i64, 10))
            } else {
                random_staircase(rng)
            };
            let factor = rng.rat(3, 2);
            let precision = TruncationLevel::new(factor.clone()).expect("positive factor");
            let spec = ModelSpec {
                orbit_truncation: base.orbit_truncation,
                index_bounded: base.index_bounded,
                variant: ModelVariant::Scaled {
                    factor,
                    base: Box::new(base),
                },
            };
            (spec, precision)
        }
        _ => {
            let a = disk(q(1 + rng.below(9) as i64, 10));
            let b = random_staircase(rng);
            let spec = ModelSpec {
                orbit_truncation: a.orbit_truncation.max(b.orbit_truncation),
                index_bounded: true,
                variant: ModelVariant::DisjointUnion { parts: vec![a, b] },
            };
            (spec, lvl(1))
        }
    }
}

#[test]
fn criterion_05_vanishing_equivalence() {
    let mut ok = true;
    let mut rng = Rng::new(1105);
    for _ in 0..20 {
        let (spec, r) = random_model(&mut rng);
        let plain = models::sh(&spec, &r, CoefficientMode::Field, &policy()).expect("stabilizes");
        let equivariant = models::sh_equivariant(&spec, &r, 2, CoefficientMode::Field, &policy())
            .expect("stabilizes");
        if plain.is_zero() != equivariant.is_zero() {
            ok = false;
        }
    }
    conclude(
        5,
        "SH(Λ) = 0 iff equivariant SH(Λ) = 0 across 20 random models",
        ok,
    );
}

// --------------------------------------------------------------------- 6

fn value_le(a: &CapacityValue<Rat>, b: &CapacityValue<Rat>) -> bool {
    match (a, b) {
        (_, CapacityValue::Infinite) => true,
        (CapacityValue::Infinite, CapacityValue::Finite(_)) => false,
        (CapacityValue::Finite(x), CapacityValue::Finite(y)) => x <= y,
    }
}

fn scale_value(v: &CapacityValue<Rat>, factor: &Rat) -> CapacityValue<Rat> {
    match v {
        CapacityValue::Finite(x) => CapacityValue::Finite(x.clone() * factor.clone()),
        CapacityValue::Infinite => CapacityValue::Infinite,
    }
}

#[test]
fn criterion_06_capacity_axioms() {
    let start = Instant::now();
    let mut ok = true;
    let suite = vec![
        disk(q(1, 10)),
        disk(q(3, 10)),
        disk(q(2, 5)),
        disk(q(3, 5)),
        staircase(vec![(q(1, 1), 2)], 1),
        staircase(vec![(q(1, 2), 3), (q(5, 4), 2)], 1),
    ];
    // conformality, for csh and the first two GH capacities
    for spec in &suite {
        let factor = q(2, 1);
        let scaled = ModelSpec {
            orbit_truncation: spec.orbit_truncation,
            index_bounded: spec.index_bounded,
            variant: ModelVariant::Scaled {
                factor: factor.clone(),
                base: Box::new(spec.clone()),
            },
        };
        let base = models::csh(spec, &lvl(1), &policy()).expect("scan");
        let big = models::csh(&scaled, &lvl(2), &policy()).expect("scan");
        ok &= big.value == scale_value(&base.value, &factor);
        for k in 1..=2usize {
            let base = models::cgh(spec, k, &lvl(1), 3, &policy()).expect("scan");
            let big = models::cgh(&scaled, k, &lvl(2), 3, &policy()).expect("scan");
            ok &= big.value == scale_value(&base.value, &factor);
        }
    }
    // U-nesting monotonicity in k, and the comparison with csh
    for spec in &suite {
        let c_sh = models::csh(spec, &lvl(1), &policy()).expect("scan");
        let mut previous: Option<CapacityValue<Rat>> = None;
        for k in 1..=4usize {
            let c_k = models::cgh(spec, k, &lvl(1), 3, &policy()).expect("scan");
            if let Some(prev) = &previous {
                ok &= value_le(prev, &c_k.value);
            }
            if k == 1 {
                ok &= value_le(&c_k.value, &c_sh.value);
            }
            previous = Some(c_k.value);
        }
    }
    // monotonicity across nested disks (the model-level embedding)
    let small = models::csh(&disk(q(1, 10)), &lvl(1), &policy()).expect("scan");
    let large = models::csh(&disk(q(2, 5)), &lvl(1), &policy()).expect("scan");
    ok &= value_le(&small.value, &large.value);
    // disjoint union = max
    for (a, b) in [
        (disk(q(1, 5)), disk(q(3, 10))),
        (disk(q(3, 10)), disk(q(3, 5))),
        (disk(q(1, 10)), staircase(vec![(q(1, 1), 2)], 1)),
    ] {
        let check =
            models::disjoint_capacity_check(&a, &b, None, &lvl(1), &policy()).expect("scan");
        ok &= check.equal;
        let check = models::disjoint_capacity_check(&a, &b, Some((1, 2)), &lvl(1), &policy())
            .expect("scan");
        ok &= check.equal;
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(10);
    conclude(
        6,
        "conformality, U-nesting, csh comparison, disjoint union = max",
        ok,
    );
}

// --------------------------------------------------------------------- 7

#[test]
fn criterion_07_convexity_equality() {
    let mut ok = true;
    let convex = vec![
        staircase(vec![(q(1, 1), 2)], 1),
        staircase(vec![(q(1, 2), 3), (q(3, 2), 2)], 1),
        staircase(vec![(q(1, 1), 3), (q(2, 1), 4)], 2),
        staircase(vec![(q(2, 3), 2), (q(4, 3), 2), (q(5, 3), 3)], 1),
        staircase(vec![(q(1, 4), 5)], 2),
    ];
    for spec in &convex {
        ok &= models::is_dynamically_convex(spec).expect("staircase");
        let gh1 = models::cgh(spec, 1, &lvl(1), 2, &policy()).expect("scan");
        let sh = models::csh(spec, &lvl(1), &policy()).expect("scan");
        ok &= gh1.value == sh.value;
        // the grading-vanishing premise holds: no classes in degrees ≥ −n
        let n = match &spec.variant {
            ModelVariant::Staircase { half_dim, .. } => *half_dim,
            _ => unreachable!(),
        };
        ok &= minus_part_rank_at_or_above(spec, -n).expect("reduces") == 0;
    }
    // a non-convex spec must break the premise of the grading lemma
    let nonconvex = staircase(vec![(q(1, 1), 1)], 1);
    ok &= !models::is_dynamically_convex(&nonconvex).expect("staircase");
    ok &= minus_part_rank_at_or_above(&nonconvex, -1).expect("reduces") > 0;
    conclude(
        7,
        "cgh(1) = csh on convex staircases; premise fails on a non-convex one",
        ok,
    );
}

/// Total graded rank of the negative equivariant part in degrees ≥ floor.
fn minus_part_rank_at_or_above(
    spec: &ModelSpec<Rat>,
    floor: i64,
) -> Result<usize, models::ModelError> {
    let model = build(spec)?;
    let eq = model.equivariant_slice(spec.orbit_truncation, 2);
    let sampled = ActionLevel::At(q(-10, 1));
    let minus = eq.action_subcomplex(&sampled).negative_quotient(None)?;
    let barcode = reduce(&minus.with_mode(CoefficientMode::Field), &lvl(1))?.barcode();
    Ok(barcode
        .degrees
        .iter()
        .filter(|(deg, _)| **deg >= floor)
        .map(|(_, bars)| bars.infinite)
        .sum())
}

// --------------------------------------------------------------------- 8

#[test]
fn criterion_08_finiteness_with_witness() {
    let mut ok = true;
    let mut rng = Rng::new(808);
    let mut suite: Vec<(ModelSpec<Rat>, TruncationLevel<Rat>)> =
        (0..10).map(|_| random_model(&mut rng)).collect();
    suite.push((disk(q(3, 10)), lvl(1)));
    suite.push((disk(q(1, 10)), lvl(1)));
    let mut exercised = 0usize;
    for (spec, r) in &suite {
        let bc = models::sh(spec, r, CoefficientMode::Field, &policy()).expect("stabilizes");
        if !bc.is_zero() {
            continue;
        }
        exercised += 1;
        let report = models::csh(spec, r, &policy()).expect("scan");
        let CapacityValue::Finite(value) = &report.value else {
            ok = false;
            continue;
        };
        ok &= report.finiteness == Finiteness::ProvedFinite;
        // the witness is an explicit primitive: d(w) = T^order · fundamental
        let Some(witness) = &report.witness else {
            ok = false;
            continue;
        };
        ok &= *value == -witness.level.clone();
        let model = build(spec).expect("valid");
        let slice = model.processed_slice(report.slices_used);
        let lhs = slice.apply_d(&witness.primitive);
        let mut rhs: Chain<Rat> = Chain::new();
        let t_order = S::monomial(Rat::one(), witness.order.clone());
        for id in &model.fundamental.parts {
            rhs.insert(id.clone(), t_order.clone());
        }
        let diff = novhom::complex::chain_sub(&lhs, &rhs);
        ok &= novhom::complex::chain_is_zero_mod(&diff, r);
    }
    ok &= exercised >= 3;
    conclude(
        8,
        "vanishing SH forces a finite csh with an explicit witness",
        ok,
    );
}

// --------------------------------------------------------------------- 9

/// Naive fraction arithmetic over the Novikov field: numerator/denominator
/// pairs of finite sums. Used only as an independent oracle.
#[derive(Clone)]
struct Frac {
    num: S,
    den: S,
}

impl Frac {
    fn of(num: S) -> Frac {
        Frac { num, den: S::one() }
    }

    fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    fn sub_mul(&self, coeff: &Frac, other: &Frac) -> Frac {
        // self − coeff·other
        let num = self
            .num
            .mul(&coeff.den)
            .mul(&other.den)
            .sub(&coeff.num.mul(&other.num).mul(&self.den));
        let den = self.den.mul(&coeff.den).mul(&other.den);
        Frac { num, den }
    }

    fn div(&self, other: &Frac) -> Frac {
        Frac {
            num: self.num.mul(&other.den),
            den: self.den.mul(&other.num),
        }
    }
}

/// Textbook row reduction over the fraction field; returns the rank.
fn fraction_field_rank(matrix: &Matrix<Rat>) -> usize {
    let mut rows: Vec<Vec<Frac>> = (0..matrix.rows)
        .map(|i| {
            (0..matrix.cols)
                .map(|j| Frac::of(matrix.get(i, j).clone()))
                .collect()
        })
        .collect();
    let mut rank = 0;
    for col in 0..matrix.cols {
        let Some(pivot_row) = (rank..rows.len()).find(|&i| !rows[i][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, pivot_row);
        let pivot = rows[rank][col].clone();
        for i in 0..rows.len() {
            if i == rank || rows[i][col].is_zero() {
                continue;
            }
            let factor = rows[i][col].div(&pivot);
            for j in col..matrix.cols {
                let upd = rows[i][j].sub_mul(&factor, &rows[rank][j]);
                rows[i][j] = upd;
            }
        }
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    rank
}

fn random_complex(rng: &mut Rng, max_gens: usize) -> WeightedComplex<Rat> {
    // two layers with monomial entries whose valuation equals the action gap
    let lower = 1 + rng.below(max_gens as u64 / 2) as usize;
    let upper = 1 + rng.below(max_gens as u64 / 2) as usize;
    let mut generators = Vec::new();
    let mut actions = BTreeMap::new();
    for i in 0..lower {
        let action = -rng.rat(8, 4);
        actions.insert(format!("x{i}"), action.clone());
        generators.push(Generator {
            id: GeneratorId::new(format!("x{i}")),
            degree: 0,
            action,
            kind: GeneratorKind::NonconstantLower,
            orbit: None,
        });
    }
    for j in 0..upper {
        let action = rng.rat(8, 4) - q(1, 1);
        actions.insert(format!("y{j}"), action.clone());
        generators.push(Generator {
            id: GeneratorId::new(format!("y{j}")),
            degree: 1,
            action,
            kind: GeneratorKind::NonconstantLower,
            orbit: None,
        });
    }
    let mut differential: BTreeMap<GeneratorId, Chain<Rat>> = BTreeMap::new();
    for i in 0..lower {
        let mut chain = Chain::new();
        for j in 0..upper {
            if rng.below(3) == 0 {
                continue; // keep it sparse
            }
            let gap = actions[&format!("y{j}")].clone() - actions[&format!("x{i}")].clone();
            if gap < Rat::zero() {
                continue;
            }
            let coeff = q(1 + rng.below(5) as i64, 1 + rng.below(3) as i64);
            let sign = if rng.below(2) == 0 {
                Rat::one()
            } else {
                -Rat::one()
            };
            chain.insert(
                GeneratorId::new(format!("y{j}")),
                S::monomial(coeff * sign, gap),
            );
        }
        if !chain.is_empty() {
            differential.insert(GeneratorId::new(format!("x{i}")), chain);
        }
    }
    WeightedComplex::new(generators, differential, CoefficientMode::Field, false).unwrap()
}

#[test]
fn criterion_09_oracle_equivalence() {
    let mut ok = true;
    let mut rng = Rng::new(909);
    // reduce over Λ versus independent fraction-field row reduction
    for _ in 0..200 {
        let c = random_complex(&mut rng, 12);
        let barcode = reduce(&c, &lvl(1)).expect("reduces").barcode();
        let lower = c.ids_of_degree(0);
        let upper = c.ids_of_degree(1);
        let mut matrix = Matrix::<Rat>::zero(upper.len(), lower.len());
        let index: BTreeMap<_, _> = upper
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        for (j, src) in lower.iter().enumerate() {
            for (tgt, s) in c.d_of(src) {
                matrix.set(index[&tgt], j, s);
            }
        }
        let rank = fraction_field_rank(&matrix);
        ok &= barcode.graded_rank(0) == lower.len() - rank;
        ok &= barcode.graded_rank(1) == upper.len() - rank;
        // Euler characteristic: alternating free ranks equal the alternating
        // generator counts; each finite bar cancels one generator pair.
        let ring = reduce(&c.clone().with_mode(CoefficientMode::Ring), &lvl(1))
            .expect("reduces")
            .barcode();
        let free_euler: i64 = barcode.graded_rank(0) as i64 - barcode.graded_rank(1) as i64;
        let gens: i64 = lower.len() as i64 - upper.len() as i64;
        ok &= free_euler == gens;
        ok &= ring.total_infinite() >= barcode.total_infinite();
        // at a level above every torsion bar the ring free ranks match Λ
        let coarse = reduce(&c.clone().with_mode(CoefficientMode::Ring), &lvl(100))
            .expect("reduces")
            .barcode();
        ok &= coarse.total_infinite() == barcode.total_infinite();
    }
    // telescope homology agrees with the direct colimit (the last slice)
    let mut rng = Rng::new(910);
    for _ in 0..50 {
        let slices = 2 + rng.below(3) as usize;
        let mut complexes = vec![random_complex(&mut rng, 8).with_mode(CoefficientMode::Ring)];
        let mut maps = Vec::new();
        for _ in 1..slices {
            let extra = random_complex(&mut rng, 6)
                .with_mode(CoefficientMode::Ring)
                .prefixed("n");
            let prev = complexes.last().unwrap().clone();
            let next = prev.prefixed("o").direct_sum(&extra).unwrap();
            let mut incl = LinearMap::zero(0);
            for g in prev.generators() {
                incl.set_column(g.id.clone(), chain_of(&g.id.prefixed("o")));
            }
            maps.push(incl);
            complexes.push(next);
        }
        let last = complexes.last().unwrap().clone();
        let ray = Ray::from_slices(complexes, maps);
        let tel = telescope(&ray, slices, &lvl(1)).expect("telescope");
        let tel_bc = reduce(&tel.complex, &lvl(1)).expect("reduces").barcode();
        let colim_bc = reduce(&last, &lvl(1)).expect("reduces").barcode();
        ok &= tel_bc == colim_bc;
    }
    conclude(
        9,
        "valuation-pivot reduction and telescopes agree with naive oracles",
        ok,
    );
}

// --------------------------------------------------------------------- 10

fn random_two_layer(rng: &mut Rng, tag: &str) -> WeightedComplex<Rat> {
    random_complex(rng, 6)
        .with_mode(CoefficientMode::Ring)
        .prefixed(tag)
}

/// Random degree −1 map with nonnegative-valuation monomial entries.
fn random_homotopy(rng: &mut Rng, c: &WeightedComplex<Rat>) -> LinearMap<Rat> {
    let mut columns = BTreeMap::new();
    for g in c.generators() {
        if g.degree != 1 {
            continue;
        }
        if rng.below(2) == 0 {
            continue;
        }
        let mut chain = Chain::new();
        for target in c.generators() {
            if target.degree != 0 || rng.below(3) != 0 {
                continue;
            }
            let exp = rng.rat(4, 4);
            let coeff = q(1 + rng.below(4) as i64, 1);
            chain.insert(target.id.clone(), S::monomial(coeff, exp));
        }
        if !chain.is_empty() {
            columns.insert(g.id.clone(), chain);
        }
    }
    LinearMap::from_columns(-1, columns)
}

fn differential_map(c: &WeightedComplex<Rat>) -> LinearMap<Rat> {
    let mut columns = BTreeMap::new();
    for g in c.generators() {
        let col = c.d_of(&g.id);
        if !col.is_empty() {
            columns.insert(g.id.clone(), col);
        }
    }
    LinearMap::from_columns(1, columns)
}

/// A coherent square with identity verticals: top `f`, bottom `f + dh + hd`.
fn coherent_square(rng: &mut Rng) -> Cube<Rat> {
    let a = random_two_layer(rng, "a");
    let d = differential_map(&a);
    let h0 = random_homotopy(rng, &a);
    let f = LinearMap::identity(&a)
        .add(&d.compose(&h0))
        .add(&h0.compose(&d));
    let h = random_homotopy(rng, &a);
    let g = f.add(&d.compose(&h)).add(&h.compose(&d));
    let mut cube = Cube::new(2);
    cube.set_vertex(vec![false, false], a.clone());
    cube.set_vertex(vec![true, false], a.clone());
    cube.set_vertex(vec![false, true], a.clone());
    cube.set_vertex(vec![true, true], a.clone());
    let id = LinearMap::identity(&a);
    cube.set_face(Face::parse("*0").unwrap(), id.clone())
        .unwrap();
    cube.set_face(Face::parse("*1").unwrap(), id).unwrap();
    cube.set_face(Face::parse("0*").unwrap(), f).unwrap();
    cube.set_face(Face::parse("1*").unwrap(), g).unwrap();
    let mut h = h;
    h.degree = -1;
    cube.set_face(Face::parse("**").unwrap(), h).unwrap();
    cube
}

/// The prism over a coherent square: identity in the third direction, zero
/// fillers.
fn coherent_prism(rng: &mut Rng) -> Cube<Rat> {
    let square = coherent_square(rng);
    let mut cube = Cube::new(3);
    for (v, c) in &square.vertices {
        let mut v0 = v.clone();
        v0.push(false);
        let mut v1 = v.clone();
        v1.push(true);
        cube.set_vertex(v0, c.clone());
        cube.set_vertex(v1, c.clone());
    }
    for (face, map) in &square.faces {
        for third in ['0', '1'] {
            let key = Face::parse(&format!("{face}{third}")).unwrap();
            cube.set_face(key, map.clone()).unwrap();
        }
    }
    for (v, c) in &square.vertices {
        let key: String = v
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .chain(['*'])
            .collect();
        cube.set_face(Face::parse(&key).unwrap(), LinearMap::identity(c))
            .unwrap();
    }
    cube
}

#[test]
fn criterion_10_cone_properties() {
    let mut ok = true;
    let mut rng = Rng::new(1010);
    for i in 0..100 {
        let cube = match i % 3 {
            0 => {
                let a = random_two_layer(&mut rng, "a");
                let d = differential_map(&a);
                let h = random_homotopy(&mut rng, &a);
                let f = LinearMap::identity(&a)
                    .add(&d.compose(&h))
                    .add(&h.compose(&d));
                let mut cube = Cube::new(1);
                cube.set_vertex(vec![false], a.clone());
                cube.set_vertex(vec![true], a);
                cube.set_face(Face::parse("*").unwrap(), f).unwrap();
                cube
            }
            1 => coherent_square(&mut rng),
            _ => coherent_prism(&mut rng),
        };
        if !cube.check_coherence(&lvl(1)).is_coherent() {
            ok = false;
            continue;
        }
        for direction in 1..=cube.dim {
            let cone = cube.cone(direction, &lvl(1)).expect("coherent input");
            if !cone.check_coherence(&lvl(1)).is_coherent() {
                ok = false;
            }
        }
        let total = cube.iterated_cone(&lvl(1)).expect("coherent input");
        for g in total.generators() {
            let dd = total.apply_d(&total.apply_d(&chain_of(&g.id)));
            if !dd.is_empty() {
                ok = false;
            }
        }
    }
    ok &= example_cone_matrix_is_reproduced();
    conclude(
        10,
        "cones of coherent cubes are coherent; the 4x4 example matrix is pinned",
        ok,
    );
}

/// The two-by-two-block cone of the standard square of complexes, spelled
/// out entry for entry. One off-diagonal sign is forced by requiring the
/// total differential to square to zero, which is how the convention is
/// pinned here; the remaining fifteen entries match the classical display.
fn example_cone_matrix_is_reproduced() -> bool {
    // base complex: x → 2·T^{1/2} y, with u a unit scalar
    let a = {
        let gens = vec![
            Generator {
                id: GeneratorId::new("x"),
                degree: 0,
                action: q(-1, 2),
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
        ];
        let mut d: BTreeMap<GeneratorId, Chain<Rat>> = BTreeMap::new();
        let mut col = Chain::new();
        col.insert(GeneratorId::new("y"), S::monomial(q(2, 1), q(1, 2)));
        d.insert(GeneratorId::new("x"), col);
        WeightedComplex::new(gens, d, CoefficientMode::Ring, false).unwrap()
    };
    let d = differential_map(&a);
    // c = 3·id (unit), f0 = id, h: y ↦ 5·T^{1/4} x, f1 and c' solve coherence
    let c = LinearMap::identity(&a).scale(&S::from_int(3));
    let f0 = LinearMap::identity(&a);
    let mut h = LinearMap::zero(-1);
    let mut hcol = Chain::new();
    hcol.insert(GeneratorId::new("x"), S::monomial(q(5, 1), q(1, 4)));
    h.set_column(GeneratorId::new("y"), hcol);
    // coherence: c'·f0 − f1·c + hd + dh = 0 with f1 = id gives c' = c − hd − dh
    let f1 = LinearMap::identity(&a);
    let hd_dh = h.compose(&d).add(&d.compose(&h));
    let cprime = c.add(&hd_dh.negate());

    let mut cube = Cube::new(2);
    cube.set_vertex(vec![false, false], a.clone());
    cube.set_vertex(vec![true, false], a.clone());
    cube.set_vertex(vec![false, true], a.clone());
    cube.set_vertex(vec![true, true], a.clone());
    cube.set_face(Face::parse("*0").unwrap(), c.clone())
        .unwrap();
    cube.set_face(Face::parse("*1").unwrap(), cprime.clone())
        .unwrap();
    cube.set_face(Face::parse("0*").unwrap(), f0.clone())
        .unwrap();
    cube.set_face(Face::parse("1*").unwrap(), f1.clone())
        .unwrap();
    let mut hface = h.clone();
    hface.degree = -1;
    cube.set_face(Face::parse("**").unwrap(), hface).unwrap();
    if !cube.check_coherence(&lvl(1)).is_coherent() {
        return false;
    }
    let total = cube.iterated_cone(&lvl(1)).unwrap();
    // d² = 0 pins the one ambiguous sign
    for g in total.generators() {
        if !total.apply_d(&total.apply_d(&chain_of(&g.id))).is_empty() {
            return false;
        }
    }
    let entry = |src: &str, tgt: &str| -> S {
        total
            .d_of(&GeneratorId::new(src))
            .get(&GeneratorId::new(tgt))
            .cloned()
            .unwrap_or_else(S::zero)
    };
    let d_scalar = S::monomial(q(2, 1), q(1, 2));
    let h_scalar = S::monomial(q(5, 1), q(1, 4));
    let mut ok = true;
    // block order: (C_0, C_1[1], C_0'[1], C_1') = (s:s, s:p, p:s, p:p)
    // column C_0: (+d, −c, +f0, +h)
    ok &= entry("s:s:x", "s:s:y") == d_scalar;
    ok &= entry("s:s:x", "s:p:x") == S::from_int(-3);
    ok &= entry("s:s:x", "p:s:x") == S::from_int(1);
    ok &= entry("s:s:y", "p:p:x") == h_scalar;
    // column C_1[1]: (0, −d, 0, +f1)
    ok &= entry("s:p:x", "s:p:y") == d_scalar.neg();
    ok &= entry("s:p:x", "p:p:x") == S::from_int(1);
    ok &= entry("s:p:x", "s:s:x").is_zero();
    // column C_0'[1]: (0, 0, −d, +c')
    ok &= entry("p:s:x", "p:s:y") == d_scalar.neg();
    ok &= entry("p:s:x", "p:p:x") == cprime.column(&GeneratorId::new("x"))[&GeneratorId::new("x")];
    ok &= entry("p:s:y", "p:p:y") == cprime.column(&GeneratorId::new("y"))[&GeneratorId::new("y")];
    // column C_1': (0, 0, 0, +d)
    ok &= entry("p:p:x", "p:p:y") == d_scalar;
    ok &= entry("p:p:x", "s:s:x").is_zero();
    ok
}
