//! JSON artifacts with exact rational text forms.
//!
//! Every number is emitted as `p/q` text and every map is keyed through
//! `BTreeMap`, so emission is deterministic and re-ingesting an artifact
//! reproduces the in-memory value exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::complex::{
    ActionLevel, Chain, CoefficientMode, Generator, GeneratorId, GeneratorKind, LinearMap,
    OrbitMeta, WeightedComplex,
};
use crate::cubes::{Cube, ExactnessVerdict, Face, LesReport, MayerVietorisReport};
use crate::models::{
    CapacityReport, CapacityValue, Finiteness, ModelSpec, ModelVariant, MorseGenerator,
    ReebOrbitSpec,
};
use crate::novikov::{NovikovScalar, TruncationLevel};
use crate::rational::Rational;
use crate::reduction::{Barcode, DegreeBars, InducedMap, SpectralSequence};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed artifact: {0}")]
pub struct JsonError(pub String);

fn bad(msg: impl Into<String>) -> JsonError {
    JsonError(msg.into())
}

fn parse_q<Q: Rational>(text: &str) -> Result<Q, JsonError> {
    Q::parse(text).map_err(|e| bad(e.to_string()))
}

fn parse_scalar<Q: Rational>(text: &str) -> Result<NovikovScalar<Q>, JsonError> {
    text.parse()
        .map_err(|_| bad(format!("bad scalar `{text}`")))
}

// ---------------------------------------------------------------------------
// complexes
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorJson {
    pub id: String,
    pub degree: i64,
    pub action: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cz: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplexJson {
    pub generators: Vec<GeneratorJson>,
    pub differential: BTreeMap<String, Vec<(String, String)>>,
    pub index_bounded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficient_mode: Option<String>,
}

pub fn complex_to_json<Q: Rational>(c: &WeightedComplex<Q>) -> ComplexJson {
    let generators = c
        .generators()
        .iter()
        .map(|g| GeneratorJson {
            id: g.id.to_string(),
            degree: g.degree,
            action: g.action.to_string(),
            kind: match g.kind {
                GeneratorKind::ConstantLower => "constant-lower".into(),
                GeneratorKind::NonconstantLower => "nonconstant-lower".into(),
                GeneratorKind::Upper => "upper".into(),
            },
            cz: g.orbit.as_ref().map(|o| o.reeb_cz),
            period: g.orbit.as_ref().map(|o| o.reeb_period.to_string()),
        })
        .collect();
    let differential = c
        .differential()
        .iter()
        .map(|(src, chain)| {
            (
                src.to_string(),
                chain
                    .iter()
                    .map(|(t, s)| (t.to_string(), s.to_string()))
                    .collect(),
            )
        })
        .collect();
    ComplexJson {
        generators,
        differential,
        index_bounded: c.index_bounded,
        coefficient_mode: match c.coefficient_mode {
            CoefficientMode::Ring => None,
            CoefficientMode::Field => Some("lambda".into()),
        },
    }
}

pub fn complex_from_json<Q: Rational>(json: &ComplexJson) -> Result<WeightedComplex<Q>, JsonError> {
    let mut generators = Vec::with_capacity(json.generators.len());
    for g in &json.generators {
        let kind = match g.kind.as_str() {
            "constant-lower" => GeneratorKind::ConstantLower,
            "nonconstant-lower" => GeneratorKind::NonconstantLower,
            "upper" => GeneratorKind::Upper,
            other => return Err(bad(format!("unknown generator kind `{other}`"))),
        };
        let orbit = match (&g.cz, &g.period) {
            (Some(cz), Some(period)) => Some(OrbitMeta {
                reeb_period: parse_q(period)?,
                reeb_cz: *cz,
            }),
            (None, None) => None,
            _ => {
                return Err(bad(format!(
                    "generator `{}` needs both cz and period",
                    g.id
                )))
            }
        };
        generators.push(Generator {
            id: GeneratorId::new(&g.id),
            degree: g.degree,
            action: parse_q(&g.action)?,
            kind,
            orbit,
        });
    }
    let mut differential: BTreeMap<GeneratorId, Chain<Q>> = BTreeMap::new();
    for (src, entries) in &json.differential {
        let mut chain = Chain::new();
        for (tgt, text) in entries {
            chain.insert(GeneratorId::new(tgt), parse_scalar(text)?);
        }
        differential.insert(GeneratorId::new(src), chain);
    }
    let mode = match json.coefficient_mode.as_deref() {
        None | Some("ring") => CoefficientMode::Ring,
        Some("lambda") => CoefficientMode::Field,
        Some(other) => return Err(bad(format!("unknown coefficient mode `{other}`"))),
    };
    WeightedComplex::new(generators, differential, mode, json.index_bounded)
        .map_err(|e| bad(e.to_string()))
}

// ---------------------------------------------------------------------------
// maps and cubes
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapJson {
    pub degree: i64,
    pub columns: BTreeMap<String, Vec<(String, String)>>,
}

pub fn map_to_json<Q: Rational>(f: &LinearMap<Q>) -> MapJson {
    MapJson {
        degree: f.degree,
        columns: f
            .columns()
            .iter()
            .map(|(src, col)| {
                (
                    src.to_string(),
                    col.iter()
                        .map(|(t, s)| (t.to_string(), s.to_string()))
                        .collect(),
                )
            })
            .collect(),
    }
}

pub fn map_from_json<Q: Rational>(json: &MapJson) -> Result<LinearMap<Q>, JsonError> {
    let mut columns = BTreeMap::new();
    for (src, entries) in &json.columns {
        let mut chain = Chain::new();
        for (tgt, text) in entries {
            chain.insert(GeneratorId::new(tgt), parse_scalar(text)?);
        }
        columns.insert(GeneratorId::new(src), chain);
    }
    Ok(LinearMap::from_columns(json.degree, columns))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubeJson {
    pub dimension: usize,
    pub vertices: BTreeMap<String, ComplexJson>,
    pub faces: BTreeMap<String, MapJson>,
    #[serde(default)]
    pub partial: bool,
}

fn vertex_key(v: &[bool]) -> String {
    v.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn parse_vertex(text: &str, dim: usize) -> Result<Vec<bool>, JsonError> {
    if text.len() != dim {
        return Err(bad(format!(
            "vertex `{text}` does not match dimension {dim}"
        )));
    }
    text.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(bad(format!("bad vertex `{text}`"))),
        })
        .collect()
}

pub fn cube_to_json<Q: Rational>(cube: &Cube<Q>) -> CubeJson {
    CubeJson {
        dimension: cube.dim,
        vertices: cube
            .vertices
            .iter()
            .map(|(v, c)| (vertex_key(v), complex_to_json(c)))
            .collect(),
        faces: cube
            .faces
            .iter()
            .map(|(f, m)| (f.to_string(), map_to_json(m)))
            .collect(),
        partial: cube.partial,
    }
}

pub fn cube_from_json<Q: Rational>(json: &CubeJson) -> Result<Cube<Q>, JsonError> {
    let mut cube = Cube::new(json.dimension);
    cube.partial = json.partial;
    for (key, c) in &json.vertices {
        cube.set_vertex(parse_vertex(key, json.dimension)?, complex_from_json(c)?);
    }
    for (key, m) in &json.faces {
        let face = Face::parse(key).ok_or_else(|| bad(format!("bad face `{key}`")))?;
        if face.0.len() != json.dimension {
            return Err(bad(format!("face `{key}` does not match dimension")));
        }
        cube.set_face(face, map_from_json(m)?)
            .map_err(|e| bad(e.to_string()))?;
    }
    Ok(cube)
}

// ---------------------------------------------------------------------------
// model specs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum VariantJson {
    DiskInSphere {
        delta: String,
    },
    Staircase {
        half_dim: i64,
        reeb: Vec<ReebJson>,
        morse: Vec<MorseJson>,
    },
    DisjointUnion {
        parts: Vec<ModelSpecJson>,
    },
    Scaled {
        factor: String,
        base: Box<ModelSpecJson>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReebJson {
    pub period: String,
    pub cz: i64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MorseJson {
    pub degree: i64,
    pub action: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpecJson {
    #[serde(flatten)]
    pub variant: VariantJson,
    pub orbit_truncation: usize,
    pub index_bounded: bool,
}

pub fn model_to_json<Q: Rational>(spec: &ModelSpec<Q>) -> ModelSpecJson {
    let variant = match &spec.variant {
        ModelVariant::DiskInSphere { delta } => VariantJson::DiskInSphere {
            delta: delta.to_string(),
        },
        ModelVariant::Staircase {
            half_dim,
            reeb,
            morse,
        } => VariantJson::Staircase {
            half_dim: *half_dim,
            reeb: reeb
                .iter()
                .map(|o| ReebJson {
                    period: o.period.to_string(),
                    cz: o.cz,
                })
                .collect(),
            morse: morse
                .iter()
                .map(|m| MorseJson {
                    degree: m.degree,
                    action: m.action.to_string(),
                })
                .collect(),
        },
        ModelVariant::DisjointUnion { parts } => VariantJson::DisjointUnion {
            parts: parts.iter().map(model_to_json).collect(),
        },
        ModelVariant::Scaled { factor, base } => VariantJson::Scaled {
            factor: factor.to_string(),
            base: Box::new(model_to_json(base)),
        },
    };
    ModelSpecJson {
        variant,
        orbit_truncation: spec.orbit_truncation,
        index_bounded: spec.index_bounded,
    }
}

pub fn model_from_json<Q: Rational>(json: &ModelSpecJson) -> Result<ModelSpec<Q>, JsonError> {
    let variant = match &json.variant {
        VariantJson::DiskInSphere { delta } => ModelVariant::DiskInSphere {
            delta: parse_q(delta)?,
        },
        VariantJson::Staircase {
            half_dim,
            reeb,
            morse,
        } => ModelVariant::Staircase {
            half_dim: *half_dim,
            reeb: reeb
                .iter()
                .map(|o| {
                    Ok(ReebOrbitSpec {
                        period: parse_q(&o.period)?,
                        cz: o.cz,
                    })
                })
                .collect::<Result<Vec<_>, JsonError>>()?,
            morse: morse
                .iter()
                .map(|m| {
                    Ok(MorseGenerator {
                        degree: m.degree,
                        action: parse_q(&m.action)?,
                    })
                })
                .collect::<Result<Vec<_>, JsonError>>()?,
        },
        VariantJson::DisjointUnion { parts } => ModelVariant::DisjointUnion {
            parts: parts
                .iter()
                .map(model_from_json)
                .collect::<Result<Vec<_>, _>>()?,
        },
        VariantJson::Scaled { factor, base } => ModelVariant::Scaled {
            factor: parse_q(factor)?,
            base: Box::new(model_from_json(base)?),
        },
    };
    Ok(ModelSpec {
        variant,
        orbit_truncation: json.orbit_truncation,
        index_bounded: json.index_bounded,
    })
}

// ---------------------------------------------------------------------------
// barcodes and reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegreeBarsJson {
    pub infinite: usize,
    pub finite: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BarcodeJson {
    pub precision: String,
    pub degrees: BTreeMap<String, DegreeBarsJson>,
}

pub fn barcode_to_json<Q: Rational>(b: &Barcode<Q>) -> BarcodeJson {
    BarcodeJson {
        precision: b.precision.to_string(),
        degrees: b
            .degrees
            .iter()
            .map(|(deg, bars)| {
                (
                    deg.to_string(),
                    DegreeBarsJson {
                        infinite: bars.infinite,
                        finite: bars.finite.iter().map(|l| l.to_string()).collect(),
                    },
                )
            })
            .collect(),
    }
}

pub fn barcode_from_json<Q: Rational>(json: &BarcodeJson) -> Result<Barcode<Q>, JsonError> {
    let precision =
        TruncationLevel::new(parse_q(&json.precision)?).map_err(|e| bad(e.to_string()))?;
    let mut out = Barcode::empty(precision);
    for (deg, bars) in &json.degrees {
        let degree: i64 = deg
            .parse()
            .map_err(|_| bad(format!("bad degree `{deg}`")))?;
        let finite = bars
            .finite
            .iter()
            .map(|t| parse_q(t))
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(
            degree,
            DegreeBars {
                infinite: bars.infinite,
                finite,
            },
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InducedBlockJson {
    pub src_degree: i64,
    pub tgt_degree: i64,
    pub matrix: Vec<Vec<String>>,
}

pub fn induced_to_json<Q: Rational>(m: &InducedMap<Q>) -> Vec<InducedBlockJson> {
    m.blocks
        .values()
        .map(|b| InducedBlockJson {
            src_degree: b.src_degree,
            tgt_degree: b.tgt_degree,
            matrix: (0..b.matrix.rows)
                .map(|i| {
                    (0..b.matrix.cols)
                        .map(|j| b.matrix.get(i, j).to_string())
                        .collect()
                })
                .collect(),
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactnessJson {
    pub node: String,
    pub degree: i64,
    pub exact: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LesReportJson {
    pub sub: BarcodeJson,
    pub mid: BarcodeJson,
    pub quot: BarcodeJson,
    pub include: Vec<InducedBlockJson>,
    pub project: Vec<InducedBlockJson>,
    pub connecting: Vec<InducedBlockJson>,
    pub exactness: Vec<ExactnessJson>,
    pub all_exact: bool,
}

pub fn les_to_json<Q: Rational>(r: &LesReport<Q>) -> LesReportJson {
    LesReportJson {
        sub: barcode_to_json(&r.sub_barcode),
        mid: barcode_to_json(&r.mid_barcode),
        quot: barcode_to_json(&r.quot_barcode),
        include: induced_to_json(&r.include_induced),
        project: induced_to_json(&r.project_induced),
        connecting: induced_to_json(&r.connecting),
        exactness: r
            .exactness
            .iter()
            .map(|v: &ExactnessVerdict| ExactnessJson {
                node: v.node.clone(),
                degree: v.degree,
                exact: v.exact,
            })
            .collect(),
        all_exact: r.all_exact(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MayerVietorisJson {
    pub union: BarcodeJson,
    pub pieces: BarcodeJson,
    pub intersection: BarcodeJson,
    pub cone_les: LesReportJson,
    pub union_matches_cone: bool,
    pub all_exact: bool,
}

pub fn mv_to_json<Q: Rational>(r: &MayerVietorisReport<Q>) -> MayerVietorisJson {
    MayerVietorisJson {
        union: barcode_to_json(&r.union_barcode),
        pieces: barcode_to_json(&r.pieces_barcode),
        intersection: barcode_to_json(&r.intersection_barcode),
        cone_les: les_to_json(&r.cone_les),
        union_matches_cone: r.union_matches_cone,
        all_exact: r.all_exact(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralEntryJson {
    pub p: usize,
    pub q: i64,
    pub infinite: usize,
    pub finite: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralPageJson {
    pub page: usize,
    pub entries: Vec<SpectralEntryJson>,
    pub differential_ranks: Vec<(usize, i64, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralJson {
    pub precision: String,
    pub pages: Vec<SpectralPageJson>,
}

pub fn spectral_to_json<Q: Rational>(s: &SpectralSequence<Q>) -> SpectralJson {
    SpectralJson {
        precision: s.precision.to_string(),
        pages: s
            .pages
            .iter()
            .map(|p| SpectralPageJson {
                page: p.page,
                entries: p
                    .entries
                    .iter()
                    .map(|(&(pp, q), bars)| SpectralEntryJson {
                        p: pp,
                        q,
                        infinite: bars.infinite,
                        finite: bars.finite.iter().map(|l| l.to_string()).collect(),
                    })
                    .collect(),
                differential_ranks: p
                    .differential_ranks
                    .iter()
                    .map(|(&(pp, q), &rank)| (pp, q, rank))
                    .collect(),
            })
            .collect(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WitnessJson {
    pub level: String,
    pub order: String,
    pub primitive: Vec<(String, String)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapacityJson {
    pub value: String,
    pub finiteness: String,
    pub precision: String,
    pub slices_used: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessJson>,
}

pub fn capacity_to_json<Q: Rational>(r: &CapacityReport<Q>, verbose: bool) -> CapacityJson {
    CapacityJson {
        value: match &r.value {
            CapacityValue::Finite(v) => v.to_string(),
            CapacityValue::Infinite => "inf".into(),
        },
        finiteness: match &r.finiteness {
            Finiteness::ProvedFinite => "proved-finite".into(),
            Finiteness::StableAtInfinity { budget } => {
                format!("stable-at-infinity(budget={budget})")
            }
        },
        precision: r.precision.to_string(),
        slices_used: r.slices_used,
        witness: r.witness.as_ref().filter(|_| verbose).map(|w| WitnessJson {
            level: w.level.to_string(),
            order: w.order.to_string(),
            primitive: w
                .primitive
                .iter()
                .map(|(id, s)| (id.to_string(), s.to_string()))
                .collect(),
        }),
    }
}

/// Renders an action level for reports.
pub fn level_to_string<Q: Rational>(level: &ActionLevel<Q>) -> String {
    level.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build;
    use crate::Rat64;

    fn disk_spec() -> ModelSpec<Rat64> {
        ModelSpec::disk(Rat64::ratio(3, 10), 4)
    }

    #[test]
    fn complex_round_trip() {
        let model = build(&disk_spec()).unwrap();
        let c = model.slice(2);
        let json = complex_to_json(&c);
        let text = serde_json::to_string(&json).unwrap();
        let parsed: ComplexJson = serde_json::from_str(&text).unwrap();
        let back: WeightedComplex<Rat64> = complex_from_json(&parsed).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn model_round_trip() {
        let spec = ModelSpec {
            variant: ModelVariant::DisjointUnion {
                parts: vec![
                    disk_spec(),
                    ModelSpec {
                        variant: ModelVariant::Scaled {
                            factor: Rat64::ratio(2, 1),
                            base: Box::new(disk_spec()),
                        },
                        orbit_truncation: 4,
                        index_bounded: true,
                    },
                ],
            },
            orbit_truncation: 4,
            index_bounded: true,
        };
        let text = serde_json::to_string_pretty(&model_to_json(&spec)).unwrap();
        let parsed: ModelSpecJson = serde_json::from_str(&text).unwrap();
        let back: ModelSpec<Rat64> = model_from_json(&parsed).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn barcode_round_trip() {
        let model = build(&disk_spec()).unwrap();
        let red = crate::reduction::reduce(&model.processed_slice(3), &TruncationLevel::of_int(1))
            .unwrap();
        let bc = red.barcode();
        let text = serde_json::to_string(&barcode_to_json(&bc)).unwrap();
        let parsed: BarcodeJson = serde_json::from_str(&text).unwrap();
        let back: Barcode<Rat64> = barcode_from_json(&parsed).unwrap();
        assert_eq!(back, bc);
    }

    #[test]
    fn cube_round_trip() {
        let model = build(&disk_spec()).unwrap();
        let c = model.processed_slice(1);
        let mut cube = Cube::new(1);
        cube.set_vertex(vec![false], c.clone());
        cube.set_vertex(vec![true], c.clone());
        cube.set_face(Face::parse("*").unwrap(), LinearMap::identity(&c))
            .unwrap();
        let text = serde_json::to_string(&cube_to_json(&cube)).unwrap();
        let parsed: CubeJson = serde_json::from_str(&text).unwrap();
        let back: Cube<Rat64> = cube_from_json(&parsed).unwrap();
        assert_eq!(back.vertices, cube.vertices);
        assert_eq!(back.faces, cube.faces);
    }

    #[test]
    fn malformed_inputs_are_reported() {
        assert!(parse_scalar::<Rat64>("T^^2").is_err());
        assert!(parse_q::<Rat64>("0.5").is_err());
        let json = ComplexJson {
            generators: vec![GeneratorJson {
                id: "x".into(),
                degree: 0,
                action: "0".into(),
                kind: "mystery".into(),
                cz: None,
                period: None,
            }],
            differential: BTreeMap::new(),
            index_bounded: false,
            coefficient_mode: None,
        };
        assert!(complex_from_json::<Rat64>(&json).is_err());
    }
}
