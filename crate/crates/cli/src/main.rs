//! Batch front-end: ingest model/complex/cube JSON, dispatch computations,
//! emit deterministic JSON or aligned-table reports.
//!
//! Exit codes: 0 on success, 1 on validation failure or malformed input,
//! 2 when a stabilized computation exhausts its slice budget.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use novhom::complex::{ActionLevel, CoefficientMode, WeightedComplex};
use novhom::cubes::{completed_telescope_homology_detailed, StabilizationPolicy, TelescopeError};
use novhom::json::{
    barcode_to_json, capacity_to_json, complex_from_json, cube_from_json, les_to_json,
    model_from_json, spectral_to_json, BarcodeJson, ComplexJson, CubeJson, LesReportJson,
    ModelSpecJson,
};
use novhom::models::{self, ModelError, ModelSpec, ModelVariant};
use novhom::novikov::TruncationLevel;
use novhom::rational::Rational;
use novhom::reduction::reduce;
use novhom::Rat;

#[derive(Parser)]
#[command(
    name = "novhom",
    version,
    about = "Exact homological algebra over the Novikov ring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Coeff {
    Ring,
    Lambda,
}

impl Coeff {
    fn mode(self) -> CoefficientMode {
        match self {
            Coeff::Ring => CoefficientMode::Ring,
            Coeff::Lambda => CoefficientMode::Field,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CapacityKind {
    Csh,
    Gh,
}

#[derive(Args)]
struct Common {
    /// Truncation level r of the quotient Λ≥0/Λ≥r, as an exact rational.
    #[arg(long, default_value = "1")]
    precision: String,
    /// Orbit budget: overrides the model's orbit truncation and bounds the
    /// stabilization scan.
    #[arg(long)]
    orbits: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural invariants of a complex or the coherence of a cube.
    Verify {
        #[arg(long)]
        complex: Option<PathBuf>,
        #[arg(long)]
        cube: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Homology barcode of a complex, or completed telescope homology of a model.
    Homology {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        complex: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ring")]
        coeff: Coeff,
        #[command(flatten)]
        common: Common,
    },
    /// Completed equivariant homology of a model at a u-truncation.
    Equivariant {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        u_trunc: usize,
        #[arg(long, value_enum, default_value = "ring")]
        coeff: Coeff,
        #[command(flatten)]
        common: Common,
    },
    /// Long exact sequence of the U-map short exact sequence.
    Gysin {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        u_trunc: usize,
        /// Action level L (rational); omitted means −∞.
        #[arg(long)]
        level: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Pages of the u-power filtration spectral sequence.
    Spectral {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        u_trunc: usize,
        #[arg(long)]
        max_page: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Completed telescope homology with stabilization diagnostics.
    Telescope {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "ring")]
        coeff: Coeff,
        #[command(flatten)]
        common: Common,
    },
    /// Relative symplectic capacities of a model.
    Capacity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "csh")]
        kind: CapacityKind,
        /// Index k of the Gutt-Hutchings capacity.
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        u_trunc: Option<usize>,
        #[arg(long)]
        verbose: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a parameter grid, one row per cell.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        /// Worker threads; output is identical regardless of parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn main() -> ExitCode {
    // default SIGPIPE disposition, so piping into `head` ends quietly
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Failure {
        let code = match &e {
            ModelError::NoStabilization(_) => 2,
            ModelError::Telescope(TelescopeError::NoStabilization { .. }) => 2,
            _ => 1,
        };
        fail(code, e.to_string())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(1, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn parse_precision(text: &str) -> Result<TruncationLevel<Rat>, Failure> {
    let q = Rat::parse(text).map_err(|e| fail(1, e.to_string()))?;
    TruncationLevel::new(q).map_err(|e| fail(1, e.to_string()))
}

/// Stabilization budget: the environment override wins, then the orbit
/// budget, then the default.
fn policy(orbits: Option<usize>) -> StabilizationPolicy {
    let mut p = StabilizationPolicy::default();
    if let Some(n) = orbits {
        p.budget = n;
    }
    if let Ok(text) = std::env::var("NOVIKOV_SLICE_BUDGET") {
        if let Ok(n) = text.parse::<usize>() {
            p.budget = n;
        }
    }
    p
}

fn load_model(path: &Path, orbits: Option<usize>) -> Result<ModelSpec<Rat>, Failure> {
    let json: ModelSpecJson = read_json(path)?;
    let mut spec = model_from_json::<Rat>(&json).map_err(|e| fail(1, e.to_string()))?;
    if let Some(n) = orbits {
        spec.orbit_truncation = n;
    }
    Ok(spec)
}

fn emit<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(1, e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn barcode_table(b: &BarcodeJson) -> String {
    let mut out = format!("degree  infinite  finite (mod T^{})\n", b.precision);
    for (deg, bars) in &b.degrees {
        out.push_str(&format!(
            "{:>6}  {:>8}  {}\n",
            deg,
            bars.infinite,
            if bars.finite.is_empty() {
                "-".to_string()
            } else {
                bars.finite.join(", ")
            }
        ));
    }
    if b.degrees.is_empty() {
        out.push_str("(no bars)\n");
    }
    out
}

fn print_barcode(b: &BarcodeJson, format: Format) -> Result<(), Failure> {
    match format {
        Format::Json => emit(b),
        Format::Table => {
            print!("{}", barcode_table(b));
            Ok(())
        }
    }
}

fn les_table(r: &LesReportJson) -> String {
    let mut out = String::new();
    out.push_str(&format!("all_exact: {}\n", r.all_exact));
    for v in &r.exactness {
        out.push_str(&format!(
            "node {:>4}  degree {:>3}  exact: {}\n",
            v.node, v.degree, v.exact
        ));
    }
    out
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Verify {
            complex,
            cube,
            common,
        } => {
            let r = parse_precision(&common.precision)?;
            if let Some(path) = complex {
                let json: ComplexJson = read_json(&path)?;
                let c: WeightedComplex<Rat> =
                    complex_from_json(&json).map_err(|e| fail(1, e.to_string()))?;
                let report = c.validate(&r);
                if report.is_valid() {
                    println!("valid");
                    return Ok(());
                }
                for v in &report.violations {
                    println!("{v}");
                }
                return Err(fail(1, format!("{} violation(s)", report.violations.len())));
            }
            if let Some(path) = cube {
                let json: CubeJson = read_json(&path)?;
                let c = cube_from_json::<Rat>(&json).map_err(|e| fail(1, e.to_string()))?;
                let report = c.check_coherence(&r);
                if report.is_coherent() {
                    println!("coherent");
                    return Ok(());
                }
                for f in &report.violations {
                    println!("incoherent at face {f}");
                }
                return Err(fail(
                    1,
                    format!("{} incoherent face(s)", report.violations.len()),
                ));
            }
            Err(fail(1, "verify needs --complex or --cube"))
        }
        Command::Homology {
            model,
            complex,
            coeff,
            common,
        } => {
            let r = parse_precision(&common.precision)?;
            let barcode = if let Some(path) = model {
                let spec = load_model(&path, common.orbits)?;
                models::sh(&spec, &r, coeff.mode(), &policy(common.orbits))?
            } else if let Some(path) = complex {
                let json: ComplexJson = read_json(&path)?;
                let c: WeightedComplex<Rat> =
                    complex_from_json(&json).map_err(|e| fail(1, e.to_string()))?;
                let c = c.with_mode(coeff.mode());
                let report = c.validate(&r);
                if !report.is_valid() {
                    return Err(fail(
                        1,
                        format!("invalid complex: {}", report.violations[0]),
                    ));
                }
                reduce(&c, &r)
                    .map_err(|e| fail(1, e.to_string()))?
                    .barcode()
            } else {
                return Err(fail(1, "homology needs --model or --complex"));
            };
            print_barcode(&barcode_to_json(&barcode), common.format)
        }
        Command::Equivariant {
            model,
            u_trunc,
            coeff,
            common,
        } => {
            let r = parse_precision(&common.precision)?;
            let spec = load_model(&model, common.orbits)?;
            let barcode =
                models::sh_equivariant(&spec, &r, u_trunc, coeff.mode(), &policy(common.orbits))?;
            print_barcode(&barcode_to_json(&barcode), common.format)
        }
        Command::Gysin {
            model,
            u_trunc,
            level,
            common,
        } => {
            let r = parse_precision(&common.precision)?;
            let spec = load_model(&model, common.orbits)?;
            let level = match level {
                Some(text) => {
                    ActionLevel::At(Rat::parse(&text).map_err(|e| fail(1, e.to_string()))?)
                }
                None => ActionLevel::NegInfinity,
            };
            let report = models::gysin_les(&spec, &r, u_trunc, &level)?;
            let json = les_to_json(&report);
            match common.format {
                Format::Json => emit(&json),
                Format::Table => {
                    print!("{}", les_table(&json));
                    Ok(())
                }
            }
        }
        Command::Spectral {
            model,
            u_trunc,
            max_page,
            common,
        } => {
            let r = parse_precision(&common.precision)?;
            let spec = load_model(&model, common.orbits)?;
            let pages = max_page.unwrap_or(u_trunc + 2);
            let ss = models::spectral_of_model(&spec, &r, u_trunc, pages)?;
            let json = spectral_to_json(&ss);
            match common.format {
                Format::Json => emit(&json),
                Format::Table => {
                    for page in &json.pages {
                        println!("page {}", page.page);
                        for e in &page.entries {
                            println!(
                                "  (p={}, q={}): infinite {} finite [{}]",
                                e.p,
                                e.q,
                                e.infinite,
                                e.finite.join(", ")
                            );
                        }
                    }
                    Ok(())
                }
            }
        }
        Command::Telescope {
            model,
            coeff,
            common,
        } => {
            let r = parse_precision(&common.precision)?;
            let spec = load_model(&model, common.orbits)?;
            let built = models::build(&spec)?;
            let detail = completed_telescope_homology_detailed(
                &built.ray(coeff.mode()),
                &r,
                &policy(common.orbits),
            )
            .map_err(|e| match e {
                TelescopeError::NoStabilization { .. } => fail(2, e.to_string()),
                other => fail(1, other.to_string()),
            })?;
            #[derive(serde::Serialize)]
            struct TelescopeJson {
                barcode: BarcodeJson,
                slices_used: usize,
            }
            let json = TelescopeJson {
                barcode: barcode_to_json(&detail.barcode),
                slices_used: detail.slices_used,
            };
            match common.format {
                Format::Json => emit(&json),
                Format::Table => {
                    println!("stabilized after {} slices", json.slices_used);
                    print!("{}", barcode_table(&json.barcode));
                    Ok(())
                }
            }
        }
        Command::Capacity {
            model,
            kind,
            k,
            u_trunc,
            verbose,
            common,
        } => {
            let r = parse_precision(&common.precision)?;
            let spec = load_model(&model, common.orbits)?;
            let pol = policy(common.orbits);
            let report = match kind {
                CapacityKind::Csh => models::csh(&spec, &r, &pol)?,
                CapacityKind::Gh => {
                    let n = u_trunc.unwrap_or(k.saturating_sub(1));
                    models::cgh(&spec, k, &r, n, &pol)?
                }
            };
            let json = capacity_to_json(&report, verbose);
            match common.format {
                Format::Json => emit(&json),
                Format::Table => {
                    println!("value: {}", json.value);
                    println!("finiteness: {}", json.finiteness);
                    println!("precision: {}", json.precision);
                    println!("slices: {}", json.slices_used);
                    Ok(())
                }
            }
        }
        Command::Sweep { grid, jobs, format } => run_sweep(&grid, jobs, format),
    }
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct GridSpec {
    verb: String,
    base: ModelSpecJson,
    #[serde(default)]
    vary: Vec<GridAxis>,
    #[serde(default = "default_precision")]
    precision: String,
    #[serde(default)]
    coeff: Option<String>,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    u_trunc: Option<usize>,
}

fn default_precision() -> String {
    "1".into()
}

#[derive(serde::Deserialize)]
struct GridAxis {
    param: String,
    values: Vec<String>,
}

#[derive(serde::Serialize, Clone)]
struct SweepRow {
    cell: BTreeMap<String, String>,
    result: String,
}

fn apply_param(spec: &ModelSpec<Rat>, param: &str, value: &str) -> Result<ModelSpec<Rat>, Failure> {
    let q = Rat::parse(value).map_err(|e| fail(1, e.to_string()))?;
    let mut out = spec.clone();
    match param {
        "delta" => match &mut out.variant {
            ModelVariant::DiskInSphere { delta } => *delta = q,
            _ => return Err(fail(1, "parameter `delta` needs a disk model")),
        },
        "scale" => {
            out = ModelSpec {
                variant: ModelVariant::Scaled {
                    factor: q,
                    base: Box::new(out.clone()),
                },
                orbit_truncation: out.orbit_truncation,
                index_bounded: out.index_bounded,
            };
        }
        other => return Err(fail(1, format!("unknown sweep parameter `{other}`"))),
    }
    Ok(out)
}

fn sweep_cells(grid: &GridSpec) -> Result<Vec<BTreeMap<String, String>>, Failure> {
    let mut cells: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
    for axis in &grid.vary {
        let mut next = Vec::new();
        for cell in &cells {
            for value in &axis.values {
                let mut c = cell.clone();
                c.insert(axis.param.clone(), value.clone());
                next.push(c);
            }
        }
        cells = next;
    }
    if grid.vary.is_empty() {
        cells.clear();
    }
    Ok(cells)
}

fn evaluate_cell(grid: &GridSpec, cell: &BTreeMap<String, String>) -> Result<String, Failure> {
    let mut spec = model_from_json::<Rat>(&grid.base).map_err(|e| fail(1, e.to_string()))?;
    for (param, value) in cell {
        spec = apply_param(&spec, param, value)?;
    }
    let r = parse_precision(&grid.precision)?;
    let pol = policy(None);
    let mode = match grid.coeff.as_deref() {
        Some("lambda") => CoefficientMode::Field,
        _ => CoefficientMode::Ring,
    };
    match grid.verb.as_str() {
        "homology" => {
            let bc = models::sh(&spec, &r, mode, &pol)?;
            Ok(format!("infinite={}", bc.total_infinite()))
        }
        "equivariant" => {
            let n = grid.u_trunc.unwrap_or(2);
            let bc = models::sh_equivariant(&spec, &r, n, mode, &pol)?;
            Ok(format!("infinite={}", bc.total_infinite()))
        }
        "capacity" => {
            let report = match grid.kind.as_deref() {
                None | Some("csh") => models::csh(&spec, &r, &pol)?,
                Some("gh") => {
                    let k = grid.k.unwrap_or(1);
                    let n = grid.u_trunc.unwrap_or(k.saturating_sub(1));
                    models::cgh(&spec, k, &r, n, &pol)?
                }
                Some(other) => return Err(fail(1, format!("unknown capacity kind `{other}`"))),
            };
            Ok(match report.value {
                models::CapacityValue::Finite(v) => v.to_string(),
                models::CapacityValue::Infinite => "inf".into(),
            })
        }
        other => Err(fail(1, format!("unknown sweep verb `{other}`"))),
    }
}

fn run_sweep(path: &Path, jobs: Option<usize>, format: Format) -> Result<(), Failure> {
    let grid: GridSpec = read_json(path)?;
    let cells = sweep_cells(&grid)?;
    let jobs = jobs.unwrap_or(1).max(1);
    let mut rows: Vec<Option<SweepRow>> = vec![None; cells.len()];
    if jobs == 1 || cells.len() <= 1 {
        for (i, cell) in cells.iter().enumerate() {
            rows[i] = Some(SweepRow {
                cell: cell.clone(),
                result: evaluate_cell(&grid, cell)?,
            });
        }
    } else {
        // rows are reassembled in declared order, so the report is
        // byte-identical for any job count
        let results: Vec<Result<String, Failure>> = std::thread::scope(|scope| {
            let grid = &grid;
            let mut handles = Vec::new();
            for chunk in cells.chunks(cells.len().div_ceil(jobs)) {
                handles.push(scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|cell| evaluate_cell(grid, cell))
                        .collect::<Vec<_>>()
                }));
            }
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker"))
                .collect()
        });
        for (i, (cell, result)) in cells.iter().zip(results).enumerate() {
            rows[i] = Some(SweepRow {
                cell: cell.clone(),
                result: result?,
            });
        }
    }
    let rows: Vec<SweepRow> = rows.into_iter().flatten().collect();
    match format {
        Format::Json => emit(&rows),
        Format::Table => {
            let params: Vec<String> = grid.vary.iter().map(|a| a.param.clone()).collect();
            let mut header = params.clone();
            header.push("result".into());
            let mut table: Vec<Vec<String>> = vec![header];
            for row in &rows {
                let mut line: Vec<String> = params
                    .iter()
                    .map(|p| row.cell.get(p).cloned().unwrap_or_default())
                    .collect();
                line.push(row.result.clone());
                table.push(line);
            }
            let widths: Vec<usize> = (0..table[0].len())
                .map(|j| table.iter().map(|row| row[j].len()).max().unwrap_or(0))
                .collect();
            for row in &table {
                let line: Vec<String> = row
                    .iter()
                    .enumerate()
                    .map(|(j, cell)| format!("{:width$}", cell, width = widths[j]))
                    .collect();
                println!("{}", line.join("  "));
            }
            Ok(())
        }
    }
}
