//! JSON scenarios driving the command-line front end: loading, running one
//! computation per kind, and writing a JSON report plus a CSV table.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Rational64;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Value};

use crate::beables::{is_beable_sampled, sample_rng, BeableFn, QdSampler};
use crate::configuration::{Catalog, ConfigId};
use crate::error::{Error, Result};
use crate::extended_state::{BoundarySpec, ExtendedAState};
use crate::generators::{random_field_state, FieldStateSpec};
use crate::geometry::Diffeo;
use crate::lattice::PositionLattice;
use crate::numerics::{canonical_bits, fmt17};
use crate::path_integral::{
    action, analytic_propagator, enumerate_paths, pipeline_amplitude, propagator_row, ParticleModel, Potential,
    TimeGrid, ENUMERATION_CAP,
};
use crate::qep_alignment::{
    align_at_point, constant_metric_task, lightcone_coincidence, random_task, Alignment, TaskFamily,
};
use crate::quantum_coords::verify_consistency;
use crate::quantum_diffeo::{apply_restricted, compose, random_lattice_map, reverse_for, PhaseFn, RestrictedQD};
use crate::quantum_manifold::{chart_identification_family, validate_basic, validate_full, BundleSpec, QuantumFibreBundle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Propagator,
    Pipeline,
    Qdiffeo,
    Align,
    Beables,
    BundleCheck,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Propagator => "propagator",
            ScenarioKind::Pipeline => "pipeline",
            ScenarioKind::Qdiffeo => "qdiffeo",
            ScenarioKind::Align => "align",
            ScenarioKind::Beables => "beables",
            ScenarioKind::BundleCheck => "bundle-check",
        }
    }
}

/// Output file names, relative to the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub report: Option<String>,
    pub table: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub kind: Option<ScenarioKind>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: Value,
    #[serde(default)]
    pub outputs: Outputs,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        serde_json::from_str(text).map_err(|e| Error::SchemaError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path).map_err(|e| Error::IoFailure(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// A structured error entry of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorEntry {
    fn from(e: &Error) -> Self {
        ErrorEntry {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_TOLERANCE: i32 = 2;

/// What a run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub errors: Vec<ErrorEntry>,
    /// Files written, report last.
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(n) => n.to_string(),
            Cell::Float(x) => fmt17(*x),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as i64)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let io_err = |e: csv::Error| Error::IoFailure(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(io_err)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render)).map_err(io_err)?;
        }
        w.into_inner().map_err(|e| Error::IoFailure(e.to_string()))
    }
}

/// Result of one computation before it is written out.
#[derive(Clone, Debug, PartialEq)]
pub struct RunData {
    pub result: Value,
    pub table: Table,
    /// Whether a requested numerical tolerance was missed.
    pub tolerance_failed: bool,
    /// A validation failure found after the data was produced.
    pub failure: Option<Error>,
}

/// Pretty JSON whose floats carry 17 significant digits.
struct Fmt17Formatter<'a>(PrettyFormatter<'a>);

impl Formatter for Fmt17Formatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with 17-digit floats.
pub fn to_json_17<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Fmt17Formatter(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::IoFailure(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn params<P: DeserializeOwned>(v: &Value) -> Result<P> {
    let v = if v.is_null() { json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| Error::SchemaError(format!("params: {e}")))
}

fn require_seed(seed: Option<u64>, kind: ScenarioKind) -> Result<u64> {
    seed.ok_or_else(|| Error::SchemaError(format!("a seed is required for sampled `{}` runs", kind.name())))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

/// Runs the computation of `kind` without touching the file system.
pub fn execute(kind: ScenarioKind, scenario: &Scenario, seed: Option<u64>) -> Result<RunData> {
    if let Some(k) = scenario.kind {
        if k != kind {
            return Err(Error::SchemaError(format!(
                "scenario is of kind `{}` but `{}` was requested",
                k.name(),
                kind.name()
            )));
        }
    }
    match kind {
        ScenarioKind::Propagator => run_propagator(&params(&scenario.params)?),
        ScenarioKind::Pipeline => run_pipeline(&params(&scenario.params)?),
        ScenarioKind::Qdiffeo => run_qdiffeo(&params(&scenario.params)?, require_seed(seed, kind)?),
        ScenarioKind::Align => run_align(&params(&scenario.params)?, seed),
        ScenarioKind::Beables => run_beables(&params(&scenario.params)?, require_seed(seed, kind)?),
        ScenarioKind::BundleCheck => run_bundle_check(&params(&scenario.params)?, seed),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::IoFailure(format!("{}: {e}", path.display())))
}

/// Runs a loaded (or failed-to-load) scenario and writes the report and
/// table into `out_dir`.
pub fn run(kind: ScenarioKind, scenario: Result<Scenario>, seed_override: Option<u64>, out_dir: &Path) -> Outcome {
    let scenario_ok = scenario.as_ref().ok();
    let seed = seed_override.or(scenario_ok.and_then(|s| s.seed));
    let outputs = scenario_ok.map(|s| s.outputs.clone()).unwrap_or_default();
    let echoed = scenario_ok.map_or(Value::Null, |s| s.params.clone());
    let report_name = outputs.report.unwrap_or_else(|| "report.json".to_string());
    let table_name = outputs.table.unwrap_or_else(|| format!("{}.csv", kind.name()));

    let mut errors = Vec::new();
    let mut files = Vec::new();
    let mut tables = Vec::new();
    let data = scenario.and_then(|s| execute(kind, &s, seed));
    let (exit_code, result) = match data {
        Ok(d) => {
            let mut code = if d.tolerance_failed { EXIT_TOLERANCE } else { EXIT_OK };
            if let Some(e) = &d.failure {
                errors.push(ErrorEntry::from(e));
                code = EXIT_VALIDATION;
            }
            let written = fs::create_dir_all(out_dir)
                .map_err(|e| Error::IoFailure(format!("{}: {e}", out_dir.display())))
                .and_then(|_| d.table.to_csv())
                .and_then(|bytes| write_file(&out_dir.join(&table_name), &bytes));
            match written {
                Ok(()) => {
                    files.push(out_dir.join(&table_name));
                    tables.push(table_name);
                }
                Err(e) => {
                    errors.push(ErrorEntry::from(&e));
                    code = EXIT_VALIDATION;
                }
            }
            (code, d.result)
        }
        Err(e) => {
            errors.push(ErrorEntry::from(&e));
            (EXIT_VALIDATION, Value::Null)
        }
    };
    let status = match exit_code {
        EXIT_OK => "ok",
        EXIT_TOLERANCE => "tolerance_failure",
        _ => "error",
    };
    let report = json!({
        "kind": kind.name(),
        "seed": seed,
        "status": status,
        "exit_code": exit_code,
        "errors": errors,
        "params": echoed,
        "result": result,
        "tables": tables,
    });
    let mut exit_code = exit_code;
    let report_path = out_dir.join(&report_name);
    let written = fs::create_dir_all(out_dir)
        .map_err(|e| Error::IoFailure(format!("{}: {e}", out_dir.display())))
        .and_then(|_| to_json_17(&report))
        .and_then(|bytes| write_file(&report_path, &bytes));
    match written {
        Ok(()) => files.push(report_path),
        Err(e) => {
            errors.push(ErrorEntry::from(&e));
            exit_code = EXIT_VALIDATION;
        }
    }
    Outcome {
        exit_code,
        errors,
        files,
    }
}

// ---------------------------------------------------------------- propagator

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagatorParams {
    pub mass: f64,
    pub hbar: f64,
    pub potential: Potential,
    pub lo: i64,
    pub hi: i64,
    pub positions: usize,
    #[serde(deserialize_with = "crate::serde_util::rational::deserialize")]
    pub duration: Rational64,
    pub slices: usize,
    pub y_i: f64,
    /// Endpoints summarised in the report; defaults to `y_i`.
    pub check_points: Option<Vec<f64>>,
    /// Largest accepted relative error of `|K|` at the check points.
    pub modulus_tolerance: Option<f64>,
    /// Largest accepted phase error, in radians, at the check points.
    pub phase_tolerance: Option<f64>,
}

impl Default for PropagatorParams {
    fn default() -> Self {
        PropagatorParams {
            mass: 1.0,
            hbar: 1.0,
            potential: Potential::Zero,
            lo: -10,
            hi: 10,
            positions: 401,
            duration: Rational64::from_integer(1),
            slices: 64,
            y_i: 0.0,
            check_points: None,
            modulus_tolerance: None,
            phase_tolerance: None,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn particle_model(
    mass: f64,
    hbar: f64,
    potential: Potential,
    lo: i64,
    hi: i64,
    positions: usize,
    duration: Rational64,
    slices: usize,
) -> Result<ParticleModel> {
    if slices == 0 || duration <= Rational64::from_integer(0) {
        return Err(Error::InvalidModel("need a positive duration and at least one slice".into()));
    }
    let lattice = PositionLattice::spanning(Rational64::from_integer(lo), Rational64::from_integer(hi), positions)?;
    let time = TimeGrid {
        t_i: Rational64::from_integer(0),
        dt: duration / Rational64::from_integer(slices as i64),
        slices,
    };
    ParticleModel::new(mass, hbar, potential, lattice, time)
}

/// Phase difference wrapped into `(-pi, pi]`.
pub fn phase_error(a: Complex64, b: Complex64) -> f64 {
    (a * b.conj()).arg()
}

fn run_propagator(p: &PropagatorParams) -> Result<RunData> {
    let model = particle_model(p.mass, p.hbar, p.potential, p.lo, p.hi, p.positions, p.duration, p.slices)?;
    let row = propagator_row(&model, p.y_i)?;
    let mut table = Table::new(&["y_f", "re_k", "im_k", "abs_k", "re_exact", "im_exact", "abs_exact"]);
    let mut exact_row = Vec::with_capacity(row.len());
    for (j, k) in row.iter().enumerate() {
        let y = model.lattice.position(j as i64);
        let e = analytic_propagator(&model, p.y_i, y)?;
        exact_row.push(e);
        table.push(vec![y.into(), k.re.into(), k.im.into(), k.norm().into(), e.re.into(), e.im.into(), e.norm().into()]);
    }
    let dy = model.dy();
    let y0 = model.lattice.position(0);
    let mut checks = Vec::new();
    let mut failed = false;
    for y in p.check_points.clone().unwrap_or_else(|| vec![p.y_i]) {
        let q = (y - y0) / dy;
        let j = q.round();
        if (q - j).abs() > 1e-9 || j < 0.0 || j as usize >= row.len() {
            return Err(Error::InvalidBoundary(format!("check point {y} is not a lattice point")));
        }
        let (k, e) = (row[j as usize], exact_row[j as usize]);
        let modulus_error = (k.norm() - e.norm()).abs() / e.norm();
        let phase = phase_error(k, e).abs();
        failed |= p.modulus_tolerance.is_some_and(|t| !(modulus_error <= t));
        failed |= p.phase_tolerance.is_some_and(|t| !(phase <= t));
        checks.push(json!({
            "y_f": y,
            "k": [k.re, k.im],
            "exact": [e.re, e.im],
            "abs_k": k.norm(),
            "abs_exact": e.norm(),
            "modulus_relative_error": modulus_error,
            "phase_error": phase,
        }));
    }
    Ok(RunData {
        result: json!({ "dt": model.dt(), "dy": dy, "checks": checks }),
        table,
        tolerance_failed: failed,
        failure: None,
    })
}

// ---------------------------------------------------------------- pipeline

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineParams {
    pub mass: f64,
    pub hbar: f64,
    pub potential: Potential,
    pub lo: i64,
    pub hi: i64,
    #[serde(deserialize_with = "crate::serde_util::rational::deserialize")]
    pub duration: Rational64,
    /// Slice counts `1..=max_slices` and lattice sizes
    /// `min_positions..=max_positions` are all run.
    pub max_slices: usize,
    pub min_positions: usize,
    pub max_positions: usize,
    pub tolerance: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            mass: 1.0,
            hbar: 1.0,
            potential: Potential::Harmonic { omega: 1.0 },
            lo: -2,
            hi: 2,
            duration: Rational64::new(1, 2),
            max_slices: 6,
            min_positions: 2,
            max_positions: 9,
            tolerance: 1e-12,
        }
    }
}

/// `sum_paths (1/Z) exp(i S / hbar)` by direct enumeration.
pub fn brute_force_amplitude(model: &ParticleModel, boundary: &BoundarySpec) -> Result<(Complex64, usize)> {
    let paths = enumerate_paths(model, boundary, ENUMERATION_CAP)?;
    let n = model.time.slices as i32;
    let z = model.slice_factor().powi(n) * model.dy().powi(n - 1);
    let mut acc = crate::numerics::ComplexSum::new();
    for u in &paths {
        acc.add(z * Complex64::from_polar(1.0, action(model, u)? / model.hbar));
    }
    Ok((acc.value(), paths.len()))
}

fn run_pipeline(p: &PipelineParams) -> Result<RunData> {
    if p.min_positions < 2 || p.min_positions > p.max_positions || p.max_slices == 0 {
        return Err(Error::SchemaError("need 2 <= min_positions <= max_positions and max_slices >= 1".into()));
    }
    let mut table = Table::new(&[
        "slices", "positions", "y_i", "y_f", "paths", "re_pipeline", "im_pipeline", "re_brute", "im_brute", "abs_diff",
    ]);
    let mut worst: f64 = 0.0;
    let mut failed = false;
    let mut instances = 0usize;
    for slices in 1..=p.max_slices {
        for positions in p.min_positions..=p.max_positions {
            let model = particle_model(p.mass, p.hbar, p.potential, p.lo, p.hi, positions, p.duration, slices)?;
            let last = positions as i64 - 1;
            for (a, b) in [(0, last), (last / 2, last / 2), (last, 1.min(last))] {
                let pos = |j: i64| model.lattice.origin + model.lattice.step * Rational64::from_integer(j);
                let boundary = BoundarySpec::path(model.time.t_i, model.time.t_f(), Some(pos(a)), Some(pos(b)))?;
                let via_states = pipeline_amplitude(&model, &boundary)?;
                let (brute, paths) = brute_force_amplitude(&model, &boundary)?;
                let diff = (via_states - brute).norm();
                let rel = diff / brute.norm().max(1.0);
                worst = worst.max(rel);
                failed |= !(rel <= p.tolerance);
                instances += 1;
                table.push(vec![
                    slices.into(),
                    positions.into(),
                    model.lattice.position(a).into(),
                    model.lattice.position(b).into(),
                    paths.into(),
                    via_states.re.into(),
                    via_states.im.into(),
                    brute.re.into(),
                    brute.im.into(),
                    diff.into(),
                ]);
            }
        }
    }
    Ok(RunData {
        result: json!({ "instances": instances, "max_relative_difference": worst, "tolerance": p.tolerance }),
        table,
        tolerance_failed: failed,
        failure: None,
    })
}

// ---------------------------------------------------------------- qdiffeo

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QdiffeoParams {
    pub state: FieldStateSpec,
    pub round_trips: usize,
    pub triples: usize,
    pub corruptions: usize,
    pub max_shift: i64,
    pub reflect: bool,
    pub tolerance: f64,
}

impl Default for QdiffeoParams {
    fn default() -> Self {
        QdiffeoParams {
            state: FieldStateSpec::default(),
            round_trips: 100,
            triples: 100,
            corruptions: 100,
            max_shift: 3,
            reflect: true,
            tolerance: 1e-12,
        }
    }
}

/// Whether two A-states agree bit for bit, with `-0.0` and `0.0` identified.
pub fn bitwise_equal(a: &ExtendedAState, b: &ExtendedAState) -> bool {
    let bits = |z: Complex64| (canonical_bits(z.re), canonical_bits(z.im));
    a.len() == b.len()
        && a.terms().zip(b.terms()).all(|((ia, ta), (ib, tb))| {
            ia == ib
                && ta.config == tb.config
                && bits(ta.weight) == bits(tb.weight)
                && ta.coeff.name == tb.coeff.name
                && ta.coeff.field.slots() == tb.coeff.field.slots()
                && ta.coeff.field.values().len() == tb.coeff.field.values().len()
                && ta.coeff.field.values().iter().zip(tb.coeff.field.values()).all(|((sa, va), (sb, vb))| {
                    sa == sb && va.iter().zip(vb).all(|(x, y)| canonical_bits(*x) == canonical_bits(*y))
                })
        })
}

/// Largest weight difference between two states over the union of their
/// branches; `None` when coefficient sets or configurations differ.
pub fn weight_distance(a: &ExtendedAState, b: &ExtendedAState) -> Option<f64> {
    let mut d: f64 = 0.0;
    for (id, t) in a.terms() {
        match b.get(id) {
            Some(s) if s.config == t.config && s.coeff == t.coeff => d = d.max((s.weight - t.weight).norm()),
            Some(_) => return None,
            None => d = d.max(t.weight.norm()),
        }
    }
    for (id, t) in b.terms() {
        if a.get(id).is_none() {
            d = d.max(t.weight.norm());
        }
    }
    Some(d)
}

/// Independent random lattice maps per branch of `state`, each replaced by
/// the identity with probability 1/5.
pub fn random_restricted_qd<R: Rng>(rng: &mut R, state: &ExtendedAState, max_shift: i64, reflect: bool) -> RestrictedQD {
    let dim = state
        .terms()
        .find_map(|(_, t)| t.config.as_field().map(|f| f.dim()))
        .unwrap_or(1);
    let maps = state
        .ids()
        .map(|u| {
            let m = if rng.random_bool(0.2) {
                Diffeo::Identity
            } else {
                Diffeo::Lattice(random_lattice_map(rng, dim, max_shift, reflect))
            };
            (u.clone(), m)
        })
        .collect();
    RestrictedQD::from_maps(maps)
}

/// `(u, v, theta)` entries of a phase table.
pub type PhaseTriples = Vec<(ConfigId, ConfigId, f64)>;

/// An antisymmetric phase table over `ids` and one corruption of it.
pub fn random_phase_tables<R: Rng>(rng: &mut R, ids: &[ConfigId]) -> (PhaseTriples, PhaseTriples) {
    let mut good = Vec::new();
    for (i, u) in ids.iter().enumerate() {
        for v in &ids[i + 1..] {
            let th = rng.random_range(-3.0..3.0);
            good.push((u.clone(), v.clone(), th));
            good.push((v.clone(), u.clone(), -th));
        }
    }
    let mut bad = good.clone();
    match rng.random_range(0..3) {
        0 => {
            let i = rng.random_range(0..bad.len());
            bad[i].2 = -bad[i].2 + if bad[i].2 == 0.0 { 0.5 } else { 0.0 };
        }
        1 => {
            let i = rng.random_range(0..bad.len());
            bad[i].2 += rng.random_range(1e-6..1.0);
        }
        _ => {
            let u = ids.choose(rng).expect("non-empty ids").clone();
            bad.push((u.clone(), u, rng.random_range(0.1..3.0)));
        }
    }
    (good, bad)
}

fn run_qdiffeo(p: &QdiffeoParams, seed: u64) -> Result<RunData> {
    let mut table = Table::new(&["check", "index", "passed", "deviation"]);
    let mut round_trip_failures = 0usize;
    for i in 0..p.round_trips {
        let mut rng = sample_rng(seed, i as u64);
        let s = random_field_state(&mut rng, &p.state)?;
        let qd = random_restricted_qd(&mut rng, &s, p.max_shift, p.reflect);
        let image = apply_restricted(&qd, &s)?;
        let back = apply_restricted(&reverse_for(&qd, &s)?, &image)?;
        let ok = bitwise_equal(&back, &s);
        round_trip_failures += usize::from(!ok);
        table.push(vec!["round_trip".into(), i.into(), Cell::Int(ok as i64), weight_distance(&back, &s).unwrap_or(f64::INFINITY).into()]);
    }
    let mut associativity_failures = 0usize;
    let mut worst: f64 = 0.0;
    for i in 0..p.triples {
        let mut rng = sample_rng(seed, (p.round_trips + i) as u64);
        let s = random_field_state(&mut rng, &p.state)?;
        let q1 = random_restricted_qd(&mut rng, &s, p.max_shift, p.reflect);
        let s1 = apply_restricted(&q1, &s)?;
        let q2 = random_restricted_qd(&mut rng, &s1, p.max_shift, p.reflect);
        let s2 = apply_restricted(&q2, &s1)?;
        let q3 = random_restricted_qd(&mut rng, &s2, p.max_shift, p.reflect);
        let mut catalog = Catalog::new();
        for st in [&s, &s1, &s2] {
            for (_, t) in st.terms() {
                catalog.register(t.config.clone());
            }
        }
        let left = compose(&compose(&q1, &q2, &catalog)?, &q3, &catalog)?;
        let right = compose(&q1, &compose(&q2, &q3, &catalog)?, &catalog)?;
        let (a, b) = (apply_restricted(&left, &s)?, apply_restricted(&right, &s)?);
        let d = weight_distance(&a, &b).unwrap_or(f64::INFINITY);
        worst = worst.max(d);
        let ok = d <= p.tolerance;
        associativity_failures += usize::from(!ok);
        table.push(vec!["associativity".into(), i.into(), Cell::Int(ok as i64), d.into()]);
    }
    let mut accepted_corruptions = 0usize;
    let mut rejected_valid = 0usize;
    for i in 0..p.corruptions {
        let mut rng = sample_rng(seed, (p.round_trips + p.triples + i) as u64);
        let n = rng.random_range(2..=5);
        let ids: Vec<ConfigId> = (0..n).map(|k| ConfigId::new(format!("b{k}"))).collect();
        let (good, bad) = random_phase_tables(&mut rng, &ids);
        let good_ok = PhaseFn::table(good).is_ok();
        let bad_rejected = PhaseFn::table(bad).is_err();
        rejected_valid += usize::from(!good_ok);
        accepted_corruptions += usize::from(!bad_rejected);
        table.push(vec!["phase_corruption".into(), i.into(), Cell::Int((good_ok && bad_rejected) as i64), 0.0.into()]);
    }
    let failed = round_trip_failures + associativity_failures + accepted_corruptions + rejected_valid > 0;
    Ok(RunData {
        result: json!({
            "round_trips": p.round_trips,
            "round_trip_failures": round_trip_failures,
            "triples": p.triples,
            "associativity_failures": associativity_failures,
            "max_associativity_deviation": worst,
            "corruptions": p.corruptions,
            "accepted_corruptions": accepted_corruptions,
            "rejected_valid_tables": rejected_valid,
        }),
        table,
        tolerance_failed: failed,
        failure: None,
    })
}

// ---------------------------------------------------------------- align

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignParams {
    /// Constant branch metrics; when absent, random tasks are drawn.
    pub metrics: Option<Vec<Vec<Vec<f64>>>>,
    pub dim: usize,
    pub tasks: usize,
    pub branches: Option<usize>,
    pub perturbation: Option<f64>,
    pub max_velocity: Option<f64>,
    pub radius: Option<f64>,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            metrics: None,
            dim: 2,
            tasks: 10,
            branches: None,
            perturbation: None,
            max_velocity: None,
            radius: None,
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::SchemaError("each metric must be a non-empty square array".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Alignment plus the lightcone test before and after it.
pub fn align_with_lightcones(task: &crate::qep_alignment::AlignmentTask) -> Result<(Alignment, bool, bool)> {
    let out = align_at_point(task)?;
    let co = crate::qep_alignment::coincidence_stage(task)?;
    let before = lightcone_coincidence(&co.models, &co.point)?;
    let after = lightcone_coincidence(&out.aligned.branches, &out.aligned.point)?;
    Ok((out, before, after))
}

fn run_align(p: &AlignParams, seed: Option<u64>) -> Result<RunData> {
    let tasks = match &p.metrics {
        Some(ms) => {
            let ms = ms.iter().map(|m| matrix_from_rows(m)).collect::<Result<Vec<_>>>()?;
            if ms.iter().any(|m| m.nrows() != ms[0].nrows()) {
                return Err(Error::SchemaError("all metrics must share one dimension".into()));
            }
            vec![constant_metric_task(&ms, p.radius.unwrap_or(0.1))?]
        }
        None => {
            let seed = require_seed(seed, ScenarioKind::Align)?;
            let mut family = TaskFamily::standard(p.dim);
            family.branches = p.branches.unwrap_or(family.branches);
            family.perturbation = p.perturbation.unwrap_or(family.perturbation);
            family.max_velocity = p.max_velocity.unwrap_or(family.max_velocity);
            family.radius = p.radius.unwrap_or(family.radius);
            (0..p.tasks)
                .map(|i| random_task(&mut sample_rng(seed, i as u64), &family))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut table = Table::new(&["task", "radius", "pairwise_max"]);
    let mut summaries = Vec::new();
    let mut failed = false;
    for (i, task) in tasks.iter().enumerate() {
        let (out, before, after) = align_with_lightcones(task)?;
        let r = &out.report;
        for (radius, d) in r.radii.iter().zip(&r.pairwise_max) {
            table.push(vec![i.into(), (*radius).into(), (*d).into()]);
        }
        failed |= !r.passed || !after;
        summaries.push(json!({
            "task": i,
            "passed": r.passed,
            "eta_residual": r.eta_residual,
            "zeroth_residual": r.zeroth_residual,
            "first_residual": r.first_residual,
            "metric_scale": r.metric_scale,
            "slope": r.slope,
            "lightcone_before": before,
            "lightcone_after": after,
            "branches": to_value(&r.branches),
        }));
    }
    Ok(RunData {
        result: json!({ "tasks": summaries }),
        table,
        tolerance_failed: failed,
        failure: None,
    })
}

// ---------------------------------------------------------------- beables

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeablesParams {
    pub state: FieldStateSpec,
    pub beable: BeableFn,
    pub sampler: QdSampler,
    pub samples: u64,
    /// When set, the run fails unless the violation count agrees.
    pub expect_invariant: Option<bool>,
}

impl Default for BeablesParams {
    fn default() -> Self {
        BeablesParams {
            state: FieldStateSpec::default(),
            beable: BeableFn::TopologySignature,
            sampler: QdSampler::LatticeExact {
                max_shift: 3,
                reflect: true,
            },
            samples: 50,
            expect_invariant: None,
        }
    }
}

fn run_beables(p: &BeablesParams, seed: u64) -> Result<RunData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = random_field_state(&mut rng, &p.state)?;
    let report = is_beable_sampled(&p.beable, &state, &p.sampler, p.samples, seed)?;
    let mut table = Table::new(&["sample", "deviation"]);
    for v in &report.violations {
        table.push(vec![v.sample.into(), v.deviation.into()]);
    }
    let failed = p.expect_invariant.is_some_and(|inv| inv != report.is_clean());
    Ok(RunData {
        result: json!({ "value": to_value(&p.beable.eval(&state)?), "report": to_value(&report) }),
        table,
        tolerance_failed: failed,
        failure: None,
    })
}

// ---------------------------------------------------------------- bundle-check

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleParams {
    /// Explicit bundle description.
    #[serde(default)]
    pub bundle: Option<BundleSpec>,
    /// Otherwise a random field state whose branches become the fibres.
    #[serde(default)]
    pub state: Option<FieldStateSpec>,
    /// `basic` or `full` (default).
    #[serde(default = "full")]
    pub level: String,
}

fn full() -> String {
    "full".to_string()
}

fn run_bundle_check(p: &BundleParams, seed: Option<u64>) -> Result<RunData> {
    let bundle: QuantumFibreBundle = match (&p.bundle, &p.state) {
        (Some(spec), None) => spec.build()?,
        (None, Some(spec)) => {
            let seed = require_seed(seed, ScenarioKind::BundleCheck)?;
            let state = random_field_state(&mut ChaCha8Rng::seed_from_u64(seed), spec)?;
            QuantumFibreBundle::from_field_state(&state)?
        }
        _ => return Err(Error::SchemaError("give exactly one of `bundle` and `state`".into())),
    };
    let report = match p.level.as_str() {
        "basic" => validate_basic(&bundle),
        "full" => validate_full(&bundle),
        other => return Err(Error::SchemaError(format!("unknown validation level `{other}`"))),
    };
    let mut table = Table::new(&["severity", "axiom", "detail"]);
    for (sev, list) in [("hard", &report.hard), ("surrogate", &report.surrogate)] {
        for f in list {
            table.push(vec![sev.into(), to_value(&f.axiom).as_str().unwrap_or_default().into(), f.detail.clone().into()]);
        }
    }
    let mut families = Vec::new();
    let mut failure = None;
    if report.is_valid() {
        for i in 0..bundle.charts.len() {
            let c = verify_consistency(&chart_identification_family(&bundle, i)?);
            families.push(json!({ "chart": i, "consistent": c.is_clean(), "triples_checked": c.triples_checked }));
            if !c.is_clean() && failure.is_none() {
                failure = Some(Error::InvalidModel(format!("chart {i} induces an inconsistent identification family")));
            }
        }
    } else {
        let axioms: BTreeSet<String> = report.hard.iter().map(|f| format!("{:?}", f.axiom)).collect();
        failure = Some(Error::InvalidModel(format!("bundle violates {axioms:?}")));
    }
    Ok(RunData {
        result: json!({
            "points": bundle.point_map.len(),
            "branches": bundle.base.len(),
            "charts": bundle.charts.len(),
            "valid": report.is_valid(),
            "clean": report.is_clean(),
            "report": to_value(&report),
            "identification_families": families,
        }),
        table,
        tolerance_failed: false,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_in(kind: ScenarioKind, json: &str, seed: Option<u64>) -> (Outcome, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let out = run(kind, Scenario::from_json(json), seed, dir.path());
        (out, dir)
    }

    fn report(dir: &tempfile::TempDir) -> Value {
        serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap()
    }

    #[test]
    fn json_floats_have_17_digits() {
        let bytes = to_json_17(&json!({ "x": 0.1, "n": 3 })).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"n\": 3"));
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let (out, dir) = run_in(ScenarioKind::Propagator, r#"{"params": {"massss": 1}}"#, None);
        assert_eq!(out.exit_code, EXIT_VALIDATION);
        assert_eq!(out.errors[0].kind, "SchemaError");
        assert_eq!(report(&dir)["status"], "error");
    }

    #[test]
    fn kind_mismatch_and_missing_seed() {
        let (out, _d) = run_in(ScenarioKind::Pipeline, r#"{"kind": "align"}"#, None);
        assert_eq!(out.errors[0].kind, "SchemaError");
        let (out, _d) = run_in(ScenarioKind::Beables, "{}", None);
        assert_eq!(out.errors[0].kind, "SchemaError");
    }

    #[test]
    fn small_propagator_writes_both_files() {
        let json = r#"{"params": {"lo": -2, "hi": 2, "positions": 9, "slices": 2, "duration": "1/2"}}"#;
        let (out, dir) = run_in(ScenarioKind::Propagator, json, None);
        assert_eq!(out.exit_code, EXIT_OK, "{:?}", out.errors);
        let csv = fs::read_to_string(dir.path().join("propagator.csv")).unwrap();
        assert_eq!(csv.lines().count(), 10);
        assert_eq!(report(&dir)["tables"][0], "propagator.csv");
    }

    #[test]
    fn tolerance_failure_exits_two() {
        let json = r#"{"params": {"lo": -2, "hi": 2, "positions": 5, "slices": 3, "modulus_tolerance": 1e-9}}"#;
        let (out, dir) = run_in(ScenarioKind::Propagator, json, None);
        assert_eq!(out.exit_code, EXIT_TOLERANCE);
        assert_eq!(report(&dir)["status"], "tolerance_failure");
    }

    #[test]
    fn non_lorentzian_alignment_is_wrong_signature() {
        let json = r#"{"params": {"metrics": [[[1, 0], [0, 1]]]}}"#;
        let (out, _d) = run_in(ScenarioKind::Align, json, None);
        assert_eq!(out.exit_code, EXIT_VALIDATION);
        assert_eq!(out.errors[0].kind, "WrongSignature");
    }

    #[test]
    fn seeded_beables_rerun_identically() {
        let json = r#"{"seed": 11, "params": {"samples": 8, "state": {"terms": 3}}}"#;
        let (a, da) = run_in(ScenarioKind::Beables, json, None);
        let (b, db) = run_in(ScenarioKind::Beables, json, None);
        assert_eq!(a.exit_code, EXIT_OK, "{:?}", a.errors);
        assert_eq!(b.exit_code, EXIT_OK);
        for f in ["report.json", "beables.csv"] {
            assert_eq!(fs::read(da.path().join(f)).unwrap(), fs::read(db.path().join(f)).unwrap());
        }
    }

    #[test]
    fn seed_override_wins() {
        let json = r#"{"seed": 1, "params": {"samples": 2, "state": {"terms": 2}}}"#;
        let (_, d) = run_in(ScenarioKind::Beables, json, Some(5));
        assert_eq!(report(&d)["seed"], 5);
    }

    #[test]
    fn bundle_check_of_random_state_is_valid() {
        let (out, dir) = run_in(ScenarioKind::BundleCheck, r#"{"params": {"state": {"terms": 3}}}"#, Some(2));
        assert_eq!(out.exit_code, EXIT_OK, "{:?}", out.errors);
        assert_eq!(report(&dir)["result"]["valid"], true);
    }

    #[test]
    fn small_pipeline_family_agrees() {
        let json = r#"{"params": {"max_slices": 3, "max_positions": 4}}"#;
        let (out, dir) = run_in(ScenarioKind::Pipeline, json, None);
        assert_eq!(out.exit_code, EXIT_OK, "{:?}", out.errors);
        assert_eq!(report(&dir)["result"]["instances"], 3 * 3 * 3);
    }

    #[test]
    fn small_qdiffeo_run_passes() {
        let json = r#"{"seed": 4, "params": {"round_trips": 5, "triples": 5, "corruptions": 20, "state": {"terms": 3}}}"#;
        let (out, dir) = run_in(ScenarioKind::Qdiffeo, json, None);
        assert_eq!(out.exit_code, EXIT_OK, "{:?} {}", out.errors, report(&dir)["result"]);
    }
}
