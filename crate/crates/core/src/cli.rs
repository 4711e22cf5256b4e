//! Command-line front end: system bundles, reports and exit codes.
//!
//! Exit codes: 0 success, 1 solvability failure, 2 input error,
//! 3 verification failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Map, Number, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{
    analyze_pencil, check_derivative_condition, check_proportional_condition,
    check_rank_feasibility, completely_observable, max_derivative_rank, SolvabilityVerdict,
};
use crate::error::Error;
use crate::matops::{rank, Matrix, RankTolerance};
use crate::regularize::{
    regularize_combined, regularize_derivative, regularize_derivative_with_rank,
    regularize_proportional, FeedbackSynthesis, SynthesisOptions,
};
use crate::sysmodel::{random_ph_system, validate_ph, DescriptorSystem, PhRealization};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNSOLVABLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

const DEFAULT_PH_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "phreg",
    version,
    about = "Regularize port-Hamiltonian descriptor systems by output feedback"
)]
pub struct Cli {
    /// Relative rank tolerance.
    #[arg(long, global = true, env = "PHREG_TOL")]
    pub tol: Option<f64>,

    /// Tolerance for the port-Hamiltonian residuals.
    #[arg(long, global = true, default_value_t = DEFAULT_PH_TOL)]
    pub ph_tol: f64,

    /// Write the report to this file instead of stdout.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the port-Hamiltonian identities of a bundle with a realization.
    Validate(InputArgs),
    /// Regularity, index and solvability conditions.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        /// Also test feasibility of this rank for derivative feedback.
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Synthesize feedback and write the closed-loop bundle.
    Regularize {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum)]
        mode: CliMode,
        /// Target rank of the closed-loop E (modes pd and d-rank).
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Include the condensed-form reports.
        #[arg(long)]
        dump_forms: bool,
        /// Closed-loop bundle destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a random port-Hamiltonian bundle.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        rank_e: usize,
        #[arg(long, default_value_t = 1)]
        rank_r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use a singular Q and a nonzero P.
        #[arg(long)]
        singular_q: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// JSON system bundle.
    #[arg(required_unless_present = "mm_dir", conflicts_with = "mm_dir")]
    pub path: Option<PathBuf>,
    /// Directory of Matrix Market files E.mtx, A.mtx, B.mtx, C.mtx and
    /// optionally Q.mtx, J.mtx, R.mtx, G.mtx, P.mtx.
    #[arg(long)]
    pub mm_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CliMode {
    /// Proportional feedback.
    P,
    /// Derivative feedback to the largest rank.
    D,
    /// Combined derivative and proportional feedback with a target rank.
    Pd,
    /// Derivative feedback with a target rank.
    DRank,
}

/// Result of one command: exit code, report document and a message for
/// stderr.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub report: Option<Value>,
    pub message: Option<String>,
}

impl Outcome {
    fn input_error(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            report: None,
            message: Some(msg.into()),
        }
    }
}

/// A system with whatever realization fields the input carried.
#[derive(Clone, Debug)]
pub struct SystemBundle {
    pub system: DescriptorSystem,
    pub q: Option<Matrix>,
    pub j: Option<Matrix>,
    pub r: Option<Matrix>,
    pub g: Option<Matrix>,
    pub p: Option<Matrix>,
    /// sha256 of the input bytes.
    pub digest: String,
}

type Rows = Vec<Vec<f64>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBundle {
    n: usize,
    m: usize,
    #[serde(rename = "E")]
    e: Rows,
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "Q", default)]
    q: Option<Rows>,
    #[serde(rename = "J", default)]
    j: Option<Rows>,
    #[serde(rename = "R", default)]
    r: Option<Rows>,
    #[serde(rename = "G", default)]
    g: Option<Rows>,
    #[serde(rename = "P", default)]
    p: Option<Rows>,
}

fn to_matrix(name: &str, rows: &Rows, shape: (usize, usize)) -> Result<Matrix, String> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        let got: Vec<usize> = rows.iter().map(Vec::len).collect();
        return Err(format!(
            "{name} must be {}x{} (row lengths {got:?})",
            shape.0, shape.1
        ));
    }
    Ok(Matrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

impl SystemBundle {
    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn m(&self) -> usize {
        self.system.m()
    }

    /// Parses a JSON bundle.
    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let raw: RawBundle =
            serde_json::from_slice(bytes).map_err(|e| format!("cannot parse bundle: {e}"))?;
        let (n, m) = (raw.n, raw.m);
        let sq = (n, n);
        let port = (n, m);
        let opt = |name: &str, rows: &Option<Rows>, shape| {
            rows.as_ref().map(|r| to_matrix(name, r, shape)).transpose()
        };
        let system = DescriptorSystem::new(
            to_matrix("E", &raw.e, sq)?,
            to_matrix("A", &raw.a, sq)?,
            to_matrix("B", &raw.b, port)?,
            to_matrix("C", &raw.c, (m, n))?,
        )
        .map_err(|e| e.to_string())?;
        Ok(Self {
            system,
            q: opt("Q", &raw.q, sq)?,
            j: opt("J", &raw.j, sq)?,
            r: opt("R", &raw.r, sq)?,
            g: opt("G", &raw.g, port)?,
            p: opt("P", &raw.p, port)?,
            digest: hex::encode(Sha256::digest(bytes)),
        })
    }

    /// Reads `E.mtx`, `A.mtx`, `B.mtx`, `C.mtx` and any of the optional
    /// realization files from `dir`.
    pub fn from_mm_dir(dir: &Path) -> Result<Self, String> {
        let mut hasher = Sha256::new();
        let mut load = |name: &str, required: bool| -> Result<Option<Matrix>, String> {
            let path = dir.join(format!("{name}.mtx"));
            if !path.exists() {
                return if required {
                    Err(format!("{} is missing", path.display()))
                } else {
                    Ok(None)
                };
            }
            let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            hasher.update(name.as_bytes());
            hasher.update(text.as_bytes());
            let coo = nalgebra_sparse::io::load_coo_from_matrix_market_str::<f64>(&text)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(Some(Matrix::from(&coo)))
        };
        let e = load("E", true)?.unwrap_or_default();
        let a = load("A", true)?.unwrap_or_default();
        let b = load("B", true)?.unwrap_or_default();
        let c = load("C", true)?.unwrap_or_default();
        let [q, j, r, g, p] = ["Q", "J", "R", "G", "P"].map(|name| load(name, false));
        let system = DescriptorSystem::new(e, a, b, c).map_err(|e| e.to_string())?;
        let bundle = Self {
            system,
            q: q?,
            j: j?,
            r: r?,
            g: g?,
            p: p?,
            digest: hex::encode(hasher.finalize()),
        };
        let (n, m) = (bundle.n(), bundle.m());
        for (name, mat, shape) in [
            ("Q", &bundle.q, (n, n)),
            ("J", &bundle.j, (n, n)),
            ("R", &bundle.r, (n, n)),
            ("G", &bundle.g, (n, m)),
            ("P", &bundle.p, (n, m)),
        ] {
            if let Some(mat) = mat {
                if mat.shape() != shape {
                    return Err(format!("{name} is {:?}, expected {shape:?}", mat.shape()));
                }
            }
        }
        Ok(bundle)
    }

    fn load(input: &InputArgs) -> Result<Self, String> {
        match (&input.path, &input.mm_dir) {
            (Some(path), _) => {
                let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
                Self::from_json(&bytes)
            }
            (None, Some(dir)) => Self::from_mm_dir(dir),
            (None, None) => Err("no input given".into()),
        }
    }

    /// Names of the realization fields that are absent; `P` defaults to
    /// zero and is never reported.
    pub fn missing_realization(&self) -> Vec<&'static str> {
        [
            ("Q", &self.q),
            ("J", &self.j),
            ("R", &self.r),
            ("G", &self.g),
        ]
        .into_iter()
        .filter(|(_, m)| m.is_none())
        .map(|(name, _)| name)
        .collect()
    }

    /// The realization when `Q`, `J`, `R`, `G` are all present.
    pub fn realization(&self) -> Option<Result<PhRealization, Error>> {
        if !self.missing_realization().is_empty() {
            return None;
        }
        let p = self
            .p
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.n(), self.m()));
        Some(PhRealization::new(
            self.j.clone()?,
            self.r.clone()?,
            self.q.clone()?,
            self.g.clone()?,
            p,
        ))
    }

    pub fn from_parts(system: DescriptorSystem, real: Option<&PhRealization>) -> Self {
        Self {
            system,
            q: real.map(|x| x.q.clone()),
            j: real.map(|x| x.j.clone()),
            r: real.map(|x| x.r.clone()),
            g: real.map(|x| x.g.clone()),
            p: real.map(|x| x.p.clone()),
            digest: String::new(),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut doc = Map::new();
        doc.insert("n".into(), json!(self.n()));
        doc.insert("m".into(), json!(self.m()));
        let s = &self.system;
        for (name, mat) in [("E", &s.e), ("A", &s.a), ("B", &s.b), ("C", &s.c)] {
            doc.insert(name.into(), matrix_json(mat));
        }
        for (name, mat) in [
            ("Q", &self.q),
            ("J", &self.j),
            ("R", &self.r),
            ("G", &self.g),
            ("P", &self.p),
        ] {
            if let Some(mat) = mat {
                doc.insert(name.into(), matrix_json(mat));
            }
        }
        Value::Object(doc)
    }
}

/// `x` with 17 significant digits, shortest notation of C's `%.17g`.
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..17).contains(&exp) {
        trim(&format!("{x:.*}", (16 - exp) as usize))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

/// JSON number with 17 significant digits; non-finite values become null.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let n: Number = format_f64(x)
        .parse()
        .expect("formatted number is valid JSON");
    Value::Number(n)
}

pub fn matrix_json(m: &Matrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Serializes `value` and sanitizes any float through [`num`].
fn to_value<T: serde::Serialize>(value: &T) -> Value {
    fn fix(v: Value) -> Value {
        match v {
            Value::Number(n) => match n.as_f64() {
                Some(x) if !(n.is_i64() || n.is_u64()) => num(x),
                _ => Value::Number(n),
            },
            Value::Array(a) => Value::Array(a.into_iter().map(fix).collect()),
            Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, fix(v))).collect()),
            other => other,
        }
    }
    fix(serde_json::to_value(value).expect("report types serialize"))
}

/// Writes `text` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn render(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

fn header(command: &str, digest: &str, tol: &RankTolerance, ph_tol: f64) -> Map<String, Value> {
    let mut doc = Map::new();
    doc.insert("command".into(), json!(command));
    doc.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
    doc.insert("input_digest".into(), json!(digest));
    doc.insert(
        "tolerances".into(),
        json!({"rank_relative": num(tol.relative), "rank_absolute": num(tol.absolute), "ph": num(ph_tol)}),
    );
    doc
}

fn verdict_json(v: &SolvabilityVerdict, n: usize) -> Value {
    let mut o = to_value(v).as_object().cloned().unwrap_or_default();
    if v.feasible_rank_range.is_some() {
        o.insert("feasible_ranks".into(), json!(v.feasible_ranks(n)));
    }
    Value::Object(o)
}

/// Exit code and the name of the failed condition for a library error.
pub fn classify(e: &Error) -> (i32, &'static str) {
    match e {
        Error::ProportionalConditionFailed { .. } => (EXIT_UNSOLVABLE, "proportional_condition"),
        Error::DerivativeConditionFailed { .. } => (EXIT_UNSOLVABLE, "derivative_condition"),
        Error::NotObservable(_) => (EXIT_UNSOLVABLE, "complete_observability"),
        Error::RankInfeasible { .. } => (EXIT_UNSOLVABLE, "rank_feasibility"),
        Error::ParityViolated { .. } => (EXIT_UNSOLVABLE, "rank_parity"),
        Error::SynthesisExhausted { .. } => (EXIT_UNSOLVABLE, "derivative_search"),
        Error::SingularPencil => (EXIT_UNSOLVABLE, "regularity"),
        Error::VerificationFailed(_) => (EXIT_VERIFICATION, "verification"),
        Error::SingularBlock { .. } | Error::SchurFailed => (EXIT_VERIFICATION, "numerical"),
        Error::Dimension(_)
        | Error::NonFinite(_)
        | Error::InvalidArgument(_)
        | Error::Precondition(_)
        | Error::Structure(_)
        | Error::ValidationFailed(_) => (EXIT_INPUT, "input"),
    }
}

fn rank_tolerance(cli: &Cli) -> Result<RankTolerance, String> {
    let d = RankTolerance::default();
    RankTolerance::new(cli.tol.unwrap_or(d.relative), d.absolute).map_err(|e| e.to_string())
}

/// Runs one parsed command without touching stdout or stderr.
pub fn execute(cli: &Cli) -> Outcome {
    let tol = match rank_tolerance(cli) {
        Ok(t) => t,
        Err(e) => return Outcome::input_error(e),
    };
    if !(cli.ph_tol.is_finite() && cli.ph_tol >= 0.0) {
        return Outcome::input_error(format!(
            "--ph-tol must be finite and nonnegative, got {}",
            cli.ph_tol
        ));
    }
    match &cli.command {
        Command::Validate(input) => validate(input, &tol, cli.ph_tol),
        Command::Analyze { input, rank } => analyze(input, *rank, &tol, cli.ph_tol),
        Command::Regularize {
            input,
            mode,
            rank,
            seed,
            dump_forms,
            out,
        } => regularize(
            input,
            *mode,
            *rank,
            *seed,
            *dump_forms,
            out,
            &tol,
            cli.ph_tol,
        ),
        Command::Generate {
            n,
            m,
            rank_e,
            rank_r,
            seed,
            singular_q,
            out,
        } => generate(*n, *m, *rank_e, *rank_r, *seed, *singular_q, out),
    }
}

fn validate(input: &InputArgs, tol: &RankTolerance, ph_tol: f64) -> Outcome {
    let bundle = match SystemBundle::load(input) {
        Ok(b) => b,
        Err(e) => return Outcome::input_error(e),
    };
    let real = match bundle.realization() {
        None => {
            return Outcome::input_error(format!(
                "validation requires realization fields (missing {})",
                bundle.missing_realization().join(", ")
            ))
        }
        Some(Err(e)) => return Outcome::input_error(e.to_string()),
        Some(Ok(r)) => r,
    };
    let rep = match validate_ph(&bundle.system, &real, ph_tol) {
        Ok(r) => r,
        Err(e) => return Outcome::input_error(e.to_string()),
    };
    let mut doc = header("validate", &bundle.digest, tol, ph_tol);
    doc.insert("verdict".into(), json!(rep.verdict));
    doc.insert("failing".into(), json!(rep.failing()));
    doc.insert("residuals".into(), to_value(&rep.residuals));
    doc.insert("rank_B".into(), json!(rep.rank_b));
    doc.insert("rank_C".into(), json!(rep.rank_c));
    let message =
        (!rep.verdict).then(|| format!("not port-Hamiltonian: {}", rep.failing().join(", ")));
    Outcome {
        code: if rep.verdict {
            EXIT_OK
        } else {
            EXIT_UNSOLVABLE
        },
        report: Some(Value::Object(doc)),
        message,
    }
}

fn analyze(input: &InputArgs, target: Option<usize>, tol: &RankTolerance, ph_tol: f64) -> Outcome {
    let bundle = match SystemBundle::load(input) {
        Ok(b) => b,
        Err(e) => return Outcome::input_error(e),
    };
    let s = &bundle.system;
    let n = s.n();
    let mut doc = header("analyze", &bundle.digest, tol, ph_tol);
    doc.insert("n".into(), json!(n));
    doc.insert("m".into(), json!(s.m()));
    match analyze_pencil(&s.e, &s.a, tol) {
        Ok(rep) => {
            doc.insert("regular".into(), json!(rep.regular));
            doc.insert(
                "index".into(),
                rep.index.map_or(json!("undefined"), |i| json!(i)),
            );
            doc.insert("rank_E".into(), json!(rep.rank_e));
            doc.insert("finite_eig_count".into(), json!(rep.finite_eig_count));
        }
        Err(e) => return Outcome::input_error(e.to_string()),
    }
    doc.insert("rank_B".into(), json!(rank(&s.b, tol)));
    doc.insert("rank_C".into(), json!(rank(&s.c, tol)));
    doc.insert(
        "max_derivative_rank".into(),
        json!(max_derivative_rank(s, tol)),
    );
    doc.insert(
        "proportional_condition".into(),
        verdict_json(&check_proportional_condition(s, tol), n),
    );
    doc.insert(
        "derivative_condition".into(),
        verdict_json(&check_derivative_condition(s, tol), n),
    );
    let observable = completely_observable(s, tol);
    doc.insert("completely_observable".into(), json!(observable));
    if observable {
        match check_rank_feasibility(s, target.unwrap_or(n), tol) {
            Ok(v) => {
                doc.insert("mu".into(), json!(v.rank("mu")));
                doc.insert("rank_feasibility".into(), verdict_json(&v, n));
                let rb = rank(&s.b, tol);
                doc.insert(
                    "combined_feasible_ranks".into(),
                    json!((n.saturating_sub(rb)..=n).collect::<Vec<_>>()),
                );
            }
            Err(e) => {
                doc.insert("rank_feasibility_error".into(), json!(e.to_string()));
            }
        }
    } else if target.is_some() {
        doc.insert(
            "rank_feasibility_error".into(),
            json!("system is not completely observable"),
        );
    }
    if let Some(real) = bundle.realization() {
        match real.and_then(|r| validate_ph(s, &r, ph_tol)) {
            Ok(rep) => {
                doc.insert("port_hamiltonian".into(), json!(rep.verdict));
            }
            Err(e) => {
                doc.insert("port_hamiltonian_error".into(), json!(e.to_string()));
            }
        }
    }
    Outcome {
        code: EXIT_OK,
        report: Some(Value::Object(doc)),
        message: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn regularize(
    input: &InputArgs,
    mode: CliMode,
    target: Option<usize>,
    seed: u64,
    dump_forms: bool,
    out: &Path,
    tol: &RankTolerance,
    ph_tol: f64,
) -> Outcome {
    let bundle = match SystemBundle::load(input) {
        Ok(b) => b,
        Err(e) => return Outcome::input_error(e),
    };
    let real = match bundle.realization() {
        Some(Ok(r)) => Some(r),
        Some(Err(e)) => return Outcome::input_error(e.to_string()),
        None => None,
    };
    let s = &bundle.system;
    let opts = SynthesisOptions {
        tol: *tol,
        seed,
        ph_tol,
        ..SynthesisOptions::default()
    };
    let needs_rank = matches!(mode, CliMode::Pd | CliMode::DRank);
    if needs_rank && target.is_none() {
        return Outcome::input_error("--rank is required for modes pd and d-rank");
    }
    if !needs_rank && target.is_some() {
        return Outcome::input_error("--rank applies only to modes pd and d-rank");
    }
    let result = match mode {
        CliMode::P => regularize_proportional(s, real.as_ref(), &opts),
        CliMode::D => regularize_derivative(s, real.as_ref(), &opts),
        CliMode::Pd => regularize_combined(s, real.as_ref(), target.unwrap_or_default(), &opts),
        CliMode::DRank => {
            regularize_derivative_with_rank(s, real.as_ref(), target.unwrap_or_default(), &opts)
        }
    };
    let mut doc = header("regularize", &bundle.digest, tol, ph_tol);
    doc.insert("mode".into(), json!(mode_name(mode)));
    doc.insert("seed".into(), json!(seed));
    doc.insert("target_rank".into(), json!(target));
    doc.insert("realization".into(), json!(real.is_some()));
    let syn = match result {
        Ok(syn) => syn,
        Err(e) => {
            let (code, condition) = classify(&e);
            doc.insert("success".into(), json!(false));
            doc.insert("error".into(), error_json(&e, condition));
            return Outcome {
                code,
                report: Some(Value::Object(doc)),
                message: Some(format!("{condition}: {e}")),
            };
        }
    };
    synthesis_json(&syn, dump_forms, &mut doc);
    let closed = s.closed_loop(syn.k.as_ref(), syn.f.as_ref());
    let closed_real = match (&real, &syn.f) {
        (Some(r), Some(f)) => Some(r.with_proportional_feedback(&s.b, f)),
        (Some(r), None) => Some(r.clone()),
        _ => None,
    };
    let out_bundle = SystemBundle::from_parts(closed, closed_real.as_ref());
    if let Err(e) = write_atomic(out, &render(&out_bundle.to_json())) {
        return Outcome::input_error(format!("cannot write {}: {e}", out.display()));
    }
    doc.insert("output".into(), json!(out.display().to_string()));
    Outcome {
        code: EXIT_OK,
        report: Some(Value::Object(doc)),
        message: None,
    }
}

fn mode_name(mode: CliMode) -> &'static str {
    match mode {
        CliMode::P => "p",
        CliMode::D => "d",
        CliMode::Pd => "pd",
        CliMode::DRank => "d-rank",
    }
}

fn error_json(e: &Error, condition: &str) -> Value {
    let mut o = Map::new();
    o.insert("condition".into(), json!(condition));
    o.insert("message".into(), json!(e.to_string()));
    match e {
        Error::RankInfeasible { feasible, .. } | Error::ParityViolated { feasible, .. } => {
            o.insert("feasible_ranks".into(), json!(feasible));
        }
        Error::SynthesisExhausted { draws, steps } => {
            o.insert("draws".into(), json!(draws));
            o.insert("steps".into(), json!(steps));
        }
        _ => {}
    }
    Value::Object(o)
}

fn synthesis_json(syn: &FeedbackSynthesis, dump_forms: bool, doc: &mut Map<String, Value>) {
    let v = &syn.verification;
    doc.insert("success".into(), json!(true));
    doc.insert("F".into(), syn.f.as_ref().map_or(Value::Null, matrix_json));
    doc.insert("K".into(), syn.k.as_ref().map_or(Value::Null, matrix_json));
    doc.insert("achieved_rank".into(), json!(syn.achieved_rank));
    doc.insert("regular".into(), json!(v.regular));
    doc.insert("index".into(), json!(v.index));
    doc.insert("finite_eig_count".into(), json!(v.finite_eig_count));
    doc.insert("ph_preserved".into(), json!(v.ph_preserved));
    doc.insert("residuals".into(), to_value(&v.residuals));
    doc.insert("notes".into(), json!(syn.notes));
    if dump_forms {
        doc.insert("forms".into(), to_value(&syn.forms));
    }
}

fn generate(
    n: usize,
    m: usize,
    rank_e: usize,
    rank_r: usize,
    seed: u64,
    singular_q: bool,
    out: &Path,
) -> Outcome {
    if singular_q && n < 2 {
        return Outcome::input_error("--singular-q needs n >= 2");
    }
    let (sys, real) = match random_ph_system(n, m, rank_e, rank_r, seed, singular_q) {
        Ok(x) => x,
        Err(e) => return Outcome::input_error(e.to_string()),
    };
    let bundle = SystemBundle::from_parts(sys, Some(&real));
    let text = render(&bundle.to_json());
    if let Err(e) = write_atomic(out, &text) {
        return Outcome::input_error(format!("cannot write {}: {e}", out.display()));
    }
    Outcome {
        code: EXIT_OK,
        report: None,
        message: None,
    }
}

/// Parses `args`, runs the command, prints the report and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = execute(&cli);
    if let Some(report) = &outcome.report {
        let text = render(report);
        match &cli.report {
            Some(path) => {
                if let Err(e) = write_atomic(path, &text) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return EXIT_INPUT;
                }
            }
            None => print!("{text}"),
        }
    }
    if let Some(msg) = &outcome.message {
        eprintln!("error: {msg}");
    }
    outcome.code
}
