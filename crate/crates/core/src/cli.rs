//! Command-line front end: argument parsing, run configuration, reports and
//! the flat-file formats (CSV, P2 graymap, `key = value` reports).
//!
//! Every command writes its primary artifact either to `--out` (atomically,
//! through a temporary file in the same directory) or to standard output.
//! Exit codes: 0 on success, 2 on a failed check or an infeasible parameter
//! request, 3 on I/O or format errors.

use std::ffi::OsString;
use std::fmt::{self, Display, Write as _};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::criterion::{self, GraphSample, ModulusOfContinuity};
use crate::error::{Error, Result};
use crate::exact::{self, ExactScalar};
use crate::qcmap;
use crate::tower::{self, ConstructionParams, DEFAULT_RECT_CAP};
use crate::verifier::{self, SampleConfig, SeriesMode, DEFAULT_STABILITY_FACTOR};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const DEFAULT_DEPTH: usize = 3;
pub const DEFAULT_GRID: usize = 32;
pub const DEFAULT_SEED: u64 = 0x5eed;
pub const DEFAULT_BOUND: u32 = 256;
pub const DEFAULT_WHITNEY_DEPTH: u32 = 12;
pub const DEFAULT_GRAPH_RESOLUTION: u32 = 14;

/// Levels whose rectangle count exceeds this are skipped by the
/// enumeration-based suites.
const ENUMERATION_BUDGET: u64 = 100_000;

#[derive(Debug, Parser)]
#[command(name = "removability", version, about = "Exact Hölder-graph towers and removability diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smallest (a, b) satisfying condition1 and condition2 for (alpha, p).
    Solve(Flags),
    /// Level-n graph polyline CSV plus a u-field raster.
    Build(Flags),
    /// Runs the verifier suite and writes a report.
    Verify(Flags),
    /// Integral test for a power-law modulus, or the Whitney sum of a graph.
    Criterion(Flags),
    /// Beltrami coefficient samples as CSV.
    Qc(Flags),
    /// Re-emits a stored CSV, raster or report.
    Export(Flags),
}

#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// Hölder exponent, decimal or num/den.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Sobolev exponent, decimal or num/den.
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub a: Option<u32>,
    #[arg(long)]
    pub b: Option<u32>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Search bound for the parameter solver.
    #[arg(long)]
    pub bound: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// build/export: `decimal` or `exact`; criterion: `integral` or `js`.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandKind {
    Solve,
    Build,
    Verify,
    Criterion,
    Qc,
    Export,
}

impl Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::Solve => "solve",
            CommandKind::Build => "build",
            CommandKind::Verify => "verify",
            CommandKind::Criterion => "criterion",
            CommandKind::Qc => "qc",
            CommandKind::Export => "export",
        })
    }
}

/// Resolved flags. The seed alone determines every random sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub alpha: Option<ExactScalar>,
    pub p: ExactScalar,
    pub a: Option<u32>,
    pub b: Option<u32>,
    pub depth: Option<usize>,
    pub grid: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub bound: u32,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub mode: Option<String>,
}

impl RunConfig {
    pub fn from_flags(command: CommandKind, flags: &Flags) -> Result<Self> {
        let alpha = flags.alpha.as_deref().map(exact::parse).transpose()?;
        let p = flags.p.as_deref().map(exact::parse).transpose()?.unwrap_or_else(|| exact::int(2));
        if flags.a.is_some() != flags.b.is_some() {
            return Err(Error::Domain("--a and --b must be given together".into()));
        }
        let tolerance = flags.tolerance.unwrap_or(0.0);
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(Error::Domain(format!("tolerance must be a finite non-negative number, got {tolerance}")));
        }
        let grid = flags.grid.unwrap_or(DEFAULT_GRID);
        if grid == 0 {
            return Err(Error::Domain("grid must be positive".into()));
        }
        Ok(RunConfig {
            command,
            alpha,
            p,
            a: flags.a,
            b: flags.b,
            depth: flags.depth,
            grid,
            tolerance,
            seed: flags.seed.unwrap_or(DEFAULT_SEED),
            bound: flags.bound.unwrap_or(DEFAULT_BOUND),
            out: flags.out.clone(),
            input: flags.input.clone(),
            mode: flags.mode.clone(),
        })
    }

    pub fn level(&self) -> usize {
        self.depth.unwrap_or(DEFAULT_DEPTH)
    }

    /// Explicit (a, b), or the solver's answer for (alpha, p).
    pub fn params(&self) -> Result<ConstructionParams> {
        let depth = self.level();
        match (self.a, self.b) {
            (Some(a), Some(b)) => {
                let alpha = match &self.alpha {
                    Some(alpha) => alpha.clone(),
                    None => exact::ratio(b as i64 - 1, 1 + a as i64 + b as i64),
                };
                ConstructionParams::new(a, b, self.p.clone(), alpha, depth)
            }
            _ => {
                let alpha = self
                    .alpha
                    .as_ref()
                    .ok_or_else(|| Error::Domain("either --a/--b or --alpha is required".into()))?;
                tower::solve_parameters(alpha, &self.p, self.bound)?.with_max_depth(depth)
            }
        }
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            grid: self.grid,
            seed: self.seed,
            ..SampleConfig::default()
        }
    }

    fn exact_cells(&self) -> Result<bool> {
        match self.mode.as_deref() {
            None | Some("decimal") => Ok(false),
            Some("exact") => Ok(true),
            Some(other) => Err(Error::Domain(format!("mode must be decimal or exact, got {other:?}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// `key = value` report with `#` comments and a trailing machine block.
#[derive(Clone, Debug, Default)]
pub struct Report {
    title: String,
    lines: Vec<String>,
    checks: Vec<(String, bool)>,
    violations: Vec<String>,
}

impl Report {
    pub fn new(title: &str) -> Self {
        Report {
            title: title.to_string(),
            ..Report::default()
        }
    }

    pub fn comment(&mut self, text: &str) {
        self.lines.push(format!("# {text}"));
    }

    pub fn kv(&mut self, key: &str, value: impl Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    /// Records a pass/fail line; `violated` names the inequality on failure.
    pub fn check(&mut self, key: &str, pass: bool, violated: impl FnOnce() -> String) {
        self.kv(key, if pass { "pass" } else { "fail" });
        self.checks.push((key.to_string(), pass));
        if !pass {
            self.violations.push(violated());
        }
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect()
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn render(&self) -> String {
        let mut out = format!("# removability {}\n", self.title);
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        let failed = self.failed();
        out.push_str("# machine\n");
        let _ = writeln!(out, "machine.checks = {}", self.checks.len());
        let _ = writeln!(out, "machine.failed = {}", failed.len());
        let _ = writeln!(out, "machine.failures = {}", if failed.is_empty() { "none".to_string() } else { failed.join(",") });
        let _ = writeln!(out, "machine.status = {}", if failed.is_empty() { "pass" } else { "fail" });
        out
    }
}

/// Parses a report back into its `key = value` pairs.
pub fn parse_report(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Format(format!("report line {} is not `key = value`", i + 1)))?;
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::Format(format!("bad key on report line {}", i + 1)));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    if !pairs.iter().any(|(k, _)| k == "machine.status") {
        return Err(Error::Format("report has no machine block".into()));
    }
    Ok(pairs)
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, contents),
        None => Ok(stdout.write_all(contents.as_bytes())?),
    }
}

fn read_input(cfg: &RunConfig) -> Result<String> {
    let path = cfg.input.as_ref().ok_or_else(|| Error::Domain("--in is required".into()))?;
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Sibling path with a new extension: `g.csv` → `g.pgm`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn cell(v: &ExactScalar, exact_cells: bool) -> String {
    if exact_cells {
        exact::to_fraction_string(v)
    } else {
        exact::to_f64(v).to_string()
    }
}

/// Two-column CSV of exact points.
pub fn polyline_csv(points: &[(ExactScalar, ExactScalar)], exact_cells: bool) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in points {
        let _ = writeln!(out, "{},{}", cell(x, exact_cells), cell(y, exact_cells));
    }
    out
}

/// Generic CSV: optional single header line, then rows of decimal or
/// `num/den` cells, all rows the same width.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<ExactScalar>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<Vec<ExactScalar>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            match cells.iter().map(|c| exact::parse(c)).collect::<Result<Vec<_>>>() {
                Ok(row) => {
                    if let Some(first) = rows.first() {
                        if first.len() != row.len() {
                            return Err(Error::Format(format!("row {} has {} cells, expected {}", i + 1, row.len(), first.len())));
                        }
                    }
                    rows.push(row);
                }
                Err(_) if i == 0 => header = Some(cells.iter().map(|c| c.to_string()).collect()),
                Err(Error::Format(msg)) => return Err(Error::Format(format!("line {}: {msg}", i + 1))),
                Err(e) => return Err(e),
            }
        }
        if rows.is_empty() {
            return Err(Error::Format("CSV has no data rows".into()));
        }
        if let Some(h) = &header {
            if h.len() != rows[0].len() {
                return Err(Error::Format("header width differs from row width".into()));
            }
        }
        Ok(Table { header, rows })
    }

    pub fn render(&self, exact_cells: bool) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(&h.join(","));
            out.push('\n');
        }
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| cell(v, exact_cells)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// 8-bit P2 graymap; `scale` maps a stored value v to v / scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub scale: u32,
    /// Row-major, top row first.
    pub pixels: Vec<u8>,
}

impl Graymap {
    pub fn render(&self) -> String {
        let mut out = format!("P2\n# scale = {}\n{} {}\n255\n", self.scale, self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(u8::to_string).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut scale = 255;
        let mut tokens = Vec::new();
        for line in text.lines() {
            if let Some(c) = line.trim_start().strip_prefix('#') {
                if let Some(v) = c.trim().strip_prefix("scale = ") {
                    scale = v.trim().parse().map_err(|_| Error::Format("bad scale comment".into()))?;
                }
                continue;
            }
            tokens.extend(line.split_whitespace());
        }
        if tokens.first() != Some(&"P2") {
            return Err(Error::Format("not a P2 graymap".into()));
        }
        let num = |i: usize| -> Result<usize> {
            tokens
                .get(i)
                .ok_or_else(|| Error::Format("truncated graymap header".into()))?
                .parse()
                .map_err(|_| Error::Format(format!("bad graymap token {:?}", tokens[i])))
        };
        let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
        if maxval != 255 {
            return Err(Error::Format(format!("maxval {maxval}, expected 255")));
        }
        if tokens.len() != 4 + width * height {
            return Err(Error::Format(format!("expected {} pixels, found {}", width * height, tokens.len() - 4)));
        }
        let pixels = tokens[4..]
            .iter()
            .map(|t| t.parse::<u8>().map_err(|_| Error::Format(format!("bad pixel {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Graymap {
            width,
            height,
            scale,
            pixels,
        })
    }
}

/// uₙ on the `grid × grid` pixel centres of the unit square, top row first.
pub fn u_field(params: &ConstructionParams, n: usize, grid: usize) -> Result<Vec<(ExactScalar, ExactScalar, ExactScalar)>> {
    use rayon::prelude::*;
    let g = grid as i64;
    let coords: Vec<(ExactScalar, ExactScalar)> = (0..g)
        .flat_map(|row| {
            (0..g).map(move |col| (exact::ratio(2 * col + 1, 2 * g), exact::ratio(2 * (g - 1 - row) + 1, 2 * g)))
        })
        .collect();
    coords
        .into_par_iter()
        .map(|(x, y)| {
            let u = tower::u_eval(params, n, &x, &y)?;
            Ok((x, y, u))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_CHECK } else { EXIT_OK };
        }
    };
    let (kind, flags) = match &cli.command {
        Command::Solve(f) => (CommandKind::Solve, f),
        Command::Build(f) => (CommandKind::Build, f),
        Command::Verify(f) => (CommandKind::Verify, f),
        Command::Criterion(f) => (CommandKind::Criterion, f),
        Command::Qc(f) => (CommandKind::Qc, f),
        Command::Export(f) => (CommandKind::Export, f),
    };
    let result = RunConfig::from_flags(kind, flags).and_then(|cfg| dispatch(&cfg, stdout));
    match result {
        Ok(report) => {
            for v in report.as_ref().map(|r| r.violations()).unwrap_or(&[]) {
                let _ = writeln!(stderr, "violated: {v}");
            }
            match report {
                Some(r) if !r.failed().is_empty() => EXIT_CHECK,
                _ => EXIT_OK,
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Format(_) => EXIT_IO,
        _ => EXIT_CHECK,
    }
}

fn dispatch(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Option<Report>> {
    match cfg.command {
        CommandKind::Solve => cmd_solve(cfg, stdout).map(Some),
        CommandKind::Build => cmd_build(cfg, stdout).map(|_| None),
        CommandKind::Verify => cmd_verify(cfg, stdout).map(Some),
        CommandKind::Criterion => cmd_criterion(cfg, stdout).map(Some),
        CommandKind::Qc => cmd_qc(cfg, stdout).map(|_| None),
        CommandKind::Export => cmd_export(cfg, stdout).map(|_| None),
    }
}

fn write_params(report: &mut Report, params: &ConstructionParams) {
    report.kv("a", params.a());
    report.kv("b", params.b());
    report.kv("M", params.repeats());
    report.kv("N", params.rows());
    report.kv("p", exact::to_fraction_string(params.p()));
    report.kv("alpha", exact::to_fraction_string(params.alpha_target()));
}

/// Exact 2N^{p−1}/Mᵖ as `2^e`, reduced to a fraction when e is an integer.
fn condition1_ratio(params: &ConstructionParams) -> (ExactScalar, String) {
    let a = exact::int(params.a() as i64);
    let b = exact::int(params.b() as i64);
    let e = exact::int(1) - &b + params.p() * (&b - &a);
    let text = if e.is_integer() {
        let k = e.to_integer();
        let pow = exact::from_big(exact::pow2(k.abs().to_u32().unwrap_or(u32::MAX)));
        let v = if k.is_negative() { exact::int(1) / pow } else { pow };
        exact::to_fraction_string(&v)
    } else {
        format!("2^({})", exact::to_fraction_string(&e))
    };
    (e, text)
}

fn write_conditions(report: &mut Report, params: &ConstructionParams) {
    let (a, b) = (params.a() as i64, params.b() as i64);
    let p = params.p();
    let (log2_ratio, ratio) = condition1_ratio(params);
    report.kv("condition1.lhs", exact::to_fraction_string(&(exact::int(b) * (p - exact::int(1)) + exact::int(1))));
    report.kv("condition1.rhs", exact::to_fraction_string(&(exact::int(a) * p)));
    report.kv("condition1.log2_ratio", exact::to_fraction_string(&log2_ratio));
    report.kv("condition1.ratio", ratio);
    let alpha = params.alpha_target();
    report.kv("condition2.lhs", exact::to_fraction_string(&(alpha * exact::int(1 + a + b))));
    report.kv("condition2.rhs", b - 1);
}

pub fn cmd_solve(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Report> {
    let alpha = cfg.alpha.as_ref().ok_or_else(|| Error::Domain("--alpha is required".into()))?;
    let params = tower::solve_parameters(alpha, &cfg.p, cfg.bound)?;
    let mut report = Report::new("solve");
    report.kv("bound", cfg.bound);
    write_params(&mut report, &params);
    report.comment("condition1: b(p-1) + 1 < ap, i.e. 2N^(p-1)/M^p < 1");
    report.comment("condition2: alpha(1 + a + b) <= b - 1");
    write_conditions(&mut report, &params);
    let (log2_ratio, _) = condition1_ratio(&params);
    report.check("condition1", log2_ratio.is_negative(), || "condition1: 2N^(p-1)/M^p < 1".into());
    let holds = params.alpha_target() * exact::int(1 + params.a() as i64 + params.b() as i64)
        <= exact::int(params.b() as i64 - 1);
    report.check("condition2", holds, || "condition2: alpha(1 + a + b) <= b - 1".into());
    emit(cfg.out.as_deref(), &report.render(), stdout)?;
    Ok(report)
}

pub fn cmd_build(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let params = cfg.params()?;
    let n = cfg.level();
    let exact_cells = cfg.exact_cells()?;
    let poly = tower::graph_polyline(&params, n, DEFAULT_RECT_CAP)?;
    let csv = polyline_csv(&poly, exact_cells);
    let Some(out) = cfg.out.as_deref() else {
        // Without a path only the polyline has somewhere to go.
        stdout.write_all(csv.as_bytes())?;
        return Ok(());
    };
    write_atomic(out, &csv)?;
    let field = u_field(&params, n, cfg.grid)?;
    let scale = 255u32;
    let pixels = field
        .iter()
        .map(|(_, _, u)| (exact::to_f64(u) * scale as f64).round().clamp(0.0, 255.0) as u8)
        .collect();
    let raster = Graymap {
        width: cfg.grid,
        height: cfg.grid,
        scale,
        pixels,
    };
    write_atomic(&sibling(out, "pgm"), &raster.render())?;
    if exact_cells {
        let mut u_csv = String::from("x,y,u\n");
        for (x, y, u) in &field {
            let _ = writeln!(u_csv, "{},{},{}", exact::to_fraction_string(x), exact::to_fraction_string(y), exact::to_fraction_string(u));
        }
        write_atomic(&sibling(out, "u.csv"), &u_csv)?;
    }
    Ok(())
}

fn rect_count(params: &ConstructionParams, n: usize) -> Result<BigInt> {
    Ok(tower::level_geometry(params, n)?.rect_count)
}

fn within_budget(params: &ConstructionParams, n: usize) -> Result<bool> {
    Ok(rect_count(params, n)? <= BigInt::from(ENUMERATION_BUDGET))
}

fn seeded_unit_points(rng: &mut ChaCha8Rng, count: usize) -> Vec<ExactScalar> {
    (0..count)
        .map(|_| {
            let den = rng.gen_range(1..=1000i64);
            exact::ratio(rng.gen_range(0..=den), den)
        })
        .collect()
}

pub fn cmd_verify(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Report> {
    let params = cfg.params()?;
    let depth = params.max_depth();
    let sample = cfg.sample_config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = Report::new("verify");
    write_params(&mut report, &params);
    report.kv("depth", depth);
    report.kv("grid", cfg.grid);
    report.kv("seed", cfg.seed);
    report.kv("tolerance", cfg.tolerance);

    report.comment("parameter inequalities");
    write_conditions(&mut report, &params);
    let (log2_ratio, _) = condition1_ratio(&params);
    report.check("condition1", log2_ratio.is_negative(), || "condition1: 2N^(p-1)/M^p < 1".into());
    for (n, ok) in verifier::check_condition2(&params, params.alpha_target(), depth)? {
        report.check(&format!("condition2.level.{n}"), ok, || {
            format!("condition2: height <= width^alpha at level {n}")
        });
    }

    report.comment("mass conservation: u_n(1, y) = A_1(y)");
    let mut ys = seeded_unit_points(&mut rng, 24);
    ys.push(exact::ratio(1, 2));
    for n in 1..=depth {
        let mass = verifier::check_mass_conservation(&params, n, &ys)?;
        report.check(&format!("mass.level.{n}"), mass.pass(), || {
            let y = mass.first_failure().map(|s| exact::to_fraction_string(&s.y)).unwrap_or_default();
            format!("mass conservation u_{n}(1, y) = A_1(y) at y = {y}")
        });
    }

    report.comment("closed-form u_n against the rectangle-enumeration oracle");
    let xs = seeded_unit_points(&mut rng, 24);
    let ys = seeded_unit_points(&mut rng, 24);
    for n in 1..=depth.min(3) {
        if !within_budget(&params, n)? {
            report.kv(&format!("oracle.level.{n}"), "skipped");
            continue;
        }
        let mut mismatch = None;
        for (x, y) in xs.iter().zip(&ys) {
            if tower::u_eval(&params, n, x, y)? != tower::u_eval_bruteforce(&params, n, x, y, DEFAULT_RECT_CAP)? {
                mismatch = Some((x.clone(), y.clone()));
                break;
            }
        }
        report.check(&format!("oracle.level.{n}"), mismatch.is_none(), || {
            let (x, y) = mismatch.clone().unwrap_or_default();
            format!("u_{n} closed form differs from enumeration at ({x}, {y})")
        });
    }

    let factor = DEFAULT_STABILITY_FACTOR;
    report.comment("DefAn: sup A_n <~ 1/(M^n l_n); derAn: sup |dA_n/dy| <~ 1/(M^n l_n h_n)");
    let (rows, stab_a, stab_d, reports_a, reports_d) =
        verifier::density_bound_reports(&params, 1..=depth, factor, cfg.tolerance)?;
    for row in &rows {
        report.kv(&format!("DefAn.level.{}.sup", row.level), sci(exact::to_f64(&row.sup_density)));
        report.kv(&format!("DefAn.level.{}.constant", row.level), fixed(row.density_constant));
        report.kv(&format!("derAn.level.{}.sup", row.level), sci(exact::to_f64(&row.sup_slope)));
        report.kv(&format!("derAn.level.{}.constant", row.level), fixed(row.slope_constant));
    }
    for (label, stab, reports) in [("DefAn", &stab_a, &reports_a), ("derAn", &stab_d, &reports_d)] {
        report.kv(&format!("{label}.spread"), fixed(stab.spread()));
        let ok = stab.pass && reports.iter().all(|r| r.pass);
        report.check(label, ok, || {
            format!("{label}: implied constants spread {} exceeds factor {factor}", fixed(stab.spread()))
        });
    }

    report.comment("Cauchy: sup |u_{n+1} - u_n| <~ 1/M^(n+1)");
    let mut cauchy = Vec::new();
    for n in 1..depth {
        if !within_budget(&params, n + 1)? {
            report.kv(&format!("Cauchy.level.{n}"), "skipped");
            continue;
        }
        // Level 1 is a single rectangle, so it gets the whole sampling budget.
        let level_cfg = if n == 1 {
            SampleConfig {
                grid: sample.grid * 8,
                ..sample.clone()
            }
        } else {
            sample.clone()
        };
        let m = verifier::measure_cauchy(&params, n, &level_cfg)?;
        report.kv(&format!("Cauchy.level.{n}.sup"), sci(m.sup_difference));
        report.kv(&format!("Cauchy.level.{n}.constant"), fixed(m.constant));
        cauchy.push((n, m.constant));
    }
    if !cauchy.is_empty() {
        let stab = verifier::ConstantStability::new(cauchy, factor);
        report.kv("Cauchy.spread", fixed(stab.spread()));
        report.check("Cauchy", stab.pass, || {
            format!("Cauchy: implied constants spread {} exceeds factor {factor}", fixed(stab.spread()))
        });
    }

    report.comment("bn recursion: b_1 = 2, b_(n+1) <= b_n + C/(M^n h_(n+1))");
    let mut increments = Vec::new();
    let mut bns = Vec::new();
    for n in 1..=depth {
        if !within_budget(&params, n)? {
            report.kv(&format!("bn.level.{n}"), "skipped");
            continue;
        }
        let m = verifier::measure_bn(&params, n)?;
        report.kv(&format!("bn.level.{n}.b"), fixed(m.b));
        if n == 1 {
            report.check("bn.base", m.b == 2.0, || format!("b_1 = 2, measured {}", m.b));
        } else {
            report.kv(&format!("bn.level.{n}.increment_constant"), fixed(m.increment_constant));
            increments.push((n, m.increment_constant));
        }
        bns.push(m.b);
    }
    if !increments.is_empty() {
        let stab = verifier::ConstantStability::new(increments, factor);
        report.kv("bn.spread", fixed(stab.spread()));
        report.check("bn.recursion", stab.pass, || {
            format!("bn recursion: increment constants spread {} exceeds factor {factor}", fixed(stab.spread()))
        });
    }

    report.comment("gradient series: terms (2N^(p-1)/M^p)^n under the closed-form model");
    let modeled = verifier::gradient_lp_series(&params, params.p(), depth, SeriesMode::Modeled)?;
    report.kv("condition1.series.modeled_ratio", condition1_ratio(&params).1);
    report.kv("condition1.series.verdict", modeled.report.verdict);
    if bns.len() == depth && depth >= 2 {
        let measured = verifier::gradient_lp_series(&params, params.p(), depth, SeriesMode::Measured)?;
        report.kv("condition1.series.measured_ratio", fixed(measured.report.modeled_ratio));
    }

    report.comment("Hölder and box-counting estimates of the level-depth approximant");
    if within_budget(&params, depth)? {
        let alpha_hat = match verifier::holder_exponent_for_tower(&params, depth, 16, cfg.seed) {
            Ok(h) => {
                match h.alpha_hat {
                    Some(a) => report.kv("holder.alpha_hat", fixed(a)),
                    None => report.kv("holder.alpha_hat", "degenerate"),
                }
                h.alpha_hat
            }
            Err(e @ (Error::InsufficientSamples(_) | Error::Degenerate(_))) => {
                report.kv("holder.alpha_hat", format!("unavailable ({e})"));
                None
            }
            Err(e) => return Err(e),
        };
        let poly = verifier::tower_polyline(&params, depth, DEFAULT_RECT_CAP)?;
        let segments = poly.len().saturating_sub(1).max(1);
        let hi = segments.ilog2().min(10);
        if hi >= 4 {
            let dim = verifier::box_dimension(&poly, hi.saturating_sub(6).max(2)..=hi, alpha_hat)?;
            report.kv("dimension.box", fixed(dim.estimate));
            if let Some(r) = dim.reference {
                report.kv("dimension.reference", fixed(r));
            }
        }
    }

    report.comment("F(x, y) = (x + u_n, y) is increasing in x");
    let k = 64i64;
    let xs: Vec<ExactScalar> = (0..=k).map(|i| exact::ratio(i, k)).collect();
    for y in [exact::ratio(1, 3), exact::ratio(1, 2), exact::ratio(5, 7)] {
        let mono = qcmap::monotonicity_check(&params, depth, &y, &xs)?;
        report.check(&format!("monotonicity.y.{}", exact::to_fraction_string(&y)), mono.pass, || {
            format!("monotonicity of x + u_{depth}(x, {y})")
        });
    }

    emit(cfg.out.as_deref(), &report.render(), stdout)?;
    Ok(report)
}

pub fn cmd_criterion(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Report> {
    let p = exact::to_f64(&cfg.p);
    let alpha = cfg.alpha.as_ref().map(exact::to_f64);
    let mut report = Report::new("criterion");
    report.kv("p", exact::to_fraction_string(&cfg.p));
    if let Some(a) = &cfg.alpha {
        report.kv("alpha", exact::to_fraction_string(a));
    }
    let graph = match (&cfg.input, cfg.mode.as_deref()) {
        (Some(_), _) => Some(GraphSample::from_csv(&read_input(cfg)?)?),
        (None, Some("js")) => {
            let a = alpha.ok_or_else(|| Error::Domain("--alpha is required to generate a test graph".into()))?;
            Some(criterion::weierstrass_graph(a, DEFAULT_GRAPH_RESOLUTION, cfg.seed)?)
        }
        (None, None | Some("integral")) => None,
        (None, Some(other)) => return Err(Error::Domain(format!("mode must be integral or js, got {other:?}"))),
    };
    if let Some(a) = alpha {
        let h = ModulusOfContinuity::power_law(1.0, a)?;
        let r = criterion::integral_test(&h, p)?;
        report.comment("integral: int_0^1 (t / h^-1(t))^p' dt for h(t) = t^alpha");
        if let Some(e) = r.exponent {
            report.kv("integral.exponent", fixed(e));
        }
        report.kv("integral.boundary", r.boundary);
        match r.value {
            Some(v) => report.kv("integral", format!("{}, value {}", r.verdict, fixed(v))),
            None => report.kv("integral", r.verdict),
        }
        if let Some(c) = r.closed_form {
            report.kv("integral.closed_form", fixed(c));
        }
    }
    if let Some(graph) = graph {
        let depth = cfg.depth.map(|d| d as u32).unwrap_or(DEFAULT_WHITNEY_DEPTH);
        let decomp = criterion::whitney_decompose(&graph, depth)?;
        let js = criterion::js_sum(&decomp, p)?;
        report.comment("JS-sum: sum over Whitney squares of (s(Q)/l(Q))^p' l(Q)^2 by height band");
        report.comment("JS-sum shadows are a criterion-proxy: s(Q) = 2 x vertical distance to the graph");
        report.kv("JS-sum.shadow", "criterion-proxy");
        report.kv("JS-sum.segments", graph.segments());
        report.kv("JS-sum.max_depth", depth);
        report.kv("JS-sum.squares", decomp.squares.len());
        report.kv("JS-sum.stragglers", decomp.stragglers.len());
        report.kv("JS-sum.straggler_fraction", sci(decomp.straggler_fraction()));
        for band in &js.bands {
            let key = format!("JS-sum.band.{}", band.band);
            report.kv(&format!("{key}.count"), band.count);
            report.kv(&format!("{key}.sum"), sci(band.sum));
            report.kv(&format!("{key}.resolved"), band.resolved);
        }
        report.kv("JS-sum.lr_sum", sci(js.lr_sum));
        report.kv("JS-sum.band_ratio", fixed(js.band_ratio));
        report.kv("JS-sum", verifier::Verdict::from_ratio(js.band_ratio));
        if let Some(a) = alpha {
            report.kv("JS-sum.model_ratio", fixed(criterion::js_model_ratio(a, p)?));
            let h = criterion::oscillation_modulus(&graph, a)?;
            let census = criterion::bin_census(&decomp, &h, criterion::DEFAULT_CENSUS_FACTOR as f64)?;
            for row in &census.rows {
                let key = format!("JS-sum.census.band.{}", row.band);
                report.kv(&format!("{key}.side_ratio"), fixed(row.mean_side / row.predicted_side));
                report.kv(&format!("{key}.count_ratio"), fixed(row.count as f64 / row.predicted_count));
                report.kv(&format!("{key}.status"), match (row.resolved, row.pass) {
                    (false, _) => "unresolved",
                    (true, true) => "pass",
                    (true, false) => "fail",
                });
            }
            report.kv("JS-sum.census.resolved_bands", census.resolved_bands());
            report.kv("JS-sum.census.passing_bands", census.passing_bands());
        }
    }
    emit(cfg.out.as_deref(), &report.render(), stdout)?;
    Ok(report)
}

pub fn cmd_qc(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let params = cfg.params()?;
    let n = cfg.level();
    let mut samples = qcmap::beltrami_samples(&params, n, &cfg.sample_config())?;
    samples.sort_by(|s, t| (s.level, &s.x, &s.y).cmp(&(t.level, &t.x, &t.y)));
    emit(cfg.out.as_deref(), &qcmap::samples_csv(&samples), stdout)
}

pub fn cmd_export(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let text = read_input(cfg)?;
    let trimmed = text.trim_start();
    let out = if trimmed.starts_with("P2") {
        Graymap::parse(&text)?.render()
    } else if trimmed.starts_with("# removability") {
        parse_report(&text)?;
        text.clone()
    } else {
        Table::parse(&text)?.render(cfg.exact_cells()?)
    };
    emit(cfg.out.as_deref(), &out, stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("removability").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn solve_reports_exact_conditions() {
        let (code, out, _) = run_capture(&["solve", "--alpha", "0.6", "--p", "2"]);
        assert_eq!(code, 0);
        assert!(out.contains("a = 12\n"));
        assert!(out.contains("b = 22\n"));
        assert!(out.contains("condition1.ratio = 1/2\n"));
        assert!(out.contains("condition2.lhs = 21\n"));
    }

    #[test]
    fn solve_infeasible_exits_two() {
        let (code, _, err) = run_capture(&["solve", "--alpha", "0.67", "--p", "2", "--bound", "256"]);
        assert_eq!(code, EXIT_CHECK);
        assert!(err.contains("condition1 and condition2"));
    }

    #[test]
    fn irrational_ratio_is_printed_as_a_power() {
        let (code, out, _) = run_capture(&["solve", "--alpha", "0.3", "--p", "1.5"]);
        assert_eq!(code, 0);
        assert!(out.contains("condition1.ratio = 2^("));
    }

    #[test]
    fn integral_line_has_fixed_format() {
        let (code, out, _) = run_capture(&["criterion", "--alpha", "0.7", "--p", "2"]);
        assert_eq!(code, 0);
        assert!(out.contains("integral = converges, value 7.000000\n"), "{out}");
    }

    #[test]
    fn report_round_trips_through_parser() {
        let mut r = Report::new("test");
        r.kv("x", 1);
        r.check("DefAn", false, || "DefAn".into());
        let pairs = parse_report(&r.render()).unwrap();
        assert!(pairs.contains(&("machine.status".into(), "fail".into())));
        assert!(pairs.contains(&("machine.failures".into(), "DefAn".into())));
        assert!(parse_report("x = 1\n").is_err());
        assert!(parse_report("not a pair\n").is_err());
    }

    #[test]
    fn table_parses_mixed_cells() {
        let t = Table::parse("x,y\n0,1/3\n0.5,-2\n").unwrap();
        assert_eq!(t.header.as_ref().unwrap(), &["x", "y"]);
        assert_eq!(t.rows[0][1], exact::ratio(1, 3));
        assert_eq!(t.render(true), "x,y\n0,1/3\n1/2,-2\n");
        assert!(Table::parse("x,y\n1,2\n3\n").is_err());
        assert!(Table::parse("x,y\n").is_err());
    }

    #[test]
    fn graymap_round_trips() {
        let g = Graymap {
            width: 2,
            height: 2,
            scale: 255,
            pixels: vec![0, 64, 128, 255],
        };
        assert_eq!(Graymap::parse(&g.render()).unwrap(), g);
        assert!(Graymap::parse("P2\n2 2\n255\n1 2 3\n").is_err());
    }

    #[test]
    fn config_requires_both_exponents() {
        let flags = Flags {
            a: Some(2),
            ..Flags::default()
        };
        assert!(RunConfig::from_flags(CommandKind::Verify, &flags).is_err());
        let cfg = RunConfig::from_flags(CommandKind::Verify, &Flags::default()).unwrap();
        assert!(matches!(cfg.params(), Err(Error::Domain(_))));
    }
}
