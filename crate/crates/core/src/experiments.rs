//! Command drivers: class diagnostics, `H` tables, crossing estimates,
//! ratio scans and the seven frozen example scenarios.
//!
//! Each command returns its tables, checks and headline numbers; [`emit`]
//! writes them with a manifest. Example defaults live in
//! `configs/examples/exampleN.json` and can be patched per run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::boundary::{Boundary, TailRule};
use crate::classes::{check_long_tailed, check_sstar, check_subexponential, log_grid, CheckConfig, Verdict};
use crate::dist::TailDistribution;
use crate::error::{Error, Result};
use crate::hfunc::{h_sum, h_table, AsymptoticForm};
use crate::quadrature::{integrate, integrate_pieces, QuadOptions};
use crate::report::{estimates_table, h_rows_table, loglog_svg, num, ratio_table, Manifest, OutputDir, Series, Table};
use crate::rules::{tail_sequence_with_threads, AnalyticTail, StoppingRule, TailSequence};
use crate::shard::{self, resolve_threads, run_sharded, LANE_AUX, LANE_INCREMENTS};
use crate::sim::{run_ratio_scan, simulate_crossing, CrossingEstimate, Estimator, RatioRow, WalkConfig};
use crate::stats::{loglog_fit, Moments, Z95};

/// Environment variable naming a directory that replaces the built-in
/// example configs.
pub const CONFIG_DIR_ENV: &str = "BIGJUMP_CONFIG_DIR";

const FROZEN: [&str; 7] = [
    include_str!("../../../configs/examples/example1.json"),
    include_str!("../../../configs/examples/example2.json"),
    include_str!("../../../configs/examples/example3.json"),
    include_str!("../../../configs/examples/example4.json"),
    include_str!("../../../configs/examples/example5.json"),
    include_str!("../../../configs/examples/example6.json"),
    include_str!("../../../configs/examples/example7.json"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    /// 0 pass, 1 fail, 2 inconclusive.
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
            Outcome::Inconclusive => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Tables, checks and headline numbers of one command.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub command: String,
    pub outcome: Outcome,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    pub tables: Vec<(String, Table)>,
    pub plots: Vec<(String, String)>,
    pub notes: Vec<String>,
    /// Resolved configuration, echoed into the manifest.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
}

impl CommandOutput {
    fn new(command: &str, config: serde_json::Value, seed: Option<u64>, threads: usize) -> Self {
        Self {
            command: command.into(),
            outcome: Outcome::Pass,
            checks: Vec::new(),
            metrics: BTreeMap::new(),
            tables: Vec::new(),
            plots: Vec::new(),
            notes: Vec::new(),
            config,
            seed,
            threads,
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check::new(name, passed, detail));
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.into(), v);
    }

    /// Pass when every check passes.
    fn settle(&mut self) {
        self.outcome = if self.checks.iter().all(|c| c.passed) {
            Outcome::Pass
        } else {
            Outcome::Fail
        };
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn verdict_text(&self) -> String {
        let mut s = format!("{}: {}\n", self.command, self.outcome.label());
        for c in &self.checks {
            s += &format!("  [{}] {}: {}\n", if c.passed { "pass" } else { "fail" }, c.name, c.detail);
        }
        for n in &self.notes {
            s += &format!("  note: {n}\n");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format `{s}`, expected csv or json"))),
        }
    }
}

/// Where and how to write a command's artifacts.
#[derive(Debug, Clone)]
pub struct Emit {
    pub out_dir: PathBuf,
    pub format: Format,
    pub svg: bool,
    pub verdict_file: bool,
}

/// Writes tables, plots, the verdict file and the manifest.
pub fn emit(out: &CommandOutput, opts: &Emit, wall_time_secs: f64) -> Result<PathBuf> {
    let mut dir = OutputDir::create(&opts.out_dir)?;
    for (name, t) in &out.tables {
        match opts.format {
            Format::Csv => dir.write(&format!("{name}.csv"), &t.to_csv()?)?,
            Format::Json => dir.write(&format!("{name}.json"), &t.to_json())?,
        };
    }
    if opts.svg {
        for (name, svg) in &out.plots {
            dir.write(&format!("{name}.svg"), svg)?;
        }
    }
    if opts.verdict_file {
        dir.write("verdict.txt", &out.verdict_text())?;
    }
    let manifest = Manifest::new(&out.command, out.config.clone(), out.seed, out.threads);
    dir.finish(manifest, wall_time_secs)
}

/// Parses a JSON config, naming the file, line and field on failure.
pub fn parse_config<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: cannot read: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

/// RFC 7386 merge patch.
pub fn merge_patch(target: &mut serde_json::Value, patch: &serde_json::Value) {
    match patch {
        serde_json::Value::Object(p) => {
            if !target.is_object() {
                *target = serde_json::Value::Object(Default::default());
            }
            let t = target.as_object_mut().unwrap();
            for (k, v) in p {
                if v.is_null() {
                    t.remove(k);
                } else {
                    merge_patch(t.entry(k.clone()).or_insert(serde_json::Value::Null), v);
                }
            }
        }
        _ => *target = patch.clone(),
    }
}

fn timed<F: FnOnce() -> Result<CommandOutput>>(f: F) -> Result<(CommandOutput, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

/// Runs a command and writes its artifacts; returns the output and the
/// manifest path.
pub fn run_and_emit<F: FnOnce() -> Result<CommandOutput>>(f: F, opts: &Emit) -> Result<(CommandOutput, PathBuf)> {
    let (out, secs) = timed(f)?;
    let p = emit(&out, opts, secs)?;
    Ok((out, p))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

// ---------------------------------------------------------------------------
// classify

fn default_classify_grid() -> Vec<f64> {
    log_grid(10.0, 1e4, 7)
}

fn default_h() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub dist: TailDistribution,
    #[serde(default = "default_classify_grid")]
    pub x_grid: Vec<f64>,
    /// Shift used by the long-tailed check.
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub min_improvement: Option<f64>,
}

pub fn cmd_classify(cfg: &ClassifyConfig) -> Result<CommandOutput> {
    let mut check = CheckConfig::default();
    if let Some(t) = cfg.tolerance {
        check.tolerance = t;
    }
    if let Some(m) = cfg.min_improvement {
        check.min_improvement = m;
    }
    let reports = [
        check_long_tailed(&cfg.dist, cfg.h, &cfg.x_grid, &check)?,
        check_subexponential(&cfg.dist, &cfg.x_grid, &check)?,
        check_sstar(&cfg.dist, &cfg.x_grid, &check)?,
    ];
    let mut out = CommandOutput::new("classify", to_value(cfg), None, 1);
    let mut ratios = Table::new(&["class", "x", "ratio", "limit"]);
    let mut summary = Table::new(&["class", "final_ratio", "limit", "tolerance", "verdict"]);
    for r in &reports {
        for &(x, v) in &r.ratio_samples {
            ratios.push(vec![r.class.label().into(), num(x), num(v), num(r.limit)]);
        }
        let v = match r.verdict {
            Verdict::Passes => "passes",
            Verdict::Fails => "fails",
            Verdict::Inconclusive => "inconclusive",
        };
        summary.push(vec![
            r.class.label().into(),
            num(r.final_ratio()),
            num(r.limit),
            num(r.tolerance),
            v.into(),
        ]);
        out.metric(&format!("{}_final_ratio", r.class.label()), r.final_ratio());
        out.check(r.class.label(), r.verdict != Verdict::Inconclusive, format!("{v}, final ratio {}", num(r.final_ratio())));
    }
    out.plots.push((
        "classify".into(),
        loglog_svg(
            "class ratios",
            "x",
            "ratio",
            &reports
                .iter()
                .map(|r| Series {
                    label: r.class.label().into(),
                    points: r.ratio_samples.clone(),
                })
                .collect::<Vec<_>>(),
        ),
    ));
    out.tables.push(("classify".into(), ratios));
    out.tables.push(("verdicts".into(), summary));
    out.outcome = if reports.iter().any(|r| r.verdict == Verdict::Inconclusive) {
        Outcome::Inconclusive
    } else {
        Outcome::Pass
    };
    Ok(out)
}

// ---------------------------------------------------------------------------
// h

fn default_n_max() -> u64 {
    100_000
}

fn default_sigma_paths() -> u64 {
    100_000
}

fn default_rel_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HConfig {
    pub dist: TailDistribution,
    pub boundary: Boundary,
    pub rule: StoppingRule,
    pub x_grid: Vec<f64>,
    /// Horizon of an empirical `σ` tail; ignored for closed-form tails.
    #[serde(default = "default_n_max")]
    pub n_max: u64,
    #[serde(default = "default_sigma_paths")]
    pub sigma_paths: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub asymptotic: Option<AsymptoticForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

pub fn cmd_h(cfg: &HConfig, seed: Option<u64>) -> Result<CommandOutput> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let threads = resolve_threads(cfg.threads);
    let tail = tail_sequence_with_threads(&cfg.rule, &cfg.dist, cfg.n_max, cfg.sigma_paths, cfg.seed, threads)?;
    let rows = h_table(&tail, &cfg.boundary, &cfg.dist, &cfg.x_grid, cfg.asymptotic.as_ref(), cfg.rel_tol)?;
    let mut out = CommandOutput::new("h", to_value(&cfg), Some(cfg.seed), threads);
    let mut series = vec![Series {
        label: "H".into(),
        points: rows.iter().map(|r| (r.x, r.h)).collect(),
    }];
    if cfg.asymptotic.is_some() {
        series.push(Series {
            label: "asymptotic".into(),
            points: rows.iter().filter_map(|r| r.asymptotic.map(|a| (r.x, a))).collect(),
        });
    }
    out.plots.push(("h".into(), loglog_svg("H(x)", "x", "H", &series)));
    out.tables.push(("h".into(), h_rows_table(&rows)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// estimate and ratio-scan

#[derive(Debug, Clone, Serialize)]
pub struct ScanConfig {
    #[serde(flatten)]
    pub walk: WalkConfig,
    pub sigma_paths: u64,
    pub rel_tol: f64,
}

// serde cannot reject unknown fields through `flatten`, so the walk part
// is split off by hand and parsed strictly.
impl<'de> Deserialize<'de> for ScanConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = serde_json::Map::deserialize(d)?;
        fn take<T: DeserializeOwned>(map: &mut serde_json::Map<String, serde_json::Value>, key: &str) -> serde_json::Result<Option<T>> {
            map.remove(key).map(serde_json::from_value).transpose()
        }
        let sigma_paths = take(&mut map, "sigma_paths").map_err(D::Error::custom)?.unwrap_or_else(default_sigma_paths);
        let rel_tol = take(&mut map, "rel_tol").map_err(D::Error::custom)?.unwrap_or_else(default_rel_tol);
        let walk = serde_json::from_value(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(Self {
            walk,
            sigma_paths,
            rel_tol,
        })
    }
}

pub fn cmd_estimate(cfg: &WalkConfig, seed: Option<u64>) -> Result<CommandOutput> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let est = simulate_crossing(&cfg)?;
    let mut out = CommandOutput::new("estimate", to_value(&cfg), Some(cfg.master_seed), resolve_threads(cfg.threads));
    if est.iter().any(|e| e.lower_bound) {
        out.notes.push("some paths reached the horizon cap; estimates are lower bounds".into());
    }
    let series: Vec<Series> = [Estimator::Crude, Estimator::OneBigJump]
        .iter()
        .map(|&k| Series {
            label: k.label().into(),
            points: est.iter().filter(|e| e.estimator == k).map(|e| (e.x, e.p_hat)).collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    out.plots.push(("estimates".into(), loglog_svg("P(M > x)", "x", "p_hat", &series)));
    out.tables.push(("estimates".into(), estimates_table(&est)));
    Ok(out)
}

fn ratio_plot(title: &str, rows: &[RatioRow]) -> String {
    loglog_svg(
        title,
        "x",
        "p_hat / H",
        &[Series {
            label: "ratio".into(),
            points: rows.iter().map(|r| (r.x, r.ratio)).collect(),
        }],
    )
}

pub fn cmd_ratio_scan(cfg: &ScanConfig, seed: Option<u64>) -> Result<CommandOutput> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.walk.master_seed = s;
    }
    let rows = run_ratio_scan(&cfg.walk, cfg.sigma_paths, cfg.rel_tol)?;
    let mut out = CommandOutput::new(
        "ratio-scan",
        to_value(&cfg),
        Some(cfg.walk.master_seed),
        resolve_threads(cfg.walk.threads),
    );
    if let Some(last) = rows.last() {
        out.metric("final_ratio", last.ratio);
    }
    out.plots.push(("ratio".into(), ratio_plot("P(M > x) / H(x)", &rows)));
    out.tables.push(("ratio".into(), ratio_table(&rows)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// examples

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleId {
    Example(u8),
    Custom,
}

impl FromStr for ExampleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "custom" {
            return Ok(ExampleId::Custom);
        }
        match s.parse::<u8>() {
            Ok(n @ 1..=7) => Ok(ExampleId::Example(n)),
            _ => Err(Error::Config(format!("example must be 1..7 or `custom`, got `{s}`"))),
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExampleId::Example(n) => write!(f, "example{n}"),
            ExampleId::Custom => write!(f, "custom"),
        }
    }
}

/// One reproduction run.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub example: ExampleId,
    /// Merge patch applied to the frozen config.
    pub overrides: Option<serde_json::Value>,
    /// Replaces the frozen config; required for `custom`.
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl ExperimentSpec {
    pub fn example(n: u8) -> Self {
        Self {
            example: ExampleId::Example(n),
            overrides: None,
            config_path: None,
            seed: None,
        }
    }

    pub fn with_overrides(mut self, patch: serde_json::Value) -> Self {
        self.overrides = Some(patch);
        self
    }
}

/// The frozen config text for example `n`, honoring [`CONFIG_DIR_ENV`].
pub fn frozen_config(n: u8) -> Result<(String, String)> {
    if !(1..=7).contains(&n) {
        return Err(Error::Config(format!("no example {n}")));
    }
    let name = format!("example{n}.json");
    if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
        let p = Path::new(&dir).join(&name);
        let text = std::fs::read_to_string(&p)
            .map_err(|e| Error::Config(format!("{}: cannot read: {e}", p.display())))?;
        return Ok((text, p.display().to_string()));
    }
    Ok((FROZEN[n as usize - 1].to_string(), format!("configs/examples/{name}")))
}

fn resolved_config(spec: &ExperimentSpec) -> Result<(serde_json::Value, String)> {
    let (text, origin) = match (&spec.config_path, spec.example) {
        (Some(p), _) => (
            std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: cannot read: {e}", p.display())))?,
            p.display().to_string(),
        ),
        (None, ExampleId::Example(n)) => frozen_config(n)?,
        (None, ExampleId::Custom) => return Err(Error::Config("custom runs need --config".into())),
    };
    let mut v: serde_json::Value = parse_config(&text, &origin)?;
    if let Some(p) = &spec.overrides {
        merge_patch(&mut v, p);
    }
    if let Some(s) = spec.seed {
        merge_patch(&mut v, &serde_json::json!({ "seed": s }));
    }
    Ok((v, origin))
}

fn typed<T: DeserializeOwned>(v: &serde_json::Value, origin: &str) -> Result<T> {
    // round trip through text so errors carry a field path
    parse_config(&serde_json::to_string_pretty(v)?, origin)
}

/// Runs an example scenario and judges it.
pub fn cmd_reproduce(spec: &ExperimentSpec) -> Result<CommandOutput> {
    let (v, origin) = resolved_config(spec)?;
    let mut out = match spec.example {
        ExampleId::Example(1) => example1(&typed(&v, &origin)?)?,
        ExampleId::Example(2) => example2(&typed(&v, &origin)?)?,
        ExampleId::Example(3) => example3(&typed(&v, &origin)?)?,
        ExampleId::Example(4) => example4(&typed(&v, &origin)?)?,
        ExampleId::Example(5) => example5(&typed(&v, &origin)?)?,
        ExampleId::Example(6) => example6(&typed(&v, &origin)?)?,
        ExampleId::Example(7) => example7(&typed(&v, &origin)?)?,
        ExampleId::Example(n) => return Err(Error::Config(format!("no example {n}"))),
        ExampleId::Custom => custom(&typed(&v, &origin)?)?,
    };
    out.command = format!("reproduce {}", spec.example);
    out.config = v;
    Ok(out)
}

fn walk(
    dist: &TailDistribution,
    boundary: Boundary,
    rule: StoppingRule,
    x_grid: &[f64],
    cap: u64,
    n: u64,
    seed: u64,
    estimator: Estimator,
    threads: Option<usize>,
    shard_size: u64,
) -> WalkConfig {
    WalkConfig {
        dist: dist.clone(),
        boundary,
        rule,
        x_grid: x_grid.to_vec(),
        horizon_cap: cap,
        n_replications: n,
        master_seed: seed,
        estimator,
        threads,
        shard_size,
    }
}

fn fmt_list(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", s.join(", "))
}

fn shard_default() -> u64 {
    65_536
}

// Example 1: a boundary that drops from m to 0.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example1 {
    pub dist: TailDistribution,
    pub m: f64,
    pub x_grid: Vec<f64>,
    /// Grid for the quadrature value of `P(S_2 > x)`.
    pub exact_grid: Vec<f64>,
    pub n_replications: u64,
    pub seed: u64,
    pub min_ratio: f64,
    #[serde(default = "shard_default")]
    pub shard_size: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

/// `P(ξ₁ + ξ₂ > x)` by quadrature against the density.
fn two_fold_tail(dist: &TailDistribution, x: f64) -> Result<f64> {
    let lo = dist.lower_endpoint();
    let half = 0.5 * x;
    let t_half = dist.tail(half);
    if half <= lo {
        return Ok(1.0 - (1.0 - t_half).powi(2));
    }
    let q = integrate_pieces(
        |y| dist.pdf(y).unwrap_or(0.0) * dist.tail(x - y),
        &[lo, half],
        QuadOptions::new(1e-300, 1e-10),
    )?;
    Ok(2.0 * q.value + t_half * t_half)
}

fn example1(cfg: &Example1) -> Result<CommandOutput> {
    let b = Boundary::tabulated(vec![cfg.m, 0.0], TailRule::InfiniteFrom)?;
    let rule = StoppingRule::ConstantN { n: 2 };
    let w = walk(
        &cfg.dist,
        b.clone(),
        rule.clone(),
        &cfg.x_grid,
        2,
        cfg.n_replications,
        cfg.seed,
        Estimator::Crude,
        cfg.threads,
        cfg.shard_size,
    );
    let rows = run_ratio_scan(&w, 0, 1e-12)?;
    let mut out = CommandOutput::new("reproduce example1", to_value(cfg), Some(cfg.seed), resolve_threads(cfg.threads));
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let min_mc = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    out.metric("min_ratio_mc", min_mc);
    out.check(
        "m much larger than x",
        cfg.x_grid.iter().chain(&cfg.exact_grid).all(|&x| cfg.m >= 100.0 * x),
        format!("m = {}", num(cfg.m)),
    );
    out.check(
        "Monte Carlo ratio",
        min_mc >= cfg.min_ratio,
        format!("min over grid {min_mc:.4} against {}; ratios {}", cfg.min_ratio, fmt_list(&ratios)),
    );
    // for m above the lower endpoint's magnitude a big first step crosses
    // at step 2 as well, so P(M > x) = P(S_2 > x)
    let tail = TailSequence::analytic(AnalyticTail::Constant { n: 2 }, 2);
    let mut exact = Table::new(&["x", "p_exact", "h", "ratio"]);
    let mut min_exact = f64::INFINITY;
    if cfg.m >= -cfg.dist.lower_endpoint() && !cfg.dist.is_lattice() {
        for &x in &cfg.exact_grid {
            let p = two_fold_tail(&cfg.dist, x)?;
            let h = h_sum(&tail, &b, &cfg.dist, x, 1e-12)?.value;
            min_exact = min_exact.min(p / h);
            exact.push(vec![num(x), num(p), num(h), num(p / h)]);
        }
        out.metric("min_ratio_exact", min_exact);
        out.check(
            "quadrature ratio",
            min_exact >= cfg.min_ratio,
            format!("min over exact grid {min_exact:.4}"),
        );
    }
    out.plots.push(("ratio".into(), ratio_plot("m-drop boundary: P(M > x) / H(x)", &rows)));
    out.tables.push(("data".into(), ratio_table(&rows)));
    if !exact.rows.is_empty() {
        out.tables.push(("exact".into(), exact));
    }
    out.settle();
    Ok(out)
}

// Example 2: infinite first boundary value, dependent against independent σ.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example2 {
    pub dist: TailDistribution,
    pub a: f64,
    /// Stands in for `g(1) = ∞`; any value with `F̄(x + g1) = 0` works.
    pub g1: f64,
    pub x_grid: Vec<f64>,
    pub n_replications: u64,
    pub seed: u64,
    /// Relative tolerance on the two tail constants at the grid top.
    pub constant_tol: f64,
    #[serde(default = "shard_default")]
    pub shard_size: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn example2(cfg: &Example2) -> Result<CommandOutput> {
    let b = Boundary::tabulated(vec![cfg.g1, 0.0], TailRule::InfiniteFrom)?;
    let fa = cfg.dist.tail(cfg.a);
    let dependent = StoppingRule::FirstStepThreshold { a: cfg.a };
    let independent = StoppingRule::IndependentTail { tail: vec![1.0, fa] };
    let run = |rule: StoppingRule, seed: u64| {
        simulate_crossing(&walk(
            &cfg.dist,
            b.clone(),
            rule,
            &cfg.x_grid,
            2,
            cfg.n_replications,
            seed,
            Estimator::Crude,
            cfg.threads,
            cfg.shard_size,
        ))
    };
    let dep = run(dependent, cfg.seed)?;
    let ind = run(independent, shard::derive(cfg.seed, 2))?;
    let tail = TailSequence::analytic(AnalyticTail::Explicit { values: vec![1.0, fa] }, 2);
    let mut t = Table::new(&[
        "x",
        "tail",
        "h",
        "p_dependent",
        "se_dependent",
        "p_independent",
        "se_independent",
        "constant_dependent",
        "constant_independent",
        "ratio_dependent",
        "ratio_independent",
    ]);
    let mut last = None;
    for (d, i) in dep.iter().zip(&ind) {
        let x = d.x;
        let fx = cfg.dist.tail(x);
        let h = h_sum(&tail, &b, &cfg.dist, x, 1e-12)?.value;
        t.push(vec![
            num(x),
            num(fx),
            num(h),
            num(d.p_hat),
            num(d.stderr),
            num(i.p_hat),
            num(i.stderr),
            num(d.p_hat / fx),
            num(i.p_hat / fx),
            num(d.p_hat / h),
            num(i.p_hat / h),
        ]);
        last = Some((d.clone(), i.clone(), fx, h));
    }
    let (d, i, fx, h) = last.expect("nonempty grid");
    let mut out = CommandOutput::new("reproduce example2", to_value(cfg), Some(cfg.seed), resolve_threads(cfg.threads));
    let (theory_dep, theory_ind) = (1.0 + fa, 2.0 * fa);
    let (c_dep, c_ind) = (d.p_hat / fx, i.p_hat / fx);
    out.metric("constant_dependent", c_dep);
    out.metric("constant_independent", c_ind);
    out.metric("theory_dependent", theory_dep);
    out.metric("theory_independent", theory_ind);
    let lo = |e: &CrossingEstimate| (e.p_hat - Z95 * e.stderr) / h;
    out.check(
        "dependent ratio away from 1",
        lo(&d) > 1.0,
        format!("P/H = {:.4}, lower 95% {:.4}", d.p_hat / h, lo(&d)),
    );
    out.check(
        "independent ratio away from 1",
        lo(&i) > 1.0,
        format!("P/H = {:.4}, lower 95% {:.4}", i.p_hat / h, lo(&i)),
    );
    out.check(
        "dependent constant",
        (c_dep / theory_dep - 1.0).abs() <= cfg.constant_tol,
        format!("P/F̄(x) = {c_dep:.4} against 1 + F̄(a) = {theory_dep:.4}"),
    );
    out.check(
        "independent constant",
        (c_ind / theory_ind - 1.0).abs() <= cfg.constant_tol,
        format!("P/F̄(x) = {c_ind:.4} against 2F̄(a) = {theory_ind:.4}"),
    );
    out.notes.push(
        "the dependent rule reads the first increment; it is a stopping time, but the boundary leaves the covered class".into(),
    );
    out.plots.push((
        "ratio".into(),
        loglog_svg(
            "P(M > x) / H(x)",
            "x",
            "ratio",
            &[
                Series {
                    label: "dependent".into(),
                    points: dep.iter().map(|e| (e.x, e.p_hat / h_at(&tail, &b, &cfg.dist, e.x))).collect(),
                },
                Series {
                    label: "independent".into(),
                    points: ind.iter().map(|e| (e.x, e.p_hat / h_at(&tail, &b, &cfg.dist, e.x))).collect(),
                },
            ],
        ),
    ));
    out.tables.push(("data".into(), t));
    out.settle();
    Ok(out)
}

fn h_at(tail: &TailSequence, b: &Boundary, dist: &TailDistribution, x: f64) -> f64 {
    h_sum(tail, b, dist, x, 1e-10).map(|h| h.value).unwrap_or(f64::NAN)
}

// Example 3: g ≡ 0 with an independent power-tailed σ.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example3 {
    pub dist: TailDistribution,
    pub k1: f64,
    pub alpha: f64,
    pub x_grid: Vec<f64>,
    pub horizon_cap: u64,
    pub n_replications: u64,
    pub seed: u64,
    #[serde(default = "shard_small")]
    pub shard_size: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn shard_small() -> u64 {
    1000
}

fn example3(cfg: &Example3) -> Result<CommandOutput> {
    let w = walk(
        &cfg.dist,
        Boundary::zero(),
        StoppingRule::IndependentPowerTail {
            k1: cfg.k1,
            alpha: cfg.alpha,
        },
        &cfg.x_grid,
        cfg.horizon_cap,
        cfg.n_replications,
        cfg.seed,
        Estimator::OneBigJump,
        cfg.threads,
        cfg.shard_size,
    );
    let rows = run_ratio_scan(&w, 0, 1e-10)?;
    let mut out = CommandOutput::new("reproduce example3", to_value(cfg), Some(cfg.seed), resolve_threads(cfg.threads));
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let var = cfg.dist.variance();
    out.check("unit variance", (var - 1.0).abs() < 1e-6, format!("variance {var:.8}"));
    out.check("alpha above 1", cfg.alpha > 1.0, format!("alpha = {}", cfg.alpha));
    let (x0, x1) = (cfg.x_grid[0], *cfg.x_grid.last().unwrap());
    out.check("grid spans a decade", x1 >= 10.0 * x0, format!("x from {x0} to {x1}"));
    out.check(
        "ratio strictly increasing",
        ratios.windows(2).all(|w| w[1] > w[0]),
        format!("ratios {}", fmt_list(&ratios)),
    );
    let (first, last) = (&rows[0], rows.last().unwrap());
    out.check(
        "growth beyond noise",
        last.ratio_ci.0 > first.ratio_ci.1,
        format!(
            "top lower 95% {:.4} against bottom upper 95% {:.4}",
            last.ratio_ci.0, first.ratio_ci.1
        ),
    );
    out.metric("first_ratio", first.ratio);
    out.metric("last_ratio", last.ratio);
    out.notes.push("the horizon cap truncates σ, so every estimate is a lower bound".into());
    out.plots.push(("ratio".into(), ratio_plot("g = 0, power-tailed σ: P(M > x) / H(x)", &rows)));
    out.tables.push(("data".into(), ratio_table(&rows)));
    out.settle();
    Ok(out)
}

// Example 4: power-law H with infinite mean σ.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerCase {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example4 {
    pub cases: Vec<PowerCase>,
    pub c: f64,
    pub k1: f64,
    /// Lomax scale; `K₂ = scale^β`.
    pub scale: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub points: usize,
    pub slope_tol: f64,
    pub constant_tol: f64,
    pub rel_tol: f64,
}

fn example4(cfg: &Example4) -> Result<CommandOutput> {
    let mut out = CommandOutput::new("reproduce example4", to_value(cfg), None, 1);
    let grid = log_grid(cfg.x_lo, cfg.x_hi, cfg.points);
    let b = Boundary::linear(cfg.c)?;
    let mut t = Table::new(&["alpha", "beta", "x", "h", "asymptotic", "ratio"]);
    let mut series = Vec::new();
    for case in &cfg.cases {
        let dist = TailDistribution::pareto(case.beta, cfg.scale)?.centered();
        let tail = TailSequence::analytic(
            AnalyticTail::Power {
                k1: cfg.k1,
                alpha: case.alpha,
            },
            1000,
        );
        let form = AsymptoticForm::PowerPower {
            k1: cfg.k1,
            k2: cfg.scale.powf(case.beta),
            alpha: case.alpha,
            beta: case.beta,
            c: cfg.c,
        };
        let constant = form.constant()?.expect("power form has a constant");
        let rows = h_table(&tail, &b, &dist, &grid, Some(&form), cfg.rel_tol)?;
        for r in &rows {
            t.push(vec![
                num(case.alpha),
                num(case.beta),
                num(r.x),
                num(r.h),
                num(r.asymptotic.unwrap_or(f64::NAN)),
                num(r.ratio.unwrap_or(f64::NAN)),
            ]);
        }
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let (slope, _) = loglog_fit(&grid, &hs);
        let expected = 1.0 - case.alpha - case.beta;
        let top = rows.last().unwrap();
        let top_const = top.h / top.x.powf(expected);
        let tag = format!("alpha={} beta={}", case.alpha, case.beta);
        out.metric(&format!("slope[{tag}]"), slope);
        out.metric(&format!("constant[{tag}]"), constant);
        out.metric(&format!("top_constant[{tag}]"), top_const);
        out.check(
            &format!("slope {tag}"),
            ((slope - expected) / expected).abs() <= cfg.slope_tol,
            format!("fitted {slope:.5} against {expected}"),
        );
        out.check(
            &format!("constant {tag}"),
            (top_const / constant - 1.0).abs() <= cfg.constant_tol,
            format!("H(x)/x^{expected} = {top_const:.5} at x = {} against C = {constant:.5}", num(top.x)),
        );
        series.push(Series {
            label: tag,
            points: rows.iter().map(|r| (r.x, r.h)).collect(),
        });
    }
    out.plots.push(("h".into(), loglog_svg("H(x) for power tails", "x", "H", &series)));
    out.tables.push(("data".into(), t));
    out.settle();
    Ok(out)
}

// Example 5: anticipating rules.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnticipatingRun {
    pub a: f64,
    pub boundary: Boundary,
    pub x_grid: Vec<f64>,
    pub n_replications: u64,
    pub horizon_cap: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example5 {
    pub dist: TailDistribution,
    pub first_passage: AnticipatingRun,
    pub big_jump: AnticipatingRun,
    pub sigma_paths: u64,
    /// Bound on the upper 95% limit of `P/H` at the top of the big-jump grid.
    pub max_ratio: f64,
    pub seed: u64,
    #[serde(default = "shard_default")]
    pub shard_size: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn example5(cfg: &Example5) -> Result<CommandOutput> {
    let mut out = CommandOutput::new("reproduce example5", to_value(cfg), Some(cfg.seed), resolve_threads(cfg.threads));
    let run = |r: &AnticipatingRun, rule: StoppingRule, seed: u64| {
        let w = walk(
            &cfg.dist,
            r.boundary.clone(),
            rule,
            &r.x_grid,
            r.horizon_cap,
            r.n_replications,
            seed,
            Estimator::Crude,
            cfg.threads,
            cfg.shard_size,
        );
        run_ratio_scan(&w, cfg.sigma_paths, 1e-8)
    };
    let fp = &cfg.first_passage;
    let first = run(fp, StoppingRule::FirstPassageMinusOne { a: fp.a }, cfg.seed)?;
    let crosses: u64 = first
        .iter()
        .filter(|r| r.x >= fp.a)
        .map(|r| (r.p_hat * fp.n_replications as f64).round() as u64)
        .sum();
    let beyond = first.iter().filter(|r| r.x >= fp.a).count();
    out.metric("crossings_above_a", crosses as f64);
    out.metric("paths_first_rule", fp.n_replications as f64);
    out.check("grid reaches past a", beyond > 0, format!("{beyond} grid points at or above a = {}", fp.a));
    out.check(
        "no crossings above a",
        crosses == 0,
        format!("{crosses} crossings at x ≥ a across {} paths", fp.n_replications),
    );
    out.check(
        "H positive above a",
        first.iter().filter(|r| r.x >= fp.a).all(|r| r.h > 0.0),
        format!("H at grid top {}", num(first.last().map_or(f64::NAN, |r| r.h))),
    );
    let bj = &cfg.big_jump;
    let second = run(bj, StoppingRule::FirstBigJumpMinusOne { a: bj.a }, shard::derive(cfg.seed, 5))?;
    let top = second.last().expect("nonempty grid");
    out.metric("big_jump_top_ratio_upper", top.ratio_ci.1);
    out.check(
        "light tail against H",
        top.ratio_ci.1 < cfg.max_ratio,
        format!("upper 95% of P/H at x = {} is {:.3e}", num(top.x), top.ratio_ci.1),
    );
    out.check(
        "p_hat nonincreasing",
        second.windows(2).all(|w| w[1].p_hat <= w[0].p_hat),
        format!("p_hat {}", fmt_list(&second.iter().map(|r| r.p_hat).collect::<Vec<_>>())),
    );
    out.notes.push("neither rule is a stopping time".into());
    out.plots.push(("ratio".into(), ratio_plot("big-jump rule: P(M > x) / H(x)", &second)));
    out.tables.push(("first_passage".into(), ratio_table(&first)));
    out.tables.push(("big_jump".into(), ratio_table(&second)));
    out.settle();
    Ok(out)
}

// Example 6: maximum loss of an insurance portfolio up to time T.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example6 {
    /// Lomax exponent of the claim sizes.
    pub claim_beta: f64,
    /// Mean claim size.
    pub a: f64,
    /// Mean inter-claim time.
    pub b: f64,
    pub horizon_t: f64,
    pub x_grid: Vec<f64>,
    pub n_replications: u64,
    pub seed: u64,
    /// Allowed relative gap beyond three standard errors at the grid top.
    pub tol: f64,
    #[serde(default = "shard_small")]
    pub shard_size: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

struct Insurance {
    claims: TailDistribution,
    gaps: TailDistribution,
    b: f64,
    c: f64,
    t: f64,
}

impl Insurance {
    /// `F̄` of `ξ = s - t + c`.
    fn xi_tail(&self, y: f64) -> Result<f64> {
        // t = -b ln u
        let z = y - self.c;
        let f = |u: f64| {
            if u <= 0.0 {
                0.0
            } else {
                let v = z - self.b * u.ln();
                if v < 0.0 {
                    1.0
                } else {
                    self.claims.tail(v)
                }
            }
        };
        let kink = (z / self.b).exp();
        let opts = QuadOptions::new(1e-300, 1e-11);
        if kink > 0.0 && kink < 1.0 {
            Ok(integrate_pieces(f, &[0.0, kink, 1.0], opts)?.value)
        } else {
            Ok(integrate(f, 0.0, 1.0, opts)?.value)
        }
    }

    /// `P(σ ≥ n)` for the Poisson claim count `σ`.
    fn sigma_tail(&self) -> Vec<f64> {
        let lambda = self.t / self.b;
        let mut pmf = (-lambda).exp();
        let mut cdf_below = 0.0;
        let mut out = Vec::new();
        for n in 1.. {
            // P(σ ≥ n) = 1 - P(σ ≤ n - 1)
            cdf_below += pmf;
            pmf *= lambda / n as f64;
            let v = (1.0 - cdf_below).max(0.0);
            if v < 1e-18 || n > 100_000 {
                break;
            }
            out.push(v);
        }
        out
    }
}

fn example6(cfg: &Example6) -> Result<CommandOutput> {
    if !(cfg.b > cfg.a && cfg.a > 0.0 && cfg.horizon_t > 0.0) {
        return Err(Error::Config("example6 needs 0 < a < b and T > 0".into()));
    }
    let scale = cfg.a * (cfg.claim_beta - 1.0);
    let ins = Insurance {
        claims: TailDistribution::pareto(cfg.claim_beta, scale)?,
        gaps: TailDistribution::exponential(1.0 / cfg.b)?,
        b: cfg.b,
        c: cfg.b - cfg.a,
        t: cfg.horizon_t,
    };
    let xs = &cfg.x_grid;
    let k = xs.len();
    let threads = resolve_threads(cfg.threads);
    // condition on the arrival times, then on the earlier claims: the
    // k-th claim crosses x when it exceeds x - S_{k-1} + t_k
    let parts = run_sharded(cfg.n_replications, cfg.shard_size, threads, |shard_idx, count| {
        let mut rng = shard::shard_rng(cfg.seed, shard_idx, LANE_INCREMENTS);
        let mut aux = shard::shard_rng(cfg.seed, shard_idx, LANE_AUX);
        let mut acc = vec![Moments::default(); k];
        let mut z = vec![0.0; k];
        let mut gaps = Vec::new();
        for _ in 0..count {
            gaps.clear();
            let mut clock = 0.0;
            loop {
                let g = ins.gaps.sample(&mut aux);
                clock += g;
                if clock > ins.t {
                    break;
                }
                gaps.push(g);
            }
            z.fill(0.0);
            let (mut s, mut m) = (0.0f64, 0.0f64);
            for &t in &gaps {
                for i in xs.partition_point(|&x| x < m)..k {
                    z[i] += ins.claims.tail(xs[i] - s + t);
                }
                let claim: f64 = ins.claims.sample(&mut rng);
                s += claim - t;
                m = m.max(s);
            }
            for (a, &v) in acc.iter_mut().zip(&z) {
                a.push(v);
            }
        }
        acc
    })?;
    let mut acc = vec![Moments::default(); k];
    for p in &parts {
        for (a, b) in acc.iter_mut().zip(p) {
            a.merge(b);
        }
    }
    let st = ins.sigma_tail();
    let mean_sigma = ins.t / ins.b;
    let mut t = Table::new(&["x", "p_hat", "stderr", "tail_xi", "mean_sigma_tail", "h", "ratio_asymptotic", "ratio_h"]);
    let mut last = (0.0, 0.0, 0.0, 0.0);
    for (i, &x) in xs.iter().enumerate() {
        let (p, se) = (acc[i].mean(), acc[i].stderr());
        let fx = ins.xi_tail(x)?;
        let mut h = 0.0;
        for (n, &q) in st.iter().enumerate() {
            h += q * ins.xi_tail(x + ins.c * (n + 1) as f64)?;
        }
        let asym = mean_sigma * fx;
        t.push(vec![num(x), num(p), num(se), num(fx), num(asym), num(h), num(p / asym), num(p / h)]);
        last = (p, se, asym, h);
    }
    let (p, se, asym, h) = last;
    let mut out = CommandOutput::new("reproduce example6", to_value(cfg), Some(cfg.seed), threads);
    let ratio = p / asym;
    let rel_se = se / p;
    out.metric("ratio_asymptotic", ratio);
    out.metric("ratio_h", p / h);
    out.metric("rel_stderr", rel_se);
    out.check(
        "matches Eσ·F̄(x)",
        (ratio - 1.0).abs() <= 3.0 * rel_se + cfg.tol,
        format!(
            "P/(Eσ F̄(x)) = {ratio:.5} ± {rel_se:.2e} at x = {}; allowed {:.4}",
            num(*xs.last().unwrap()),
            3.0 * rel_se + cfg.tol
        ),
    );
    out.notes.push("the claim count is not a stopping time for the walk, only for the claim sizes".into());
    out.tables.push(("data".into(), t));
    out.settle();
    Ok(out)
}

// Example 7: σ = ∞ with probability p.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example7 {
    pub dist: TailDistribution,
    pub c: f64,
    pub p: f64,
    /// Finite part of `σ`: `ConstantN(inner_n)`.
    #[serde(default)]
    pub inner_n: u64,
    pub x_grid: Vec<f64>,
    pub horizon_cap: u64,
    pub n_replications: u64,
    pub seed: u64,
    pub tol: f64,
    #[serde(default = "shard_small")]
    pub shard_size: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn example7(cfg: &Example7) -> Result<CommandOutput> {
    let rule = StoppingRule::WithInfinityMass {
        p: cfg.p,
        inner: Box::new(StoppingRule::ConstantN { n: cfg.inner_n }),
    };
    let b = Boundary::linear(cfg.c)?;
    let w = walk(
        &cfg.dist,
        b.clone(),
        rule.clone(),
        &cfg.x_grid,
        cfg.horizon_cap,
        cfg.n_replications,
        cfg.seed,
        Estimator::OneBigJump,
        cfg.threads,
        cfg.shard_size,
    );
    let est = simulate_crossing(&w)?;
    let form = AsymptoticForm::Veraverbeke { p: cfg.p, c: cfg.c };
    let tail = TailSequence::analytic(rule.independent_tail().expect("independent rule"), cfg.horizon_cap);
    let mut t = Table::new(&["x", "p_hat", "stderr", "remainder_hint", "h", "asymptotic", "ratio_asymptotic"]);
    let mut points = Vec::new();
    for e in &est {
        let v = form.eval(&cfg.dist, e.x)?;
        let h = h_sum(&tail, &b, &cfg.dist, e.x, 1e-8)?.value;
        t.push(vec![
            num(e.x),
            num(e.p_hat),
            num(e.stderr),
            num(e.cap_remainder_hint.unwrap_or(0.0)),
            num(h),
            num(v),
            num(e.p_hat / v),
        ]);
        points.push((e.x, e.p_hat / v));
    }
    let e = est.last().expect("nonempty grid");
    let v = form.eval(&cfg.dist, e.x)?;
    let hint = e.cap_remainder_hint.unwrap_or(0.0);
    let (lo, hi) = (e.p_hat - 3.0 * e.stderr, e.p_hat + hint + 3.0 * e.stderr);
    let mut out = CommandOutput::new("reproduce example7", to_value(cfg), Some(cfg.seed), resolve_threads(cfg.threads));
    out.metric("ratio_asymptotic", e.p_hat / v);
    out.metric("remainder_hint", hint);
    out.check(
        "lower bound below (p/c)F̄^s(x)",
        lo <= v * (1.0 + cfg.tol),
        format!("capped estimate {} - 3se against {}", num(e.p_hat), num(v)),
    );
    out.check(
        "lower bound plus remainder reaches (p/c)F̄^s(x)",
        hi >= v * (1.0 - cfg.tol),
        format!("estimate + remainder {} + 3se = {} against {}", num(hint), num(hi), num(v)),
    );
    out.plots.push((
        "ratio".into(),
        loglog_svg(
            "capped P(M > x) / ((p/c) F̄^s(x))",
            "x",
            "ratio",
            &[Series {
                label: "ratio".into(),
                points,
            }],
        ),
    ));
    out.tables.push(("data".into(), t));
    out.settle();
    Ok(out)
}

// Custom: a ratio scan with an optional expected range.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomConfig {
    #[serde(flatten)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub expect_ratio: Option<(f64, f64)>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn custom(cfg: &CustomConfig) -> Result<CommandOutput> {
    let mut out = cmd_ratio_scan(&cfg.scan, cfg.seed)?;
    let last = out.metrics.get("final_ratio").copied().unwrap_or(f64::NAN);
    match cfg.expect_ratio {
        Some((lo, hi)) => {
            out.check("final ratio", last >= lo && last <= hi, format!("{last:.4} against [{lo}, {hi}]"));
            out.settle();
        }
        None => {
            out.notes.push("no expected ratio range given".into());
            out.outcome = Outcome::Inconclusive;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_configs_parse() {
        for n in 1..=7u8 {
            let spec = ExperimentSpec::example(n);
            let (v, origin) = resolved_config(&spec).unwrap();
            let ok = match n {
                1 => typed::<Example1>(&v, &origin).is_ok(),
                2 => typed::<Example2>(&v, &origin).is_ok(),
                3 => typed::<Example3>(&v, &origin).is_ok(),
                4 => typed::<Example4>(&v, &origin).is_ok(),
                5 => typed::<Example5>(&v, &origin).is_ok(),
                6 => typed::<Example6>(&v, &origin).is_ok(),
                _ => typed::<Example7>(&v, &origin).is_ok(),
            };
            assert!(ok, "example {n}");
        }
    }

    #[test]
    fn scan_configs_reject_unknown_fields() {
        let base = r#""dist": {"family": "exponential", "params": {"rate": 1.0}, "shift": "mean"},
            "boundary": {"kind": "linear", "slope": 1.0}, "rule": {"kind": "constant_n", "n": 1},
            "x_grid": [1.0], "horizon_cap": 1, "n_replications": 10, "master_seed": 1"#;
        let ok: ScanConfig = parse_config(&format!("{{{base}, \"sigma_paths\": 5}}"), "t").unwrap();
        assert_eq!((ok.sigma_paths, ok.rel_tol), (5, default_rel_tol()));
        let e = parse_config::<ScanConfig>(&format!("{{{base}, \"bogus\": 1}}"), "t").unwrap_err();
        assert!(e.to_string().contains("bogus"));
        let c: CustomConfig = parse_config(&format!("{{{base}, \"expect_ratio\": [0.9, 1.1]}}"), "t").unwrap();
        assert_eq!(c.expect_ratio, Some((0.9, 1.1)));
        assert!(parse_config::<CustomConfig>(&format!("{{{base}, \"expect\": 1}}"), "t").is_err());
    }

    #[test]
    fn merge_patch_rules() {
        let mut v = serde_json::json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge_patch(&mut v, &serde_json::json!({"a": null, "b": {"c": 5}, "e": [1]}));
        assert_eq!(v, serde_json::json!({"b": {"c": 5, "d": 3}, "e": [1]}));
    }

    #[test]
    fn example_ids() {
        assert_eq!("3".parse::<ExampleId>().unwrap(), ExampleId::Example(3));
        assert_eq!("custom".parse::<ExampleId>().unwrap(), ExampleId::Custom);
        assert!("8".parse::<ExampleId>().is_err());
        assert!("x".parse::<ExampleId>().is_err());
    }

    #[test]
    fn two_fold_tail_matches_mc_scale() {
        // exponential minus one: S_2 + 2 is Gamma(2, 1)
        let d = TailDistribution::exponential(1.0).unwrap().centered();
        let x = 3.0f64;
        let exact = (1.0 + x + 2.0) * (-(x + 2.0)).exp();
        assert!((two_fold_tail(&d, x).unwrap() - exact).abs() < 1e-9);
    }

    #[test]
    fn insurance_tail_and_count() {
        let ins = Insurance {
            claims: TailDistribution::exponential(1.0).unwrap(),
            gaps: TailDistribution::exponential(0.5).unwrap(),
            b: 2.0,
            c: 1.0,
            t: 4.0,
        };
        // s - t with s ~ Exp(1) and t of mean 2: P(s - t > z) = e^{-z} E e^{-t} = e^{-z}/3 for z ≥ 0
        let y = 3.0;
        assert!((ins.xi_tail(y).unwrap() - (-(y - 1.0f64)).exp() / 3.0).abs() < 1e-10);
        let st = ins.sigma_tail();
        let mean: f64 = st.iter().sum();
        assert!((mean - 2.0).abs() < 1e-12);
        assert!((st[0] - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn classify_scripted_verdicts() {
        let cfg = ClassifyConfig {
            dist: TailDistribution::exponential(1.0).unwrap(),
            x_grid: vec![5.0, 10.0, 20.0],
            h: 1.0,
            tolerance: None,
            min_improvement: None,
        };
        let out = cmd_classify(&cfg).unwrap();
        let v = out.table("verdicts").unwrap();
        assert_eq!(v.rows[0][4], "fails");
        assert!((out.metrics["L_final_ratio"] - std::f64::consts::E).abs() < 1e-9);
    }
}
