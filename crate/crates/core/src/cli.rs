//! Command-line driver: run configuration, convergence studies, sampling
//! along lines and grids, and CSV output.
//!
//! Configuration is layered: scenario defaults, then an optional TOML file,
//! then command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::HdgError;
use crate::fem::TensorBasis;
use crate::forms::{Field, StabilizationParams, TauF};
use crate::mesh::CartesianMesh;
use crate::scenarios::{Scenario, ScenarioKind};
use crate::solver::{NewtonSettings, Solution, SolverMode};
use crate::timestep::{compute_errors, DiagnosticsRecord, Simulation, TimeConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] HdgError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(HdgError::InvalidArgument(_) | HdgError::InvalidMesh(_)) => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Fully resolved settings of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub k: usize,
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub params: StabilizationParams,
    pub output_dir: PathBuf,
    pub mode: SolverMode,
    pub cadence: usize,
}

impl RunConfig {
    pub fn defaults(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            k: 2,
            n: 8,
            dt: 1e-3,
            t_final: Scenario::from_kind(scenario).t_final,
            params: StabilizationParams::default(),
            output_dir: PathBuf::from("output"),
            mode: SolverMode::Condensed,
            cadence: 10,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(1..=3).contains(&self.k) {
            return Err(CliError::Config(format!("k must be 1, 2 or 3, got {}", self.k)));
        }
        if self.n == 0 {
            return Err(CliError::Config("N must be positive".into()));
        }
        self.time_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.params.check_constant_conditions().map_err(CliError::Config)
    }

    pub fn time_config(&self) -> TimeConfig {
        TimeConfig { dt: self.dt, t_final: self.t_final, cadence: self.cadence }
    }

    pub fn settings(&self) -> NewtonSettings {
        NewtonSettings { mode: self.mode, ..NewtonSettings::default() }
    }

    pub fn simulation(&self) -> CliResult<Simulation> {
        let scenario = Scenario { t_final: self.t_final, ..Scenario::from_kind(self.scenario) };
        let mesh = CartesianMesh::uniform(scenario.domain, self.n, self.n)?;
        Ok(Simulation::new(scenario, mesh, self.k, self.params, self.settings())?)
    }

    /// Applies the keys present in a config file.
    pub fn apply_file(&mut self, file: &ConfigFile) -> CliResult<()> {
        if let Some(s) = &file.scenario {
            let kind: ScenarioKind = s.parse().map_err(CliError::Config)?;
            if kind != self.scenario {
                self.scenario = kind;
                self.t_final = Scenario::from_kind(kind).t_final;
            }
        }
        set(&mut self.k, file.k);
        set(&mut self.n, file.n);
        set(&mut self.dt, file.dt);
        set(&mut self.t_final, file.t_final);
        set(&mut self.cadence, file.cadence);
        if let Some(dir) = &file.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(m) = &file.solver_mode {
            self.mode = parse_mode(m)?;
        }
        if let Some(s) = &file.stabilization {
            set(&mut self.params.tau_zpu_plus, s.tau_zpu_plus);
            set(&mut self.params.tau_zpu_minus, s.tau_zpu_minus);
            set(&mut self.params.tau_zpv_minus, s.tau_zpv_minus);
            set(&mut self.params.tau_uqq, s.tau_uqq);
            if let Some(t) = &s.tau_f {
                self.params.tau_f = t.resolve(s.adaptive_eps)?;
            }
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, flags: &CommonArgs) -> CliResult<()> {
        if let Some(kind) = flags.scenario {
            if kind != self.scenario {
                self.scenario = kind;
                self.t_final = Scenario::from_kind(kind).t_final;
            }
        }
        set(&mut self.k, flags.k);
        set(&mut self.n, flags.n);
        set(&mut self.dt, flags.dt);
        set(&mut self.t_final, flags.t_final);
        set(&mut self.cadence, flags.cadence);
        if let Some(dir) = &flags.output {
            self.output_dir = dir.clone();
        }
        if let Some(m) = &flags.mode {
            self.mode = parse_mode(m)?;
        }
        if let Some(t) = &flags.tau_f {
            let setting = match t.parse::<f64>() {
                Ok(v) => TauFSetting::Value(v),
                Err(_) => TauFSetting::Name(t.clone()),
            };
            self.params.tau_f = setting.resolve(None)?;
        }
        Ok(())
    }
}

fn set<T: Copy>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn parse_mode(s: &str) -> CliResult<SolverMode> {
    match s.to_ascii_lowercase().as_str() {
        "monolithic" => Ok(SolverMode::Monolithic),
        "condensed" => Ok(SolverMode::Condensed),
        other => Err(CliError::Config(format!("unknown solver mode '{other}' (monolithic or condensed)"))),
    }
}

/// Contents of a TOML run file. Every key is optional; unknown keys are rejected.
///
/// ```toml
/// scenario = "mms"        # mms | peakon | energy
/// k = 2
/// n = 8
/// dt = 1e-3
/// t_final = 1.0
/// output_dir = "out"
/// solver_mode = "condensed"   # or "monolithic"
/// cadence = 10
///
/// [stabilization]
/// tau_zpu_plus = -1.0
/// tau_zpu_minus = -1.0
/// tau_zpv_minus = 1.0
/// tau_uqq = -0.25
/// tau_f = 4.0             # or "adaptive"
/// adaptive_eps = 1e-2
/// ```
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: Option<String>,
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub solver_mode: Option<String>,
    pub cadence: Option<usize>,
    pub stabilization: Option<StabilizationFile>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StabilizationFile {
    pub tau_zpu_plus: Option<f64>,
    pub tau_zpu_minus: Option<f64>,
    pub tau_zpv_minus: Option<f64>,
    pub tau_uqq: Option<f64>,
    pub tau_f: Option<TauFSetting>,
    pub adaptive_eps: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TauFSetting {
    Value(f64),
    Name(String),
}

impl TauFSetting {
    fn resolve(&self, eps: Option<f64>) -> CliResult<TauF> {
        match self {
            TauFSetting::Value(v) => Ok(TauF::Constant(*v)),
            TauFSetting::Name(s) if s.eq_ignore_ascii_case("adaptive") => Ok(TauF::Adaptive { eps: eps.unwrap_or(1e-2) }),
            TauFSetting::Name(s) => Err(CliError::Config(format!("tau_f must be a number or \"adaptive\", got '{s}'"))),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }
}

/// One refinement level of a convergence study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRow {
    pub k: usize,
    pub n: usize,
    /// Reported mesh size `1/N`.
    pub h: f64,
    pub err_u: f64,
    pub err_q: f64,
    pub order_u: Option<f64>,
    pub order_q: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
}

/// `log2(coarse / fine)` for meshes refined by a factor of two.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

impl ErrorReport {
    /// Builds a report from `(k, N, err_u, err_q)` tuples; rows are sorted by N
    /// and orders are recomputed from the error columns.
    pub fn from_errors(entries: impl IntoIterator<Item = (usize, usize, f64, f64)>) -> Self {
        let mut rows: Vec<ErrorRow> = entries
            .into_iter()
            .map(|(k, n, err_u, err_q)| ErrorRow { k, n, h: 1.0 / n as f64, err_u, err_q, order_u: None, order_q: None })
            .collect();
        rows.sort_by_key(|r| (r.k, r.n));
        for i in 1..rows.len() {
            let (c, f) = (rows[i - 1], rows[i]);
            if c.k == f.k {
                let levels = (f.n as f64 / c.n as f64).log2();
                rows[i].order_u = Some(observed_order(c.err_u, f.err_u) / levels);
                rows[i].order_q = Some(observed_order(c.err_q, f.err_q) / levels);
            }
        }
        Self { rows }
    }

    pub fn push(&mut self, k: usize, n: usize, err_u: f64, err_q: f64) {
        let entries: Vec<_> = self.rows.iter().map(|r| (r.k, r.n, r.err_u, r.err_q)).chain([(k, n, err_u, err_q)]).collect();
        *self = Self::from_errors(entries);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,N,h_reported,err_u,err_q,order_u,order_q\n");
        for r in &self.rows {
            let ord = |o: Option<f64>| o.map(|v| format!("{v:.12e}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{:.12e},{:.12e},{:.12e},{},{}",
                r.k,
                r.n,
                r.h,
                r.err_u,
                r.err_q,
                ord(r.order_u),
                ord(r.order_q)
            );
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>2} {:>4} {:>10} {:>12} {:>7} {:>12} {:>7}\n", "k", "N", "h", "err_u", "rate", "err_q", "rate");
        for r in &self.rows {
            let ord = |o: Option<f64>| o.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:>2} {:>4} {:>10.4e} {:>12.4e} {:>7} {:>12.4e} {:>7}",
                r.k,
                r.n,
                r.h,
                r.err_u,
                ord(r.order_u),
                r.err_q,
                ord(r.order_q)
            );
        }
        s
    }
}

pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut s = String::from("step,t,E_h,norm_u,norm_q,newton_iters\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            r.step, r.time, r.energy, r.norm_u, r.norm_q, r.newton_iterations
        );
    }
    s
}

pub fn section_csv(samples: &[(f64, f64)]) -> String {
    let mut s = String::from("coord,value\n");
    for (c, v) in samples {
        let _ = writeln!(s, "{c:.12e},{v:.12e}");
    }
    s
}

pub fn surface_csv(samples: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("x,y,u\n");
    for (x, y, u) in samples {
        let _ = writeln!(s, "{x:.12e},{y:.12e},{u:.12e}");
    }
    s
}

/// Runs one MMS level and returns the final-time errors.
fn mms_level(config: &RunConfig) -> CliResult<(f64, f64)> {
    let mut sim = config.simulation()?;
    sim.run(&config.time_config())?;
    Ok(compute_errors(&sim.mesh, &sim.ops.basis, &sim.solution, &sim.scenario, sim.time))
}

/// Runs the scenario at each `N` in `levels`. On failure the rows computed
/// so far are returned alongside the error.
pub fn convergence_study(base: &RunConfig, levels: &[usize]) -> Result<ErrorReport, (ErrorReport, CliError)> {
    if levels.len() < 2 {
        return Err((ErrorReport::default(), CliError::Config("a study needs at least two levels".into())));
    }
    if !Scenario::from_kind(base.scenario).has_exact_solution() {
        return Err((ErrorReport::default(), CliError::Config("studies need a scenario with an exact solution".into())));
    }
    let mut report = ErrorReport::default();
    for &n in levels {
        let config = RunConfig { n, ..base.clone() };
        match mms_level(&config) {
            Ok((eu, eq)) => report.push(config.k, n, eu, eq),
            Err(e) => return Err((report, e)),
        }
    }
    Ok(report)
}

/// Parses `a..b` into the powers of two from `a` to `b`, or a comma list.
pub fn parse_levels(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Config(format!("cannot parse levels '{s}' (use e.g. 2..16 or 2,4,8)"));
    let levels: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a == 0 || b < a {
            return Err(bad());
        }
        std::iter::successors(Some(a), |&n| Some(2 * n)).take_while(|&n| n <= b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if levels.iter().any(|n| !n.is_power_of_two()) {
        return Err(CliError::Config(format!("study levels must be powers of two, got {levels:?}")));
    }
    Ok(levels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Section {
    /// The line `x = value`, sampled along y.
    X(f64),
    /// The line `y = value`, sampled along x.
    Y(f64),
}

impl std::str::FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (axis, v) = s.split_once('=').ok_or_else(|| format!("section '{s}' is not of the form x=VALUE or y=VALUE"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("bad section value in '{s}'"))?;
        match axis.trim() {
            "x" | "X" => Ok(Section::X(v)),
            "y" | "Y" => Ok(Section::Y(v)),
            _ => Err(format!("section axis must be x or y, got '{axis}'")),
        }
    }
}

impl Section {
    pub fn label(&self) -> String {
        match self {
            Section::X(v) => format!("x{v}"),
            Section::Y(v) => format!("y{v}"),
        }
    }
}

/// Point value of `u_h`; points on element boundaries belong to the element
/// on their left (below).
pub fn eval_u(mesh: &CartesianMesh, basis: &TensorBasis, sol: &Solution, x: f64, y: f64) -> Option<f64> {
    let e = mesh.locate(x, y)?;
    let st = &sol.states[mesh.element_index(e)];
    Some(basis.eval(&mesh.cell(e), st.field(Field::U), &[(x, y)])[0])
}

/// `n` equispaced samples of `u_h` along a section, endpoints included.
pub fn sample_cross_section(
    mesh: &CartesianMesh,
    basis: &TensorBasis,
    sol: &Solution,
    section: Section,
    n: usize,
) -> crate::Result<Vec<(f64, f64)>> {
    let d = mesh.domain;
    let (lo, hi) = match section {
        Section::X(x) if (d.x_left..=d.x_right).contains(&x) => (d.y_bottom, d.y_top),
        Section::Y(y) if (d.y_bottom..=d.y_top).contains(&y) => (d.x_left, d.x_right),
        _ => return Err(HdgError::InvalidArgument(format!("section {section:?} lies outside the domain"))),
    };
    let n = n.max(2);
    Ok((0..n)
        .map(|i| {
            let c = if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            let (x, y) = match section {
                Section::X(x) => (x, c),
                Section::Y(y) => (c, y),
            };
            (c, eval_u(mesh, basis, sol, x, y).expect("sample inside domain"))
        })
        .collect())
}

/// `u_h` on an `n x n` grid covering the domain, row by row in y.
pub fn sample_surface(mesh: &CartesianMesh, basis: &TensorBasis, sol: &Solution, n: usize) -> Vec<(f64, f64, f64)> {
    let d = mesh.domain;
    let n = n.max(2);
    let coord = |lo: f64, hi: f64, i: usize| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        let y = coord(d.y_bottom, d.y_top, j);
        for i in 0..n {
            let x = coord(d.x_left, d.x_right, i);
            out.push((x, y, eval_u(mesh, basis, sol, x, y).expect("grid inside domain")));
        }
    }
    out
}

/// Peak diagnostics of one sampled section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakSample {
    pub time: f64,
    pub peak: f64,
    pub argmax: f64,
}

pub fn peak_of(samples: &[(f64, f64)], time: f64) -> PeakSample {
    let (argmax, peak) = samples.iter().cloned().fold((f64::NAN, f64::NEG_INFINITY), |best, s| if s.1 > best.1 { s } else { best });
    PeakSample { time, peak, argmax }
}

/// Output of a peakon run: sections at each requested time and the
/// largest overshoot of `u_h` above the wave speed on the surface grid over
/// all steps after the initial one (the projected initial kink overshoots
/// regardless of the time step).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeakonOutput {
    pub sections: Vec<(Section, f64, Vec<(f64, f64)>)>,
    pub surfaces: Vec<(f64, Vec<(f64, f64, f64)>)>,
    pub records: Vec<DiagnosticsRecord>,
    pub max_overshoot: f64,
}

impl PeakonOutput {
    /// Peak along `section` at every sampled time.
    pub fn peaks(&self, section: Section) -> Vec<PeakSample> {
        self.sections.iter().filter(|(s, _, _)| *s == section).map(|(_, t, v)| peak_of(v, *t)).collect()
    }
}

/// Marches the configured scenario, sampling sections and a surface grid at
/// the steps closest to `times`.
pub fn run_sampled(
    config: &RunConfig,
    sections: &[Section],
    times: &[f64],
    samples: usize,
    surface: usize,
) -> CliResult<PeakonOutput> {
    let mut sim = config.simulation()?;
    let speed = sim.scenario.speed;
    let time = config.time_config();
    let dt = time.effective_dt();
    let mut out = PeakonOutput { max_overshoot: f64::NEG_INFINITY, ..Default::default() };
    let mut pending: Vec<f64> = times.to_vec();
    let mut sample = |sim: &Simulation, out: &mut PeakonOutput| -> crate::Result<()> {
        let due: Vec<f64> = pending.iter().cloned().filter(|&t| (t - sim.time).abs() <= 0.5 * dt + 1e-12).collect();
        pending.retain(|t| !due.contains(t));
        let grid = sample_surface(&sim.mesh, &sim.ops.basis, &sim.solution, surface);
        if sim.steps_taken > 0 {
            let top = grid.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
            out.max_overshoot = out.max_overshoot.max(top - speed);
        }
        for t in due {
            for &s in sections {
                out.sections.push((s, t, sample_cross_section(&sim.mesh, &sim.ops.basis, &sim.solution, s, samples)?));
            }
            out.surfaces.push((t, grid.clone()));
        }
        Ok(())
    };
    sample(&sim, &mut out)?;
    let mut failure = None;
    out.records = sim.run_with(&time, |s, _| {
        if failure.is_none() {
            if let Err(e) = sample(s, &mut out) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(out)
}

#[derive(Parser, Debug)]
#[command(name = "chkp-hdg", version, about = "HDG solver for the 2D Camassa-Holm-KP equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// March one configuration and write diagnostics (and errors when an exact solution exists).
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Convergence study over mesh levels.
    Study {
        #[command(flatten)]
        common: CommonArgs,
        /// Levels as `a..b` (powers of two) or a comma list.
        #[arg(long, default_value = "2..16")]
        levels: String,
    },
    /// Peakon run with cross-sections and surfaces at selected times.
    Peakon {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_value = "x=0,y=0")]
        sections: Vec<Section>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1.0")]
        times: Vec<f64>,
        /// Points per cross-section.
        #[arg(long, default_value_t = 401)]
        samples: usize,
        /// Points per direction of the surface grid.
        #[arg(long, default_value_t = 65)]
        surface: usize,
    },
    /// Energy decay run with homogeneous data.
    Energy {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// TOML run file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<ScenarioKind>,
    /// Polynomial degree (1, 2 or 3).
    #[arg(long)]
    pub k: Option<usize>,
    /// Elements per direction.
    #[arg(long = "N", visible_alias = "n")]
    pub n: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "t-final", visible_alias = "T")]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// monolithic or condensed
    #[arg(long)]
    pub mode: Option<String>,
    /// Diagnostics every this many steps.
    #[arg(long)]
    pub cadence: Option<usize>,
    /// A number or `adaptive`.
    #[arg(long = "tau-f")]
    pub tau_f: Option<String>,
}

/// Resolves defaults, file and flags for a subcommand whose scenario is `fixed` (if any).
pub fn resolve_config(common: &CommonArgs, fixed: Option<ScenarioKind>) -> CliResult<RunConfig> {
    let mut config = RunConfig::defaults(fixed.unwrap_or(ScenarioKind::Mms));
    if let Some(path) = &common.config {
        config.apply_file(&ConfigFile::load(path)?)?;
    }
    config.apply_flags(common)?;
    if let Some(kind) = fixed {
        if config.scenario != kind {
            return Err(CliError::Config(format!(
                "this subcommand runs the {} scenario, not {}",
                kind.name(),
                config.scenario.name()
            )));
        }
    }
    config.validate()?;
    Ok(config)
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.into(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Executes a parsed command, printing a short summary to stdout.
pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run { common } => {
            let config = resolve_config(common, None)?;
            let mut sim = config.simulation()?;
            let records = sim.run(&config.time_config())?;
            write(&config.output_dir, "diagnostics.csv", &diagnostics_csv(&records))?;
            if sim.scenario.has_exact_solution() {
                let (eu, eq) = compute_errors(&sim.mesh, &sim.ops.basis, &sim.solution, &sim.scenario, sim.time);
                let report = ErrorReport::from_errors([(config.k, config.n, eu, eq)]);
                write(&config.output_dir, "errors.csv", &report.to_csv())?;
                print!("{}", report.table());
            }
            println!("{} steps to t = {}", sim.steps_taken, sim.time);
            Ok(())
        }
        Command::Study { common, levels } => {
            let config = resolve_config(common, None)?;
            let levels = parse_levels(levels)?;
            let name = format!("errors_{}_k{}.csv", config.scenario.name(), config.k);
            match convergence_study(&config, &levels) {
                Ok(report) => {
                    write(&config.output_dir, &name, &report.to_csv())?;
                    print!("{}", report.table());
                    Ok(())
                }
                Err((partial, e)) => {
                    write(&config.output_dir, &name, &partial.to_csv())?;
                    eprint!("{}", partial.table());
                    Err(e)
                }
            }
        }
        Command::Peakon { common, sections, times, samples, surface } => {
            let config = resolve_config(common, Some(ScenarioKind::Peakon))?;
            let out = run_sampled(&config, sections, times, *samples, *surface)?;
            write(&config.output_dir, "diagnostics.csv", &diagnostics_csv(&out.records))?;
            for (s, t, v) in &out.sections {
                write(&config.output_dir, &format!("section_{}_t{t:.4}.csv", s.label()), &section_csv(v))?;
            }
            for (t, v) in &out.surfaces {
                write(&config.output_dir, &format!("surface_t{t:.4}.csv"), &surface_csv(v))?;
            }
            for s in sections {
                for p in out.peaks(*s) {
                    println!("{} t = {:.3}: peak {:.6} at {:.4}", s.label(), p.time, p.peak, p.argmax);
                }
            }
            println!("max overshoot above c: {:.4e}", out.max_overshoot);
            Ok(())
        }
        Command::Energy { common } => {
            let mut config = resolve_config(common, Some(ScenarioKind::EnergyDecay))?;
            if common.cadence.is_none() {
                config.cadence = 1;
            }
            let mut sim = config.simulation()?;
            let records = sim.run(&config.time_config())?;
            write(&config.output_dir, "diagnostics.csv", &diagnostics_csv(&records))?;
            let monotone = records.windows(2).all(|w| w[1].energy <= w[0].energy * (1.0 + 1e-12));
            println!(
                "E_h: {:.6e} -> {:.6e} over {} steps, {}",
                records[0].energy,
                records.last().unwrap().energy,
                sim.steps_taken,
                if monotone { "nonincreasing" } else { "NOT monotone" }
            );
            Ok(())
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
