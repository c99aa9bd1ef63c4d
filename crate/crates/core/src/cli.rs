//! Command-line driver: configuration files, run orchestration and output
//! files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Deserializer, Serialize};

use crate::analysis::{self, AnalysisWindow, Summary};
use crate::error::{Error, Result};
use crate::exact;
use crate::groundstate::{find_ground_state, GsConfig};
use crate::model::{current_terms, hamiltonian_terms, parse_phase, AnnealSchedule, BHParams};
use crate::perturb::PerturbGap;
use crate::tdvp::{run_annealing, TdvpConfig, TimeSeries};
use crate::ttn::{expectation, TTNState, TreeTopology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Ttn,
    Exact,
}

/// Number given either as a TOML number or as a string such as `"1/6"` or
/// `"0.7pi"`.
fn number<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        F(f64),
        I(i64),
        S(String),
    }
    match Raw::deserialize(de)? {
        Raw::F(x) => Ok(x),
        Raw::I(x) => Ok(x as f64),
        Raw::S(s) => parse_phase(&s).ok_or_else(|| serde::de::Error::custom(format!("cannot read {s:?} as a number"))),
    }
}

fn opt_number<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Option<f64>, D::Error> {
    number(de).map(Some)
}

/// Flat run configuration. Energies are in units of `J`, times in `ħ/J`.
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub d: usize,
    #[serde(deserialize_with = "number")]
    pub phi_in_rad: f64,
    #[serde(rename = "U_i_in_J", deserialize_with = "number")]
    pub u_i: f64,
    #[serde(rename = "U_f_in_J", deserialize_with = "number")]
    pub u_f: f64,
    #[serde(deserialize_with = "opt_number", skip_serializing_if = "Option::is_none")]
    pub gamma_in_J_over_hbar: Option<f64>,
    #[serde(deserialize_with = "opt_number", skip_serializing_if = "Option::is_none")]
    pub ramp_time_in_hbar_over_J: Option<f64>,
    /// defaults to 30 after the end of the ramp
    #[serde(deserialize_with = "opt_number", skip_serializing_if = "Option::is_none")]
    pub total_time_in_hbar_over_J: Option<f64>,
    #[serde(deserialize_with = "number")]
    pub dt_in_hbar_over_J: f64,
    pub max_bond: usize,
    pub rel_threshold: f64,
    pub krylov_tol: f64,
    pub krylov_dim: usize,
    pub stride: usize,
    pub gs_energy_tol_in_J: f64,
    pub gs_max_sweeps: usize,
    #[serde(deserialize_with = "opt_number", skip_serializing_if = "Option::is_none")]
    pub window_t1_in_hbar_over_J: Option<f64>,
    #[serde(deserialize_with = "opt_number", skip_serializing_if = "Option::is_none")]
    pub window_t2_in_hbar_over_J: Option<f64>,
    pub engine: Engine,
    pub seed: u64,
    /// eigenstates listed by `exact`
    pub num_states: usize,
}

impl Default for RunConfig {
    /// Production parameters of the annealing study.
    fn default() -> Self {
        let tdvp = TdvpConfig::default();
        let gs = GsConfig::default();
        Self {
            l: 16,
            n: None,
            d: 5,
            phi_in_rad: 0.7 * std::f64::consts::PI,
            u_i: 2.0,
            u_f: 7.0,
            gamma_in_J_over_hbar: Some(1.0 / 6.0),
            ramp_time_in_hbar_over_J: None,
            total_time_in_hbar_over_J: None,
            dt_in_hbar_over_J: tdvp.dt,
            max_bond: tdvp.max_bond,
            rel_threshold: tdvp.rel_threshold,
            krylov_tol: tdvp.krylov_tol,
            krylov_dim: tdvp.krylov_dim,
            stride: tdvp.stride,
            gs_energy_tol_in_J: gs.energy_tol,
            gs_max_sweeps: gs.max_sweeps,
            window_t1_in_hbar_over_J: None,
            window_t2_in_hbar_over_J: None,
            engine: Engine::Ttn,
            seed: 0,
            num_states: 20,
        }
    }
}

impl RunConfig {
    /// Parse TOML text on top of the defaults, then apply `key=value`
    /// overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut given: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // parsed from the text itself so that errors carry line numbers
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut table = toml::Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not of the form key=value")))?;
            let k = k.trim();
            let value = match toml::from_str::<toml::Table>(&format!("x = {}", v.trim())) {
                Ok(mut t) => t.remove("x").unwrap_or(toml::Value::String(v.trim().into())),
                Err(_) => toml::Value::String(v.trim().into()),
            };
            given.insert(k.to_string(), value.clone());
            table.insert(k.to_string(), value);
        }
        let mut cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("in overrides {overrides:?}: {e}")))?;
        // an explicit ramp time replaces the default rate
        if given.contains_key("ramp_time_in_hbar_over_J") && !given.contains_key("gamma_in_J_over_hbar") {
            cfg.gamma_in_J_over_hbar = None;
        }
        cfg.resolve()
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Fill in derived defaults and check consistency.
    fn resolve(mut self) -> Result<Self> {
        if self.gamma_in_J_over_hbar.is_some() && self.ramp_time_in_hbar_over_J.is_some() {
            return Err(Error::Config("give either gamma_in_J_over_hbar or ramp_time_in_hbar_over_J, not both".into()));
        }
        if self.total_time_in_hbar_over_J.is_none() {
            let t0 = self.ramp_end()?;
            let dt = self.dt_in_hbar_over_J;
            if !(dt > 0.0) {
                return Err(Error::Config("dt_in_hbar_over_J must be positive".into()));
            }
            self.total_time_in_hbar_over_J = Some(((t0 + 30.0) / dt).ceil() * dt);
        }
        self.params()?.validate().map_err(to_config)?;
        self.schedule()?;
        self.gs_config().validate()?;
        self.tdvp_config().validate().map_err(to_config)?;
        if self.num_states == 0 {
            return Err(Error::Config("num_states must be at least 1".into()));
        }
        Ok(self)
    }

    fn ramp_end(&self) -> Result<f64> {
        let s = match (self.gamma_in_J_over_hbar, self.ramp_time_in_hbar_over_J) {
            (Some(g), None) => AnnealSchedule::from_rate(self.u_i, self.u_f, g, f64::MAX),
            (None, Some(t0)) => AnnealSchedule::from_ramp_time(self.u_i, self.u_f, t0, f64::MAX),
            (None, None) if self.u_i == self.u_f => AnnealSchedule::constant(self.u_i, f64::MAX),
            _ => return Err(Error::Config("the ramp needs gamma_in_J_over_hbar or ramp_time_in_hbar_over_J".into())),
        };
        Ok(s.map_err(to_config)?.t0)
    }

    pub fn params(&self) -> Result<BHParams> {
        Ok(BHParams { l: self.l, j: 1.0, u: self.u_i, phi: self.phi_in_rad, d: self.d, n: self.n.unwrap_or(self.l) })
    }

    pub fn schedule(&self) -> Result<AnnealSchedule> {
        let t = self.total_time_in_hbar_over_J.unwrap_or(f64::NAN);
        let s = match (self.gamma_in_J_over_hbar, self.ramp_time_in_hbar_over_J) {
            (Some(g), None) => AnnealSchedule::from_rate(self.u_i, self.u_f, g, t),
            (None, Some(t0)) => AnnealSchedule::from_ramp_time(self.u_i, self.u_f, t0, t),
            _ => AnnealSchedule::constant(self.u_i, t),
        };
        s.map_err(to_config)
    }

    pub fn gs_config(&self) -> GsConfig {
        GsConfig {
            max_bond: self.max_bond,
            rel_threshold: self.rel_threshold,
            energy_tol: self.gs_energy_tol_in_J,
            max_sweeps: self.gs_max_sweeps,
            ..GsConfig::default()
        }
    }

    pub fn tdvp_config(&self) -> TdvpConfig {
        TdvpConfig {
            dt: self.dt_in_hbar_over_J,
            max_bond: self.max_bond,
            rel_threshold: self.rel_threshold,
            krylov_tol: self.krylov_tol,
            krylov_dim: self.krylov_dim,
            stride: self.stride,
            ..TdvpConfig::default()
        }
    }

    pub fn window(&self) -> Result<AnalysisWindow> {
        let s = self.schedule()?;
        let d = AnalysisWindow::default_for(&s).ok();
        let t1 = self.window_t1_in_hbar_over_J.or(d.map(|w| w.t1)).unwrap_or(s.t0 + 2.0);
        let t2 = self.window_t2_in_hbar_over_J.unwrap_or(s.t_total);
        AnalysisWindow::new(t1, t2, &s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn to_config(e: Error) -> Error {
    match e {
        Error::Invalid(m) => Error::Config(m),
        e => e,
    }
}

#[derive(Debug, Parser)]
#[command(name = "bhring", version, about = "Annealing dynamics of persistent currents in a Bose-Hubbard ring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// TOML configuration; defaults apply to missing keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// override a configuration key, e.g. --set max_bond=40
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Ground state at U_i
    Ground(RunArgs),
    /// Ground state at U_i followed by the interaction ramp
    Anneal(RunArgs),
    /// Low spectrum at U_f by exact diagonalization
    Exact(RunArgs),
    /// Strong-coupling gap coefficients
    Perturb {
        #[arg(long = "L", default_value_t = 32)]
        l: usize,
        /// flux, e.g. 0.7pi
        #[arg(long, default_value = "0.7pi")]
        phi: String,
        /// also print the gap at this interaction (in J)
        #[arg(long = "U")]
        u: Option<f64>,
    },
    /// Summarize an existing time series
    Analyze {
        series: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// ground energy at U_f; computed with the configured engine if absent
        #[arg(long)]
        ground_energy: Option<f64>,
    },
    /// Independent anneal runs along one configuration axis
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// configuration key to vary
        #[arg(long)]
        axis: String,
        /// comma-separated values
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        /// concurrent processes
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn load_config(a: &RunArgs) -> Result<RunConfig> {
    match &a.config {
        Some(p) => RunConfig::load(p, &a.set),
        None => RunConfig::parse("", &a.set),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    outputs: Vec<String>,
    wall_time_s: f64,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, outputs: &[&str], start: Instant) -> Result<()> {
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn tree_ground(cfg: &RunConfig, u: f64) -> Result<(TTNState, f64)> {
    let p = cfg.params()?.with_u(u);
    let topo = Arc::new(TreeTopology::new(p.l).map_err(to_config)?);
    let gs = find_ground_state(&hamiltonian_terms(&p)?, topo, p.n, &cfg.gs_config(), cfg.seed)?;
    if !gs.converged {
        eprintln!("warning: ground-state search at U = {u} did not converge in {} sweeps", cfg.gs_max_sweeps);
    }
    Ok((gs.state, gs.energy))
}

/// Ground energy at `u` with the configured engine.
pub fn ground_energy(cfg: &RunConfig, u: f64) -> Result<f64> {
    match cfg.engine {
        Engine::Exact => Ok(exact::ground_state(&cfg.params()?.with_u(u))?.0),
        Engine::Ttn => Ok(tree_ground(cfg, u)?.1),
    }
}

fn cmd_ground(cfg: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let p = cfg.params()?;
    let (energy, current, files) = match cfg.engine {
        Engine::Ttn => {
            let (state, e) = tree_ground(cfg, p.u)?;
            let i = expectation(&state, &current_terms(&p)?)?.re;
            state.save(&out.join("ground.ttn"))?;
            (e, i, vec!["ground.csv", "ground.ttn"])
        }
        Engine::Exact => {
            let (basis, h) = exact::build_sector_hamiltonian(&p)?;
            let s = exact::low_spectrum(&h, &basis, 1)?;
            let i = exact::sector_operator(&current_terms(&p)?, &basis)?.expectation(&s.vectors[0]).re;
            (s.energies[0], i, vec!["ground.csv"])
        }
    };
    let mut f = fs::File::create(out.join("ground.csv"))?;
    writeln!(f, "U_in_J,energy_in_J,current_in_J_over_hbar")?;
    writeln!(f, "{},{energy},{current}", p.u)?;
    println!("E0 = {energy:.12} J, I = {current:.12} J/hbar");
    Ok(files)
}

fn cmd_anneal(cfg: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let p = cfg.params()?;
    let sched = cfg.schedule()?;
    let window = cfg.window()?;
    let (series, e_f, files) = match cfg.engine {
        Engine::Ttn => {
            let (state0, _) = tree_ground(cfg, p.u)?;
            let r = run_annealing(&state0, &p, &sched, &cfg.tdvp_config(), |_| {})?;
            r.state.save(&out.join("final.ttn"))?;
            let e_f = tree_ground(cfg, sched.u_f)?.1;
            (r.series, e_f, vec!["series.csv", "summary.csv", "final.ttn"])
        }
        Engine::Exact => {
            let (_, psi0) = exact::ground_state(&p)?;
            let (series, _) = exact::exact_evolve(&psi0, &p, &sched, cfg.dt_in_hbar_over_J, cfg.stride)?;
            let e_f = exact::ground_state(&p.with_u(sched.u_f))?.0;
            (series, e_f, vec!["series.csv", "summary.csv"])
        }
    };
    series.save(&out.join("series.csv"))?;
    let s = Summary::from_run("anneal", &series, &sched, &window, e_f, cfg.max_bond)?;
    let mut f = fs::File::create(out.join("summary.csv"))?;
    writeln!(f, "{}", Summary::HEADER)?;
    s.write_row(&mut f)?;
    println!("I0 = {:.6e}, eps_res = {:.6e}, omega0 = {:.6}", s.amplitude, s.residual_energy, s.omega0);
    Ok(files)
}

fn cmd_exact(cfg: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let p = cfg.params()?.with_u(cfg.u_f);
    let (basis, h) = exact::build_sector_hamiltonian(&p)?;
    let spec = exact::low_spectrum(&h, &basis, cfg.num_states)?;
    spec.write_dump(fs::File::create(out.join("spectrum.csv"))?)?;
    let gap = spec.translation_one_gap()?;
    let tl = analysis::theoretical_alpha(&p)?;
    let mut f = fs::File::create(out.join("exact.csv"))?;
    writeln!(f, "U_in_J,E0_in_J,gap_in_J,current_matrix_element,alpha_two_level")?;
    writeln!(f, "{},{},{gap},{},{}", p.u, spec.energies[0], tl.matrix_element, tl.alpha)?;
    println!("E0 = {:.12} J, translation-1 gap = {gap:.12} J, alpha = {:.6}", spec.energies[0], tl.alpha);
    Ok(vec!["spectrum.csv", "exact.csv"])
}

fn cmd_perturb(l: usize, phi: &str, u: Option<f64>) -> Result<()> {
    let phi = parse_phase(phi).ok_or_else(|| Error::Config(format!("cannot read phase {phi:?}")))?;
    let g = PerturbGap::new(l, phi).map_err(to_config)?;
    println!("a = {}", g.a);
    println!("b = {:.2}", g.b);
    println!("c = {:.2}", g.c);
    println!("E1(1) = {:.6} J, E0(2) = {:.6} J^2/U, E1(2) = {:.6} J^2/U", g.e1[1], g.e0[2], g.e1[2]);
    if let Some(u) = u {
        println!("gap(U = {u}) = {:.6} J", g.gap(u, 1.0).map_err(to_config)?);
    }
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig, series: &Path, e_ground: Option<f64>, out: &Path) -> Result<Vec<&'static str>> {
    let ts = TimeSeries::load(series)?;
    if ts.l != cfg.l {
        return Err(Error::Config(format!("series has L = {}, configuration has L = {}", ts.l, cfg.l)));
    }
    let sched = cfg.schedule()?;
    let e_f = match e_ground {
        Some(e) => e,
        None => ground_energy(cfg, sched.u_f)?,
    };
    let s = Summary::from_run("analyze", &ts, &sched, &cfg.window()?, e_f, cfg.max_bond)?;
    let mut f = fs::File::create(out.join("summary.csv"))?;
    writeln!(f, "{}", Summary::HEADER)?;
    s.write_row(&mut f)?;
    println!("I0 = {:.6e}, eps_res = {:.6e}, omega0 = {:.6}", s.amplitude, s.residual_energy, s.omega0);
    Ok(vec!["summary.csv"])
}

/// Outcome of one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub key: f64,
    /// summary row, or the failure message
    pub result: std::result::Result<String, String>,
}

fn sweep_point_value(v: &str) -> Result<f64> {
    parse_phase(v).ok_or_else(|| Error::Config(format!("sweep value {v:?} is not a number")))
}

fn cmd_sweep(run: &RunArgs, axis: &str, values: &[String], jobs: usize) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("sweep axis has no values".into()));
    }
    // validate every point before spawning anything
    let mut keyed = Vec::with_capacity(values.len());
    for v in values {
        let mut set = run.set.clone();
        set.push(format!("{axis}={v}"));
        let a = RunArgs { set, ..run.clone() };
        load_config(&a)?;
        keyed.push((sweep_point_value(v)?, v.clone()));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    fs::create_dir_all(&run.out)?;
    let exe = std::env::current_exe()?;
    let mut points: Vec<SweepPoint> = Vec::with_capacity(keyed.len());
    for chunk in keyed.chunks(jobs.max(1)) {
        let mut children = Vec::new();
        for (i, (key, v)) in chunk.iter().enumerate() {
            let dir = run.out.join(format!("point_{:03}", points.len() + i));
            let mut cmd = Command::new(&exe);
            cmd.arg("anneal").arg("--out").arg(&dir);
            if let Some(c) = &run.config {
                cmd.arg("--config").arg(c);
            }
            for s in &run.set {
                cmd.arg("--set").arg(s);
            }
            cmd.arg("--set").arg(format!("{axis}={v}"));
            cmd.stdout(std::process::Stdio::null());
            children.push((*key, v.clone(), dir, cmd.spawn()));
        }
        for (key, value, dir, child) in children {
            let result = match child.map(|c| c.wait_with_output()) {
                Ok(Ok(o)) if o.status.success() => fs::read_to_string(dir.join("summary.csv"))
                    .map_err(|e| e.to_string())
                    .and_then(|t| t.lines().nth(1).map(str::to_string).ok_or_else(|| "empty summary".to_string())),
                Ok(Ok(o)) => Err(format!("exit {}: {}", o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stderr).trim())),
                Ok(Err(e)) | Err(e) => Err(e.to_string()),
            };
            points.push(SweepPoint { value, key, result });
        }
    }
    let mut f = fs::File::create(run.out.join("sweep.csv"))?;
    writeln!(f, "{axis},status,{}", Summary::HEADER)?;
    let mut failed = 0;
    for p in &points {
        match &p.result {
            Ok(row) => writeln!(f, "{},ok,{row}", p.key)?,
            Err(e) => {
                failed += 1;
                let blanks = ",".repeat(Summary::HEADER.matches(',').count());
                writeln!(f, "{},failed: {},{blanks}", p.key, e.replace([',', '\n'], ";"))?;
            }
        }
    }
    println!("{} points, {failed} failed", points.len());
    if failed == points.len() {
        return Err(Error::Numerical("every sweep point failed".into()));
    }
    Ok(())
}

fn with_outputs(
    run: &RunArgs,
    name: &str,
    f: impl FnOnce(&RunConfig, &Path) -> Result<Vec<&'static str>>,
) -> Result<()> {
    let start = Instant::now();
    let cfg = load_config(run)?;
    fs::create_dir_all(&run.out)?;
    let files = f(&cfg, &run.out)?;
    write_manifest(&run.out, name, &cfg, &files, start)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Ground(a) => with_outputs(&a, "ground", cmd_ground),
        Cmd::Anneal(a) => with_outputs(&a, "anneal", cmd_anneal),
        Cmd::Exact(a) => with_outputs(&a, "exact", cmd_exact),
        Cmd::Perturb { l, phi, u } => cmd_perturb(l, &phi, u),
        Cmd::Analyze { series, run, ground_energy } => {
            with_outputs(&run, "analyze", |cfg, out| cmd_analyze(cfg, &series, ground_energy, out))
        }
        Cmd::Sweep { run, axis, values, jobs } => cmd_sweep(&run, &axis, &values, jobs),
    }
}

/// Entry point; returns the process exit code.
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
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
