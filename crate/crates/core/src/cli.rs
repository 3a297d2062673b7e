//! Subcommand drivers: each runs a module operation set and writes
//! `<command>-<hash>.{json,csv}` artifacts with the effective config echoed in.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::kernels;
use crate::noise;
use crate::solver::{self, SixConstants, SolverGrid, DEFAULT_SUBNODES};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Verify,
    Moments,
    NoiseCheck,
    Simulate,
    Density,
    DeltaScan,
    Constants,
}

impl Command {
    pub const ALL: [Command; 7] =
        [Command::Verify, Command::Moments, Command::NoiseCheck, Command::Simulate, Command::Density, Command::DeltaScan, Command::Constants];

    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Moments => "moments",
            Command::NoiseCheck => "noise-check",
            Command::Simulate => "simulate",
            Command::Density => "density",
            Command::DeltaScan => "delta-scan",
            Command::Constants => "constants",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

/// Result of one command: whether its assertions held, plus the files written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub passed: bool,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_ASSERTION
        }
    }
}

/// Exit code for an error raised before or during a command.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Budget(_) => EXIT_BUDGET,
        Error::Quadrature(_) | Error::EnergyDivergence(_) | Error::NoAdmissibleM(_) => EXIT_ASSERTION,
        _ => EXIT_CONFIG,
    }
}

struct Writer<'a> {
    cfg: &'a RunConfig,
    command: Command,
    dir: PathBuf,
    stem: String,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(cfg: &'a RunConfig, command: Command) -> Result<Self> {
        let dir = cfg.run.output_dir.clone();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { cfg, command, dir, stem: format!("{}-{}", command.name(), cfg.hash()), written: Vec::new() })
    }

    fn path(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("{}.{ext}", self.stem))
    }

    fn json<T: Serialize>(&mut self, passed: bool, report: &T) -> Result<()> {
        let doc = json!({
            "command": self.command.name(),
            "config_hash": self.cfg.hash(),
            "config": self.cfg,
            "passed": passed,
            "report": report,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))? + "\n";
        let p = self.path("json");
        std::fs::write(&p, text)?;
        self.written.push(p);
        Ok(())
    }

    /// Numeric table with the config as leading `#` lines; rejects non-finite cells.
    fn csv(&mut self, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut text = String::new();
        for line in self.cfg.to_toml().lines() {
            let _ = writeln!(text, "# {line}");
        }
        let _ = writeln!(text, "# config_hash = {}", self.cfg.hash());
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite value in {} output", self.command.name())));
            }
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        let p = self.path("csv");
        std::fs::write(&p, text)?;
        self.written.push(p);
        Ok(())
    }

    fn finish(self, passed: bool, summary: String) -> RunOutcome {
        RunOutcome { passed, summary, artifacts: self.written }
    }
}

fn solver_grid(cfg: &RunConfig) -> Result<SolverGrid> {
    SolverGrid::new(&cfg.model()?, &cfg.grid_spec()?, DEFAULT_SUBNODES)
}

/// Dispatches `command` on a validated config.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    match command {
        Command::Verify => cmd_verify(cfg),
        Command::Moments => cmd_moments(cfg),
        Command::NoiseCheck => cmd_noise_check(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Density => cmd_density(cfg),
        Command::DeltaScan => cmd_delta_scan(cfg),
        Command::Constants => cmd_constants(cfg),
    }
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<RunOutcome> {
    let model = cfg.model()?;
    let report = verify::identity_suite(&model, 3)?;
    let mut w = Writer::new(cfg, Command::Verify)?;
    w.json(report.passed, &report)?;
    let rows: Vec<Vec<f64>> = report
        .checks
        .iter()
        .enumerate()
        .map(|(i, c)| vec![i as f64, c.value, c.reference, c.tolerance, f64::from(u8::from(c.passed))])
        .collect();
    w.csv(&["check", "value", "reference", "tolerance", "passed"], &rows)?;
    let failures: Vec<String> = report.failures().iter().map(|c| format!("{} [{}]", c.name, c.group)).collect();
    let summary = if failures.is_empty() {
        format!("{} checks passed", report.checks.len())
    } else {
        format!("failed checks: {}", failures.join("; "))
    };
    Ok(w.finish(report.passed, summary))
}

pub fn cmd_moments(cfg: &RunConfig) -> Result<RunOutcome> {
    let r = &cfg.run;
    let sg = solver_grid(cfg)?;
    let rep = solver::mc_second_moment(&sg, r.t, r.x, r.order, r.samples, r.seed)?;
    let series = if r.order > 0 { Some(kernels::second_moment_series(&sg.model, r.t, r.order)?) } else { None };
    let z = if rep.std_error > 0.0 { (rep.mean_square - rep.discrete_exact).abs() / rep.std_error } else { 0.0 };
    let passed = rep.nsamples < 2 || z <= 4.0;
    let mut w = Writer::new(cfg, Command::Moments)?;
    w.json(passed, &json!({ "moments": rep, "z_score": z, "series": series }))?;
    let rows: Vec<Vec<f64>> = (0..r.order)
        .map(|k| {
            let (mc, se) = rep.order_variances[k];
            let alpha = series.as_ref().map_or(0.0, |s| s.values[k].value);
            vec![(k + 1) as f64, rep.tensor_variances[k], mc, se, alpha]
        })
        .collect();
    w.csv(&["n", "discrete_variance", "mc_variance", "mc_std_error", "alpha_n"], &rows)?;
    let summary = format!(
        "E u^2: MC {:.6} ± {:.1e}, discrete {:.6}, continuum {:.6} (|z| = {z:.2})",
        rep.mean_square, rep.std_error, rep.discrete_exact, rep.continuum
    );
    Ok(w.finish(passed, summary))
}

#[derive(Debug, Serialize)]
struct NoiseCheckReport {
    nsamples: usize,
    cells: usize,
    psd_slack: f64,
    time_factor_triangular: bool,
    space_factor_triangular: bool,
    entries: usize,
    max_abs_z: f64,
    fraction_beyond_3se: f64,
}

/// Largest admissible share of covariance entries beyond 3 standard errors.
pub const NOISE_OUTLIER_FRACTION: f64 = 0.01;

pub fn cmd_noise_check(cfg: &RunConfig) -> Result<RunOutcome> {
    let r = &cfg.run;
    if r.samples < 2 {
        return Err(Error::InvalidParameter("noise-check needs at least 2 samples".into()));
    }
    let grid = cfg.grid_spec()?;
    let cov = noise::factorize(noise::CellCovariance::assemble(&cfg.model()?, &grid))?;
    let samples = noise::sample(&grid, &cov, r.seed, r.samples)?;
    let cells = grid.cells();
    let flat: Vec<Vec<f64>> = samples.iter().map(|s| (0..cells).map(|c| s.increments[(c / grid.nx, c % grid.nx)]).collect()).collect();
    let n = r.samples as f64;
    let mut rows = Vec::with_capacity(cells * (cells + 1) / 2);
    for p in 0..cells {
        for q in p..cells {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in &flat {
                let x = v[p] * v[q];
                s1 += x;
                s2 += x * x;
            }
            let mean = s1 / n;
            let se = ((s2 / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt();
            let exact = cov.entry(p / grid.nx, p % grid.nx, q / grid.nx, q % grid.nx);
            let z = if se > 0.0 { (mean - exact) / se } else { 0.0 };
            rows.push(vec![p as f64, q as f64, exact, mean, se, z]);
        }
    }
    let max_abs_z = rows.iter().map(|r| r[5].abs()).fold(0.0, f64::max);
    let beyond = rows.iter().filter(|r| r[5].abs() > 3.0).count() as f64 / rows.len() as f64;
    let (lt, ls) = cov.factors()?;
    let report = NoiseCheckReport {
        nsamples: r.samples,
        cells,
        psd_slack: cov.psd_slack(),
        time_factor_triangular: lt.triangular,
        space_factor_triangular: ls.triangular,
        entries: rows.len(),
        max_abs_z,
        fraction_beyond_3se: beyond,
    };
    let passed = beyond <= NOISE_OUTLIER_FRACTION;
    let mut w = Writer::new(cfg, Command::NoiseCheck)?;
    w.json(passed, &report)?;
    w.csv(&["p", "q", "exact", "empirical", "std_error", "z"], &rows)?;
    let bin = w.path("bin");
    noise::write_samples(std::io::BufWriter::new(std::fs::File::create(&bin)?), &grid, &samples)?;
    w.written.push(bin);
    let summary = format!("{} entries, max |z| {max_abs_z:.2}, {:.3}% beyond 3 SE", rows.len(), 100.0 * beyond);
    Ok(w.finish(passed, summary))
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    let r = &cfg.run;
    if r.samples == 0 {
        return Ok(RunOutcome { passed: true, summary: "count = 0: nothing to simulate".into(), artifacts: Vec::new() });
    }
    let sg = solver_grid(cfg)?;
    let coeffs = sg.project_kernels(r.t, r.x, r.order)?;
    let samples = solver::sample_many(&coeffs, r.seed, r.samples);
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.value).sum::<f64>() / n;
    let mean_square = samples.iter().map(|s| s.value * s.value).sum::<f64>() / n;
    let mut w = Writer::new(cfg, Command::Simulate)?;
    w.json(
        true,
        &json!({
            "nsamples": samples.len(),
            "cells": coeffs.m,
            "mean": mean,
            "mean_square": mean_square,
            "discrete_second_moment": coeffs.second_moment(),
            "discrete_variances": (1..=r.order).map(|k| coeffs.variance(k)).collect::<Vec<_>>(),
        }),
    )?;
    let mut header = vec!["index".to_string(), "u".to_string()];
    header.extend((1..=r.order).map(|k| format!("i{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let mut row = vec![s.index as f64, s.value];
            row.extend(&s.contributions);
            row
        })
        .collect();
    w.csv(&header, &rows)?;
    // the noise increments driving the same samples
    let noise = noise::sample(&sg.grid, &sg.cov, r.seed, r.samples)?;
    let bin = w.path("bin");
    noise::write_samples(std::io::BufWriter::new(std::fs::File::create(&bin)?), &sg.grid, &noise)?;
    w.written.push(bin);
    Ok(w.finish(true, format!("{} samples, mean {mean:.6}, E u^2 {mean_square:.6}", samples.len())))
}

pub fn cmd_density(cfg: &RunConfig) -> Result<RunOutcome> {
    let r = &cfg.run;
    let sg = solver_grid(cfg)?;
    let coeffs = sg.project_kernels(r.t, r.x, r.order)?;
    let values: Vec<f64> = solver::sample_many(&coeffs, r.seed, r.samples).iter().map(|s| s.value).collect();
    let exact = (r.order == 1).then(|| (1.0, coeffs.variance(1)));
    let m_max = r.m_ladder.iter().copied().max().unwrap_or(10);
    let rep = solver::density_report(&values, r.bandwidth, m_max, exact)?;
    let ks_ok = rep.ks.as_ref().is_none_or(|k| k.passes);
    let passed = ks_ok && !rep.atom_flagged;
    let mut w = Writer::new(cfg, Command::Density)?;
    w.json(passed, &rep)?;
    let rows: Vec<Vec<f64>> = rep.kde.iter().map(|&(x, d)| vec![x, d]).collect();
    w.csv(&["x", "density"], &rows)?;
    let mut summary = format!("max atom mass {:.2e} at {:.4}", rep.atom_max_mass, rep.atom_location);
    if let Some(k) = &rep.ks {
        let _ = write!(summary, ", KS {:.4} (critical {:.4})", k.statistic, k.critical);
    }
    Ok(w.finish(passed, summary))
}

pub fn cmd_delta_scan(cfg: &RunConfig) -> Result<RunOutcome> {
    let r = &cfg.run;
    let sg = solver_grid(cfg)?;
    let constants = SixConstants::from_model(&sg.model, r.t)?;
    let reports = r
        .m_ladder
        .iter()
        .map(|&m| solver::delta_scan(&sg, r.t, r.x, m, &r.deltas, r.order, r.samples, r.seed, constants))
        .collect::<Result<Vec<_>>>()?;
    let passed = reports.iter().all(|s| s.strictly_decreasing && s.p_hat == 0.0);
    let rows: Vec<Vec<f64>> = reports
        .iter()
        .flat_map(|s| s.rows.iter().map(move |row| vec![s.m as f64, row.delta, row.big_gamma_delta, row.g, row.g_std_error, row.g_exact, row.rhs]))
        .collect();
    let mut w = Writer::new(cfg, Command::DeltaScan)?;
    w.json(passed, &reports)?;
    w.csv(&["m", "delta", "big_gamma_delta", "g", "g_std_error", "g_exact", "rhs"], &rows)?;
    let summary = reports
        .iter()
        .map(|s| format!("m={}: P_hat {} on P(Omega) {:.3}, RHS strictly decreasing: {}", s.m, s.p_hat, s.omega_mass, s.strictly_decreasing))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(w.finish(passed, summary))
}

pub fn cmd_constants(cfg: &RunConfig) -> Result<RunOutcome> {
    let model = cfg.model()?;
    let t_h = cfg.grid.t_horizon;
    let table = kernels::constants_table(&model, t_h, Some(kernels::c_t_star(&model, t_h)?))?;
    let bounds = kernels::d2_norm_constant(&model, t_h, &[], &[])?;
    let passed = bounds.first.orders.iter().all(|o| o.holds) && bounds.second.as_ref().is_none_or(|s| s.checks.iter().all(|c| c.holds));
    let mut w = Writer::new(cfg, Command::Constants)?;
    w.json(passed, &json!({ "table": table, "bounds": bounds }))?;
    let rows: Vec<Vec<f64>> = table.k_m.iter().map(|&(m, k)| vec![m, k]).collect();
    w.csv(&["M", "K_M"], &rows)?;
    let summary = format!(
        "Gamma_T {:.4}, c0 {:.4}, M_T {}, C_T {:.3e}, C_T'' {:.3e}",
        table.big_gamma_t, table.c0, table.m_t, table.c_t, table.c_t_dprime
    );
    Ok(w.finish(passed, summary))
}

/// Every artifact name for `command` under `cfg`.
pub fn artifact_stem(cfg: &RunConfig, command: Command) -> String {
    format!("{}-{}", command.name(), cfg.hash())
}

/// Returns `dir` joined with the artifact name.
pub fn artifact_path(dir: &Path, cfg: &RunConfig, command: Command, ext: &str) -> PathBuf {
    dir.join(format!("{}.{ext}", artifact_stem(cfg, command)))
}
