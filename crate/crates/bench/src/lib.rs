//! Commands behind the `symphmc` binary.
//!
//! Every command writes its report to a caller-supplied writer so the same
//! code serves the binary and the integration tests. Sweeps emit CSV with a
//! fixed header; floats use 17 significant digits so rows round-trip.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use symphmc::catalog::{NamedIntegrator, INTEGRATOR_NAMES, TABLE2};
use symphmc::fourth_order::{fine_reference, order_estimate, OrderReport, RowlandsScheme};
use symphmc::harmonic::{rho_norm, rho_scan, stability_length};
use symphmc::hmc::{efficiency_curve, EfficiencyCurve, HmcConfig, LegMode};
use symphmc::targets::{anharmonic_model, gaussian_model};
use symphmc::tuner::{tune, TuneResult};
use symphmc::{PhaseState, ProcessedIntegrator};

pub const CSV_HEADER: [&str; 10] = [
    "integrator",
    "d",
    "h",
    "N",
    "grad_per_leg",
    "accepted",
    "proposed",
    "acceptance_pct",
    "accept_per_grad",
    "seed",
];

pub const DEFAULT_LEG_TIME: f64 = 5.0;
pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_SEED: u64 = 20_240_501;
pub const DEFAULT_GRID_POINTS: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] symphmc::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config {path}: {source}")]
    Config {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("writing output: {0}")]
    Output(#[from] csv::Error),
    #[error("writing output: {0}")]
    Write(#[from] io::Error),
}

impl CliError {
    /// 2 for malformed requests, 1 for everything that failed at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Core(symphmc::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NameList {
    One(String),
    Many(Vec<String>),
}

impl NameList {
    fn names(&self) -> Vec<String> {
        match self {
            NameList::One(s) => split_list(s),
            NameList::Many(v) => v.iter().map(|s| s.trim().to_string()).collect(),
        }
    }
}

/// Experiment parameters from a JSON file and/or flags. Every field is
/// optional; [`ExperimentConfig::overridden_by`] layers flags over the file.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub integrator: Option<NameList>,
    pub dim: Option<usize>,
    pub h: Option<Vec<f64>>,
    /// `lo:hi:n`, geometric.
    pub h_grid: Option<String>,
    pub leg_time: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub full: Option<bool>,
    pub direct: Option<bool>,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Fields set in `flags` win.
    pub fn overridden_by(self, flags: ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            integrator: flags.integrator.or(self.integrator),
            dim: flags.dim.or(self.dim),
            h: flags.h.or(self.h),
            h_grid: flags.h_grid.or(self.h_grid),
            leg_time: flags.leg_time.or(self.leg_time),
            samples: flags.samples.or(self.samples),
            seed: flags.seed.or(self.seed),
            out: flags.out.or(self.out),
            full: flags.full.or(self.full),
            direct: flags.direct.or(self.direct),
        }
    }

    pub fn integrators(&self, default: &[&str]) -> Vec<String> {
        match &self.integrator {
            Some(list) => list.names(),
            None => default.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim.unwrap_or(DEFAULT_DIM)
    }

    pub fn leg_time(&self) -> f64 {
        self.leg_time.unwrap_or(DEFAULT_LEG_TIME)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Explicit `samples`, else 5,000 up to `d = 1024` and 1,000 above
    /// unless `full` is set.
    pub fn samples(&self) -> usize {
        self.samples
            .unwrap_or_else(|| default_samples(self.dim(), self.full.unwrap_or(false)))
    }

    /// Explicit `h` list, else the `h_grid`, else `None` (per-integrator
    /// default grid).
    pub fn explicit_h(&self) -> CliResult<Option<Vec<f64>>> {
        if let Some(h) = &self.h {
            return Ok(Some(h.clone()));
        }
        self.h_grid.as_deref().map(parse_h_grid).transpose()
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(String::from)
        .collect()
}

pub fn parse_f64_list(s: &str) -> CliResult<Vec<f64>> {
    split_list(s)
        .iter()
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("not a number: '{x}'")))
        })
        .collect()
}

/// `lo:hi:n` with `0 < lo <= hi`, `n >= 1`, geometric spacing.
pub fn parse_h_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("--h-grid expects lo:hi:n, got '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 {
        return Err(bad());
    }
    Ok(geometric_grid(lo, hi, n))
}

pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let ratio = hi / lo;
    (0..n)
        .map(|k| lo * ratio.powf(k as f64 / (n - 1) as f64))
        .collect()
}

/// 12 geometric points from `0.3 h_s/d` to `0.98 h_s/d`.
pub fn default_h_grid(h_s: f64, d: usize) -> Vec<f64> {
    let unit = h_s / d as f64;
    geometric_grid(0.3 * unit, 0.98 * unit, DEFAULT_GRID_POINTS)
}

pub fn default_samples(d: usize, full: bool) -> usize {
    if full || d <= 1024 {
        5_000
    } else {
        1_000
    }
}

pub fn resolve(name: &str) -> CliResult<NamedIntegrator> {
    NamedIntegrator::by_name(name).map_err(|e| CliError::Usage(e.to_string()))
}

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// One sweep: the integrator, its step-size list and the resulting curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub integrator: String,
    pub d: usize,
    pub curve: EfficiencyCurve,
}

/// Runs one efficiency curve per integrator on the Gaussian model and writes
/// all rows, in input order, as CSV to `out`. The best row of every curve is
/// reported on `log`.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> CliResult<Vec<SweepResult>> {
    let d = cfg.dim();
    let target = gaussian_model(d).map_err(|e| CliError::Usage(e.to_string()))?;
    let explicit = cfg.explicit_h()?;
    if let Some(hs) = &explicit {
        if let Some(bad) = hs.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(CliError::Usage(format!(
                "step sizes must be positive, got {bad}"
            )));
        }
    }
    let mode = if cfg.direct.unwrap_or(false) {
        LegMode::Direct
    } else {
        LegMode::Linear
    };
    let base = HmcConfig::new(1.0, cfg.leg_time(), cfg.samples(), cfg.seed()).with_leg_mode(mode);

    let names = cfg.integrators(&["leapfrog", "blcasa", "proc-4.5"]);
    let integrators = names
        .iter()
        .map(|n| resolve(n))
        .collect::<CliResult<Vec<_>>>()?;

    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(CSV_HEADER)?;
    let mut results = Vec::with_capacity(names.len());
    for (name, integ) in names.iter().zip(&integrators) {
        let hs = match &explicit {
            Some(h) => h.clone(),
            None => default_h_grid(integ.stability_length(), d),
        };
        let curve = efficiency_curve(&target, integ.as_leg(), &hs, &base)?;
        for p in &curve.points {
            csv.write_record([
                name.clone(),
                d.to_string(),
                sci(p.h),
                p.n_steps.to_string(),
                sci(p.grad_per_leg),
                p.accepted.to_string(),
                p.proposed.to_string(),
                sci(p.acceptance_pct),
                sci(p.accept_per_grad),
                p.seed.to_string(),
            ])?;
        }
        if let Some(b) = curve.best {
            let p = &curve.points[b];
            writeln!(
                log,
                "best {name} d={d}: h={:.4e} N={} acceptance={:.1}% accept_per_grad={:.4e}",
                p.h, p.n_steps, p.acceptance_pct, p.accept_per_grad
            )?;
        }
        results.push(SweepResult {
            integrator: name.clone(),
            d,
            curve,
        });
    }
    csv.flush()?;
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Line {
    pub name: &'static str,
    pub hbar: f64,
    pub rho_norm: f64,
    pub rho_printed: f64,
    pub stability: f64,
    pub stability_printed: f64,
    pub rho_pass: bool,
    pub stability_pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Report {
    pub lines: Vec<Table2Line>,
    pub verlet_stability: f64,
    pub verlet_pass: bool,
}

impl Table2Report {
    pub fn pass(&self) -> bool {
        self.verlet_pass && self.lines.iter().all(|l| l.rho_pass && l.stability_pass)
    }
}

pub const RHO_LOWER_FACTOR: f64 = 10.0;
pub const STABILITY_TOL: f64 = 0.005;

/// Recomputes `‖ρ‖_hbar` and `h_s` for every table row and checks them
/// against the printed values: `printed/10 <= ‖ρ‖ <= printed` and
/// `|h_s - printed| <= 0.005`.
pub fn cmd_table2(out: &mut dyn Write) -> CliResult<Table2Report> {
    let mut lines = Vec::with_capacity(TABLE2.len());
    writeln!(
        out,
        "{:<10} {:>5} {:>12} {:>8} {:>6} {:>8} {:>8} {:>6}",
        "row", "hbar", "rho", "printed", "", "h_s", "printed", ""
    )?;
    for row in &TABLE2 {
        let integ = row.integrator();
        let r = rho_norm(&integ, row.hbar);
        let hs = stability_length(integ.kernel());
        let line = Table2Line {
            name: row.name,
            hbar: row.hbar,
            rho_norm: r,
            rho_printed: row.rho_bound,
            stability: hs,
            stability_printed: row.stability,
            rho_pass: r <= row.rho_bound && r >= row.rho_bound / RHO_LOWER_FACTOR,
            stability_pass: (hs - row.stability).abs() <= STABILITY_TOL,
        };
        writeln!(
            out,
            "{:<10} {:>5.1} {:>12.4e} {:>8.0e} {:>6} {:>8.4} {:>8.3} {:>6}",
            line.name,
            line.hbar,
            line.rho_norm,
            line.rho_printed,
            verdict(line.rho_pass),
            line.stability,
            line.stability_printed,
            verdict(line.stability_pass)
        )?;
        lines.push(line);
    }
    let verlet_stability = stability_length(ProcessedIntegrator::leapfrog().kernel());
    let verlet_pass = (verlet_stability - 2.0).abs() <= 1e-6;
    writeln!(
        out,
        "leapfrog h_s = {verlet_stability:.7} {}",
        verdict(verlet_pass)
    )?;

    let row2 = TABLE2[1];
    let off_budget = rho_norm(&row2.integrator(), 4.5);
    writeln!(
        out,
        "diagnostic: {} evaluated at hbar = 4.5 gives {off_budget:.4e} (tuned for hbar = {})",
        row2.name, row2.hbar
    )?;
    Ok(Table2Report {
        lines,
        verlet_stability,
        verlet_pass,
    })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn parse_init(s: &str) -> CliResult<[f64; 3]> {
    let v = parse_f64_list(s)?;
    <[f64; 3]>::try_from(v.as_slice())
        .map_err(|_| CliError::Usage(format!("--init expects b,c,d, got '{s}'")))
}

pub fn cmd_tune(hbar: f64, init: [f64; 3], out: &mut dyn Write) -> CliResult<TuneResult> {
    let r = tune(hbar, init)?;
    writeln!(out, "hbar        {hbar}")?;
    writeln!(out, "init        b={} c={} d={}", init[0], init[1], init[2])?;
    writeln!(out, "b           {:.6}", r.b)?;
    writeln!(out, "c           {:.6}", r.c)?;
    writeln!(out, "d           {:.6}", r.d)?;
    writeln!(out, "rho_norm    {:.6e}", r.rho_norm)?;
    writeln!(out, "endpoint    {:.6e}", r.endpoint)?;
    writeln!(out, "interior    {:.6e}", r.interior_max)?;
    writeln!(out, "evaluations {}", r.evaluations)?;
    Ok(r)
}

pub fn cmd_stability(names: &[String], out: &mut dyn Write) -> CliResult<Vec<(String, f64)>> {
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let hs = resolve(name)?.stability_length();
        writeln!(out, "{name:<10} h_s = {hs:.6}")?;
        rows.push((name.clone(), hs));
    }
    Ok(rows)
}

/// `(h, ρ_h)` CSV over `(0, hmax]` for one processed integrator.
pub fn cmd_rho_scan(
    name: &str,
    hmax: Option<f64>,
    points: usize,
    out: &mut dyn Write,
) -> CliResult<Vec<(f64, f64)>> {
    let integ = match resolve(name)? {
        NamedIntegrator::Processed(p) => p,
        NamedIntegrator::Rowlands(_) => {
            return Err(CliError::Usage(
                "rho-scan needs a splitting integrator; rowlands has a modified kernel".into(),
            ))
        }
    };
    let hmax = hmax.unwrap_or_else(|| stability_length(integ.kernel()));
    if !(hmax.is_finite() && hmax > 0.0) || points == 0 {
        return Err(CliError::Usage(
            "rho-scan needs hmax > 0 and at least one point".into(),
        ));
    }
    let scan = rho_scan(&integ, hmax, points);
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(["h", "rho"])?;
    for &(h, r) in &scan {
        csv.write_record([sci(h), sci(r)])?;
    }
    csv.flush()?;
    Ok(scan)
}

pub const ORDER_RANGE_PROCESSED: (f64, f64) = (3.5, 4.5);
pub const ORDER_RANGE_KERNEL: (f64, f64) = (1.7, 2.3);

#[derive(Debug, Clone, PartialEq)]
pub struct OrderCheck {
    pub processed: OrderReport,
    pub kernel: OrderReport,
    pub leapfrog: OrderReport,
}

impl OrderCheck {
    pub fn pass(&self) -> bool {
        let within =
            |r: &OrderReport, (lo, hi): (f64, f64)| r.orders.iter().all(|o| (lo..=hi).contains(o));
        within(&self.processed, ORDER_RANGE_PROCESSED) && within(&self.kernel, ORDER_RANGE_KERNEL)
    }
}

/// Observed orders on the 1-D anharmonic model, `(q, p) = (1, 0)`, `T = 2`,
/// `h = 0.2, 0.1, 0.05, 0.025`, against a processed run at `h0/64`.
pub fn cmd_rowlands_order(out: &mut dyn Write) -> CliResult<OrderCheck> {
    let (t_end, h0, levels) = (2.0, 0.2, 4);
    let model = anharmonic_model(1)?;
    let s0 = PhaseState::new(vec![1.0], vec![0.0])?;
    let reference = fine_reference(&model, &s0, t_end, h0)?;
    let scheme = RowlandsScheme::new();
    let check = OrderCheck {
        processed: order_estimate(&model, &scheme, &s0, t_end, h0, levels, &reference)?,
        kernel: order_estimate(
            &model,
            &scheme.unprocessed(),
            &s0,
            t_end,
            h0,
            levels,
            &reference,
        )?,
        leapfrog: order_estimate(
            &model,
            &ProcessedIntegrator::leapfrog(),
            &s0,
            t_end,
            h0,
            levels,
            &reference,
        )?,
    };
    for (label, r) in [
        ("rowlands", &check.processed),
        ("rowlands-kernel", &check.kernel),
        ("leapfrog", &check.leapfrog),
    ] {
        let orders: Vec<String> = r.orders.iter().map(|o| format!("{o:.3}")).collect();
        writeln!(out, "{label:<16} orders {}", orders.join(" "))?;
    }
    writeln!(out, "{}", verdict(check.pass()))?;
    Ok(check)
}

pub fn all_integrator_names() -> Vec<String> {
    INTEGRATOR_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Opens `path` for writing, or stdout when `None`.
pub fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) => {
            let f = fs::File::create(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            Ok(Box::new(io::BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}
