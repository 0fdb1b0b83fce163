//! Command-line front end: `spdc <subcommand> [options]`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! non-convergence (including a failed Monte Carlo agreement check).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::emission::{detected_pair_rate_with, RateOptions};
use crate::error::Error;
use crate::fit::fit_erf_points;
use crate::io::{read_manifest, read_scenario, write_scenario, FORMAT_VERSION};
use crate::model::{
    omega_to_wavelength, BlockedSide, DetectionConfig, KnifeState, Scenario, SpectralWindow,
    BROADBAND_WINDOW,
};
use crate::observables::{
    farfield_map, knife_scan, moving_average, scaling_sweep, spectrum_with, SweepMember,
    SweepOptions, DEFAULT_MAP_RESOLUTION,
};
use crate::overlap::{xi_table_with, OverlapTable, TableOptions};
use crate::quadrature::{linspace, QuadratureOrder};
use crate::testbed::{default_sweep_scales, monte_carlo_rate, preset, sweep_family, PRESETS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

/// Default number of signal-frequency samples.
pub const DEFAULT_OMEGA_POINTS: usize = 401;
/// Default knife scan in the mapped plane: start, stop (mm) and count.
pub const DEFAULT_KNIFE_SCAN: (f64, f64, usize) = (-2.5, 2.5, 41);
/// Magnification used by `spectrum` when the config does not set detection.
pub const SPECTRUM_MAGNIFICATION: f64 = 2.0;

#[derive(Parser, Debug)]
#[command(
    name = "spdc",
    version,
    about = "Photon-pair rates from quasi-normal-mode data"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalOpts {
    /// JSON run configuration (detection setup, frequency grid, ...).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Angular quadrature order per cone, e.g. 32x64.
    #[arg(long, global = true)]
    quadrature: Option<QuadratureOrder>,
    /// Worker threads for the compute kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Side {
    Above,
    Below,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Summarize a dataset: modes, eigenfrequencies, Q factors.
    Inspect { scenario: PathBuf },
    /// Modal overlap coefficient curves over the signal band.
    Xi {
        scenario: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Total detected pair rate with per-pair breakdown.
    Rate { scenario: PathBuf },
    /// Detected rate per unit signal frequency.
    Spectrum {
        scenario: PathBuf,
        /// Filter window, e.g. 1425:1475nm, or "none".
        #[arg(long)]
        filter: Option<String>,
        /// Add a moving-average column with this window (points).
        #[arg(long)]
        smooth: Option<usize>,
    },
    /// Signal-direction coincidence map.
    Farfield {
        scenario: PathBuf,
        /// Map nodes as NTHETAxNPHI over [0, pi] x [0, 2 pi).
        #[arg(long)]
        resolution: Option<String>,
    },
    /// Detected rate versus knife-edge position.
    Knife {
        scenario: PathBuf,
        /// Positions in the mapped plane as START:STOP:COUNT in mm.
        #[arg(long, allow_hyphen_values = true)]
        positions: Option<String>,
        #[arg(long, value_enum)]
        blocks: Option<Side>,
        /// Also fit the erf edge model.
        #[arg(long)]
        fit: bool,
    },
    /// Fit the erf edge model to a knife scan CSV (position, rate).
    FitErf { scan: PathBuf },
    /// Rate across a geometry-scaling family.
    Sweep {
        family: PathBuf,
        /// Sum all mode pairs instead of only the (1, 1) pair.
        #[arg(long)]
        full_sum: bool,
        #[arg(long)]
        smooth: Option<usize>,
    },
    /// Write a synthetic scenario (or the sweep family) to --out.
    GenTestbed {
        #[arg(long)]
        preset: String,
    },
    /// Compare the quadrature rate with a Monte Carlo estimate.
    McCheck {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Inspect { .. } => "inspect",
            Command::Xi { .. } => "xi",
            Command::Rate { .. } => "rate",
            Command::Spectrum { .. } => "spectrum",
            Command::Farfield { .. } => "farfield",
            Command::Knife { .. } => "knife",
            Command::FitErf { .. } => "fit-erf",
            Command::Sweep { .. } => "sweep",
            Command::GenTestbed { .. } => "gen-testbed",
            Command::McCheck { .. } => "mc-check",
        }
    }
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub detection: Option<DetectionConfig>,
    /// Signal integration band in nm; defaults to the filter's pair band,
    /// or the broadband window without a filter.
    pub signal_window_nm: Option<[f64; 2]>,
    pub omega_points: Option<usize>,
    pub top_k: Option<usize>,
    pub tolerance: Option<f64>,
    pub knife_positions_mm: Option<Vec<f64>>,
    pub map_resolution: Option<[usize; 2]>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
    /// Output was produced but a numerical check failed.
    Numeric(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Effective settings shared by the compute subcommands.
#[derive(Clone, Debug, Serialize)]
struct Settings {
    detection: DetectionConfig,
    omega_window: Option<[f64; 2]>,
    omega_points: usize,
    quadrature: QuadratureOrder,
    tolerance: f64,
    top_k: usize,
    seed: u64,
    threads: Option<usize>,
}

impl Settings {
    fn rate_options(&self) -> RateOptions {
        RateOptions {
            order: self.quadrature,
            tolerance: self.tolerance,
        }
    }

    fn table_options(&self) -> TableOptions {
        TableOptions {
            top_k: self.top_k,
            ..TableOptions::default()
        }
    }

    /// Uniform signal-frequency grid for `scenario`.
    fn omega_grid(&self, scenario: &Scenario) -> CliResult<Vec<f64>> {
        let [a, b] = match self.omega_window {
            Some(w) => w,
            None => {
                let band = self
                    .detection
                    .filter
                    .unwrap_or(SpectralWindow::from_wavelengths(
                        BROADBAND_WINDOW.0,
                        BROADBAND_WINDOW.1,
                    ));
                let pair = band.pair_window(scenario.pump_omega).ok_or_else(|| {
                    Error::domain(
                        "filter window holds no signal frequency whose idler partner also passes",
                    )
                })?;
                [pair.omega_min, pair.omega_max]
            }
        };
        Ok(linspace(a, b, self.omega_points))
    }
}

struct Run {
    global: GlobalOpts,
    config: RunConfig,
    argv: Vec<String>,
    inputs: Vec<PathBuf>,
    summary: Value,
}

impl Run {
    fn settings(&self, command: &str) -> CliResult<Settings> {
        let c = &self.config;
        let detection = match c.detection {
            Some(d) => d,
            None if command == "spectrum" => DetectionConfig {
                magnification: SPECTRUM_MAGNIFICATION,
                ..DetectionConfig::default()
            },
            None => DetectionConfig::default(),
        };
        detection.validate()?;
        let omega_window = match c.signal_window_nm {
            Some([a, b]) => {
                let w = SpectralWindow::from_wavelengths(a * 1e-9, b * 1e-9);
                Some([w.omega_min, w.omega_max])
            }
            None => None,
        };
        let omega_points = c.omega_points.unwrap_or(DEFAULT_OMEGA_POINTS);
        if omega_points < 3 {
            return Err(usage("omega_points must be at least 3"));
        }
        Ok(Settings {
            detection,
            omega_window,
            omega_points,
            quadrature: self.global.quadrature.unwrap_or_default(),
            tolerance: c.tolerance.unwrap_or(RateOptions::default().tolerance),
            top_k: c.top_k.unwrap_or(TableOptions::default().top_k),
            seed: self.global.seed.unwrap_or(1),
            threads: self.global.threads,
        })
    }

    fn load(&mut self, path: &Path) -> CliResult<Scenario> {
        self.record_dataset(path)?;
        Ok(read_scenario(path)?)
    }

    /// Register a manifest and every blob it references as inputs.
    fn record_dataset(&mut self, path: &Path) -> CliResult<()> {
        let manifest = read_manifest(path)?;
        self.inputs.push(path.to_path_buf());
        let dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut blobs: Vec<&String> = Vec::new();
        blobs.extend(manifest.pump_field.blob.as_ref());
        for m in &manifest.modes {
            blobs.extend(m.near_field.blob.as_ref());
            blobs.extend(m.far_field.amp_theta.blob.as_ref());
            blobs.extend(m.far_field.amp_phi.blob.as_ref());
        }
        blobs.extend(manifest.chi2.mask.blob.as_ref());
        self.inputs.extend(blobs.into_iter().map(|b| dir.join(b)));
        Ok(())
    }

    fn emit(&self, text: &str) -> CliResult<()> {
        match &self.global.out {
            Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e))?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e))?;
            }
        }
        Ok(())
    }

    fn run_record(&self, command: &str, settings: Option<&Settings>, exit_code: i32) -> Value {
        let mut combined = Sha256::new();
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|p| {
                let digest = fs::read(p)
                    .map(|b| hex::encode(Sha256::digest(&b)))
                    .unwrap_or_default();
                combined.update(digest.as_bytes());
                json!({ "path": p.display().to_string(), "sha256": digest })
            })
            .collect();
        json!({
            "tool": "spdc",
            "version": env!("CARGO_PKG_VERSION"),
            "dataset_format_version": FORMAT_VERSION,
            "command": command,
            "argv": self.argv,
            "inputs": inputs,
            "inputs_sha256": hex::encode(combined.finalize()),
            "config": self.config,
            "settings": settings,
            "format": self.global.format,
            "summary": self.summary,
            "exit_code": exit_code,
        })
    }

    fn write_run_record(&self, command: &str, settings: Option<&Settings>, exit_code: i32) {
        let record = self.run_record(command, settings, exit_code);
        match &self.global.out {
            Some(p) => {
                let mut name = p.as_os_str().to_owned();
                name.push(".run.json");
                let text = serde_json::to_string_pretty(&record).unwrap_or_default() + "\n";
                if let Err(e) = fs::write(PathBuf::from(&name), text) {
                    eprintln!("warning: could not write run record: {e}");
                }
            }
            None => eprintln!("{}", serde_json::to_string(&record).unwrap_or_default()),
        }
    }
}

/// Shortest round-trip formatting; exponent form for very large or small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn json_text(v: &impl Serialize) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::domain(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn parse_filter(spec: &str) -> CliResult<Option<SpectralWindow>> {
    if spec.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let body = spec.strip_suffix("nm").ok_or_else(|| {
        usage(format!(
            "filter {spec:?} needs an explicit unit suffix, e.g. 1425:1475nm"
        ))
    })?;
    let (a, b) = body
        .split_once(':')
        .ok_or_else(|| usage(format!("filter {spec:?} is not of the form A:Bnm")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| *x > 0.0 && x.is_finite())
            .ok_or_else(|| usage(format!("invalid filter wavelength {v:?}")))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a == b {
        return Err(usage("filter window has zero width"));
    }
    Ok(Some(SpectralWindow::from_wavelengths(a * 1e-9, b * 1e-9)))
}

fn parse_positions(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || {
        usage(format!(
            "positions {spec:?} are not of the form START:STOP:COUNT (mm)"
        ))
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n < 2 || !(b > a) {
        return Err(bad());
    }
    Ok(linspace(a * 1e-3, b * 1e-3, n))
}

fn parse_resolution(spec: &str) -> CliResult<(usize, usize)> {
    let o: QuadratureOrder = spec.parse().map_err(usage)?;
    Ok((o.n_theta, o.n_phi))
}

fn table(scenario: &Scenario, grid: &[f64], s: &Settings) -> CliResult<OverlapTable> {
    Ok(xi_table_with(scenario, grid, &s.table_options())?)
}

fn cmd_inspect(run: &mut Run, path: &Path) -> CliResult<String> {
    let s = run.load(path)?;
    let modes: Vec<Value> = s
        .modes
        .iter()
        .map(|m| {
            let ef = m.eigenfrequency;
            json!({
                "label": m.label,
                "omega": ef.omega,
                "gamma": ef.gamma,
                "q_factor": ef.q_factor().ok(),
                "wavelength_nm": omega_to_wavelength(ef.omega) * 1e9,
            })
        })
        .collect();
    run.summary = json!({ "modes": s.modes.len() });
    match run.global.format {
        Format::Json => json_text(&json!({
            "pump_omega": s.pump_omega,
            "pump_wavelength_nm": omega_to_wavelength(s.pump_omega) * 1e9,
            "pump_intensity": s.pump_intensity,
            "n_idler": s.n_idler,
            "n_signal": s.n_signal,
            "volume": s.volume,
            "grid": s.pump_field.geometry,
            "chi2_active_nodes": s.chi2.active_nodes(),
            "chi2_regions": s.chi2.regions.len(),
            "modes": modes,
        })),
        Format::Csv => {
            let mut out = String::from("label,omega,gamma,q_factor,wavelength_nm\n");
            for m in &s.modes {
                let ef = m.eigenfrequency;
                let q = ef.q_factor()?;
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    csv_field(&m.label),
                    fmt_f64(ef.omega),
                    fmt_f64(ef.gamma),
                    fmt_f64(q),
                    fmt_f64(omega_to_wavelength(ef.omega) * 1e9)
                )
                .unwrap();
            }
            Ok(out)
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_xi(
    run: &mut Run,
    path: &Path,
    top_k: Option<usize>,
    settings: &mut Settings,
) -> CliResult<String> {
    let s = run.load(path)?;
    if let Some(k) = top_k {
        settings.top_k = k;
    }
    let grid = settings.omega_grid(&s)?;
    let t = table(&s, &grid, settings)?;
    run.summary = json!({
        "curves": t.curves.iter().map(|c| json!({"label_m": c.label_m, "label_n": c.label_n, "peak": c.peak})).collect::<Vec<_>>(),
        "active_pairs": t.active.len(),
    });
    match run.global.format {
        Format::Json => json_text(&json!({
            "omega_s": t.omega_s,
            "curves": t.curves.iter().map(|c| json!({
                "label_m": c.label_m,
                "label_n": c.label_n,
                "peak": c.peak,
                "re": c.values.iter().map(|z| z.re).collect::<Vec<_>>(),
                "im": c.values.iter().map(|z| z.im).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })),
        Format::Csv => {
            let mut out =
                String::from("label_m,label_n,omega_s,wavelength_nm,xi_re,xi_im,xi_abs\n");
            for c in &t.curves {
                for (w, z) in t.omega_s.iter().zip(&c.values) {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        csv_field(&c.label_m),
                        csv_field(&c.label_n),
                        fmt_f64(*w),
                        fmt_f64(omega_to_wavelength(*w) * 1e9),
                        fmt_f64(z.re),
                        fmt_f64(z.im),
                        fmt_f64(z.norm())
                    )
                    .unwrap();
                }
            }
            Ok(out)
        }
    }
}

fn cmd_rate(run: &mut Run, path: &Path, settings: &Settings) -> CliResult<String> {
    let s = run.load(path)?;
    let grid = settings.omega_grid(&s)?;
    let t = table(&s, &grid, settings)?;
    let r = detected_pair_rate_with(&s, &settings.detection, &grid, &t, &settings.rate_options())?;
    run.summary = json!({ "rate": r.rate, "quadrature": r.quadrature });
    let text = match run.global.format {
        Format::Json => json_text(&r)?,
        Format::Csv => {
            let q = &r.quadrature;
            let mut out = String::from("key,value\n");
            let rows: [(&str, String); 8] = [
                ("rate", fmt_f64(r.rate)),
                ("error_estimate", fmt_f64(q.error_estimate)),
                ("converged", q.converged.to_string()),
                ("n_theta", q.n_theta.to_string()),
                ("n_phi", q.n_phi.to_string()),
                ("angular_nodes", q.angular_nodes.to_string()),
                ("omega_points", q.omega_points.to_string()),
                ("empty_domain", q.empty_domain.to_string()),
            ];
            for (k, v) in rows {
                writeln!(out, "{k},{v}").unwrap();
            }
            for p in &r.breakdown {
                writeln!(
                    out,
                    "pair:{}:{},{}",
                    csv_field(&p.label_m),
                    csv_field(&p.label_n),
                    fmt_f64(p.rate)
                )
                .unwrap();
            }
            out
        }
    };
    run.emit(&text)?;
    if r.quadrature.empty_domain {
        eprintln!("warning: the detection domain is empty (cone, fiber or knife blocks every direction); rate is 0");
    }
    if !r.quadrature.converged {
        return Err(CliError::Numeric(format!(
            "frequency integration error estimate {:e} exceeds tolerance {:e} x rate",
            r.quadrature.error_estimate, settings.tolerance
        )));
    }
    Ok(String::new())
}

fn cmd_spectrum(
    run: &mut Run,
    path: &Path,
    filter: Option<&str>,
    smooth: Option<usize>,
    settings: &mut Settings,
) -> CliResult<String> {
    if let Some(f) = filter {
        settings.detection.filter = parse_filter(f)?;
    }
    let s = run.load(path)?;
    let grid = settings.omega_grid(&s)?;
    let t = table(&s, &grid, settings)?;
    let curve = spectrum_with(&s, &settings.detection, &grid, &t, &settings.rate_options())?;
    let smoothed = smooth
        .map(|w| moving_average(&curve.density, w))
        .transpose()?;
    run.summary = json!({ "integral": curve.integral(), "points": grid.len() });
    match run.global.format {
        Format::Json => json_text(&json!({
            "omega_s": curve.omega_s,
            "wavelength_nm": curve.wavelength.iter().map(|l| l * 1e9).collect::<Vec<_>>(),
            "density": curve.density,
            "density_smoothed": smoothed,
        })),
        Format::Csv => {
            let mut out = String::from("omega_s,wavelength_nm,density");
            if smoothed.is_some() {
                out.push_str(",density_smoothed");
            }
            out.push('\n');
            for i in 0..grid.len() {
                write!(
                    out,
                    "{},{},{}",
                    fmt_f64(curve.omega_s[i]),
                    fmt_f64(curve.wavelength[i] * 1e9),
                    fmt_f64(curve.density[i])
                )
                .unwrap();
                if let Some(sm) = &smoothed {
                    write!(out, ",{}", fmt_f64(sm[i])).unwrap();
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

fn cmd_farfield(
    run: &mut Run,
    path: &Path,
    resolution: Option<&str>,
    settings: &Settings,
) -> CliResult<String> {
    let res = match (resolution, run.config.map_resolution) {
        (Some(r), _) => parse_resolution(r)?,
        (None, Some([a, b])) => (a, b),
        (None, None) => DEFAULT_MAP_RESOLUTION,
    };
    let s = run.load(path)?;
    let grid = settings.omega_grid(&s)?;
    let t = table(&s, &grid, settings)?;
    let map = farfield_map(
        &s,
        &settings.detection,
        &grid,
        res,
        &t,
        &settings.rate_options(),
    )?;
    run.summary = json!({ "resolution": [res.0, res.1] });
    match run.global.format {
        Format::Json => json_text(&map),
        Format::Csv => {
            let mut out = String::from("theta,phi,density\n");
            for (it, th) in map.theta.iter().enumerate() {
                for (ip, ph) in map.phi.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{}",
                        fmt_f64(*th),
                        fmt_f64(*ph),
                        fmt_f64(map.at(it, ip))
                    )
                    .unwrap();
                }
            }
            Ok(out)
        }
    }
}

fn cmd_knife(
    run: &mut Run,
    path: &Path,
    positions: Option<&str>,
    blocks: Option<Side>,
    fit: bool,
    settings: &mut Settings,
) -> CliResult<String> {
    let pos = match (positions, &run.config.knife_positions_mm) {
        (Some(p), _) => parse_positions(p)?,
        (None, Some(v)) => v.iter().map(|x| x * 1e-3).collect(),
        (None, None) => {
            let (a, b, n) = DEFAULT_KNIFE_SCAN;
            linspace(a * 1e-3, b * 1e-3, n)
        }
    };
    if let Some(side) = blocks {
        let side = match side {
            Side::Above => BlockedSide::Above,
            Side::Below => BlockedSide::Below,
        };
        let position = settings.detection.knife.map_or(0.0, |k| k.position);
        settings.detection.knife = Some(KnifeState {
            position,
            blocks: side,
        });
    }
    let s = run.load(path)?;
    let grid = settings.omega_grid(&s)?;
    let t = table(&s, &grid, settings)?;
    let mut scan = knife_scan(
        &s,
        &settings.detection,
        &pos,
        &grid,
        &t,
        &settings.rate_options(),
    )?;
    if fit {
        scan.fit = Some(fit_erf_points(&scan.positions, &scan.rates)?);
    }
    run.summary = json!({ "blocks": scan.blocks, "fit": scan.fit });
    match run.global.format {
        Format::Json => json_text(&scan),
        Format::Csv => {
            let mut out = String::from("position_m,rate\n");
            for (x, r) in scan.positions.iter().zip(&scan.rates) {
                writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*r)).unwrap();
            }
            Ok(out)
        }
    }
}

/// Read the first two numeric columns of a CSV with a header row.
fn read_xy_csv(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        let field = |k: usize| {
            record
                .get(k)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::parse(
                        path,
                        format!("data row {}: expected two numeric columns", row + 1),
                    )
                })
        };
        xs.push(field(0)?);
        ys.push(field(1)?);
    }
    Ok((xs, ys))
}

fn cmd_fit_erf(run: &mut Run, path: &Path) -> CliResult<String> {
    run.inputs.push(path.to_path_buf());
    let (x, y) = read_xy_csv(path)?;
    let f = fit_erf_points(&x, &y)?;
    run.summary = json!({ "fit": f });
    match run.global.format {
        Format::Json => json_text(&f),
        Format::Csv => {
            let mut out = String::from("parameter,value,ci95\n");
            for (name, v, ci) in [
                ("m", f.m, f.ci95[0]),
                ("x0", f.x0, f.ci95[1]),
                ("amplitude", f.amplitude, f.ci95[2]),
                ("offset", f.offset, f.ci95[3]),
            ] {
                writeln!(out, "{name},{},{}", fmt_f64(v), fmt_f64(ci)).unwrap();
            }
            writeln!(out, "residual_norm,{},", fmt_f64(f.residual_norm)).unwrap();
            writeln!(out, "iterations,{},", f.iterations).unwrap();
            Ok(out)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FamilyFile {
    members: Vec<FamilyEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FamilyEntry {
    fs: f64,
    /// Manifest path relative to the family file.
    scenario: PathBuf,
}

fn cmd_sweep(
    run: &mut Run,
    path: &Path,
    full_sum: bool,
    smooth: Option<usize>,
    settings: &Settings,
) -> CliResult<String> {
    run.inputs.push(path.to_path_buf());
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let family: FamilyFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("malformed sweep file: {e}")))?;
    if family.members.is_empty() {
        return Err(Error::parse(path, "sweep file lists no members").into());
    }
    let dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut members = Vec::with_capacity(family.members.len());
    for e in &family.members {
        let scenario = run.load(&dir.join(&e.scenario))?;
        members.push(SweepMember { fs: e.fs, scenario });
    }
    let grid = settings.omega_grid(&members[0].scenario)?;
    let opts = SweepOptions {
        rate: settings.rate_options(),
        full_sum,
    };
    let points = scaling_sweep(&members, &settings.detection, &grid, &opts)?;
    let norm: Vec<f64> = points.iter().map(|p| p.normalized_rate).collect();
    let smoothed = smooth.map(|w| moving_average(&norm, w)).transpose()?;
    let peak = points
        .iter()
        .max_by(|a, b| a.normalized_rate.total_cmp(&b.normalized_rate))
        .map(|p| p.fs);
    run.summary = json!({ "members": points.len(), "peak_fs": peak });
    match run.global.format {
        Format::Json => {
            json_text(&json!({ "points": points, "normalized_rate_smoothed": smoothed }))
        }
        Format::Csv => {
            let mut out =
                String::from("fs,omega_1,gamma_1,detuning_hz,g11_abs,volume,rate,normalized_rate");
            if smoothed.is_some() {
                out.push_str(",normalized_rate_smoothed");
            }
            out.push('\n');
            for (i, p) in points.iter().enumerate() {
                write!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    fmt_f64(p.fs),
                    fmt_f64(p.eigenfrequency_1.omega),
                    fmt_f64(p.eigenfrequency_1.gamma),
                    fmt_f64(p.detuning),
                    fmt_f64(p.g11_abs),
                    fmt_f64(p.volume),
                    fmt_f64(p.rate),
                    fmt_f64(p.normalized_rate)
                )
                .unwrap();
                if let Some(sm) = &smoothed {
                    write!(out, ",{}", fmt_f64(sm[i])).unwrap();
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

fn cmd_gen_testbed(run: &mut Run, name: &str, settings: &Settings) -> CliResult<String> {
    let out = run
        .global
        .out
        .clone()
        .ok_or_else(|| usage("gen-testbed requires --out <manifest path>"))?;
    if name == "sweep-family" {
        let members = sweep_family(&default_sweep_scales(), crate::model::C64::new(1.0, 0.0))?;
        let stem = out
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| usage("--out needs a file name"))?
            .to_string();
        let dir = out.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut entries = Vec::new();
        for (k, m) in members.iter().enumerate() {
            let file = format!("{stem}.member{k:02}.json");
            write_scenario(&m.scenario, &dir.join(&file))?;
            entries.push(FamilyEntry {
                fs: m.fs,
                scenario: PathBuf::from(file),
            });
        }
        let text = json_text(&FamilyFile { members: entries })?;
        fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
        run.summary = json!({ "preset": name, "members": members.len() });
    } else {
        if !PRESETS.contains(&name) {
            return Err(usage(format!(
                "unknown preset {name:?} (expected one of {}, sweep-family)",
                PRESETS.join(", ")
            )));
        }
        let s = preset(name, settings.seed)?;
        write_scenario(&s, &out)?;
        run.summary = json!({ "preset": name, "seed": settings.seed, "modes": s.modes.len() });
    }
    Ok(String::new())
}

fn cmd_mc_check(
    run: &mut Run,
    path: &Path,
    samples: usize,
    settings: &Settings,
) -> CliResult<String> {
    let s = run.load(path)?;
    let grid = settings.omega_grid(&s)?;
    let t = table(&s, &grid, settings)?;
    let q = detected_pair_rate_with(&s, &settings.detection, &grid, &t, &settings.rate_options())?;
    let mc = monte_carlo_rate(
        &s,
        &settings.detection,
        &t,
        (grid[0], grid[grid.len() - 1]),
        settings.seed,
        samples,
    )?;
    let delta = q.rate - mc.estimate;
    let pass = delta.abs() < 3.0 * mc.stderr;
    run.summary = json!({
        "quadrature": q.rate,
        "monte_carlo": mc.estimate,
        "stderr": mc.stderr,
        "delta": delta,
        "samples": samples,
        "seed": settings.seed,
        "verdict": if pass { "PASS" } else { "FAIL" },
    });
    let text = match run.global.format {
        Format::Json => json_text(&run.summary)?,
        Format::Csv => {
            let mut out = String::from("key,value\n");
            for (k, v) in [
                ("quadrature", fmt_f64(q.rate)),
                ("monte_carlo", fmt_f64(mc.estimate)),
                ("stderr", fmt_f64(mc.stderr)),
                ("delta", fmt_f64(delta)),
                ("samples", samples.to_string()),
                ("seed", settings.seed.to_string()),
                ("verdict", if pass { "PASS" } else { "FAIL" }.to_string()),
            ] {
                writeln!(out, "{k},{v}").unwrap();
            }
            out
        }
    };
    run.emit(&text)?;
    if !pass {
        return Err(CliError::Numeric(format!(
            "Monte Carlo estimate differs by {:.2} standard errors",
            delta.abs() / mc.stderr
        )));
    }
    Ok(String::new())
}

fn dispatch(run: &mut Run, command: &Command, settings: &mut Settings) -> CliResult<()> {
    let text = match command {
        Command::Inspect { scenario } => cmd_inspect(run, scenario)?,
        Command::Xi { scenario, top_k } => cmd_xi(run, scenario, *top_k, settings)?,
        Command::Rate { scenario } => cmd_rate(run, scenario, settings)?,
        Command::Spectrum {
            scenario,
            filter,
            smooth,
        } => cmd_spectrum(run, scenario, filter.as_deref(), *smooth, settings)?,
        Command::Farfield {
            scenario,
            resolution,
        } => cmd_farfield(run, scenario, resolution.as_deref(), settings)?,
        Command::Knife {
            scenario,
            positions,
            blocks,
            fit,
        } => cmd_knife(run, scenario, positions.as_deref(), *blocks, *fit, settings)?,
        Command::FitErf { scan } => cmd_fit_erf(run, scan)?,
        Command::Sweep {
            family,
            full_sum,
            smooth,
        } => cmd_sweep(run, family, *full_sum, *smooth, settings)?,
        Command::GenTestbed { preset } => cmd_gen_testbed(run, preset, settings)?,
        Command::McCheck { scenario, samples } => cmd_mc_check(run, scenario, *samples, settings)?,
    };
    // subcommands that emit their own output return an empty string
    if !text.is_empty() {
        run.emit(&text)?;
    }
    Ok(())
}

fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Usage(_) => EXIT_USAGE,
        CliError::Numeric(_) | CliError::Lib(Error::NonConvergence { .. }) => EXIT_NONCONVERGENCE,
        CliError::Lib(_) => EXIT_DATA,
    }
}

/// Run the command line `argv` (including the program name) and return the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    let config = match &cli.global.config {
        None => RunConfig::default(),
        Some(p) => match fs::read_to_string(p)
            .map_err(|e| Error::io(p, e))
            .and_then(|t| {
                serde_json::from_str(&t)
                    .map_err(|e| Error::parse(p, format!("invalid config: {e}")))
            }) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_DATA;
            }
        },
    };
    let mut run = Run {
        global: cli.global.clone(),
        config,
        argv: argv
            .iter()
            .map(|a| a.to_string_lossy().into_owned())
            .collect(),
        inputs: cli.global.config.iter().cloned().collect(),
        summary: Value::Null,
    };
    let name = cli.command.name();

    let body = |run: &mut Run| -> (i32, Option<Settings>) {
        let mut settings = match run.settings(name) {
            Ok(s) => s,
            Err(e) => return (report(&e), None),
        };
        let code = match dispatch(run, &cli.command, &mut settings) {
            Ok(()) => EXIT_OK,
            Err(e) => report(&e),
        };
        (code, Some(settings))
    };

    let (code, settings) = match cli.global.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| body(&mut run)),
            Err(e) => {
                eprintln!("error: could not start thread pool: {e}");
                return EXIT_DATA;
            }
        },
        None => body(&mut run),
    };
    if code != EXIT_USAGE {
        run.write_run_record(name, settings.as_ref(), code);
    }
    code
}

fn report(e: &CliError) -> i32 {
    match e {
        CliError::Usage(m) => eprintln!("usage error: {m}\n(run with --help for usage)"),
        CliError::Lib(err) => eprintln!("error: {err}"),
        CliError::Numeric(m) => eprintln!("numerical check failed: {m}"),
    }
    exit_code(e)
}
