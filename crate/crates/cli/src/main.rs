//! `bisac` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error, 3 infeasible design.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use bisac::channel::spectral_efficiency;
use bisac::experiments::{
    design, fraction_below, ridge_ratio, run_convergence, run_peb_cdf, run_peb_heatmap,
    run_se_vs_gamma, run_se_vs_nrf, run_se_vs_snr, stamp, Method, Trial,
};
use bisac::scenario::{Scale, Scenario, ScenarioConfig};
use bisac::table::{sha256_hex, Cell, ResultTable};
use bisac::{verify, Error};
use clap::{Parser, Subcommand};

const WORKERS_ENV: &str = "ISAC_WORKERS";

#[derive(Parser, Debug)]
#[command(
    name = "bisac",
    version,
    about = "Bistatic ISAC hybrid beamforming experiments"
)]
struct Cli {
    /// Scenario file (TOML); `default` selects the preset of `--scale`.
    #[arg(long, global = true, default_value = "default")]
    config: String,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Preset the configuration is laid over.
    #[arg(long, global = true, default_value = "desk")]
    scale: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// PEB over the sensing sector under analog steering.
    PebMap {
        /// Heights to sweep (m); defaults to the configured planes.
        #[arg(long, allow_negative_numbers = true)]
        z: Vec<f64>,
    },
    /// Empirical CDF of the sector PEB.
    PebCdf,
    /// Per-round objective of RTR-SCA and RSD-SCA.
    Converge {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Spectral efficiency against SNR.
    SeSnr {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Spectral efficiency against the PEB threshold.
    SeGamma {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Spectral efficiency against the number of RF chains.
    SeNrf {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// One-shot beamformer design with a PEB/SE summary.
    Design {
        /// rtr-sca, rsd-sca or pc-omp.
        #[arg(long, default_value = "rtr-sca")]
        method: String,
    },
    /// Run the numerical oracle suites.
    Check,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PebMap { .. } => "peb-map",
            Command::PebCdf => "peb-cdf",
            Command::Converge { .. } => "converge",
            Command::SeSnr { .. } => "se-snr",
            Command::SeGamma { .. } => "se-gamma",
            Command::SeNrf { .. } => "se-nrf",
            Command::Design { .. } => "design",
            Command::Check => "check",
        }
    }
}

enum Failure {
    Config(String),
    Infeasible(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            Error::ScaInfeasible(_) => Failure::Infeasible(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let scale: Scale = cli.scale.parse()?;
    let mut cfg = if cli.config == "default" {
        ScenarioConfig::preset(scale)
    } else {
        ScenarioConfig::load(Path::new(&cli.config), scale).map_err(|e| match e {
            Error::Io(io) => Failure::Config(format!("{}: {io}", cli.config)),
            other => other.into(),
        })?
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_workers() -> Result<(), Failure> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize =
        v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Failure::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

/// Writes data files and a run record; only the run record carries a timestamp.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, file: &str, table: &ResultTable) -> Result<(), Failure> {
        table.write_csv(&self.dir.join(file))?;
        self.files.push(file.to_string());
        Ok(())
    }

    fn finish(self, command: &str, cfg: &ScenarioConfig) -> Result<(), Failure> {
        let config_file = format!("{command}.config.toml");
        let io = |e: std::io::Error| Failure::Runtime(e.to_string());
        std::fs::write(self.dir.join(&config_file), cfg.to_toml()).map_err(io)?;
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let files: Vec<String> = self.files.iter().map(|f| format!("\"{f}\"")).collect();
        let record = format!(
            "command = \"{command}\"\ngenerated_unix = {stamp}\nconfig = \"{config_file}\"\nconfig_sha256 = \"{}\"\nfiles = [{}]\n",
            sha256_hex(&cfg.to_toml()),
            files.join(", ")
        );
        std::fs::write(self.dir.join(format!("{command}.run.toml")), record).map_err(io)?;
        for f in &self.files {
            println!("wrote {}", self.dir.join(f).display());
        }
        Ok(())
    }
}

fn print_table(t: &ResultTable) {
    println!(
        "{}",
        t.schema
            .iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join("\t")
    );
    for r in &t.rows {
        let cells: Vec<String> = r
            .iter()
            .map(|c| match c {
                Cell::Num(v) if v.fract() != 0.0 && v.is_finite() => format!("{v:.4}"),
                other => other.to_string(),
            })
            .collect();
        println!("{}", cells.join("\t"));
    }
}

fn z_label(z: f64) -> String {
    format!("{z}")
}

fn run(cli: &Cli) -> Result<(), Failure> {
    init_workers()?;
    let cfg = load_config(cli)?;
    let scn = Scenario::new(cfg.clone())?;
    let exp = &cfg.experiments;
    let with_trials = |trials: &Option<usize>| -> Result<Scenario, Failure> {
        let mut c = cfg.clone();
        if let Some(t) = trials {
            c.experiments.monte_carlo = *t;
        }
        Ok(Scenario::new(c)?)
    };
    let command = cli.command.name();
    let mut out = Output::new(&cli.out)?;
    match &cli.command {
        Command::PebMap { z } => {
            let planes = if z.is_empty() {
                exp.heatmap_planes.clone()
            } else {
                z.clone()
            };
            for z in planes {
                let t = run_peb_heatmap(&scn, z, exp.grid_resolution)?;
                println!(
                    "z = {z} m: {} points, ridge ratio {:.2}",
                    t.rows.len(),
                    ridge_ratio(&t, 10.0)?
                );
                out.write(&format!("peb_map_z{}.csv", z_label(z)), &t)?;
            }
        }
        Command::PebCdf => {
            let t = run_peb_cdf(&scn, &exp.cdf_planes, &exp.cdf_n_t)?;
            for &n_t in &exp.cdf_n_t {
                for &z in &exp.cdf_planes {
                    println!(
                        "N_t = {n_t}, z = {z} m: P(PEB < 0.1 m) = {:.3}",
                        fraction_below(&t, n_t, z, 0.1)?
                    );
                }
            }
            out.write("peb_cdf.csv", &t)?;
        }
        Command::Converge { runs } => {
            let r = run_convergence(
                &scn,
                &exp.convergence_gammas,
                runs.unwrap_or(exp.convergence_runs),
            )?;
            print_table(&r.summary);
            out.write("convergence.csv", &r.trace)?;
            out.write("convergence_summary.csv", &r.summary)?;
        }
        Command::SeSnr { trials } => {
            let t = run_se_vs_snr(&with_trials(trials)?)?;
            print_table(&t);
            out.write("se_snr.csv", &t)?;
        }
        Command::SeGamma { trials } => {
            let t = run_se_vs_gamma(&with_trials(trials)?)?;
            print_table(&t);
            out.write("se_gamma.csv", &t)?;
        }
        Command::SeNrf { trials } => {
            let t = run_se_vs_nrf(&with_trials(trials)?)?;
            print_table(&t);
            out.write("se_nrf.csv", &t)?;
        }
        Command::Design { method } => {
            let m: Method = method.parse()?;
            if !matches!(m, Method::RtrSca | Method::RsdSca | Method::PcOmp) {
                return Err(Failure::Config(format!(
                    "design supports rtr-sca, rsd-sca and pc-omp, not `{method}`"
                )));
            }
            let verdict = design_command(&scn, m, &mut out)?;
            out.finish(command, &cfg)?;
            return verdict;
        }
        Command::Check => {
            let reports = verify::run_all(&scn, cfg.seed);
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().any(|r| !r.passed()) {
                return Err(Failure::Runtime("oracle suite failed".into()));
            }
            return Ok(());
        }
    }
    out.finish(command, &cfg)
}

/// Runs one design on the first channel realization; the returned verdict is `Infeasible` when a
/// target misses its PEB threshold, after the files have been written.
fn design_command(
    scn: &Scenario,
    method: Method,
    out: &mut Output,
) -> Result<Result<(), Failure>, Failure> {
    let d = &scn.config.design;
    let kappas = scn.kappas(d.gamma)?;
    if let Some(n) = kappas.iter().position(|k| !k.is_finite()) {
        return Err(Failure::Infeasible(format!(
            "target {n} cannot reach PEB {} m with any beamformer",
            d.gamma
        )));
    }
    let trial = Trial::new(scn, 0)?;
    let designed = design(scn, &trial, method, &kappas, d.n_rf)?;
    let bf = designed
        .beamformer
        .expect("hybrid methods return a beamformer");
    let se = spectral_efficiency(
        &trial.channels,
        &designed.precoders,
        scn.config.snr_linear(),
        d.n_s,
    )?;
    let targets = scn.target_steering()?;

    let mut summary = ResultTable::new(
        "design_summary",
        &[
            ("target", ""),
            ("scatterer", ""),
            ("kappa", ""),
            ("min_gain", ""),
            ("peb", "m"),
            ("gamma", "m"),
        ],
    );
    stamp(&mut summary, scn, "design");
    summary.set_meta("method", method.name());
    summary.set_meta("se", se);
    summary.set_meta(
        "max_power_deviation",
        (0..bf.num_subcarriers())
            .map(|k| (bf.power(k) - d.n_s as f64).abs())
            .fold(0.0, f64::max),
    );
    let mut worst_ratio: f64 = 0.0;
    for (n, a) in targets.iter().enumerate() {
        let peb = scn.peb(&bf, n)?;
        worst_ratio = worst_ratio.max(peb / d.gamma);
        summary.push(vec![
            n.into(),
            scn.config.sensing.targets[n].into(),
            kappas[n].into(),
            bf.min_target_gain(a).into(),
            peb.into(),
            d.gamma.into(),
        ])?;
    }
    // Alternating designs report penalty feasibility; PC-OMP is judged by the resulting bound.
    let feasible = designed.feasible && worst_ratio <= 1.05;
    summary.set_meta("feasible", feasible);

    let mut analog = ResultTable::new(
        "design_analog",
        &[("row", ""), ("col", ""), ("re", ""), ("im", "")],
    );
    for r in 0..bf.n_t() {
        for c in 0..bf.n_rf() {
            let v = bf.analog[(r, c)];
            analog.push(vec![r.into(), c.into(), v.re.into(), v.im.into()])?;
        }
    }
    let mut digital = ResultTable::new(
        "design_digital",
        &[
            ("subcarrier", ""),
            ("row", ""),
            ("col", ""),
            ("re", ""),
            ("im", ""),
        ],
    );
    for (k, fb) in bf.digital.iter().enumerate() {
        for r in 0..fb.nrows() {
            for c in 0..fb.ncols() {
                let v = fb[(r, c)];
                digital.push(vec![k.into(), r.into(), c.into(), v.re.into(), v.im.into()])?;
            }
        }
    }
    for t in [&mut analog, &mut digital] {
        stamp(t, scn, "design");
        t.set_meta("method", method.name());
    }
    out.write("design_summary.csv", &summary)?;
    out.write("design_analog.csv", &analog)?;
    out.write("design_digital.csv", &digital)?;

    println!(
        "method {}  SE {se:.4} bit/s/Hz  feasible {feasible}",
        method.name()
    );
    print_table(&summary);
    Ok(if feasible {
        Ok(())
    } else {
        Err(Failure::Infeasible(format!(
            "worst PEB is {worst_ratio:.3} x Gamma"
        )))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Config(m) => ("config error", m),
                Failure::Infeasible(m) => ("infeasible design", m),
                Failure::Runtime(m) => ("error", m),
            };
            eprintln!("bisac: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
