use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gbmsde::config::{resolve_adaptive, resolve_experiment, resolve_model, Config, Resolver};
use gbmsde::harness::{efficiency_run, run_convergence, stress_divergence};
use gbmsde::integrators::{integrate_adaptive, integrate_fixed_with, SchemeOptions};
use gbmsde::sde_model::COMMUTATOR_TOL;
use gbmsde::report::{format_float, write_report, write_slopes};
use gbmsde::{validate_commutativity, ConvergenceReport, SchemeId, SdeError, WienerLattice};

#[derive(Parser, Debug)]
#[command(name = "gbmsde", version, about = "Tamed exponential integrators for semilinear SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that the noise matrices commute with each other and with A.
    Validate(Common),
    /// Integrate a single path and write its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Index of the Brownian path to draw.
        #[arg(long, default_value_t = 0)]
        path_index: u64,
    },
    /// Strong convergence study.
    Converge(Common),
    /// Convergence study with timing.
    Efficiency(Common),
    /// Explicit Euler–Maruyama against tamed EI0 at a large step.
    Stress(Common),
    /// Convergence study on the spectral Galerkin SPDE model.
    Spde(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Config file with key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides run.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Inline overrides, e.g. run.M=100.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<Config, SdeError> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("run.seed", &seed.to_string())?;
        }
        Ok(cfg)
    }

    fn out_file(&self, name: &str) -> Result<PathBuf, SdeError> {
        fs::create_dir_all(&self.out).map_err(|e| SdeError::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(self.out.join(name))
    }
}

enum Failure {
    Config(SdeError),
    Numeric(String),
}

impl From<SdeError> for Failure {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Overflow { .. } | SdeError::NonFinite(_) => Failure::Numeric(e.to_string()),
            other => Failure::Config(other),
        }
    }
}

fn echo(r: &Resolver<'_>) {
    println!("# resolved configuration");
    for line in r.resolved_lines() {
        println!("{line}");
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), SdeError> {
    fs::write(path, text).map_err(|e| SdeError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn is_spde(cfg: &Config) -> bool {
    cfg.get("model.name") == Some("spde")
}

fn validate(common: &Common) -> Result<(), Failure> {
    let cfg = common.load()?;
    let mut r = Resolver::new(&cfg);
    let model = resolve_model(&mut r, is_spde(&cfg))?;
    echo(&r);
    let report = validate_commutativity(&model, COMMUTATOR_TOL)?;
    println!("{report}");
    Ok(())
}

fn simulate(common: &Common, path_index: u64) -> Result<(), Failure> {
    let cfg = common.load()?;
    let mut r = Resolver::new(&cfg);
    let model = resolve_model(&mut r, is_spde(&cfg))?;
    let default_scheme = if model.has_nonlinear_diffusion() { "tamed_ei0_general" } else { "tamed_ei0" };
    let scheme: SchemeId = r.string("run.schemes", default_scheme)?.parse()?;
    let seed = r.u64("run.seed", 42)?;
    let fine_steps = r.usize("run.N_fine", 1 << 14)?;
    let lattice = WienerLattice::sample(seed, path_index, model.drivers(), fine_steps, model.horizon())?;
    let traj = if scheme.is_adaptive() {
        let cfg = resolve_adaptive(&mut r, model.horizon(), fine_steps)?;
        integrate_adaptive(scheme, &model, &lattice, &cfg)?
    } else {
        let factor = r.usize("run.dt_factors", 64)?;
        let opts = SchemeOptions {
            kappa: r.f64("projected.kappa", 1.0)?,
        };
        integrate_fixed_with(scheme, &model, &lattice, factor, &opts)?
    };
    echo(&r);

    let mut out = String::new();
    let _ = writeln!(out, "# master_seed={seed} path_index={path_index} scheme={scheme} model={}", model.name());
    out.push_str("time");
    for i in 0..model.dim() {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for (t, y) in traj.times.iter().zip(&traj.states) {
        out.push_str(&format_float(*t));
        for v in y.iter() {
            out.push(',');
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    }
    let path = common.out_file("trajectory.csv")?;
    write_text(&path, &out)?;
    println!("wrote {} ({} steps)", path.display(), traj.steps());
    Ok(())
}

fn write_reports(common: &Common, stem: &str, reports: &[ConvergenceReport]) -> Result<(), Failure> {
    let rows = common.out_file(&format!("{stem}.csv"))?;
    let slopes = common.out_file(&format!("{stem}_slopes.csv"))?;
    write_report(reports, &rows)?;
    write_slopes(reports, &slopes)?;
    for rep in reports {
        println!(
            "{} on {}: slope {:.4} ± {:.4}",
            rep.scheme, rep.model, rep.slope, rep.slope_stderr
        );
    }
    println!("wrote {} and {}", rows.display(), slopes.display());
    let all_aborted = reports
        .iter()
        .flat_map(|rep| rep.rows.iter().map(move |row| (rep, row)))
        .find(|(rep, row)| row.aborted_paths == rep.paths);
    if let Some((rep, row)) = all_aborted {
        return Err(Failure::Numeric(format!(
            "all {} paths aborted for {} at dt = {}",
            rep.paths, rep.scheme, row.dt
        )));
    }
    Ok(())
}

fn convergence(common: &Common, spde: bool, timing: bool) -> Result<(), Failure> {
    let cfg = common.load()?;
    let mut r = Resolver::new(&cfg);
    let spde = spde || is_spde(&cfg);
    let model = resolve_model(&mut r, spde)?;
    let mut spec = resolve_experiment(&mut r, model)?;
    spec.workers = common.workers;
    echo(&r);
    let (reports, stem) = if timing {
        (efficiency_run(&spec)?, "efficiency")
    } else {
        (run_convergence(&spec)?, if spde { "spde" } else { "converge" })
    };
    write_reports(common, stem, &reports)
}

fn stress(common: &Common) -> Result<(), Failure> {
    let cfg = common.load()?;
    let mut r = Resolver::new(&cfg);
    let dt = r.f64("stress.dt", 0.25)?;
    let paths = r.usize("run.M", 1000)?;
    let x0 = r.f64("model.x0", 3.0)?;
    let seed = r.u64("run.seed", 42)?;
    echo(&r);
    let rep = stress_divergence(dt, paths, x0, seed, common.workers)?;
    let mut out = String::new();
    let _ = writeln!(out, "# master_seed={seed} paths={paths}");
    out.push_str("dt,x0,paths,em_blowups,em_blowup_fraction,tamed_max_norm\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        format_float(rep.dt),
        format_float(rep.x0),
        rep.paths,
        rep.em_blowups,
        format_float(rep.em_blowup_fraction),
        format_float(rep.tamed_max_norm)
    );
    let path = common.out_file("stress.csv")?;
    write_text(&path, &out)?;
    println!(
        "explicit EM blow-up fraction {:.4}; tamed EI0 max norm {:.4}",
        rep.em_blowup_fraction, rep.tamed_max_norm
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(c) => validate(c),
        Command::Simulate { common, path_index } => simulate(common, *path_index),
        Command::Converge(c) => convergence(c, false, false),
        Command::Efficiency(c) => convergence(c, false, true),
        Command::Stress(c) => stress(c),
        Command::Spde(c) => convergence(c, true, false),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(2)
        }
    }
}
