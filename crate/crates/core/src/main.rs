use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use kminlab::groundstate::{self, MomentTable};
use kminlab::harness::{self, BGrid, BetaSpec, HarnessError, RunConfig, Setup};
use kminlab::minimizer;

#[derive(Parser)]
#[command(name = "kminlab", version, about = "Constrained Kirchhoff-energy minimizers and their small-b limits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the radial ground state and print its constants.
    Groundstate {
        #[arg(long, visible_alias = "rmax", default_value_t = 20.0)]
        r_max: f64,
        #[arg(long, visible_alias = "nodes", default_value_t = 8000)]
        n_nodes: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Moment orders to report, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0])]
        moments: Vec<f64>,
        /// Write the profile as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize at a single b.
    Minimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        b: f64,
        /// Write the minimizer as a .kfld file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the continuation sweep and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep table path; defaults to sweep.csv in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report.csv and fits.csv from an existing run directory.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline: ground state, sweep, analysis.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

/// Flags overriding the config file.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `hi:lo:geometric:n`, `hi:lo:linear:n` or `list:b1,b2,...`
    #[arg(long)]
    b_grid: Option<BGrid>,
    #[arg(long, conflicts_with = "beta")]
    beta_ratio: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, HarnessError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        if let Some(g) = &self.b_grid {
            cfg.b_grid = g.clone();
        }
        if let Some(r) = self.beta_ratio {
            cfg.beta = BetaSpec::Ratio(r);
        }
        if let Some(b) = self.beta {
            cfg.beta = BetaSpec::Absolute(b);
        }
        if let Some(h) = self.h {
            cfg.domain.h = h;
        }
        if let Some(m) = self.max_iters {
            cfg.flow.max_iters = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn groundstate_cmd(r_max: f64, n_nodes: usize, tol: f64, moments: &[f64], out: Option<PathBuf>) -> Result<ExitCode, HarnessError> {
    let q = groundstate::solve_ground_state(r_max, n_nodes, tol)?;
    let m = MomentTable::new(&q, moments)?;
    println!("beta_star   {:.12}", q.beta_star());
    println!("Q(0)        {:.12}", q.q_at_zero);
    println!("int |Q'|^2  {:.12}", q.grad_norm);
    println!("int Q^4     {:.12}", q.quartic);
    println!(
        "identities  {:.3e} {:.3e}",
        (q.grad_norm - q.mass).abs() / q.mass,
        (q.quartic - 2.0 * q.mass).abs() / q.quartic
    );
    for (p, v) in m.entries() {
        println!("m_{p:<9} {v:.12}");
    }
    if let Some(path) = out {
        harness::write_profile_csv(&path, &q, &m)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn minimize_cmd(common: &Common, b: f64, out: Option<PathBuf>) -> Result<ExitCode, HarnessError> {
    let cfg = common.load()?;
    let setup = Setup::new(&cfg)?;
    let init = match cfg.flow.init {
        harness::InitName::Auto => setup.initial_guess(b),
        harness::InitName::Eigenmode => minimizer::InitKind::Eigenmode,
    };
    let mut flow = cfg.flow_config(init);
    if cfg.flow.relative_grad_tol {
        flow.grad_tol /= setup.eps_predicted(b).powi(2);
    }
    let r = minimizer::minimize(&setup.grid, &setup.spec, b, setup.beta, setup.beta_star(), &flow)?;
    let e = &r.breakdown;
    println!("regime      {}", setup.regime());
    println!("status      {:?} after {} iterations", r.status, r.iterations);
    println!("energy      {:.12e}", e.total);
    println!("kinetic     {:.12e}", e.kinetic);
    println!("potential   {:.12e}", e.potential);
    println!("int u^4     {:.12e}", e.l4);
    println!("eps_b       {:.6e}", r.eps_b);
    println!("peak        ({:.6}, {:.6})", r.max_point[0], r.max_point[1]);
    println!("residual    {:.3e}", r.residual);
    if let Some(path) = out {
        harness::write_kfld(&path, &setup.grid, &r.u)?;
    }
    Ok(if r.converged { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn sweep_cmd(common: &Common, out: Option<PathBuf>) -> Result<ExitCode, HarnessError> {
    let cfg = common.load()?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
    let setup = Setup::new(&cfg)?;
    let table = out.unwrap_or_else(|| dir.join("sweep.csv"));
    let out = harness::run_sweep(&setup, &cfg, Some(&table))?;
    if let Some((_, r)) = out.last_field() {
        harness::write_kfld(&dir.join("final.kfld"), &setup.grid, &r.u)?;
    }
    Ok(if out.all_valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn analyze_cmd(common: &Common) -> Result<ExitCode, HarnessError> {
    let cfg = common.load()?;
    let a = harness::reanalyze(&cfg)?;
    println!("{:>12} {:>14} {:>10} {:>12} {:>10}", "b", "e_normalized", "limit", "eps_norm", "dist_norm");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for r in &a.report {
        println!(
            "{:>12.4e} {:>14} {:>10.4} {:>12} {:>10}",
            r.b,
            show(r.e_normalized),
            r.predicted_limit,
            show(r.eps_normalized),
            show(r.dist_normalized)
        );
    }
    for f in &a.fits {
        println!(
            "fit {:<8} log={:<5} exponent {:.4} log_power {:.4} r2 {:.6}",
            f.quantity, f.with_log, f.exponent, f.log_power, f.r_squared
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run_cmd(common: &Common) -> Result<ExitCode, HarnessError> {
    let cfg = common.load()?;
    let s = harness::run_experiment(&cfg)?;
    println!(
        "{}: {}/{} sweep points converged, artifacts in {}",
        s.regime,
        s.valid_rows,
        s.rows,
        s.out_dir.display()
    );
    Ok(if s.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Groundstate { r_max, n_nodes, tol, moments, out } => groundstate_cmd(r_max, n_nodes, tol, &moments, out),
        Command::Minimize { common, b, out } => minimize_cmd(&common, b, out),
        Command::Sweep { common, out } => sweep_cmd(&common, out),
        Command::Analyze { common } => analyze_cmd(&common),
        Command::Run { common } => run_cmd(&common),
    };
    res.unwrap_or_else(|e| {
        error!("{e}");
        ExitCode::from(2)
    })
}
