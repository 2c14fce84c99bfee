//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use vanum::avr::run_avr;
use vanum::harness::{self, io, ExperimentConfig, Resolved};
use vanum::metrics::{self, HorizonTrace};
use vanum::offline::{solve_offline_indexed, OfflineOptions};
use vanum::slot_solver::{Backend, Theta};
use vanum::stationary::{integrate_ode, lyapunov, slot_responses, solve_optstat, OdeOptions};

#[derive(Parser)]
#[command(name = "vanum", version, about = "Variance-aware utility maximization: online allocator, offline and stationary oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario name (see `validate-config --list`).
    #[arg(long)]
    scenario: Option<String>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the horizon; checkpoints beyond it are dropped.
    #[arg(long)]
    horizon: Option<usize>,
    /// Override the solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory, or a CSV path for commands that write one file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Slot solver backend.
    #[arg(long)]
    backend: Option<Backend>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the online allocator and write one trace per seed.
    RunAvr(Common),
    /// Solve the offline problem on the realization of a trace.
    SolveOffline {
        #[command(flatten)]
        common: Common,
        /// Trace CSV written by `run-avr` under the same configuration.
        #[arg(long)]
        realization: PathBuf,
    },
    /// Solve the stationary program and check the slot solver at its fixed point.
    SolveStationary(Common),
    /// Integrate the mean ODE.
    Ode {
        #[command(flatten)]
        common: Common,
        /// Start `m_1,..,m_N,v_1,..,v_N`; defaults to the configured initial state.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 200.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
    },
    /// Full experiment: online runs, offline gap ladder, stationary program.
    Compare(Common),
    /// Print the constraint universe with its certified bounds.
    DumpUniverse(Common),
    /// Resolve and validate a configuration without running it.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
        /// List the built-in scenarios.
        #[arg(long)]
        list: bool,
        /// Print the configuration as canonical TOML instead of the report.
        #[arg(long)]
        print: bool,
    },
}

impl Common {
    fn load(&self) -> anyhow::Result<Resolved> {
        let mut cfg = match (&self.config, &self.scenario) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => harness::scenario(name).with_context(|| format!("unknown scenario `{name}`"))?,
            (None, None) => bail!("one of --config or --scenario is required"),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
            cfg.checkpoints.retain(|&c| c <= h);
        }
        if let Some(tol) = self.tol {
            cfg.tolerances.solver = tol;
        }
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(out) = self.out.as_ref().filter(|o| !is_csv(o)) {
            cfg.output_dir = out.display().to_string();
        }
        Ok(cfg.resolve()?)
    }
}

fn out_dir(r: &Resolved) -> PathBuf {
    PathBuf::from(&r.config.output_dir)
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// `--out` names either a CSV file or a directory that receives `default_name`.
fn csv_target(out: &Path, default_name: &str) -> anyhow::Result<PathBuf> {
    let path = if is_csv(out) { out.to_path_buf() } else { out.join(default_name) };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
    }
    Ok(path)
}

fn fmt_vec(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn report_check(name: &str, passed: bool, detail: &str) -> bool {
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn run_avr_cmd(c: &Common) -> anyhow::Result<bool> {
    let r = c.load()?;
    let out = c.out.clone().unwrap_or_else(|| out_dir(&r));
    if is_csv(&out) && r.config.seeds.len() > 1 {
        bail!("--out names a single file; pass --seed or an output directory");
    }
    let mut ok = true;
    for &seed in &r.config.seeds {
        let process = r.process.clone().with_seed(seed);
        let trace = run_avr(&process, &r.universe, &r.profile, r.config.horizon, r.theta0.clone(), &r.slot_options())
            .with_context(|| format!("seed {seed}"))?;
        let path = csv_target(&out, &io::trace_file(seed))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path).with_context(|| path.display().to_string())?);
        trace.write_csv(&mut w, &r.profile, Some(&r.digest))?;
        w.flush()?;
        let theta = trace.theta_path.as_ref().and_then(|p| p.last()).expect("nonempty horizon");
        let moments = metrics::horizon_moments(&trace.allocations)?;
        println!("seed {seed}: wrote {}", path.display());
        println!("  theta(T).m = {}", fmt_vec(&theta.m));
        println!("  theta(T).v = {}", fmt_vec(&theta.v));
        println!("  m^T = {}", fmt_vec(&moments.iter().map(|x| x.0).collect::<Vec<_>>()));
        println!("  Var^T = {}", fmt_vec(&moments.iter().map(|x| x.1).collect::<Vec<_>>()));
        println!("  phi_T = {:.9}", metrics::objective_phi(&trace, &r.profile)?);
        let worst = trace
            .allocations
            .iter()
            .zip(&trace.constraint_indices)
            .map(|(a, &k)| r.universe.get(k).value(a))
            .fold(f64::NEG_INFINITY, f64::max);
        ok &= report_check(&format!("seed {seed} feasibility"), worst <= 1e-8, &format!("max c_t(r(t)) = {worst:e}"));
    }
    Ok(ok)
}

fn write_allocations(path: &Path, trace: &HorizonTrace, r: &Resolved) -> anyhow::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| path.display().to_string())?);
    trace.write_csv(&mut w, &r.profile, Some(&r.digest))?;
    w.flush()?;
    Ok(())
}

fn solve_offline_cmd(c: &Common, realization: &Path) -> anyhow::Result<bool> {
    let r = c.load()?;
    let trace = io::load_trace(realization, Some(&r.digest))?;
    let opts = OfflineOptions {
        tol: r.config.tolerances.solver,
        ..OfflineOptions::default()
    };
    let sol = solve_offline_indexed(&trace.constraint_indices, &r.universe, &r.profile, &opts, None)?;
    let online = metrics::objective_phi(&trace, &r.profile)?;
    let gap = sol.objective - online;
    println!("horizon: {}", trace.len());
    println!("offline objective: {:.12}", sol.objective);
    println!("trace objective: {:.12}", online);
    println!("gap: {gap:e}");
    if let Some(out) = &c.out {
        let path = csv_target(out, "offline.csv")?;
        let best = HorizonTrace {
            allocations: sol.allocations.clone(),
            constraint_indices: trace.constraint_indices.clone(),
            theta_path: None,
        };
        write_allocations(&path, &best, &r)?;
        println!("wrote {}", path.display());
    }
    let mut ok = report_check(
        "offline kkt",
        sol.kkt_residual <= r.config.tolerances.solver,
        &format!("residual {:e}", sol.kkt_residual),
    );
    ok &= report_check("gap nonnegative", gap >= -r.config.tolerances.gap, &format!("{gap:e}"));
    Ok(ok)
}

fn solve_stationary_cmd(c: &Common) -> anyhow::Result<bool> {
    let r = c.load()?;
    let sol = solve_optstat(&r.universe, r.pi(), &r.profile, r.config.tolerances.solver)?;
    println!("theta_pi.m = {}", fmt_vec(&sol.theta_pi.m));
    println!("theta_pi.v = {}", fmt_vec(&sol.theta_pi.v));
    println!("e_pi = {}", fmt_vec(&sol.e_pi));
    println!("objective = {:.12}", sol.objective);
    for (k, rho) in sol.rho.iter().enumerate() {
        println!("rho[{k}] = {}  mu = {:.6e}", fmt_vec(rho), sol.mu[k]);
    }
    let responses = slot_responses(&sol.theta_pi, &r.universe, &r.profile, &r.slot_options())?;
    let worst = responses
        .iter()
        .zip(&sol.rho)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0f64, f64::max);
    let mut ok = report_check(
        "stationary kkt",
        sol.kkt_residual <= r.config.tolerances.solver,
        &format!("residual {:e}", sol.kkt_residual),
    );
    ok &= report_check("slot solver at theta_pi", worst <= 1e-4, &format!("max deviation {worst:e}"));
    Ok(ok)
}

fn ode_cmd(c: &Common, theta0: Option<&[f64]>, t_end: f64, dt: f64) -> anyhow::Result<bool> {
    let r = c.load()?;
    let start = match theta0 {
        Some(x) => {
            if x.len() != 2 * r.profile.len() {
                bail!("--theta0 needs {} values (m then v), got {}", 2 * r.profile.len(), x.len());
            }
            Theta::from_slice(x)?
        }
        None => r.theta0.clone(),
    };
    start.check(&r.profile)?;
    let opts = OdeOptions {
        t_end,
        dt,
        ..OdeOptions::default()
    };
    let traj = integrate_ode(&start, &r.universe, r.pi(), &r.profile, &opts)?;
    let target = solve_optstat(&r.universe, r.pi(), &r.profile, r.config.tolerances.solver)?;
    let dist = traj.terminal().distance_inf(&target.theta_pi);
    println!("terminal m = {}", fmt_vec(&traj.terminal().m));
    println!("terminal v = {}", fmt_vec(&traj.terminal().v));
    println!("terminal drift = {:e}", traj.terminal_residual);
    if let Some(out) = &c.out {
        let path = csv_target(out, "ode.csv")?;
        let mut w = csv::Writer::from_path(&path)?;
        let n = r.profile.len();
        let mut header = vec!["tau".to_string()];
        header.extend((1..=n).map(|i| format!("m_{i}")));
        header.extend((1..=n).map(|i| format!("v_{i}")));
        header.push("lyapunov".into());
        w.write_record(&header)?;
        for (tau, th) in &traj.samples {
            let mut rec = vec![format!("{tau:?}")];
            rec.extend(th.m.iter().chain(&th.v).map(|x| format!("{x:?}")));
            rec.push(format!("{:?}", lyapunov(th, &r.profile)?));
            w.write_record(&rec)?;
        }
        w.flush()?;
        println!("wrote {}", path.display());
    }
    let mut ok = report_check(
        "no clamping",
        traj.clamping_events == 0,
        &format!("{} events, max excess {:e}", traj.clamping_events, traj.max_excess),
    );
    ok &= report_check("reaches theta_pi", dist <= 1e-3, &format!("distance {dist:e}"));
    Ok(ok)
}

fn compare_cmd(c: &Common) -> anyhow::Result<bool> {
    let r = c.load()?;
    let report = harness::run_resolved(&r);
    let dir = out_dir(&r);
    for p in io::write_outputs(&report, &r.profile, &dir)? {
        println!("wrote {}", p.display());
    }
    for (h, g) in report.median_relative_gaps() {
        match g {
            Some(g) => println!("median relative gap at T={h}: {g:e}"),
            None => println!("median relative gap at T={h}: n/a"),
        }
    }
    let mut ok = true;
    for chk in report.checks() {
        ok &= report_check(&chk.name, chk.passed, &chk.detail);
    }
    Ok(ok)
}

fn dump_universe_cmd(c: &Common) -> anyhow::Result<bool> {
    let r = c.load()?;
    let b = r.universe.bounds();
    println!("users: {}", r.universe.n_users());
    println!("r_max = {}", b.r_max);
    println!("v_max = {}", b.v_max);
    println!("delta_feas = {}", b.delta_feas);
    for (k, (con, p)) in r.universe.constraints().iter().zip(r.pi()).enumerate() {
        println!("[{k}] pi = {p:.6} {con:?}");
    }
    print!("{}", r.validation);
    Ok(report_check("assumptions", r.validation.all_passed(), "utility profile validation"))
}

fn validate_config_cmd(c: &Common, list: bool, print: bool) -> anyhow::Result<bool> {
    if list {
        for cfg in harness::scenario_library() {
            println!("{}", cfg.scenario);
        }
        if c.config.is_none() && c.scenario.is_none() {
            return Ok(true);
        }
    }
    let r = c.load()?;
    if print {
        print!("{}", r.config.to_toml()?);
        return Ok(true);
    }
    println!("scenario: {}", r.config.scenario);
    println!("config_digest: {}", r.digest);
    print!("{}", r.validation);
    Ok(report_check("config", true, "valid"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::RunAvr(c) => run_avr_cmd(c),
        Command::SolveOffline { common, realization } => solve_offline_cmd(common, realization),
        Command::SolveStationary(c) => solve_stationary_cmd(c),
        Command::Ode { common, theta0, t_end, dt } => ode_cmd(common, theta0.as_deref(), *t_end, *dt),
        Command::Compare(c) => compare_cmd(c),
        Command::DumpUniverse(c) => dump_universe_cmd(c),
        Command::ValidateConfig { common, list, print } => validate_config_cmd(common, *list, *print),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
