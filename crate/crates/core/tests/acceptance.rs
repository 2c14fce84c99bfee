//! Acceptance criteria AC1-AC9, one pass/fail line each.
//!
//! Oracles here are independent of the solvers under test: nested golden
//! section searches over explicit feasible intervals, block coordinate ascent,
//! and direct evaluation of the objectives.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vanum::avr::run_avr;
use vanum::constraints::{derive_rmax, project_feasible, Constraint, ConstraintUniverse, QualityMap};
use vanum::harness::{self, io, run_resolved, scenarios, ExperimentConfig, Resolved};
use vanum::metrics::phi;
use vanum::offline::{solve_offline, solve_offline_warm, OfflineOptions};
use vanum::slot_solver::{slot_objective, solve_optavr, weights_from_theta, Theta};
use vanum::stationary::{
    fixed_point_iteration, integrate_ode, lyapunov, sample_achievable, sample_h, slot_responses, solve_optstat,
    solve_optstat_from, stationary_objective, OdeOptions,
};
use vanum::utilities::{validate_profile, Shift, UeFamily, UtilityProfile, UvFamily};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Maximizer of a unimodal `f` on `[lo, hi]`: a uniform grid scan followed by golden-section refinement.
fn grid_golden(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, grid: usize) -> (f64, f64) {
    if hi <= lo {
        return (lo, f(lo));
    }
    let h = (hi - lo) / grid as f64;
    let mut best = (lo, f(lo));
    for k in 1..=grid {
        let x = if k == grid { hi } else { lo + h * k as f64 };
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if b - a < 1e-13 * (1.0 + b.abs()) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    for x in [a, b, 0.5 * (a + b)] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Largest `y` in `[0, cap]` with `c(prefix, y) <= 0`, by bisection (the constraint increases in `y`).
fn last_feasible(c: &Constraint, prefix: &[f64], cap: f64) -> f64 {
    let at = |y: f64| {
        let mut r = prefix.to_vec();
        r.push(y);
        c.value(&r)
    };
    if at(0.0) > 0.0 {
        return 0.0;
    }
    if at(cap) <= 0.0 {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Maximizes a concave `f` over `{r >= 0 : c(r) <= 0}` for `N <= 2` by nested grid/golden search.
fn maximize_over(c: &Constraint, f: &dyn Fn(&[f64]) -> f64, grid: usize) -> (Vec<f64>, f64) {
    let n = c.dim();
    let cap0 = last_feasible(c, &[], c.user_bound(0).min(1e6));
    if n == 1 {
        let (x, fx) = grid_golden(&|x| f(&[x]), 0.0, cap0, grid);
        return (vec![x], fx);
    }
    // The optimum over r_2 given r_1 is concave in r_1, so the outer search is unimodal.
    let inner = |x: f64| {
        let cap1 = last_feasible(c, &[x], c.user_bound(1).min(1e6));
        grid_golden(&|y| f(&[x, y]), 0.0, cap1, grid / 4)
    };
    let (x, fx) = grid_golden(&|x| inner(x).1, 0.0, cap0, grid);
    (vec![x, inner(x).0], fx)
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

fn random_constraint(n: usize, rng: &mut ChaCha8Rng) -> Constraint {
    let peaks: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
    match rng.random_range(0..4) {
        0 => Constraint::capacity(&peaks),
        1 => Constraint::exogenous(&peaks, rng.random_range(0.0..0.6)),
        2 => Constraint::QualityMapped {
            peaks,
            maps: (0..n)
                .map(|_| QualityMap {
                    linear: rng.random_range(0.5..1.5),
                    quadratic: rng.random_range(0.0..0.8),
                })
                .collect(),
        },
        _ => {
            let normal: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..2.0)).collect();
            Constraint::linear(&normal, rng.random_range(0.5..3.0))
        }
    }
}

fn random_families(rng: &mut ChaCha8Rng) -> (UeFamily, UvFamily) {
    let ue = match rng.random_range(0..3) {
        0 => UeFamily::Linear {
            slope: rng.random_range(0.5..2.0),
        },
        _ => UeFamily::AlphaFair {
            alpha: [0.5, 1.0, 2.0, 3.0][rng.random_range(0..4)],
            shift: Shift::AboveFloor(rng.random_range(0.01..0.5)),
        },
    };
    let uv = if rng.random_bool(0.5) {
        UvFamily::Linear {
            kappa: rng.random_range(0.1..2.0),
        }
    } else {
        UvFamily::SqrtShifted {
            delta: rng.random_range(0.01..1.0),
        }
    };
    (ue, uv)
}

fn random_profile(n: usize, r_max: f64, rng: &mut ChaCha8Rng) -> UtilityProfile {
    let fams: Vec<_> = (0..n).map(|_| random_families(rng)).collect();
    UtilityProfile::new(&fams, r_max).expect("random profile")
}

fn random_feasible(c: &Constraint, r_max: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let x: Vec<f64> = (0..c.dim()).map(|_| rng.random::<f64>() * r_max).collect();
    project_feasible(c, &x).expect("projection")
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn ac1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_r, mut worst_f, mut slowest) = (0.0f64, 0.0f64, Duration::ZERO);
    for k in 0..20 {
        let n = 1 + k % 2;
        let c = random_constraint(n, &mut rng);
        let universe = ConstraintUniverse::new(vec![c.clone()]).map_err(fail)?;
        let profile = random_profile(n, universe.r_max(), &mut rng);
        let theta = sample_h(&profile, &mut rng);
        let start = Instant::now();
        let sol = solve_optavr(&theta, &c, &profile).map_err(|e| format!("instance {k}: {e}"))?;
        slowest = slowest.max(start.elapsed());
        let weights = weights_from_theta(&theta, &profile).map_err(fail)?;
        let obj = |r: &[f64]| slot_objective(&weights, &theta.m, r);
        let (r_grid, f_grid) = maximize_over(&c, &obj, 4000);
        let f_sol = obj(&sol.r_star);
        let dr = r_grid.iter().zip(&sol.r_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let df = (f_grid - f_sol).abs();
        ensure(dr <= 1e-3 && df <= 1e-6, || {
            format!("instance {k} ({}): |dr| = {dr:e}, |df| = {df:e}, grid {r_grid:?}, solver {:?}", c.family_name(), sol.r_star)
        })?;
        worst_r = worst_r.max(dr);
        worst_f = worst_f.max(df);
    }
    ensure(slowest < Duration::from_secs(1), || format!("slowest instance took {slowest:?}"))?;
    Ok(format!("20 instances, max |dr| {worst_r:.1e}, max |dphi| {worst_f:.1e}, slowest {slowest:.1?}"))
}

/// Block coordinate ascent on `phi_T`: every slot in turn is maximized exactly with the others fixed.
fn offline_oracle(c_seq: &[Constraint], profile: &UtilityProfile) -> f64 {
    let t_len = c_seq.len();
    let mut r: Vec<Vec<f64>> = c_seq.iter().map(|c| vec![0.0; c.dim()]).collect();
    let mut best = phi(&r, profile).unwrap_or(f64::NEG_INFINITY);
    for _sweep in 0..400 {
        let before = best;
        for t in 0..t_len {
            let f = |x: &[f64]| {
                let mut trial = r.clone();
                trial[t] = x.to_vec();
                phi(&trial, profile).unwrap_or(f64::NEG_INFINITY)
            };
            let (x, fx) = maximize_over(&c_seq[t], &f, 200);
            if fx >= best {
                r[t] = x;
                best = fx;
            }
        }
        if best - before < 1e-12 {
            break;
        }
    }
    best
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for k in 0..10 {
        let n = 1 + k % 2;
        let t_len = rng.random_range(2..=6);
        let c_seq: Vec<Constraint> = (0..t_len).map(|_| random_constraint(n, &mut rng)).collect();
        let bounds = derive_rmax(&c_seq).map_err(fail)?;
        let profile = random_profile(n, bounds.r_max, &mut rng);
        let sol = solve_offline(&c_seq, &profile, &OfflineOptions::default()).map_err(|e| format!("instance {k}: {e}"))?;
        let oracle = offline_oracle(&c_seq, &profile);
        let diff = (sol.objective - oracle).abs();
        ensure(diff <= 1e-4 && sol.objective >= oracle - 1e-9, || {
            format!("instance {k} (T = {t_len}, N = {n}): solver {} vs oracle {oracle}", sol.objective)
        })?;
        worst = worst.max(diff);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("10 instances, max |dphi| {worst:.1e}, {elapsed:.1?}"))
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let mut cfg = scenarios::two_constraint();
    cfg.horizon = 20_000;
    cfg.checkpoints = vec![200, 2000, 20_000];
    cfg.seeds = vec![1, 2, 3, 4, 5];
    let report = harness::run_experiment(&cfg).map_err(fail)?;
    let mut worst_gap = f64::INFINITY;
    for s in &report.seeds {
        let r = s.outcome.as_ref().map_err(|e| format!("seed {}: {e}", s.seed))?;
        for g in &r.gaps {
            worst_gap = worst_gap.min(g.gap);
        }
    }
    ensure(worst_gap >= -1e-8, || format!("negative gap {worst_gap:e}"))?;
    let medians: Vec<f64> = report.median_relative_gaps().into_iter().map(|(_, g)| g.unwrap_or(f64::NAN)).collect();
    ensure(medians.windows(2).all(|w| w[1] <= w[0]), || format!("median relative gaps not nonincreasing: {medians:?}"))?;
    ensure(medians[2] <= 0.02, || format!("median relative gap at T = 20000 is {:e}", medians[2]))?;
    Ok(format!(
        "median relative gaps {:.2e} / {:.2e} / {:.2e}, min gap {worst_gap:.1e}, {:.1?}",
        medians[0],
        medians[1],
        medians[2],
        start.elapsed()
    ))
}

fn ac4() -> Outcome {
    let mut lines = Vec::new();
    for mut cfg in scenarios::stochastic_scenarios() {
        cfg.horizon = 100_000;
        cfg.checkpoints = vec![200];
        cfg.seeds = vec![1, 2, 3, 4, 5];
        let report = harness::run_experiment(&cfg).map_err(fail)?;
        let results = report
            .seeds
            .iter()
            .map(|s| s.outcome.as_ref().map_err(|e| format!("{} seed {}: {e}", cfg.scenario, s.seed)))
            .collect::<Result<Vec<_>, _>>()?;
        let n = cfg.users.len();
        let (mut dm, mut dv, mut de) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            dm = dm.max(median(results.iter().map(|r| r.deviations.mean[i]).collect()));
            dv = dv.max(median(results.iter().map(|r| r.deviations.variance[i]).collect()));
            de = de.max(median(results.iter().map(|r| r.deviations.qoe[i]).collect()));
        }
        ensure(dm <= 5e-2 && dv <= 5e-2 && de <= 1e-1, || {
            format!("{}: median deviations m {dm:e}, v {dv:e}, e {de:e}", cfg.scenario)
        })?;
        lines.push(format!("{} {:.1e}/{:.1e}/{:.1e}", cfg.scenario, dm, dv, de));
    }
    Ok(format!("median deviations m/v/e: {}", lines.join(", ")))
}

fn resolved_library() -> Result<Vec<Resolved>, String> {
    scenarios::scenario_library().iter().map(|c| c.resolve().map_err(fail)).collect()
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut worst_slot, mut worst_fp) = (0.0f64, 0.0f64);
    for r in resolved_library()? {
        let name = &r.config.scenario;
        let sol = solve_optstat(&r.universe, r.pi(), &r.profile, 1e-10).map_err(|e| format!("{name}: {e}"))?;
        let responses = slot_responses(&sol.theta_pi, &r.universe, &r.profile, &r.slot_options()).map_err(fail)?;
        let dev = responses
            .iter()
            .zip(&sol.rho)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        ensure(dev <= 1e-4, || format!("{name}: slot response at theta_pi off by {dev:e}"))?;
        worst_slot = worst_slot.max(dev);
        for k in 0..10 {
            let start = sample_h(&r.profile, &mut rng);
            let (fp, _) = fixed_point_iteration(&start, &r.universe, r.pi(), &r.profile, 0.5, 1e-9, 100_000)
                .map_err(|e| format!("{name} start {k}: {e}"))?;
            let d = fp.distance_inf(&sol.theta_pi);
            ensure(d <= 1e-3, || format!("{name} start {k}: fixed point {d:e} from theta_pi"))?;
            worst_fp = worst_fp.max(d);
        }
    }
    Ok(format!("5 scenarios, max slot deviation {worst_slot:.1e}, 10 starts each, max fixed-point distance {worst_fp:.1e}"))
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let opts = OdeOptions::default();
    let (mut worst_end, mut worst_avr) = (0.0f64, 0.0f64);
    for r in resolved_library()? {
        let name = &r.config.scenario;
        let target = solve_optstat(&r.universe, r.pi(), &r.profile, 1e-10).map_err(fail)?.theta_pi;
        let mut terminals = Vec::new();
        for k in 0..5 {
            let start = sample_h(&r.profile, &mut rng);
            let traj = integrate_ode(&start, &r.universe, r.pi(), &r.profile, &opts).map_err(|e| format!("{name} start {k}: {e}"))?;
            let d = traj.terminal().distance_inf(&target);
            ensure(traj.clamping_events == 0 && d <= 1e-3, || {
                format!("{name} start {k}: {} clamping events, terminal distance {d:e}", traj.clamping_events)
            })?;
            worst_end = worst_end.max(d);
            terminals.push(traj.terminal().clone());
        }
        for k in 0..5 {
            let start = sample_achievable(&r.universe, r.pi(), &r.profile, &mut rng).map_err(fail)?;
            let traj = integrate_ode(&start, &r.universe, r.pi(), &r.profile, &opts).map_err(fail)?;
            let mut prev: Option<f64> = None;
            for (tau, th) in &traj.samples {
                if th.distance_inf(&target) <= 1e-3 {
                    break;
                }
                let l = lyapunov(th, &r.profile).map_err(fail)?;
                if let Some(p) = prev {
                    ensure(l < p, || format!("{name} achievable start {k}: L rose from {p} to {l} at tau = {tau}"))?;
                }
                prev = Some(l);
            }
        }
        let process = r.process.clone().with_seed(1);
        let trace = run_avr(&process, &r.universe, &r.profile, 100_000, r.theta0.clone(), &r.slot_options()).map_err(fail)?;
        let theta_t: &Theta = trace.theta_path.as_ref().and_then(|p| p.last()).ok_or("empty trace")?;
        let d = terminals.iter().map(|t| t.distance_inf(theta_t)).fold(0.0, f64::max);
        ensure(d <= 5e-2, || format!("{name}: ODE terminal {d:e} from AVR theta(1e5)"))?;
        worst_avr = worst_avr.max(d);
    }
    Ok(format!(
        "5 scenarios x 5 starts, max terminal distance {worst_end:.1e}, no clamping, L decreasing, max ODE-vs-AVR {worst_avr:.1e}"
    ))
}

fn ac7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_slack = f64::INFINITY;
    for r in resolved_library()? {
        let name = &r.config.scenario;
        let u = &r.universe;
        let r_max = r.profile.r_max();
        let t_len = 12;
        let c_seq: Vec<Constraint> = (0..t_len).map(|t| u.get(t % u.len()).clone()).collect();
        for _ in 0..1000 {
            let a = rng.random::<f64>();
            let x: Vec<Vec<f64>> = c_seq.iter().map(|c| random_feasible(c, r_max, &mut rng)).collect();
            let y: Vec<Vec<f64>> = c_seq.iter().map(|c| random_feasible(c, r_max, &mut rng)).collect();
            let z: Vec<Vec<f64>> = x.iter().zip(&y).map(|(p, q)| p.iter().zip(q).map(|(s, t)| a * s + (1.0 - a) * t).collect()).collect();
            let slack = phi(&z, &r.profile).map_err(fail)? - a * phi(&x, &r.profile).map_err(fail)? - (1.0 - a) * phi(&y, &r.profile).map_err(fail)?;
            worst_slack = worst_slack.min(slack);
            ensure(slack >= -1e-10, || format!("{name}: phi_T concavity slack {slack:e}"))?;

            let xs: Vec<Vec<f64>> = u.constraints().iter().map(|c| random_feasible(c, r_max, &mut rng)).collect();
            let ys: Vec<Vec<f64>> = u.constraints().iter().map(|c| random_feasible(c, r_max, &mut rng)).collect();
            let zs: Vec<Vec<f64>> = xs.iter().zip(&ys).map(|(p, q)| p.iter().zip(q).map(|(s, t)| a * s + (1.0 - a) * t).collect()).collect();
            let f = |rho: &[Vec<f64>]| stationary_objective(u, r.pi(), &r.profile, rho).map_err(fail);
            let slack = f(&zs)? - a * f(&xs)? - (1.0 - a) * f(&ys)?;
            worst_slack = worst_slack.min(slack);
            ensure(slack >= -1e-10, || format!("{name}: phi_pi concavity slack {slack:e}"))?;
        }
        // Two starts reach the same optimum.
        let opts = OfflineOptions {
            pool: false,
            ..OfflineOptions::default()
        };
        let short: Vec<Constraint> = c_seq[..6].to_vec();
        let w1: Vec<Vec<f64>> = short.iter().map(|c| random_feasible(c, r_max, &mut rng)).collect();
        let w2: Vec<Vec<f64>> = short.iter().map(|c| random_feasible(c, r_max, &mut rng)).collect();
        let s1 = solve_offline_warm(&short, &r.profile, &opts, Some(&w1)).map_err(fail)?;
        let s2 = solve_offline_warm(&short, &r.profile, &opts, Some(&w2)).map_err(fail)?;
        let d = s1.allocations.iter().flatten().zip(s2.allocations.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(d <= 1e-3, || format!("{name}: offline two-start distance {d:e}"))?;
        let i1: Vec<Vec<f64>> = u.constraints().iter().map(|c| random_feasible(c, r_max, &mut rng)).collect();
        let i2: Vec<Vec<f64>> = u.constraints().iter().map(|c| random_feasible(c, r_max, &mut rng)).collect();
        let p1 = solve_optstat_from(u, r.pi(), &r.profile, 1e-9, Some(i1)).map_err(fail)?;
        let p2 = solve_optstat_from(u, r.pi(), &r.profile, 1e-9, Some(i2)).map_err(fail)?;
        let d = p1.rho.iter().flatten().zip(p2.rho.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(d <= 1e-3, || format!("{name}: stationary two-start distance {d:e}"))?;
    }
    Ok(format!("5 scenarios x 1000 combinations for phi_T and phi_pi, min slack {worst_slack:.1e}, two-start agreement"))
}

fn ac8() -> Outcome {
    let mut shipped = Vec::new();
    for alpha in [0.5, 1.0, 2.0, 3.0] {
        for uv in [UvFamily::Linear { kappa: 0.5 }, UvFamily::SqrtShifted { delta: 1e-2 }] {
            shipped.push((UeFamily::AlphaFair { alpha, shift: Shift::AboveFloor(1e-2) }, uv));
        }
    }
    shipped.push((UeFamily::Linear { slope: 1.0 }, UvFamily::Linear { kappa: 1.0 }));
    shipped.push((UeFamily::Linear { slope: 1.0 }, UvFamily::SqrtShifted { delta: 1e-2 }));
    for (k, fam) in shipped.iter().enumerate() {
        let p = UtilityProfile::new(&[*fam], 3.0).map_err(fail)?;
        let report = validate_profile(&p);
        ensure(report.all_passed(), || format!("shipped family {k} fails:\n{report}"))?;
    }
    let bare = UtilityProfile::new(&[(UeFamily::Linear { slope: 1.0 }, UvFamily::SqrtShifted { delta: 0.0 })], 3.0);
    let rejected = match bare {
        Err(_) => true,
        Ok(p) => validate_profile(&p).failures().any(|c| c.assumption == "U.V.1"),
    };
    ensure(rejected, || "sqrt(v) without shift was accepted".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut universes = 0;
    for r in resolved_library()? {
        let name = &r.config.scenario;
        ensure(r.validation.all_passed(), || format!("{name} profile:\n{}", r.validation))?;
        let b = derive_rmax(r.universe.constraints()).map_err(fail)?;
        ensure(b.r_max.is_finite() && b.delta_feas > 0.0, || format!("{name}: bounds {b:?}"))?;
        let n = r.universe.n_users();
        for c in r.universe.constraints() {
            ensure(c.value(&vec![0.0; n]) <= 0.0, || format!("{name}: origin infeasible"))?;
            ensure(c.value(&vec![b.delta_feas; n]) < 0.0, || format!("{name}: delta_feas point not strictly feasible"))?;
            for _ in 0..1000 {
                let x = random_feasible(c, 2.0 * b.r_max, &mut rng);
                ensure(x.iter().all(|&xi| xi <= b.r_max + 1e-9), || format!("{name}: feasible point {x:?} beyond r_max {}", b.r_max))?;
                let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 * b.r_max).collect();
                let a = rng.random::<f64>();
                let z: Vec<f64> = x.iter().zip(&y).map(|(s, t)| a * s + (1.0 - a) * t).collect();
                let gap = a * c.value(&x) + (1.0 - a) * c.value(&y) - c.value(&z);
                ensure(gap >= -1e-12, || format!("{name}: convexity gap {gap:e}"))?;
            }
        }
        universes += 1;
    }
    Ok(format!(
        "{} shipped families pass, sqrt(v) rejected, {universes} universes certified",
        shipped.len()
    ))
}

fn run_to_dir(cfg: &ExperimentConfig, dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let r = cfg.resolve().map_err(fail)?;
    let report = run_resolved(&r);
    let mut paths = io::write_outputs(&report, &r.profile, dir).map_err(fail)?;
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).map_err(fail)?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), bytes))
        })
        .collect()
}

fn ac9() -> Outcome {
    let mut files = 0;
    for mut cfg in scenarios::scenario_library() {
        cfg.horizon = 3000;
        cfg.checkpoints = vec![200, 2000];
        cfg.seeds = vec![7, 8];
        let a = tempfile::tempdir().map_err(fail)?;
        let b = tempfile::tempdir().map_err(fail)?;
        let first = run_to_dir(&cfg, a.path())?;
        let second = run_to_dir(&cfg, b.path())?;
        ensure(first.len() == second.len(), || format!("{}: different file sets", cfg.scenario))?;
        for ((na, ba), (nb, bb)) in first.iter().zip(&second) {
            ensure(na == nb && ba == bb, || format!("{}: {na} differs between runs", cfg.scenario))?;
        }
        files += first.len();
    }
    Ok(format!("{files} files byte-identical across two runs"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("AC1 slot solver vs grid oracle", ac1),
        ("AC2 offline solver vs coordinate oracle", ac2),
        ("AC3 asymptotic optimality gap", ac3),
        ("AC4 tracked statistics at T = 1e5", ac4),
        ("AC5 stationary fixed point", ac5),
        ("AC6 ODE convergence and Lyapunov descent", ac6),
        ("AC7 concavity and uniqueness", ac7),
        ("AC8 assumption validators", ac8),
        ("AC9 determinism", ac9),
    ];
    let start = Instant::now();
    let results: Vec<(&str, Outcome, Duration)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(name, f)| {
                s.spawn(move || {
                    let t = Instant::now();
                    let out = std::panic::catch_unwind(f).unwrap_or_else(|p| {
                        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
                    });
                    (name, out, t.elapsed())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("criterion thread")).collect()
    });
    let mut failed = 0;
    for (name, out, took) in &results {
        match out {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.1?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{took:.1?}]");
            }
        }
    }
    println!("{} of {} criteria passed in {:.1?}", results.len() - failed, results.len(), start.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
