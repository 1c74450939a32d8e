//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail. Pass criterion numbers as arguments to run a
//! subset: `cargo test --test acceptance -- 6 7`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ilv_core::behavior::{best_response_model_b, in_bad_region, model_a_with_method, ResponseMethod};
use ilv_core::election::ElectionService;
use ilv_core::engine::{radius_at, run_ilv, RadiusSchedule};
use ilv_core::experiment::presets::{
    median_rows, objective_rows, optimum_rows, prop1_plan, prop2_plan, residual_plans, residual_rows,
    thm1_plans, thm2_plans, CheckRow, DEFAULT_SEED,
};
use ilv_core::experiment::{replay_run, run_plan, ExperimentPlan, RunReport};
use ilv_core::geometry::{lq_distance, lq_norm, mean_point};
use ilv_core::oracles::ssgm_reference;
use ilv_core::population::{replay, Family, Marginal};
use ilv_core::utility::{
    check_dual_norm_gradient, DecomposableUtility, DlcdUtility, LpNormedUtility, PiecewiseLinear,
    WeightedEuclideanUtility,
};
use ilv_core::{BehaviorModel, FeasibleRegion, IlvConfig, NormOrder, Point, PopulationSpec, UtilityModel};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

const QS: [NormOrder; 5] = [
    NormOrder::One,
    NormOrder::Two,
    NormOrder::Infinity,
    NormOrder::General(1.5),
    NormOrder::General(3.0),
];

fn run_report(plan: &ExperimentPlan) -> RunReport {
    run_plan(plan, 0).expect("plan runs").report
}

/// Folds check rows into one line: the row closest to its limit, plus
/// every failing row.
fn summarize(rows: &[CheckRow], extra: &str) -> Outcome {
    let pass = !rows.is_empty() && rows.iter().all(|r| r.passed);
    let tightest = rows
        .iter()
        .max_by(|a, b| (a.measured / a.tolerance).total_cmp(&(b.measured / b.tolerance)))
        .map(|r| format!("tightest {} = {:.3e} (limit {:.1e})", r.check, r.measured, r.tolerance))
        .unwrap_or_else(|| "no checks".into());
    let failing: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} = {:.3e}", r.check, r.measured))
        .collect();
    let mut detail = format!("{} checks, {tightest}{extra}", rows.len());
    if !failing.is_empty() {
        detail.push_str(&format!("; failing: {}", failing.join(", ")));
    }
    Outcome::new(pass, detail)
}

/// Wall time of one full run of the plan's first key.
fn single_run_seconds(plan: &ExperimentPlan) -> f64 {
    let key = plan.run_keys()[0];
    let start = Instant::now();
    replay_run(plan, key).expect("replay");
    start.elapsed().as_secs_f64()
}

fn optimum_suite(plans: Vec<ExperimentPlan>) -> Outcome {
    let mut rows = Vec::new();
    let mut slowest: f64 = 0.0;
    for plan in &plans {
        rows.extend(optimum_rows(&run_report(plan)));
        slowest = slowest.max(single_run_seconds(plan));
    }
    rows.push(CheckRow::at_most("slowest single run (s)", slowest, 60.0));
    summarize(&rows, &format!(", slowest run {slowest:.2}s"))
}

fn criterion_1() -> Outcome {
    optimum_suite(thm1_plans(DEFAULT_SEED))
}

fn criterion_2() -> Outcome {
    optimum_suite(thm2_plans(DEFAULT_SEED))
}

fn criterion_3() -> Outcome {
    let plan = prop1_plan(DEFAULT_SEED);
    let rows = objective_rows(&run_report(&plan));
    summarize(&rows, "")
}

fn criterion_4() -> Outcome {
    let plan = prop2_plan(DEFAULT_SEED);
    let report = run_report(&plan);
    let runs = report.runs.len();
    let mut rows = median_rows(&report);
    rows.push(CheckRow::at_most("runs short of six", 6usize.saturating_sub(runs) as f64, 0.0));
    summarize(&rows, &format!(", {runs} runs"))
}

fn criterion_5() -> Outcome {
    let mut rows = Vec::new();
    let mut runs = 0;
    for plan in residual_plans(DEFAULT_SEED) {
        let report = run_report(&plan);
        let with_residual = report.runs.iter().filter(|r| r.residual.is_some()).count();
        rows.push(CheckRow::at_most(
            format!("{}: runs without a residual", plan.name),
            (report.runs.len() - with_residual) as f64,
            0.0,
        ));
        runs += with_residual;
        rows.extend(residual_rows(&report));
    }
    summarize(&rows, &format!(", {runs} terminal points"))
}

fn gaussian_population(p: NormOrder, seed: u64) -> PopulationSpec {
    PopulationSpec {
        family: Family::LpNormed { p },
        ideals: vec![
            Marginal::TruncatedGaussian { mean: 0.35, std: 0.2, lo: 0.0, hi: 1.0 },
            Marginal::TruncatedGaussian { mean: 0.6, std: 0.15, lo: 0.0, hi: 1.0 },
        ],
        seed,
    }
}

fn criterion_6() -> Outcome {
    let region = FeasibleRegion::cube(2, 0.0, 1.0).unwrap();
    let mut mismatched = Vec::new();
    let mut steps = 0;
    for q in QS {
        for seed in 0..3 {
            let mut cfg = IlvConfig::with_defaults(region.clone(), BehaviorModel::ModelB, q);
            cfg.initial = Point::from([0.9, 0.1]);
            cfg.stopping.max_updates = 1500;
            let spec = gaussian_population(q.dual(), seed);
            let a = run_ilv(&cfg, &mut spec.stream()).unwrap();
            let b = ssgm_reference(&cfg, &mut spec.stream()).unwrap();
            steps += a.updates();
            if a.iterates != b.iterates || a.terminal != b.terminal {
                mismatched.push(format!("B q={q} seed {seed}"));
            }
        }
    }

    // Model A with Euclidean voters in Euclidean balls: every step whose
    // responses all lie outside the bad region is an SSGM step.
    let mut good_steps = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mut cfg = IlvConfig::with_defaults(region.clone(), BehaviorModel::ModelA, NormOrder::Two);
        cfg.schedule = RadiusSchedule::Harmonic { r0: 0.2 };
        cfg.batch_size = 1;
        cfg.initial = Point::from([0.05, 0.95]);
        cfg.stopping.max_updates = 3000;
        let spec = gaussian_population(NormOrder::Two, 10 + seed);
        let a = run_ilv(&cfg, &mut spec.stream()).unwrap();
        let b = ssgm_reference(&cfg, &mut spec.stream()).unwrap();
        let voters = replay(&spec, a.responses.len());
        for t in 1..a.iterates.len() {
            let batch: Vec<_> = a.responses.iter().filter(|rec| rec.t == t).collect();
            if batch.iter().any(|rec| rec.bad_region) {
                continue;
            }
            let x = &a.iterates[t - 1].x;
            let r = a.iterates[t].r.unwrap();
            let pts: Vec<Point> = batch
                .iter()
                .map(|rec| best_response_model_b(&voters[rec.voter as usize], x, r, NormOrder::Two).unwrap().new_point)
                .collect();
            let expected = region.project(&mean_point(&pts)).unwrap();
            worst = worst.max(lq_distance(&expected, &a.iterates[t].x, NormOrder::Infinity));
            good_steps += 1;
        }
        let first_bad = a.responses.iter().position(|rec| rec.bad_region).unwrap_or(a.responses.len());
        for t in 0..=first_bad.min(b.iterates.len() - 1) {
            worst = worst.max(lq_distance(&a.iterates[t].x, &b.iterates[t].x, NormOrder::Infinity));
        }
    }
    let pass = mismatched.is_empty() && worst <= 1e-12 && good_steps > 1000;
    Outcome::new(
        pass,
        format!(
            "Model B vs reference: {} of 15 runs bit-identical over {steps} updates{}; Model A (2,2): {good_steps} \
             bad-region-free steps, max deviation {worst:.1e} (limit 1e-12)",
            15 - mismatched.len(),
            if mismatched.is_empty() { String::new() } else { format!(" (differ: {})", mismatched.join(", ")) }
        ),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Branch {
    LpTwo,
    LpOne,
    LpInf,
    BoxClamp,
    WeightedEuclid,
    Separable,
}

impl Branch {
    const ALL: [Branch; 6] = [
        Branch::LpTwo,
        Branch::LpOne,
        Branch::LpInf,
        Branch::BoxClamp,
        Branch::WeightedEuclid,
        Branch::Separable,
    ];

    fn method(self) -> ResponseMethod {
        match self {
            Branch::LpTwo => ResponseMethod::LpTwoProjection,
            Branch::LpOne => ResponseMethod::LpOneWaterfill,
            Branch::LpInf => ResponseMethod::LpInfLevel,
            Branch::BoxClamp => ResponseMethod::LpBoxClamp,
            Branch::WeightedEuclid => ResponseMethod::WeightedEuclideanWaterfill,
            Branch::Separable => ResponseMethod::SeparableBox,
        }
    }

    /// Strictly convex distance to a point, so a single maximizer.
    fn unique(self) -> bool {
        matches!(self, Branch::LpTwo | Branch::BoxClamp)
    }
}

struct Case {
    u: UtilityModel,
    x: Vec<f64>,
    r: f64,
    q: NormOrder,
    /// Lipschitz constant of `u` with respect to the ℒ∞ norm.
    lipschitz: f64,
}

fn random_case(branch: Branch, rng: &mut ChaCha8Rng) -> Case {
    let m = match branch {
        Branch::WeightedEuclid => rng.random_range(2..=4),
        _ => rng.random_range(1..=4),
    };
    let x: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
    let ideal: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..1.5)).collect();
    let r = rng.random_range(0.01..1.0);
    let any_q = QS[rng.random_range(0..QS.len())];
    let mf = m as f64;
    let (u, q, lipschitz): (UtilityModel, NormOrder, f64) = match branch {
        Branch::LpTwo => (LpNormedUtility::new(NormOrder::Two, ideal).into(), any_q, mf.sqrt()),
        Branch::LpOne => (LpNormedUtility::new(NormOrder::One, ideal).into(), any_q, mf),
        Branch::LpInf => (LpNormedUtility::new(NormOrder::Infinity, ideal).into(), any_q, 1.0),
        Branch::BoxClamp => {
            let p = rng.random_range(1.1..6.0);
            (
                LpNormedUtility::new(NormOrder::General(p), ideal).into(),
                NormOrder::Infinity,
                mf.powf(1.0 / p),
            )
        }
        Branch::WeightedEuclid => {
            let split = rng.random_range(1..m);
            let blocks = vec![(0..split).collect::<Vec<_>>(), (split..m).collect()];
            let weights: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..2.0)).collect();
            let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            let lipschitz = blocks
                .iter()
                .zip(&weights)
                .map(|(b, w)| w / norm * (b.len() as f64).sqrt())
                .sum();
            (WeightedEuclideanUtility::new(blocks, weights, ideal).unwrap().into(), NormOrder::Two, lipschitz)
        }
        Branch::Separable => {
            let mut lipschitz = 0.0;
            let components = ideal
                .iter()
                .map(|&v| {
                    let hw = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.3) };
                    let (rise, fall) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0));
                    lipschitz += f64::max(rise, fall);
                    PiecewiseLinear::plateau(v - hw, v + hw, rise, fall).unwrap()
                })
                .collect();
            let base = DecomposableUtility::new(components);
            if m >= 2 && rng.random_bool(0.5) {
                let w = rng.random_range(0.0..1.0);
                lipschitz += w * mf;
                let u = DlcdUtility::new(base, w, (0..m - 1).collect(), vec![m - 1]).unwrap();
                (u.into(), NormOrder::Infinity, lipschitz)
            } else {
                (base.into(), NormOrder::Infinity, lipschitz)
            }
        }
    };
    Case { u, x, r, q, lipschitz }
}

/// Unit-ball samples for (q, M): even entries on the sphere, odd ones
/// uniform inside.
fn ball_bank(q: NormOrder, m: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| loop {
            let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = lq_norm(&y, q);
            if norm > 0.0 && norm <= 1.0 {
                break if k % 2 == 0 { y.iter().map(|v| v / norm).collect() } else { y };
            }
        })
        .collect()
}

/// Best point of a cube grid of spacing `h` around `x`, with points outside
/// the ball pulled radially onto its boundary.
fn grid_best(u: &UtilityModel, x: &[f64], r: f64, q: NormOrder, per_dim: usize) -> (Vec<f64>, f64) {
    let m = x.len();
    let h = 2.0 * r / (per_dim - 1) as f64;
    let mut best = (x.to_vec(), f64::NEG_INFINITY);
    let total = per_dim.pow(m as u32);
    let mut y = vec![0.0; m];
    for idx in 0..total {
        let mut rest = idx;
        for k in 0..m {
            y[k] = -r + (rest % per_dim) as f64 * h;
            rest /= per_dim;
        }
        let n = lq_norm(&y, q);
        let scale = if n > r { r / n } else { 1.0 };
        let p: Vec<f64> = x.iter().zip(&y).map(|(a, d)| a + d * scale).collect();
        let v = u.evaluate(&p).unwrap();
        if v > best.1 {
            best = (p, v);
        }
    }
    best
}

fn criterion_7() -> Outcome {
    const CASES: usize = 10_000;
    const BALL_POINTS: usize = 10_000;
    const GRID_CASES: usize = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let mut banks = std::collections::HashMap::new();
    let mut details = Vec::new();
    let mut pass = true;
    for branch in Branch::ALL {
        let mut worst_random = f64::NEG_INFINITY;
        let mut worst_step: f64 = 0.0;
        let mut wrong_method = 0;
        let mut grid_cases = 0;
        let mut worst_grid: f64 = 0.0;
        for _ in 0..CASES {
            let case = random_case(branch, &mut rng);
            let m = case.x.len();
            let (point, method) = model_a_with_method(&case.u, &case.x, case.r, case.q).unwrap();
            if method != branch.method() {
                wrong_method += 1;
            }
            let d: Vec<f64> = point.iter().zip(&case.x).map(|(a, b)| a - b).collect();
            worst_step = worst_step.max(lq_norm(&d, case.q) - case.r);
            let best = case.u.evaluate(&point).unwrap();
            let bank = banks
                .entry((case.q.to_string(), m))
                .or_insert_with(|| ball_bank(case.q, m, BALL_POINTS, &mut ChaCha8Rng::seed_from_u64(m as u64)));
            let mut trial = vec![0.0; m];
            for z in bank.iter() {
                for k in 0..m {
                    trial[k] = case.x[k] + case.r * z[k];
                }
                worst_random = worst_random.max(case.u.evaluate(&trial).unwrap() - best);
            }
            if m <= 3 && grid_cases < GRID_CASES {
                grid_cases += 1;
                let per_dim = [2001, 401, 41][m - 1];
                let h = 2.0 * case.r / (per_dim - 1) as f64;
                let (g, gv) = grid_best(&case.u, &case.x, case.r, case.q, per_dim);
                // in units of the grid spacing
                let miss = if branch.unique() {
                    lq_distance(&point, &g, NormOrder::Infinity) / h
                } else {
                    (gv - best).abs() / (case.lipschitz * h)
                };
                let beaten = gv > best + 1e-12;
                worst_grid = worst_grid.max(if beaten { f64::INFINITY } else { miss });
            }
        }
        let ok = wrong_method == 0 && worst_random <= 1e-6 && worst_step <= 1e-9 && worst_grid <= 2.0;
        pass &= ok;
        details.push(format!(
            "{branch:?}: random {worst_random:.1e}, grid {worst_grid:.2}h{}",
            if wrong_method > 0 { format!(", {wrong_method} off-branch") } else { String::new() }
        ));
    }
    Outcome::new(pass, details.join("; "))
}

/// Bad-region frequency at four radii against a least-squares line through
/// the origin.
fn rate_check(label: &str, spec: &PopulationSpec, x: &[f64], q: NormOrder) -> (bool, String) {
    const RADII: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
    const VOTERS: usize = 100_000;
    let freqs: Vec<f64> = RADII
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let bad = spec
                .substream(i as u64)
                .take(VOTERS)
                .filter(|u| in_bad_region(u, x, r, q).unwrap())
                .count();
            bad as f64 / VOTERS as f64
        })
        .collect();
    let c = RADII.iter().zip(&freqs).map(|(r, f)| r * f).sum::<f64>() / RADII.iter().map(|r| r * r).sum::<f64>();
    let ratio = RADII.iter().zip(&freqs).map(|(r, f)| f / (c * r)).fold(0.0, f64::max);
    let ok = c > 0.0 && ratio <= 1.2;
    (ok, format!("{label} C={c:.3} worst f/Cr={ratio:.3}"))
}

fn criterion_8() -> Outcome {
    let uniform = |p: NormOrder, m: usize| PopulationSpec {
        family: Family::LpNormed { p },
        ideals: vec![Marginal::Uniform { lo: 0.0, hi: 2.0 }; m],
        seed: DEFAULT_SEED,
    };
    let checks = [
        rate_check("(1,inf)", &uniform(NormOrder::One, 2), &[1.0, 1.0], NormOrder::Infinity),
        rate_check("(inf,1)", &uniform(NormOrder::Infinity, 2), &[1.0, 1.0], NormOrder::One),
        rate_check("(2,2)", &uniform(NormOrder::Two, 1), &[1.0], NormOrder::Two),
    ];
    Outcome::new(
        checks.iter().all(|c| c.0),
        checks.iter().map(|c| c.1.clone()).collect::<Vec<_>>().join("; "),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED ^ 9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = rng.random_range(1.0..10.0_f64).max(1.0 + 1e-6);
        let m = rng.random_range(1..=5);
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ideal: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v = check_dual_norm_gradient(p, &x, &ideal).unwrap();
        worst = worst.max((v - 1.0).abs());
    }
    Outcome::new(worst <= 1e-9, format!("100 cases, max |value - 1| = {worst:.1e} (limit 1e-9)"))
}

fn criterion_10() -> Outcome {
    use ilv_core::geometry::LinearConstraint;
    let mut problems = Vec::new();
    let constrained = FeasibleRegion::new(
        vec![0.0; 3],
        vec![1.0; 3],
        vec![LinearConstraint::new(vec![1.0, 1.0, 1.0], 1.4)],
    )
    .unwrap();
    let setups = [
        (BehaviorModel::ModelA, NormOrder::Two, RadiusSchedule::Stepped { r0: 0.3, decay_interval: 60 }, 10),
        (BehaviorModel::ModelA, NormOrder::Infinity, RadiusSchedule::Harmonic { r0: 0.3 }, 10),
        (BehaviorModel::ModelB, NormOrder::One, RadiusSchedule::Harmonic { r0: 0.5 }, 1),
        (BehaviorModel::ModelB, NormOrder::General(3.0), RadiusSchedule::Stepped { r0: 0.2, decay_interval: 60 }, 7),
    ];
    let mut iterates = 0;
    let mut worst_step = f64::NEG_INFINITY;
    let mut worst_violation: f64 = 0.0;
    for (i, (behavior, q, schedule, batch)) in setups.into_iter().enumerate() {
        let mut cfg = IlvConfig::with_defaults(constrained.clone(), behavior, q);
        cfg.schedule = schedule;
        cfg.batch_size = batch;
        cfg.initial = Point::from([0.05, 0.05, 0.9]);
        cfg.stopping.max_updates = 800;
        let spec = PopulationSpec {
            family: Family::LpNormed { p: q.dual() },
            ideals: vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }; 3],
            seed: i as u64,
        };
        let a = run_ilv(&cfg, &mut spec.stream()).unwrap();
        let b = run_ilv(&cfg, &mut spec.stream()).unwrap();
        if a != b {
            problems.push(format!("setup {i} not deterministic"));
        }
        for (t, w) in a.iterates.windows(2).enumerate() {
            let t = t + 1;
            worst_violation = worst_violation.max(constrained.violation(&w[1].x));
            let batch: Vec<Point> =
                a.responses.iter().filter(|rec| rec.t == t).map(|rec| rec.response.clone()).collect();
            let r = w[1].r.unwrap();
            worst_step = worst_step.max(lq_distance(&mean_point(&batch), &w[0].x, q) - r);
            let submissions = ((t - 1) * batch.len() + 1) as u64;
            let formula = match schedule {
                RadiusSchedule::Harmonic { r0 } => r0 / t as f64,
                RadiusSchedule::Stepped { r0, decay_interval } => {
                    r0 / submissions.div_ceil(decay_interval) as f64
                }
            };
            if r != formula {
                problems.push(format!("setup {i} radius at t={t}"));
            }
        }
        iterates += a.iterates.len();
    }

    // replays through the experiment harness are bit-identical too
    let plan = prop2_plan(DEFAULT_SEED);
    let mut small = plan.clone();
    small.groups = 1;
    small.engine.max_updates = Some(300);
    small.oracles = Default::default();
    let out = run_plan(&small, 0).unwrap();
    for (key, traj) in small.run_keys().into_iter().zip(&out.trajectories) {
        if Some(replay_run(&small, key).unwrap()) != *traj {
            problems.push(format!("replay of {} differs", key.id()));
        }
    }

    for t in 1..=1000u64 {
        if radius_at(&RadiusSchedule::Harmonic { r0: 0.7 }, t) != 0.7 / t as f64 {
            problems.push(format!("harmonic formula at {t}"));
        }
        if radius_at(&RadiusSchedule::Stepped { r0: 0.7, decay_interval: 60 }, t) != 0.7 / t.div_ceil(60) as f64 {
            problems.push(format!("stepped formula at {t}"));
        }
    }
    let pass = problems.is_empty() && worst_step <= 1e-9 && worst_violation <= 1e-9;
    Outcome::new(
        pass,
        format!(
            "{iterates} iterates: max violation {worst_violation:.1e}, max step excess {worst_step:.1e}; {}",
            if problems.is_empty() { "deterministic, radii exact".to_string() } else { problems.join(", ") }
        ),
    )
}

fn criterion_11() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut replay_ok = true;
    let mut tolerance = 0.0;
    for seed in 0..5 {
        let start = Point::from([0.1 + 0.2 * seed as f64, 0.9]);
        let config = common::matching_config(start.clone());
        tolerance = config.stopping.tolerance;
        let pop = common::population(100 + seed);
        let sim = run_ilv(&config, &mut pop.stream()).unwrap();
        let svc = ElectionService::in_memory();
        let id = svc.create_instance(common::matching_instance(start)).unwrap();
        common::drive(&svc, &id, &mut pop.stream(), NormOrder::Two, sim.updates());
        let live = svc.export(&id, 0).unwrap();
        worst = worst.max(lq_distance(live.terminal.point(), sim.terminal.point(), NormOrder::Infinity));
        let replayed = svc.replay_state(&id).unwrap();
        replay_ok &= serde_json::to_string(&replayed).unwrap()
            == serde_json::to_string(&svc.live_state(&id).unwrap()).unwrap();
    }
    Outcome::new(
        worst <= tolerance && replay_ok,
        format!(
            "5 seeds, max terminal gap {worst:.1e} (limit {tolerance:.0e}); replay {}",
            if replay_ok { "byte-identical" } else { "DIFFERS" }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("optimum under Model A dual pairs", criterion_1),
        ("optimum under Model B dual pairs", criterion_2),
        ("weighted Euclidean objective", criterion_3),
        ("decomposable voters reach the median", criterion_4),
        ("directional equilibrium residual", criterion_5),
        ("stochastic subgradient reference", criterion_6),
        ("best-response correctness", criterion_7),
        ("bad-region rate", criterion_8),
        ("dual-norm gradient identity", criterion_9),
        ("engine invariants", criterion_10),
        ("service equivalence", criterion_11),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        if !out.pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name} [{:.1}s]: {}",
            if out.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            out.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
