//! Independent oracles shared by the integration suites.
#![allow(dead_code, clippy::needless_range_loop)]

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use saferl::nn::{Activation, Mlp};

pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)`, with the denominator floored at 1e-6 so that
/// components which are zero up to rounding compare by absolute error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Straight-line scalar forward pass: loops only, no ndarray algebra.
pub fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
    let layers = net.layers();
    let mut a = input.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let (fan_in, fan_out) = layer.weights.dim();
        let mut z = vec![0.0; fan_out];
        for j in 0..fan_out {
            let mut s = layer.bias[j];
            for i in 0..fan_in {
                s += a[i] * layer.weights[[i, j]];
            }
            z[j] = s;
        }
        let act = if l + 1 == layers.len() { net.output_activation() } else { Activation::Relu };
        a = z.into_iter().map(|v| act.apply(v)).collect();
    }
    a
}

/// Smallest |pre-activation| over all hidden ReLU units and rows.
pub fn kink_margin(net: &Mlp, input: ArrayView2<f64>) -> f64 {
    let layers = net.layers();
    let mut margin = f64::INFINITY;
    for row in input.rows() {
        let mut a = row.to_vec();
        for layer in &layers[..layers.len() - 1] {
            let (fan_in, fan_out) = layer.weights.dim();
            let mut next = vec![0.0; fan_out];
            for j in 0..fan_out {
                let mut s = layer.bias[j];
                for i in 0..fan_in {
                    s += a[i] * layer.weights[[i, j]];
                }
                margin = margin.min(s.abs());
                next[j] = s.max(0.0);
            }
            a = next;
        }
    }
    margin
}

pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// Random architecture: 1-2 hidden layers of width 2-12.
pub fn random_net<R: Rng + ?Sized>(rng: &mut R, head: Activation) -> Mlp {
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..rng.random_range(1..=2) {
        sizes.push(rng.random_range(2..=12));
    }
    sizes.push(rng.random_range(1..=3));
    Mlp::new(&sizes, head, rng).unwrap()
}

/// Closed-form-free oracle for `min ½‖a − μ‖² s.t. g·a + c ≤ ε` in two
/// dimensions: best feasible point of a 100×100 grid over the action square,
/// then a ternary search along the constraint boundary (the optimum lies on
/// it whenever μ is infeasible). Returns (grid best, refined optimum).
pub fn projection_oracle(g: [f64; 2], mu: [f64; 2], c: f64, eps: f64) -> (Option<[f64; 2]>, [f64; 2]) {
    let obj = |a: [f64; 2]| 0.5 * ((a[0] - mu[0]).powi(2) + (a[1] - mu[1]).powi(2));
    let feasible = |a: [f64; 2]| g[0] * a[0] + g[1] * a[1] + c - eps <= 0.0;
    let mut grid_best: Option<[f64; 2]> = None;
    for i in 0..100 {
        for j in 0..100 {
            let a = [-1.0 + 2.0 * i as f64 / 99.0, -1.0 + 2.0 * j as f64 / 99.0];
            if feasible(a) && grid_best.is_none_or(|b| obj(a) < obj(b)) {
                grid_best = Some(a);
            }
        }
    }
    // Boundary line: solve for the coordinate with the larger |g| component.
    let point = |t: f64| -> [f64; 2] {
        if g[0].abs() >= g[1].abs() {
            [(eps - c - g[1] * t) / g[0], t]
        } else {
            [t, (eps - c - g[0] * t) / g[1]]
        }
    };
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if obj(point(m1)) <= obj(point(m2)) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    (grid_best, point(0.5 * (lo + hi)))
}

/// Worst relative error between backward and central differences over
/// `count` random kink-free networks with the given head. Parameter and
/// input gradients both count, and the batched forward pass is held to
/// the scalar reference along the way.
pub fn network_gradient_error(head: Activation, seed: u64, count: usize) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let weighted = |net: &Mlp, x: ArrayView2<f64>, w: &Array2<f64>| (&net.predict(x).unwrap() * w).sum();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < count {
        let net = random_net(&mut rng, head);
        let rows = rng.random_range(1..=4);
        let x = random_matrix(&mut rng, rows, net.input_width(), 2.0);
        if kink_margin(&net, x.view()) < 1e-3 {
            continue;
        }
        let w = random_matrix(&mut rng, rows, net.output_width(), 1.0);

        for r in 0..rows {
            let row = x.row(r).to_vec();
            let fast = net.forward(&row).unwrap();
            worst = worst.max(max_rel_err(&reference_forward(&net, &row), &fast));
        }

        let pass = net.forward_batch(x.view()).unwrap();
        let (grad, dx) = net.backward(&pass, w.view()).unwrap();
        let fd = central_diff(&net.flatten(), FD_STEP, |p| {
            let mut probe = net.clone();
            probe.set_flat(p).unwrap();
            weighted(&probe, x.view(), &w)
        });
        worst = worst.max(max_rel_err(&grad.flatten(), &fd));

        let flat_x: Vec<f64> = x.iter().copied().collect();
        let fd_x = central_diff(&flat_x, FD_STEP, |p| {
            let xp = Array2::from_shape_vec(x.dim(), p.to_vec()).unwrap();
            weighted(&net, xp.view(), &w)
        });
        worst = worst.max(max_rel_err(&dx.iter().copied().collect::<Vec<_>>(), &fd_x));
        checked += 1;
    }
    worst
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionReport {
    /// Largest distance between the closed form and the refined oracle.
    pub oracle_gap: f64,
    /// Largest amount by which the refined oracle's objective exceeds the
    /// best grid point's; refinement must never lose to the grid.
    pub grid_excess: f64,
    /// Largest |g·a + c − ε| at the unclipped projection.
    pub residual: f64,
    pub instances: usize,
}

/// Random active instances whose optimum lies inside the action square.
/// Built backwards from the optimum: pick `a*` in the box and a normal `g`,
/// set the boundary through `a*` and push `μ` off it along `g`.
pub fn projection_suite(seed: u64, count: usize) -> ProjectionReport {
    use rand::SeedableRng;
    use saferl::safety_layer::{project_halfspace, ProjectionStatus};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = ProjectionReport {
        oracle_gap: 0.0,
        grid_excess: f64::NEG_INFINITY,
        residual: 0.0,
        instances: 0,
    };
    while report.instances < count {
        let g: [f64; 2] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if norm < 0.1 {
            continue;
        }
        let star: [f64; 2] = [rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95)];
        let push = rng.random_range(0.01..1.0) / norm;
        let mu = [star[0] + push * g[0], star[1] + push * g[1]];
        if mu.iter().any(|v| v.abs() > 1.0) {
            continue;
        }
        let prev_cost = rng.random_range(0.0..1.0);
        let eps = prev_cost + g[0] * star[0] + g[1] * star[1];

        let p = project_halfspace(&g, &mu, prev_cost, eps).unwrap();
        assert!(matches!(p.status, ProjectionStatus::Projected { .. }), "instance must be active");
        let (grid, oracle) = projection_oracle(g, mu, prev_cost, eps);
        let dist = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        report.oracle_gap = report.oracle_gap.max(dist(&p.unclipped, &oracle));
        if let Some(grid) = grid {
            let obj = |a: &[f64]| 0.5 * ((a[0] - mu[0]).powi(2) + (a[1] - mu[1]).powi(2));
            report.grid_excess = report.grid_excess.max(obj(&oracle) - obj(&grid));
        }
        let residual = g[0] * p.unclipped[0] + g[1] * p.unclipped[1] + prev_cost - eps;
        report.residual = report.residual.max(residual.abs());
        report.instances += 1;
    }
    report
}

/// Extreme outputs of random sigmoid-headed critics over `probes` inputs,
/// with input scales reaching far into both saturated tails.
pub fn risk_output_range(seed: u64, probes: usize) -> (f64, f64) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let per_net = 1000;
    for _ in 0..probes.div_ceil(per_net) {
        let net = Mlp::new(&[6, 16, 16, 1], Activation::Sigmoid, &mut rng).unwrap();
        let scale = 10f64.powf(rng.random_range(-1.0..4.0));
        let x = random_matrix(&mut rng, per_net, 6, scale);
        for &v in net.predict(x.view()).unwrap().iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Counts risk targets that break the recursion's guarantees: not exactly 1
/// where `c = 1`, or outside `[0, 1]` anywhere. Returns (violations, rows).
pub fn risk_target_violations(seed: u64, batches: usize) -> (usize, usize) {
    use rand::SeedableRng;
    use saferl::backbone::AgentCore;
    use saferl::config::{Algorithm, HyperConfig};
    use saferl::replay::{Batch, Transition};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = HyperConfig::defaults(Algorithm::Recovery);
    cfg.hidden_sizes = vec![16, 16];
    let (mut bad, mut rows) = (0, 0);
    for _ in 0..batches {
        let core = AgentCore::new(cfg.backbone(), true, &mut rng).unwrap();
        let n = 64;
        let ts: Vec<Transition> = (0..n)
            .map(|_| {
                Transition::simple(
                    (0..4).map(|_| rng.random_range(-3.0..3.0)).collect(),
                    (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    (0..4).map(|_| rng.random_range(-3.0..3.0)).collect(),
                    rng.random_range(-1.0..1.0),
                    f64::from(u8::from(rng.random_bool(0.3))),
                    rng.random_bool(0.1),
                    0.0,
                )
            })
            .collect();
        let refs: Vec<&Transition> = ts.iter().collect();
        let batch = Batch::from_transitions(&refs, 4, 2);
        let next = core.target_actions(batch.next_obs.view(), &mut rng).unwrap();
        let y = core.risk_target(&batch, next.view()).unwrap();
        for (&c, &v) in batch.costs.iter().zip(&y) {
            rows += 1;
            let ok = if c == 1.0 { v == 1.0 } else { (0.0..=1.0).contains(&v) };
            bad += usize::from(!ok);
        }
    }
    (bad, rows)
}

/// Smallest λ seen over `updates` random projected ascent steps.
pub fn scalar_multiplier_floor(seed: u64, updates: usize) -> f64 {
    use rand::SeedableRng;
    use saferl::lagrangian::ScalarMultiplier;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut m = ScalarMultiplier::new(0.0, 1e-5, 0.1).unwrap();
    let mut floor = f64::INFINITY;
    for i in 0..updates {
        if i % 1000 == 0 {
            m.lr = 10f64.powf(rng.random_range(-6.0..0.0));
            m.threshold = rng.random_range(0.0..1.0);
        }
        let drive = rng.random_range(-10.0..10.0);
        floor = floor.min(m.update(drive).unwrap());
    }
    floor
}

/// Smallest λ(s) from freshly built multiplier nets over `probes` states,
/// including states far outside the training range.
pub fn state_multiplier_floor(seed: u64, probes: usize) -> f64 {
    use rand::SeedableRng;
    use saferl::config::{Algorithm, HyperConfig};
    use saferl::fac::FacAgent;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = HyperConfig::defaults(Algorithm::Fac);
    cfg.hidden_sizes = vec![16, 16];
    let per_net = 1000;
    let mut floor = f64::INFINITY;
    for _ in 0..probes.div_ceil(per_net) {
        let mut agent = FacAgent::new(&cfg, &mut rng).unwrap();
        agent.multiplier.net.set_output_bias(rng.random_range(-50.0..5.0));
        let scale = 10f64.powf(rng.random_range(-1.0..3.0));
        let obs = random_matrix(&mut rng, per_net, 4, scale);
        floor = floor.min(agent.multiplier.values(obs.view()).unwrap().fold(f64::INFINITY, |a, &b| a.min(b)));
    }
    floor
}

/// Largest gap between the state-multiplier actor gradient with λ(s) made
/// constant and the scalar-multiplier actor gradient at the same λ.
pub fn constant_multiplier_gap(seed: u64, cases: usize) -> f64 {
    use rand::SeedableRng;
    use saferl::config::{Algorithm, HyperConfig};
    use saferl::fac::{fac_actor_objective, FacAgent};
    use saferl::lagrangian::lagrangian_actor_objective;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = HyperConfig::defaults(Algorithm::Fac);
    cfg.hidden_sizes = vec![8, 8];
    let mut gap: f64 = 0.0;
    for _ in 0..cases {
        let mut agent = FacAgent::new(&cfg, &mut rng).unwrap();
        // Zero last-layer weights make λ(s) = softplus(b) for every state.
        let mut layers = agent.multiplier.net.layers().to_vec();
        let last = layers.last_mut().unwrap();
        last.weights.fill(0.0);
        let b: f64 = rng.random_range(-3.0..3.0);
        last.bias.fill(b);
        agent.multiplier.net = Mlp::from_layers(layers, Activation::Softplus).unwrap();
        let lambda = saferl::nn::softplus(b);

        let obs = random_matrix(&mut rng, 8, 4, 1.5);
        let (fac_loss, fac_grad) = fac_actor_objective(&agent.core, &agent.multiplier, obs.view()).unwrap();
        let (lag_loss, lag_grad) = lagrangian_actor_objective(&agent.core, lambda, obs.view()).unwrap();
        gap = gap.max((fac_loss - lag_loss).abs());
        for (a, b) in fac_grad.flatten().iter().zip(lag_grad.flatten()) {
            gap = gap.max((a - b).abs());
        }
    }
    gap
}
