use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Random SPD matrix `Q diag(eigs) Qᵀ` with `Q` from Gram-Schmidt.
fn random_spd(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &q {
            let d = vecops::dot(&v, u);
            vecops::axpy(-d, u, &mut v);
        }
        let len = vecops::norm(&v);
        if len > 1e-3 {
            q.push(v.iter().map(|x| x / len).collect());
        }
    }
    let eigs: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| q[k][i] * eigs[k] * q[k][j]).sum();
        }
    }
    // Exact symmetry for the constructor check.
    for i in 0..n {
        for j in 0..i {
            a[j * n + i] = a[i * n + j];
        }
    }
    a
}

/// Dense Gaussian elimination with partial pivoting.
fn solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, pivot);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()
}

fn random_quadratic(n: usize, seed: u64) -> Quadratic {
    Quadratic::new(random_spd(n, 1.0, 10.0, seed), random_vec(n, seed + 1)).unwrap()
}

fn config(id: OptimizerId) -> OptimizerConfig {
    OptimizerConfig::new(id)
}

/// Rosenbrock valley; has no Hessian operator.
struct Rosenbrock;

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        2
    }

    fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }
}

struct Poisoned;

impl Objective for Poisoned {
    fn dim(&self) -> usize {
        1
    }

    fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
        if x[0] < 0.5 {
            g[0] = f64::NAN;
            return f64::NAN;
        }
        g[0] = 2.0 * x[0];
        x[0] * x[0]
    }
}

#[test]
fn newton_is_exact_on_a_parabola() {
    // (b - 5)^2 up to a constant.
    let q = Quadratic::new(vec![2.0], vec![10.0]).unwrap();
    let trace = run(&q, &[0.0], &config(OptimizerId::NewtonCG)).unwrap();
    assert_eq!(trace.termination, Termination::Converged);
    assert_eq!(trace.iterations(), 1);
    assert!((trace.final_b[0] - 5.0).abs() < 1e-12);
}

#[test]
fn lbfgs_matches_direct_solve() {
    let q = random_quadratic(20, 7);
    let expected = solve(q.matrix(), q.rhs());
    let mut cfg = config(OptimizerId::LBFGS);
    cfg.gradient_tolerance = 1e-12;
    let trace = run(&q, &vec![0.0; 20], &cfg).unwrap();
    let err = trace.final_b.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "max error {err}");
}

#[test]
fn line_search_methods_never_increase_cost() {
    for id in OptimizerId::ALL.into_iter().filter(|id| id.uses_line_search() && *id != OptimizerId::NewtonCG) {
        let mut cfg = config(id);
        cfg.max_iterations = 500;
        let trace = run(&Rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        for w in trace.records.windows(2) {
            assert!(w[1].cost <= w[0].cost, "{id}: {} -> {}", w[0].cost, w[1].cost);
        }
        assert!(trace.final_cost() < trace.initial_cost(), "{id}");
    }
}

#[test]
fn quasi_newton_and_cg_finish_in_n_plus_two() {
    let n = 10;
    for seed in 0..5 {
        // Minimum value 0 at the origin keeps cost differences near the
        // optimum above rounding noise.
        let q = Quadratic::new(random_spd(n, 1.0, 10.0, 100 + seed), vec![0.0; n]).unwrap();
        let b0 = random_vec(n, 200 + seed);
        let mut g0 = vec![0.0; n];
        q.value_and_gradient(&b0, &mut g0);
        for id in [OptimizerId::CG, OptimizerId::BFGS] {
            // Finite termination assumes exact line searches; on a quadratic
            // the cubic interpolant finds the exact step, so a tight
            // curvature condition recovers it.
            let mut cfg = config(id);
            cfg.line_search.c2 = 1e-3;
            cfg.gradient_tolerance = 1e-8 / vecops::norm(&g0).max(1.0);
            cfg.max_iterations = n + 2;
            let trace = run(&q, &b0, &cfg).unwrap();
            let last = trace.records.last().unwrap();
            assert!(
                last.gradient_norm <= 1e-8,
                "{id} seed {seed}: |g| = {} after {} iterations ({:?})",
                last.gradient_norm,
                last.iteration,
                trace.termination
            );
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let q = random_quadratic(12, 3);
    for id in OptimizerId::ALL {
        let mut cfg = config(id);
        cfg.max_iterations = 50;
        let a = run(&q, &vec![1.0; 12], &cfg).unwrap();
        let b = run(&q, &vec![1.0; 12], &cfg).unwrap();
        assert_eq!(a.final_b, b.final_b, "{id}");
        assert_eq!(a.termination, b.termination);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!((ra.iteration, ra.cost, ra.gradient_norm, ra.function_evals), (rb.iteration, rb.cost, rb.gradient_norm, rb.function_evals));
        }
    }
}

#[test]
fn every_method_makes_progress_on_a_quadratic() {
    let q = random_quadratic(8, 11);
    let b0 = vec![3.0; 8];
    for id in OptimizerId::ALL {
        let mut cfg = config(id);
        cfg.learning_rate = if id == OptimizerId::Adadelta { 1.0 } else { 0.05 };
        cfg.max_iterations = 300;
        let trace = run(&q, &b0, &cfg).unwrap();
        assert!(trace.final_cost() < trace.initial_cost(), "{id}");
        assert!(trace.records.iter().all(|r| r.cost.is_finite()), "{id}");
        assert!(trace.final_b.iter().all(|x| x.is_finite()), "{id}");
    }
}

#[test]
fn trace_invariants_hold() {
    let q = random_quadratic(6, 5);
    let trace = run(&q, &[1.0; 6], &config(OptimizerId::BFGS)).unwrap();
    assert_eq!(trace.records[0].iteration, 0);
    assert_eq!(trace.records[0].function_evals, 1);
    for w in trace.records.windows(2) {
        assert_eq!(w[1].iteration, w[0].iteration + 1);
        assert!(w[1].elapsed >= w[0].elapsed);
        assert!(w[1].function_evals > w[0].function_evals);
    }
}

#[test]
fn newton_without_hessian_is_a_config_error() {
    let err = run(&Rosenbrock, &[0.0, 0.0], &config(OptimizerId::NewtonCG)).unwrap_err();
    assert!(matches!(err, FmoError::Config(_)), "{err}");
}

#[test]
fn non_finite_cost_stops_the_run() {
    let mut cfg = config(OptimizerId::Adam);
    cfg.learning_rate = 2.0;
    let trace = run(&Poisoned, &[1.0], &cfg).unwrap();
    assert_eq!(trace.termination, Termination::NumericalFailure);
    assert!(trace.final_b[0].is_finite());
    assert!(trace.records.iter().all(|r| r.cost.is_finite()));
}

#[test]
fn wrong_length_start_is_rejected() {
    let q = random_quadratic(4, 1);
    assert!(run(&q, &[0.0; 3], &config(OptimizerId::GD)).is_err());
    assert!(run(&q, &[f64::NAN; 4], &config(OptimizerId::GD)).is_err());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let q = random_quadratic(4, 1);
    let mut cfg = config(OptimizerId::LBFGS);
    cfg.lbfgs_memory = 0;
    assert!(run(&q, &[0.0; 4], &cfg).is_err());
}

#[test]
fn registry_knows_every_optimizer() {
    let registry = OptimizerRegistry::builtin();
    for id in OptimizerId::ALL {
        assert!(registry.contains(id.as_str()), "{id}");
    }
    assert_eq!(registry.names().count(), OptimizerId::ALL.len());
}

#[test]
fn two_loop_recovers_inverse_hessian_from_conjugate_steps() {
    let n = 5;
    let a = random_spd(n, 0.5, 20.0, 42);
    let op = DenseOperator::new(n, a.clone()).unwrap();
    // A-conjugate steps by Gram-Schmidt in the A inner product.
    let mut history: Vec<CurvaturePair> = Vec::new();
    for k in 0..n {
        let mut s = random_vec(n, 500 + k as u64);
        for pair in &history {
            let coef = vecops::dot(&pair.y, &s) / vecops::dot(&pair.y, &pair.s);
            vecops::axpy(-coef, &pair.s, &mut s);
        }
        let mut y = vec![0.0; n];
        op.apply(&s, &mut y);
        history.push(CurvaturePair::new(s, y));
    }
    let g = random_vec(n, 9);
    let d = lbfgs_two_loop(&g, &history, n);
    let expected: Vec<f64> = solve(&a, &g).iter().map(|v| -v).collect();
    for (x, e) in d.iter().zip(&expected) {
        assert!((x - e).abs() < 1e-8 * (1.0 + e.abs()), "{x} vs {e}");
    }
}

#[test]
fn two_loop_gives_descent_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let n = 6;
        let history: Vec<CurvaturePair> = (0..4)
            .filter_map(|_| {
                let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let pair = CurvaturePair::new(s, y);
                (pair.sy() > 0.0).then_some(pair)
            })
            .collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(vecops::dot(&lbfgs_two_loop(&g, &history, 10), &g) < 0.0);
    }
}

#[test]
fn inner_solve_on_identity_is_one_step() {
    let id = DenseOperator::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let g = [1.0, -2.0, 3.0];
    assert_eq!(newton_inner_solve(&id, &g, 1e-12, 1), vec![-1.0, 2.0, -3.0]);
}

#[test]
fn inner_solve_matches_direct_solve() {
    let a = random_spd(8, 0.1, 10.0, 8);
    let op = DenseOperator::new(8, a.clone()).unwrap();
    let g = random_vec(8, 80);
    let p = newton_inner_solve(&op, &g, 1e-10, 100);
    let expected: Vec<f64> = solve(&a, &g).iter().map(|v| -v).collect();
    for (x, e) in p.iter().zip(&expected) {
        assert!((x - e).abs() < 1e-8, "{x} vs {e}");
    }
}

#[test]
fn inner_solve_of_zero_gradient_is_zero() {
    let op = DenseOperator::new(2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
    assert_eq!(newton_inner_solve(&op, &[0.0, 0.0], 1e-8, 10), vec![0.0, 0.0]);
}

#[test]
fn inner_solve_falls_back_on_negative_curvature() {
    let op = DenseOperator::new(2, vec![-1.0, 0.0, 0.0, -1.0]).unwrap();
    assert_eq!(newton_inner_solve(&op, &[1.0, 1.0], 1e-8, 10), vec![-1.0, -1.0]);
}
