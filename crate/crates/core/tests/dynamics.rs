mod common;

use jmls_mpc::jmls::{ContinuousModel, JumpLinearModel, ModeBelief, ModeDynamics};
use jmls_mpc::scenario::{cwh_continuous, HexacopterParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// exp(M) by scaling and squaring of a truncated Taylor series.
fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = m.abs().row_sum().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut term = DMatrix::identity(m.nrows(), m.ncols());
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn zoh_oracle(c: &ContinuousModel, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (c.a.nrows(), c.b.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&c.a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(&c.b * dt));
    let e = taylor_exp(&aug);
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// Classical RK4 for x' = Ax + Bu with u held constant.
fn rk4(c: &ContinuousModel, x: &DVector<f64>, u: &DVector<f64>, dt: f64, substeps: usize) -> DVector<f64> {
    let f = |x: &DVector<f64>| &c.a * x + &c.b * u;
    let h = dt / substeps as f64;
    let mut x = x.clone();
    for _ in 0..substeps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

#[test]
fn cwh_step_matches_rk4() {
    for n in [0.041, 0.061, 0.101] {
        let c = cwh_continuous(n);
        let d = c.discretize(10.0).unwrap();
        let x = DVector::from_row_slice(&[0.01, 3.8, -0.2, 0.003, -0.01, 0.002]);
        let u = DVector::from_row_slice(&[0.05, -0.1, 0.02]);
        let reference = rk4(&c, &x, &u, 10.0, 4000);
        assert!((d.step(&x, &u) - reference).amax() < 1e-9);
    }
}

#[test]
fn hexacopter_discretization_matches_oracle() {
    let c = HexacopterParams::default().continuous();
    let d = c.discretize(0.05).unwrap();
    let (a, b) = zoh_oracle(&c, 0.05);
    assert!(max_abs(&(&d.a - a)) < 1e-9);
    assert!(max_abs(&(&d.b - b)) < 1e-9);
}

#[test]
fn rendezvous_modes_are_marginally_stable() {
    for i in 0..=60 {
        let n = 0.041 + 0.001 * i as f64;
        let d = cwh_continuous(n).discretize(10.0).unwrap();
        let radius = d.a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
        // the along-track drift is a Jordan block at 1, so eigenvalues carry ~sqrt(eps) error
        assert!(radius <= 1.0 + 1e-6, "n = {n}: spectral radius {radius}");
    }
}

fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn continuous_model() -> impl Strategy<Value = ContinuousModel> {
    (1usize..5, 1usize..3)
        .prop_flat_map(|(n, m)| (small_matrix(n, n), small_matrix(n, m)).prop_map(|(a, b)| ContinuousModel { a, b }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn discretization_matches_taylor_oracle(c in continuous_model(), dt in 0.01..2.0f64) {
        let d = c.discretize(dt).unwrap();
        let (a, b) = zoh_oracle(&c, dt);
        prop_assert!(max_abs(&(&d.a - a)) < 1e-9);
        prop_assert!(max_abs(&(&d.b - b)) < 1e-9);
    }

    #[test]
    fn discretization_semigroup(c in continuous_model(), t1 in 0.01..1.0f64, t2 in 0.01..1.0f64) {
        let d1 = c.discretize(t1).unwrap();
        let d2 = c.discretize(t2).unwrap();
        let d12 = c.discretize(t1 + t2).unwrap();
        prop_assert!(max_abs(&(&d12.a - &d2.a * &d1.a)) < 1e-9);
        // input map composes as B(t1+t2) = A(t2) B(t1) + B(t2)
        prop_assert!(max_abs(&(&d12.b - (&d2.a * &d1.b + &d2.b))) < 1e-9);
    }

    #[test]
    fn step_is_linear(
        c in continuous_model(),
        alpha in -3.0..3.0f64,
        seed in any::<u64>(),
    ) {
        let d = c.discretize(0.3).unwrap();
        let (n, m) = (d.n_states(), d.n_controls());
        let mut rng = common::rng(seed);
        use rand::Rng;
        let mut v = |k| DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
        let (x1, x2, u1, u2) = (v(n), v(n), v(m), v(m));
        let lhs = d.step(&(&x1 * alpha + &x2), &(&u1 * alpha + &u2));
        let rhs = d.step(&x1, &u1) * alpha + d.step(&x2, &u2);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn belief_propagation_stays_on_simplex(raw in proptest::collection::vec(0.01..1.0f64, 3), cols in proptest::collection::vec(proptest::collection::vec(0.01..1.0f64, 3), 3)) {
        let mut omega = DMatrix::zeros(3, 3);
        for (j, col) in cols.iter().enumerate() {
            let total: f64 = col.iter().sum();
            for i in 0..3 {
                omega[(i, j)] = col[i] / total;
            }
        }
        let mode = ModeDynamics::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let model = JumpLinearModel::new(
            vec![mode.clone(), mode.clone(), mode],
            omega,
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
        ).unwrap();
        let total: f64 = raw.iter().sum();
        let mu = ModeBelief::new(DVector::from_iterator(3, raw.iter().map(|v| v / total))).unwrap();
        let next = model.propagate_belief(&mu).unwrap();
        prop_assert!((next.probs().sum() - 1.0).abs() < 1e-12);
        prop_assert!(next.probs().iter().all(|&p| p >= 0.0));
    }
}
