use super::*;
use crate::flowfield::{make_field, FieldSpec};
use approx::assert_relative_eq;

/// w(1) for w = 1 - ∫w - ∫w/sqrt(t-s), 40-digit reference from the
/// closed form via complementary error functions of complex argument.
const RELAXATION_W1: f64 = 0.165022352958563020924410198052336538279;

fn relaxation(steps: usize) -> Trajectory {
    let field = make_field(&FieldSpec::Zero { dim: 1 }).unwrap();
    let p = Params::from_coefficients(1.0, 1.0, 0.0, DVector::zeros(1)).unwrap();
    let ic = State::from_slices(&[0.0], &[1.0]).unwrap();
    solve(field.as_ref(), &p, &ic, 0.0, 1.0, steps, &SolverOptions::default()).unwrap()
}

fn tg_benchmark() -> (Box<dyn FlowField>, Params, State) {
    let field = make_field(&FieldSpec::TaylorGreen {
        amplitude: 1.0,
        wavenumber: 1.0,
    })
    .unwrap();
    let p = Params::derive(2.0 / 3.0, 0.1, 100.0, DVector::zeros(2)).unwrap();
    let ic = State::from_slices(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
    (field, p, ic)
}

fn sup_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(s, t)| (&s.y - &t.y).amax().max((&s.w - &t.w).amax()))
        .fold(0.0, f64::max)
}

#[test]
fn zero_field_rest_is_exact() {
    let field = make_field(&FieldSpec::Zero { dim: 2 }).unwrap();
    let p = Params::derive(1.0, 0.5, 10.0, DVector::zeros(2)).unwrap();
    let ic = State::from_slices(&[0.3, -2.0], &[0.0, 0.0]).unwrap();
    for opts in [SolverOptions::default(), SolverOptions::picard()] {
        let tr = solve(field.as_ref(), &p, &ic, 0.0, 2.0, 16, &opts).unwrap();
        assert!(tr.states.iter().all(|s| *s == ic));
    }
}

#[test]
fn basset_relaxation_matches_oracle() {
    let w1 = relaxation(1 << 9).last().w[0];
    assert!((w1 - RELAXATION_W1).abs() < 1e-4, "{w1}");
    // error shrinks under refinement
    let e_coarse = (relaxation(1 << 7).last().w[0] - RELAXATION_W1).abs();
    let e_fine = (relaxation(1 << 9).last().w[0] - RELAXATION_W1).abs();
    assert!(e_fine < e_coarse / 2.0);
}

#[test]
fn initial_state_is_kept_exactly() {
    let (field, p, ic) = tg_benchmark();
    let tr = solve(field.as_ref(), &p, &ic, 0.25, 0.5, 8, &SolverOptions::default()).unwrap();
    assert_eq!(tr.states[0], ic);
    assert_eq!(tr.grid.t0(), 0.25);
    assert_eq!(tr.states.len(), 9);
}

#[test]
fn marching_and_picard_agree() {
    let (field, p, ic) = tg_benchmark();
    let a = solve(field.as_ref(), &p, &ic, 0.0, 1.0, 256, &SolverOptions::default()).unwrap();
    let b = solve(field.as_ref(), &p, &ic, 0.0, 1.0, 256, &SolverOptions::picard()).unwrap();
    assert_eq!(b.scheme, Scheme::Picard);
    assert!(sup_distance(&a, &b) < 1e-9, "{}", sup_distance(&a, &b));
}

#[test]
fn restart_keeps_history() {
    let (field, p, _) = tg_benchmark();
    let ic = State::from_slices(&[1.0, 0.2], &[0.5, -0.3]).unwrap();
    let a = solve(field.as_ref(), &p, &ic, 0.0, 1.0, 200, &SolverOptions::default()).unwrap();
    let opts = SolverOptions {
        restarts: vec![0.5],
        ..Default::default()
    };
    let b = solve(field.as_ref(), &p, &ic, 0.0, 1.0, 200, &opts).unwrap();
    assert_eq!(b.restarts, vec![0.5]);
    assert!(sup_distance(&a, &b) < 5e-12);
}

#[test]
fn deterministic() {
    let (field, p, ic) = tg_benchmark();
    let a = solve(field.as_ref(), &p, &ic, 0.0, 1.0, 64, &SolverOptions::default()).unwrap();
    let b = solve(field.as_ref(), &p, &ic, 0.0, 1.0, 64, &SolverOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rejects_bad_requests() {
    let (field, p, ic) = tg_benchmark();
    let opts = SolverOptions::default();
    assert!(solve(field.as_ref(), &p, &ic, 0.0, 1.0, 1, &opts).is_err());
    assert!(solve(field.as_ref(), &p, &ic, 1.0, 1.0, 8, &opts).is_err());
    let bad_tol = SolverOptions { tol: 0.0, ..Default::default() };
    assert!(solve(field.as_ref(), &p, &ic, 0.0, 1.0, 8, &bad_tol).is_err());
    let wrong_dim = State::from_slices(&[1.0], &[0.0]).unwrap();
    assert!(matches!(
        solve(field.as_ref(), &p, &wrong_dim, 0.0, 1.0, 8, &opts),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn blow_up_is_reported_as_divergence() {
    let field = make_field(&FieldSpec::Linear {
        matrix: vec![vec![30.0]],
        offset: vec![],
        drift: vec![],
    })
    .unwrap();
    let p = Params::derive(2.0, 1.0, 1.0, DVector::zeros(1)).unwrap();
    let ic = State::from_slices(&[1.0], &[0.0]).unwrap();
    let r = solve(field.as_ref(), &p, &ic, 0.0, 30.0, 3000, &SolverOptions::default());
    assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
}

#[test]
fn stays_below_apriori_bound() {
    let tr = relaxation(256);
    let p = Params::from_coefficients(1.0, 1.0, 0.0, DVector::zeros(1)).unwrap();
    let (cy, cw) = apriori_solution_bound(&p, 0.0, 0.0, 0.0, tr.initial(), 0.0, 1.0).unwrap();
    assert!(tr.sup_w() <= cw && tr.sup_y() <= cy);
}

#[test]
fn radius_examples() {
    let p = Params::from_coefficients(1.0, 1.0, 0.0, DVector::zeros(1)).unwrap();
    let b = picard_radius(1.0, 0.0, 1.0, &p, 1.0, 1.0, 0.0, 0.0).unwrap();
    assert_eq!(b.k, 8.0);
    // 1/128 violates the first condition: 5/128 + 2 sqrt(1/128) > 1/5
    assert_eq!(b.delta, 1.0 / 256.0);
    assert!(b.validate().is_ok());
    let twice = PicardBox { delta: 2.0 * b.delta, ..b };
    assert!(twice.validate().is_err());

    let free = Params::from_coefficients(0.0, 0.0, 0.0, DVector::zeros(1)).unwrap();
    let b = picard_radius(1.0, 0.0, 1.0, &free, 0.0, 0.0, 0.5, 0.5).unwrap();
    assert_eq!(b.delta, 0.125);

    let small = picard_radius(1.0, 0.0, 4.0, &p, 1.0, 1.0, 0.0, 0.0).unwrap();
    let big = picard_radius(3.0, 0.0, 4.0, &p, 1.0, 1.0, 0.0, 0.0).unwrap();
    assert_relative_eq!(big.k, 3.0 * small.k);

    assert!(matches!(
        picard_radius(1.0, 0.0, 1.0, &p, 1.0, f64::MAX, 0.0, 0.0),
        Err(Error::NoDelta)
    ));
}

fn tg_box(p: &Params, r_bound: f64) -> PicardBox {
    let field = TaylorGreen::new(1.0, 1.0).unwrap();
    let bounds = field.bounds(p).unwrap();
    let (a0, b0, _) = drift_coefficients(&field, p, &DVector::zeros(2), 0.0).unwrap();
    picard_radius(r_bound, 0.0, 1.0, p, bounds.l_b, bounds.l_c, a0.norm(), b0.norm()).unwrap()
}

use crate::flowfield::TaylorGreen;

#[test]
fn local_picard_without_history() {
    let field = make_field(&FieldSpec::Zero { dim: 2 }).unwrap();
    let p = Params::derive(2.0 / 3.0, 0.1, 100.0, DVector::zeros(2)).unwrap();
    let mr = MaxeyRiley::new(field.as_ref(), &p).unwrap();
    let pbox = tg_box(&p, 4.0);
    let start = State::from_slices(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
    let rep = picard_local(&mr, &start, 0.0, None, &pbox, 8, 1e-13).unwrap();
    assert!(rep.trajectory.states.iter().all(|s| *s == start));
}

#[test]
fn local_picard_contracts_and_matches_marching() {
    let (field, p, ic) = tg_benchmark();
    let ic = State { w: DVector::from_vec(vec![0.3, -0.2]), ..ic };
    let mr = MaxeyRiley::new(field.as_ref(), &p).unwrap();
    let pbox = tg_box(&p, 4.0);
    let m = 4;
    let h = pbox.delta / m as f64;
    let steps = (1.0 / h).round() as usize;
    let full = solve(field.as_ref(), &p, &ic, 0.0, 1.0, steps, &SolverOptions::default()).unwrap();
    let r = steps / 2;
    let history = SampledPath::new(
        TimeGrid::from_points(full.grid.points()[..=r].to_vec()).unwrap(),
        full.states[..=r].iter().map(|s| s.w.clone()).collect(),
    )
    .unwrap();
    let t1 = full.grid.points()[r];
    let tol = 1e-13;
    let rep = picard_local(&mr, &full.states[r], t1, Some(&history), &pbox, m, tol).unwrap();
    assert!(rep.max_rate() <= 0.5);
    let cap = (rep.initial_residual / tol).log2().ceil() as usize + 1;
    assert!(rep.iterations <= cap, "{} > {cap}", rep.iterations);
    for k in 0..=m {
        let a = &rep.trajectory.states[k];
        let b = &full.states[r + k];
        assert!((&a.y - &b.y).amax() < 1e-10);
        assert!((&a.w - &b.w).amax() < 1e-10);
    }

    // from t0 with no history the window is the start of the run
    let rep0 = picard_local(&mr, &ic, 0.0, None, &pbox, m, tol).unwrap();
    for k in 0..=m {
        assert!((&rep0.trajectory.states[k].w - &full.states[k].w).amax() < 1e-10);
    }
}

#[test]
fn local_picard_refuses_invalid_boxes() {
    let (field, p, ic) = tg_benchmark();
    let mr = MaxeyRiley::new(field.as_ref(), &p).unwrap();
    let pbox = tg_box(&p, 4.0);
    let wide = PicardBox { delta: 0.25, ..pbox };
    assert!(matches!(
        picard_local(&mr, &ic, 0.0, None, &wide, 4, 1e-12),
        Err(Error::InvalidBox(_))
    ));
    let far = State::from_slices(&[10.0, 0.0], &[0.0, 0.0]).unwrap();
    assert!(matches!(
        picard_local(&mr, &far, 0.0, None, &pbox, 4, 1e-12),
        Err(Error::InvalidBox(_))
    ));
}

#[test]
fn reversed_dynamics_without_memory_retraces() {
    let field = make_field(&FieldSpec::Linear {
        matrix: vec![vec![0.1, 1.0], vec![-1.0, 0.2]],
        offset: vec![0.0, 0.1],
        drift: vec![0.3, 0.0],
    })
    .unwrap();
    let p = Params::from_coefficients(2.0, 0.0, 0.0, DVector::from_vec(vec![0.0, -1.0])).unwrap();
    let mr = MaxeyRiley::new(field.as_ref(), &p).unwrap();
    let ic = State::from_slices(&[0.5, 0.5], &[0.1, 0.0]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 512).unwrap();
    let fwd = solve_dynamics(&mr, &ic, &grid, &SolverOptions::default()).unwrap();
    let rev = TimeReversed { inner: &mr };
    let end = fwd.last();
    let rgrid = TimeGrid::uniform(-1.0, 0.0, 512).unwrap();
    let back = solve_dynamics(&rev, &State { y: end.y.clone(), w: -&end.w }, &rgrid, &SolverOptions::default()).unwrap();
    let b = back.last();
    assert!((&b.y - &ic.y).amax() < 1e-10);
    assert!((-&b.w - &ic.w).amax() < 1e-10);
}

#[test]
fn relaxation_refinement_order() {
    let err = |n| (relaxation(n).last().w[0] - RELAXATION_W1).abs();
    let (coarse, fine) = (err(1 << 8), err(1 << 10));
    let order = (coarse / fine).log2() / 2.0;
    println!("relaxation w(1): error {coarse:.3e} at N=256, {fine:.3e} at N=1024, order {order:.3}");
    assert!(order > 1.0, "{order}");
}
