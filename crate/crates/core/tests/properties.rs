use std::sync::Arc;

use proptest::prelude::*;
use subvar_core::gammalab::{effective_integrand, CellSetup};
use subvar_core::integrand::{
    check_convexity, check_gradient, check_growth, momentum_map, periodic_compose, shift, LinearQuadratic, PPower,
    Quadratic,
};
use subvar_core::solver::{assemble_functional, minimize_convex, solve};
use subvar_core::{
    DiscreteField, DiscreteProblem, DiscreteXOperator, Frame, GradientField, Grid, GroupPoint, HAffine, Integrand,
    Matrix, OperatorCoefficients, ScalarField, SolverSettings,
};
use subvar_core::mesh::Dirichlet;

fn coord() -> impl Strategy<Value = f64> {
    -5.0..5.0f64
}

fn point(s: usize) -> impl Strategy<Value = GroupPoint> {
    prop::collection::vec(coord(), 2 * s + 1).prop_map(|c| GroupPoint::new(c).unwrap())
}

fn close(a: &GroupPoint, b: &GroupPoint, tol: f64) -> bool {
    a.coords().iter().zip(b.coords()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
}

fn frames() -> Vec<Frame> {
    vec![
        Frame::euclidean(2).unwrap(),
        Frame::heisenberg(1).unwrap(),
        Frame::grushin(),
        Frame::euclidean_partial(3, 2).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn group_law_is_associative(x in point(1), y in point(1), z in point(1)) {
        let left = x.mul(&y).unwrap().mul(&z).unwrap();
        let right = x.mul(&y.mul(&z).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
    }

    #[test]
    fn group_law_is_associative_in_higher_rank(x in point(2), y in point(2), z in point(2)) {
        let left = x.mul(&y).unwrap().mul(&z).unwrap();
        let right = x.mul(&y.mul(&z).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
    }

    #[test]
    fn inverse_cancels(x in point(2)) {
        let e = x.mul(&x.inverse()).unwrap();
        prop_assert!(e.coords().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn dilation_is_an_automorphism(x in point(1), y in point(1), lambda in 0.05..20.0f64) {
        let left = x.mul(&y).unwrap().dilate(lambda).unwrap();
        let right = x.dilate(lambda).unwrap().mul(&y.dilate(lambda).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
    }

    #[test]
    fn reduction_is_lattice_invariant(x in point(1), k in prop::collection::vec(-4i64..5, 3)) {
        let (r, _) = x.reduce();
        prop_assert!(r.coords().iter().all(|v| (-1.0..1.0).contains(v)));
        let moved = x.translate_even(&k).unwrap();
        let (r2, _) = moved.reduce();
        // Points on the cell faces may round to opposite faces; compare modulo the lattice.
        let same = close(&r, &r2, 1e-12)
            || r.coords().iter().zip(r2.coords()).all(|(a, b)| {
                let d = (a - b).abs();
                d <= 1e-12 || (d - 2.0).abs() <= 1e-12
            });
        prop_assert!(same, "{:?} vs {:?}", r, r2);
    }

    #[test]
    fn reduction_is_a_lattice_translate(x in point(1)) {
        let (r, k) = x.reduce();
        let back = x.translate_even(&k).unwrap();
        prop_assert!(close(&r, &back, 1e-15));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn discrete_adjoint_identity(which in 0usize..4, seed in any::<u64>(), r0 in 2usize..6, r1 in 2usize..6) {
        let frame = frames().swap_remove(which);
        let n = frame.n();
        let res: Vec<usize> = (0..n).map(|d| if d % 2 == 0 { r0 } else { r1 }).collect();
        let grid = Arc::new(Grid::new(&vec![-1.0; n], &vec![1.5; n], &res).unwrap());
        let xop = DiscreteXOperator::new(grid.clone(), &frame).unwrap();
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let u = DiscreteField::new(grid.clone(), (0..grid.node_count()).map(|_| next()).collect()).unwrap();
        let phi = GradientField::new(grid.clone(), xop.m(), (0..xop.m() * grid.cell_count()).map(|_| next()).collect()).unwrap();
        let lhs = xop.apply_x(&u).unwrap().inner(&phi).unwrap();
        let xt = xop.apply_x_transpose(&phi).unwrap();
        let rhs: f64 = xt.values().iter().zip(u.values()).zip(grid.node_weights()).map(|((a, b), w)| a * b * w).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{} {}", lhs, rhs);
    }

    #[test]
    fn x_gradient_is_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, seed in any::<u64>()) {
        let frame = Frame::heisenberg(1).unwrap();
        let grid = Arc::new(Grid::uniform(&[-1.0; 3], &[1.0; 3], 4).unwrap());
        let xop = DiscreteXOperator::new(grid.clone(), &frame).unwrap();
        let s = (seed % 1000) as f64;
        let u = DiscreteField::from_fn(grid.clone(), |x| (x[0] * s).sin() + x[2]);
        let v = DiscreteField::from_fn(grid.clone(), |x| x[1] * x[2] - s * x[0]);
        let w = DiscreteField::new(grid.clone(), u.values().iter().zip(v.values()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let (xu, xv, xw) = (xop.apply_x(&u).unwrap(), xop.apply_x(&v).unwrap(), xop.apply_x(&w).unwrap());
        for i in 0..xw.samples().len() {
            let expect = a * xu.samples()[i] + b * xv.samples()[i];
            prop_assert!((xw.samples()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn h_affine_fields_have_constant_gradient(eta in prop::collection::vec(-4.0..4.0f64, 2), a in -2.0..2.0f64) {
        let frame = Frame::heisenberg(1).unwrap();
        let grid = Arc::new(Grid::uniform(&[-1.0; 3], &[1.0; 3], 6).unwrap());
        let xop = DiscreteXOperator::new(grid.clone(), &frame).unwrap();
        let l = HAffine::new(eta.clone(), a);
        let u = DiscreteField::from_fn(grid.clone(), |x| l.eval(x).unwrap());
        let g = xop.apply_x(&u).unwrap();
        for c in 0..g.site_count() {
            prop_assert!((g.site(c)[0] - eta[0]).abs() <= 1e-13);
            prop_assert!((g.site(c)[1] - eta[1]).abs() <= 1e-13);
        }
    }

    #[test]
    fn ppower_gradient_matches_differences(p in 1.2..4.5f64, c in 0.5..3.0f64, seed in any::<u64>()) {
        let grid = Grid::uniform(&[0.0; 2], &[1.0; 2], 2).unwrap();
        let f = PPower::new(2, ScalarField::Const(c), p).unwrap();
        let rep = check_gradient(&f, &grid, 64, seed);
        prop_assert!(rep.passed, "{:?}", rep);
        prop_assert!(check_convexity(&f, &grid, 64, seed).passed);
        prop_assert!(check_growth(&f, &grid, 64, seed).unwrap().passed);
    }

    #[test]
    fn shifted_integrands_keep_a_growth_sandwich(p in 1.5..3.5f64, s0 in -2.0..2.0f64, s1 in -2.0..2.0f64, seed in any::<u64>()) {
        let grid = Arc::new(Grid::uniform(&[0.0; 2], &[1.0; 2], 4).unwrap());
        let f: Arc<dyn Integrand> = Arc::new(PPower::new(2, ScalarField::Const(1.5), p).unwrap());
        let phi = GradientField::from_fn(grid.clone(), 2, |x, o| {
            o[0] = s0 * x[1];
            o[1] = s1 * x[0] - 0.5;
        });
        let g = shift(f, phi).unwrap();
        let rep = check_growth(&g, &grid, 200, seed).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
        prop_assert!(check_gradient(&g, &grid, 32, seed).passed);
    }

    #[test]
    fn periodic_composition_is_lattice_periodic(y in prop::collection::vec(-3.0..3.0f64, 3), k in prop::collection::vec(-3i64..4, 3), eta in prop::collection::vec(-2.0..2.0f64, 2)) {
        let frame = Frame::heisenberg(1).unwrap();
        let a = OperatorCoefficients::scalar(2, ScalarField::function(|x: &[f64]| 2.0 + (std::f64::consts::PI * x[0]).cos() * (std::f64::consts::PI * x[2]).sin(), 1.0, 3.0).unwrap()).unwrap();
        let base: Arc<dyn Integrand> = Arc::new(Quadratic::new(a));
        let eps = 1.0;
        let fe = periodic_compose(base, &frame, eps).unwrap();
        let moved = GroupPoint::new(y.clone()).unwrap().translate_even(&k).unwrap();
        let (v0, v1) = (fe.eval(&y, &eta), fe.eval(moved.coords(), &eta));
        prop_assert!((v0 - v1).abs() <= 1e-9 * (1.0 + v0.abs()), "{} {}", v0, v1);
    }
}

fn p_problem(p: f64, res: usize) -> DiscreteProblem {
    let frame = Frame::euclidean(2).unwrap();
    let grid = Arc::new(Grid::uniform(&[0.0; 2], &[1.0; 2], res).unwrap());
    let xop = Arc::new(DiscreteXOperator::new(grid, &frame).unwrap());
    let c = ScalarField::function(|x: &[f64]| 1.5 + 0.5 * (6.0 * x[0]).sin(), 1.0, 2.0).unwrap();
    let f = Arc::new(PPower::new(2, c, p).unwrap());
    let g = Arc::new(LinearQuadratic::new(if p >= 2.0 { 0.5 } else { 0.0 }, ScalarField::Const(1.0), p).unwrap());
    DiscreteProblem::new(xop, f, Some(g), Dirichlet::Affine(HAffine::new(vec![0.3, -0.2], 0.1))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn euler_lagrange_holds_at_the_minimizer(p in 1.6..3.5f64) {
        let prob = p_problem(p, 10);
        let settings = SolverSettings { tol: 1e-9, ..SolverSettings::default() };
        let rep = minimize_convex(&prob, None, &settings).unwrap();
        prop_assert!(rep.converged, "{} {:e} {:?}", rep.message, rep.final_grad_norm, rep.value_history.len());
        let fun = assemble_functional(&prob);
        let z = fun.restrict(&rep.minimizer);
        let mut g = vec![0.0; z.len()];
        let v = fun.value_and_gradient(&z, &mut g);
        prop_assert!((v - rep.min_value).abs() <= 1e-12 * (1.0 + v.abs()));
        // Dual norm with the lumped mass.
        let w: Vec<f64> = prob.interior().iter().map(|&i| prob.grid().node_weights()[i]).collect();
        let dual = g.iter().zip(&w).map(|(a, b)| a * a / b).sum::<f64>().sqrt();
        prop_assert!(dual <= 1e-8 * (1.0 + v.abs()), "{}", dual);
    }

    #[test]
    fn minimizers_are_unique(p in 1.6..3.5f64, seed in any::<u64>()) {
        let prob = p_problem(p, 8);
        let settings = SolverSettings { tol: 1e-10, ..SolverSettings::default() };
        let a = minimize_convex(&prob, None, &settings).unwrap();
        let mut state = seed | 1;
        let start: Vec<f64> = (0..prob.grid().node_count())
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 4.0
            })
            .collect();
        let b = minimize_convex(&prob, Some(&start), &settings).unwrap();
        let grid = prob.grid().clone();
        let ua = DiscreteField::new(grid.clone(), a.minimizer.clone()).unwrap();
        let ub = DiscreteField::new(grid, b.minimizer.clone()).unwrap();
        prop_assert!(ua.l2_distance(&ub).unwrap() <= 1e-6);
        prop_assert!((a.min_value - b.min_value).abs() <= 1e-10 * (1.0 + a.min_value.abs()));
    }
}

#[test]
fn quadratic_and_general_solvers_agree() {
    let frame = Frame::heisenberg(1).unwrap();
    let grid = Arc::new(Grid::uniform(&[-1.0; 3], &[1.0; 3], 6).unwrap());
    let xop = Arc::new(DiscreteXOperator::new(grid, &frame).unwrap());
    let a = OperatorCoefficients::constant(Matrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]).unwrap()).unwrap();
    let prob = DiscreteProblem::linear(xop, a, 1.0, ScalarField::Const(1.0), Dirichlet::Affine(HAffine::linear(vec![1.0, -1.0]))).unwrap();
    let settings = SolverSettings::default();
    let cg = solve(&prob, &settings).unwrap();
    let lb = minimize_convex(&prob, None, &settings).unwrap();
    assert!(cg.converged && lb.converged, "{} | {} | {:e}", cg.message, lb.message, lb.final_grad_norm);
    assert!((cg.min_value - lb.min_value).abs() <= 1e-8 * (1.0 + cg.min_value.abs()));
    let d = cg.minimizer.iter().zip(&lb.minimizer).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-6, "{d}");
}

#[test]
fn momenta_are_the_momentum_map_of_the_gradient() {
    let frame = Frame::euclidean(1).unwrap();
    let grid = Arc::new(Grid::uniform(&[0.0], &[1.0], 64).unwrap());
    let xop = DiscreteXOperator::new(grid.clone(), &frame).unwrap();
    let f = PPower::new(1, ScalarField::Const(2.0), 3.0).unwrap();
    let u = DiscreteField::from_fn(grid.clone(), |x| (3.0 * x[0]).sin());
    let g = xop.apply_x(&u).unwrap();
    let a = momentum_map(&f, &g).unwrap();
    let b = momentum_map(&f, &g).unwrap();
    assert_eq!(a.samples(), b.samples());
    let mut out = [0.0];
    for c in 0..g.site_count() {
        f.grad(&[0.0], g.site(c), &mut out);
        assert_eq!(out[0].to_bits(), a.site(c)[0].to_bits());
    }
}

#[test]
fn cell_estimates_are_convex_bounded_and_below_the_affine_competitor() {
    let frame = Frame::euclidean(1).unwrap();
    let a = OperatorCoefficients::scalar(
        1,
        ScalarField::function(|y: &[f64]| 2.0 + (2.0 * std::f64::consts::PI * y[0]).sin(), 1.0, 3.0).unwrap(),
    )
    .unwrap();
    let f: Arc<dyn Integrand> = Arc::new(Quadratic::new(a));
    let cell = CellSetup::new(vec![256], vec![0.5, 0.25]);
    let etas = [-1.5, 0.5, 2.0];
    let est: Vec<_> = etas.iter().map(|e| effective_integrand(&f, &frame, &[*e], &cell).unwrap()).collect();
    for e in &est {
        assert!(e.within_growth(&f.growth(), 1e-10));
        assert!(e.below_affine_bound(1e-10));
    }
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        for t in [0.25, 0.5, 0.75] {
            let mid = t * etas[i] + (1.0 - t) * etas[j];
            let em = effective_integrand(&f, &frame, &[mid], &cell).unwrap();
            for k in 0..2 {
                let chord = t * est[i].values[k] + (1.0 - t) * est[j].values[k];
                assert!(em.values[k] <= chord + 1e-9, "eta {mid} eps index {k}");
            }
        }
    }
}
