use impulseflow::scenarios;
use impulseflow::{
    integrate, lie_bracket, limit_solve, BoxSet, Chart, ChartConfig, ChartPoint, ImpulseField,
    ImpulsiveControl, IntegrationConfig, Interval, OrdinaryControl, SolveConfig, SystemSpec,
};
use proptest::prelude::*;

fn skew_spec() -> SystemSpec {
    SystemSpec::builder("skew", 2)
        .interval(0.0, 1.0)
        .field(ImpulseField::new(
            "shift",
            |_, o| o.copy_from_slice(&[1.0, 0.0]),
            |_, j| j.fill(0.0),
        ))
        .field(ImpulseField::new(
            "shear",
            |x, o| {
                o[0] = 0.0;
                o[1] = x[0];
            },
            |_, j| j.copy_from_slice(&[0.0, 0.0, 1.0, 0.0]),
        ))
        .impulse_box(BoxSet::cube(2, -1.0, 1.0).unwrap())
        .build()
        .unwrap()
}

fn polar_chart() -> Chart {
    Chart::new(&scenarios::polar().spec, ChartConfig::default()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bracket_is_antisymmetric(x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let spec = skew_spec();
        let ab = lie_bracket(&spec, 0, 1, &[x, y]).unwrap();
        let ba = lie_bracket(&spec, 1, 0, &[x, y]).unwrap();
        prop_assert!(close(&ab, &[0.0, 1.0], 1e-12));
        prop_assert!(close(&ba, &[0.0, -1.0], 1e-12));
        let aa = lie_bracket(&spec, 1, 1, &[x, y]).unwrap();
        prop_assert!(aa.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn commuting_brackets_vanish(x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let spec = scenarios::polar().spec;
        let b = lie_bracket(&spec, 0, 1, &[x, y]).unwrap();
        prop_assert!(b.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn flows_match_closed_forms(x in -2.0..2.0f64, y in -2.0..2.0f64, t in -1.5..1.5f64) {
        let chart = polar_chart();
        let s = chart.flow(0, t, &[x, y]).unwrap();
        prop_assert!(close(&s, &[x * t.exp(), y * t.exp()], 1e-9));
        let r = chart.flow(1, t, &[x, y]).unwrap();
        let (sn, cs) = t.sin_cos();
        prop_assert!(close(&r, &[cs * x - sn * y, sn * x + cs * y], 1e-9));
    }

    #[test]
    fn flows_compose(x in -2.0..2.0f64, y in -2.0..2.0f64, s in -0.8..0.8f64, t in -0.8..0.8f64) {
        let chart = polar_chart();
        for alpha in 0..2 {
            let two = chart.flow(alpha, s, &chart.flow(alpha, t, &[x, y]).unwrap()).unwrap();
            let one = chart.flow(alpha, s + t, &[x, y]).unwrap();
            prop_assert!(close(&two, &one, 1e-9));
        }
    }

    #[test]
    fn chart_round_trips(
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
        z1 in -0.5..0.5f64,
        z2 in -1.5..1.5f64,
    ) {
        let chart = polar_chart();
        let p = chart.phi(&[x, y], &[z1, z2]).unwrap();
        let (back, z) = chart.phi_inverse(&p).unwrap();
        prop_assert!(close(&back, &[x, y], 1e-9));
        prop_assert_eq!(&z, &vec![z1, z2]);
        let again = chart
            .phi(&back, &z)
            .map(|q: ChartPoint| q.xi)
            .unwrap();
        prop_assert!(close(&again, &p.xi, 1e-9));
    }

    #[test]
    fn flow_order_is_irrelevant_for_commuting_fields(
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
        z1 in -0.5..0.5f64,
        z2 in -1.5..1.5f64,
    ) {
        let chart = polar_chart();
        let a = chart.varphi_ordered(&[x, y], &[z1, z2], &[0, 1]).unwrap();
        let b = chart.varphi_ordered(&[x, y], &[z1, z2], &[1, 0]).unwrap();
        prop_assert!(close(&a, &b, 1e-9));
        let scale = (-z1).exp();
        let (sn, cs) = (-z2).sin_cos();
        prop_assert!(close(&a, &[scale * (cs * x - sn * y), scale * (sn * x + cs * y)], 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// `x' = x u'` is solved by `x0 exp(u(t) - u(a))` for any piecewise-constant `u`,
    /// evaluated at every sample time, switch time and overridden instant.
    #[test]
    fn scalar_exp_limit_solution_is_exact(
        x0 in 0.2..3.0f64,
        knots in prop::collection::btree_set(1u32..999, 0..5),
        values in prop::collection::vec(-1.0..1.0f64, 6),
        spot in 1u32..999,
        spot_value in -1.0..1.0f64,
    ) {
        let sc = scenarios::scalar_exp();
        let iv = sc.spec.interval();
        let knots: Vec<f64> = knots.into_iter().map(|k| k as f64 / 1000.0).collect();
        let vals: Vec<Vec<f64>> = values[..=knots.len()].iter().map(|v| vec![*v]).collect();
        let spot = spot as f64 / 1000.0 + 1e-4;
        let u = ImpulsiveControl::piecewise_constant(
            sc.spec.u_box().clone(),
            iv,
            knots.clone(),
            vals,
            vec![(spot, vec![spot_value])],
        )
        .unwrap();
        let traj = limit_solve(&sc.spec, &[x0], &u, &OrdinaryControl::none(iv), &SolveConfig::default())
            .unwrap();
        let ua = u.eval(0.0).unwrap()[0];
        let times = (0..=20).map(|i| i as f64 / 20.0).chain(knots.iter().copied()).chain([spot]);
        for t in times {
            let want = x0 * (u.eval(t).unwrap()[0] - ua).exp();
            let got = traj.evaluate(t).unwrap()[0];
            prop_assert!((got - want).abs() <= 1e-9 * want, "t = {}: {} vs {}", t, got, want);
        }
    }

    /// Quadrature of a right-hand side with one kink at `c`.
    #[test]
    fn integrator_resolves_kinks(c in 0.05..0.95f64) {
        let iv = Interval::new(0.0, 1.0).unwrap();
        let u = ImpulsiveControl::constant(BoxSet::cube(1, -1.0, 1.0).unwrap(), iv, vec![0.0]).unwrap();
        let v = OrdinaryControl::none(iv);
        let rhs = move |t: f64, _: &[f64], _: &[f64], _: &[f64], o: &mut [f64]| {
            o[0] = (t - c).abs();
            Ok(())
        };
        let cfg = IntegrationConfig::default();
        let traj = integrate(rhs, &[0.0], &u, &v, &cfg).unwrap();
        let exact = 0.5 * (c * c + (1.0 - c) * (1.0 - c));
        let err = (traj.evaluate(1.0).unwrap()[0] - exact).abs();
        prop_assert!(err < 1e-9, "error {:e}", err);
    }
}

#[test]
fn defect_control_tightens_kink_errors() {
    let iv = Interval::new(0.0, 1.0).unwrap();
    let u = ImpulsiveControl::constant(BoxSet::cube(1, -1.0, 1.0).unwrap(), iv, vec![0.0]).unwrap();
    let v = OrdinaryControl::none(iv);
    let c = 0.3141592653589793;
    let exact = 0.5 * (c * c + (1.0 - c) * (1.0 - c));
    let error = |defect_control: bool| {
        let rhs = move |t: f64, _: &[f64], _: &[f64], _: &[f64], o: &mut [f64]| {
            o[0] = (t - c).abs();
            Ok(())
        };
        let cfg = IntegrationConfig {
            defect_control,
            ..IntegrationConfig::default()
        };
        let traj = integrate(rhs, &[0.0], &u, &v, &cfg).unwrap();
        (traj.evaluate(1.0).unwrap()[0] - exact).abs()
    };
    let with = error(true);
    let without = error(false);
    assert!(with < 1e-9, "with defect control {with:e}");
    assert!(with <= without, "{with:e} vs {without:e}");
}
