mod common;

use delaymargin::bibo::{self, BiboConfig};
use delaymargin::freq::{self, Channel};
use delaymargin::linalg::{spectral_norm_c, Mat};
use delaymargin::margins::{self, MarginInput, Registry};
use delaymargin::model::{close_loop, controller_gains, m1, Controller, DelayRealization, DelayTerm, GainEstimate, GainMethod, GainSet};
use delaymargin::simulate::{input::InputSignal, integrate};
use delaymargin::{DelaySystem, PerturbationBounds};
use nalgebra::Complex;
use proptest::prelude::*;

fn five_point(sys: &DelaySystem, s: Complex<f64>, h: f64) -> delaymargin::linalg::CMat {
    let g = |z: Complex<f64>| freq::transfer(sys, z).unwrap();
    let h = Complex::new(h, 0.0);
    let c = |v: f64| Complex::new(v, 0.0);
    (g(s - h * 2.0) - g(s - h) * c(8.0) + g(s + h) * c(8.0) - g(s + h * 2.0)) / (h * 12.0)
}

fn gains(m: f64, md: f64, nom: f64, nomd: f64, err: f64) -> GainSet {
    let e = |v: f64| Some(GainEstimate::new(v, GainMethod::ClosedForm, err));
    GainSet {
        m2_nom: e(nom),
        m2_nomd: e(nomd),
        minf_nom: e(nom),
        minf_nomd: e(nomd),
        m2: e(m),
        m2d: e(md),
        minf: e(m),
        minfd: e(md),
    }
}

fn integrator(h: f64) -> (DelaySystem, PerturbationBounds) {
    let sys = DelaySystem::scalar(0.0, 1.0).with_discrete(h, m1(-1.0));
    let pert = PerturbationBounds {
        mu: vec![1.0],
        one_sided: true,
        ..PerturbationBounds::zero(&sys)
    };
    (sys, pert)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn derivative_matches_finite_differences(seed in any::<u64>(), r in 0.0f64..1.0, th in -1.0f64..1.0) {
        let sys = common::stable_retarded(seed);
        let omega = freq::root_bound(&sys, 0.0).unwrap();
        let s = Complex::from_polar(r * omega, th * std::f64::consts::FRAC_PI_2);
        let exact = freq::transfer_derivative(&sys, s).unwrap();
        let fd = five_point(&sys, s, 1e-3 * (1.0 + s.norm()));
        let rel = spectral_norm_c(&(fd - &exact)) / spectral_norm_c(&exact);
        prop_assert!(rel < 1e-6, "rel {rel} at {s}");
    }

    #[test]
    fn l2_gain_below_bibo_gain(seed in any::<u64>()) {
        let sys = common::stable_retarded(seed);
        for ch in [Channel::InputToState, Channel::DisturbanceToState] {
            let h = freq::hinf_norm(&sys, ch).unwrap();
            let (_, l1) = bibo::certified_l1(&sys, ch, &BiboConfig::default()).unwrap();
            prop_assert!(h.value <= l1.value + l1.error + h.error + 1e-9, "{ch}: {} > {}", h.value, l1.value);
        }
    }

    #[test]
    fn chains_inside_unit_circle_exterior(
        seed in any::<u64>(),
        n in 1usize..=3,
        terms in 1usize..=3,
        budget in 0.01f64..0.99,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut sys = DelaySystem::new(-Mat::identity(n, n), Mat::from_element(n, 1, 1.0));
        let raw: Vec<Mat> = (0..terms).map(|_| Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))).collect();
        let weights: Vec<f64> = (0..terms).map(|_| rng.random_range(0.1..1.0)).collect();
        let wsum: f64 = weights.iter().sum();
        for (k, (m, w)) in raw.iter().zip(&weights).enumerate() {
            let scale = budget * w / wsum / delaymargin::linalg::spectral_norm(m);
            sys = sys.with_neutral(0.5 * (k + 1) as f64, m * scale);
        }
        prop_assume!(sys.neutral_norm_sum() < 1.0);
        let loc = freq::chain_location(&sys).unwrap();
        prop_assert!(loc.moduli.iter().all(|m| *m > 1.0), "{:?}", loc.moduli);
    }

    #[test]
    fn rk4_order_on_delay_free_scalars(seed in any::<u64>()) {
        let (a, b) = common::scalar(seed);
        let sys = DelaySystem::scalar(a, b);
        let real = DelayRealization::nominal(&sys);
        let err = |dt: f64| {
            let ts = integrate(&sys, &real, &InputSignal::step(1.0), 4.0, dt).unwrap();
            (0..ts.len())
                .map(|i| (ts.x_at(i)[0] - b / -a * (1.0 - (a * ts.t(i)).exp())).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.1) / err(0.05);
        prop_assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn scaling_decreases_with_gains(
        m in 0.1f64..5.0,
        md in 1.0f64..5.0,
        grow in 1.0f64..3.0,
        h in 0.1f64..1.5,
    ) {
        let (sys, pert) = integrator(h);
        let reg = Registry::standard();
        for id in ["thm31_hinf", "thm31_bibo"] {
            let th = reg.get(id).unwrap();
            let small = gains(m, md, m, md, 0.0);
            let big = gains(m * grow, md * grow, m * grow, md * grow, 0.0);
            let a = margins::max_scaling(th, &MarginInput { sys: &sys, pert: &pert, gains: &small, closed_loop: None }).unwrap();
            let b = margins::max_scaling(th, &MarginInput { sys: &sys, pert: &pert, gains: &big, closed_loop: None }).unwrap();
            prop_assert!(b.0 <= a.0 * (1.0 + 1e-3) + 1e-4, "{id}: {} > {}", b.0, a.0);
        }
    }

    #[test]
    fn tighter_errors_never_lose_a_certificate(
        m in 0.1f64..3.0,
        md in 1.0f64..4.0,
        loose in 0.0f64..0.5,
        h in 0.1f64..1.5,
        alpha in 0.0f64..0.5,
    ) {
        let (sys, pert) = integrator(h);
        let pert = pert.scaled(alpha);
        let reg = Registry::standard();
        for id in ["thm31_hinf", "thm31_bibo"] {
            let wide = gains(m, md, m, md, loose);
            let tight = gains(m, md, m, md, 0.0);
            let w = reg.run(id, &MarginInput { sys: &sys, pert: &pert, gains: &wide, closed_loop: None }).unwrap();
            let t = reg.run(id, &MarginInput { sys: &sys, pert: &pert, gains: &tight, closed_loop: None }).unwrap();
            prop_assert!(!w.certified || t.certified);
        }
    }

    #[test]
    fn reports_recheck_and_round_trip(m in 0.1f64..3.0, md in 1.0f64..4.0, h in 0.1f64..1.5, alpha in 0.0f64..1.0) {
        let (sys, pert) = integrator(h);
        let pert = pert.scaled(alpha);
        let g = gains(m, md, m, md, 0.01);
        for id in ["thm31_hinf", "thm31_bibo"] {
            let r = Registry::standard().run(id, &MarginInput { sys: &sys, pert: &pert, gains: &g, closed_loop: None }).unwrap();
            prop_assert_eq!(r.recheck(), r.certified);
            let back: margins::MarginReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }
    }

    #[test]
    fn controller_l2_gain_below_linf_gain(
        k in proptest::collection::vec((0.0f64..3.0, -2.0f64..2.0), 1..4),
    ) {
        let mut ctrl = Controller::default();
        for (t, v) in &k {
            if ctrl.kernel.iter().all(|d| (d.delay - t).abs() > 1e-3) {
                ctrl.kernel.push(DelayTerm::new(*t, m1(*v)));
            }
        }
        let (minf, m2) = controller_gains(&ctrl);
        prop_assert!(m2.value <= minf.value + 1e-12);
    }

    #[test]
    fn zero_controller_leaves_system_unchanged(seed in any::<u64>()) {
        let sys = common::stable_retarded(seed);
        let zero = Controller::static_gain(Mat::zeros(1, sys.n));
        prop_assert_eq!(close_loop(&sys, &zero).unwrap(), sys);
    }

    #[test]
    fn simulation_is_deterministic_and_linear(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let sys = common::stable_retarded(seed);
        let real = DelayRealization::nominal(&sys);
        let u = InputSignal::random_switching(1.0, 0.7, seed);
        let dt = sys.min_positive_delay().unwrap() / 20.0;
        let a = integrate(&sys, &real, &u, 10.0, dt).unwrap();
        let b = integrate(&sys, &real, &u, 10.0, dt).unwrap();
        prop_assert_eq!(&a, &b);
        let c = integrate(&sys, &real, &InputSignal::random_switching(scale, 0.7, seed), 10.0, dt).unwrap();
        for i in 0..a.len() {
            for (x, y) in a.x_at(i).iter().zip(c.x_at(i)) {
                prop_assert!((scale * x - y).abs() <= 1e-10 * scale.max(1.0) * (1.0 + x.abs()));
            }
        }
        let z = integrate(&sys, &real, &InputSignal::zero(), 10.0, dt).unwrap();
        prop_assert!((0..z.len()).all(|i| z.x_at(i).iter().all(|x| *x == 0.0)));
    }
}
