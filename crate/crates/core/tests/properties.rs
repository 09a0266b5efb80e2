use std::f64::consts::PI;

use proptest::prelude::*;

use pllpinn::dataset::{generate_collocation, generate_labeled, DomainSpec, NormStats, SampleTimes};
use pllpinn::nn::{Activation, Network, NetworkArch, Tape};
use pllpinn::ode::{integrate, IntegratorConfig};
use pllpinn::roa::{compare, ConfusionStats, LatticeSpec, Method, RoaMap, StabilityLabel};
use pllpinn::rollout::{rollout, RolloutConfig, RomFlow, Verdict};
use pllpinn::rom::{wrap_angle, DEFAULT_L_G_PU};
use pllpinn::{PllState, SystemParams};

fn base() -> SystemParams {
    SystemParams::benchmark(DEFAULT_L_G_PU).unwrap()
}

fn arb_state() -> impl Strategy<Value = PllState> {
    (-PI..PI, -60.0..60.0f64).prop_map(|(d, w)| PllState::new(d, w))
}

/// A sub-box of the default domain.
fn arb_domain() -> impl Strategy<Value = DomainSpec> {
    (-3.0..0.0f64, 0.1..3.0f64, -60.0..0.0f64, 1.0..60.0f64, 0.1..1.0f64, 0.5..1.0f64).prop_map(
        |(d_lo, d_w, w_lo, w_w, a_lo, a_w)| DomainSpec {
            delta_range: (d_lo, d_lo + d_w),
            omega_range: (w_lo, w_lo + w_w),
            alpha_range: (a_lo, a_lo + a_w),
            ..Default::default()
        },
    )
}

fn arb_label() -> impl Strategy<Value = StabilityLabel> {
    prop_oneof![
        (0.0..2.0f64).prop_map(|t_eq| StabilityLabel::Stable { t_eq }),
        any::<bool>().prop_map(|undecided| StabilityLabel::Unstable { undecided }),
    ]
}

fn map_of(labels: Vec<StabilityLabel>) -> RoaMap {
    let lattice = LatticeSpec {
        n_delta: labels.len(),
        n_omega: 1,
        delta_range: (-PI, PI),
        omega_range: (0.0, 0.0),
    };
    RoaMap {
        method: Method::Rom,
        alpha: 1.0,
        lattice,
        labels,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrap_lands_in_half_open_turn(x in -1e4..1e4f64) {
        let w = wrap_angle(x);
        prop_assert!((-PI..PI).contains(&w));
        let turns = (x - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
        prop_assert_eq!(wrap_angle(w), w);
    }

    #[test]
    fn integration_is_deterministic_on_an_exact_grid(
        x0 in arb_state(), alpha in 0.1..2.0f64, every in 1usize..40,
    ) {
        let p = base().with_alpha(alpha).unwrap();
        let cfg = IntegratorConfig { dt: 1e-4, sample_every: every, max_time: 0.2, blowup_omega: 500.0 };
        let a = integrate(x0, &p, &cfg).unwrap();
        let b = integrate(x0, &p, &cfg).unwrap();
        prop_assert_eq!(&a.states, &b.states);
        prop_assert_eq!(&a.times, &b.times);
        if a.diverged_at.is_none() {
            let last = a.times.len() - 1;
            for (k, t) in a.times[..last].iter().enumerate() {
                prop_assert!((t - (k * every) as f64 * 1e-4).abs() < 1e-12);
            }
            prop_assert!((a.times[last] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn rk4_error_scales_with_fourth_power(x0 in arb_state(), alpha in 0.1..2.0f64) {
        let p = base().with_alpha(alpha).unwrap();
        let run = |dt: f64| {
            let cfg = IntegratorConfig {
                dt,
                sample_every: (0.01 / dt).round() as usize,
                max_time: 0.1,
                blowup_omega: f64::MAX,
            };
            integrate(x0, &p, &cfg).unwrap().states
        };
        let reference = run(2e-3 / 100.0);
        let err = |dt: f64| {
            run(dt)
                .iter()
                .zip(&reference)
                .map(|(s, r)| (s.delta - r.delta).abs().max((s.omega - r.omega).abs()))
                .fold(0.0, f64::max)
        };
        let ratio = err(2e-3) / err(1e-3);
        prop_assert!((8.0..=32.0).contains(&ratio), "halving dt reduced the error by {ratio}");
    }

    #[test]
    fn generated_points_stay_in_the_domain(spec in arb_domain(), seed in any::<u64>()) {
        let p = base();
        let data = generate_labeled(3, &SampleTimes::Random(4), &spec, spec.window, &p, seed).unwrap();
        let colloc = generate_collocation(20, &spec, seed).unwrap();
        for s in &data.samples {
            prop_assert!(spec.contains_state(s.x0) && spec.contains_alpha(s.alpha));
            prop_assert!((0.0..=spec.window).contains(&s.t));
        }
        for c in &colloc {
            prop_assert!(spec.contains_state(c.x0) && spec.contains_alpha(c.alpha));
            prop_assert!((0.0..=spec.window).contains(&c.t));
        }
    }

    #[test]
    fn relu_net_is_affine_within_an_activation_pattern(
        seed in any::<u64>(), t in 0.0..0.1f64, x0 in arb_state(), alpha in 0.1..2.0f64,
        dir in prop::array::uniform4(-1.0..1.0f64),
    ) {
        let arch = NetworkArch { hidden_layers: 2, hidden_width: 16, activation: Activation::Relu, ..Default::default() };
        let net = Network::init(arch, NormStats::default(), seed).unwrap();
        let h = 1e-4;
        let x = [t, x0.delta, x0.omega, alpha];
        let at = |k: f64| {
            let mut y = x;
            for (yi, di) in y.iter_mut().zip(dir) {
                *yi += k * h * di;
            }
            y
        };
        let mut tape = Tape::default();
        let pts = [at(-1.0), at(0.0), at(1.0)];
        net.forward_tape(&pts, false, &mut tape);
        // skip points whose pattern changes inside the stencil
        prop_assume!((0..3).all(|i| tape.min_abs_preactivation(i) > 1e-2));
        let y: Vec<PllState> = (0..3).map(|i| tape.value(i, [1.0, 1.0])).collect();
        let second = [
            y[0].delta - 2.0 * y[1].delta + y[2].delta,
            y[0].omega - 2.0 * y[1].omega + y[2].omega,
        ];
        let size = y[1].delta.abs().max(y[1].omega.abs()).max(1.0);
        prop_assert!(second[0].abs() < 1e-12 * size && second[1].abs() < 1e-12 * size, "{second:?}");
    }

    #[test]
    fn longer_horizon_keeps_the_prefix_and_stable_verdicts(x0 in arb_state(), alpha in 0.1..2.0f64) {
        let p = base();
        let flow = RomFlow::new(p.with_alpha(alpha).unwrap(), 1e-4);
        let short = RolloutConfig { horizon: 0.6, ..Default::default() };
        let long = RolloutConfig { horizon: 1.2, ..Default::default() };
        let a = rollout(&flow, x0, alpha, &p, &short).unwrap();
        let b = rollout(&flow, x0, alpha, &p, &long).unwrap();
        prop_assert_eq!(&a.states[..], &b.states[..a.states.len()]);
        if a.verdict != Verdict::Undecided {
            prop_assert_eq!(a.verdict, b.verdict);
            prop_assert_eq!(a.t_eq, b.t_eq);
        }
    }

    #[test]
    fn window_ends_are_refed_unchanged(x0 in arb_state(), alpha in 0.1..2.0f64) {
        let p = base();
        let flow = RomFlow::new(p.with_alpha(alpha).unwrap(), 1e-4);
        let cfg = RolloutConfig { horizon: 0.4, grid_points: 5, ..Default::default() };
        let r = rollout(&flow, x0, alpha, &p, &cfg).unwrap();
        // the first sample of window k+1 continues from the wrapped end of window k
        for k in 1..r.windows_used {
            let end = r.window_index.iter().rposition(|&w| w == k - 1).unwrap();
            let e = r.states[end];
            let restart = PllState::new(wrap_angle(e.delta), e.omega);
            let direct = pllpinn::ode::flow_map(&p.with_alpha(alpha).unwrap(), restart, cfg.window / 5.0, 1e-4);
            prop_assert_eq!(direct, r.states[end + 1]);
        }
    }

    #[test]
    fn lattice_points_are_distinct_and_in_range(nd in 1usize..12, nw in 1usize..12) {
        let spec = DomainSpec::default();
        let lattice = LatticeSpec { n_delta: nd, n_omega: nw, ..LatticeSpec::square(2, &spec) };
        prop_assert_eq!(lattice.len(), nd * nw);
        let pts: Vec<PllState> = (0..lattice.len()).map(|i| lattice.point(i)).collect();
        for (i, a) in pts.iter().enumerate() {
            prop_assert!(spec.contains_state(*a));
            for b in &pts[..i] {
                prop_assert!(a != b);
            }
        }
    }

    #[test]
    fn confusion_counts_partition_the_lattice(
        pair in prop::collection::vec((arb_label(), arb_label()), 1..200),
    ) {
        let (a, b): (Vec<_>, Vec<_>) = pair.into_iter().unzip();
        let n = a.len();
        let s = compare(&map_of(a.clone()), &map_of(b)).unwrap();
        prop_assert_eq!(s.total(), n);
        prop_assert_eq!(s.both_stable + s.both_unstable + s.false_stable + s.false_unstable, n);
        prop_assert_eq!(s.agree(), s.both_stable + s.both_unstable);
        let same = compare(&map_of(a.clone()), &map_of(a)).unwrap();
        prop_assert_eq!(same.agreement(), 1.0);
        prop_assert_eq!(same.t_eq_mae(), 0.0);
        let mut merged = ConfusionStats::default();
        merged.merge(&s);
        merged.merge(&same);
        prop_assert_eq!(merged.total(), 2 * n);
    }
}
