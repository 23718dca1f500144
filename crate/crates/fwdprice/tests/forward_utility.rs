//! Forward utilities: closed forms, limits, residual convergence under
//! step refinement, negative controls and the characteristic cross-check.

use fwdprice::forward_utility::{
    default_step, fast_diffusion_residual, fast_diffusion_residual_fn, forward_performance,
    merton_allocation, risk_aversion, risk_aversion_residual, risk_aversion_residual_fn,
    risk_tolerance, transport_residual, transport_residual_fn, u_pde_residual, u_pde_residual_fn,
    utility, utility_by_characteristics, utility_table, write_utility_csv, PreferenceParams,
    UtilityKind, CHARACTERISTIC_STEP,
};
use fwdprice::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Residual = fn(&UtilityKind, f64, f64, f64) -> fwdprice::Result<f64>;

const RESIDUALS: [(&str, Residual); 4] = [
    ("utility", u_pde_residual),
    ("transport", transport_residual),
    ("fast diffusion", fast_diffusion_residual),
    ("risk aversion", risk_aversion_residual),
];

/// Empirical order `log₂|R(h)/R(h/2)|` from the two finest of three levels,
/// or `None` when the residual is already at rounding level.
fn refinement_order(r: impl Fn(f64) -> f64, h0: f64, floor: f64) -> Option<f64> {
    let (r1, r2) = (r(h0 / 2.0), r(h0 / 4.0));
    if r(h0).abs() < floor {
        return None;
    }
    Some((r1 / r2).abs().log2())
}

fn random_member(rng: &mut ChaCha8Rng) -> (UtilityKind, f64, f64) {
    let t = rng.random_range(0.2..2.0);
    match rng.random_range(0..5) {
        0 => (
            UtilityKind::Exponential {
                beta: rng.random_range(0.25..4.0),
            },
            rng.random_range(-3.0..3.0),
            t,
        ),
        1 => (
            UtilityKind::Power {
                alpha: rng.random_range(0.1..0.8),
            },
            rng.random_range(0.5..3.0),
            t,
        ),
        2 => (UtilityKind::Logarithmic, rng.random_range(0.5..3.0), t),
        3 => (
            UtilityKind::General {
                alpha: 1.0,
                beta: rng.random_range(0.2..2.0),
                m: 1.0,
                n: 0.0,
            },
            rng.random_range(-2.0..2.0),
            t,
        ),
        _ => (
            UtilityKind::General {
                alpha: rng.random_range(0.2..2.5),
                beta: rng.random_range(0.2..2.0),
                m: 1.3,
                n: 0.2,
            },
            rng.random_range(-2.0..2.0),
            t,
        ),
    }
}

#[test]
fn residuals_converge_at_second_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let (kind, x, t) = random_member(&mut rng);
        for (name, f) in RESIDUALS {
            let h0 = 0.04 * x.abs().max(1.0);
            let scale = utility(&kind, x, t).unwrap().abs().max(1.0);
            if let Some(order) = refinement_order(|h| f(&kind, x, t, h).unwrap(), h0, 1e-9 * scale)
            {
                assert!(
                    order >= 1.9,
                    "{name} residual of {kind:?} at ({x}, {t}) has order {order}"
                );
                worst = worst.min(order);
            }
            // The utility residual is quadratic in u, so rounding scales with u².
            assert!(
                f(&kind, x, t, default_step(x)).unwrap().abs() < 1e-5 * scale * scale,
                "{name} {kind:?} ({x}, {t})"
            );
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn negative_controls_are_bounded_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let t = rng.random_range(0.2..2.0);
        // A static exponential violates the utility and transport equations
        // by ½e^{−2x} and ½e^{−x}: large on [−1, 1].
        let x = rng.random_range(-1.0..1.0);
        let wrong_u = |x: f64, _t: f64| -(-x).exp();
        assert!(u_pde_residual_fn(wrong_u, x, t, default_step(x)).abs() > 1e-2);
        assert!(transport_residual_fn(wrong_u, |_, _| 1.0, x, t, default_step(x)).abs() > 1e-2);
        // r = x² and γ = x leave residuals x⁴ and −1/x³, away from 0.
        let x = rng.random_range(0.5..2.0);
        assert!(fast_diffusion_residual_fn(|x, _| x * x, x, t, default_step(x)).abs() > 1e-2);
        assert!(risk_aversion_residual_fn(|x, _| x, x, t, default_step(x)).abs() > 1e-2);
    }
}

#[test]
fn hand_checkable_identities() {
    let h = 1e-3;
    // log utility: u_t = −½, u_x = 1, u_xx = −1 at (1, 1).
    assert!(
        u_pde_residual(&UtilityKind::Logarithmic, 1.0, 1.0, h)
            .unwrap()
            .abs()
            < 1e-6
    );
    assert!(
        transport_residual(&UtilityKind::Logarithmic, 1.0, 1.0, h)
            .unwrap()
            .abs()
            < 1e-6
    );
    // r = x is a stationary linear solution of the fast-diffusion equation.
    assert!(
        fast_diffusion_residual(&UtilityKind::Logarithmic, 2.0, 1.0, h)
            .unwrap()
            .abs()
            < 1e-9
    );
    // Constant risk aversion solves its equation identically.
    let exp = UtilityKind::Exponential { beta: 4.0 };
    assert!(risk_aversion_residual(&exp, 0.3, 1.0, h).unwrap().abs() < 1e-9);
}

#[test]
fn closed_form_values() {
    let exp = UtilityKind::Exponential { beta: 2.25 };
    assert_eq!(utility(&exp, 0.0, 0.0).unwrap(), -1.0);
    assert_eq!(risk_tolerance(&exp, 17.0, 3.0).unwrap(), 1.5);
    assert_eq!(utility(&UtilityKind::Logarithmic, 1.0, 0.0).unwrap(), 0.0);
    assert_eq!(
        risk_tolerance(&UtilityKind::Logarithmic, 2.5, 1.0).unwrap(),
        2.5
    );
    let gen = UtilityKind::General {
        alpha: 0.7,
        beta: 2.0,
        m: 1.0,
        n: 0.0,
    };
    assert!((risk_tolerance(&gen, 0.0, 0.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert!((risk_aversion(&gen, 0.0, 0.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    let pow = UtilityKind::Power { alpha: 0.25 };
    // δ = (0.5 − 1)/0.5 = −1: u = −1/x · e^{t/4}.
    assert!((utility(&pow, 2.0, 1.0).unwrap() + 0.5 * (0.25f64).exp()).abs() < 1e-14);
}

#[test]
fn unit_slope_general_member_tends_to_log_utility() {
    // β → 0 with M = 2, N = −ln 2 − ½ recovers ln x − t/2.
    let gen = UtilityKind::General {
        alpha: 1.0,
        beta: 1e-9,
        m: 2.0,
        n: -(2f64.ln()) - 0.5,
    };
    for (x, t) in [(0.5, 0.0), (1.5, 0.7), (4.0, 2.0)] {
        let lim = utility(&UtilityKind::Logarithmic, x, t).unwrap();
        assert!(
            (utility(&gen, x, t).unwrap() - lim).abs() < 1e-6,
            "({x}, {t})"
        );
    }
}

#[test]
fn general_member_tends_to_power_utility_up_to_scale() {
    let alpha: f64 = 0.36;
    let gen = UtilityKind::General {
        alpha,
        beta: 1e-10,
        m: 1.0,
        n: 0.0,
    };
    let pow = UtilityKind::Power { alpha };
    let ratio = |x: f64, t: f64| utility(&gen, x, t).unwrap() / utility(&pow, x, t).unwrap();
    let r0 = ratio(1.0, 0.5);
    for (x, t) in [(0.7, 0.5), (2.0, 1.5), (5.0, 0.0)] {
        assert!((ratio(x, t) / r0 - 1.0).abs() < 1e-6, "({x}, {t})");
    }
}

#[test]
fn concavity_and_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let (kind, x, t) = random_member(&mut rng);
        let h = 1e-3 * x.abs().max(1.0);
        let u = |x: f64| utility(&kind, x, t).unwrap();
        let ux = (u(x + h) - u(x - h)) / (2.0 * h);
        let uxx = (u(x + h) - 2.0 * u(x) + u(x - h)) / (h * h);
        assert!(
            ux > 0.0 && uxx < 0.0,
            "{kind:?} ({x}, {t}): u_x={ux}, u_xx={uxx}"
        );
    }
}

#[test]
fn risk_tolerance_is_asymptotically_linear() {
    let gen = UtilityKind::General {
        alpha: 0.49,
        beta: 3.0,
        m: 1.0,
        n: 0.0,
    };
    for x in [1e3, -1e3, 1e4, -1e4] {
        let slope = risk_tolerance(&gen, x, 0.5).unwrap() / x.abs();
        assert!((slope / 0.7 - 1.0).abs() < 0.01, "{x}: {slope}");
    }
}

#[test]
fn characteristics_reproduce_closed_forms() {
    let kinds = [
        (UtilityKind::Exponential { beta: 2.0 }, 0.5),
        (UtilityKind::Power { alpha: 0.3 }, 1.2),
        (UtilityKind::Logarithmic, 2.0),
        (
            UtilityKind::General {
                alpha: 1.0,
                beta: 0.8,
                m: 1.0,
                n: 0.0,
            },
            -0.4,
        ),
        (
            UtilityKind::General {
                alpha: 2.0,
                beta: 0.5,
                m: 0.7,
                n: 1.0,
            },
            0.9,
        ),
    ];
    for (kind, x) in kinds {
        let closed = utility(&kind, x, 1.5).unwrap();
        let ode = utility_by_characteristics(&kind, x, 1.5, CHARACTERISTIC_STEP).unwrap();
        assert!(
            (closed - ode).abs() < 1e-9 * closed.abs().max(1.0),
            "{kind:?}: {closed} vs {ode}"
        );
    }
}

#[test]
fn domains_and_stencils_are_enforced() {
    assert!(matches!(
        risk_tolerance(&UtilityKind::Power { alpha: 0.5 }, -1.0, 0.0),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        utility(&UtilityKind::Logarithmic, 0.0, 0.0),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        u_pde_residual(&UtilityKind::Logarithmic, 1e-4, 1.0, 1e-3),
        Err(Error::Stencil(_))
    ));
    assert!(matches!(
        transport_residual(&UtilityKind::Logarithmic, 1.0, 1e-4, 1e-3),
        Err(Error::Stencil(_))
    ));
    assert!(u_pde_residual(&UtilityKind::Logarithmic, 1.0, 1.0, 0.0).is_err());
    assert!(utility(&UtilityKind::Logarithmic, 1.0, -1.0).is_err());
    let bad = PreferenceParams {
        gamma: 0.5,
        alpha: 0.0,
        beta: 1.0,
        m: 1.0,
        n: 0.0,
    };
    assert!(bad.validate().is_err());
}

#[test]
fn performance_process_and_allocation() {
    assert_eq!(forward_performance(0.0, 0.0, 1.0).unwrap(), -1.0);
    let classical = -(-0.8f64 * 1.3).exp();
    assert!((forward_performance(1.3, 0.6, 0.8).unwrap() / classical - 0.3f64.exp()).abs() < 1e-14);
    let mut last = f64::NEG_INFINITY;
    for a in [2.0, 1.0, 0.5, 0.0] {
        let u = forward_performance(1.0, a, 0.5).unwrap();
        assert!(u > last);
        last = u;
    }
    assert!(forward_performance(1.0, -0.1, 0.5).is_err());
    let exp = PreferenceParams {
        gamma: 1.0,
        alpha: 1.0,
        beta: 1.0,
        m: 1.0,
        n: 0.0,
    }
    .exponential_kind();
    assert!((merton_allocation(0.5, 0.16, 10.0, 0.3, &exp).unwrap() - 3.125).abs() < 1e-12);
    assert_eq!(merton_allocation(0.0, 0.16, 10.0, 0.3, &exp).unwrap(), 0.0);
    assert!(
        (merton_allocation(0.4, 0.2, 3.0, 0.3, &UtilityKind::Logarithmic).unwrap() - 6.0).abs()
            < 1e-12
    );
    assert!(merton_allocation(0.4, 0.0, 3.0, 0.3, &exp).is_err());
}

#[test]
fn utility_table_csv() {
    let rows = utility_table(&UtilityKind::Logarithmic, &[1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
    assert_eq!(rows.len(), 6);
    let mut buf = Vec::new();
    write_utility_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,t,u,r,gamma\n"));
    assert_eq!(text.lines().count(), 7);
}
