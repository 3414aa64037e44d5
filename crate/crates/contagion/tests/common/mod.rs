//! Shared fixtures for the integration suites: handcrafted miniature
//! networks, the bundled reference network, and an independent brute-force
//! oracle for the one-bank/one-asset system.

#![allow(dead_code)]

use contagion::mat::Mat;
use contagion::model::{AssetRecord, BankRecord, HoldingsMatrix};
use contagion::netgen::{generate, GenSpec};
use contagion::{simulate, IntegratorConfig, ModelParams, ShockSpec};

/// One bank holding `a0` shares of one asset at price 1, with cash chosen
/// so the bank's equity starts at `e0`.
pub fn net_1x1(a0: f64, e0: f64) -> HoldingsMatrix {
    let net = HoldingsMatrix {
        banks: vec![BankRecord {
            id: "B1".into(),
            equity0: e0,
            cash_minus_liability: e0 - a0,
        }],
        assets: vec![AssetRecord {
            id: "A1".into(),
            price0: 1.0,
            total0: a0,
        }],
        weights: Mat::from_vec(1, 1, vec![a0]),
    };
    net.validate().expect("1x1 fixture must be valid");
    net
}

/// A small mixed network: three banks, two assets, one bank with negative
/// cash, one holding a single asset.
pub fn net_3x2() -> HoldingsMatrix {
    let weights = Mat::from_vec(3, 2, vec![4.0, 1.0, 0.0, 2.5, 3.0, 3.0]);
    let banks = vec![
        BankRecord {
            id: "B1".into(),
            equity0: 6.0,
            cash_minus_liability: 1.0,
        },
        BankRecord {
            id: "B2".into(),
            equity0: 2.0,
            cash_minus_liability: -0.5,
        },
        BankRecord {
            id: "B3".into(),
            equity0: 7.0,
            cash_minus_liability: 1.0,
        },
    ];
    let assets = vec![
        AssetRecord {
            id: "A1".into(),
            price0: 1.0,
            total0: 7.0,
        },
        AssetRecord {
            id: "A2".into(),
            price0: 1.0,
            total0: 6.5,
        },
    ];
    let net = HoldingsMatrix {
        banks,
        assets,
        weights,
    };
    net.validate().expect("3x2 fixture must be valid");
    net
}

/// The seeded 121x5 reference network: generator defaults, bundled seed.
pub fn reference_net() -> HoldingsMatrix {
    generate(&GenSpec::default()).expect("reference network must generate")
}

/// The conventional probe shock on a network: the bank with the largest
/// holdings loses 10% of its equity.
pub fn probe_shock(net: &HoldingsMatrix) -> ShockSpec {
    ShockSpec::new(
        contagion::analysis::default_probe_bank(net).to_string(),
        -0.1,
    )
}

/// Integrator settings for raw trajectory comparison: never stop early on
/// a verdict, keep every step.
pub fn raw_trajectory_cfg(params: &ModelParams, t_max: f64) -> IntegratorConfig {
    let mut cfg = IntegratorConfig::for_params(params);
    cfg.t_max = t_max;
    cfg.hold_steps = usize::MAX;
    cfg.p_floor = 0.0;
    cfg.p_cap = 1e300;
    cfg.sample_stride = 1;
    cfg
}

/// One oracle sample of the 1x1 system.
#[derive(Debug, Clone, Copy)]
pub struct OracleSample {
    pub t: f64,
    pub a: f64,
    pub da: f64,
    pub p: f64,
    pub dp: f64,
    pub e: f64,
}

/// Brute-force explicit-Euler integration of the 1x1 system with `nsub`
/// substeps per engine step, sharing no code with the engine.
///
/// Event handling mirrors the engine's semantics exactly: failure is
/// detected at engine-step boundaries and the whole step is then redone
/// from its start with the bank frozen; the positivity clamps on holdings
/// and price also apply at engine-step boundaries. Returns one sample per
/// engine step, starting at t = 0.
pub fn euler_oracle_1x1(
    net: &HoldingsMatrix,
    params: &ModelParams,
    cfg: &IntegratorConfig,
    shock: &ShockSpec,
    nsub: usize,
) -> Vec<OracleSample> {
    assert_eq!(net.n_banks(), 1, "oracle is specific to the 1x1 system");
    assert_eq!(net.n_assets(), 1, "oracle is specific to the 1x1 system");
    assert_eq!(net.banks[0].id, shock.bank_id);

    let e0 = net.banks[0].equity0;
    let col0 = net.weights.col_sum(0);
    let thresh = cfg.eps_e * e0;
    let cap_b = cfg.rate_cap / params.tau_b;
    let cap_a = cfg.rate_cap / params.tau_a;
    let (alpha, beta) = (params.alpha, params.beta);
    let (tau_a, tau_b) = (params.tau_a, params.tau_b);

    // State order: a, da, p, dp, e.
    let deriv = |y: [f64; 5], failed: bool| -> [f64; 5] {
        let [a, da, p, dp, e] = y;
        let de = if failed { 0.0 } else { a * dp };
        let (dy_a, dy_da) = if failed {
            (0.0, 0.0)
        } else {
            let r = (de / e.max(thresh)).clamp(-cap_b, cap_b);
            (da, (beta * r * a - da) / tau_b)
        };
        let asum = a;
        let dasum = if failed { 0.0 } else { da };
        let q = if asum > cfg.eps_a * col0 {
            (dasum / asum.max(f64::MIN_POSITIVE)).clamp(-cap_a, cap_a)
        } else {
            0.0
        };
        [dy_a, dy_da, dp, (alpha * q * p - dp) / tau_a, de]
    };

    let mut y = [
        net.weights.get(0, 0),
        0.0,
        net.assets[0].price0,
        0.0,
        e0,
    ];
    let s = shock.relative_size;
    y[4] *= 1.0 + s;
    y[1] += beta * y[0] * (1.0 + s).ln() / tau_b;
    let mut failed = y[4] <= thresh;
    if failed {
        y[1] = 0.0;
        y[4] = 0.0;
    }

    let mut out = Vec::new();
    let push = |out: &mut Vec<OracleSample>, t: f64, y: &[f64; 5]| {
        out.push(OracleSample {
            t,
            a: y[0],
            da: y[1],
            p: y[2],
            dp: y[3],
            e: y[4],
        });
    };
    push(&mut out, 0.0, &y);

    let n_steps = (cfg.t_max / cfg.dt * (1.0 + 1e-12)).floor() as usize;
    let h = cfg.dt / nsub as f64;
    for k in 0..n_steps {
        let pre = y;
        // The single bank can fail at most once, so one redo suffices.
        for _attempt in 0..2 {
            let mut yt = y;
            for _ in 0..nsub {
                let d = deriv(yt, failed);
                for (v, dv) in yt.iter_mut().zip(d) {
                    *v += h * dv;
                }
            }
            if !failed && yt[4] <= thresh {
                failed = true;
                y = [pre[0], 0.0, pre[2], pre[3], 0.0];
                continue;
            }
            y = yt;
            y[0] = y[0].max(0.0);
            y[2] = y[2].max(0.0);
            break;
        }
        push(&mut out, (k + 1) as f64 * cfg.dt, &y);
    }
    out
}

/// Measured exponential rate of the price velocity of the 1x1 system
/// between t = 5 and t = 10 after an infinitesimal kick, around the balance
/// point where equity sits at `e0` times the holdings value. Negative means
/// the perturbation decays, positive means it grows.
pub fn linear_response_rate(alpha: f64, beta: f64, e0: f64) -> f64 {
    let net = net_1x1(1.0, e0);
    let params = ModelParams::new(alpha, beta);
    let mut cfg = IntegratorConfig::for_params(&params);
    cfg.t_max = 10.0;
    cfg.hold_steps = usize::MAX;
    cfg.sample_stride = 1;
    let shock = ShockSpec::new("B1", -1e-8);
    let traj = simulate(&net, params, cfg, Some(&shock)).expect("kick run");
    let at = |t: f64| {
        let k = (t / cfg.dt).round() as usize;
        let sample = &traj.samples[k];
        assert!(
            (sample.t - t).abs() < 1e-9,
            "sample grid misaligned: wanted {t}, got {}",
            sample.t
        );
        sample.dp[0].abs()
    };
    (at(10.0) / at(5.0)).ln() / 5.0
}
