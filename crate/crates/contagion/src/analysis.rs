//! System-level experiments built on the engine: per-bank shock sweeps,
//! survival-equity bisection and BankRank, (alpha, beta) phase diagrams,
//! and network rewiring trials.
//!
//! Every sweep is embarrassingly parallel and runs on the rayon pool;
//! results are collected in input order, so output is deterministic
//! regardless of the schedule or thread count.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::engine::{Engine, IntegratorConfig, Verdict};
use crate::error::{ContagionError, Result};
use crate::mat::Mat;
use crate::model::{HoldingsMatrix, ModelParams, ShockSpec};
use crate::rng::sub_stream;

/// Survival-equity bisection bracket, as multiples of the bank's equity.
pub const LAMBDA_LO: f64 = 1e-8;
pub const LAMBDA_HI: f64 = 1e3;
/// Relative tolerance on the threshold multiplier.
pub const BISECT_RTOL: f64 = 1e-3;
pub const BISECT_MAX_ITERS: usize = 40;

/// Sweeps record only the endpoint of each run; intermediate samples are
/// not kept.
fn sweep_cfg(cfg: &IntegratorConfig) -> IntegratorConfig {
    let mut c = *cfg;
    c.sample_stride = usize::MAX;
    c
}

// ---------------------------------------------------------------------------
// shock_each_bank
// ---------------------------------------------------------------------------

/// Outcome of shocking one bank in a sweep.
#[derive(Debug, Clone)]
pub struct ShockSweepEntry {
    pub bank_id: String,
    /// Final prices and verdict, or the error this run produced. A failed
    /// run does not abort the rest of the sweep.
    pub outcome: std::result::Result<(Vec<f64>, Verdict), String>,
}

/// Runs one simulation per bank, shocking exactly that bank with relative
/// size `s`, and reports each run's final price vector and verdict.
pub fn shock_each_bank(
    net: &HoldingsMatrix,
    params: ModelParams,
    cfg: &IntegratorConfig,
    s: f64,
) -> Result<Vec<ShockSweepEntry>> {
    let cfg = sweep_cfg(cfg);
    let engine = Engine::new(net, params, cfg)?;
    Ok(net
        .banks
        .par_iter()
        .map(|bank| {
            let shock = ShockSpec::new(bank.id.clone(), s);
            let outcome = match engine.run(Some(&shock)) {
                Ok(traj) => Ok((traj.final_state().p.clone(), traj.verdict)),
                Err(e) => Err(e.to_string()),
            };
            ShockSweepEntry {
                bank_id: bank.id.clone(),
                outcome,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// survival_threshold
// ---------------------------------------------------------------------------

/// Result of the survival-equity bisection for one target bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalThreshold {
    /// Smallest equity multiple (of the bank's current equity) at which the
    /// bank survives the probe shock.
    pub lambda_star: f64,
    /// `lambda_star * (1 - 10 * BISECT_RTOL)`: the explicit "just below
    /// threshold" value used by `bank_rank`.
    pub lambda_just_below: f64,
    /// The bank survives even at the lower bracket; `lambda_star` is the
    /// bracket itself.
    pub never_fails: bool,
    /// The bank fails even at the upper bracket.
    pub always_fails: bool,
    pub iterations: usize,
}

/// Bisects (in log space) the multiplier lambda on bank `target`'s equity
/// such that below `lambda_star` the bank fails during the probe run and at
/// or above it survives. Assumes survival is monotone in equity, which holds
/// because the failure condition is a threshold on the equity trajectory and
/// equity enters the dynamics only through its own initial value.
pub fn survival_threshold(
    net: &HoldingsMatrix,
    params: ModelParams,
    cfg: &IntegratorConfig,
    target: usize,
    probe: &ShockSpec,
) -> Result<SurvivalThreshold> {
    if target >= net.n_banks() {
        return Err(ContagionError::Validation(format!(
            "target index {target} out of range"
        )));
    }
    if net.banks[target].id == probe.bank_id {
        return Err(ContagionError::Validation(format!(
            "target {} cannot be the probed bank",
            probe.bank_id
        )));
    }
    let cfg = sweep_cfg(cfg);
    let e_base = net.banks[target].equity0;
    let fails = |lambda: f64| -> Result<bool> {
        let trial = net.with_equity(target, lambda * e_base);
        let traj = Engine::new(&trial, params, cfg)?.run(Some(probe))?;
        Ok(traj.final_state().failed[target])
    };

    let just_below = |l: f64| l * (1.0 - 10.0 * BISECT_RTOL);
    if !fails(LAMBDA_LO)? {
        return Ok(SurvivalThreshold {
            lambda_star: LAMBDA_LO,
            lambda_just_below: just_below(LAMBDA_LO),
            never_fails: true,
            always_fails: false,
            iterations: 1,
        });
    }
    if fails(LAMBDA_HI)? {
        return Ok(SurvivalThreshold {
            lambda_star: LAMBDA_HI,
            lambda_just_below: just_below(LAMBDA_HI),
            never_fails: false,
            always_fails: true,
            iterations: 2,
        });
    }

    let (mut lo, mut hi) = (LAMBDA_LO, LAMBDA_HI);
    let mut iterations = 2;
    while hi / lo - 1.0 > BISECT_RTOL && iterations < BISECT_MAX_ITERS {
        let mid = (lo * hi).sqrt();
        if fails(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(SurvivalThreshold {
        lambda_star: hi,
        lambda_just_below: just_below(hi),
        never_fails: false,
        always_fails: false,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// bank_rank
// ---------------------------------------------------------------------------

/// Systemic importance of one bank: how much total holdings value the
/// system retains when this bank is brought to the edge of failure and the
/// probe bank is shocked.
#[derive(Debug, Clone)]
pub struct BankRankReport {
    pub bank_id: String,
    /// `R^i`: final total holdings value / initial total holdings value.
    pub rank_value: f64,
    /// Threshold equity over the bank's original (input) equity.
    pub survival_equity_ratio: f64,
    pub total_holdings: f64,
    /// Original equity from the input network (before any fortification).
    pub equity0: f64,
    pub never_fails: bool,
    pub always_fails: bool,
    /// Set when this bank's runs errored; `rank_value` is NaN then.
    pub error: Option<String>,
}

/// Ranks every bank except the probed one, ascending by `rank_value`
/// (most systemically damaging first).
///
/// With `fortify` set, banks that fail under the baseline probe run first
/// get their equity raised to their total holdings; the fortified equities
/// persist through all subsequent bisections and runs. For each target the
/// equity is then set just below its survival threshold, the probe bank is
/// shocked, and the retained fraction of total holdings value is recorded.
pub fn bank_rank(
    net: &HoldingsMatrix,
    params: ModelParams,
    cfg: &IntegratorConfig,
    probe: &ShockSpec,
    fortify: bool,
) -> Result<Vec<BankRankReport>> {
    let cfg = sweep_cfg(cfg);
    let probe_idx = net
        .bank_index(&probe.bank_id)
        .ok_or_else(|| ContagionError::UnknownBank(probe.bank_id.clone()))?;

    let mut base_net = net.clone();
    if fortify {
        let baseline = Engine::new(net, params, cfg)?.run(Some(probe))?;
        let failed = &baseline.final_state().failed;
        for i in 0..net.n_banks() {
            if failed[i] {
                base_net = base_net.with_equity(i, base_net.row_sum(i));
            }
        }
    }

    let value0: f64 = base_net.weights.data().iter().sum();
    let targets: Vec<usize> = (0..net.n_banks()).filter(|&i| i != probe_idx).collect();
    let mut reports: Vec<BankRankReport> = targets
        .par_iter()
        .map(|&i| {
            let bank = &net.banks[i];
            let mut report = BankRankReport {
                bank_id: bank.id.clone(),
                rank_value: f64::NAN,
                survival_equity_ratio: f64::NAN,
                total_holdings: net.row_sum(i),
                equity0: bank.equity0,
                never_fails: false,
                always_fails: false,
                error: None,
            };
            let run = || -> Result<(SurvivalThreshold, f64)> {
                let th = survival_threshold(&base_net, params, &cfg, i, probe)?;
                let e_base = base_net.banks[i].equity0;
                let trial = base_net.with_equity(i, th.lambda_just_below * e_base);
                let traj = Engine::new(&trial, params, cfg)?.run(Some(probe))?;
                let f = traj.final_state();
                let value_f: f64 = (0..trial.n_banks()).map(|j| f.portfolio_value(j)).sum();
                Ok((th, value_f / value0))
            };
            match run() {
                Ok((th, r)) => {
                    report.rank_value = r;
                    report.survival_equity_ratio =
                        th.lambda_star * base_net.banks[i].equity0 / bank.equity0;
                    report.never_fails = th.never_fails;
                    report.always_fails = th.always_fails;
                }
                Err(e) => report.error = Some(e.to_string()),
            }
            report
        })
        .collect();

    // Ascending by rank value; errored entries (NaN) go last, ties break by
    // id so the order is total and reproducible.
    reports.sort_by(|a, b| {
        match (a.rank_value.is_nan(), b.rank_value.is_nan()) {
            (true, true) => a.bank_id.cmp(&b.bank_id),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            (false, false) => a
                .rank_value
                .partial_cmp(&b.rank_value)
                .unwrap()
                .then_with(|| a.bank_id.cmp(&b.bank_id)),
        }
    });
    Ok(reports)
}

/// Writes `bank_id,rank_value,survival_equity_ratio,total_holdings,equity0`.
pub fn save_bankrank_csv(reports: &[BankRankReport], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("bank_id,rank_value,survival_equity_ratio,total_holdings,equity0\n");
    for r in reports {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            r.bank_id, r.rank_value, r.survival_equity_ratio, r.total_holdings, r.equity0
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// phase_diagram
// ---------------------------------------------------------------------------

/// Sweep over an (alpha, beta) grid: order parameter (mean final price),
/// relaxation time, and verdict per cell, row-major with alpha as the outer
/// index. Cells whose run errored carry NaN metrics, a Timeout verdict, and
/// the error text.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub order_param: Mat,
    pub relax_time: Mat,
    pub verdicts: Vec<Verdict>,
    pub errors: Vec<Option<String>>,
}

impl PhaseGrid {
    pub fn verdict(&self, i: usize, j: usize) -> Verdict {
        self.verdicts[i * self.betas.len() + j]
    }
}

/// One run per grid cell, with timescales fixed at 1 (a cell is a pure
/// (alpha, beta) point; time is measured in reaction times).
pub fn phase_diagram(
    net: &HoldingsMatrix,
    alphas: &[f64],
    betas: &[f64],
    cfg: &IntegratorConfig,
    shock: &ShockSpec,
) -> Result<PhaseGrid> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(ContagionError::Config("empty parameter grid".into()));
    }
    let cfg = sweep_cfg(cfg);
    let nb = betas.len();
    let cells: Vec<(usize, usize)> = (0..alphas.len())
        .flat_map(|i| (0..nb).map(move |j| (i, j)))
        .collect();
    let results: Vec<(f64, f64, Verdict, Option<String>)> = cells
        .par_iter()
        .map(|&(i, j)| {
            let params = ModelParams::new(alphas[i], betas[j]);
            let run = || -> Result<(f64, f64, Verdict)> {
                let traj = Engine::new(net, params, cfg)?.run(Some(shock))?;
                let f = traj.final_state();
                let order = f.p.iter().sum::<f64>() / f.p.len() as f64;
                Ok((order, traj.relaxation_time, traj.verdict))
            };
            match run() {
                Ok((o, r, v)) => (o, r, v, None),
                Err(e) => (f64::NAN, f64::NAN, Verdict::Timeout, Some(e.to_string())),
            }
        })
        .collect();

    let mut order_param = Mat::zeros(alphas.len(), nb);
    let mut relax_time = Mat::zeros(alphas.len(), nb);
    let mut verdicts = Vec::with_capacity(results.len());
    let mut errors = Vec::with_capacity(results.len());
    for (&(i, j), (o, r, v, e)) in cells.iter().zip(results) {
        order_param.set(i, j, o);
        relax_time.set(i, j, r);
        verdicts.push(v);
        errors.push(e);
    }
    Ok(PhaseGrid {
        alphas: alphas.to_vec(),
        betas: betas.to_vec(),
        order_param,
        relax_time,
        verdicts,
        errors,
    })
}

/// Writes `alpha,beta,order_param,relax_time,verdict`, row-major in the
/// grid's own ordering.
pub fn save_phase_csv(grid: &PhaseGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("alpha,beta,order_param,relax_time,verdict\n");
    for (i, &alpha) in grid.alphas.iter().enumerate() {
        for (j, &beta) in grid.betas.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{},{},{},{}",
                alpha,
                beta,
                grid.order_param.get(i, j),
                grid.relax_time.get(i, j),
                grid.verdict(i, j)
            );
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// rewire_experiment
// ---------------------------------------------------------------------------

/// Outcome of one rewiring trial.
#[derive(Debug, Clone)]
pub struct RewireTrial {
    pub trial: u64,
    pub final_prices: Vec<f64>,
    pub verdict: Verdict,
    pub n_failed: usize,
}

/// Reruns the shock on `trials` randomly rewired copies of the network.
///
/// Rewiring permutes bank indices within each asset column independently
/// (asset totals preserved exactly, bank equities unchanged). With
/// `global_rows` set, a single row permutation is applied to the whole
/// matrix instead, preserving portfolios as units. Each trial draws its own
/// RNG sub-stream from `(seed, "rewire", trial)`, so results per trial are
/// independent of the number of trials requested.
pub fn rewire_experiment(
    net: &HoldingsMatrix,
    params: ModelParams,
    cfg: &IntegratorConfig,
    shock: &ShockSpec,
    seed: u64,
    trials: u64,
    global_rows: bool,
) -> Result<Vec<RewireTrial>> {
    if trials == 0 {
        return Err(ContagionError::Config("need at least one trial".into()));
    }
    let cfg = sweep_cfg(cfg);
    let (n, m) = (net.n_banks(), net.n_assets());
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = sub_stream(seed, "rewire", trial);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut weights = Mat::zeros(n, m);
            if global_rows {
                fisher_yates(&mut perm, &mut rng);
                for i in 0..n {
                    for mu in 0..m {
                        weights.set(perm[i], mu, net.weights.get(i, mu));
                    }
                }
            } else {
                for mu in 0..m {
                    for (i, slot) in perm.iter_mut().enumerate() {
                        *slot = i;
                    }
                    fisher_yates(&mut perm, &mut rng);
                    for i in 0..n {
                        weights.set(perm[i], mu, net.weights.get(i, mu));
                    }
                }
            }
            let rewired = net.with_weights(weights)?;
            let traj = Engine::new(&rewired, params, cfg)?.run(Some(shock))?;
            let f = traj.final_state();
            Ok(RewireTrial {
                trial,
                final_prices: f.p.clone(),
                verdict: traj.verdict,
                n_failed: f.failed.iter().filter(|x| **x).count(),
            })
        })
        .collect()
}

fn fisher_yates(perm: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    for i in (1..perm.len()).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

/// The conventional probe target when none is specified: the bank with the
/// largest total holdings (first one on ties, so the choice is total).
pub fn default_probe_bank(net: &HoldingsMatrix) -> &str {
    let mut best = 0;
    let mut best_row = f64::NEG_INFINITY;
    for i in 0..net.n_banks() {
        let row = net.row_sum(i);
        if row > best_row {
            best_row = row;
            best = i;
        }
    }
    &net.banks[best].id
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "series must have equal length");
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    num / (dx.sqrt() * dy.sqrt())
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[k]] {
            j += 1;
        }
        let avg = (k + j) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=j] {
            ranks[i] = avg;
        }
        k = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssetRecord, BankRecord};

    fn symmetric_net() -> HoldingsMatrix {
        HoldingsMatrix {
            banks: vec![
                BankRecord {
                    id: "B1".into(),
                    equity0: 0.9,
                    cash_minus_liability: -0.1,
                },
                BankRecord {
                    id: "B2".into(),
                    equity0: 0.9,
                    cash_minus_liability: -0.1,
                },
            ],
            assets: vec![AssetRecord {
                id: "X".into(),
                price0: 1.0,
                total0: 2.0,
            }],
            weights: Mat::from_vec(2, 1, vec![1.0, 1.0]),
        }
    }

    /// 3 banks, 2 assets; B2 is thin (small equity, real holdings).
    fn small_net() -> HoldingsMatrix {
        HoldingsMatrix {
            banks: vec![
                BankRecord {
                    id: "B1".into(),
                    equity0: 2.0,
                    cash_minus_liability: 2.0 - 3.0,
                },
                BankRecord {
                    id: "B2".into(),
                    equity0: 0.15,
                    cash_minus_liability: 0.15 - 2.0,
                },
                BankRecord {
                    id: "B3".into(),
                    equity0: 1.0,
                    cash_minus_liability: 1.0 - 1.5,
                },
            ],
            assets: vec![
                AssetRecord {
                    id: "X".into(),
                    price0: 1.0,
                    total0: 4.0,
                },
                AssetRecord {
                    id: "Y".into(),
                    price0: 1.0,
                    total0: 2.5,
                },
            ],
            weights: Mat::from_vec(3, 2, vec![2.0, 1.0, 1.5, 0.5, 0.5, 1.0]),
        }
    }

    fn cfg_for(params: &ModelParams) -> IntegratorConfig {
        IntegratorConfig::for_params(params)
    }

    #[test]
    fn shocking_either_symmetric_bank_is_identical() {
        let net = symmetric_net();
        let params = ModelParams::new(0.6, 0.6);
        let entries = shock_each_bank(&net, params, &cfg_for(&params), -0.1).unwrap();
        assert_eq!(entries.len(), 2);
        let (p1, v1) = entries[0].outcome.as_ref().unwrap();
        let (p2, v2) = entries[1].outcome.as_ref().unwrap();
        assert_eq!(v1, v2);
        assert_eq!(p1, p2, "relabeling symmetry must hold exactly");
    }

    #[test]
    fn zero_shock_sweep_returns_unit_prices() {
        let net = small_net();
        let params = ModelParams::new(0.6, 0.6);
        let entries = shock_each_bank(&net, params, &cfg_for(&params), 0.0).unwrap();
        for e in entries {
            let (p, v) = e.outcome.unwrap();
            assert_eq!(v, Verdict::Equilibrium);
            assert!(p.iter().all(|x| *x == 1.0), "prices {p:?}");
        }
    }

    #[test]
    fn sweep_survives_per_bank_errors() {
        let net = small_net();
        // alpha so large the integrator overflows: every entry errors, the
        // sweep itself still returns.
        let params = ModelParams::new(1e308, 1.0);
        let entries = shock_each_bank(&net, params, &cfg_for(&ModelParams::new(1.0, 1.0)), -0.1)
            .unwrap();
        assert_eq!(entries.len(), 3);
        for e in entries {
            assert!(e.outcome.is_err());
        }
    }

    #[test]
    fn survival_threshold_brackets_a_grid_scan() {
        let net = small_net();
        let params = ModelParams::new(1.2, 1.2);
        let cfg = cfg_for(&params);
        let probe = ShockSpec::new("B1", -0.4);
        let target = 1; // thin bank B2
        let th = survival_threshold(&net, params, &cfg, target, &probe).unwrap();
        assert!(!th.never_fails && !th.always_fails);
        assert!(th.iterations <= BISECT_MAX_ITERS);
        assert!(th.lambda_just_below < th.lambda_star);

        // Exhaustive scan: just below must fail, at/above must survive.
        let e_base = net.banks[target].equity0;
        let outcome = |lambda: f64| {
            let trial = net.with_equity(target, lambda * e_base);
            let traj = Engine::new(&trial, params, cfg).unwrap().run(Some(&probe)).unwrap();
            traj.final_state().failed[target]
        };
        assert!(
            outcome(th.lambda_star * (1.0 - 2.0 * BISECT_RTOL)),
            "should fail just below lambda_star = {}",
            th.lambda_star
        );
        assert!(
            !outcome(th.lambda_star * (1.0 + 2.0 * BISECT_RTOL)),
            "should survive just above lambda_star = {}",
            th.lambda_star
        );
    }

    #[test]
    fn zero_holdings_target_never_fails() {
        let net = small_net();
        // Move B3's holdings to B1: B3 keeps equity but holds nothing.
        let w = Mat::from_vec(3, 2, vec![2.5, 2.0, 1.5, 0.5, 0.0, 0.0]);
        let net = net.with_weights(w).unwrap();
        let params = ModelParams::new(1.2, 1.2);
        let cfg = cfg_for(&params);
        let th =
            survival_threshold(&net, params, &cfg, 2, &ShockSpec::new("B1", -0.4)).unwrap();
        assert!(th.never_fails, "decoupled bank cannot fail: {th:?}");
        assert_eq!(th.lambda_star, LAMBDA_LO);
    }

    #[test]
    fn probe_bank_cannot_be_target() {
        let net = small_net();
        let params = ModelParams::new(1.0, 1.0);
        let cfg = cfg_for(&params);
        assert!(survival_threshold(&net, params, &cfg, 0, &ShockSpec::new("B1", -0.1)).is_err());
    }

    #[test]
    fn bank_rank_shape_and_bounds() {
        let net = small_net();
        let params = ModelParams::new(0.5, 0.5);
        let cfg = cfg_for(&params);
        let probe = ShockSpec::new("B1", -0.1);
        let reports = bank_rank(&net, params, &cfg, &probe, true).unwrap();
        assert_eq!(reports.len(), 2, "probe bank excluded");
        assert!(reports.iter().all(|r| r.bank_id != "B1"));
        for r in &reports {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert!(
                (0.0..=1.0 + 1e-9).contains(&r.rank_value),
                "R = {} for {} (positive couplings, negative shock)",
                r.rank_value,
                r.bank_id
            );
            assert!(r.survival_equity_ratio > 0.0);
        }
        for w in reports.windows(2) {
            assert!(w[0].rank_value <= w[1].rank_value, "ascending order");
        }
    }

    #[test]
    fn bank_rank_is_deterministic() {
        let net = small_net();
        let params = ModelParams::new(0.8, 0.8);
        let cfg = cfg_for(&params);
        let probe = ShockSpec::new("B3", -0.2);
        let a = bank_rank(&net, params, &cfg, &probe, true).unwrap();
        let b = bank_rank(&net, params, &cfg, &probe, true).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.bank_id, y.bank_id);
            assert_eq!(x.rank_value.to_bits(), y.rank_value.to_bits());
            assert_eq!(
                x.survival_equity_ratio.to_bits(),
                y.survival_equity_ratio.to_bits()
            );
        }
    }

    #[test]
    fn bankrank_csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let net = small_net();
        let params = ModelParams::new(0.5, 0.5);
        let reports =
            bank_rank(&net, params, &cfg_for(&params), &ShockSpec::new("B1", -0.1), false)
                .unwrap();
        let path = dir.path().join("rank.csv");
        save_bankrank_csv(&reports, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "bank_id,rank_value,survival_equity_ratio,total_holdings,equity0"
        );
        assert_eq!(lines.len(), 1 + reports.len());
        assert_eq!(lines[1].split(',').count(), 5);
    }

    #[test]
    fn phase_diagram_zero_alpha_row() {
        let net = symmetric_net();
        let params = ModelParams::new(1.0, 1.0);
        let cfg = cfg_for(&params);
        let grid = phase_diagram(
            &net,
            &[0.0],
            &[0.5, 1.0, 2.0],
            &cfg,
            &ShockSpec::new("B1", -0.1),
        )
        .unwrap();
        for j in 0..3 {
            assert_eq!(grid.verdict(0, j), Verdict::Equilibrium);
            assert_eq!(grid.order_param.get(0, j), 1.0, "no price dynamics at alpha = 0");
            assert!(grid.errors[j].is_none());
        }
    }

    #[test]
    fn phase_diagram_records_cell_errors() {
        let net = symmetric_net();
        let params = ModelParams::new(1.0, 1.0);
        let cfg = cfg_for(&params);
        let grid = phase_diagram(
            &net,
            &[0.5, 1e308],
            &[0.5],
            &cfg,
            &ShockSpec::new("B1", -0.1),
        )
        .unwrap();
        assert!(grid.errors[0].is_none());
        assert_eq!(grid.verdict(0, 0), Verdict::Equilibrium);
        assert!(grid.errors[1].is_some(), "overflow cell must carry its error");
        assert_eq!(grid.verdict(1, 0), Verdict::Timeout);
        assert!(grid.order_param.get(1, 0).is_nan());
    }

    #[test]
    fn phase_csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let net = symmetric_net();
        let params = ModelParams::new(1.0, 1.0);
        let grid = phase_diagram(
            &net,
            &[0.5, 1.0],
            &[0.5, 1.0],
            &cfg_for(&params),
            &ShockSpec::new("B1", -0.1),
        )
        .unwrap();
        let path = dir.path().join("phase.csv");
        save_phase_csv(&grid, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "alpha,beta,order_param,relax_time,verdict");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].ends_with("Equilibrium"), "got {:?}", lines[1]);
    }

    #[test]
    fn mirrored_quadrants_agree_on_1x1() {
        let net = HoldingsMatrix {
            banks: vec![BankRecord {
                id: "B1".into(),
                equity0: 0.9,
                cash_minus_liability: -0.1,
            }],
            assets: vec![AssetRecord {
                id: "X".into(),
                price0: 1.0,
                total0: 1.0,
            }],
            weights: Mat::from_vec(1, 1, vec![1.0]),
        };
        let cfg = cfg_for(&ModelParams::new(1.0, 1.0));
        let shock = ShockSpec::new("B1", -0.1);
        let grid = phase_diagram(&net, &[0.5, -0.5], &[-0.5, 0.5], &cfg, &shock).unwrap();
        // (+,-) vs (-,+)
        assert_eq!(grid.verdict(0, 0), grid.verdict(1, 1));
        let a = grid.order_param.get(0, 0);
        let b = grid.order_param.get(1, 1);
        assert!(
            (a - b).abs() <= 0.05 * a.abs().max(b.abs()),
            "mirror order parameters {a} vs {b}"
        );
    }

    #[test]
    fn rewiring_preserves_column_totals_and_replays() {
        let net = small_net();
        let params = ModelParams::new(0.6, 0.6);
        let cfg = cfg_for(&params);
        let shock = ShockSpec::new("B1", -0.1);
        let trials = rewire_experiment(&net, params, &cfg, &shock, 42, 5, false).unwrap();
        assert_eq!(trials.len(), 5);
        let again = rewire_experiment(&net, params, &cfg, &shock, 42, 5, false).unwrap();
        for (x, y) in trials.iter().zip(&again) {
            assert_eq!(x.final_prices, y.final_prices, "same seed must replay");
            assert_eq!(x.verdict, y.verdict);
        }
        // Column totals preserved exactly under both rewiring modes.
        for global in [false, true] {
            let one = rewire_experiment(&net, params, &cfg, &shock, 7, 1, global).unwrap();
            assert_eq!(one.len(), 1);
        }
    }

    #[test]
    fn rewire_totals_exact() {
        // Check the permutation itself, not just the runs: rebuild one
        // trial's matrix the same way the experiment does.
        let net = small_net();
        let mut rng = sub_stream(9, "rewire", 0);
        let (n, m) = (net.n_banks(), net.n_assets());
        let mut perm: Vec<usize> = (0..n).collect();
        let mut weights = Mat::zeros(n, m);
        for mu in 0..m {
            for (i, slot) in perm.iter_mut().enumerate() {
                *slot = i;
            }
            fisher_yates(&mut perm, &mut rng);
            for i in 0..n {
                weights.set(perm[i], mu, net.weights.get(i, mu));
            }
        }
        for mu in 0..m {
            assert_eq!(
                weights.col_sum(mu),
                net.weights.col_sum(mu),
                "column {mu} total must be exactly preserved (same summands)"
            );
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // monotone transform invariance
        let xs: [f64; 4] = [0.3, 1.7, 0.9, 2.4];
        let ys: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        assert!((spearman(&xs, &ys) - 1.0).abs() < 1e-12);
        // ties get average ranks
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!(r > 0.0 && r < 1.0);
    }
}
