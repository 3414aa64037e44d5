//! Deterministic integrator for the coupled bank-asset dynamics.
//!
//! The model: holdings react to equity growth, prices react to aggregate
//! holdings growth, equities are marked to market,
//!
//! ```text
//! (tau_B d2/dt2 + d/dt) a[i,mu] = beta * (de[i]/e[i]) * a[i,mu]
//! (tau_A d2/dt2 + d/dt) p[mu]   = alpha * (dA[mu]/A[mu]) * p[mu]
//! de[i] = sum_mu a[i,mu] * dp[mu]
//! ```
//!
//! with `A[mu]` the column total over all banks. Failure is absorbing: when
//! a bank's equity falls to `eps_e * e0`, its equity is set to zero, its
//! holdings freeze (velocity zeroed, row excluded from `dA`), but the frozen
//! shares remain on the market and keep contributing to `A[mu]`.
//!
//! Integration is classic fixed-step RK4. Two regularisations keep the
//! right-hand side bounded without touching the dynamics in the regime of
//! interest: the relative rates `de/e` and `dA/A` are clipped to
//! `rate_cap / tau` and the denominators are floored (equity at
//! `eps_e * e0`, holdings at `eps_a * A0`). When a failure is detected
//! inside a step, the step is *redone*: the pre-step state is restored, the
//! newly failed banks are frozen there, and the step re-integrates, so the
//! accepted trajectory never contains a partially failed bank.

use std::fmt;
use std::path::Path;

use crate::error::{ContagionError, Result};
use crate::mat::Mat;
use crate::model::{initial_state, HoldingsMatrix, ModelParams, ShockSpec, SystemState};

/// Long-run outcome of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Verdict {
    /// All relative velocities stayed below `vel_tol` for `hold_steps`
    /// consecutive steps.
    Equilibrium,
    /// Some price fell below `p_floor`.
    Crash,
    /// Some price rose above `p_cap`.
    Bubble,
    /// Neither happened before `t_max`.
    Timeout,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Equilibrium => "Equilibrium",
            Verdict::Crash => "Crash",
            Verdict::Bubble => "Bubble",
            Verdict::Timeout => "Timeout",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Integrator settings. `for_params` picks defaults scaled to the model
/// timescales; every field can be overridden afterwards.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    /// RK4 step. Default `min(tau_A, tau_B) / 50`.
    pub dt: f64,
    /// Simulation horizon. Default `200 * max(tau_A, tau_B)`.
    pub t_max: f64,
    /// Equilibrium threshold on the scaled velocity metric. Default 1e-8.
    pub vel_tol: f64,
    /// Consecutive quiet steps required for an Equilibrium verdict. Default 50.
    pub hold_steps: usize,
    /// Crash threshold on prices. Default 1e-6.
    pub p_floor: f64,
    /// Bubble threshold on prices. Default 1e3.
    pub p_cap: f64,
    /// Failure threshold, relative to the bank's initial equity. Default 1e-9.
    pub eps_e: f64,
    /// Holdings-denominator guard, relative to the asset's initial total.
    /// Default 1e-12.
    pub eps_a: f64,
    /// Bound on the relative rates feeding the accelerations, in units of
    /// the corresponding 1/tau. Default 10.
    pub rate_cap: f64,
    /// A state sample is recorded every `sample_stride` steps (the initial
    /// and final states are always recorded). Default 10.
    pub sample_stride: usize,
}

impl IntegratorConfig {
    pub fn for_params(params: &ModelParams) -> Self {
        let tau_min = params.tau_a.min(params.tau_b);
        let tau_max = params.tau_a.max(params.tau_b);
        IntegratorConfig {
            dt: tau_min / 50.0,
            t_max: 200.0 * tau_max,
            vel_tol: 1e-8,
            hold_steps: 50,
            p_floor: 1e-6,
            p_cap: 1e3,
            eps_e: 1e-9,
            eps_a: 1e-12,
            rate_cap: 10.0,
            sample_stride: 10,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let tau_min = params.tau_a.min(params.tau_b);
        let bad = |msg: String| Err(ContagionError::Config(msg));
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt < tau_min) {
            return bad(format!(
                "dt must satisfy 0 < dt < min(tau) = {tau_min}, got {}",
                self.dt
            ));
        }
        if !(self.t_max.is_finite() && self.t_max >= self.dt) {
            return bad(format!("t_max must be finite and >= dt, got {}", self.t_max));
        }
        if !(self.vel_tol.is_finite() && self.vel_tol > 0.0) {
            return bad(format!(
                "vel_tol must be positive and finite, got {}",
                self.vel_tol
            ));
        }
        if self.hold_steps == 0 {
            return bad("hold_steps must be at least 1".into());
        }
        if !(self.p_floor >= 0.0 && self.p_cap > 1.0 && self.p_floor < 1.0) {
            return bad(format!(
                "need 0 <= p_floor < 1 < p_cap, got p_floor = {}, p_cap = {}",
                self.p_floor, self.p_cap
            ));
        }
        if !(self.eps_e > 0.0 && self.eps_e < 1.0) {
            return bad(format!("eps_e must be in (0, 1), got {}", self.eps_e));
        }
        if !(self.eps_a >= 0.0 && self.eps_a < 1.0) {
            return bad(format!("eps_a must be in [0, 1), got {}", self.eps_a));
        }
        if !(self.rate_cap.is_finite() && self.rate_cap > 0.0) {
            return bad(format!("rate_cap must be positive, got {}", self.rate_cap));
        }
        if self.sample_stride == 0 {
            return bad("sample_stride must be at least 1".into());
        }
        Ok(())
    }
}

/// A bank failure: who and when (detection time, quantised to the step on
/// which the equity threshold was crossed).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FailureEvent {
    pub bank_id: String,
    pub t: f64,
}

/// Everything a run produces: decimated state samples (first and last always
/// included), the verdict, when the verdict condition was first met, and the
/// failure log in order of occurrence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<SystemState>,
    pub verdict: Verdict,
    pub relaxation_time: f64,
    pub failures: Vec<FailureEvent>,
}

impl Trajectory {
    pub fn final_state(&self) -> &SystemState {
        self.samples.last().expect("a trajectory has at least one sample")
    }

    pub fn failed_ids(&self) -> Vec<&str> {
        self.failures.iter().map(|f| f.bank_id.as_str()).collect()
    }
}

/// Applies an instantaneous equity shock to `state`:
/// `e_j -> (1 + s) e_j`, and the bank's holdings pick up the matching
/// initial velocity `da_j += beta * a_j * ln(1 + s) / tau_B`.
pub fn apply_shock(
    state: &mut SystemState,
    net: &HoldingsMatrix,
    params: &ModelParams,
    shock: &ShockSpec,
) -> Result<()> {
    shock.validate()?;
    let j = net
        .bank_index(&shock.bank_id)
        .ok_or_else(|| ContagionError::UnknownBank(shock.bank_id.clone()))?;
    if state.failed[j] {
        return Err(ContagionError::Shock(format!(
            "bank {} has already failed",
            shock.bank_id
        )));
    }
    let s = shock.relative_size;
    state.e[j] *= 1.0 + s;
    let kick = params.beta * (1.0 + s).ln() / params.tau_b;
    let m = state.n_assets();
    for mu in 0..m {
        let v = state.da.get(j, mu) + kick * state.a.get(j, mu);
        state.da.set(j, mu, v);
    }
    Ok(())
}

// Flat state layout used internally: [a (n*m) | da (n*m) | p (m) | dp (m) | e (n)].
struct Layout {
    n: usize,
    m: usize,
}

/// The five views of a flat state vector: (a, da, p, dp, e).
type StateViews<'y> = (&'y [f64], &'y [f64], &'y [f64], &'y [f64], &'y [f64]);

impl Layout {
    fn len(&self) -> usize {
        2 * self.n * self.m + 2 * self.m + self.n
    }

    fn split<'y>(&self, y: &'y [f64]) -> StateViews<'y> {
        let nm = self.n * self.m;
        let (a, rest) = y.split_at(nm);
        let (da, rest) = rest.split_at(nm);
        let (p, rest) = rest.split_at(self.m);
        let (dp, e) = rest.split_at(self.m);
        (a, da, p, dp, e)
    }

    /// Name of the state variable at flat index `k`, for error messages.
    fn var_name(&self, k: usize, net: &HoldingsMatrix) -> String {
        let nm = self.n * self.m;
        if k < nm {
            format!("a[{},{}]", net.banks[k / self.m].id, net.assets[k % self.m].id)
        } else if k < 2 * nm {
            let k = k - nm;
            format!("da[{},{}]", net.banks[k / self.m].id, net.assets[k % self.m].id)
        } else if k < 2 * nm + self.m {
            format!("p[{}]", net.assets[k - 2 * nm].id)
        } else if k < 2 * nm + 2 * self.m {
            format!("dp[{}]", net.assets[k - 2 * nm - self.m].id)
        } else {
            format!("e[{}]", net.banks[k - 2 * nm - 2 * self.m].id)
        }
    }
}

struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    yt: Vec<f64>,
    y_pre: Vec<f64>,
    asum: Vec<f64>,
    dasum: Vec<f64>,
    de: Vec<f64>,
}

impl Scratch {
    fn new(layout: &Layout) -> Self {
        let l = layout.len();
        Scratch {
            k1: vec![0.0; l],
            k2: vec![0.0; l],
            k3: vec![0.0; l],
            k4: vec![0.0; l],
            yt: vec![0.0; l],
            y_pre: vec![0.0; l],
            asum: vec![0.0; layout.m],
            dasum: vec![0.0; layout.m],
            de: vec![0.0; layout.n],
        }
    }
}

/// The integrator, bound to one network and one parameter set.
pub struct Engine<'n> {
    net: &'n HoldingsMatrix,
    params: ModelParams,
    cfg: IntegratorConfig,
    layout: Layout,
    /// Initial (pre-shock) equities: failure thresholds and velocity scales.
    e0: Vec<f64>,
    /// Initial portfolio sizes per bank: velocity scales.
    row0: Vec<f64>,
    /// Initial totals per asset: denominators guards.
    col0: Vec<f64>,
    tau_ref: f64,
}

impl<'n> Engine<'n> {
    pub fn new(net: &'n HoldingsMatrix, params: ModelParams, cfg: IntegratorConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate(&params)?;
        let n = net.n_banks();
        let m = net.n_assets();
        Ok(Engine {
            net,
            params,
            cfg,
            layout: Layout { n, m },
            e0: net.banks.iter().map(|b| b.equity0).collect(),
            row0: (0..n).map(|i| net.weights.row_sum(i)).collect(),
            col0: (0..m).map(|mu| net.weights.col_sum(mu)).collect(),
            tau_ref: params.tau_a.max(params.tau_b),
        })
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Right-hand side of the first-order system. Failed banks contribute
    /// frozen holdings to `asum` but nothing to `dasum`, and have no
    /// dynamics of their own.
    fn deriv(&self, y: &[f64], failed: &[bool], scratch_de: &mut [f64], asum: &mut [f64], dasum: &mut [f64], dy: &mut [f64]) {
        let (n, m) = (self.layout.n, self.layout.m);
        let nm = n * m;
        let (a, da, p, dp, e) = self.layout.split(y);

        asum.fill(0.0);
        dasum.fill(0.0);
        for i in 0..n {
            let arow = &a[i * m..(i + 1) * m];
            for (mu, w) in arow.iter().enumerate() {
                asum[mu] += w;
            }
            if !failed[i] {
                let darow = &da[i * m..(i + 1) * m];
                for (mu, v) in darow.iter().enumerate() {
                    dasum[mu] += v;
                }
            }
        }

        let cap_b = self.cfg.rate_cap / self.params.tau_b;
        let cap_a = self.cfg.rate_cap / self.params.tau_a;
        let (dy_a, rest) = dy.split_at_mut(nm);
        let (dy_da, rest) = rest.split_at_mut(nm);
        let (dy_p, rest) = rest.split_at_mut(m);
        let (dy_dp, dy_e) = rest.split_at_mut(m);

        for i in 0..n {
            let arow = &a[i * m..(i + 1) * m];
            let darow = &da[i * m..(i + 1) * m];
            let dya_row = &mut dy_a[i * m..(i + 1) * m];
            let dyda_row = &mut dy_da[i * m..(i + 1) * m];
            if failed[i] {
                dya_row.fill(0.0);
                dyda_row.fill(0.0);
                dy_e[i] = 0.0;
                scratch_de[i] = 0.0;
                continue;
            }
            let mut de_i = 0.0;
            for (w, v) in arow.iter().zip(dp.iter()) {
                de_i += w * v;
            }
            scratch_de[i] = de_i;
            // Mark-to-market equity moves with the uncapped flow; only the
            // rate feeding the holdings acceleration is clipped.
            dy_e[i] = de_i;
            let denom = e[i].max(self.cfg.eps_e * self.e0[i]);
            let r = (de_i / denom).clamp(-cap_b, cap_b);
            let g = self.params.beta * r;
            for mu in 0..m {
                dya_row[mu] = darow[mu];
                dyda_row[mu] = (g * arow[mu] - darow[mu]) / self.params.tau_b;
            }
        }

        for mu in 0..m {
            let guard = self.cfg.eps_a * self.col0[mu];
            let q = if asum[mu] > guard {
                (dasum[mu] / asum[mu].max(f64::MIN_POSITIVE)).clamp(-cap_a, cap_a)
            } else {
                0.0
            };
            dy_p[mu] = dp[mu];
            dy_dp[mu] = (self.params.alpha * q * p[mu] - dp[mu]) / self.params.tau_a;
        }
    }

    /// Equity flow `sum_mu a[i,mu] dp[mu]` for live banks, zero for failed.
    fn compute_de(&self, y: &[f64], failed: &[bool], de: &mut [f64]) {
        let m = self.layout.m;
        let (a, _, _, dp, _) = self.layout.split(y);
        for (i, de_i) in de.iter_mut().enumerate() {
            *de_i = if failed[i] {
                0.0
            } else {
                a[i * m..(i + 1) * m]
                    .iter()
                    .zip(dp.iter())
                    .map(|(w, v)| w * v)
                    .sum()
            };
        }
    }

    /// Scaled maximum relative velocity over live banks and all assets:
    /// the quantity compared against `vel_tol` for the Equilibrium verdict.
    fn velocity_metric(&self, y: &[f64], failed: &[bool], de: &[f64]) -> f64 {
        let m = self.layout.m;
        let (_, da, _, dp, _) = self.layout.split(y);
        let mut vel: f64 = 0.0;
        for v in dp {
            vel = vel.max(v.abs());
        }
        for i in 0..self.layout.n {
            if failed[i] {
                continue;
            }
            if self.row0[i] > 0.0 {
                let s: f64 = da[i * m..(i + 1) * m].iter().map(|v| v.abs()).sum();
                vel = vel.max(s / self.row0[i]);
            }
            vel = vel.max(de[i].abs() / self.e0[i]);
        }
        vel * self.tau_ref
    }

    fn flatten(&self, state: &SystemState, y: &mut Vec<f64>) {
        y.clear();
        y.extend_from_slice(state.a.data());
        y.extend_from_slice(state.da.data());
        y.extend_from_slice(&state.p);
        y.extend_from_slice(&state.dp);
        y.extend_from_slice(&state.e);
    }

    fn unflatten(&self, y: &[f64], t: f64, failed: &[bool], de: &[f64]) -> SystemState {
        let (n, m) = (self.layout.n, self.layout.m);
        let (a, da, p, dp, e) = self.layout.split(y);
        SystemState {
            t,
            a: Mat::from_vec(n, m, a.to_vec()),
            da: Mat::from_vec(n, m, da.to_vec()),
            p: p.to_vec(),
            dp: dp.to_vec(),
            e: e.to_vec(),
            de: de.to_vec(),
            failed: failed.to_vec(),
        }
    }

    fn check_finite(&self, y: &[f64], t: f64) -> Result<()> {
        if let Some(k) = y.iter().position(|v| !v.is_finite()) {
            return Err(ContagionError::NonFinite {
                var: self.layout.var_name(k, self.net),
                t,
            });
        }
        Ok(())
    }

    /// Freezes bank `i` in the flat state: equity to zero, holdings velocity
    /// to zero. The shares themselves stay where they are.
    fn freeze(&self, y: &mut [f64], i: usize) {
        let (n, m) = (self.layout.n, self.layout.m);
        let nm = n * m;
        for mu in 0..m {
            y[nm + i * m + mu] = 0.0;
        }
        y[2 * nm + 2 * m + i] = 0.0;
    }

    /// One accepted RK4 step from `t` to `t + dt`, including failure
    /// relocation: if new failures are detected in the tentative end state,
    /// the step is redone from the pre-step state with those banks frozen.
    /// Returns the indices of banks that failed on this step.
    fn step(
        &self,
        y: &mut [f64],
        failed: &mut [bool],
        s: &mut Scratch,
        t: f64,
        newly_failed: &mut Vec<usize>,
    ) -> Result<()> {
        let dt = self.cfg.dt;
        let l = self.layout.len();
        let (n, m) = (self.layout.n, self.layout.m);
        let nm = n * m;
        newly_failed.clear();
        s.y_pre.copy_from_slice(y);

        // Each redo permanently freezes at least one bank, so the loop runs
        // at most n+1 times.
        for _attempt in 0..=self.layout.n {
            self.deriv(y, failed, &mut s.de, &mut s.asum, &mut s.dasum, &mut s.k1);
            for k in 0..l {
                s.yt[k] = y[k] + 0.5 * dt * s.k1[k];
            }
            self.deriv(&s.yt, failed, &mut s.de, &mut s.asum, &mut s.dasum, &mut s.k2);
            for k in 0..l {
                s.yt[k] = y[k] + 0.5 * dt * s.k2[k];
            }
            self.deriv(&s.yt, failed, &mut s.de, &mut s.asum, &mut s.dasum, &mut s.k3);
            for k in 0..l {
                s.yt[k] = y[k] + dt * s.k3[k];
            }
            self.deriv(&s.yt, failed, &mut s.de, &mut s.asum, &mut s.dasum, &mut s.k4);
            for k in 0..l {
                s.yt[k] = y[k] + dt / 6.0 * (s.k1[k] + 2.0 * s.k2[k] + 2.0 * s.k3[k] + s.k4[k]);
            }
            self.check_finite(&s.yt, t + dt)?;

            let e_new = &s.yt[2 * nm + 2 * m..];
            let mut any_new = false;
            for i in 0..n {
                if !failed[i] && e_new[i] <= self.cfg.eps_e * self.e0[i] {
                    failed[i] = true;
                    newly_failed.push(i);
                    any_new = true;
                }
            }
            if !any_new {
                y.copy_from_slice(&s.yt);
                // Positivity: holdings and prices cannot go below zero.
                // Clamping after the full step keeps the step deterministic
                // and the clamped variables' velocities are damped towards
                // zero by the dynamics themselves.
                for k in 0..nm {
                    if y[k] < 0.0 {
                        y[k] = 0.0;
                    }
                }
                for k in 2 * nm..2 * nm + m {
                    if y[k] < 0.0 {
                        y[k] = 0.0;
                    }
                }
                return Ok(());
            }
            // Redo from the pre-step state with the new failures frozen.
            y.copy_from_slice(&s.y_pre);
            for &i in newly_failed.iter() {
                self.freeze(y, i);
            }
            s.y_pre.copy_from_slice(y);
        }
        Err(ContagionError::NonFinite {
            var: "failure relocation did not converge".into(),
            t: t + dt,
        })
    }

    /// Integrates from the initial network state (with `shock` applied at
    /// t = 0, if given) until a verdict is reached or `t_max` elapses.
    pub fn run(&self, shock: Option<&ShockSpec>) -> Result<Trajectory> {
        let mut state0 = initial_state(self.net);
        if let Some(shock) = shock {
            apply_shock(&mut state0, self.net, &self.params, shock)?;
        }

        let mut failed = vec![false; self.layout.n];
        let mut failures: Vec<FailureEvent> = Vec::new();
        let mut y = Vec::with_capacity(self.layout.len());
        self.flatten(&state0, &mut y);

        // A shock can wipe a bank out instantly; settle that before stepping.
        for i in 0..self.layout.n {
            if state0.e[i] <= self.cfg.eps_e * self.e0[i] {
                failed[i] = true;
                self.freeze(&mut y, i);
                failures.push(FailureEvent {
                    bank_id: self.net.banks[i].id.clone(),
                    t: 0.0,
                });
            }
        }

        let mut scratch = Scratch::new(&self.layout);
        let mut de = vec![0.0; self.layout.n];
        self.compute_de(&y, &failed, &mut de);

        let mut samples = Vec::new();
        samples.push(self.unflatten(&y, 0.0, &failed, &de));

        let dt = self.cfg.dt;
        let n_steps = (self.cfg.t_max / dt * (1.0 + 1e-12)).floor() as usize;
        let mut quiet = 0usize;
        let mut newly = Vec::new();
        let mut verdict = Verdict::Timeout;
        let mut relaxation_time = self.cfg.t_max;

        for k in 0..n_steps {
            let t0 = k as f64 * dt;
            let t1 = (k + 1) as f64 * dt;
            self.step(&mut y, &mut failed, &mut scratch, t0, &mut newly)?;
            for &i in &newly {
                failures.push(FailureEvent {
                    bank_id: self.net.banks[i].id.clone(),
                    t: t1,
                });
            }
            self.compute_de(&y, &failed, &mut de);

            let nm = self.layout.n * self.layout.m;
            let p = &y[2 * nm..2 * nm + self.layout.m];
            if p.iter().any(|v| *v < self.cfg.p_floor) {
                verdict = Verdict::Crash;
                relaxation_time = t1;
                samples.push(self.unflatten(&y, t1, &failed, &de));
                break;
            }
            if p.iter().any(|v| *v > self.cfg.p_cap) {
                verdict = Verdict::Bubble;
                relaxation_time = t1;
                samples.push(self.unflatten(&y, t1, &failed, &de));
                break;
            }

            if self.velocity_metric(&y, &failed, &de) < self.cfg.vel_tol {
                quiet += 1;
            } else {
                quiet = 0;
            }
            if quiet >= self.cfg.hold_steps {
                verdict = Verdict::Equilibrium;
                relaxation_time = t1;
                samples.push(self.unflatten(&y, t1, &failed, &de));
                break;
            }

            if (k + 1) % self.cfg.sample_stride == 0 {
                samples.push(self.unflatten(&y, t1, &failed, &de));
            }
        }

        // On timeout, make sure the horizon state itself is the last sample.
        if verdict == Verdict::Timeout {
            let t_end = n_steps as f64 * dt;
            if samples.last().map(|s| s.t) != Some(t_end) {
                samples.push(self.unflatten(&y, t_end, &failed, &de));
            }
        }

        Ok(Trajectory {
            samples,
            verdict,
            relaxation_time,
            failures,
        })
    }
}

/// One-call convenience wrapper: build an engine and run a single shock.
pub fn simulate(
    net: &HoldingsMatrix,
    params: ModelParams,
    cfg: IntegratorConfig,
    shock: Option<&ShockSpec>,
) -> Result<Trajectory> {
    Engine::new(net, params, cfg)?.run(shock)
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Writes price samples as `t,asset_id,price` and equity samples as
/// `t,bank_id,equity` (one row per sample per series, in sample order).
pub fn save_trajectory_csvs(
    traj: &Trajectory,
    net: &HoldingsMatrix,
    prices_path: impl AsRef<Path>,
    equities_path: impl AsRef<Path>,
) -> Result<()> {
    use std::fmt::Write as _;
    let mut prices = String::from("t,asset_id,price\n");
    let mut equities = String::from("t,bank_id,equity\n");
    for s in &traj.samples {
        for (mu, asset) in net.assets.iter().enumerate() {
            let _ = writeln!(prices, "{},{},{}", s.t, asset.id, s.p[mu]);
        }
        for (i, bank) in net.banks.iter().enumerate() {
            let _ = writeln!(equities, "{},{},{}", s.t, bank.id, s.e[i]);
        }
    }
    std::fs::write(prices_path, prices)?;
    std::fs::write(equities_path, equities)?;
    Ok(())
}

/// Verdict summary as a JSON value with stable key order.
pub fn verdict_json(traj: &Trajectory) -> serde_json::Value {
    serde_json::json!({
        "verdict": traj.verdict.as_str(),
        "relaxation_time": traj.relaxation_time,
        "final_time": traj.final_state().t,
        "failed_banks": traj.failures.iter().map(|f| {
            serde_json::json!({ "bank_id": f.bank_id, "t": f.t })
        }).collect::<Vec<_>>(),
    })
}

pub fn save_verdict_json(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&verdict_json(traj)).expect("static JSON shape");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::model::{AssetRecord, BankRecord};

    /// A 1x1 network: one bank holding `a0` shares, equity `e0`.
    fn net_1x1(a0: f64, e0: f64) -> HoldingsMatrix {
        HoldingsMatrix {
            banks: vec![BankRecord {
                id: "B1".into(),
                equity0: e0,
                cash_minus_liability: e0 - a0,
            }],
            assets: vec![AssetRecord {
                id: "X".into(),
                price0: 1.0,
                total0: a0,
            }],
            weights: Mat::from_vec(1, 1, vec![a0]),
        }
    }

    fn shock(s: f64) -> ShockSpec {
        ShockSpec::new("B1", s)
    }

    #[test]
    fn zero_shock_is_a_fixed_point() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(1.0, 1.0);
        let cfg = IntegratorConfig::for_params(&params);
        let traj = simulate(&net, params, cfg, Some(&shock(0.0))).unwrap();
        assert_eq!(traj.verdict, Verdict::Equilibrium);
        let f = traj.final_state();
        assert_eq!(f.p[0], 1.0, "price must not move at a fixed point");
        assert_eq!(f.e[0], 0.9);
        assert_eq!(f.a.get(0, 0), 1.0);
        // Quiet from the first step, so relaxation = hold_steps * dt.
        let expect = cfg.hold_steps as f64 * cfg.dt;
        assert!((traj.relaxation_time - expect).abs() < 1e-12);
    }

    #[test]
    fn negative_shock_drags_price_down_monotonically() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(0.5, 0.5);
        let mut cfg = IntegratorConfig::for_params(&params);
        cfg.sample_stride = 1;
        let traj = simulate(&net, params, cfg, Some(&shock(-0.1))).unwrap();
        assert_eq!(traj.verdict, Verdict::Equilibrium);
        let prices: Vec<f64> = traj.samples.iter().map(|s| s.p[0]).collect();
        for w in prices.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "price increased after a pure negative shock: {} -> {}",
                w[0],
                w[1]
            );
        }
        let f = traj.final_state();
        assert!(f.p[0] > 0.0 && f.p[0] < 1.0, "final price {}", f.p[0]);
        assert!(traj.failures.is_empty());
    }

    #[test]
    fn positive_and_negative_shocks_are_roughly_mirrored() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(0.5, 0.5);
        let cfg = IntegratorConfig::for_params(&params);
        let down = simulate(&net, params, cfg, Some(&shock(-0.02))).unwrap();
        let up = simulate(&net, params, cfg, Some(&shock(0.02))).unwrap();
        assert_eq!(up.verdict, Verdict::Equilibrium);
        let (pd, pu) = (down.final_state().p[0], up.final_state().p[0]);
        assert!(pd < 1.0 && pu > 1.0);
        // log-price response is symmetric to leading order (corrections O(s))
        let asym = (pd.ln() + pu.ln()).abs() / pu.ln().abs();
        assert!(asym < 0.1, "asymmetry {asym}, prices {pd} / {pu}");
    }

    #[test]
    fn strong_coupling_crashes() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(2.0, 2.0);
        let mut cfg = IntegratorConfig::for_params(&params);
        cfg.sample_stride = 1;
        let traj = simulate(&net, params, cfg, Some(&shock(-0.1))).unwrap();
        assert_eq!(traj.verdict, Verdict::Crash);
        assert!(traj.relaxation_time < cfg.t_max);
        // Prices and holdings never go negative anywhere on the trajectory.
        for s in &traj.samples {
            assert!(s.p.iter().all(|p| *p >= 0.0));
            assert!(s.a.data().iter().all(|a| *a >= 0.0));
        }
    }

    #[test]
    fn wipeout_shock_fails_bank_at_t0() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(1.0, 1.0);
        let cfg = IntegratorConfig::for_params(&params);
        let traj = simulate(&net, params, cfg, Some(&shock(-1.0 + 1e-13))).unwrap();
        assert_eq!(traj.failures.len(), 1);
        assert_eq!(traj.failures[0].t, 0.0);
        let s0 = &traj.samples[0];
        assert!(s0.failed[0]);
        assert_eq!(s0.e[0], 0.0, "failed bank equity is wiped to zero");
        assert_eq!(s0.da.get(0, 0), 0.0, "failed bank holdings are frozen");
    }

    #[test]
    fn failure_is_absorbing_and_holdings_stay_on_market() {
        // Two banks; the shocked one is thin (low equity) and fails, the
        // other watches. The failed bank's shares must keep counting
        // towards the asset total (price keeps reacting to them).
        let net = HoldingsMatrix {
            banks: vec![
                BankRecord {
                    id: "B1".into(),
                    equity0: 0.02,
                    cash_minus_liability: 0.02 - 1.0,
                },
                BankRecord {
                    id: "B2".into(),
                    equity0: 1.0,
                    cash_minus_liability: 0.0,
                },
            ],
            assets: vec![AssetRecord {
                id: "X".into(),
                price0: 1.0,
                total0: 2.0,
            }],
            weights: Mat::from_vec(2, 1, vec![1.0, 1.0]),
        };
        let params = ModelParams::new(1.0, 1.0);
        let mut cfg = IntegratorConfig::for_params(&params);
        cfg.sample_stride = 1;
        let traj = simulate(&net, params, cfg, Some(&ShockSpec::new("B1", -0.5))).unwrap();
        assert!(
            traj.failures.iter().any(|f| f.bank_id == "B1"),
            "thin bank should fail, verdict {:?}",
            traj.verdict
        );
        let t_fail = traj.failures[0].t;
        let mut frozen_a = None;
        for s in &traj.samples {
            if s.t >= t_fail {
                assert!(s.failed[0]);
                assert_eq!(s.e[0], 0.0);
                assert_eq!(s.da.get(0, 0), 0.0);
                assert_eq!(s.de[0], 0.0);
                let a = s.a.get(0, 0);
                match frozen_a {
                    None => frozen_a = Some(a),
                    Some(prev) => assert_eq!(a, prev, "frozen holdings must not move"),
                }
            }
        }
        assert!(frozen_a.unwrap() > 0.0, "shares remain on the books");
    }

    #[test]
    fn huge_alpha_reports_non_finite_with_location() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(1e308, 1.0);
        let cfg = IntegratorConfig::for_params(&params);
        let err = simulate(&net, params, cfg, Some(&shock(-0.1))).unwrap_err();
        match err {
            ContagionError::NonFinite { ref var, t } => {
                assert!(t > 0.0);
                assert!(!var.is_empty());
            }
            other => panic!("expected NonFinite, got {other}"),
        }
    }

    #[test]
    fn samples_start_at_zero_and_end_at_relaxation() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(0.5, 0.5);
        let cfg = IntegratorConfig::for_params(&params);
        let traj = simulate(&net, params, cfg, Some(&shock(-0.1))).unwrap();
        assert_eq!(traj.samples[0].t, 0.0);
        assert!((traj.final_state().t - traj.relaxation_time).abs() < 1e-12);
        // Post-shock initial sample carries the velocity kick.
        assert!(traj.samples[0].da.get(0, 0) < 0.0);
    }

    #[test]
    fn timeout_when_nothing_settles() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(0.5, 0.5);
        let mut cfg = IntegratorConfig::for_params(&params);
        cfg.t_max = 0.5; // far too short to settle
        let traj = simulate(&net, params, cfg, Some(&shock(-0.1))).unwrap();
        assert_eq!(traj.verdict, Verdict::Timeout);
        assert_eq!(traj.relaxation_time, 0.5);
        assert!((traj.final_state().t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shock_validation() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(1.0, 1.0);
        let cfg = IntegratorConfig::for_params(&params);
        let err = simulate(&net, params, cfg, Some(&ShockSpec::new("nope", -0.1))).unwrap_err();
        assert!(matches!(err, ContagionError::UnknownBank(_)));
        let err = simulate(&net, params, cfg, Some(&shock(-1.0))).unwrap_err();
        assert!(matches!(err, ContagionError::Shock(_)));
    }

    #[test]
    fn config_validation_rejects_bad_dt() {
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(1.0, 1.0);
        let mut cfg = IntegratorConfig::for_params(&params);
        cfg.dt = 2.0; // >= min(tau)
        let err = Engine::new(&net, params, cfg).err().unwrap();
        assert!(matches!(err, ContagionError::Config(_)));
    }

    #[test]
    fn csv_and_json_export_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let net = net_1x1(1.0, 0.9);
        let params = ModelParams::new(0.5, 0.5);
        let cfg = IntegratorConfig::for_params(&params);
        let traj = simulate(&net, params, cfg, Some(&shock(-0.1))).unwrap();
        let pp = dir.path().join("prices.csv");
        let ep = dir.path().join("equities.csv");
        save_trajectory_csvs(&traj, &net, &pp, &ep).unwrap();
        let prices = std::fs::read_to_string(&pp).unwrap();
        let mut lines = prices.lines();
        assert_eq!(lines.next(), Some("t,asset_id,price"));
        assert_eq!(prices.lines().count(), 1 + traj.samples.len());
        let first = prices.lines().nth(1).unwrap();
        assert!(first.starts_with("0,X,"), "got {first:?}");

        let v = verdict_json(&traj);
        assert_eq!(v["verdict"], "Equilibrium");
        assert!(v["relaxation_time"].as_f64().unwrap() > 0.0);
        assert!(v["failed_banks"].as_array().unwrap().is_empty());
    }
}
