//! Core data model: banks, assets, the holdings matrix, model parameters,
//! shocks, and the dynamical system state.
//!
//! Conventions fixed here and relied on everywhere else:
//! * initial prices are 1 (amounts are in value units at load time),
//! * the balance-sheet identity `equity = sum_mu a_mu * p_mu + c` holds at
//!   t = 0 for every retained bank,
//! * banks with non-positive equity or no holdings are pruned at load time,
//!   assets nobody holds are pruned after that.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ContagionError, Result};
use crate::mat::Mat;

/// One bank: identifier, initial equity, and the cash-minus-liability part
/// of its balance sheet (everything not invested in the modelled assets).
#[derive(Debug, Clone)]
pub struct BankRecord {
    pub id: String,
    pub equity0: f64,
    pub cash_minus_liability: f64,
}

/// One asset: identifier, initial price, and initial total holdings across
/// all banks (in shares; equal to value at p = 1).
#[derive(Debug, Clone)]
pub struct AssetRecord {
    pub id: String,
    pub price0: f64,
    pub total0: f64,
}

/// The bank-asset network: who holds how much of what, plus balance sheets.
#[derive(Debug, Clone)]
pub struct HoldingsMatrix {
    pub banks: Vec<BankRecord>,
    pub assets: Vec<AssetRecord>,
    /// `weights[i, mu]` = shares of asset `mu` held by bank `i` (>= 0).
    pub weights: Mat,
}

/// What was dropped during load. Callers surface these as warnings; the
/// load itself only fails on structural problems.
#[derive(Debug, Clone, Default)]
pub struct LoadSummary {
    pub dropped_banks: Vec<String>,
    pub dropped_assets: Vec<String>,
}

impl LoadSummary {
    pub fn warning_count(&self) -> usize {
        self.dropped_banks.len() + self.dropped_assets.len()
    }
}

/// Model parameters. `alpha` is the price-impact exponent, `beta` the
/// portfolio-adjustment exponent; `tau_a` and `tau_b` are the market and
/// bank reaction timescales.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub tau_a: f64,
    pub tau_b: f64,
}

impl ModelParams {
    /// Both timescales default to 1; time is then measured in reaction times.
    pub fn new(alpha: f64, beta: f64) -> Self {
        ModelParams {
            alpha,
            beta,
            tau_a: 1.0,
            tau_b: 1.0,
        }
    }

    pub fn with_taus(alpha: f64, beta: f64, tau_a: f64, tau_b: f64) -> Self {
        ModelParams {
            alpha,
            beta,
            tau_a,
            tau_b,
        }
    }

    /// The coupling product that controls stability.
    pub fn gamma(&self) -> f64 {
        self.alpha * self.beta
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(ContagionError::Config(format!(
                "alpha and beta must be finite, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        if !(self.tau_a.is_finite() && self.tau_a > 0.0)
            || !(self.tau_b.is_finite() && self.tau_b > 0.0)
        {
            return Err(ContagionError::Config(format!(
                "timescales must be positive and finite, got tau_a = {}, tau_b = {}",
                self.tau_a, self.tau_b
            )));
        }
        Ok(())
    }
}

/// An instantaneous multiplicative equity shock to one bank:
/// `e_j -> (1 + relative_size) * e_j` at t = 0.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShockSpec {
    pub bank_id: String,
    pub relative_size: f64,
}

impl ShockSpec {
    pub fn new(bank_id: impl Into<String>, relative_size: f64) -> Self {
        ShockSpec {
            bank_id: bank_id.into(),
            relative_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.relative_size.is_finite() || self.relative_size <= -1.0 {
            return Err(ContagionError::Shock(format!(
                "relative size must be finite and > -1, got {}",
                self.relative_size
            )));
        }
        Ok(())
    }
}

/// Full dynamical state at one instant: holdings and their velocities,
/// prices and their velocities, equities and their velocities, and which
/// banks have failed (absorbing).
#[derive(Debug, Clone)]
pub struct SystemState {
    pub t: f64,
    /// `a[i, mu]`: shares of asset `mu` held by bank `i`.
    pub a: Mat,
    /// `da[i, mu]`: d/dt of `a[i, mu]`.
    pub da: Mat,
    pub p: Vec<f64>,
    pub dp: Vec<f64>,
    pub e: Vec<f64>,
    /// `de[i]` = sum_mu a[i, mu] * dp[mu] for live banks, 0 for failed ones.
    /// Kept in the state so exported samples expose the bookkeeping identity.
    pub de: Vec<f64>,
    pub failed: Vec<bool>,
}

impl SystemState {
    pub fn n_banks(&self) -> usize {
        self.e.len()
    }

    pub fn n_assets(&self) -> usize {
        self.p.len()
    }

    /// Mark-to-market value of bank `i`'s asset portfolio.
    pub fn portfolio_value(&self, i: usize) -> f64 {
        self.a
            .row(i)
            .iter()
            .zip(&self.p)
            .map(|(a, p)| a * p)
            .sum()
    }
}

impl HoldingsMatrix {
    pub fn n_banks(&self) -> usize {
        self.banks.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn bank_index(&self, id: &str) -> Option<usize> {
        self.banks.iter().position(|b| b.id == id)
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.assets.iter().position(|a| a.id == id)
    }

    /// Initial value of bank `i`'s portfolio (prices are 1 at t = 0).
    pub fn row_sum(&self, i: usize) -> f64 {
        self.weights.row_sum(i)
    }

    /// A copy with bank `idx`'s equity replaced. Cash-minus-liability is
    /// recomputed so the balance-sheet identity still holds at t = 0.
    pub fn with_equity(&self, idx: usize, new_equity: f64) -> Self {
        let mut out = self.clone();
        out.banks[idx].equity0 = new_equity;
        out.banks[idx].cash_minus_liability = new_equity - out.row_sum(idx);
        out
    }

    /// A copy with the weight matrix replaced (same shape, same bank and
    /// asset ids, same equities). Used by rewiring experiments, where a
    /// permutation may leave some bank with an empty row; that is allowed
    /// here, unlike at load time. Asset totals are recomputed.
    pub fn with_weights(&self, weights: Mat) -> Result<Self> {
        if weights.rows() != self.n_banks() || weights.cols() != self.n_assets() {
            return Err(ContagionError::Validation(format!(
                "replacement weights are {}x{}, expected {}x{}",
                weights.rows(),
                weights.cols(),
                self.n_banks(),
                self.n_assets()
            )));
        }
        if weights.data().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ContagionError::Validation(
                "replacement weights must be finite and non-negative".into(),
            ));
        }
        let mut out = self.clone();
        out.weights = weights;
        for (mu, asset) in out.assets.iter_mut().enumerate() {
            asset.total0 = out.weights.col_sum(mu);
        }
        for (i, bank) in out.banks.iter_mut().enumerate() {
            bank.cash_minus_liability = bank.equity0 - out.weights.row_sum(i);
        }
        Ok(out)
    }

    /// Checks the invariants that loading guarantees. Exposed so generated
    /// and programmatically edited networks go through the same gate.
    pub fn validate(&self) -> Result<()> {
        if self.banks.is_empty() {
            return Err(ContagionError::EmptyNetwork("no banks".into()));
        }
        if self.assets.is_empty() {
            return Err(ContagionError::EmptyNetwork("no assets".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.banks {
            if !seen.insert(b.id.as_str()) {
                return Err(ContagionError::Validation(format!(
                    "duplicate bank id {}",
                    b.id
                )));
            }
            if !(b.equity0.is_finite() && b.equity0 > 0.0) {
                return Err(ContagionError::Validation(format!(
                    "bank {} has non-positive equity {}",
                    b.id, b.equity0
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for a in &self.assets {
            if !seen.insert(a.id.as_str()) {
                return Err(ContagionError::Validation(format!(
                    "duplicate asset id {}",
                    a.id
                )));
            }
            if !(a.total0.is_finite() && a.total0 > 0.0) {
                return Err(ContagionError::Validation(format!(
                    "asset {} has non-positive total holdings {}",
                    a.id, a.total0
                )));
            }
        }
        for (i, b) in self.banks.iter().enumerate() {
            let row = self.weights.row_sum(i);
            let resid = (b.equity0 - (row + b.cash_minus_liability)).abs();
            if resid > 1e-9 * b.equity0.abs().max(1.0) {
                return Err(ContagionError::Validation(format!(
                    "bank {}: equity {} != holdings {} + cash {} (residual {:e})",
                    b.id, b.equity0, row, b.cash_minus_liability, resid
                )));
            }
        }
        if self.weights.data().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ContagionError::Validation(
                "holdings must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// State at t = 0: holdings as loaded, prices 1, all velocities zero,
/// no failures.
pub fn initial_state(net: &HoldingsMatrix) -> SystemState {
    let n = net.n_banks();
    let m = net.n_assets();
    SystemState {
        t: 0.0,
        a: net.weights.clone(),
        da: Mat::zeros(n, m),
        p: vec![1.0; m],
        dp: vec![0.0; m],
        e: net.banks.iter().map(|b| b.equity0).collect(),
        de: vec![0.0; n],
        failed: vec![false; n],
    }
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> ContagionError {
    ContagionError::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(file: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| parse_err(file, line, format!("cannot parse {what} from {field:?}")))
}

/// Splits one CSV line into exactly `n` trimmed fields. No quoting: ids must
/// not contain commas.
fn split_fields<'a>(file: &Path, lineno: usize, line: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
    if fields.len() != n {
        return Err(parse_err(
            file,
            lineno,
            format!("expected {n} fields, got {}", fields.len()),
        ));
    }
    Ok(fields)
}

/// Loads a network from a holdings CSV (`bank_id,asset_id,amount`) and a
/// banks CSV (`bank_id,equity,cash_minus_liability`).
///
/// In the banks file either `equity` or `cash_minus_liability` may be left
/// empty (the other is derived from the balance-sheet identity); if both are
/// present they must agree with the holdings to within 1e-9 relative, and a
/// conflict rejects the file. Banks with non-positive equity or no holdings
/// are dropped with a warning, then assets nobody holds are dropped too.
pub fn load_network(
    holdings_path: impl AsRef<Path>,
    banks_path: impl AsRef<Path>,
) -> Result<(HoldingsMatrix, LoadSummary)> {
    let holdings_path = holdings_path.as_ref();
    let banks_path = banks_path.as_ref();

    // Banks file first: it defines the bank set and its order.
    let banks_text = std::fs::read_to_string(banks_path)?;
    let mut bank_ids: Vec<String> = Vec::new();
    let mut raw_equity: Vec<Option<f64>> = Vec::new();
    let mut raw_cash: Vec<Option<f64>> = Vec::new();
    let mut lines = banks_text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "bank_id,equity,cash_minus_liability" => {}
        Some((_, h)) => {
            return Err(parse_err(
                banks_path,
                1,
                format!("expected header bank_id,equity,cash_minus_liability, got {h:?}"),
            ))
        }
        None => return Err(parse_err(banks_path, 1, "empty file")),
    }
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_fields(banks_path, lineno, line, 3)?;
        if f[0].is_empty() {
            return Err(parse_err(banks_path, lineno, "empty bank_id"));
        }
        if bank_ids.iter().any(|b| b == f[0]) {
            return Err(ContagionError::Validation(format!(
                "{}:{}: duplicate bank id {}",
                banks_path.display(),
                lineno,
                f[0]
            )));
        }
        let equity = if f[1].is_empty() {
            None
        } else {
            Some(parse_f64(banks_path, lineno, f[1], "equity")?)
        };
        let cash = if f[2].is_empty() {
            None
        } else {
            Some(parse_f64(banks_path, lineno, f[2], "cash_minus_liability")?)
        };
        if equity.is_none() && cash.is_none() {
            return Err(parse_err(
                banks_path,
                lineno,
                "equity and cash_minus_liability cannot both be empty",
            ));
        }
        bank_ids.push(f[0].to_string());
        raw_equity.push(equity);
        raw_cash.push(cash);
    }

    // Holdings file: assets ordered by first appearance.
    let holdings_text = std::fs::read_to_string(holdings_path)?;
    let mut asset_ids: Vec<String> = Vec::new();
    let mut entries: Vec<(usize, usize, f64, usize)> = Vec::new(); // (bank, asset, amount, line)
    let mut lines = holdings_text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "bank_id,asset_id,amount" => {}
        Some((_, h)) => {
            return Err(parse_err(
                holdings_path,
                1,
                format!("expected header bank_id,asset_id,amount, got {h:?}"),
            ))
        }
        None => return Err(parse_err(holdings_path, 1, "empty file")),
    }
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_fields(holdings_path, lineno, line, 3)?;
        let bank = bank_ids.iter().position(|b| b == f[0]).ok_or_else(|| {
            ContagionError::Validation(format!(
                "{}:{}: holding references unknown bank {}",
                holdings_path.display(),
                lineno,
                f[0]
            ))
        })?;
        let asset = match asset_ids.iter().position(|a| a == f[1]) {
            Some(mu) => mu,
            None => {
                if f[1].is_empty() {
                    return Err(parse_err(holdings_path, lineno, "empty asset_id"));
                }
                asset_ids.push(f[1].to_string());
                asset_ids.len() - 1
            }
        };
        let amount = parse_f64(holdings_path, lineno, f[2], "amount")?;
        if !amount.is_finite() || amount < 0.0 {
            return Err(ContagionError::Validation(format!(
                "{}:{}: amount must be finite and non-negative, got {}",
                holdings_path.display(),
                lineno,
                f[2]
            )));
        }
        if let Some((_, _, _, prev)) = entries
            .iter()
            .find(|(b, a, _, _)| *b == bank && *a == asset)
        {
            return Err(ContagionError::Validation(format!(
                "{}:{}: duplicate holding for bank {} asset {} (first seen on line {})",
                holdings_path.display(),
                lineno,
                f[0],
                f[1],
                prev
            )));
        }
        entries.push((bank, asset, amount, lineno));
    }

    let n = bank_ids.len();
    let m = asset_ids.len();
    let mut weights = Mat::zeros(n, m);
    for &(i, mu, w, _) in &entries {
        weights.set(i, mu, w);
    }

    // Resolve balance sheets against the identity equity = holdings + cash.
    let mut equity = vec![0.0; n];
    let mut cash = vec![0.0; n];
    for i in 0..n {
        let row = weights.row_sum(i);
        match (raw_equity[i], raw_cash[i]) {
            (Some(e), Some(c)) => {
                let resid = (e - (row + c)).abs();
                if resid > 1e-9 * e.abs().max(1.0) {
                    return Err(ContagionError::Validation(format!(
                        "{}: bank {}: equity {} inconsistent with holdings {} + cash {} \
                         (residual {:e} exceeds 1e-9 relative)",
                        banks_path.display(),
                        bank_ids[i],
                        e,
                        row,
                        c,
                        resid
                    )));
                }
                equity[i] = e;
                cash[i] = c;
            }
            (Some(e), None) => {
                equity[i] = e;
                cash[i] = e - row;
            }
            (None, Some(c)) => {
                equity[i] = row + c;
                cash[i] = c;
            }
            (None, None) => unreachable!("rejected while parsing"),
        }
    }

    // Prune: banks first, then assets nobody holds. A retained bank holds a
    // positive amount of every asset that kept it alive, so pruning assets
    // cannot create new empty rows.
    let mut summary = LoadSummary::default();
    let mut keep_bank = vec![true; n];
    for i in 0..n {
        if equity[i] <= 0.0 || !equity[i].is_finite() {
            summary
                .dropped_banks
                .push(format!("{} (non-positive equity {})", bank_ids[i], equity[i]));
            keep_bank[i] = false;
        } else if weights.row_sum(i) <= 0.0 {
            summary
                .dropped_banks
                .push(format!("{} (no holdings)", bank_ids[i]));
            keep_bank[i] = false;
        }
    }
    let kept_banks: Vec<usize> = (0..n).filter(|&i| keep_bank[i]).collect();
    if kept_banks.is_empty() {
        return Err(ContagionError::EmptyNetwork(
            "every bank was dropped during load".into(),
        ));
    }
    let mut keep_asset = vec![true; m];
    for mu in 0..m {
        let total: f64 = kept_banks.iter().map(|&i| weights.get(i, mu)).sum();
        if total <= 0.0 {
            summary
                .dropped_assets
                .push(format!("{} (no holders)", asset_ids[mu]));
            keep_asset[mu] = false;
        }
    }
    let kept_assets: Vec<usize> = (0..m).filter(|&mu| keep_asset[mu]).collect();
    if kept_assets.is_empty() {
        return Err(ContagionError::EmptyNetwork(
            "every asset was dropped during load".into(),
        ));
    }

    let mut out = Mat::zeros(kept_banks.len(), kept_assets.len());
    for (ii, &i) in kept_banks.iter().enumerate() {
        for (jj, &mu) in kept_assets.iter().enumerate() {
            out.set(ii, jj, weights.get(i, mu));
        }
    }
    let banks = kept_banks
        .iter()
        .map(|&i| BankRecord {
            id: bank_ids[i].clone(),
            equity0: equity[i],
            cash_minus_liability: cash[i],
        })
        .collect();
    let assets = kept_assets
        .iter()
        .enumerate()
        .map(|(jj, &mu)| AssetRecord {
            id: asset_ids[mu].clone(),
            price0: 1.0,
            total0: out.col_sum(jj),
        })
        .collect();
    let net = HoldingsMatrix {
        banks,
        assets,
        weights: out,
    };
    net.validate()?;
    Ok((net, summary))
}

/// Writes the network back out in the same two-file CSV format.
/// Zero holdings are omitted; numbers use the shortest representation that
/// round-trips, so `save` followed by `load` reproduces the matrix exactly.
/// Rows are grouped by asset because reloading orders assets by first
/// appearance: grouping preserves the column order across a round trip.
pub fn save_network(
    net: &HoldingsMatrix,
    holdings_path: impl AsRef<Path>,
    banks_path: impl AsRef<Path>,
) -> Result<()> {
    let mut holdings = String::from("bank_id,asset_id,amount\n");
    for (mu, asset) in net.assets.iter().enumerate() {
        for (i, bank) in net.banks.iter().enumerate() {
            let w = net.weights.get(i, mu);
            if w > 0.0 {
                let _ = writeln!(holdings, "{},{},{}", bank.id, asset.id, w);
            }
        }
    }
    std::fs::write(holdings_path, holdings)?;

    let mut banks = String::from("bank_id,equity,cash_minus_liability\n");
    for bank in &net.banks {
        let _ = writeln!(
            banks,
            "{},{},{}",
            bank.id, bank.equity0, bank.cash_minus_liability
        );
    }
    std::fs::write(banks_path, banks)?;
    Ok(())
}
