//! Coupling calibration from paired price series.
//!
//! For each asset the panel carries a bond price `p(t)` and an equity proxy
//! `E*(t)` (the summed stock prices of the asset's dominant holders, as
//! supplied). Over a window `[t0, t1]` the coupling product is estimated as
//! the ratio of symmetric returns,
//!
//! ```text
//! gamma = sym_ret(p(t0), p(t1)) / sym_ret(E*(t0), E*(t1))
//! ```
//!
//! which is exact when the two series are generated from the model's
//! defining relation with constant gamma, and scale-free in both inputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ContagionError, Result};
use crate::mat::Mat;

/// Denominator floor: windows where the equity proxy's symmetric return is
/// smaller than this in magnitude are dropped for that asset.
pub const DEFAULT_DENOM_FLOOR: f64 = 1e-3;

/// Default window: about four months of trading days.
pub const DEFAULT_WINDOW_DAYS: usize = 84;

/// Aligned panel of bond prices and equity proxies per asset.
#[derive(Debug, Clone)]
pub struct PricePanel {
    /// Strictly increasing ISO dates (`YYYY-MM-DD`).
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    /// `bond[t, mu]`: bond price of asset `mu` on date `t`.
    pub bond: Mat,
    /// `equity[t, mu]`: equity proxy of asset `mu` on date `t`.
    pub equity: Mat,
    /// Optional moving-average pre-smoothing window (trading days).
    /// Off by default.
    pub smoothing: Option<usize>,
}

/// One window's estimate: per-asset gammas for the assets retained after the
/// denominator floor, their mean and (population) standard deviation.
#[derive(Debug, Clone)]
pub struct GammaEstimate {
    pub window_start: String,
    pub window_end: String,
    pub per_asset: Vec<(String, f64)>,
    pub mean: f64,
    pub std: f64,
    /// Set when the floor dropped every asset; `mean` and `std` are NaN then.
    pub all_dropped: bool,
}

/// Stability reading of one window, following the `gamma = 1` boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Stable,
    Unstable,
    Indeterminate,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Stable => "Stable",
            Regime::Unstable => "Unstable",
            Regime::Indeterminate => "Indeterminate",
        }
    }
}

/// `(b - a) / ((a + b) / 2)`: the symmetric (mid-point) return, bounded in
/// (-2, 2) for positive inputs.
pub fn symmetric_return(x_start: f64, x_end: f64) -> Result<f64> {
    if !(x_start > 0.0 && x_end > 0.0) || !x_start.is_finite() || !x_end.is_finite() {
        return Err(ContagionError::Validation(format!(
            "symmetric return needs positive finite prices, got {x_start} and {x_end}"
        )));
    }
    Ok((x_end - x_start) / ((x_end + x_start) / 2.0))
}

fn check_date(file: &Path, line: usize, date: &str) -> Result<()> {
    let b = date.as_bytes();
    let digits_ok = b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit());
    let ok = digits_ok && {
        let month: u32 = date[5..7].parse().unwrap_or(0);
        let day: u32 = date[8..10].parse().unwrap_or(0);
        (1..=12).contains(&month) && (1..=31).contains(&day)
    };
    if ok {
        Ok(())
    } else {
        Err(ContagionError::Parse {
            file: file.display().to_string(),
            line,
            msg: format!("expected ISO date YYYY-MM-DD, got {date:?}"),
        })
    }
}

/// Loads a panel CSV with rows `date,series_id,series_type,value`, where
/// `series_type` is `bond` or `equity`. Dates must appear in strictly
/// increasing order and every asset must have both series on every date.
pub fn load_panel(path: impl AsRef<Path>) -> Result<PricePanel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, msg: String| ContagionError::Parse {
        file: path.display().to_string(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "date,series_id,series_type,value" => {}
        Some((_, h)) => {
            return Err(perr(1, format!(
                "expected header date,series_id,series_type,value, got {h:?}"
            )))
        }
        None => return Err(perr(1, "empty file".into())),
    }

    let mut dates: Vec<String> = Vec::new();
    let mut assets: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    // (date_idx, asset_idx, is_bond, value)
    let mut values: Vec<(usize, usize, bool, f64)> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if f.len() != 4 {
            return Err(perr(lineno, format!("expected 4 fields, got {}", f.len())));
        }
        check_date(path, lineno, f[0])?;
        let t = match dates.iter().position(|d| d == f[0]) {
            Some(t) => t,
            None => {
                if let Some(last) = dates.last() {
                    if f[0] <= last.as_str() {
                        return Err(perr(lineno, format!(
                            "dates must be strictly increasing, {} after {}",
                            f[0], last
                        )));
                    }
                }
                dates.push(f[0].to_string());
                dates.len() - 1
            }
        };
        if f[1].is_empty() {
            return Err(perr(lineno, "empty series_id".into()));
        }
        let mu = match assets.iter().position(|a| a == f[1]) {
            Some(mu) => mu,
            None => {
                assets.push(f[1].to_string());
                assets.len() - 1
            }
        };
        let is_bond = match f[2] {
            "bond" => true,
            "equity" => false,
            other => {
                return Err(perr(lineno, format!(
                    "series_type must be bond or equity, got {other:?}"
                )))
            }
        };
        let v: f64 = f[3]
            .parse()
            .map_err(|_| perr(lineno, format!("cannot parse value from {:?}", f[3])))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(ContagionError::Validation(format!(
                "{}:{}: prices must be positive, got {}",
                path.display(),
                lineno,
                v
            )));
        }
        if !seen.insert((t, mu, is_bond)) {
            return Err(ContagionError::Validation(format!(
                "{}:{}: duplicate entry for {} {} on {}",
                path.display(),
                lineno,
                f[1],
                f[2],
                f[0]
            )));
        }
        values.push((t, mu, is_bond, v));
    }

    let (nt, na) = (dates.len(), assets.len());
    if nt == 0 || na == 0 {
        return Err(ContagionError::EmptyNetwork("panel has no data rows".into()));
    }
    let mut bond = Mat::zeros(nt, na);
    let mut equity = Mat::zeros(nt, na);
    let mut seen_b = vec![false; nt * na];
    let mut seen_e = vec![false; nt * na];
    for (t, mu, is_bond, v) in values {
        if is_bond {
            bond.set(t, mu, v);
            seen_b[t * na + mu] = true;
        } else {
            equity.set(t, mu, v);
            seen_e[t * na + mu] = true;
        }
    }
    for t in 0..nt {
        for mu in 0..na {
            if !seen_b[t * na + mu] || !seen_e[t * na + mu] {
                return Err(ContagionError::Validation(format!(
                    "{}: asset {} is missing a {} value on {}",
                    path.display(),
                    assets[mu],
                    if seen_b[t * na + mu] { "equity" } else { "bond" },
                    dates[t]
                )));
            }
        }
    }
    Ok(PricePanel {
        dates,
        assets,
        bond,
        equity,
        smoothing: None,
    })
}

/// Trailing moving average of width `w` along the date axis.
fn smooth(series: &Mat, w: usize) -> Mat {
    let (nt, na) = (series.rows(), series.cols());
    let mut out = Mat::zeros(nt, na);
    for mu in 0..na {
        for t in 0..nt {
            let lo = (t + 1).saturating_sub(w);
            let k = t - lo + 1;
            let s: f64 = (lo..=t).map(|u| series.get(u, mu)).sum();
            out.set(t, mu, s / k as f64);
        }
    }
    out
}

/// Estimates gamma on consecutive non-overlapping windows of
/// `window_days` dates (`stride` = window length). See `estimate_gamma_with`
/// for the knobs.
pub fn estimate_gamma(panel: &PricePanel, window_days: usize) -> Result<Vec<GammaEstimate>> {
    estimate_gamma_with(panel, window_days, window_days, DEFAULT_DENOM_FLOOR)
}

/// Windowed gamma estimates. A window covers `window_days` consecutive dates
/// and the return is taken between its first and last date; window starts
/// advance by `stride`. Assets whose equity-proxy return is below `floor` in
/// magnitude are dropped from that window.
pub fn estimate_gamma_with(
    panel: &PricePanel,
    window_days: usize,
    stride: usize,
    floor: f64,
) -> Result<Vec<GammaEstimate>> {
    if window_days < 2 {
        return Err(ContagionError::Config(format!(
            "window must span at least 2 dates, got {window_days}"
        )));
    }
    if stride == 0 {
        return Err(ContagionError::Config("stride must be at least 1".into()));
    }
    if !(floor.is_finite() && floor > 0.0) {
        return Err(ContagionError::Config(format!(
            "denominator floor must be positive and finite, got {floor}"
        )));
    }
    let nt = panel.dates.len();
    if nt < window_days {
        return Err(ContagionError::Validation(format!(
            "panel spans {nt} dates, shorter than one {window_days}-day window"
        )));
    }
    let (bond, equity) = match panel.smoothing {
        Some(w) if w > 1 => (smooth(&panel.bond, w), smooth(&panel.equity, w)),
        _ => (panel.bond.clone(), panel.equity.clone()),
    };

    let mut out = Vec::new();
    let mut start = 0;
    while start + window_days <= nt {
        let end = start + window_days - 1;
        let mut per_asset = Vec::new();
        for (mu, id) in panel.assets.iter().enumerate() {
            let re = symmetric_return(equity.get(start, mu), equity.get(end, mu))?;
            if re.abs() < floor {
                continue;
            }
            let rp = symmetric_return(bond.get(start, mu), bond.get(end, mu))?;
            per_asset.push((id.clone(), rp / re));
        }
        let k = per_asset.len();
        let (mean, std) = if k == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = per_asset.iter().map(|(_, g)| g).sum::<f64>() / k as f64;
            let var = per_asset
                .iter()
                .map(|(_, g)| (g - mean) * (g - mean))
                .sum::<f64>()
                / k as f64;
            (mean, var.sqrt())
        };
        out.push(GammaEstimate {
            window_start: panel.dates[start].clone(),
            window_end: panel.dates[end].clone(),
            per_asset,
            mean,
            std,
            all_dropped: k == 0,
        });
        start += stride;
    }
    Ok(out)
}

/// Stability reading: Stable when the one-sigma band sits below 1, Unstable
/// when it sits above, Indeterminate when it straddles (or nothing was
/// retained).
pub fn classify_regime(est: &GammaEstimate) -> Regime {
    if est.all_dropped || !est.mean.is_finite() || !est.std.is_finite() {
        return Regime::Indeterminate;
    }
    if est.mean + est.std < 1.0 {
        Regime::Stable
    } else if est.mean - est.std > 1.0 {
        Regime::Unstable
    } else {
        Regime::Indeterminate
    }
}

/// Writes estimates as `window_start,window_end,asset_id,gamma` rows, with a
/// `MEAN` summary row per window carrying mean and std.
pub fn save_gamma_csv(estimates: &[GammaEstimate], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("window_start,window_end,asset_id,gamma\n");
    for est in estimates {
        for (id, g) in &est.per_asset {
            let _ = writeln!(text, "{},{},{},{}", est.window_start, est.window_end, id, g);
        }
        let _ = writeln!(
            text,
            "{},{},MEAN,{},{}",
            est.window_start, est.window_end, est.mean, est.std
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}
