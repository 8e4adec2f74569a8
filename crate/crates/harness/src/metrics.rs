//! Metrics rows and their CSV form.

use std::fmt::Write as _;

/// One evaluation point. Row 0 is the model before any update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub updates: u64,
    pub lr: f64,
    pub noise_std: f64,
    /// Own objective over the full training split, without noise or dropout.
    pub train_loss: f64,
    pub test_error_pct: f64,
    pub avg_xent: f64,
    pub hinge_sq_sum: f64,
    pub hinge_sq_mean: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,updates,lr,noise_std,train_loss,test_error_pct,avg_xent,hinge_sq_sum,hinge_sq_mean";

/// Loss of a single minibatch, logged when per-update logging is on.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub epoch: usize,
    pub update: u64,
    pub lr: f64,
    pub noise_std: f64,
    pub batch_loss: f64,
}

pub const UPDATES_HEADER: &str = "epoch,update,lr,noise_std,batch_loss";

/// `%.9g`: nine significant digits, trailing zeros dropped, exponent form
/// outside `[1e-4, 1e9)`.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn metrics_csv(rows: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.updates,
            format_sig9(r.lr),
            format_sig9(r.noise_std),
            format_sig9(r.train_loss),
            format_sig9(r.test_error_pct),
            format_sig9(r.avg_xent),
            format_sig9(r.hinge_sq_sum),
            format_sig9(r.hinge_sq_mean),
        );
    }
    out
}

pub fn updates_csv(rows: &[UpdateRecord]) -> String {
    let mut out = String::from(UPDATES_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.update,
            format_sig9(r.lr),
            format_sig9(r.noise_std),
            format_sig9(r.batch_loss)
        );
    }
    out
}
