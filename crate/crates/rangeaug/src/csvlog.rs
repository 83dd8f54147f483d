//! CSV writers for trajectories and sweep tables.

use std::fmt::Write as _;
use std::path::Path;

use rangeaug_core::trainer::TrajectoryRecord;

use crate::error::{write, Result};

pub const TRAJECTORY_HEADER: &str = "epoch,op,a,b,delta,mean_psnr,train_loss,train_acc,val_acc";
pub const SWEEP_HEADER: &str = "candidate,delta_start,delta_end,kind,val_acc,mean_psnr_final";

/// C-style `%.9g`.
pub fn fmt_g9(v: f64) -> String {
    const P: i32 = 9;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..P).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn trajectory_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.op.name(),
            fmt_g9(r.a),
            fmt_g9(r.b),
            fmt_g9(r.delta),
            fmt_g9(r.mean_psnr),
            fmt_g9(r.train_loss),
            fmt_g9(r.train_acc),
            fmt_g9(r.val_acc)
        );
    }
    out
}

pub fn write_trajectory(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    write(path, trajectory_csv(records).as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub candidate: String,
    pub delta_start: f64,
    pub delta_end: f64,
    pub kind: String,
    pub val_acc: f64,
    pub mean_psnr_final: f64,
}

/// Best first; equal accuracy prefers the larger final target.
pub fn sort_sweep(rows: &mut [SweepRow]) {
    rows.sort_by(|x, y| y.val_acc.total_cmp(&x.val_acc).then(y.delta_end.total_cmp(&x.delta_end)));
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.candidate,
            fmt_g9(r.delta_start),
            fmt_g9(r.delta_end),
            r.kind,
            fmt_g9(r.val_acc),
            fmt_g9(r.mean_psnr_final)
        );
    }
    out
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write(path, sweep_csv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        // expected strings from C printf("%.9g")
        let cases = [
            (1.0, "1"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (22.5, "22.5"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5e-7, "-2.5e-07"),
            (100.0, "100"),
            (0.0015, "0.0015"),
            (9.9999999999, "10"),
            (-0.0, "-0"),
            (1e100, "1e+100"),
        ];
        for (v, want) in cases {
            assert_eq!(fmt_g9(v), want, "{v}");
        }
    }

    #[test]
    fn sweep_order_breaks_ties_by_larger_target() {
        let row = |c: &str, end: f64, acc: f64| SweepRow {
            candidate: c.into(),
            delta_start: end,
            delta_end: end,
            kind: "fixed".into(),
            val_acc: acc,
            mean_psnr_final: end,
        };
        let mut rows = vec![row("a", 5.0, 0.8), row("b", 30.0, 0.8), row("c", 10.0, 0.9)];
        sort_sweep(&mut rows);
        let names: Vec<_> = rows.iter().map(|r| r.candidate.as_str()).collect();
        assert_eq!(names, ["c", "b", "a"]);
    }
}
