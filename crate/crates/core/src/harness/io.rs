//! Output schemas. Every float is written with 17 significant digits;
//! absent values are empty fields.

use std::io::Write;

use super::bench::BenchRecord;
use super::classify::OtherReason;
use super::validation::{Rate, RateRow, SensorRow};
use crate::monitor::MonitorVerdict;
use crate::util::{fmt_f64, fmt_opt};

const RATE_COLUMNS: &str = "TP,FP,TN,FN,other,other_no_attack,other_undecided,other_detected_warned_no_damage,\
TPR,TPR_lo,TPR_hi,FPR,FPR_lo,FPR_hi,TNR,TNR_lo,TNR_hi,FNR,FNR_lo,FNR_hi";

fn rate_fields(r: &Rate) -> String {
    format!("{},{},{}", fmt_opt(r.value), fmt_opt(r.lo), fmt_opt(r.hi))
}

fn row_fields(row: &RateRow) -> String {
    let c = &row.counts;
    let other = |r| c.other.get(&r).copied().unwrap_or(0);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        c.other_total(),
        other(OtherReason::NoAttack),
        other(OtherReason::Undecided),
        other(OtherReason::DetectedWarnedNoDamage),
        rate_fields(&row.tpr),
        rate_fields(&row.fpr),
        rate_fields(&row.tnr),
        rate_fields(&row.fnr),
    )
}

/// `K, trials`, the counts, then each rate with its Wilson bounds.
pub fn write_rates_csv<W: Write>(mut w: W, rows: &[RateRow]) -> std::io::Result<()> {
    writeln!(w, "K,trials,{RATE_COLUMNS}")?;
    for row in rows {
        writeln!(w, "{},{},{}", row.horizon, row.counts.total(), row_fields(row))?;
    }
    Ok(())
}

/// `FPR, TPR, K`; rows with an undefined rate are skipped.
pub fn write_roc_csv<W: Write>(mut w: W, rows: &[RateRow]) -> std::io::Result<()> {
    writeln!(w, "FPR,TPR,K")?;
    for row in rows {
        if let (Some(f), Some(t)) = (row.fpr.value, row.tpr.value) {
            writeln!(w, "{},{},{}", fmt_f64(f), fmt_f64(t), row.horizon)?;
        }
    }
    Ok(())
}

pub fn write_sensor_csv<W: Write>(mut w: W, rows: &[SensorRow]) -> std::io::Result<()> {
    writeln!(w, "sensors,K,trials,{RATE_COLUMNS}")?;
    for s in rows {
        writeln!(w, "{},{},{},{}", s.sensors, s.row.horizon, s.row.counts.total(), row_fields(&s.row))?;
    }
    Ok(())
}

pub fn write_bench_csv<W: Write>(mut w: W, records: &[BenchRecord]) -> std::io::Result<()> {
    writeln!(w, "n,K,constraints,checks,mean_s,p50_s,p95_s,p99_s,max_s")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.horizon,
            r.constraints,
            r.checks,
            fmt_f64(r.mean_s),
            fmt_f64(r.p50_s),
            fmt_f64(r.p95_s),
            fmt_f64(r.p99_s),
            fmt_f64(r.max_s)
        )?;
    }
    Ok(())
}

/// `k, safe, k_f, tc_seconds, impact, d_u, t_u, min_distance`, where
/// `min_distance` is the smallest clearance along the prediction.
pub fn write_metrics_csv<W: Write>(mut w: W, verdicts: &[MonitorVerdict]) -> std::io::Result<()> {
    writeln!(w, "k,safe,k_f,tc_seconds,impact,d_u,t_u,min_distance")?;
    for v in verdicts {
        let min_d = v.per_step_min_distance.iter().copied().min_by(f64::total_cmp);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            v.k,
            u8::from(v.safe),
            v.k_f.map(|x| x.to_string()).unwrap_or_default(),
            fmt_opt(v.tc_seconds),
            fmt_f64(v.impact),
            fmt_opt(v.baseline_du),
            fmt_opt(v.baseline_tu),
            fmt_opt(min_d)
        )?;
    }
    Ok(())
}

/// One JSON object per verdict.
pub fn write_verdicts_jsonl<W: Write>(mut w: W, verdicts: &[MonitorVerdict]) -> std::io::Result<()> {
    for v in verdicts {
        serde_json::to_writer(&mut w, v)?;
        writeln!(w)?;
    }
    Ok(())
}
