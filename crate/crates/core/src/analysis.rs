//! Target-error speedups, Pareto frontiers and phase breakdowns over parsed run logs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::metrics::{EpochRecord, RunLog};

/// Default target multipliers on the baseline's final error.
pub const DEFAULT_MULTIPLIERS: [f64; 3] = [1.1, 1.2, 1.4];

/// Sentinel for a target the candidate never reached.
pub const UNREACHED: &str = "--";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Backprops,
    Wallclock,
}

impl Measure {
    pub fn of(self, rec: &EpochRecord) -> f64 {
        match self {
            Measure::Backprops => rec.bwd as f64,
            Measure::Wallclock => rec.wallclock(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::Backprops => "backprops",
            Measure::Wallclock => "wallclock",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "backprops" => Ok(Measure::Backprops),
            "wallclock" => Ok(Measure::Wallclock),
            other => Err(format!("unknown measure `{other}` (expected backprops or wallclock)")),
        }
    }
}

/// Measure value at the first record whose test error is at or below `target`.
pub fn time_to_target(log: &RunLog, target: f64, measure: Measure) -> Option<f64> {
    log.records
        .iter()
        .find(|r| r.test_err <= target)
        .map(|r| measure.of(r))
}

/// Baseline-to-candidate resource ratio at `baseline final error * multiplier`.
pub fn speedup(baseline: &RunLog, candidate: &RunLog, multiplier: f64, measure: Measure) -> Option<f64> {
    let target = baseline.final_error()? * multiplier;
    let base = time_to_target(baseline, target, measure)?;
    let cand = time_to_target(candidate, target, measure)?;
    if cand == 0.0 {
        return Some(if base == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Some(base / cand)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub time: f64,
    pub error: f64,
    pub config: String,
}

impl ParetoPoint {
    pub fn new(time: f64, error: f64, config: impl Into<String>) -> Self {
        ParetoPoint {
            time,
            error,
            config: config.into(),
        }
    }
}

/// `a` dominates `b`: no worse on both axes and strictly better on one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.time <= b.time && a.error <= b.error && (a.time < b.time || a.error < b.error)
}

fn sweep_order(a: &ParetoPoint, b: &ParetoPoint) -> Ordering {
    a.time
        .total_cmp(&b.time)
        .then(a.error.total_cmp(&b.error))
        .then_with(|| a.config.cmp(&b.config))
}

/// Non-dominated points sorted by time. Points equal on both axes collapse
/// to the one with the lexicographically smallest config id.
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| sweep_order(a, b));
    let mut out: Vec<ParetoPoint> = Vec::new();
    let mut best = f64::INFINITY;
    for p in sorted {
        if p.error < best {
            best = p.error;
            out.push(p.clone());
        }
    }
    out
}

/// One point per distinct error level reached during the run, at the first
/// time that level was reached. Records with a zero measure (the untrained
/// evaluation) are skipped.
pub fn pareto_points(log: &RunLog, measure: Measure) -> Vec<ParetoPoint> {
    let mut out: Vec<ParetoPoint> = Vec::new();
    for r in &log.records {
        let Some(t) = time_to_target(log, r.test_err, measure) else {
            continue;
        };
        if t <= 0.0 {
            continue;
        }
        if !out.iter().any(|p| p.time == t && p.error == r.test_err) {
            out.push(ParetoPoint::new(t, r.test_err, log.label.clone()));
        }
    }
    out
}

/// Percentage of frontier points contributed by each config id.
pub fn frontier_shares(frontier: &[ParetoPoint]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for p in frontier {
        *counts.entry(p.config.clone()).or_default() += 1;
    }
    let n = frontier.len().max(1) as f64;
    counts
        .into_iter()
        .map(|(k, c)| (k, 100.0 * c as f64 / n))
        .collect()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTotals {
    pub selection_forward: f64,
    pub training_forward: f64,
    pub backward: f64,
    pub other: f64,
    pub total: f64,
    pub selection_forward_passes: u64,
    pub training_forward_passes: u64,
    pub backward_passes: u64,
}

pub fn phase_breakdown(log: &RunLog) -> PhaseTotals {
    let Some(last) = log.records.last() else {
        return PhaseTotals::default();
    };
    let total = last.wallclock();
    PhaseTotals {
        selection_forward: last.t_sel,
        training_forward: last.t_train_fwd,
        backward: last.t_bwd,
        other: (total - last.t_sel - last.t_train_fwd - last.t_bwd).max(0.0),
        total,
        selection_forward_passes: last.sel_fwd,
        training_forward_passes: last.train_fwd,
        backward_passes: last.bwd,
    }
}

// ---------------------------------------------------------------------------

/// Speedup cells for one candidate: `cells[m]` pairs (backprops, wallclock) at multiplier `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub candidate: String,
    pub baseline_final_error: f64,
    pub cells: Vec<(Option<f64>, Option<f64>)>,
}

pub fn compare(baseline: &RunLog, candidates: &[RunLog], multipliers: &[f64]) -> Vec<CompareRow> {
    candidates
        .iter()
        .map(|c| CompareRow {
            candidate: c.label.clone(),
            baseline_final_error: baseline.final_error().unwrap_or(f64::NAN),
            cells: multipliers
                .iter()
                .map(|&m| {
                    (
                        speedup(baseline, c, m, Measure::Backprops),
                        speedup(baseline, c, m, Measure::Wallclock),
                    )
                })
                .collect(),
        })
        .collect()
}

pub fn format_cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.2}"),
        Some(_) => "inf".to_string(),
        None => UNREACHED.to_string(),
    }
}

pub fn compare_csv(rows: &[CompareRow], multipliers: &[f64]) -> String {
    let mut out = String::from("candidate,baseline_final_err");
    for m in multipliers {
        out.push_str(&format!(",backprops_x{m},wallclock_x{m}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{:.6}", r.candidate, r.baseline_final_error));
        for (b, w) in &r.cells {
            out.push_str(&format!(",{},{}", format_cell(*b), format_cell(*w)));
        }
        out.push('\n');
    }
    out
}

pub fn compare_table(rows: &[CompareRow], multipliers: &[f64]) -> String {
    let mut header = vec!["candidate".to_string(), "final err".to_string()];
    for m in multipliers {
        header.push(format!("x{m} bp"));
        header.push(format!("x{m} wall"));
    }
    let mut lines = vec![header];
    for r in rows {
        let mut line = vec![r.candidate.clone(), format!("{:.2}%", 100.0 * r.baseline_final_error)];
        for (b, w) in &r.cells {
            line.push(format_cell(*b));
            line.push(format_cell(*w));
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|j| lines.iter().map(|l| l[j].len()).max().unwrap_or(0))
        .collect();
    lines
        .iter()
        .map(|l| {
            l.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(label: &str, errs: &[f64], bwd: &[u64]) -> RunLog {
        RunLog {
            fingerprint: "f".into(),
            label: label.into(),
            records: errs
                .iter()
                .zip(bwd)
                .enumerate()
                .map(|(i, (&e, &b))| EpochRecord {
                    epoch: i,
                    bwd: b,
                    train_fwd: b,
                    test_err: e,
                    t_other: i as f64,
                    ..Default::default()
                })
                .collect(),
        }
    }

    #[test]
    fn first_crossing() {
        let l = log("a", &[0.5, 0.3, 0.2], &[100, 200, 300]);
        assert_eq!(time_to_target(&l, 0.3, Measure::Backprops), Some(200.0));
        assert_eq!(time_to_target(&l, 0.9, Measure::Backprops), Some(100.0));
        assert_eq!(time_to_target(&l, 0.1, Measure::Backprops), None);
        assert_eq!(time_to_target(&l, 0.25, Measure::Wallclock), Some(2.0));
    }

    #[test]
    fn speedup_ratios() {
        let base = log("trad", &[0.8, 0.4, 0.2, 0.1], &[0, 100, 200, 300]);
        assert_eq!(speedup(&base, &base, 1.2, Measure::Backprops), Some(1.0));
        let half = log("sb", &[0.8, 0.3, 0.11], &[0, 50, 150]);
        // target 0.12: baseline at 300, candidate at 150
        assert_eq!(speedup(&base, &half, 1.2, Measure::Backprops), Some(2.0));
        let never = log("bad", &[0.8, 0.5], &[0, 10]);
        assert_eq!(speedup(&base, &never, 1.1, Measure::Backprops), None);
    }

    #[test]
    fn table_one_style_arithmetic() {
        // Digitized-style logs: Traditional ends at 1.72% error; the candidate
        // crosses the x1.1/x1.2/x1.4 targets at 1/3.4, 1/3.4, 1/3.5 of its backprops.
        let base = log("trad", &[0.9, 0.0240, 0.0206, 0.0189, 0.0172], &[0, 3500, 6800, 8500, 10000]);
        let cand = log("sb", &[0.9, 0.0240, 0.0206, 0.0189], &[0, 1000, 2000, 2500]);
        let at = |m| speedup(&base, &cand, m, Measure::Backprops).unwrap();
        assert_eq!(at(1.1), 3.4);
        assert_eq!(at(1.2), 3.4);
        assert_eq!(at(1.4), 3.5);
    }

    #[test]
    fn frontier_small_example() {
        let pts = vec![
            ParetoPoint::new(1.0, 0.5, "a"),
            ParetoPoint::new(2.0, 0.4, "b"),
            ParetoPoint::new(3.0, 0.45, "c"),
        ];
        let f = pareto_frontier(&pts);
        assert_eq!(f, vec![pts[0].clone(), pts[1].clone()]);
        assert_eq!(pareto_frontier(&pts[2..]), vec![pts[2].clone()]);
    }

    #[test]
    fn frontier_dedups_to_smallest_id() {
        let pts = vec![
            ParetoPoint::new(1.0, 0.5, "zeta"),
            ParetoPoint::new(1.0, 0.5, "alpha"),
            ParetoPoint::new(1.0, 0.6, "beta"),
        ];
        assert_eq!(pareto_frontier(&pts), vec![ParetoPoint::new(1.0, 0.5, "alpha")]);
    }

    #[test]
    fn shares_sum_to_hundred() {
        let f = vec![
            ParetoPoint::new(1.0, 0.5, "a"),
            ParetoPoint::new(2.0, 0.4, "b"),
            ParetoPoint::new(3.0, 0.3, "b"),
        ];
        let s = frontier_shares(&f);
        assert!((s.values().sum::<f64>() - 100.0).abs() < 1e-9);
        assert!((s["b"] - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn points_skip_untrained_record() {
        let l = log("a", &[0.7, 0.4, 0.5, 0.2], &[0, 10, 20, 30]);
        let pts = pareto_points(&l, Measure::Backprops);
        let pairs: Vec<(f64, f64)> = pts.iter().map(|p| (p.time, p.error)).collect();
        assert_eq!(pairs, vec![(10.0, 0.4), (10.0, 0.5), (30.0, 0.2)]);
        let f = pareto_frontier(&pts);
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn breakdown_other_is_residual() {
        let mut l = log("a", &[0.5], &[0]);
        l.records[0].t_sel = 1.0;
        l.records[0].t_bwd = 2.0;
        l.records[0].t_other = 0.5;
        let p = phase_breakdown(&l);
        assert_eq!(p.total, 3.5);
        assert_eq!(p.other, 0.5);
        assert!(p.selection_forward + p.training_forward + p.backward <= p.total);
    }

    #[test]
    fn compare_marks_unreached() {
        let base = log("trad", &[0.8, 0.1], &[0, 100]);
        let bad = log("bad", &[0.8, 0.5], &[0, 10]);
        let rows = compare(&base, &[base.clone(), bad], &DEFAULT_MULTIPLIERS);
        let csv = compare_csv(&rows, &DEFAULT_MULTIPLIERS);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "candidate,baseline_final_err,backprops_x1.1,wallclock_x1.1,backprops_x1.2,wallclock_x1.2,backprops_x1.4,wallclock_x1.4"
        );
        assert_eq!(lines[1], "trad,0.100000,1.00,1.00,1.00,1.00,1.00,1.00");
        assert_eq!(lines[2], "bad,0.100000,--,--,--,--,--,--");
    }
}
