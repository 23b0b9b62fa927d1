//! Run logs, test-error evaluation, phase timers and selection-probability traces.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Exec};
use crate::nn::Network;

pub const LOG_COLUMNS: &str = "epoch,sel_fwd,train_fwd,bwd,test_err,t_sel,t_train_fwd,t_bwd,t_other";

/// Round to 6 decimals, the precision the log format carries.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// One end-of-epoch snapshot. Counters and times are cumulative since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sel_fwd: u64,
    pub train_fwd: u64,
    pub bwd: u64,
    pub test_err: f64,
    pub t_sel: f64,
    pub t_train_fwd: f64,
    pub t_bwd: f64,
    pub t_other: f64,
}

impl EpochRecord {
    pub fn wallclock(&self) -> f64 {
        self.t_sel + self.t_train_fwd + self.t_bwd + self.t_other
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.sel_fwd,
            self.train_fwd,
            self.bwd,
            self.test_err,
            self.t_sel,
            self.t_train_fwd,
            self.t_bwd,
            self.t_other
        )
    }

    fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 9 {
            return Err(format!("expected 9 fields, found {}", f.len()));
        }
        let int = |i: usize| f[i].parse::<u64>().map_err(|e| format!("field {i} `{}`: {e}", f[i]));
        let real = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|e| format!("field {i} `{}`: {e}", f[i]))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(format!("field {i} is not finite"))
                    }
                })
        };
        Ok(EpochRecord {
            epoch: int(0)? as usize,
            sel_fwd: int(1)?,
            train_fwd: int(2)?,
            bwd: int(3)?,
            test_err: real(4)?,
            t_sel: real(5)?,
            t_train_fwd: real(6)?,
            t_bwd: real(7)?,
            t_other: real(8)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub fingerprint: String,
    /// Short name of the run (strategy plus knobs); used as the config id in analyses.
    pub label: String,
    pub records: Vec<EpochRecord>,
}

fn header_line(fingerprint: &str, label: &str) -> String {
    let label: String = label
        .chars()
        .map(|c| if c.is_whitespace() || c == ',' { '_' } else { c })
        .collect();
    format!("# fingerprint={fingerprint} label={label}")
}

impl RunLog {
    pub fn final_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_err)
    }

    pub fn min_error(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_err).min_by(f64::total_cmp)
    }

    pub fn serialize(&self) -> String {
        let mut out = header_line(&self.fingerprint, &self.label);
        out.push('\n');
        out.push_str(LOG_COLUMNS);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut log = RunLog::default();
        let mut seen_header = false;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("fingerprint", v)) => log.fingerprint = v.to_string(),
                        Some(("label", v)) => log.label = v.to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            if line == LOG_COLUMNS {
                seen_header = true;
                continue;
            }
            if !seen_header {
                return Err(perr(lineno, format!("expected column header `{LOG_COLUMNS}`")));
            }
            let rec = EpochRecord::parse_line(line).map_err(|m| perr(lineno, m))?;
            if let Some(prev) = log.records.last() {
                if rec.sel_fwd < prev.sel_fwd || rec.train_fwd < prev.train_fwd || rec.bwd < prev.bwd {
                    return Err(perr(lineno, "cumulative counters decreased".into()));
                }
            }
            if !(0.0..=1.0).contains(&rec.test_err) {
                return Err(perr(lineno, format!("test error {} outside [0, 1]", rec.test_err)));
            }
            log.records.push(rec);
        }
        if !seen_header {
            return Err(perr(1, "missing column header".into()));
        }
        Ok(log)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }
}

/// Append-only log sink: header on open, one flushed line per record.
pub struct RunLogWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl RunLogWriter {
    pub fn create(path: &Path, fingerprint: &str, label: &str) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = RunLogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.write_line(&header_line(fingerprint, label))?;
        w.write_line(LOG_COLUMNS)?;
        Ok(w)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, rec: &EpochRecord) -> Result<()> {
        self.write_line(&rec.to_line())
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    SelectionForward,
    TrainingForward,
    Backward,
}

/// Accumulates wall-clock per phase against a run-wide monotonic start time.
#[derive(Debug, Clone)]
pub struct PhaseClock {
    start: Instant,
    sel: Duration,
    train_fwd: Duration,
    bwd: Duration,
}

impl PhaseClock {
    pub fn start() -> Self {
        PhaseClock {
            start: Instant::now(),
            sel: Duration::ZERO,
            train_fwd: Duration::ZERO,
            bwd: Duration::ZERO,
        }
    }

    pub fn time<T>(&mut self, phase: Phase, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        let dt = t0.elapsed();
        match phase {
            Phase::SelectionForward => self.sel += dt,
            Phase::TrainingForward => self.train_fwd += dt,
            Phase::Backward => self.bwd += dt,
        }
        out
    }

    /// `(t_sel, t_train_fwd, t_bwd, t_other)`, rounded to the log precision.
    /// `t_other` is the residual of total elapsed time; rounding keeps the
    /// components monotone because each is a rounded cumulative quantity.
    pub fn snapshot(&self) -> (f64, f64, f64, f64) {
        let total = self.start.elapsed().as_secs_f64();
        let sel = self.sel.as_secs_f64();
        let tf = self.train_fwd.as_secs_f64();
        let bw = self.bwd.as_secs_f64();
        let other = (total - sel - tf - bw).max(0.0);
        (round6(sel), round6(tf), round6(bw), round6(other))
    }
}

// ---------------------------------------------------------------------------

const EVAL_CHUNK: usize = 512;

/// Fraction of misclassified examples; argmax ties go to the lowest class index.
pub fn evaluate(net: &Network, test: &Dataset) -> Result<f64> {
    evaluate_with(net, test, Exec::default())
}

pub fn evaluate_with(net: &Network, test: &Dataset, exec: Exec) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::config("test", "test set is empty"));
    }
    if test.dim() != net.input_dim() {
        return Err(Error::Shape(format!(
            "test features have width {}, network expects {}",
            test.dim(),
            net.input_dim()
        )));
    }
    let starts: Vec<usize> = (0..test.len()).step_by(EVAL_CHUNK).collect();
    let wrong = map_ordered(exec, &starts, |&s| -> Result<usize> {
        let rows: Vec<usize> = (s..(s + EVAL_CHUNK).min(test.len())).collect();
        let (x, y) = test.batch(&rows);
        let trace = net.forward_with(&x, Exec::Sequential)?;
        Ok(trace
            .logits()
            .iter_rows()
            .zip(&y)
            .filter(|(row, &label)| argmax(row) != label)
            .count())
    })
    .into_iter()
    .sum::<Result<usize>>()?;
    Ok(wrong as f64 / test.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------

/// Per-example selection probability over time, keyed by example id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbTrace {
    series: BTreeMap<u64, Vec<(usize, f64)>>,
}

impl ProbTrace {
    pub fn new(ids: &[u64]) -> Self {
        ProbTrace {
            series: ids.iter().map(|&id| (id, Vec::new())).collect(),
        }
    }

    pub fn record(&mut self, id: u64, epoch: usize, prob: f64) {
        if let Some(s) = self.series.get_mut(&id) {
            s.push((epoch, prob));
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.series.keys().copied()
    }

    pub fn series(&self, id: u64) -> Option<&[(usize, f64)]> {
        self.series.get(&id).map(Vec::as_slice)
    }

    /// Population variance of one example's probabilities (0 for fewer than 2 points).
    pub fn variance(&self, id: u64) -> Option<f64> {
        let s = self.series.get(&id)?;
        if s.len() < 2 {
            return Some(0.0);
        }
        let n = s.len() as f64;
        let mean = s.iter().map(|p| p.1).sum::<f64>() / n;
        Some(s.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n)
    }

    pub fn mean_variance(&self) -> f64 {
        if self.series.is_empty() {
            return 0.0;
        }
        self.series.keys().filter_map(|&id| self.variance(id)).sum::<f64>() / self.series.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,epoch,prob\n");
        for (id, s) in &self.series {
            for (epoch, p) in s {
                out.push_str(&format!("{id},{epoch},{p:.6}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    #[test]
    fn constant_class_zero_net_scores_chance() {
        // zero weights, bias favours class 0
        let w = Matrix::zeros(4, 2);
        let net = Network::from_parts(vec![w], vec![vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let x = Matrix::zeros(8, 2);
        let test = Dataset::new(x, (0..8).map(|i| i % 4).collect(), 4).unwrap();
        assert!((evaluate(&net, &test).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn memorizer_scores_zero() {
        // identity weights on one-hot inputs
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let net = Network::from_parts(vec![w], vec![vec![0.0; 3]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let test = Dataset::new(x, vec![0, 2], 3).unwrap();
        assert_eq!(evaluate(&net, &test).unwrap(), 0.0);
    }

    #[test]
    fn empty_test_set_is_config_error() {
        let net = Network::init(&[2, 2], 0).unwrap();
        let test = Dataset::new(Matrix::zeros(0, 2), vec![], 2).unwrap();
        assert!(matches!(evaluate(&net, &test), Err(Error::Config { .. })));
    }

    #[test]
    fn parse_reports_line_of_bad_record() {
        let text = format!("# fingerprint=ab label=x\n{LOG_COLUMNS}\n0,0,0,0,0.5,0,0,0,0\n1,0,0,x,0.4,0,0,0,0\n");
        match RunLog::parse(&text, Path::new("a.log")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trace_variance() {
        let mut t = ProbTrace::new(&[3, 4]);
        t.record(3, 0, 0.0);
        t.record(3, 1, 1.0);
        t.record(4, 0, 0.5);
        t.record(99, 0, 0.5);
        assert_eq!(t.variance(3), Some(0.25));
        assert_eq!(t.variance(4), Some(0.0));
        assert_eq!(t.variance(99), None);
        assert_eq!(t.mean_variance(), 0.125);
    }

    fn arb_record() -> impl Strategy<Value = EpochRecord> {
        (0u64..1000, 0u64..1000, 0u64..1000, 0u32..=1_000_000, prop::array::uniform4(0u64..10_000_000_000))
            .prop_map(|(a, b, c, e, t)| EpochRecord {
                epoch: 0,
                sel_fwd: a,
                train_fwd: b,
                bwd: c,
                test_err: e as f64 / 1e6,
                t_sel: round6(t[0] as f64 / 1e6),
                t_train_fwd: round6(t[1] as f64 / 1e6),
                t_bwd: round6(t[2] as f64 / 1e6),
                t_other: round6(t[3] as f64 / 1e6),
            })
    }

    proptest! {
        #[test]
        fn log_round_trips(mut recs in prop::collection::vec(arb_record(), 0..20), label in "[a-z0-9_.=-]{1,12}") {
            let mut acc = (0, 0, 0);
            for (i, r) in recs.iter_mut().enumerate() {
                acc = (acc.0 + r.sel_fwd, acc.1 + r.train_fwd, acc.2 + r.bwd);
                r.epoch = i;
                r.sel_fwd = acc.0;
                r.train_fwd = acc.1;
                r.bwd = acc.2;
            }
            let log = RunLog { fingerprint: "0123abcd".into(), label, records: recs };
            let back = RunLog::parse(&log.serialize(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, log);
        }
    }
}
