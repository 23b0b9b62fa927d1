//! Subcommand bodies behind the `sbtrain` binary. Each returns once its artifact is fully written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{self, Measure, ParetoPoint};
use crate::config::TrainConfig;
use crate::data::{self, CorruptionSpec, Dataset};
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Exec};
use crate::gradsim::{subsample_comparison, SubsampleMode};
use crate::metrics::{RunLog, RunLogWriter};
use crate::nn::Network;
use crate::rng::{self, Stream};
use crate::strategies::{train, RunOutput, RunSpec, Strategy};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load, train, and write the run log (plus the probability trace when configured).
pub fn cmd_train(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunOutput> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let log_path: PathBuf = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.log.clone())
        .ok_or_else(|| Error::config("log", "no log path: set `log` in the config or pass --out"))?;
    run_training(&cfg, &log_path)
}

pub fn run_training(cfg: &TrainConfig, log_path: &Path) -> Result<RunOutput> {
    let (train_set, test_set) = cfg.datasets()?;
    let spec = cfg.run_spec()?;
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut writer = RunLogWriter::create(log_path, &spec.fingerprint, &spec.label)?;
    let output = train(&spec, &train_set, &test_set, Some(&mut writer))?;
    if let (Some(trace), Some(path)) = (&output.trace, cfg.trace.as_ref().and_then(|t| t.out.as_ref())) {
        write_text(path, &trace.to_csv())?;
    }
    Ok(output)
}

/// Speedup table of each candidate against the baseline. Returns the rendered table.
pub fn cmd_compare(baseline: &Path, candidates: &[PathBuf], multipliers: &[f64], out: Option<&Path>) -> Result<String> {
    if candidates.is_empty() {
        return Err(Error::config("candidates", "at least one candidate log is required"));
    }
    let base = RunLog::read(baseline)?;
    if base.records.is_empty() {
        return Err(Error::config("baseline", format!("{} has no records", baseline.display())));
    }
    let cands = candidates.iter().map(|p| RunLog::read(p)).collect::<Result<Vec<_>>>()?;
    let rows = analysis::compare(&base, &cands, multipliers);
    if let Some(path) = out {
        write_text(path, &analysis::compare_csv(&rows, multipliers))?;
    }
    Ok(analysis::compare_table(&rows, multipliers))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoReport {
    pub points: Vec<(ParetoPoint, bool)>,
    pub shares: BTreeMap<String, f64>,
}

impl ParetoReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("config,time,error,frontier\n");
        for (p, on) in &self.points {
            s.push_str(&format!("{},{},{:.6},{}\n", p.config, p.time, p.error, u8::from(*on)));
        }
        s
    }

    pub fn shares_text(&self) -> String {
        self.shares
            .iter()
            .map(|(k, v)| format!("{k}: {v:.1}% of frontier points\n"))
            .collect()
    }
}

pub fn pareto_report(logs: &[RunLog], measure: Measure) -> ParetoReport {
    let points: Vec<ParetoPoint> = logs.iter().flat_map(|l| analysis::pareto_points(l, measure)).collect();
    let frontier = analysis::pareto_frontier(&points);
    let mut claimed = vec![false; frontier.len()];
    let flagged = points
        .into_iter()
        .map(|p| {
            let hit = frontier
                .iter()
                .enumerate()
                .position(|(i, f)| !claimed[i] && *f == p);
            if let Some(i) = hit {
                claimed[i] = true;
            }
            (p, hit.is_some())
        })
        .collect();
    ParetoReport {
        points: flagged,
        shares: analysis::frontier_shares(&frontier),
    }
}

pub fn cmd_pareto(logs: &[PathBuf], measure: Measure, out: Option<&Path>) -> Result<ParetoReport> {
    if logs.is_empty() {
        return Err(Error::config("logs", "at least one log is required"));
    }
    let parsed = logs.iter().map(|p| RunLog::read(p)).collect::<Result<Vec<_>>>()?;
    let report = pareto_report(&parsed, measure);
    if let Some(path) = out {
        write_text(path, &report.csv())?;
    }
    Ok(report)
}

/// Flip labels of an internal-CSV dataset; returns how many changed.
pub fn cmd_corrupt(input: &Path, fraction: f64, seed: u64, classes: Option<usize>, output: &Path) -> Result<usize> {
    let data = data::read_csv(input, classes)?;
    let (out, rows) = data::uniform_flip(&data, &CorruptionSpec { fraction, seed })?;
    data::write_csv(&out, output)?;
    Ok(rows.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSimRow {
    pub batch_index: usize,
    pub fraction: f64,
    pub mode: SubsampleMode,
    pub cosine: f64,
    pub sign_fraction: f64,
}

pub const GRADSIM_HEADER: &str = "batch_index,fraction,mode,cosine,sign_fraction";

impl GradSimRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6}",
            self.batch_index, self.fraction, self.mode, self.cosine, self.sign_fraction
        )
    }
}

/// Network after `epochs` of Traditional training on `data`.
pub fn pretrain(cfg_spec: &RunSpec, data: &Dataset, test: &Dataset, epochs: usize) -> Result<Network> {
    let mut spec = cfg_spec.clone();
    spec.strategy = Strategy::Traditional;
    spec.epochs = epochs;
    spec.tracked_ids.clear();
    spec.record_params = false;
    Ok(train(&spec, data, test, None)?.network)
}

/// Similarity rows for the first `batches` full minibatches of a shuffled pass.
/// Random subsamples draw from a per-batch selection stream, so rows do not
/// depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn gradient_sweep(
    net: &Network,
    data: &Dataset,
    batch_size: usize,
    batches: usize,
    fractions: &[f64],
    modes: &[SubsampleMode],
    seed: u64,
    exec: Exec,
) -> Result<Vec<GradSimRow>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::stream_at(seed, Stream::Shuffle, u64::MAX));
    let chunks: Vec<(usize, &[usize])> = order
        .chunks_exact(batch_size.max(1))
        .take(batches)
        .enumerate()
        .collect();
    let per_batch = map_ordered(exec, &chunks, |&(b, rows)| -> Result<Vec<GradSimRow>> {
        let mut rng = rng::stream_at(seed, Stream::Selection, b as u64);
        let mut out = Vec::with_capacity(fractions.len() * modes.len());
        for &fraction in fractions {
            for &mode in modes {
                let s = subsample_comparison(net, data, rows, fraction, mode, &mut rng)?;
                out.push(GradSimRow {
                    batch_index: b,
                    fraction,
                    mode,
                    cosine: s.cosine,
                    sign_fraction: s.sign_fraction,
                });
            }
        }
        Ok(out)
    });
    let mut rows = Vec::new();
    for r in per_batch {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn gradsim_csv(rows: &[GradSimRow]) -> String {
    let mut s = format!("{GRADSIM_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

/// Mean cosine and sign agreement per `(fraction, mode)`, in first-seen order.
pub fn gradsim_means(rows: &[GradSimRow]) -> Vec<(f64, SubsampleMode, f64, f64)> {
    let mut out: Vec<(f64, SubsampleMode, f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|e| e.0 == r.fraction && e.1 == r.mode) {
            Some(e) => {
                e.2 += r.cosine;
                e.3 += r.sign_fraction;
                e.4 += 1;
            }
            None => out.push((r.fraction, r.mode, r.cosine, r.sign_fraction, 1)),
        }
    }
    out.into_iter()
        .map(|(f, m, c, s, n)| (f, m, c / n as f64, s / n as f64))
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_gradsim(
    config: &Path,
    seed: Option<u64>,
    fractions: &[f64],
    modes: &[SubsampleMode],
    pretrain_epochs: usize,
    batches: usize,
    out: &Path,
) -> Result<Vec<GradSimRow>> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if fractions.is_empty() || modes.is_empty() {
        return Err(Error::config("fractions", "need at least one fraction and one mode"));
    }
    let (train_set, test_set) = cfg.datasets()?;
    let spec = cfg.run_spec()?;
    let net = pretrain(&spec, &train_set, &test_set, pretrain_epochs)?;
    let rows = gradient_sweep(&net, &train_set, cfg.batch_size, batches, fractions, modes, cfg.seed, Exec::default())?;
    write_text(out, &gradsim_csv(&rows))?;
    Ok(rows)
}
