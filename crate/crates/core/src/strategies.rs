//! Batch construction for each selection policy and the epoch-level training driver.
//!
//! Pass accounting follows one rule everywhere: a *selection* forward is a
//! forward pass made only to score examples, a *training* forward is the pass
//! over an assembled batch immediately before its backward pass. Every trained
//! example costs one training forward and one backward.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand::seq::index;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{map_ordered, Exec};
use crate::metrics::{evaluate_with, round6, EpochRecord, Phase, PhaseClock, ProbTrace, RunLog, RunLogWriter};
use crate::nn::{cross_entropy_losses, LrSchedule, Network};
use crate::rng::{self, Stream, StreamRng};
use crate::sampler::{decide, Sampler, SamplerConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Every example, every epoch, in shuffled minibatches.
    Traditional,
    /// Per-example Bernoulli selection with probability `percentile^beta`.
    Sb { sampler: SamplerConfig },
    /// `Sb` on every `period`-th epoch; in between, stored probabilities are re-drawn.
    StaleSb { sampler: SamplerConfig, period: usize },
    /// Score a pool, then draw `select_k` examples with replacement proportional to loss.
    Kath18 { pool_size: usize, select_k: usize },
    /// Keep the highest-loss `fraction` of each selection minibatch.
    TopK { fraction: f64 },
    /// Keep a uniformly random `fraction` of each selection minibatch.
    Random { fraction: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Traditional => "traditional",
            Strategy::Sb { .. } => "sb",
            Strategy::StaleSb { .. } => "stale-sb",
            Strategy::Kath18 { .. } => "kath18",
            Strategy::TopK { .. } => "topk",
            Strategy::Random { .. } => "random",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Traditional => Ok(()),
            Strategy::Sb { sampler } => sampler.validate(),
            Strategy::StaleSb { sampler, period } => {
                sampler.validate()?;
                if *period == 0 {
                    return Err(Error::config("strategy.staleness", "must be at least 1"));
                }
                Ok(())
            }
            Strategy::Kath18 { pool_size, select_k } => {
                if *select_k == 0 || select_k > pool_size {
                    return Err(Error::config(
                        "strategy.select_k",
                        format!("must lie in [1, pool_size={pool_size}], got {select_k}"),
                    ));
                }
                Ok(())
            }
            Strategy::TopK { fraction } | Strategy::Random { fraction } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(Error::config(
                        "strategy.fraction",
                        format!("must lie in (0, 1], got {fraction}"),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Everything that determines one run apart from the data.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub hidden: Vec<usize>,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Example ids whose selection probabilities are traced.
    pub tracked_ids: Vec<u64>,
    /// Sampler used to shadow-score strategies that do not compute selection probabilities.
    pub shadow: SamplerConfig,
    pub exec: Exec,
    /// Keep a copy of the parameters after every epoch.
    pub record_params: bool,
    pub label: String,
    pub fingerprint: String,
}

impl RunSpec {
    pub fn new(hidden: Vec<usize>, strategy: Strategy, batch_size: usize, epochs: usize, lr: f64, seed: u64) -> Self {
        let label = strategy.name().to_string();
        RunSpec {
            hidden,
            strategy,
            batch_size,
            epochs,
            schedule: LrSchedule::constant(lr),
            seed,
            tracked_ids: Vec::new(),
            shadow: SamplerConfig {
                beta: 2.0,
                history_capacity: crate::sampler::DEFAULT_HISTORY,
            },
            exec: Exec::default(),
            record_params: false,
            label,
            fingerprint: String::new(),
        }
    }

    pub fn layer_sizes(&self, data: &Dataset) -> Vec<usize> {
        let mut sizes = vec![data.dim()];
        sizes.extend(&self.hidden);
        sizes.push(data.class_count());
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        self.schedule.validate()?;
        self.strategy.validate()?;
        self.shadow.validate()
    }
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: RunLog,
    pub network: Network,
    /// Number of SGD steps taken.
    pub updates: u64,
    pub trace: Option<ProbTrace>,
    /// Parameters after each epoch, when requested.
    pub epoch_params: Vec<Network>,
    /// Selected examples still waiting for a full batch when training ended.
    pub discarded_pending: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counters {
    sel_fwd: u64,
    train_fwd: u64,
    bwd: u64,
    updates: u64,
}

/// Mutable state of one run.
struct Trainer<'a> {
    spec: &'a RunSpec,
    data: &'a Dataset,
    net: Network,
    clock: PhaseClock,
    counts: Counters,
    selection_rng: StreamRng,
    /// Selected examples (row indices) waiting for a full batch.
    pending: Vec<usize>,
    sampler: Option<Sampler>,
    /// Probability from the latest selection pass, per row; NaN before the first.
    stored_probs: Vec<f64>,
    shadow: Option<Sampler>,
    trace: Option<ProbTrace>,
    /// Tracked id for each row, if any.
    tracked: Vec<Option<u64>>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    fn new(spec: &'a RunSpec, data: &'a Dataset) -> Result<Self> {
        spec.validate()?;
        if data.is_empty() {
            return Err(Error::config("dataset", "training set is empty"));
        }
        let net = Network::init(&spec.layer_sizes(data), spec.seed)?;
        let sampler = match &spec.strategy {
            Strategy::Sb { sampler } | Strategy::StaleSb { sampler, .. } => Some(Sampler::new(*sampler)?),
            _ => None,
        };
        let mut tracked = vec![None; data.len()];
        for &id in &spec.tracked_ids {
            let row = data
                .row_of_id(id)
                .ok_or_else(|| Error::config("tracked_ids", format!("example id {id} is not in the training set")))?;
            tracked[row] = Some(id);
        }
        let tracing = !spec.tracked_ids.is_empty();
        let shadow = if tracing && sampler.is_none() {
            Some(Sampler::new(spec.shadow)?)
        } else {
            None
        };
        Ok(Trainer {
            spec,
            data,
            net,
            clock: PhaseClock::start(),
            counts: Counters::default(),
            selection_rng: rng::stream(spec.seed, Stream::Selection),
            pending: Vec::with_capacity(spec.batch_size),
            sampler,
            stored_probs: vec![f64::NAN; data.len()],
            shadow,
            trace: tracing.then(|| ProbTrace::new(&spec.tracked_ids)),
            tracked,
            epoch: 0,
        })
    }

    fn non_finite(&self, what: impl Into<String>) -> Error {
        Error::NonFinite {
            epoch: self.epoch,
            step: self.counts.updates as usize,
            what: what.into(),
        }
    }

    fn lift(&self, e: Error) -> Error {
        match e {
            Error::Data(msg) => self.non_finite(msg),
            other => other,
        }
    }

    fn epoch_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng::stream_at(self.spec.seed, Stream::Shuffle, self.epoch as u64));
        order
    }

    fn trace_prob(&mut self, row: usize, prob: f64) {
        if let (Some(trace), Some(id)) = (self.trace.as_mut(), self.tracked[row]) {
            trace.record(id, self.epoch, prob);
        }
    }

    /// Training forward + backward + SGD step over `rows`.
    fn train_batch(&mut self, rows: &[usize]) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let (x, y) = self.data.batch(rows);
        let exec = self.spec.exec;
        let net = &self.net;
        let trace = self
            .clock
            .time(Phase::TrainingForward, || net.forward_with(&x, exec))?;
        if self.shadow.is_some() {
            let losses = cross_entropy_losses(trace.logits(), &y)?;
            for (&row, &loss) in rows.iter().zip(&losses) {
                let p = self
                    .shadow
                    .as_mut()
                    .unwrap()
                    .calc_prob(loss)
                    .map_err(|e| self.lift(e))?;
                self.trace_prob(row, p);
            }
        }
        let lr = self.spec.schedule.lr_at(self.epoch);
        let net = &mut self.net;
        let step = self.clock.time(Phase::Backward, || -> Result<()> {
            let grads = net.backward_with(&trace, &y, exec)?;
            net.sgd_step(&grads, lr)
        });
        step.map_err(|e| self.lift(e))?;
        let n = rows.len() as u64;
        self.counts.train_fwd += n;
        self.counts.bwd += n;
        self.counts.updates += 1;
        Ok(())
    }

    /// Selection forward over `rows`, returning per-example losses.
    fn selection_losses(&mut self, rows: &[usize]) -> Result<Vec<f64>> {
        let (x, y) = self.data.batch(rows);
        let exec = self.spec.exec;
        let net = &self.net;
        let trace = self
            .clock
            .time(Phase::SelectionForward, || net.forward_with(&x, exec))?;
        self.counts.sel_fwd += rows.len() as u64;
        let losses = cross_entropy_losses(trace.logits(), &y)?;
        if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
            return Err(self.non_finite(format!("loss of example id {}", self.data.ids()[rows[i]])));
        }
        Ok(losses)
    }

    /// Queue `row` for training; fire a backward pass when the batch is full.
    fn enqueue(&mut self, row: usize) -> Result<()> {
        self.pending.push(row);
        if self.pending.len() == self.spec.batch_size {
            let batch = std::mem::take(&mut self.pending);
            self.train_batch(&batch)?;
            self.pending = batch;
            self.pending.clear();
        }
        Ok(())
    }

    fn consider(&mut self, row: usize, prob: f64) -> Result<()> {
        if decide(prob, &mut self.selection_rng) {
            self.enqueue(row)?;
        }
        Ok(())
    }

    fn run_traditional_epoch(&mut self, order: &[usize]) -> Result<()> {
        for chunk in order.chunks(self.spec.batch_size) {
            self.train_batch(chunk)?;
        }
        Ok(())
    }

    fn run_sb_epoch(&mut self, order: &[usize], store: bool) -> Result<()> {
        for chunk in order.chunks(self.spec.batch_size) {
            let losses = self.selection_losses(chunk)?;
            for (&row, &loss) in chunk.iter().zip(&losses) {
                let prob = self
                    .sampler
                    .as_mut()
                    .ok_or_else(|| Error::Internal("selection epoch without a sampler".into()))?
                    .calc_prob(loss)
                    .map_err(|e| self.lift(e))?;
                self.trace_prob(row, prob);
                if store {
                    self.stored_probs[row] = prob;
                }
                self.consider(row, prob)?;
            }
        }
        Ok(())
    }

    fn run_stale_sb_epoch(&mut self, order: &[usize], period: usize) -> Result<()> {
        if self.epoch.is_multiple_of(period) {
            return self.run_sb_epoch(order, true);
        }
        for &row in order {
            let prob = self.stored_probs[row];
            if prob.is_nan() {
                return Err(Error::Internal(format!(
                    "stale epoch {} reached before any selection pass",
                    self.epoch
                )));
            }
            self.consider(row, prob)?;
        }
        Ok(())
    }

    fn run_kath18_epoch(&mut self, order: &[usize], pool_size: usize, select_k: usize) -> Result<()> {
        for pool in order.chunks(pool_size) {
            let losses = self.selection_losses(pool)?;
            let k = if pool.len() == pool_size {
                select_k
            } else {
                (select_k * pool.len() / pool_size).max(1)
            };
            let picks = sample_proportional(&losses, k, &mut self.selection_rng);
            let rows: Vec<usize> = picks.into_iter().map(|i| pool[i]).collect();
            self.train_batch(&rows)?;
        }
        Ok(())
    }

    fn run_topk_epoch(&mut self, order: &[usize], fraction: f64) -> Result<()> {
        for chunk in order.chunks(self.spec.batch_size) {
            let losses = self.selection_losses(chunk)?;
            let k = keep_count(fraction, chunk.len());
            for pos in top_k_positions(&losses, k) {
                self.enqueue(chunk[pos])?;
            }
        }
        Ok(())
    }

    fn run_random_epoch(&mut self, order: &[usize], fraction: f64) -> Result<()> {
        for chunk in order.chunks(self.spec.batch_size) {
            let k = keep_count(fraction, chunk.len());
            let mut picks = index::sample(&mut self.selection_rng, chunk.len(), k).into_vec();
            picks.sort_unstable();
            for pos in picks {
                self.enqueue(chunk[pos])?;
            }
        }
        Ok(())
    }

    fn run_epoch(&mut self) -> Result<()> {
        let order = self.epoch_order();
        match self.spec.strategy.clone() {
            Strategy::Traditional => self.run_traditional_epoch(&order),
            Strategy::Sb { .. } => self.run_sb_epoch(&order, false),
            Strategy::StaleSb { period, .. } => self.run_stale_sb_epoch(&order, period),
            Strategy::Kath18 { pool_size, select_k } => self.run_kath18_epoch(&order, pool_size, select_k),
            Strategy::TopK { fraction } => self.run_topk_epoch(&order, fraction),
            Strategy::Random { fraction } => self.run_random_epoch(&order, fraction),
        }
    }

    fn record(&self, epoch: usize, test: &Dataset) -> Result<EpochRecord> {
        let err = evaluate_with(&self.net, test, self.spec.exec)?;
        let (t_sel, t_train_fwd, t_bwd, t_other) = self.clock.snapshot();
        Ok(EpochRecord {
            epoch,
            sel_fwd: self.counts.sel_fwd,
            train_fwd: self.counts.train_fwd,
            bwd: self.counts.bwd,
            test_err: round6(err),
            t_sel,
            t_train_fwd,
            t_bwd,
            t_other,
        })
    }
}

/// Number of examples a fractional per-minibatch policy keeps.
pub fn keep_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(usize::from(n > 0), n)
}

/// Positions of the `k` largest losses; ties go to the earlier position.
/// Returned in ascending position order.
pub fn top_k_positions(losses: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// `k` draws with replacement, probability proportional to `weights`.
/// Falls back to uniform when every weight is zero.
pub fn sample_proportional<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    if weights.is_empty() {
        return Vec::new();
    }
    match WeightedIndex::new(weights) {
        Ok(dist) => (0..k).map(|_| dist.sample(rng)).collect(),
        Err(_) => (0..k).map(|_| rng.gen_range(0..weights.len())).collect(),
    }
}

/// Train one run end to end. Records an evaluation before training and after every epoch.
pub fn train(spec: &RunSpec, data: &Dataset, test: &Dataset, mut sink: Option<&mut RunLogWriter>) -> Result<RunOutput> {
    let mut t = Trainer::new(spec, data)?;
    if test.dim() != data.dim() {
        return Err(Error::Shape(format!(
            "test width {} differs from training width {}",
            test.dim(),
            data.dim()
        )));
    }
    let mut log = RunLog {
        fingerprint: spec.fingerprint.clone(),
        label: spec.label.clone(),
        records: Vec::with_capacity(spec.epochs + 1),
    };
    let mut epoch_params = Vec::new();
    let mut push = |rec: EpochRecord, log: &mut RunLog| -> Result<()> {
        if let Some(w) = sink.as_deref_mut() {
            w.append(&rec)?;
        }
        log.records.push(rec);
        Ok(())
    };
    push(t.record(0, test)?, &mut log)?;
    for epoch in 0..spec.epochs {
        t.epoch = epoch;
        t.run_epoch()?;
        push(t.record(epoch + 1, test)?, &mut log)?;
        if spec.record_params {
            epoch_params.push(t.net.clone());
        }
    }
    Ok(RunOutput {
        log,
        updates: t.counts.updates,
        discarded_pending: t.pending.len(),
        trace: t.trace,
        network: t.net,
        epoch_params,
    })
}

/// Independent runs over shared data; with `Exec::Parallel` they run concurrently.
pub fn train_many(specs: &[RunSpec], data: &Dataset, test: &Dataset, exec: Exec) -> Vec<Result<RunOutput>> {
    map_ordered(exec, specs, |s| train(s, data, test, None))
}
