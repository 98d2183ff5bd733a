//! Unsupervised mini-batch training of the parameter network.
//!
//! The loss is the negative mean sum-rate of the recovered solutions. At every
//! validation point a snapshot of the model gets its batch-norm statistics
//! finalized on a fixed set of samples and is scored in eval mode; the best
//! snapshot is returned.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::InstanceSpec;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, features_matrix, output_objective, pipeline_gradient, recover_from_output, AdamState, Mlp, Mode, Variant,
};
use crate::recovery::{check_feasibility, FEASIBILITY_TOL};
use crate::system::{sum_rate, Beamformer, QuantNoise, SystemInstance};

/// Index offset of the samples used to finalize batch-norm statistics in online mode.
const STATS_STREAM_OFFSET: u64 = 1 << 62;

/// Step decay of the learning rate on validation plateaus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    /// Consecutive non-improving validations before each decay.
    pub plateau: usize,
    pub min_lr: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-3, decay: 0.5, plateau: 3, min_lr: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iterations: usize,
    pub validation_interval: usize,
    /// Non-improving validations tolerated before stopping.
    pub patience: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    pub variant: Variant,
    /// Samples used to finalize batch-norm statistics in online mode.
    pub stats_samples: usize,
    pub record_wall_clock: bool,
}

impl TrainConfig {
    pub fn desk(variant: Variant, seed: u64) -> Self {
        Self {
            batch_size: 256,
            max_iterations: 50_000,
            validation_interval: 500,
            patience: 10,
            lr: LrSchedule::default(),
            seed,
            variant,
            stats_samples: 2048,
            record_wall_clock: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.patience == 0 || self.validation_interval == 0 {
            return Err(Error::Config("patience and validation interval must be positive".into()));
        }
        if !(self.lr.initial >= 0.0 && self.lr.initial.is_finite()) || !(self.lr.decay > 0.0 && self.lr.decay <= 1.0) {
            return Err(Error::Config("invalid learning-rate schedule".into()));
        }
        if self.lr.plateau == 0 || self.stats_samples < 2 {
            return Err(Error::Config("plateau and stats_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Source of training mini-batches.
#[derive(Debug, Clone)]
pub enum TrainData {
    /// Fresh samples from the generator: iteration `t` uses sample indices `t*B..(t+1)*B`.
    Online { spec: InstanceSpec, seed: u64 },
    /// A fixed set, reshuffled every epoch.
    Fixed(Vec<SystemInstance>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// Mean train loss since the previous validation; the iteration-0 entry reports the first batch.
    pub train_loss: f64,
    pub val_sum_rate: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<HistoryEntry>,
    /// Iteration of the returned snapshot.
    pub best_iteration: usize,
    pub best_val_sum_rate: f64,
    pub iterations_run: usize,
    pub stopped_early: bool,
    /// Training samples left out because they recovered a zero beamformer.
    pub excluded_samples: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,train_loss,val_sum_rate,lr,wall_ms\n");
        for h in &self.history {
            let _ = writeln!(out, "{},{},{},{},{}", h.iteration, h.train_loss, h.val_sum_rate, h.lr, h.wall_ms);
        }
        out
    }
}

struct BatchSource<'a> {
    data: &'a TrainData,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchSource<'a> {
    fn new(data: &'a TrainData, seed: u64) -> Result<Self> {
        if let TrainData::Fixed(set) = data {
            if set.is_empty() {
                return Err(Error::Config("training set is empty".into()));
            }
        }
        Ok(Self { data, order: Vec::new(), cursor: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    fn batch(&mut self, iteration: usize, size: usize) -> Result<Vec<SystemInstance>> {
        match self.data {
            TrainData::Online { spec, seed } => Ok(spec
                .sample_range(*seed, (iteration * size) as u64, size)?
                .into_iter()
                .map(SystemInstance::new)
                .collect()),
            TrainData::Fixed(set) => {
                let mut out = Vec::with_capacity(size);
                while out.len() < size {
                    if self.cursor == self.order.len() {
                        self.order = (0..set.len()).collect();
                        self.order.shuffle(&mut self.rng);
                        self.cursor = 0;
                    }
                    out.push(set[self.order[self.cursor]].clone());
                    self.cursor += 1;
                }
                Ok(out)
            }
        }
    }

    fn stats_set(&self, n: usize) -> Result<Vec<SystemInstance>> {
        match self.data {
            TrainData::Online { spec, seed } => {
                Ok(spec.sample_range(*seed, STATS_STREAM_OFFSET, n)?.into_iter().map(SystemInstance::new).collect())
            }
            TrainData::Fixed(set) => Ok(set.clone()),
        }
    }
}

/// Copy of `model` with batch-norm statistics taken exactly from `stats`.
pub fn finalized(model: &Mlp, stats: &[SystemInstance]) -> Result<Mlp> {
    let mut snapshot = model.clone();
    snapshot.finalize_statistics(&features_matrix(stats))?;
    Ok(snapshot)
}

/// Trains `initial` and returns the best finalized snapshot.
pub fn train(
    initial: Mlp,
    config: &TrainConfig,
    data: &TrainData,
    validation: &[SystemInstance],
) -> Result<(Mlp, TrainReport)> {
    config.validate()?;
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let expected_out = config.variant.output_dim(validation[0].num_aps(), validation[0].num_users());
    if initial.config().output_dim != expected_out {
        return Err(Error::Config(format!(
            "network emits {} values, the {} variant needs {expected_out}",
            initial.config().output_dim,
            config.variant.name()
        )));
    }
    let start = Instant::now();
    let wall = |on: bool| if on { start.elapsed().as_millis() as u64 } else { 0 };

    let mut source = BatchSource::new(data, config.seed)?;
    let stats = source.stats_set(config.stats_samples)?;
    let mut model = initial;
    let mut optimizer = AdamState::new(&model, config.lr.initial);

    let mut best = finalized(&model, &stats)?;
    let mut best_val = evaluate(&best, validation, config.variant)?.mean_sum_rate;
    let mut report = TrainReport {
        history: Vec::new(),
        best_iteration: 0,
        best_val_sum_rate: best_val,
        iterations_run: 0,
        stopped_early: false,
        excluded_samples: 0,
    };
    let mut stale = 0usize;
    let mut since_decay = 0usize;
    let mut loss_acc = 0.0;
    let mut loss_count = 0usize;

    for iteration in 1..=config.max_iterations {
        let batch = source.batch(iteration - 1, config.batch_size)?;
        let obj = pipeline_gradient(&model, &batch, config.variant).map_err(|e| match e {
            Error::NonFinite { sample, .. } => Error::NonFinite { iteration, sample },
            other => other,
        })?;
        if !obj.loss.is_finite() || obj.grads.tensors.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { iteration, sample: 0 });
        }
        report.excluded_samples += obj.excluded;
        if iteration == 1 {
            report.history.push(HistoryEntry {
                iteration: 0,
                train_loss: obj.loss,
                val_sum_rate: best_val,
                lr: optimizer.lr,
                wall_ms: 0,
            });
        }
        loss_acc += obj.loss;
        loss_count += 1;
        model.absorb_statistics(&obj.cache, crate::nn::BN_MOMENTUM)?;
        adam_step(&mut model, &obj.grads, &mut optimizer)?;
        report.iterations_run = iteration;

        if iteration % config.validation_interval == 0 || iteration == config.max_iterations {
            let snapshot = finalized(&model, &stats)?;
            let val = evaluate(&snapshot, validation, config.variant)?.mean_sum_rate;
            report.history.push(HistoryEntry {
                iteration,
                train_loss: loss_acc / loss_count as f64,
                val_sum_rate: val,
                lr: optimizer.lr,
                wall_ms: wall(config.record_wall_clock),
            });
            loss_acc = 0.0;
            loss_count = 0;
            log::info!("iteration {iteration}: train loss {:.4}, validation sum-rate {val:.4}, lr {:e}", report.history.last().map_or(0.0, |h| h.train_loss), optimizer.lr);
            if val > best_val {
                best_val = val;
                best = snapshot;
                report.best_iteration = iteration;
                stale = 0;
                since_decay = 0;
            } else {
                stale += 1;
                since_decay += 1;
                if stale >= config.patience {
                    report.stopped_early = iteration < config.max_iterations;
                    break;
                }
                if since_decay >= config.lr.plateau {
                    optimizer.lr = (optimizer.lr * config.lr.decay).max(config.lr.min_lr.min(optimizer.lr));
                    since_decay = 0;
                }
            }
        }
    }
    report.best_val_sum_rate = best_val;
    Ok((best, report))
}

/// Per-sample results of a model on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_sum_rate: f64,
    pub rates: Vec<f64>,
    pub feasible: Vec<bool>,
    pub worst_power_slack: Vec<f64>,
    pub worst_fronthaul_slack: Vec<f64>,
    pub violations: usize,
    /// Samples whose output recovered an all-zero beamformer (scored as rate 0).
    pub degenerate: usize,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,sum_rate,feasible,worst_power_slack,worst_fronthaul_slack\n");
        for i in 0..self.rates.len() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                self.rates[i], self.feasible[i] as u8, self.worst_power_slack[i], self.worst_fronthaul_slack[i]
            );
        }
        out
    }

    pub fn std_sum_rate(&self) -> f64 {
        std_dev(&self.rates)
    }
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Eval-mode inference, recovery and feasibility check on every sample.
pub fn evaluate(model: &Mlp, instances: &[SystemInstance], variant: Variant) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let out = model.predict(&features_matrix(instances))?;
    evaluate_with(instances, |s, inst| recover_from_output(inst, out.row(s), variant))
}

/// Scores the solution `solve(index, instance)` of every sample. A solver
/// reporting an all-zero beamformer scores rate 0.
pub fn evaluate_with<F>(instances: &[SystemInstance], solve: F) -> Result<EvalReport>
where
    F: Fn(usize, &SystemInstance) -> Result<(Beamformer, QuantNoise)> + Sync,
{
    if instances.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let per: Vec<Result<(f64, bool, f64, f64, bool)>> = instances
        .par_iter()
        .enumerate()
        .map(|(s, inst)| match solve(s, inst) {
            Ok((v, omega)) => {
                let rep = check_feasibility(&v, &omega, inst.power_budget(), inst.beta, FEASIBILITY_TOL);
                Ok((sum_rate(inst.h(), &v, &omega), rep.feasible, rep.worst_power_slack, rep.worst_fronthaul_slack, v.is_zero()))
            }
            Err(Error::DegenerateBeamformer) => Ok((0.0, true, inst.power_budget(), 0.0, true)),
            Err(e) => Err(e),
        })
        .collect();
    let mut report = EvalReport {
        mean_sum_rate: 0.0,
        rates: Vec::with_capacity(instances.len()),
        feasible: Vec::with_capacity(instances.len()),
        worst_power_slack: Vec::with_capacity(instances.len()),
        worst_fronthaul_slack: Vec::with_capacity(instances.len()),
        violations: 0,
        degenerate: 0,
    };
    for r in per {
        let (rate, ok, ps, fs, degenerate) = r?;
        report.rates.push(rate);
        report.feasible.push(ok);
        report.worst_power_slack.push(ps);
        report.worst_fronthaul_slack.push(fs);
        report.violations += usize::from(!ok);
        report.degenerate += usize::from(degenerate);
    }
    report.mean_sum_rate = report.rates.iter().sum::<f64>() / report.rates.len() as f64;
    Ok(report)
}

/// Negative mean sum-rate of a batch, using batch statistics when the batch has
/// at least two samples and running statistics otherwise.
pub fn loss_on_batch(model: &Mlp, batch: &[SystemInstance], variant: Variant) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mode = if batch.len() >= 2 { Mode::Train } else { Mode::Eval };
    let (out, _) = model.forward(&features_matrix(batch), mode)?;
    let values: Vec<Result<Option<f64>>> = batch
        .par_iter()
        .enumerate()
        .map(|(s, inst)| match output_objective(inst, out.row(s), variant) {
            Ok((v, _)) => Ok(Some(v)),
            Err(Error::DegenerateBeamformer) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut total = 0.0;
    let mut n = 0usize;
    for v in values {
        if let Some(v) = v? {
            total += v;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { -total / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;

    fn small_setup(m: usize, k: usize, n: usize, seed: u64) -> Vec<SystemInstance> {
        InstanceSpec::new(m, k).sample_range(seed, 0, n).unwrap().into_iter().map(SystemInstance::new).collect()
    }

    fn quick_config(variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            max_iterations: 60,
            validation_interval: 20,
            patience: 10,
            stats_samples: 64,
            record_wall_clock: false,
            ..TrainConfig::desk(variant, seed)
        }
    }

    #[test]
    fn training_is_deterministic() {
        let validation = small_setup(2, 2, 20, 99);
        let data = TrainData::Online { spec: InstanceSpec::new(2, 2), seed: 5 };
        for variant in [Variant::Proposed, Variant::DiLearn] {
            let cfg = match variant {
                Variant::Proposed => MlpConfig::proposed(2, 2, 3, 16),
                Variant::DiLearn => MlpConfig::dilearn(2, 2, 3, 16),
            };
            let run = || train(Mlp::new(cfg.clone(), 1).unwrap(), &quick_config(variant, 1), &data, &validation).unwrap();
            let (a, ra) = run();
            let (b, rb) = run();
            assert_eq!(ra, rb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_model() {
        let validation = small_setup(2, 2, 30, 98);
        let data = TrainData::Fixed(small_setup(2, 2, 50, 3));
        let initial = Mlp::new(MlpConfig::proposed(2, 2, 3, 16), 7).unwrap();
        let mut cfg = quick_config(Variant::Proposed, 2);
        cfg.lr.initial = 0.0;
        let (trained, report) = train(initial.clone(), &cfg, &data, &validation).unwrap();
        assert_eq!(trained.parameters(), initial.parameters());
        let stats = BatchSource::new(&data, 0).unwrap().stats_set(cfg.stats_samples).unwrap();
        let reference = evaluate(&finalized(&initial, &stats).unwrap(), &validation, Variant::Proposed).unwrap();
        let got = evaluate(&trained, &validation, Variant::Proposed).unwrap();
        assert_eq!(reference, got);
        assert!(report.history.iter().all(|h| h.val_sum_rate == reference.mean_sum_rate));
    }

    #[test]
    fn single_sample_run_terminates_feasibly() {
        let set = small_setup(2, 2, 1, 4);
        let cfg = TrainConfig { patience: 1, validation_interval: 5, max_iterations: 1000, ..quick_config(Variant::Proposed, 3) };
        let (model, report) =
            train(Mlp::new(MlpConfig::proposed(2, 2, 3, 8), 2).unwrap(), &cfg, &TrainData::Fixed(set.clone()), &set).unwrap();
        assert!(report.iterations_run <= 1000 && !report.history.is_empty());
        let eval = evaluate(&model, &set, Variant::Proposed).unwrap();
        assert_eq!(eval.violations, 0);
    }

    #[test]
    fn evaluation_on_training_set_matches_history() {
        let set = small_setup(2, 2, 40, 8);
        let cfg = TrainConfig { max_iterations: 40, validation_interval: 20, ..quick_config(Variant::Proposed, 4) };
        let (model, report) =
            train(Mlp::new(MlpConfig::proposed(2, 2, 3, 8), 3).unwrap(), &cfg, &TrainData::Fixed(set.clone()), &set).unwrap();
        let eval = evaluate(&model, &set, Variant::Proposed).unwrap();
        assert!((eval.mean_sum_rate - report.best_val_sum_rate).abs() < 1e-9);
        let mean = eval.rates.iter().sum::<f64>() / eval.rates.len() as f64;
        assert!((mean - eval.mean_sum_rate).abs() < 1e-12);
    }

    #[test]
    fn random_models_never_violate_constraints() {
        let set = small_setup(3, 3, 1000, 11);
        for (seed, variant) in [(1, Variant::Proposed), (2, Variant::DiLearn)] {
            let cfg = match variant {
                Variant::Proposed => MlpConfig::proposed(3, 3, 4, 20),
                Variant::DiLearn => MlpConfig::dilearn(3, 3, 4, 20),
            };
            let model = Mlp::new(cfg, seed).unwrap();
            let eval = evaluate(&model, &set, variant).unwrap();
            assert_eq!(eval.violations, 0);
        }
    }

    #[test]
    fn eval_csv_schema() {
        let set = small_setup(1, 1, 2, 12);
        let eval = evaluate(&Mlp::new(MlpConfig::proposed(1, 1, 2, 4), 0).unwrap(), &set, Variant::Proposed).unwrap();
        let csv = eval.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "sample,sum_rate,feasible,worst_power_slack,worst_fronthaul_slack");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,") && lines[1].split(',').nth(2) == Some("1"));
    }

    #[test]
    fn loss_decreases_early_in_training() {
        let set = small_setup(2, 2, 256, 13);
        let mut improved = 0;
        for seed in 0..10 {
            let initial = Mlp::new(MlpConfig::proposed(2, 2, 4, 52), seed).unwrap();
            let before = loss_on_batch(&initial, &set, Variant::Proposed).unwrap();
            let cfg = TrainConfig {
                batch_size: 64,
                max_iterations: 100,
                validation_interval: 100,
                lr: LrSchedule { initial: 1e-3, ..LrSchedule::default() },
                ..quick_config(Variant::Proposed, seed)
            };
            let mut model = initial.clone();
            let mut opt = AdamState::new(&model, cfg.lr.initial);
            let fixed = TrainData::Fixed(set.clone());
            let mut source = BatchSource::new(&fixed, seed).unwrap();
            for it in 0..cfg.max_iterations {
                let batch = source.batch(it, cfg.batch_size).unwrap();
                let obj = pipeline_gradient(&model, &batch, Variant::Proposed).unwrap();
                adam_step(&mut model, &obj.grads, &mut opt).unwrap();
            }
            let after = loss_on_batch(&model, &set, Variant::Proposed).unwrap();
            improved += usize::from(after < before);
        }
        assert!(improved >= 9, "{improved}/10 seeds improved");
    }

    #[test]
    fn loss_is_negative_mean_rate() {
        let set = small_setup(2, 2, 5, 14);
        let model = Mlp::new(MlpConfig::proposed(2, 2, 3, 8), 5).unwrap();
        let (out, _) = model.forward(&features_matrix(&set), Mode::Train).unwrap();
        let mean: f64 = set
            .iter()
            .enumerate()
            .map(|(s, inst)| {
                let (v, w) = recover_from_output(inst, out.row(s), Variant::Proposed).unwrap();
                sum_rate(inst.h(), &v, &w)
            })
            .sum::<f64>()
            / 5.0;
        let loss = loss_on_batch(&model, &set, Variant::Proposed).unwrap();
        assert!((loss + mean).abs() < 1e-12);
        let obj = pipeline_gradient(&model, &set, Variant::Proposed).unwrap();
        assert!((obj.loss - loss).abs() < 1e-12);
    }
}
