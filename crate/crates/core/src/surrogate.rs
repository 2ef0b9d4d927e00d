//! GBDT surrogate gating.
//!
//! Truly evaluated chromosomes become training rows (waypoint labels as
//! features, per-scenario cost as target). Once a classifier trained on them
//! scores well enough on a holdout split, candidates it calls "bad" get a
//! regressor forecast instead of a full scenario sweep.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::court::Cell;
use crate::error::{Error, Result};
use crate::eval::{cache_key, parse_key, resolve_from_cache, CacheEntry, CacheKey, EvalEngine};
use crate::evo::{Chromosome, Counters, Evaluation, Evaluator, Individual, Problem};
use crate::gbdt::{
    grid_search, regression_metrics, train, ClassificationMetrics, Dataset, GbdtModel, GbdtParams, Objective, ParamGrid,
    RegressionMetrics,
};

/// Waypoint labels `y * width + x + 1`, right-padded with 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureEncoding {
    pub court_width: usize,
    pub court_height: usize,
    pub max_len: usize,
}

impl FeatureEncoding {
    pub fn label(&self, c: Cell) -> f64 {
        (c.y as i64 * self.court_width as i64 + c.x as i64 + 1) as f64
    }

    pub fn featurize(&self, ch: &Chromosome) -> Result<Vec<f64>> {
        if ch.len() > self.max_len {
            return Err(Error::WidthMismatch { expected: self.max_len, got: ch.len() });
        }
        let mut v: Vec<f64> = ch.waypoints.iter().map(|c| self.label(*c)).collect();
        v.resize(self.max_len, 0.0);
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Label {
    Good,
    Bad,
}

/// Tunables of the gate, read from the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    /// Absolute margin over the base cost; `None` uses `epsilon_fraction`.
    pub epsilon: Option<f64>,
    pub epsilon_fraction: f64,
    pub accuracy_gate: f64,
    pub min_train_rows: usize,
    pub holdout_fraction: f64,
    /// Share of gated-out candidates that are truly evaluated anyway.
    pub audit_fraction: f64,
    /// Forecast error (per-scenario cost units) that counts as recovered.
    pub error_band: f64,
    pub classifier: GbdtParams,
    pub regressor: GbdtParams,
    /// When set, both models are tuned by grid search before each retrain.
    pub tuning_grid: Option<ParamGrid>,
    pub cv_folds: usize,
    /// Models for the offline study; the in-line ones when absent.
    pub offline: Option<OfflineModels>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineModels {
    pub classifier: GbdtParams,
    pub regressor: GbdtParams,
    /// Grid searched with `cv_folds`-fold CV on the training split, per model.
    pub grid: Option<ParamGrid>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            epsilon: None,
            epsilon_fraction: 0.01,
            accuracy_gate: 0.75,
            min_train_rows: 500,
            holdout_fraction: 0.2,
            audit_fraction: 0.05,
            error_band: 50.0,
            classifier: GbdtParams::default(),
            regressor: GbdtParams::default(),
            tuning_grid: None,
            cv_folds: 5,
            offline: None,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epsilon.is_some_and(|e| e.is_nan() || e < 0.0) || self.epsilon_fraction < 0.0 {
            return fail("epsilon must be >= 0");
        }
        // A gate above 1 can never be reached and keeps the surrogate off.
        if !(self.accuracy_gate >= 0.0) {
            return fail("accuracy_gate must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.audit_fraction) {
            return fail("audit_fraction must lie in [0, 1]");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return fail("holdout_fraction must lie in (0, 1)");
        }
        if self.min_train_rows < 2 {
            return fail("min_train_rows must be >= 2");
        }
        if let Some(o) = &self.offline {
            o.classifier.validate()?;
            o.regressor.validate()?;
        }
        self.classifier.validate()?;
        self.regressor.validate()
    }
}

/// The good/bad threshold: bad iff per-scenario cost > `base_cost + epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateConfig {
    pub epsilon: f64,
    pub base_cost: f64,
    pub accuracy_gate: f64,
    pub min_train_rows: usize,
}

impl GateConfig {
    pub fn new(cfg: &SurrogateConfig, base_cost: f64) -> Self {
        GateConfig {
            epsilon: cfg.epsilon.unwrap_or(cfg.epsilon_fraction * base_cost),
            base_cost,
            accuracy_gate: cfg.accuracy_gate,
            min_train_rows: cfg.min_train_rows,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.base_cost + self.epsilon
    }
}

pub fn label(cost: f64, gate: &GateConfig) -> Label {
    if cost > gate.threshold() {
        Label::Bad
    } else {
        Label::Good
    }
}

/// Outcome of one retrain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrainReport {
    pub rows: usize,
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub holdout_accuracy: Option<f64>,
    pub classification: Option<ClassificationMetrics>,
    pub regression: Option<RegressionMetrics>,
    pub active: bool,
}

/// Holdout size for `n` rows: `round(fraction * n)`, leaving at least one
/// training row.
pub fn holdout_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n.saturating_sub(1))
}

/// A seeded train/holdout split of `0..n`.
pub fn split_rows(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let h = holdout_size(n, fraction);
    let holdout = perm[..h].to_vec();
    let train = perm[h..].to_vec();
    (train, holdout)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GateStats {
    pub gated_out: u64,
    pub forecasts: u64,
    pub audited: u64,
}

/// A gated-out candidate that was truly evaluated as well.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRecord {
    pub key: CacheKey,
    /// Per-scenario costs.
    pub forecast: f64,
    pub true_cost: f64,
}

#[derive(Debug, Clone)]
pub struct SurrogateState {
    pub encoding: FeatureEncoding,
    pub gate: GateConfig,
    pub features: Vec<Vec<f64>>,
    /// Per-scenario true costs.
    pub costs: Vec<f64>,
    pub labels: Vec<Label>,
    ingested: HashSet<CacheKey>,
    pub classifier: Option<GbdtModel>,
    pub regressor: Option<GbdtModel>,
    pub active: bool,
    pub last_report: Option<RetrainReport>,
    pub stats: GateStats,
    pub audits: Vec<AuditRecord>,
}

impl SurrogateState {
    pub fn new(encoding: FeatureEncoding, gate: GateConfig) -> Self {
        SurrogateState {
            encoding,
            gate,
            features: Vec::new(),
            costs: Vec::new(),
            labels: Vec::new(),
            ingested: HashSet::new(),
            classifier: None,
            regressor: None,
            active: false,
            last_report: None,
            stats: GateStats::default(),
            audits: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.costs.len()
    }

    /// Adds a row for a true per-scenario cost, once per key.
    pub fn add_row(&mut self, key: &str, ch: &Chromosome, cost: f64) -> Result<bool> {
        if self.ingested.contains(key) {
            return Ok(false);
        }
        self.features.push(self.encoding.featurize(ch)?);
        self.costs.push(cost);
        self.labels.push(label(cost, &self.gate));
        self.ingested.insert(key.to_string());
        Ok(true)
    }

    /// Adds every truly evaluated individual not seen before; forecasts are
    /// never used as training rows. Returns the number of rows added.
    pub fn ingest(&mut self, pop: &[Individual], scenario_count: usize) -> Result<usize> {
        let mut added = 0;
        for ind in pop.iter().filter(|i| i.evaluated == Evaluation::TrueEval) {
            let agg = ind.aggregate_cost.expect("evaluated individual has a cost");
            if self.add_row(&cache_key(&ind.chromosome), &ind.chromosome, agg / scenario_count as f64)? {
                added += 1;
            }
        }
        Ok(added)
    }

    /// Refits both models on an 80/20 split once enough rows exist.
    pub fn retrain(&mut self, cfg: &SurrogateConfig, seed: u64) -> Result<Option<RetrainReport>> {
        let n = self.rows();
        if n < self.gate.min_train_rows.max(2) {
            return Ok(None);
        }
        let (tr, ho) = split_rows(n, cfg.holdout_fraction, seed);
        let pick = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|i| self.features[*i].clone()).collect() };
        let bad = |i: &usize| f64::from(self.labels[*i] == Label::Bad);
        let x_tr = pick(&tr);
        let x_ho = pick(&ho);
        let cls_data = Dataset::new(x_tr.clone(), tr.iter().map(bad).collect())?;
        let reg_data = Dataset::new(x_tr, tr.iter().map(|i| self.costs[*i]).collect())?;

        let mut cls_params = cfg.classifier;
        let mut reg_params = cfg.regressor;
        let both = cls_data.targets().iter().any(|t| *t == 1.0) && cls_data.targets().iter().any(|t| *t == 0.0);
        if let Some(grid) = &cfg.tuning_grid {
            if both {
                cls_params = grid_search(&cls_data, &cls_params, grid, Objective::Logistic, cfg.cv_folds, seed)?.best;
            }
            reg_params = grid_search(&reg_data, &reg_params, grid, Objective::Squared, cfg.cv_folds, seed)?.best;
        }
        let trainable = |p: &GbdtParams| tr.len() >= p.min_data_in_leaf;

        self.classifier = if both && trainable(&cls_params) {
            Some(train(&cls_data, &cls_params, Objective::Logistic)?)
        } else {
            None
        };
        self.regressor = if trainable(&reg_params) { Some(train(&reg_data, &reg_params, Objective::Squared)?) } else { None };

        let mut classification = None;
        let mut regression = None;
        if !ho.is_empty() {
            if let Some(c) = &self.classifier {
                let predicted: Vec<bool> = x_ho.iter().map(|x| c.predict(x).map(|p| p > 0.5)).collect::<Result<_>>()?;
                let actual: Vec<bool> = ho.iter().map(|i| self.labels[*i] == Label::Bad).collect();
                classification = Some(ClassificationMetrics::from_labels(&predicted, &actual)?);
            }
            if let Some(r) = &self.regressor {
                let pred: Vec<f64> = x_ho.iter().map(|x| r.predict(x)).collect::<Result<_>>()?;
                let truth: Vec<f64> = ho.iter().map(|i| self.costs[*i]).collect();
                regression = Some(regression_metrics(&pred, &truth)?);
            }
        }
        let holdout_accuracy = classification.and_then(|m| m.accuracy);
        self.active =
            self.regressor.is_some() && holdout_accuracy.is_some_and(|a| a >= self.gate.accuracy_gate);
        let report = RetrainReport {
            rows: n,
            train_rows: tr.len(),
            holdout_rows: ho.len(),
            holdout_accuracy,
            classification,
            regression,
            active: self.active,
        };
        self.last_report = Some(report.clone());
        Ok(Some(report))
    }

    /// Classifier call for one chromosome: `true` when predicted bad.
    pub fn predicts_bad(&self, ch: &Chromosome) -> Result<bool> {
        let c = self.classifier.as_ref().ok_or_else(|| Error::Config("active gate without classifier".into()))?;
        Ok(c.predict(&self.encoding.featurize(ch)?)? > 0.5)
    }

    /// Regressor forecast of the per-scenario cost, clamped to `[0, cap]`.
    pub fn forecast(&self, ch: &Chromosome, cap: f64) -> Result<f64> {
        let r = self.regressor.as_ref().ok_or_else(|| Error::Config("active gate without regressor".into()))?;
        Ok(r.predict(&self.encoding.featurize(ch)?)?.clamp(0.0, cap))
    }

    /// CSV with `feature_1..feature_L,cost,label` (label 1 = bad).
    pub fn export_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.encoding.max_len).map(|i| format!("feature_{i}")).collect();
        header.push("cost".into());
        header.push("label".into());
        out.write_record(&header)?;
        for ((x, c), l) in self.features.iter().zip(&self.costs).zip(&self.labels) {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(c.to_string());
            rec.push(u8::from(*l == Label::Bad).to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FnRecoveryReport {
    pub audited: usize,
    /// Audited candidates that were in fact good.
    pub fn_count: usize,
    /// Of those, forecasts within `band` of the true cost.
    pub recovered_count: usize,
    pub band: f64,
}

/// Recovery accounting over audited gated-out candidates; `None` when
/// nothing was audited.
pub fn fn_recovery_report(audits: &[AuditRecord], gate: &GateConfig, band: f64) -> Option<FnRecoveryReport> {
    if audits.is_empty() {
        return None;
    }
    let fns: Vec<&AuditRecord> = audits.iter().filter(|a| label(a.true_cost, gate) == Label::Good).collect();
    let recovered = fns.iter().filter(|a| (a.forecast - a.true_cost).abs() < band).count();
    Some(FnRecoveryReport { audited: audits.len(), fn_count: fns.len(), recovered_count: recovered, band })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivityRow {
    pub generation: usize,
    pub rows: usize,
    pub holdout_accuracy: Option<f64>,
    pub active: bool,
    pub gated_out: u64,
    pub forecasts: u64,
}

impl ActivityRow {
    pub const CSV_HEADER: &'static str = "gen,rows,holdout_accuracy,active,gated_out,forecasts";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.generation,
            self.rows,
            self.holdout_accuracy.map_or_else(String::new, |a| a.to_string()),
            self.active,
            self.gated_out,
            self.forecasts
        )
    }
}

/// The evaluation engine wrapped by the surrogate gate.
pub struct GatedEvaluator {
    pub engine: EvalEngine,
    pub state: SurrogateState,
    pub config: SurrogateConfig,
    pub activity: Vec<ActivityRow>,
    rng: ChaCha8Rng,
    seed: u64,
    gen_stats: GateStats,
}

impl GatedEvaluator {
    pub fn new(engine: EvalEngine, problem: &Problem, config: SurrogateConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let base_cost = problem.normalized(problem.route_aggregate(&problem.s_w0));
        let encoding = FeatureEncoding {
            court_width: problem.court.width,
            court_height: problem.court.height,
            max_len: problem.params.max_len,
        };
        Ok(GatedEvaluator {
            engine,
            state: SurrogateState::new(encoding, GateConfig::new(&config, base_cost)),
            config,
            activity: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            gen_stats: GateStats::default(),
        })
    }

    /// Index of the first generation after which the gate was active.
    pub fn activation_generation(&self) -> Option<usize> {
        self.activity.iter().find(|r| r.active).map(|r| r.generation)
    }

    pub fn fn_recovery(&self) -> Option<FnRecoveryReport> {
        fn_recovery_report(&self.state.audits, &self.state.gate, self.config.error_band)
    }
}

impl Evaluator for GatedEvaluator {
    fn evaluate(&mut self, pop: &mut [Individual], problem: &Problem) -> Result<()> {
        let t0 = Instant::now();
        let (pending, waiting) = resolve_from_cache(&mut self.engine.cache, &mut self.engine.stats, pop);
        let n_s = problem.scenarios.len() as f64;
        let mut forecast: Vec<Option<CacheEntry>> = vec![None; pending.len()];
        let mut truly = Vec::new();
        let mut audit_forecasts = Vec::new();
        for (i, (key, ch)) in pending.iter().enumerate() {
            if !self.state.active || !self.state.predicts_bad(ch)? {
                truly.push((key.clone(), ch.clone()));
                continue;
            }
            self.state.stats.gated_out += 1;
            self.gen_stats.gated_out += 1;
            let per_scenario = self.state.forecast(ch, problem.infeasible_penalty)?;
            if self.rng.random_bool(self.config.audit_fraction) {
                self.state.stats.audited += 1;
                self.gen_stats.audited += 1;
                audit_forecasts.push((key.clone(), per_scenario));
                truly.push((key.clone(), ch.clone()));
            } else {
                let aggregate = per_scenario * n_s;
                forecast[i] = Some(CacheEntry { fitness: problem.fitness_of(aggregate)?, aggregate_cost: aggregate });
            }
        }
        let t_gate = t0.elapsed().as_secs_f64();
        self.engine.true_evaluate(&truly, problem)?;
        for (key, f) in audit_forecasts {
            let e = self.engine.cache.peek(&key).expect("audited key evaluated");
            self.state.audits.push(AuditRecord { key, forecast: f, true_cost: e.aggregate_cost / n_s });
        }
        let forecast_of: std::collections::HashMap<&str, CacheEntry> = pending
            .iter()
            .zip(&forecast)
            .filter_map(|((k, _), f)| f.map(|e| (k.as_str(), e)))
            .collect();
        for w in waiting {
            if let Some(e) = forecast_of.get(w.key.as_str()) {
                pop[w.index].assign(e.fitness, e.aggregate_cost, Evaluation::Forecast);
                self.engine.stats.forecasts += 1;
                self.state.stats.forecasts += 1;
                self.gen_stats.forecasts += 1;
            } else {
                if w.duplicate {
                    self.engine.cache.record_batch_hit();
                    self.engine.stats.cache_hits += 1;
                }
                let e = self.engine.cache.peek(&w.key).expect("truly evaluated");
                pop[w.index].assign(e.fitness, e.aggregate_cost, Evaluation::TrueEval);
            }
        }
        self.engine.add_time(t_gate);
        Ok(())
    }

    fn end_generation(&mut self, generation: usize, pop: &[Individual], problem: &Problem) -> Result<()> {
        let t0 = Instant::now();
        self.state.ingest(pop, problem.scenarios.len())?;
        let seed = crate::seed::splitmix64(self.seed ^ generation as u64);
        let report = self.state.retrain(&self.config, seed)?;
        self.activity.push(ActivityRow {
            generation,
            rows: self.state.rows(),
            holdout_accuracy: report.and_then(|r| r.holdout_accuracy),
            active: self.state.active,
            gated_out: self.gen_stats.gated_out,
            forecasts: self.gen_stats.forecasts,
        });
        self.gen_stats = GateStats::default();
        self.engine.add_time(t0.elapsed().as_secs_f64());
        self.engine.close_generation();
        Ok(())
    }

    fn counters(&self) -> Counters {
        self.engine.counters()
    }
}

/// Result of fitting both models on a dumped set of evaluations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfflineReport {
    pub rows: usize,
    pub holdout_rows: usize,
    pub threshold: f64,
    pub bad_share: f64,
    pub classifier_params: GbdtParams,
    pub regressor_params: GbdtParams,
    pub classification: ClassificationMetrics,
    pub regression: RegressionMetrics,
    pub mean_cost: f64,
    /// Share of holdout forecasts within 1% of the true cost.
    pub within_one_percent: f64,
}

/// Offline study over `(key, aggregate cost)` rows: 80/20 split, classifier
/// and regressor with the offline parameters (grid-searched on the training
/// split when a grid is given), holdout metrics.
pub fn offline_study(
    rows: &[(CacheKey, f64)],
    encoding: FeatureEncoding,
    scenario_count: usize,
    gate: GateConfig,
    cfg: &SurrogateConfig,
    seed: u64,
) -> Result<OfflineReport> {
    let mut state = SurrogateState::new(encoding, GateConfig { min_train_rows: 2, ..gate });
    for (key, agg) in rows {
        state.add_row(key, &parse_key(key)?, agg / scenario_count as f64)?;
    }
    let n = state.rows();
    let (tr, ho) = split_rows(n, cfg.holdout_fraction, seed);
    if ho.is_empty() {
        return Err(Error::Dataset("too few rows for a holdout split".into()));
    }
    let x = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|i| state.features[*i].clone()).collect() };
    let bad = |i: &usize| f64::from(state.labels[*i] == Label::Bad);
    let cls_data = Dataset::new(x(&tr), tr.iter().map(bad).collect())?;
    let reg_data = Dataset::new(x(&tr), tr.iter().map(|i| state.costs[*i]).collect())?;
    let models = cfg.offline.clone().unwrap_or_else(|| OfflineModels {
        classifier: cfg.classifier,
        regressor: cfg.regressor,
        grid: None,
    });
    let (mut cls_params, mut reg_params) = (models.classifier, models.regressor);
    if let Some(grid) = &models.grid {
        cls_params = grid_search(&cls_data, &cls_params, grid, Objective::Logistic, cfg.cv_folds, seed)?.best;
        reg_params = grid_search(&reg_data, &reg_params, grid, Objective::Squared, cfg.cv_folds, seed)?.best;
    }
    let cls = train(&cls_data, &cls_params, Objective::Logistic)?;
    let reg = train(&reg_data, &reg_params, Objective::Squared)?;
    let xh = x(&ho);
    let predicted: Vec<bool> = xh.iter().map(|r| cls.predict(r).map(|p| p > 0.5)).collect::<Result<_>>()?;
    let actual: Vec<bool> = ho.iter().map(|i| state.labels[*i] == Label::Bad).collect();
    let forecasts: Vec<f64> = xh.iter().map(|r| reg.predict(r)).collect::<Result<_>>()?;
    let truth: Vec<f64> = ho.iter().map(|i| state.costs[*i]).collect();
    let within = forecasts.iter().zip(&truth).filter(|(f, t)| (*f - *t).abs() <= 0.01 * t.abs()).count();
    Ok(OfflineReport {
        rows: n,
        holdout_rows: ho.len(),
        threshold: gate.threshold(),
        bad_share: state.labels.iter().filter(|l| **l == Label::Bad).count() as f64 / n as f64,
        classifier_params: cls_params,
        regressor_params: reg_params,
        classification: ClassificationMetrics::from_labels(&predicted, &actual)?,
        regression: regression_metrics(&forecasts, &truth)?,
        mean_cost: truth.iter().sum::<f64>() / truth.len() as f64,
        within_one_percent: within as f64 / truth.len() as f64,
    })
}
