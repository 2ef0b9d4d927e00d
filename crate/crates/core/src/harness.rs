//! Experiment configuration, artifact files and the command workflows.
//!
//! Every command takes an [`Experiment`] (a parsed config plus the loaded
//! court and polar) and an output directory. The in-memory runners
//! ([`Experiment::evolve`], [`holdout_report`], [`Experiment::bench`]) are
//! what the file-writing commands wrap.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::court::{load_court, CourtSpec, PolarTable, DEFAULT_NO_GO_DEG};
use crate::error::{Error, Result};
use crate::eval::{parse_key, read_cache_dump, CacheKey, EvalEngine, EvalStats, FitnessCache};
use crate::evo::{run_evolution, Chromosome, EvoParams, GenerationRecord, Individual, Problem};
use crate::graph::{route_cost, EdgeCostModel, Route};
use crate::seed::{derive, Stream};
use crate::surrogate::{
    offline_study, ActivityRow, FeatureEncoding, FnRecoveryReport, GateConfig, GatedEvaluator, OfflineReport,
    SurrogateConfig,
};
use crate::windsim::{
    gen_initial_state, read_scenario, simulate_scenario, write_scenario, GustParams, InitialStateParams, PerturbParams,
    Scenario, WindField,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub training: usize,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    pub steps: usize,
    pub initial: InitialStateParams,
    pub perturb: PerturbParams,
    pub gusts: GustParams,
}

fn default_holdout() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Court document, relative to the config file.
    pub court: PathBuf,
    /// Polar CSV; the built-in table when absent.
    #[serde(default)]
    pub polar: Option<PathBuf>,
    #[serde(default = "default_no_go")]
    pub no_go_angle_deg: f64,
    pub scenarios: ScenarioConfig,
    #[serde(default)]
    pub edge_costs: EdgeCostModel,
    #[serde(default)]
    pub evolution: EvoParams,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(default = "default_shards")]
    pub shards: usize,
    /// Runs per mode in `bench`; the median wall time is reported.
    #[serde(default = "default_bench_repeats")]
    pub bench_repeats: usize,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_no_go() -> f64 {
    DEFAULT_NO_GO_DEG
}

fn default_shards() -> usize {
    1
}

fn default_bench_repeats() -> usize {
    3
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.scenarios.training < 1 {
            return Err(Error::Config("need at least one training scenario".into()));
        }
        if self.scenarios.steps < 1 {
            return Err(Error::Config("scenarios need at least one step".into()));
        }
        if self.shards < 1 {
            return Err(Error::Config("shards must be >= 1".into()));
        }
        if self.bench_repeats < 1 {
            return Err(Error::Config("bench_repeats must be >= 1".into()));
        }
        self.scenarios.perturb.validate()?;
        self.scenarios.gusts.validate()?;
        self.edge_costs.validate()?;
        self.evolution.validate()?;
        self.surrogate.validate()
    }
}

/// A validated config with its court and polar loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub court: CourtSpec,
    pub polar: PolarTable,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(&read(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_config(config, base)
    }

    /// Relative paths in `config` resolve against `base`.
    pub fn from_config(mut config: ExperimentConfig, base: &Path) -> Result<Self> {
        config.validate()?;
        config.court = base.join(&config.court);
        config.polar = config.polar.map(|p| base.join(p));
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        let court = load_court(&read(&config.court)?, config.scenarios.gusts.enabled)?;
        let polar = match &config.polar {
            Some(p) => PolarTable::from_csv(&read(p)?, config.no_go_angle_deg)?,
            None => PolarTable::default_table(),
        };
        Ok(Experiment { config, court, polar })
    }

    pub fn initial_field(&self) -> WindField {
        gen_initial_state(&self.court, &self.config.scenarios.initial, derive(self.config.seed, Stream::InitialField, 0))
    }

    /// Scenarios pass through the on-disk codec so in-memory runs see the
    /// same single-precision values as runs that read the files back.
    fn scenario(&self, w0: &WindField, stream: Stream, i: usize) -> Result<Scenario> {
        let s = &self.config.scenarios;
        let sim = simulate_scenario(&self.court, w0, s.steps, &s.perturb, &s.gusts, derive(self.config.seed, stream, i as u64))?;
        read_scenario(scenario_bytes(&sim)?.as_slice())
    }

    pub fn training_scenarios(&self) -> Result<Vec<Scenario>> {
        let w0 = self.initial_field();
        (0..self.config.scenarios.training).map(|i| self.scenario(&w0, Stream::TrainingScenario, i)).collect()
    }

    pub fn holdout_scenarios(&self) -> Result<Vec<Scenario>> {
        let w0 = self.initial_field();
        (0..self.config.scenarios.holdout).map(|i| self.scenario(&w0, Stream::HoldoutScenario, i)).collect()
    }

    /// The search problem over the training scenarios. `W_0` is the first
    /// field of training scenario 0.
    pub fn problem(&self, scenarios: Vec<Scenario>, s_w0: Option<Route>) -> Result<Problem> {
        let w0 = scenarios.first().ok_or_else(|| Error::Config("no training scenarios".into()))?.fields[0].clone();
        Problem::new(
            self.court.clone(),
            self.polar.clone(),
            self.config.edge_costs,
            w0,
            scenarios,
            self.config.evolution,
            s_w0,
        )
    }

    /// One full evolutionary run.
    pub fn evolve(&self, problem: &Problem, shards: usize, surrogate: bool) -> Result<EvolveOutcome> {
        let engine = EvalEngine::new(problem.scenarios.len(), shards)?;
        let seed = derive(self.config.seed, Stream::Evolution, 0);
        let t0 = Instant::now();
        if surrogate {
            let mut gated = GatedEvaluator::new(
                engine,
                problem,
                self.config.surrogate.clone(),
                derive(self.config.seed, Stream::Surrogate, 0),
            )?;
            let out = run_evolution(problem, &mut gated, seed, |_, _| {})?;
            let wall = t0.elapsed().as_secs_f64();
            let fn_recovery = gated.fn_recovery();
            let mut training_rows = Vec::new();
            gated.state.export_csv(&mut training_rows)?;
            let GatedEvaluator { engine, activity, state, .. } = gated;
            Ok(EvolveOutcome::new(
                out.log,
                out.population,
                engine,
                wall,
                Some(SurrogateOutcome { activity, fn_recovery, training_rows_csv: training_rows, gate: state.gate }),
            ))
        } else {
            let mut engine = engine;
            let out = run_evolution(problem, &mut engine, seed, |_, _| {})?;
            let wall = t0.elapsed().as_secs_f64();
            Ok(EvolveOutcome::new(out.log, out.population, engine, wall, None))
        }
    }

    /// Alternates ungated and gated runs `bench_repeats` times each. Results
    /// are identical across repeats; wall times are medians.
    pub fn bench(&self, problem: &Problem, shards: usize) -> Result<BenchReport> {
        let mut plain_times = Vec::new();
        let mut gated_times = Vec::new();
        let mut runs = None;
        for _ in 0..self.config.bench_repeats {
            let plain = self.evolve(problem, shards, false)?;
            let gated = self.evolve(problem, shards, true)?;
            plain_times.push(plain.wall_time_s);
            gated_times.push(gated.wall_time_s);
            runs.get_or_insert((plain, gated));
        }
        let (plain, gated) = runs.expect("at least one repeat");
        let (ub, gb) = (plain.best_true_cost(), gated.best_true_cost());
        let sur = gated.surrogate.as_ref().expect("gated run");
        let (ut, gt) = (median(&mut plain_times), median(&mut gated_times));
        Ok(BenchReport {
            ungated_wall_s: ut,
            gated_wall_s: gt,
            speedup: ut / gt,
            ungated_runs_s: plain_times,
            gated_runs_s: gated_times,
            ungated_best_cost: ub,
            gated_best_cost: gb,
            cost_delta_pct: 100.0 * (gb - ub) / ub,
            ungated_true_evaluations: plain.stats.true_evaluations,
            ungated_cache_hits: plain.stats.cache_hits,
            gated_true_evaluations: gated.stats.true_evaluations,
            gated_cache_hits: gated.stats.cache_hits,
            gated_forecasts: gated.stats.forecasts,
            activation_generation: sur.activity.iter().find(|r| r.active).map(|r| r.generation),
        })
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 }
}

#[derive(Debug, Clone)]
pub struct SurrogateOutcome {
    pub activity: Vec<ActivityRow>,
    pub fn_recovery: Option<FnRecoveryReport>,
    pub training_rows_csv: Vec<u8>,
    pub gate: GateConfig,
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub log: Vec<GenerationRecord>,
    pub population: Vec<Individual>,
    pub stats: EvalStats,
    pub cache: FitnessCache,
    pub evaluated_keys: Vec<CacheKey>,
    pub wall_time_s: f64,
    pub surrogate: Option<SurrogateOutcome>,
}

impl EvolveOutcome {
    fn new(
        log: Vec<GenerationRecord>,
        population: Vec<Individual>,
        engine: EvalEngine,
        wall_time_s: f64,
        surrogate: Option<SurrogateOutcome>,
    ) -> Self {
        EvolveOutcome {
            log,
            population,
            stats: engine.stats.clone(),
            cache: engine.cache.clone(),
            evaluated_keys: engine.evaluated_keys.clone(),
            wall_time_s,
            surrogate,
        }
    }

    /// Best aggregate cost among true evaluations.
    pub fn best_true_cost(&self) -> f64 {
        self.cache.entries().map(|(_, e)| e.aggregate_cost).fold(f64::INFINITY, f64::min)
    }

    /// The `n` cheapest distinct truly evaluated chromosomes.
    pub fn top(&self, n: usize) -> Vec<(CacheKey, f64)> {
        let mut all: Vec<(CacheKey, f64)> = self.cache.entries().map(|(k, e)| (k.to_string(), e.aggregate_cost)).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(n);
        all
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from(GenerationRecord::CSV_HEADER);
        s.push('\n');
        for r in &self.log {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub ungated_wall_s: f64,
    pub gated_wall_s: f64,
    pub speedup: f64,
    pub ungated_runs_s: Vec<f64>,
    pub gated_runs_s: Vec<f64>,
    pub ungated_best_cost: f64,
    pub gated_best_cost: f64,
    pub cost_delta_pct: f64,
    pub ungated_true_evaluations: u64,
    pub ungated_cache_hits: u64,
    pub gated_true_evaluations: u64,
    pub gated_cache_hits: u64,
    pub gated_forecasts: u64,
    pub activation_generation: Option<usize>,
}

/// A solution compared on the holdout scenarios.
#[derive(Debug, Clone)]
pub enum Solution {
    Waypoints(Chromosome),
    Route(Route),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldoutSummary {
    pub solution: String,
    pub mean_cost: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutReport {
    /// `(solution name, scenario index, cost)`; `s_w0` rows come first.
    pub rows: Vec<(String, usize, f64)>,
    /// One line per compared solution, against `s_w0`.
    pub summary: Vec<HoldoutSummary>,
}

impl HoldoutReport {
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("solution,scenario,cost\n");
        for (n, i, c) in &self.rows {
            s.push_str(&format!("{n},{i},{c}\n"));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("solution,mean_cost,wins,ties,losses\n");
        for r in &self.summary {
            s.push_str(&format!("{},{},{},{},{}\n", r.solution, r.mean_cost, r.wins, r.ties, r.losses));
        }
        s
    }
}

/// Costs `s_w0` and each solution on each holdout scenario. Chromosomes are
/// developed on the static field and take their cheapest family route.
pub fn holdout_report(problem: &Problem, holdout: &[Scenario], solutions: &[(String, Solution)]) -> Result<HoldoutReport> {
    if holdout.is_empty() {
        return Err(Error::Config("no holdout scenarios".into()));
    }
    let route_costs = |r: &Route| -> Vec<f64> {
        holdout
            .iter()
            .map(|s| route_cost(r, s, &problem.polar, &problem.model).unwrap_or(problem.infeasible_penalty))
            .collect()
    };
    let base = route_costs(&problem.s_w0);
    let mut rows: Vec<(String, usize, f64)> = base.iter().enumerate().map(|(i, c)| ("s_w0".to_string(), i, *c)).collect();
    let mut summary = Vec::new();
    for (name, sol) in solutions {
        let costs = match sol {
            Solution::Route(r) => route_costs(r),
            Solution::Waypoints(ch) => {
                let fam = problem.develop(ch);
                holdout.iter().map(|s| problem.scenario_cost(&fam, s)).collect()
            }
        };
        let (mut wins, mut ties, mut losses) = (0, 0, 0);
        for (c, b) in costs.iter().zip(&base) {
            match c.total_cmp(b) {
                std::cmp::Ordering::Less => wins += 1,
                std::cmp::Ordering::Equal => ties += 1,
                std::cmp::Ordering::Greater => losses += 1,
            }
        }
        rows.extend(costs.iter().enumerate().map(|(i, c)| (name.clone(), i, *c)));
        summary.push(HoldoutSummary {
            solution: name.clone(),
            mean_cost: costs.iter().sum::<f64>() / costs.len() as f64,
            wins,
            ties,
            losses,
        });
    }
    Ok(HoldoutReport { rows, summary })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn scenario_bytes(s: &Scenario) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_scenario(s, &mut buf)?;
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub split: String,
    pub seed: u64,
    pub sha256: String,
}

const MANIFEST: &str = "scenarios/manifest.csv";

/// Writes every training and holdout scenario plus a manifest.
pub fn cmd_gen_scenarios(exp: &Experiment, out: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut train_sums = std::collections::HashSet::new();
    for (split, stream, scenarios) in [
        ("training", Stream::TrainingScenario, exp.training_scenarios()?),
        ("holdout", Stream::HoldoutScenario, exp.holdout_scenarios()?),
    ] {
        for (i, s) in scenarios.iter().enumerate() {
            let bytes = scenario_bytes(s)?;
            let sum = sha256_hex(&bytes);
            if split == "training" {
                train_sums.insert(sum.clone());
            } else if train_sums.contains(&sum) {
                return Err(Error::Config(format!("holdout scenario {i} duplicates a training scenario")));
            }
            let file = format!("{split}_{i:04}.wsc");
            write(&out.join("scenarios").join(&file), &bytes)?;
            entries.push(ManifestEntry { file, split: split.into(), seed: derive(exp.config.seed, stream, i as u64), sha256: sum });
        }
    }
    let mut m = String::from("file,split,seed,sha256\n");
    for e in &entries {
        m.push_str(&format!("{},{},{},{}\n", e.file, e.split, e.seed, e.sha256));
    }
    write(&out.join(MANIFEST), m)?;
    Ok(entries)
}

/// Reads the scenarios of one split back, checking their checksums.
pub fn load_scenarios(out: &Path, split: &str) -> Result<Vec<Scenario>> {
    let manifest = fs::read_to_string(out.join(MANIFEST))
        .map_err(|_| Error::Config(format!("no scenario manifest in {}; run gen-scenarios first", out.display())))?;
    let mut scenarios = Vec::new();
    for line in manifest.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::MalformedScenario(format!("bad manifest line {line:?}")));
        }
        if cols[1] != split {
            continue;
        }
        let bytes = fs::read(out.join("scenarios").join(cols[0]))?;
        if sha256_hex(&bytes) != cols[3] {
            return Err(Error::MalformedScenario(format!("checksum mismatch for {}", cols[0])));
        }
        scenarios.push(read_scenario(bytes.as_slice())?);
    }
    Ok(scenarios)
}

const S_W0_ROUTE: &str = "s_w0.route";
const S_W0_COST: &str = "s_w0_cost.txt";

/// Solves the static problem on `W_0` and writes the route and its cost.
pub fn cmd_solve_exact(exp: &Experiment, out: &Path) -> Result<(Route, f64)> {
    let problem = exp.problem(load_scenarios(out, "training")?, None)?;
    write(&out.join(S_W0_ROUTE), problem.s_w0.to_text())?;
    write(&out.join(S_W0_COST), format!("{}\n", problem.s_w0_cost))?;
    Ok((problem.s_w0, problem.s_w0_cost))
}

/// The training problem with the stored `s_w0`.
pub fn load_problem(exp: &Experiment, out: &Path) -> Result<Problem> {
    let scenarios = load_scenarios(out, "training")?;
    let text = fs::read_to_string(out.join(S_W0_ROUTE))
        .map_err(|_| Error::Config(format!("no {S_W0_ROUTE} in {}; run solve-exact first", out.display())))?;
    let graph = crate::graph::build_graph(&exp.court)?;
    let route = Route::parse(&graph, &text)?;
    exp.problem(scenarios, Some(route))
}

pub fn write_checkpoint(path: &Path, pop: &[Individual]) -> Result<()> {
    let mut s = String::from("waypoints\tfitness\taggregate_cost\tevaluated\n");
    for ind in pop {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            crate::eval::cache_key(&ind.chromosome),
            ind.fitness.map_or_else(String::new, |f| f.to_string()),
            ind.aggregate_cost.map_or_else(String::new, |f| f.to_string()),
            ind.evaluated.as_str()
        ));
    }
    write(path, s)
}

/// Runs the EA and writes its log, timings, final population, top-10
/// solutions and cache dump (plus surrogate artifacts when gated).
pub fn cmd_evolve(exp: &Experiment, out: &Path, shards: usize, surrogate: bool) -> Result<EvolveOutcome> {
    let problem = load_problem(exp, out)?;
    let outcome = exp.evolve(&problem, shards, surrogate)?;
    let dir = out.join(if surrogate { "evolve_gated" } else { "evolve" });
    write(&dir.join("evolution_log.csv"), outcome.log_csv())?;
    let mut timing = String::from("gen,wall_time_s\n");
    for (g, t) in outcome.stats.wall_time_s.iter().enumerate() {
        timing.push_str(&format!("{g},{t}\n"));
    }
    write(&dir.join("timing.csv"), timing)?;
    write_checkpoint(&dir.join("population.tsv"), &outcome.population)?;
    let mut top = String::from("rank,key,aggregate_cost\n");
    for (i, (k, c)) in outcome.top(10).iter().enumerate() {
        top.push_str(&format!("{},{k},{c}\n", i + 1));
    }
    write(&dir.join("top10.csv"), top)?;
    let mut dump = Vec::new();
    outcome.cache.dump_csv(&mut dump)?;
    write(&dir.join("cache.csv"), dump)?;
    if let Some(s) = &outcome.surrogate {
        let mut act = String::from(ActivityRow::CSV_HEADER);
        act.push('\n');
        for r in &s.activity {
            act.push_str(&r.csv_line());
            act.push('\n');
        }
        write(&dir.join("surrogate_activity.csv"), act)?;
        write(&dir.join("training_rows.csv"), &s.training_rows_csv)?;
        write(&dir.join("fn_recovery.json"), serde_json::to_string_pretty(&s.fn_recovery)?)?;
    }
    Ok(outcome)
}

/// Compares `s_w0` with the stored top-10 solutions on the holdout split.
pub fn cmd_holdout_eval(exp: &Experiment, out: &Path, surrogate: bool) -> Result<HoldoutReport> {
    let problem = load_problem(exp, out)?;
    let holdout = load_scenarios(out, "holdout")?;
    let dir = out.join(if surrogate { "evolve_gated" } else { "evolve" });
    let top = fs::read_to_string(dir.join("top10.csv"))
        .map_err(|_| Error::Config(format!("no top10.csv in {}; run evolve first", dir.display())))?;
    let mut solutions = Vec::new();
    for line in top.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Config(format!("bad top10 line {line:?}")));
        }
        solutions.push((format!("top{}", cols[0]), Solution::Waypoints(parse_key(cols[1])?)));
    }
    let report = holdout_report(&problem, &holdout, &solutions)?;
    write(&dir.join("holdout_costs.csv"), report.rows_csv())?;
    write(&dir.join("holdout_summary.csv"), report.summary_csv())?;
    Ok(report)
}

pub fn cmd_bench(exp: &Experiment, out: &Path, shards: usize) -> Result<BenchReport> {
    let problem = load_problem(exp, out)?;
    let report = exp.bench(&problem, shards)?;
    write(&out.join("bench.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Fits both surrogate models on the ungated run's cache dump.
pub fn cmd_train_offline(exp: &Experiment, out: &Path) -> Result<OfflineReport> {
    let problem = load_problem(exp, out)?;
    let path = out.join("evolve").join("cache.csv");
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::Config(format!("no cache dump at {}; run evolve first", path.display())))?;
    let report = train_offline(exp, &problem, &read_cache_dump(&text)?)?;
    write(&out.join("offline_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn train_offline(exp: &Experiment, problem: &Problem, rows: &[(CacheKey, f64)]) -> Result<OfflineReport> {
    let base_cost = problem.normalized(problem.route_aggregate(&problem.s_w0));
    let encoding = FeatureEncoding { court_width: exp.court.width, court_height: exp.court.height, max_len: problem.params.max_len };
    offline_study(
        rows,
        encoding,
        problem.scenarios.len(),
        GateConfig::new(&exp.config.surrogate, base_cost),
        &exp.config.surrogate,
        derive(exp.config.seed, Stream::Surrogate, 1),
    )
}
