//! Scenario-sharded evaluation with a fitness cache.
//!
//! Each uncached individual is developed once; shards then price the family
//! against their slice of the scenarios. Per-scenario minima come back to a
//! single thread and are summed in scenario order, so the aggregate does not
//! depend on the shard count.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evo::{Chromosome, Counters, Evaluation, Evaluator, Individual, Problem};

/// Canonical text of a waypoint list: `x:y` pairs joined by `;`.
pub type CacheKey = String;

pub fn cache_key(ch: &Chromosome) -> CacheKey {
    let mut s = String::with_capacity(ch.len() * 6);
    for (i, c) in ch.waypoints.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        s.push_str(&format!("{}:{}", c.x, c.y));
    }
    s
}

pub fn parse_key(key: &str) -> Result<Chromosome> {
    if key.is_empty() {
        return Ok(Chromosome::new(Vec::new()));
    }
    key.split(';')
        .map(|pair| {
            let (x, y) = pair.split_once(':').ok_or_else(|| Error::MalformedRoute(format!("bad key item {pair:?}")))?;
            let parse = |v: &str| v.trim().parse::<i32>().map_err(|_| Error::MalformedRoute(format!("bad key item {pair:?}")));
            Ok(crate::court::Cell::new(parse(x)?, parse(y)?))
        })
        .collect::<Result<Vec<_>>>()
        .map(Chromosome::new)
}

/// Contiguous, near-equal split of the scenario indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPlan {
    shards: Vec<Range<usize>>,
}

impl EvalPlan {
    pub fn new(scenario_count: usize, shard_count: usize) -> Result<Self> {
        if shard_count < 1 {
            return Err(Error::Config("shard count must be >= 1".into()));
        }
        let base = scenario_count / shard_count;
        let extra = scenario_count % shard_count;
        let mut start = 0;
        let shards = (0..shard_count)
            .map(|i| {
                let len = base + usize::from(i < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Ok(EvalPlan { shards })
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Range<usize>] {
        &self.shards
    }

    pub fn scenario_count(&self) -> usize {
        self.shards.last().map_or(0, |r| r.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEntry {
    pub fitness: f64,
    pub aggregate_cost: f64,
}

/// Memo of true evaluations, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct FitnessCache {
    map: HashMap<CacheKey, CacheEntry>,
    order: Vec<CacheKey>,
    lookups: u64,
    hits: u64,
}

impl FitnessCache {
    pub fn lookup(&mut self, key: &str) -> Option<CacheEntry> {
        self.lookups += 1;
        let hit = self.map.get(key).copied();
        if hit.is_some() {
            self.hits += 1;
        }
        hit
    }

    /// Read without touching the counters.
    pub fn peek(&self, key: &str) -> Option<CacheEntry> {
        self.map.get(key).copied()
    }

    /// Stores a new entry; an existing entry is never overwritten.
    pub fn insert(&mut self, key: CacheKey, entry: CacheEntry) -> bool {
        if self.map.contains_key(&key) {
            return false;
        }
        self.order.push(key.clone());
        self.map.insert(key, entry);
        true
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn lookups(&self) -> u64 {
        self.lookups
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.lookups - self.hits
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, CacheEntry)> + '_ {
        self.order.iter().map(|k| (k.as_str(), self.map[k]))
    }

    /// CSV of `key,fitness,aggregate_cost`, one row per entry.
    pub fn dump_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["key", "fitness", "aggregate_cost"])?;
        for (k, e) in self.entries() {
            out.write_record([k.to_string(), e.fitness.to_string(), e.aggregate_cost.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a cache dump back as `(key, aggregate_cost)` rows.
pub fn read_cache_dump(text: &str) -> Result<Vec<(CacheKey, f64)>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let key = rec.get(0).ok_or_else(|| Error::Dataset("missing key column".into()))?.to_string();
        let cost = rec
            .get(2)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Dataset(format!("bad cost for key {key:?}")))?;
        rows.push((key, cost));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalStats {
    pub true_evaluations: u64,
    pub cache_hits: u64,
    pub forecasts: u64,
    /// Evaluation wall time of each finished generation.
    pub wall_time_s: Vec<f64>,
}

/// The cache plus a `W`-thread pool over scenario shards.
pub struct EvalEngine {
    plan: EvalPlan,
    pool: rayon::ThreadPool,
    pub cache: FitnessCache,
    pub stats: EvalStats,
    /// Every key truly evaluated, in order.
    pub evaluated_keys: Vec<CacheKey>,
    pending_time_s: f64,
}

impl EvalEngine {
    pub fn new(scenario_count: usize, shard_count: usize) -> Result<Self> {
        let plan = EvalPlan::new(scenario_count, shard_count)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(shard_count)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(EvalEngine {
            plan,
            pool,
            cache: FitnessCache::default(),
            stats: EvalStats::default(),
            evaluated_keys: Vec::new(),
            pending_time_s: 0.0,
        })
    }

    pub fn plan(&self) -> &EvalPlan {
        &self.plan
    }

    /// Full evaluation of distinct, uncached chromosomes. Results are cached.
    pub fn true_evaluate(&mut self, batch: &[(CacheKey, Chromosome)], problem: &Problem) -> Result<Vec<CacheEntry>> {
        if self.plan.scenario_count() != problem.scenarios.len() {
            return Err(Error::Config(format!(
                "plan covers {} scenarios, problem has {}",
                self.plan.scenario_count(),
                problem.scenarios.len()
            )));
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let t0 = Instant::now();
        let plan = &self.plan;
        let (families, shard_costs) = self.pool.install(|| {
            let families: Vec<_> = batch.par_iter().map(|(_, ch)| problem.develop(ch)).collect();
            let shard_costs: Vec<Vec<Vec<f64>>> = plan
                .shards()
                .par_iter()
                .map(|range| {
                    families
                        .iter()
                        .map(|fam| range.clone().map(|s| problem.scenario_cost(fam, &problem.scenarios[s])).collect())
                        .collect()
                })
                .collect();
            (families, shard_costs)
        });
        drop(families);
        let mut out = Vec::with_capacity(batch.len());
        for (i, (key, _)) in batch.iter().enumerate() {
            let aggregate: f64 = shard_costs.iter().flat_map(|shard| shard[i].iter()).sum();
            let entry = CacheEntry { fitness: problem.fitness_of(aggregate)?, aggregate_cost: aggregate };
            if !self.cache.insert(key.clone(), entry) {
                return Err(Error::Config(format!("chromosome {key} evaluated twice")));
            }
            self.evaluated_keys.push(key.clone());
            self.stats.true_evaluations += 1;
            out.push(entry);
        }
        self.pending_time_s += t0.elapsed().as_secs_f64();
        Ok(out)
    }

    pub fn add_time(&mut self, seconds: f64) {
        self.pending_time_s += seconds;
    }

    pub fn close_generation(&mut self) {
        self.stats.wall_time_s.push(self.pending_time_s);
        self.pending_time_s = 0.0;
    }
}

/// One unevaluated individual still waiting for its key to be computed.
#[derive(Debug, Clone)]
pub(crate) struct Waiting {
    pub index: usize,
    pub key: CacheKey,
    /// A later copy of a key already pending in this batch.
    pub duplicate: bool,
}

/// Splits the unevaluated individuals of `pop` into cache hits (assigned in
/// place) and the distinct keys still to compute.
pub(crate) fn resolve_from_cache(
    cache: &mut FitnessCache,
    stats: &mut EvalStats,
    pop: &mut [Individual],
) -> (Vec<(CacheKey, Chromosome)>, Vec<Waiting>) {
    let mut pending = Vec::new();
    let mut waiting = Vec::new();
    let mut seen = HashSet::new();
    for (index, ind) in pop.iter_mut().enumerate() {
        if ind.evaluated != Evaluation::Unevaluated {
            continue;
        }
        let key = cache_key(&ind.chromosome);
        if seen.contains(&key) {
            waiting.push(Waiting { index, key, duplicate: true });
        } else if let Some(e) = cache.lookup(&key) {
            ind.assign(e.fitness, e.aggregate_cost, Evaluation::TrueEval);
            stats.cache_hits += 1;
        } else {
            seen.insert(key.clone());
            pending.push((key.clone(), ind.chromosome.clone()));
            waiting.push(Waiting { index, key, duplicate: false });
        }
    }
    (pending, waiting)
}

impl FitnessCache {
    /// Counts a lookup answered by an evaluation from the same batch.
    pub(crate) fn record_batch_hit(&mut self) {
        self.lookups += 1;
        self.hits += 1;
    }
}

impl Evaluator for EvalEngine {
    fn evaluate(&mut self, pop: &mut [Individual], problem: &Problem) -> Result<()> {
        let t0 = Instant::now();
        let (pending, waiting) = resolve_from_cache(&mut self.cache, &mut self.stats, pop);
        let before = self.pending_time_s;
        self.true_evaluate(&pending, problem)?;
        for w in waiting {
            if w.duplicate {
                self.cache.record_batch_hit();
                self.stats.cache_hits += 1;
            }
            let e = self.cache.peek(&w.key).expect("just evaluated");
            pop[w.index].assign(e.fitness, e.aggregate_cost, Evaluation::TrueEval);
        }
        self.pending_time_s = before + t0.elapsed().as_secs_f64();
        Ok(())
    }

    fn end_generation(&mut self, _generation: usize, _pop: &[Individual], _problem: &Problem) -> Result<()> {
        self.close_generation();
        Ok(())
    }

    fn counters(&self) -> Counters {
        Counters {
            cache_hits: self.stats.cache_hits,
            true_evaluations: self.stats.true_evaluations,
            forecasts: self.stats.forecasts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::court::{Cell, CourtSpec, PolarTable};
    use crate::evo::{fitness, EvoParams};
    use crate::graph::EdgeCostModel;
    use crate::windsim::{simulate_scenario, GustParams, PerturbParams, WindCellState, WindField};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ch(v: &[(i32, i32)]) -> Chromosome {
        Chromosome::new(v.iter().map(|(x, y)| Cell::new(*x, *y)).collect())
    }

    fn problem(scenarios: usize) -> Problem {
        let court = CourtSpec::new(6, 6, 40.0, vec![true; 36], None, Cell::new(0, 0), Cell::new(5, 5), false).unwrap();
        let field = WindField::uniform(6, 6, WindCellState::new(6.0, 40.0));
        let perturb = PerturbParams { sigma_speed_mps: 0.8, sigma_angle_deg: 12.0, seed_cell_fraction: 0.2, decay: 0.5 };
        let scen = (0..scenarios)
            .map(|i| simulate_scenario(&court, &field, 30, &perturb, &GustParams::disabled(), 100 + i as u64).unwrap())
            .collect();
        let params = EvoParams { population_size: 10, min_len: 1, max_len: 4, ..EvoParams::default() };
        Problem::new(court, PolarTable::default_table(), EdgeCostModel::default(), field, scen, params, None).unwrap()
    }

    #[test]
    fn keys_are_canonical_and_ordered() {
        assert_eq!(cache_key(&ch(&[(1, 2), (3, 4)])), "1:2;3:4");
        assert_eq!(cache_key(&ch(&[(1, 2), (3, 4)])), cache_key(&ch(&[(1, 2), (3, 4)])));
        assert_ne!(cache_key(&ch(&[(1, 2), (3, 4)])), cache_key(&ch(&[(3, 4), (1, 2)])));
        assert_eq!(parse_key("1:2;3:4").unwrap(), ch(&[(1, 2), (3, 4)]));
        assert!(parse_key("1:2;x").is_err());
    }

    #[test]
    fn key_collision_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut by_key: HashMap<CacheKey, Chromosome> = HashMap::new();
        for _ in 0..100_000 {
            let len = rng.random_range(1..=8);
            let c = Chromosome::new((0..len).map(|_| Cell::new(rng.random_range(0..40), rng.random_range(0..40))).collect());
            let k = cache_key(&c);
            if let Some(prev) = by_key.get(&k) {
                assert_eq!(prev, &c, "collision on {k}");
            } else {
                by_key.insert(k, c);
            }
        }
    }

    #[test]
    fn plan_partitions() {
        let p = EvalPlan::new(10, 4).unwrap();
        let sizes: Vec<usize> = p.shards().iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        assert_eq!(p.scenario_count(), 10);
        let p = EvalPlan::new(2, 4).unwrap();
        assert_eq!(p.shards().iter().map(|r| r.len()).sum::<usize>(), 2);
        assert!(EvalPlan::new(5, 0).is_err());
    }

    #[test]
    fn shard_count_does_not_change_fitness() {
        let prob = problem(9);
        let pop: Vec<Individual> =
            [&[(1, 1), (3, 4)][..], &[(2, 1)], &[(1, 3), (4, 4)], &[(2, 2), (3, 3), (4, 4)]]
                .iter()
                .map(|v| Individual::new(ch(v)))
                .collect();
        let mut reference = pop.clone();
        crate::evo::PlainEvaluator::default().evaluate(&mut reference, &prob).unwrap();
        for w in [1, 2, 4, 8] {
            let mut eng = EvalEngine::new(9, w).unwrap();
            let mut p = pop.clone();
            eng.evaluate(&mut p, &prob).unwrap();
            for (a, b) in p.iter().zip(&reference) {
                assert_eq!(a.fitness.unwrap().to_bits(), b.fitness.unwrap().to_bits());
                assert_eq!(a.aggregate_cost.unwrap().to_bits(), b.aggregate_cost.unwrap().to_bits());
            }
        }
    }

    #[test]
    fn duplicate_in_population_is_evaluated_once() {
        let prob = problem(3);
        let mut eng = EvalEngine::new(3, 2).unwrap();
        let mut pop = vec![Individual::new(ch(&[(2, 2)])), Individual::new(ch(&[(2, 2)]))];
        eng.evaluate(&mut pop, &prob).unwrap();
        assert_eq!(eng.stats.true_evaluations, 1);
        assert_eq!(eng.stats.cache_hits, 1);
        assert_eq!(eng.cache.hits() + eng.cache.misses(), eng.cache.lookups());
        assert_eq!(pop[0], pop[1]);
        let (f, agg) = fitness(&ch(&[(2, 2)]), &prob).unwrap();
        assert_eq!((pop[0].fitness.unwrap(), pop[0].aggregate_cost.unwrap()), (f, agg));
    }

    #[test]
    fn cache_never_overwrites() {
        let mut c = FitnessCache::default();
        assert!(c.insert("1:1".into(), CacheEntry { fitness: 1.0, aggregate_cost: 2.0 }));
        assert!(!c.insert("1:1".into(), CacheEntry { fitness: 9.0, aggregate_cost: 9.0 }));
        assert_eq!(c.lookup("1:1").unwrap().fitness, 1.0);
        assert!(c.lookup("2:2").is_none());
        assert_eq!((c.lookups(), c.hits(), c.misses()), (2, 1, 1));
    }

    #[test]
    fn dump_round_trip() {
        let mut c = FitnessCache::default();
        c.insert("1:1;2:2".into(), CacheEntry { fitness: 10.0, aggregate_cost: 123.5 });
        c.insert("3:3".into(), CacheEntry { fitness: 11.0, aggregate_cost: 0.1 + 0.2 });
        let mut buf = Vec::new();
        c.dump_csv(&mut buf).unwrap();
        let rows = read_cache_dump(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(rows, vec![("1:1;2:2".to_string(), 123.5), ("3:3".to_string(), 0.1 + 0.2)]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn hits_reconcile_with_lookups(picks in proptest::collection::vec(0usize..6, 1..30), w in 1usize..5) {
            let prob = problem(2);
            let pool = [&[(1, 1)][..], &[(2, 2)], &[(1, 2), (3, 3)], &[(4, 4)], &[(2, 3)], &[(3, 1), (4, 2)]];
            let mut eng = EvalEngine::new(2, w).unwrap();
            for chunk in picks.chunks(7) {
                let mut pop: Vec<Individual> = chunk.iter().map(|i| Individual::new(ch(pool[*i]))).collect();
                eng.evaluate(&mut pop, &prob).unwrap();
            }
            let distinct: HashSet<&usize> = picks.iter().collect();
            prop_assert_eq!(eng.stats.true_evaluations as usize, distinct.len());
            prop_assert_eq!(eng.stats.true_evaluations + eng.stats.cache_hits, picks.len() as u64);
            prop_assert_eq!(eng.cache.hits() + eng.cache.misses(), eng.cache.lookups());
            let unique: HashSet<&CacheKey> = eng.evaluated_keys.iter().collect();
            prop_assert_eq!(unique.len(), eng.evaluated_keys.len());
        }
    }
}
