//! The evolutionary search over waypoint chromosomes.
//!
//! One individual is one variable-length list of waypoint cells (start and goal
//! excluded, tack left open). Development turns it into a small family of
//! concrete routes; its fitness is `M - sum over scenarios of the cheapest
//! family route in that scenario`.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::court::{Cell, CourtSpec, PolarTable, SailingMode};
use crate::error::{Error, Result};
use crate::graph::{
    build_graph, edge_cost, exact_min_path, relax_from, route_cost, static_route_cost, CourtGraph, EdgeCostModel,
    EdgeId, Route, VertexId,
};
use crate::windsim::{Scenario, WindField};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chromosome {
    pub waypoints: Vec<Cell>,
}

impl Chromosome {
    pub fn new(waypoints: Vec<Cell>) -> Self {
        Chromosome { waypoints }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    Unevaluated,
    TrueEval,
    Forecast,
}

impl Evaluation {
    pub fn as_str(self) -> &'static str {
        match self {
            Evaluation::Unevaluated => "unevaluated",
            Evaluation::TrueEval => "true_eval",
            Evaluation::Forecast => "forecast",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub chromosome: Chromosome,
    pub fitness: Option<f64>,
    pub aggregate_cost: Option<f64>,
    pub evaluated: Evaluation,
}

impl Individual {
    pub fn new(chromosome: Chromosome) -> Self {
        Individual { chromosome, fitness: None, aggregate_cost: None, evaluated: Evaluation::Unevaluated }
    }

    pub fn assign(&mut self, fitness: f64, aggregate_cost: f64, how: Evaluation) {
        self.fitness = Some(fitness);
        self.aggregate_cost = Some(aggregate_cost);
        self.evaluated = how;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvoParams {
    pub population_size: usize,
    pub generations: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Family cap: at most this many routes per developed individual.
    pub family_cap: usize,
    pub elitism_count: usize,
    /// Mutation neighbourhood radius in cells; `None` means `ceil(width / 4)`.
    pub mutation_radius: Option<f64>,
    /// Fitness offset `M`; `None` derives it from the infeasibility penalty.
    pub fitness_offset: Option<f64>,
}

impl Default for EvoParams {
    fn default() -> Self {
        EvoParams {
            population_size: 100,
            generations: 30,
            min_len: 2,
            max_len: 8,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            family_cap: 8,
            elitism_count: 2,
            mutation_radius: None,
            fitness_offset: None,
        }
    }
}

impl EvoParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.population_size < 1 {
            return fail("population_size must be >= 1");
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return fail("need 1 <= min_len <= max_len");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return fail("rates must lie in [0, 1]");
        }
        if self.family_cap < 1 {
            return fail("family_cap must be >= 1");
        }
        if self.elitism_count > self.population_size {
            return fail("elitism_count exceeds population_size");
        }
        Ok(())
    }
}

/// Everything an evaluation needs, fixed for a whole run.
#[derive(Debug, Clone)]
pub struct Problem {
    pub court: CourtSpec,
    pub polar: PolarTable,
    pub model: EdgeCostModel,
    pub graph: CourtGraph,
    /// The static field used to price development segments and `s_w0`.
    pub static_field: WindField,
    pub scenarios: Vec<Scenario>,
    pub s_w0: Route,
    pub s_w0_cost: f64,
    pub params: EvoParams,
    /// Cost charged for a scenario in which no family route is feasible.
    pub infeasible_penalty: f64,
    pub fitness_offset: f64,
}

impl Problem {
    /// Builds the graph, solves (or adopts) `s_w0` and fixes the penalty and
    /// fitness offset.
    pub fn new(
        court: CourtSpec,
        polar: PolarTable,
        model: EdgeCostModel,
        static_field: WindField,
        scenarios: Vec<Scenario>,
        params: EvoParams,
        s_w0: Option<Route>,
    ) -> Result<Self> {
        params.validate()?;
        model.validate()?;
        if scenarios.is_empty() {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        let graph = build_graph(&court)?;
        let (s_w0, s_w0_cost) = match s_w0 {
            Some(r) => {
                let c = static_route_cost(&r, &static_field, &polar, &model).ok_or(Error::NoFeasibleRoute)?;
                (r, c)
            }
            None => exact_min_path(&graph, &static_field, &polar, &model)?,
        };
        let infeasible_penalty = 10.0 * s_w0_cost.max(1.0);
        let worst = scenarios.len() as f64 * infeasible_penalty;
        let fitness_offset = params.fitness_offset.unwrap_or(2.0 * worst);
        if fitness_offset <= worst {
            return Err(Error::Config(format!(
                "fitness offset M = {fitness_offset} does not exceed the worst aggregate cost {worst}"
            )));
        }
        Ok(Problem {
            court,
            polar,
            model,
            graph,
            static_field,
            scenarios,
            s_w0,
            s_w0_cost,
            params,
            infeasible_penalty,
            fitness_offset,
        })
    }

    pub fn ops(&self) -> Operators<'_> {
        Operators { court: &self.court, graph: &self.graph, params: &self.params }
    }

    pub fn develop(&self, ch: &Chromosome) -> Vec<FamilyRoute> {
        develop(ch, &self.graph, &self.polar, &self.model, &self.static_field, self.params.family_cap)
    }

    /// Cheapest feasible family cost in one scenario, or the penalty.
    pub fn scenario_cost(&self, family: &[FamilyRoute], scenario: &Scenario) -> f64 {
        family
            .iter()
            .filter_map(|f| route_cost(&f.route, scenario, &self.polar, &self.model))
            .min_by(f64::total_cmp)
            .unwrap_or(self.infeasible_penalty)
    }

    /// Aggregate cost of one fixed route over the scenarios.
    pub fn route_aggregate(&self, route: &Route) -> f64 {
        let fam = [FamilyRoute { route: route.clone(), static_cost: 0.0 }];
        self.scenarios.iter().map(|s| self.scenario_cost(&fam, s)).sum()
    }

    pub fn fitness_of(&self, aggregate_cost: f64) -> Result<f64> {
        let f = self.fitness_offset - aggregate_cost;
        if f > 0.0 {
            Ok(f)
        } else {
            Err(Error::Config(format!("non-positive fitness {f}: M too small")))
        }
    }

    /// Per-scenario-normalized cost used for labeling and datasets.
    pub fn normalized(&self, aggregate_cost: f64) -> f64 {
        aggregate_cost / self.scenarios.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyRoute {
    pub route: Route,
    pub static_cost: f64,
}

/// Grows a chromosome into up to `cap` routes.
///
/// Consecutive anchors (start, waypoints, goal) are joined by per-tack
/// shortest segments priced on `field`; every choice of tack at the junctions
/// is a candidate and the `cap` cheapest compositions are returned.
pub fn develop(
    ch: &Chromosome,
    graph: &CourtGraph,
    polar: &PolarTable,
    m: &EdgeCostModel,
    field: &WindField,
    cap: usize,
) -> Vec<FamilyRoute> {
    let mut anchors = Vec::with_capacity(ch.len() + 2);
    anchors.push(graph.start_cell());
    anchors.extend_from_slice(&ch.waypoints);
    anchors.push(graph.goal_cell());
    let ids: Vec<[Option<VertexId>; 2]> = anchors
        .iter()
        .map(|c| [graph.vertex_id(*c, SailingMode::Port), graph.vertex_id(*c, SailingMode::Starboard)])
        .collect();
    if ids.iter().any(|pair| pair.iter().all(Option::is_none)) {
        return Vec::new();
    }
    let price = |e: EdgeId| {
        let edge = &graph.edges[e];
        edge_cost(edge, field.at(edge.from.cell), polar, m)
    };

    // segments[i][a][b]: cheapest path from anchor i on tack a to anchor i+1 on tack b.
    type Segment = Option<(f64, Vec<EdgeId>)>;
    let mut segments: Vec<[[Segment; 2]; 2]> = Vec::with_capacity(anchors.len() - 1);
    for i in 0..anchors.len() - 1 {
        let mut seg: [[Segment; 2]; 2] = Default::default();
        for a in 0..2 {
            let Some(src) = ids[i][a] else { continue };
            let labels = relax_from(graph, &[src], price);
            for b in 0..2 {
                if let Some(dst) = ids[i + 1][b] {
                    if labels.reached(dst) {
                        seg[a][b] = Some((labels.cost[dst], labels.path_to(graph, dst)));
                    }
                }
            }
        }
        segments.push(seg);
    }

    // K-best over tack assignments, anchor by anchor.
    let cap = cap.max(1);
    let mut best: [Vec<(f64, Vec<u8>)>; 2] = [Vec::new(), Vec::new()];
    for t in 0..2 {
        if ids[0][t].is_some() {
            best[t].push((0.0, vec![t as u8]));
        }
    }
    for seg in &segments {
        let mut next: [Vec<(f64, Vec<u8>)>; 2] = [Vec::new(), Vec::new()];
        for b in 0..2 {
            for a in 0..2 {
                let Some((c, _)) = &seg[a][b] else { continue };
                for (cost, modes) in &best[a] {
                    let mut m2 = modes.clone();
                    m2.push(b as u8);
                    next[b].push((cost + c, m2));
                }
            }
            next[b].sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
            next[b].truncate(cap);
        }
        best = next;
    }
    let mut finals: Vec<(f64, Vec<u8>)> = best.into_iter().flatten().collect();
    finals.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
    finals.truncate(cap);

    finals
        .into_iter()
        .map(|(_, modes)| {
            let origin = graph.vertices[ids[0][modes[0] as usize].expect("assigned tack exists")];
            let edges = segments
                .iter()
                .enumerate()
                .flat_map(|(i, seg)| {
                    let (_, path) = seg[modes[i] as usize][modes[i + 1] as usize].as_ref().expect("feasible segment");
                    path.iter().map(|e| graph.edges[*e])
                })
                .collect();
            let route = Route { origin, edges };
            let static_cost = static_route_cost(&route, field, polar, m).expect("segments priced feasible");
            FamilyRoute { route, static_cost }
        })
        .collect()
}

/// Aggregate cost and fitness of one chromosome, evaluated in full.
pub fn fitness(ch: &Chromosome, problem: &Problem) -> Result<(f64, f64)> {
    let family = problem.develop(ch);
    let aggregate: f64 = problem.scenarios.iter().map(|s| problem.scenario_cost(&family, s)).sum();
    Ok((problem.fitness_of(aggregate)?, aggregate))
}

/// The structural context the variation operators need.
#[derive(Debug, Clone, Copy)]
pub struct Operators<'a> {
    pub court: &'a CourtSpec,
    pub graph: &'a CourtGraph,
    pub params: &'a EvoParams,
}

impl Operators<'_> {
    /// Cells a waypoint may occupy: routable, and neither start nor goal.
    pub fn allowed(&self, c: Cell) -> bool {
        self.court.is_navigable(c) && self.graph.contains_cell(c) && c != self.court.start && c != self.court.goal
    }

    /// Length bounds, usable cells, and a visiting order the graph can follow.
    pub fn is_valid(&self, ch: &Chromosome) -> bool {
        let mut anchors = vec![self.court.start];
        anchors.extend_from_slice(&ch.waypoints);
        anchors.push(self.court.goal);
        (self.params.min_len..=self.params.max_len).contains(&ch.len())
            && ch.waypoints.iter().all(|c| self.allowed(*c))
            && anchors.windows(2).all(|p| self.graph.reaches(p[0], p[1]))
    }

    fn mutation_radius(&self) -> f64 {
        self.params.mutation_radius.unwrap_or_else(|| (self.court.width as f64 / 4.0).ceil())
    }
}

/// Removes the span between the first and last copy of any repeated
/// waypoint, keeping one copy, until all waypoints are distinct.
pub fn cycle_elimination(ch: &Chromosome) -> Chromosome {
    let mut w = ch.waypoints.clone();
    'outer: loop {
        for i in 0..w.len() {
            if let Some(j) = w.iter().rposition(|c| *c == w[i]) {
                if j > i {
                    w.drain(i + 1..=j);
                    continue 'outer;
                }
            }
        }
        return Chromosome::new(w);
    }
}

/// Brings a chromosome back within its invariants: drops unusable cells and
/// any waypoint that cannot be visited after the previous one, trims random
/// waypoints above `max_len`, and pads below `min_len` with the cell nearest
/// the midpoint of the widest anchor gap that can hold one.
pub fn repair<R: Rng>(ch: &Chromosome, ops: &Operators<'_>, rng: &mut R) -> Result<Chromosome> {
    let (start, goal) = (ops.court.start, ops.court.goal);
    let mut w: Vec<Cell> = Vec::with_capacity(ch.len());
    let mut last = start;
    for c in ch.waypoints.iter().copied() {
        if ops.allowed(c) && ops.graph.reaches(last, c) && ops.graph.reaches(c, goal) {
            w.push(c);
            last = c;
        }
    }
    while w.len() > ops.params.max_len {
        let i = rng.random_range(0..w.len());
        w.remove(i);
    }
    while w.len() < ops.params.min_len {
        let mut anchors = vec![start];
        anchors.extend_from_slice(&w);
        anchors.push(goal);
        let mut best: Option<(i64, usize, Cell)> = None;
        for gap in 0..anchors.len() - 1 {
            let (p, q) = (anchors[gap], anchors[gap + 1]);
            let span = p.dist2(q);
            if best.is_some_and(|(s, _, _)| s >= span) {
                continue;
            }
            let mx = (p.x + q.x) as f64 / 2.0;
            let my = (p.y + q.y) as f64 / 2.0;
            let pick = ops
                .court
                .navigable_cells()
                .filter(|c| {
                    *c != p && *c != q && ops.allowed(*c) && !w.contains(c) && ops.graph.reaches(p, *c) && ops.graph.reaches(*c, q)
                })
                .min_by(|a, b| {
                    let da = (a.x as f64 - mx).powi(2) + (a.y as f64 - my).powi(2);
                    let db = (b.x as f64 - mx).powi(2) + (b.y as f64 - my).powi(2);
                    da.total_cmp(&db).then(a.cmp(b))
                });
            if let Some(c) = pick {
                best = Some((span, gap, c));
            }
        }
        let (_, gap, pick) = best
            .ok_or_else(|| Error::Repair(format!("court has too few routable cells for min_len {}", ops.params.min_len)))?;
        w.insert(gap, pick);
    }
    Ok(Chromosome::new(w))
}

/// Exchanges the prefix/suffix of `a` and `b` around their shared `pivot`.
pub fn pivot_recombine(a: &Chromosome, b: &Chromosome, pivot: Cell) -> Option<(Chromosome, Chromosome)> {
    let ia = a.waypoints.iter().position(|c| *c == pivot)?;
    let ib = b.waypoints.iter().position(|c| *c == pivot)?;
    let mut c1 = a.waypoints[..=ia].to_vec();
    c1.extend_from_slice(&b.waypoints[ib + 1..]);
    let mut c2 = b.waypoints[..=ib].to_vec();
    c2.extend_from_slice(&a.waypoints[ia + 1..]);
    Some((Chromosome::new(c1), Chromosome::new(c2)))
}

/// Pivot recombination when the parents share a waypoint, otherwise a
/// one-point crossover with an independent cut in each parent.
pub fn crossover<R: Rng>(
    a: &Chromosome,
    b: &Chromosome,
    ops: &Operators<'_>,
    rng: &mut R,
) -> Result<(Chromosome, Chromosome)> {
    let in_b: HashSet<Cell> = b.waypoints.iter().copied().collect();
    let mut seen = HashSet::new();
    let common: Vec<Cell> = a.waypoints.iter().copied().filter(|c| in_b.contains(c) && seen.insert(*c)).collect();
    let (c1, c2) = if common.is_empty() {
        let i = rng.random_range(0..=a.len());
        let j = rng.random_range(0..=b.len());
        let mut c1 = a.waypoints[..i].to_vec();
        c1.extend_from_slice(&b.waypoints[j..]);
        let mut c2 = b.waypoints[..j].to_vec();
        c2.extend_from_slice(&a.waypoints[i..]);
        (Chromosome::new(c1), Chromosome::new(c2))
    } else {
        let pivot = common[rng.random_range(0..common.len())];
        pivot_recombine(a, b, pivot).expect("pivot is common")
    };
    Ok((
        repair(&cycle_elimination(&c1), ops, rng)?,
        repair(&cycle_elimination(&c2), ops, rng)?,
    ))
}

/// Draws a mutation site and its replacement: the index is uniform, the new
/// cell lies near the start for the first 20% of the list and near the goal
/// otherwise. `None` when no allowed cell is in range.
pub fn mutation_site<R: Rng>(len: usize, ops: &Operators<'_>, rng: &mut R) -> (usize, Option<Cell>) {
    let i = rng.random_range(0..len);
    let anchor = if (i as f64) < 0.2 * len as f64 { ops.court.start } else { ops.court.goal };
    let r = ops.mutation_radius();
    let candidates: Vec<Cell> = ops
        .court
        .navigable_cells()
        .filter(|c| ops.allowed(*c) && (c.dist2(anchor) as f64) <= r * r)
        .collect();
    (i, (!candidates.is_empty()).then(|| candidates[rng.random_range(0..candidates.len())]))
}

/// Replaces one waypoint per [`mutation_site`], then repairs.
pub fn mutate<R: Rng>(ch: &Chromosome, ops: &Operators<'_>, rng: &mut R) -> Result<Chromosome> {
    if ch.is_empty() {
        return repair(ch, ops, rng);
    }
    let mut w = ch.waypoints.clone();
    if let (i, Some(c)) = mutation_site(w.len(), ops, rng) {
        w[i] = c;
    }
    repair(&Chromosome::new(w), ops, rng)
}

/// Evenly spaced picks from a route's interior cells.
fn project(cells: &[Cell], count: usize) -> Vec<Cell> {
    let interior = if cells.len() > 2 { &cells[1..cells.len() - 1] } else { &[][..] };
    let n = interior.len();
    let count = count.min(n);
    (0..count).map(|j| interior[(2 * j + 1) * n / (2 * count)]).collect()
}

/// The waypoint projection of a route: its interior cells thinned to at most
/// `max_len`, then repaired.
pub fn project_route<R: Rng>(route: &Route, ops: &Operators<'_>, rng: &mut R) -> Result<Chromosome> {
    let cells = route.cells();
    let interior = cells.len().saturating_sub(2);
    let picked = project(&cells, interior.clamp(0, ops.params.max_len));
    repair(&Chromosome::new(picked), ops, rng)
}

/// Individual 0 is the projection of `s_w0`; the rest are built on static
/// shortest routes forced through one to three random cells.
pub fn init_population<R: Rng>(problem: &Problem, rng: &mut R) -> Result<Vec<Individual>> {
    let ops = problem.ops();
    let mut pop = Vec::with_capacity(problem.params.population_size);
    pop.push(Individual::new(project_route(&problem.s_w0, &ops, rng)?));
    let candidates: Vec<Cell> = problem.court.navigable_cells().filter(|c| ops.allowed(*c)).collect();
    let graph = &problem.graph;
    let price = |e: EdgeId| {
        let edge = &graph.edges[e];
        edge_cost(edge, problem.static_field.at(edge.from.cell), &problem.polar, &problem.model)
    };
    let mode_ids = |c: Cell| -> Vec<VertexId> {
        SailingMode::ALL.iter().filter_map(|m| graph.vertex_id(c, *m)).collect()
    };
    while pop.len() < problem.params.population_size {
        let k = rng.random_range(1..=3usize);
        let mut picks: Vec<Cell> = if candidates.is_empty() {
            Vec::new()
        } else {
            (0..k).map(|_| candidates[rng.random_range(0..candidates.len())]).collect()
        };
        picks.sort_by_key(|c| (std::cmp::Reverse(c.manhattan(problem.court.goal)), *c));
        picks.dedup();

        let mut cells = vec![problem.court.start];
        let mut current = problem.court.start;
        for target in picks.into_iter().chain(std::iter::once(problem.court.goal)) {
            let labels = relax_from(graph, &mode_ids(current), price);
            let Some(dst) = mode_ids(target)
                .into_iter()
                .filter(|v| labels.reached(*v))
                .min_by(|a, b| labels.cost[*a].total_cmp(&labels.cost[*b]))
            else {
                continue;
            };
            cells.extend(labels.path_to(graph, dst).iter().map(|e| graph.edges[*e].to.cell));
            current = target;
        }
        let interior = cells.len().saturating_sub(2);
        let len = rng.random_range(problem.params.min_len..=problem.params.max_len).min(interior);
        let ch = repair(&Chromosome::new(project(&cells, len)), &ops, rng)?;
        pop.push(Individual::new(ch));
    }
    Ok(pop)
}

/// Roulette-wheel draw of two parents (indices; they may coincide).
pub fn select_parents<R: Rng>(pop: &[Individual], rng: &mut R) -> Result<(usize, usize)> {
    let mut fits = Vec::with_capacity(pop.len());
    for ind in pop {
        match ind.fitness {
            Some(f) if f >= 0.0 && f.is_finite() => fits.push(f),
            _ => return Err(Error::Config("roulette selection needs finite non-negative fitness (M misconfigured)".into())),
        }
    }
    let total: f64 = fits.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("roulette selection needs positive total fitness".into()));
    }
    let mut draw = || {
        let mut u = rng.random::<f64>() * total;
        for (i, f) in fits.iter().enumerate() {
            if *f > 0.0 && u < *f {
                return i;
            }
            u -= f;
        }
        fits.iter().rposition(|f| *f > 0.0).expect("positive total")
    };
    Ok((draw(), draw()))
}

/// Cumulative evaluation counters an evaluator exposes to the log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub cache_hits: u64,
    pub true_evaluations: u64,
    pub forecasts: u64,
}

pub trait Evaluator {
    /// Assigns fitness to every unevaluated individual of `pop`.
    fn evaluate(&mut self, pop: &mut [Individual], problem: &Problem) -> Result<()>;

    /// Hook run once a generation is complete.
    fn end_generation(&mut self, _generation: usize, _pop: &[Individual], _problem: &Problem) -> Result<()> {
        Ok(())
    }

    fn counters(&self) -> Counters;
}

fn by_fitness_desc(pop: &[Individual]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|a, b| {
        let fa = pop[*a].fitness.unwrap_or(f64::NEG_INFINITY);
        let fb = pop[*b].fitness.unwrap_or(f64::NEG_INFINITY);
        fb.total_cmp(&fa).then(a.cmp(b))
    });
    idx
}

/// One generational replacement: elites survive, the rest of the population
/// is refilled with evaluated offspring.
pub fn step_generation<R: Rng, E: Evaluator + ?Sized>(
    pop: &[Individual],
    problem: &Problem,
    evaluator: &mut E,
    rng: &mut R,
) -> Result<Vec<Individual>> {
    let params = &problem.params;
    let ops = problem.ops();
    let mut next: Vec<Individual> =
        by_fitness_desc(pop).into_iter().take(params.elitism_count).map(|i| pop[i].clone()).collect();
    let mut offspring = Vec::new();
    while next.len() + offspring.len() < params.population_size {
        let (i, j) = select_parents(pop, rng)?;
        let (a, b) = (&pop[i].chromosome, &pop[j].chromosome);
        let (mut c1, mut c2) = if rng.random_bool(params.crossover_rate) {
            crossover(a, b, &ops, rng)?
        } else {
            (a.clone(), b.clone())
        };
        if rng.random_bool(params.mutation_rate) {
            c1 = mutate(&c1, &ops, rng)?;
        }
        if rng.random_bool(params.mutation_rate) {
            c2 = mutate(&c2, &ops, rng)?;
        }
        offspring.push(Individual::new(c1));
        if next.len() + offspring.len() < params.population_size {
            offspring.push(Individual::new(c2));
        }
    }
    evaluator.evaluate(&mut offspring, problem)?;
    next.extend(offspring);
    debug_assert!(next.iter().all(|ind| ops.is_valid(&ind.chromosome)));
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_cost: f64,
    pub mean_cost: f64,
    pub cache_hits: u64,
    pub true_evaluations: u64,
    pub forecasts: u64,
}

impl GenerationRecord {
    pub const CSV_HEADER: &'static str = "gen,best_cost,mean_cost,cache_hits,true_evals,forecasts";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.generation, self.best_cost, self.mean_cost, self.cache_hits, self.true_evaluations, self.forecasts
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub population: Vec<Individual>,
    pub log: Vec<GenerationRecord>,
}

fn record(generation: usize, pop: &[Individual], before: Counters, after: Counters) -> GenerationRecord {
    let costs: Vec<f64> = pop.iter().filter_map(|i| i.aggregate_cost).collect();
    GenerationRecord {
        generation,
        best_cost: costs.iter().copied().fold(f64::INFINITY, f64::min),
        mean_cost: costs.iter().sum::<f64>() / costs.len().max(1) as f64,
        cache_hits: after.cache_hits - before.cache_hits,
        true_evaluations: after.true_evaluations - before.true_evaluations,
        forecasts: after.forecasts - before.forecasts,
    }
}

/// Runs initialization plus `params.generations` generations. `observer` sees
/// each finished generation (generation 0 is the initial population).
pub fn run_evolution<E, F>(problem: &Problem, evaluator: &mut E, seed: u64, mut observer: F) -> Result<RunOutcome>
where
    E: Evaluator + ?Sized,
    F: FnMut(&GenerationRecord, &[Individual]),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(problem.params.generations + 1);
    let before = evaluator.counters();
    let mut pop = init_population(problem, &mut rng)?;
    evaluator.evaluate(&mut pop, problem)?;
    evaluator.end_generation(0, &pop, problem)?;
    let rec = record(0, &pop, before, evaluator.counters());
    observer(&rec, &pop);
    log.push(rec);
    for generation in 1..=problem.params.generations {
        let before = evaluator.counters();
        pop = step_generation(&pop, problem, evaluator, &mut rng)?;
        evaluator.end_generation(generation, &pop, problem)?;
        let rec = record(generation, &pop, before, evaluator.counters());
        observer(&rec, &pop);
        log.push(rec);
    }
    Ok(RunOutcome { population: pop, log })
}

/// Evaluates every individual in full, with no cache: the reference
/// evaluator the faster engines are checked against.
#[derive(Debug, Default)]
pub struct PlainEvaluator {
    counters: Counters,
}

impl Evaluator for PlainEvaluator {
    fn evaluate(&mut self, pop: &mut [Individual], problem: &Problem) -> Result<()> {
        for ind in pop.iter_mut().filter(|i| i.evaluated == Evaluation::Unevaluated) {
            let (f, agg) = fitness(&ind.chromosome, problem)?;
            ind.assign(f, agg, Evaluation::TrueEval);
            self.counters.true_evaluations += 1;
        }
        Ok(())
    }

    fn counters(&self) -> Counters {
        self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windsim::WindCellState;
    use proptest::prelude::*;

    fn problem(w: usize, h: usize, blocked: &[(i32, i32)], scenarios: usize) -> Problem {
        let mut nav = vec![true; w * h];
        for (x, y) in blocked {
            nav[*y as usize * w + *x as usize] = false;
        }
        let court = CourtSpec::new(w, h, 50.0, nav, None, Cell::new(0, 0), Cell::new(w as i32 - 1, h as i32 - 1), false)
            .unwrap();
        let field = WindField::uniform(w, h, WindCellState::new(7.0, 45.0));
        let scen = (0..scenarios).map(|i| Scenario::constant(field.clone(), 5, i as u64)).collect();
        let params = EvoParams { population_size: 12, min_len: 1, max_len: 4, ..EvoParams::default() };
        Problem::new(court, PolarTable::default_table(), EdgeCostModel::default(), field, scen, params, None).unwrap()
    }

    fn cells(v: &[(i32, i32)]) -> Chromosome {
        Chromosome::new(v.iter().map(|(x, y)| Cell::new(*x, *y)).collect())
    }

    #[test]
    fn cycle_elimination_definition() {
        assert_eq!(cycle_elimination(&cells(&[(1, 1), (2, 2), (1, 1), (3, 3)])), cells(&[(1, 1), (3, 3)]));
        let plain = cells(&[(1, 1), (2, 2), (3, 3)]);
        assert_eq!(cycle_elimination(&plain), plain);
    }

    #[test]
    fn pivot_recombination_swaps_tails() {
        let a = cells(&[(1, 0), (2, 2), (3, 1)]);
        let b = cells(&[(0, 1), (2, 2), (1, 3)]);
        let (c1, c2) = pivot_recombine(&a, &b, Cell::new(2, 2)).unwrap();
        assert_eq!(c1, cells(&[(1, 0), (2, 2), (1, 3)]));
        assert_eq!(c2, cells(&[(0, 1), (2, 2), (3, 1)]));
    }

    #[test]
    fn crossover_of_identical_parents_is_identity() {
        let p = problem(5, 5, &[], 1);
        let a = cells(&[(1, 1), (2, 2), (3, 3)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (c1, c2) = crossover(&a, &a, &p.ops(), &mut rng).unwrap();
            assert_eq!((c1, c2), (a.clone(), a.clone()));
        }
    }

    #[test]
    fn repair_filters_trims_and_pads() {
        let p = problem(5, 5, &[(2, 2)], 1);
        let ops = p.ops();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ok = cells(&[(1, 1), (3, 3)]);
        assert_eq!(repair(&ok, &ops, &mut rng).unwrap(), ok);
        let blocked = cells(&[(1, 1), (2, 2), (3, 3)]);
        assert_eq!(repair(&blocked, &ops, &mut rng).unwrap(), ok);
        let long = cells(&[(1, 0), (1, 1), (1, 2), (1, 3), (3, 3), (3, 4)]);
        let trimmed = repair(&long, &ops, &mut rng).unwrap();
        assert_eq!(trimmed.len(), 4);
        assert!(trimmed.waypoints.windows(2).all(|w| {
            long.waypoints.iter().position(|c| *c == w[0]) < long.waypoints.iter().position(|c| *c == w[1])
        }));
        let backwards = cells(&[(3, 3), (1, 1), (3, 4)]);
        assert_eq!(repair(&backwards, &ops, &mut rng).unwrap(), cells(&[(3, 3), (3, 4)]));
        let empty = repair(&Chromosome::new(vec![]), &ops, &mut rng).unwrap();
        assert_eq!(empty.len(), 1);
        // Midpoint of the start-goal diagonal is blocked; the nearest free cell wins.
        assert_eq!(empty.waypoints[0], Cell::new(2, 1));
    }

    #[test]
    fn repair_fails_without_room() {
        let court = CourtSpec::new(2, 1, 1.0, vec![true, true], None, Cell::new(0, 0), Cell::new(1, 0), false).unwrap();
        let graph = build_graph(&court).unwrap();
        let params = EvoParams { min_len: 1, max_len: 2, ..EvoParams::default() };
        let ops = Operators { court: &court, graph: &graph, params: &params };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(repair(&Chromosome::new(vec![]), &ops, &mut rng), Err(Error::Repair(_))));
    }

    #[test]
    fn mutation_respects_the_twenty_percent_rule() {
        let court = CourtSpec::new(20, 20, 5.0, vec![true; 400], None, Cell::new(0, 0), Cell::new(19, 19), false).unwrap();
        let graph = build_graph(&court).unwrap();
        let params = EvoParams { min_len: 10, max_len: 10, ..EvoParams::default() };
        let ops = Operators { court: &court, graph: &graph, params: &params };
        let base = Chromosome::new((1..=10).map(|i| Cell::new(i, i)).collect());
        let r2 = 25.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = [false; 2];
        for _ in 0..500 {
            let (i, c) = mutation_site(10, &ops, &mut rng);
            let c = c.unwrap();
            let anchor = if i < 2 { court.start } else { court.goal };
            assert!(c.dist2(anchor) as f64 <= r2, "index {i} -> {c}");
            seen[(i >= 2) as usize] = true;
            assert!(ops.is_valid(&mutate(&base, &ops, &mut rng).unwrap()));
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn develop_recovers_the_static_optimum() {
        let p = problem(5, 5, &[(2, 2)], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = project_route(&p.s_w0, &p.ops(), &mut rng).unwrap();
        let family = p.develop(&ch);
        assert!(!family.is_empty());
        assert!((family[0].static_cost - p.s_w0_cost).abs() <= 1e-9 * p.s_w0_cost);
    }

    #[test]
    fn develop_cap_and_ordering() {
        let p = problem(5, 5, &[], 1);
        let ch = cells(&[(2, 1), (3, 3)]);
        let one = develop(&ch, &p.graph, &p.polar, &p.model, &p.static_field, 1);
        let many = develop(&ch, &p.graph, &p.polar, &p.model, &p.static_field, 8);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], many[0]);
        assert!(many.windows(2).all(|w| w[0].static_cost <= w[1].static_cost + 1e-9));
        for f in &many {
            assert_eq!(f.route.origin.cell, p.court.start);
            assert_eq!(f.route.end().cell, p.court.goal);
            let cells = f.route.cells();
            assert!(cells.contains(&Cell::new(2, 1)) && cells.contains(&Cell::new(3, 3)));
        }
    }

    #[test]
    fn develop_out_of_order_waypoints_is_empty() {
        let p = problem(5, 5, &[], 1);
        assert!(p.develop(&cells(&[(3, 3), (1, 1)])).is_empty());
    }

    #[test]
    fn develop_with_unroutable_waypoint_is_empty() {
        let p = problem(5, 5, &[], 1);
        // (4,0) has layer 4 like (0,4); nothing can pass through both.
        assert!(p.develop(&cells(&[(4, 0), (0, 4)])).is_empty());
        let (_, agg) = fitness(&cells(&[(4, 0), (0, 4)]), &p).unwrap();
        assert_eq!(agg, p.infeasible_penalty);
    }

    #[test]
    fn fitness_arithmetic() {
        let p = problem(4, 4, &[], 2);
        let ch = cells(&[(1, 1)]);
        let (f, agg) = fitness(&ch, &p).unwrap();
        let single = p.scenario_cost(&p.develop(&ch), &p.scenarios[0]);
        assert_eq!(agg, single + single);
        assert_eq!(f, p.fitness_offset - agg);
    }

    #[test]
    fn too_small_offset_is_rejected() {
        let mut p = problem(4, 4, &[], 1);
        p.params.fitness_offset = Some(1.0);
        let err = Problem::new(
            p.court.clone(),
            p.polar.clone(),
            p.model,
            p.static_field.clone(),
            p.scenarios.clone(),
            p.params,
            None,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn population_initialization() {
        let p = problem(6, 6, &[(3, 3)], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pop = init_population(&p, &mut rng).unwrap();
        assert_eq!(pop.len(), 12);
        assert!(pop.iter().all(|i| p.ops().is_valid(&i.chromosome)));
        let again = init_population(&p, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(pop, again);
        let mut single = p.clone();
        single.params.population_size = 1;
        let one = init_population(&single, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].chromosome, pop[0].chromosome);
    }

    #[test]
    fn roulette_rejects_missing_or_negative_fitness() {
        let mut a = Individual::new(cells(&[(1, 1)]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(select_parents(&[a.clone()], &mut rng).is_err());
        a.assign(-1.0, 1.0, Evaluation::TrueEval);
        assert!(select_parents(&[a.clone()], &mut rng).is_err());
        let mut zero = a.clone();
        zero.assign(0.0, 1.0, Evaluation::TrueEval);
        let mut b = a.clone();
        b.assign(5.0, 1.0, Evaluation::TrueEval);
        for _ in 0..100 {
            assert_eq!(select_parents(&[zero.clone(), b.clone(), zero.clone()], &mut rng).unwrap(), (1, 1));
        }
    }

    #[test]
    fn full_elitism_keeps_population() {
        let mut p = problem(5, 5, &[], 2);
        p.params.elitism_count = p.params.population_size;
        let mut ev = PlainEvaluator::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pop = init_population(&p, &mut rng).unwrap();
        ev.evaluate(&mut pop, &p).unwrap();
        let next = step_generation(&pop, &p, &mut ev, &mut rng).unwrap();
        let mut a: Vec<_> = pop.iter().map(|i| i.chromosome.clone()).collect();
        let mut b: Vec<_> = next.iter().map(|i| i.chromosome.clone()).collect();
        a.sort_by(|x, y| x.waypoints.cmp(&y.waypoints));
        b.sort_by(|x, y| x.waypoints.cmp(&y.waypoints));
        assert_eq!(a, b);
    }

    #[test]
    fn best_fitness_never_drops() {
        let mut p = problem(6, 6, &[(2, 3)], 3);
        p.params.generations = 8;
        let mut ev = PlainEvaluator::default();
        let out = run_evolution(&p, &mut ev, 4, |_, pop| {
            assert!(pop.iter().all(|i| i.fitness.is_some()));
        })
        .unwrap();
        assert_eq!(out.log.len(), 9);
        assert!(out.log.windows(2).all(|w| w[1].best_cost <= w[0].best_cost));
        for ind in &out.population {
            assert_eq!(ind.fitness.unwrap(), p.fitness_offset - ind.aggregate_cost.unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cycle_elimination_yields_distinct_subsequence(raw in proptest::collection::vec((0i32..4, 0i32..4), 0..12)) {
            let ch = cells(&raw);
            let out = cycle_elimination(&ch);
            let set: HashSet<_> = out.waypoints.iter().collect();
            prop_assert_eq!(set.len(), out.len());
            let mut it = ch.waypoints.iter();
            prop_assert!(out.waypoints.iter().all(|c| it.any(|d| d == c)));
        }

        #[test]
        fn crossover_children_are_valid_and_inherited(
            a in proptest::collection::vec((1i32..5, 1i32..5), 1..7),
            b in proptest::collection::vec((1i32..5, 1i32..5), 1..7),
            seed in any::<u64>(),
        ) {
            let p = problem(6, 6, &[], 1);
            let ops = p.ops();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pa = repair(&cycle_elimination(&cells(&a)), &ops, &mut rng).unwrap();
            let pb = repair(&cycle_elimination(&cells(&b)), &ops, &mut rng).unwrap();
            let shared = pa.waypoints.iter().any(|c| pb.waypoints.contains(c));
            let (c1, c2) = crossover(&pa, &pb, &ops, &mut rng).unwrap();
            for c in [&c1, &c2] {
                prop_assert!(ops.is_valid(c));
                if shared {
                    prop_assert!(c.waypoints.iter().all(|w| pa.waypoints.contains(w) || pb.waypoints.contains(w)));
                }
            }
        }
    }
}
