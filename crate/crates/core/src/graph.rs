//! The layered court DAG, edge pricing, the static-wind exact solver and
//! time-dependent route costing.
//!
//! Vertices are `(cell, tack)` pairs. A cell's layer is its Manhattan distance
//! to the goal and every edge moves to an 8-neighbour with a strictly smaller
//! layer, which makes the graph acyclic by construction. A change of tack is
//! carried by the moving edge itself: the maneuver is performed as the boat
//! leaves the from-cell.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::court::{Cell, CourtSpec, PolarTable, SailingMode, fold_angle, wrap_angle};
use crate::error::{Error, Result};
use crate::windsim::{Scenario, WindCellState, WindField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vertex {
    pub cell: Cell,
    pub mode: SailingMode,
    pub layer: u32,
}

impl Ord for Vertex {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.cell, self.mode).cmp(&(other.cell, other.mode))
    }
}

impl PartialOrd for Vertex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Maneuver {
    None,
    Tack,
    Gybe,
    BowUp,
    BowDown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: Vertex,
    pub to: Vertex,
    pub distance_m: f64,
}

impl Edge {
    pub fn new(from: Vertex, to: Vertex, cell_size_m: f64) -> Self {
        let diagonal = from.cell.x != to.cell.x && from.cell.y != to.cell.y;
        let distance_m = if diagonal { cell_size_m * std::f64::consts::SQRT_2 } else { cell_size_m };
        Edge { from, to, distance_m }
    }

    /// Compass heading of the move, degrees clockwise from north.
    pub fn heading_deg(&self) -> f64 {
        let dx = (self.to.cell.x - self.from.cell.x).signum();
        let dy = (self.to.cell.y - self.from.cell.y).signum();
        match (dx, dy) {
            (0, 1) => 0.0,
            (1, 1) => 45.0,
            (1, 0) => 90.0,
            (1, -1) => 135.0,
            (0, -1) => 180.0,
            (-1, -1) => 225.0,
            (-1, 0) => 270.0,
            (-1, 1) => 315.0,
            _ => 0.0,
        }
    }

    pub fn changes_mode(&self) -> bool {
        self.from.mode != self.to.mode
    }

    /// The maneuver this edge performs under `wind`: a change of tack is a tack
    /// when the new heading is upwind and a gybe otherwise.
    pub fn maneuver(&self, wind: WindCellState) -> Maneuver {
        if !self.changes_mode() {
            Maneuver::None
        } else if fold_angle(relative_wind_angle(self.heading_deg(), wind.angle_deg)) < 90.0 {
            Maneuver::Tack
        } else {
            Maneuver::Gybe
        }
    }
}

/// Angle from the heading to the wind source, clockwise, in [0, 360). Values in
/// (0, 180) mean the wind comes over the starboard side.
pub fn relative_wind_angle(heading_deg: f64, wind_from_deg: f64) -> f64 {
    wrap_angle(wind_from_deg - heading_deg)
}

/// Whether `mode` may sail `heading` under wind from `wind_from_deg`: upwind
/// headings need the wind over the matching side, downwind ones accept both.
pub fn mode_feasible(mode: SailingMode, heading_deg: f64, wind_from_deg: f64) -> bool {
    let rel = relative_wind_angle(heading_deg, wind_from_deg);
    if fold_angle(rel) >= 90.0 || rel == 0.0 {
        return true;
    }
    match mode {
        SailingMode::Starboard => rel < 180.0,
        SailingMode::Port => rel > 180.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeCostModel {
    pub tack_s: f64,
    pub gybe_s: f64,
    pub bow_up_s: f64,
    pub bow_down_s: f64,
}

impl Default for EdgeCostModel {
    fn default() -> Self {
        EdgeCostModel { tack_s: 4.0, gybe_s: 3.0, bow_up_s: 1.0, bow_down_s: 1.0 }
    }
}

impl EdgeCostModel {
    pub fn penalty(&self, m: Maneuver) -> f64 {
        match m {
            Maneuver::None => 0.0,
            Maneuver::Tack => self.tack_s,
            Maneuver::Gybe => self.gybe_s,
            Maneuver::BowUp => self.bow_up_s,
            Maneuver::BowDown => self.bow_down_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.tack_s, self.gybe_s, self.bow_up_s, self.bow_down_s].iter().all(|p| *p >= 0.0 && p.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("maneuver penalties must be finite and >= 0".into()))
        }
    }
}

/// Sailing time of `edge` in seconds, or `None` when the heading is in the
/// no-go zone or the arrival tack does not match the wind side.
pub fn edge_cost(edge: &Edge, wind: WindCellState, polar: &PolarTable, m: &EdgeCostModel) -> Option<f64> {
    let heading = edge.heading_deg();
    let rel = relative_wind_angle(heading, wind.angle_deg);
    let speed = polar.speed(rel, wind.speed_mps);
    if speed <= 0.0 || !mode_feasible(edge.to.mode, heading, wind.angle_deg) {
        return None;
    }
    Some(edge.distance_m / speed + m.penalty(edge.maneuver(wind)))
}

pub type VertexId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone)]
pub struct CourtGraph {
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    /// `(from, to)` vertex ids per edge.
    pub endpoints: Vec<(VertexId, VertexId)>,
    pub out_edges: Vec<Vec<EdgeId>>,
    pub topo_order: Vec<VertexId>,
    pub topo_position: Vec<usize>,
    pub starts: Vec<VertexId>,
    pub goals: Vec<VertexId>,
    lookup: Vec<Option<VertexId>>,
    // Per cell index, a bitset over cell indices reachable from it (itself included).
    reach: Vec<Vec<u64>>,
}

const NEIGHBOURS8: [(i32, i32); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

impl CourtGraph {
    pub fn vertex_id(&self, cell: Cell, mode: SailingMode) -> Option<VertexId> {
        if cell.x < 0 || cell.y < 0 || cell.x as usize >= self.width || cell.y as usize >= self.height {
            return None;
        }
        self.lookup[(cell.y as usize * self.width + cell.x as usize) * 2 + mode.index()]
    }

    /// Whether a directed path leads from `from` to `to`. Reflexive on
    /// cells present in the graph.
    pub fn reaches(&self, from: Cell, to: Cell) -> bool {
        if !self.contains_cell(from) || !self.contains_cell(to) {
            return false;
        }
        let t = to.y as usize * self.width + to.x as usize;
        self.reach[from.y as usize * self.width + from.x as usize][t / 64] >> (t % 64) & 1 == 1
    }

    /// Whether some vertex of `cell` survived pruning.
    pub fn contains_cell(&self, cell: Cell) -> bool {
        SailingMode::ALL.iter().any(|m| self.vertex_id(cell, *m).is_some())
    }

    pub fn start_cell(&self) -> Cell {
        self.vertices[self.starts[0]].cell
    }

    pub fn goal_cell(&self) -> Cell {
        self.vertices[self.goals[0]].cell
    }
}

/// Builds the pruned layered DAG for `court`.
pub fn build_graph(court: &CourtSpec) -> Result<CourtGraph> {
    let layer = |c: Cell| c.manhattan(court.goal);
    let full = court.cell_count() * 2;
    let full_id = |c: Cell, m: SailingMode| court.index(c) * 2 + m.index();

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); full];
    let mut present = vec![false; full];
    for c in court.navigable_cells() {
        for m in SailingMode::ALL {
            present[full_id(c, m)] = true;
        }
        for (dx, dy) in NEIGHBOURS8 {
            let n = Cell::new(c.x + dx, c.y + dy);
            if !court.is_navigable(n) || layer(n) >= layer(c) {
                continue;
            }
            for m in SailingMode::ALL {
                for m2 in SailingMode::ALL {
                    adj[full_id(c, m)].push(full_id(n, m2));
                }
            }
        }
    }

    let topo = kahn_order(&adj, &present).ok_or(Error::Cyclic)?;

    let mut forward = vec![false; full];
    let mut stack: Vec<usize> = SailingMode::ALL.iter().map(|m| full_id(court.start, *m)).collect();
    for s in &stack {
        forward[*s] = true;
    }
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !forward[v] {
                forward[v] = true;
                stack.push(v);
            }
        }
    }
    let goal_ids: Vec<usize> = SailingMode::ALL.iter().map(|m| full_id(court.goal, *m)).collect();
    if !goal_ids.iter().any(|g| forward[*g]) {
        return Err(Error::GoalUnreachable);
    }
    let mut backward = vec![false; full];
    for g in &goal_ids {
        backward[*g] = true;
    }
    for &u in topo.iter().rev() {
        if adj[u].iter().any(|v| backward[*v]) {
            backward[u] = true;
        }
    }

    let mut lookup = vec![None; full];
    let mut vertices = Vec::new();
    let mut topo_order = Vec::new();
    for &u in &topo {
        if forward[u] && backward[u] {
            let cell = court.cell_at(u / 2);
            let mode = SailingMode::ALL[u % 2];
            lookup[u] = Some(vertices.len());
            topo_order.push(vertices.len());
            vertices.push(Vertex { cell, mode, layer: layer(cell) });
        }
    }
    let mut edges = Vec::new();
    let mut endpoints = Vec::new();
    let mut out_edges = vec![Vec::new(); vertices.len()];
    for &u in &topo {
        let Some(a) = lookup[u] else { continue };
        for &v in &adj[u] {
            if let Some(b) = lookup[v] {
                out_edges[a].push(edges.len());
                edges.push(Edge::new(vertices[a], vertices[b], court.cell_size_m));
                endpoints.push((a, b));
            }
        }
    }
    let mut topo_position = vec![0; vertices.len()];
    for (pos, v) in topo_order.iter().enumerate() {
        topo_position[*v] = pos;
    }
    let words = court.cell_count().div_ceil(64);
    let mut reach = vec![Vec::new(); court.cell_count()];
    for &v in topo_order.iter().rev() {
        let c = court.index(vertices[v].cell);
        if reach[c].is_empty() {
            reach[c] = vec![0u64; words];
            reach[c][c / 64] |= 1 << (c % 64);
        }
        for &e in &out_edges[v] {
            let d = court.index(edges[e].to.cell);
            for w in 0..words {
                let bits = reach[d][w];
                reach[c][w] |= bits;
            }
        }
    }
    let starts = SailingMode::ALL.iter().filter_map(|m| lookup[full_id(court.start, *m)]).collect();
    let goals = SailingMode::ALL.iter().filter_map(|m| lookup[full_id(court.goal, *m)]).collect();
    Ok(CourtGraph {
        width: court.width,
        height: court.height,
        cell_size_m: court.cell_size_m,
        vertices,
        edges,
        endpoints,
        out_edges,
        topo_order,
        topo_position,
        starts,
        goals,
        lookup,
        reach,
    })
}

/// Kahn's algorithm over the present nodes; `None` if a cycle remains. Ready
/// nodes are released in ascending id order so the result is deterministic.
pub fn kahn_order(adj: &[Vec<usize>], present: &[bool]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; adj.len()];
    for (u, targets) in adj.iter().enumerate() {
        if present[u] {
            for v in targets {
                indegree[*v] += 1;
            }
        }
    }
    let mut ready: VecDeque<usize> = (0..adj.len()).filter(|u| present[*u] && indegree[*u] == 0).collect();
    let mut order = Vec::new();
    while let Some(u) = ready.pop_front() {
        order.push(u);
        for &v in &adj[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push_back(v);
            }
        }
    }
    (order.len() == present.iter().filter(|p| **p).count()).then_some(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub origin: Vertex,
    pub edges: Vec<Edge>,
}

impl Route {
    pub fn vertices(&self) -> Vec<Vertex> {
        std::iter::once(self.origin).chain(self.edges.iter().map(|e| e.to)).collect()
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.vertices().iter().map(|v| v.cell).collect()
    }

    pub fn end(&self) -> Vertex {
        self.edges.last().map_or(self.origin, |e| e.to)
    }

    pub fn length_m(&self) -> f64 {
        self.edges.iter().map(|e| e.distance_m).sum()
    }

    /// Rebuilds a route from its vertex list, checking each step is a graph edge.
    pub fn from_vertices(graph: &CourtGraph, vertices: &[(Cell, SailingMode)]) -> Result<Self> {
        let ids = vertices
            .iter()
            .map(|(c, m)| {
                graph
                    .vertex_id(*c, *m)
                    .ok_or_else(|| Error::MalformedRoute(format!("{c} {} is not a graph vertex", m.as_str())))
            })
            .collect::<Result<Vec<_>>>()?;
        let first = *ids.first().ok_or_else(|| Error::MalformedRoute("empty route".into()))?;
        let mut edges = Vec::with_capacity(ids.len().saturating_sub(1));
        for w in ids.windows(2) {
            let e = graph.out_edges[w[0]]
                .iter()
                .find(|e| graph.endpoints[**e].1 == w[1])
                .ok_or_else(|| Error::MalformedRoute(format!("no edge {:?} -> {:?}", graph.vertices[w[0]], graph.vertices[w[1]])))?;
            edges.push(graph.edges[*e]);
        }
        Ok(Route { origin: graph.vertices[first], edges })
    }

    /// Text form: one `x,y,mode` line per vertex.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in self.vertices() {
            let _ = writeln!(s, "{},{},{}", v.cell.x, v.cell.y, v.mode.as_str());
        }
        s
    }

    pub fn parse(graph: &CourtGraph, text: &str) -> Result<Self> {
        let mut vs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || Error::MalformedRoute(format!("bad line '{line}'"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let x = parts[0].trim().parse().map_err(|_| bad())?;
            let y = parts[1].trim().parse().map_err(|_| bad())?;
            let m = SailingMode::parse(parts[2]).ok_or_else(bad)?;
            vs.push((Cell::new(x, y), m));
        }
        Self::from_vertices(graph, &vs)
    }
}

/// Edge prices for one static field, `None` where infeasible.
pub fn price_edges(graph: &CourtGraph, field: &WindField, polar: &PolarTable, m: &EdgeCostModel) -> Vec<Option<f64>> {
    graph.edges.iter().map(|e| edge_cost(e, field.at(e.from.cell), polar, m)).collect()
}

/// Single-pass labels of a DAG relaxation.
#[derive(Debug, Clone)]
pub struct Labels {
    pub cost: Vec<f64>,
    pub hops: Vec<u32>,
    pub pred: Vec<Option<EdgeId>>,
}

impl Labels {
    pub fn reached(&self, v: VertexId) -> bool {
        self.cost[v].is_finite()
    }

    pub fn path_to(&self, graph: &CourtGraph, v: VertexId) -> Vec<EdgeId> {
        let mut edges = Vec::new();
        let mut cur = v;
        while let Some(e) = self.pred[cur] {
            edges.push(e);
            cur = graph.endpoints[e].0;
        }
        edges.reverse();
        edges
    }

    fn vertex_path(&self, graph: &CourtGraph, v: VertexId) -> Vec<Vertex> {
        let mut out = vec![graph.vertices[v]];
        let mut cur = v;
        while let Some(e) = self.pred[cur] {
            cur = graph.endpoints[e].0;
            out.push(graph.vertices[cur]);
        }
        out.reverse();
        out
    }
}

/// Shortest paths from `sources` in topological order. Ties on cost go to
/// fewer edges, then to the lexicographically smaller vertex sequence.
pub fn relax_from<F>(graph: &CourtGraph, sources: &[VertexId], mut price: F) -> Labels
where
    F: FnMut(EdgeId) -> Option<f64>,
{
    let n = graph.vertices.len();
    let mut labels = Labels { cost: vec![f64::INFINITY; n], hops: vec![u32::MAX; n], pred: vec![None; n] };
    let mut first = usize::MAX;
    let mut sorted_sources = sources.to_vec();
    sorted_sources.sort_by_key(|s| graph.vertices[*s]);
    for &s in &sorted_sources {
        if !labels.reached(s) {
            labels.cost[s] = 0.0;
            labels.hops[s] = 0;
            first = first.min(graph.topo_position[s]);
        }
    }
    if first == usize::MAX {
        return labels;
    }
    for &u in &graph.topo_order[first..] {
        if !labels.reached(u) {
            continue;
        }
        for &e in &graph.out_edges[u] {
            let Some(c) = price(e) else { continue };
            let v = graph.endpoints[e].1;
            let cand = labels.cost[u] + c;
            let hops = labels.hops[u] + 1;
            let better = match cand.partial_cmp(&labels.cost[v]).unwrap_or(Ordering::Greater) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => match hops.cmp(&labels.hops[v]) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => {
                        let old_from = graph.endpoints[labels.pred[v].expect("equal finite label has a pred")].0;
                        labels.vertex_path(graph, u) < labels.vertex_path(graph, old_from)
                    }
                },
            };
            if better {
                labels.cost[v] = cand;
                labels.hops[v] = hops;
                labels.pred[v] = Some(e);
            }
        }
    }
    labels
}

/// The exact minimum-cost start-to-goal route under a static field.
pub fn exact_min_path(
    graph: &CourtGraph,
    field: &WindField,
    polar: &PolarTable,
    m: &EdgeCostModel,
) -> Result<(Route, f64)> {
    let labels = relax_from(graph, &graph.starts, |e| {
        let edge = &graph.edges[e];
        edge_cost(edge, field.at(edge.from.cell), polar, m)
    });
    let best = graph
        .goals
        .iter()
        .copied()
        .filter(|g| labels.reached(*g))
        .min_by(|a, b| {
            labels.cost[*a]
                .total_cmp(&labels.cost[*b])
                .then(labels.hops[*a].cmp(&labels.hops[*b]))
                .then_with(|| labels.vertex_path(graph, *a).cmp(&labels.vertex_path(graph, *b)))
        })
        .ok_or(Error::NoFeasibleRoute)?;
    let path = labels.path_to(graph, best);
    let origin_id = path.first().map_or(best, |e| graph.endpoints[*e].0);
    let route = Route { origin: graph.vertices[origin_id], edges: path.iter().map(|e| graph.edges[*e]).collect() };
    Ok((route, labels.cost[best]))
}

/// Elapsed time along `route` through a time-varying scenario. Each edge is
/// priced with the wind at its from-cell in the field current at the moment
/// the edge starts.
pub fn route_cost(route: &Route, scenario: &Scenario, polar: &PolarTable, m: &EdgeCostModel) -> Option<f64> {
    let mut elapsed = 0.0;
    for e in &route.edges {
        let wind = scenario.field_at(elapsed).at(e.from.cell);
        elapsed += edge_cost(e, wind, polar, m)?;
    }
    Some(elapsed)
}

/// Cost of `route` with every edge priced on one field.
pub fn static_route_cost(route: &Route, field: &WindField, polar: &PolarTable, m: &EdgeCostModel) -> Option<f64> {
    let mut total = 0.0;
    for e in &route.edges {
        total += edge_cost(e, field.at(e.from.cell), polar, m)?;
    }
    Some(total)
}
