//! The static world: court grid, navigability, gust-fall map and the boat polar.
//!
//! Coordinates are `(x, y)` with `x` growing eastwards and `y` growing
//! northwards. Wind angles are the direction the wind blows FROM, in degrees
//! clockwise from north.

use std::collections::VecDeque;
use std::fmt;

use serde::Deserialize;

use crate::error::{Error, Result};

/// A grid cell, `x` east and `y` north.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        (self.x - other.x).unsigned_abs() + (self.y - other.y).unsigned_abs()
    }

    pub fn dist2(self, other: Cell) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }
}

// Cells order by row first: lowest (y, x) wins ties everywhere.
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Tack side. The wind comes over the starboard (right) side on starboard tack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SailingMode {
    Port,
    Starboard,
}

impl SailingMode {
    pub const ALL: [SailingMode; 2] = [SailingMode::Port, SailingMode::Starboard];

    pub fn index(self) -> usize {
        match self {
            SailingMode::Port => 0,
            SailingMode::Starboard => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SailingMode::Port => "port",
            SailingMode::Starboard => "starboard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "port" | "P" | "p" => Some(SailingMode::Port),
            "starboard" | "S" | "s" => Some(SailingMode::Starboard),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CourtSpec {
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    /// Row-major, index `y * width + x`.
    pub navigable: Vec<bool>,
    /// Row-major discrete distribution over navigable cells.
    pub gust_fall_prob: Vec<f64>,
    pub start: Cell,
    pub goal: Cell,
}

impl CourtSpec {
    /// Builds a court and checks every invariant. `gust_prob`, when given, is
    /// renormalized over navigable cells; otherwise it is uniform.
    pub fn new(
        width: usize,
        height: usize,
        cell_size_m: f64,
        navigable: Vec<bool>,
        gust_prob: Option<Vec<f64>>,
        start: Cell,
        goal: Cell,
        gusts_enabled: bool,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::MalformedCourt("width and height must be positive".into()));
        }
        if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
            return Err(Error::MalformedCourt("cell_size_m must be positive".into()));
        }
        if navigable.len() != width * height {
            return Err(Error::MalformedCourt("navigable grid has wrong size".into()));
        }
        let mut court = CourtSpec {
            width,
            height,
            cell_size_m,
            navigable,
            gust_fall_prob: Vec::new(),
            start,
            goal,
        };
        if !court.in_bounds(start) {
            return Err(Error::OutOfBounds("start", (start.x, start.y)));
        }
        if !court.in_bounds(goal) {
            return Err(Error::OutOfBounds("goal", (goal.x, goal.y)));
        }
        if !court.is_navigable(start) {
            return Err(Error::StartNotNavigable);
        }
        if !court.is_navigable(goal) {
            return Err(Error::GoalNotNavigable);
        }
        if !court.four_connected(start, goal) {
            return Err(Error::GoalUnreachable);
        }

        let raw = match gust_prob {
            Some(p) => {
                if p.len() != width * height {
                    return Err(Error::MalformedCourt("gust_prob grid has wrong size".into()));
                }
                if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::MalformedCourt("gust_prob entries must be finite and >= 0".into()));
                }
                p
            }
            None => vec![1.0; width * height],
        };
        let masked: Vec<f64> = raw
            .iter()
            .zip(&court.navigable)
            .map(|(p, nav)| if *nav { *p } else { 0.0 })
            .collect();
        let total: f64 = masked.iter().sum();
        court.gust_fall_prob = if total > 0.0 {
            masked.iter().map(|p| p / total).collect()
        } else if gusts_enabled {
            return Err(Error::ZeroGustProbability);
        } else {
            masked
        };
        Ok(court)
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn is_navigable(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.navigable[self.index(c)]
    }

    /// Navigable cells in row-major order.
    pub fn navigable_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count())
            .filter(|i| self.navigable[*i])
            .map(|i| self.cell_at(i))
    }

    pub fn navigable_count(&self) -> usize {
        self.navigable.iter().filter(|n| **n).count()
    }

    pub fn neighbors4(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        const D: [(i32, i32); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        D.iter()
            .map(move |(dx, dy)| Cell::new(c.x + dx, c.y + dy))
            .filter(|n| self.in_bounds(*n))
    }

    pub fn area_km2(&self) -> f64 {
        self.cell_count() as f64 * self.cell_size_m * self.cell_size_m / 1e6
    }

    fn four_connected(&self, from: Cell, to: Cell) -> bool {
        let mut seen = vec![false; self.cell_count()];
        let mut queue = VecDeque::from([from]);
        seen[self.index(from)] = true;
        while let Some(c) = queue.pop_front() {
            if c == to {
                return true;
            }
            for n in self.neighbors4(c) {
                let i = self.index(n);
                if self.navigable[i] && !seen[i] {
                    seen[i] = true;
                    queue.push_back(n);
                }
            }
        }
        false
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CourtDocument {
    width: usize,
    height: usize,
    cell_size_m: f64,
    navigable: Vec<String>,
    #[serde(default)]
    gust_prob: Option<Vec<Vec<f64>>>,
    start: [i32; 2],
    goal: [i32; 2],
}

/// Parses a JSON court document.
///
/// `navigable` lists rows as they appear on a map: the first string is the
/// northernmost row (`y = height - 1`). `gust_prob` follows the same row order.
pub fn load_court(document: &str, gusts_enabled: bool) -> Result<CourtSpec> {
    let doc: CourtDocument =
        serde_json::from_str(document).map_err(|e| Error::MalformedCourt(e.to_string()))?;
    if doc.navigable.len() != doc.height {
        return Err(Error::MalformedCourt(format!(
            "expected {} navigable rows, got {}",
            doc.height,
            doc.navigable.len()
        )));
    }
    let mut navigable = vec![false; doc.width * doc.height];
    for (row, line) in doc.navigable.iter().enumerate() {
        let y = doc.height - 1 - row;
        let chars: Vec<char> = line.chars().collect();
        if chars.len() != doc.width {
            return Err(Error::MalformedCourt(format!("row {row} has {} cells", chars.len())));
        }
        for (x, ch) in chars.into_iter().enumerate() {
            navigable[y * doc.width + x] = match ch {
                '.' => true,
                '#' => false,
                other => return Err(Error::MalformedCourt(format!("unexpected cell '{other}'"))),
            };
        }
    }
    let gust_prob = match doc.gust_prob {
        Some(rows) => {
            if rows.len() != doc.height || rows.iter().any(|r| r.len() != doc.width) {
                return Err(Error::MalformedCourt("gust_prob must be height x width".into()));
            }
            let mut flat = vec![0.0; doc.width * doc.height];
            for (row, values) in rows.iter().enumerate() {
                let y = doc.height - 1 - row;
                flat[y * doc.width..(y + 1) * doc.width].copy_from_slice(values);
            }
            Some(flat)
        }
        None => None,
    };
    CourtSpec::new(
        doc.width,
        doc.height,
        doc.cell_size_m,
        navigable,
        gust_prob,
        Cell::new(doc.start[0], doc.start[1]),
        Cell::new(doc.goal[0], doc.goal[1]),
        gusts_enabled,
    )
}

/// Boat speed as a function of true wind angle and wind speed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarTable {
    /// Degrees, ascending, from 0 to 180.
    pub angle_grid: Vec<f64>,
    /// m/s, ascending.
    pub speed_grid: Vec<f64>,
    /// `boat_speed[angle][speed]`, m/s.
    pub boat_speed: Vec<Vec<f64>>,
    pub no_go_angle_deg: f64,
}

pub const DEFAULT_POLAR_CSV: &str = include_str!("../data/default_polar.csv");
pub const DEFAULT_NO_GO_DEG: f64 = 30.0;

impl PolarTable {
    pub fn new(
        angle_grid: Vec<f64>,
        speed_grid: Vec<f64>,
        boat_speed: Vec<Vec<f64>>,
        no_go_angle_deg: f64,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::MalformedPolar(m.to_string()));
        if angle_grid.len() < 2 || speed_grid.is_empty() {
            return bad("need at least two angles and one wind speed");
        }
        if angle_grid[0] != 0.0 || *angle_grid.last().unwrap() != 180.0 {
            return bad("angle grid must cover [0, 180]");
        }
        if angle_grid.windows(2).any(|w| w[0] >= w[1]) || speed_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("grids must be strictly ascending");
        }
        if speed_grid[0] < 0.0 {
            return bad("wind speeds must be >= 0");
        }
        if !(0.0..180.0).contains(&no_go_angle_deg) {
            return bad("no-go angle must be in [0, 180)");
        }
        if boat_speed.len() != angle_grid.len() || boat_speed.iter().any(|r| r.len() != speed_grid.len()) {
            return bad("boat speed matrix has wrong shape");
        }
        for (a, row) in angle_grid.iter().zip(&boat_speed) {
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("boat speeds must be finite and >= 0");
            }
            if *a < no_go_angle_deg && row.iter().any(|v| *v != 0.0) {
                return Err(Error::MalformedPolar(format!("non-zero speed at {a} deg inside the no-go zone")));
            }
            if row.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::MalformedPolar(format!(
                    "boat speed decreases with wind speed at {a} deg"
                )));
            }
        }
        Ok(PolarTable { angle_grid, speed_grid, boat_speed, no_go_angle_deg })
    }

    /// Parses the CSV layout: header row of wind speeds (first cell is a
    /// label), then one row per angle with boat speeds.
    pub fn from_csv(text: &str, no_go_angle_deg: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::MalformedPolar(format!("not a number: '{s}'")))
        };
        let headers = reader.headers()?.clone();
        let speed_grid = headers.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
        let mut angle_grid = Vec::new();
        let mut boat_speed = Vec::new();
        for record in reader.records() {
            let record = record?;
            let mut fields = record.iter();
            let angle = fields.next().ok_or_else(|| Error::MalformedPolar("empty row".into()))?;
            angle_grid.push(parse(angle)?);
            boat_speed.push(fields.map(parse).collect::<Result<Vec<_>>>()?);
        }
        Self::new(angle_grid, speed_grid, boat_speed, no_go_angle_deg)
    }

    pub fn default_table() -> Self {
        Self::from_csv(DEFAULT_POLAR_CSV, DEFAULT_NO_GO_DEG).expect("bundled polar is valid")
    }

    /// Boat speed at a true wind angle (any real, folded into [0, 180]) and
    /// wind speed (clamped to the grid). Bilinear between table nodes, zero in
    /// the no-go zone.
    pub fn speed(&self, true_wind_angle_deg: f64, wind_speed_mps: f64) -> f64 {
        let a = fold_angle(true_wind_angle_deg);
        if a < self.no_go_angle_deg {
            return 0.0;
        }
        let (i, ta) = bracket(&self.angle_grid, a);
        let (j, tw) = bracket(&self.speed_grid, wind_speed_mps);
        let at = |ii: usize, jj: usize| self.boat_speed[ii][jj];
        let i1 = (i + 1).min(self.angle_grid.len() - 1);
        let j1 = (j + 1).min(self.speed_grid.len() - 1);
        let lo = at(i, j) + (at(i, j1) - at(i, j)) * tw;
        let hi = at(i1, j) + (at(i1, j1) - at(i1, j)) * tw;
        (lo + (hi - lo) * ta).max(0.0)
    }
}

pub fn polar_speed(polar: &PolarTable, true_wind_angle_deg: f64, wind_speed_mps: f64) -> f64 {
    polar.speed(true_wind_angle_deg, wind_speed_mps)
}

/// Wraps into [0, 360).
pub fn wrap_angle(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 { 0.0 } else { w }
}

/// Folds any angle onto [0, 180] so that `a` and `360 - a` coincide.
pub fn fold_angle(deg: f64) -> f64 {
    // Folding |deg| keeps a and -a bit-identical.
    let w = deg.abs() % 360.0;
    if w > 180.0 { 360.0 - w } else { w }
}

// Index of the lower node and the interpolation weight; clamps outside the grid.
fn bracket(grid: &[f64], v: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    if v <= grid[0] {
        return (0, 0.0);
    }
    if v >= grid[last] {
        return (last, 0.0);
    }
    let i = grid.partition_point(|g| *g <= v) - 1;
    (i, (v - grid[i]) / (grid[i + 1] - grid[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn open_court_doc(w: usize, h: usize) -> String {
        let rows: Vec<String> = (0..h).map(|_| ".".repeat(w)).collect();
        serde_json::json!({
            "width": w, "height": h, "cell_size_m": 50.0,
            "navigable": rows, "start": [0, 0], "goal": [w - 1, h - 1]
        })
        .to_string()
    }

    #[test]
    fn uniform_gust_probability() {
        let court = load_court(&open_court_doc(4, 4), true).unwrap();
        assert!(court.gust_fall_prob.iter().all(|p| *p == 1.0 / 16.0));
    }

    #[test]
    fn fifty_by_fifty_court_area() {
        let court = load_court(&open_court_doc(50, 50), true).unwrap();
        assert!((court.area_km2() - 6.25).abs() < 1e-12);
    }

    #[test]
    fn start_on_blocked_cell_is_rejected() {
        let doc = serde_json::json!({
            "width": 3, "height": 1, "cell_size_m": 50.0,
            "navigable": ["#.."], "start": [0, 0], "goal": [2, 0]
        });
        let err = load_court(&doc.to_string(), true).unwrap_err();
        assert_eq!(err.to_string(), "start not navigable");
    }

    #[test]
    fn unreachable_goal_is_rejected() {
        let doc = serde_json::json!({
            "width": 3, "height": 1, "cell_size_m": 50.0,
            "navigable": [".#."], "start": [0, 0], "goal": [2, 0]
        });
        assert!(matches!(load_court(&doc.to_string(), true), Err(Error::GoalUnreachable)));
    }

    #[test]
    fn rows_are_read_north_first() {
        let doc = serde_json::json!({
            "width": 2, "height": 2, "cell_size_m": 10.0,
            "navigable": ["#.", ".."], "start": [0, 0], "goal": [1, 1]
        });
        let court = load_court(&doc.to_string(), true).unwrap();
        assert!(!court.is_navigable(Cell::new(0, 1)));
        assert_eq!(court.gust_fall_prob[court.index(Cell::new(0, 1))], 0.0);
        assert!((court.gust_fall_prob.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gust_map_renormalized_and_masked() {
        let doc = serde_json::json!({
            "width": 2, "height": 1, "cell_size_m": 10.0, "navigable": [".."],
            "gust_prob": [[3.0, 1.0]], "start": [0, 0], "goal": [1, 0]
        });
        let court = load_court(&doc.to_string(), true).unwrap();
        assert_eq!(court.gust_fall_prob, vec![0.75, 0.25]);
    }

    #[test]
    fn zero_gust_mass_only_fails_with_gusts() {
        let doc = serde_json::json!({
            "width": 2, "height": 1, "cell_size_m": 10.0, "navigable": [".."],
            "gust_prob": [[0.0, 0.0]], "start": [0, 0], "goal": [1, 0]
        })
        .to_string();
        assert!(matches!(load_court(&doc, true), Err(Error::ZeroGustProbability)));
        assert!(load_court(&doc, false).is_ok());
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(load_court("{", true), Err(Error::MalformedCourt(_))));
        let doc = serde_json::json!({
            "width": 2, "height": 1, "cell_size_m": 10.0, "navigable": ["..."],
            "start": [0, 0], "goal": [1, 0]
        });
        assert!(matches!(load_court(&doc.to_string(), true), Err(Error::MalformedCourt(_))));
    }

    #[test]
    fn polar_dead_zone_and_fold() {
        let p = PolarTable::default_table();
        assert_eq!(p.speed(10.0, 8.0), 0.0);
        assert_eq!(p.speed(350.0, 8.0), 0.0);
        assert_eq!(p.speed(200.0, 7.3), p.speed(160.0, 7.3));
    }

    #[test]
    fn polar_identity_at_nodes() {
        let p = PolarTable::default_table();
        for (i, a) in p.angle_grid.iter().enumerate() {
            for (j, w) in p.speed_grid.iter().enumerate() {
                let expected = if *a < p.no_go_angle_deg { 0.0 } else { p.boat_speed[i][j] };
                assert_eq!(p.speed(*a, *w), expected, "angle {a} wind {w}");
            }
        }
    }

    #[test]
    fn polar_clamps_wind_speed() {
        let p = PolarTable::default_table();
        assert_eq!(p.speed(110.0, 40.0), p.speed(110.0, 15.0));
        assert_eq!(p.speed(110.0, 0.0), 0.0);
    }

    #[test]
    fn polar_rejects_decreasing_rows() {
        let csv = "a,0,10\n0,0,0\n90,3,2\n180,1,1\n";
        assert!(PolarTable::from_csv(csv, 30.0).is_err());
        let ok = "a,0,10\n0,0,0\n90,2,3\n180,1,1\n";
        assert!(PolarTable::from_csv(ok, 30.0).is_ok());
    }

    #[test]
    fn bundled_polar_peaks_at_110() {
        let p = PolarTable::default_table();
        for w in [4.0, 8.0, 12.0] {
            let best = (0..=180).map(|a| (p.speed(a as f64, w), a)).fold((0.0, 0), |acc, x| {
                if x.0 > acc.0 { x } else { acc }
            });
            assert_eq!(best.1, 110);
        }
    }

    proptest! {
        #[test]
        fn polar_fold_symmetry(a in -720.0f64..720.0, w in 0.0f64..20.0) {
            let p = PolarTable::default_table();
            prop_assert_eq!(p.speed(a, w), p.speed(-a, w));
        }

        #[test]
        fn polar_lipschitz_within_cells(a in 30.0f64..179.0, d in 0.0f64..1.0, w in 0.0f64..15.0) {
            let p = PolarTable::default_table();
            let (i, _) = bracket(&p.angle_grid, a);
            let b = (a + d).min(p.angle_grid[(i + 1).min(p.angle_grid.len() - 1)]);
            let span = p.angle_grid[i + 1] - p.angle_grid[i];
            let max_jump = p.boat_speed[i].iter().zip(&p.boat_speed[i + 1])
                .map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            let bound = max_jump / span * (b - a) + 1e-12;
            prop_assert!((p.speed(a, w) - p.speed(b, w)).abs() <= bound);
        }

        #[test]
        fn polar_non_negative(a in -360.0f64..360.0, w in 0.0f64..30.0) {
            prop_assert!(PolarTable::default_table().speed(a, w) >= 0.0);
        }
    }
}
