//! Wind scenario generation: an initial field from a few premises, then a
//! 10-second step loop of spreading Gaussian perturbations plus gusts.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::court::{Cell, CourtSpec, wrap_angle};
use crate::error::{Error, Result};

pub const STEP_SECONDS: f64 = 10.0;
pub const DEFAULT_DECAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindCellState {
    pub speed_mps: f64,
    pub angle_deg: f64,
}

impl WindCellState {
    pub fn new(speed_mps: f64, angle_deg: f64) -> Self {
        WindCellState { speed_mps: speed_mps.max(0.0), angle_deg: wrap_angle(angle_deg) }
    }

    fn shifted(self, dspeed: f64, dangle: f64) -> Self {
        WindCellState::new(self.speed_mps + dspeed, self.angle_deg + dangle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindField {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<WindCellState>,
}

impl WindField {
    pub fn uniform(width: usize, height: usize, state: WindCellState) -> Self {
        WindField { width, height, cells: vec![state; width * height] }
    }

    pub fn at(&self, c: Cell) -> WindCellState {
        self.cells[c.y as usize * self.width + c.x as usize]
    }

    pub fn set(&mut self, c: Cell, s: WindCellState) {
        self.cells[c.y as usize * self.width + c.x as usize] = s;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `fields[i]` is the wind at `t = 10 i` seconds.
    pub fields: Vec<WindField>,
    pub seed: u64,
}

impl Scenario {
    /// A scenario holding one field for every step, used for static pricing.
    pub fn constant(field: WindField, steps: usize, seed: u64) -> Self {
        Scenario { fields: vec![field; steps.max(1)], seed }
    }

    /// Field in effect at `elapsed_s`; the last field persists past the end.
    pub fn field_at(&self, elapsed_s: f64) -> &WindField {
        let i = (elapsed_s / STEP_SECONDS).floor();
        let i = if i.is_finite() && i > 0.0 { i as usize } else { 0 };
        &self.fields[i.min(self.fields.len() - 1)]
    }

    pub fn steps(&self) -> usize {
        self.fields.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateParams {
    pub mean_angle_deg: f64,
    pub std_angle_deg: f64,
    pub mean_speed_mps: f64,
    pub std_speed_mps: f64,
    /// Fraction of the mean speed lost at the west edge.
    #[serde(default)]
    pub west_east_speed_slope: f64,
    /// Extra angle at the west edge (wind turning perpendicular to the coast).
    #[serde(default)]
    pub west_angle_perp_bias_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbParams {
    pub sigma_speed_mps: f64,
    pub sigma_angle_deg: f64,
    pub seed_cell_fraction: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_decay() -> f64 {
    DEFAULT_DECAY
}

/// Gust arrival and shape. Lengths are in seconds; deltas shift the wind at
/// the gust centre and spread like perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GustParams {
    pub enabled: bool,
    pub mean_inter_gust_s: f64,
    pub mean_length_s: f64,
    pub std_length_s: f64,
    pub mean_angle_delta_deg: f64,
    pub std_angle_delta_deg: f64,
    pub mean_speed_delta_mps: f64,
    pub std_speed_delta_mps: f64,
}

impl GustParams {
    pub fn disabled() -> Self {
        GustParams {
            enabled: false,
            mean_inter_gust_s: 1.0,
            mean_length_s: 1.0,
            std_length_s: 0.0,
            mean_angle_delta_deg: 0.0,
            std_angle_delta_deg: 0.0,
            mean_speed_delta_mps: 0.0,
            std_speed_delta_mps: 0.0,
        }
    }

    /// Per-slot arrival probability.
    pub fn arrival_probability(&self) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        (STEP_SECONDS / self.mean_inter_gust_s).min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mean_inter_gust_s > 0.0
            && self.mean_length_s > 0.0
            && self.std_length_s >= 0.0
            && self.std_angle_delta_deg >= 0.0
            && self.std_speed_delta_mps >= 0.0;
        if ok { Ok(()) } else { Err(Error::Config("invalid gust parameters".into())) }
    }
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_speed_mps >= 0.0
            && self.sigma_angle_deg >= 0.0
            && self.seed_cell_fraction > 0.0
            && self.seed_cell_fraction <= 1.0
            && (0.0..=1.0).contains(&self.decay);
        if ok { Ok(()) } else { Err(Error::Config("invalid perturbation parameters".into())) }
    }
}

impl InitialStateParams {
    pub fn validate(&self) -> Result<()> {
        if self.std_angle_deg >= 0.0 && self.std_speed_mps >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config("initial-state standard deviations must be >= 0".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveGust {
    pub center_cell: Cell,
    pub remaining_s: f64,
    pub angle_delta_deg: f64,
    pub speed_delta_mps: f64,
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("std validated >= 0")
}

pub fn gen_initial_state(court: &CourtSpec, p: &InitialStateParams, seed: u64) -> WindField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = court.width as f64;
    let mut cells = Vec::with_capacity(court.cell_count());
    for _ in 0..court.height {
        for x in 0..court.width {
            let west = 1.0 - x as f64 / w;
            let mean_speed = p.mean_speed_mps * (1.0 - p.west_east_speed_slope * west);
            let mean_angle = p.mean_angle_deg + p.west_angle_perp_bias_deg * west;
            let speed = normal(mean_speed, p.std_speed_mps).sample(&mut rng);
            let angle = normal(mean_angle, p.std_angle_deg).sample(&mut rng);
            cells.push(WindCellState::new(speed, angle));
        }
    }
    WindField { width: court.width, height: court.height, cells }
}

/// Breadth-first spread of per-seed deltas over navigable 4-neighbours.
///
/// Each reached cell takes the delta of its nearest seed (hop distance, ties to
/// the lowest `(y, x)` seed) scaled by `decay^hops`. Seeds listed twice have
/// their deltas summed. Returns the new field and the number of updated cells.
pub fn spread_changes(
    field: &WindField,
    court: &CourtSpec,
    seeds: &[(Cell, (f64, f64))],
    decay: f64,
) -> (WindField, usize) {
    let mut merged: Vec<(Cell, (f64, f64))> = Vec::with_capacity(seeds.len());
    let mut sorted = seeds.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (c, d) in sorted {
        if !court.is_navigable(c) {
            continue;
        }
        match merged.last_mut() {
            Some((last, acc)) if *last == c => {
                acc.0 += d.0;
                acc.1 += d.1;
            }
            _ => merged.push((c, d)),
        }
    }

    let mut out = field.clone();
    let mut owner: Vec<Option<(usize, u32)>> = vec![None; court.cell_count()];
    let mut queue = VecDeque::new();
    // Seeds enqueue in (y, x) order, so each BFS level is ordered by owner and
    // the first discovery of a cell comes from its lowest nearest seed.
    for (k, (c, _)) in merged.iter().enumerate() {
        owner[court.index(*c)] = Some((k, 0));
        queue.push_back(*c);
    }
    let mut updates = 0;
    while let Some(c) = queue.pop_front() {
        let (k, hops) = owner[court.index(c)].expect("queued cells are owned");
        let scale = decay.powi(hops as i32);
        let (ds, da) = merged[k].1;
        out.set(c, field.at(c).shifted(ds * scale, da * scale));
        updates += 1;
        for n in court.neighbors4(c) {
            let i = court.index(n);
            if court.navigable[i] && owner[i].is_none() {
                owner[i] = Some((k, hops + 1));
                queue.push_back(n);
            }
        }
    }
    (out, updates)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub field: WindField,
    pub active: Vec<ActiveGust>,
    pub gust_arrived: bool,
}

/// Advances the wind by one 10-second slot.
pub fn step<R: Rng>(
    field: &WindField,
    p: &PerturbParams,
    g: &GustParams,
    active: &[ActiveGust],
    court: &CourtSpec,
    rng: &mut R,
) -> StepOutcome {
    let navigable: Vec<Cell> = court.navigable_cells().collect();
    let n = navigable.len();
    let k = ((p.seed_cell_fraction * n as f64).ceil() as usize).clamp(1, n);
    let speed_noise = normal(0.0, p.sigma_speed_mps);
    let angle_noise = normal(0.0, p.sigma_angle_deg);
    let mut picked = sample(rng, n, k).into_vec();
    picked.sort_unstable();
    let seeds: Vec<(Cell, (f64, f64))> = picked
        .into_iter()
        .map(|i| (navigable[i], (speed_noise.sample(rng), angle_noise.sample(rng))))
        .collect();
    let (mut next, _) = spread_changes(field, court, &seeds, p.decay);

    let mut gusts = active.to_vec();
    let gust_arrived = g.enabled && rng.random_bool(g.arrival_probability());
    if gust_arrived {
        let picker = WeightedIndex::new(&court.gust_fall_prob).expect("gust map validated at load");
        let center_cell = court.cell_at(picker.sample(rng));
        let length = normal(g.mean_length_s, g.std_length_s).sample(rng);
        let angle_delta_deg = normal(g.mean_angle_delta_deg, g.std_angle_delta_deg).sample(rng);
        let speed_delta_mps = normal(g.mean_speed_delta_mps, g.std_speed_delta_mps).sample(rng);
        if length > 0.0 {
            gusts.push(ActiveGust { center_cell, remaining_s: length, angle_delta_deg, speed_delta_mps });
        }
    }
    if !gusts.is_empty() {
        let seeds: Vec<(Cell, (f64, f64))> = gusts
            .iter()
            .map(|gu| (gu.center_cell, (gu.speed_delta_mps, gu.angle_delta_deg)))
            .collect();
        next = spread_changes(&next, court, &seeds, p.decay).0;
        for gu in &mut gusts {
            gu.remaining_s -= STEP_SECONDS;
        }
        gusts.retain(|gu| gu.remaining_s > 0.0);
    }
    StepOutcome { field: next, active: gusts, gust_arrived }
}

pub fn simulate_scenario(
    court: &CourtSpec,
    initial: &WindField,
    steps: usize,
    p: &PerturbParams,
    g: &GustParams,
    seed: u64,
) -> Result<Scenario> {
    if steps == 0 {
        return Err(Error::Config("a scenario needs at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fields = Vec::with_capacity(steps);
    fields.push(initial.clone());
    let mut active = Vec::new();
    while fields.len() < steps {
        let out = step(fields.last().unwrap(), p, g, &active, court, &mut rng);
        active = out.active;
        fields.push(out.field);
    }
    Ok(Scenario { fields, seed })
}

const MAGIC: &[u8; 4] = b"WSC1";

/// Writes the binary scenario layout: magic, u32 width, height, steps, u64
/// seed, then `(speed, angle)` f32 pairs per cell, row-major, step by step.
pub fn write_scenario<W: Write>(s: &Scenario, mut w: W) -> Result<()> {
    let f0 = &s.fields[0];
    w.write_all(MAGIC)?;
    w.write_all(&(f0.width as u32).to_le_bytes())?;
    w.write_all(&(f0.height as u32).to_le_bytes())?;
    w.write_all(&(s.fields.len() as u32).to_le_bytes())?;
    w.write_all(&s.seed.to_le_bytes())?;
    let mut buf = Vec::with_capacity(s.fields.len() * f0.cells.len() * 8);
    for f in &s.fields {
        for c in &f.cells {
            buf.extend_from_slice(&(c.speed_mps as f32).to_le_bytes());
            buf.extend_from_slice(&(c.angle_deg as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_scenario<R: Read>(mut r: R) -> Result<Scenario> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::MalformedScenario(m.to_string());
    if bytes.len() < 24 || &bytes[0..4] != MAGIC {
        return Err(bad("missing WSC1 header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (width, height, steps) = (u32_at(4), u32_at(8), u32_at(12));
    let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let body = &bytes[24..];
    if steps == 0 || width == 0 || height == 0 {
        return Err(bad("empty scenario"));
    }
    if body.len() != steps * width * height * 8 {
        return Err(bad("body length does not match header"));
    }
    let f32_at = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as f64;
    let per_field = width * height;
    let fields = (0..steps)
        .map(|t| WindField {
            width,
            height,
            cells: (0..per_field)
                .map(|i| {
                    let o = (t * per_field + i) * 8;
                    WindCellState { speed_mps: f32_at(o), angle_deg: f32_at(o + 4) }
                })
                .collect(),
        })
        .collect();
    Ok(Scenario { fields, seed })
}

/// One CSV row per `(t, y, x)`.
pub fn write_scenario_csv<W: Write>(s: &Scenario, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_s", "y", "x", "speed_mps", "angle_deg"])?;
    for (t, f) in s.fields.iter().enumerate() {
        for y in 0..f.height {
            for x in 0..f.width {
                let c = f.cells[y * f.width + x];
                out.write_record(&[
                    (t as f64 * STEP_SECONDS).to_string(),
                    y.to_string(),
                    x.to_string(),
                    c.speed_mps.to_string(),
                    c.angle_deg.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::court::CourtSpec;

    fn open_court(w: usize, h: usize) -> CourtSpec {
        CourtSpec::new(w, h, 50.0, vec![true; w * h], None, Cell::new(0, 0), Cell::new(w as i32 - 1, h as i32 - 1), true)
            .unwrap()
    }

    fn quiet_params() -> InitialStateParams {
        InitialStateParams {
            mean_angle_deg: 270.0,
            std_angle_deg: 0.0,
            mean_speed_mps: 6.0,
            std_speed_mps: 0.0,
            west_east_speed_slope: 0.0,
            west_angle_perp_bias_deg: 0.0,
        }
    }

    #[test]
    fn degenerate_initial_state() {
        let f = gen_initial_state(&open_court(4, 4), &quiet_params(), 1);
        assert!(f.cells.iter().all(|c| c.speed_mps == 6.0 && c.angle_deg == 270.0));
    }

    #[test]
    fn initial_state_premises() {
        let p = InitialStateParams { west_east_speed_slope: 0.5, west_angle_perp_bias_deg: 20.0, ..quiet_params() };
        let f = gen_initial_state(&open_court(4, 1), &p, 1);
        assert_eq!(f.at(Cell::new(0, 0)).speed_mps, 3.0);
        assert_eq!(f.at(Cell::new(0, 0)).angle_deg, 290.0);
        assert!(f.at(Cell::new(3, 0)).speed_mps > f.at(Cell::new(0, 0)).speed_mps);
    }

    #[test]
    fn initial_state_is_seeded() {
        let p = InitialStateParams { std_angle_deg: 10.0, std_speed_mps: 1.0, ..quiet_params() };
        let court = open_court(5, 5);
        assert_eq!(gen_initial_state(&court, &p, 9), gen_initial_state(&court, &p, 9));
        assert_ne!(gen_initial_state(&court, &p, 9), gen_initial_state(&court, &p, 10));
    }

    #[test]
    fn single_seed_geometric_attenuation() {
        let court = open_court(5, 1);
        let f = WindField::uniform(5, 1, WindCellState::new(5.0, 90.0));
        let (out, updates) = spread_changes(&f, &court, &[(Cell::new(0, 0), (2.0, 0.0))], 0.5);
        let speeds: Vec<f64> = out.cells.iter().map(|c| c.speed_mps).collect();
        assert_eq!(speeds, vec![7.0, 6.0, 5.5, 5.25, 5.125]);
        assert_eq!(updates, 5);
    }

    #[test]
    fn all_cells_seeded_is_pointwise_addition() {
        let court = open_court(3, 2);
        let f = WindField::uniform(3, 2, WindCellState::new(5.0, 10.0));
        let seeds: Vec<_> = court.navigable_cells().enumerate().map(|(i, c)| (c, (i as f64, -(i as f64)))).collect();
        let (out, _) = spread_changes(&f, &court, &seeds, 0.5);
        for (i, c) in court.navigable_cells().enumerate() {
            assert_eq!(out.at(c), WindCellState::new(5.0 + i as f64, 10.0 - i as f64));
        }
    }

    #[test]
    fn spread_skips_blocked_cells() {
        let mut nav = vec![true; 9];
        nav[4] = false;
        let court = CourtSpec::new(3, 3, 1.0, nav, None, Cell::new(0, 0), Cell::new(2, 2), true).unwrap();
        let f = WindField::uniform(3, 3, WindCellState::new(1.0, 0.0));
        let (out, updates) = spread_changes(&f, &court, &[(Cell::new(0, 0), (1.0, 0.0))], 0.5);
        assert_eq!(updates, 8);
        assert_eq!(out.at(Cell::new(1, 1)).speed_mps, 1.0);
        // (2,2) is four hops away around the hole.
        assert_eq!(out.at(Cell::new(2, 2)).speed_mps, 1.0 + 0.5f64.powi(4));
    }

    #[test]
    fn quiet_step_is_identity() {
        let court = open_court(4, 4);
        let f = gen_initial_state(&court, &quiet_params(), 3);
        let p = PerturbParams { sigma_speed_mps: 0.0, sigma_angle_deg: 0.0, seed_cell_fraction: 1e-9, decay: 0.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = step(&f, &p, &GustParams::disabled(), &[], &court, &mut rng);
        assert_eq!(out.field, f);
        assert!(out.active.is_empty());
    }

    #[test]
    fn gust_expires_after_its_last_slot() {
        let court = open_court(3, 3);
        let f = WindField::uniform(3, 3, WindCellState::new(5.0, 90.0));
        let p = PerturbParams { sigma_speed_mps: 0.0, sigma_angle_deg: 0.0, seed_cell_fraction: 0.1, decay: 0.5 };
        let gust = ActiveGust { center_cell: Cell::new(1, 1), remaining_s: 10.0, angle_delta_deg: 0.0, speed_delta_mps: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = step(&f, &p, &GustParams::disabled(), &[gust], &court, &mut rng);
        assert!(out.active.is_empty());
        assert_eq!(out.field.at(Cell::new(1, 1)).speed_mps, 6.0);
        let longer = ActiveGust { remaining_s: 25.0, ..gust };
        let out = step(&f, &p, &GustParams::disabled(), &[longer], &court, &mut rng);
        assert_eq!(out.active.len(), 1);
        assert_eq!(out.active[0].remaining_s, 15.0);
    }

    #[test]
    fn scenario_lengths_and_determinism() {
        let court = open_court(4, 4);
        let init = gen_initial_state(&court, &quiet_params(), 3);
        let p = PerturbParams { sigma_speed_mps: 0.3, sigma_angle_deg: 2.0, seed_cell_fraction: 0.1, decay: 0.5 };
        let g = GustParams {
            enabled: true,
            mean_inter_gust_s: 60.0,
            mean_length_s: 30.0,
            std_length_s: 10.0,
            mean_angle_delta_deg: 0.0,
            std_angle_delta_deg: 5.0,
            mean_speed_delta_mps: 1.0,
            std_speed_delta_mps: 0.5,
        };
        let s = simulate_scenario(&court, &init, 360, &p, &g, 11).unwrap();
        assert_eq!(s.steps(), 360);
        assert_eq!(s.fields[0], init);
        assert_eq!(s, simulate_scenario(&court, &init, 360, &p, &g, 11).unwrap());
        let one = simulate_scenario(&court, &init, 1, &p, &g, 11).unwrap();
        assert_eq!(one.fields, vec![init.clone()]);
        assert!(simulate_scenario(&court, &init, 0, &p, &g, 11).is_err());
    }

    #[test]
    fn binary_format_layout() {
        let s = Scenario {
            fields: vec![WindField::uniform(2, 1, WindCellState::new(1.5, 90.0)); 3],
            seed: 0xdead_beef,
        };
        let mut buf = Vec::new();
        write_scenario(&s, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"WSC1");
        assert_eq!(buf.len(), 24 + 3 * 2 * 8);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(buf[24..28].try_into().unwrap()), 1.5);
        assert_eq!(read_scenario(&buf[..]).unwrap(), s);
        assert!(read_scenario(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn field_lookup_clamps_to_last() {
        let mut fields = vec![WindField::uniform(1, 1, WindCellState::new(1.0, 0.0))];
        fields.push(WindField::uniform(1, 1, WindCellState::new(2.0, 0.0)));
        let s = Scenario { fields, seed: 0 };
        assert_eq!(s.field_at(9.99).cells[0].speed_mps, 1.0);
        assert_eq!(s.field_at(10.0).cells[0].speed_mps, 2.0);
        assert_eq!(s.field_at(1e6).cells[0].speed_mps, 2.0);
    }
}
