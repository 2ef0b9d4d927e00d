use regatta::court::{Cell, CourtSpec, PolarTable};
use regatta::evo::{fitness, Chromosome, EvoParams, Problem};
use regatta::graph::{route_cost, EdgeCostModel};
use regatta::windsim::{simulate_scenario, GustParams, PerturbParams, Scenario, WindCellState, WindField};

fn open_court(w: usize, h: usize, cell_size_m: f64) -> CourtSpec {
    let goal = Cell::new(w as i32 - 1, h as i32 - 1);
    CourtSpec::new(w, h, cell_size_m, vec![true; w * h], None, Cell::new(0, 0), goal, false).unwrap()
}

fn cells(v: &[(i32, i32)]) -> Chromosome {
    Chromosome::new(v.iter().map(|(x, y)| Cell::new(*x, *y)).collect())
}

fn scenarios(court: &CourtSpec, field: &WindField, n: usize) -> Vec<Scenario> {
    let perturb = PerturbParams { sigma_speed_mps: 0.6, sigma_angle_deg: 10.0, seed_cell_fraction: 0.3, decay: 0.5 };
    (0..n).map(|i| simulate_scenario(court, field, 40, &perturb, &GustParams::disabled(), 50 + i as u64).unwrap()).collect()
}

#[test]
fn single_route_fitness_against_a_million() {
    // Two 887.5 m legs at 5 m/s: 177.5 s each.
    let court = open_court(3, 1, 887.5);
    let field = WindField::uniform(3, 1, WindCellState::new(10.0, 200.0));
    let params = EvoParams { min_len: 1, max_len: 1, fitness_offset: Some(1e6), ..EvoParams::default() };
    let s = vec![Scenario::constant(field.clone(), 5, 0)];
    let p = Problem::new(court, PolarTable::default_table(), EdgeCostModel::default(), field, s, params, None).unwrap();
    assert_eq!(fitness(&cells(&[(1, 0)]), &p).unwrap(), (999645.0, 355.0));
}

#[test]
fn duplicated_scenarios_double_the_aggregate() {
    let court = open_court(6, 6, 20.0);
    let field = WindField::uniform(6, 6, WindCellState::new(7.0, 45.0));
    let one = scenarios(&court, &field, 1);
    let params = EvoParams { min_len: 1, max_len: 3, ..EvoParams::default() };
    let model = EdgeCostModel::default();
    let polar = PolarTable::default_table();
    let p1 = Problem::new(court.clone(), polar.clone(), model, field.clone(), one.clone(), params, None).unwrap();
    let p2 = Problem::new(court, polar, model, field, vec![one[0].clone(), one[0].clone()], params, None).unwrap();
    for ch in [cells(&[(2, 2)]), cells(&[(1, 3), (4, 4)]), cells(&[(3, 0), (5, 2), (5, 4)])] {
        assert_eq!(fitness(&ch, &p2).unwrap().1, 2.0 * fitness(&ch, &p1).unwrap().1);
    }
}

#[test]
fn family_minimum_summed_over_scenarios() {
    let court = open_court(5, 5, 25.0);
    let field = WindField::uniform(5, 5, WindCellState::new(6.0, 40.0));
    let params = EvoParams { min_len: 1, max_len: 2, family_cap: 3, ..EvoParams::default() };
    let p = Problem::new(
        court.clone(),
        PolarTable::default_table(),
        EdgeCostModel::default(),
        field.clone(),
        scenarios(&court, &field, 2),
        params,
        None,
    )
    .unwrap();
    let ch = cells(&[(2, 1), (3, 3)]);
    let family = p.develop(&ch);
    assert_eq!(family.len(), 3);
    // Oracle: the full route x scenario table, then min per column and sum.
    let table: Vec<Vec<f64>> = family
        .iter()
        .map(|f| p.scenarios.iter().map(|s| route_cost(&f.route, s, &p.polar, &p.model).unwrap_or(p.infeasible_penalty)).collect())
        .collect();
    let expected: f64 = (0..2).map(|s| table.iter().map(|row| row[s]).fold(f64::INFINITY, f64::min)).sum();
    let (f, agg) = fitness(&ch, &p).unwrap();
    assert_eq!(agg, expected);
    assert_eq!(f, p.fitness_offset - expected);
}
