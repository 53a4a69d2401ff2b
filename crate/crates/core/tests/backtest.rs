mod common;

use std::collections::BTreeSet;

use geomatch::backtest::*;
use geomatch::data::{Dataset, LocationId, SelectionMode};
use geomatch::preferences::{Phi, PreferenceRanking};
use geomatch::recommender::PredictionMatrix;

struct Fixture {
    data: Dataset,
    matrix: PredictionMatrix,
    rankings: Vec<PreferenceRanking>,
}

impl Fixture {
    fn new(n: usize, k: usize) -> Fixture {
        let (data, truth) = common::world(n, k, SelectionMode::ObservablesOnly, 21);
        let matrix = common::truth_matrix(&data, &truth);
        let rankings = common::rankings(&data, 21);
        Fixture { data, matrix, rankings }
    }

    fn inputs(&self) -> BacktestInputs<'_> {
        BacktestInputs { cohort: &self.data, matrix: &self.matrix, rankings: &self.rankings }
    }
}

fn config(pi_max: f64, phi: Phi, n_runs: usize) -> SimulationConfig {
    SimulationConfig { pi_max, phi, n_runs, ..Default::default() }
}

#[test]
fn compliance_assignment_examples() {
    let f = Fixture::new(2000, 4);
    let n = f.data.len() as f64;
    let a = assign_compliance(&f.data, 0.3, ComplianceMode::LinearInQuantile).unwrap();
    let outcomes = f.data.outcomes();
    let lowest = (0..outcomes.len()).min_by(|&i, &j| outcomes[i].total_cmp(&outcomes[j])).unwrap();
    let highest = (0..outcomes.len()).max_by(|&i, &j| outcomes[i].total_cmp(&outcomes[j])).unwrap();
    // m records tied at the minimum share the averaged rank (m + 1) / 2
    let m = outcomes.iter().filter(|&&y| y == outcomes[lowest]).count() as f64;
    assert!((a.pi[lowest] - 0.3 * (1.0 - m / (2.0 * n))).abs() < 1e-12);
    assert!(a.pi[lowest] > 0.29);
    assert!((a.pi[highest] - 0.3 * 0.5 / n).abs() < 1e-12);
    assert!((a.mean() - 0.15).abs() <= 1.0 / (2.0 * n));
    let c = assign_compliance(&f.data, 0.2, ComplianceMode::Constant).unwrap();
    assert!(c.pi.iter().all(|&p| p == 0.2));
    assert!(assign_compliance(&f.data, 1.5, ComplianceMode::Constant).is_err());
}

#[test]
fn zero_compliance_gives_the_zero_summary() {
    let f = Fixture::new(1000, 5);
    let s = simulate(&f.inputs(), &config(0.0, Phi::Top(3), 5)).unwrap();
    assert_eq!(s.cohort_gain.mean, 0.0);
    assert_eq!(s.complier_fraction.mean, 0.0);
    assert!(s.complier_gain.is_none());
    assert!(s.location_shift.iter().all(|r| r.after == r.before as f64 && r.delta == 0.0));
}

#[test]
fn identities_hold_every_run() {
    let f = Fixture::new(2000, 6);
    let cfg = config(0.6, Phi::Top(4), 20);
    let (_, runs) = simulate_runs(&f.inputs(), &cfg).unwrap();
    for run in &runs {
        assert_eq!(run.chosen.len(), f.data.len());
        let mut total = 0.0;
        for (i, r) in f.data.records.iter().enumerate() {
            if run.complied[i] {
                let want = f.matrix.value(i, run.chosen[i]).unwrap() - f.matrix.value(i, r.landing).unwrap();
                assert_eq!(run.gains[i], want);
                total += want;
            } else {
                assert_eq!(run.gains[i], 0.0);
                assert_eq!(run.chosen[i], r.landing);
            }
        }
        assert!((run.total_gain - total).abs() <= 1e-9 * total.abs().max(1.0));
        let complier = run.complier_gain().unwrap();
        assert!((run.cohort_gain() - complier * run.complier_fraction()).abs() < 1e-9 * complier.abs().max(1.0));
    }
}

#[test]
fn argmax_over_a_set_containing_the_actual_never_loses() {
    let f = Fixture::new(1500, 6);
    let cfg = SimulationConfig { z: 1, compliance_mode: ComplianceMode::Constant, ..config(1.0, Phi::Unrestricted, 3) };
    let (_, runs) = simulate_runs(&f.inputs(), &cfg).unwrap();
    for run in &runs {
        assert_eq!(run.compliers, f.data.len());
        assert!(run.gains.iter().all(|&g| g >= 0.0));
    }
}

#[test]
fn singleton_actual_set_never_moves() {
    let f = Fixture::new(500, 5);
    let rankings: Vec<PreferenceRanking> = f
        .data
        .records
        .iter()
        .map(|r| {
            let mut order = vec![r.landing];
            order.extend(f.matrix.locations.iter().copied().filter(|&l| l != r.landing));
            PreferenceRanking { probabilities: vec![0.0; order.len()], order }
        })
        .collect();
    let inputs = BacktestInputs { cohort: &f.data, matrix: &f.matrix, rankings: &rankings };
    let cfg = SimulationConfig { compliance_mode: ComplianceMode::Constant, ..config(1.0, Phi::Top(1), 2) };
    let (_, runs) = simulate_runs(&inputs, &cfg).unwrap();
    for run in &runs {
        assert!(run.gains.iter().all(|&g| g == 0.0));
        assert_eq!(run.chosen, f.data.landings());
    }
}

#[test]
fn one_run_equals_a_single_replication_and_is_deterministic() {
    let f = Fixture::new(1000, 5);
    let cfg = config(0.4, Phi::Top(3), 1);
    let s = simulate(&f.inputs(), &cfg).unwrap();
    let scenario = prepare(&f.inputs(), &cfg).unwrap();
    let run = simulate_run(&f.inputs(), &scenario, &cfg, 0);
    assert_eq!(s.cohort_gain.mean, run.cohort_gain());
    assert_eq!(s.complier_gain.unwrap().mean, run.complier_gain().unwrap());
    let again = simulate(&f.inputs(), &cfg).unwrap();
    assert_eq!(serde_json::to_string(&s).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn complier_fraction_tracks_mean_compliance() {
    let f = Fixture::new(3000, 5);
    let cfg = config(0.3, Phi::Top(3), 100);
    let s = simulate(&f.inputs(), &cfg).unwrap();
    let total = (f.data.len() * cfg.n_runs) as f64;
    let p = s.mean_compliance;
    let sigma = (p * (1.0 - p) / total).sqrt();
    assert!((s.complier_fraction.mean - p).abs() < 3.0 * sigma, "{} vs {p}", s.complier_fraction.mean);
}

#[test]
fn flow_is_conserved() {
    let f = Fixture::new(1500, 6);
    let s = simulate(&f.inputs(), &config(0.5, Phi::Top(4), 10)).unwrap();
    let before: usize = s.location_shift.iter().map(|r| r.before).sum();
    let after: f64 = s.location_shift.iter().map(|r| r.after).sum();
    assert_eq!(before, f.data.len());
    assert!((after - f.data.len() as f64).abs() < 1e-9);
    for (row, (loc, n)) in s.location_shift.iter().zip(f.data.landing_counts()) {
        assert_eq!((row.location, row.before), (loc, n));
    }
}

#[test]
fn sweep_grid_is_monotone() {
    let f = Fixture::new(2000, 8);
    let pis = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    let phis = [Phi::Top(2), Phi::Top(4), Phi::Top(6), Phi::Unrestricted];
    let base = config(0.0, Phi::Unrestricted, 30);
    let rows = sweep(&f.inputs(), &sweep_grid(&base, &pis, &phis)).unwrap();
    assert_eq!(rows.len(), 24);
    let cell = |pi: f64, phi: Phi| rows.iter().find(|r| r.pi_max == pi && r.phi == phi).unwrap();
    for phi in phis {
        for w in pis.windows(2) {
            let (a, b) = (cell(w[0], phi), cell(w[1], phi));
            assert!(b.cohort_ci_high >= a.cohort_gain, "{phi}: {} -> {}", a.cohort_gain, b.cohort_gain);
        }
    }
    for pi in pis {
        for w in phis.windows(2) {
            // common random numbers make this exact, not just within the CI
            assert!(cell(pi, w[1]).complier_gain.unwrap() >= cell(pi, w[0]).complier_gain.unwrap());
        }
    }
    let dir = tempfile::tempdir().unwrap();
    write_sweep(&dir.path().join("sweep.csv"), &rows).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap().lines().count(), 25);
}

#[test]
fn run_to_run_spread_shrinks_with_more_runs() {
    let f = Fixture::new(800, 5);
    let small = simulate(&f.inputs(), &config(0.3, Phi::Top(3), 25)).unwrap();
    let large = simulate(&f.inputs(), &config(0.3, Phi::Top(3), 400)).unwrap();
    let width = |e: &Estimate| e.ci_high - e.ci_low;
    let ratio = width(&small.cohort_gain) / width(&large.cohort_gain);
    // sqrt(400 / 25) = 4
    assert!(ratio > 2.5 && ratio < 6.5, "{ratio}");
}

#[test]
fn leave_one_out_reports_every_location_within_its_interval() {
    let f = Fixture::new(1000, 5);
    let report = leave_one_out(&f.inputs(), &config(0.3, Phi::Top(3), 10)).unwrap();
    assert_eq!(report.rows.len(), 5);
    for r in &report.rows {
        assert!(report.interval_low <= r.cohort_gain && r.cohort_gain <= report.interval_high);
    }
    assert!(report.mean_ci_low <= report.mean && report.mean <= report.mean_ci_high);

    let two = Fixture::new(400, 2);
    assert_eq!(leave_one_out(&two.inputs(), &config(0.3, Phi::Unrestricted, 3)).unwrap().rows.len(), 2);
}

#[test]
fn dropping_a_dominated_location_changes_nothing() {
    let mut f = Fixture::new(1000, 5);
    let k = f.matrix.k();
    for row in f.matrix.values.chunks_mut(k) {
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        row[k - 1] = min - 1.0;
    }
    let base = config(0.4, Phi::Unrestricted, 10);
    let report = leave_one_out(&f.inputs(), &base).unwrap();
    let dominated = report.rows.iter().find(|r| r.excluded == LocationId(k as u32)).unwrap();
    assert_eq!(dominated.cohort_gain, report.baseline_cohort_gain);
}

#[test]
fn subset_rules() {
    let f = Fixture::new(2000, 8);
    let base = config(0.3, Phi::Top(6), 20);
    let baseline = simulate(&f.inputs(), &base).unwrap();

    let none = subset_removal(&f.inputs(), &base, SubsetRule::Small { max_population: 1 }).unwrap();
    assert!(none.excluded.is_empty());
    assert_eq!(none.summary.cohort_gain, baseline.cohort_gain);

    let mut pops: Vec<u64> = f.data.locations.iter().map(|l| l.population).collect();
    pops.sort_unstable_by(|a, b| b.cmp(a));
    let large = subset_removal(&f.inputs(), &base, SubsetRule::Large { min_population: pops[3] }).unwrap();
    assert_eq!(large.excluded.len(), 4);
    let (_, runs) = simulate_runs(&f.inputs(), &large.summary.config).unwrap();
    for run in &runs {
        for (r, c) in f.data.records.iter().zip(&run.chosen) {
            assert!(!large.excluded.contains(c) || *c == r.landing);
        }
    }
    for row in &large.summary.location_shift {
        if large.excluded.contains(&row.location) {
            assert!(row.after <= row.before as f64);
        }
    }
    let growing = SubsetRule::LargeAndGrowing { min_population: pops[3], min_growth: 0.0 };
    assert!(growing.excluded(&f.data.locations).is_subset(&large.excluded));
    assert!(subset_removal(&f.inputs(), &base, SubsetRule::Small { max_population: u64::MAX }).is_err());
}

#[test]
fn subgroups_and_suppression() {
    let f = Fixture::new(1000, 5);
    let s = simulate(&f.inputs(), &config(0.3, Phi::Top(3), 10)).unwrap();
    let features: BTreeSet<&str> = s.subgroups.iter().map(|r| r.feature.as_str()).collect();
    assert_eq!(features, DEFAULT_SUBGROUPS.into_iter().collect());
    for feature in &features {
        let n: usize = s.subgroups.iter().filter(|r| r.feature == *feature).map(|r| r.n).sum();
        assert_eq!(n, f.data.len());
    }

    let single = f.data.filter(|r| r.case_size == 1);
    let gains = vec![2.5; single.len()];
    let rows = subgroup_gains(&single, &gains, "case_size", 10).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].mean_gain, Some(2.5));

    let tiny = Dataset { records: f.data.records[..3].to_vec(), ..f.data.clone() };
    let rows = subgroup_gains(&tiny, &[1.0, 2.0, 3.0], "case_size", 10).unwrap();
    assert!(rows.iter().all(|r| r.mean_gain.is_none()));
}

#[test]
fn symmetric_levels_have_equal_gains() {
    let f = Fixture::new(4000, 5);
    // gender enters outcomes as a level shift common to every location, so
    // gains (differences across locations) have no gender signal beyond noise
    let s = simulate(&f.inputs(), &config(0.5, Phi::Top(3), 50)).unwrap();
    let rows: Vec<&SubgroupRow> = s.subgroups.iter().filter(|r| r.feature == "gender").collect();
    assert_eq!(rows.len(), 2);
    let spread = |level: &str| {
        let g: Vec<f64> = f
            .data
            .records
            .iter()
            .zip(&s.individual_gains)
            .filter(|(r, _)| f.data.group_label(r, "gender").unwrap() == level)
            .map(|(_, g)| *g)
            .collect();
        geomatch::stats::sample_sd(&g) / (g.len() as f64).sqrt()
    };
    let se = (spread(&rows[0].level).powi(2) + spread(&rows[1].level).powi(2)).sqrt();
    let diff = rows[0].mean_gain.unwrap() - rows[1].mean_gain.unwrap();
    assert!(diff.abs() < 4.0 * se, "{diff} vs se {se}");
}

#[test]
fn outputs_are_written_and_reproducible() {
    let f = Fixture::new(600, 4);
    let cfg = config(0.3, Phi::Top(3), 5);
    let dir = tempfile::tempdir().unwrap();
    write_summary(&dir.path().join("a"), &simulate(&f.inputs(), &cfg).unwrap()).unwrap();
    write_summary(&dir.path().join("b"), &simulate(&f.inputs(), &cfg).unwrap()).unwrap();
    for file in ["summary.json", "shift.csv", "subgroups.csv", "runs.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(file)).unwrap(), "{file}");
    }
    let shift = std::fs::read_to_string(dir.path().join("a/shift.csv")).unwrap();
    assert!(shift.starts_with("location,before,after,delta\n"));
}

#[test]
fn mismatched_inputs_and_configs_are_rejected() {
    let f = Fixture::new(300, 4);
    let short = &f.rankings[..10];
    let bad = BacktestInputs { cohort: &f.data, matrix: &f.matrix, rankings: short };
    assert!(simulate(&bad, &config(0.3, Phi::Top(3), 2)).is_err());
    let rent = SimulationConfig { outcome_mode: geomatch::recommender::OutcomeMode::RentAdjusted, ..config(0.3, Phi::Top(3), 2) };
    assert!(simulate(&f.inputs(), &rent).is_err());
    let all: BTreeSet<LocationId> = f.matrix.locations.iter().copied().collect();
    assert!(simulate(&f.inputs(), &SimulationConfig { excluded_locations: all, ..config(0.3, Phi::Top(3), 2) }).is_err());
    assert!(simulate(&f.inputs(), &config(0.3, Phi::Top(0), 2)).is_err());
    assert!(simulate(&f.inputs(), &SimulationConfig { n_runs: 0, ..config(0.3, Phi::Top(3), 2) }).is_err());
}

#[test]
fn config_json_accepts_phi_none_and_defaults() {
    let cfg: SimulationConfig = serde_json::from_str(r#"{"pi_max": 0.2, "phi": "none"}"#).unwrap();
    assert_eq!(cfg.phi, Phi::Unrestricted);
    assert_eq!((cfg.z, cfg.n_runs, cfg.seed), (3, 100, 1));
    let cfg: SimulationConfig = serde_json::from_str(r#"{"pi_max": 0.2, "phi": 10, "compliance_mode": "constant"}"#).unwrap();
    assert_eq!(cfg.compliance_mode, ComplianceMode::Constant);
}
