use std::fs;

use proptest::prelude::*;
use vmimo_ips::engine::{estimate_ips, run_scenario, Budget, SchemeKind};
use vmimo_ips::experiments::{
    compare_schemes, emit_csv, emit_meta, format_sig6, meta_path, point_seed, run_sweep, sweep_csv, SweepParam,
    SweepRow, SweepSpec, SWEEP_CSV_HEADER,
};
use vmimo_ips::ScenarioParams;

fn spec(varying: SweepParam, values: &[f64], schemes: &[SchemeKind], replications: u32) -> SweepSpec {
    SweepSpec {
        varying,
        values: values.to_vec(),
        fixed: ScenarioParams::default(),
        schemes: schemes.to_vec(),
        replications,
        budget: Budget {
            max_slots: 6000,
            ..Budget::default()
        },
        base_seed: 11,
    }
}

#[test]
fn one_value_one_scheme_gives_one_row() {
    let s = spec(SweepParam::V, &[25.0], &[SchemeKind::Vmimo], 2);
    let rows = run_sweep(&s, 1).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].replications, 2);
    assert!(rows[0].ips_analytic.is_some() && rows[0].ips_sim_mean.is_some());
}

#[test]
fn rows_follow_sweep_order_then_scheme_name() {
    let s = spec(
        SweepParam::LambdaR,
        &[0.004, 0.002],
        &[SchemeKind::Vmimo, SchemeKind::REVERSE_AIDED_DEFAULT, SchemeKind::Flooding],
        2,
    );
    let rows = run_sweep(&s, 0).unwrap();
    let order: Vec<(f64, &str)> = rows.iter().map(|r| (r.params.lambda_r, r.scheme.name())).collect();
    assert_eq!(
        order,
        [
            (0.004, "flooding"),
            (0.004, "reverse_aided"),
            (0.004, "vmimo"),
            (0.002, "flooding"),
            (0.002, "reverse_aided"),
            (0.002, "vmimo"),
        ]
    );
    for r in &rows {
        assert_eq!(r.ips_analytic.is_some(), r.scheme != SchemeKind::REVERSE_AIDED_DEFAULT);
    }
}

#[test]
fn rerunning_a_spec_gives_identical_csv() {
    let s = spec(SweepParam::LambdaTotalSymmetric, &[0.006, 0.01], &[SchemeKind::Vmimo, SchemeKind::Flooding], 3);
    let a = sweep_csv(&run_sweep(&s, 1).unwrap());
    let b = sweep_csv(&run_sweep(&s, 0).unwrap());
    assert_eq!(a, b);
}

#[test]
fn single_replication_reproduces_its_share_of_a_row() {
    let s = spec(SweepParam::V, &[15.0, 30.0], &[SchemeKind::Vmimo, SchemeKind::Flooding], 3);
    let rows = run_sweep(&s, 0).unwrap();
    let row = rows.iter().find(|r| r.params.v == 30.0 && r.scheme == SchemeKind::Flooding).unwrap();
    let reps: Vec<_> = (0..3)
        .map(|rep| run_scenario(&s.point(1), SchemeKind::Flooding, &s.budget, point_seed(11, 1, rep)).unwrap().0)
        .collect();
    let est = estimate_ips(&reps).unwrap();
    assert_eq!(row.ips_sim_mean, Some(est.mean));
    assert_eq!(row.ips_sim_ci95, Some(est.ci95_halfwidth));
}

#[test]
fn combining_speed_grows_with_symmetric_density() {
    let mut s = spec(SweepParam::LambdaTotalSymmetric, &[0.002, 0.004, 0.008], &[SchemeKind::Vmimo], 30);
    s.budget = Budget::default();
    s.base_seed = 1;
    let rows = run_sweep(&s, 0).unwrap();
    let means: Vec<f64> = rows.iter().map(|r| r.ips_sim_mean.unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn invalid_points_are_rejected_up_front() {
    let s = spec(SweepParam::V, &[0.0, 10.0], &[SchemeKind::Vmimo], 2);
    assert!(run_sweep(&s, 1).unwrap_err().to_string().contains("v > 0"));
    let s = spec(SweepParam::DetectRange, &[150.0], &[SchemeKind::Vmimo], 2);
    assert!(run_sweep(&s, 1).is_err());
}

#[test]
fn empty_and_single_row_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    emit_csv(&[], &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), format!("{SWEEP_CSV_HEADER}\n"));

    let s = spec(SweepParam::V, &[25.0], &[SchemeKind::Flooding], 2);
    let rows = run_sweep(&s, 1).unwrap();
    emit_csv(&rows, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    let fields: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(fields.len(), SWEEP_CSV_HEADER.split(',').count());
    assert_eq!(fields[6], "flooding");
    assert_eq!(fields[10], "1");
    assert_eq!(fields[12], "11");

    emit_meta(&s, &rows, &path).unwrap();
    let meta = fs::read_to_string(meta_path(&path)).unwrap();
    assert!(meta.contains("varying=v\n"));
    assert!(meta.contains("base_seed=11\n"));
    assert!(meta.contains("failed_rows=0\n"));
}

#[test]
fn unwritable_path_names_the_file() {
    let err = emit_csv(&[], std::path::Path::new("/nonexistent-dir/out.csv")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent-dir/out.csv"));
}

fn row(params: ScenarioParams, scheme: SchemeKind, mean: f64) -> SweepRow {
    SweepRow {
        params,
        scheme,
        ips_sim_mean: Some(mean),
        ips_sim_ci95: Some(0.0),
        ips_analytic: match scheme {
            SchemeKind::Vmimo => vmimo_ips::analytic::ips_vmimo(&params).ok(),
            SchemeKind::Flooding => vmimo_ips::analytic::ips_conventional(&params).ok(),
            _ => None,
        },
        gain_vs_flooding: None,
        replications: 2,
        base_seed: 0,
        error: None,
    }
}

#[test]
fn gain_table_pairs_points_and_warns_on_orphans() {
    let mid = ScenarioParams::symmetric(0.005, 25.0);
    let sparse = ScenarioParams::symmetric(1e-6, 25.0);
    let orphan = ScenarioParams::symmetric(0.02, 25.0);
    let rows = [
        row(mid, SchemeKind::Vmimo, 200.0),
        row(mid, SchemeKind::Flooding, 80.0),
        row(sparse, SchemeKind::Vmimo, 50.0),
        row(sparse, SchemeKind::Flooding, 50.0),
        row(orphan, SchemeKind::Vmimo, 9000.0),
    ];
    let table = compare_schemes(&rows);
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.warnings.len(), 1);
    assert!(table.warnings[0].contains("lambda_r=0.02"));

    let g_mid = table.rows[0].gain_analytic.unwrap();
    assert!((g_mid - 1652.7173723306633 / 547.76903161704235).abs() < 1e-9);
    assert!((g_mid - 3.0).abs() < 0.05);
    assert_eq!(table.rows[0].gain_sim, Some(2.5));
    assert!((table.rows[1].gain_analytic.unwrap() - 1.0).abs() < 0.05);
}

proptest! {
    #[test]
    fn six_significant_digits_survive_a_round_trip(m in 1.0..10.0f64, e in -12i32..12) {
        let x = m * 10f64.powi(e);
        let back: f64 = format_sig6(x).parse().unwrap();
        prop_assert!(((back - x) / x).abs() <= 5e-6, "{} -> {}", x, format_sig6(x));
        prop_assert_eq!(format_sig6(back), format_sig6(x));
    }
}
