use wishart_core::output::{variance_csv, VARIANCE_COLUMNS};
use wishart_core::solver::{solve_sigma, variance_sweep};
use wishart_core::{Error, EvalOptions, LayerSpec, McConfig, Method, MomentSet, Scaling};

fn opts(trials: usize) -> EvalOptions {
    EvalOptions {
        mc: McConfig::new(trials, 3).unwrap(),
        ..EvalOptions::default()
    }
}

#[test]
fn recovers_standard_scales_at_256() {
    let ms = MomentSet::bundled().unwrap();
    let layer = LayerSpec::unit();
    let o = opts(40);
    let small = solve_sigma(0.41, 256, 256, &layer, Method::MonteCarlo, 0.01, &o, &ms).unwrap();
    assert!((small.sigma * 16.0 - 1.0).abs() <= 0.15, "sigma {}", small.sigma);
    let large = solve_sigma(0.9, 256, 256, &layer, Method::MonteCarlo, 0.01, &o, &ms).unwrap();
    assert!((large.sigma * 16.0 / 10.0 - 1.0).abs() <= 0.25, "sigma {}", large.sigma);
}

#[test]
fn unattainable_with_wider_gamma() {
    let ms = MomentSet::bundled().unwrap();
    let layer = LayerSpec::new(1.0, 2.0).unwrap();
    let r = solve_sigma(4.0, 8, 8, &layer, Method::MonteCarlo, 0.01, &opts(50), &ms);
    assert!(matches!(r, Err(Error::Unattainable { limit, .. }) if limit == 4.0));
    let ok = solve_sigma(3.0, 8, 8, &layer, Method::MonteCarlo, 0.05, &opts(400), &ms).unwrap();
    assert!((ok.variance - 3.0).abs() <= 0.05);
}

#[test]
fn series_solver_stays_in_validity() {
    let ms = MomentSet::bundled().unwrap();
    let layer = LayerSpec::unit();
    let sol = solve_sigma(0.1, 16, 16, &layer, Method::Series, 1e-4, &opts(10), &ms).unwrap();
    assert!((sol.variance - 0.1).abs() <= 1e-4);
    let r = solve_sigma(0.9, 16, 16, &layer, Method::Series, 1e-4, &opts(10), &ms);
    assert!(matches!(r, Err(Error::SeriesOutOfValidity { .. })), "{r:?}");
}

#[test]
fn sqrt_n_sweep_collapses() {
    let ms = MomentSet::bundled().unwrap();
    let rows = variance_sweep(
        &[(64, 64), (128, 128), (256, 256)],
        &[10.0],
        Scaling::SqrtN,
        &LayerSpec::unit(),
        Method::MonteCarlo,
        &opts(20),
        &ms,
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert!(
            (row.point.value - 0.9).abs() <= 0.03,
            "n={} value {}",
            row.point.n,
            row.point.value
        );
    }
}

#[test]
fn sweep_rows_follow_grid_order_and_csv_schema() {
    let ms = MomentSet::bundled().unwrap();
    let dims = [(2, 2), (3, 5), (9, 9)];
    let scales = [0.01, 0.05];
    let rows = variance_sweep(
        &dims,
        &scales,
        Scaling::Absolute,
        &LayerSpec::unit(),
        Method::Series,
        &opts(10),
        &ms,
    )
    .unwrap();
    let order: Vec<(usize, usize, f64)> = rows
        .iter()
        .map(|r| (r.point.m, r.point.n, r.normalized_sigma))
        .collect();
    let expected: Vec<(usize, usize, f64)> = dims
        .iter()
        .flat_map(|&(m, n)| scales.iter().map(move |&s| (m, n, s)))
        .collect();
    assert_eq!(order, expected);

    let points: Vec<_> = rows.into_iter().map(|r| r.point).collect();
    let csv = variance_csv(&points).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), VARIANCE_COLUMNS.join(","));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), VARIANCE_COLUMNS.len());
    assert_eq!(first[6], "series");
    assert_eq!(first[9], "");
}
