use std::process::{Command, Output};

fn wishart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wishart"))
        .args(args)
        .env_remove("WISHART_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn moments_csv_for_order_three() {
    let out = wishart(&["moments", "--k", "3", "--format", "csv"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "m^1,m^2,m^3");
    assert_eq!(&lines[1..4], &["1,0,0", "3,3,0", "4,3,1"]);
    assert!(lines[4].starts_with("# argv: ") && lines[4].contains("moments --k 3 --format csv"));
}

#[test]
fn moments_json_round_trips() {
    let out = wishart(&["moments", "--k", "4"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["k"], 4);
    assert_eq!(v["coeffs"][3], serde_json::json!([20, 21, 6, 1]));
}

#[test]
fn eval_matches_closed_form() {
    let out = wishart(&["eval", "--k", "2", "--m", "2", "--n", "3", "--sigma2", "1"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim().parse::<f64>().unwrap(), 36.0);
}

#[test]
fn unattainable_target_exits_three() {
    let out = wishart(&["solve", "--target", "2", "--m", "8", "--n", "8", "--gamma", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("gamma^2"), "{err}");
}

#[test]
fn argument_errors_exit_two() {
    assert_eq!(wishart(&["moments"]).status.code(), Some(2));
    assert_eq!(wishart(&["moments", "--k", "3", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        wishart(&["validate", "--sizes", "9..2", "--sigma2-grid", "0.01"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(wishart(&["moments", "--k", "0"]).status.code(), Some(2));
}

#[test]
fn series_refuses_outside_validity() {
    let args = [
        "variance", "--m", "8", "--n", "8", "--sigma2", "1", "--method", "series",
    ];
    let out = wishart(&args);
    assert_eq!(out.status.code(), Some(1));
    let mut allowed = args.to_vec();
    allowed.push("--allow-invalid");
    let out = wishart(&allowed);
    assert!(out.status.success());
    assert!(stdout(&out).lines().nth(1).unwrap().ends_with(",false"));
}

#[test]
fn identical_seed_gives_identical_bytes() {
    let args = [
        "sweep",
        "--dims",
        "6,4x8",
        "--sigma-grid",
        "0.5,1,2",
        "--method",
        "mc",
        "--trials",
        "50",
        "--seed",
        "9",
    ];
    let first = wishart(&args);
    let second = wishart(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);

    let mut threaded = args.to_vec();
    threaded.extend(["--threads", "1"]);
    let single = wishart(&threaded);
    let strip = |o: &Output| {
        stdout(o)
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&first), strip(&single));
}

#[test]
fn seed_falls_back_to_environment() {
    let args = ["variance", "--m", "4", "--n", "4", "--sigma2", "0.1", "--trials", "20"];
    let explicit = wishart(&[&args[..], &["--seed", "42"]].concat());
    let from_env = Command::new(env!("CARGO_BIN_EXE_wishart"))
        .args(args)
        .env("WISHART_SEED", "42")
        .output()
        .unwrap();
    let body = |o: &Output| stdout(o).lines().nth(1).unwrap().to_string();
    assert_eq!(body(&explicit), body(&from_env));
    assert!(stdout(&from_env).contains("seed: 42"));
}

#[test]
fn validate_emits_three_rows_per_point() {
    let out = wishart(&[
        "validate",
        "--sizes",
        "2,3",
        "--sigma2-grid",
        "0.25",
        "--relative",
        "--trials",
        "200",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 6);
    let methods: Vec<&str> = rows.iter().map(|r| r.split(',').nth(6).unwrap()).collect();
    assert_eq!(methods, ["series", "mc", "diff", "series", "mc", "diff"]);
}

#[test]
fn depth_writes_one_row_per_layer() {
    let dir = std::env::temp_dir().join(format!("wishart-depth-{}", std::process::id()));
    let path = dir.with_extension("csv");
    let out = wishart(&[
        "depth",
        "--width",
        "8",
        "--layers",
        "4",
        "--sigma",
        "0.35",
        "--trials",
        "10",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("layer,width,sigma2"));
    assert_eq!(lines.len(), 6);
    let values: Vec<f64> = lines[1..5]
        .iter()
        .map(|l| l.split(',').nth(6).unwrap().parse().unwrap())
        .collect();
    assert!(values.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn solve_reports_json() {
    let out = wishart(&[
        "solve", "--target", "0.3", "--m", "16", "--n", "16", "--tol", "0.02", "--trials", "200", "--seed", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["variance"].as_f64().unwrap() - 0.3).abs() <= 0.02);
    assert_eq!(v["method"], "mc");
}
