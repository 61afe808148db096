use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sepp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sepp"))
        .args(args)
        .env_remove("SEPP_THREADS")
        .output()
        .expect("run sepp")
}

fn ok(args: &[&str]) -> Output {
    let out = sepp(args);
    assert!(
        out.status.success(),
        "sepp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/city").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn fit_city(dir: &Path) -> PathBuf {
    let out = dir.join("fit.json");
    ok(&[
        "fit",
        "--events",
        s(&fixture("events.csv")),
        "--covariates",
        s(&fixture("covariates.csv")),
        "--config",
        s(&fixture("fit-config.json")),
        "-o",
        s(&out),
    ]);
    out
}

fn poisson_city(dir: &Path) -> PathBuf {
    let cfg = dir.join("poisson.json");
    fs::write(&cfg, r#"{"window_end": 730, "target": "burglary", "poisson_only": true}"#).unwrap();
    let out = dir.join("poisson-fit.json");
    ok(&[
        "fit",
        "--events",
        s(&fixture("events.csv")),
        "--covariates",
        s(&fixture("covariates.csv")),
        "--config",
        s(&cfg),
        "-o",
        s(&out),
    ]);
    out
}

#[test]
fn city_fit_recovers_the_simulation_config() {
    let dir = tempfile::tempdir().unwrap();
    let fit = json(&fit_city(dir.path()));
    let truth = json(&fixture("simulate.json"));
    let p = &fit["params"];
    let t = &truth["params"];
    let f = |v: &Value| v.as_f64().unwrap();
    assert!(fit["converged"].as_bool().unwrap());
    assert!((f(&p["theta"][0]) - f(&t["theta"][0])).abs() < 0.1);
    assert!((f(&p["omega"]) / f(&t["omega"]) - 1.0).abs() < 0.25);
    assert!((f(&p["sigma2"]) / f(&t["sigma2"]) - 1.0).abs() < 0.25);
    for k in 1..3 {
        assert!((f(&p["beta"][k]) - f(&t["beta"][k])).abs() < 0.5);
    }
    // Both interval methods, natural units, digest and trace are reported.
    for e in fit["estimates"].as_array().unwrap() {
        assert!(e["intervals"]["rathbun"]["lower"].is_number(), "{e}");
        assert!(e["intervals"]["hessian"]["upper"].is_number(), "{e}");
    }
    assert_eq!(fit["natural"]["sigma_feet"], fit["natural"]["sigma"]);
    assert_eq!(fit["inputs"]["events_sha256"].as_str().unwrap().len(), 64);
    let trace = fit["ll_trace"].as_array().unwrap();
    assert!(trace.windows(2).all(|w| f(&w[1]) >= f(&w[0]) - 1e-8));
    let k = fit["n_parameters"].as_f64().unwrap();
    assert!((f(&fit["aic"]) - (2.0 * k - 2.0 * f(&fit["log_likelihood"]))).abs() < 1e-9);
}

#[test]
fn refit_from_its_own_estimate_is_a_fixed_point() {
    // EM creeps near the optimum, so the fixed point is only as sharp as the
    // stopping rule: both fits use tight tolerances.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json(&fixture("fit-config.json"));
    cfg["ll_tol"] = serde_json::json!(1e-10);
    cfg["param_tol"] = serde_json::json!(1e-10);
    cfg["max_iter"] = serde_json::json!(20000);
    cfg["covariance"] = serde_json::json!([]);
    let cfg_path = dir.path().join("tight.json");
    fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let (events, covariates) = (fixture("events.csv"), fixture("covariates.csv"));
    let run = |init: Option<&Path>, out: &Path| {
        let mut args = vec![
            "fit",
            "--events",
            s(&events),
            "--covariates",
            s(&covariates),
            "--config",
            s(&cfg_path),
            "-o",
            s(out),
        ];
        if let Some(p) = init {
            args.extend(["--init", s(p)]);
        }
        ok(&args);
        json(out)
    };
    let first = dir.path().join("first.json");
    let a = run(None, &first);
    let b = run(Some(&first), &dir.path().join("again.json"));
    assert!(a["converged"].as_bool().unwrap());
    let flat = |v: &Value| -> Vec<f64> {
        v["estimates"].as_array().unwrap().iter().map(|e| e["value"].as_f64().unwrap()).collect()
    };
    for (x, y) in flat(&a).iter().zip(flat(&b)) {
        assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} vs {y}");
    }
    assert!(b["iterations"].as_u64().unwrap() < a["iterations"].as_u64().unwrap());
}

#[test]
fn malformed_row_is_an_input_error_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("bad.csv");
    fs::write(&events, "t,x,y,mark\n1.0,100,100,burglary\n2.0,abc,100,burglary\n").unwrap();
    let out = sepp(&[
        "fit",
        "--events",
        s(&events),
        "--covariates",
        s(&fixture("covariates.csv")),
        "--window-end",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("column x"), "{err}");
}

#[test]
fn undeclared_mark_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("marks.csv");
    fs::write(&events, "t,x,y,mark\n1.0,100,100,burglary\n2.0,200,100,arson\n").unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"window_end": 10, "marks": ["burglary"], "target": "burglary"}"#).unwrap();
    let out = sepp(&[
        "fit",
        "--events",
        s(&events),
        "--covariates",
        s(&fixture("covariates.csv")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3: undeclared mark 'arson'"));
}

#[test]
fn unit_mismatch_is_warned_about() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("ev.csv");
    fs::copy(fixture("events.csv"), &events).unwrap();
    fs::write(dir.path().join("ev.units.json"), r#"{"time_unit": "hours", "length_unit": "meters"}"#).unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"window_end": 730, "units": {"time_unit": "days", "length_unit": "feet"}, "poisson_only": true}"#,
    )
    .unwrap();
    let out = ok(&[
        "fit",
        "--events",
        s(&events),
        "--covariates",
        s(&fixture("covariates.csv")),
        "--config",
        s(&cfg),
        "-o",
        s(&dir.path().join("f.json")),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unit mismatch"));
}

#[test]
fn polygon_covariates_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    ok(&[
        "fit",
        "--events",
        s(&fixture("events.csv")),
        "--covariates",
        s(&fixture("districts.geojson")),
        "--config",
        s(&fixture("fit-config.json")),
        "-o",
        s(&out),
    ]);
    let fit = json(&out);
    assert_eq!(fit["covariate_names"], serde_json::json!(["intercept", "commercial", "residential"]));
}

fn simulate_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("sim.json");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn simulation_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--config", s(&fixture("simulate.json")), "--seed", "7", "-o", s(out)]);
    }
    for f in ["events.csv", "provenance.csv", "simulation.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // The bundled fixture is exactly the seed-2024 output.
    let c = dir.path().join("c");
    ok(&["simulate", "--config", s(&fixture("simulate.json")), "--seed", "2024", "-o", s(&c)]);
    assert_eq!(fs::read(c.join("events.csv")).unwrap(), fs::read(fixture("events.csv")).unwrap());
}

#[test]
fn supercritical_simulation_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate_config(
        dir.path(),
        r#"{"params": {"beta": [-5], "theta": [1.1], "omega": 1, "sigma2": 1}, "window_end": 10, "domain": [0, 0, 10, 10]}"#,
    );
    let out = sepp(&["simulate", "--config", s(&cfg), "--seed", "1", "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("supercritical"));
}

#[test]
fn background_only_count_law() {
    // theta = 0: N ~ Poisson(|X| T exp(beta0)) = Poisson(50).
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate_config(
        dir.path(),
        &format!(
            r#"{{"params": {{"beta": [{}], "theta": [0.0], "omega": 1, "sigma2": 1}}, "window_end": 50, "domain": [0, 0, 10, 10]}}"#,
            (0.01f64).ln()
        ),
    );
    let reps = 60;
    let counts: Vec<f64> = (0..reps)
        .map(|seed| {
            let out = dir.path().join(format!("r{seed}"));
            ok(&["simulate", "--config", s(&cfg), "--seed", &seed.to_string(), "-o", s(&out)]);
            json(&out.join("simulation.json"))["n_events"].as_f64().unwrap()
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / reps as f64;
    assert!((mean - 50.0).abs() < 3.0 * (50.0 / reps as f64).sqrt(), "{mean}");
}

#[test]
fn no_self_excitation_fixture_gives_small_theta() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json(&fixture("simulate.json"));
    cfg["params"]["theta"] = serde_json::json!([0.0]);
    cfg["covariates"] = serde_json::json!(s(&fixture("covariates.csv")));
    let cfg_path = dir.path().join("null.json");
    fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg_path), "--seed", "11", "-o", s(&sim)]);
    let out = dir.path().join("fit.json");
    ok(&[
        "fit",
        "--events",
        s(&sim.join("events.csv")),
        "--covariates",
        s(&fixture("covariates.csv")),
        "--config",
        s(&fixture("fit-config.json")),
        "-o",
        s(&out),
    ]);
    let theta = json(&out)["params"]["theta"][0].as_f64().unwrap();
    assert!(theta < 0.05, "{theta}");
}

#[test]
fn residual_map_has_one_scored_cell_per_window_event() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fit_city(dir.path());
    let out = dir.path().join("res.geojson");
    ok(&[
        "residuals",
        "--fit",
        s(&fit),
        "--events",
        s(&fixture("events.csv")),
        "--t1",
        "600",
        "--t2",
        "730",
        "--samples",
        "300",
        "--animate",
        "--frames",
        "3",
        "-o",
        s(&out),
    ]);
    let doc = json(&out);
    let n_window = fs::read_to_string(fixture("events.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| {
            let t: f64 = l.split(',').next().unwrap().parse().unwrap();
            (600.0..730.0).contains(&t)
        })
        .count();
    let features = doc["features"].as_array().unwrap();
    assert_eq!(features.len(), n_window);
    assert!(features.iter().all(|f| f["properties"]["z"].is_number()));
    assert_eq!(doc["sepp"]["seed"], 0);
    let frames = out.with_extension("frames");
    let index = json(&frames.join("index.json"));
    assert_eq!(index["files"].as_array().unwrap().len(), 3);
    assert!(frames.join("frame_0002.csv").exists());
}

#[test]
fn evaluation_identities_and_gain() {
    let dir = tempfile::tempdir().unwrap();
    let fit = fit_city(dir.path());
    let base = poisson_city(dir.path());
    let report = |baseline: &Path| -> Value {
        let out = dir.path().join("report.json");
        ok(&[
            "evaluate",
            "--fit",
            s(&fit),
            "--baseline",
            s(baseline),
            "--events",
            s(&fixture("events.csv")),
            "--t1",
            "365",
            "-o",
            s(&out),
        ]);
        json(&out)
    };
    let same = report(&fit);
    assert_eq!(same["information_gain"].as_f64().unwrap(), 0.0);
    let r = report(&base);
    assert!(r["information_gain"].as_f64().unwrap() > 0.0);
    let i = &r["in_sample"];
    let f = |k: &str| i[k].as_f64().unwrap();
    let dk = f("k_model") - f("k_baseline");
    let lhs = f("delta_aic") / (2.0 * f("window")) + f("information_gain");
    assert!((lhs - dk / f("window")).abs() < 1e-12);
    let curve = r["hit_rate_model"].as_array().unwrap();
    assert!(curve.iter().all(|h| h["pai"].as_f64().unwrap() >= 0.0));
}

#[test]
fn studies_are_reachable_by_name_and_echo_their_seed() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.json");
    for (name, overrides) in [
        ("bias", r#"{"thetas": [0.0, 0.5]}"#),
        ("false-positive", r#"{"thetas": [0.0, 0.9]}"#),
        ("boundary", "{}"),
        ("coverage", "{}"),
        ("misspecification", "{}"),
        ("omitted-covariate", "{}"),
        ("residual-calibration", r#"{"samples_per_cell": 50}"#),
    ] {
        fs::write(&small, overrides).unwrap();
        ok(&[
            "study",
            name,
            "--reps",
            "1",
            "--seed",
            "5",
            "--config",
            s(&small),
            "-o",
            s(dir.path()),
        ]);
        let csv = fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        assert!(csv.starts_with(&format!("# sepp study {name} seed=5\n")), "{name}: {csv}");
        assert_eq!(json(&dir.path().join(format!("{name}.json")))["seed"], 5);
    }
}

#[test]
fn unknown_study_is_a_usage_error() {
    let out = sepp(&["study", "table7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_cap_from_flag_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate_config(
        dir.path(),
        r#"{"params": {"beta": [-3], "theta": [0.3], "omega": 1, "sigma2": 1}, "window_end": 10, "domain": [0, 0, 10, 10]}"#,
    );
    ok(&["--threads", "1", "simulate", "--config", s(&cfg), "--seed", "1", "-o", s(&dir.path().join("a"))]);
    let out = Command::new(env!("CARGO_BIN_EXE_sepp"))
        .args(["simulate", "--config", s(&cfg), "--seed", "1", "-o", s(&dir.path().join("b"))])
        .env("SEPP_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(dir.path().join("a/events.csv")).unwrap(),
        fs::read(dir.path().join("b/events.csv")).unwrap()
    );
    let bad = Command::new(env!("CARGO_BIN_EXE_sepp"))
        .args(["simulate", "--config", s(&cfg), "-o", s(&dir.path().join("c"))])
        .env("SEPP_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
