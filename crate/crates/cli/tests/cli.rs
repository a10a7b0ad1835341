use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seismostat"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().arg("--out-dir").arg(dir).args(args).output().expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let printed: Value = serde_json::from_slice(&out.stdout).expect("stdout is the JSON document");
    let cmd = printed["command"].as_str().expect("command name").to_string();
    assert!(args.contains(&cmd.as_str()));
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(dir.join(format!("{cmd}.json"))).unwrap()).unwrap();
    assert_eq!(on_disk, printed);
    check_schema(&cmd, &on_disk);
    on_disk
}

fn check_schema(cmd: &str, doc: &Value) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{cmd}.schema.json"));
    let schema: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let msgs: Vec<String> = match compiled.validate(doc) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "{cmd} output violates its schema: {msgs:#?}");
}

/// A temporal catalog simulated by the CLI itself.
fn simulated(dir: &Path, seed: &str, horizon: &str) -> PathBuf {
    run_ok(dir, &["simulate-etas", "--seed", seed, "--horizon", horizon]);
    let dest = dir.join(format!("sim_{seed}.csv"));
    fs::copy(dir.join("simulate-etas_catalog.csv"), &dest).unwrap();
    dest
}

/// Scatters the simulated catalog over a 3 x 3 degree box with a
/// deterministic low-discrepancy sequence.
fn spread(src: &Path, dest: &Path) {
    let text = fs::read_to_string(src).unwrap();
    let mut out = String::from("time,lon,lat,depth_km,mag\n");
    let (g1, g2) = (0.754_877_666_246_692_8, 0.569_840_290_998_053_2);
    let (mut x, mut y) = (0.5f64, 0.5f64);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        x = (x + g1).fract();
        y = (y + g2).fract();
        out.push_str(&format!("{},{:.4},{:.4},10,{}\n", f[0], 130.0 + 3.0 * x, 33.0 + 3.0 * y, f[4]));
    }
    fs::write(dest, out).unwrap();
}

#[test]
fn simulation_is_reproducible_for_a_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["simulate-etas", "--seed", "7", "--horizon", "0,500"];
    let ja = run_ok(a.path(), &args);
    let jb = run_ok(b.path(), &args);
    assert_eq!(ja, jb);
    assert_eq!(ja["seed"], 7);
    let ca = fs::read(a.path().join("simulate-etas_catalog.csv")).unwrap();
    let cb = fs::read(b.path().join("simulate-etas_catalog.csv")).unwrap();
    assert_eq!(ca, cb);
    let other = TempDir::new().unwrap();
    run_ok(other.path(), &["simulate-etas", "--seed", "8", "--horizon", "0,500"]);
    assert_ne!(fs::read(other.path().join("simulate-etas_catalog.csv")).unwrap(), ca);
}

#[test]
fn missing_catalog_fails_with_its_path() {
    let d = TempDir::new().unwrap();
    let out = run(d.path(), &["fit-etas", "--catalog", "no/such/catalog.csv", "--window", "0,10"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no/such/catalog.csv"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let d = TempDir::new().unwrap();
    assert_eq!(run(d.path(), &["fit-etas", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(d.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn unsupported_parameters_exit_with_one() {
    let d = TempDir::new().unwrap();
    let out = run(d.path(), &["combine-precursors", "--p0", "1.5", "--pk", "0.2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_is_layered_under_flags() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("cfg.toml");
    fs::write(&cfg, "seed = 99\n[combine-precursors]\np0 = 0.02\npk = [0.1]\n").unwrap();
    let cfg_s = cfg.to_str().unwrap();
    let j = run_ok(d.path(), &["--config", cfg_s, "combine-precursors"]);
    assert_eq!(j["seed"], 99);
    assert_eq!(j["config"]["p0"], 0.02);
    let j = run_ok(d.path(), &["--config", cfg_s, "--seed", "3", "combine-precursors", "--p0", "0.01"]);
    assert_eq!(j["seed"], 3);
    assert_eq!(j["config"]["p0"], 0.01);
    assert_eq!(j["config"]["pk"], serde_json::json!([0.1]));
}

#[test]
fn out_dir_can_come_from_the_environment() {
    let d = TempDir::new().unwrap();
    let target = d.path().join("from_env");
    let out = bin()
        .env("SEISMOSTAT_OUT_DIR", &target)
        .args(["combine-precursors", "--p0", "0.01", "--pk", "0.05"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("combine-precursors.json").exists());
}

#[test]
fn temporal_commands() {
    let d = TempDir::new().unwrap();
    let cat = simulated(d.path(), "3", "0,1500");
    let c = cat.to_str().unwrap();
    let j = run_ok(d.path(), &["fit-etas", "--catalog", c, "--window", "0,1500"]);
    let fit = &j["result"]["fit"];
    assert_eq!(fit["param_names"].as_array().unwrap().len(), 5);
    assert!(fit["loglik"].is_f64() && fit["aic"].is_f64());
    let aic = fit["aic"].as_f64().unwrap();
    let ll = fit["loglik"].as_f64().unwrap();
    assert!((aic - (-2.0 * ll + 10.0)).abs() < 1e-6);

    run_ok(d.path(), &["fit-gr", "--catalog", c, "--mc", "4"]);
    run_ok(d.path(), &["fit-omori", "--catalog", c, "--window", "0,50"]);
    run_ok(d.path(), &["forecast-aftershock", "--m0", "6", "--window", "0,7", "--mthresh", "5", "--a", "-1.67"]);
    run_ok(d.path(), &["forecast-aftershock", "--catalog", c, "--fit-window", "0,50", "--window", "50,57", "--mthresh", "5", "--m0", "6"]);
    let r = run_ok(d.path(), &["residuals", "--catalog", c, "--window", "0,1500"]);
    assert!(r["result"]["ks_pvalue"].as_f64().unwrap() > 0.0);
    run_ok(d.path(), &["detect-anomaly", "--catalog", c, "--window", "0,1500", "--changepoint", "1000"]);
    run_ok(d.path(), &["fit-periodic", "--catalog", c, "--window", "0,1500", "--trend-order", "1"]);
    run_ok(d.path(), &["classify-clusters", "--catalog", c]);
    let other = simulated(d.path(), "4", "0,1500");
    run_ok(d.path(), &["fit-covariate", "--catalog", c, "--window", "0,1500", "--covariate-catalog", other.to_str().unwrap()]);
}

#[test]
fn covariate_series_from_csv() {
    let d = TempDir::new().unwrap();
    let cat = simulated(d.path(), "5", "0,1000");
    let series = d.path().join("cov.csv");
    let rows: String = (0..1001).map(|i| format!("{i},{}\n", 1.0 + 0.5 * (i as f64 / 37.0).sin())).collect();
    fs::write(&series, format!("t_days,value\n{rows}")).unwrap();
    let j = run_ok(
        d.path(),
        &["fit-covariate", "--catalog", cat.to_str().unwrap(), "--window", "0,1000", "--covariate", series.to_str().unwrap(), "--with-transfer"],
    );
    assert!(j["result"]["without_transfer"].is_null());
    assert!(j["result"]["with_transfer"]["aic"].is_f64());
}

#[test]
fn space_time_commands() {
    let d = TempDir::new().unwrap();
    let cat = simulated(d.path(), "6", "0,800");
    let st = d.path().join("st.csv");
    spread(&cat, &st);
    let s = st.to_str().unwrap();
    let j = run_ok(d.path(), &["fit-st-etas", "--catalog", s, "--window", "0,800", "--iterate", "--max-iter", "2"]);
    assert_eq!(j["result"]["fit"]["param_names"].as_array().unwrap().len(), 7);
    let j = run_ok(d.path(), &["--seed", "4", "decluster", "--catalog", s, "--window", "0,800", "--params", "1,20,0.01,1,1.2,2,2"]);
    let n = j["result"]["n_events"].as_u64().unwrap();
    assert!(j["result"]["n_background_sampled"].as_u64().unwrap() <= n);
    let phi = fs::read_to_string(d.path().join("decluster_phi.csv")).unwrap();
    assert_eq!(phi.lines().count() as u64, n + 1);
}

#[test]
fn renewal_models() {
    let d = TempDir::new().unwrap();
    let iv = d.path().join("iv.csv");
    let seg = d.path().join("seg.csv");
    let mut rows = String::from("segment_id,interval_years\n");
    for j in 0..4 {
        for k in 0..5 {
            rows.push_str(&format!("s{j},{}\n", 100.0 + 20.0 * j as f64 + 15.0 * ((k * 7 + j) % 5) as f64));
        }
    }
    fs::write(&iv, rows).unwrap();
    fs::write(&seg, "segment_id,open_tail_years,geodetic_T_years\ns0,40,120\ns1,80,\ns2,10,150\ns3,200,160\n").unwrap();
    for model in ["shared", "per-segment", "lognormal", "plugin"] {
        let j = run_ok(
            d.path(),
            &["renewal-forecast", "--intervals", iv.to_str().unwrap(), "--segments", seg.to_str().unwrap(), "--model", model, "--horizon", "30"],
        );
        assert_eq!(j["result"]["segments"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn precursor_combination() {
    let d = TempDir::new().unwrap();
    let j = run_ok(d.path(), &["combine-precursors", "--p0", "0.01", "--pk", "0.05", "--pk", "0.1"]);
    let r = &j["result"];
    let direct = {
        let odds = |p: f64| p / (1.0 - p);
        let o = odds(0.05) * odds(0.1) / odds(0.01);
        o / (1.0 + o)
    };
    assert!((r["exact"].as_f64().unwrap() - direct).abs() < 1e-12);
    assert!((r["total_gain"].as_f64().unwrap() - 50.0).abs() < 1e-9);
}

#[test]
fn foreshock_probability_streams_each_member() {
    let d = TempDir::new().unwrap();
    let cl = d.path().join("cluster.csv");
    fs::write(&cl, "time,lon,lat,depth_km,mag\n0,140,35,10,4.0\n0.5,140.01,35.0,10,4.1\n1.2,140.02,35.01,10,4.05\n").unwrap();
    let args = ["foreshock-prob", "--cluster-file", cl.to_str().unwrap(), "--mu0", "-0.5", "--b-coef", "0.3,0,0", "--c-coef=-0.2,0,0", "--d-coef", "0.1,0,0"];
    let out = run(d.path(), &args);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().filter(|l| l.starts_with("member")).count(), 3);
    let j = run_ok(d.path(), &args);
    let path = j["result"]["path"].as_array().unwrap();
    assert!((path[0].as_f64().unwrap() - 0.038).abs() < 1e-12);

    let prior = d.path().join("prior.csv");
    fs::write(&prior, "lon,lat,prob\n139.5,34.5,0.01\n140.5,34.5,0.02\n139.5,35.5,0.03\n140.5,35.5,0.04\n").unwrap();
    let j = run_ok(d.path(), &["foreshock-prob", "--cluster-file", cl.to_str().unwrap(), "--prior", prior.to_str().unwrap()]);
    assert!((j["result"]["prior"].as_f64().unwrap() - 0.04).abs() < 1e-12);
}
