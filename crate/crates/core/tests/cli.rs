use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mtpp::delay_dist::{EventDistParams, PiecewisePower};
use mtpp::event_model::EventSchema;
use mtpp::io::{self, AnyModel, WindowSource};
use mtpp::likelihood::per_user_log_likelihood;
use mtpp::tabular::TabularModel;

fn mtpp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtpp")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mtpp(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup(dir: &Path) {
    let s = EventSchema::new(2, 2);
    let d = vec![PiecewisePower::new(1.0, 2.5, 1.0).unwrap(), PiecewisePower::new(2.0, 3.0, 2.0).unwrap()];
    let row = |q: Vec<f64>| EventDistParams::new(q, d.clone()).unwrap();
    let tab = TabularModel::new(
        s,
        vec![row(vec![0.5, 0.4]), row(vec![0.5, 0.3]), row(vec![0.3, 0.5])],
        Some(vec![row(vec![0.7, 0.2]), row(vec![0.2, 0.5])]),
    )
    .unwrap();
    io::save_model(&dir.join("tab.json"), &AnyModel::Tabular(tab)).unwrap();
    fs::write(
        dir.join("fit.json"),
        r#"{"version":"mtpp-v1","num_types":2,"num_actions":2,"state_dim":6,"embed_dim":3,"epochs":2}"#,
    )
    .unwrap();
    fs::write(dir.join("zero.json"), r#"{"version":"mtpp-v1","type_rewards":[0,0],"action_costs":[0,0]}"#).unwrap();
}

#[test]
fn loglik_with_tabular_model_reproduces_synth_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    setup(p);
    ok(
        p,
        &[
            "synth",
            "--tabular",
            "tab.json",
            "--n",
            "80",
            "--t0",
            "-5",
            "--tmax",
            "25",
            "--seed",
            "1",
            "--out",
            "d.jsonl",
        ],
    );
    let stdout = ok(p, &["loglik", "--data", "d.jsonl", "--model", "tab.json", "--out", "ll.csv"]);
    assert_eq!(fs::read(p.join("ll.csv")).unwrap(), fs::read(p.join("d.loglik.csv")).unwrap());
    let oracle = io::read_log_likelihood_csv(&p.join("d.loglik.csv")).unwrap();
    let total: f64 = oracle.iter().map(|(_, v)| v).sum();
    let first = stdout.lines().next().unwrap();
    let printed: f64 = first.strip_prefix("total\t").unwrap().parse().unwrap();
    assert!((printed - total).abs() <= 1e-10 * total.abs());
    assert_eq!(stdout.lines().count(), 81);
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    setup(p);
    ok(p, &["simulate", "--model", "tab.json", "--n", "40", "--tmax", "30", "--seed", "7", "--out", "a.jsonl"]);
    ok(p, &["simulate", "--model", "tab.json", "--n", "40", "--tmax", "30", "--seed", "7", "--out", "b.jsonl"]);
    ok(p, &["simulate", "--model", "tab.json", "--n", "40", "--tmax", "30", "--seed", "8", "--out", "c.jsonl"]);
    let read = |f: &str| fs::read(p.join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_eq!(read("a.windows.jsonl"), read("b.windows.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn eval_utility_with_zero_spec_prints_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    setup(p);
    let out = ok(
        p,
        &["eval-utility", "--model", "tab.json", "--utility", "zero.json", "--n", "100", "--tmax", "10", "--seed", "3"],
    );
    assert_eq!(out, "0 ± 0\n");
}

#[test]
fn model_saved_by_fit_scores_identically_after_reload() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    setup(p);
    ok(p, &["synth", "--tabular", "tab.json", "--n", "60", "--tmax", "20", "--seed", "2", "--out", "d.jsonl"]);
    ok(p, &["fit", "--data", "d.jsonl", "--window", "0,20", "--config", "fit.json", "--out", "enc.json"]);
    let curve = fs::read_to_string(p.join("enc.curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,train_ll,heldout_ll"));
    assert_eq!(curve.lines().count(), 3);
    ok(p, &["loglik", "--data", "d.jsonl", "--model", "enc.json", "--out", "ll.csv"]);

    let AnyModel::Encoder(w) = io::load_model(&p.join("enc.json")).unwrap() else { panic!("expected encoder") };
    let data =
        io::load_dataset(&p.join("d.jsonl"), &w.config.schema, &WindowSource::PerUser(p.join("d.windows.jsonl")))
            .unwrap();
    assert_eq!(data.len(), 60);
    let direct = per_user_log_likelihood(&data, &w).unwrap();
    let from_cli: Vec<f64> = io::read_log_likelihood_csv(&p.join("ll.csv")).unwrap().into_iter().map(|x| x.1).collect();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&direct), bits(&from_cli));

    // a model saved by fit drives simulate
    ok(p, &["simulate", "--model", "enc.json", "--n", "10", "--tmax", "20", "--out", "s.jsonl"]);
    ok(p, &["loglik", "--data", "s.jsonl", "--model", "enc.json"]);
}

#[test]
fn optimize_policy_writes_policy_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    setup(p);
    fs::write(p.join("u.json"), r#"{"version":"mtpp-v1","type_rewards":[1,0],"action_costs":[0.1,0.2]}"#).unwrap();
    fs::write(p.join("opt.json"), r#"{"version":"mtpp-v1","t_max":15,"iterations":5,"batch_size":8}"#).unwrap();
    ok(
        p,
        &["optimize-policy", "--model", "tab.json", "--utility", "u.json", "--config", "opt.json", "--out", "pol.json"],
    );
    let trace = fs::read_to_string(p.join("pol.trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iteration,mean_utility,se"));
    assert_eq!(trace.lines().count(), 6);
    let pol = io::load_policy(&p.join("pol.json")).unwrap();
    assert_eq!(pol.schema, EventSchema::new(2, 2));
    ok(
        p,
        &[
            "eval-utility",
            "--model",
            "tab.json",
            "--policy",
            "pol.json",
            "--utility",
            "u.json",
            "--n",
            "50",
            "--tmax",
            "15",
        ],
    );
}

#[test]
fn usage_and_input_errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    setup(p);
    let out = mtpp(p, &["simulate", "--model", "tab.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = mtpp(p, &["simulate", "--model", "missing.json", "--n", "1", "--tmax", "1", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    fs::write(p.join("bad.jsonl"), "{\"user\":\"a\",\"t\":1.0,\"v\":1,\"a\":2}\n").unwrap();
    let out = mtpp(p, &["loglik", "--data", "bad.jsonl", "--model", "tab.json", "--window", "0,10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    let out = mtpp(p, &["eval-utility", "--model", "tab.json", "--utility", "fit.json", "--n", "10", "--tmax", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
