use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use renv::fixtures::FIXTURES;
use serde_json::Value;

fn renv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_renv")).args(args).output().expect("spawn renv")
}

fn lines(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).expect("json line")).collect()
}

fn run_in(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--out", out];
    args.extend_from_slice(extra);
    renv(&args)
}

const TWO_SITE: &str = r#"
schema_version = 1
name = "custom"
action = "verify"

[model]
kind = "jackson"
alpha = [1.0, 2.0]
sigma = [1.0, 2.0]
tau = [[0.0, 1.0], [1.0, 0.0]]
networks = [
    { lambda = [1.0, 0.0], mu = [2.0, 2.0], routing = [[0.0, 0.5], [0.0, 0.0]] },
    { lambda = [0.6, 0.0], MU_KEY = [2.0, 3.0], routing = [[0.0, 0.5], [0.0, 0.0]] },
]
"#;

#[test]
fn fixtures_are_listed() {
    let o = renv(&["fixtures"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 10);
    for id in ["thm-2.1-two-site", "thm-6.1-model-C-rectangle", "sec-5a1-lambda-divergent"] {
        assert!(text.contains(id), "{id} missing from listing");
    }
}

#[test]
fn show_prints_the_toml() {
    let o = renv(&["show", "thm-3.1-pair"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("kind = \"exclusion\""));
    assert_eq!(renv(&["show", "nope"]).status.code(), Some(2));
}

#[test]
fn two_site_verify_reports_tiny_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--fixture", "thm-2.1-two-site"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let wie = lines(&o).into_iter().find(|v| v["test"] == "wie_per_state").expect("wie_per_state line");
    assert!(wie["value"].as_f64().unwrap().abs() < 1e-10);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("model,test,statistic,value,threshold,pass"));
    assert!(dir.path().join("report.jsonl").exists());
}

#[test]
fn divergent_normalizer_is_a_result() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--fixture", "sec-5a1-lambda-divergent"]);
    assert_eq!(o.status.code(), Some(0));
    let v = lines(&o);
    assert_eq!(v[0]["type"], "normalizer");
    assert_eq!(v[0]["status"], "divergent");
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("missing_mu.toml", TWO_SITE.replace("MU_KEY = [2.0, 3.0], ", ""), "mu"),
        ("unknown_key.toml", TWO_SITE.replace("MU_KEY", "mu").replace("action = \"verify\"", "action = \"verify\"\nspeed = 3"), "speed"),
        ("bad_version.toml", TWO_SITE.replace("MU_KEY", "mu").replace("schema_version = 1", "schema_version = 7"), "schema_version"),
    ];
    for (file, text, needle) in cases {
        let p = dir.path().join(file);
        fs::write(&p, text).unwrap();
        let o = run_in(&dir.path().join("out"), &["--config", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{file}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{file}: {err}");
    }
    let ok = dir.path().join("ok.toml");
    fs::write(&ok, TWO_SITE.replace("MU_KEY", "mu")).unwrap();
    assert_eq!(run_in(&dir.path().join("ok"), &["--config", ok.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn unsupported_action_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--fixture", "thm-5.3-wedge", "--action", "xi"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn every_fixture_verifies() {
    let dir = tempfile::tempdir().unwrap();
    for f in FIXTURES {
        let t = Instant::now();
        let o = run_in(&dir.path().join(f.id), &["--fixture", f.id]);
        assert_eq!(o.status.code(), Some(0), "{}: {}{}", f.id, String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
        assert!(t.elapsed() < Duration::from_secs(60), "{} took {:?}", f.id, t.elapsed());
    }
}

#[test]
fn seeded_simulation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sim = |sub: &str, seed: &str| {
        let p = dir.path().join(sub);
        let o = run_in(&p, &["--fixture", "thm-3.1-grid-2x2", "--action", "simulate", "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
        (fs::read(p.join("occupation.csv")).unwrap(), fs::read(p.join("summary.csv")).unwrap())
    };
    let a = sim("a", "42");
    let b = sim("b", "42");
    let c = sim("c", "43");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn threads_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let one = run_in(&dir.path().join("1"), &["--fixture", "thm-6.1-model-B-rectangle", "--threads", "1"]);
    let four = run_in(&dir.path().join("4"), &["--fixture", "thm-6.1-model-B-rectangle", "--threads", "4"]);
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(fs::read(dir.path().join("1/wie_quadrature.csv")).unwrap(), fs::read(dir.path().join("4/wie_quadrature.csv")).unwrap());
}
