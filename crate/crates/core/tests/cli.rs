mod common;

use std::path::Path;
use std::process::{Command, Output};

fn soas(config: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_soas"));
    cmd.env_remove("SOAS_CONFIG").env_remove("RUST_LOG");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).output().expect("binary runs")
}

fn harness() -> std::path::PathBuf {
    common::fixtures().join("harness.toml")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn query_prints_ranked_json() {
    let out = soas(Some(&harness()), &["query", "find hotels in vienna with wifi"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["request_id"], "seed-000001");
    let results = doc["results"].as_array().unwrap();
    assert_eq!(results.len(), common::SEED_RANKING.len());
    for (r, (id, score, agent)) in results.iter().zip(common::SEED_RANKING) {
        assert_eq!(r["item_id"], id);
        assert_eq!(r["source_agent"], agent);
        assert_eq!(format!("{:.3}", r["score"].as_f64().unwrap()), score);
    }
}

#[test]
fn table_format_lists_rows_and_diagnostics() {
    let out = soas(
        Some(&harness()),
        &["query", "find hotels in vienna with wifi", "--format", "table"],
    );
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank | score | item_id | title | source_agent");
    assert_eq!(
        lines[1],
        "1 | 0.750 | hotel-riverside | riverside hotel vienna | hotels-east"
    );
    assert!(text.contains("# hotels-west: Ok"));
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("result.json");
    let out = soas(
        Some(&harness()),
        &[
            "query",
            "find hotels in vienna with wifi",
            "--out",
            path.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let written = std::fs::read_to_string(&path).unwrap();
    let again = soas(Some(&harness()), &["query", "find hotels in vienna with wifi"]);
    assert_eq!(written, stdout(&again));
}

#[test]
fn config_can_come_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_soas"))
        .env("SOAS_CONFIG", harness())
        .args(["query", "find hotels in vienna with wifi"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out),
        stdout(&soas(Some(&harness()), &["query", "find hotels in vienna with wifi"]))
    );
}

#[test]
fn empty_request_exits_2() {
    let out = soas(Some(&harness()), &["query", "   "]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(stderr(&out).contains("empty"));
}

#[test]
fn no_located_agents_exits_3() {
    let out = soas(Some(&harness()), &["query", "vegan pizza"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("food"));
}

#[test]
fn all_agents_failing_exits_4_with_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("dead.toml");
    std::fs::write(
        &config,
        "[[registry.agents]]\nid = \"dead-a\"\ndomain = \"travel\"\nendpoint = \"127.0.0.1:1\"\n",
    )
    .unwrap();
    let out = soas(Some(&config), &["query", "hotels in vienna"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("dead-a: ConnectFailed"));
}

#[test]
fn unsupported_format_exits_1() {
    let out = soas(Some(&harness()), &["query", "hotels", "--format", "xml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("xml"));
}

#[test]
fn missing_config_exits_1() {
    let out = soas(Some(Path::new("/nonexistent/soas.toml")), &["query", "hotels"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn registry_list_shows_harness_agents() {
    let out = soas(Some(&harness()), &["registry", "list"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(" | ").next().unwrap()).collect();
    assert_eq!(ids, ["city-guide", "hotels-east", "hotels-west"]);
    assert!(text.lines().skip(1).all(|l| l.ends_with("| true")));
}
