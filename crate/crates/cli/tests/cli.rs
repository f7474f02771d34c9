use std::path::Path;
use std::process::{Command, Output};

use zetrace::{Event, RunSummary, ScenarioLog};

fn zetrace(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zetrace"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn two_agents_contact_produces_one_burst() {
    let dir = tempfile::tempdir().unwrap();
    let out = zetrace(&["run", "--config", "two_agents_contact", "--check"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.bursts, 1);
    assert_eq!(summary.max_burst_n, 3);
    assert_eq!(summary.oracle_diffs, Some(0));
    assert_eq!(summary.reports.emitted, summary.reports.ingested);
}

#[test]
fn seed_override_changes_the_log() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(zetrace(&["run", "--config", "two_agents_contact"], a.path()).status.success());
    assert!(zetrace(&["run", "--config", "two_agents_contact", "--seed", "2"], b.path()).status.success());
    let read = |d: &Path| std::fs::read(d.join("log.ndjson")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn invalid_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\nseed = 1\nduration_slots = 2\nd = -1.0\n\
         region = { min = { x = 0.0, y = 0.0 }, max = { x = 10.0, y = 10.0 } }\n",
    )
    .unwrap();
    let out = zetrace(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains('d'));

    let out = zetrace(&["run", "--config", "no_such_scenario"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_replay_flags_a_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    assert!(zetrace(&["run", "--config", "planted_alert"], dir.path()).status.success());
    let path = dir.path().join("log.ndjson");
    let replay = |p: &Path| {
        Command::new(env!("CARGO_BIN_EXE_zetrace"))
            .args(["oracle-replay", "--log"])
            .arg(p)
            .output()
            .unwrap()
    };
    assert!(replay(&path).status.success());

    let log = ScenarioLog::read_ndjson(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    let mut tampered = ScenarioLog::new();
    for e in log.events() {
        let mut e = e.clone();
        if let Event::Alert { total_risk, .. } = &mut e {
            *total_risk += 0.5;
        }
        tampered.push(e);
    }
    let bad = dir.path().join("tampered.ndjson");
    tampered.write_ndjson(std::fs::File::create(&bad).unwrap()).unwrap();
    let out = replay(&bad);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn lists_bundled_scenarios() {
    let out = Command::new(env!("CARGO_BIN_EXE_zetrace")).arg("scenarios").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["security_table", "desk_scale", "planted_alert", "battleship", "two_agents_contact"] {
        assert!(text.contains(name), "{name} missing from {text}");
    }
}
