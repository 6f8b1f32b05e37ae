use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dri-manet")).args(args).current_dir(dir).output().expect("spawn")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = cli(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn column<'a>(csv: &'a str, name: &str) -> Vec<&'a str> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(i).unwrap()).collect()
}

fn short_table2(dir: &Path) {
    ok(&["fixtures"], dir);
    let text = fs::read_to_string(dir.join("table2.scenario")).unwrap();
    let text = text.replace("duration_s = 1000", "duration_s = 150").replace("mode = baseline", "mode = defense");
    fs::write(dir.join("short.scenario"), text).unwrap();
}

#[test]
fn fixtures_writes_both_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["fixtures", "--out-dir", "fx"], dir.path());
    assert_eq!(stdout.lines().count(), 2);
    let fig6 = fs::read_to_string(dir.path().join("fx/fig6.scenario")).unwrap();
    assert!(fig6.contains("labels = S 1 2 4 6 B_1 B_2 D"));
    assert!(fig6.contains("mode = defense"));
    let table2 = fs::read_to_string(dir.path().join("fx/table2.scenario")).unwrap();
    assert!(table2.contains("nodes = 30"));
}

#[test]
fn run_writes_one_row_per_seed_plus_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    short_table2(dir.path());
    ok(&["run", "short.scenario", "--seeds", "1-5", "--out", "out.csv"], dir.path());
    let csv = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert_eq!(column(&csv, "seed"), ["1", "2", "3", "4", "5", "mean"]);
    assert!(column(&csv, "mode").iter().all(|m| *m == "defense"));
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    short_table2(dir.path());
    ok(&["run", "short.scenario", "--seeds", "1,2", "--out", "a.csv"], dir.path());
    ok(&["run", "short.scenario", "--seeds", "2,1", "--jobs", "2", "--out", "b.csv"], dir.path());
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn fig6_run_flags_exactly_the_two_black_holes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fixtures"], dir.path());
    let stdout = ok(&["run", "fig6.scenario", "--seeds", "1-3", "--out", "fig6.csv", "--verbose-events"], dir.path());
    assert!(stdout.contains("flagged in every run: B_1;B_2"));
    let csv = fs::read_to_string(dir.path().join("fig6.csv")).unwrap();
    assert!(column(&csv, "flagged").iter().all(|f| *f == "B_1;B_2"));
    assert!(column(&csv, "fp_rate").iter().all(|f| f.parse::<f64>().unwrap() == 0.0));
    let log = fs::read_to_string(dir.path().join("fig6.csv.events/defense-seed1.log")).unwrap();
    assert!(log.lines().any(|l| l.ends_with(" ALARM")));
}

#[test]
fn sweep_covers_every_value_and_mode() {
    let dir = tempfile::tempdir().unwrap();
    short_table2(dir.path());
    let args =
        ["sweep", "short.scenario", "--key", "blackhole_count", "--values", "0,2", "--seeds", "1", "--out", "s.csv"];
    ok(&args, dir.path());
    let csv = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let cells: Vec<(&str, &str)> = column(&csv, "sweep_value")
        .into_iter()
        .zip(column(&csv, "mode"))
        .zip(column(&csv, "seed"))
        .filter(|(_, seed)| *seed == "1")
        .map(|(cell, _)| cell)
        .collect();
    // attack without black holes is skipped
    assert_eq!(cells, [("0", "baseline"), ("0", "defense"), ("2", "baseline"), ("2", "attack"), ("2", "defense")]);
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    short_table2(dir.path());
    let out = cli(&["run", "missing.scenario", "--out", "x.csv"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.scenario"));
    let out = cli(&["sweep", "short.scenario", "--key", "colour", "--values", "1", "--out", "x.csv"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    let out = cli(&["run", "short.scenario", "--seeds", "5-1", "--out", "x.csv"], dir.path());
    assert!(!out.status.success());
}
