use std::path::PathBuf;
use std::process::{Command, Output};

fn dpss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpss")).args(args).output().expect("binary runs")
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn single_certain_item_is_printed() {
    let file = scratch("one.tsv", "7\t4\n");
    let o = dpss(&["query", file.to_str().unwrap(), "--alpha", "0", "--beta", "4", "--seed", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("# mu 1 "), "{text}");
    let ids: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(ids, ["7"]);
}

#[test]
fn degenerate_query_fails() {
    let file = scratch("degenerate.tsv", "7\t4\n");
    let o = dpss(&["query", file.to_str().unwrap(), "--alpha", "0", "--beta", "0", "--seed", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate"));
}

#[test]
fn bad_inputs_fail() {
    let file = scratch("bad.tsv", "7\tx\n");
    assert!(!dpss(&["query", file.to_str().unwrap(), "--alpha", "1", "--beta", "0"]).status.success());
    let good = scratch("good.tsv", "7\t4\n");
    assert!(!dpss(&["query", good.to_str().unwrap(), "--alpha", "0.5", "--beta", "0"]).status.success());
    assert!(!dpss(&["query", "/nonexistent/items.tsv", "--alpha", "1", "--beta", "0"]).status.success());
}

#[test]
fn fixed_seed_query_is_reproducible() {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/items64.tsv");
    let args = ["query", fixture, "--alpha", "1/2", "--beta", "1000", "--seed", "42"];
    let (a, b) = (dpss(&args), dpss(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let other = dpss(&["query", fixture, "--alpha", "1/2", "--beta", "1000", "--seed", "43"]);
    assert_eq!(stdout(&a).lines().nth(1), stdout(&other).lines().nth(1));
}

#[test]
fn verify_table_passes() {
    let o = dpss(&["verify", "table", "--trials", "20000", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("outcome,expected,observed,trials,z,pass"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn verify_writes_csv_file() {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("sorted_set.csv");
    let o = dpss(&["verify", "sorted-set", "--trials", "20000", "--threads", "2", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(path).unwrap().lines().count() > 1);
}

#[test]
fn sort_demo_small() {
    let o = dpss(&["sort-demo", "--n", "3", "--seed", "5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("order correct"), "{text}");
    let again = stdout(&dpss(&["sort-demo", "--n", "3", "--seed", "5"]));
    let stable = |t: &str| t.lines().filter(|l| !l.starts_with("time")).map(str::to_owned).collect::<Vec<_>>();
    assert_eq!(stable(&text), stable(&again));
    assert!(!dpss(&["sort-demo", "--n", "5", "--max-exponent", "4"]).status.success());
}

#[test]
fn bench_writes_records() {
    let o = dpss(&["bench", "update", "--n", "1000,2000", "--trials", "500"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "op,n,params,trials,mean_ns,median_ns,max_ns,p999_ns,mu");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("update,1000,"));
    let q = dpss(&["bench", "query", "--n", "2000", "--sweep", "fixed", "--alpha", "1", "--beta", "0", "--trials", "50"]);
    assert!(q.status.success());
    assert_eq!(stdout(&q).lines().count(), 2);
}
