use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anonmatch"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("anonmatch-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn run_writes_trace_that_verifies() {
    let trace = scratch("run.jsonl");
    let csv = scratch("run.csv");
    let _ = std::fs::remove_file(&csv);
    let out = bin()
        .args(["run", "--gen", "random,n=9,p=0.3", "--algo", "composed", "--daemon", "subset"])
        .args(["--faults", "random", "--seed", "4", "--trace-out"])
        .arg(&trace)
        .arg("--csv-out")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("\"converged\":true"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 2);
    assert_eq!(code(bin().arg("verify").arg("--trace").arg(&trace)), 0);

    // a second identical run produces the same bytes
    let again = scratch("run2.jsonl");
    bin()
        .args(["run", "--gen", "random,n=9,p=0.3", "--algo", "composed", "--daemon", "subset"])
        .args(["--faults", "random", "--seed", "4", "--trace-out"])
        .arg(&again)
        .output()
        .unwrap();
    assert_eq!(std::fs::read(&trace).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn tampered_trace_is_a_monitor_failure() {
    let trace = scratch("tamper.jsonl");
    bin()
        .args(["run", "--gen", "path,6", "--daemon", "sync", "--faults", "random", "--seed", "2", "--trace-out"])
        .arg(&trace)
        .output()
        .unwrap();
    let text = std::fs::read_to_string(&trace).unwrap();
    let tampered = text.replacen("\"marriage\"", "\"seduction\"", 1).replacen("\"abandonment\"", "\"marriage\"", 1);
    assert_ne!(text, tampered);
    std::fs::write(&trace, tampered).unwrap();
    assert_eq!(code(bin().arg("verify").arg("--trace").arg(&trace)), 3);
}

#[test]
fn exit_codes_by_category() {
    assert_eq!(code(bin().args(["run", "--gen", "bogus,3"])), 2);
    assert_eq!(code(bin().args(["run", "--graph", "/nonexistent/graph.txt"])), 2);
    assert_eq!(code(bin().args(["run", "--gen", "complete,8", "--daemon", "seq", "--max-moves", "2"])), 4);
    assert_eq!(code(bin().args(["modelcheck", "--gen", "path,3", "--algo", "a1"])), 0);
    assert_eq!(code(bin().args(["modelcheck", "--gen", "path,9"])), 2);
    assert_eq!(code(bin().args(["sweep", "--ns", "3,6", "--trials", "10", "--daemon", "adversarial"])), 0);
}

#[test]
fn verify_checks_a_state_file() {
    let graph = scratch("k2.txt");
    std::fs::write(&graph, "2 1\n0 1\n").unwrap();
    let good = scratch("good.json");
    std::fs::write(&good, r#"{"beta":{"beta":[1,1]}}"#).unwrap();
    assert_eq!(code(bin().arg("verify").arg("--graph").arg(&graph).arg("--state").arg(&good)), 0);
    let unstable = scratch("unstable.json");
    std::fs::write(&unstable, r#"{"beta":{"beta":[null,1]}}"#).unwrap();
    assert_eq!(code(bin().arg("verify").arg("--graph").arg(&graph).arg("--state").arg(&unstable)), 4);
}
