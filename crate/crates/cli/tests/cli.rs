use std::path::PathBuf;
use std::process::{Command, Output};

fn spec(name: &str) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs");
    root.join(format!("{name}.spec")).to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dimerlab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn phase_reports() {
    let o = run(&["phase", &spec("square_octagon")]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("phase: gaseous"));
    assert!(s.contains("P: 5 - z - w - w^-1 - z^-1"));
    assert!(s.contains("min_abs_P: 1.0"));
    let s = stdout(&run(&["phase", &spec("z2_uniform")]));
    assert!(s.contains("phase: liquid_generic"));
    let s = stdout(&run(&["phase", &spec("z2_3111")]));
    assert!(s.contains("phase: liquid_nongeneric"));
}

#[test]
fn every_output_embeds_provenance() {
    let s = stdout(&run(&["prob", &spec("z2_uniform"), "--pattern", "a", "--format", "csv"]));
    assert!(s.contains("# dimerlab: "));
    assert!(s.contains("# graph_hash: "));
    assert!(s.contains("# config: {"));
    let row = s.lines().find(|l| l.starts_with("a,")).unwrap();
    let p: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((p - 0.25).abs() < 1e-12);
}

#[test]
fn weight_override_changes_hash_and_probability() {
    let a = stdout(&run(&["prob", &spec("z2_abcd"), "--pattern", "a", "--format", "csv"]));
    let b = stdout(&run(&["prob", &spec("z2_abcd"), "--pattern", "a", "--weight", "a=1", "--format", "csv"]));
    let hash = |s: &str| s.lines().find(|l| l.starts_with("# graph_hash")).unwrap().to_string();
    assert_ne!(hash(&a), hash(&b));
    assert!(b.lines().any(|l| l.starts_with("a,0.25")));
}

#[test]
fn samples_are_reproducible() {
    let args = ["sample", &spec("square_octagon"), "--cells", "1", "--n", "50", "--seed", "3"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["sample", &spec("square_octagon"), "--cells", "1", "--n", "50", "--seed", "4", "--threads", "1"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn errors_are_machine_readable() {
    let o = run(&["amplitude", &spec("z2_3111")]);
    assert!(!o.status.success());
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "resonant");
    let o = run(&["clt", &spec("square_octagon"), "--pattern", "w2b1", "--phi", "gaussian:0,0,0.1", "--eps", "1/8", "--n", "10"]);
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "precondition");
}

#[test]
fn square_octagon_amplitudes_match_closed_forms() {
    let s = stdout(&run(&["amplitude", &spec("square_octagon"), "--edges", "all", "--format", "csv"]));
    assert!(s.contains("parameter m = 16/25"));
    let get = |p1: &str, p2: &str| -> f64 {
        let l = s.lines().find(|l| l.starts_with(&format!("{p1},{p2},"))).unwrap();
        l.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert!((get("w1b1", "w1b1") - 0.11442489745978038).abs() < 1e-10);
    assert!((get("w2b1", "w2b1") - 0.25404984002426456).abs() < 1e-10);
}

#[test]
fn check_passes_on_bundled_specs() {
    for name in ["square_octagon", "z2_uniform", "z2_abcd", "honeycomb"] {
        let o = run(&["check", &spec(name)]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!stdout(&o).contains("FAIL"));
    }
}
