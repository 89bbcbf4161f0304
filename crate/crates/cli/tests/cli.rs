use std::path::Path;
use std::process::{Command, Output};

fn coherency(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coherency"))
        .args(args)
        .env_remove("COHERENCE_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_acs_is_not_coherent() {
    let out = coherency(&[
        "check",
        "--model",
        "acs",
        "--psi",
        "1.5",
        "--mu",
        "0.01",
        "--chain",
        "absorbing:p=0.8,rL=-0.004",
    ]);
    assert_eq!(code(&out), 10);
    assert!(stdout(&out).contains("incoherent-or-incomplete"));
}

#[test]
fn check_passive_rule_below_cutoff_is_coherent() {
    let out = coherency(&[
        "check",
        "--model",
        "nk-tr",
        "--calib",
        "mr2014cd",
        "--psi",
        "0.3",
        "--chain",
        "rouwenhorst:rho=0.7,sigma=0.001,k=2",
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let out = coherency(&[
        "check",
        "--model",
        "nk-tr",
        "--calib",
        "mr2014cd",
        "--psi",
        "0.6",
        "--chain",
        "rouwenhorst:rho=0.7,sigma=0.001,k=2",
    ]);
    assert_eq!(code(&out), 10);
}

#[test]
fn usage_errors_exit_two() {
    let missing_psi = coherency(&[
        "check",
        "--model",
        "acs",
        "--chain",
        "absorbing:p=0.8,rL=-0.004",
    ]);
    assert_eq!(code(&missing_psi), 2);
    let bad_chain = coherency(&[
        "check",
        "--model",
        "acs",
        "--psi",
        "1.5",
        "--chain",
        "absorbing:p=0.8",
    ]);
    assert_eq!(code(&bad_chain), 2);
    let unknown_calib = coherency(&["cutoff", "--calib", "nope"]);
    assert_eq!(code(&unknown_calib), 2);
    let no_command = coherency(&[]);
    assert_eq!(code(&no_command), 2);
}

#[test]
fn degenerate_system_exits_eleven() {
    let out = coherency(&[
        "check",
        "--model",
        "zlb-expectations",
        "--psi",
        "1.5",
        "--mu",
        "0.01",
        "--chain",
        "absorbing:p=0.8,rL=-0.004",
    ]);
    assert_eq!(code(&out), 11);
}

#[test]
fn enumerate_acs_three_states_prints_eight() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sols.csv");
    let out = coherency(&[
        "enumerate",
        "--model",
        "acs",
        "--psi",
        "1.5",
        "--mu",
        "0.01",
        "--chain",
        "rouwenhorst:rho=0.9,sigma=0.0007,k=3",
        "--csv",
        path_str(&csv),
    ]);
    assert_eq!(stdout(&out).lines().next(), Some("8"));
    assert_eq!(code(&out), 10);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("solution_id,regime_bits,state_index,x1,x2,y1,margin1")
    );
    assert_eq!(lines.count(), 8 * 3);
}

#[test]
fn enumerate_two_state_window_prints_four_with_labels() {
    let mu = 2.0 * 1.005f64.ln();
    let (mu_s, r_l) = (format!("{mu}"), format!("rL={}", -0.2 * mu / 3.0));
    let out = coherency(&[
        "enumerate",
        "--model",
        "acs",
        "--psi",
        "1.5",
        "--mu",
        &mu_s,
        "--chain",
        &format!("absorbing:p=0.8,{r_l}"),
    ]);
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("4"));
    for label in ["ZIR,ZIR", "ZIR,PIR", "PIR,ZIR", "PIR,PIR"] {
        assert!(text.contains(label), "{label} missing from {text}");
    }
}

#[test]
fn support_violating_shock_has_no_solution() {
    // Beyond mu ((psi - p)/(psi p) + theta/psi) at p = 0.7.
    let out = coherency(&[
        "enumerate",
        "--model",
        "nk-tr",
        "--calib",
        "mr2014cd",
        "--psi",
        "1.5",
        "--chain",
        "absorbing:p=0.7,rL=-0.02",
    ]);
    assert_eq!(stdout(&out).lines().next(), Some("0"));
    assert_eq!(code(&out), 10);
    let inside = coherency(&[
        "enumerate",
        "--model",
        "nk-tr",
        "--calib",
        "mr2014cd",
        "--psi",
        "1.5",
        "--chain",
        "absorbing:p=0.7,rL=-0.005",
    ]);
    assert_ne!(stdout(&inside).lines().next(), Some("0"));
}

#[test]
fn cutoff_reproduces_confidence_driven_value() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("cut.json");
    let out = coherency(&[
        "cutoff",
        "--calib",
        "mr2014cd",
        "--k",
        "2",
        "--out",
        path_str(&json),
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.494).abs() < 1e-3);
    assert_eq!(v["case"], "bracketed");
    assert!(stdout(&out).starts_with("psi_bar = 0.494"));
}

#[test]
fn bounds_echo_the_manifold_slope() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("itr.json");
    let out = coherency(&[
        "bounds",
        "nk-itr",
        "--psi",
        "1.5",
        "--sigma",
        "1",
        "--beta",
        "0.99",
        "--phi",
        "0.8",
        "--lambda",
        "0.02",
        "--out",
        path_str(&json),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("gamma_R = "));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let g = v["result"]["gamma_r"].as_f64().unwrap();
    assert!(g > 0.0 && g < 1.0);
    assert_eq!(v["inputs"]["params"]["phi"], 0.8);
}

#[test]
fn simulate_negative_mu_diverges() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let out = coherency(&[
        "simulate",
        "acs-nonlinear",
        "--mu",
        "-0.01",
        "--csv",
        path_str(&csv),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("diverged"));
    assert!(std::fs::read_to_string(&csv)
        .unwrap()
        .starts_with("t,value,regime\n"));
}

#[test]
fn backward_writes_paths() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("paths.csv");
    let out = coherency(&[
        "backward",
        "--model",
        "nk-itr",
        "--calib",
        "mr2014cd",
        "--psi",
        "1.5",
        "--phi",
        "0.5",
        "--chain",
        "absorbing:p=0.7,rL=-0.005",
        "--horizon",
        "2",
        "--y0",
        "-0.01",
        "--csv",
        path_str(&csv),
    ]);
    assert!(matches!(code(&out), 0 | 10));
    assert!(stdout(&out).starts_with("paths "));
    assert!(std::fs::read_to_string(&csv)
        .unwrap()
        .starts_with("path,t,state,y,regime\n"));
}

fn is_sorted(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Object(map) => {
            let keys: Vec<&String> = map.keys().collect();
            keys.windows(2).all(|w| w[0] < w[1]) && map.values().all(is_sorted)
        }
        serde_json::Value::Array(items) => items.iter().all(is_sorted),
        _ => true,
    }
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let json = dir.path().join(format!("rep{threads}.json"));
        let csv = dir.path().join(format!("sol{threads}.csv"));
        let out = coherency(&[
            "enumerate",
            "--threads",
            threads,
            "--model",
            "nk-tr",
            "--calib",
            "mr2014cd",
            "--psi",
            "1.5",
            "--chain",
            "rouwenhorst:rho=0.7,sigma=0.0011,k=10",
            "--out",
            path_str(&json),
            "--csv",
            path_str(&csv),
        ]);
        assert_eq!(code(&out), 10);
        let text = std::fs::read_to_string(&json).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(is_sorted(&value));
        assert_eq!(value["system"], "reduced-nk");
        outputs.push((text, std::fs::read_to_string(&csv).unwrap(), stdout(&out)));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn thread_count_env_fallback_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_coherency"))
        .args(["cutoff", "--calib", "mr2014fd"])
        .env("COHERENCE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn model_and_chain_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("acs.json");
    let chain = dir.path().join("chain.json");
    let acs = coherency::canonical::build_acs(1.5, 0.01).unwrap();
    std::fs::write(&model, acs.to_json().to_string()).unwrap();
    let mc = coherency::MarkovChain::absorbing(0.8, -0.004)
        .unwrap()
        .lift(2, 0, Some(1))
        .unwrap();
    std::fs::write(&chain, mc.to_json().to_string()).unwrap();
    let from_files = coherency(&[
        "check",
        "--model-file",
        path_str(&model),
        "--chain",
        &format!("file:{}", path_str(&chain)),
    ]);
    assert_eq!(code(&from_files), 10);
    let scalar = coherency(&[
        "check",
        "--model-file",
        path_str(&model),
        "--chain",
        "absorbing:p=0.8,rL=-0.004",
    ]);
    assert_eq!(stdout(&scalar), stdout(&from_files));
}
