//! End-to-end tests of the `phreg` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn phreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phreg"))
        .args(args)
        .env_remove("PHREG_TOL")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn worked() -> Value {
    json!({
        "n": 2, "m": 1,
        "E": [[1, 0], [0, 0]],
        "A": [[0, 1], [-1, 0]],
        "B": [[0], [1]],
        "C": [[0, 1]],
        "Q": [[1, 0], [0, 1]],
        "J": [[0, 1], [-1, 0]],
        "R": [[0, 0], [0, 0]],
        "G": [[0], [1]],
        "P": [[0], [0]]
    })
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| {
            r.as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .collect()
        })
        .collect()
}

#[test]
fn worked_example_proportional() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "sys.json", &worked());
    let out_path = dir.path().join("closed.json");
    let out = phreg(&[
        "regularize",
        s(&input),
        "--mode",
        "p",
        "--out",
        s(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rep = stdout_json(&out);
    assert_eq!(rep["index"], json!(1));
    assert_eq!(rep["ph_preserved"], json!(true));
    // the closed loop is again port-Hamiltonian
    let out = phreg(&["validate", s(&out_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let closed: Value = serde_json::from_slice(&fs::read(&out_path).unwrap()).unwrap();
    let a = matrix(&closed["A"]);
    let want = [[0.0, 1.0], [-1.0, -1.0]];
    for (row, w) in a.iter().zip(want) {
        for (x, y) in row.iter().zip(w) {
            assert!((x - y).abs() < 1e-12, "{a:?}");
        }
    }
}

#[test]
fn worked_example_infeasible_rank() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "sys.json", &worked());
    let out_path = dir.path().join("closed.json");
    let out = phreg(&[
        "regularize",
        s(&input),
        "--mode",
        "d-rank",
        "--rank",
        "1",
        "--out",
        s(&out_path),
    ]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("feasible ranks: {2}"),
        "{}",
        stderr(&out)
    );
    let rep = stdout_json(&out);
    assert_eq!(rep["error"]["condition"], json!("rank_feasibility"));
    assert_eq!(rep["error"]["feasible_ranks"], json!([2]));
    assert!(!out_path.exists());
}

#[test]
fn worked_example_analysis() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "sys.json", &worked());
    let out = phreg(&["analyze", s(&input)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rep = stdout_json(&out);
    assert_eq!(rep["proportional_condition"]["holds"], json!(true));
    assert_eq!(rep["derivative_condition"]["holds"], json!(true));
    assert_eq!(rep["mu"], json!(0));
    assert_eq!(rep["rank_feasibility"]["feasible_ranks"], json!([2]));
    assert_eq!(rep["port_hamiltonian"], json!(true));
}

#[test]
fn identity_e_combined_needs_no_feedback() {
    let dir = TempDir::new().unwrap();
    let mut sys = worked();
    sys["E"] = json!([[1, 0], [0, 1]]);
    let input = write(&dir, "sys.json", &sys);
    let out_path = dir.path().join("closed.json");
    let out = phreg(&[
        "regularize",
        s(&input),
        "--mode",
        "pd",
        "--rank",
        "2",
        "--out",
        s(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rep = stdout_json(&out);
    assert_eq!(matrix(&rep["K"]), vec![vec![0.0]]);
    assert_eq!(matrix(&rep["F"]), vec![vec![0.0]]);
}

#[test]
fn analyze_simple_pencils() {
    let dir = TempDir::new().unwrap();
    let mut sys = worked();
    sys["E"] = json!([[1, 0], [0, 1]]);
    let input = write(&dir, "identity.json", &sys);
    let rep = stdout_json(&phreg(&["analyze", s(&input)]));
    assert_eq!(rep["regular"], json!(true));
    assert_eq!(rep["index"], json!(0));

    let singular = json!({
        "n": 2, "m": 1,
        "E": [[1, 0], [0, 0]],
        "A": [[1, 0], [0, 0]],
        "B": [[0], [0]],
        "C": [[0, 0]]
    });
    let input = write(&dir, "singular.json", &singular);
    let out = phreg(&["analyze", s(&input)]);
    assert_eq!(code(&out), 0);
    let rep = stdout_json(&out);
    assert_eq!(rep["regular"], json!(false));
    assert_eq!(rep["index"], json!("undefined"));
}

#[test]
fn validate_verdicts() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "ok.json", &worked());
    assert_eq!(code(&phreg(&["validate", s(&input)])), 0);

    // R := -R with R nonzero breaks dissipativity
    let mut sys = worked();
    sys["R"] = json!([[0, 0], [0, -1]]);
    sys["A"] = json!([[0, 1], [-1, 1]]);
    let input = write(&dir, "neg.json", &sys);
    let out = phreg(&["validate", s(&input)]);
    assert_eq!(code(&out), 1);
    let rep = stdout_json(&out);
    let failing: Vec<String> = serde_json::from_value(rep["failing"].clone()).unwrap();
    assert!(failing.iter().any(|f| f == "QtRQ_sym_psd"), "{failing:?}");

    let mut sys = worked();
    sys.as_object_mut().unwrap().remove("Q");
    let input = write(&dir, "noq.json", &sys);
    let out = phreg(&["validate", s(&input)]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("validation requires realization fields"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn input_errors() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{ not json").unwrap();
    assert_eq!(code(&phreg(&["analyze", s(&p)])), 2);
    assert_eq!(
        code(&phreg(&["analyze", s(&dir.path().join("missing.json"))])),
        2
    );
    let input = write(&dir, "sys.json", &worked());
    let out_path = dir.path().join("o.json");
    // pd without a rank
    assert_eq!(
        code(&phreg(&[
            "regularize",
            s(&input),
            "--mode",
            "pd",
            "--out",
            s(&out_path)
        ])),
        2
    );
    assert_eq!(
        code(&phreg(&[
            "regularize",
            s(&input),
            "--mode",
            "x",
            "--out",
            s(&out_path)
        ])),
        2
    );
}

#[test]
fn generate_validates_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |p: &Path| {
        phreg(&[
            "generate",
            "--n",
            "4",
            "--m",
            "2",
            "--rank-e",
            "3",
            "--seed",
            "7",
            "--out",
            s(p),
        ])
    };
    assert_eq!(code(&args(&a)), 0);
    assert_eq!(code(&args(&b)), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(code(&phreg(&["validate", s(&a)])), 0);
    let out = phreg(&[
        "generate",
        "--n",
        "4",
        "--m",
        "2",
        "--rank-e",
        "5",
        "--out",
        s(&dir.path().join("c.json")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn round_trip_pipeline() {
    let dir = TempDir::new().unwrap();
    let mut successes = 0;
    for seed in 0..12u64 {
        let n = 3 + seed % 4;
        let bundle = dir.path().join(format!("g{seed}.json"));
        let re = (n - 1 - seed % 2).to_string();
        let (n, seed_s) = (n.to_string(), seed.to_string());
        let mut args = vec![
            "generate",
            "--n",
            &n,
            "--m",
            "2",
            "--rank-e",
            &re,
            "--seed",
            &seed_s,
            "--out",
            s(&bundle),
        ];
        if seed % 3 == 0 {
            args.push("--singular-q");
        }
        assert_eq!(code(&phreg(&args)), 0);
        assert_eq!(code(&phreg(&["validate", s(&bundle)])), 0, "seed {seed}");
        let analysis = stdout_json(&phreg(&["analyze", s(&bundle)]));
        for (mode, holds) in [
            ("p", "proportional_condition"),
            ("d", "derivative_condition"),
        ] {
            let closed = dir.path().join(format!("c{seed}{mode}.json"));
            let out = phreg(&[
                "regularize",
                s(&bundle),
                "--mode",
                mode,
                "--seed",
                &seed_s,
                "--out",
                s(&closed),
            ]);
            if analysis[holds]["holds"] == json!(true) {
                assert_eq!(code(&out), 0, "seed {seed} mode {mode}: {}", stderr(&out));
                assert_eq!(
                    code(&phreg(&["validate", s(&closed)])),
                    0,
                    "seed {seed} mode {mode}"
                );
                successes += 1;
            } else {
                assert_eq!(code(&out), 1, "seed {seed} mode {mode}");
            }
        }
    }
    assert!(successes >= 6, "{successes}");
}

#[test]
fn reports_are_byte_stable() {
    let dir = TempDir::new().unwrap();
    let bundle = dir.path().join("g.json");
    let gen = [
        "generate",
        "--n",
        "5",
        "--m",
        "2",
        "--rank-e",
        "3",
        "--seed",
        "3",
        "--out",
        s(&bundle),
    ];
    assert_eq!(code(&phreg(&gen)), 0);
    let run = |tag: &str| {
        let out_path = dir.path().join(format!("closed-{tag}.json"));
        let out = phreg(&[
            "regularize",
            s(&bundle),
            "--mode",
            "d",
            "--seed",
            "9",
            "--dump-forms",
            "--out",
            s(&out_path),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (out.stdout, fs::read(&out_path).unwrap())
    };
    let (r1, o1) = run("a");
    let (r2, o2) = run("b");
    assert_eq!(o1, o2);
    // reports differ only in the output path
    let strip = |r: Vec<u8>| {
        let mut v: Value = serde_json::from_slice(&r).unwrap();
        v.as_object_mut().unwrap().remove("output");
        v
    };
    let (v1, v2) = (strip(r1), strip(r2));
    assert_eq!(v1, v2);
    assert!(v1["forms"].as_array().is_some_and(|f| !f.is_empty()));
}

#[test]
fn report_file_and_tolerance_override() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "sys.json", &worked());
    let report = dir.path().join("report.json");
    let out = Command::new(env!("CARGO_BIN_EXE_phreg"))
        .args(["analyze", s(&input), "--report", s(&report)])
        .env("PHREG_TOL", "1e-9")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let rep: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["tolerances"]["rank_relative"].as_f64(), Some(1e-9));
    assert_eq!(rep["input_digest"].as_str().map(str::len), Some(64));
}

#[test]
fn matrix_market_directory() {
    let dir = TempDir::new().unwrap();
    let mm = |name: &str, rows: usize, cols: usize, data: &[f64]| {
        // array format is column major
        let mut text = format!("%%MatrixMarket matrix array real general\n{rows} {cols}\n");
        for c in 0..cols {
            for r in 0..rows {
                text.push_str(&format!("{}\n", data[r * cols + c]));
            }
        }
        fs::write(dir.path().join(format!("{name}.mtx")), text).unwrap();
    };
    mm("E", 2, 2, &[1.0, 0.0, 0.0, 0.0]);
    mm("A", 2, 2, &[0.0, 1.0, -1.0, 0.0]);
    mm("B", 2, 1, &[0.0, 1.0]);
    fs::write(
        dir.path().join("C.mtx"),
        "%%MatrixMarket matrix coordinate real general\n1 2 1\n1 2 1.0\n",
    )
    .unwrap();
    let out = phreg(&["analyze", "--mm-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rep = stdout_json(&out);
    assert_eq!(rep["mu"], json!(0));
    assert_eq!(rep["index"], json!(2));
    assert!(rep.get("port_hamiltonian").is_none());
}
