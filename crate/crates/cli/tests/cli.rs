use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn volsq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volsq"))
        .args(args)
        .output()
        .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("volsq-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn experiment_output_is_reproducible_across_thread_counts() {
    let dir = scratch("experiment");
    let cfg = dir.join("cfg.json");
    fs::write(
        &cfg,
        r#"{"d": 3, "k_values": [3, 6], "T_max": 32, "runs": 4, "seed": 9}"#,
    )
    .unwrap();
    let (a, b) = (dir.join("a"), dir.join("b"));
    let out = volsq(&[
        "experiment",
        "--config",
        s(&cfg),
        "--out",
        s(&a),
        "--threads",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = volsq(&[
        "experiment",
        "--config",
        s(&cfg),
        "--out",
        s(&b),
        "--threads",
        "3",
    ]);
    assert!(out.status.success());

    let csv = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("results.csv")).unwrap());
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,k,T,run,error_sq"));
    // 2 methods x 2 k values x 4 runs x T in {1,2,4,8,16,32}
    assert_eq!(lines.count(), 2 * 2 * 4 * 6);
    assert!(fs::read_to_string(a.join("medians.dat"))
        .unwrap()
        .contains("# method=iid_plus_volume k=6"));

    let c = dir.join("c");
    let out = volsq(&[
        "experiment",
        "--config",
        s(&cfg),
        "--out",
        s(&c),
        "--seed",
        "10",
    ]);
    assert!(out.status.success());
    assert_ne!(
        fs::read(c.join("results.csv")).unwrap(),
        fs::read(a.join("results.csv")).unwrap()
    );
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = scratch("badcfg");
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, r#"{"d": 3, "k_values": [2]}"#).unwrap();
    let out = volsq(&["experiment", "--config", s(&cfg), "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(2));
    let out = volsq(&[
        "experiment",
        "--config",
        s(&dir.join("missing.json")),
        "--out",
        s(&dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_reports_every_check() {
    let out = volsq(&["validate", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"passed\": true"));
    assert!(text.contains("\"registered_checks\": 12"));

    let out = volsq(&["validate", "--corrupt-removal-normalization"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sample_methods_write_one_row_per_point() {
    let dir = scratch("sample");
    let discrete = dir.join("discrete.json");
    fs::write(
        &discrete,
        r#"{"kind": "discrete", "d": 2, "atoms": [[1, 0], [0, 1], [1, 1]], "probs": [0.3, 0.3, 0.4], "seed": 1}"#,
    )
    .unwrap();
    let gaussian = dir.join("gaussian.json");
    fs::write(
        &gaussian,
        r#"{"kind": "gaussian", "d": 2, "covariance": [[1, 0.2], [0.2, 2]]}"#,
    )
    .unwrap();

    for (dist, method, k) in [
        (&discrete, "rejection", "3"),
        (&discrete, "reverse-iterative", "2"),
        (&gaussian, "gaussian", "4"),
    ] {
        let out_file = dir.join(format!("{method}.csv"));
        let out = volsq(&[
            "sample",
            "--dist",
            s(dist),
            "--method",
            method,
            "--k",
            k,
            "--n-samples",
            "5",
            "--out",
            s(&out_file),
        ]);
        assert!(
            out.status.success(),
            "{method}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = fs::read_to_string(&out_file).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("sample,index,x1,x2"));
        assert_eq!(lines.count(), 5 * k.parse::<usize>().unwrap(), "{method}");
    }

    let out = volsq(&[
        "sample",
        "--dist",
        s(&gaussian),
        "--method",
        "rejection",
        "--k",
        "2",
        "--out",
        s(&dir.join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
