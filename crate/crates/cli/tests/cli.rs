use std::process::{Command, Output};

fn wres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wres")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn compute_is_byte_identical_across_runs() {
    for fmt in ["latex", "json", "jets"] {
        let args = ["compute", "--part", "cocycle", "--dim", "6", "--format", fmt];
        let (a, b) = (wres(&args), wres(&args));
        assert_eq!(a.status.code(), Some(0));
        assert_eq!(a.stdout, b.stdout, "{}", fmt);
    }
}

#[test]
fn compute_json_carries_the_prefactor() {
    let o = wres(&["compute", "--part", "cocycle", "--dim", "6", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("\"prefactor\": \"tr[id]*area(S_n)\""), "{}", text);
    assert!(text.contains("\"dim\": 6"));
    assert!(text.contains("\"part\": \"cocycle\""));
}

#[test]
fn compute_defaults_to_latex() {
    let o = wres(&["compute", "--part", "iii", "--dim", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\\Delta(a^3)\\Delta(a^4)g(da^1, da^2)"));
}

#[test]
fn out_flag_writes_the_same_text() {
    let dir = std::env::temp_dir().join(format!("wres-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("iv.jets");
    let o = wres(&["compute", "--part", "iv", "--dim", "4", "--format", "jets", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let direct = wres(&["compute", "--part", "iv", "--dim", "4", "--format", "jets"]);
    assert_eq!(std::fs::read(&path).unwrap(), direct.stdout);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_passes_for_every_target() {
    for t in ["i", "ii", "iii", "iv", "cocycle"] {
        for n in ["4", "6", "8"] {
            let o = wres(&["verify", "--part", t, "--dim", n]);
            assert_eq!(o.status.code(), Some(0), "{} {}: {}", t, n, stdout(&o));
            assert!(stdout(&o).contains("jets vs golden: pass"));
        }
    }
}

#[test]
fn verify_reports_reference_discrepancies() {
    let o = wres(&["verify", "--part", "i", "--dim", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("paper-discrepancy: "));
}

#[test]
fn oracle_part_ii_in_six_dimensions() {
    let o = wres(&["oracle", "--part", "ii", "--dim", "6", "--seed", "42"]);
    assert_eq!(o.status.code(), Some(0));
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert!(last.starts_with("max_rel_err ") && last.contains(" <= 1.0e-8"), "{}", last);
}

#[test]
fn oracle_fails_under_a_zero_tolerance() {
    // the curved run for this seed carries a nonzero rounding error
    let o = wres(&["oracle", "--part", "ii", "--dim", "6", "--seed", "42", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).lines().last().unwrap().contains(" > "));
}

#[test]
fn usage_errors_exit_with_two() {
    let cases: &[&[&str]] = &[
        &["compute", "--part", "i", "--dim", "5"],
        &["compute", "--part", "v", "--dim", "6"],
        &["compute", "--part", "i", "--dim", "6", "--format", "pdf"],
        &["compute", "--part", "i", "--dim", "6", "--bogus"],
        &["verify", "--part", "i", "--dim", "10"],
        &["verify", "--dim", "6"],
        &["oracle", "--part", "i", "--dim", "8"],
        &["oracle", "--part", "i", "--dim", "4", "--tol", "abc"],
        &["frobnicate"],
        &[],
    ];
    for args in cases {
        let o = wres(args);
        assert_eq!(o.status.code(), Some(2), "{:?}", args);
        assert!(o.stdout.is_empty(), "{:?}", args);
        assert!(!o.stderr.is_empty(), "{:?}", args);
    }
}
