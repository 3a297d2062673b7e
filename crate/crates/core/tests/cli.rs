use std::path::Path;
use std::process::{Command, Output};

fn chaoswave(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaoswave"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("CHAOSWAVE_SEED")
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir).map(|d| d.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect()).unwrap_or_default();
    v.sort();
    v
}

#[test]
fn invalid_hurst_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = chaoswave(&["verify", "--set", "model.hurst=0.4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hurst"));
    assert!(files(dir.path()).is_empty());
}

#[test]
fn malformed_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grid]\nnt = \"many\"\n").unwrap();
    let o = chaoswave(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn order_three_on_a_large_grid_exits_with_budget_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = chaoswave(&["simulate", "--order", "3", "--samples", "10"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn white_verify_passes_with_closed_form_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = chaoswave(&["verify", "--set", "model.spatial_mode=white"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let json = files(dir.path()).into_iter().find(|f| f.ends_with(".json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(json)).unwrap()).unwrap();
    assert_eq!(doc["config"]["model"]["spatial_mode"], "white");
    let checks = doc["report"]["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["method"] == "closed-form"));
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn simulate_zero_count_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = chaoswave(&["simulate", "--samples", "0"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(files(dir.path()).is_empty());
}

#[test]
fn seed_env_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let print = |env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_chaoswave"));
        c.args(["simulate", "--print-config"]).env_remove("CHAOSWAVE_SEED");
        if let Some(e) = env {
            c.env("CHAOSWAVE_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let o = c.arg("--out").arg(dir.path()).output().unwrap();
        assert!(o.status.success());
        String::from_utf8(o.stdout).unwrap()
    };
    assert!(print(Some("42"), None).contains("seed = 42"));
    assert!(print(Some("42"), Some("7")).contains("seed = 7"));
    let c = chaoswave::RunConfig::from_toml(&print(None, None)).unwrap();
    assert_eq!(c.run.seed, chaoswave::config::RunSection::default().seed);
}

#[test]
fn csv_cells_are_finite_and_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let o = chaoswave(&["moments", "--set", "grid.nt=6", "--set", "grid.nx=6", "--order", "3", "--samples", "2000"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = files(dir.path()).into_iter().find(|f| f.ends_with(".csv")).unwrap();
    assert!(csv.starts_with("moments-"));
    let text = std::fs::read_to_string(dir.path().join(&csv)).unwrap();
    assert!(text.contains("# order = 3"));
    let mut data = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(data.next(), Some("n,discrete_variance,mc_variance,mc_std_error,alpha_n"));
    let rows: Vec<&str> = data.collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        for cell in r.split(',') {
            assert!(cell.parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn constants_report_contents() {
    let dir = tempfile::tempdir().unwrap();
    let o = chaoswave(&["constants"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json = files(dir.path()).into_iter().find(|f| f.ends_with(".json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(json)).unwrap()).unwrap();
    let t = &doc["report"]["table"];
    assert_eq!(t["big_gamma_t"], 1.5);
    assert_eq!(t["m_t"], 8.0);
    for k in ["c0", "c_t", "c_t_dprime", "c_t_star"] {
        assert!(t[k].as_f64().unwrap() > 0.0, "{k}");
    }
    assert!(!t["k_m"].as_array().unwrap().is_empty());
}
