use std::fs;
use std::path::PathBuf;

use asyncdetect::harness::{ExperimentConfig, ReplayConfig};

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(config_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        if text.contains("steps = [") {
            let cfg = ReplayConfig::from_toml(&text).unwrap();
            cfg.parsed_steps().unwrap();
            cfg.scenario().unwrap().validate().unwrap();
        } else {
            let cfg = ExperimentConfig::from_toml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        }
        seen += 1;
    }
    assert!(seen >= 4);
}
