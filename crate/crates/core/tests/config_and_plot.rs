use std::path::PathBuf;

use sdpg_core::config::TrainConfig;
use sdpg_core::envs::{EnvId, ObsMode};
use sdpg_core::plot::{plot_files, read_curve, render_svg};
use sdpg_core::Error;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_load_and_validate() {
    let mut count = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = TrainConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            count += 1;
        }
    }
    assert!(count >= 3);
}

#[test]
fn toml_round_trip() {
    for cfg in [
        TrainConfig::desk_scale(EnvId::PendulumSwingUp, ObsMode::State),
        TrainConfig::paper_scale(EnvId::PointMass2D, ObsMode::Pixels),
    ] {
        let back = TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back.to_toml_string(), cfg.to_toml_string());
    }
}

#[test]
fn bad_configs_are_rejected() {
    let good = TrainConfig::desk_scale(EnvId::PointMass2D, ObsMode::State).to_toml_string();
    let unknown = good.replacen("[rollout]", "[rollout]\nbogus = 1", 1);
    assert!(matches!(TrainConfig::from_toml_str(&unknown), Err(Error::Config(_))));
    let zero_m = good.replacen("m = 15", "m = 0", 1);
    assert!(TrainConfig::from_toml_str(&zero_m).is_err());
    let bad_env = good.replacen("\"PointMass2D\"", "\"Hopper\"", 1);
    assert!(TrainConfig::from_toml_str(&bad_env).is_err());
}

#[test]
fn plot_reads_metrics_and_reports_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("a.csv");
    let bad = dir.path().join("b.csv");
    let header = "epoch,env_steps,mean_nominal_return";
    std::fs::write(&good, format!("{header}\n0,10,1.5\n1,20,2.5\n")).unwrap();
    std::fs::write(&bad, format!("{header}\n0,10,1.5\n1,20,oops\n")).unwrap();
    let curve = read_curve(&good).unwrap();
    assert_eq!(curve.points, vec![(0.0, 1.5), (1.0, 2.5)]);
    match read_curve(&bad) {
        Err(Error::Csv { path, .. }) => assert_eq!(path, bad),
        other => panic!("{other:?}"),
    }
    let out = dir.path().join("out.svg");
    plot_files(&[good.clone(), good], &out).unwrap();
    let svg = std::fs::read_to_string(&out).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(render_svg(&[]).contains("</svg>"));
}
