//! End-to-end runs of the `seisgen` binary on a tiny synthetic dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seisgen::config::RunConfig;
use seisgen::diffusion::{ScheduleConfig, TrainConfig};
use seisgen::features::GriffinLimConfig;
use seisgen::nets::ModelConfig;
use seisgen::seisdata::{import_catalog, read_trace_file, TRACE_LEN};
use seisgen::seismetrics::{read_gmpe_csv, EvalReport};

fn seisgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seisgen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seisgen(args);
    assert!(
        out.status.success(),
        "seisgen {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn micro_config(dataset: &Path, output_dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        dataset: dataset.to_path_buf(),
        output_dir: output_dir.to_path_buf(),
        seed: 3,
        model: ModelConfig::micro(),
        schedule: ScheduleConfig {
            timesteps: 20,
            ..ScheduleConfig::default()
        },
        train: TrainConfig {
            batch_size: 1,
            max_steps: Some(2),
            griffin_lim: GriffinLimConfig {
                iterations: 2,
                ..GriffinLimConfig::default()
            },
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.sampler.steps = 20;
    cfg.sampler.griffin_lim.iterations = 2;
    cfg
}

#[test]
fn synth_build_train_sample_evaluate_plot() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let raw = root.join("raw");
    let data = root.join("data");
    let run = root.join("run");

    ok(&["synth-data", "--events", "5", "--stations", "3", "--seed", "4", "--test-fraction", "0.4", "--raw", "--output", s(&raw)]);
    let summary = ok(&["build-dataset", "--input", s(&raw), "--output", s(&data)]);
    assert!(summary.contains("events"), "{summary}");
    let catalog = import_catalog(&data).unwrap();
    assert_eq!(catalog.events().len(), 5);

    let cfg_path = root.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&micro_config(&data, &run)).unwrap()).unwrap();
    let out = ok(&["train", "--config", s(&cfg_path)]);
    assert!(out.contains("step 1 loss"), "{out}");
    let ckpt = run.join("checkpoint");
    assert!(ckpt.is_dir());
    assert_eq!(std::fs::read_to_string(run.join("loss.csv")).unwrap().lines().count(), 3);

    // Unconditional and with-source sampling.
    let conds = root.join("conditions.csv");
    std::fs::write(
        &conds,
        "s_lat,s_lon,e_lat,e_lon,e_dep,e_m\n34.0,-118.0,34.2,-117.8,8.0,3.2\n33.5,-117.0,33.6,-117.1,5.0,2.8\n",
    )
    .unwrap();
    let samples = root.join("samples");
    let printed = ok(&["sample", "--checkpoint", s(&ckpt), "--conditions", s(&conds), "--out", s(&samples), "--steps", "5", "--config", s(&cfg_path)]);
    assert_eq!(printed.lines().count(), 2);
    let first = samples.join("sample_0000.f32");
    assert_eq!(read_trace_file(&first).unwrap().len(), 3 * TRACE_LEN);

    let entry = &catalog.entries()[0];
    let source = root.join("source.f32");
    seisgen::seisdata::write_trace_file(&source, catalog.load_trace(entry).unwrap().samples()).unwrap();
    let with_source = root.join("with_source");
    ok(&["sample", "--checkpoint", s(&ckpt), "--conditions", s(&conds), "--source", s(&source), "--out", s(&with_source), "--steps", "5", "--config", s(&cfg_path)]);
    assert!(with_source.join("sample_0001.f32").exists());

    // Evaluation writes agreeing JSON and CSV plus GMPE points.
    let eval = root.join("eval");
    ok(&["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(&eval), "--steps", "3", "--max-traces", "2", "--config", s(&cfg_path), "--save-traces"]);
    let report = EvalReport::read_json(&eval.join("report.json")).unwrap();
    let rows = EvalReport::read_csv_rows(&eval.join("report.csv")).unwrap();
    assert_eq!(report.rows.len(), rows.len());
    assert!(!rows.is_empty() && rows.len() <= 2);
    let gmpe = read_gmpe_csv(&eval.join("gmpe.csv")).unwrap();
    assert!(gmpe.iter().all(|p| p.pga_observed.is_finite()));

    // Every plot kind produces an SVG.
    let figs = root.join("figs");
    let svg = |name: &str| figs.join(name);
    let plots: Vec<(Vec<String>, PathBuf)> = vec![
        (vec!["waveform".into(), "--trace".into(), s(&source).into(), "--trace".into(), s(&first).into()], svg("w.svg")),
        (vec!["spectrogram".into(), "--trace".into(), s(&source).into()], svg("s.svg")),
        (vec!["spectrum".into(), "--trace".into(), s(&source).into(), "--trace".into(), s(&first).into()], svg("f.svg")),
        (vec!["gmpe".into(), "--gmpe-csv".into(), s(&eval.join("gmpe.csv")).into()], svg("g.svg")),
        (
            vec![
                "section".into(),
                "--checkpoint".into(),
                s(&ckpt).into(),
                "--dataset".into(),
                s(&data).into(),
                "--event".into(),
                entry.event_id.clone(),
                "--stations".into(),
                "2".into(),
                "--steps".into(),
                "2".into(),
                "--config".into(),
                s(&cfg_path).into(),
            ],
            svg("x.svg"),
        ),
    ];
    std::fs::create_dir_all(&figs).unwrap();
    for (args, out) in plots {
        let mut full: Vec<&str> = vec!["plot", "--kind"];
        full.extend(args.iter().map(String::as_str));
        full.extend(["--out", s(&out)]);
        ok(&full);
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.contains("<svg"), "{}", out.display());
    }
}

#[test]
fn config_schema_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/schema.json");
    ok(&["config-schema", "--out", s(&out)]);
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(schema["properties"]["model"].is_object(), "{schema}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // Usage errors.
    assert_eq!(seisgen(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(seisgen(&["--help"]).status.code(), Some(0));

    // Unknown config key.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"not_a_field": 1}"#).unwrap();
    assert_eq!(seisgen(&["train", "--config", s(&bad)]).status.code(), Some(2));

    // Missing dataset.
    let cfg = dir.path().join("cfg.json");
    let missing = micro_config(&dir.path().join("absent"), &dir.path().join("run"));
    std::fs::write(&cfg, serde_json::to_string(&missing).unwrap()).unwrap();
    assert_eq!(seisgen(&["train", "--config", s(&cfg)]).status.code(), Some(3));

    // Bad raw dump: duplicate event ids.
    let raw = dir.path().join("raw");
    std::fs::create_dir_all(&raw).unwrap();
    std::fs::write(raw.join("events.csv"), "event_id,e_lat,e_lon,e_dep,e_m,origin_time\nA,34,-118,5,3,0\nA,34,-118,5,3,0\n").unwrap();
    std::fs::write(raw.join("stations.csv"), "station_id,s_lat,s_lon\n").unwrap();
    std::fs::write(raw.join("waveforms.csv"), "event_id,station_id,file,sample_rate,p_arrival_s,s_arrival_s\n").unwrap();
    let out = seisgen(&["build-dataset", "--input", s(&raw), "--output", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"));
}
