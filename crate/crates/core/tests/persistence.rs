//! Round-trips and error contracts of every file format.

use std::fs;

use socnav::cnp::{self, peek_checkpoint, ModelKind, TrainConfig};
use socnav::dataset::{generate_dataset, generate_dataset_with_summary, Layout};
use socnav::eval::{compare, evaluate_global, export_svg, render_svg, NamedPath, Report};
use socnav::planners::{plan_ffnn, plan_global, train_ffnn, train_local, BaselineConfig, FfnnModel};
use socnav::{CnpModel, Dataset, Error, Scenario, SimConfig};

fn tiny_train() -> TrainConfig {
    TrainConfig {
        steps: 40,
        d_r: 8,
        encoder_hidden: vec![16],
        query_hidden: vec![16],
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let data = generate_dataset(10, &SimConfig::default(), 3).unwrap();
    data.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), data);
    let (local, _) = generate_dataset_with_summary(4, &SimConfig::default(), 3, Layout::Local).unwrap();
    local.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, local);
    assert_eq!(back.layout(), Some(Layout::Local));
}

#[test]
fn truncated_dataset_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    generate_dataset(3, &SimConfig::default(), 1)
        .unwrap()
        .save(&path)
        .unwrap();
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() - 40]).unwrap();
    match Dataset::load(&path) {
        Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected MalformedRecord, got {other:?}"),
    }
}

#[test]
fn cnp_checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let data = generate_dataset(3, &SimConfig::default(), 2).unwrap();
    let (model, _) = train_local(&data, &tiny_train()).unwrap();
    model.save(&path).unwrap();
    let back = CnpModel::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(peek_checkpoint(&path).unwrap(), (ModelKind::Cnp, Layout::Local));
    let q = &model.context[0];
    let a = model.predict(&model.context, &q.x, &q.gamma).unwrap();
    let b = back.predict(&back.context, &q.x, &q.gamma).unwrap();
    for (x, y) in a.mean.iter().chain(&a.std).zip(b.mean.iter().chain(&b.std)) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn corrupted_header_is_a_version_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let data = generate_dataset(2, &SimConfig::default(), 2).unwrap();
    let (model, _) = cnp::train(&data, Layout::Global, &tiny_train()).unwrap();
    model.save(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("\"version\":1", "\"version\":7", 1)).unwrap();
    assert!(matches!(CnpModel::load(&path), Err(Error::VersionMismatch(_))));
    fs::write(&path, format!("#{text}")).unwrap();
    assert!(matches!(CnpModel::load(&path), Err(Error::VersionMismatch(_))));
    assert!(matches!(FfnnModel::load(&path), Err(Error::VersionMismatch(_))));
}

#[test]
fn global_model_rejects_local_queries() {
    let data = generate_dataset(2, &SimConfig::default(), 2).unwrap();
    let (model, _) = cnp::train(&data, Layout::Global, &tiny_train()).unwrap();
    let ctx = socnav::planners::endpoint_context(&Scenario::vertical_crossing());
    let err = model.predict(&ctx, &[1.0, 2.0], &[0.5, 0.5]).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }), "{err:?}");
}

#[test]
fn baseline_round_trip_and_plan_csv_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(3, &SimConfig::default(), 5).unwrap();
    let cfg = BaselineConfig {
        steps: 30,
        hidden: vec![8; 4],
        ..BaselineConfig::default()
    };
    let (ffnn, _) = train_ffnn(&data, &cfg).unwrap();
    let path = dir.path().join("b.json");
    ffnn.save(&path).unwrap();
    assert_eq!(FfnnModel::load(&path).unwrap(), ffnn);
    assert_eq!(peek_checkpoint(&path).unwrap().0, ModelKind::Ffnn);
    assert!(matches!(CnpModel::load(&path), Err(Error::VersionMismatch(_))));

    let sc = Scenario::vertical_crossing();
    let plan = plan_ffnn(&ffnn, &sc, 200).unwrap();
    let csv = dir.path().join("p.csv");
    plan.write_csv(&csv).unwrap();
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("phase,x,y,std_x,std_y"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 200);
    for (row, p) in rows.iter().zip(&plan.points) {
        assert_eq!(row.len(), 5);
        assert_eq!((row[1], row[2]), (p.x, p.y));
    }
}

#[test]
fn report_json_reparses_and_svg_is_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(3, &SimConfig::default(), 6).unwrap();
    let (model, _) = cnp::train(&data, Layout::Global, &tiny_train()).unwrap();
    let scenarios = vec![Scenario::vertical_crossing(), Scenario::stationary_field()];
    let plans: Vec<_> = scenarios
        .iter()
        .map(|s| plan_global(&model, s, 50).unwrap())
        .collect();
    let m = evaluate_global(&plans, &scenarios, None, 0.2).unwrap();
    let report = compare(&m, &m, "digest").unwrap();
    let path = dir.path().join("r.json");
    fs::write(&path, report.to_json()).unwrap();
    let back = Report::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, report);
    let value: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    for key in ["cnp", "baseline", "deltas", "flags", "config_digest"] {
        assert!(value.get(key).is_some(), "missing {key}");
    }

    for sc in &scenarios {
        let svg = dir.path().join("s.svg");
        let paths = [
            NamedPath::new("CNP", plans[0].points.clone()),
            NamedPath::new("NN <baseline>", plans[1].points.clone()),
        ];
        export_svg(sc, &paths, &svg).unwrap();
        let text = fs::read_to_string(&svg).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let polylines = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("path"))
            .count();
        assert_eq!(polylines, 2);
        assert_eq!(text, render_svg(sc, &paths));
        roxmltree::Document::parse(&render_svg(sc, &[])).unwrap();
    }
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let data = generate_dataset(3, &SimConfig::default(), 8).unwrap();
    assert_eq!(data, generate_dataset(3, &SimConfig::default(), 8).unwrap());
    let (a, la) = cnp::train(&data, Layout::Global, &tiny_train()).unwrap();
    let (b, lb) = cnp::train(&data, Layout::Global, &tiny_train()).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}
