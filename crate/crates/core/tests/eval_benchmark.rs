mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use crowdmotion_core::eval::*;
use crowdmotion_core::geometry::Vec2;
use crowdmotion_core::simulator::{load_map, ScenarioConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/datasets").join(name)
}

fn model(kind: ModelKind) -> PredictionModel {
    PredictionModel::new(kind, common::profiles().to_vec())
}

/// Generates `<stem>.toml` (a road scenario, or an open plaza when it has no
/// map) and renders it in the typed layout.
fn render_simulated(stem: &str) -> String {
    let text = std::fs::read_to_string(fixture(&format!("{stem}.toml"))).unwrap();
    let mut data = if text.contains("map =") {
        let config = ScenarioConfig::from_toml(&text).unwrap();
        let road = Arc::new(load_map(&config.map, None).unwrap());
        simulated_dataset(stem, &config, road, common::profiles(), 4).unwrap()
    } else {
        plaza_dataset(stem, &PlazaScene::from_toml(&text).unwrap(), common::profiles()).unwrap()
    };
    data.header.clear();
    let mut out = Vec::new();
    write_trajectories(&mut out, &data, DataFormat::Typed).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn shipped_simulated_fixtures_regenerate_exactly() {
    for stem in ["cross_sample", "heterogeneous"] {
        let text = render_simulated(stem);
        let path = fixture(&format!("{stem}.csv"));
        if std::env::var_os("REGENERATE_FIXTURES").is_some() {
            std::fs::write(&path, &text).unwrap();
        }
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text, "{stem}.csv is stale");
    }
}

#[test]
fn plain_file_assembles_tracks() {
    let data = load_trajectories(&fixture("two_walkers.txt"), DataFormat::Plain).unwrap();
    assert_eq!(data.tracks.len(), 2);
    assert!(data.tracks.values().all(|t| t.len() == 20));
    assert_eq!(data.frame_step, 10);
    assert!((data.frame_period - 0.4).abs() < 1e-12);
    assert_eq!(data.frames.len(), 20);
    assert_eq!(data.type_of(1), "pedestrian");
}

#[test]
fn cross_fixture_matches_declared_row_count() {
    let data = load_trajectories(&fixture("cross_sample.csv"), DataFormat::Typed).unwrap();
    let declared: usize = data.header["rows"].parse().unwrap();
    assert_eq!(data.rows(), declared);
    assert!((data.frame_period - 0.4).abs() < 1e-12);
    assert!(data.agent_type.values().any(|t| t == "car"));
}

#[test]
fn typed_rows_attach_profiles() {
    let text = "frame,id,x,y,type\n0,1,0,0,car\n1,1,1,0,car\n0,2,5,5,Ped\n";
    let data = parse_trajectories(text, DataFormat::Typed, "t").unwrap();
    assert_eq!(data.type_of(1), "car");
    assert_eq!(data.type_of(2), "pedestrian");
    assert!(matches!(
        parse_trajectories("0 1 0 0 hovercraft\n", DataFormat::Typed, "t"),
        Err(EvalError::UnknownType { line: 1, .. })
    ));
}

#[test]
fn malformed_files_are_rejected() {
    let dup = "0 1 0 0\n10 1 1 0\n10 1 2 0\n";
    assert!(matches!(parse_trajectories(dup, DataFormat::Plain, "d"), Err(EvalError::Duplicate { line: 3, .. })));
    let back = "0 1 0 0\n20 1 1 0\n10 1 2 0\n";
    assert!(matches!(parse_trajectories(back, DataFormat::Plain, "d"), Err(EvalError::NonMonotone { line: 3, .. })));
    let rows = "# rows = 3\n0 1 0 0\n10 1 1 0\n";
    assert!(matches!(
        parse_trajectories(rows, DataFormat::Plain, "d"),
        Err(EvalError::RowCount { declared: 3, found: 2 })
    ));
    assert!(matches!(parse_trajectories("0 1 nan 0\n", DataFormat::Plain, "d"), Err(EvalError::Parse { .. })));
    assert!(matches!(parse_trajectories("0 1 0\n", DataFormat::Plain, "d"), Err(EvalError::Parse { .. })));
    let off_grid = "0 1 0 0\n10 1 1 0\n20 1 2 0\n25 2 0 0\n";
    assert!(matches!(parse_trajectories(off_grid, DataFormat::Plain, "d"), Err(EvalError::IrregularFrame { .. })));
}

#[test]
fn written_files_load_back() {
    let data = load_trajectories(&fixture("two_walkers.txt"), DataFormat::Plain).unwrap();
    let mut out = Vec::new();
    write_trajectories(&mut out, &data, DataFormat::Plain).unwrap();
    let again = parse_trajectories(std::str::from_utf8(&out).unwrap(), DataFormat::Plain, &data.name).unwrap();
    assert_eq!(again.tracks, data.tracks);
    assert_eq!(again.frame_period, data.frame_period);
}

/// One agent walking at constant velocity for `frames` frames of 0.4 s.
fn straight_walker(frames: usize, velocity: Vec2) -> TrajectoryDataset {
    let track = (0..frames).map(|k| (10 * k as i64, Vec2::new(3.0, -1.0) + velocity * (0.4 * k as f64))).collect();
    TrajectoryDataset::from_tracks("walker", BTreeMap::from([(1, track)]), BTreeMap::new(), 25.0).unwrap()
}

#[test]
fn linear_is_exact_on_constant_velocity() {
    let data = straight_walker(25, Vec2::new(1.2, 0.4));
    let task = PredictionTask::default();
    let preds = predict(&data, &task, &model(ModelKind::Linear)).unwrap();
    assert_eq!(preds.len(), 6);
    let m = ade_fde(&preds, MetricMode::Deterministic);
    assert!(m.ade < 1e-9 && m.fde < 1e-9, "{m:?}");
}

#[test]
fn gamma_tracks_an_isolated_walker() {
    let data = straight_walker(20, Vec2::new(1.3, 0.0));
    let preds = predict(&data, &PredictionTask::default(), &model(ModelKind::GammaDet)).unwrap();
    assert_eq!(preds.len(), 1);
    let m = ade_fde(&preds, MetricMode::Deterministic);
    assert!(m.ade < 0.05, "{m:?}");

    let car_track = (0..20).map(|k| (10 * k as i64, Vec2::new(0.4, 0.3) * (4.0 * 0.4 * k as f64 / 0.5))).collect();
    let cars = TrajectoryDataset::from_tracks(
        "car",
        BTreeMap::from([(4, car_track)]),
        BTreeMap::from([(4, "car".to_string())]),
        25.0,
    )
    .unwrap();
    let m = ade_fde(
        &predict(&cars, &PredictionTask::default(), &model(ModelKind::GammaDet)).unwrap(),
        MetricMode::Deterministic,
    );
    assert!(m.ade < 0.05, "{m:?}");
}

#[test]
fn sampling_an_isolated_walker_gives_identical_rollouts() {
    let data = straight_walker(20, Vec2::new(0.9, -0.5));
    let preds = predict(&data, &PredictionTask::default(), &model(ModelKind::GammaStochastic)).unwrap();
    assert_eq!(preds[0].samples.len(), 20);
    assert!(preds[0].samples.iter().all(|s| s == &preds[0].samples[0]));
}

/// Straightforward restatement of the metric definitions.
fn reference(preds: &[(Vec<Vec<Vec2>>, Vec<Vec2>)], mode: MetricMode) -> (f64, f64) {
    let err = |s: &[Vec2], t: &[Vec2]| {
        let d: Vec<f64> = s.iter().zip(t).map(|(a, b)| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()).collect();
        (d.iter().sum::<f64>() / d.len() as f64, *d.last().unwrap())
    };
    let (mut ade, mut fde) = (0.0, 0.0);
    for (samples, truth) in preds {
        let (a, f) = match mode {
            MetricMode::Deterministic => err(&samples[0], truth),
            MetricMode::BestOfN => {
                let all: Vec<(f64, f64)> = samples.iter().map(|s| err(s, truth)).collect();
                let best = (0..all.len()).fold(0, |b, i| if all[i].0 < all[b].0 { i } else { b });
                all[best]
            }
            MetricMode::AverageSample => {
                let n = samples.len() as f64;
                let mean: Vec<Vec2> = (0..truth.len())
                    .map(|i| {
                        Vec2::new(
                            samples.iter().map(|s| s[i].x).sum::<f64>() / n,
                            samples.iter().map(|s| s[i].y).sum::<f64>() / n,
                        )
                    })
                    .collect();
                err(&mean, truth)
            }
        };
        ade += a;
        fde += f;
    }
    (ade / preds.len() as f64, fde / preds.len() as f64)
}

#[test]
fn metrics_match_reference_on_random_tensors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let agents = rng.random_range(1..40);
        let n = rng.random_range(1..8);
        let point = |r: &mut ChaCha8Rng| Vec2::new(r.random_range(-30.0..30.0), r.random_range(-30.0..30.0));
        let raw: Vec<(Vec<Vec<Vec2>>, Vec<Vec2>)> = (0..agents)
            .map(|_| {
                let truth: Vec<Vec2> = (0..12).map(|_| point(&mut rng)).collect();
                let samples = (0..n).map(|_| (0..12).map(|_| point(&mut rng)).collect()).collect();
                (samples, truth)
            })
            .collect();
        let mut preds: Vec<AgentPrediction> = raw
            .iter()
            .enumerate()
            .map(|(i, (s, t))| AgentPrediction { window: i, agent: 1, samples: s.clone(), truth: t.clone() })
            .collect();
        for mode in [MetricMode::Deterministic, MetricMode::BestOfN, MetricMode::AverageSample] {
            let m = ade_fde(&preds, mode);
            let (ade, fde) = reference(&raw, mode);
            assert!((m.ade - ade).abs() < 1e-12 && (m.fde - fde).abs() < 1e-12, "{mode}");
            preds.shuffle(&mut rng);
            let again = ade_fde(&preds, mode);
            assert!((again.ade - m.ade).abs() < 1e-12 && (again.fde - m.fde).abs() < 1e-12, "{mode} order");
        }
    }
}

#[test]
fn metric_closed_forms() {
    let truth: Vec<Vec2> = (0..12).map(|i| Vec2::new(i as f64, 0.0)).collect();
    let shifted: Vec<Vec2> = truth.iter().map(|p| *p + Vec2::new(0.3, 0.4)).collect();
    let exact = AgentPrediction { window: 0, agent: 1, samples: vec![truth.clone()], truth: truth.clone() };
    let m = ade_fde(std::slice::from_ref(&exact), MetricMode::Deterministic);
    assert_eq!((m.ade, m.fde), (0.0, 0.0));
    let off = AgentPrediction { samples: vec![shifted.clone()], ..exact.clone() };
    let m = ade_fde(&[off], MetricMode::Deterministic);
    assert!((m.ade - 0.5).abs() < 1e-12 && (m.fde - 0.5).abs() < 1e-12);
    let two = AgentPrediction { samples: vec![shifted, truth.clone()], ..exact };
    let m = ade_fde(&[two], MetricMode::BestOfN);
    assert_eq!((m.ade, m.fde), (0.0, 0.0));
    assert!(ade_fde(&[], MetricMode::Deterministic).ade.is_nan());
}

fn heterogeneous() -> TrajectoryDataset {
    load_trajectories(&fixture("heterogeneous.csv"), DataFormat::Typed).unwrap()
}

fn keys(preds: &[AgentPrediction]) -> Vec<(usize, u64)> {
    preds.iter().map(|p| (p.window, p.agent)).collect()
}

#[test]
fn windows_do_not_depend_on_the_model() {
    let data = load_trajectories(&fixture("cross_sample.csv"), DataFormat::Typed).unwrap();
    let task = PredictionTask::default();
    let wins = windows(&data, &task);
    assert!(!wins.is_empty());
    assert_eq!(wins, windows(&data, &task));
    let linear = predict(&data, &task, &model(ModelKind::Linear)).unwrap();
    let gamma = predict(&data, &task, &model(ModelKind::GammaDet)).unwrap();
    let mut closed = model(ModelKind::GammaDet);
    closed.closed_loop_neighbors = true;
    let closed = predict(&data, &task, &closed).unwrap();
    assert_eq!(keys(&linear), keys(&gamma));
    assert_eq!(keys(&linear), keys(&closed));
    assert_eq!(linear.len(), wins.iter().map(|w| w.evaluated.len()).sum::<usize>());
    assert!(wins.windows(2).all(|w| w[0].start < w[1].start));
}

#[test]
fn sampled_variant_contains_the_deterministic_rollout() {
    let data = load_trajectories(&fixture("cross_sample.csv"), DataFormat::Typed).unwrap();
    let task = PredictionTask::default();
    let det = predict(&data, &task, &model(ModelKind::GammaDet)).unwrap();
    let sampled = predict(&data, &task, &model(ModelKind::GammaStochastic)).unwrap();
    assert_eq!(keys(&det), keys(&sampled));
    for (d, s) in det.iter().zip(&sampled) {
        assert_eq!(d.samples[0], s.samples[0]);
        assert_eq!(s.samples.len(), 20);
    }
    let best = ade_fde(&sampled, MetricMode::BestOfN);
    let plain = ade_fde(&det, MetricMode::Deterministic);
    assert!(best.ade <= plain.ade, "{best:?} vs {plain:?}");
    assert_eq!(sampled, predict(&data, &task, &model(ModelKind::GammaStochastic)).unwrap());
}

#[test]
fn full_model_beats_each_ablation_on_the_heterogeneous_scene() {
    let data = heterogeneous();
    let task = PredictionTask::default();
    let full = ade_fde(&predict(&data, &task, &model(ModelKind::GammaDet)).unwrap(), MetricMode::Deterministic);
    for part in ["kinematics", "polygon", "intention"] {
        let mut m = model(ModelKind::GammaDet);
        m.ablation = Ablation::default().with(part).unwrap();
        let ablated = ade_fde(&predict(&data, &task, &m).unwrap(), MetricMode::Deterministic);
        eprintln!("full {:.4}/{:.4}  without {part} {:.4}/{:.4}", full.ade, full.fde, ablated.ade, ablated.fde);
        assert!(full.ade <= ablated.ade, "without {part}: {ablated:?} vs full {full:?}");
    }
}

#[test]
fn runtime_grows_with_the_crowd() {
    let m = model(ModelKind::GammaDet);
    let ped = common::profile("pedestrian");
    let time = |n| measure_runtime(&m, &synthetic_crowd(n, 0.1, &ped, 5), 0.1, 30).unwrap();
    let empty = time(0);
    let t25 = time(25);
    let t50 = time(50);
    let t100 = time(100);
    eprintln!("runtime: 0 {empty:.2e}  25 {t25:.2e}  50 {t50:.2e}  100 {t100:.2e}");
    assert!(empty < t50);
    assert!(t50 < 1e-3);
    let exponent = (t100 / t25).ln() / 4f64.ln();
    assert!(exponent < 2.0, "scaling exponent {exponent}");
    assert!(measure_runtime(&m, &[], 0.1, 5).is_err());
}
