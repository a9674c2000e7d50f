mod common;

use std::io::BufReader;

use common::Setup;
use crs_core::corpus::SyntheticSpec;
use crs_core::eval::{
    cluster_gap, dump_embeddings, evaluate, evaluate_model, read_embeddings, sweep, SweepParam, SweepSetup,
};
use crs_core::kg::{Kg, Triple};
use crs_core::model::{InferenceModel, ModelConfig, ModelParams};
use crs_core::trainer::{train, Checkpoint, TrainConfig};
use ndarray::Array2;

fn small() -> Setup {
    Setup::new(SyntheticSpec { dialogues: 120, ..SyntheticSpec::default() }, 4)
}

fn zero_checkpoint(model: ModelConfig, kg: &Kg) -> Checkpoint {
    Checkpoint {
        model_config: model,
        train_config: TrainConfig::default(),
        params: ModelParams::zeros(&model, kg.num_entities(), kg.num_relations()),
        epoch: 0,
        rng_digest: String::new(),
        kg_fingerprint: kg.fingerprint(),
        encoder_id: "none".into(),
    }
}

#[test]
fn zero_parameters_rank_every_item() {
    let s = small();
    let items = s.data.kg.num_items();
    let cp = zero_checkpoint(s.model, &s.data.kg);
    let report = evaluate(&cp, &s.test, &s.data.kg, &s.encoder, &[1, items]).unwrap();
    assert_eq!(report.recall(items), Some(1.0));
    assert_eq!(report.num_test_samples, s.test.len());
}

#[test]
fn dump_of_a_three_entity_graph() {
    let kg = Kg::from_parts(
        vec![
            ("e:a".into(), "Alpha".into(), true),
            ("e:b".into(), "Beta".into(), false),
            ("e:c".into(), "Gamma, the third".into(), false),
        ],
        vec!["related".into()],
        vec![Triple { head: 0, relation: 0, tail: 1 }, Triple { head: 1, relation: 0, tail: 2 }],
    )
    .unwrap();
    let model = ModelConfig { d: 4, d_llm: 8, ..ModelConfig::default() };
    let mut cp = zero_checkpoint(model, &kg);
    cp.params = ModelParams::<f64>::init(&model, 3, 1).cast();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    assert_eq!(dump_embeddings(&cp, &kg, &path).unwrap(), 3);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("id,name,is_item,x0,x1,x2,x3"));

    let rows = read_embeddings(BufReader::new(text.as_bytes())).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].name, "Gamma, the third");
    assert!(rows[0].is_item && !rows[1].is_item);
    let expected = cp.inference_model(&kg).unwrap().entity_embeddings;
    for row in &rows {
        assert_eq!(row.coords.len(), 4);
        assert!(row.coords.iter().all(|x| x.is_finite()));
        for (a, b) in row.coords.iter().zip(expected.row(row.id)) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn dumped_cluster_gap_grows_with_training() {
    let s = Setup::new(SyntheticSpec::default(), 10);
    let dir = tempfile::tempdir().unwrap();
    let clusters: Vec<Option<usize>> = s.data.entity_cluster.iter().map(|&c| Some(c)).collect();
    let gap_of = |cp: &Checkpoint, name: &str| {
        let path = dir.path().join(name);
        dump_embeddings(cp, &s.data.kg, &path).unwrap();
        let rows = read_embeddings(BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
        let d = rows[0].coords.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.coords.clone()).collect();
        cluster_gap(&Array2::from_shape_vec((rows.len(), d), flat).unwrap(), &clusters)
    };
    let untrained = TrainConfig { epochs: 1, learning_rate: 0.0, ..s.config.clone() };
    let before = train(&s.train, &s.data.kg, &s.model, &untrained, s.providers()).unwrap();
    let after = train(&s.train, &s.data.kg, &s.model, &s.config, s.providers()).unwrap();
    let (g0, g1) = (gap_of(&before.checkpoint, "before.csv"), gap_of(&after.checkpoint, "after.csv"));
    assert!(g1 > g0, "gap before {g0}, after {g1}");
}

#[test]
fn one_point_sweep_matches_a_direct_evaluation() {
    let s = small();
    let setup = SweepSetup {
        kg: &s.data.kg,
        model_config: s.model,
        base: &s.config,
        train_samples: &s.train,
        test_samples: &s.test,
        providers: s.providers(),
        ks: &[1, 10],
        runs_per_point: 1,
    };
    let result = sweep(SweepParam::Alpha, &[0.5], &setup).unwrap();
    assert_eq!(result.points.len(), 1);

    // the sweep derives seed base + 0 for the first run of the first point
    let config = TrainConfig { alpha: 0.5, ..s.config.clone() };
    let model = ModelConfig { seed: s.config.seed, ..s.model };
    let out = train(&s.train, &s.data.kg, &model, &config, s.providers()).unwrap();
    let direct = evaluate_model(
        &InferenceModel::new(model, out.checkpoint.params_f64(), &s.data.kg).unwrap(),
        &s.test,
        &s.data.kg,
        &s.encoder,
        &[1, 10],
    )
    .unwrap();
    assert_eq!(result.points[0].runs[0], direct);
    assert_eq!(result.points[0].mean_recall, direct.recall_at);
}

#[test]
fn heavy_substitution_does_not_beat_none_by_a_margin() {
    let s = Setup::new(SyntheticSpec::default(), 10);
    let setup = SweepSetup {
        kg: &s.data.kg,
        model_config: s.model,
        base: &s.config,
        train_samples: &s.train,
        test_samples: &s.test,
        providers: s.providers(),
        ks: &[1],
        runs_per_point: 2,
    };
    let result = sweep(SweepParam::SubstitutionRate, &[0.0, 0.9], &setup).unwrap();
    let r = |i: usize| result.points[i].mean_recall[&1];
    assert!(r(1) <= r(0) + 0.05, "recall at 0.9: {}, at 0: {}", r(1), r(0));

    let mut csv = Vec::new();
    result.write_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.starts_with("param,value,run,k,recall"));
    assert_eq!(csv.lines().filter(|l| l.contains(",mean,")).count(), 2);
}
