mod common;

use common::Setup;
use crs_core::corpus::SyntheticSpec;
use crs_core::model::DialogueEncoder;
use crs_core::trainer::{train, LossReport, TrainConfig};

fn moving_average(history: &[LossReport], window: usize) -> Vec<f64> {
    history.windows(window).map(|w| w.iter().map(|r| r.total).sum::<f64>() / window as f64).collect()
}

#[test]
fn synthetic_training_trends_down_and_keeps_the_encoder_frozen() {
    let s = Setup::new(SyntheticSpec::default(), 30);
    let probe = "User: anything with robots?\nRecommender: Do you like Zaborin?";
    let before = s.encoder.encode(probe).unwrap();

    let out = train(&s.train, &s.data.kg, &s.model, &s.config, s.providers()).unwrap();
    let h = &out.history;
    assert_eq!(h.len(), 30);
    assert!(h[19].total < h[0].total, "epoch 20 {} vs epoch 1 {}", h[19].total, h[0].total);

    // window ending at epoch 5 onwards; at most one uptick
    let avg = moving_average(h, 5);
    let upticks = avg.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(upticks <= 1, "moving average {avg:?}");

    for r in h {
        assert!((r.total - (r.rec_loss + s.config.alpha * r.entity_loss)).abs() <= 1e-12 * r.total.abs());
        assert_eq!(r.stage1_attempts, 0);
    }
    assert_eq!(s.encoder.encode(probe).unwrap(), before);
}

#[test]
fn entity_loss_ends_lower_with_the_similarity_constraint() {
    let spec = SyntheticSpec { num_clusters: 2, dialogues: 120, ..SyntheticSpec::default() };
    let s = Setup::new(spec, 8);
    let run = |alpha: f64| {
        let config = TrainConfig { alpha, ..s.config.clone() };
        train(&s.train, &s.data.kg, &s.model, &config, s.providers()).unwrap().history.last().unwrap().entity_loss
    };
    let (without, with) = (run(0.0), run(1.0));
    assert!(with < without, "alpha 1: {with}, alpha 0: {without}");
}

#[test]
fn learning_rate_zero_keeps_the_initial_parameters() {
    let spec = SyntheticSpec { dialogues: 40, ..SyntheticSpec::default() };
    let s = Setup::new(spec, 1);
    let config = TrainConfig { learning_rate: 0.0, ..s.config.clone() };
    let out = train(&s.train, &s.data.kg, &s.model, &config, s.providers()).unwrap();
    let init = crs_core::model::ModelParams::<f64>::init(&s.model, s.data.kg.num_entities(), s.data.kg.num_relations());
    assert_eq!(out.params, init);
}
