use tdxviz::model::{evaluate, load_checkpoint, save_checkpoint, train};
use tdxviz::video::{generate_synthetic, Dataset};
use tdxviz::{build_model, DatasetSpec, Error, ModelConfig, TrainOptions, TrainedModel};

fn dataset(per_class: usize, seed: u64) -> Dataset {
    let spec = DatasetSpec {
        num_sequences: per_class,
        frames: 6,
        height: 16,
        width: 16,
        channels: 1,
        classes: vec!["normal".into(), "fight".into()],
        seed,
    };
    Dataset {
        classes: spec.classes.clone(),
        sequences: generate_synthetic(&spec).unwrap(),
    }
}

fn config(dropout: f64, seed: u64) -> ModelConfig {
    ModelConfig {
        gru_units: 16,
        gru_dropout: dropout,
        mlp_dropout: dropout,
        mlp_blocks: 2,
        dense_width: 16,
        classes: vec!["normal".into(), "fight".into()],
        input_hw: (16, 16),
        seed,
        ..ModelConfig::default()
    }
}

fn opts(epochs: usize, lr: f64) -> TrainOptions {
    TrainOptions {
        epochs,
        learning_rate: lr,
        batch_size: 4,
    }
}

fn params(model: &TrainedModel) -> Vec<f64> {
    model.network.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let model = build_model(&config(0.5, 1)).unwrap();
    let before = params(&model);
    let trained = train(model, &dataset(4, 0), &opts(2, 0.0)).unwrap();
    assert_eq!(params(&trained), before);
    assert_eq!(trained.training_log.len(), 2);
}

#[test]
fn same_seed_gives_identical_parameters() {
    let data = dataset(4, 0);
    let a = train(build_model(&config(0.5, 3)).unwrap(), &data, &opts(2, 0.02)).unwrap();
    let b = train(build_model(&config(0.5, 3)).unwrap(), &data, &opts(2, 0.02)).unwrap();
    let c = train(build_model(&config(0.5, 4)).unwrap(), &data, &opts(2, 0.02)).unwrap();
    assert_eq!(params(&a), params(&b));
    assert_eq!(a.training_log, b.training_log);
    assert_ne!(params(&a), params(&c));
}

#[test]
fn loss_decreases_and_model_learns() {
    let data = dataset(10, 2);
    let model = train(build_model(&config(0.0, 0)).unwrap(), &data, &opts(15, 0.02)).unwrap();
    let log = &model.training_log;
    assert!(log.last().unwrap().loss <= log[0].loss, "{log:?}");
    assert!(evaluate(&model, &data).unwrap() >= 0.9);
}

#[test]
fn trained_model_is_not_reversal_invariant() {
    let data = dataset(6, 5);
    let model = train(build_model(&config(0.0, 0)).unwrap(), &data, &opts(5, 0.02)).unwrap();
    let gap = data
        .sequences
        .iter()
        .map(|s| {
            let a = model.forward(s).unwrap();
            let b = model.forward(&s.reversed()).unwrap();
            a.probabilities.iter().zip(&b.probabilities).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    assert!(gap >= 1e-3, "reversal gap {gap}");
}

#[test]
fn empty_dataset_is_an_argument_error() {
    let empty = Dataset {
        classes: vec!["normal".into(), "fight".into()],
        sequences: vec![],
    };
    let model = build_model(&config(0.5, 0)).unwrap();
    assert!(matches!(train(model, &empty, &opts(1, 0.02)), Err(Error::Argument(_))));
}

#[test]
fn runaway_learning_rate_reports_the_epoch() {
    let model = build_model(&config(0.0, 0)).unwrap();
    match train(model, &dataset(4, 0), &opts(5, 1e200)) {
        Err(Error::Training { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|m| m.training_log)),
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(3, 1);
    let model = train(build_model(&config(0.5, 2)).unwrap(), &data, &opts(1, 0.02)).unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.training_log, model.training_log);
    assert_eq!(params(&back), params(&model));
    assert_eq!(back.fingerprint(), model.fingerprint());
    for s in &data.sequences {
        assert_eq!(back.forward(s).unwrap(), model.forward(s).unwrap());
    }
}
