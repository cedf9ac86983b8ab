use pcrobust::harness::{
    ablate, aggregate, evaluate_checkpoint, gen_dataset, train, write_table_csv, AblationGrid, EvalSettings,
    RunConfig, ShapeKind, SyntheticDatasetSpec, TrainConfig,
};
use pcrobust::corruption::CorruptionKind;
use pcrobust::model::{write_checkpoint, ModelDims};
use pcrobust::sampling::{SampleSpec, SamplerVariant};

fn tiny_dims(classes: usize) -> ModelDims {
    ModelDims {
        n_in: 64,
        anchors: 16,
        width: 16,
        attn_dim: 8,
        group_k: 4,
        embed_hidden: 16,
        head_hidden: 16,
        ..ModelDims::attention(classes)
    }
}

fn tiny_config(classes: usize, lambda: f64, epochs: usize) -> TrainConfig {
    let dims = tiny_dims(classes);
    let mut cfg = TrainConfig::new(classes);
    cfg.dims = dims;
    cfg.sampler = SampleSpec::new(dims.anchors, SamplerVariant::DasL0);
    cfg.loss.lambda = lambda;
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.lr = 3e-3;
    cfg
}

fn two_shapes() -> SyntheticDatasetSpec {
    SyntheticDatasetSpec {
        classes: vec![ShapeKind::Sphere, ShapeKind::Plane],
        train_per_class: 20,
        test_per_class: 5,
        points: 64,
        seed: 3,
    }
}

#[test]
fn separable_pair_is_learned_without_sem() {
    let data = gen_dataset(&two_shapes()).unwrap();
    let mut cfg = tiny_config(2, 0.0, 15);
    cfg.val_fraction = 0.0;
    let outcome = train(&data.train, &cfg).unwrap();
    let last = outcome.history.last().unwrap();
    assert!(last.train_error <= 0.05, "train error {}", last.train_error);
    assert_eq!(outcome.best_epoch, 14);
}

#[test]
fn sem_term_starts_below_its_bound() {
    let data = gen_dataset(&two_shapes()).unwrap();
    let cfg = tiny_config(2, 0.1, 1);
    let outcome = train(&data.train, &cfg).unwrap();
    let first = &outcome.history[0];
    assert!(first.sem.is_finite());
    assert!(first.sem > 0.0 && first.sem <= (16f64).ln() + 1e-12);
    assert!(first.val_error.is_some());
}

#[test]
fn training_is_bitwise_repeatable() {
    let data = gen_dataset(&two_shapes()).unwrap();
    let cfg = tiny_config(2, 0.1, 2);
    let bytes = |cfg: &TrainConfig| {
        let mut buf = Vec::new();
        write_checkpoint(&train(&data.train, cfg).unwrap().checkpoint, &mut buf).unwrap();
        buf
    };
    let a = bytes(&cfg);
    assert_eq!(a, bytes(&cfg));
    let other = TrainConfig { seed: 1, ..cfg };
    assert_ne!(a, bytes(&other));
}

#[test]
fn evaluation_leaves_the_checkpoint_alone_and_matches_its_log() {
    let data = gen_dataset(&two_shapes()).unwrap();
    let ckpt = train(&data.train, &tiny_config(2, 0.1, 2)).unwrap().checkpoint;
    let mut before = Vec::new();
    write_checkpoint(&ckpt, &mut before).unwrap();
    let settings = EvalSettings {
        kinds: vec![CorruptionKind::Impulse, CorruptionKind::DropLocal],
        eval_seeds: 3,
        ..EvalSettings::default()
    };
    let (report, log) = evaluate_checkpoint(&ckpt, &data.test, &settings).unwrap();
    let mut after = Vec::new();
    write_checkpoint(&ckpt, &mut after).unwrap();
    assert_eq!(before, after);
    assert_eq!(aggregate(&log).unwrap(), report);
    // 10 clouds x (1 clean + 2 kinds x 5 severities) x 3 draws
    assert_eq!(log.records.len(), 10 * 11 * 3);
    let (again, _) = evaluate_checkpoint(&ckpt, &data.test, &settings).unwrap();
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn ablation_table_has_one_row_per_cell() {
    let text = "\
classes = sphere, plane
train_per_class = 4
test_per_class = 2
points = 48
anchors = 8
width = 8
attn_dim = 4
group_k = 4
embed_hidden = 8
head_hidden = 8
epochs = 1
batch_size = 4
eval_seeds = 1
kinds = impulse
grid.sampler = das-l0 | fps | random
grid.lambda = 0 | 0.1
";
    let grid = AblationGrid::parse(text).unwrap();
    let table = ablate(&grid, None, |_, _| {}).unwrap();
    assert_eq!(table.rows.len(), 6);
    let mut csv_a = Vec::new();
    write_table_csv(&table, &mut csv_a).unwrap();
    let csv_a = String::from_utf8(csv_a).unwrap();
    let header = csv_a.lines().next().unwrap();
    assert_eq!(header, "sampler,lambda,best_epoch,er_clean,er_cor,er_impulse");
    assert_eq!(csv_a.lines().count(), 7);

    let mut csv_b = Vec::new();
    write_table_csv(&ablate(&grid, None, |_, _| {}).unwrap(), &mut csv_b).unwrap();
    assert_eq!(csv_a, String::from_utf8(csv_b).unwrap());
}

#[test]
fn point_mlp_trains_with_channel_sem() {
    let cfg = RunConfig::parse(
        "classes = sphere, plane\narch = point-mlp\nwidth = 16\nembed_hidden = 16\nhead_hidden = 16\nsem_mode = channel\nepochs = 2\nbatch_size = 8\n",
    )
    .unwrap();
    let data = gen_dataset(&two_shapes()).unwrap();
    let outcome = train(&data.train, &cfg.train).unwrap();
    assert!(outcome.history.iter().all(|s| s.sem > 0.0 && s.sem <= (64f64).ln()));
}
