use twrnnt::data::{generate_synthetic, SyntheticConfig};
use twrnnt::model::ModelDims;
use twrnnt::rng::SeedTree;
use twrnnt::ssl::experiment::{run_pseudo_labeling, GenerationConfig, StudentConfig};
use twrnnt::ssl::report::{Condition, Mode};
use twrnnt::train::{evaluate, score_confidences, single_pool, train, TrainConfig, Weighting};

fn dims(input_dim: usize, hidden: usize, vocab_size: usize) -> ModelDims {
    ModelDims { input_dim, hidden, vocab_size }
}

#[test]
fn training_halves_the_loss_on_a_small_clean_set() {
    for seed in 1..=3 {
        let data = SyntheticConfig { n_train: 50, n_validation: 1, n_test: 1, n_pretrain: 1, seed, ..SyntheticConfig::default() };
        let splits = generate_synthetic(&data).unwrap();
        let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
        let out = train(dims(8, 32, 8), &single_pool(&splits.train), &cfg, SeedTree::new(seed)).unwrap();
        let (first, last) = (out.epoch_losses[0], *out.epoch_losses.last().unwrap());
        assert!(last < 0.5 * first, "seed {seed}: loss {first} -> {last}");
    }
}

#[test]
fn separable_task_is_learned() {
    let data = SyntheticConfig {
        noise: 0.0,
        min_frames_per_token: 1,
        max_frames_per_token: 1,
        n_train: 300,
        n_test: 100,
        seed: 4,
        ..SyntheticConfig::default()
    };
    let splits = generate_synthetic(&data).unwrap();
    let cfg = TrainConfig { epochs: 15, ..TrainConfig::default() };
    let out = train(dims(8, 32, 8), &single_pool(&splits.train), &cfg, SeedTree::new(4)).unwrap();
    let (wer, _) = evaluate(&out.model, &splits.test.utterances, 4).unwrap();
    assert!(wer < 0.02, "WER {wer}");
}

#[test]
fn training_is_deterministic() {
    let splits = generate_synthetic(&SyntheticConfig { n_train: 30, seed: 9, ..SyntheticConfig::default() }).unwrap();
    let cfg = TrainConfig { epochs: 2, weighting: Weighting::TokenWeights { alpha: 2.0 }, ..TrainConfig::default() };
    let mut scored = splits.train.clone();
    let teacher = train(dims(8, 8, 8), &single_pool(&splits.pretrain), &TrainConfig { epochs: 2, ..cfg }, SeedTree::new(1))
        .unwrap()
        .model;
    score_confidences(&teacher, &mut scored.utterances).unwrap();
    let a = train(dims(8, 8, 8), &single_pool(&scored), &cfg, SeedTree::new(2)).unwrap();
    let b = train(dims(8, 8, 8), &single_pool(&scored), &cfg, SeedTree::new(2)).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.epoch_losses, b.epoch_losses);
}

#[test]
fn token_weighted_training_learns_from_scored_labels() {
    let splits = generate_synthetic(&SyntheticConfig { n_train: 200, n_test: 150, seed: 12, ..SyntheticConfig::default() }).unwrap();
    let base = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let teacher = train(dims(8, 16, 8), &single_pool(&splits.pretrain), &base, SeedTree::new(3)).unwrap().model;
    let mut scored = splits.train.clone();
    score_confidences(&teacher, &mut scored.utterances).unwrap();
    let wer_at = |alpha: f64| {
        let cfg = TrainConfig { weighting: Weighting::TokenWeights { alpha }, ..base };
        let model = train(dims(8, 16, 8), &single_pool(&scored), &cfg, SeedTree::new(5)).unwrap().model;
        evaluate(&model, &splits.test.utterances, 4).unwrap().0
    };
    let (w0, w1) = (wer_at(0.0), wer_at(1.0));
    assert!(w1 < 0.2 && w1 <= w0 + 0.05, "alpha 0: {w0}, alpha 1: {w1}");
}

#[test]
fn alpha_zero_pseudo_labeling_matches_standard() {
    let splits =
        generate_synthetic(&SyntheticConfig { n_train: 30, n_validation: 10, n_test: 10, n_pretrain: 20, seed: 2, ..SyntheticConfig::default() })
            .unwrap();
    let mut student = StudentConfig { hidden: 6, ..StudentConfig::default() };
    student.training.epochs = 2;
    let cfg = GenerationConfig { rounds: 1, alpha_grid: vec![0.0], replicates: 1, student, ..GenerationConfig::default() };
    let report = run_pseudo_labeling(&splits.pretrain, &splits.train, &splits.validation, &splits.test, &cfg).unwrap();
    let round = Condition::Round { round: 1 };
    let find = |m: Mode| report.runs.iter().find(|r| r.condition == round && r.mode == m).unwrap();
    let std = find(Mode::Standard);
    for m in [Mode::UtteranceWeights, Mode::TokenWeights] {
        let run = find(m);
        assert_eq!(run.test_wer, std.test_wer);
        assert!((run.final_train_loss.unwrap() - std.final_train_loss.unwrap()).abs() < 1e-9);
    }
}
