use kwsum::dataset::{build_example, KeywordSet, MultipleChoiceExample, WordClasses};
use kwsum::model::{decode_checkpoint, encode_checkpoint, Checkpoint, Model, ModelConfig};
use kwsum::tokenizer::build_vocab;
use kwsum::train::{train, StepMetrics, TrainConfig, Trainer};

fn toy_examples(n: usize) -> (Vec<MultipleChoiceExample>, usize) {
    let nouns = ["virus", "mask", "vaccine", "trial", "lung", "fever", "cough", "ward", "nurse", "test"];
    let verbs = ["reduces", "raises", "blocks", "spreads", "treats"];
    let texts: Vec<String> = (0..n)
        .map(|i| format!("the {} {} the {} .", nouns[i % 10], verbs[i % 5], nouns[(i * 3 + 1) % 10]))
        .collect();
    let vocab = build_vocab(&texts, 100).unwrap();
    let examples = (0..n)
        .map(|i| {
            let words: Vec<String> = texts[i].split(' ').filter(|w| *w != "the" && *w != ".").map(String::from).collect();
            let kw = KeywordSet::new(words, WordClasses::NounsAndVerbs);
            let distractors: Vec<String> = (1..4).map(|d| texts[(i + d * 3) % n].clone()).collect();
            build_example(&format!("x{i}"), &kw, &texts[i], &distractors, &vocab, 16, i as u64).unwrap()
        })
        .collect();
    (examples, vocab.len())
}

fn desk_model(vocab_size: usize, seed: u64) -> Model {
    Model::init(ModelConfig { vocab_size, max_len: 16, seed, ..ModelConfig::default() }).unwrap()
}

#[test]
fn moving_average_of_total_loss_falls_over_the_first_hundred_updates() {
    let (data, v) = toy_examples(20);
    let config = TrainConfig { lr_init: 1e-3, grad_accum_steps: 1, epochs: 6, seed: 4, ..TrainConfig::default() };
    let (_, metrics) = train(desk_model(v, 2), &data, config, &mut |_| Ok(())).unwrap();
    let totals: Vec<f64> = metrics.iter().map(|m| m.total_loss).collect();
    let ma: Vec<f64> = totals.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    let rises: Vec<usize> = (1..=100.min(ma.len() - 1)).filter(|&i| ma[i] >= ma[i - 1]).collect();
    println!("first MA {:.4}, MA at 100 {:.4}, rises at {rises:?}", ma[0], ma[100.min(ma.len() - 1)]);
    assert!(rises.is_empty());
}

#[test]
fn same_seed_gives_identical_checkpoint_bytes() {
    let (data, v) = toy_examples(8);
    let config = TrainConfig { lr_init: 1e-3, epochs: 2, seed: 9, ..TrainConfig::default() };
    let bytes = |_: ()| {
        let mut trainer = Trainer::new(desk_model(v, 3), config).unwrap();
        for _ in 0..config.epochs {
            trainer.run_epoch(&data, &mut |_| Ok(())).unwrap();
        }
        encode_checkpoint(&Checkpoint {
            model: trainer.model.clone(),
            progress: trainer.progress,
            optimizer: Some(trainer.optimizer.state.clone()),
        })
    };
    assert_eq!(bytes(()), bytes(()));
}

#[test]
fn updates_follow_the_accumulation_window() {
    let (data, v) = toy_examples(15);
    let config = TrainConfig { lr_init: 1e-3, grad_accum_steps: 5, ..TrainConfig::default() };
    let mut trainer = Trainer::new(desk_model(v, 1), config).unwrap();
    trainer.run_epoch(&data, &mut |_| Ok(())).unwrap();
    assert_eq!(trainer.updates, 3);
    trainer.run_epoch(&data[..7], &mut |_| Ok(())).unwrap();
    // Five steps fill one window; the two left over are applied at epoch end.
    assert_eq!(trainer.updates, 5);
}

#[test]
fn resuming_continues_the_step_counter_and_schedule() {
    let (data, v) = toy_examples(6);
    let config = TrainConfig { lr_init: 1e-3, grad_accum_steps: 2, ..TrainConfig::default() };
    let mut first = Trainer::new(desk_model(v, 6), config).unwrap();
    first.run_epoch(&data, &mut |_| Ok(())).unwrap();
    let saved = decode_checkpoint(&encode_checkpoint(&Checkpoint {
        model: first.model.clone(),
        progress: first.progress,
        optimizer: Some(first.optimizer.state.clone()),
    }))
    .unwrap();
    let mut resumed = Trainer::resume(saved.model, config, saved.progress, saved.optimizer).unwrap();
    let mut seen: Vec<StepMetrics> = Vec::new();
    resumed
        .run_epoch(&data, &mut |m| {
            seen.push(*m);
            Ok(())
        })
        .unwrap();
    assert_eq!(seen.iter().map(|m| m.step).collect::<Vec<_>>(), (7..=12).collect::<Vec<_>>());
    assert_eq!(seen[0].lr, 1e-3);
    assert_eq!(resumed.optimizer.state.t, 6);
    assert_eq!(resumed.progress.epoch, 2);
}
