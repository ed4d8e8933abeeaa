use ctcattn::{checkpoint, Mode, OpKind};
use ctcattn_harness::gradcheck::{grad_check, grad_check_with, GradCheckConfig};
use ctcattn_harness::synth::{gen_dataset, load_charset, load_split, save_splits};
use ctcattn_harness::train::{decode_all, mean_loss, prepare, train, write_metrics};
use ctcattn_harness::{build_task, fresh_model, RunConfig, SynthTaskSpec, TaskConfig, Utterance};

/// A quick run: small splits, small model.
fn small_run(mode: Mode, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.task.train = 120;
    cfg.task.dev = 20;
    cfg.task.test = 20;
    cfg.model.mode = mode;
    cfg.model.layers = 1;
    cfg.model.cells = 16;
    cfg.model.proj_dim = 16;
    cfg.train.epochs = epochs;
    cfg
}

#[test]
fn same_seed_same_data_and_metrics() {
    let spec = SynthTaskSpec::standard(4);
    assert_eq!(gen_dataset(&spec, 30).unwrap(), gen_dataset(&spec, 30).unwrap());
    assert_ne!(
        gen_dataset(&spec, 30).unwrap(),
        gen_dataset(&SynthTaskSpec::standard(5), 30).unwrap()
    );

    let cfg = small_run(Mode::Ha, 2);
    let task = build_task(&cfg).unwrap();
    let run = || {
        let m = fresh_model(&cfg, task.spec.dim(), task.charset()).unwrap();
        train(m, &task.splits.train, &task.splits.dev, task.charset(), &cfg.train).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.best_model.params(), b.best_model.params());
}

/// Expected per-utterance count of every label, by dynamic programming over
/// the generator's transition rule.
fn expected_counts(spec: &SynthTaskSpec) -> Vec<f64> {
    let k = spec.vocab.len();
    let mut expect = vec![0.0; k];
    let (lo, hi) = spec.lengths;
    let p_len = 1.0 / (hi - lo + 1) as f64;
    for len in lo..=hi {
        // distribution over the previous label (None encoded as k)
        let mut dist = vec![0.0; k + 1];
        dist[k] = 1.0;
        for pos in 0..len {
            let mut next = vec![0.0; k + 1];
            for (prev, &p) in dist.iter().enumerate().filter(|(_, p)| **p > 0.0) {
                let choices = spec.allowed_next((prev < k).then_some(prev), pos, len);
                for &c in &choices {
                    next[c] += p / choices.len() as f64;
                }
            }
            for c in 0..k {
                expect[c] += p_len * next[c];
            }
            dist = next;
        }
    }
    expect
}

#[test]
fn label_frequencies_match_the_generator_within_three_sigma() {
    let spec = SynthTaskSpec::standard(6);
    let n = 10_000;
    let utts = gen_dataset(&spec, n).unwrap();
    let k = spec.vocab.len();
    let mut counts = vec![Vec::with_capacity(n); k];
    for u in &utts {
        let mut c = vec![0.0; k];
        for &id in spec.vocab.encode(&u.text).unwrap().ids() {
            c[id] += 1.0;
        }
        counts.iter_mut().zip(&c).for_each(|(v, x)| v.push(*x));
    }
    let expect = expected_counts(&spec);
    assert_eq!(expect[spec.vocab.blank()], 0.0);
    for (label, samples) in counts.iter().enumerate() {
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - expect[label]).abs() <= 3.0 * se.max(1e-12),
            "label {label}: mean {mean}, expected {}, se {se}",
            expect[label]
        );
    }
}

#[test]
fn memorizes_a_single_utterance() {
    let mut cfg = small_run(Mode::Coma, 150);
    cfg.train.batch = 1;
    cfg.train.lr = 0.05;
    cfg.train.eval_every = 150;
    let task = build_task(&cfg).unwrap();
    let one = &task.splits.train[..1];
    let model = fresh_model(&cfg, task.spec.dim(), task.charset()).unwrap();
    let report = train(model, one, one, task.charset(), &cfg.train).unwrap();
    let data = prepare(&report.best_model, one, task.charset()).unwrap();
    // the infimum of the CTC loss is 0
    let loss = mean_loss(&report.best_model, &data).unwrap();
    assert!(loss < 0.01, "loss {loss}");
    assert_eq!(decode_all(&report.best_model, one, task.charset()).unwrap()[0], one[0].text);
}

#[test]
fn first_epoch_lowers_the_loss() {
    let cfg = small_run(Mode::Vanilla, 1);
    let task = build_task(&cfg).unwrap();
    let model = fresh_model(&cfg, task.spec.dim(), task.charset()).unwrap();
    let report = train(model, &task.splits.train, &task.splits.dev, task.charset(), &cfg.train).unwrap();
    assert!(report.metrics[0].train_loss < report.initial_loss);
    let mut log = Vec::new();
    write_metrics(&mut log, &report.metrics).unwrap();
    let log = String::from_utf8(log).unwrap();
    assert_eq!(log.lines().next(), Some("epoch\ttrain_loss\tdev_cer\tdev_wer"));
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn infeasible_utterances_are_skipped() {
    let cfg = small_run(Mode::Vanilla, 1);
    let task = build_task(&cfg).unwrap();
    let mut train_set: Vec<Utterance> = task.splits.train[..10].to_vec();
    let mut short = train_set[0].clone();
    let cut = short.features.data()[..2 * short.features.dim()].to_vec();
    short.features = ctcattn::FeatureSequence::new(cut, short.features.dim(), 10.0).unwrap();
    short.id = "short".into();
    train_set.push(short);
    let model = fresh_model(&cfg, task.spec.dim(), task.charset()).unwrap();
    assert_eq!(prepare(&model, &train_set, task.charset()).unwrap().len(), 10);
    let report = train(model, &train_set, &task.splits.dev, task.charset(), &cfg.train).unwrap();
    assert!(report.metrics[0].train_loss.is_finite());
}

#[test]
fn saved_model_decodes_identically_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(Mode::Coma, 1);
    cfg.train.checkpoint = Some(dir.path().join("best.ctcm"));
    let task = build_task(&cfg).unwrap();
    save_splits(&dir.path().join("data"), task.charset(), &task.splits).unwrap();
    let cs = load_charset(&dir.path().join("data")).unwrap();
    let test = load_split(&dir.path().join("data"), "test").unwrap();
    assert_eq!(&cs, task.charset());
    // feature files hold single precision
    for (a, b) in test.iter().zip(&task.splits.test) {
        assert_eq!((&a.id, &a.text), (&b.id, &b.text));
        assert!(a.features.data().iter().zip(b.features.data()).all(|(x, y)| (x - y).abs() < 1e-6));
    }
    assert_eq!(test.len(), task.splits.test.len());

    let model = fresh_model(&cfg, task.spec.dim(), &cs).unwrap();
    let report = train(model, &task.splits.train, &task.splits.dev, &cs, &cfg.train).unwrap();
    let loaded = checkpoint::load(cfg.train.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(
        decode_all(&loaded, &test, &cs).unwrap(),
        decode_all(&report.best_model, &test, &cs).unwrap()
    );
}

#[test]
fn every_variant_trains_without_nan() {
    for mode in Mode::LADDER {
        let mut cfg = small_run(mode, 1);
        cfg.task.train = 40;
        cfg.train.lr = 0.05;
        let task = build_task(&cfg).unwrap();
        let model = fresh_model(&cfg, task.spec.dim(), task.charset()).unwrap();
        let report = train(model, &task.splits.train, &task.splits.dev, task.charset(), &cfg.train).unwrap();
        assert!(report.metrics[0].train_loss.is_finite(), "{mode}");
        assert!(report.best_model.params().iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite())));
    }
}

#[test]
fn gradient_check_passes_and_catches_faults() {
    for mode in [Mode::Vanilla, Mode::Coma] {
        let report = grad_check(&GradCheckConfig::desk(mode), 3).unwrap();
        assert!(report.passed(), "{mode}: {:?}", report.groups);
        assert!(report.groups.iter().all(|g| g.values > 0));
    }
    let faulty = grad_check_with(&GradCheckConfig::desk(Mode::Coma), 3, Some((OpKind::Sigmoid, 1.1))).unwrap();
    assert!(!faulty.passed());
    assert!(faulty.max_rel_err() > 1e-2);
}

#[test]
fn task_config_round_trips_through_toml() {
    let cfg = RunConfig::parse("[task]\nletters = \"xyz\"\ntrain = 5\ndev = 2\ntest = 2\n").unwrap();
    let task = build_task(&cfg).unwrap();
    assert_eq!(task.charset().len(), 5);
    assert_eq!(task.splits.train.len(), 5);
    assert_eq!(TaskConfig::default().letters, "abcdefg");
}

#[test]
fn shipped_toy_config_is_the_default_run() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy.toml");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}
