mod common;

use cba::ctc::ctc_nll;
use cba::data::{generate_corpus, Corpus, CorpusConfig, SplitCounts};
use cba::model::{encode_checkpoint, forward, init_parameters, Parameters};
use cba::trainer::{
    complexity_pass, evaluate, fused_loss, metrics_jsonl, run_ablation, run_cba, run_method,
    train_stage1, Adaptivity, Method, NoopObserver, RecordingObserver, Stage, Trainer,
};
use common::{seeded, small_setup, spearman};

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a))).unwrap()
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b))).unwrap()
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let (corpus, mut settings) = small_setup(32, (0, 0));
    settings.train.epochs_stage1 = 0;
    let init = init_parameters(&settings.encoder).unwrap();
    let (params, ckpts, reports) = train_stage1(init.clone(), &corpus, &settings).unwrap();
    assert_eq!(params, init);
    assert!(ckpts.is_empty() && reports.is_empty());

    let out = run_cba(&corpus, &settings, &mut NoopObserver).unwrap();
    assert_eq!(out.report.test_loss, evaluate(&init, &corpus.test).unwrap().loss);
    assert_eq!(out.report.averaged, 0);
}

#[test]
fn one_epoch_takes_ceil_n_over_b_steps() {
    let (corpus, settings) = small_setup(37, (1, 0));
    let mut t = Trainer::new(&settings, init_parameters(&settings.encoder).unwrap()).unwrap();
    t.run_stage(Stage::Stage1, Adaptivity::FULL, 1, &corpus, &mut NoopObserver).unwrap();
    assert_eq!(t.optimizer_steps(), 3);
    assert_eq!(t.checkpoints.len(), 1);
}

#[test]
fn complexity_pass_is_pure_per_sample() {
    let (corpus, settings) = small_setup(8, (0, 0));
    let params = init_parameters(&settings.encoder).unwrap();
    let before = params.clone();
    let batch: Vec<_> = corpus.train.iter().collect();
    let losses = complexity_pass(&params, &batch).unwrap();
    assert_eq!(params, before);
    for (s, &l) in corpus.train.iter().zip(&losses) {
        let standalone = ctc_nll(forward(&params, &s.features).unwrap().final_lattice(), &s.labels).unwrap();
        assert_eq!(l.to_bits(), standalone.to_bits());
    }
    let reversed: Vec<_> = batch.iter().rev().copied().collect();
    let mut back = complexity_pass(&params, &reversed).unwrap();
    back.reverse();
    assert_eq!(back, losses);
    let twins = complexity_pass(&params, &[batch[0], batch[0]]).unwrap();
    assert_eq!(twins[0], twins[1]);
    assert!(complexity_pass(&params, &[]).is_err());
}

#[test]
fn policy_direction_holds_in_every_batch() {
    let (corpus, settings) = small_setup(64, (1, 2));
    let mut obs = RecordingObserver::default();
    let out = run_method(&corpus, &settings, Method::Cba, &mut obs).unwrap();
    assert_eq!(obs.traces.len(), 2 * 4);
    for tr in &obs.traces {
        let losses = &tr.complexity.raw_losses;
        let min = *tr.time_masks.iter().min().unwrap();
        let max = *tr.time_masks.iter().max().unwrap();
        assert_eq!(tr.time_masks[argmax(losses)], min);
        assert_eq!(tr.time_masks[argmin(losses)], max);
        assert!(tr.f_ctc > 0.0 && tr.f_ctc < 1.0);
        assert_eq!(tr.f_ctc, tr.complexity.reg_factor);
    }
    assert_eq!(out.checkpoints.len(), 3);
    for r in &out.reports {
        assert_eq!(r.f_ctc.is_some(), r.stage == Stage::Stage2);
    }
}

#[test]
fn degenerate_batch_gets_uniform_masks() {
    let (mut corpus, mut settings) = small_setup(16, (0, 1));
    let first = corpus.train[0].clone();
    corpus.train = vec![first; 16];
    settings.train.batch_size = 16;
    let mut obs = RecordingObserver::default();
    let mut t = Trainer::new(&settings, init_parameters(&settings.encoder).unwrap()).unwrap();
    t.run_stage(Stage::Stage2, Adaptivity::FULL, 1, &corpus, &mut obs).unwrap();
    let tr = &obs.traces[0];
    assert!(tr.complexity.normalized.iter().all(|&x| x == 0.5));
    assert!(tr.time_masks.windows(2).all(|w| w[0] == w[1]));
    assert!(tr.freq_masks.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn zero_lambda_makes_regularization_irrelevant() {
    let (corpus, settings) = small_setup(32, (0, 2));
    let run = |adaptivity| {
        let init = init_parameters(&settings.encoder).unwrap();
        let mut t = Trainer::new(&settings, init).unwrap().with_lambda(0.0);
        t.run_stage(Stage::Stage2, adaptivity, 2, &corpus, &mut NoopObserver).unwrap();
        t.into_params()
    };
    let full = run(Adaptivity::FULL);
    let da_only = run(Adaptivity { augment: true, regularization: false });
    assert_eq!(full, da_only);
}

#[test]
fn stage2_without_adaptivity_equals_stage1() {
    let (corpus, settings) = small_setup(32, (0, 0));
    let run = |stage| {
        let mut t = Trainer::new(&settings, init_parameters(&settings.encoder).unwrap()).unwrap();
        let none = Adaptivity { augment: false, regularization: false };
        t.run_stage(stage, none, 2, &corpus, &mut NoopObserver).unwrap();
        (t.reports.iter().map(|r| r.train_loss).collect::<Vec<_>>(), t.into_params())
    };
    assert_eq!(run(Stage::Stage1), run(Stage::Stage2));
    let (l, li, lambda) = (1.7, 2.9, 0.3);
    assert_eq!(fused_loss(l, li, lambda, 1.0).unwrap(), (1.0 - lambda) * l + lambda * li);
}

#[test]
fn method_wiring() {
    let (corpus, settings) = small_setup(32, (1, 1));
    let mut obs = RecordingObserver::default();
    let base = run_method(&corpus, &settings, Method::Baseline, &mut obs).unwrap();
    assert!(obs.traces.is_empty());
    assert_eq!(base.report.policy_batches, 0);
    assert!(base.reports.iter().all(|r| r.stage == Stage::Stage1));

    let fs = run_method(&corpus, &settings, Method::FsDaAr, &mut NoopObserver).unwrap();
    assert_eq!(fs.reports.len(), 2);
    assert!(fs.reports.iter().all(|r| r.stage == Stage::Stage2));
    assert_eq!(fs.report.stage1_epochs, 0);

    let cba = run_method(&corpus, &settings, Method::Cba, &mut NoopObserver).unwrap();
    let stages: Vec<Stage> = cba.reports.iter().map(|r| r.stage).collect();
    assert_eq!(stages, vec![Stage::Stage1, Stage::Stage2]);
}

#[test]
fn average_k_is_clamped() {
    let (corpus, mut settings) = small_setup(16, (1, 1));
    settings.train.average_k = 50;
    let out = run_cba(&corpus, &settings, &mut NoopObserver).unwrap();
    assert_eq!(out.report.averaged, 2);
    assert_eq!(out.report.checkpoints, 2);
    assert!(out.report.averaged_cv_loss.is_finite());
}

#[test]
fn runs_are_bit_identical() {
    let (corpus, settings) = small_setup(32, (1, 1));
    let once = || {
        let out = run_cba(&corpus, &settings, &mut NoopObserver).unwrap();
        let metrics = metrics_jsonl(&out.reports, &out.report, &serde_json::Value::Null);
        let blobs: Vec<Vec<u8>> = out.checkpoints.iter().map(|c| encode_checkpoint(&settings.encoder, c)).collect();
        (metrics, blobs)
    };
    assert_eq!(once(), once());
}

#[test]
fn ablation_has_eight_rows() {
    let (corpus, mut settings) = small_setup(16, (1, 1));
    settings.encoder.hidden_dim = 8;
    let table = run_ablation(&corpus, &settings, &Method::ABLATION).unwrap();
    assert_eq!(table.rows.len(), 8);
    assert_eq!(table.rows[0].name, "SpecAug, without policy");
    assert_eq!(table.render().lines().count(), 9);
}

fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    // full-matrix formulation
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

#[test]
fn evaluation_ter() {
    let (corpus, settings) = small_setup(16, (0, 0));
    let mut params = init_parameters(&settings.encoder).unwrap();
    for v in params.as_flat_mut() {
        *v *= 3.0;
    }
    let fixture = &corpus.test[..3];
    let (mut errs, mut total) = (0, 0);
    for s in fixture {
        let hyp = cba::ctc::greedy_decode(forward(&params, &s.features).unwrap().final_lattice());
        errs += levenshtein(hyp.tokens(), s.labels.tokens());
        total += s.labels.len();
    }
    let e = evaluate(&params, fixture).unwrap();
    assert_eq!(e.ter, errs as f64 / total as f64);

    let doubled: Vec<_> = fixture.iter().chain(fixture).cloned().collect();
    assert_eq!(evaluate(&params, &doubled).unwrap().ter, e.ter);
    assert!(evaluate(&params, &[]).is_err());
}

#[test]
fn perfect_model_scores_zero() {
    let corpus = generate_corpus(&CorpusConfig {
        tokens_per_utt: [1, 1],
        counts: SplitCounts { train: 0, cv: 0, test: 40 },
        ..CorpusConfig::default()
    })
    .unwrap();
    let ones: Vec<_> = corpus.test.into_iter().filter(|s| s.labels.tokens() == [1]).collect();
    assert!(!ones.is_empty());
    let cfg = cba::model::EncoderConfig::default();
    let mut params = Parameters::zeros(&cfg).unwrap();
    let b_out = params.layout().b_out;
    params.as_flat_mut()[b_out + 1] = 10.0;
    assert_eq!(evaluate(&params, &ones).unwrap().ter, 0.0);
}

fn default_corpus() -> Corpus {
    generate_corpus(&CorpusConfig::default()).unwrap()
}

#[test]
fn loss_tracks_noise_level() {
    let corpus = default_corpus();
    let mut settings = seeded(1);
    settings.train.epochs_stage1 = 8;
    let (params, _, _) = train_stage1(init_parameters(&settings.encoder).unwrap(), &corpus, &settings).unwrap();
    let held: Vec<_> = corpus.cv.iter().chain(&corpus.test).collect();
    let losses = complexity_pass(&params, &held).unwrap();
    let noise: Vec<f64> = held.iter().map(|s| s.meta.noise_sigma).collect();
    let rho = spearman(&noise, &losses);
    assert!(rho > 0.3, "spearman {rho}");
}

#[test]
fn training_reduces_loss() {
    let corpus = default_corpus();
    for seed in 1..=3 {
        let mut settings = seeded(seed);
        settings.train.epochs_stage1 = 10;
        let (_, _, reports) = train_stage1(init_parameters(&settings.encoder).unwrap(), &corpus, &settings).unwrap();
        assert!(reports[9].train_loss < reports[0].train_loss, "seed {seed}");
    }
}
