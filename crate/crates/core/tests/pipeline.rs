use std::collections::BTreeSet;

use corridorflow::corridor::{total_loss_with, Terms};
use corridorflow::flowmatch::{draw_noise, FlowModel};
use corridorflow::harness::{
    eval_settings, evaluate, prepare_run, read_metrics, run_ablation_suite, split_by_episode, train, Checkpoint,
    RunConfig, RunPaths,
};
use corridorflow::rng::{stream, Stream};
use corridorflow::synthdata::{generate_dataset, Record};

fn small(seed: u64) -> (RunConfig, Vec<Record>) {
    let mut cfg = RunConfig::default();
    cfg.data.n_chunks = 300;
    cfg.data.seed = Some(seed);
    cfg.train.seed = Some(seed);
    cfg.train.steps = 20;
    cfg.train.eval_every = 10;
    cfg.train.batch_size = 8;
    cfg.eval.max_records = Some(12);
    let records = generate_dataset(&cfg.data, seed, cfg.corridor.alpha).unwrap();
    (cfg, records)
}

#[test]
fn checkpoint_reproduces_the_final_evaluation() {
    let (cfg, records) = small(11);
    let dir = tempfile::tempdir().unwrap();
    let paths = RunPaths::in_dir(dir.path(), &cfg);
    let run = train(&cfg, &records, Some(&paths)).unwrap();

    let model = Checkpoint::load(&paths.checkpoint).unwrap().model().unwrap();
    assert_eq!(model.store, run.model.store);
    let prepared = prepare_run(&cfg, &records).unwrap();
    let report = evaluate(&model, &prepared.held_out, eval_settings(&cfg).unwrap()).unwrap();
    assert_eq!(&report, run.final_report());

    let log = read_metrics(&paths.metrics).unwrap();
    assert_eq!(log, run.log);
    assert_eq!(log.iter().map(|l| l.step).collect::<Vec<_>>(), vec![0, 10, 20]);
}

#[test]
fn term_gradients_add_up_to_the_total() {
    let (cfg, records) = small(12);
    let prepared = prepare_run(&cfg, &records).unwrap();
    let mut model = FlowModel::new(cfg.arch(), prepared.norm.clone(), &mut stream(12, Stream::Init)).unwrap();
    let batch = &prepared.train[..6];
    let draws = draw_noise(&mut stream(12, Stream::Train), batch.len(), model.arch.dim());

    let grads = |terms: Terms, model: &mut FlowModel| {
        model.store.zero_grads();
        let eval = total_loss_with(model, batch, &draws, &cfg.corridor, terms, true).unwrap();
        let g: Vec<f64> = model.store.ids().flat_map(|id| model.store.grad(id).to_vec()).collect();
        (eval.loss.total, g)
    };
    let (total, full) = grads(cfg.corridor.active_terms(), &mut model);
    let singles = [
        Terms { fm: true, ..Terms::NONE },
        Terms { anchor: true, ..Terms::NONE },
        Terms { buffer: true, ..Terms::NONE },
        Terms { consistency: true, ..Terms::NONE },
    ];
    let mut sum_loss = 0.0;
    let mut sum = vec![0.0; full.len()];
    for t in singles {
        let (l, g) = grads(t, &mut model);
        sum_loss += l;
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    assert!((sum_loss - total).abs() <= 1e-10 * total.abs().max(1.0));
    let scale = full.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for (a, b) in full.iter().zip(&sum) {
        assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
    }
}

#[test]
fn zero_step_ablation_reports_the_initial_model() {
    let (mut cfg, records) = small(13);
    cfg.train.steps = 0;
    let rows = run_ablation_suite(&cfg, &records, None).unwrap();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let vcfg = RunConfig {
            corridor: row.corridor.clone(),
            ..cfg.clone()
        };
        let prepared = prepare_run(&vcfg, &records).unwrap();
        let model = FlowModel::new(vcfg.arch(), prepared.norm, &mut stream(13, Stream::Init)).unwrap();
        let init = evaluate(&model, &prepared.held_out, eval_settings(&vcfg).unwrap()).unwrap();
        assert_eq!(row.report.as_ref(), Some(&init), "{}", row.variant);
    }
}

#[test]
fn held_out_episodes_never_reach_training() {
    let (_, records) = small(14);
    let split = split_by_episode(&records, 5).unwrap();
    let train_eps: BTreeSet<_> = split.train.iter().map(|r| r.seed).collect();
    let held_eps: BTreeSet<_> = split.held_out.iter().map(|r| r.seed).collect();
    assert!(!held_eps.is_empty());
    assert!(train_eps.is_disjoint(&held_eps));
    assert_eq!(split.train.len() + split.held_out.len(), records.len());
}

#[test]
fn different_seeds_give_different_runs() {
    let (cfg, records) = small(15);
    let a = train(&cfg, &records, None).unwrap();
    let mut other = cfg.clone();
    other.train.seed = Some(16);
    let b = train(&other, &records, None).unwrap();
    assert_ne!(a.losses, b.losses);
}
