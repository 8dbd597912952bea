mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use noisypairs::experiments::{
    cell_dir, compute_deltas, mean_std, read_records, render_report, run_sweep, CellKey, CellOutcome, CellRunner,
    DataLocator, ExperimentRecord, SweepGrid, TrainingRunner, FAILURES_FILE, FAILURE_FILE, RECORDS_FILE,
};
use noisypairs::pairing::PairingMode;
use noisypairs::training::{
    class_weights, evaluate_f1, finetune, pretrain, Checkpoint, DatasetKind, ExperimentConfig, LossKind,
    CHECKPOINT_FILE, VAL_LOG_FILE,
};
use noisypairs::vts::{generate_dataset, write_procedural_textures, GeneratorConfig};
use noisypairs::xbd::{ingest, write_fixture, FixtureConfig, IngestConfig};
use noisypairs::Error;
use proptest::prelude::*;
use rand::Rng;

/// A 16/8/8-image VTS dataset at 32 px, shared by every test in this file.
fn tiny_vts() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("pipeline-vts");
        let data = root.join("data");
        if !data.join("dataset.json").exists() {
            write_procedural_textures(&root.join("textures"), 4, 48, 0).unwrap();
            let mut g = GeneratorConfig::desk(root.join("textures"), 0.5, 0);
            g.n_train = 16;
            g.n_val = 8;
            g.n_test = 8;
            g.image_size = 32;
            generate_dataset(&g, &data).unwrap();
        }
        data
    })
}

fn tiny_config(loss: LossKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk(DatasetKind::Vts, tiny_vts(), loss);
    c.input_size = 32;
    c.r_pairs = 0.5;
    c.pretrain.epochs = 3;
    c.pretrain.batch_size = 8;
    c.moco.queue_size = 16;
    c.finetune.epochs = 2;
    c.finetune.batch_size = 8;
    c.finetune.lr_grid = vec![0.1, 0.01];
    c
}

fn bits(params: &[noisypairs_nn::Param]) -> Vec<(String, Vec<u32>)> {
    params
        .iter()
        .map(|p| (p.name.clone(), p.value.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn best_validation_checkpoint_is_kept() {
    for loss in LossKind::ALL {
        let dir = tempfile::tempdir().unwrap();
        let out = pretrain(&tiny_config(loss), dir.path()).unwrap();
        assert_eq!(out.history.len(), 3);
        let vals: Vec<f64> = out.history.iter().map(|h| h.val_loss).collect();
        let ckpt = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert!(vals.iter().all(|v| ckpt.best_val_loss <= *v), "{loss}: {vals:?}");
        assert_eq!(ckpt.best_val_loss, vals[ckpt.epoch]);
        assert_eq!(bits(&ckpt.encoder), bits(&out.checkpoint.encoder));
        assert_eq!(ckpt.epoch, out.checkpoint.epoch);
        let log = fs::read_to_string(dir.path().join(VAL_LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 4);
    }
}

#[test]
fn moco_validation_loss_is_below_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(LossKind::Moco);
    // batch norm over key groups of two samples carries almost no signal
    config.moco.shuffle_groups = 1;
    let out = pretrain(&config, dir.path()).unwrap();
    let chance = ((config.moco.queue_size + 1) as f64).ln();
    assert!(out.checkpoint.best_val_loss < chance, "{} vs {chance}", out.checkpoint.best_val_loss);
}

#[test]
fn encoder_is_bitwise_frozen_during_finetuning() {
    let dir = tempfile::tempdir().unwrap();
    let out = pretrain(&tiny_config(LossKind::WithinImage), dir.path()).unwrap();
    let before = bits(&out.checkpoint.encoder);
    let ft = finetune(&out.checkpoint, Some(dir.path())).unwrap();
    assert_eq!(bits(&ft.encoder), before);
    let on_disk = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(bits(&on_disk.encoder), before);
    assert_eq!(ft.metrics.lr_trials.len(), 2);
    assert!((0.0..=1.0).contains(&ft.metrics.macro_f1));
    assert_eq!(ft.metrics.per_class_f1.len(), 3);
}

#[test]
fn same_seed_gives_identical_runs() {
    let config = tiny_config(LossKind::CrossImage);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = pretrain(&config, a.path()).unwrap();
    let rb = pretrain(&config, b.path()).unwrap();
    let curve = |h: &[noisypairs::training::EpochStats]| -> Vec<(u64, u64)> {
        h.iter().map(|e| (e.train_loss.to_bits(), e.val_loss.to_bits())).collect()
    };
    assert_eq!(curve(&ra.history), curve(&rb.history));
    assert_eq!(
        fs::read(a.path().join(CHECKPOINT_FILE)).unwrap(),
        fs::read(b.path().join(CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn divergence_is_reported() {
    let mut config = tiny_config(LossKind::Moco);
    config.pretrain.optim.lr = 1e30;
    let dir = tempfile::tempdir().unwrap();
    match pretrain(&config, dir.path()) {
        Err(Error::Diverged { loss, .. }) => assert!(!loss.is_finite()),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history.len())),
    }
}

#[test]
fn inverse_frequency_weights() {
    let w = class_weights(&[90, 10]).unwrap();
    assert!((w[0] - 0.2).abs() < 1e-12 && (w[1] - 1.8).abs() < 1e-12, "{w:?}");
    let w = class_weights(&[0, 30, 10]).unwrap();
    assert_eq!(w[0], w[2]);
    assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    assert!(class_weights(&[0, 0]).is_err());
}

fn naive_f1(pred: &[Vec<u8>], label: &[Vec<u8>], classes: &[u8]) -> (BTreeMap<u8, Option<f64>>, f64) {
    let mut per = BTreeMap::new();
    for &c in classes {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (p, l) in pred.iter().zip(label) {
            for (&p, &l) in p.iter().zip(l) {
                match (p == c, l == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let f = (tp + fp + fn_ > 0).then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        per.insert(c, f);
    }
    let present: Vec<f64> = per.values().flatten().copied().collect();
    let macro_f1 = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    (per, macro_f1)
}

proptest! {
    #![proptest_config(common::cases(100))]

    #[test]
    fn weights_halve_when_a_count_doubles(counts in proptest::collection::vec(1u64..10_000, 2..6), pick in any::<prop::sample::Index>()) {
        let i = pick.index(counts.len());
        let w = class_weights(&counts).unwrap();
        prop_assert!((w.iter().sum::<f64>() / w.len() as f64 - 1.0).abs() < 1e-9);
        let total: u64 = counts.iter().sum();
        for (c, wc) in counts.iter().zip(&w) {
            // proportional to the inverse frequency
            let expect = (total as f64 / *c as f64) / (total as f64 / counts[0] as f64) * w[0];
            prop_assert!((wc - expect).abs() < 1e-9 * expect.max(1.0));
        }
        let mut doubled = counts.clone();
        doubled[i] *= 2;
        let w2 = class_weights(&doubled).unwrap();
        for j in 0..counts.len() {
            if j != i {
                let before = w[i] / w[j];
                let after = w2[i] / w2[j];
                prop_assert!((after - before / 2.0).abs() < 1e-9 * before);
            }
        }
    }

    #[test]
    fn f1_matches_confusion_oracle(seed in any::<u64>(), images in 1usize..4, bias in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let mut pred = Vec::new();
        let mut label = Vec::new();
        for _ in 0..images {
            let l: Vec<u8> = (0..64).map(|_| rng.random_range(0..3)).collect();
            let p: Vec<u8> = l.iter().map(|&v| if rng.random_bool(bias) { v } else { rng.random_range(0..3) }).collect();
            label.push(l);
            pred.push(p);
        }
        let pr: Vec<&[u8]> = pred.iter().map(|v| v.as_slice()).collect();
        let lr: Vec<&[u8]> = label.iter().map(|v| v.as_slice()).collect();
        for classes in [vec![0u8, 1, 2], vec![1, 2]] {
            let report = evaluate_f1(&pr, &lr, &classes, 3).unwrap();
            let (per, macro_f1) = naive_f1(&pred, &label, &classes);
            prop_assert_eq!(report.per_class_f1, per);
            prop_assert_eq!(report.macro_f1, macro_f1);
        }
    }
}

#[test]
fn constant_prediction_f1() {
    let label: Vec<u8> = (0..64).map(|i| (i % 4 == 0) as u8).collect();
    let pred = vec![0u8; 64];
    let r = evaluate_f1(&[&pred], &[&label], &[0, 1], 2).unwrap();
    // 48 true zeros, 16 ones predicted as zero
    assert_eq!(r.per_class_f1[&0], Some(96.0 / 112.0));
    assert_eq!(r.per_class_f1[&1], Some(0.0));
    assert_eq!(r.macro_f1, 48.0 / 112.0);
}

/// Returns a made-up F1 from the cell key; fails for one chosen slug.
struct FakeRunner {
    fail: Option<String>,
    calls: AtomicUsize,
}

impl FakeRunner {
    fn new(fail: Option<&str>) -> Self {
        FakeRunner {
            fail: fail.map(String::from),
            calls: AtomicUsize::new(0),
        }
    }
}

impl CellRunner for FakeRunner {
    fn run(&self, key: &CellKey, cell_dir: &Path, run_dir: &Path) -> noisypairs::Result<CellOutcome> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail.as_deref() == Some(key.slug().as_str()) {
            return Err(Error::InvalidArgument("injected fault".into()));
        }
        let f1 = 0.5 + 0.1 * key.r_pairs - if key.mode == PairingMode::MereExposure { 0.05 } else { 0.0 };
        Ok(CellOutcome {
            macro_f1: f1,
            per_class_f1: [(0, Some(f1)), (1, Some(f1))].into_iter().collect(),
            checkpoint: cell_dir.strip_prefix(run_dir).unwrap().join(CHECKPOINT_FILE),
            checkpoint_epoch: 0,
        })
    }
}

fn grid(losses: &[LossKind], r_pairs: &[f64], modes: &[PairingMode], seeds: &[u64]) -> SweepGrid {
    SweepGrid {
        dataset: DatasetKind::Vts,
        losses: losses.to_vec(),
        r_pairs: r_pairs.to_vec(),
        r_img: vec![0.5],
        modes: modes.to_vec(),
        seeds: seeds.to_vec(),
    }
}

#[test]
fn sweep_is_idempotent() {
    let run = tempfile::tempdir().unwrap();
    let cells = grid(&[LossKind::Moco], &[0.5], &[PairingMode::Noisy], &[0]).cells();
    let runner = FakeRunner::new(None);
    let first = run_sweep(&cells, &runner, run.path()).unwrap();
    assert_eq!((first.records.len(), first.trained, first.skipped), (1, 1, 0));
    let records = fs::read(run.path().join(RECORDS_FILE)).unwrap();
    let second = run_sweep(&cells, &runner, run.path()).unwrap();
    assert_eq!((second.records.len(), second.trained, second.skipped), (1, 0, 1));
    assert_eq!(runner.calls.load(Ordering::SeqCst), 1);
    assert_eq!(fs::read(run.path().join(RECORDS_FILE)).unwrap(), records);
}

#[test]
fn failing_cell_is_logged_and_retried() {
    let run = tempfile::tempdir().unwrap();
    let cells = grid(&[LossKind::Moco], &[0.0, 1.0], &[PairingMode::Noisy, PairingMode::MereExposure], &[0]).cells();
    assert_eq!(cells.len(), 4);
    let bad = cells[1].slug();
    let s = run_sweep(&cells, &FakeRunner::new(Some(&bad)), run.path()).unwrap();
    assert_eq!((s.records.len(), s.failures.len(), s.trained), (3, 1, 4));
    assert_eq!(s.failures[0].key, cells[1]);
    assert!(s.failures[0].error.contains("injected fault"));
    let failures = fs::read_to_string(run.path().join(FAILURES_FILE)).unwrap();
    assert_eq!(failures.lines().count(), 1);
    assert_eq!(read_records(&run.path().join(RECORDS_FILE)).unwrap().len(), 3);

    let fixed = FakeRunner::new(None);
    let s = run_sweep(&cells, &fixed, run.path()).unwrap();
    assert_eq!((s.records.len(), s.failures.len(), s.trained, s.skipped), (4, 0, 1, 3));
    assert!(!cell_dir(run.path(), &cells[1]).join(FAILURE_FILE).exists());
}

#[test]
fn training_runner_reruns_stale_cells() {
    let run = tempfile::tempdir().unwrap();
    let mut base = tiny_config(LossKind::Moco);
    base.pretrain.epochs = 1;
    base.finetune.lr_grid = vec![0.1];
    let data_root = tempfile::tempdir().unwrap();
    std::os::unix::fs::symlink(tiny_vts(), data_root.path().join("r_img_0.50")).unwrap();
    let runner = TrainingRunner {
        base: base.clone(),
        data: DataLocator::VtsByRImg(data_root.path().to_path_buf()),
    };
    let cells = grid(&[LossKind::Moco], &[0.5], &[PairingMode::Noisy], &[0]).cells();
    let s = run_sweep(&cells, &runner, run.path()).unwrap();
    assert_eq!((s.records.len(), s.trained), (1, 1));
    assert!(run.path().join(&s.records[0].checkpoint).exists());
    let s = run_sweep(&cells, &runner, run.path()).unwrap();
    assert_eq!((s.trained, s.skipped), (0, 1));

    let mut changed = base;
    changed.finetune.lr_grid = vec![0.01];
    let runner = TrainingRunner {
        base: changed,
        data: runner.data,
    };
    let s = run_sweep(&cells, &runner, run.path()).unwrap();
    assert_eq!((s.trained, s.skipped), (1, 0));
}

fn record(loss: LossKind, r_pairs: f64, mode: PairingMode, seed: u64, f1: f64) -> ExperimentRecord {
    let key = CellKey {
        dataset: DatasetKind::Vts,
        loss,
        r_pairs,
        r_img: Some(0.5),
        mode,
        seed,
    };
    ExperimentRecord {
        checkpoint: PathBuf::from("cells").join(key.slug()).join(CHECKPOINT_FILE),
        key,
        macro_f1: f1,
        per_class_f1: [(0, Some(f1))].into_iter().collect(),
        checkpoint_epoch: 3,
        wall_clock_seconds: 1.0,
    }
}

fn random_records(seed: u64) -> Vec<ExperimentRecord> {
    let mut rng = common::rng(seed);
    let mut out = Vec::new();
    for loss in LossKind::ALL {
        for rp in [0.0, 0.25, 0.5] {
            for s in 0..rng.random_range(1..3u64) {
                for mode in [PairingMode::Noisy, PairingMode::MereExposure] {
                    out.push(record(loss, rp, mode, s, rng.random_range(0.0..1.0)));
                }
            }
        }
    }
    out
}

fn swap_modes(records: &[ExperimentRecord]) -> Vec<ExperimentRecord> {
    records
        .iter()
        .map(|r| ExperimentRecord {
            key: r.key.counterpart(),
            ..r.clone()
        })
        .collect()
}

proptest! {
    #![proptest_config(common::cases(50))]

    #[test]
    fn deltas_are_antisymmetric(seed in any::<u64>()) {
        let records = random_records(seed);
        let a = compute_deltas(&records);
        let b = compute_deltas(&swap_modes(&records));
        prop_assert_eq!(a.cells.len(), b.cells.len());
        prop_assert!(a.unmatched.is_empty());
        for (x, y) in a.cells.iter().zip(&b.cells) {
            prop_assert_eq!(x.delta_pp, -y.delta_pp);
            prop_assert_eq!(x.noisy_f1, y.mere_exposure_f1);
        }
        for (x, y) in a.stats.iter().zip(&b.stats) {
            prop_assert_eq!(x.mean_pp, -y.mean_pp);
            prop_assert_eq!(x.std_pp, y.std_pp);
        }
    }
}

#[test]
fn delta_stats_match_a_brute_force_recomputation() {
    let run = tempfile::tempdir().unwrap();
    let mut cells = Vec::new();
    let records = random_records(7);
    for r in &records {
        let dir = cell_dir(run.path(), &r.key);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("record.json"), serde_json::to_vec(r).unwrap()).unwrap();
        cells.push(r.key.clone());
    }
    let s = run_sweep(&cells, &FakeRunner::new(None), run.path()).unwrap();
    assert_eq!(s.trained, 0);
    let from_file = read_records(&run.path().join(RECORDS_FILE)).unwrap();
    assert_eq!(from_file.len(), records.len());
    let report = compute_deltas(&from_file);

    for loss in LossKind::ALL {
        let mut deltas = Vec::new();
        for rp in [0.0, 0.25, 0.5] {
            let f1 = |mode: PairingMode, seed: u64| {
                from_file
                    .iter()
                    .find(|r| r.key.loss == loss && r.key.r_pairs == rp && r.key.mode == mode && r.key.seed == seed)
                    .map(|r| r.macro_f1)
            };
            let mut per_seed = Vec::new();
            for seed in 0..3 {
                if let (Some(a), Some(b)) = (f1(PairingMode::Noisy, seed), f1(PairingMode::MereExposure, seed)) {
                    per_seed.push(100.0 * (a - b));
                }
            }
            deltas.push(per_seed.iter().sum::<f64>() / per_seed.len() as f64);
        }
        let n = deltas.len() as f64;
        let mu = deltas.iter().sum::<f64>() / n;
        let sigma = (deltas.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n).sqrt();
        let stats = report.stats.iter().find(|s| s.loss == loss).unwrap();
        assert_eq!(stats.cells, 3);
        assert!((stats.mean_pp - mu).abs() < 1e-9, "{loss}");
        assert!((stats.std_pp - sigma).abs() < 1e-9, "{loss}");
    }
    assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
}

#[test]
fn unmatched_records_are_listed() {
    let records = vec![
        record(LossKind::Moco, 0.5, PairingMode::Noisy, 0, 0.7),
        record(LossKind::Moco, 0.5, PairingMode::MereExposure, 1, 0.6),
    ];
    let r = compute_deltas(&records);
    assert!(r.cells.is_empty());
    assert_eq!(r.unmatched.len(), 2);
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn report_regenerates_byte_identically() {
    let records = random_records(3);
    let deltas = compute_deltas(&records);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let written = render_report(&records, &deltas, a.path()).unwrap();
    render_report(&records, &deltas, b.path()).unwrap();
    let (fa, fb) = (read_dir_bytes(a.path()), read_dir_bytes(b.path()));
    assert_eq!(fa, fb);
    assert_eq!(written.len(), fa.len());
    for loss in LossKind::ALL {
        let svg = String::from_utf8(fa[&format!("f1_{}.svg", loss.name())].clone()).unwrap();
        // one series per (r_img, mode)
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(fa.contains_key(&format!("delta_{}.svg", loss.name())));
    }
}

#[test]
fn single_record_report() {
    let records = vec![record(LossKind::WithinImage, 0.25, PairingMode::Noisy, 0, 0.61)];
    let deltas = compute_deltas(&records);
    let dir = tempfile::tempdir().unwrap();
    render_report(&records, &deltas, dir.path()).unwrap();
    let summary = fs::read_to_string(dir.path().join("f1_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.contains("0.610000"));
    let svg = fs::read_to_string(dir.path().join("f1_within_image.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert!(!dir.path().join("delta_within_image.svg").exists());
    let unmatched = fs::read_to_string(dir.path().join("unmatched.csv")).unwrap();
    assert_eq!(unmatched.lines().count(), 2);
}

#[test]
fn xbd_fixture_trains_end_to_end() {
    let root = tempfile::tempdir().unwrap();
    let raw = root.path().join("raw");
    let fixture = FixtureConfig {
        sites: vec!["flood-alpha".into(), "fire-beta".into()],
        sources_per_site: 3,
        test_sources_per_site: 1,
        damage_rate: 0.4,
        seed: 1,
    };
    write_fixture(&raw, &fixture).unwrap();
    let data = root.path().join("xbd");
    let manifest = ingest(&raw, &data, &IngestConfig::new(0.5, 0)).unwrap();
    assert!(!manifest.test_pairs.is_empty());

    let mut c = ExperimentConfig::desk(DatasetKind::Xbd, &data, LossKind::CrossImage);
    c.input_size = 32;
    c.r_pairs = 0.5;
    c.pretrain.epochs = 1;
    c.pretrain.batch_size = 4;
    c.moco.shuffle_groups = 2;
    c.finetune.epochs = 1;
    c.finetune.lr_grid = vec![0.1];
    let out = pretrain(&c, &root.path().join("run")).unwrap();
    assert_eq!(out.history.len(), 1);
    let ft = finetune(&out.checkpoint, None).unwrap();
    assert_eq!(ft.metrics.per_class_f1.keys().copied().collect::<Vec<_>>(), DatasetKind::Xbd.f1_classes());
}
