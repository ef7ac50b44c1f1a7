//! Scratch tuning harness. Not part of the suite; deleted before commit.

use rdl_core::archspec::{build_wrn, GroupingPolicy};
use rdl_core::data::{load, DatasetHandle, Normalizer, SyntheticSpec};
use rdl_core::distill::{train, DistillConfig, LrSchedule, SgdConfig, TrainConfig};
use rdl_core::model::Model;
use rdl_core::util::init_parallelism;
use std::time::Instant;

fn dataset(noise: f64, seed: u64) -> (rdl_core::data::Dataset<f32>, rdl_core::data::Dataset<f32>) {
    let handle = DatasetHandle::Synthetic(SyntheticSpec {
        classes: 8,
        train_per_class: 64,
        test_per_class: 8,
        side: 16,
        noise,
        seed,
    });
    let mut splits = load::<f32>(&handle).unwrap();
    let norm = Normalizer::fit(&splits.train);
    norm.apply(&mut splits.train.images);
    norm.apply(&mut splits.test.images);
    (splits.train, splits.test)
}

fn cfg(epochs: usize, lr: f64, seed: u64, distill: bool) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        sgd: SgdConfig { lr0: lr, momentum: 0.9, weight_decay: 4e-4 },
        schedule: LrSchedule::StepDecay { milestones: vec![epochs * 3 / 4], factor: 10.0 },
        seed,
        augment_pad: None,
        distill: if distill { Some(DistillConfig::default()) } else { None },
    }
}

#[test]
#[ignore]
fn bench_epoch() {
    init_parallelism();
    let (tr, te) = dataset(0.05, 40);
    let spec = build_wrn(10, 1, GroupingPolicy::Standard, true, 8, 0.0).unwrap();
    let mut m = Model::<f32>::init(spec, 1).unwrap();
    let t0 = Instant::now();
    let rows = train(&mut m, None, &tr, &te, &cfg(2, 0.1, 1, false)).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("wrn10x1 2 epochs: {dt:.2}s ({:.2}s/epoch)", dt / 2.0);
    for r in &rows {
        println!("  epoch {} lr {} loss {:.4} train {:.3} test {:.3}", r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc);
    }

    let spec28 = build_wrn(28, 1, GroupingPolicy::Standard, true, 8, 0.0).unwrap();
    let mut m28 = Model::<f32>::init(spec28, 1).unwrap();
    let t0 = Instant::now();
    let _ = train(&mut m28, None, &tr, &te, &cfg(1, 0.1, 1, false)).unwrap();
    println!("wrn28x1 1 epoch: {:.2}s", t0.elapsed().as_secs_f64());
}

fn run_hard(depth: usize, residual: bool, tr: &rdl_core::data::Dataset<f32>, te: &rdl_core::data::Dataset<f32>, epochs: usize, lr: f64, seed: u64) -> Vec<rdl_core::distill::EpochRow> {
    let spec = build_wrn(depth, 1, GroupingPolicy::Standard, residual, 8, 0.0).unwrap();
    let mut m = Model::<f32>::init(spec, seed).unwrap();
    train(&mut m, None, tr, te, &cfg(epochs, lr, seed, false)).unwrap()
}

#[test]
#[ignore]
fn probe_directional() {
    init_parallelism();
    let (tr, te) = dataset(1.2, 40);

    for (name, depth, res, ep) in [("R10", 10usize, true, 40usize), ("NR10", 10, false, 40), ("R28", 28, true, 12), ("NR28", 28, false, 12)] {
        let t0 = Instant::now();
        let rows = run_hard(depth, res, &tr, &te, ep, 0.1, 1);
        let best_train = rows.iter().map(|r| r.train_acc).fold(0.0f64, f64::max);
        let last = rows.last().unwrap();
        println!("{name}: best_train {best_train:.3} final train {:.3} test {:.3} ({:.0}s)", last.train_acc, last.test_acc, t0.elapsed().as_secs_f64());
    }
}

#[test]
#[ignore]
fn probe_distill() {
    init_parallelism();
    let (tr, te) = dataset(1.2, 40);
    // teacher
    let spec = build_wrn(10, 1, GroupingPolicy::Standard, true, 8, 0.0).unwrap();
    let mut teacher = Model::<f32>::init(spec, 7).unwrap();
    let rows = train(&mut teacher, None, &tr, &te, &cfg(40, 0.1, 7, false)).unwrap();
    println!("teacher: train {:.3} test {:.3}", rows.last().unwrap().train_acc, rows.last().unwrap().test_acc);
    for seed in [1u64, 2, 3] {
        let spec = build_wrn(10, 1, GroupingPolicy::Standard, false, 8, 0.0).unwrap();
        let mut hard = Model::<f32>::init(spec.clone(), seed).unwrap();
        let hr = train(&mut hard, None, &tr, &te, &cfg(25, 0.1, seed, false)).unwrap();
        let mut soft = Model::<f32>::init(spec, seed).unwrap();
        let sr = train(&mut soft, Some(&mut teacher), &tr, &te, &cfg(25, 0.1, seed, true)).unwrap();
        println!("seed {seed}: hard test {:.3} | distilled test {:.3}", hr.last().unwrap().test_acc, sr.last().unwrap().test_acc);
    }
}
