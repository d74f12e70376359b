use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bng_bench::config::parse_config;
use bng_bench::experiment::{run_mlp, MnistData};
use bng_bench::metrics::{strip_wall_seconds, CSV_HEADER};
use bng_core::data::{
    encode_idx_images, encode_idx_labels, MNIST_TEST_IMAGES, MNIST_TEST_LABELS, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS,
};
use bng_core::rng::SplitMix64;

fn bng(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bng")).args(args).output().expect("spawn bng")
}

/// MNIST-shaped IDX files with random pixels, where the label shifts one image stripe brighter.
fn write_fixture(dir: &Path, train: usize, test: usize) {
    let mut rng = SplitMix64::new(11);
    let mut make = |n: usize| {
        let labels: Vec<u8> = (0..n).map(|_| rng.below(10) as u8).collect();
        let mut pixels = Vec::with_capacity(n * 784);
        for &y in &labels {
            for p in 0..784 {
                let base = rng.below(64) as u8;
                pixels.push(if p / 78 == y as usize { base + 180 } else { base });
            }
        }
        (encode_idx_images(28, 28, &pixels).unwrap(), encode_idx_labels(&labels))
    };
    let (ti, tl) = make(train);
    let (vi, vl) = make(test);
    fs::write(dir.join(MNIST_TRAIN_IMAGES), ti).unwrap();
    fs::write(dir.join(MNIST_TRAIN_LABELS), tl).unwrap();
    fs::write(dir.join(MNIST_TEST_IMAGES), vi).unwrap();
    fs::write(dir.join(MNIST_TEST_LABELS), vl).unwrap();
}

#[test]
fn run_writes_metrics_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("mnist");
    fs::create_dir(&data).unwrap();
    write_fixture(&data, 300, 100);
    let cfg = tmp.path().join("small.cfg");
    fs::write(
        &cfg,
        format!("depth=3 optimizer=adam transform=ng epochs=3 batch_size=32\ndata_dir={}\n", data.display()),
    )
    .unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = tmp.path().join(run);
        let o = bng(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8(o.stdout).unwrap();
        assert_eq!(stdout.lines().count(), 1);
        assert!(stdout.contains("arm=adam-ng"));
        csvs.push(fs::read_to_string(out_dir.join("small.csv")).unwrap());
    }
    assert_eq!(csvs[0].lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csvs[0].lines().count(), 4);
    assert_eq!(strip_wall_seconds(&csvs[0]), strip_wall_seconds(&csvs[1]));
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, "task=convex-logistic steps=400 n=50 dim=4 blocks=2,2\n").unwrap();
    let read = |seed: &str| {
        let dir = tmp.path().join(seed);
        let o = bng(&["--seed", seed, "--out", dir.to_str().unwrap(), "run", "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success());
        strip_wall_seconds(&fs::read_to_string(dir.join("c.csv")).unwrap())
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn bad_config_exits_with_one_and_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "depth=6\nlearning_rate=0.1\n").unwrap();
    let o = bng(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("learning_rate"), "{err}");

    let o = bng(&["run", "--config", tmp.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.cfg"));
}

#[test]
fn verify_bounds_reports_every_run() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bng(&[
        "verify-bounds",
        "--task",
        "convex-lsq",
        "--seeds",
        "3",
        "--steps",
        "100,1000",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("convex-lsq_bounds.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("seed,T,measured_gap"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn convex_run_attaches_bound_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("lr.cfg");
    fs::write(&cfg, "task=convex-logistic steps=10000\n").unwrap();
    let o = bng(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let bounds = fs::read_to_string(tmp.path().join("lr_bounds.csv")).unwrap();
    let row: Vec<&str> = bounds.lines().nth(1).unwrap().split(',').collect();
    let gap: f64 = row[2].parse().unwrap();
    let form1: f64 = row[4].parse().unwrap();
    let form2: f64 = row[5].parse().unwrap();
    assert!(gap <= form1 && form1 <= form2);
    // One row per 200-step epoch.
    let metrics = fs::read_to_string(tmp.path().join("lr.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 50);
}

#[test]
fn suite_runs_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("mnist");
    fs::create_dir(&data).unwrap();
    write_fixture(&data, 200, 50);
    let grid = tmp.path().join("grid.cfg");
    fs::write(
        &grid,
        format!(
            "depths=2,3 optimizers=sgdm,adam transforms=raw,ng seeds=1 epochs=1 batch_size=50 parallelism=2\ndata_dir={}\n",
            data.display()
        ),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = bng(&["suite", "--grid", grid.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    // 8 cells plus 8 per-arm means.
    assert_eq!(summary.lines().count(), 1 + 8 + 8);
    assert!(out.join("depth3_adam-ng_seed1.csv").exists());
}

#[test]
fn steps_per_epoch_is_ceil_of_n_over_batch() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path(), 250, 20);
    let data = MnistData::load(tmp.path()).unwrap();
    // 250 examples in batches of 100: three Adam steps per epoch, so t = 3 after one epoch.
    let cfg = parse_config("depth=2 optimizer=adam epochs=1 batch_size=100").unwrap();
    let mut model = bng_core::mlp::MlpModel::new(&cfg.widths, cfg.seed).unwrap();
    let rule = bng_bench::experiment::direction_rule(&cfg).unwrap();
    let mut step = bng_bench::experiment::step_rule(&cfg, model.layout().clone()).unwrap();
    let plan = bng_core::data::BatchPlan::new(250, 100, cfg.seed, 0).unwrap();
    let mut steps = 0;
    for b in bng_core::data::batch_iter(&data.train, &plan).unwrap() {
        bng_core::optim::bng_iterate(&mut model, &b, &rule, &mut step).unwrap();
        steps += 1;
    }
    assert_eq!(steps, 3);
    match step {
        bng_core::optim::StepRule::Adam(s) => assert_eq!(s.t(), 3),
        _ => unreachable!(),
    }
}

#[test]
fn deep_sigmoid_gradients_vanish_toward_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path(), 500, 50);
    let data = MnistData::load(tmp.path()).unwrap();
    let cfg = parse_config("depth=18 optimizer=adam transform=raw epochs=1").unwrap();
    let t = run_mlp(&cfg, &data).unwrap();
    let r = &t.rows[0];
    assert!(r.gnorm_min * 10.0 <= r.gnorm_max, "min {} max {}", r.gnorm_min, r.gnorm_max);
}
