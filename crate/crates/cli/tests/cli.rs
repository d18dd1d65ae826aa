use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dasr_cli::report::read_csv_rows;
use dasr_cli::{evaluate_images, Mode, Models, RunConfig};
use dasr_core::difficulty::{train_dim, DifficultyBins, DimHyper, EpochLog};
use dasr_core::image::{read_png, write_png, Plane, RgbImage};
use dasr_core::resample::KernelSpec;
use dasr_core::srnet::{CbConfig, CbModel};
use dasr_core::synthetic::{flat_vs_noise, noise_plane, scene};
use dasr_core::tensor::AdamConfig;
use tempfile::TempDir;

fn dasr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dasr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run dasr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_gray(path: &Path, plane: &Plane) {
    write_png(path, &RgbImage::from_gray(plane)).unwrap();
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn base_config(root: &Path) -> RunConfig {
    RunConfig {
        hr_dir: Some(root.join("hr")),
        bench_dir: Some(root.join("bench")),
        output_dir: root.join("out"),
        ..RunConfig::default()
    }
}

fn run_ok(args: &[&str]) -> Output {
    let out = dasr(args);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn empty_hr_dir_exits_with_input_error() {
    let tmp = TempDir::new().unwrap();
    std::fs::create_dir(tmp.path().join("hr")).unwrap();
    let cfg = write_config(tmp.path(), &base_config(tmp.path()));
    let out = dasr(&["build-dataset", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no PNG"));
}

#[test]
fn bad_config_and_mode_are_input_errors() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("config.json");
    std::fs::write(&path, r#"{"scale": 2, "unknown_key": 1}"#).unwrap();
    assert_eq!(code(&dasr(&["evaluate", "--config", path.to_str().unwrap()])), 2);
    assert_eq!(code(&dasr(&["evaluate", "--scale", "5"])), 2);
    assert_eq!(code(&dasr(&["evaluate", "--mode", "fancy"])), 2);
}

#[test]
fn one_image_store_has_one_record_per_lr_cell() {
    let tmp = TempDir::new().unwrap();
    std::fs::create_dir(tmp.path().join("hr")).unwrap();
    write_gray(&tmp.path().join("hr/a.png"), &scene(130, 100, 2, 3));
    let cfg = base_config(tmp.path());
    let path = write_config(tmp.path(), &cfg);
    run_ok(&["build-dataset", "--config", path.to_str().unwrap()]);
    let patches = dasr_core::difficulty::load_store(&cfg.store_path()).unwrap();
    // LR is 65×50 → 2×2 cells.
    assert_eq!(patches.len(), 65usize.div_ceil(48) * 50usize.div_ceil(48));
    let hist: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/histogram_x2.json")).unwrap()).unwrap();
    assert_eq!(hist["patches"], 4);
    assert_eq!(hist["histogram"]["total"], 4);
    assert_eq!(hist["config"]["scale"], 2);
}

fn tiny_training_setup(root: &Path) -> RunConfig {
    std::fs::create_dir_all(root.join("hr")).unwrap();
    write_gray(&root.join("hr/flat.png"), &Plane::filled(96, 96, 120.0));
    write_gray(&root.join("hr/noise.png"), &noise_plane(96, 96, 5));
    write_gray(&root.join("hr/scene.png"), &scene(192, 192, 2, 8));
    RunConfig {
        dim_batch_size: 4,
        ..base_config(root)
    }
}

fn read_log(path: &Path) -> Vec<EpochLog> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn dim_training_log_follows_the_halving_schedule_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        dim_epochs: 201,
        learning_rate: 1e-4,
        halve_every: 100,
        ..tiny_training_setup(tmp.path())
    };
    let path = write_config(tmp.path(), &cfg);
    let p = path.to_str().unwrap();
    run_ok(&["build-dataset", "--config", p]);
    run_ok(&["train-dim", "--config", p]);
    let log = read_log(&tmp.path().join("out/dim_x2.log.jsonl"));
    assert_eq!(log.len(), 201);
    assert_eq!(log[0].lr, 1e-4);
    assert_eq!(log[100].epoch, 100);
    assert!((log[100].lr - 5e-5).abs() <= 1e-12);
    assert!((log[200].lr - 2.5e-5).abs() <= 1e-12);
    assert!(log.iter().all(|e| e.accuracy.is_some()));

    let first = std::fs::read(tmp.path().join("out/dim_x2.ckpt")).unwrap();
    run_ok(&["train-dim", "--config", p]);
    let again = read_log(&tmp.path().join("out/dim_x2.log.jsonl"));
    assert_eq!(again.last().unwrap().loss, log.last().unwrap().loss);
    assert_eq!(std::fs::read(tmp.path().join("out/dim_x2.ckpt")).unwrap(), first);
}

#[test]
fn train_cb_needs_a_matching_identifier() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        dim_epochs: 2,
        cb_epochs: 1,
        cb_batch_size: 4,
        cb_features: 8,
        cb_blocks: 1,
        cb_upsample_channels: 2,
        ..tiny_training_setup(tmp.path())
    };
    let path = write_config(tmp.path(), &cfg);
    let p = path.to_str().unwrap();
    run_ok(&["build-dataset", "--config", p]);
    assert_eq!(code(&dasr(&["train-cb", "--config", p])), 3);
    run_ok(&["train-dim", "--config", p]);

    // A ×2 identifier offered to a ×3 run.
    let mismatched = RunConfig {
        scale: 3,
        dim_checkpoint: Some(cfg.dim_path()),
        ..cfg.clone()
    };
    let mpath = tmp.path().join("mismatch.json");
    std::fs::write(&mpath, serde_json::to_string(&mismatched).unwrap()).unwrap();
    assert_eq!(code(&dasr(&["train-cb", "--config", mpath.to_str().unwrap()])), 4);

    let out = dasr(&["train-cb", "--config", p]);
    // The scene image supplies hard patches; the run either trains or, if the
    // untrained identifier routes nothing to CB, refuses with an input error.
    match code(&out) {
        0 => assert!(cfg.cb_path().exists()),
        2 => assert!(String::from_utf8_lossy(&out.stderr).contains("hard")),
        other => panic!("unexpected exit {other}: {}", String::from_utf8_lossy(&out.stderr)),
    }
}

/// A trained flat-vs-noise identifier and an untrained CB, saved as ×2 checkpoints.
fn fixture_models(cfg: &RunConfig) {
    let data = flat_vs_noise(200, 2, 1);
    let hyper = DimHyper {
        epochs: 12,
        batch_size: 16,
        adam: AdamConfig::default(),
        seed: 3,
        ..DimHyper::default()
    };
    let (dim, _) = train_dim(&data, 2, DifficultyBins::default(), &hyper).unwrap();
    std::fs::create_dir_all(&cfg.output_dir).unwrap();
    dim.to_checkpoint().unwrap().save(&cfg.dim_path()).unwrap();
    let config = CbConfig {
        features: 8,
        blocks: 1,
        upsample_channels: 2,
        ..CbConfig::new(2)
    };
    let cb = CbModel::init(config, KernelSpec::default(), 4).unwrap();
    cb.to_checkpoint().unwrap().save(&cfg.cb_path()).unwrap();
}

#[test]
fn super_resolve_writes_image_heatmap_and_routing() {
    let tmp = TempDir::new().unwrap();
    let cfg = base_config(tmp.path());
    let path = write_config(tmp.path(), &cfg);
    let p = path.to_str().unwrap();

    let small = tmp.path().join("small.png");
    write_gray(&small, &scene(48, 48, 1, 2));
    run_ok(&[
        "super-resolve",
        "--config",
        p,
        "--mode",
        "pb",
        "--input",
        small.to_str().unwrap(),
    ]);
    let sr = read_png(&tmp.path().join("out/small_x2_pb.png")).unwrap();
    assert_eq!((sr.width(), sr.height()), (96, 96));
    let routing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/small_x2_pb_routing.json")).unwrap())
            .unwrap();
    assert_eq!(routing["routing"]["cells"].as_array().unwrap().len(), 1);

    // Adaptive without checkpoints is a missing prerequisite.
    assert_eq!(
        code(&dasr(&[
            "super-resolve",
            "--config",
            p,
            "--input",
            small.to_str().unwrap()
        ])),
        3
    );

    fixture_models(&cfg);
    let flat = tmp.path().join("flat.png");
    write_gray(&flat, &Plane::filled(101, 70, 140.0));
    run_ok(&["super-resolve", "--config", p, "--input", flat.to_str().unwrap()]);
    let sr = read_png(&tmp.path().join("out/flat_x2_adaptive.png")).unwrap();
    assert_eq!((sr.width(), sr.height()), (202, 140));
    let heat = read_png(&tmp.path().join("out/flat_x2_adaptive_routing.png")).unwrap();
    assert_eq!((heat.width(), heat.height()), (202, 140));
    assert!(
        heat.data().iter().all(|&v| v == 255),
        "flat image must route every cell to PB"
    );

    let noise = tmp.path().join("noise.png");
    write_gray(&noise, &noise_plane(96, 48, 9));
    run_ok(&["super-resolve", "--config", p, "--input", noise.to_str().unwrap()]);
    let heat = read_png(&tmp.path().join("out/noise_x2_adaptive_routing.png")).unwrap();
    assert!(heat.data().iter().all(|&v| v == 0), "noise must route every cell to CB");

    // ×2 checkpoints on a ×3 request.
    assert_eq!(
        code(&dasr(&[
            "super-resolve",
            "--config",
            p,
            "--scale",
            "3",
            "--input",
            flat.to_str().unwrap()
        ])),
        3,
        "default ×3 checkpoint paths do not exist"
    );
    let pinned = RunConfig {
        scale: 3,
        dim_checkpoint: Some(cfg.dim_path()),
        cb_checkpoint: Some(cfg.cb_path()),
        ..cfg.clone()
    };
    let ppath = tmp.path().join("pinned.json");
    std::fs::write(&ppath, serde_json::to_string(&pinned).unwrap()).unwrap();
    assert_eq!(
        code(&dasr(&[
            "super-resolve",
            "--config",
            ppath.to_str().unwrap(),
            "--input",
            flat.to_str().unwrap()
        ])),
        4
    );
}

fn bench_dir(root: &Path) {
    let dir = root.join("bench");
    std::fs::create_dir_all(&dir).unwrap();
    write_gray(&dir.join("b_scene.png"), &scene(200, 150, 2, 11));
    write_gray(&dir.join("a_scene.png"), &scene(150, 210, 2, 12));
    write_gray(&dir.join("c_noise.png"), &noise_plane(120, 100, 13));
}

#[test]
fn evaluate_reports_agree_across_formats_and_runs() {
    let tmp = TempDir::new().unwrap();
    bench_dir(tmp.path());
    let cfg = base_config(tmp.path());
    let path = write_config(tmp.path(), &cfg);
    let p = path.to_str().unwrap();
    for mode in ["bicubic", "pb"] {
        run_ok(&["evaluate", "--config", p, "--mode", mode]);
        let json_path = tmp.path().join(format!("out/bench_x2_{mode}.json"));
        let report: dasr_cli::BenchmarkReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        let csv = read_csv_rows(&tmp.path().join(format!("out/bench_x2_{mode}.csv"))).unwrap();
        assert_eq!(csv.len(), report.rows.len() + 1);
        assert_eq!(&csv[..report.rows.len()], &report.rows[..]);
        assert_eq!(csv.last().unwrap(), &report.mean);
        let mean = dasr_cli::ReportRow::mean(&report.rows);
        assert!((mean.psnr_db - report.mean.psnr_db).abs() < 1e-9);
        assert!((mean.ssim - report.mean.ssim).abs() < 1e-9);
        assert_eq!(report.config, cfg);
        assert!(report.seconds_per_frame > 0.0);

        run_ok(&["evaluate", "--config", p, "--mode", mode]);
        let again: dasr_cli::BenchmarkReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(again.without_timing(), report.without_timing());

        if mode == "bicubic" {
            let files: Vec<&str> = report.rows.iter().map(|r| r.file.as_str()).collect();
            assert_eq!(files, ["a_scene.png", "b_scene.png", "c_noise.png"]);
            assert_eq!(report.shave, 2);
            assert!(report.split.is_none());
        } else {
            assert_eq!(report.shave, 0);
            // 200×150 → LR 100×75 → 2 full cells; 150×210 → 75×105 → 2; 120×100 → 60×50 → 1.
            assert_eq!(report.rows.len(), 5);
            let split = report.split.unwrap();
            assert_eq!(split.easy.count + split.hard.count, 5);
            assert!(report.rows.iter().all(|r| r.pb_patch_fraction == 1.0));
        }
    }
    assert_eq!(code(&dasr(&["evaluate", "--config", p, "--mode", "adaptive"])), 3);
}

#[test]
fn identical_pair_scores_the_cap() {
    let images = vec![("flat.png".to_string(), Plane::filled(96, 96, 77.0))];
    let report = evaluate_images("one", &images, &RunConfig::default(), Mode::Bicubic, Models::default()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.mean.psnr_db, 100.0);
    assert_eq!(report.mean.ssim, 1.0);
}

#[test]
fn bench_reports_positive_stable_timing_and_parameter_bytes() {
    let tmp = TempDir::new().unwrap();
    bench_dir(tmp.path());
    let cfg = base_config(tmp.path());
    fixture_models(&cfg);
    let path = write_config(tmp.path(), &cfg);
    let p = path.to_str().unwrap();
    let run = || {
        run_ok(&["bench", "--config", p]);
        let text = std::fs::read_to_string(tmp.path().join("out/bench_bench_x2.json")).unwrap();
        serde_json::from_str::<dasr_cli::TimingReport>(&text).unwrap()
    };
    let a = run();
    assert_eq!(a.frames, 3);
    assert!(a.median_seconds_per_frame > 0.0 && a.median_seconds_per_frame.is_finite());
    let bytes = |p: &Path| {
        let ck = dasr_core::checkpoint::Checkpoint::load(p).unwrap();
        ck.tensors.iter().map(|(_, t)| t.numel() * 4).sum::<usize>()
    };
    assert_eq!(a.parameter_bytes, bytes(&cfg.dim_path()) + bytes(&cfg.cb_path()));
    let b = run();
    let ratio = a.median_seconds_per_frame / b.median_seconds_per_frame;
    assert!(
        (1.0 / 1.5..=1.5).contains(&ratio),
        "medians {} vs {}",
        a.median_seconds_per_frame,
        b.median_seconds_per_frame
    );
}
