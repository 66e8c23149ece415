//! End-to-end tests of the `detone` binary: every subcommand exercised
//! through the real process boundary, with exit codes checked.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use detone::core::halftone::{error_diffuse_fs, GrayImage};
use detone::imageio::{read_image, write_image, Image};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detone"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_test_gray(path: &Path, h: usize, w: usize, seed: u64) {
    let img = GrayImage::from_fn(h, w, |y, x| {
        let v = 0.5
            + 0.4
                * ((y as f32 * 0.13 + seed as f32).sin()
                    * (x as f32 * 0.17 + seed as f32 * 0.5).cos());
        v.clamp(0.0, 1.0)
    });
    write_image(path, &img).unwrap();
}

fn make_corpus(dir: &Path, count: usize, h: usize, w: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        write_test_gray(&dir.join(format!("img{i:02}.pgm")), h, w, i as u64);
    }
}

/// Tiny architecture + schedule so CLI train runs finish in seconds.
fn write_micro_config(path: &Path) {
    fs::write(
        path,
        "p=2\nq=2\nr=2\nm=4\nbatch=2\nepochs=1\niters_per_epoch=10\npretrain_iters=5\ncheckpoint_every=1\nlr=0.001\n",
    )
    .unwrap();
}

#[test]
fn halftone_subcommand_matches_library_and_is_binary() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    let output = dir.path().join("out.pgm");
    write_test_gray(&input, 40, 40, 3);

    let out = run(&[
        "halftone",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let gray = match read_image(&input).unwrap() {
        Image::Gray(g) => g,
        _ => unreachable!(),
    };
    let expect = error_diffuse_fs(&gray).unwrap();
    match read_image(&output).unwrap() {
        Image::Gray(got) => {
            assert_eq!(got.data(), expect.as_gray().data());
            assert!(got.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
        _ => panic!("halftone output must be gray"),
    }
}

#[test]
fn halftone_of_all_white_stays_white() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("white.pgm");
    let output = dir.path().join("white_ht.pgm");
    write_image(&input, &GrayImage::from_fn(16, 16, |_, _| 1.0)).unwrap();
    let out = run(&[
        "halftone",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    match read_image(&output).unwrap() {
        Image::Gray(g) => assert!(g.data().iter().all(|&v| v == 1.0)),
        _ => panic!(),
    }
}

#[test]
fn train_profiles_print_their_configs() {
    let out = run(&[
        "train", "--corpus", "/nonexistent", "--out", "/nonexistent", "--profile", "paper",
        "--print-config",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for expected in [
        "lr=0.00001",
        "batch=64",
        "epochs=200",
        "iters_per_epoch=1000",
        "p=16",
        "q=6",
        "r=16",
        "m=64",
        "kernel=5",
    ] {
        assert!(text.contains(expected), "missing {expected} in:\n{text}");
    }
    let out = run(&[
        "train", "--corpus", "/nonexistent", "--out", "/nonexistent", "--print-config",
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("lr=0.001") && text.contains("p=3") && text.contains("m=16"));
}

#[test]
fn missing_corpus_exits_with_usage_error() {
    let out = run(&["train", "--corpus", "/no/such/dir", "--out", "/tmp/never.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());

    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_corruption_fails() {
    let out = run(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("all gradient checks passed"));

    let out = run(&["gradcheck", "--corrupt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

/// The full operator loop: train on a micro config, infer with dumps,
/// evaluate, resume.
#[test]
fn train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    make_corpus(&corpus, 3, 48, 48);
    let config = dir.path().join("micro.conf");
    write_micro_config(&config);
    let ckpt = dir.path().join("model.ckpt");
    let log = dir.path().join("loss.csv");

    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "train: {}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());

    // Loss CSV: header + 5 pretrain + 10 end-to-end rows.
    let csv = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,rs_loss,ismp_loss,total,wallclock_ms");
    assert_eq!(lines.len(), 16);

    // Halftone one corpus image, reconstruct it, dump the side outputs.
    let ht = dir.path().join("ht.pgm");
    let out = run(&[
        "halftone",
        corpus.join("img00.pgm").to_str().unwrap(),
        ht.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let recon = dir.path().join("recon.pgm");
    let smap = dir.path().join("smap.pgm");
    let initial = dir.path().join("initial.pgm");
    let out = run(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        ht.to_str().unwrap(),
        recon.to_str().unwrap(),
        "--dump-structure-map",
        smap.to_str().unwrap(),
        "--dump-initial",
        initial.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "infer: {}", String::from_utf8_lossy(&out.stderr));
    for path in [&recon, &smap, &initial] {
        match read_image(path).unwrap() {
            Image::Gray(g) => {
                assert_eq!((g.height(), g.width()), (48, 48), "dims of {path:?}");
                assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            _ => panic!("expected gray output"),
        }
    }

    // Evaluate on a small test directory; CSV must be header + rows + AVG.
    let testdir = dir.path().join("test");
    make_corpus(&testdir, 2, 48, 48);
    let report = dir.path().join("report.csv");
    let out = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--test",
        testdir.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "eval: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image,psnr_db,ssim");
    assert_eq!(lines.len(), 1 + 2 + 1, "header + N rows + AVG:\n{csv}");
    assert!(lines.last().unwrap().starts_with("AVG,"));

    // Resume accepts the finished checkpoint and exits cleanly.
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--resume",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "resume: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn infer_rejects_mismatched_checkpoint_file() {
    let dir = tempfile::tempdir().unwrap();
    let fake = dir.path().join("fake.ckpt");
    fs::write(&fake, b"not a checkpoint at all").unwrap();
    let input = dir.path().join("in.pgm");
    write_test_gray(&input, 32, 32, 1);
    let out = run(&[
        "infer",
        "--ckpt",
        fake.to_str().unwrap(),
        input.to_str().unwrap(),
        dir.path().join("out.pgm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not loadable"));
}

/// Fixed seed: repeated runs and different thread counts all produce
/// bit-identical checkpoints (parallel reductions run in a fixed order).
#[test]
fn training_is_bit_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    make_corpus(&corpus, 3, 48, 48);
    let config = dir.path().join("micro.conf");
    write_micro_config(&config);
    let mut bytes: Vec<Vec<u8>> = Vec::new();
    for (name, threads) in [("a.ckpt", "1"), ("b.ckpt", "1"), ("c.ckpt", "2")] {
        let ckpt = dir.path().join(name);
        let out = run(&[
            "--threads",
            threads,
            "train",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(fs::read(&ckpt).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "identical single-threaded runs differ");
    assert_eq!(bytes[0], bytes[2], "thread count changed the result");
}

/// HTF_THREADS is honored as the --threads fallback.
#[test]
fn htf_threads_env_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pgm");
    let output = dir.path().join("out.pgm");
    write_test_gray(&input, 36, 36, 9);
    let out = bin()
        .env("HTF_THREADS", "1")
        .args(["halftone", input.to_str().unwrap(), output.to_str().unwrap()])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    assert!(output.exists());
}

#[test]
fn ablate_micro_budget_emits_both_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    make_corpus(&corpus, 3, 48, 48);
    let testdir = dir.path().join("test");
    make_corpus(&testdir, 2, 48, 48);
    let report = dir.path().join("ablation.csv");
    let out = run(&[
        "ablate",
        "--corpus",
        corpus.to_str().unwrap(),
        "--test",
        testdir.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--epochs",
        "1",
        "--iters",
        "5",
        "--pretrain-iters",
        "2",
        "--batch",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("proposed(dB)") && table.contains("baseline(dB)"));
    let csv = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "image,proposed_psnr_db,proposed_ssim,baseline_psnr_db,baseline_ssim"
    );
    assert_eq!(lines.len(), 1 + 2 + 1);
}

/// Paths used by several tests live under target/; keep them unique.
#[allow(dead_code)]
fn unique_tmp(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{name}-{}", std::process::id()))
}
