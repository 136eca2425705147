mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::random_image;
use licattack::harness::QualityReport;
use licattack::imaging::{save_png, ImageTensor};

fn licattack(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_licattack"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

#[test]
fn train_attack_evaluate_figures() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    std::fs::create_dir(root.join("images")).unwrap();
    for k in 0..2 {
        let img = ImageTensor::new(random_image(k, 40, 48, 3)).unwrap().quantize_8bit();
        save_png(&img, root.join(format!("images/img{k}.png"))).unwrap();
    }

    let out = licattack(
        &[
            "train", "--lambda", "0.0483", "--steps", "3", "--data", "images", "--out", "toy.ckpt", "--channels", "6",
            "--latent-channels", "4", "--depth", "2", "--layers", "3", "--patch-size", "32", "--batch-size", "2",
        ],
        root,
    );
    assert!(out.status.success());
    assert!(root.join("toy.ckpt").is_file() && root.join("toy.train.json").is_file());

    let out = licattack(
        &[
            "attack", "--ckpt", "toy.ckpt", "--image", "images/img0.png", "--eps", "8", "--steps", "4", "--out", "single",
        ],
        root,
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("degradation"), "{stdout}");
    for f in ["attack.json", "adversarial.png", "delta.png"] {
        assert!(root.join("single").join(f).is_file(), "{f}");
    }

    std::fs::write(
        root.join("grid.toml"),
        "dataset = \"images\"\nepsilons = [8.0]\nic_variants = [true, false]\noutput = \"grid\"\n\n\
         [[codecs]]\ncheckpoint = \"toy.ckpt\"\nlabel = \"toy\"\n\n[attack]\nsteps = 4\n",
    )
    .unwrap();
    assert!(licattack(&["compare-ic", "--config", "grid.toml"], root).status.success());
    let report = QualityReport::load(root.join("grid/report.json")).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(root.join("grid/ic_comparison.md").is_file());

    assert!(licattack(&["figures", "--report", "grid/report.json"], root).status.success());
    assert_eq!(std::fs::read_dir(root.join("grid/figures")).unwrap().count(), 2);
}

#[test]
fn errors_exit_non_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = licattack(&["attack", "--ckpt", "nope.ckpt", "--image", "nope.png", "--eps", "8"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    assert!(!licattack(&["evaluate", "--config", "missing.toml"], tmp.path()).status.success());
}
