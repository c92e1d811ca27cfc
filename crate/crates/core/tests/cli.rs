use std::path::Path;
use std::process::{Command, Output};

fn uvtex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvtex"))
        .args(args)
        .env_remove("UVTEX_FIXTURE_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn uvtex")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "resolution = 32
batch_size = 2
sampler_width = 8
refiner_width = 8
disc_width = 8
iterations = 3
checkpoint_every = 2
";

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let fx = root.join("fx");
    std::fs::write(
        root.join("spec.toml"),
        "count = 3\nresolution = 32\ndensepose = true\n",
    )
    .unwrap();
    std::fs::write(root.join("train.cfg"), SMALL).unwrap();
    let fixture_root = format!("fixture_root={}", s(&fx));
    let cfg = root.join("train.cfg");

    ok(uvtex(&[
        "prepare-data",
        "--spec",
        s(&root.join("spec.toml")),
        "--out",
        s(&fx),
    ]));
    for sub in ["textures", "masks", "normals", "iuv", "images", "densepose"] {
        assert!(
            fx.join(sub).join("sample_0000.png").exists(),
            "{sub} missing"
        );
    }

    let sampler_dir = root.join("sampler");
    ok(uvtex(&[
        "train-sampler",
        "--config",
        s(&cfg),
        "--set",
        &fixture_root,
        "--out",
        s(&sampler_dir),
    ]));
    let sampler = sampler_dir.join("latest.ckpt");
    assert!(sampler.exists());
    assert!(sampler_dir.join("checkpoints/iter_0000002.ckpt").exists());
    let log = std::fs::read_to_string(sampler_dir.join("loss.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 3);

    // resuming a finished run up to a larger count appends to the log
    ok(uvtex(&[
        "train-sampler",
        "--config",
        s(&cfg),
        "--set",
        &fixture_root,
        "--set",
        "iterations=4",
        "--out",
        s(&sampler_dir),
        "--resume",
        s(&sampler),
    ]));
    let log = std::fs::read_to_string(sampler_dir.join("loss.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let refiner_dir = root.join("refiner");
    ok(uvtex(&[
        "train-refiner",
        "--config",
        s(&cfg),
        "--set",
        &fixture_root,
        "--sampler",
        s(&sampler),
        "--out",
        s(&refiner_dir),
    ]));
    let refiner = refiner_dir.join("latest.ckpt");
    assert!(refiner.exists());

    let out = root.join("out");
    ok(uvtex(&[
        "infer",
        "--sampler",
        s(&sampler),
        "--refiner",
        s(&refiner),
        "--texture",
        s(&fx.join("textures/sample_0000.png")),
        "--mask",
        s(&fx.join("masks/sample_0000.png")),
        "--out",
        s(&out),
    ]));
    for name in [
        "partial",
        "partial_mask",
        "input",
        "visibility",
        "sample",
        "occlusion",
        "refine",
        "blend",
        "final",
    ] {
        assert!(
            out.join(format!("{name}.png")).exists(),
            "{name}.png missing"
        );
    }

    let from_image = root.join("out_image");
    ok(uvtex(&[
        "infer",
        "--sampler",
        s(&sampler),
        "--image",
        s(&fx.join("images/sample_0001.png")),
        "--iuv",
        s(&fx.join("iuv/sample_0001.png")),
        "--out",
        s(&from_image),
    ]));
    assert!(from_image.join("final.png").exists());

    // evaluate the ground truth against itself
    let report = root.join("report");
    ok(uvtex(&[
        "evaluate",
        "--pred",
        s(&fx.join("textures")),
        "--gt",
        s(&fx.join("textures")),
        "--strict",
        "--out",
        s(&report),
    ]));
    let csv = std::fs::read_to_string(report.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("id,psnr_db,ssim,perceptual"));
    assert!(csv.lines().any(|l| l.starts_with("mean,99")), "{csv}");
}

#[test]
fn diverging_training_exits_with_status_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let fx = root.join("fx");
    std::fs::write(root.join("spec.toml"), "count = 2\nresolution = 32\n").unwrap();
    ok(uvtex(&[
        "prepare-data",
        "--spec",
        s(&root.join("spec.toml")),
        "--out",
        s(&fx),
    ]));
    std::fs::write(root.join("train.cfg"), SMALL).unwrap();
    let out = uvtex(&[
        "train-sampler",
        "--config",
        s(&root.join("train.cfg")),
        "--set",
        &format!("fixture_root={}", s(&fx)),
        "--set",
        "lr=1e30",
        "--set",
        "iterations=20",
        "--out",
        s(&root.join("run")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}

#[test]
fn image_without_iuv_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = uvtex(&[
        "infer",
        "--sampler",
        "missing.ckpt",
        "--image",
        "person.png",
        "--out",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--texture"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = uvtex(&[
        "train-sampler",
        "--set",
        "no_such_key=1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
