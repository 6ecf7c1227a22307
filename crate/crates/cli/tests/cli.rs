use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use callipaint::corpus::Vocabularies;
use callipaint::denoiser::{init_params, save_checkpoint, Checkpoint, DenoiserConfig};
use callipaint::diffusion::ScheduleId;
use callipaint::eval::{Classifier, EvalReport};
use callipaint::image::{GlyphImage, Mask};

fn callipaint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_callipaint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = callipaint(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let vocab = Vocabularies::new(vec!["永".into()], vec!["regular".into()], vec!["s1".into()]).unwrap();
    let mut config = DenoiserConfig::for_vocab(&vocab);
    config.resolution = (8, 8);
    config.base_channels = 4;
    config.channel_mults = vec![1, 2];
    config.time_embed_dim = 8;
    config.groups = 2;
    config.timesteps = 20;
    let mut params = init_params(&config, 1).unwrap();
    for v in params.store_mut().by_name_mut("out.conv.weight").unwrap().data.iter_mut() {
        *v = 0.05;
    }
    let ckpt = Checkpoint::fresh(
        params,
        vocab,
        ScheduleId {
            steps: 20,
            ..ScheduleId::DEFAULT
        },
    )
    .unwrap();
    let path = dir.join("tiny.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    path
}

#[test]
fn inpaint_with_zero_mask_copies_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let image = GlyphImage::from_bytes(8, 8, &(0..64).map(|i| (i * 29 % 256) as u8).collect::<Vec<_>>()).unwrap();
    let g = dir.path().join("g.png");
    let zero = dir.path().join("zero.png");
    let out = dir.path().join("out.png");
    image.save_png(&g).unwrap();
    Mask::empty(8, 8).save_png(&zero).unwrap();
    ok(&[
        "inpaint",
        "--checkpoint",
        p(&ckpt),
        "--image",
        p(&g),
        "--mask",
        p(&zero),
        "--character",
        "永",
        "--script",
        "regular",
        "--style",
        "s1",
        "--jump-len",
        "5",
        "--n-resample",
        "2",
        "--seed",
        "7",
        "--out",
        p(&out),
    ]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&g).unwrap());
}

#[test]
fn sample_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&[
            "sample",
            "--checkpoint",
            p(&ckpt),
            "--character",
            "永",
            "--script",
            "regular",
            "--style",
            "s1",
            "--seed",
            seed,
            "--out",
            p(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    let a = run("a.png", "7");
    assert_eq!(a, run("b.png", "7"));
    assert_ne!(a, run("c.png", "8"));
}

#[test]
fn sample_trace_is_exported() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let trace = dir.path().join("trace");
    ok(&[
        "sample",
        "--checkpoint",
        p(&ckpt),
        "--character",
        "永",
        "--script",
        "regular",
        "--style",
        "s1",
        "--out",
        p(&dir.path().join("s.png")),
        "--trace-dir",
        p(&trace),
        "--trace-every",
        "5",
    ]);
    assert!(trace.join("plan.json").exists());
    assert!(std::fs::read_dir(&trace).unwrap().count() > 2);
}

#[test]
fn exit_codes_follow_the_contract() {
    assert_eq!(callipaint(&["--help"]).status.code(), Some(0));
    assert_eq!(callipaint(&["sample", "--help"]).status.code(), Some(0));
    assert_eq!(callipaint(&["paint-everything"]).status.code(), Some(1));
    assert_eq!(callipaint(&["sample", "--bogus"]).status.code(), Some(1));
    let out = callipaint(&[
        "sample",
        "--checkpoint",
        "/nonexistent.ckpt",
        "--character",
        "永",
        "--script",
        "regular",
        "--style",
        "s1",
        "--out",
        "x.png",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let out = callipaint(&[
        "sample",
        "--checkpoint",
        p(&ckpt),
        "--character",
        "永",
        "--script",
        "kaishu",
        "--style",
        "s1",
        "--out",
        p(&dir.path().join("x.png")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compose_pastes_the_masked_patch() {
    let dir = tempfile::tempdir().unwrap();
    let base = GlyphImage::from_bytes(4, 4, &[200; 16]).unwrap();
    let patch = GlyphImage::from_bytes(4, 4, &[10; 16]).unwrap();
    let mask = Mask::from_fn(4, 4, |y, _| y < 2);
    let paths: Vec<PathBuf> = ["base.png", "patch.png", "mask.png", "out.png"]
        .iter()
        .map(|f| dir.path().join(f))
        .collect();
    base.save_png(&paths[0]).unwrap();
    patch.save_png(&paths[1]).unwrap();
    mask.save_png(&paths[2]).unwrap();
    ok(&[
        "compose",
        "--base",
        p(&paths[0]),
        "--patch",
        p(&paths[1]),
        "--mask",
        p(&paths[2]),
        "--out",
        p(&paths[3]),
    ]);
    let out = GlyphImage::load_png(&paths[3]).unwrap().to_bytes();
    assert_eq!(out, [[10u8; 8], [200u8; 8]].concat());
}

/// Renders a two-font corpus at 16×16 and runs the training and evaluation
/// subcommands over it.
#[test]
fn eval_without_masks_matches_classifier_val_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "groups": [{
            "characters": ["永", "天", "山", "水"],
            "fonts": [
                {"font": "builtin:noto-serif-sc", "script": "regular", "style": "serif"},
                {"font": "builtin:noto-sans-sc", "script": "regular", "style": "sans"},
                {"font": "builtin:zhi-mang-xing", "script": "semi-cursive", "style": "zhi-mang-xing"},
            ],
        }],
        "resolution": [16, 16],
        "val_fraction": 0.25,
        "seed": 0,
    });
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let corpus = dir.path().join("corpus");
    let ckpt = dir.path().join("d.ckpt");
    let clf = dir.path().join("c.bin");
    let report = dir.path().join("eval.json");
    let table = dir.path().join("eval.txt");
    ok(&["render-corpus", "--spec", p(&spec_path), "--out", p(&corpus)]);
    ok(&[
        "train",
        "--corpus",
        p(&corpus),
        "--out",
        p(&ckpt),
        "--steps",
        "2",
        "--batch",
        "2",
        "--timesteps",
        "10",
        "--log-every",
        "1",
    ]);
    let resumed = dir.path().join("d2.ckpt");
    ok(&[
        "train",
        "--corpus",
        p(&corpus),
        "--resume",
        p(&ckpt),
        "--out",
        p(&resumed),
        "--steps",
        "1",
        "--batch",
        "2",
    ]);
    ok(&["train-classifier", "--corpus", p(&corpus), "--out", p(&clf), "--epochs", "20"]);
    let printed = ok(&[
        "eval",
        "--checkpoint",
        p(&resumed),
        "--classifier",
        p(&clf),
        "--corpus",
        p(&corpus),
        "--coverage",
        "0",
        "--json",
        p(&report),
        "--text",
        p(&table),
    ]);
    let report: EvalReport = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let val = Classifier::load(&clf).unwrap().meta().val_accuracy.unwrap();
    assert_eq!(report.total.script_accuracy, val.script);
    assert_eq!(report.total.character_accuracy, val.character);
    assert_eq!(std::fs::read_to_string(&table).unwrap(), printed);

    let printed = ok(&[
        "compare",
        "--checkpoint",
        p(&resumed),
        "--classifier",
        p(&clf),
        "--corpus",
        p(&corpus),
        "--n",
        "2",
        "--jump-len",
        "5",
        "--n-resample",
        "2",
        "--seed",
        "3",
    ]);
    assert!(printed.contains("acc_inpaint") && printed.contains("delta"));
}

#[test]
fn survey_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (real, generated) = (dir.path().join("real"), dir.path().join("gen"));
    for (pool, shade) in [(&real, 0u8), (&generated, 100)] {
        std::fs::create_dir(pool).unwrap();
        for i in 0..4u8 {
            GlyphImage::from_bytes(4, 4, &[shade + i; 16])
                .unwrap()
                .save_png(pool.join(format!("g{i}.png")))
                .unwrap();
        }
    }
    let bundle = dir.path().join("bundle");
    let key = dir.path().join("key.json");
    ok(&[
        "survey-make",
        "--real",
        p(&real),
        "--generated",
        p(&generated),
        "--n-per-type",
        "2",
        "--k",
        "2",
        "--out",
        p(&bundle),
        "--key",
        p(&key),
        "--seed",
        "5",
    ]);
    assert!(bundle.join("questions.json").exists());
    assert!(bundle.join("q001").join("A.png").exists());
    let responses = dir.path().join("responses.csv");
    std::fs::write(&responses, "question_id,choice\nq001,A\nq002,B\nq003,0\nq004,1\n").unwrap();
    let table = ok(&["survey-score", "--key", p(&key), "--responses", p(&responses)]);
    assert!(table.contains("p"), "{table}");
    let out = callipaint(&[
        "survey-score",
        "--key",
        p(&key),
        "--responses",
        p(&dir.path().join("missing.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
