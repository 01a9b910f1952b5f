use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsat_core::degradation::{synthetic_pool, ImageBuffer};

const TINY: &str = "\
[data]
synthetic_images = 4
synthetic_size = 48
lr_patch = 8

[train]
total_epochs = 4
halving_period_epochs = 2
batch_size = 2
checkpoint_every = 0
";

fn dsat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsat"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "{}", stderr(o));
}

/// Exit code and the single `error[kind]: ...` line.
fn assert_fails(o: &Output, code: i32, kind: &str) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(o));
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error[{kind}]: ")), "{err}");
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Saves `count` synthetic PNGs and a manifest listing them by relative path.
fn image_set(dir: &Path, count: usize, size: usize) -> PathBuf {
    let mut listing = String::new();
    for (i, img) in synthetic_pool(42, count, size, size).iter().enumerate() {
        let name = format!("img{i}.png");
        img.save_png(&dir.join(&name)).unwrap();
        listing.push_str(&name);
        listing.push('\n');
    }
    write(dir, "images.txt", &listing)
}

#[test]
fn help_text_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let bless = std::env::var_os("DSAT_BLESS").is_some();
    for cmd in ["", "degrade", "train-encoder", "train", "eval", "embed"] {
        let mut args = vec![];
        if !cmd.is_empty() {
            args.push(cmd);
        }
        args.push("--help");
        let out = Command::new(env!("CARGO_BIN_EXE_dsat")).args(&args).output().unwrap();
        assert_ok(&out);
        let text = String::from_utf8(out.stdout).unwrap();
        let file = golden.join(format!("{}.txt", if cmd.is_empty() { "dsat" } else { cmd }));
        if bless {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&file, &text).unwrap();
        }
        let want = std::fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing {}", file.display()));
        assert_eq!(text, want, "{cmd} --help changed");
    }
}

#[test]
fn unknown_flags_are_rejected_as_config_errors() {
    assert_fails(&dsat(&["degrade", "--bogus"]), 2, "config");
    assert_fails(&dsat(&["frobnicate"]), 2, "config");
    assert_fails(&dsat(&["train"]), 2, "config");
}

#[test]
fn degrade_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("hr.png");
    synthetic_pool(1, 1, 64, 64)[0].save_png(&input).unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert_ok(&dsat(&[
            "degrade", "--input", p(&input), "--out", p(&out), "--scale", "2", "--sigma", "1.2", "--noise", "5",
            "--seed", seed,
        ]));
        std::fs::read(out).unwrap()
    };
    let a = run("a.png", "7");
    assert_eq!(a, run("b.png", "7"));
    assert_ne!(a, run("c.png", "8"));
    let lr = ImageBuffer::load_png(&dir.path().join("a.png")).unwrap();
    assert_eq!((lr.height(), lr.width()), (32, 32));

    let aniso = dir.path().join("d.png");
    assert_ok(&dsat(&[
        "degrade", "--input", p(&input), "--out", p(&aniso), "--scale", "4", "--aniso", "2.0,0.5,0.3",
    ]));
}

#[test]
fn degrade_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("hr.png");
    synthetic_pool(1, 1, 64, 64)[0].save_png(&input).unwrap();
    let out = p(&dir.path().join("o.png")).to_string();
    let missing = p(&dir.path().join("none.png")).to_string();
    assert_fails(&dsat(&["degrade", "--input", &missing, "--out", &out, "--scale", "2", "--sigma", "1"]), 3, "data");
    assert_fails(&dsat(&["degrade", "--input", p(&input), "--out", &out, "--scale", "2", "--sigma", "-1"]), 2, "config");
    assert_fails(&dsat(&["degrade", "--input", p(&input), "--out", &out, "--scale", "2", "--aniso", "1,2"]), 2, "config");
    let garbage = write(dir.path(), "garbage.png", "not a png");
    assert_fails(&dsat(&["degrade", "--input", p(&garbage), "--out", &out, "--scale", "2", "--sigma", "1"]), 3, "data");
}

#[test]
fn malformed_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[train]\nlr0 = \"fast\"\n");
    let out = p(&dir.path().join("run")).to_string();
    assert_fails(&dsat(&["train", "--config", p(&cfg), "--out", &out]), 2, "config");
    let cfg = write(dir.path(), "ok.toml", TINY);
    assert_fails(&dsat(&["train", "--config", p(&cfg), "--out", &out, "--ablation", "model9"]), 2, "config");
    assert_fails(&dsat(&["train-encoder", "--config", p(&cfg), "--out", &out, "--ablation", "model1"]), 2, "config");
}

#[test]
fn missing_manifest_entries_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let manifest = write(dir.path(), "m.txt", "nowhere.png\n");
    let out = p(&dir.path().join("run")).to_string();
    assert_fails(&dsat(&["train", "--config", p(&cfg), "--out", &out, "--manifest", p(&manifest)]), 3, "data");
}

#[test]
fn divergence_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{TINY}lr0 = 1e37\n"));
    let out = p(&dir.path().join("run")).to_string();
    assert_fails(&dsat(&["train", "--config", p(&cfg), "--out", &out, "--ablation", "model1"]), 4, "numeric");
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|row| row.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn train_logs_a_nonincreasing_learning_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let out = dir.path().join("run");
    assert_ok(&dsat(&["train", "--config", p(&cfg), "--out", p(&out), "--seed", "3"]));
    let (header, rows) = read_csv(&out.join("metrics.csv"));
    assert_eq!(header, ["step", "epoch", "lr", "l_sr", "l_degrad", "l_total"]);
    assert_eq!(rows.len(), 4);
    let lr: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(lr.windows(2).all(|w| w[1] <= w[0]), "{lr:?}");
    assert_eq!(lr[2], lr[0] / 2.0);
    assert!(out.join("model.ckpt").exists());
    let saved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(saved.contains("seed = 3"));
}

#[test]
fn two_stage_training_uses_the_pretrained_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &TINY.replace("[train]\n", "[train]\nencoder_pretrain_epochs = 3\n"));
    let stage1 = dir.path().join("enc");
    assert_ok(&dsat(&["train-encoder", "--config", p(&cfg), "--out", p(&stage1)]));
    let (header, rows) = read_csv(&stage1.join("encoder_metrics.csv"));
    assert_eq!(header, ["step", "epoch", "lr", "l_degrad", "positive_cosine", "cross_cosine"]);
    assert_eq!(rows.len(), 3);
    let enc = stage1.join("encoder.ckpt");
    let stage2 = dir.path().join("joint");
    assert_ok(&dsat(&["train", "--config", p(&cfg), "--out", p(&stage2), "--encoder", p(&enc)]));
    assert!(!stage2.join("encoder_metrics.csv").exists());
    let (_, rows) = read_csv(&stage2.join("metrics.csv"));
    assert!(rows.iter().all(|r| !r[4].is_empty()));
}

#[test]
fn eval_of_an_untrained_model_is_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &TINY.replace("total_epochs = 4", "total_epochs = 0"));
    let run = dir.path().join("run");
    assert_ok(&dsat(&["train", "--config", p(&cfg), "--out", p(&run)]));
    let manifest = image_set(dir.path(), 3, 40);
    let report = dir.path().join("report.csv");
    let model = run.join("model.ckpt");
    assert_ok(&dsat(&[
        "eval", "--model", p(&model), "--manifest", p(&manifest), "--spec", "sigma=0.8", "--spec",
        "lambda1=2,lambda2=0.5,theta=0.3,noise=5", "--report", p(&report),
    ]));
    let (header, rows) = read_csv(&report);
    assert_eq!(header, ["image", "spec", "psnr_y", "ssim_y", "bicubic_psnr_y", "bicubic_ssim_y", "separability"]);
    assert_eq!(rows.len(), 7);
    for row in &rows {
        for v in &row[2..6] {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }
    assert_eq!(rows[6][0], "mean");
    assert_eq!(rows[6][6], "");

    let again = dir.path().join("again.csv");
    assert_ok(&dsat(&[
        "eval", "--model", p(&model), "--manifest", p(&manifest), "--spec", "sigma=0.8", "--spec",
        "lambda1=2,lambda2=0.5,theta=0.3,noise=5", "--report", p(&again),
    ]));
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&again).unwrap());

    assert_fails(
        &dsat(&["eval", "--model", p(&model), "--manifest", p(&manifest), "--spec", "sigma=oops", "--report", p(&again)]),
        2,
        "config",
    );
    let truncated = write(dir.path(), "bad.ckpt", "DSAT");
    assert_fails(
        &dsat(&["eval", "--model", p(&truncated), "--config", p(&cfg), "--manifest", p(&manifest), "--spec", "sigma=1", "--report", p(&again)]),
        3,
        "data",
    );
}

#[test]
fn embed_writes_one_row_per_tile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &TINY.replace("total_epochs = 4", "total_epochs = 0"));
    let run = dir.path().join("run");
    assert_ok(&dsat(&["train", "--config", p(&cfg), "--out", p(&run)]));
    let manifest = image_set(dir.path(), 2, 20);
    let out = dir.path().join("emb.csv");
    let model = run.join("model.ckpt");
    assert_ok(&dsat(&["embed", "--model", p(&model), "--manifest", p(&manifest), "--patch", "8", "--out", p(&out)]));
    let (header, rows) = read_csv(&out);
    assert_eq!(&header[..4], ["image", "y", "x", "d0"]);
    assert_eq!(header.len(), 3 + 256);
    assert_eq!(rows.len(), 2 * 4);
    assert_eq!((rows[3][1].as_str(), rows[3][2].as_str()), ("8", "8"));
    for row in &rows {
        let norm: f64 = row[3..].iter().map(|v| v.parse::<f64>().unwrap().powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-4);
    }
    let whole = dir.path().join("whole.csv");
    assert_ok(&dsat(&["embed", "--model", p(&model), "--manifest", p(&manifest), "--out", p(&whole)]));
    assert_eq!(read_csv(&whole).1.len(), 2);
    assert_fails(
        &dsat(&["embed", "--model", p(&model), "--manifest", p(&manifest), "--patch", "32", "--out", p(&whole)]),
        3,
        "data",
    );
}
