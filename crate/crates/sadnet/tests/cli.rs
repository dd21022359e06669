use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sadnet::checkpoint::Checkpoint;
use sadnet::netpbm::{load_image, save_image};
use sadnet_core::data::ImageBuffer;
use sadnet_core::gradcheck::micro_model_config;
use sadnet_core::model::{ModelConfig, Sadnet, OFFSET_CSV_HEADER};
use sadnet_core::random::Rng;

fn sadnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sadnet")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn random_image(w: usize, h: usize, c: usize, seed: u64) -> ImageBuffer {
    let mut rng = Rng::new(seed);
    ImageBuffer::new(w, h, c, (0..w * h * c).map(|_| rng.below(256) as u8).collect()).unwrap()
}

/// Writes `n` random grayscale images and a manifest listing them.
fn corpus(dir: &Path, n: usize, size: usize) -> PathBuf {
    let clean = dir.join("clean");
    std::fs::create_dir_all(&clean).unwrap();
    for i in 0..n {
        save_image(&random_image(size, size, 1, i as u64), &clean.join(format!("img{i}.pgm"))).unwrap();
    }
    let out = sadnet(&[
        "make-noisy",
        "--in-dir",
        p(&clean),
        "--sigma",
        "25",
        "--seed",
        "5",
        "--out-dir",
        p(&dir.join("noisy")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("noisy/manifest.tsv")
}

fn micro_config_text(manifest: &Path, ckdir: &Path, max_iters: u64) -> String {
    format!(
        "in_channels=1\nchannels=4,8\noffset_channels=4\nbatch_size=2\npatch_size=8\nlr=1e-3\nmax_iters={max_iters}\n\
         seed=3\nlog_interval=2\nmanifest={}\ncheckpoint_dir={}\n",
        manifest.display(),
        ckdir.display()
    )
}

fn train(dir: &Path, name: &str, text: &str) -> Output {
    let cfg = dir.join(name);
    std::fs::write(&cfg, text).unwrap();
    sadnet(&["train", "--config", p(&cfg)])
}

fn init_checkpoint(dir: &Path, config: ModelConfig) -> PathBuf {
    let net = Sadnet::new(config).unwrap();
    let trainer = sadnet_core::train::Trainer::new(net, Default::default(), 0).unwrap();
    let path = dir.join("init.sadn");
    Checkpoint::from_trainer(&trainer).save(&path).unwrap();
    path
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), "bad.cfg", "max_iters=1\nmanifest=m\ncheckpoint_dir=c\nbatchsize=3\n");
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown key \"batchsize\""), "{}", stderr(&out));
    assert_eq!(code(&sadnet(&["frobnicate"])), 1);
    assert_eq!(code(&sadnet(&["denoise", "--ckpt", "x"])), 1);
}

#[test]
fn empty_run_writes_initialization_and_no_log_records() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 2, 16);
    let ck = dir.path().join("ck");
    let out = train(dir.path(), "t.cfg", &micro_config_text(&manifest, &ck, 0));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    assert_eq!(std::fs::read(ck.join("train.log")).unwrap(), b"");
    let saved = Checkpoint::load(&ck.join("final.sadn")).unwrap();
    let expected = Sadnet::new(micro_model_config()).unwrap().init_params::<f32>(3).unwrap();
    assert_eq!(saved.params, expected);
    assert_eq!((saved.iteration, saved.adam.t), (0, 0));
}

#[test]
fn training_logs_checkpoints_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 3, 16);
    let ck = dir.path().join("ck");
    let text = micro_config_text(&manifest, &ck, 6) + "checkpoint_interval=4\n";
    let out = train(dir.path(), "t.cfg", &text);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = std::fs::read_to_string(ck.join("train.log")).unwrap();
    let records: Vec<Vec<&str>> = log.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(records.len(), 3);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.len(), 4);
        assert_eq!(r[0], ((i + 1) * 2).to_string());
        assert!(r[1].parse::<f64>().unwrap() > 0.0);
        assert_eq!(r[2].parse::<f64>().unwrap(), 1e-3);
        r[3].parse::<f64>().unwrap();
    }
    assert_eq!(String::from_utf8(out.stdout).unwrap(), log);
    assert!(ck.join("iter_00000004.sadn").is_file());
    let full = std::fs::read(ck.join("final.sadn")).unwrap();

    let ck2 = dir.path().join("ck2");
    let resumed =
        micro_config_text(&manifest, &ck2, 6) + &format!("resume={}\n", ck.join("iter_00000004.sadn").display());
    let out = train(dir.path(), "r.cfg", &resumed);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read(ck2.join("final.sadn")).unwrap(), full);
}

#[test]
fn resume_with_different_model_names_the_fields() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 1, 16);
    let init = init_checkpoint(dir.path(), micro_model_config());
    let text = micro_config_text(&manifest, &dir.path().join("ck"), 2)
        .replace("offset_channels=4", "offset_channels=6")
        + &format!("resume={}\n", init.display());
    let out = train(dir.path(), "t.cfg", &text);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("offset_channels: expected 6, found 4"), "{}", stderr(&out));
}

#[test]
fn missing_training_images_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.tsv");
    std::fs::write(&manifest, "a.pgm\tna.pgm\t25\t1\nb.pgm\tnb.pgm\t25\t2\n").unwrap();
    let out = train(dir.path(), "t.cfg", &micro_config_text(&manifest, &dir.path().join("ck"), 2));
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("2 missing") && err.contains("a.pgm") && err.contains("b.pgm"), "{err}");
}

#[test]
fn denoise_keeps_odd_sizes_and_identity_at_init() {
    let dir = tempfile::tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ModelConfig::micro(3));
    let img = random_image(100, 75, 3, 9);
    let (input, output) = (dir.path().join("in.ppm"), dir.path().join("out.ppm"));
    save_image(&img, &input).unwrap();
    let out = sadnet(&["denoise", "--ckpt", p(&ck), "--in", p(&input), "--out", p(&output)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(load_image(&output).unwrap(), img);

    let gray = dir.path().join("g.pgm");
    save_image(&random_image(8, 8, 1, 1), &gray).unwrap();
    let out = sadnet(&["denoise", "--ckpt", p(&ck), "--in", p(&gray), "--out", p(&output)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = sadnet(&["denoise", "--ckpt", p(&dir.path().join("nope.sadn")), "--in", p(&input), "--out", p(&output)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.sadn"));
}

#[test]
fn eval_of_identical_pair_is_infinite() {
    let dir = tempfile::tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ModelConfig::micro(1));
    save_image(&random_image(24, 16, 1, 4), &dir.path().join("a.pgm")).unwrap();
    let manifest = dir.path().join("m.tsv");
    std::fs::write(&manifest, "a.pgm\ta.pgm\t0\t0\n").unwrap();
    let out = sadnet(&["eval", "--ckpt", p(&ck), "--manifest", p(&manifest)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["image", "psnr_db", "ssim"]);
    assert_eq!(rows[1][1..], ["inf", "1.000000"]);
    assert_eq!(rows.last().unwrap()[1..], ["inf", "1.000000"]);
    assert_eq!(sadnet(&["eval", "--ckpt", p(&ck), "--manifest", p(&manifest)]).stdout, out.stdout);

    std::fs::write(&manifest, "a.pgm\tgone.pgm\t0\t0\nlost.pgm\ta.pgm\t0\t0\n").unwrap();
    let out = sadnet(&["eval", "--ckpt", p(&ck), "--manifest", p(&manifest)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gone.pgm") && stderr(&out).contains("lost.pgm"), "{}", stderr(&out));
}

#[test]
fn make_noisy_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 3, 12);
    let first = std::fs::read(dir.path().join("noisy/img1.pgm")).unwrap();
    let entries = sadnet::manifest::load(&manifest).unwrap();
    assert_eq!(entries.iter().map(|e| e.seed).collect::<Vec<_>>(), [5, 4, 7]);
    assert!(entries.iter().all(|e| e.clean.is_file() && e.noisy.is_file() && e.sigma == 25.0));
    let again = dir.path().join("again");
    let out = sadnet(&[
        "make-noisy",
        "--in-dir",
        p(&dir.path().join("clean")),
        "--sigma",
        "25",
        "--seed",
        "5",
        "--out-dir",
        p(&again),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(again.join("img1.pgm")).unwrap(), first);
    let out = sadnet(&[
        "make-noisy",
        "--in-dir",
        p(&dir.path().join("clean")),
        "--sigma",
        "-1",
        "--seed",
        "5",
        "--out-dir",
        p(&again),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn export_offsets_of_untrained_model() {
    let dir = tempfile::tempdir().unwrap();
    let ck = init_checkpoint(dir.path(), ModelConfig::micro(1));
    let (input, csv) = (dir.path().join("in.pgm"), dir.path().join("o.csv"));
    save_image(&random_image(30, 20, 1, 2), &input).unwrap();
    let out = sadnet(&["export-offsets", "--ckpt", p(&ck), "--in", p(&input), "--out", p(&csv), "--step", "10"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(OFFSET_CSV_HEADER));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4 * 6 * 9);
    for r in rows {
        let (s, py, px, k) = (r[0] as usize, r[1] as usize, r[2] as usize, r[3] as usize);
        assert_eq!(r[4], ((py >> s) + k / 3) as f64 - 1.0);
        assert_eq!(r[5], ((px >> s) + k % 3) as f64 - 1.0);
        assert_eq!(r[6], 0.5);
    }
}

#[test]
fn inspect_prints_the_cost_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.cfg");
    std::fs::write(&cfg, "# default model\nmax_iters=1\n").unwrap();
    let out = sadnet(&["inspect", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(sadnet::tools::inspect_value(&text, "params"), Some("4286834"));
    std::fs::write(&cfg, "channels=8,16\nwhat=1\n").unwrap();
    assert_eq!(code(&sadnet(&["inspect", "--config", p(&cfg)])), 1);
}

#[test]
fn gradcheck_ops_passes() {
    let out = sadnet(&["gradcheck", "--scope", "ops"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).filter(|l| !l.starts_with("worst_rel")).all(|l| l.starts_with("PASS")));
    assert!(text.contains("deform_conv2d"));
}
