use std::path::Path;
use std::process::{Command, Output};

use blindsr::degradation::DegradationRecipe;
use blindsr::ImageTensor;
use blindsr_cli::AppConfig;
use serde_json::Value;

const TINY: &str = r#"
schema_version = 1

[train]
hr_patch_size = 32
batch_size = 4
pretrain_iters = 2
gan_iters = 2
log_every = 1
checkpoint_every = 2
seed = 3

[generator]
base_features = 8
num_blocks = 1
growth_channels = 4

[discriminator]
base_features = 4
depth = 2

[perceptual]
vgg = "vgg_tiny"
resnet = "resnet_tiny"

[benchmark]
steps = [{ input = 9, target = 36 }]
repeats = 3
warmup = 3
"#;

fn blindsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindsr"))
        .args(args)
        .env_remove("BLINDSR_OUT_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn records(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("not JSON: {l}: {e}")))
        .collect()
}

fn events<'a>(recs: &'a [Value], name: &str) -> Vec<&'a Value> {
    recs.iter().filter(|r| r["event"] == name).collect()
}

fn texture(h: usize, w: usize, k: f32) -> ImageTensor {
    ImageTensor::from_fn(3, h, w, |c, y, x| 0.5 + 0.4 * ((y as f32 * k + c as f32).sin() * (x as f32 * 0.3).cos()))
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn hr_dir(root: &Path) -> String {
    let d = root.join("hr");
    std::fs::create_dir_all(&d).unwrap();
    texture(40, 44, 0.31).save(d.join("a.png")).unwrap();
    texture(48, 36, 0.17).save(d.join("b.png")).unwrap();
    d.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = blindsr(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flags_exit_2() {
    let o = blindsr(&["train", "--batch-sise", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_reported() {
    let o = blindsr(&["train", "--config", "missing.conf", "--hr-dir", ".", "--out-dir", "."]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("missing.conf") && e.contains("No such file"), "{e}");
}

#[test]
fn config_errors_name_the_key_path() {
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in [
        ("[train]\nbatch_sise = 3\n", "train.batch_sise"),
        ("[degradation]\nlevel_probs = [0.5, 0.5]\n", "degradation.level_probs"),
        ("[train]\nema_decay = 2.0\n", "train.ema_decay"),
        ("schema_version = 7\n", "schema_version"),
        ("[benchmark]\nsteps = [{ input = 270, target = 1000 }]\n", "benchmark.steps[0]"),
    ] {
        let cfg = write_config(dir.path(), text);
        let o = blindsr(&["train", "--config", &cfg, "--hr-dir", ".", "--out-dir", "."]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).contains(key), "{text}: {}", stderr(&o));
    }
}

#[test]
fn train_flags_override_the_file_and_the_echo_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let hr = hr_dir(dir.path());
    let out = dir.path().join("run");
    let o = blindsr(&["train", "--config", &cfg, "--hr-dir", &hr, "--out-dir", &s(&out), "--batch-size", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let recs = records(&o);
    let echo = events(&recs, "config")[0];
    let parsed = AppConfig::from_json(&echo["config"].to_string()).unwrap();
    let mut want = AppConfig::from_toml(TINY).unwrap();
    want.train.batch_size = 2;
    want.paths.hr_dir = Some(hr.clone().into());
    want.paths.out_dir = Some(out.clone());
    assert_eq!(parsed, want);
    assert_eq!(parsed.train.batch_size, 2);

    let steps = events(&recs, "step");
    assert_eq!(steps.len(), 4);
    for (i, st) in steps.iter().enumerate() {
        assert_eq!(st["iteration"], i as u64 + 1);
        assert!(st["wall_clock_s"].as_f64().unwrap() >= 0.0);
        assert!(st["content"].as_f64().unwrap().is_finite());
        assert!(st["lr"].as_f64().is_some());
    }
    assert_eq!(steps[0]["phase"], "pretrain");
    assert_eq!(steps[3]["phase"], "gan");
    assert!(steps[3]["discriminator"].as_f64().is_some() && steps[3]["zeta"].as_f64().is_some());
    assert!(out.join("checkpoint_0000002.safetensors").exists());
    assert!(out.join("final.safetensors").exists());
    assert!(stderr(&o).contains("trained to iteration 4"));

    // Resuming from the mid-run checkpoint reproduces the last two records.
    let o2 = blindsr(&[
        "train", "--config", &cfg, "--hr-dir", &hr, "--out-dir", &s(&dir.path().join("resumed")),
        "--batch-size", "2", "--resume", &s(&out.join("checkpoint_0000002.safetensors")),
    ]);
    assert_eq!(o2.status.code(), Some(0), "{}", stderr(&o2));
    let recs2 = records(&o2);
    let resumed = events(&recs2, "step");
    assert_eq!(resumed.len(), 2);
    for (a, b) in resumed.iter().zip(&steps[2..]) {
        for key in ["iteration", "content", "discriminator", "generator_total", "perceptual"] {
            assert_eq!(a[key], b[key], "{key}");
        }
    }

    // Upscale with the trained weights.
    let lr = dir.path().join("lr.png");
    texture(10, 12, 0.5).save(&lr).unwrap();
    let sr = dir.path().join("sr.png");
    let ckpt = s(&out.join("final.safetensors"));
    let o3 = blindsr(&["upscale", "--checkpoint", &ckpt, "--input", &s(&lr), "--output", &s(&sr), "--variant", "star", "--use-ema"]);
    assert_eq!(o3.status.code(), Some(0), "{}", stderr(&o3));
    assert_eq!(ImageTensor::load(&sr).unwrap().dims(), (3, 40, 48));
    let o4 = blindsr(&["upscale", "--checkpoint", &ckpt, "--input", &hr, "--output", &s(&dir.path().join("up")), "--variant", "star"]);
    assert_eq!(o4.status.code(), Some(0), "{}", stderr(&o4));
    assert_eq!(ImageTensor::load(dir.path().join("up/a.png")).unwrap().dims(), (3, 160, 176));
    let o5 = blindsr(&["upscale", "--checkpoint", &ckpt, "--input", &s(&lr), "--output", &s(&sr), "--variant", "lite"]);
    assert_eq!(o5.status.code(), Some(2));
    assert!(stderr(&o5).contains("star"));

    // Evaluate: upscale-and-score with synthetic degradation.
    let report = dir.path().join("eval/report.csv");
    let o6 = blindsr(&[
        "evaluate", "--config", &cfg, "--checkpoint", &ckpt, "--input-dir", &hr, "--synthesize", "--report", &s(&report),
    ]);
    assert_eq!(o6.status.code(), Some(0), "{}", stderr(&o6));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(report.with_extension("json").exists());
}

#[test]
fn out_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let hr = hr_dir(dir.path());
    let out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_blindsr"))
        .args(["synthesize", "--hr-dir", &hr, "--count", "1"])
        .env("BLINDSR_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("a_00000.png").exists());
}

#[test]
fn synthesized_images_replay_from_their_recipes() {
    let dir = tempfile::tempdir().unwrap();
    let hr = hr_dir(dir.path());
    let out = dir.path().join("lr");
    let o = blindsr(&["synthesize", "--hr-dir", &hr, "--out-dir", &s(&out), "--count", "3", "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(events(&records(&o), "synthesized").len(), 3);
    for (name, src) in [("a_00000", "a.png"), ("b_00001", "b.png"), ("a_00002", "a.png")] {
        let lr = ImageTensor::load(out.join(format!("{name}.png"))).unwrap();
        let recipe = DegradationRecipe::from_json(&std::fs::read_to_string(out.join(format!("{name}.json"))).unwrap()).unwrap();
        let hr = ImageTensor::load(Path::new(&hr).join(src)).unwrap();
        let replayed = recipe.replay(&hr).unwrap();
        assert_eq!(lr.dims(), (3, hr.height() / 4, hr.width() / 4));
        for (a, b) in lr.data().iter().zip(replayed.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn evaluate_scores_a_folder_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let hr = hr_dir(dir.path());
    let report = dir.path().join("r.csv");
    let o = blindsr(&["evaluate", "--input-dir", &hr, "--hr-dir", &hr, "--report", &s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "filename,psnr_db,ssim,inference_ms");
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], "80");
        assert_eq!(cells[2], "1");
    }
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = blindsr(&["evaluate", "--input-dir", &s(&empty), "--hr-dir", &hr, "--report", &s(&report)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn benchmark_writes_a_report_with_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let report = dir.path().join("bench.json");
    let o = blindsr(&["benchmark", "--config", &cfg, "--report", &s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let step = &v["steps"][0];
    assert!(step["ratio"].as_f64().unwrap() > 0.0);
    assert_eq!(step["star"]["raw_ms"].as_array().unwrap().len(), 3);
    let o = blindsr(&["benchmark", "--config", &cfg, "--warmup", "1", "--report", &s(&report)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("benchmark.warmup"));
}
