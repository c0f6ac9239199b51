use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use blindsr::degradation::{sample_recipe, SCALE};
use blindsr::evaluation::{benchmark, evaluate_dataset, BenchmarkLadder, EvalSource};
use blindsr::generator::{build_generator, Generator, GeneratorConfig, Variant};
use blindsr::image::list_images;
use blindsr::nn::no_grad;
use blindsr::training::{generator_from_checkpoint, Checkpoint, HrPool, StepLog, Trainer};
use blindsr::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::{
    AppConfig, BenchmarkArgs, CliError, Command, EvaluateArgs, LadderArg, SynthesizeArgs, TrainArgs, UpscaleArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn emit(record: serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{record}");
    let _ = out.flush();
}

fn echo_config(cfg: &AppConfig) {
    emit(json!({ "event": "config", "config": cfg }));
}

fn required(value: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf> {
    value.ok_or_else(|| CliError::Usage(format!("{flag} is required (or set {key} in the config file)")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| blindsr::Error::io(dir, e).into())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synthesize(a) => synthesize(a),
        Command::Train(a) => train(a),
        Command::Upscale(a) => upscale(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => run_benchmark(a),
    }
}

fn synthesize(args: SynthesizeArgs) -> Result<()> {
    let mut cfg = AppConfig::load(args.config.as_deref())?;
    if args.hr_dir.is_some() {
        cfg.paths.hr_dir = args.hr_dir;
    }
    if args.out_dir.is_some() {
        cfg.paths.out_dir = args.out_dir;
    }
    cfg.validate()?;
    let hr_dir = required(cfg.paths.hr_dir.clone(), "--hr-dir", "paths.hr_dir")?;
    let out_dir = required(cfg.paths.out_dir.clone(), "--out-dir", "paths.out_dir")?;
    echo_config(&cfg);

    let inputs = list_images(&hr_dir)?;
    if inputs.is_empty() {
        return Err(blindsr::Error::Dataset(format!("no images in {}", hr_dir.display())).into());
    }
    create_dir(&out_dir)?;
    let count = args.count.unwrap_or(inputs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut written = 0;
    for i in 0..count {
        let path = &inputs[i % inputs.len()];
        let seed: u64 = rng.random();
        let result = (|| -> blindsr::Result<PathBuf> {
            let full = ImageTensor::load(path)?;
            let (h, w) = (full.height() / SCALE * SCALE, full.width() / SCALE * SCALE);
            let hr = full.crop(0, 0, h, w)?;
            let recipe = sample_recipe(&cfg.degradation, h, w, seed)?;
            let lr = recipe.replay(&hr)?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let out = out_dir.join(format!("{stem}_{i:05}.png"));
            lr.save(&out)?;
            let recipe_path = out.with_extension("json");
            std::fs::write(&recipe_path, recipe.to_json()?).map_err(|e| blindsr::Error::io(&recipe_path, e))?;
            Ok(out)
        })();
        match result {
            Ok(out) => {
                written += 1;
                emit(json!({ "event": "synthesized", "input": path, "output": out, "seed": seed }));
            }
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                emit(json!({ "event": "skipped", "input": path, "reason": e.to_string() }));
            }
        }
    }
    eprintln!("synthesized {written} of {count} LR images into {}", out_dir.display());
    if written == 0 {
        return Err(blindsr::Error::Dataset("no LR image could be synthesized".into()).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct StepRecord<'a> {
    event: &'static str,
    #[serde(flatten)]
    step: &'a StepLog,
    wall_clock_s: f64,
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = AppConfig::load(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    if args.hr_dir.is_some() {
        cfg.paths.hr_dir = args.hr_dir;
    }
    if args.out_dir.is_some() {
        cfg.paths.out_dir = args.out_dir;
    }
    cfg.validate()?;
    let hr_dir = required(cfg.paths.hr_dir.clone(), "--hr-dir", "paths.hr_dir")?;
    let out_dir = required(cfg.paths.out_dir.clone(), "--out-dir", "paths.out_dir")?;
    echo_config(&cfg);

    let (pool, skipped) = HrPool::from_dir(&hr_dir, cfg.train.hr_patch_size)?;
    for s in &skipped {
        eprintln!("warning: skipping {}: {}", s.name, s.reason);
        emit(json!({ "event": "skipped", "input": s.name, "reason": s.reason }));
    }
    create_dir(&out_dir)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let t = Trainer::resume(cfg.run_config(), path)?;
            emit(json!({ "event": "resumed", "checkpoint": path, "iteration": t.iteration() }));
            t
        }
        None => Trainer::new(cfg.run_config())?,
    };
    let start = Instant::now();
    let (log_every, ckpt_every) = (cfg.train.log_every, cfg.train.checkpoint_every);
    let mut last: Option<StepLog> = None;
    while trainer.phase().is_some() {
        let log = trainer.step(&pool)?;
        let it = log.iteration;
        let done = trainer.phase().is_none();
        if it % log_every == 0 || done {
            emit(serde_json::to_value(StepRecord {
                event: "step",
                step: &log,
                wall_clock_s: start.elapsed().as_secs_f64(),
            })
            .expect("step records serialise"));
        }
        if ckpt_every > 0 && it % ckpt_every == 0 && !done {
            let path = out_dir.join(format!("checkpoint_{it:07}.safetensors"));
            trainer.save(&path)?;
            emit(json!({ "event": "checkpoint", "iteration": it, "path": path }));
        }
        last = Some(log);
    }
    let path = out_dir.join("final.safetensors");
    trainer.save(&path)?;
    emit(json!({ "event": "checkpoint", "iteration": trainer.iteration(), "path": path }));
    match last {
        Some(l) => eprintln!(
            "trained to iteration {} in {:.1}s; content {:.5}, generator total {:.5}; final checkpoint {}",
            l.iteration,
            start.elapsed().as_secs_f64(),
            l.content,
            l.generator_total,
            path.display()
        ),
        None => eprintln!("nothing to do: checkpoint already at iteration {}", trainer.iteration()),
    }
    Ok(())
}

fn load_checked(path: &Path, variant: Option<Variant>, use_ema: bool) -> Result<Generator> {
    let ckpt = Checkpoint::load(path)?;
    let stored = ckpt.meta.config.generator.variant;
    if let Some(v) = variant {
        if v != stored {
            return Err(CliError::Usage(format!(
                "{} holds a {stored} generator but --variant {v} was given",
                path.display()
            )));
        }
    }
    Ok(generator_from_checkpoint(&ckpt, use_ema)?)
}

fn upscale_one(gen: &Generator, input: &Path, output: &Path) -> blindsr::Result<f64> {
    let lr = ImageTensor::load(input)?;
    let x = ImageTensor::stack(std::slice::from_ref(&lr))?;
    let start = Instant::now();
    let y = no_grad(|| gen.infer(&x))?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    let mut sr = ImageTensor::unstack(&y)?.remove(0);
    sr.clamp01();
    sr.save(output)?;
    Ok(ms)
}

fn upscale(args: UpscaleArgs) -> Result<()> {
    let gen = load_checked(&args.checkpoint, Some(args.variant.into()), args.use_ema)?;
    emit(json!({
        "event": "config",
        "checkpoint": args.checkpoint,
        "variant": gen.config().variant,
        "use_ema": args.use_ema,
    }));
    let jobs: Vec<(PathBuf, PathBuf)> = if args.input.is_dir() {
        let inputs = list_images(&args.input)?;
        if inputs.is_empty() {
            return Err(blindsr::Error::Dataset(format!("no images in {}", args.input.display())).into());
        }
        create_dir(&args.output)?;
        inputs
            .into_iter()
            .map(|p| {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let out = args.output.join(format!("{stem}.png"));
                (p, out)
            })
            .collect()
    } else {
        vec![(args.input.clone(), args.output.clone())]
    };
    let mut failed = 0;
    for (input, output) in &jobs {
        match upscale_one(&gen, input, output) {
            Ok(ms) => emit(json!({ "event": "upscaled", "input": input, "output": output, "inference_ms": ms })),
            Err(e) => {
                failed += 1;
                eprintln!("warning: {}: {e}", input.display());
                emit(json!({ "event": "failed", "input": input, "reason": e.to_string() }));
            }
        }
    }
    eprintln!("upscaled {} of {} images", jobs.len() - failed, jobs.len());
    if failed == jobs.len() {
        return Err(blindsr::Error::Dataset("every image failed".into()).into());
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = AppConfig::load(args.config.as_deref())?;
    cfg.validate()?;
    echo_config(&cfg);
    let gen = match &args.checkpoint {
        Some(p) => Some(load_checked(p, None, args.use_ema)?),
        None => None,
    };
    let source = match (&gen, args.synthesize) {
        (Some(g), true) => EvalSource::Synthesize {
            generator: g,
            hr_dir: &args.input_dir,
            space: &cfg.degradation,
            seed: args.seed,
        },
        (Some(g), false) => EvalSource::Upscale {
            generator: g,
            lr_dir: &args.input_dir,
            hr_dir: args.hr_dir.as_deref(),
        },
        (None, true) => return Err(CliError::Usage("--synthesize needs --checkpoint".into())),
        (None, false) => EvalSource::Precomputed {
            sr_dir: &args.input_dir,
            hr_dir: args
                .hr_dir
                .as_deref()
                .ok_or_else(|| CliError::Usage("--hr-dir is required when scoring without a checkpoint".into()))?,
        },
    };
    let report = evaluate_dataset(source, args.sr_out.as_deref())?;
    for row in &report.rows {
        emit(json!({ "event": "row", "row": row }));
        if let Some(e) = &row.error {
            eprintln!("warning: {}: {e}", row.filename);
        }
    }
    if let Some(parent) = args.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let (csv, json_path) = report.write(&args.report)?;
    emit(json!({ "event": "report", "aggregates": report.aggregates, "csv": csv, "json": json_path }));
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    eprintln!(
        "{} images ({} failed): mean PSNR {} dB, mean SSIM {}; report {}",
        report.rows.len(),
        report.failures().count(),
        fmt(report.aggregates.psnr_db.mean),
        fmt(report.aggregates.ssim.mean),
        csv.display()
    );
    Ok(())
}

fn run_benchmark(args: BenchmarkArgs) -> Result<()> {
    let mut cfg = AppConfig::load(args.config.as_deref())?;
    match args.ladder {
        Some(LadderArg::Desk) => cfg.benchmark.steps = BenchmarkLadder::desk().steps,
        Some(LadderArg::Full) => cfg.benchmark.steps = BenchmarkLadder::full().steps,
        None => {}
    }
    if let Some(r) = args.repeats {
        cfg.benchmark.repeats = r;
    }
    if let Some(w) = args.warmup {
        cfg.benchmark.warmup = w;
    }
    cfg.validate()?;
    echo_config(&cfg);
    let build = |path: &Option<PathBuf>, variant: Variant| -> Result<Generator> {
        match path {
            Some(p) => load_checked(p, Some(variant), true),
            None => {
                let gc = GeneratorConfig { variant, dropout_prob: 0.0, ..cfg.generator.clone() };
                Ok(build_generator(&gc, &mut ChaCha8Rng::seed_from_u64(0))?)
            }
        }
    };
    let star = build(&args.star_checkpoint, Variant::Star)?;
    let lite = build(&args.lite_checkpoint, Variant::Lite)?;
    let report = benchmark(&star, &lite, &cfg.benchmark)?;
    for s in &report.steps {
        emit(json!({ "event": "benchmark_step", "step": s }));
        let line = match (&s.star, &s.lite, s.ratio) {
            (Some(st), Some(li), Some(r)) => format!(
                "star {:.3} fps, lite {:.3} fps, ratio {r:.2}",
                st.median_fps, li.median_fps
            ),
            _ => format!("skipped: {}", s.skipped.as_deref().unwrap_or("unknown")),
        };
        eprintln!("{}p -> {}p: {line}", s.step.input, s.step.target);
    }
    if let Some(parent) = args.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    report.write_json(&args.report)?;
    emit(json!({ "event": "report", "path": args.report }));
    Ok(())
}
