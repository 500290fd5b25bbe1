use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use cadence::embed::{load_store, EmbedError, EmbeddingStore};
use cadence::optim::{make_stub_backend, random_gradient_check, run_plan, StepConfig};
use cadence::pipeline::{analyze as run_analysis, build_plan, Analysis, AnalysisConfig, PipelineError};
use cadence::schedule::{check_fps, validate_plan, CompileConfig, Plan, Violation};
use cadence::{decode_wav, parse_lrc, AnalysisReport, AudioBuffer, LyricsTrack};
use serde_json::json;

use crate::{AnalysisArgs, Failure, PlanArgs, SimulateArgs, EXIT_INSUFFICIENT};

type Result<T> = std::result::Result<T, Failure>;

const GRAD_CHECK_POINTS: usize = 20;
const GRAD_CHECK_STEP: f64 = 1e-5;
const GRAD_CHECK_LIMIT: f64 = 1e-4;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::io)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::io)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::io)
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Failure::invalid(anyhow!("--seed is required")))
}

fn load_audio(path: &Path) -> Result<AudioBuffer> {
    let bytes = read(path)?;
    decode_wav(&bytes)
        .with_context(|| format!("cannot decode {}", path.display()))
        .map_err(Failure::io)
}

fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    load_store(path).map_err(|e| {
        let io = matches!(e, EmbedError::Io(_));
        let err = anyhow::Error::new(e).context(format!("cannot load {}", path.display()));
        if io {
            Failure::io(err)
        } else {
            Failure::invalid(err)
        }
    })
}

fn load_plan(path: &Path) -> Result<Plan> {
    Plan::from_json(&read_text(path)?)
        .with_context(|| format!("malformed plan {}", path.display()))
        .map_err(Failure::invalid)
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = if e.is_insufficient_data() {
        EXIT_INSUFFICIENT
    } else {
        crate::EXIT_INVALID
    };
    Failure { code, error: e.into() }
}

fn violations_failure(what: &str, violations: &[Violation]) -> Failure {
    let listing: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
    Failure::invalid(anyhow!(
        "{what} has {} violation(s):\n{}",
        violations.len(),
        listing.join("\n")
    ))
}

fn analysis_config(args: &AnalysisArgs) -> AnalysisConfig {
    AnalysisConfig {
        tightness: args.tightness,
        min_segment_s: args.min_segment,
        ..Default::default()
    }
}

fn analyze_file(audio: &Path, args: &AnalysisArgs) -> Result<Analysis> {
    let buffer = load_audio(audio)?;
    run_analysis(&buffer, &analysis_config(args)).map_err(pipeline_failure)
}

pub fn analyze(audio: &Path, out: &Path, args: &AnalysisArgs) -> Result<()> {
    let analysis = analyze_file(audio, args)?;
    let report = AnalysisReport::from(&analysis);
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write(out, text)?;
    println!(
        "tempo {:.2} BPM, {} beats, {} segments -> {}",
        report.tempo_bpm,
        report.beats.len(),
        report.segments.len(),
        out.display()
    );
    Ok(())
}

/// `plan.json` -> `plan.embeddings.json`.
pub fn store_copy_path(plan_out: &Path) -> PathBuf {
    plan_out.with_extension("embeddings.json")
}

pub fn plan(args: &PlanArgs) -> Result<()> {
    let seed = require_seed(args.seed)?;
    check_fps(args.fps_min, args.fps_max).map_err(Failure::invalid)?;
    if args.dim == 0 {
        return Err(Failure::invalid(anyhow!("--dim must be positive")));
    }
    let lyrics = match &args.lyrics {
        Some(path) => parse_lrc(&read_text(path)?)
            .with_context(|| format!("cannot parse {}", path.display()))
            .map_err(Failure::io)?,
        None => LyricsTrack::default(),
    };
    let mut store = match &args.embeddings {
        Some(path) => load_embeddings(path)?,
        None => EmbeddingStore::new(args.dim),
    };
    let analysis = analyze_file(&args.audio, &args.analysis)?;
    let cfg = CompileConfig {
        fps_min: args.fps_min,
        fps_max: args.fps_max,
        mode: args.mode,
        blend_scope: args.blend_scope,
        seed,
        audio_source: args.audio.display().to_string(),
    };
    let before = store.len();
    let plan = build_plan(&analysis, &lyrics, &mut store, &cfg).map_err(pipeline_failure)?;
    let violations = validate_plan(&plan, Some(&store));
    if !violations.is_empty() {
        return Err(violations_failure("compiled plan", &violations));
    }
    let store_path = store_copy_path(&args.out);
    write(&args.out, plan.to_json())?;
    write(&store_path, store.to_json())?;
    let lyric_segments = plan.meta.segments.iter().filter(|s| s.lyric.is_some()).count();
    println!(
        "{} segments, {} frames, {} with lyrics; tempo {:.2} BPM",
        plan.meta.segments.len(),
        plan.entries.len(),
        lyric_segments,
        analysis.tempo.bpm
    );
    println!("plan -> {}", args.out.display());
    println!(
        "embeddings ({} stub added) -> {}",
        store.len() - before,
        store_path.display()
    );
    Ok(())
}

pub fn viz(plan_path: &Path, out: &Path) -> Result<()> {
    let plan = load_plan(plan_path)?;
    for v in validate_plan(&plan, None) {
        log::warn!("{v}");
    }
    write(out, crate::svg::render(&plan))?;
    println!("timeline -> {}", out.display());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let seed = require_seed(args.seed)?;
    let plan = load_plan(&args.plan)?;
    let store = load_embeddings(&args.embeddings)?;
    let violations = validate_plan(&plan, Some(&store));
    if !violations.is_empty() {
        return Err(violations_failure("plan", &violations));
    }
    let embed_dim = store.dim();
    let latent_dim = args.latent_dim.unwrap_or(2 * embed_dim);
    let image_dim = args.image_dim.unwrap_or(2 * embed_dim);
    if latent_dim == 0 || image_dim == 0 {
        return Err(Failure::invalid(anyhow!("backend dimensions must be positive")));
    }
    let cfg = StepConfig {
        learning_rate: args.lr,
        iterations_per_frame: args.iters_per_frame,
        lambda_l1: args.lambda_l1,
        l1_update: args.l1_update,
        seed,
        ..Default::default()
    };
    cfg.check().map_err(Failure::invalid)?;
    let backend = make_stub_backend(latent_dim, image_dim, embed_dim, seed);

    if args.check_grad {
        let err = random_gradient_check(&backend, GRAD_CHECK_POINTS, seed, GRAD_CHECK_STEP);
        println!("finite-difference max relative error: {err:.3e}");
        if err.is_nan() || err >= GRAD_CHECK_LIMIT {
            return Err(Failure::invalid(anyhow!(
                "gradient check failed: {err:.3e} >= {GRAD_CHECK_LIMIT:e}"
            )));
        }
    }

    let started = Instant::now();
    let output = run_plan(&plan, &store, &backend, &cfg).map_err(Failure::invalid)?;
    let wall = started.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))
        .map_err(Failure::io)?;
    write(&args.out.join("metrics.jsonl"), output.metrics_jsonl())?;
    let summary = json!({
        "frames": output.frames.len(),
        "mean_cosine": output.mean_cosine(),
        "total_l1_drift": output.total_l1_drift(),
        "config": {
            "learning_rate": cfg.learning_rate,
            "iterations_per_frame": cfg.iterations_per_frame,
            "lambda_l1": cfg.lambda_l1,
            "l1_update": cfg.l1_update,
            "seed": seed,
            "latent_dim": latent_dim,
            "image_dim": image_dim,
            "embed_dim": embed_dim,
        },
    });
    write(
        &args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )?;
    println!(
        "{} frames, mean cosine {:.4}, total L1 drift {:.4}, wall time {:.3} s",
        output.frames.len(),
        output.mean_cosine(),
        output.total_l1_drift(),
        wall
    );
    Ok(())
}
