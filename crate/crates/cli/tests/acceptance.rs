//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cadence::audio::encode_wav_pcm16;
use cadence::beat::Span;
use cadence::embed::{blend, cosine, EmbeddingStore, Modality, PromptEmbedding};
use cadence::lyrics::assign_lyrics;
use cadence::optim::{
    guidance_cosine, make_stub_backend, random_gradient_check, run_plan, step, LatentState,
    StepConfig,
};
use cadence::pipeline::{analyze, AnalysisConfig};
use cadence::schedule::{
    allocate_frames, compile_plan, normalize_intensities, validate_plan, BlendScope, CompileConfig,
    GuidanceMode, Plan, PlanEntry, SegmentInput,
};
use cadence::synth::{click_times, click_track};
use cadence::{decode_wav, parse_lrc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x
        })
        .collect()
}

fn beat_tracking() -> Outcome {
    let truth = click_times(120.0, 30.0, 0.25);
    let wav = encode_wav_pcm16(&click_track(&truth, 30.0, 22_050, 0.005, 1, |_| 1.0));
    let started = Instant::now();
    let audio = decode_wav(&wav).map_err(|e| e.to_string())?;
    let a = analyze(&audio, &AnalysisConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();
    let hit = truth
        .iter()
        .filter(|&&c| a.beats.beat_times_s.iter().any(|&b| (b - c).abs() <= 0.030))
        .count() as f64
        / truth.len() as f64;
    check(
        (118.0..=122.0).contains(&a.tempo.bpm) && hit >= 0.95 && elapsed < 5.0,
        format!(
            "tempo {:.2} BPM (want 118-122), {:.1}% of clicks within 30 ms (want >= 95%), analysis {elapsed:.2} s (want < 5)",
            a.tempo.bpm,
            100.0 * hit
        ),
    )
}

fn segmentation_scale() -> Outcome {
    let truth = click_times(100.0, 300.0, 0.3);
    let audio = click_track(&truth, 300.0, 22_050, 0.005, 3, |t| 0.6 + 0.4 * (t * 0.3).sin());
    let a = analyze(&audio, &AnalysisConfig::default()).map_err(|e| e.to_string())?;
    let n = a.segments.len();
    let mean = a.duration_s / n as f64;
    check(
        (400..=600).contains(&n) && (0.5..=0.7).contains(&mean),
        format!("{n} segments (want 400-600), mean {mean:.3} s (want 0.5-0.7)"),
    )
}

fn intensity_mapping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for instance in 0..1000 {
        let n = rng.random_range(2..60);
        let db: Vec<f64> = (0..n).map(|_| rng.random_range(-90.0..0.0)).collect();
        let norm = normalize_intensities(&db);
        let lo = (0..n).min_by(|&i, &j| db[i].total_cmp(&db[j])).unwrap();
        let hi = (0..n).max_by(|&i, &j| db[i].total_cmp(&db[j])).unwrap();
        if norm[lo] != 0.0 || norm[hi] != 1.0 {
            return Err(format!("instance {instance}: extremes map to {} and {}", norm[lo], norm[hi]));
        }
        for i in 0..n {
            for j in 0..n {
                if db[i] < db[j] && norm[i] > norm[j] {
                    return Err(format!("instance {instance}: order of {i} and {j} flipped"));
                }
            }
        }
        let durations: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
        let total = |v: &[f64]| -> usize {
            v.iter()
                .zip(&durations)
                .map(|(&x, &d)| allocate_frames(x, d, 1.0, 10.0).unwrap())
                .sum()
        };
        let k = rng.random_range(0..n);
        let mut raised = norm.clone();
        raised[k] = rng.random_range(norm[k]..=1.0);
        if total(&raised) < total(&norm) {
            return Err(format!("instance {instance}: raising segment {k} lost frames"));
        }
    }
    Ok("1000 random instances: extremes exactly 0 and 1, order preserved, frame total monotone".into())
}

/// Ten segments of uneven length, three timed lyrics, and a store holding
/// every id the compiler may reference.
fn guidance_fixture(mode: GuidanceMode, scope: BlendScope) -> (Plan, EmbeddingStore) {
    let bounds = [0.0, 0.8, 1.5, 2.6, 3.2, 4.0, 5.1, 5.7, 6.5, 7.4, 8.0];
    let spans: Vec<Span> = bounds
        .windows(2)
        .map(|w| Span { start_s: w[0], end_s: w[1] })
        .collect();
    let lyrics = parse_lrc("[00:01.60]one\n[00:04.20]two\n[00:07.45]three\n").unwrap();
    let assignment = assign_lyrics(&lyrics, &spans);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = EmbeddingStore::new(8);
    let inputs: Vec<SegmentInput> = spans
        .iter()
        .zip(assignment.texts)
        .enumerate()
        .map(|(k, (span, lyric))| {
            let aid = format!("audio:{k}");
            store
                .insert(PromptEmbedding::new(&aid, Modality::Audio, gaussian(&mut rng, 8), "").unwrap())
                .unwrap();
            let text_id = lyric.as_ref().map(|_| format!("text:{k}"));
            if let Some(t) = &text_id {
                store
                    .insert(PromptEmbedding::new(t, Modality::Text, gaussian(&mut rng, 8), "").unwrap())
                    .unwrap();
            }
            SegmentInput {
                span: *span,
                mean_intensity_db: -(((k * 13) % 10) as f64),
                audio_id: aid,
                lyric,
                text_id,
            }
        })
        .collect();
    let cfg = CompileConfig {
        fps_min: 4.0,
        fps_max: 12.0,
        mode,
        blend_scope: scope,
        seed: 1,
        ..Default::default()
    };
    (compile_plan(&inputs, 8.0, &cfg).unwrap(), store)
}

/// Modality of the entry's own guidance, ignoring any inherited blend part.
fn own_modality(e: &PlanEntry, store: &EmbeddingStore) -> Modality {
    store.get(&e.guidance.last().unwrap().id).unwrap().modality
}

fn guidance_assignment() -> Outcome {
    let mut details = Vec::new();
    for scope in [BlendScope::None, BlendScope::FullSegment] {
        let (plan, store) = guidance_fixture(GuidanceMode::SegmentLocked, scope);
        let mut text_segments: Vec<usize> = plan
            .entries
            .iter()
            .filter(|e| own_modality(e, &store) == Modality::Text)
            .map(|e| e.segment_index)
            .collect();
        text_segments.dedup();
        if text_segments.len() != 3 {
            return Err(format!("blend {scope}: {} text-guided segments, want 3", text_segments.len()));
        }

        let (plan, store) = guidance_fixture(GuidanceMode::Alternating, scope);
        let mut checked = 0;
        for pair in plan.entries.windows(2) {
            let seg = &plan.meta.segments[pair[0].segment_index];
            if pair[0].segment_index != pair[1].segment_index || seg.lyric.is_none() {
                continue;
            }
            checked += 1;
            if own_modality(&pair[0], &store) == own_modality(&pair[1], &store) {
                return Err(format!(
                    "blend {scope}: frames {} and {} share a modality",
                    pair[0].frame_index, pair[1].frame_index
                ));
            }
        }
        details.push(format!("blend {scope}: 3 text segments, {checked} lyric frame pairs alternate"));
    }
    Ok(details.join("; "))
}

fn blending() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = rng.random_range(2..64);
        let a = PromptEmbedding::new("a", Modality::Text, gaussian(&mut rng, dim), "").unwrap();
        let b = PromptEmbedding::new("b", Modality::Audio, gaussian(&mut rng, dim), "").unwrap();
        let ab = blend(&a, &b).map_err(|e| e.to_string())?;
        let ba = blend(&b, &a).map_err(|e| e.to_string())?;
        let aa = blend(&a, &a).map_err(|e| e.to_string())?;
        let comm = ab.vector.iter().zip(&ba.vector).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let idem = aa.vector.iter().zip(&a.vector).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let equi = (cosine(&ab, &a).unwrap() - cosine(&ab, &b).unwrap()).abs();
        worst = worst.max(comm).max(idem).max(equi);
    }
    check(
        worst <= 1e-9,
        format!("1000 random pairs: worst deviation {worst:.2e} (tolerance 1e-9)"),
    )
}

fn optimizer() -> Outcome {
    let started = Instant::now();
    let (m, p, d) = (128, 64, 32);
    let backend = make_stub_backend(m, p, d, 7);
    let fd = random_gradient_check(&backend, 20, 21, 1e-5);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = PromptEmbedding::new("g", Modality::Text, gaussian(&mut rng, d), "").unwrap().vector;
    let cfg = StepConfig::default();
    let mut z = LatentState::initial(m, 1, cfg.init_std).z;
    for _ in 0..200 {
        let anchor = z.clone();
        z = step(&z, &g, &anchor, &cfg, &backend, 0).map_err(|e| e.to_string())?;
    }
    let cos = guidance_cosine(&backend, &z, &g);

    let (plan, _) = guidance_fixture(GuidanceMode::SegmentLocked, BlendScope::FullSegment);
    let mut store = EmbeddingStore::new(d);
    for k in 0..10 {
        for id in [format!("audio:{k}"), format!("text:{k}")] {
            let modality = if id.starts_with("text") { Modality::Text } else { Modality::Audio };
            store
                .insert(PromptEmbedding::new(id, modality, gaussian(&mut rng, d), "").unwrap())
                .unwrap();
        }
    }
    let free = StepConfig::default();
    let tied = StepConfig { lambda_l1: 10.0, ..free };
    let d0 = run_plan(&plan, &store, &backend, &free).map_err(|e| e.to_string())?.total_l1_drift();
    let d10 = run_plan(&plan, &store, &backend, &tied).map_err(|e| e.to_string())?.total_l1_drift();
    let elapsed = started.elapsed().as_secs_f64();
    check(
        fd < 1e-4 && cos >= 0.99 && d10 < d0 && elapsed < 10.0,
        format!(
            "finite-difference error {fd:.2e} (want < 1e-4), cosine after 200 steps {cos:.5} (want >= 0.99), \
             drift lambda=10 {d10:.4} vs lambda=0 {d0:.4} (want smaller), {elapsed:.2} s (want < 10)"
        ),
    )
}

fn cadence(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cadence"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |x: &Path| std::fs::read(x).map_err(|e| format!("{}: {e}", x.display()));
    Ok(read(a)? == read(b)?)
}

fn determinism() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let d = dir.path();
    let wav = d.join("clicks.wav");
    let clicks = click_times(105.0, 10.0, 0.2);
    std::fs::write(&wav, encode_wav_pcm16(&click_track(&clicks, 10.0, 22_050, 0.005, 8, |t| 0.4 + 0.05 * t)))
        .map_err(|e| e.to_string())?;
    let lrc = d.join("song.lrc");
    std::fs::write(&lrc, "[00:01.00]alpha\n[00:05.00]beta\n").map_err(|e| e.to_string())?;
    let mut compared = 0;
    for run in ["a", "b"] {
        let plan = d.join(format!("{run}.json"));
        cadence(&[
            "plan", "--audio", p(&wav), "--lyrics", p(&lrc), "--out", p(&plan), "--dim", "32", "--seed", "12",
            "--mode", "alternating",
        ])?;
        let store = d.join(format!("{run}.embeddings.json"));
        let out = d.join(format!("sim-{run}"));
        cadence(&[
            "simulate", "--plan", p(&plan), "--embeddings", p(&store), "--out", p(&out), "--seed", "12",
            "--lambda-l1", "0.1", "--iters-per-frame", "2",
        ])?;
    }
    for (a, b) in [
        ("a.json", "b.json"),
        ("a.embeddings.json", "b.embeddings.json"),
        ("sim-a/metrics.jsonl", "sim-b/metrics.jsonl"),
        ("sim-a/summary.json", "sim-b/summary.json"),
    ] {
        if !same_bytes(&d.join(a), &d.join(b))? {
            return Err(format!("{a} and {b} differ"));
        }
        compared += 1;
    }
    Ok(format!("plan and simulate outputs byte-identical across two runs ({compared} file pairs)"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn formats() -> Outcome {
    let read = |name: &str| std::fs::read_to_string(fixtures().join(name)).map_err(|e| format!("{name}: {e}"));
    let expected: serde_json::Value = serde_json::from_str(&read("wav_expected.json")?).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut files = 0;
    for (name, want) in expected.as_object().unwrap() {
        let bytes = std::fs::read(fixtures().join(format!("{name}.wav"))).map_err(|e| e.to_string())?;
        let got = decode_wav(&bytes).map_err(|e| format!("{name}: {e}"))?;
        let samples = want["samples"].as_array().unwrap();
        if got.len() != samples.len() {
            return Err(format!("{name}: {} samples, want {}", got.len(), samples.len()));
        }
        for (a, b) in got.samples().iter().zip(samples) {
            worst = worst.max((a - b.as_f64().unwrap()).abs());
        }
        files += 1;
    }
    if worst > 1e-12 {
        return Err(format!("WAV sample error {worst:.2e}"));
    }

    let lrc_want: Vec<(f64, String)> = serde_json::from_str(&read("lrc_expected.json")?).map_err(|e| e.to_string())?;
    let lrc_got: Vec<(f64, String)> = parse_lrc(&read("golden.lrc")?)
        .map_err(|e| e.to_string())?
        .lines
        .into_iter()
        .map(|l| (l.time_s, l.text))
        .collect();
    if lrc_got != lrc_want {
        return Err(format!("LRC parse {lrc_got:?} != {lrc_want:?}"));
    }

    let mut violations = 0;
    let mut round_trips = 0;
    for mode in [GuidanceMode::SegmentLocked, GuidanceMode::Alternating] {
        for scope in [BlendScope::None, BlendScope::FullSegment, BlendScope::FirstFrames(2)] {
            let (plan, store) = guidance_fixture(mode, scope);
            let text = plan.to_json();
            let back = Plan::from_json(&text).map_err(|e| e.to_string())?;
            violations += validate_plan(&back, Some(&store)).len();
            if back == plan && back.to_json() == text {
                round_trips += 1;
            }
        }
    }
    check(
        violations == 0 && round_trips == 6,
        format!(
            "{files} WAV goldens within {worst:.1e}, LRC golden exact ({} lines), {round_trips}/6 plans round-trip with {violations} violations",
            lrc_want.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("beat tracking", beat_tracking),
        ("segmentation scale", segmentation_scale),
        ("intensity mapping", intensity_mapping),
        ("guidance assignment", guidance_assignment),
        ("transition blending", blending),
        ("optimizer correctness", optimizer),
        ("determinism", determinism),
        ("formats", formats),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
