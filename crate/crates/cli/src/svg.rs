//! Plan timeline as SVG: time axis, segment boundaries, a frame-rate bar per
//! segment, one tick per frame colored by guidance modality, lyric labels.

use std::fmt::Write;

use cadence::embed::Modality;
use cadence::schedule::Plan;

const WIDTH: f64 = 1200.0;
const HEIGHT: f64 = 320.0;
const LEFT: f64 = 50.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
/// y of the time axis.
const AXIS_Y: f64 = 260.0;
const BAR_MAX: f64 = 150.0;
const TICK_TOP: f64 = 215.0;

pub const AUDIO_COLOR: &str = "#1f77b4";
pub const TEXT_COLOR: &str = "#d62728";
pub const BLEND_COLOR: &str = "#9467bd";

fn color(m: Modality) -> &'static str {
    match m {
        Modality::Audio => AUDIO_COLOR,
        Modality::Text => TEXT_COLOR,
        Modality::Blend => BLEND_COLOR,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick spacing giving roughly ten labelled ticks.
fn tick_step(duration: f64) -> f64 {
    let raw = duration / 10.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag)
}

pub fn render(plan: &Plan) -> String {
    let meta = &plan.meta;
    let duration = if meta.duration_s > 0.0 { meta.duration_s } else { 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let x = |t: f64| LEFT + t / duration * plot_w;
    let mut s = String::new();

    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="16" font-size="12">{} · {} segments · {} frames · {}</text>"#,
        escape(&meta.audio_source),
        meta.segments.len(),
        plan.entries.len(),
        match meta.guidance_mode {
            cadence::schedule::GuidanceMode::SegmentLocked => "segment-locked",
            cadence::schedule::GuidanceMode::Alternating => "alternating",
        }
    );

    // axis
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{AXIS_Y}" x2="{}" y2="{AXIS_Y}" stroke="black"/>"#,
        x(duration)
    );
    let step = tick_step(duration);
    let mut k = 0;
    loop {
        let t = k as f64 * step;
        if t > duration + 1e-9 {
            break;
        }
        let xt = x(t);
        let _ = writeln!(
            s,
            r#"<line class="axis-tick" x1="{xt:.2}" y1="{AXIS_Y}" x2="{xt:.2}" y2="{}" stroke="black"/><text x="{xt:.2}" y="{}" text-anchor="middle">{}</text>"#,
            AXIS_Y + 5.0,
            AXIS_Y + 17.0,
            trim_float(t)
        );
        k += 1;
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">time (s)</text>"#,
        WIDTH - RIGHT,
        AXIS_Y + 32.0
    );

    if !plan.entries.is_empty() {
        let fps_top = meta.fps_max.max(f64::MIN_POSITIVE);
        for seg in &meta.segments {
            let fps = seg.fps(meta.fps_min, meta.fps_max);
            let h = BAR_MAX * (fps / fps_top).clamp(0.0, 1.0);
            let (x0, x1) = (x(seg.start_s), x(seg.end_s));
            let _ = writeln!(
                s,
                r##"<rect class="fps-bar" x="{x0:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#cccccc"><title>segment {} · {fps:.2} fps · {} frames</title></rect>"##,
                TICK_TOP - 5.0 - h,
                (x1 - x0).max(0.0),
                seg.index,
                seg.frame_count
            );
        }
        let mut boundaries: Vec<f64> = meta.segments.iter().map(|s| s.start_s).collect();
        if let Some(last) = meta.segments.last() {
            boundaries.push(last.end_s);
        }
        for b in boundaries {
            let xb = x(b);
            let _ = writeln!(
                s,
                r#"<line class="boundary" x1="{xb:.2}" y1="{TOP}" x2="{xb:.2}" y2="{AXIS_Y}" stroke="black" stroke-opacity="0.35"/>"#
            );
        }
        for e in &plan.entries {
            let modality = if e.transition { Modality::Blend } else { e.modality };
            let xe = x(e.time_s);
            let _ = writeln!(
                s,
                r#"<line class="frame frame-{}" x1="{xe:.2}" y1="{TICK_TOP}" x2="{xe:.2}" y2="{}" stroke="{}"/>"#,
                modality.as_str(),
                AXIS_Y - 3.0,
                color(modality)
            );
        }
        for seg in &meta.segments {
            if let Some(text) = &seg.lyric {
                let xl = x(seg.start_s) + 2.0;
                let _ = writeln!(
                    s,
                    r#"<text class="lyric" x="{xl:.2}" y="{TOP}" transform="rotate(-20 {xl:.2} {TOP})" fill="{TEXT_COLOR}">{}</text>"#,
                    escape(text)
                );
            }
        }
    }

    // legend
    for (i, (label, c)) in [("audio", AUDIO_COLOR), ("text", TEXT_COLOR), ("blend", BLEND_COLOR)]
        .iter()
        .enumerate()
    {
        let lx = WIDTH - RIGHT - 180.0 + i as f64 * 60.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="8" width="10" height="10" fill="{c}"/><text x="{}" y="17">{label}</text>"#,
            lx + 13.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn trim_float(t: f64) -> String {
    let text = format!("{t:.3}");
    text.trim_end_matches('0').trim_end_matches('.').to_string()
}
