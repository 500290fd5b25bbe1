//! Guided latent optimization against a pluggable generator/encoder backend.
//!
//! The per-frame objective is
//! `(1 - cos(encode(render(z)), g)) + lambda * ||z - z_prev||_1`, minimised by
//! gradient descent on the cosine term. The L1 term is handled either by a
//! proximal (soft-threshold) step toward `z_prev`, the default, or by its raw
//! subgradient. `z_prev` is the final latent of the previous frame, and the
//! latent carries over from frame to frame.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{dot, l2_norm, weighted_sum, EmbeddingStore};
use crate::schedule::Plan;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("frame {frame}: non-finite {what}")]
    Numeric { frame: usize, what: &'static str },
    #[error("frame {frame}: guidance {id:?} cannot be resolved")]
    UnresolvedGuidance { frame: usize, id: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("config: {0}")]
    Config(String),
}

/// Generator plus image encoder, seen through the latent.
pub trait Backend {
    fn latent_dim(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn render(&self, z: &[f64]) -> Vec<f64>;
    /// Unit-norm embedding of an image.
    fn encode(&self, image: &[f64]) -> Vec<f64>;
    /// Gradient of `1 - cos(encode(render(z)), g)` with respect to `z`.
    fn gradient(&self, z: &[f64], g: &[f64]) -> Vec<f64>;
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    /// Gaussian entries scaled by `1 / sqrt(cols)`.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                scale * x
            })
            .collect();
        Self { rows, cols, data }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.cols).map(|row| dot(row, x)).collect()
    }

    pub fn mul_vec_transposed(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }
}

/// Linear "generator" `A z` followed by a normalized linear "encoder" `B x`.
#[derive(Debug, Clone, PartialEq)]
pub struct StubBackend {
    pub render_matrix: Matrix,
    pub encode_matrix: Matrix,
}

pub fn make_stub_backend(latent_dim: usize, image_dim: usize, embed_dim: usize, seed: u64) -> StubBackend {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let render_matrix = Matrix::gaussian(image_dim, latent_dim, &mut rng);
    let encode_matrix = Matrix::gaussian(embed_dim, image_dim, &mut rng);
    StubBackend {
        render_matrix,
        encode_matrix,
    }
}

fn unit_or_e1(v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n == 0.0 || !n.is_finite() {
        let mut e1 = vec![0.0; v.len()];
        if let Some(first) = e1.first_mut() {
            *first = 1.0;
        }
        return e1;
    }
    v.into_iter().map(|x| x / n).collect()
}

impl Backend for StubBackend {
    fn latent_dim(&self) -> usize {
        self.render_matrix.cols
    }

    fn embed_dim(&self) -> usize {
        self.encode_matrix.rows
    }

    fn render(&self, z: &[f64]) -> Vec<f64> {
        self.render_matrix.mul_vec(z)
    }

    fn encode(&self, image: &[f64]) -> Vec<f64> {
        unit_or_e1(self.encode_matrix.mul_vec(image))
    }

    fn gradient(&self, z: &[f64], g: &[f64]) -> Vec<f64> {
        // u = B A z; d/du (u.g / |u|) = g/|u| - (u.g) u / |u|^3
        let u = self.encode_matrix.mul_vec(&self.render_matrix.mul_vec(z));
        let norm = l2_norm(&u);
        if norm == 0.0 {
            return vec![0.0; self.latent_dim()];
        }
        let ug = dot(&u, g);
        let du: Vec<f64> = u
            .iter()
            .zip(g)
            .map(|(ui, gi)| -(gi / norm - ug * ui / norm.powi(3)))
            .collect();
        self.render_matrix
            .mul_vec_transposed(&self.encode_matrix.mul_vec_transposed(&du))
    }
}

/// How a step treats the `lambda * ||z - z_prev||_1` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L1Update {
    /// Gradient step on the cosine term, then soft-threshold the offset from
    /// `z_prev` by `learning_rate * lambda`.
    #[default]
    Proximal,
    /// Adds `lambda * sign(z - z_prev)` to the gradient, with `sign(0) = 0`.
    Subgradient,
}

impl std::str::FromStr for L1Update {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proximal" => Ok(Self::Proximal),
            "subgradient" => Ok(Self::Subgradient),
            other => Err(format!("unknown L1 update {other:?}, expected proximal or subgradient")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub learning_rate: f64,
    pub iterations_per_frame: usize,
    pub lambda_l1: f64,
    pub l1_update: L1Update,
    pub seed: u64,
    /// Standard deviation of the initial latent entries.
    pub init_std: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            iterations_per_frame: 1,
            lambda_l1: 0.0,
            l1_update: L1Update::Proximal,
            seed: 0,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

pub const DEFAULT_INIT_STD: f64 = 0.01;

impl StepConfig {
    pub fn check(&self) -> Result<(), OptimError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OptimError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.iterations_per_frame == 0 {
            return Err(OptimError::Config("iterations_per_frame must be at least 1".into()));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(OptimError::Config(format!("lambda_l1 {} must be non-negative", self.lambda_l1)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(OptimError::Config(format!("init_std {} must be positive", self.init_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    /// Frame whose optimization last updated `z`.
    pub frame_index: Option<usize>,
}

impl LatentState {
    /// `z ~ init_std * N(0, I)` drawn from the seed.
    pub fn initial(dim: usize, seed: u64, init_std: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = (0..dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                init_std * x
            })
            .collect();
        Self { z, frame_index: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_index: usize,
    pub final_loss: f64,
    pub cosine_to_guidance: f64,
    pub l1_drift: f64,
    /// Not serialized, so metrics files stay byte-reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Cosine between the rendered-and-encoded latent and the guidance.
pub fn guidance_cosine<B: Backend + ?Sized>(backend: &B, z: &[f64], g: &[f64]) -> f64 {
    dot(&backend.encode(&backend.render(z)), g)
}

fn check_dims<B: Backend + ?Sized>(backend: &B, z: &[f64], g: &[f64], z_prev: &[f64]) -> Result<(), OptimError> {
    if z.len() != backend.latent_dim() || z_prev.len() != z.len() {
        return Err(OptimError::Dimension(format!(
            "latent {} / previous {} vs backend {}",
            z.len(),
            z_prev.len(),
            backend.latent_dim()
        )));
    }
    if g.len() != backend.embed_dim() {
        return Err(OptimError::Dimension(format!(
            "guidance {} vs backend {}",
            g.len(),
            backend.embed_dim()
        )));
    }
    Ok(())
}

/// `(1 - cos) + lambda * ||z - z_prev||_1`.
pub fn loss<B: Backend + ?Sized>(
    z: &[f64],
    g: &[f64],
    z_prev: &[f64],
    lambda_l1: f64,
    backend: &B,
    frame: usize,
) -> Result<f64, OptimError> {
    check_dims(backend, z, g, z_prev)?;
    let cos = guidance_cosine(backend, z, g);
    if !cos.is_finite() {
        return Err(OptimError::Numeric { frame, what: "cosine" });
    }
    let value = (1.0 - cos) + lambda_l1 * l1_distance(z, z_prev);
    if !value.is_finite() {
        return Err(OptimError::Numeric { frame, what: "loss" });
    }
    Ok(value)
}

/// One update of `z`. See [`L1Update`] for the treatment of the L1 term.
pub fn step<B: Backend + ?Sized>(
    z: &[f64],
    g: &[f64],
    z_prev: &[f64],
    cfg: &StepConfig,
    backend: &B,
    frame: usize,
) -> Result<Vec<f64>, OptimError> {
    check_dims(backend, z, g, z_prev)?;
    let grad = backend.gradient(z, g);
    let lr = cfg.learning_rate;
    let next: Vec<f64> = z
        .iter()
        .zip(&grad)
        .zip(z_prev)
        .map(|((zi, gi), pi)| match cfg.l1_update {
            L1Update::Subgradient => {
                let d = zi - pi;
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                zi - lr * (gi + cfg.lambda_l1 * sign)
            }
            L1Update::Proximal => {
                let d = zi - lr * gi - pi;
                let shrunk = (d.abs() - lr * cfg.lambda_l1).max(0.0);
                pi + d.signum() * shrunk
            }
        })
        .collect();
    if next.iter().any(|x| !x.is_finite()) {
        return Err(OptimError::Numeric { frame, what: "latent update" });
    }
    Ok(next)
}

/// Per-frame metrics and the final latent of every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub frames: Vec<FrameResult>,
    pub latents: Vec<Vec<f64>>,
    /// Resolved (normalized, possibly blended) guidance of every frame.
    pub guidance: Vec<Vec<f64>>,
}

impl RunOutput {
    pub fn mean_cosine(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.cosine_to_guidance).sum::<f64>() / self.frames.len() as f64
    }

    pub fn total_l1_drift(&self) -> f64 {
        self.frames.iter().map(|f| f.l1_drift).sum()
    }

    /// One JSON object per line.
    pub fn metrics_jsonl(&self) -> String {
        self.frames
            .iter()
            .map(|f| serde_json::to_string(f).expect("frame result serializes") + "\n")
            .collect()
    }
}

/// Resolves every entry's guidance to a unit vector before any optimization.
pub fn resolve_guidance(plan: &Plan, store: &EmbeddingStore) -> Result<Vec<Vec<f64>>, OptimError> {
    plan.entries
        .iter()
        .map(|entry| {
            let mut parts = Vec::with_capacity(entry.guidance.len());
            for gw in &entry.guidance {
                let e = store.get(&gw.id).ok_or_else(|| OptimError::UnresolvedGuidance {
                    frame: entry.frame_index,
                    id: gw.id.clone(),
                })?;
                parts.push((e.vector.as_slice(), gw.weight));
            }
            weighted_sum(&parts).map_err(|_| OptimError::UnresolvedGuidance {
                frame: entry.frame_index,
                id: entry
                    .guidance
                    .iter()
                    .map(|g| g.id.as_str())
                    .collect::<Vec<_>>()
                    .join("+"),
            })
        })
        .collect()
}

/// Runs `iterations_per_frame` steps per plan entry, in order.
pub fn run_plan<B: Backend + ?Sized>(
    plan: &Plan,
    store: &EmbeddingStore,
    backend: &B,
    cfg: &StepConfig,
) -> Result<RunOutput, OptimError> {
    cfg.check()?;
    if store.dim() != backend.embed_dim() {
        return Err(OptimError::Dimension(format!(
            "store dimension {} vs backend embedding dimension {}",
            store.dim(),
            backend.embed_dim()
        )));
    }
    let guidance = resolve_guidance(plan, store)?;
    let mut state = LatentState::initial(backend.latent_dim(), cfg.seed, cfg.init_std);
    let mut frames = Vec::with_capacity(guidance.len());
    let mut latents = Vec::with_capacity(guidance.len());

    for (entry, g) in plan.entries.iter().zip(&guidance) {
        let frame = entry.frame_index;
        let started = Instant::now();
        let anchor = state.z.clone();
        for _ in 0..cfg.iterations_per_frame {
            state.z = step(&state.z, g, &anchor, cfg, backend, frame)?;
        }
        state.frame_index = Some(frame);
        let final_loss = loss(&state.z, g, &anchor, cfg.lambda_l1, backend, frame)?;
        frames.push(FrameResult {
            frame_index: frame,
            final_loss,
            cosine_to_guidance: guidance_cosine(backend, &state.z, g),
            l1_drift: l1_distance(&state.z, &anchor),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        latents.push(state.z.clone());
    }
    Ok(RunOutput {
        frames,
        latents,
        guidance,
    })
}

/// Largest per-coordinate relative error between `backend.gradient` and
/// central differences of the cosine loss, with denominators
/// `max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_diff_check<B: Backend + ?Sized>(backend: &B, z: &[f64], g: &[f64], h: f64) -> f64 {
    let analytic = backend.gradient(z, g);
    let f = |z: &[f64]| 1.0 - guidance_cosine(backend, z, g);
    let mut probe = z.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..z.len() {
        probe[i] = z[i] + h;
        let up = f(&probe);
        probe[i] = z[i] - h;
        let down = f(&probe);
        probe[i] = z[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// [`finite_diff_check`] at `points` seeded random pairs of a standard normal
/// latent and a unit guidance vector; returns the worst error.
pub fn random_gradient_check<B: Backend + ?Sized>(backend: &B, points: usize, seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x
            })
            .collect()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let z = draw(backend.latent_dim());
        let g = unit_or_e1(draw(backend.embed_dim()));
        worst = worst.max(finite_diff_check(backend, &z, &g, h));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn stub_basics() {
        let b = make_stub_backend(6, 5, 4, 3);
        assert_eq!(b, make_stub_backend(6, 5, 4, 3));
        assert_ne!(b, make_stub_backend(6, 5, 4, 4));
        assert_eq!(b.render(&[0.0; 6]), vec![0.0; 5]);
        assert_eq!(b.encode(&[0.0; 5]), vec![1.0, 0.0, 0.0, 0.0]);
        let e = b.encode(&b.render(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert!((l2_norm(&e) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let b = make_stub_backend(6, 5, 4, 1);
        let z = vec![0.3, -0.1, 0.5, 0.9, -0.4, 0.2];
        let g = b.encode(&b.render(&z));
        assert!(loss(&z, &g, &z, 0.0, &b, 0).unwrap().abs() < 1e-12);

        // guidance orthogonal to the current encoding
        let mut o = vec![1.0, -1.0, 0.5, 0.25];
        let proj = dot(&o, &g);
        for (oi, gi) in o.iter_mut().zip(&g) {
            *oi -= proj * gi;
        }
        let o = unit_or_e1(o);
        assert!((loss(&z, &o, &z, 0.0, &b, 0).unwrap() - 1.0).abs() < 1e-12);

        let mut prev = z.clone();
        prev[0] -= 1.0;
        let c = guidance_cosine(&b, &z, &o);
        assert!((loss(&z, &o, &prev, 0.5, &b, 0).unwrap() - ((1.0 - c) + 0.5)).abs() < 1e-12);
        assert!(matches!(loss(&z[..3], &o, &z, 0.0, &b, 0), Err(OptimError::Dimension(_))));
    }

    #[test]
    fn stationary_at_self_guidance() {
        let b = make_stub_backend(8, 8, 8, 2);
        let z = vec![0.5; 8];
        let g = b.encode(&b.render(&z));
        let cfg = StepConfig::default();
        let next = step(&z, &g, &z, &cfg, &b, 0).unwrap();
        for (a, n) in z.iter().zip(&next) {
            assert!((a - n).abs() < 1e-12);
        }
        assert!(finite_diff_check(&b, &z, &g, 1e-5) < 1e-3 || b.gradient(&z, &g).iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = make_stub_backend(16, 12, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let z = random_vec(&mut rng, 16);
            let g = unit_or_e1(random_vec(&mut rng, 8));
            let err = finite_diff_check(&b, &z, &g, 1e-5);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    struct Corrupted(StubBackend);

    impl Backend for Corrupted {
        fn latent_dim(&self) -> usize {
            self.0.latent_dim()
        }
        fn embed_dim(&self) -> usize {
            self.0.embed_dim()
        }
        fn render(&self, z: &[f64]) -> Vec<f64> {
            self.0.render(z)
        }
        fn encode(&self, image: &[f64]) -> Vec<f64> {
            self.0.encode(image)
        }
        fn gradient(&self, z: &[f64], g: &[f64]) -> Vec<f64> {
            let mut grad = self.0.gradient(z, g);
            grad[3] *= 2.0;
            grad
        }
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let b = Corrupted(make_stub_backend(8, 8, 4, 5));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random_vec(&mut rng, 8);
        let g = unit_or_e1(random_vec(&mut rng, 4));
        assert!(finite_diff_check(&b, &z, &g, 1e-5) > 0.1);
    }

    #[test]
    fn l1_subgradient_sign_zero() {
        let b = make_stub_backend(4, 4, 4, 0);
        let z = vec![0.1, 0.2, 0.3, 0.4];
        let g = b.encode(&b.render(&z));
        let mut prev = z.clone();
        prev[1] = 0.0;
        let cfg = StepConfig {
            lambda_l1: 1.0,
            learning_rate: 0.01,
            l1_update: L1Update::Subgradient,
            ..Default::default()
        };
        let next = step(&z, &g, &prev, &cfg, &b, 0).unwrap();
        // only the coordinate that differs from the anchor moves
        assert!((next[1] - (0.2 - 0.01)).abs() < 1e-9);
        assert!((next[0] - z[0]).abs() < 1e-9);
    }

    #[test]
    fn l1_proximal_soft_threshold() {
        let b = make_stub_backend(4, 4, 4, 0);
        let z = vec![0.1, 0.2, 0.3, 0.4];
        let g = b.encode(&b.render(&z));
        let mut prev = z.clone();
        prev[1] = 0.0;
        prev[2] = 0.295;
        let cfg = StepConfig {
            lambda_l1: 1.0,
            learning_rate: 0.01,
            ..Default::default()
        };
        let next = step(&z, &g, &prev, &cfg, &b, 0).unwrap();
        assert!((next[1] - 0.19).abs() < 1e-9);
        // an offset below the threshold snaps onto the anchor
        assert_eq!(next[2], 0.295);
        assert!((next[0] - z[0]).abs() < 1e-9);
        assert_eq!("subgradient".parse::<L1Update>(), Ok(L1Update::Subgradient));
    }

    #[test]
    fn bad_config_rejected() {
        for cfg in [
            StepConfig { learning_rate: 0.0, ..Default::default() },
            StepConfig { iterations_per_frame: 0, ..Default::default() },
            StepConfig { lambda_l1: -1.0, ..Default::default() },
        ] {
            assert!(matches!(cfg.check(), Err(OptimError::Config(_))));
        }
    }
}
