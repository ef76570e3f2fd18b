//! Target motion and agent measurement models.
//!
//! Targets follow a nearly-constant-velocity model with white-noise
//! acceleration, independently along x and y. Agents measure the relative
//! position of their assigned targets corrupted by a constant bias, and the
//! bias itself through a landmark.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

/// `[x, ẋ, y, ẏ]` of one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState {
    pub chi: Vector4<f64>,
}

impl TargetState {
    pub fn new(x: f64, vx: f64, y: f64, vy: f64) -> Self {
        Self { chi: Vector4::new(x, vx, y, vy) }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.chi[0], self.chi[2])
    }
}

/// Per-axis transition `[[1, dt], [0, 1]]`.
pub fn axis_transition(dt: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, dt, 0.0, 1.0)
}

/// Per-axis process noise `q·[[dt³/3, dt²/2], [dt²/2, dt]]`.
pub fn axis_process_noise(dt: f64, q: f64) -> Matrix2<f64> {
    let dt2 = dt * dt;
    Matrix2::new(dt2 * dt / 3.0, dt2 / 2.0, dt2 / 2.0, dt) * q
}

fn block_diag(m: &Matrix2<f64>) -> Matrix4<f64> {
    let mut out = Matrix4::zeros();
    out.fixed_view_mut::<2, 2>(0, 0).copy_from(m);
    out.fixed_view_mut::<2, 2>(2, 2).copy_from(m);
    out
}

pub fn target_transition(dt: f64) -> Matrix4<f64> {
    block_diag(&axis_transition(dt))
}

pub fn target_process_noise(dt: f64, q: f64) -> Matrix4<f64> {
    block_diag(&axis_process_noise(dt, q))
}

/// Lower Cholesky factor of a symmetric PSD 2×2 matrix; zero pivots are
/// allowed so that noiseless settings sample exactly zero.
pub fn psd_sqrt2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = m[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { m[(1, 0)] / l11 } else { 0.0 };
    let l22 = (m[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

/// Draw from `N(0, L Lᵀ)` given the factor `L`.
pub fn gaussian2<R: Rng + ?Sized>(factor: &Matrix2<f64>, rng: &mut R) -> Vector2<f64> {
    let n = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    factor * n
}

pub fn propagate_truth<R: Rng + ?Sized>(state: &TargetState, dt: f64, q: f64, rng: &mut R) -> TargetState {
    let factor = psd_sqrt2(&axis_process_noise(dt, q));
    let wx = gaussian2(&factor, rng);
    let wy = gaussian2(&factor, rng);
    let chi = target_transition(dt) * state.chi + Vector4::new(wx[0], wx[1], wy[0], wy[1]);
    TargetState { chi }
}

/// One agent's static description. Indices are zero-based; configuration
/// files and outputs use one-based ids.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub index: usize,
    pub bias: Vector2<f64>,
    pub assigned_targets: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub meas_noise_target: Matrix2<f64>,
    pub meas_noise_landmark: Matrix2<f64>,
}

impl AgentConfig {
    pub fn id(&self) -> usize {
        self.index + 1
    }
}

/// Measurements of one agent at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMeasurements {
    /// `(target index, z)` with `z = position + bias + v₁`.
    pub targets: Vec<(usize, Vector2<f64>)>,
    /// `m = bias + v₂`.
    pub landmark: Vector2<f64>,
}

pub fn measure<R: Rng + ?Sized>(agent: &AgentConfig, truth: &[TargetState], rng: &mut R) -> AgentMeasurements {
    let target_factor = psd_sqrt2(&agent.meas_noise_target);
    let landmark_factor = psd_sqrt2(&agent.meas_noise_landmark);
    let targets = agent
        .assigned_targets
        .iter()
        .map(|&t| (t, truth[t].position() + agent.bias + gaussian2(&target_factor, rng)))
        .collect();
    let landmark = agent.bias + gaussian2(&landmark_factor, rng);
    AgentMeasurements { targets, landmark }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nmci::rng::seeded;

    #[test]
    fn noiseless_motion() {
        let mut rng = seeded(0);
        let s = propagate_truth(&TargetState::new(0.0, 1.0, 0.0, 0.0), 1.0, 0.0, &mut rng);
        assert_eq!(s, TargetState::new(1.0, 1.0, 0.0, 0.0));
        let still = TargetState::new(3.0, 0.0, -2.0, 0.0);
        assert_eq!(propagate_truth(&still, 0.5, 0.0, &mut rng), still);
    }

    #[test]
    fn factor_reproduces_matrix() {
        let q = axis_process_noise(2.0, 0.3);
        let l = psd_sqrt2(&q);
        assert!((l * l.transpose() - q).norm() < 1e-14);
        assert_eq!(psd_sqrt2(&Matrix2::zeros()), Matrix2::zeros());
    }
}
