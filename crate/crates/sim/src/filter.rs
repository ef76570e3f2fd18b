//! Kalman filtering over the global state.
//!
//! The global state stacks every target `[x, ẋ, y, ẏ]` followed by every
//! agent bias `[bˣ, bʸ]`, so target `t` occupies `4t..4t+4` and the bias of
//! agent `a` occupies `4T+2a..4T+2a+2`.

use nalgebra::{DMatrix, DVector, Vector2};
use nmci::{BlockPartition, GaussianEstimate};

use crate::config::{Dynamics, PriorConfig};
use crate::model::{target_process_noise, target_transition, AgentConfig, AgentMeasurements, TargetState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_targets: usize,
    pub n_agents: usize,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        4 * self.n_targets + 2 * self.n_agents
    }

    pub fn target(&self, t: usize) -> usize {
        4 * t
    }

    pub fn bias(&self, a: usize) -> usize {
        4 * self.n_targets + 2 * a
    }

    /// `t1.x, t1.vx, t1.y, t1.vy, …, a1.bx, a1.by, …`.
    pub fn labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.dim());
        for t in 1..=self.n_targets {
            labels.extend(["x", "vx", "y", "vy"].map(|c| format!("t{t}.{c}")));
        }
        for a in 1..=self.n_agents {
            labels.extend(["bx", "by"].map(|c| format!("a{a}.{c}")));
        }
        labels
    }

    /// x and y position entries of every target.
    pub fn position_indices(&self) -> Vec<usize> {
        (0..self.n_targets).flat_map(|t| [4 * t, 4 * t + 2]).collect()
    }

    pub fn truth_vector(&self, targets: &[TargetState], biases: &[Vector2<f64>]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (t, s) in targets.iter().enumerate() {
            v.rows_mut(self.target(t), 4).copy_from(&s.chi);
        }
        for (a, b) in biases.iter().enumerate() {
            v.rows_mut(self.bias(a), 2).copy_from(b);
        }
        v
    }

    /// Zero-mean diffuse prior without cross-covariance.
    pub fn prior(&self, prior: &PriorConfig) -> GaussianEstimate {
        let mut diag = DVector::zeros(self.dim());
        for t in 0..self.n_targets {
            let i = self.target(t);
            diag.rows_mut(i, 4).copy_from_slice(&[prior.position_var, prior.velocity_var, prior.position_var, prior.velocity_var]);
        }
        for a in 0..self.n_agents {
            diag.rows_mut(self.bias(a), 2).fill(prior.bias_var);
        }
        GaussianEstimate::new_unchecked(DVector::zeros(self.dim()), DMatrix::from_diagonal(&diag), self.labels())
    }
}

/// Nearly-constant-velocity prediction on the global state; biases are
/// constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub layout: StateLayout,
    pub dynamics: Dynamics,
}

impl MotionModel {
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let f = target_transition(self.dynamics.dt);
        let mut out = DMatrix::identity(self.layout.dim(), self.layout.dim());
        for t in 0..self.layout.n_targets {
            let i = self.layout.target(t);
            out.view_mut((i, i), (4, 4)).copy_from(&f);
        }
        out
    }

    pub fn process_noise_matrix(&self) -> DMatrix<f64> {
        let q = target_process_noise(self.dynamics.dt, self.dynamics.q);
        let n = self.layout.dim();
        let mut out = DMatrix::zeros(n, n);
        for t in 0..self.layout.n_targets {
            let i = self.layout.target(t);
            out.view_mut((i, i), (4, 4)).copy_from(&q);
        }
        out
    }

    /// `x ← F x`, `P ← F P Fᵀ + Q`, applied block by block.
    pub fn predict(&self, estimate: &GaussianEstimate) -> GaussianEstimate {
        let f = target_transition(self.dynamics.dt);
        let q = target_process_noise(self.dynamics.dt, self.dynamics.q);
        let (mut mean, mut cov, labels) = estimate.clone().into_parts();
        for t in 0..self.layout.n_targets {
            let i = self.layout.target(t);
            let m = f * mean.fixed_rows::<4>(i);
            mean.fixed_rows_mut::<4>(i).copy_from(&m);
            let rows = f * cov.rows(i, 4);
            cov.rows_mut(i, 4).copy_from(&rows);
        }
        for t in 0..self.layout.n_targets {
            let i = self.layout.target(t);
            let cols = cov.columns(i, 4) * f.transpose();
            cov.columns_mut(i, 4).copy_from(&cols);
            let mut block = cov.view_mut((i, i), (4, 4));
            block += q;
        }
        GaussianEstimate::new_unchecked(mean, cov, labels)
    }
}

/// Stacked linear measurement `z = H x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub z: DVector<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl Observation {
    /// Relative target positions (position plus own bias) and the landmark
    /// measurement of the own bias.
    pub fn for_agent(layout: &StateLayout, agent: &AgentConfig, meas: &AgentMeasurements) -> Self {
        let m = 2 * meas.targets.len() + 2;
        let n = layout.dim();
        let mut z = DVector::zeros(m);
        let mut h = DMatrix::zeros(m, n);
        let mut r = DMatrix::zeros(m, m);
        let bias = layout.bias(agent.index);
        for (k, (t, zt)) in meas.targets.iter().enumerate() {
            let row = 2 * k;
            z.fixed_rows_mut::<2>(row).copy_from(zt);
            for axis in 0..2 {
                h[(row + axis, layout.target(*t) + 2 * axis)] = 1.0;
                h[(row + axis, bias + axis)] = 1.0;
            }
            r.view_mut((row, row), (2, 2)).copy_from(&agent.meas_noise_target);
        }
        let row = m - 2;
        z.fixed_rows_mut::<2>(row).copy_from(&meas.landmark);
        h[(row, bias)] = 1.0;
        h[(row + 1, bias + 1)] = 1.0;
        r.view_mut((row, row), (2, 2)).copy_from(&agent.meas_noise_landmark);
        Self { z, h, r }
    }

    /// Concatenation of independent observations.
    pub fn stack(parts: &[Observation]) -> Self {
        let n = parts.first().map_or(0, |p| p.h.ncols());
        let m: usize = parts.iter().map(|p| p.z.len()).sum();
        let mut z = DVector::zeros(m);
        let mut h = DMatrix::zeros(m, n);
        let mut r = DMatrix::zeros(m, m);
        let mut row = 0;
        for p in parts {
            let k = p.z.len();
            z.rows_mut(row, k).copy_from(&p.z);
            h.rows_mut(row, k).copy_from(&p.h);
            r.view_mut((row, row), (k, k)).copy_from(&p.r);
            row += k;
        }
        Self { z, h, r }
    }
}

/// Kalman measurement update with the Joseph-form covariance, expanded so
/// that only products with the thin matrices `P Hᵀ` and `K` are formed.
///
/// Fails when the innovation covariance or the posterior covariance is not
/// positive definite.
pub fn update(estimate: &GaussianEstimate, obs: &Observation) -> Result<GaussianEstimate, String> {
    let (mean, cov, labels) = estimate.clone().into_parts();
    let pht = &cov * obs.h.transpose();
    let s = &obs.h * &pht + &obs.r;
    let chol = s.clone().cholesky().ok_or("innovation covariance is not positive definite")?;
    let gain = chol.solve(&pht.transpose()).transpose();
    let innovation = &obs.z - &obs.h * &mean;
    let mean = mean + &gain * innovation;
    let ks = &gain * &s;
    let cov = &cov - &gain * pht.transpose() - &pht * gain.transpose() + ks * gain.transpose();
    let posterior = GaussianEstimate::new_unchecked(mean, cov, labels);
    if posterior.covariance().clone().cholesky().is_none() {
        return Err("posterior covariance lost positive definiteness".into());
    }
    Ok(posterior)
}

/// What one agent knows: an estimate of the full global state and the
/// block structure used for nmCI.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBelief {
    pub estimate: GaussianEstimate,
    pub partition: BlockPartition,
}

/// Prediction followed by an update with the agent's own measurements, if
/// any. Unobserved components are only predicted.
pub fn local_filter_step(belief: &AgentBelief, obs: Option<&Observation>, model: &MotionModel) -> Result<AgentBelief, String> {
    let predicted = model.predict(&belief.estimate);
    let estimate = match obs {
        Some(obs) => update(&predicted, obs)?,
        None => predicted,
    };
    Ok(AgentBelief { estimate, partition: belief.partition.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_prediction_matches_dense() {
        let model = MotionModel { layout: StateLayout { n_targets: 2, n_agents: 2 }, dynamics: Dynamics { dt: 0.7, q: 0.3 } };
        let n = model.layout.dim();
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
        let cov = &a * a.transpose() + DMatrix::identity(n, n);
        let mean = DVector::from_fn(n, |i, _| i as f64);
        let est = GaussianEstimate::new_unchecked(mean.clone(), cov.clone(), model.layout.labels());
        let out = model.predict(&est);
        let f = model.transition_matrix();
        let expected = &f * &cov * f.transpose() + model.process_noise_matrix();
        assert!((out.covariance() - expected).norm() < 1e-12);
        assert!((out.mean() - &f * mean).norm() < 1e-12);
    }

    #[test]
    fn labels_and_indices() {
        let layout = StateLayout { n_targets: 1, n_agents: 2 };
        assert_eq!(layout.labels(), ["t1.x", "t1.vx", "t1.y", "t1.vy", "a1.bx", "a1.by", "a2.bx", "a2.by"]);
        assert_eq!(layout.position_indices(), [0, 2]);
        assert_eq!(layout.bias(1), 6);
    }
}
