use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::estimate::{matrix_to_rows, GaussianEstimate};
use crate::sdp::SolverStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    #[serde(rename = "CI")]
    Ci,
    #[serde(rename = "nmCI")]
    Nmci,
    #[serde(rename = "SDP")]
    Sdp,
    #[serde(rename = "exact")]
    Exact,
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodTag::Ci => "CI",
            MethodTag::Nmci => "nmCI",
            MethodTag::Sdp => "SDP",
            MethodTag::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest relative cross-block entry zeroed by lenient nmCI.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projected_cross_block: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_status: Option<SolverStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

/// Output of a two-estimate linear fusion `x_f = K_a x_a + K_b x_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub gain_a: DMatrix<f64>,
    pub gain_b: DMatrix<f64>,
    pub bound: DMatrix<f64>,
    pub fused_mean: DVector<f64>,
    pub omega: Option<Vec<f64>>,
    pub method: MethodTag,
    pub labels: Vec<String>,
    pub diagnostics: Diagnostics,
}

impl FusionResult {
    /// `‖K_a + K_b − I‖_F`.
    pub fn gain_sum_residual(&self) -> f64 {
        let d = self.gain_a.nrows();
        (&self.gain_a + &self.gain_b - DMatrix::<f64>::identity(d, d)).norm()
    }

    pub fn trace(&self) -> f64 {
        self.bound.trace()
    }

    pub fn to_estimate(&self) -> GaussianEstimate {
        GaussianEstimate::new_unchecked(self.fused_mean.clone(), self.bound.clone(), self.labels.clone())
    }

    pub fn to_record(&self) -> FusionRecord {
        FusionRecord {
            method: self.method,
            labels: self.labels.clone(),
            fused_mean: self.fused_mean.iter().copied().collect(),
            bound: matrix_to_rows(&self.bound),
            gain_a: matrix_to_rows(&self.gain_a),
            gain_b: matrix_to_rows(&self.gain_b),
            omega: self.omega.clone(),
            trace: self.trace(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Serialized fusion output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionRecord {
    pub method: MethodTag,
    pub labels: Vec<String>,
    pub fused_mean: Vec<f64>,
    pub bound: Vec<Vec<f64>>,
    pub gain_a: Vec<Vec<f64>>,
    pub gain_b: Vec<Vec<f64>>,
    pub omega: Option<Vec<f64>>,
    pub trace: f64,
    pub diagnostics: Diagnostics,
}
