//! Intervention kernels on hidden states.
//!
//! Which traces an intervention touches (mode-specific vs uniform) is decided
//! by the caller; everything here maps one state to one state.

mod adapter;

pub use adapter::{centroid_distance_reduction, gelu, gelu_grad, mlp_train, MlpAdapter, MlpGrads, MlpTrainConfig, MlpTraining};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, gram_schmidt, normalized, sym_eigen, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Additive,
    MultiLayer,
    RankK,
    Erase,
    EraseWhitened,
    ProbeGated,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Binary,
    Scaled,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub mode: GateMode,
    /// Used by [`GateMode::Threshold`].
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_theta() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub layers: Vec<usize>,
    pub alpha: f64,
    pub direction_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<Gate>,
}

impl InterventionSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::validation("alpha", "must be finite"));
        }
        if self.layers.is_empty() {
            return Err(Error::validation("layers", "must not be empty"));
        }
        if self.kind == InterventionKind::RankK && !self.k.is_some_and(|k| k >= 1) {
            return Err(Error::validation("k", "rank_k needs k ≥ 1"));
        }
        if self.kind == InterventionKind::ProbeGated && self.gate.is_none() {
            return Err(Error::validation("gate", "probe_gated needs a gate"));
        }
        Ok(())
    }
}

/// `h + α·v`.
pub fn additive_steer(h: &[f64], v: &[f64], alpha: f64) -> Vec<f64> {
    h.iter().zip(v).map(|(x, d)| x + alpha * d).collect()
}

/// `n` layers centered on `center`, `stride` apart. `n` must be odd.
pub fn multi_layer_targets(center: usize, n: usize, stride: usize, n_layers: usize) -> Result<Vec<usize>> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::invalid("layer count must be odd"));
    }
    let half = stride * (n - 1) / 2;
    if half > center || center + half >= n_layers {
        return Err(Error::OutOfRange {
            index: if half > center { 0 } else { center + half },
            limit: n_layers,
        });
    }
    Ok((0..n).map(|i| center - half + i * stride).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankKBasis {
    /// Orthonormal rows.
    pub basis: Matrix,
    pub requested: usize,
    /// Set when fewer than `requested` directions were available.
    pub truncated: bool,
}

/// Top-`k` right singular vectors of `m` (one direction per row), from the
/// eigenvectors of `m mᵀ`.
pub fn rank_k_basis(m: &Matrix, k: usize) -> Result<RankKBasis> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if m.rows() == 0 {
        return Err(Error::InsufficientData("no directions"));
    }
    let eig = sym_eigen(&m.gram_rows())?;
    let top = eig.values[0].max(0.0);
    let mut rows = Vec::new();
    for i in 0..k.min(m.rows()) {
        let lam = eig.values[i];
        if !(lam > 1e-12 * top) || top == 0.0 {
            break;
        }
        rows.push(m.tmatvec(eig.vectors.row(i))?);
    }
    let basis = gram_schmidt(&rows, 1e-8);
    let truncated = basis.len() < k;
    let basis = if basis.is_empty() {
        Matrix::empty(m.cols())
    } else {
        Matrix::from_rows(&basis)?
    };
    Ok(RankKBasis {
        basis,
        requested: k,
        truncated,
    })
}

/// `B Bᵀ v` for a row basis `B`.
pub fn project_correction(v: &[f64], basis: &Matrix) -> Result<Vec<f64>> {
    let coef = basis.matvec(v)?;
    basis.tmatvec(&coef)
}

const UNIT_RENORM_TOL: f64 = 1e-3;

/// `h ↦ h − ⟨h, d̂⟩ d̂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Erasure {
    pub direction: Vec<f64>,
    /// The input was within tolerance of unit norm and was rescaled.
    pub renormalized: bool,
}

impl Erasure {
    pub fn new(d: &[f64]) -> Result<Self> {
        let n = linalg::norm(d);
        if (n - 1.0).abs() <= 1e-12 {
            return Ok(Erasure {
                direction: d.to_vec(),
                renormalized: false,
            });
        }
        if (n - 1.0).abs() <= UNIT_RENORM_TOL {
            return Ok(Erasure {
                direction: linalg::scaled(d, 1.0 / n),
                renormalized: true,
            });
        }
        Err(Error::validation(
            "direction norm",
            alloc::format!("erasure direction has norm {n}"),
        ))
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let c = dot(h, &self.direction);
        let mut out = h.to_vec();
        linalg::axpy(&mut out, -c, &self.direction);
        out
    }

    pub fn apply_rows(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let c = dot(row, &self.direction);
            linalg::axpy(row, -c, &self.direction);
        }
        out
    }
}

pub fn erasure_projector(d_hat: &[f64]) -> Result<Erasure> {
    Erasure::new(d_hat)
}

pub const WHITEN_EPS: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Whitened {
    pub direction: Vec<f64>,
    /// Eigenvalues raised to the floor.
    pub floored: usize,
}

/// `normalize(Σ_w^{-1/2} Δμ)` with eigenvalues floored at `eps·λ_max`.
pub fn whitened_direction(delta_mu: &[f64], sigma_w: &Matrix, eps: f64) -> Result<Whitened> {
    let d = delta_mu.len();
    if sigma_w.rows() != d || sigma_w.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: sigma_w.rows(),
        });
    }
    let mut sym = sigma_w.clone();
    for i in 0..d {
        for j in (i + 1)..d {
            let (a, b) = (sigma_w.get(i, j), sigma_w.get(j, i));
            if libm::fabs(a - b) > SYMMETRY_TOL {
                return Err(Error::validation("sigma_w", "covariance is not symmetric"));
            }
            let m = 0.5 * (a + b);
            sym.set(i, j, m);
            sym.set(j, i, m);
        }
    }
    let eig = sym_eigen(&sym)?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::Numerical("within-class covariance is zero".into()));
    }
    let floor = eps * top;
    let mut floored = 0;
    let mut out = vec![0.0; d];
    for (i, &lam) in eig.values.iter().enumerate() {
        let l = if lam < floor {
            floored += 1;
            floor
        } else {
            lam
        };
        let u = eig.vectors.row(i);
        let c = dot(u, delta_mu) / libm::sqrt(l);
        linalg::axpy(&mut out, c, u);
    }
    let direction = normalized(&out, 0.0).ok_or(Error::DegenerateDirection("zero mean difference"))?;
    Ok(Whitened { direction, floored })
}

/// Pooled within-class covariance (1/n) of several groups, each centered
/// on its own mean.
pub fn within_class_covariance(groups: &[&Matrix]) -> Result<Matrix> {
    let d = groups
        .first()
        .ok_or(Error::InsufficientData("no groups"))?
        .cols();
    let mut acc = Matrix::zeros(d, d);
    let mut n = 0usize;
    for g in groups {
        if g.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: g.cols(),
            });
        }
        let c = g.center(&g.column_means());
        let gram = c.gram_cols();
        for (a, b) in acc.as_mut_slice().iter_mut().zip(gram.as_slice()) {
            *a += b;
        }
        n += g.rows();
    }
    if n == 0 {
        return Err(Error::InsufficientData("groups are empty"));
    }
    acc.scale(1.0 / n as f64);
    Ok(acc)
}

/// Multiplier on α given the probe's probability that the trace is correct.
pub fn probe_gate(p_correct: f64, gate: &Gate) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_correct) {
        return Err(Error::invalid(alloc::format!("probability {p_correct} outside [0, 1]")));
    }
    Ok(match gate.mode {
        GateMode::Binary => f64::from(u8::from(p_correct < 0.5)),
        GateMode::Threshold => f64::from(u8::from(p_correct < gate.theta)),
        GateMode::Scaled => 1.0 - p_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn steer_examples() {
        assert_eq!(additive_steer(&[1.0, 2.0], &[1.0, 0.0], 0.0), vec![1.0, 2.0]);
        assert_eq!(additive_steer(&[0.0; 3], &[1.0, 0.0, 0.0], 1.5), vec![1.5, 0.0, 0.0]);
    }

    #[test]
    fn layer_targets() {
        assert_eq!(multi_layer_targets(15, 3, 2, 32).unwrap(), vec![13, 15, 17]);
        assert_eq!(multi_layer_targets(15, 5, 2, 32).unwrap(), vec![11, 13, 15, 17, 19]);
        assert_eq!(multi_layer_targets(15, 1, 2, 32).unwrap(), vec![15]);
        assert!(multi_layer_targets(1, 3, 2, 32).is_err());
        assert!(multi_layer_targets(30, 3, 2, 32).is_err());
    }

    #[test]
    fn rank_k_examples() {
        let m = Matrix::from_rows(&[[3.0, 4.0, 0.0]]).unwrap();
        let b = rank_k_basis(&m, 1).unwrap();
        let p = project_correction(&[3.0, 4.0, 0.0], &b.basis).unwrap();
        assert!(p.iter().zip([3.0, 4.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        let two = rank_k_basis(&Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]).unwrap(), 2).unwrap();
        let p = project_correction(&[0.3, -0.7, 0.0], &two.basis).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-12 && (p[1] + 0.7).abs() < 1e-12);
        let over = rank_k_basis(&m, 3).unwrap();
        assert!(over.truncated);
        assert_eq!(over.basis.rows(), 1);
    }

    #[test]
    fn erasure_examples() {
        let e = Erasure::new(&[0.6, 0.8]).unwrap();
        let z = e.apply(&[0.6, 0.8]);
        assert!(z.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(e.apply(&[-0.8, 0.6]), vec![-0.8, 0.6]);
        assert!(Erasure::new(&[1.0005, 0.0]).unwrap().renormalized);
        assert!(Erasure::new(&[1.1, 0.0]).is_err());
        let mut rng = Rng::new(1);
        let h: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
        let once = e.apply(&h);
        let twice = e.apply(&once);
        assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn whitening_examples() {
        let w = whitened_direction(&[3.0, 4.0], &Matrix::identity(2), WHITEN_EPS).unwrap();
        assert!((w.direction[0] - 0.6).abs() < 1e-12);
        let mut s = Matrix::zeros(2, 2);
        s.set(0, 0, 4.0);
        s.set(1, 1, 1.0);
        let w = whitened_direction(&[2.0, 1.0], &s, WHITEN_EPS).unwrap();
        let r = core::f64::consts::FRAC_1_SQRT_2;
        assert!((w.direction[0] - r).abs() < 1e-12 && (w.direction[1] - r).abs() < 1e-12);
        let mut deficient = Matrix::zeros(2, 2);
        deficient.set(0, 0, 1.0);
        let w = whitened_direction(&[1.0, 1.0], &deficient, WHITEN_EPS).unwrap();
        assert_eq!(w.floored, 1);
        assert!(w.direction.iter().all(|v| v.is_finite()));
        let mut asym = Matrix::identity(2);
        asym.set(0, 1, 0.1);
        assert!(whitened_direction(&[1.0, 0.0], &asym, WHITEN_EPS).is_err());
    }

    #[test]
    fn gate_examples() {
        let g = |mode| Gate { mode, theta: 0.3 };
        assert_eq!(probe_gate(0.6, &g(GateMode::Binary)).unwrap(), 0.0);
        assert_eq!(probe_gate(0.25, &g(GateMode::Threshold)).unwrap(), 1.0);
        assert!((probe_gate(0.2, &g(GateMode::Scaled)).unwrap() - 0.8).abs() < 1e-15);
        assert!(probe_gate(1.2, &g(GateMode::Scaled)).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = InterventionSpec {
            kind: InterventionKind::RankK,
            layers: vec![3],
            alpha: 1.0,
            direction_name: "x".into(),
            k: None,
            gate: None,
        };
        assert!(s.validate().is_err());
        s.k = Some(2);
        s.validate().unwrap();
        s.alpha = f64::NAN;
        assert!(s.validate().is_err());
    }
}
