//! Residual bottleneck adapter `T(h) = h + W2·gelu(W1·h + b1) + b2`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{streams, Rng};

/// `z·Φ(z)` with the exact normal CDF.
pub fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z / core::f64::consts::SQRT_2))
}

pub fn gelu_grad(z: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(z / core::f64::consts::SQRT_2));
    let pdf = libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + z * pdf
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpAdapter {
    /// bottleneck × hidden_dim
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// hidden_dim × bottleneck
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub lambda_reg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl MlpAdapter {
    /// `W1` Gaussian with variance `1/hidden_dim`; `W2`, `b1`, `b2` zero, so
    /// the adapter starts as the identity.
    pub fn new(hidden_dim: usize, bottleneck: usize, lambda_reg: f64, seed: u64) -> Self {
        let mut rng = Rng::derived(seed, streams::MLP, 0);
        let s = 1.0 / libm::sqrt(hidden_dim.max(1) as f64);
        let w1: Vec<f64> = (0..bottleneck * hidden_dim).map(|_| s * rng.normal()).collect();
        MlpAdapter {
            w1: Matrix::from_vec(bottleneck, hidden_dim, w1).expect("shape"),
            b1: vec![0.0; bottleneck],
            w2: Matrix::zeros(hidden_dim, bottleneck),
            b2: vec![0.0; hidden_dim],
            lambda_reg,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn bottleneck(&self) -> usize {
        self.w1.rows()
    }

    fn pre_activation(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.w1.matvec(h).expect("adapter input dimension");
        linalg::axpy(&mut z, 1.0, &self.b1);
        z
    }

    /// The perturbation `f(h)`.
    pub fn perturbation(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.hidden_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.hidden_dim(),
                found: h.len(),
            });
        }
        let a: Vec<f64> = self.pre_activation(h).into_iter().map(gelu).collect();
        let mut f = self.w2.matvec(&a)?;
        linalg::axpy(&mut f, 1.0, &self.b2);
        Ok(f)
    }

    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.perturbation(h)?;
        linalg::axpy(&mut out, 1.0, h);
        Ok(out)
    }

    pub fn forward_rows(&self, x: &Matrix) -> Result<Matrix> {
        let rows = x.iter_rows().map(|r| self.forward(r)).collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::empty(x.cols()));
        }
        Matrix::from_rows(&rows)
    }

    /// `mean‖h + f(h) − μ‖²` over `ot` plus `λ·mean‖f(h)‖²` over `correct`.
    pub fn loss(&self, ot: &Matrix, correct: &Matrix, mu: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        if ot.rows() > 0 {
            let mut s = 0.0;
            for h in ot.iter_rows() {
                let t = self.forward(h)?;
                s += t.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            total += s / ot.rows() as f64;
        }
        if correct.rows() > 0 {
            let mut s = 0.0;
            for h in correct.iter_rows() {
                let f = self.perturbation(h)?;
                s += linalg::dot(&f, &f);
            }
            total += self.lambda_reg * s / correct.rows() as f64;
        }
        Ok(total)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, ot: &Matrix, correct: &Matrix, mu: &[f64]) -> Result<(f64, MlpGrads)> {
        let (d, b) = (self.hidden_dim(), self.bottleneck());
        let mut g = MlpGrads {
            w1: Matrix::zeros(b, d),
            b1: vec![0.0; b],
            w2: Matrix::zeros(d, b),
            b2: vec![0.0; d],
        };
        let mut total = 0.0;
        for (set, is_ot) in [(ot, true), (correct, false)] {
            if set.rows() == 0 {
                continue;
            }
            let weight = if is_ot { 1.0 } else { self.lambda_reg } / set.rows() as f64;
            for h in set.iter_rows() {
                if h.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: h.len() });
                }
                let z = self.pre_activation(h);
                let a: Vec<f64> = z.iter().map(|&v| gelu(v)).collect();
                let mut f = self.w2.matvec(&a)?;
                linalg::axpy(&mut f, 1.0, &self.b2);
                // residual whose squared norm is penalized
                let r: Vec<f64> = if is_ot {
                    f.iter().zip(h).zip(mu).map(|((fi, hi), mi)| fi + hi - mi).collect()
                } else {
                    f
                };
                total += weight * linalg::dot(&r, &r);
                let delta: Vec<f64> = r.iter().map(|v| 2.0 * weight * v).collect();
                linalg::axpy(&mut g.b2, 1.0, &delta);
                for (i, &di) in delta.iter().enumerate() {
                    if di != 0.0 {
                        linalg::axpy(g.w2.row_mut(i), di, &a);
                    }
                }
                let da = self.w2.tmatvec(&delta)?;
                for j in 0..b {
                    let dz = da[j] * gelu_grad(z[j]);
                    if dz != 0.0 {
                        g.b1[j] += dz;
                        linalg::axpy(g.w1.row_mut(j), dz, h);
                    }
                }
            }
        }
        Ok((total, g))
    }

    /// All parameters flattened as `W1, b1, W2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(self.w1.as_slice());
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(self.w2.as_slice());
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn n_params(&self) -> usize {
        2 * self.w1.rows() * self.w1.cols() + self.b1.len() + self.b2.len()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: p.len(),
            });
        }
        let (n1, nb1, n2) = (self.w1.as_slice().len(), self.b1.len(), self.w2.as_slice().len());
        self.w1.as_mut_slice().copy_from_slice(&p[..n1]);
        self.b1.copy_from_slice(&p[n1..n1 + nb1]);
        self.w2.as_mut_slice().copy_from_slice(&p[n1 + nb1..n1 + nb1 + n2]);
        self.b2.copy_from_slice(&p[n1 + nb1 + n2..]);
        Ok(())
    }
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut p = Vec::new();
        p.extend_from_slice(self.w1.as_slice());
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(self.w2.as_slice());
        p.extend_from_slice(&self.b2);
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub bottleneck: usize,
    pub lambda_reg: f64,
    pub epochs: usize,
    /// Peak Adam step size; decays to zero on a cosine schedule.
    pub lr: f64,
    /// `None` trains full-batch (one step per epoch).
    pub batch_size: Option<usize>,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        MlpTrainConfig {
            bottleneck: 64,
            lambda_reg: 0.01,
            epochs: 50,
            lr: 1e-2,
            batch_size: None,
            val_fraction: 0.2,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpTraining {
    pub adapter: MlpAdapter,
    /// Entry 0 is the untrained adapter; entry `e` follows epoch `e`.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Index into the loss curves of the returned snapshot.
    pub best_epoch: usize,
}

fn split(n: usize, val_fraction: f64, seed: u64, counter: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::derived(seed, streams::SPLIT, counter).shuffle(&mut idx);
    let n_val = if n >= 2 {
        (libm::round(val_fraction * n as f64) as usize).clamp(1, n - 1)
    } else {
        0
    };
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::B1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::B2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (libm::sqrt(vh) + Self::EPS);
        }
    }
}

/// Trains an adapter that maps `states_ot` toward `mu_correct` while
/// leaving `states_correct` nearly fixed. The snapshot with the lowest
/// validation loss (including the untrained start) is returned.
pub fn mlp_train(states_ot: &Matrix, states_correct: &Matrix, mu_correct: &[f64], cfg: &MlpTrainConfig) -> Result<MlpTraining> {
    if states_ot.rows() == 0 || states_correct.rows() == 0 {
        return Err(Error::InsufficientData("adapter training needs both state sets"));
    }
    let d = states_ot.cols();
    if states_correct.cols() != d || mu_correct.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: states_correct.cols(),
        });
    }
    if cfg.bottleneck == 0 || cfg.epochs == 0 || cfg.batch_size == Some(0) {
        return Err(Error::invalid("bottleneck, epochs and batch size must be positive"));
    }
    let (ot_tr, ot_va) = split(states_ot.rows(), cfg.val_fraction, cfg.seed, 0);
    let (c_tr, c_va) = split(states_correct.rows(), cfg.val_fraction, cfg.seed, 1);
    let ot_train = states_ot.select_rows(&ot_tr);
    let c_train = states_correct.select_rows(&c_tr);
    let ot_val = states_ot.select_rows(&ot_va);
    let c_val = states_correct.select_rows(&c_va);
    let has_val = ot_val.rows() > 0;

    let mut adapter = MlpAdapter::new(d, cfg.bottleneck, cfg.lambda_reg, cfg.seed);
    let val_of = |a: &MlpAdapter| -> Result<f64> {
        if has_val {
            a.loss(&ot_val, &c_val, mu_correct)
        } else {
            a.loss(&ot_train, &c_train, mu_correct)
        }
    };
    let mut train_loss = vec![adapter.loss(&ot_train, &c_train, mu_correct)?];
    let mut val_loss = vec![val_of(&adapter)?];
    let mut best = (val_loss[0], 0usize, adapter.clone());

    let n_params = adapter.n_params();
    let mut opt = Adam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let steps_per_epoch = match cfg.batch_size {
        None => 1,
        Some(bs) => ot_train.rows().div_ceil(bs),
    };
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let mut step = 0usize;
    let mut params = adapter.params();
    for epoch in 1..=cfg.epochs {
        let mut ot_order: Vec<usize> = (0..ot_train.rows()).collect();
        let mut c_order: Vec<usize> = (0..c_train.rows()).collect();
        if cfg.batch_size.is_some() {
            let mut rng = Rng::derived(cfg.seed, streams::MLP, epoch as u64);
            rng.shuffle(&mut ot_order);
            rng.shuffle(&mut c_order);
        }
        let c_chunk = c_order.len().div_ceil(steps_per_epoch).max(1);
        let ot_chunk = ot_order.len().div_ceil(steps_per_epoch).max(1);
        for s in 0..steps_per_epoch {
            let ob = &ot_order[(s * ot_chunk).min(ot_order.len())..((s + 1) * ot_chunk).min(ot_order.len())];
            let cb = &c_order[(s * c_chunk).min(c_order.len())..((s + 1) * c_chunk).min(c_order.len())];
            let (loss, grads) = if steps_per_epoch == 1 {
                adapter.loss_and_grad(&ot_train, &c_train, mu_correct)?
            } else {
                adapter.loss_and_grad(&ot_train.select_rows(ob), &c_train.select_rows(cb), mu_correct)?
            };
            if !loss.is_finite() {
                return Err(Error::Numerical(alloc::format!("adapter loss diverged at epoch {epoch}")));
            }
            let lr = cfg.lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * step as f64 / total_steps));
            opt.step(&mut params, &grads.flatten(), lr);
            adapter.set_params(&params)?;
            step += 1;
        }
        let tl = adapter.loss(&ot_train, &c_train, mu_correct)?;
        let vl = val_of(&adapter)?;
        if !tl.is_finite() || !vl.is_finite() {
            return Err(Error::Numerical(alloc::format!("adapter loss diverged at epoch {epoch}")));
        }
        train_loss.push(tl);
        val_loss.push(vl);
        if vl < best.0 {
            best = (vl, epoch, adapter.clone());
        }
    }
    Ok(MlpTraining {
        adapter: best.2,
        train_loss,
        val_loss,
        best_epoch: best.1,
    })
}

/// `1 − ‖mean(T(h)) − μ‖ / ‖mean(h) − μ‖`.
pub fn centroid_distance_reduction(adapter: &MlpAdapter, states_ot: &Matrix, mu_correct: &[f64]) -> Result<f64> {
    if states_ot.rows() == 0 {
        return Err(Error::InsufficientData("no states"));
    }
    let before = linalg::norm(&linalg::sub(&states_ot.column_means(), mu_correct));
    if !(before > 0.0) {
        return Err(Error::DegenerateDirection("states already sit on the target centroid"));
    }
    let moved = adapter.forward_rows(states_ot)?;
    let after = linalg::norm(&linalg::sub(&moved.column_means(), mu_correct));
    Ok(1.0 - after / before)
}
