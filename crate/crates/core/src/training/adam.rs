//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(shapes: &[&[usize]]) -> Self {
        AdamState {
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    fn check(&self, params: &[&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() || p.shape() != self.v[i].shape() {
                return Err(Error::Contract(format!(
                    "adam: slot {i} param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        Ok(())
    }
}

/// One update over all tensors, written as whole-slice passes with the
/// bias corrections folded into two scalars.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    state.check(params, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let step = T::from_f64(cfg.lr / bc1);
    let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
    let eps = T::from_f64(cfg.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let mut pd = std::mem::replace(*p, Tensor::scalar(T::zero())).into_data();
        let mut md = std::mem::replace(&mut state.m[i], Tensor::scalar(T::zero())).into_data();
        let mut vd = std::mem::replace(&mut state.v[i], Tensor::scalar(T::zero())).into_data();
        for (((w, &g), m), v) in pd.iter_mut().zip(grads[i].data()).zip(md.iter_mut()).zip(vd.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *w -= step * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
        }
        let shape = grads[i].shape();
        **p = Tensor::new(shape, pd)?;
        state.m[i] = Tensor::new(shape, md)?;
        state.v[i] = Tensor::new(shape, vd)?;
    }
    Ok(())
}

/// Textbook element-by-element update; the oracle for [`adam_step`].
pub fn adam_step_reference<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    state.check(params, grads)?;
    state.step += 1;
    let t = state.step as i32;
    for i in 0..params.len() {
        let n = params[i].len();
        let shape = params[i].shape().to_vec();
        let mut pd = params[i].data().to_vec();
        let mut md = state.m[i].data().to_vec();
        let mut vd = state.v[i].data().to_vec();
        for j in 0..n {
            let g = grads[i].data()[j].to_f64();
            let m = cfg.beta1 * md[j].to_f64() + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * vd[j].to_f64() + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            let w = pd[j].to_f64() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            md[j] = T::from_f64(m);
            vd[j] = T::from_f64(v);
            pd[j] = T::from_f64(w);
        }
        *params[i] = Tensor::new(&shape, pd)?;
        state.m[i] = Tensor::new(&shape, md)?;
        state.v[i] = Tensor::new(&shape, vd)?;
    }
    Ok(())
}
