//! Loss, gradients, finite-difference Hessians and SGD training.

use serde::Serialize;

use super::{backward, forward, Mlp};
use crate::blocks::ClassArray;
use crate::dense::{self, Matrix};
use crate::error::{check_dim, Error, Result};
use crate::par;
use crate::rng::stream;

/// Central-difference step for [`hessian_fd`].
pub const FD_STEP: f64 = 1e-4;
/// Largest parameter count accepted by [`hessian_fd`].
pub const HESSIAN_LIMIT: usize = 2000;

fn check_data(net: &Mlp, data: &ClassArray) -> Result<()> {
    check_dim(net.input_dim(), data.dim())?;
    if data.classes() != net.classes() {
        return Err(Error::invalid(format!(
            "dataset has {} classes but the network outputs {}",
            data.classes(),
            net.classes()
        )));
    }
    Ok(())
}

/// Adds `scale * dl/dtheta` for one example into `grad` and returns its loss.
fn accumulate_example(net: &Mlp, x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
    let t = forward(net, x).expect("dimension checked by caller");
    let mut e = t.probs.clone();
    e[label] -= 1.0;
    let deltas = backward(net, &t, &e);
    for l in 1..=net.layers() {
        let off = net.offset(l);
        let dout = net.dims()[l];
        for (a, &ha) in t.h(l - 1).iter().enumerate() {
            if ha != 0.0 {
                dense::axpy(scale * ha, &deltas[l - 1], &mut grad[off + a * dout..off + (a + 1) * dout]);
            }
        }
    }
    t.loss(label)
}

/// Mean cross-entropy over the dataset plus `weight_decay / 2 * |theta|^2`,
/// and its gradient with respect to the flat parameters.
pub fn loss_and_gradient(net: &Mlp, data: &ClassArray, weight_decay: f64) -> Result<(f64, Vec<f64>)> {
    check_data(net, data)?;
    let p = net.num_params();
    let nc = data.classes();
    let count = data.n() * nc;
    let scale = 1.0 / count as f64;
    let acc = par::sum_vectors(count, p + 1, |e, acc| {
        let (grad, loss) = acc.split_at_mut(p);
        loss[0] += scale * accumulate_example(net, data.get(e / nc, e % nc), e % nc, scale, grad);
    });
    let mut grad = acc[..p].to_vec();
    let mut loss = acc[p];
    if weight_decay != 0.0 {
        let theta = net.flatten();
        dense::axpy(weight_decay, &theta, &mut grad);
        loss += 0.5 * weight_decay * dense::dot(&theta, &theta);
    }
    Ok((loss, grad))
}

/// Mean cross-entropy and accuracy.
pub fn dataset_loss(net: &Mlp, data: &ClassArray) -> Result<(f64, f64)> {
    check_data(net, data)?;
    let nc = data.classes();
    let count = data.n() * nc;
    let s = par::sum_vectors(count, 2, |e, acc| {
        let t = forward(net, data.get(e / nc, e % nc)).expect("dimension checked above");
        acc[0] += t.loss(e % nc);
        acc[1] += if t.predicted() == e % nc { 1.0 } else { 0.0 };
    });
    Ok((s[0] / count as f64, s[1] / count as f64))
}

/// Symmetrized central-difference Jacobian of `grad` at `theta`.
pub fn hessian_from_gradient<F>(grad: F, theta: &[f64], step: f64) -> Matrix
where
    F: Fn(&[f64]) -> Vec<f64> + Sync + Send,
{
    let p = theta.len();
    let cols = par::map_indexed(p, |k| {
        let mut t = theta.to_vec();
        t[k] = theta[k] + step;
        let plus = grad(&t);
        t[k] = theta[k] - step;
        let minus = grad(&t);
        plus.iter()
            .zip(&minus)
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect::<Vec<f64>>()
    });
    let mut h = Matrix::from_fn(p, p, |i, j| cols[j][i]);
    dense::symmetrize(&mut h);
    h
}

/// Hessian of the mean training loss (without weight decay) by central
/// differences of the analytic gradient.
pub fn hessian_fd(net: &Mlp, data: &ClassArray) -> Result<Matrix> {
    check_data(net, data)?;
    let p = net.num_params();
    if p > HESSIAN_LIMIT {
        return Err(Error::TooLarge {
            what: "finite-difference Hessian",
            size: p,
            limit: HESSIAN_LIMIT,
        });
    }
    let dims = net.dims().to_vec();
    let nc = data.classes();
    let count = data.n() * nc;
    let grad = |theta: &[f64]| {
        let m = Mlp::from_flat(&dims, theta).expect("same shape");
        let mut g = vec![0.0; p];
        for e in 0..count {
            accumulate_example(&m, data.get(e / nc, e % nc), e % nc, 1.0 / count as f64, &mut g);
        }
        g
    };
    Ok(hessian_from_gradient(grad, &net.flatten(), FD_STEP))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 100,
            batch: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn train_sgd(net: &Mlp, data: &ClassArray, cfg: &TrainConfig) -> Result<(Mlp, Vec<EpochLog>)> {
    train_sgd_with(net, data, cfg, |_, _, _| Ok(()))
}

/// SGD with heavy-ball momentum (`v <- mu v + g + eta theta`,
/// `theta <- theta - lr v`). Each epoch visits the examples in an order drawn
/// from stream `epoch` of the seed. `on_epoch` sees the model after every
/// epoch; epochs are numbered from 1.
pub fn train_sgd_with<F>(net: &Mlp, data: &ClassArray, cfg: &TrainConfig, mut on_epoch: F) -> Result<(Mlp, Vec<EpochLog>)>
where
    F: FnMut(usize, &Mlp, &EpochLog) -> Result<()>,
{
    use rand::seq::SliceRandom;

    cfg.validate()?;
    check_data(net, data)?;
    let dims = net.dims().to_vec();
    let nc = data.classes();
    let count = data.n() * nc;
    let p = net.num_params();
    let mut theta = net.flatten();
    let mut velocity = vec![0.0; p];
    let mut model = net.clone();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..count).collect();

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, epoch as u64));
        for batch in order.chunks(cfg.batch) {
            let mut grad = vec![0.0; p];
            let scale = 1.0 / batch.len() as f64;
            for &e in batch {
                accumulate_example(&model, data.get(e / nc, e % nc), e % nc, scale, &mut grad);
            }
            for k in 0..p {
                velocity[k] = cfg.momentum * velocity[k] + grad[k] + cfg.weight_decay * theta[k];
                theta[k] -= cfg.lr * velocity[k];
            }
            model = Mlp::from_flat(&dims, &theta)?;
        }
        let (loss, accuracy) = dataset_loss(&model, data)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        let log = EpochLog { epoch, loss, accuracy };
        on_epoch(epoch, &model, &log)?;
        logs.push(log);
    }
    Ok((model, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{analyze, Scope};
    use crate::rng::normal_vec;

    fn blobs(n: usize, seed: u64) -> ClassArray {
        let mut rng = stream(seed, 0);
        ClassArray::from_fn(n, 2, 2, |_, c| {
            let z = normal_vec(&mut rng, 2);
            let s = if c == 0 { -3.0 } else { 3.0 };
            vec![s + 0.5 * z[0], s + 0.5 * z[1]]
        })
        .unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = Mlp::init(&[3, 5, 4, 3], 1).unwrap();
        let mut rng = stream(2, 0);
        let data = ClassArray::new(2, 3, 3, normal_vec(&mut rng, 18)).unwrap();
        let (_, g) = loss_and_gradient(&net, &data, 1e-2).unwrap();
        let theta = net.flatten();
        let h = 1e-5;
        for k in (0..theta.len()).step_by(3) {
            let mut t = theta.clone();
            t[k] += h;
            let lp = loss_and_gradient(&Mlp::from_flat(net.dims(), &t).unwrap(), &data, 1e-2).unwrap().0;
            t[k] -= 2.0 * h;
            let lm = loss_and_gradient(&Mlp::from_flat(net.dims(), &t).unwrap(), &data, 1e-2).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7 * (1.0 + g[k].abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn quadratic_hessian() {
        let a = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 2.0]);
        let grad = |t: &[f64]| dense::matvec(&a, t);
        let h = hessian_from_gradient(grad, &[0.3, -0.7, 1.1], FD_STEP);
        assert!(dense::rel_frobenius_diff(&a, &h) < 1e-10);
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn linear_model_hessian_equals_g() {
        let net = Mlp::init(&[4, 3], 3).unwrap();
        let mut rng = stream(4, 0);
        let data = ClassArray::new(5, 3, 4, normal_vec(&mut rng, 60)).unwrap();
        let hess = hessian_fd(&net, &data).unwrap();
        let g = analyze(&net, &data).unwrap().g_dense(Scope::All).unwrap();
        assert!(dense::rel_frobenius_diff(&g, &hess) < 1e-4);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let net = Mlp::init(&[2, 4, 2], 5).unwrap();
        let cfg = TrainConfig { lr: 0.0, epochs: 3, ..Default::default() };
        let (out, logs) = train_sgd(&net, &blobs(10, 6), &cfg).unwrap();
        assert_eq!(out, net);
        assert_eq!(logs.len(), 3);
    }

    #[test]
    fn separable_blobs_are_learned_deterministically() {
        let net = Mlp::init(&[2, 8, 2], 7).unwrap();
        let data = blobs(20, 8);
        let cfg = TrainConfig { lr: 0.05, epochs: 200, batch: 8, seed: 3, ..Default::default() };
        let (a, logs) = train_sgd(&net, &data, &cfg).unwrap();
        let (b, _) = train_sgd(&net, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(logs.last().unwrap().accuracy, 1.0);
    }

    #[test]
    fn divergence_is_reported() {
        let net = Mlp::init(&[2, 8, 2], 9).unwrap();
        let cfg = TrainConfig { lr: 1e6, momentum: 0.0, epochs: 50, ..Default::default() };
        match train_sgd(&net, &blobs(10, 10), &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        let net = Mlp::init(&[2, 2], 0).unwrap();
        for cfg in [
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { batch: 0, ..Default::default() },
        ] {
            assert!(train_sgd(&net, &blobs(2, 0), &cfg).is_err());
        }
    }
}
