use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, MEMORY_PREFIX};
use crate::trainer::{InitScheme, Param, ParameterStore};

/// Standard deviation of Gaussian-initialized weights.
pub const GAUSSIAN_STD: f64 = 0.01;

/// Random `n x n` orthogonal matrix: Q from the QR factorization of a
/// standard Gaussian matrix, with column signs fixed so `diag(R) > 0`.
pub fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Tensor::matrix(n, n, (0..n * n).map(|k| q[(k / n, k % n)]).collect()).expect("square shape")
}

pub fn init_tensor<R: Rng + ?Sized>(shape: &[usize], scheme: InitScheme, rng: &mut R) -> Result<Tensor> {
    match scheme {
        InitScheme::Zero => Ok(Tensor::zeros(shape)),
        InitScheme::Gaussian => {
            let normal = Normal::new(0.0, GAUSSIAN_STD).expect("positive std");
            let mut t = Tensor::zeros(shape);
            for v in t.data_mut() {
                *v = normal.sample(rng);
            }
            Ok(t)
        }
        InitScheme::Orthogonal => match shape {
            [a, b] if a == b => Ok(orthogonal(*a, rng)),
            _ => Err(Error::Dimension(format!(
                "orthogonal init needs a square matrix, got {shape:?}"
            ))),
        },
    }
}

/// Fresh parameters for `spec`, drawn in name order.
pub fn init_params<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<ParameterStore> {
    spec.validate()?;
    let mut store = ParameterStore::new();
    for (name, shape, scheme) in spec.param_specs() {
        let value = init_tensor(&shape, scheme, rng)?;
        store.insert(name, Param::new(value, scheme));
    }
    Ok(store)
}

/// Parameters for `target` that reuse every tensor of a trained `baseline`
/// with a matching name. Memory parameters are initialized fresh; baseline
/// tensors the target lacks are dropped. Optimizer state starts at zero.
pub fn pretrain_transfer<R: Rng + ?Sized>(
    baseline: &ParameterStore,
    target: &ModelSpec,
    rng: &mut R,
) -> Result<ParameterStore> {
    let mut store = init_params(target, rng)?;
    for (name, param) in store.iter_mut() {
        if name.starts_with(MEMORY_PREFIX) {
            continue;
        }
        let source = baseline
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        if source.value.shape() != param.value.shape() {
            return Err(Error::Dimension(format!(
                "`{name}` has shape {:?} in the baseline but {:?} in the target",
                source.value.shape(),
                param.value.shape()
            )));
        }
        param.value = source.value.clone();
    }
    Ok(store)
}
