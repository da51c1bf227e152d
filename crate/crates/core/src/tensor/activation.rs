//! Elementwise nonlinearities.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    HSwish,
    Relu,
    Swish,
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `x * clamp((x + 3) / 6, 0, 1)`.
pub fn h_swish<T: Scalar>(x: T) -> T {
    let three = T::of(3.0);
    x * ((x + three) / T::of(6.0)).max(T::zero()).min(T::one())
}

/// 0 for `x <= -3`, 1 for `x >= 3`, `(2x + 3) / 6` in between.
pub fn h_swish_grad<T: Scalar>(x: T) -> T {
    let three = T::of(3.0);
    if x <= -three {
        T::zero()
    } else if x >= three {
        T::one()
    } else {
        (T::of(2.0) * x + three) / T::of(6.0)
    }
}

pub fn swish<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

pub fn swish_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}

pub fn relu<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

impl ActivationKind {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            ActivationKind::HSwish => h_swish(x),
            ActivationKind::Relu => relu(x),
            ActivationKind::Swish => swish(x),
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            ActivationKind::HSwish => h_swish_grad(x),
            ActivationKind::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ActivationKind::Swish => swish_grad(x),
        }
    }

    /// Points where the derivative jumps; finite-difference checks avoid them.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            ActivationKind::HSwish => &[-3.0, 3.0],
            ActivationKind::Relu => &[0.0],
            ActivationKind::Swish => &[],
        }
    }
}

pub fn activate<T: Scalar>(kind: ActivationKind, x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

/// `dy * f'(x)`.
pub fn activate_backward<T: Scalar>(kind: ActivationKind, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(Error::shape(format!(
            "activation gradient {:?} vs input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| g * kind.derivative(xv))
        .collect();
    Tensor::new(x.shape(), data)
}

pub fn sigmoid_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Backward from the sigmoid's own output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return Err(Error::shape("sigmoid gradient shape mismatch"));
    }
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(y.shape(), data)
}
