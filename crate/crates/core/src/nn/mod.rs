//! Small fully connected networks with hand-written reverse-mode gradients.

mod loss;
mod mlp;

pub use loss::{
    accumulate_loss_grad, grad, nll_categorical, nll_gaussian, total_loss, ClassHead, LossKind,
    RegressionHead, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use mlp::{Activation, MlpSpec, ParamVector, Scratch};

use serde::{Deserialize, Serialize};

/// Supervised examples. Classification labels are stored as integral `f64`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Data {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Data {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Self {
        assert_eq!(xs.len(), ys.len(), "inputs and targets differ in length");
        Self { xs, ys }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Data {
        Data {
            xs: indices.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: indices.iter().map(|&i| self.ys[i]).collect(),
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.ys.iter().map(|&y| y as usize).collect()
    }
}
