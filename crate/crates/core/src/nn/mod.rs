//! Numerical kernel: dense layers, likelihoods, Gaussian posteriors,
//! Adam and a finite-difference gradient checker.
//!
//! Every step function in this crate returns the objective to be *maximized*
//! together with its gradient (ascent direction). [`Adam`] performs descent,
//! so callers negate before stepping.

pub mod adam;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod rng;

pub use adam::Adam;
pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use layer::{Activation, DenseLayer, Mlp, MlpCache, MlpSpec};
pub use loss::{
    content_ll, kl_diag_gaussian, multinomial_ll, sample_gaussian, ContentLikelihood,
    GaussianPosterior, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use rng::{derive_seed, Rng};

use ndarray::{Array1, Array2};

/// Flat view over a set of parameter (or gradient) tensors.
///
/// Two values of matching structure must list their tensors in the same
/// order with the same lengths.
pub trait Tensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Tensors for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

impl Tensors for Array2<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice().expect("standard layout")]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_slice_mut().expect("standard layout")]
    }
}

impl Tensors for Array1<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice().expect("standard layout")]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_slice_mut().expect("standard layout")]
    }
}
