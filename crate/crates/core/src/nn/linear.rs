use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{uniform, ParamSet, Scalar};
use crate::error::{Error, Result};

/// Frame-wise affine map `y_t = W x_t + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F: Scalar> {
    pub name: String,
    /// out x in
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        Self {
            name: name.to_string(),
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Weights ~ U(-1/√in, 1/√in), zero bias.
    pub fn init<R: Rng>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(name, input, output);
        let bound = 1.0 / (input as f64).sqrt();
        l.weight.mapv_inplace(|_| uniform(rng, bound));
        l
    }

    pub fn input_size(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.nrows()
    }

    pub fn cast<G: Scalar>(&self) -> Linear<G> {
        Linear {
            name: self.name.clone(),
            weight: self.weight.mapv(|x| G::of(x.f64())),
            bias: self.bias.mapv(|x| G::of(x.f64())),
        }
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        if x.ncols() != self.input_size() {
            return Err(Error::shape(format!(
                "{}: input dim {} != {}",
                self.name,
                x.ncols(),
                self.input_size()
            )));
        }
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        Ok(y)
    }

    /// Returns parameter gradients and the gradient with respect to `x`.
    pub fn backward(&self, x: ArrayView2<F>, grad_out: ArrayView2<F>) -> Result<(Linear<F>, Array2<F>)> {
        if grad_out.dim() != (x.nrows(), self.output_size()) || x.ncols() != self.input_size() {
            return Err(Error::shape(format!("{}: backward shapes", self.name)));
        }
        let grads = Linear {
            name: self.name.clone(),
            weight: grad_out.t().dot(&x),
            bias: grad_out.sum_axis(Axis(0)),
        };
        Ok((grads, grad_out.dot(&self.weight)))
    }
}

impl<F: Scalar> ParamSet<F> for Linear<F> {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            (format!("{}.weight", self.name), self.weight.shape().to_vec()),
            (format!("{}.bias", self.name), self.bias.shape().to_vec()),
        ]
    }

    fn slices(&self) -> Vec<&[F]> {
        vec![self.weight.as_slice().unwrap(), self.bias.as_slice().unwrap()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        vec![self.weight.as_slice_mut().unwrap(), self.bias.as_slice_mut().unwrap()]
    }
}
