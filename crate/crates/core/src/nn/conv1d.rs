use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::{uniform, ParamSet, Scalar};
use crate::error::{Error, Result};

/// 1-D convolution over time with "same" zero padding and an odd kernel.
///
/// `y[t, o] = b[o] + Σ_k Σ_i w[o, i, k] · x[t + k - (K-1)/2, i]`
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<F: Scalar> {
    pub name: String,
    /// out x in x kernel
    pub weight: Array3<F>,
    pub bias: Array1<F>,
}

/// Input retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv1dCache<F: Scalar> {
    input: Array2<F>,
}

impl<F: Scalar> Conv1d<F> {
    pub fn zeros(name: &str, input: usize, output: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!("{name}: kernel width {kernel} must be odd")));
        }
        Ok(Self {
            name: name.to_string(),
            weight: Array3::zeros((output, input, kernel)),
            bias: Array1::zeros(output),
        })
    }

    pub fn init<R: Rng>(name: &str, input: usize, output: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        let mut c = Self::zeros(name, input, output, kernel)?;
        let bound = 1.0 / ((input * kernel) as f64).sqrt();
        c.weight.mapv_inplace(|_| uniform(rng, bound));
        Ok(c)
    }

    pub fn input_size(&self) -> usize {
        self.weight.dim().1
    }

    pub fn output_size(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn cast<G: Scalar>(&self) -> Conv1d<G> {
        Conv1d {
            name: self.name.clone(),
            weight: self.weight.mapv(|x| G::of(x.f64())),
            bias: self.bias.mapv(|x| G::of(x.f64())),
        }
    }

    fn tap(&self, k: usize) -> Array2<F> {
        self.weight.slice(s![.., .., k]).to_owned()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<(Array2<F>, Conv1dCache<F>)> {
        if x.ncols() != self.input_size() {
            return Err(Error::shape(format!(
                "{}: input channels {} != {}",
                self.name,
                x.ncols(),
                self.input_size()
            )));
        }
        let t_len = x.nrows();
        let half = (self.kernel() - 1) / 2;
        let mut y = Array2::<F>::zeros((t_len, self.output_size()));
        y += &self.bias;
        for k in 0..self.kernel() {
            let w = self.tap(k);
            // output t reads input t + k - half
            let (lo, hi) = shifted_range(t_len, k, half);
            if lo < hi {
                let src = x.slice(s![lo + k - half..hi + k - half, ..]);
                let mut dst = y.slice_mut(s![lo..hi, ..]);
                dst += &src.dot(&w.t());
            }
        }
        Ok((y, Conv1dCache { input: x.to_owned() }))
    }

    pub fn backward(&self, cache: &Conv1dCache<F>, grad_out: ArrayView2<F>) -> Result<(Conv1d<F>, Array2<F>)> {
        let x = &cache.input;
        let t_len = x.nrows();
        if grad_out.dim() != (t_len, self.output_size()) || x.ncols() != self.input_size() {
            return Err(Error::shape(format!("{}: backward shapes", self.name)));
        }
        let half = (self.kernel() - 1) / 2;
        let mut grads = self.zeros_like();
        grads.bias = grad_out.sum_axis(Axis(0));
        let mut dx = Array2::<F>::zeros(x.dim());
        for k in 0..self.kernel() {
            let (lo, hi) = shifted_range(t_len, k, half);
            if lo >= hi {
                continue;
            }
            let src = x.slice(s![lo + k - half..hi + k - half, ..]);
            let g = grad_out.slice(s![lo..hi, ..]);
            grads.weight.slice_mut(s![.., .., k]).assign(&g.t().dot(&src));
            let mut dsrc = dx.slice_mut(s![lo + k - half..hi + k - half, ..]);
            dsrc += &g.dot(&self.tap(k));
        }
        Ok((grads, dx))
    }
}

/// Output rows `[lo, hi)` whose tap `k` reads a valid input row.
fn shifted_range(t_len: usize, k: usize, half: usize) -> (usize, usize) {
    let lo = half.saturating_sub(k);
    let hi = (t_len + half).saturating_sub(k).min(t_len);
    (lo, hi)
}

impl<F: Scalar> ParamSet<F> for Conv1d<F> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn width_one_is_a_linear_map() {
        let mut conv = Conv1d::<f64>::zeros("proj", 3, 3, 1).unwrap();
        for i in 0..3 {
            conv.weight[[i, i, 0]] = 1.0;
        }
        conv.bias.fill(0.5);
        let x = Array2::from_shape_fn((4, 3), |(t, d)| (t * 3 + d) as f64);
        let (y, _) = conv.forward(x.view()).unwrap();
        assert_eq!(y, &x + 0.5);
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv1d::<f64>::init("c", 2, 40, 3, &mut rng).unwrap();
        conv.bias = Array1::from_shape_fn(40, |i| i as f64);
        let (y, _) = conv.forward(Array2::zeros((5, 2)).view()).unwrap();
        assert_eq!(y.dim(), (5, 40));
        for row in y.rows() {
            assert_eq!(row, conv.bias);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Conv1d::<f32>::zeros("c", 2, 2, 2).is_err());
    }

    #[test]
    fn same_length_output_with_wide_kernel_on_short_input() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d::<f64>::init("c", 2, 3, 5, &mut rng).unwrap();
        for t_len in 0..4 {
            let x = Array2::from_elem((t_len, 2), 1.0);
            let (y, cache) = conv.forward(x.view()).unwrap();
            assert_eq!(y.dim(), (t_len, 3));
            let (_, dx) = conv.backward(&cache, Array2::ones((t_len, 3)).view()).unwrap();
            assert_eq!(dx.dim(), (t_len, 2));
        }
    }
}
