//! Multi-layer LSTM with full backpropagation through time.
//!
//! Gate order inside the stacked `4H` dimension is input, forget, cell,
//! output:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{sigmoid, uniform, ParamSet, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<F: Scalar> {
    /// 4H x D
    pub w_ih: Array2<F>,
    /// 4H x H
    pub w_hh: Array2<F>,
    /// 4H
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack<F: Scalar> {
    pub name: String,
    pub layers: Vec<LstmLayer<F>>,
}

/// Per-layer `(h, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F: Scalar> {
    pub h: Vec<Array1<F>>,
    pub c: Vec<Array1<F>>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        Self {
            h: vec![Array1::zeros(hidden); layers],
            c: vec![Array1::zeros(hidden); layers],
        }
    }
}

#[derive(Debug, Clone)]
struct LayerCache<F: Scalar> {
    input: Array2<F>,
    // post-activation gates, T x 4H
    gates: Array2<F>,
    c: Array2<F>,
    tanh_c: Array2<F>,
    h: Array2<F>,
    h0: Array1<F>,
    c0: Array1<F>,
}

/// Intermediates of one forward pass, consumed by [`LstmStack::backward`].
#[derive(Debug, Clone)]
pub struct LstmCache<F: Scalar> {
    layers: Vec<LayerCache<F>>,
}

impl<F: Scalar> LstmCache<F> {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<F: Scalar> LstmStack<F> {
    pub fn zeros(name: &str, input: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let d = if l == 0 { input } else { hidden };
                LstmLayer {
                    w_ih: Array2::zeros((4 * hidden, d)),
                    w_hh: Array2::zeros((4 * hidden, hidden)),
                    bias: Array1::zeros(4 * hidden),
                }
            })
            .collect();
        Self {
            name: name.to_string(),
            layers,
        }
    }

    /// Weights ~ U(-1/√H, 1/√H), forget-gate bias 1, other biases 0.
    pub fn init<R: Rng>(name: &str, input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(name, input, hidden, layers);
        let bound = 1.0 / (hidden as f64).sqrt();
        for layer in &mut s.layers {
            layer.w_ih.mapv_inplace(|_| uniform(rng, bound));
            layer.w_hh.mapv_inplace(|_| uniform(rng, bound));
            layer.bias.slice_mut(s![hidden..2 * hidden]).fill(F::one());
        }
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].w_ih.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].w_hh.ncols()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Analytic parameter count: `4 (H (D + H) + H)` per layer.
    pub fn param_count(input: usize, hidden: usize, layers: usize) -> usize {
        (0..layers)
            .map(|l| {
                let d = if l == 0 { input } else { hidden };
                4 * (hidden * (d + hidden) + hidden)
            })
            .sum()
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.num_layers() == other.num_layers()
            && self.input_size() == other.input_size()
            && self.hidden_size() == other.hidden_size()
    }

    pub fn cast<G: Scalar>(&self) -> LstmStack<G> {
        let c2 = |a: &Array2<F>| a.mapv(|x| G::of(x.f64()));
        LstmStack {
            name: self.name.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w_ih: c2(&l.w_ih),
                    w_hh: c2(&l.w_hh),
                    bias: l.bias.mapv(|x| G::of(x.f64())),
                })
                .collect(),
        }
    }

    pub fn forward(
        &self,
        inputs: ArrayView2<F>,
        initial: Option<&LstmState<F>>,
    ) -> Result<(Array2<F>, LstmState<F>, LstmCache<F>)> {
        let hidden = self.hidden_size();
        if inputs.ncols() != self.input_size() {
            return Err(Error::shape(format!(
                "{}: input dim {} != {}",
                self.name,
                inputs.ncols(),
                self.input_size()
            )));
        }
        if let Some(st) = initial {
            if st.h.len() != self.num_layers()
                || st.h.iter().chain(&st.c).any(|v| v.len() != hidden)
            {
                return Err(Error::shape(format!("{}: initial state shape", self.name)));
            }
        }
        let zeros = LstmState::zeros(self.num_layers(), hidden);
        let init = initial.unwrap_or(&zeros);
        let mut caches = Vec::with_capacity(self.num_layers());
        let mut x = inputs.to_owned();
        let mut final_state = LstmState::zeros(self.num_layers(), hidden);
        for (l, layer) in self.layers.iter().enumerate() {
            let cache = layer_forward(layer, x, &init.h[l], &init.c[l]);
            let t_len = cache.h.nrows();
            if t_len > 0 {
                final_state.h[l] = cache.h.row(t_len - 1).to_owned();
                final_state.c[l] = cache.c.row(t_len - 1).to_owned();
            } else {
                final_state.h[l] = init.h[l].clone();
                final_state.c[l] = init.c[l].clone();
            }
            x = cache.h.clone();
            caches.push(cache);
        }
        Ok((x, final_state, LstmCache { layers: caches }))
    }

    /// Gradients of `Σ_t <grad_outputs[t], h_top[t]>` with respect to the
    /// parameters and the inputs.
    pub fn backward(
        &self,
        cache: &LstmCache<F>,
        grad_outputs: ArrayView2<F>,
    ) -> Result<(LstmStack<F>, Array2<F>)> {
        let hidden = self.hidden_size();
        if cache.layers.len() != self.num_layers()
            || cache
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(c, l)| c.input.ncols() != l.w_ih.ncols() || c.h.ncols() != hidden)
        {
            return Err(Error::shape(format!("{}: cache does not match parameters", self.name)));
        }
        if grad_outputs.dim() != (cache.len(), hidden) {
            return Err(Error::shape(format!(
                "{}: grad_outputs {:?} != ({}, {hidden})",
                self.name,
                grad_outputs.dim(),
                cache.len()
            )));
        }
        let mut grads = self.zeros_like();
        let mut dh_above = grad_outputs.to_owned();
        for l in (0..self.num_layers()).rev() {
            let (g, dx) = layer_backward(&self.layers[l], &cache.layers[l], dh_above.view());
            grads.layers[l] = g;
            dh_above = dx;
        }
        Ok((grads, dh_above))
    }
}

fn layer_forward<F: Scalar>(
    layer: &LstmLayer<F>,
    input: Array2<F>,
    h0: &Array1<F>,
    c0: &Array1<F>,
) -> LayerCache<F> {
    let t_len = input.nrows();
    let hidden = layer.w_hh.ncols();
    let mut gates = input.dot(&layer.w_ih.t());
    gates += &layer.bias;
    let mut c = Array2::<F>::zeros((t_len, hidden));
    let mut tanh_c = Array2::<F>::zeros((t_len, hidden));
    let mut h = Array2::<F>::zeros((t_len, hidden));
    let mut h_prev = h0.clone();
    let mut c_prev = c0.clone();
    let mut rec = Array1::<F>::zeros(4 * hidden);
    for t in 0..t_len {
        general_mat_vec_mul(F::one(), &layer.w_hh, &h_prev, F::zero(), &mut rec);
        let mut g = gates.row_mut(t);
        g += &rec;
        for j in 0..hidden {
            let i_g = sigmoid(g[j]);
            let f_g = sigmoid(g[hidden + j]);
            let c_g = g[2 * hidden + j].tanh();
            let o_g = sigmoid(g[3 * hidden + j]);
            g[j] = i_g;
            g[hidden + j] = f_g;
            g[2 * hidden + j] = c_g;
            g[3 * hidden + j] = o_g;
            let ct = f_g * c_prev[j] + i_g * c_g;
            let tc = ct.tanh();
            c[[t, j]] = ct;
            tanh_c[[t, j]] = tc;
            h[[t, j]] = o_g * tc;
        }
        h_prev.assign(&h.row(t));
        c_prev.assign(&c.row(t));
    }
    LayerCache {
        input,
        gates,
        c,
        tanh_c,
        h,
        h0: h0.clone(),
        c0: c0.clone(),
    }
}

fn layer_backward<F: Scalar>(
    layer: &LstmLayer<F>,
    cache: &LayerCache<F>,
    dh_out: ArrayView2<F>,
) -> (LstmLayer<F>, Array2<F>) {
    let t_len = cache.h.nrows();
    let hidden = layer.w_hh.ncols();
    let one = F::one();
    // pre-activation gate gradients, T x 4H
    let mut da = Array2::<F>::zeros((t_len, 4 * hidden));
    let mut dh_next = Array1::<F>::zeros(hidden);
    let mut dc_next = Array1::<F>::zeros(hidden);
    // row-major copy so the per-step product runs over contiguous rows
    let w_hh_t = layer.w_hh.t().as_standard_layout().into_owned();
    for t in (0..t_len).rev() {
        let g = cache.gates.row(t);
        let mut d = da.row_mut(t);
        for j in 0..hidden {
            let (i_g, f_g, c_g, o_g) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
            let c_prev = if t > 0 { cache.c[[t - 1, j]] } else { cache.c0[j] };
            let tc = cache.tanh_c[[t, j]];
            let dh = dh_out[[t, j]] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o_g * (one - tc * tc) + dc_next[j];
            d[j] = dc * c_g * i_g * (one - i_g);
            d[hidden + j] = dc * c_prev * f_g * (one - f_g);
            d[2 * hidden + j] = dc * i_g * (one - c_g * c_g);
            d[3 * hidden + j] = d_o * o_g * (one - o_g);
            dc_next[j] = dc * f_g;
        }
        general_mat_vec_mul(one, &w_hh_t, &d, F::zero(), &mut dh_next);
    }
    // h_{t-1} for every t
    let mut h_prev = Array2::<F>::zeros((t_len, hidden));
    if t_len > 0 {
        h_prev.row_mut(0).assign(&cache.h0);
        h_prev
            .slice_mut(s![1.., ..])
            .assign(&cache.h.slice(s![..t_len - 1, ..]));
    }
    let grads = LstmLayer {
        w_ih: da.t().dot(&cache.input),
        w_hh: da.t().dot(&h_prev),
        bias: da.sum_axis(Axis(0)),
    };
    let dx = da.dot(&layer.w_ih);
    (grads, dx)
}

impl<F: Scalar> ParamSet<F> for LstmStack<F> {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("{}.l{l}.w_ih", self.name), layer.w_ih.shape().to_vec()));
            out.push((format!("{}.l{l}.w_hh", self.name), layer.w_hh.shape().to_vec()));
            out.push((format!("{}.l{l}.bias", self.name), layer.bias.shape().to_vec()));
        }
        out
    }

    fn slices(&self) -> Vec<&[F]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w_ih.as_slice().unwrap(),
                    l.w_hh.as_slice().unwrap(),
                    l.bias.as_slice().unwrap(),
                ]
            })
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w_ih.as_slice_mut().unwrap(),
                    l.w_hh.as_slice_mut().unwrap(),
                    l.bias.as_slice_mut().unwrap(),
                ]
            })
            .collect()
    }
}
