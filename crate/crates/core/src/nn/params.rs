use std::collections::BTreeMap;

use super::Scalar;
use crate::container::Tensor;
use crate::error::{Error, Result};

/// A fixed collection of named parameter tensors.
///
/// The same type doubles as its own gradient and optimizer-moment container,
/// so every layout-dependent operation below is a zip over `slices`.
pub trait ParamSet<F: Scalar>: Clone + Send + Sync {
    /// `(name, shape)` for every tensor, in a stable order.
    fn layout(&self) -> Vec<(String, Vec<usize>)>;
    fn slices(&self) -> Vec<&[F]>;
    fn slices_mut(&mut self) -> Vec<&mut [F]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(F::zero());
        }
        z
    }

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, k: F) {
        for s in self.slices_mut() {
            for x in s.iter_mut() {
                *x *= k;
            }
        }
    }

    fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| {
                let v = x.f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Flattened copy of every parameter, in layout order.
    fn to_flat(&self) -> Vec<F> {
        self.slices().iter().flat_map(|s| s.iter().copied()).collect()
    }

    fn to_tensors(&self) -> Vec<(String, Tensor)> {
        self.layout()
            .into_iter()
            .zip(self.slices())
            .map(|((name, shape), data)| {
                (
                    name,
                    Tensor {
                        shape,
                        data: data.iter().map(|x| x.to_f32().unwrap()).collect(),
                    },
                )
            })
            .collect()
    }

    /// Overwrite parameters from named tensors; every name must be present with
    /// a matching shape.
    fn load_tensors(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let layout = self.layout();
        for ((name, shape), dst) in layout.iter().zip(self.slices_mut()) {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::format(format!("missing tensor {name}")))?;
            if &t.shape != shape {
                return Err(Error::shape(format!(
                    "tensor {name}: expected shape {shape:?}, found {:?}",
                    t.shape
                )));
            }
            for (d, &s) in dst.iter_mut().zip(&t.data) {
                *d = F::of(s as f64);
            }
        }
        Ok(())
    }
}

/// Clip `grads` in place to a global L2 norm of at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<F: Scalar, P: ParamSet<F>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(F::of(max_norm / norm));
    }
    norm
}
