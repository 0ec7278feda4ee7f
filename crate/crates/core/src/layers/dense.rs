use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, Activation, MatRef, Tensor};

/// Fully connected layer `a = σ(x·Wᵀ + b)` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseParams {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (out, _) = weight.dims2("dense weight")?;
        if bias.shape() != [out] {
            return Err(Error::ShapeMismatch {
                op: "dense bias",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, output, activation);
        let limit = (6.0 / (input + output) as f64).sqrt();
        for w in p.weight.data_mut() {
            *w = rng.random_range(-limit..limit);
        }
        p
    }

    pub fn input_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor,
    output: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub d_input: Tensor,
    pub d_weight: Tensor,
    pub d_bias: Tensor,
}

pub fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<(Tensor, DenseCache)> {
    let (batch, input) = x.dims2("dense_forward")?;
    if input != p.input_width() {
        return Err(Error::ShapeMismatch {
            op: "dense_forward",
            left: x.shape().to_vec(),
            right: p.weight.shape().to_vec(),
        });
    }
    let out = p.output_width();
    let mut z: Vec<f64> = p.bias.data().iter().copied().cycle().take(batch * out).collect();
    gemm(
        1.0,
        MatRef::new(x.data(), batch, input),
        MatRef::new(p.weight.data(), out, input).t(),
        1.0,
        &mut z,
    );
    for v in &mut z {
        *v = p.activation.apply(*v);
    }
    let output = Tensor::new(vec![batch, out], z)?;
    Ok((
        output.clone(),
        DenseCache {
            input: x.clone(),
            output,
        },
    ))
}

pub fn dense_backward(p: &DenseParams, cache: &DenseCache, grad_out: &Tensor) -> Result<DenseGrads> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            left: grad_out.shape().to_vec(),
            right: cache.output.shape().to_vec(),
        });
    }
    let (batch, out) = (grad_out.shape()[0], grad_out.shape()[1]);
    let input = p.input_width();
    let dz: Vec<f64> = grad_out
        .data()
        .iter()
        .zip(cache.output.data())
        .map(|(g, y)| g * p.activation.derivative_from_output(*y))
        .collect();

    let mut d_weight = vec![0.0; out * input];
    gemm(
        1.0,
        MatRef::new(&dz, batch, out).t(),
        MatRef::new(cache.input.data(), batch, input),
        0.0,
        &mut d_weight,
    );
    let mut d_bias = vec![0.0; out];
    for row in dz.chunks_exact(out) {
        for (b, g) in d_bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut d_input = vec![0.0; batch * input];
    gemm(
        1.0,
        MatRef::new(&dz, batch, out),
        MatRef::new(p.weight.data(), out, input),
        0.0,
        &mut d_input,
    );
    Ok(DenseGrads {
        d_input: Tensor::new(vec![batch, input], d_input)?,
        d_weight: Tensor::new(vec![out, input], d_weight)?,
        d_bias: Tensor::new(vec![out], d_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, FD_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_relu_layer() {
        let p = DenseParams::new(
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Tensor::zeros(&[2]),
            Activation::Relu,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let (y, _) = dense_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_weight_ignores_input() {
        let mut p = DenseParams::zeros(3, 2, Activation::Sigmoid);
        p.bias.data_mut().copy_from_slice(&[0.3, -1.2]);
        let x = Tensor::from_rows(&[vec![5.0, -1.0, 2.0], vec![0.0, 9.0, 1.0]]).unwrap();
        let (y, _) = dense_forward(&x, &p).unwrap();
        for row in 0..2 {
            assert_eq!(y.row(row), &[Activation::Sigmoid.apply(0.3), Activation::Sigmoid.apply(-1.2)]);
        }
    }

    #[test]
    fn shape_mismatch() {
        let p = DenseParams::zeros(3, 2, Activation::Relu);
        assert!(dense_forward(&Tensor::zeros(&[1, 4]), &p).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, act) in [(0, Activation::Tanh), (1, Activation::Sigmoid), (2, Activation::Relu), (3, Activation::Linear)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = DenseParams::init(4, 3, act, &mut rng);
            let mut p = p;
            for b in p.bias.data_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
            let x = Tensor::new(vec![2, 4], (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let r = Tensor::new(vec![2, 3], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let objective = |x: &Tensor, p: &DenseParams| -> f64 {
                let (y, _) = dense_forward(x, p).unwrap();
                y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = dense_forward(&x, &p).unwrap();
            let g = dense_backward(&p, &cache, &r).unwrap();

            let e_x = finite_diff_check(|x| objective(x, &p), &x, &g.d_input, FD_EPS).unwrap();
            let e_w = finite_diff_check(
                |w| {
                    let mut q = p.clone();
                    q.weight = w.clone();
                    objective(&x, &q)
                },
                &p.weight,
                &g.d_weight,
                FD_EPS,
            )
            .unwrap();
            let e_b = finite_diff_check(
                |b| {
                    let mut q = p.clone();
                    q.bias = b.clone();
                    objective(&x, &q)
                },
                &p.bias,
                &g.d_bias,
                FD_EPS,
            )
            .unwrap();
            assert!(e_x < 1e-6 && e_w < 1e-6 && e_b < 1e-6, "{act}: {e_x} {e_w} {e_b}");
        }
    }
}
