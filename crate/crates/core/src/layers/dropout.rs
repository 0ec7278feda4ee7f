use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Inverted-dropout mask: entries are `0` or `1 / (1 - rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    scale: Vec<f64>,
}

impl DropoutMask {
    pub fn values(&self) -> &[f64] {
        &self.scale
    }
}

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Zeroes each unit with probability `rate` during training and scales the
/// survivors by `1 / (1 - rate)`. Outside training, or with `rate == 0`,
/// returns the input unchanged and a `None` mask without touching `rng`.
pub fn dropout_forward(x: &Tensor, rate: f64, training: bool, rng: &mut impl Rng) -> Result<(Tensor, Option<DropoutMask>)> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let y = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().zip(&scale).map(|(a, s)| a * s).collect(),
    )?;
    Ok((y, Some(DropoutMask { scale })))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&DropoutMask>) -> Result<Tensor> {
    let Some(mask) = mask else {
        return Ok(grad_out.clone());
    };
    if mask.scale.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            op: "dropout_backward",
            left: grad_out.shape().to_vec(),
            right: vec![mask.scale.len()],
        });
    }
    Tensor::new(
        grad_out.shape().to_vec(),
        grad_out.data().iter().zip(&mask.scale).map(|(g, s)| g * s).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(dropout_forward(&x, 0.0, true, &mut rng).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.9, false, &mut rng).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, true, &mut rng).is_err());
        assert!(dropout_forward(&x, -0.1, false, &mut rng).is_err());
    }

    #[test]
    fn large_sample_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let x = Tensor::new(vec![n], (0..n).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
        let (y, _) = dropout_forward(&x, 0.5, true, &mut rng).unwrap();
        let zeros = y.data().iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.5).abs() < 0.01, "{zeros}");
        let (mx, my) = (x.sum() / n as f64, y.sum() / n as f64);
        assert!((my - mx).abs() / mx < 0.02, "{mx} {my}");
    }

    #[test]
    fn backward_reuses_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::filled(&[4, 5], 1.0);
        let (y, mask) = dropout_forward(&x, 0.5, true, &mut rng).unwrap();
        let g = dropout_backward(&Tensor::filled(&[4, 5], 1.0), mask.as_ref()).unwrap();
        assert_eq!(g, y);
    }
}
