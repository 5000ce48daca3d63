use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Inverted dropout: survivors are scaled by `1/(1-rate)` while training so
/// inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    mask: Option<Vec<f64>>,
    pending: bool,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(
                "dropout_rates",
                format!("rate {rate} outside [0, 1)"),
            ));
        }
        Ok(Self {
            rate,
            mask: None,
            pending: false,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Tensor, rng: &mut Rng, training: bool) -> Tensor {
        self.pending = true;
        if !training || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.uniform() < self.rate { 0.0 } else { keep })
            .collect();
        let y = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::new(x.shape(), y).expect("same shape")
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        if !std::mem::take(&mut self.pending) {
            return Err(Error::Contract(
                "dropout: backward called without a preceding forward".into(),
            ));
        }
        match self.mask.take() {
            None => Ok(dy.clone()),
            Some(mask) => {
                if mask.len() != dy.len() {
                    return Err(Error::dim("dropout backward: gradient shape mismatch"));
                }
                let d = dy.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
                Tensor::new(dy.shape(), d)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::random;
    use super::*;

    #[test]
    fn rate_zero_and_inference_are_identity() {
        let mut rng = Rng::new(0);
        let x = random(&[3, 4], &mut rng);
        assert_eq!(Dropout::new(0.0).unwrap().forward(&x, &mut rng, true), x);
        assert_eq!(Dropout::new(0.7).unwrap().forward(&x, &mut rng, false), x);
    }

    #[test]
    fn invalid_rate() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn statistics_at_half_rate() {
        let mut rng = Rng::new(12);
        let x = Tensor::full(&[100_000], 1.0);
        let y = Dropout::new(0.5).unwrap().forward(&x, &mut rng, true);
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        let mean = y.sum() / 1e5;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn backward_uses_same_mask() {
        let mut rng = Rng::new(3);
        let mut d = Dropout::new(0.3).unwrap();
        let x = random(&[50], &mut rng);
        let y = d.forward(&x, &mut rng, true);
        let g = d.backward(&Tensor::full(&[50], 1.0)).unwrap();
        for ((xi, yi), gi) in x.data().iter().zip(y.data()).zip(g.data()) {
            assert!((yi - xi * gi).abs() < 1e-15);
        }
        assert!(d.backward(&Tensor::full(&[50], 1.0)).is_err());
    }
}
