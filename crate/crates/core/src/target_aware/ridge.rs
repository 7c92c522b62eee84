//! Ridge regression of features onto a Gaussian label map through a single
//! convolution, and the loss gradient with respect to those features.

use super::descent::{minimize, Descent, TrainLog};
use crate::error::{Error, Result};
use crate::tensor::{conv2d_input_grad, conv2d_kernel_grad, conv2d_valid, ConvKernel, Tensor3};

/// Soft target `exp(-((i - cr)^2 + (j - cc)^2) / (2 sigma^2))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLabel {
    pub map: Tensor3,
    pub sigma: f64,
    pub center: (usize, usize),
}

pub fn gaussian_label(h: usize, w: usize, sigma: f64, center: (usize, usize)) -> Result<GaussianLabel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(format!("label sigma must be positive, got {sigma}")));
    }
    if center.0 >= h || center.1 >= w {
        return Err(Error::Invalid(format!(
            "label centre {center:?} outside {h}x{w} map"
        )));
    }
    let (cr, cc) = (center.0 as f64, center.1 as f64);
    let denom = 2.0 * sigma * sigma;
    let map = Tensor3::from_fn(1, h, w, |_, i, j| {
        let d2 = (i as f64 - cr).powi(2) + (j as f64 - cc).powi(2);
        (-d2 / denom).exp() as f32
    });
    Ok(GaussianLabel { map, sigma, center })
}

/// A one-output convolution regressor with its L2 weight and training rule.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeHead {
    pub kernel: ConvKernel,
    pub lambda: f64,
    pub descent: Descent,
}

impl RidgeHead {
    /// Zero-initialised head with a `kh x kw` kernel over `in_channels`.
    pub fn new(in_channels: usize, kh: usize, kw: usize, lambda: f64, descent: Descent) -> Result<Self> {
        if descent.max_iters < 1 {
            return Err(Error::Invalid("ridge head needs max_iters >= 1".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Invalid(format!("ridge lambda must be >= 0, got {lambda}")));
        }
        Ok(RidgeHead {
            kernel: ConvKernel::zeros(1, in_channels, kh, kw),
            lambda,
            descent,
        })
    }

    pub fn predict(&self, features: &Tensor3) -> Result<Tensor3> {
        conv2d_valid(features, &self.kernel)
    }

    /// `||Y - W * X||^2 + lambda ||W||^2`; the bias is not regularised.
    pub fn loss(&self, features: &Tensor3, label: &GaussianLabel) -> Result<f64> {
        ridge_loss(features, &self.kernel, label, self.lambda)
    }
}

fn check_response(response: &Tensor3, label: &GaussianLabel) -> Result<()> {
    if !response.same_shape(&label.map) {
        return Err(Error::Dimension(format!(
            "head response {} against label {}",
            response.shape_str(),
            label.map.shape_str()
        )));
    }
    Ok(())
}

pub fn ridge_loss(features: &Tensor3, kernel: &ConvKernel, label: &GaussianLabel, lambda: f64) -> Result<f64> {
    let response = conv2d_valid(features, kernel)?;
    check_response(&response, label)?;
    let fit: f64 = response
        .data()
        .iter()
        .zip(label.map.data())
        .map(|(&p, &y)| (y as f64 - p as f64).powi(2))
        .sum();
    Ok(fit + lambda * kernel.weight_sum_sq())
}

/// `2 (X_o - Y)`: gradient of the fit term with respect to the response.
fn response_grad(features: &Tensor3, kernel: &ConvKernel, label: &GaussianLabel) -> Result<Tensor3> {
    let response = conv2d_valid(features, kernel)?;
    check_response(&response, label)?;
    let data = response
        .data()
        .iter()
        .zip(label.map.data())
        .map(|(&p, &y)| 2.0 * (p - y))
        .collect();
    Tensor3::from_vec(1, response.height(), response.width(), data)
}

#[derive(Clone, Debug)]
pub struct TrainedRidge {
    pub head: RidgeHead,
    pub final_loss: f64,
    pub log: TrainLog,
}

/// Fits the head by gradient descent until the loss reaches the threshold or
/// the iteration budget runs out. Accepted steps never raise the loss.
pub fn train_ridge_head(features: &Tensor3, label: &GaussianLabel, head: RidgeHead) -> Result<TrainedRidge> {
    let mut head = head;
    let lambda = head.lambda;
    let dims = head.kernel.dims();
    // the shape check happens once, before any descent
    check_response(&head.predict(features)?, label)?;
    let log = minimize(
        &mut head.kernel,
        &head.descent.clone(),
        |k| ridge_loss(features, k, label, lambda),
        |k| {
            let mut g = conv2d_kernel_grad(features, &response_grad(features, k, label)?, dims)?;
            for (gw, &w) in g.weights_mut().iter_mut().zip(k.weights()) {
                *gw += (2.0 * lambda * w as f64) as f32;
            }
            Ok(g)
        },
    )?;
    Ok(TrainedRidge {
        final_loss: log.final_loss(),
        head,
        log,
    })
}

/// Derivative of the ridge loss with respect to the input features. The
/// regulariser does not depend on the features, so this is the response
/// gradient `2 (X_o - Y)` carried back through the head kernel.
pub fn regression_feature_grad(features: &Tensor3, head: &RidgeHead, label: &GaussianLabel) -> Result<Tensor3> {
    conv2d_input_grad(&response_grad(features, &head.kernel, label)?, &head.kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn label_values() {
        let l = gaussian_label(7, 9, 1.0, (3, 4)).unwrap();
        assert_eq!(l.map.get(0, 3, 4), 1.0);
        assert!((l.map.get(0, 3, 5) as f64 - (-0.5f64).exp()).abs() < 1e-7);
        assert!((l.map.get(0, 2, 4) - 0.60653067).abs() < 1e-6);
        assert!(l.map.data().iter().all(|&v| v > 0.0 && v <= 1.0));

        let l = gaussian_label(5, 5, 2.0, (2, 2)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let d2 = ((i as f64 - 2.0).powi(2) + (j as f64 - 2.0).powi(2)) / 8.0;
                assert!((l.map.get(0, i, j) as f64 - (-d2).exp()).abs() < 1e-7);
                // symmetric about the centre
                assert_eq!(l.map.get(0, i, j), l.map.get(0, 4 - i, 4 - j));
            }
        }
    }

    #[test]
    fn label_rejects_bad_sigma_and_centre() {
        assert!(gaussian_label(5, 5, 0.0, (2, 2)).is_err());
        assert!(gaussian_label(5, 5, -1.0, (2, 2)).is_err());
        assert!(gaussian_label(5, 5, 1.0, (5, 2)).is_err());
    }

    #[test]
    fn zero_label_drives_loss_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor3::from_fn(3, 5, 5, |_, _, _| rng.random_range(-1.0..1.0));
        let mut label = gaussian_label(3, 3, 1.0, (1, 1)).unwrap();
        label.map = Tensor3::zeros(1, 3, 3);
        let mut head = RidgeHead::new(3, 3, 3, 0.1, Descent { learn_rate: 1e-2, max_iters: 3000, loss_threshold: 1e-8 }).unwrap();
        head.kernel.weights_mut().iter_mut().for_each(|w| *w = 0.3);
        let start = head.loss(&x, &label).unwrap();
        let trained = train_ridge_head(&x, &label, head).unwrap();
        assert!(trained.final_loss < 1e-4 * start, "{} from {}", trained.final_loss, start);
        assert!(trained.head.kernel.weights().iter().all(|w| w.abs() < 1e-2));
    }

    #[test]
    fn scalar_ridge_closed_form() {
        // loss (y - w x)^2 + lambda w^2, bias pinned at 0 by a zero label offset
        let (x, y, lambda) = (1.7f64, 0.9f64, 0.3f64);
        let features = Tensor3::filled(1, 1, 1, x as f32);
        let mut label = gaussian_label(1, 1, 1.0, (0, 0)).unwrap();
        label.map = Tensor3::filled(1, 1, 1, y as f32);
        let head = RidgeHead::new(1, 1, 1, lambda, Descent { learn_rate: 0.05, max_iters: 2000, loss_threshold: 0.0 }).unwrap();
        let trained = train_ridge_head(&features, &label, head).unwrap();
        // With an unregularised bias the optimum is w = 0, b = y.
        assert!(trained.final_loss < 1e-8);

        // Without a free bias: compare against w* = x y / (x^2 + lambda).
        let w_star = x * y / (x * x + lambda);
        let loss_star = (y - w_star * x).powi(2) + lambda * w_star * w_star;
        let mut k = ConvKernel::zeros(1, 1, 1, 1);
        for _ in 0..2000 {
            let w = k.weights()[0] as f64;
            let g = -2.0 * x * (y - w * x) + 2.0 * lambda * w;
            k.weights_mut()[0] = (w - 0.05 * g) as f32;
        }
        assert!((k.weights()[0] as f64 - w_star).abs() < 1e-5);
        assert!((ridge_loss(&features, &k, &label, lambda).unwrap() - loss_star).abs() < 1e-6);
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor3::from_fn(4, 6, 6, |_, _, _| rng.random_range(0.0..3.0));
        let label = gaussian_label(4, 4, 0.8, (2, 2)).unwrap();
        let head = RidgeHead::new(4, 3, 3, 1e-4, Descent { learn_rate: 1.0, max_iters: 50, loss_threshold: 0.0 }).unwrap();
        let trained = train_ridge_head(&x, &label, head).unwrap();
        let l = &trained.log.losses;
        assert!(l.windows(2).all(|w| w[1] <= w[0]));
        assert!(trained.final_loss < trained.log.initial_loss());
        assert!(trained.log.steps() <= 50);
    }

    #[test]
    fn stops_at_threshold() {
        let x = Tensor3::filled(1, 3, 3, 1.0);
        let label = gaussian_label(1, 1, 1.0, (0, 0)).unwrap();
        let head = RidgeHead::new(1, 3, 3, 0.0, Descent { learn_rate: 0.01, max_iters: 50, loss_threshold: 0.5 }).unwrap();
        let trained = train_ridge_head(&x, &label, head).unwrap();
        assert!(trained.final_loss <= 0.5);
        assert!(trained.log.losses[trained.log.steps() - 1] > 0.5);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = Tensor3::zeros(2, 6, 6);
        let label = gaussian_label(3, 3, 1.0, (1, 1)).unwrap();
        let head = RidgeHead::new(2, 2, 2, 0.0, Descent::default()).unwrap();
        assert!(matches!(train_ridge_head(&x, &label, head.clone()), Err(Error::Dimension(_))));
        assert!(regression_feature_grad(&x, &head, &label).is_err());
        assert!(RidgeHead::new(2, 2, 2, -1.0, Descent::default()).is_err());
        assert!(RidgeHead::new(2, 2, 2, 0.0, Descent { max_iters: 0, ..Descent::default() }).is_err());
    }

    #[test]
    fn perfect_fit_and_zero_kernel_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor3::from_fn(2, 5, 5, |_, _, _| rng.random_range(-1.0..1.0));
        let head = RidgeHead::new(2, 3, 3, 1e-3, Descent::default()).unwrap();
        let label = gaussian_label(3, 3, 1.0, (1, 1)).unwrap();
        let g = regression_feature_grad(&x, &head, &label).unwrap();
        assert_eq!(g.shape(), x.shape());
        assert!(g.data().iter().all(|&v| v == 0.0));

        let mut head = head;
        head.kernel.weights_mut().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let mut fitted = label.clone();
        fitted.map = head.predict(&x).unwrap();
        let g = regression_feature_grad(&x, &head, &fitted).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}
