use crate::error::Result;
use crate::tensor::ConvKernel;

/// Step-size and stopping rule shared by both heads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Descent {
    pub learn_rate: f64,
    pub max_iters: usize,
    pub loss_threshold: f64,
}

impl Default for Descent {
    fn default() -> Self {
        Descent {
            learn_rate: 5e-7,
            max_iters: 50,
            loss_threshold: 0.02,
        }
    }
}

/// Loss values seen during training, starting with the initial loss and
/// followed by one entry per accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }

    pub fn steps(&self) -> usize {
        self.losses.len() - 1
    }
}

const MAX_CONSECUTIVE_REJECTS: usize = 60;

/// Plain gradient descent on a kernel. A step that would raise the loss is
/// rejected and retried at half the rate; an accepted step doubles the rate
/// for the next one. Stops once the loss is at or below the threshold, after
/// `max_iters` accepted steps, or when no step size makes progress.
pub(crate) fn minimize(
    kernel: &mut ConvKernel,
    rule: &Descent,
    mut loss: impl FnMut(&ConvKernel) -> Result<f64>,
    mut grad: impl FnMut(&ConvKernel) -> Result<ConvKernel>,
) -> Result<TrainLog> {
    let mut current = loss(kernel)?;
    let mut losses = vec![current];
    let mut lr = rule.learn_rate;
    let mut steps = 0;
    while current > rule.loss_threshold && steps < rule.max_iters {
        let g = grad(kernel)?;
        let mut rejects = 0;
        let accepted = loop {
            let mut candidate = kernel.clone();
            step(&mut candidate, &g, lr);
            let l = loss(&candidate)?;
            if l.is_finite() && l <= current {
                break Some((candidate, l));
            }
            lr *= 0.5;
            rejects += 1;
            if rejects >= MAX_CONSECUTIVE_REJECTS {
                break None;
            }
        };
        let Some((candidate, l)) = accepted else { break };
        let stalled = l == current;
        *kernel = candidate;
        current = l;
        losses.push(l);
        steps += 1;
        lr *= 2.0;
        if stalled && rejects >= MAX_CONSECUTIVE_REJECTS / 2 {
            break;
        }
    }
    Ok(TrainLog { losses })
}

fn step(kernel: &mut ConvKernel, grad: &ConvKernel, lr: f64) {
    for (w, &g) in kernel.weights_mut().iter_mut().zip(grad.weights()) {
        *w = (*w as f64 - lr * g as f64) as f32;
    }
    for (b, &g) in kernel.bias_mut().iter_mut().zip(grad.bias()) {
        *b = (*b as f64 - lr * g as f64) as f32;
    }
}
