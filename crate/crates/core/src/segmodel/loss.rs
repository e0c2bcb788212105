//! Pixel-wise cross-entropy and per-sample soft Dice on the burned class.

use super::config::LossKind;
use super::ops::Tensor;

/// Additive smoothing of the soft Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub cross_entropy: f64,
    pub dice: f64,
}

/// Loss and its gradient for logits `(2, N, H, W)` and labels in `(N, H, W)` order.
pub fn loss_and_grad(logits: &Tensor, labels: &[u8], kind: LossKind) -> (LossValue, Tensor) {
    assert_eq!(logits.c, 2);
    let len = logits.channel_len();
    assert_eq!(labels.len(), len);
    let (z0, z1) = logits.data.split_at(len);
    let mut grad = Tensor::zeros(2, logits.n, logits.h, logits.w);
    let m = len as f64;

    // Burned-class probability p = softmax(z)_1 = sigmoid(z1 - z0).
    let p: Vec<f64> = z0.iter().zip(z1).map(|(a, b)| sigmoid(b - a)).collect();

    let mut ce = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let d = z1[i] - z0[i];
        // -log softmax of the true class, computed stably.
        ce += if y != 0 { softplus(-d) } else { softplus(d) };
    }
    ce /= m;

    // dL/dp per pixel, accumulated from the Dice term.
    let mut dp = vec![0.0; len];
    let hw = logits.hw();
    let n = logits.n as f64;
    let mut dice_loss = 0.0;
    for s in 0..logits.n {
        let range = s * hw..(s + 1) * hw;
        let ps = &p[range.clone()];
        let ys = &labels[range.clone()];
        let inter: f64 = ps.iter().zip(ys).map(|(&pi, &yi)| pi * f64::from(yi)).sum();
        let denom: f64 = ps.iter().sum::<f64>() + ys.iter().map(|&y| f64::from(y)).sum::<f64>() + DICE_SMOOTH;
        let num = 2.0 * inter + DICE_SMOOTH;
        dice_loss += 1.0 - num / denom;
        if kind != LossKind::CrossEntropy {
            for (g, &yi) in dp[range].iter_mut().zip(ys) {
                // d(1 - num/denom)/dp_i, averaged over the batch.
                *g = -(2.0 * f64::from(yi) * denom - num) / (denom * denom) / n;
            }
        }
    }
    dice_loss /= n;

    let (g0, g1) = grad.data.split_at_mut(len);
    for i in 0..len {
        let pi = p[i];
        let mut dd = dp[i] * pi * (1.0 - pi);
        if kind != LossKind::Dice {
            dd += (pi - f64::from(labels[i] != 0)) / m;
        }
        // d/dz1 = dd, d/dz0 = -dd since p depends on z1 - z0.
        g1[i] = dd;
        g0[i] = -dd;
    }
    let total = match kind {
        LossKind::CrossEntropy => ce,
        LossKind::Dice => dice_loss,
        LossKind::Combined => ce + dice_loss,
    };
    (
        LossValue {
            total,
            cross_entropy: ce,
            dice: dice_loss,
        },
        grad,
    )
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}
