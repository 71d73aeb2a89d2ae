//! Small dense helpers shared by the network and the losses.

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// In-place log-softmax followed by exponentiation. `logits` becomes the
/// probabilities and `log_probs` receives their logarithms.
pub(crate) fn softmax_with_log(logits: &mut [f64], log_probs: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (l, lp) in logits.iter().zip(log_probs.iter_mut()) {
        *lp = l - max;
        sum += libm::exp(*lp);
    }
    let log_sum = libm::log(sum);
    for (p, lp) in logits.iter_mut().zip(log_probs.iter_mut()) {
        *lp -= log_sum;
        *p = libm::exp(*lp);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
