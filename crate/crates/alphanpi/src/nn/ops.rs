//! Scalar activations and the shared softmax kernel.

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Softmax with a temperature that multiplies the logits before
/// exponentiation: `exp(t·x_k) / Σ_j exp(t·x_j)`.
///
/// Uses max-subtraction for stability. Panics on an empty input, which is a
/// caller bug everywhere this is used.
pub fn softmax(x: &[f64], temperature: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out, temperature);
    out
}

/// In-place variant of [`softmax`].
pub fn softmax_in_place(x: &mut [f64], temperature: f64) {
    assert!(!x.is_empty(), "softmax of empty input");
    assert!(temperature > 0.0, "softmax temperature must be positive");
    let mut max = f64::NEG_INFINITY;
    for v in x.iter_mut() {
        *v *= temperature;
        if *v > max {
            max = *v;
        }
    }
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Index of the maximum value; ties broken by the lowest index.
pub fn argmax_tie_lowest(x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in x.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
