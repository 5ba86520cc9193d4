//! Scalar loss kernels: sigmoid focal loss and smooth-L1.

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Focal loss of one logit and its gradient w.r.t. the logit.
pub(super) fn focal_term(x: f64, target: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(x);
    if target > 0.5 {
        let log_p = -softplus(-x);
        let q = 1.0 - p;
        let loss = -alpha * q.powf(gamma) * log_p;
        let grad = alpha * q.powf(gamma) * (gamma * p * log_p - q);
        (loss, grad)
    } else {
        let log_q = -softplus(x);
        let loss = -(1.0 - alpha) * p.powf(gamma) * log_q;
        let grad = (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * log_q);
        (loss, grad)
    }
}

pub(super) fn smooth_l1_term(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}
