/// Leaky ReLU with negative slope `leak`.
#[inline]
pub fn lrelu(z: f64, leak: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        leak * z
    }
}

#[inline]
pub fn lrelu_grad(z: f64, leak: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        leak
    }
}

/// `log(1 + e^z)`, evaluated as `max(z, 0) + log1p(e^{-|z|})`.
#[inline]
pub fn sigplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Derivative of [`sigplus`].
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
