//! Dense row-major kernels. Weights are stored as f32 and widened on load;
//! activations, gradients and every reduction are f64. Reductions use
//! several independent accumulators so the loops vectorize.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let n = a.len() & !3;
    for (x, y) in a[..n].chunks_exact(4).zip(b[..n].chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in a[n..].iter().zip(&b[n..]) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dot product of an f32 weight row with an f64 vector.
#[inline]
pub fn dot_w(w: &[f32], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = [0.0f64; 4];
    let n = w.len() & !3;
    for (a, b) in w[..n].chunks_exact(4).zip(x[..n].chunks_exact(4)) {
        acc[0] += a[0] as f64 * b[0];
        acc[1] += a[1] as f64 * b[1];
        acc[2] += a[2] as f64 * b[2];
        acc[3] += a[3] as f64 * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in w[n..].iter().zip(&x[n..]) {
        tail += *a as f64 * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// y += a · x
#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// y += a · w for an f32 row `w`.
#[inline]
pub fn axpy_w(y: &mut [f64], a: f64, w: &[f32]) {
    debug_assert_eq!(y.len(), w.len());
    for (yi, wi) in y.iter_mut().zip(w) {
        *yi += a * *wi as f64;
    }
}

/// y += W x, with W of shape `y.len() × x.len()`.
#[inline]
pub fn gemv_acc(y: &mut [f64], w: &[f32], x: &[f64]) {
    debug_assert_eq!(w.len(), y.len() * x.len());
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(x.len())) {
        *yi += dot_w(row, x);
    }
}

/// dx += Wᵀ dy, with W of shape `dy.len() × dx.len()`.
#[inline]
pub fn gemv_t_acc(dx: &mut [f64], w: &[f32], dy: &[f64]) {
    debug_assert_eq!(w.len(), dy.len() * dx.len());
    for (&d, row) in dy.iter().zip(w.chunks_exact(dx.len())) {
        if d != 0.0 {
            axpy_w(dx, d, row);
        }
    }
}

/// G += dy xᵀ, with G of shape `dy.len() × x.len()`.
#[inline]
pub fn ger_acc(g: &mut [f64], dy: &[f64], x: &[f64]) {
    debug_assert_eq!(g.len(), dy.len() * x.len());
    for (&d, row) in dy.iter().zip(g.chunks_exact_mut(x.len())) {
        if d != 0.0 {
            axpy(row, d, x);
        }
    }
}

/// Widens an f32 slice into `out`.
#[inline]
pub fn widen(out: &mut [f64], w: &[f32]) {
    for (o, x) in out.iter_mut().zip(w) {
        *o = *x as f64;
    }
}

#[inline]
pub fn tanh_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// `d ⊙ (1 − y²)`, the tanh derivative expressed through its output.
#[inline]
pub fn tanh_backward(out: &mut [f64], d: &[f64], y: &[f64]) {
    for ((o, di), yi) in out.iter_mut().zip(d).zip(y) {
        *o = di * (1.0 - yi * yi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_match_naive_loops() {
        let w: Vec<f32> = (0..15).map(|i| (i as f32 * 0.37).sin()).collect();
        let x: Vec<f64> = (0..5).map(|i| i as f64 - 1.5).collect();
        let dy: Vec<f64> = (0..3).map(|i| 0.5 - i as f64).collect();

        let mut y = vec![1.0; 3];
        gemv_acc(&mut y, &w, &x);
        for r in 0..3 {
            let naive: f64 = 1.0 + (0..5).map(|c| w[r * 5 + c] as f64 * x[c]).sum::<f64>();
            assert!((y[r] - naive).abs() < 1e-12);
        }

        let mut dx = vec![0.0; 5];
        gemv_t_acc(&mut dx, &w, &dy);
        for c in 0..5 {
            let naive: f64 = (0..3).map(|r| w[r * 5 + c] as f64 * dy[r]).sum();
            assert!((dx[c] - naive).abs() < 1e-12);
        }

        let mut g = vec![0.0; 15];
        ger_acc(&mut g, &dy, &x);
        for r in 0..3 {
            for c in 0..5 {
                assert_eq!(g[r * 5 + c], dy[r] * x[c]);
            }
        }
        let wf: Vec<f64> = w.iter().map(|&v| v as f64).collect();
        let naive: f64 = (0..7).map(|i| wf[i] * wf[i + 3]).sum();
        assert!((dot(&wf[..7], &wf[3..10]) - naive).abs() < 1e-12);
        assert!((dot_w(&w[..7], &wf[3..10]) - naive).abs() < 1e-12);
    }
}
