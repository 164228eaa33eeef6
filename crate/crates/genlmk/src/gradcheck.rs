//! Finite-difference gradient checking used by the test and acceptance
//! suites. Central differences, independent of the reverse-mode path.

use crate::scalar::Scalar;
use ndarray::ArrayD;

/// Central-difference gradient of a scalar function w.r.t. every element of
/// `x`, with step `h`.
pub fn central_diff<F, Fun>(mut f: Fun, x: &ArrayD<F>, h: F) -> ArrayD<F>
where
    F: Scalar,
    Fun: FnMut(&ArrayD<F>) -> F,
{
    let mut g = ArrayD::<F>::zeros(x.raw_dim());
    let mut probe = x.clone();
    let two_h = F::from_f64(2.0) * h;
    for idx in 0..x.len() {
        let flat = probe.as_slice_mut().expect("contiguous");
        let orig = flat[idx];
        flat[idx] = orig + h;
        let fp = f(&probe);
        let flat = probe.as_slice_mut().unwrap();
        flat[idx] = orig - h;
        let fm = f(&probe);
        let flat = probe.as_slice_mut().unwrap();
        flat[idx] = orig;
        g.as_slice_mut().unwrap()[idx] = (fp - fm) / two_h;
    }
    g
}

/// Worst relative error between two gradients, with an absolute floor below
/// which components are compared absolutely.
pub fn max_rel_error<F: Scalar>(analytic: &ArrayD<F>, numeric: &ArrayD<F>, floor: F) -> F {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = F::zero();
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let scale = a.abs().max(n.abs()).max(floor);
        let err = (a - n).abs() / scale;
        if err > worst {
            worst = err;
        }
    }
    worst
}
