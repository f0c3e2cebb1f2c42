use crate::error::{Error, Result};
use crate::numerics::Kernel;

/// Bilinear sample of a kernel at continuous offset `(qy, qx)` from its
/// center, zero outside the tap support.
fn sample(k: &Kernel, qy: f64, qx: f64) -> f64 {
    let r = k.radius() as f64;
    let n = k.size() as isize;
    let fy = qy + r;
    let fx = qx + r;
    let y0 = fy.floor();
    let x0 = fx.floor();
    let ty = fy - y0;
    let tx = fx - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let tap = |a: isize, b: isize| -> f64 {
        if a < 0 || b < 0 || a >= n || b >= n {
            0.0
        } else {
            k.tap(a as usize, b as usize)
        }
    };
    (1.0 - ty) * ((1.0 - tx) * tap(y0, x0) + tx * tap(y0, x0 + 1))
        + ty * ((1.0 - tx) * tap(y0 + 1, x0) + tx * tap(y0 + 1, x0 + 1))
}

/// Rescales a kernel calibrated at defocus `d_from` to defocus `d_to`.
///
/// The kernel support is bilinearly resampled by `d_to / d_from` (averaging
/// sub-samples over each output tap when shrinking), re-centered on an odd
/// extent and renormalized. Scaling below a single tap yields the identity.
pub fn scale_kernel(k: &Kernel, d_from: f64, d_to: f64) -> Result<Kernel> {
    if !(d_from > 0.0) || !d_from.is_finite() {
        return Err(Error::InvalidArgument(format!("source defocus {d_from} must be > 0")));
    }
    if !(d_to >= 0.0) || !d_to.is_finite() {
        return Err(Error::InvalidArgument(format!("target defocus {d_to} must be >= 0")));
    }
    let f = d_to / d_from;
    if f == 1.0 {
        return Ok(k.clone());
    }
    let r_old = k.radius() as f64;
    let r_new = ((r_old + 0.5) * f - 0.5).ceil();
    if !(r_new >= 1.0) {
        return Ok(Kernel::identity());
    }
    let r_new = r_new as usize;
    let n = 2 * r_new + 1;
    let subs = if f >= 1.0 { 1 } else { (1.0 / f).ceil() as usize };
    let offsets: Vec<f64> = if subs == 1 {
        vec![0.0]
    } else {
        (0..subs)
            .map(|j| (j as f64 + 0.5) / subs as f64 - 0.5)
            .collect()
    };
    let mut w = vec![0.0; n * n];
    for a in 0..n {
        let uy = a as f64 - r_new as f64;
        for b in 0..n {
            let ux = b as f64 - r_new as f64;
            let mut acc = 0.0;
            for oy in &offsets {
                for ox in &offsets {
                    acc += sample(k, (uy + oy) / f, (ux + ox) / f);
                }
            }
            w[a * n + b] = acc;
        }
    }
    if w.iter().all(|v| *v == 0.0) {
        return Ok(Kernel::identity());
    }
    Kernel::from_weights(n, w)
}
