use super::Image;
use crate::error::{Error, Result};

/// Corner-aligned bilinear resampling to `new_extents = (height, width)`.
pub fn resample_bilinear(img: &Image, new_extents: (usize, usize)) -> Result<Image> {
    let (nh, nw) = new_extents;
    if nh == 0 || nw == 0 {
        return Err(Error::InvalidArgument(format!("target extents {nh}x{nw}")));
    }
    if (nh, nw) == img.extents() {
        return Ok(img.clone());
    }
    let (h, w) = img.extents();
    let map = |i: usize, n: usize, src: usize| -> f64 {
        if n == 1 {
            (src as f64 - 1.0) / 2.0
        } else {
            i as f64 * (src as f64 - 1.0) / (n as f64 - 1.0)
        }
    };
    Image::from_fn(nh, nw, |y, x| {
        let sy = map(y, nh, h);
        let sx = map(x, nw, w);
        let y0 = (sy.floor() as usize).min(h - 1);
        let x0 = (sx.floor() as usize).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let ty = sy - y0 as f64;
        let tx = sx - x0 as f64;
        let top = img.get(y0, x0) * (1.0 - tx) + img.get(y0, x1) * tx;
        let bot = img.get(y1, x0) * (1.0 - tx) + img.get(y1, x1) * tx;
        top * (1.0 - ty) + bot * ty
    })
}
