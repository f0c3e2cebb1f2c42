use super::tape::{activate_sigmoid, activate_softplus};
use crate::error::{Error, Result};
use crate::mpi::Mpi;
use crate::numerics::Image;

/// Unconstrained MPI parameters: intensity pre-activations for every layer
/// followed by alpha pre-activations for layers 2..N, each `h * w` values.
/// The farthest layer's alpha is fixed at one.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    layers: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Smallest intensity or alpha margin used when inverting activations.
const ENCODE_FLOOR: f64 = 1e-12;

fn softplus_inverse(c: f64) -> f64 {
    let c = c.max(ENCODE_FLOOR);
    c + (-(-c).exp_m1()).ln()
}

fn logit(a: f64) -> f64 {
    let a = a.clamp(ENCODE_FLOOR, 1.0 - ENCODE_FLOOR);
    (a / (1.0 - a)).ln()
}

impl Params {
    pub fn from_data(layers: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidArgument("need at least one layer".into()));
        }
        let expected = (2 * layers - 1) * height * width;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "parameter vector has {} values, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            layers,
            height,
            width,
            data,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn hw(&self) -> usize {
        self.height * self.width
    }

    /// Intensity pre-activation of layer `i` (0 = farthest).
    pub fn color_pre(&self, i: usize) -> &[f64] {
        let hw = self.hw();
        &self.data[i * hw..(i + 1) * hw]
    }

    /// Alpha pre-activation of layer `i >= 1`.
    pub fn alpha_pre(&self, i: usize) -> &[f64] {
        assert!(i >= 1 && i < self.layers, "layer {i} has no alpha parameters");
        let hw = self.hw();
        let off = (self.layers + i - 1) * hw;
        &self.data[off..off + hw]
    }

    /// Inverse of [`decode`] for an MPI with intensities and alphas in the
    /// open activation ranges.
    pub fn encode(m: &Mpi) -> Self {
        let (h, w) = m.extents();
        let n = m.num_layers();
        let mut data = Vec::with_capacity((2 * n - 1) * h * w);
        for c in m.colors() {
            data.extend(c.data().iter().map(|&v| softplus_inverse(v)));
        }
        for a in &m.alphas()[1..] {
            data.extend(a.data().iter().map(|&v| logit(v)));
        }
        Self {
            layers: n,
            height: h,
            width: w,
            data,
        }
    }
}

/// Every layer's intensity set to the mean of the two views, every free
/// alpha to one half.
pub fn init_params(left: &Image, right: &Image, layers: usize) -> Result<Params> {
    left.ensure_same_extents(right)?;
    if layers == 0 {
        return Err(Error::InvalidArgument("need at least one layer".into()));
    }
    let (h, w) = left.extents();
    let color: Vec<f64> = left
        .data()
        .iter()
        .zip(right.data())
        .map(|(l, r)| softplus_inverse(((l + r) / 2.0).max(1e-6)))
        .collect();
    let mut data = Vec::with_capacity((2 * layers - 1) * h * w);
    for _ in 0..layers {
        data.extend_from_slice(&color);
    }
    data.resize((2 * layers - 1) * h * w, 0.0);
    Params::from_data(layers, h, w, data)
}

/// MPI with `c = softplus(u_c)`, `alpha = sigmoid(u_alpha)` and the farthest
/// alpha fixed at one.
pub fn decode(p: &Params, defocus: &[f64]) -> Result<Mpi> {
    let (h, w) = p.extents();
    let colors = (0..p.layers)
        .map(|i| Image::new(h, w, p.color_pre(i).iter().map(|&u| activate_softplus(u)).collect()))
        .collect::<Result<Vec<_>>>()?;
    let mut alphas = vec![Image::filled(h, w, 1.0)?];
    for i in 1..p.layers {
        alphas.push(Image::new(
            h,
            w,
            p.alpha_pre(i).iter().map(|&u| activate_sigmoid(u)).collect(),
        )?);
    }
    Mpi::new(colors, alphas, defocus.to_vec())
}

/// Scale factor `0.5 / mean` over both views, and the scaled views.
pub fn normalize_inputs(left: &Image, right: &Image) -> Result<(Image, Image, f64)> {
    left.ensure_same_extents(right)?;
    let mean = (left.sum() + right.sum()) / (2 * left.len()) as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "input mean {mean} must be positive to normalize"
        )));
    }
    let s = 0.5 / mean;
    Ok((left.map(|v| v * s), right.map(|v| v * s), s))
}

/// Undoes [`normalize_inputs`] on an intensity image.
pub fn denormalize(img: &Image, scale: f64) -> Image {
    img.map(|v| v / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpi::transmittances;

    #[test]
    fn normalization() {
        let half = Image::filled(3, 3, 0.5).unwrap();
        let (l, _, s) = normalize_inputs(&half, &half).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(l, half);
        let q = Image::filled(3, 3, 0.25).unwrap();
        assert_eq!(normalize_inputs(&q, &q).unwrap().2, 2.0);
        let img = Image::from_fn(4, 5, |y, x| 0.01 + 0.1 * (y * 5 + x) as f64).unwrap();
        let (l, _, s) = normalize_inputs(&img, &img.map(|v| v * 0.9)).unwrap();
        let back = denormalize(&l, s);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = Image::zeros(2, 2).unwrap();
        assert!(normalize_inputs(&zero, &zero).is_err());
    }

    #[test]
    fn activations() {
        let p = Params::from_data(2, 1, 2, vec![0.0, 50.0, 1.0, 2.0, 0.0, 40.0]).unwrap();
        let m = decode(&p, &[3.0, 1.0]).unwrap();
        assert_eq!(m.alphas()[1].data()[0], 0.5);
        assert!(m.alphas()[1].data()[1] > 1.0 - 1e-15);
        assert!((m.colors()[0].data()[0] - 2f64.ln()).abs() < 1e-15);
        assert!(m.alphas()[0].data().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn encode_decode_round_trip() {
        let c = Image::from_fn(3, 4, |y, x| 0.05 + 0.1 * (y + x) as f64).unwrap();
        let a = Image::from_fn(3, 4, |y, x| 0.1 + 0.07 * (y * 4 + x) as f64).unwrap();
        let one = Image::filled(3, 4, 1.0).unwrap();
        let m = Mpi::new(vec![c.clone(), c.map(|v| v * 2.0)], vec![one, a], vec![4.0, 2.0]).unwrap();
        let back = decode(&Params::encode(&m), &[4.0, 2.0]).unwrap();
        for (x, y) in back.colors().iter().chain(back.alphas()).zip(m.colors().iter().chain(m.alphas())) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn initialization() {
        let l = Image::filled(4, 4, 0.4).unwrap();
        let r = Image::filled(4, 4, 0.6).unwrap();
        let p = init_params(&l, &r, 3).unwrap();
        assert_eq!(p, init_params(&l, &r, 3).unwrap());
        let m = decode(&p, &[5.0, 3.0, 1.0]).unwrap();
        for c in m.colors() {
            assert!(c.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        }
        assert!(m.alphas()[1..].iter().all(|a| a.data().iter().all(|&v| v == 0.5)));
        let t = transmittances(&m);
        for q in 0..16 {
            let s: f64 = t.iter().map(|ti| ti.data()[q]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
