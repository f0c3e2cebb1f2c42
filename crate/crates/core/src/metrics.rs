//! Evaluation of all-in-focus images (PSNR, SSIM, MAE) and defocus maps
//! (affine-invariant weighted error, Spearman term), plus the affine
//! alignment and border crop applied before scoring real captures.

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sum, Image};

/// Reported PSNR when the images are identical.
pub const PSNR_IDENTICAL: f64 = 99.0;

/// Border removed by [`align_affine_then_crop`] in the standard protocol.
pub const DEFAULT_BORDER: usize = 8;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const IRLS_ITERATIONS: usize = 20;
const IRLS_DAMPING: f64 = 1e-8;
const LK_ITERATIONS: usize = 50;

/// Peak signal-to-noise ratio in dB.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.ensure_same_extents(b)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak {peak} must be > 0")));
    }
    let sq: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).collect();
    let mse = pairwise_sum(&sq) / sq.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean absolute error.
pub fn mae(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_extents(b)?;
    let abs: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect();
    Ok(pairwise_sum(&abs) / abs.len() as f64)
}

fn ssim_window() -> Vec<f64> {
    let w: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let t = i as f64 - SSIM_RADIUS as f64;
            (-t * t / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(data: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win.iter().enumerate().map(|(j, c)| c * data[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(j, c)| c * rows[(y + j) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`, averaged over every window
/// that fits inside the image.
pub fn ssim(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.ensure_same_extents(b)?;
    let (h, w) = a.extents();
    let k = 2 * SSIM_RADIUS + 1;
    if h < k || w < k {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {k}x{k} pixels, got {h}x{w}"
        )));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let win = ssim_window();
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect() };
    let (mx, oh, ow) = filter_valid(x, h, w, &win);
    let (my, _, _) = filter_valid(y, h, w, &win);
    let (mxx, _, _) = filter_valid(&prod(&|p, _| p * p), h, w, &win);
    let (myy, _, _) = filter_valid(&prod(&|_, q| q * q), h, w, &win);
    let (mxy, _, _) = filter_valid(&prod(&|p, q| p * q), h, w, &win);
    let map: Vec<f64> = (0..oh * ow)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .collect();
    Ok(pairwise_sum(&map) / map.len() as f64)
}

/// Pixels selected by an optional `{0, 1}` confidence mask.
fn masked_pairs(pred: &Image, gt: &Image, conf: Option<&Image>) -> Result<Vec<(f64, f64)>> {
    pred.ensure_same_extents(gt)?;
    let mut out = Vec::with_capacity(pred.len());
    match conf {
        None => out.extend(pred.data().iter().copied().zip(gt.data().iter().copied())),
        Some(c) => {
            pred.ensure_same_extents(c)?;
            for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(c.data()) {
                if m == 1.0 {
                    out.push((p, g));
                } else if m != 0.0 {
                    return Err(Error::InvalidArgument(format!("confidence value {m} is not 0 or 1")));
                }
            }
        }
    }
    let first = out.first().map(|&(_, g)| g);
    if first.is_none() || out.iter().all(|&(_, g)| Some(g) == first) {
        return Err(Error::InvalidArgument(
            "confidence mask must cover at least two distinct ground-truth values".into(),
        ));
    }
    Ok(out)
}

/// Weighted least-squares fit of `a * p + b` to `g`.
fn weighted_affine_fit(pairs: &[(f64, f64)], weights: &[f64]) -> (f64, f64) {
    let sw: f64 = weights.iter().sum();
    let mp = pairs.iter().zip(weights).map(|(&(p, _), w)| w * p).sum::<f64>() / sw;
    let mg = pairs.iter().zip(weights).map(|(&(_, g), w)| w * g).sum::<f64>() / sw;
    let mut spp = 0.0;
    let mut spg = 0.0;
    for (&(p, g), w) in pairs.iter().zip(weights) {
        spp += w * (p - mp) * (p - mp);
        spg += w * (p - mp) * (g - mg);
    }
    let a = if spp > 0.0 { spg / spp } else { 0.0 };
    (a, mg - a * mp)
}

/// Norm of the affine-invariant weighted error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AiweNorm {
    L1,
    L2,
}

/// Affine-invariant error: `min_{a,b} (mean |a pred + b - gt|^p)^(1/p)` over
/// the confident pixels. `p = 2` is solved in closed form, `p = 1` by
/// iteratively reweighted least squares from the `p = 2` fit.
pub fn aiwe(pred: &Image, gt: &Image, conf: Option<&Image>, norm: AiweNorm) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, conf)?;
    let n = pairs.len() as f64;
    let mut weights = vec![1.0; pairs.len()];
    let (mut a, mut b) = weighted_affine_fit(&pairs, &weights);
    let resid = |a: f64, b: f64| -> Vec<f64> { pairs.iter().map(|&(p, g)| a * p + b - g).collect() };
    match norm {
        AiweNorm::L2 => {
            let sq: Vec<f64> = resid(a, b).iter().map(|r| r * r).collect();
            Ok((pairwise_sum(&sq) / n).sqrt())
        }
        AiweNorm::L1 => {
            for _ in 0..IRLS_ITERATIONS {
                for (w, r) in weights.iter_mut().zip(resid(a, b)) {
                    *w = 1.0 / r.abs().max(IRLS_DAMPING);
                }
                (a, b) = weighted_affine_fit(&pairs, &weights);
            }
            let abs: Vec<f64> = resid(a, b).iter().map(|r| r.abs()).collect();
            Ok(pairwise_sum(&abs) / n)
        }
    }
}

/// Ranks starting at 1, ties given their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// `1 - |rho_s|` with `rho_s` the Spearman rank correlation over the
/// confident pixels. A constant prediction counts as uncorrelated.
pub fn spearman_term(pred: &Image, gt: &Image, conf: Option<&Image>) -> Result<f64> {
    let pairs = masked_pairs(pred, gt, conf)?;
    let rp = average_ranks(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let rg = average_ranks(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let n = rp.len() as f64;
    let mp = rp.iter().sum::<f64>() / n;
    let mg = rg.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (p, g) in rp.iter().zip(&rg) {
        cov += (p - mp) * (g - mg);
        vp += (p - mp) * (p - mp);
        vg += (g - mg) * (g - mg);
    }
    if vp == 0.0 {
        return Ok(1.0);
    }
    let rho = (cov / (vp * vg).sqrt()).clamp(-1.0, 1.0);
    Ok(1.0 - rho.abs())
}

/// 2-D affine map `x' = a00 x + a01 y + tx`, `y' = a10 x + a11 y + ty` in
/// pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2 {
    pub a: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine2 {
    pub fn identity() -> Self {
        Self {
            a: [[1.0, 0.0], [0.0, 1.0]],
            t: [0.0, 0.0],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            t: [tx, ty],
            ..Self::identity()
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a[0][0] * x + self.a[0][1] * y + self.t[0],
            self.a[1][0] * x + self.a[1][1] * y + self.t[1],
        )
    }
}

/// Bilinear sample with edge clamping.
fn sample(img: &Image, x: f64, y: f64) -> f64 {
    let (h, w) = img.extents();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    (1.0 - ty) * ((1.0 - tx) * img.get(y0, x0) + tx * img.get(y0, x1))
        + ty * ((1.0 - tx) * img.get(y1, x0) + tx * img.get(y1, x1))
}

/// `out(x) = img(warp(x))`.
pub fn warp(img: &Image, warp: &Affine2) -> Image {
    let (h, w) = img.extents();
    Image::from_fn(h, w, |y, x| {
        let (sx, sy) = warp.apply(x as f64, y as f64);
        sample(img, sx, sy)
    })
    .expect("extents of an existing image")
}

fn solve6(m: &mut [[f64; 7]; 6]) -> Option<[f64; 6]> {
    for c in 0..6 {
        let piv = (c..6).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() < 1e-12 {
            return None;
        }
        m.swap(c, piv);
        for r in 0..6 {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..7 {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    Some(std::array::from_fn(|i| m[i][6] / m[i][i]))
}

/// Warp of `pred` onto `gt` by intensity-based Lucas-Kanade (Gauss-Newton,
/// forward additive, 50 iterations) over pixels at least `border` away from
/// the edges.
pub fn estimate_affine(pred: &Image, gt: &Image, border: usize) -> Result<Affine2> {
    pred.ensure_same_extents(gt)?;
    let (h, w) = pred.extents();
    if h <= 2 * border + 2 || w <= 2 * border + 2 {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} too small for a {border} px border"
        )));
    }
    let mut p = Affine2::identity();
    for _ in 0..LK_ITERATIONS {
        let mut m = [[0.0; 7]; 6];
        for y in border..h - border {
            for x in border..w - border {
                let (fx, fy) = (x as f64, y as f64);
                let (sx, sy) = p.apply(fx, fy);
                let e = gt.get(y, x) - sample(pred, sx, sy);
                let gx = 0.5 * (sample(pred, sx + 1.0, sy) - sample(pred, sx - 1.0, sy));
                let gy = 0.5 * (sample(pred, sx, sy + 1.0) - sample(pred, sx, sy - 1.0));
                let j = [gx * fx, gx * fy, gx, gy * fx, gy * fy, gy];
                for r in 0..6 {
                    for c in 0..6 {
                        m[r][c] += j[r] * j[c];
                    }
                    m[r][6] += j[r] * e;
                }
            }
        }
        let Some(d) = solve6(&mut m) else { break };
        p.a[0][0] += d[0];
        p.a[0][1] += d[1];
        p.t[0] += d[2];
        p.a[1][0] += d[3];
        p.a[1][1] += d[4];
        p.t[1] += d[5];
        if d.iter().all(|v| v.abs() < 1e-10) {
            break;
        }
    }
    Ok(p)
}

/// Aligns `pred` to `gt` with [`estimate_affine`], then crops `border`
/// pixels from every side of both.
pub fn align_affine_then_crop(pred: &Image, gt: &Image, border: usize) -> Result<(Image, Image, Affine2)> {
    let p = estimate_affine(pred, gt, border)?;
    let warped = warp(pred, &p);
    let (h, w) = gt.extents();
    let (ch, cw) = (h - 2 * border, w - 2 * border);
    Ok((
        warped.crop(border, border, ch, cw)?,
        gt.crop(border, border, ch, cw)?,
        p,
    ))
}

/// One evaluated scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    pub aiwe1: f64,
    pub aiwe2: f64,
    pub spearman_term: f64,
}

/// Formats a float with nine significant digits.
pub fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "psnr,ssim,mae,aiwe1,aiwe2,spearman_term";

    pub fn values(&self) -> [f64; 6] {
        [self.psnr, self.ssim, self.mae, self.aiwe1, self.aiwe2, self.spearman_term]
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|&v| fmt_sig9(v)).collect::<Vec<_>>().join(",")
    }

    /// Field-wise mean of a batch.
    pub fn mean(reports: &[EvalReport]) -> Option<EvalReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let s = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(EvalReport {
            psnr: s(|r| r.psnr),
            ssim: s(|r| r.ssim),
            mae: s(|r| r.mae),
            aiwe1: s(|r| r.aiwe1),
            aiwe2: s(|r| r.aiwe2),
            spearman_term: s(|r| r.spearman_term),
        })
    }
}

/// Scores an all-in-focus estimate and a defocus map against ground truth.
pub fn evaluate(
    aif: &Image,
    gt_aif: &Image,
    defocus: &Image,
    gt_defocus: &Image,
    conf: Option<&Image>,
    peak: f64,
) -> Result<EvalReport> {
    Ok(EvalReport {
        psnr: psnr(aif, gt_aif, peak)?,
        ssim: ssim(aif, gt_aif, peak)?,
        mae: mae(aif, gt_aif)?,
        aiwe1: aiwe(defocus, gt_defocus, conf, AiweNorm::L1)?,
        aiwe2: aiwe(defocus, gt_defocus, conf, AiweNorm::L2)?,
        spearman_term: spearman_term(defocus, gt_defocus, conf)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random::<f64>()).unwrap()
    }

    fn smooth(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.25 * (x * 0.21 + 0.3).sin() * (y * 0.17).cos() + 0.1 * ((x + y) * 0.11).sin()
        })
        .unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = random(16, 16, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_IDENTICAL);
        let b = a.map(|v| v + 1.0);
        assert!(psnr(&a, &b, 1.0).unwrap().abs() < 1e-12);
        let c = a.map(|v| v + 0.1);
        assert!((psnr(&a, &c, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let d = random(16, 16, 2);
        assert_eq!(psnr(&a, &d, 1.0).unwrap(), psnr(&d, &a, 1.0).unwrap());
    }

    #[test]
    fn mae_matches_loop() {
        let a = random(9, 13, 3);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert!((mae(&a, &a.map(|v| v + 0.05)).unwrap() - 0.05).abs() < 1e-12);
        let b = random(9, 13, 4);
        let mut acc = 0.0;
        for y in 0..9 {
            for x in 0..13 {
                acc += (a.get(y, x) - b.get(y, x)).abs();
            }
        }
        assert!((mae(&a, &b).unwrap() - acc / 117.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_cases() {
        let a = smooth(32, 32);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv, 1.0).unwrap() < 0.0);
        let noise = random(32, 32, 5);
        let noisy = a.zip_map(&noise, |v, n| v + 1e-3 * (n - 0.5)).unwrap();
        assert!(ssim(&a, &noisy, 1.0).unwrap() > 0.99);
        let b = random(32, 32, 6);
        assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-15);
        assert!(ssim(&random(8, 20, 1), &random(8, 20, 2), 1.0).is_err());
    }

    #[test]
    fn aiwe_affine_invariance() {
        let gt = random(32, 32, 7);
        for norm in [AiweNorm::L1, AiweNorm::L2] {
            assert!(aiwe(&gt, &gt, None, norm).unwrap() < 1e-12);
            assert!(aiwe(&gt.map(|v| 3.0 * v - 2.0), &gt, None, norm).unwrap() < 1e-9);
        }
    }

    #[test]
    fn aiwe_l2_matches_normal_equations() {
        let pred = random(32, 32, 8);
        let gt = random(32, 32, 9);
        let (p, g) = (pred.data(), gt.data());
        // Dense 2x2 normal equations for [a, b].
        let n = p.len() as f64;
        let (sp, sg) = (p.iter().sum::<f64>(), g.iter().sum::<f64>());
        let spp: f64 = p.iter().map(|v| v * v).sum();
        let spg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        let det = spp * n - sp * sp;
        let a = (spg * n - sp * sg) / det;
        let b = (spp * sg - sp * spg) / det;
        let rmse = (p.iter().zip(g).map(|(x, y)| (a * x + b - y).powi(2)).sum::<f64>() / n).sqrt();
        assert!((aiwe(&pred, &gt, None, AiweNorm::L2).unwrap() - rmse).abs() < 1e-9);
    }

    #[test]
    fn aiwe_mask_and_errors() {
        let gt = Image::from_fn(4, 4, |y, _| y as f64).unwrap();
        let mut pred = gt.clone();
        pred.set(0, 0, 100.0);
        let mut conf = Image::filled(4, 4, 1.0).unwrap();
        conf.set(0, 0, 0.0);
        assert!(aiwe(&pred, &gt, Some(&conf), AiweNorm::L2).unwrap() < 1e-12);
        assert!(aiwe(&pred, &gt, None, AiweNorm::L2).unwrap() > 0.1);
        let row = Image::from_fn(4, 4, |y, _| if y == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!(aiwe(&pred, &gt, Some(&row), AiweNorm::L1).is_err());
        conf.set(1, 1, 0.5);
        assert!(aiwe(&pred, &gt, Some(&conf), AiweNorm::L1).is_err());
    }

    #[test]
    fn aiwe_l1_is_robust_to_outliers() {
        let gt = Image::from_fn(10, 10, |y, x| (y * 10 + x) as f64).unwrap();
        let mut pred = gt.map(|v| 0.5 * v + 3.0);
        pred.set(5, 5, 1e3);
        let l1 = aiwe(&pred, &gt, None, AiweNorm::L1).unwrap();
        // The L1 optimum fits every pixel but the outlier exactly; twenty
        // reweighting steps close most of the gap from the least-squares fit.
        let optimum = (2.0 * 1e3 - 6.0 - 55.0) / 100.0;
        let l2_fit = {
            let s = |f: &dyn Fn(f64, f64) -> f64| pred.data().iter().zip(gt.data()).map(|(&p, &g)| f(p, g)).sum::<f64>();
            let n = 100.0;
            let (sp, sg, spp, spg) = (s(&|p, _| p), s(&|_, g| g), s(&|p, _| p * p), s(&|p, g| p * g));
            let a = (n * spg - sp * sg) / (n * spp - sp * sp);
            let b = (sg - a * sp) / n;
            s(&|p, g| (a * p + b - g).abs()) / n
        };
        assert!(l1 >= optimum - 1e-9 && l1 < optimum + 0.3 * (l2_fit - optimum), "{l1} {optimum} {l2_fit}");
    }

    #[test]
    fn spearman_cases() {
        let gt = random(20, 20, 10);
        assert!(spearman_term(&gt, &gt, None).unwrap() < 1e-12);
        assert!(spearman_term(&gt.map(|v| -v), &gt, None).unwrap() < 1e-12);
        assert!(spearman_term(&gt.map(|v| v.powi(3) + v.exp()), &gt, None).unwrap() < 1e-12);
        let indep = random(100, 100, 11);
        let gt_big = random(100, 100, 12);
        assert!(spearman_term(&indep, &gt_big, None).unwrap() > 0.95);
        assert_eq!(spearman_term(&Image::filled(20, 20, 1.0).unwrap(), &gt, None).unwrap(), 1.0);
    }

    #[test]
    fn average_ranks_handle_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn aligned_pair_is_just_cropped() {
        let a = smooth(48, 48);
        let (p, g, warp) = align_affine_then_crop(&a, &a, DEFAULT_BORDER).unwrap();
        assert_eq!(p.extents(), (32, 32));
        assert_eq!(warp, Affine2::identity());
        for (x, y) in p.data().iter().zip(g.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn recovers_translation() {
        let gt = smooth(64, 64);
        // pred(x) = gt(x - (2, 3)), so pred(x + (2, 3)) = gt(x).
        let pred = warp(&gt, &Affine2::translation(-2.0, -3.0));
        let est = estimate_affine(&pred, &gt, DEFAULT_BORDER).unwrap();
        assert!((est.t[0] - 2.0).abs() < 0.1, "{est:?}");
        assert!((est.t[1] - 3.0).abs() < 0.1, "{est:?}");
    }

    #[test]
    fn report_csv() {
        let r = EvalReport {
            psnr: 30.0,
            ssim: 0.9,
            mae: 0.01,
            aiwe1: 0.1,
            aiwe2: 0.2,
            spearman_term: 0.05,
        };
        assert_eq!(r.csv_row().split(',').count(), 6);
        assert!(r.csv_row().starts_with("3.00000000e1,"));
        assert_eq!(EvalReport::mean(&[r, r]).unwrap(), r);
    }
}
