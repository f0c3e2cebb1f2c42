use crate::error::{Error, Result};
use crate::numerics::Image;

/// Left and right multiplicative vignetting patterns, strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct VignettingField {
    left: Image,
    right: Image,
}

impl VignettingField {
    pub fn new(left: Image, right: Image) -> Result<Self> {
        left.ensure_same_extents(&right)?;
        for f in [&left, &right] {
            check_positive(f)?;
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &Image {
        &self.left
    }

    pub fn right(&self) -> &Image {
        &self.right
    }
}

fn check_positive(field: &Image) -> Result<()> {
    if let Some(v) = field.data().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "vignetting field must be strictly positive, found {v}"
        )));
    }
    Ok(())
}

/// Divides out a vignetting field.
pub fn correct_vignetting(img: &Image, field: &Image) -> Result<Image> {
    img.ensure_same_extents(field)?;
    check_positive(field)?;
    img.zip_map(field, |a, f| a / f)
}

/// Applies a vignetting field (inverse of [`correct_vignetting`]).
pub fn uncorrect_vignetting(img: &Image, field: &Image) -> Result<Image> {
    img.ensure_same_extents(field)?;
    check_positive(field)?;
    img.zip_map(field, |a, f| a * f)
}

/// Averages flat-field captures and normalizes the result to a maximum of 1.
pub fn estimate_vignetting(captures: &[Image]) -> Result<Image> {
    let first = captures
        .first()
        .ok_or_else(|| Error::InvalidArgument("no vignetting captures".into()))?;
    let mut acc = vec![0.0; first.len()];
    for c in captures {
        first.ensure_same_extents(c)?;
        for (a, v) in acc.iter_mut().zip(c.data()) {
            *a += v;
        }
    }
    let n = captures.len() as f64;
    let mean = Image::new(first.height(), first.width(), acc.into_iter().map(|a| a / n).collect())?;
    let peak = mean.max();
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument("flat-field captures are not positive".into()));
    }
    let field = mean.map(|v| v / peak);
    check_positive(&field)?;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn unit_field_is_identity() {
        let img = Image::from_fn(3, 3, |y, x| (y + x) as f64).unwrap();
        let ones = Image::filled(3, 3, 1.0).unwrap();
        assert_eq!(correct_vignetting(&img, &ones).unwrap(), img);
    }

    #[test]
    fn image_equal_to_field_gives_ones() {
        let f = Image::from_fn(4, 5, |y, x| 0.3 + 0.1 * (y * x) as f64).unwrap();
        let out = correct_vignetting(&f, &f).unwrap();
        assert!(out.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn correct_inverts_uncorrect() {
        let img = Image::from_fn(4, 4, |y, x| (y * 4 + x) as f64 * 0.1).unwrap();
        let f = Image::from_fn(4, 4, |y, x| 0.5 + 0.03 * (y + 2 * x) as f64).unwrap();
        let back = correct_vignetting(&uncorrect_vignetting(&img, &f).unwrap(), &f).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_field_rejected() {
        let img = Image::filled(2, 2, 1.0).unwrap();
        let mut f = Image::filled(2, 2, 1.0).unwrap();
        f.set(1, 1, 0.0);
        assert!(correct_vignetting(&img, &f).is_err());
    }

    #[test]
    fn estimate_constant_captures() {
        let one = estimate_vignetting(&[Image::filled(3, 3, 0.5).unwrap()]).unwrap();
        assert!(one.data().iter().all(|v| *v == 1.0));
        let two = estimate_vignetting(&[
            Image::filled(3, 3, 0.2).unwrap(),
            Image::filled(3, 3, 0.6).unwrap(),
        ])
        .unwrap();
        assert!(two.data().iter().all(|v| (*v - 1.0).abs() < 1e-15));
        assert!(estimate_vignetting(&[]).is_err());
    }

    #[test]
    fn noisy_captures_recover_smooth_field() {
        let (h, w) = (64, 64);
        let truth = Image::from_fn(h, w, |y, x| {
            let dy = (y as f64 - 31.5) / 32.0;
            let dx = (x as f64 - 31.5) / 32.0;
            1.0 - 0.4 * (dy * dy + dx * dx) / 2.0
        })
        .unwrap();
        let sigma = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, sigma).unwrap();
        let captures: Vec<Image> = (0..6)
            .map(|_| truth.map(|v| 0.8 * v + noise.sample(&mut rng)))
            .collect();
        let est = estimate_vignetting(&captures).unwrap();
        assert_eq!(est.max(), 1.0);
        // Peak normalization divides by a noisy maximum, so compare shapes
        // after matching means. Per-pixel noise of the average is
        // sigma / sqrt(6) in capture units, about 0.8 of field units.
        let (em, tm) = (est.mean(), truth.mean());
        let diffs: Vec<f64> = est
            .data()
            .iter()
            .zip(truth.data())
            .map(|(a, b)| a / em - b / tm)
            .collect();
        let noise = sigma / 6f64.sqrt() / (0.8 * tm);
        let rms = (diffs.iter().map(|d| d * d).sum::<f64>() / (h * w) as f64).sqrt();
        assert!(rms < 1.2 * noise, "rms {rms} vs {noise}");
        let worst = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(worst < 5.0 * noise, "worst {worst}");
    }
}
