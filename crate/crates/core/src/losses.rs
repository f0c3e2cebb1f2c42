//! The five loss terms and their primitives, evaluated directly on an [`Mpi`].
//!
//! These plain evaluations define the loss values; the optimizer's gradient
//! tape rebuilds the same expressions and is checked against them.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{KernelGrid, SpatialBlur};
use crate::mpi::{self, Mpi};
use crate::noisebias::BiasTable;
use crate::numerics::{gaussian3_blur, pairwise_sum, Image};

/// Charbonnier scale.
pub const GAMMA: f64 = 0.1;
/// Edge-mask scale.
pub const BETA: f64 = 1.0 / 32.0;
/// Floor of the bias-corrected Charbonnier's inner argument.
pub const BIAS_CLAMP: f64 = 1e-6;
/// Offset inside the square roots of alphas and transmittances.
pub const SQRT_EPS: f64 = 1e-12;

/// `sqrt(x^2 / gamma^2 + 1)`.
pub fn charbonnier(x: f64, gamma: f64) -> f64 {
    (x * x / (gamma * gamma) + 1.0).sqrt()
}

/// `sqrt((x^2 - b) / gamma^2 + 1)` with the inner argument clamped to at
/// least [`BIAS_CLAMP`].
pub fn charbonnier_bias(x: f64, b: f64, gamma: f64) -> f64 {
    ((x * x - b) / (gamma * gamma) + 1.0).max(BIAS_CLAMP).sqrt()
}

/// Gaussian-weighted local variance `I^2 * g - (I * g)^2`.
pub fn local_variance(img: &Image) -> Image {
    let m = gaussian3_blur(img);
    let m2 = gaussian3_blur(&img.map(|v| v * v));
    m2.zip_map(&m, |a, b| a - b * b).expect("same extents")
}

/// Gaussian-weighted local standard deviation.
pub fn tv(img: &Image) -> Image {
    local_variance(img).map(|v| v.max(0.0).sqrt())
}

/// `1 - exp(-var / (2 beta^2))` of the local variance.
pub fn edge_mask(img: &Image, beta: f64) -> Image {
    local_variance(img).map(|v| 1.0 - (-v.max(0.0) / (2.0 * beta * beta)).exp())
}

/// `sum rho(tv(I)) (2 - E)`.
pub fn tv_edge(img: &Image, mask: &Image) -> Result<f64> {
    img.ensure_same_extents(mask)?;
    let v = local_variance(img);
    let terms: Vec<f64> = v
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &e)| (v.max(0.0) / (GAMMA * GAMMA) + 1.0).sqrt() * (2.0 - e))
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Per-pixel collision entropy `2 log sum x - log sum x^2` across a stack of
/// non-negative images; all-zero pixels give 0.
pub fn collision_entropy(stack: &[Image]) -> Result<Image> {
    let first = stack
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty entropy stack".into()))?;
    for img in stack {
        first.ensure_same_extents(img)?;
    }
    Image::from_fn(first.height(), first.width(), |y, x| {
        let (mut s1, mut s2) = (0.0, 0.0);
        for img in stack {
            let v = img.get(y, x);
            s1 += v;
            s2 += v * v;
        }
        if s1 > 0.0 {
            2.0 * s1.ln() - s2.ln()
        } else {
            0.0
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub data: f64,
    pub aux: f64,
    pub intensity: f64,
    pub alpha: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            data: 2.5e4,
            aux: 2.5e4,
            intensity: 30.0,
            alpha: 7.5e4,
            entropy: 12.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.data, self.aux, self.intensity, self.alpha, self.entropy]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub aux: f64,
    pub intensity: f64,
    pub alpha: f64,
    pub entropy: f64,
}

impl LossBreakdown {
    /// Weighted total of the five terms.
    pub fn from_terms(terms: [f64; 5], weights: &LossWeights) -> Self {
        let w = weights.as_array();
        let total = terms.iter().zip(&w).map(|(t, w)| t * w).sum();
        Self {
            total,
            data: terms[0],
            aux: terms[1],
            intensity: terms[2],
            alpha: terms[3],
            entropy: terms[4],
        }
    }

    pub fn terms(&self) -> [f64; 5] {
        [self.data, self.aux, self.intensity, self.alpha, self.entropy]
    }

    pub const CSV_HEADER: &'static str = "iteration,total,data,aux,intensity,alpha,entropy";

    /// One CSV row with 9 significant digits per value.
    pub fn csv_row(&self, iteration: usize) -> String {
        let mut row = iteration.to_string();
        for v in [self.total, self.data, self.aux, self.intensity, self.alpha, self.entropy] {
            row.push_str(&format!(",{v:.8e}"));
        }
        row
    }
}

/// Observed DP pair with the per-layer blurs and bias constants of a fit.
#[derive(Clone, Debug)]
pub struct Problem {
    observed: [Image; 2],
    blurs: [Vec<Arc<SpatialBlur>>; 2],
    bias: BiasTable,
    defocus: Vec<f64>,
}

impl Problem {
    pub fn new(
        left: Image,
        right: Image,
        left_grid: &KernelGrid,
        right_grid: &KernelGrid,
        defocus: &[f64],
        bias: BiasTable,
    ) -> Result<Self> {
        left.ensure_same_extents(&right)?;
        let extents = left.extents();
        let bl = mpi::layer_blurs(left_grid, defocus, extents)?;
        let br = mpi::layer_blurs(right_grid, defocus, extents)?;
        Self::from_blurs(left, right, [bl, br], defocus, bias)
    }

    pub fn from_blurs(
        left: Image,
        right: Image,
        blurs: [Vec<SpatialBlur>; 2],
        defocus: &[f64],
        bias: BiasTable,
    ) -> Result<Self> {
        left.ensure_same_extents(&right)?;
        let n = defocus.len();
        if blurs.iter().any(|b| b.len() != n) || bias.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} layers but {} / {} blurs and {} bias values",
                blurs[0].len(),
                blurs[1].len(),
                bias.len()
            )));
        }
        if blurs.iter().flatten().any(|b| b.extents() != left.extents()) {
            return Err(Error::InvalidArgument("blur extents differ from the inputs".into()));
        }
        let [bl, br] = blurs;
        let wrap = |v: Vec<SpatialBlur>| v.into_iter().map(Arc::new).collect();
        Ok(Self {
            observed: [left, right],
            blurs: [wrap(bl), wrap(br)],
            bias,
            defocus: defocus.to_vec(),
        })
    }

    pub fn extents(&self) -> (usize, usize) {
        self.observed[0].extents()
    }

    pub fn num_layers(&self) -> usize {
        self.defocus.len()
    }

    pub fn defocus(&self) -> &[f64] {
        &self.defocus
    }

    /// Observed left and right views.
    pub fn observed(&self) -> &[Image; 2] {
        &self.observed
    }

    /// Per-layer blurs of the left and right views.
    pub fn blurs(&self) -> &[Vec<Arc<SpatialBlur>>; 2] {
        &self.blurs
    }

    pub fn bias(&self) -> &BiasTable {
        &self.bias
    }

    /// Same problem with a different bias table.
    pub fn with_bias(&self, bias: BiasTable) -> Result<Self> {
        if bias.len() != self.num_layers() {
            return Err(Error::InvalidArgument("bias table length differs".into()));
        }
        Ok(Self {
            bias,
            ..self.clone()
        })
    }

    fn check(&self, m: &Mpi) -> Result<()> {
        if m.extents() != self.extents() {
            return Err(Error::ExtentMismatch {
                expected: self.extents(),
                got: m.extents(),
            });
        }
        if m.num_layers() != self.num_layers() {
            return Err(Error::InvalidArgument("layer count differs from the problem".into()));
        }
        Ok(())
    }
}

fn mul(a: &Image, b: &Image) -> Image {
    a.zip_map(b, |x, y| x * y).expect("same extents")
}

/// Bias-corrected data term: both views' rendered-vs-observed residuals under
/// `rho_b`, with the per-pixel bias composited like the rendering.
pub fn loss_data(m: &Mpi, p: &Problem) -> Result<f64> {
    p.check(m)?;
    let n = m.num_layers();
    let hw = m.colors()[0].len();
    let b = p.bias().values();
    let mut terms = Vec::with_capacity(2 * hw);
    for v in 0..2 {
        let blurs = &p.blurs()[v];
        let mut render = vec![0.0; hw];
        let mut b_all = vec![0.0; hw];
        let mut occ = vec![1.0; hw];
        for i in (0..n).rev() {
            let ca = mul(&m.colors()[i], &m.alphas()[i]);
            let bca = blurs[i].apply(&ca);
            let ba = blurs[i].apply(&m.alphas()[i]);
            for q in 0..hw {
                render[q] += bca.data()[q] * occ[q];
                b_all[q] += b[i] * ba.data()[q] * occ[q];
                if i > 0 {
                    occ[q] *= 1.0 - ba.data()[q];
                }
            }
        }
        let obs = p.observed()[v].data();
        for q in 0..hw {
            terms.push(charbonnier_bias(render[q] - obs[q], b_all[q], GAMMA));
        }
    }
    Ok(pairwise_sum(&terms))
}

/// Per-layer auxiliary data term weighted by blurred transmittance.
pub fn loss_aux(m: &Mpi, p: &Problem) -> Result<f64> {
    p.check(m)?;
    let t = mpi::transmittances(m);
    let b = p.bias().values();
    let mut terms = Vec::new();
    for v in 0..2 {
        let obs = p.observed()[v].data();
        for i in 0..m.num_layers() {
            let blur = &p.blurs()[v][i];
            let bt = blur.apply(&t[i]);
            let bc = blur.apply(&m.colors()[i]);
            for q in 0..obs.len() {
                terms.push(bt.data()[q] * charbonnier_bias(bc.data()[q] - obs[q], b[i], GAMMA));
            }
        }
    }
    Ok(pairwise_sum(&terms))
}

/// Edge-aware smoothness of the all-in-focus image and each layer's
/// transmitted intensity.
pub fn loss_intensity(m: &Mpi) -> Result<f64> {
    let t = mpi::transmittances(m);
    let sharp = mpi::composite_sharp(m);
    let mut total = tv_edge(&sharp, &edge_mask(&sharp, BETA))?;
    for (ti, ci) in t.iter().zip(m.colors()) {
        let tc = mul(ti, ci);
        total += tv_edge(&tc, &edge_mask(&tc, BETA))?;
    }
    Ok(total)
}

fn sqrt_eps(img: &Image) -> Image {
    img.map(|v| (v + SQRT_EPS).sqrt())
}

/// Edge-aware smoothness of sharpened alphas and transmittances, masked by
/// the all-in-focus image's edges.
pub fn loss_alpha(m: &Mpi) -> Result<f64> {
    let t = mpi::transmittances(m);
    let sharp = mpi::composite_sharp(m);
    let mask = edge_mask(&sharp, BETA);
    let mut total = 0.0;
    for (ai, ti) in m.alphas().iter().zip(&t) {
        total += tv_edge(&sqrt_eps(ai), &mask)?;
        total += tv_edge(&sqrt_eps(ti), &mask)?;
    }
    Ok(total)
}

/// Mean collision entropy of the sharpened alphas (farthest layer skipped)
/// plus that of the sharpened transmittances.
pub fn loss_entropy(m: &Mpi) -> Result<f64> {
    let t = mpi::transmittances(m);
    let alphas: Vec<Image> = m.alphas()[1..].iter().map(sqrt_eps).collect();
    let trans: Vec<Image> = t.iter().map(sqrt_eps).collect();
    let alpha_term = if alphas.is_empty() {
        0.0
    } else {
        collision_entropy(&alphas)?.mean()
    };
    Ok(alpha_term + collision_entropy(&trans)?.mean())
}

/// All five terms and their weighted total. Terms with zero weight are
/// still evaluated so the breakdown is complete.
pub fn loss_total(m: &Mpi, p: &Problem, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let terms = [
        loss_data(m, p)?,
        loss_aux(m, p)?,
        loss_intensity(m)?,
        loss_alpha(m)?,
        loss_entropy(m)?,
    ];
    Ok(LossBreakdown::from_terms(terms, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::View;
    use crate::numerics::Kernel;

    #[test]
    fn charbonnier_values() {
        assert_eq!(charbonnier(0.0, GAMMA), 1.0);
        assert_eq!(charbonnier(0.1, 0.1), 2f64.sqrt());
        let x = 100.0 * GAMMA;
        assert!((charbonnier(x, GAMMA) - x / GAMMA).abs() / (x / GAMMA) < 1e-4);
    }

    #[test]
    fn bias_charbonnier_values() {
        for x in [0.0, 0.05, -0.3] {
            assert_eq!(charbonnier_bias(x, 0.0, GAMMA), charbonnier(x, GAMMA));
        }
        assert_eq!(charbonnier_bias(0.5, 0.25, GAMMA), 1.0);
        assert_eq!(charbonnier_bias(0.0, 0.02, 0.1), BIAS_CLAMP.sqrt());
    }

    #[test]
    fn variance_primitives() {
        let c = Image::filled(6, 7, 0.3).unwrap();
        assert!(tv(&c).data().iter().all(|&v| v == 0.0));
        assert!(edge_mask(&c, BETA).data().iter().all(|&v| v == 0.0));
        assert_eq!(tv_edge(&c, &edge_mask(&c, BETA)).unwrap(), 2.0 * 42.0);

        let checker = Image::from_fn(8, 8, |y, x| if (y + x) % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let t = tv(&checker);
        for y in 1..7 {
            for x in 1..7 {
                // Same-sign taps (center, corners) and opposite-sign taps
                // (edges) each carry weight 1/2, so the window mean is 0.
                assert!((t.get(y, x) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_mask_closed_form() {
        // A +-a checkerboard has windowed variance a^2 = 2 beta^2.
        let a = BETA * 2f64.sqrt();
        let img = Image::from_fn(8, 8, |y, x| if (y + x) % 2 == 0 { a } else { -a }).unwrap();
        let e = edge_mask(&img, BETA);
        assert!((e.get(4, 4) - (1.0 - (-1f64).exp())).abs() < 1e-12);
        let strong = img.map(|v| v * 100.0);
        assert!(edge_mask(&strong, BETA).get(4, 4) > 1.0 - 1e-12);
    }

    #[test]
    fn tv_edge_mask_limits() {
        let img = Image::from_fn(9, 9, |y, x| ((y * 7 + x * 3) % 5) as f64 * 0.1).unwrap();
        let rho_sum: f64 = local_variance(&img)
            .data()
            .iter()
            .map(|v| (v.max(0.0) / (GAMMA * GAMMA) + 1.0).sqrt())
            .sum();
        let ones = Image::filled(9, 9, 1.0).unwrap();
        let zeros = Image::zeros(9, 9).unwrap();
        assert!((tv_edge(&img, &ones).unwrap() - rho_sum).abs() < 1e-10);
        assert!((tv_edge(&img, &zeros).unwrap() - 2.0 * rho_sum).abs() < 1e-10);
    }

    #[test]
    fn entropy_closed_forms() {
        let one_hot = vec![
            Image::filled(2, 2, 0.0).unwrap(),
            Image::filled(2, 2, 0.7).unwrap(),
            Image::filled(2, 2, 0.0).unwrap(),
        ];
        assert!(collision_entropy(&one_hot).unwrap().data().iter().all(|&v| v == 0.0));
        let uniform = vec![Image::filled(2, 2, 0.3).unwrap(); 4];
        for &v in collision_entropy(&uniform).unwrap().data() {
            assert!((v - 4f64.ln()).abs() < 1e-15);
        }
        let zero = vec![Image::zeros(2, 2).unwrap(); 3];
        assert!(collision_entropy(&zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    fn delta_problem(obs: &Image, bias: Vec<f64>, defocus: &[f64]) -> Problem {
        let (h, w) = obs.extents();
        let grid = KernelGrid::uniform(View::Left, Kernel::identity(), 100.0, (h, w)).unwrap();
        Problem::new(
            obs.clone(),
            obs.clone(),
            &grid,
            &grid.mirrored(View::Right),
            defocus,
            BiasTable::new(bias).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn data_term_at_perfect_fit() {
        let c = Image::from_fn(5, 6, |y, x| 0.1 * (y + x) as f64).unwrap();
        let one = Image::filled(5, 6, 1.0).unwrap();
        let m = Mpi::new(vec![c.clone()], vec![one], vec![3.0]).unwrap();
        let p = delta_problem(&c, vec![0.0], &[3.0]);
        assert_eq!(loss_data(&m, &p).unwrap(), 60.0);

        // Zero residual with bias b: rho_b(0, b) everywhere.
        let b = 0.004;
        let p = delta_problem(&c, vec![b], &[3.0]);
        let expected = 60.0 * charbonnier_bias(0.0, b, GAMMA);
        assert!((loss_data(&m, &p).unwrap() - expected).abs() < 1e-12);
        // Single opaque layer: aux weight is one and matches the data term.
        assert!((loss_aux(&m, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_mpi_smoothness_floor() {
        let c = Image::filled(6, 6, 0.4).unwrap();
        let one = Image::filled(6, 6, 1.0).unwrap();
        let zero = Image::zeros(6, 6).unwrap();
        let m = Mpi::new(
            vec![c.clone(), c.clone(), c],
            vec![one.clone(), zero, one],
            vec![5.0, 3.0, 1.0],
        )
        .unwrap();
        assert_eq!(loss_intensity(&m).unwrap(), 2.0 * 36.0 * 4.0);
        // One visible layer per pixel: only the 1e-12 square-root offset
        // keeps the entropies above zero.
        let e = loss_entropy(&m).unwrap();
        assert!((0.0..1e-5).contains(&e), "{e}");
    }

    #[test]
    fn breakdown_is_weighted_sum() {
        let w = LossWeights {
            data: 2.0,
            aux: 0.0,
            intensity: 0.5,
            alpha: 0.0,
            entropy: 3.0,
        };
        let b = LossBreakdown::from_terms([1.0, 7.0, 2.0, 9.0, 4.0], &w);
        assert_eq!(b.total, 2.0 + 1.0 + 12.0);
        assert_eq!(b.csv_row(3).split(',').count(), 7);
        let zero = LossBreakdown::from_terms([1.0, 2.0, 3.0, 4.0, 5.0], &LossWeights {
            data: 0.0,
            aux: 0.0,
            intensity: 0.0,
            alpha: 0.0,
            entropy: 0.0,
        });
        assert_eq!(zero.total, 0.0);
    }
}
