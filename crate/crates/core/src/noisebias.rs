//! Frequency-domain noise analysis for two blurred observations: the
//! two-view Wiener estimate, the expected energy of a defocus hypothesis, and
//! the per-layer bias-correction constants.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernels::{scale_kernel, KernelGrid, View};
use crate::numerics::{kernel_spectrum, pairwise_sum, Kernel, Spectrum};
use crate::par;
use crate::synth::half_disc_kernel;

/// Side of the zero-padded square spectra used for energy and bias evaluation.
pub const SPECTRAL_EXTENT: usize = 128;

/// Gaussian noise variance and constant inverse spectral power of the image
/// prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorSpec {
    pub sigma2: f64,
    pub phi2: f64,
}

impl PriorSpec {
    pub fn new(sigma2: f64, phi2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma2 {sigma2} must be >= 0")));
        }
        if !(phi2 > 0.0) || !phi2.is_finite() {
            return Err(Error::InvalidArgument(format!("phi2 {phi2} must be > 0")));
        }
        Ok(Self { sigma2, phi2 })
    }

    fn damping(&self) -> f64 {
        self.sigma2 * self.phi2
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            sigma2: 5e-5,
            phi2: 100.0,
        }
    }
}

fn check_extents(specs: &[&Spectrum]) -> Result<()> {
    let (h, w) = (specs[0].height, specs[0].width);
    for s in specs {
        if (s.height, s.width) != (h, w) {
            return Err(Error::ExtentMismatch {
                expected: (h, w),
                got: (s.height, s.width),
            });
        }
    }
    Ok(())
}

/// Latent-image estimate from two observations:
/// `(I_l conj(K_l) + I_r conj(K_r)) / (|K_l|^2 + |K_r|^2 + sigma2 phi2)`.
pub fn wiener_two_obs(
    il: &Spectrum,
    ir: &Spectrum,
    kl: &Spectrum,
    kr: &Spectrum,
    prior: PriorSpec,
) -> Result<Spectrum> {
    check_extents(&[il, ir, kl, kr])?;
    let damping = prior.damping();
    let mut out = Spectrum::zeros(il.height, il.width);
    for (f, o) in out.data.iter_mut().enumerate() {
        let den = kl.data[f].norm_sqr() + kr.data[f].norm_sqr() + damping;
        if den == 0.0 {
            return Err(Error::InvalidArgument(
                "zero Wiener denominator; use sigma2 * phi2 > 0".into(),
            ));
        }
        *o = (il.data[f] * kl.data[f].conj() + ir.data[f] * kr.data[f].conj()) / den;
    }
    Ok(out)
}

/// How left/right kernels are produced for a defocus size.
#[derive(Clone, Debug)]
pub enum KernelFamily {
    /// Reference kernels rescaled from their reference defocus.
    Scaled {
        left: Kernel,
        right: Kernel,
        reference_defocus: f64,
    },
    /// Half discs of radius `d / 2`, rasterized directly at every size.
    HalfDisc,
}

impl KernelFamily {
    /// Kernels at the center of the image covered by two grids.
    pub fn from_grids(left: &KernelGrid, right: &KernelGrid) -> Result<Self> {
        let center = |g: &KernelGrid| {
            let (h, w) = g.coverage();
            g.blended_at((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
        };
        if left.reference_defocus() != right.reference_defocus() {
            return Err(Error::InvalidArgument(
                "left and right grids differ in reference defocus".into(),
            ));
        }
        Ok(Self::Scaled {
            left: center(left)?,
            right: center(right)?,
            reference_defocus: left.reference_defocus(),
        })
    }

    pub fn kernels(&self, d: f64) -> Result<(Kernel, Kernel)> {
        match self {
            KernelFamily::Scaled {
                left,
                right,
                reference_defocus,
            } => Ok((
                scale_kernel(left, *reference_defocus, d)?,
                scale_kernel(right, *reference_defocus, d)?,
            )),
            KernelFamily::HalfDisc => {
                if !(d >= 0.0) {
                    return Err(Error::InvalidArgument(format!("defocus {d} must be >= 0")));
                }
                Ok((half_disc_kernel(d / 2.0, View::Left), half_disc_kernel(d / 2.0, View::Right)))
            }
        }
    }

    /// Left and right spectra on an `n x n` grid.
    pub fn spectra(&self, d: f64, n: usize) -> Result<(Spectrum, Spectrum)> {
        let (l, r) = self.kernels(d)?;
        if l.size() > n || r.size() > n {
            return Err(Error::Kernel(format!(
                "kernel {}x{} does not fit a {n}x{n} spectrum",
                l.size(),
                l.size()
            )));
        }
        Ok((kernel_spectrum(&l, n, n), kernel_spectrum(&r, n, n)))
    }
}

/// Expected energy of hypothesis spectra `(kl, kr)` when the data were
/// blurred by `(tl, tr)`, summed over frequency bins.
pub fn expected_energy_spectra(
    tl: &Spectrum,
    tr: &Spectrum,
    kl: &Spectrum,
    kr: &Spectrum,
    prior: PriorSpec,
) -> Result<f64> {
    check_extents(&[tl, tr, kl, kr])?;
    let damping = prior.damping();
    let terms: Vec<f64> = (0..tl.data.len())
        .map(|f| {
            let b = kl.data[f].norm_sqr() + kr.data[f].norm_sqr() + damping;
            if b == 0.0 {
                return 0.0;
            }
            let cross: Complex64 = tl.data[f] * kr.data[f] - tr.data[f] * kl.data[f];
            let data = cross.norm_sqr() / (prior.phi2 * b);
            let noise = prior.sigma2
                * ((tl.data[f].norm_sqr() + tr.data[f].norm_sqr() + damping) / b + 1.0);
            data + noise
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Expected energy of defocus hypothesis `d_hyp` for data at `d_true`.
pub fn expected_energy(
    d_hyp: f64,
    d_true: f64,
    family: &KernelFamily,
    prior: PriorSpec,
    n: usize,
) -> Result<f64> {
    let (tl, tr) = family.spectra(d_true, n)?;
    let (kl, kr) = family.spectra(d_hyp, n)?;
    expected_energy_spectra(&tl, &tr, &kl, &kr, prior)
}

/// Per-pixel bias `sigma2 * mean_f[sigma2 phi2 / (|K_l|^2 + |K_r|^2 + sigma2 phi2)]`.
pub fn bias_term_spectra(kl: &Spectrum, kr: &Spectrum, prior: PriorSpec) -> Result<f64> {
    check_extents(&[kl, kr])?;
    let damping = prior.damping();
    if damping == 0.0 {
        return Ok(0.0);
    }
    let terms: Vec<f64> = kl
        .data
        .iter()
        .zip(&kr.data)
        .map(|(l, r)| damping / (l.norm_sqr() + r.norm_sqr() + damping))
        .collect();
    Ok(prior.sigma2 * pairwise_sum(&terms) / terms.len() as f64)
}

pub fn bias_term(d: f64, family: &KernelFamily, prior: PriorSpec, n: usize) -> Result<f64> {
    let (kl, kr) = family.spectra(d, n)?;
    bias_term_spectra(&kl, &kr, prior)
}

/// Per-layer bias constants, back to front.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasTable {
    values: Vec<f64>,
}

impl BiasTable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("bias values must be finite and >= 0".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Bias constants for each layer from the kernels at the image center.
pub fn build_bias_table(
    defocus: &[f64],
    left: &KernelGrid,
    right: &KernelGrid,
    prior: PriorSpec,
) -> Result<BiasTable> {
    let family = KernelFamily::from_grids(left, right)?;
    let values = par::map_slice(defocus, |&d| bias_term(d, &family, prior, SPECTRAL_EXTENT))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    BiasTable::new(values)
}

/// Energies over a hypothesis grid and the two minimizers.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub hypotheses: Vec<f64>,
    pub energies: Vec<f64>,
    /// `energies - bin_count * bias`.
    pub corrected: Vec<f64>,
    pub argmin_uncorrected: f64,
    pub argmin_corrected: f64,
}

fn argmin(xs: &[f64], vals: &[f64]) -> f64 {
    let mut best = 0;
    for i in 1..vals.len() {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    xs[best]
}

/// Evenly spaced hypotheses `lo, lo + step, ..` up to and including `hi`.
pub fn hypothesis_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !(lo >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad grid [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + step * i as f64).collect())
}

/// Evaluates the energy of each hypothesis with and without bias correction.
pub fn sweep(
    d_true: f64,
    hypotheses: &[f64],
    family: &KernelFamily,
    prior: PriorSpec,
    n: usize,
) -> Result<Sweep> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidArgument("empty hypothesis grid".into()));
    }
    let (tl, tr) = family.spectra(d_true, n)?;
    let bins = (n * n) as f64;
    let rows = par::map_slice(hypotheses, |&d| -> Result<(f64, f64)> {
        let (kl, kr) = family.spectra(d, n)?;
        let e = expected_energy_spectra(&tl, &tr, &kl, &kr, prior)?;
        let b = bias_term_spectra(&kl, &kr, prior)?;
        Ok((e, e - bins * b))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let energies: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let corrected: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(Sweep {
        argmin_uncorrected: argmin(hypotheses, &energies),
        argmin_corrected: argmin(hypotheses, &corrected),
        hypotheses: hypotheses.to_vec(),
        energies,
        corrected,
    })
}
