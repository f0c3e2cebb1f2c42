//! The optimization loop and its resumable state.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::adam::{lr_schedule, Adam};
use super::config::OptimConfig;
use super::objective::{loss_and_grad, loss_only, EdgeMasks};
use super::params::{decode, denormalize, init_params, normalize_inputs, Params};
use crate::error::{Error, Result};
use crate::kernels::KernelGrid;
use crate::losses::{LossBreakdown, Problem};
use crate::mpi::{self, Mpi};
use crate::noisebias::{build_bias_table, BiasTable};
use crate::numerics::io::{
    expect_magic, read_f64, read_f64s, read_u32, read_u64, write_f64, write_f64s, write_u32,
    write_u64,
};
use crate::numerics::Image;

pub const STATE_MAGIC: &[u8; 8] = b"MPIDOPT1";

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    /// Completed iterations.
    pub iteration: usize,
    /// Input normalization factor.
    pub scale: f64,
    pub defocus: Vec<f64>,
    pub bias: BiasTable,
    pub params: Params,
    pub adam: Adam,
    pub history: Vec<LossBreakdown>,
    /// Canonical text of the config the run was started with.
    pub config_text: String,
}

/// Result of a finished fit, with intensities back in input units.
#[derive(Clone, Debug)]
pub struct Fit {
    pub mpi: Mpi,
    pub all_in_focus: Image,
    pub defocus_map: Image,
    pub history: Vec<LossBreakdown>,
    /// Loss of the final parameters.
    pub final_loss: LossBreakdown,
    pub scale: f64,
}

#[derive(Debug)]
pub struct Optimizer {
    config: OptimConfig,
    problem: Problem,
    state: OptimState,
}

impl Optimizer {
    /// Normalizes the (vignetting-corrected) inputs, builds the layer sizes
    /// and bias table, and initializes the parameters.
    pub fn new(
        left: &Image,
        right: &Image,
        left_grid: &KernelGrid,
        right_grid: &KernelGrid,
        config: &OptimConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (l, r, scale) = normalize_inputs(left, right)?;
        let defocus = mpi::layer_defocus_sizes(config.layers, config.front_scale, config.back_scale)?;
        let bias = build_bias_table(&defocus, left_grid, right_grid, config.prior)?;
        let params = init_params(&l, &r, config.layers)?;
        let problem = Problem::new(l, r, left_grid, right_grid, &defocus, bias.clone())?;
        let adam = Adam::new(
            params.data().len(),
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        );
        Ok(Self {
            config: config.clone(),
            problem,
            state: OptimState {
                iteration: 0,
                scale,
                defocus,
                bias,
                params,
                adam,
                history: Vec::new(),
                config_text: config.to_text(),
            },
        })
    }

    /// Continues from a saved state; the inputs, grids and config must be
    /// the ones the state was produced with.
    pub fn resume(
        left: &Image,
        right: &Image,
        left_grid: &KernelGrid,
        right_grid: &KernelGrid,
        config: &OptimConfig,
        state: OptimState,
    ) -> Result<Self> {
        if state.config_text != config.to_text() {
            return Err(Error::Config("checkpoint was written with a different config".into()));
        }
        let mut opt = Self::new(left, right, left_grid, right_grid, config)?;
        if opt.state.scale != state.scale || opt.state.defocus != state.defocus {
            return Err(Error::Config("checkpoint does not match these inputs".into()));
        }
        if state.params.extents() != opt.state.params.extents() {
            return Err(Error::Config("checkpoint extents differ from the inputs".into()));
        }
        opt.problem = opt.problem.with_bias(state.bias.clone())?;
        opt.state = state;
        Ok(opt)
    }

    /// Replaces the bias table, e.g. with zeros for an uncorrected run.
    pub fn set_bias(&mut self, bias: BiasTable) -> Result<()> {
        self.problem = self.problem.with_bias(bias.clone())?;
        self.state.bias = bias;
        Ok(())
    }

    pub fn config(&self) -> &OptimConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimState {
        &self.state
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.config.iterations
    }

    /// Current MPI in normalized intensity units.
    pub fn current_mpi(&self) -> Result<Mpi> {
        decode(&self.state.params, &self.state.defocus)
    }

    /// One Adam step. Returns the loss at the parameters before the step.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let t = self.state.iteration;
        let masks = if self.config.edge_mask_grad {
            EdgeMasks::Differentiated
        } else {
            EdgeMasks::Frozen
        };
        let (loss, grad) = loss_and_grad(&self.state.params, &self.problem, &self.config.weights, masks)?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss {} at iteration {t}; last finite parameters kept",
                loss.total
            )));
        }
        let lr = lr_schedule(t, self.config.iterations, self.config.lr_start, self.config.lr_end);
        self.state.adam.step(self.state.params.data_mut(), &grad, lr);
        self.state.iteration += 1;
        self.state.history.push(loss);
        Ok(loss)
    }

    /// Steps until the configured iteration count, calling `after_step` after
    /// every step (e.g. for logging and checkpoints).
    pub fn run(&mut self, mut after_step: impl FnMut(&Self, &LossBreakdown) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let loss = self.step()?;
            after_step(self, &loss)?;
        }
        Ok(())
    }

    /// Decoded MPI with intensities divided by the normalization factor,
    /// the all-in-focus image and the defocus map.
    pub fn finish(&self) -> Result<Fit> {
        let m = self.current_mpi()?;
        let final_loss = loss_only(&self.state.params, &self.problem, &self.config.weights)?;
        let s = self.state.scale;
        let colors = m.colors().iter().map(|c| denormalize(c, s)).collect();
        let out = Mpi::new(colors, m.alphas().to_vec(), m.defocus_sizes().to_vec())?;
        Ok(Fit {
            all_in_focus: mpi::composite_sharp(&out),
            defocus_map: mpi::composite_defocus_map(&out),
            mpi: out,
            history: self.state.history.clone(),
            final_loss,
            scale: s,
        })
    }
}

/// Runs a full fit without checkpoints.
pub fn optimize(
    left: &Image,
    right: &Image,
    left_grid: &KernelGrid,
    right_grid: &KernelGrid,
    config: &OptimConfig,
) -> Result<Fit> {
    let mut opt = Optimizer::new(left, right, left_grid, right_grid, config)?;
    opt.run(|_, _| Ok(()))?;
    opt.finish()
}

/// Serializes optimizer state: magic `MPIDOPT1`, `u64` iteration, `f64`
/// scale, `u32` layers, `u32` height, `u32` width, defocus and bias as `f64`
/// lists, the Adam constants and step count, parameters and both moments,
/// `u64` history length with six `f64` per entry, and the config text as a
/// `u32` byte length plus UTF-8 bytes.
pub fn write_state<W: Write>(w: &mut W, s: &OptimState) -> Result<()> {
    let (h, wd) = s.params.extents();
    let n = s.params.layers();
    w.write_all(STATE_MAGIC)?;
    write_u64(w, s.iteration as u64)?;
    write_f64(w, s.scale)?;
    write_u32(w, n as u32)?;
    write_u32(w, h as u32)?;
    write_u32(w, wd as u32)?;
    write_f64s(w, &s.defocus)?;
    write_f64s(w, s.bias.values())?;
    write_f64(w, s.adam.beta1)?;
    write_f64(w, s.adam.beta2)?;
    write_f64(w, s.adam.eps)?;
    write_u64(w, s.adam.steps())?;
    write_f64s(w, s.params.data())?;
    let (m, v) = s.adam.moments();
    write_f64s(w, m)?;
    write_f64s(w, v)?;
    write_u64(w, s.history.len() as u64)?;
    for b in &s.history {
        write_f64(w, b.total)?;
        write_f64s(w, &b.terms())?;
    }
    write_u32(w, s.config_text.len() as u32)?;
    w.write_all(s.config_text.as_bytes())?;
    Ok(())
}

pub fn read_state<R: Read>(r: &mut R) -> Result<OptimState> {
    expect_magic(r, STATE_MAGIC, "optimizer state")?;
    let iteration = read_u64(r)? as usize;
    let scale = read_f64(r)?;
    let n = read_u32(r)? as usize;
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    if n == 0 || h == 0 || w == 0 || n > 4096 {
        return Err(Error::format("optimizer state", format!("bad shape {n} x {h} x {w}")));
    }
    let defocus = read_f64s(r, n)?;
    let bias = BiasTable::new(read_f64s(r, n)?)?;
    let (b1, b2, eps) = (read_f64(r)?, read_f64(r)?, read_f64(r)?);
    let t = read_u64(r)?;
    let len = (2 * n - 1) * h * w;
    let params = Params::from_data(n, h, w, read_f64s(r, len)?)?;
    let m = read_f64s(r, len)?;
    let v = read_f64s(r, len)?;
    let adam = Adam::from_state(b1, b2, eps, m, v, t)?;
    let hist_len = read_u64(r)? as usize;
    if hist_len > 1 << 32 {
        return Err(Error::format("optimizer state", "history too long"));
    }
    let mut history = Vec::with_capacity(hist_len);
    for _ in 0..hist_len {
        let total = read_f64(r)?;
        let t = read_f64s(r, 5)?;
        history.push(LossBreakdown {
            total,
            data: t[0],
            aux: t[1],
            intensity: t[2],
            alpha: t[3],
            entropy: t[4],
        });
    }
    let text_len = read_u32(r)? as usize;
    let mut bytes = vec![0u8; text_len];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format("optimizer state", "truncated config text"))?;
    let config_text = String::from_utf8(bytes)
        .map_err(|_| Error::format("optimizer state", "config text is not UTF-8"))?;
    Ok(OptimState {
        iteration,
        scale,
        defocus,
        bias,
        params,
        adam,
        history,
        config_text,
    })
}

pub fn save_state(path: impl AsRef<Path>, s: &OptimState) -> Result<()> {
    let mut buf = Vec::new();
    write_state(&mut buf, s)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>) -> Result<OptimState> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let s = read_state(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::format("optimizer state", "trailing bytes"));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::View;
    use crate::synth::make_disc_kernels;

    fn setup() -> (Image, Image, KernelGrid, KernelGrid, OptimConfig) {
        let (h, w) = (10, 12);
        let left = Image::from_fn(h, w, |y, x| 40.0 + 20.0 * ((y * 2 + x) as f64 * 0.6).sin()).unwrap();
        let right = Image::from_fn(h, w, |y, x| 45.0 + 15.0 * ((y + x * 3) as f64 * 0.4).cos()).unwrap();
        let lg = make_disc_kernels(2.0, View::Left, (h, w)).unwrap();
        let rg = make_disc_kernels(2.0, View::Right, (h, w)).unwrap();
        let mut cfg = OptimConfig::default();
        cfg.iterations = 8;
        cfg.layers = 3;
        cfg.back_scale = 5.0;
        (left, right, lg, rg, cfg)
    }

    #[test]
    fn loss_decreases() {
        let (l, r, lg, rg, mut cfg) = setup();
        cfg.iterations = 30;
        cfg.lr_start = 0.05;
        cfg.lr_end = 0.01;
        let fit = optimize(&l, &r, &lg, &rg, &cfg).unwrap();
        assert_eq!(fit.history.len(), 30);
        assert!(fit.final_loss.total < fit.history[0].total);
        assert_eq!(fit.all_in_focus.extents(), (10, 12));
        // Intensities come back in input units.
        let mean = fit.all_in_focus.sum() / fit.all_in_focus.len() as f64;
        assert!(mean > 10.0, "mean {mean}");
    }

    #[test]
    fn state_round_trip_and_resume_are_exact() {
        let (l, r, lg, rg, cfg) = setup();
        let mut full = Optimizer::new(&l, &r, &lg, &rg, &cfg).unwrap();
        full.run(|_, _| Ok(())).unwrap();

        let mut first = Optimizer::new(&l, &r, &lg, &rg, &cfg).unwrap();
        for _ in 0..3 {
            first.step().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        save_state(&path, first.state()).unwrap();
        let loaded = load_state(&path).unwrap();
        assert_eq!(&loaded, first.state());

        let mut resumed = Optimizer::resume(&l, &r, &lg, &rg, &cfg, loaded).unwrap();
        resumed.run(|_, _| Ok(())).unwrap();
        assert_eq!(resumed.state(), full.state());
    }

    #[test]
    fn resume_rejects_other_config() {
        let (l, r, lg, rg, cfg) = setup();
        let opt = Optimizer::new(&l, &r, &lg, &rg, &cfg).unwrap();
        let mut other = cfg.clone();
        other.iterations = 9;
        assert!(Optimizer::resume(&l, &r, &lg, &rg, &other, opt.state().clone()).is_err());
    }

    #[test]
    fn truncated_state_is_rejected() {
        let (l, r, lg, rg, cfg) = setup();
        let opt = Optimizer::new(&l, &r, &lg, &rg, &cfg).unwrap();
        let mut buf = Vec::new();
        write_state(&mut buf, opt.state()).unwrap();
        for cut in [0, 7, 20, buf.len() / 2, buf.len() - 1] {
            assert!(read_state(&mut &buf[..cut]).is_err());
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_state(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let (l, r, lg, rg, cfg) = setup();
        let mut opt = Optimizer::new(&l, &r, &lg, &rg, &cfg).unwrap();
        opt.state.params.data_mut()[0] = f64::NAN;
        assert!(matches!(opt.step(), Err(Error::NonFinite(_))));
        assert_eq!(opt.iteration(), 0);
    }
}
