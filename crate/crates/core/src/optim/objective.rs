//! The full loss recorded on a gradient tape.

use std::sync::Arc;

use super::params::Params;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::SpatialBlur;
use crate::losses::{LossBreakdown, LossWeights, Problem};

/// Node handles of one recorded loss evaluation.
#[derive(Debug)]
pub struct Graph {
    pub total: Var,
    pub terms: [Var; 5],
    pub color_leaves: Vec<Var>,
    pub alpha_leaves: Vec<Var>,
}

/// How edge masks enter the gradient. Loss values are identical in both
/// modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EdgeMasks {
    /// Masks act as fixed per-step weights. Differentiating them rewards
    /// raising local variance of the all-in-focus image everywhere, which
    /// at the default weights outweighs the data terms.
    #[default]
    Frozen,
    /// Exact gradient of the loss, including the masks.
    Differentiated,
}

fn tv_edge(tape: &mut Tape, x: Var, masks: EdgeMasks) -> (Var, Var, Var) {
    let v = tape.local_variance(x);
    let mut e = tape.edge_mask(v);
    if masks == EdgeMasks::Frozen {
        e = tape.detach(e);
    }
    (tape.tv_edge_sum(v, e), v, e)
}

fn sum_all(tape: &mut Tape, vars: &[Var]) -> Var {
    tape.sum_scalars(vars)
}

/// Records the weighted five-term loss of `params` on `tape`.
pub fn record(
    tape: &mut Tape,
    params: &Params,
    problem: &Problem,
    weights: &LossWeights,
    masks: EdgeMasks,
) -> Result<Graph> {
    let n = params.layers();
    if n != problem.num_layers() || params.extents() != problem.extents() {
        return Err(Error::InvalidArgument("parameters do not match the problem".into()));
    }
    let bias = problem.bias().values().to_vec();

    let color_leaves: Vec<Var> = (0..n).map(|i| tape.leaf(params.color_pre(i).to_vec())).collect();
    let alpha_leaves: Vec<Var> = (1..n).map(|i| tape.leaf(params.alpha_pre(i).to_vec())).collect();
    let colors: Vec<Var> = color_leaves.iter().map(|&u| tape.softplus(u)).collect();
    let mut alphas = vec![tape.filled(1.0)];
    for &u in &alpha_leaves {
        alphas.push(tape.sigmoid(u));
    }

    // Transmittances, front to back.
    let mut trans = vec![alphas[0]; n];
    let mut occ: Option<Var> = None;
    for i in (0..n).rev() {
        trans[i] = match occ {
            Some(o) => tape.mul(alphas[i], o),
            None => alphas[i],
        };
        if i > 0 {
            let om = tape.one_minus(alphas[i]);
            occ = Some(match occ {
                Some(o) => tape.mul(o, om),
                None => om,
            });
        }
    }
    let tc: Vec<Var> = (0..n).map(|i| tape.mul(trans[i], colors[i])).collect();
    let mut sharp = tc[0];
    for &t in &tc[1..] {
        sharp = tape.add(sharp, t);
    }

    // Every blur of the evaluation in one parallel batch.
    let ca: Vec<Var> = (0..n).map(|i| tape.mul(colors[i], alphas[i])).collect();
    let mut items: Vec<(Var, Arc<SpatialBlur>)> = Vec::with_capacity(8 * n);
    for v in 0..2 {
        for i in 0..n {
            let b = &problem.blurs()[v][i];
            for x in [ca[i], alphas[i], colors[i], trans[i]] {
                items.push((x, b.clone()));
            }
        }
    }
    let blurred = tape.blur_many(&items);
    let at = |v: usize, i: usize, k: usize| blurred[(v * n + i) * 4 + k];

    let mut data_terms = Vec::new();
    let mut aux_terms = Vec::new();
    for v in 0..2 {
        let obs = tape.constant(problem.observed()[v].data().to_vec());
        let mut render: Option<Var> = None;
        let mut b_all: Option<Var> = None;
        let mut occ: Option<Var> = None;
        for i in (0..n).rev() {
            let (bca, ba) = (at(v, i, 0), at(v, i, 1));
            let scaled = tape.affine(ba, bias[i], 0.0);
            let (term, bterm) = match occ {
                Some(o) => (tape.mul(bca, o), tape.mul(scaled, o)),
                None => (bca, scaled),
            };
            render = Some(match render {
                Some(r) => tape.add(r, term),
                None => term,
            });
            b_all = Some(match b_all {
                Some(b) => tape.add(b, bterm),
                None => bterm,
            });
            if i > 0 {
                let om = tape.one_minus(ba);
                occ = Some(match occ {
                    Some(o) => tape.mul(o, om),
                    None => om,
                });
            }
        }
        let resid = tape.sub(render.expect("at least one layer"), obs);
        data_terms.push(tape.charb_bias_sum(resid, b_all.expect("at least one layer")));

        for i in 0..n {
            let (bc, bt) = (at(v, i, 2), at(v, i, 3));
            let r = tape.sub(bc, obs);
            let b = tape.filled(bias[i]);
            aux_terms.push(tape.weighted_charb_bias_sum(bt, r, b));
        }
    }
    let data = sum_all(tape, &data_terms);
    let aux = sum_all(tape, &aux_terms);

    let (sharp_tv, _, sharp_mask) = tv_edge(tape, sharp, masks);
    let mut intensity_terms = vec![sharp_tv];
    for &x in &tc {
        intensity_terms.push(tv_edge(tape, x, masks).0);
    }
    let intensity = sum_all(tape, &intensity_terms);

    let sqrt_alpha: Vec<Var> = alphas.iter().map(|&a| tape.sqrt_eps(a)).collect();
    let sqrt_trans: Vec<Var> = trans.iter().map(|&t| tape.sqrt_eps(t)).collect();
    let mut alpha_terms = Vec::new();
    for i in 0..n {
        for x in [sqrt_alpha[i], sqrt_trans[i]] {
            let var = tape.local_variance(x);
            alpha_terms.push(tape.tv_edge_sum(var, sharp_mask));
        }
    }
    let alpha = sum_all(tape, &alpha_terms);

    let mut entropy_terms = Vec::new();
    if n > 1 {
        let s = tape.entropy(&sqrt_alpha[1..]);
        entropy_terms.push(tape.mean(s));
    }
    let s = tape.entropy(&sqrt_trans);
    entropy_terms.push(tape.mean(s));
    let entropy = sum_all(tape, &entropy_terms);

    let terms = [data, aux, intensity, alpha, entropy];
    let w = weights.as_array();
    let weighted: Vec<(Var, f64)> = terms.iter().copied().zip(w).collect();
    let total = tape.combine(&weighted);
    Ok(Graph {
        total,
        terms,
        color_leaves,
        alpha_leaves,
    })
}

/// Loss breakdown and gradient with respect to the flat parameter vector.
pub fn loss_and_grad(
    params: &Params,
    problem: &Problem,
    weights: &LossWeights,
    masks: EdgeMasks,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (h, w) = params.extents();
    let mut tape = Tape::new(h, w);
    let g = record(&mut tape, params, problem, weights, masks)?;
    tape.backward(g.total);
    let terms = g.terms.map(|t| tape.scalar(t));
    let mut breakdown = LossBreakdown::from_terms(terms, weights);
    breakdown.total = tape.scalar(g.total);
    let mut grad = Vec::with_capacity(params.data().len());
    for leaf in g.color_leaves.iter().chain(&g.alpha_leaves) {
        match tape.grad(*leaf) {
            Some(gv) => grad.extend_from_slice(gv),
            None => grad.extend(std::iter::repeat_n(0.0, h * w)),
        }
    }
    Ok((breakdown, grad))
}

/// Loss breakdown without the backward pass.
pub fn loss_only(params: &Params, problem: &Problem, weights: &LossWeights) -> Result<LossBreakdown> {
    let (h, w) = params.extents();
    let mut tape = Tape::new(h, w);
    let g = record(&mut tape, params, problem, weights, EdgeMasks::Frozen)?;
    let terms = g.terms.map(|t| tape.scalar(t));
    let mut breakdown = LossBreakdown::from_terms(terms, weights);
    breakdown.total = tape.scalar(g.total);
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::View;
    use crate::losses::loss_total;
    use crate::noisebias::BiasTable;
    use crate::numerics::Image;
    use crate::optim::params::decode;
    use crate::synth::make_disc_kernels;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DEFOCUS: [f64; 3] = [5.0, 3.0, 1.0];

    fn problem(bias: [f64; 3]) -> Problem {
        let (h, w) = (12, 14);
        let left = Image::from_fn(h, w, |y, x| 0.4 + 0.3 * ((y * 3 + x) as f64 * 0.7).sin()).unwrap();
        let right = Image::from_fn(h, w, |y, x| 0.5 + 0.2 * ((y + 2 * x) as f64 * 0.5).cos()).unwrap();
        let lg = make_disc_kernels(2.5, View::Left, (h, w)).unwrap();
        let rg = make_disc_kernels(2.5, View::Right, (h, w)).unwrap();
        Problem::new(left, right, &lg, &rg, &DEFOCUS, BiasTable::new(bias.to_vec()).unwrap()).unwrap()
    }

    fn random_params(seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..5 * 12 * 14).map(|_| rng.random_range(-1.5..1.5)).collect();
        Params::from_data(3, 12, 14, data).unwrap()
    }

    #[test]
    fn tape_matches_direct_losses() {
        let p = problem([1e-4, 3e-4, 0.02]);
        let w = LossWeights::default();
        for seed in 0..3 {
            let params = random_params(seed);
            let direct = loss_total(&decode(&params, &DEFOCUS).unwrap(), &p, &w).unwrap();
            let (taped, _) = loss_and_grad(&params, &p, &w, EdgeMasks::Differentiated).unwrap();
            let (frozen, _) = loss_and_grad(&params, &p, &w, EdgeMasks::Frozen).unwrap();
            assert_eq!(frozen, taped);
            for (a, b) in taped.terms().iter().zip(direct.terms()) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
            }
            assert!((taped.total - direct.total).abs() <= 1e-10 * direct.total.abs());
            assert_eq!(loss_only(&params, &p, &w).unwrap(), taped);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = problem([0.0; 3]);
        let w = LossWeights {
            data: 2.0,
            aux: 1.5,
            intensity: 0.3,
            alpha: 0.7,
            entropy: 0.5,
        };
        let mut params = random_params(7);
        let (_, grad) = loss_and_grad(&params, &p, &w, EdgeMasks::Differentiated).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..40 {
            let k = rng.random_range(0..params.data().len());
            let orig = params.data()[k];
            params.data_mut()[k] = orig + h;
            let up = loss_only(&params, &p, &w).unwrap().total;
            params.data_mut()[k] = orig - h;
            let down = loss_only(&params, &p, &w).unwrap().total;
            params.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            // Rounding in the differences is about 1e-16 * loss / h.
            let tol = 1e-12 * up.abs() / h + 1e-5 * fd.abs().max(grad[k].abs());
            assert!((fd - grad[k]).abs() <= tol, "param {k}: fd {fd} tape {}", grad[k]);
        }
    }

    #[test]
    fn farthest_alpha_has_no_parameters() {
        let p = problem([0.0; 3]);
        let params = random_params(3);
        let (_, grad) = loss_and_grad(&params, &p, &LossWeights::default(), EdgeMasks::Frozen).unwrap();
        assert_eq!(grad.len(), params.data().len());
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}
