//! Reverse-mode differentiation over image-valued nodes.
//!
//! Every node holds an `h x w` image or a single scalar. Operations are
//! recorded in creation order and differentiated by one reverse sweep.
//! Blurs recorded together with [`Tape::blur_many`] form a batch whose
//! forward and adjoint convolutions run in parallel; their contributions
//! are accumulated in a fixed order so results do not depend on threading.

use std::sync::Arc;

use crate::kernels::SpatialBlur;
use crate::losses::{BETA, BIAS_CLAMP, GAMMA, SQRT_EPS};
use crate::numerics::{gaussian3_adjoint, gaussian3_blur, pairwise_sum, Image};
use crate::par;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + offset`.
    Affine(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    SqrtEps(Var),
    Blur(Var, Arc<SpatialBlur>, usize),
    /// Gaussian-weighted local variance.
    LocalVar(Var),
    /// `sum rho(var) (2 - mask)`.
    TvEdgeSum(Var, Var),
    /// `1 - exp(-var / (2 beta^2))`.
    EdgeMask(Var),
    /// `sum rho_b(x, b)`.
    CharbBiasSum(Var, Var),
    /// `sum w rho_b(x, b)`.
    WeightedCharbBiasSum(Var, Var, Var),
    /// Per-pixel collision entropy across the stack.
    Entropy(Vec<Var>),
    Mean(Var),
    /// `sum_k w_k s_k` of scalar nodes.
    Combine(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Debug)]
pub struct Tape {
    height: usize,
    width: usize,
    nodes: Vec<Node>,
    batches: usize,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn rho_var(v: f64) -> f64 {
    (v.max(0.0) / (GAMMA * GAMMA) + 1.0).sqrt()
}

fn bias_inner(x: f64, b: f64) -> f64 {
    (x * x - b) / (GAMMA * GAMMA) + 1.0
}

fn charb_bias(x: f64, b: f64) -> f64 {
    bias_inner(x, b).max(BIAS_CLAMP).sqrt()
}

/// `d rho_b / dx` and `d rho_b / db`; zero inside the clamp.
fn charb_bias_grad(x: f64, b: f64) -> (f64, f64) {
    let inner = bias_inner(x, b);
    if inner <= BIAS_CLAMP {
        return (0.0, 0.0);
    }
    let r = inner.sqrt();
    (x / (GAMMA * GAMMA * r), -0.5 / (GAMMA * GAMMA * r))
}

pub(crate) fn activate_sigmoid(u: f64) -> f64 {
    sigmoid(u)
}

pub(crate) fn activate_softplus(u: f64) -> f64 {
    softplus(u)
}

impl Tape {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            nodes: Vec::new(),
            batches: 0,
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "not a scalar node");
        val[0]
    }

    pub fn image(&self, v: Var) -> Image {
        Image::new(self.height, self.width, self.value(v).to_vec()).expect("image node")
    }

    fn check_image(&self, data: &[f64]) {
        assert_eq!(data.len(), self.pixels(), "image node extents mismatch");
    }

    /// Differentiable input.
    pub fn leaf(&mut self, data: Vec<f64>) -> Var {
        self.check_image(&data);
        self.push(Op::Leaf, data)
    }

    pub fn constant(&mut self, data: Vec<f64>) -> Var {
        self.check_image(&data);
        self.push(Op::Const, data)
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).to_vec();
        self.push(Op::Const, v)
    }

    pub fn filled(&mut self, v: f64) -> Var {
        let n = self.pixels();
        self.push(Op::Const, vec![v; n])
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "operand extents mismatch");
        va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(a).iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn affine(&mut self, a: Var, scale: f64, offset: f64) -> Var {
        let v = self.unary(a, |x| scale * x + offset);
        self.push(Op::Affine(a, scale), v)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.unary(a, sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.unary(a, softplus);
        self.push(Op::Softplus(a), v)
    }

    /// `sqrt(a + 1e-12)`.
    pub fn sqrt_eps(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| (x + SQRT_EPS).sqrt());
        self.push(Op::SqrtEps(a), v)
    }

    pub fn blur(&mut self, a: Var, blur: &Arc<SpatialBlur>) -> Var {
        self.blur_many(&[(a, blur.clone())])[0]
    }

    /// Records independent blurs as one batch evaluated in parallel.
    pub fn blur_many(&mut self, items: &[(Var, Arc<SpatialBlur>)]) -> Vec<Var> {
        let inputs: Vec<Image> = items.iter().map(|(a, _)| self.image(*a)).collect();
        let outputs = par::map_range(items.len(), |k| items[k].1.apply(&inputs[k]).into_data());
        let batch = self.batches;
        self.batches += 1;
        items
            .iter()
            .zip(outputs)
            .map(|((a, b), v)| self.push(Op::Blur(*a, b.clone(), batch), v))
            .collect()
    }

    pub fn local_variance(&mut self, a: Var) -> Var {
        let img = self.image(a);
        let v = crate::losses::local_variance(&img).into_data();
        self.push(Op::LocalVar(a), v)
    }

    pub fn edge_mask(&mut self, var: Var) -> Var {
        let v = self.unary(var, |x| 1.0 - (-x.max(0.0) / (2.0 * BETA * BETA)).exp());
        self.push(Op::EdgeMask(var), v)
    }

    /// `sum rho(sqrt(var)) (2 - mask)` as a scalar.
    pub fn tv_edge_sum(&mut self, var: Var, mask: Var) -> Var {
        let terms = self.zip(var, mask, |v, e| rho_var(v) * (2.0 - e));
        let s = pairwise_sum(&terms);
        self.push(Op::TvEdgeSum(var, mask), vec![s])
    }

    pub fn charb_bias_sum(&mut self, x: Var, b: Var) -> Var {
        let terms = self.zip(x, b, charb_bias);
        let s = pairwise_sum(&terms);
        self.push(Op::CharbBiasSum(x, b), vec![s])
    }

    pub fn weighted_charb_bias_sum(&mut self, w: Var, x: Var, b: Var) -> Var {
        let terms: Vec<f64> = self
            .zip(x, b, charb_bias)
            .iter()
            .zip(self.value(w))
            .map(|(r, w)| w * r)
            .collect();
        let s = pairwise_sum(&terms);
        self.push(Op::WeightedCharbBiasSum(w, x, b), vec![s])
    }

    /// Per-pixel `2 log sum x - log sum x^2`, zero where the sum vanishes.
    pub fn entropy(&mut self, stack: &[Var]) -> Var {
        assert!(!stack.is_empty(), "empty entropy stack");
        let n = self.pixels();
        let mut out = vec![0.0; n];
        for (q, o) in out.iter_mut().enumerate() {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in stack {
                let x = self.nodes[v.0].value[q];
                s1 += x;
                s2 += x * x;
            }
            if s1 > 0.0 {
                *o = 2.0 * s1.ln() - s2.ln();
            }
        }
        self.push(Op::Entropy(stack.to_vec()), out)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let s = pairwise_sum(self.value(a)) / self.value(a).len() as f64;
        self.push(Op::Mean(a), vec![s])
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let s = terms.iter().map(|(v, w)| w * self.scalar(*v)).sum();
        self.push(Op::Combine(terms.to_vec()), vec![s])
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Var {
        let t: Vec<(Var, f64)> = terms.iter().map(|&v| (v, 1.0)).collect();
        self.combine(&t)
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl Fn(usize) -> f64) {
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        for (q, gq) in g.iter_mut().enumerate() {
            *gq += f(q);
        }
    }

    /// Reverse sweep from scalar node `root`. Afterwards [`Tape::grad`]
    /// returns the derivative of `root` with respect to leaves and blurs.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
        grads[root.0] = Some(vec![1.0]);
        let hw = self.pixels();
        let mut k = root.0 + 1;
        while k > 0 {
            k -= 1;
            if let Op::Blur(_, _, batch) = self.nodes[k].op {
                let mut start = k;
                while start > 0 && matches!(self.nodes[start - 1].op, Op::Blur(_, _, b) if b == batch) {
                    start -= 1;
                }
                self.backward_blur_batch(&mut grads, start, k);
                k = start;
                continue;
            }
            let Some(g) = grads[k].take() else {
                continue;
            };
            let nodes = &self.nodes;
            let val = |v: Var| nodes[v.0].value.as_slice();
            let out = &nodes[k].value;
            match &nodes[k].op {
                Op::Leaf | Op::Const | Op::Blur(..) => {
                    grads[k] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    Self::accumulate(&mut grads, *a, g.len(), |q| g[q]);
                    Self::accumulate(&mut grads, *b, g.len(), |q| g[q]);
                }
                Op::Sub(a, b) => {
                    Self::accumulate(&mut grads, *a, g.len(), |q| g[q]);
                    Self::accumulate(&mut grads, *b, g.len(), |q| -g[q]);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    Self::accumulate(&mut grads, *a, g.len(), |q| g[q] * vb[q]);
                    Self::accumulate(&mut grads, *b, g.len(), |q| g[q] * va[q]);
                }
                Op::Affine(a, s) => {
                    Self::accumulate(&mut grads, *a, g.len(), |q| g[q] * s);
                }
                Op::Sigmoid(a) => {
                    Self::accumulate(&mut grads, *a, g.len(), |q| g[q] * out[q] * (1.0 - out[q]));
                }
                Op::Softplus(a) => {
                    let va = val(*a);
                    Self::accumulate(&mut grads, *a, g.len(), |q| g[q] * sigmoid(va[q]));
                }
                Op::SqrtEps(a) => {
                    Self::accumulate(&mut grads, *a, g.len(), |q| g[q] * 0.5 / out[q]);
                }
                Op::LocalVar(a) => {
                    // v = G(x^2) - G(x)^2, so dv^T g = 2x G^T(g) - 2 G^T(G(x) g).
                    let x = Image::new(self.height, self.width, val(*a).to_vec()).expect("image");
                    let m = gaussian3_blur(&x);
                    let gi = Image::new(self.height, self.width, g.clone()).expect("image");
                    let gt = gaussian3_adjoint(&gi);
                    let mg = m.zip_map(&gi, |mv, gv| mv * gv).expect("same extents");
                    let gmt = gaussian3_adjoint(&mg);
                    let xs = x.data();
                    Self::accumulate(&mut grads, *a, hw, |q| {
                        2.0 * xs[q] * gt.data()[q] - 2.0 * gmt.data()[q]
                    });
                }
                Op::EdgeMask(v) => {
                    let vv = val(*v);
                    let s = 2.0 * BETA * BETA;
                    Self::accumulate(&mut grads, *v, hw, |q| {
                        if vv[q] > 0.0 {
                            g[q] * (-vv[q] / s).exp() / s
                        } else {
                            0.0
                        }
                    });
                }
                Op::TvEdgeSum(v, e) => {
                    let (vv, ve) = (val(*v), val(*e));
                    let g0 = g[0];
                    Self::accumulate(&mut grads, *v, hw, |q| {
                        if vv[q] > 0.0 {
                            g0 * (2.0 - ve[q]) * 0.5 / (GAMMA * GAMMA * rho_var(vv[q]))
                        } else {
                            0.0
                        }
                    });
                    Self::accumulate(&mut grads, *e, hw, |q| -g0 * rho_var(vv[q]));
                }
                Op::CharbBiasSum(x, b) => {
                    let (vx, vb) = (val(*x), val(*b));
                    let g0 = g[0];
                    let d: Vec<(f64, f64)> =
                        vx.iter().zip(vb).map(|(&x, &b)| charb_bias_grad(x, b)).collect();
                    Self::accumulate(&mut grads, *x, hw, |q| g0 * d[q].0);
                    Self::accumulate(&mut grads, *b, hw, |q| g0 * d[q].1);
                }
                Op::WeightedCharbBiasSum(w, x, b) => {
                    let (vw, vx, vb) = (val(*w), val(*x), val(*b));
                    let g0 = g[0];
                    let d: Vec<(f64, f64)> =
                        vx.iter().zip(vb).map(|(&x, &b)| charb_bias_grad(x, b)).collect();
                    Self::accumulate(&mut grads, *w, hw, |q| g0 * charb_bias(vx[q], vb[q]));
                    Self::accumulate(&mut grads, *x, hw, |q| g0 * vw[q] * d[q].0);
                    Self::accumulate(&mut grads, *b, hw, |q| g0 * vw[q] * d[q].1);
                }
                Op::Entropy(stack) => {
                    let mut s1 = vec![0.0; hw];
                    let mut s2 = vec![0.0; hw];
                    for v in stack {
                        for (q, &x) in val(*v).iter().enumerate() {
                            s1[q] += x;
                            s2[q] += x * x;
                        }
                    }
                    for v in stack {
                        let vx = val(*v);
                        Self::accumulate(&mut grads, *v, hw, |q| {
                            if s1[q] > 0.0 {
                                g[q] * (2.0 / s1[q] - 2.0 * vx[q] / s2[q])
                            } else {
                                0.0
                            }
                        });
                    }
                }
                Op::Mean(a) => {
                    let len = val(*a).len();
                    let gq = g[0] / len as f64;
                    Self::accumulate(&mut grads, *a, len, |_| gq);
                }
                Op::Combine(terms) => {
                    for (v, w) in terms {
                        Self::accumulate(&mut grads, *v, 1, |_| g[0] * w);
                    }
                }
            }
        }
        self.grads = grads;
    }

    fn backward_blur_batch(&self, grads: &mut [Option<Vec<f64>>], start: usize, end: usize) {
        let jobs: Vec<(usize, Image)> = (start..=end)
            .filter_map(|k| {
                grads[k]
                    .as_ref()
                    .map(|g| (k, Image::new(self.height, self.width, g.clone()).expect("image")))
            })
            .collect();
        let adjoints = par::map_range(jobs.len(), |j| {
            let (k, g) = &jobs[j];
            match &self.nodes[*k].op {
                Op::Blur(_, blur, _) => blur.adjoint(g).into_data(),
                _ => unreachable!("blur batch contains only blurs"),
            }
        });
        for ((k, _), adj) in jobs.iter().zip(adjoints).rev() {
            let Op::Blur(a, _, _) = &self.nodes[*k].op else {
                unreachable!()
            };
            Self::accumulate(grads, *a, adj.len(), |q| adj[q]);
        }
    }

    /// Gradient of the last [`Tape::backward`] root with respect to `v`, or
    /// `None` if `v` does not influence it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
