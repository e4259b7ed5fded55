//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and returns gradients for the parameters that
//! were read. Nodes that never receive a gradient are skipped entirely, so a
//! loss term seeded with weight zero contributes nothing, not even signed
//! zeros.

use std::collections::HashMap;

use super::params::{Grads, ParamStore};
use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    ScatterMean {
        src: Var,
        groups: Vec<usize>,
        counts: Vec<usize>,
    },
    MeanRows(Var),
    /// Source row chosen for each column.
    MaxRows(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    Bce {
        logits: Var,
        targets: Vec<f64>,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax probabilities and `-ln p[target]` for one row of logits.
pub fn softmax_xent(logits: &[f64], target: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / z).collect();
    let loss = z.ln() - (logits[target] - max);
    (probs, loss)
}

/// `-ln softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), AutodiffError> {
    if logits.len() < 2 {
        return Err(AutodiffError::Shape(format!(
            "cross-entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if target >= logits.len() {
        return Err(AutodiffError::TargetOutOfRange {
            target,
            classes: logits.len(),
        });
    }
    let (mut grad, loss) = softmax_xent(logits, target);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Binary cross-entropy on a logit, in the log-sum-exp form; returns loss and d/dlogit.
pub fn binary_cross_entropy(logit: f64, target: f64) -> (f64, f64) {
    (softplus(logit) - logit * target, sigmoid(logit) - target)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Read a named parameter; repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, AutodiffError> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Param(name.to_string()), true);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(AutodiffError::Shape(format!(
                "bias {:?} for input {:?}",
                bv.shape, av.shape
            )));
        }
        let mut value = av.clone();
        let c = value.cols();
        for r in 0..value.rows() {
            for (o, b) in value.data[r * c..(r + 1) * c].iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(value, Op::AddBias(a, bias), ng))
    }

    /// `x W + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(AutodiffError::Shape(format!("add {:?} + {:?}", av.shape, bv.shape)));
        }
        let mut value = av.clone();
        value.add_assign(bv);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for v in &mut value.data {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// Concatenate along columns; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(AutodiffError::Shape(format!(
                    "concat rows {} vs {}",
                    v.rows(),
                    rows
                )));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor {
                shape: [rows, cols],
                data,
            },
            Op::Concat(parts.to_vec()),
            ng,
        ))
    }

    pub fn gather(&mut self, src: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.value(src);
        let c = s.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= s.rows() {
                return Err(AutodiffError::Shape(format!(
                    "gather row {i} from {} rows",
                    s.rows()
                )));
            }
            data.extend_from_slice(s.row(i));
        }
        let ng = self.needs(src);
        Ok(self.push(
            Tensor {
                shape: [index.len(), c],
                data,
            },
            Op::Gather(src, index.to_vec()),
            ng,
        ))
    }

    /// Row `g` of the output is the mean of source rows assigned to group `g`; empty groups are zero.
    pub fn scatter_mean(&mut self, src: Var, groups: &[usize], n_groups: usize) -> Result<Var, AutodiffError> {
        let s = self.value(src);
        if groups.len() != s.rows() {
            return Err(AutodiffError::Shape(format!(
                "{} group ids for {} rows",
                groups.len(),
                s.rows()
            )));
        }
        let c = s.cols();
        let mut counts = vec![0usize; n_groups];
        let mut out = Tensor::zeros(n_groups, c);
        for (r, &g) in groups.iter().enumerate() {
            if g >= n_groups {
                return Err(AutodiffError::Shape(format!("group {g} of {n_groups}")));
            }
            counts[g] += 1;
            for (o, v) in out.data[g * c..(g + 1) * c].iter_mut().zip(s.row(r)) {
                *o += v;
            }
        }
        for (g, &n) in counts.iter().enumerate() {
            if n > 1 {
                let inv = n as f64;
                for o in &mut out.data[g * c..(g + 1) * c] {
                    *o /= inv;
                }
            }
        }
        let ng = self.needs(src);
        Ok(self.push(
            out,
            Op::ScatterMean {
                src,
                groups: groups.to_vec(),
                counts,
            },
            ng,
        ))
    }

    /// Column means as a `1 x cols` row; zero when there are no rows.
    pub fn mean_rows(&mut self, src: Var) -> Var {
        let s = self.value(src);
        let (n, c) = (s.rows(), s.cols());
        let mut out = Tensor::zeros(1, c);
        for r in 0..n {
            for (o, v) in out.data.iter_mut().zip(s.row(r)) {
                *o += v;
            }
        }
        if n > 1 {
            out.scale_assign(1.0 / n as f64);
        }
        let ng = self.needs(src);
        self.push(out, Op::MeanRows(src), ng)
    }

    /// Column maxima as a `1 x cols` row (first row wins ties); zero when there are no rows.
    pub fn max_rows(&mut self, src: Var) -> Var {
        let s = self.value(src);
        let (n, c) = (s.rows(), s.cols());
        let mut arg = vec![0usize; c];
        let mut out = Tensor::zeros(1, c);
        if n > 0 {
            out.data.copy_from_slice(s.row(0));
            for r in 1..n {
                for (k, v) in s.row(r).iter().enumerate() {
                    if *v > out.data[k] {
                        out.data[k] = *v;
                        arg[k] = r;
                    }
                }
            }
        }
        let ng = self.needs(src) && n > 0;
        self.push(out, Op::MaxRows(src, arg), ng)
    }

    /// Mean softmax cross-entropy over rows; zero for an empty batch.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let l = self.value(logits);
        let (n, k) = (l.rows(), l.cols());
        if targets.len() != n {
            return Err(AutodiffError::Shape(format!("{} targets for {n} rows", targets.len())));
        }
        let mut probs = Tensor::zeros(n, k);
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if k < 2 {
                return Err(AutodiffError::Shape(format!("cross-entropy needs at least 2 classes, got {k}")));
            }
            if t >= k {
                return Err(AutodiffError::TargetOutOfRange { target: t, classes: k });
            }
            let (p, loss) = softmax_xent(l.row(r), t);
            probs.data[r * k..(r + 1) * k].copy_from_slice(&p);
            total += loss;
        }
        let value = if n == 0 { 0.0 } else { total / n as f64 };
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::row_vector(vec![value]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Mean binary cross-entropy over every entry of `logits`; zero when empty.
    pub fn bce_mean(&mut self, logits: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let l = self.value(logits);
        if targets.len() != l.len() {
            return Err(AutodiffError::Shape(format!(
                "{} targets for {} logits",
                targets.len(),
                l.len()
            )));
        }
        let total: f64 = l
            .data
            .iter()
            .zip(targets)
            .map(|(&x, &t)| binary_cross_entropy(x, t).0)
            .sum();
        let value = if l.is_empty() { 0.0 } else { total / l.len() as f64 };
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::row_vector(vec![value]),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// `Σ w_i · x_i` over scalar nodes, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut value = 0.0;
        for &(v, w) in terms {
            value += w * self.scalar(v);
        }
        let ng = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(Tensor::row_vector(vec![value]), Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Gradients of `Σ weight · seed` with respect to every parameter read on this tape.
    pub fn backward(&self, seeds: &[(Var, f64)]) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        fn acc(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(t) => t.add_assign(&g),
                None => *slot = Some(g),
            }
        }
        for &(v, w) in seeds {
            if w != 0.0 && self.needs(v) {
                let mut g = Tensor::zeros(1, 1);
                g.data[0] = w;
                acc(&mut grads[v.0], g);
            }
        }

        let mut out = Grads::default();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => out.accumulate(name, &g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g.matmul_t(self.value(*b)));
                    }
                    if self.needs(*b) {
                        acc(&mut grads[b.0], self.value(*a).t_matmul(&g));
                    }
                }
                Op::AddBias(a, b) => {
                    if self.needs(*b) {
                        let c = g.cols();
                        let mut db = Tensor::zeros(1, c);
                        for r in 0..g.rows() {
                            for (o, v) in db.data.iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        acc(&mut grads[b.0], db);
                    }
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        acc(&mut grads[b.0], g.clone());
                    }
                    if self.needs(*a) {
                        acc(&mut grads[a.0], g);
                    }
                }
                Op::Relu(a) => {
                    let mut g = g;
                    for (gv, y) in g.data.iter_mut().zip(&node.value.data) {
                        if *y <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    acc(&mut grads[a.0], g);
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.value(*p).cols();
                        if self.needs(*p) {
                            let mut part = Tensor::zeros(rows, pc);
                            for r in 0..rows {
                                part.data[r * pc..(r + 1) * pc]
                                    .copy_from_slice(&g.row(r)[offset..offset + pc]);
                            }
                            acc(&mut grads[p.0], part);
                        }
                        offset += pc;
                    }
                }
                Op::Gather(src, index) => {
                    let s = self.value(*src);
                    let c = s.cols();
                    let mut gs = Tensor::zeros(s.rows(), c);
                    for (r, &i) in index.iter().enumerate() {
                        for (o, v) in gs.data[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads[src.0], gs);
                }
                Op::ScatterMean { src, groups, counts } => {
                    let s = self.value(*src);
                    let c = s.cols();
                    let mut gs = Tensor::zeros(s.rows(), c);
                    for (r, &grp) in groups.iter().enumerate() {
                        let inv = 1.0 / counts[grp] as f64;
                        for (o, v) in gs.data[r * c..(r + 1) * c].iter_mut().zip(g.row(grp)) {
                            *o = v * inv;
                        }
                    }
                    acc(&mut grads[src.0], gs);
                }
                Op::MeanRows(src) => {
                    let s = self.value(*src);
                    let n = s.rows();
                    if n > 0 {
                        let inv = 1.0 / n as f64;
                        let mut gs = Tensor::zeros(n, s.cols());
                        for r in 0..n {
                            for (o, v) in gs.data[r * s.cols()..(r + 1) * s.cols()].iter_mut().zip(&g.data) {
                                *o = v * inv;
                            }
                        }
                        acc(&mut grads[src.0], gs);
                    }
                }
                Op::MaxRows(src, arg) => {
                    let s = self.value(*src);
                    let c = s.cols();
                    let mut gs = Tensor::zeros(s.rows(), c);
                    for (k, &r) in arg.iter().enumerate() {
                        gs.data[r * c + k] = g.data[k];
                    }
                    acc(&mut grads[src.0], gs);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let n = targets.len();
                    if n > 0 {
                        let scale = g.data[0] / n as f64;
                        let k = probs.cols();
                        let mut gl = probs.clone();
                        for (r, &t) in targets.iter().enumerate() {
                            gl.data[r * k + t] -= 1.0;
                        }
                        gl.scale_assign(scale);
                        acc(&mut grads[logits.0], gl);
                    }
                }
                Op::Bce { logits, targets } => {
                    let l = self.value(*logits);
                    if !l.is_empty() {
                        let scale = g.data[0] / l.len() as f64;
                        let mut gl = Tensor::zeros(l.rows(), l.cols());
                        for ((o, &x), &t) in gl.data.iter_mut().zip(&l.data).zip(targets) {
                            *o = binary_cross_entropy(x, t).1 * scale;
                        }
                        acc(&mut grads[logits.0], gl);
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        if w != 0.0 && self.needs(v) {
                            let mut t = Tensor::zeros(1, 1);
                            t.data[0] = g.data[0] * w;
                            acc(&mut grads[v.0], t);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::{Init, ParamStore};
    use crate::autodiff::grad_check;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn cross_entropy_values() {
        let (loss, grad) = cross_entropy(&[0.0; 6], 2).unwrap();
        assert_abs_diff_eq!(loss, 6f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(grad.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        let mut margin = [0.0; 6];
        margin[1] = 50.0;
        assert!(cross_entropy(&margin, 1).unwrap().0 < 1e-9);
        assert!(cross_entropy(&[0.0; 6], 6).is_err());
        assert!(cross_entropy(&[0.0], 0).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, grad) = cross_entropy(&logits, 4).unwrap();
        let h = 1e-5;
        for i in 0..6 {
            let mut up = logits.clone();
            let mut dn = logits.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (cross_entropy(&up, 4).unwrap().0 - cross_entropy(&dn, 4).unwrap().0) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs() + 1e-12);
            assert!(rel < 1e-6, "coord {i}: {rel}");
        }
    }

    #[test]
    fn bce_values() {
        let ln2 = 2f64.ln();
        assert_abs_diff_eq!(binary_cross_entropy(0.0, 1.0).0, ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(binary_cross_entropy(0.0, 0.0).0, ln2, epsilon = 1e-15);
        let (l, g) = binary_cross_entropy(-1e4, 0.0);
        assert!(l.is_finite() && l < 1e-300 + 1e-12);
        assert!(g.is_finite());
        let (l, _) = binary_cross_entropy(1e4, 0.0);
        assert_abs_diff_eq!(l, 1e4, epsilon = 1e-9);
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let mut store = ParamStore::new(0);
        store.insert("w", Tensor::identity(3)).unwrap();
        store.insert("b", Tensor::zeros(1, 3)).unwrap();
        store.insert("b2", Tensor::row_vector(vec![1.0, -2.0, 0.5])).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let w = tape.param(&store, "w").unwrap();
        let b = tape.param(&store, "b").unwrap();
        let y = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let z = tape.input(Tensor::zeros(2, 3));
        let b2 = tape.param(&store, "b2").unwrap();
        let y = tape.linear(z, w, b2).unwrap();
        assert_eq!(tape.value(y).row(1), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn linear_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 3, 4);
        let target = random(&mut rng, 3, 2);
        let mut store = ParamStore::new(5);
        store.add("w", 4, 2, Init::Glorot).unwrap();
        store.insert("b", random(&mut rng, 1, 2)).unwrap();
        let f = |s: &ParamStore| {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let w = tape.param(s, "w").unwrap();
            let b = tape.param(s, "b").unwrap();
            let y = tape.linear(xv, w, b).unwrap();
            // smooth scalar readout: BCE against fixed soft targets
            let loss = tape.bce_mean(y, &target.data.iter().map(|t| (t + 1.0) / 2.0).collect::<Vec<_>>()).unwrap();
            (tape.scalar(loss), tape.backward(&[(loss, 1.0)]))
        };
        let report = grad_check(f, &store, 1e-5);
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn op_catalog_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new(1);
        store.insert("a", random(&mut rng, 4, 3)).unwrap();
        store.insert("w", random(&mut rng, 6, 5)).unwrap();
        store.insert("b", random(&mut rng, 1, 5)).unwrap();
        let f = |s: &ParamStore| {
            let mut t = Tape::new();
            let a = t.param(s, "a").unwrap();
            let g = t.gather(a, &[2, 0, 2, 3, 1]).unwrap();
            let g2 = t.gather(a, &[1, 1, 0, 3, 2]).unwrap();
            let c = t.concat(&[g, g2]).unwrap();
            let w = t.param(s, "w").unwrap();
            let b = t.param(s, "b").unwrap();
            let y = t.linear(c, w, b).unwrap();
            let y = t.relu(y);
            let m = t.scatter_mean(y, &[0, 1, 0, 0, 3], 4).unwrap();
            let s2 = t.add(m, m).unwrap();
            let ce = t.cross_entropy_mean(s2, &[1, 4, 0, 2]).unwrap();
            let pooled = t.mean_rows(y);
            let bce = t.bce_mean(pooled, &[1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
            let peak = t.max_rows(c);
            let bce2 = t.bce_mean(peak, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
            let total = t.weighted_sum(&[(ce, 1.0), (bce, 0.3), (bce2, 0.5)]);
            (t.scalar(total), t.backward(&[(total, 1.0)]))
        };
        let report = grad_check(f, &store, 1e-5);
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn zero_weight_seed_leaves_no_gradient() {
        let mut store = ParamStore::new(2);
        store.add("w", 2, 2, Init::Glorot).unwrap();
        store.add("v", 2, 2, Init::Glorot).unwrap();
        let mut t = Tape::new();
        let x = t.input(Tensor::from_vec(1, 2, vec![0.3, -0.7]).unwrap());
        let w = t.param(&store, "w").unwrap();
        let v = t.param(&store, "v").unwrap();
        let yw = t.matmul(x, w).unwrap();
        let yv = t.matmul(x, v).unwrap();
        let lw = t.cross_entropy_mean(yw, &[0]).unwrap();
        let lv = t.cross_entropy_mean(yv, &[1]).unwrap();
        let total = t.weighted_sum(&[(lw, 1.0), (lv, 0.0)]);
        let g = t.backward(&[(total, 1.0)]);
        assert!(g.get("w").is_some());
        assert!(g.get("v").is_none());
    }

    #[test]
    fn empty_batches_are_zero() {
        let mut t = Tape::new();
        let l = t.input(Tensor::zeros(0, 6));
        let ce = t.cross_entropy_mean(l, &[]).unwrap();
        assert_eq!(t.scalar(ce), 0.0);
        let m = t.mean_rows(l);
        assert_eq!(t.value(m).data, vec![0.0; 6]);
        let mx = t.max_rows(l);
        assert_eq!(t.value(mx).data, vec![0.0; 6]);
        let bce = t.bce_mean(l, &[]).unwrap();
        assert_eq!(t.scalar(bce), 0.0);
    }
}
