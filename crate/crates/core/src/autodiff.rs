//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Values are recorded on a [`Tape`] as they are computed; every node keeps
//! its parents and the rule that maps an output adjoint back onto them.
//! [`Tape::backward`] walks the nodes from the root down to index zero, so
//! each node is visited once, after every node that consumes it.
//!
//! ```
//! use nalgebra::DMatrix;
//! use tcblran::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let a = tape.leaf(DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
//! let loss = tape.sum_squares(a);
//! assert_eq!(tape.scalar(loss), 25.0);
//!
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(a), DMatrix::from_row_slice(1, 2, &[6.0, 8.0]));
//! ```
//!
//! Only the operations the bilinear autoencoder and its losses need are
//! provided. Broadcasting is limited to adding a column bias to every column
//! and scaling columns by constants.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    SumSquares(Var),
    Mean(Var),
    /// Adds a column vector to every column.
    AddBias(Var, Var),
    /// Multiplies column `j` by the constant `c[j]`.
    ScaleColumns(Var, Vec<f64>),
    /// Contiguous block of columns starting at the given index.
    Columns(Var, usize),
}

impl Op {
    fn parents(&self) -> impl Iterator<Item = Var> {
        let (a, b) = match *self {
            Op::Leaf => (None, None),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddBias(a, b) => {
                (Some(a), Some(b))
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::SumSquares(a)
            | Op::Mean(a)
            | Op::ScaleColumns(a, _)
            | Op::Columns(a, _) => (Some(a), None),
        };
        a.into_iter().chain(b)
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
}

/// Records a computation for one forward/backward pass. Not shared between
/// threads; build one per pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_of(m: &DMatrix<f64>) -> (usize, usize) {
    m.shape()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Parameters and constants are both leaves; constants
    /// simply have their gradients ignored.
    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape("matmul", shape_of(va), shape_of(vb)));
        }
        let out = va * vb;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", shape_of(va), shape_of(vb)));
        }
        let out = va + vb;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("sub", shape_of(va), shape_of(vb)));
        }
        let out = va - vb;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// `Σ aᵢⱼ²` as a `1×1` node.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|v| v * v).sum::<f64>();
        self.push(DMatrix::from_element(1, 1, s), Op::SumSquares(a))
    }

    /// Mean of all entries as a `1×1` node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::InvalidArgument("mean of an empty matrix".into()));
        }
        let m = va.iter().sum::<f64>() / va.len() as f64;
        Ok(self.push(DMatrix::from_element(1, 1, m), Op::Mean(a)))
    }

    /// `a + b·1ᵀ` for a column vector `b`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.ncols() != 1 || vb.nrows() != va.nrows() {
            return Err(Error::shape("add_bias", shape_of(va), shape_of(vb)));
        }
        let mut out = va.clone();
        for mut col in out.column_iter_mut() {
            col += vb.column(0);
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    /// `a · diag(c)` for constant `c`.
    pub fn scale_columns(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        let va = self.value(a);
        if va.ncols() != c.len() {
            return Err(Error::shape("scale_columns", shape_of(va), (c.len(), 1)));
        }
        let mut out = va.clone();
        for (mut col, &s) in out.column_iter_mut().zip(c) {
            col *= s;
        }
        Ok(self.push(out, Op::ScaleColumns(a, c.to_vec())))
    }

    /// Columns `start..start + count` of `a`.
    pub fn columns(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let va = self.value(a);
        if start + count > va.ncols() {
            return Err(Error::shape("columns", shape_of(va), (start, count)));
        }
        let out = va.columns(start, count).into_owned();
        Ok(self.push(out, Op::Columns(a, start)))
    }

    /// Gradients of the scalar `root` with respect to every node below it.
    pub fn backward(&self, root: Var) -> Result<GradientSet> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("root {} is not on this tape", root.0)));
        }
        if self.value(root).shape() != (1, 1) {
            return Err(Error::shape("backward root", shape_of(self.value(root)), (1, 1)));
        }
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(DMatrix::from_element(1, 1, 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.op.parents().any(|p| p.0 >= i) {
                return Err(Error::Graph(format!("node {i} refers forward: cycle detected")));
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(*b).transpose();
                    let gb = self.value(*a).tr_mul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, &g * *s),
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g[(0, 0)];
                    accumulate(&mut grads, *a, self.value(*a) * s);
                }
                Op::Mean(a) => {
                    let va = self.value(*a);
                    let s = g[(0, 0)] / va.len() as f64;
                    accumulate(&mut grads, *a, DMatrix::from_element(va.nrows(), va.ncols(), s));
                }
                Op::AddBias(a, bias) => {
                    let gb = DMatrix::from_fn(g.nrows(), 1, |r, _| g.row(r).sum());
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::ScaleColumns(a, c) => {
                    let mut ga = g.clone();
                    for (mut col, &s) in ga.column_iter_mut().zip(c) {
                        col *= s;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Columns(a, start) => {
                    let va = self.value(*a);
                    let mut ga = DMatrix::zeros(va.nrows(), va.ncols());
                    ga.columns_mut(*start, g.ncols()).copy_from(&g);
                    accumulate(&mut grads, *a, ga);
                }
            }
            grads[i] = Some(g);
        }

        let shapes = self.nodes[..=root.0].iter().map(|n| n.value.shape()).collect();
        Ok(GradientSet { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += g,
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`]: one gradient per node, each shaped like the
/// node's value. Nodes the root does not depend on have zero gradient.
#[derive(Debug, Clone)]
pub struct GradientSet {
    grads: Vec<Option<DMatrix<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl GradientSet {
    pub fn get(&self, v: Var) -> DMatrix<f64> {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => {
                let (r, c) = self.shapes[v.0];
                DMatrix::zeros(r, c)
            }
            // Nodes recorded after the root cannot influence it.
            None => DMatrix::zeros(0, 0),
        }
    }

    /// Moves the gradient out; zeros when the root does not depend on `v`.
    pub fn take(&mut self, v: Var) -> DMatrix<f64> {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes.get(v.0).copied().unwrap_or((0, 0));
                DMatrix::zeros(r, c)
            }
        }
    }
}

/// Compares reverse-mode gradients of `f` with central differences.
///
/// `f` records a scalar function of the parameter leaves it is handed. The
/// return value is the largest per-coordinate error
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn gradient_check<F>(f: F, params: &[DMatrix<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let eval = |ps: &[DMatrix<f64>]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok((tape, vars, root))
    };

    let (tape, vars, root) = eval(params)?;
    let grads = tape.backward(root)?;
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for idx in 0..params[k].len() {
            let orig = params[k][idx];
            probe[k][idx] = orig + eps;
            let (t, _, r) = eval(&probe)?;
            let plus = t.scalar(r);
            probe[k][idx] = orig - eps;
            let (t, _, r) = eval(&probe)?;
            let minus = t.scalar(r);
            probe[k][idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NumericOverflow {
                    step: idx,
                    what: format!("objective is not finite when probing parameter {k}"),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[idx];
            let denom = 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn forward_examples() {
        let mut tape = Tape::new();
        let z = tape.leaf(DMatrix::zeros(3, 1));
        let t = tape.tanh(z);
        assert_eq!(tape.value(t), &DMatrix::zeros(3, 1));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random(&mut rng, 3, 4);
        let i = tape.leaf(DMatrix::identity(3, 3));
        let av = tape.leaf(a.clone());
        let p = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(p), &a);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(DMatrix::zeros(2, 3));
        let b = tape.leaf(DMatrix::zeros(2, 3));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("matmul"), "{msg}");
        assert!(tape.add(a, b).is_ok());
        let c = tape.leaf(DMatrix::zeros(3, 2));
        assert!(tape.sub(a, c).is_err());
        assert!(tape.add_bias(a, c).is_err());
        assert!(tape.scale_columns(a, &[1.0]).is_err());
        assert!(tape.columns(a, 2, 2).is_err());
    }

    #[test]
    fn sum_squares_gradient_is_twice_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3, 2);
        let mut tape = Tape::new();
        let av = tape.leaf(a.clone());
        let s = tape.sum_squares(av);
        assert_eq!(tape.backward(s).unwrap().get(av), &a * 2.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(DMatrix::from_element(1, 1, 0.7));
        let y = tape.add(x, x).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(x)[(0, 0)], 2.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(DMatrix::zeros(2, 1));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(DMatrix::from_element(2, 2, 1.5));
        let unused = tape.leaf(DMatrix::from_element(3, 1, 2.0));
        let s = tape.sum_squares(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused), DMatrix::zeros(3, 1));
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![
            random(&mut rng, 4, 3),
            random(&mut rng, 3, 5),
            random(&mut rng, 4, 1),
            random(&mut rng, 4, 5),
        ];
        let cols: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let err = gradient_check(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let p = t.add_bias(p, v[2])?;
                let h = t.tanh(p);
                let h = t.scale_columns(h, &cols)?;
                let d = t.sub(h, v[3])?;
                let e = t.add(d, v[3])?;
                let e = t.scale(e, 0.3);
                let c = t.columns(e, 1, 3)?;
                let s = t.sum_squares(c);
                let m = t.mean(d)?;
                t.add(s, m)
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn three_layer_composition_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![
            random(&mut rng, 6, 4),
            random(&mut rng, 6, 1),
            random(&mut rng, 5, 6),
            random(&mut rng, 5, 1),
            random(&mut rng, 2, 5),
            random(&mut rng, 4, 7),
        ];
        let err = gradient_check(
            |t, v| {
                let h = t.matmul(v[0], v[5])?;
                let h = t.add_bias(h, v[1])?;
                let h = t.tanh(h);
                let h = t.matmul(v[2], h)?;
                let h = t.add_bias(h, v[3])?;
                let h = t.tanh(h);
                let o = t.matmul(v[4], h)?;
                Ok(t.sum_squares(o))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn quadratic_check_is_tight() {
        let params = vec![DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 2.0])];
        let err = gradient_check(|t, v| Ok(t.sum_squares(v[0])), &params, 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn zero_eps_rejected() {
        let params = vec![DMatrix::zeros(1, 1)];
        assert!(gradient_check(|t, v| Ok(t.sum_squares(v[0])), &params, 0.0).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 5, 5);
        let run = || {
            let mut t = Tape::new();
            let av = t.leaf(a.clone());
            let p = t.matmul(av, av).unwrap();
            let h = t.tanh(p);
            let s = t.sum_squares(h);
            t.backward(s).unwrap().get(av)
        };
        assert_eq!(run(), run());
    }
}
