//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! Nodes hold either a vector or a (leaf-only) matrix. Scalars are length-1
//! vectors. The operation set is exactly what the encoder/decoder networks
//! and the ODE solver need: linear combinations with constant coefficients,
//! matrix-vector products, elementwise nonlinearities, Hadamard products,
//! and sum-of-squares reductions.
//!
//! Every op eagerly validates shapes and records the first non-finite
//! result; [`Tape::check`] surfaces it as a structured numeric error.

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub enum Payload {
    Vector(Vec<f64>),
    Matrix { rows: usize, cols: usize, data: Vec<f64> },
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::Vector(v) => v.len(),
            Payload::Matrix { data, .. } => data.len(),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// sum_i coeff_i * parent_i; a constant offset enters the stored value
    /// only, so it is not kept here.
    LinearComb {
        terms: Vec<(f64, NodeId)>,
    },
    MatVec {
        m: NodeId,
        v: NodeId,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Hadamard(NodeId, NodeId),
    MulConst {
        x: NodeId,
        c: Vec<f64>,
    },
    SumSquares(NodeId),
    /// Elementwise max(x, c); subgradient passes through only where x > c.
    ClampMin {
        x: NodeId,
        c: f64,
    },
}

struct Node {
    payload: Payload,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    numeric_error: Option<String>,
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

    /// Drops all nodes at or past `len`. Used to roll back rejected solver
    /// steps so they leave no dead subgraph behind.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Returns the recorded numeric error, if any op produced a non-finite
    /// value since the last call.
    pub fn check(&mut self) -> Result<()> {
        match self.numeric_error.take() {
            Some(msg) => Err(Error::Numeric(msg)),
            None => Ok(()),
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        match &self.nodes[id].payload {
            Payload::Vector(v) => v,
            Payload::Matrix { data, .. } => data,
        }
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    fn push(&mut self, payload: Payload, op: Op) -> NodeId {
        if self.numeric_error.is_none() {
            let data = match &payload {
                Payload::Vector(v) => v.as_slice(),
                Payload::Matrix { data, .. } => data.as_slice(),
            };
            if data.iter().any(|x| !x.is_finite()) {
                self.numeric_error = Some(format!(
                    "non-finite value produced by {:?} at node {}",
                    op_name(&op),
                    self.nodes.len()
                ));
            }
        }
        self.nodes.push(Node { payload, op });
        self.nodes.len() - 1
    }

    pub fn leaf_vec(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Payload::Vector(v), Op::Leaf)
    }

    pub fn leaf_mat(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        self.push(Payload::Matrix { rows, cols, data }, Op::Leaf)
    }

    pub fn constant(&mut self, v: Vec<f64>) -> NodeId {
        // Constants are leaves whose gradient is simply never requested.
        self.leaf_vec(v)
    }

    /// out = offset + sum_i coeff_i * parent_i. All parents must be vectors
    /// of equal length.
    pub fn linear_comb(&mut self, terms: &[(f64, NodeId)], offset: Option<&[f64]>) -> NodeId {
        let n = terms
            .first()
            .map(|&(_, id)| self.value(id).len())
            .or_else(|| offset.map(<[f64]>::len))
            .expect("linear_comb needs at least one term or an offset");
        let mut out = match offset {
            Some(o) => {
                assert_eq!(o.len(), n, "offset length");
                o.to_vec()
            }
            None => vec![0.0; n],
        };
        for &(c, id) in terms {
            let v = match &self.nodes[id].payload {
                Payload::Vector(v) => v,
                Payload::Matrix { .. } => panic!("linear_comb over matrix node"),
            };
            assert_eq!(v.len(), n, "linear_comb length mismatch");
            for (o, x) in out.iter_mut().zip(v.iter()) {
                *o += c * x;
            }
        }
        self.push(
            Payload::Vector(out),
            Op::LinearComb {
                terms: terms.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.linear_comb(&[(1.0, a), (1.0, b)], None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.linear_comb(&[(1.0, a), (-1.0, b)], None)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.linear_comb(&[(c, a)], None)
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (rows, cols, data) = match &self.nodes[m].payload {
            Payload::Matrix { rows, cols, data } => (*rows, *cols, data),
            Payload::Vector(_) => panic!("matvec lhs must be a matrix"),
        };
        let x = match &self.nodes[v].payload {
            Payload::Vector(x) => x,
            Payload::Matrix { .. } => panic!("matvec rhs must be a vector"),
        };
        assert_eq!(x.len(), cols, "matvec dimension mismatch");
        let mut out = vec![0.0; rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &data[i * cols..(i + 1) * cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            *o = acc;
        }
        self.push(Payload::Vector(out), Op::MatVec { m, v })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(Payload::Vector(out), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        self.push(Payload::Vector(out), Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.exp()).collect();
        self.push(Payload::Vector(out), Op::Exp(x))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.len(), vb.len(), "hadamard length mismatch");
        let out: Vec<f64> = va.iter().zip(vb.iter()).map(|(x, y)| x * y).collect();
        self.push(Payload::Vector(out), Op::Hadamard(a, b))
    }

    pub fn mul_const(&mut self, x: NodeId, c: &[f64]) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.len(), c.len(), "mul_const length mismatch");
        let out: Vec<f64> = v.iter().zip(c.iter()).map(|(a, b)| a * b).collect();
        self.push(Payload::Vector(out), Op::MulConst { x, c: c.to_vec() })
    }

    pub fn clamp_min(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.max(c)).collect();
        self.push(Payload::Vector(out), Op::ClampMin { x, c })
    }

    /// Scalar sum of squared entries.
    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).iter().map(|v| v * v).sum();
        self.push(Payload::Vector(vec![s]), Op::SumSquares(x))
    }

    /// Reverse sweep from a scalar loss node. Returns one flat gradient per
    /// requested node (row-major for matrix leaves); nodes unreachable from
    /// the loss get zero gradients.
    pub fn grad(&self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Vec<f64>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Invalid(format!(
                "grad requires a scalar loss, got length {}",
                self.value(loss).len()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let Some(g) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    adj[id] = Some(g); // keep for extraction
                    continue;
                }
                Op::LinearComb { terms, .. } => {
                    for &(c, p) in terms {
                        let slot = adj[p].get_or_insert_with(|| vec![0.0; self.nodes[p].payload.len()]);
                        for (s, gi) in slot.iter_mut().zip(g.iter()) {
                            *s += c * gi;
                        }
                    }
                }
                Op::MatVec { m, v } => {
                    let (rows, cols, data) = match &self.nodes[*m].payload {
                        Payload::Matrix { rows, cols, data } => (*rows, *cols, data.as_slice()),
                        _ => unreachable!(),
                    };
                    let x = match &self.nodes[*v].payload {
                        Payload::Vector(x) => x.clone(),
                        _ => unreachable!(),
                    };
                    {
                        let slot = adj[*m].get_or_insert_with(|| vec![0.0; rows * cols]);
                        for i in 0..rows {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &mut slot[i * cols..(i + 1) * cols];
                            for (s, xj) in row.iter_mut().zip(x.iter()) {
                                *s += gi * xj;
                            }
                        }
                    }
                    {
                        let slot = adj[*v].get_or_insert_with(|| vec![0.0; cols]);
                        for i in 0..rows {
                            let gi = g[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &data[i * cols..(i + 1) * cols];
                            for (s, mij) in slot.iter_mut().zip(row.iter()) {
                                *s += gi * mij;
                            }
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = self.value(id).to_vec();
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; y.len()]);
                    for ((s, gi), yi) in slot.iter_mut().zip(g.iter()).zip(y.iter()) {
                        *s += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = self.value(id).to_vec();
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; y.len()]);
                    for ((s, gi), yi) in slot.iter_mut().zip(g.iter()).zip(y.iter()) {
                        *s += gi * yi * (1.0 - yi);
                    }
                }
                Op::Exp(x) => {
                    let y = self.value(id).to_vec();
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; y.len()]);
                    for ((s, gi), yi) in slot.iter_mut().zip(g.iter()).zip(y.iter()) {
                        *s += gi * yi;
                    }
                }
                Op::Hadamard(a, b) => {
                    let va = self.value(*a).to_vec();
                    let vb = self.value(*b).to_vec();
                    {
                        let slot = adj[*a].get_or_insert_with(|| vec![0.0; va.len()]);
                        for ((s, gi), bi) in slot.iter_mut().zip(g.iter()).zip(vb.iter()) {
                            *s += gi * bi;
                        }
                    }
                    {
                        let slot = adj[*b].get_or_insert_with(|| vec![0.0; vb.len()]);
                        for ((s, gi), ai) in slot.iter_mut().zip(g.iter()).zip(va.iter()) {
                            *s += gi * ai;
                        }
                    }
                }
                Op::MulConst { x, c } => {
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; c.len()]);
                    for ((s, gi), ci) in slot.iter_mut().zip(g.iter()).zip(c.iter()) {
                        *s += gi * ci;
                    }
                }
                Op::ClampMin { x, c } => {
                    let vx = self.value(*x).to_vec();
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; vx.len()]);
                    for ((s, gi), xi) in slot.iter_mut().zip(g.iter()).zip(vx.iter()) {
                        if *xi > *c {
                            *s += gi;
                        }
                    }
                }
                Op::SumSquares(x) => {
                    let vx = self.value(*x).to_vec();
                    let slot = adj[*x].get_or_insert_with(|| vec![0.0; vx.len()]);
                    let g0 = g[0];
                    for (s, xi) in slot.iter_mut().zip(vx.iter()) {
                        *s += 2.0 * g0 * xi;
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|&id| match adj.get(id).and_then(|a| a.as_ref()) {
                Some(g) => g.clone(),
                None => vec![0.0; self.nodes[id].payload.len()],
            })
            .collect())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::LinearComb { .. } => "linear_comb",
        Op::MatVec { .. } => "matvec",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Exp(_) => "exp",
        Op::Hadamard(_, _) => "hadamard",
        Op::MulConst { .. } => "mul_const",
        Op::ClampMin { .. } => "clamp_min",
        Op::SumSquares(_) => "sum_squares",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 -> df/dx = 6
        let mut t = Tape::new();
        let x = t.leaf_vec(vec![3.0]);
        let f = t.sum_squares(x);
        assert_eq!(t.scalar(f), 9.0);
        let g = t.grad(f, &[x]).unwrap();
        assert_eq!(g[0], vec![6.0]);
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut t = Tape::new();
        let x = t.leaf_vec(vec![2.0]);
        let y = t.leaf_vec(vec![5.0, 7.0]);
        let f = t.sum_squares(x);
        let g = t.grad(f, &[x, y]).unwrap();
        assert_eq!(g[0], vec![4.0]);
        assert_eq!(g[1], vec![0.0, 0.0]);
    }

    #[test]
    fn matvec_gradient_matches_finite_differences() {
        let m_data = vec![0.3, -0.7, 1.1, 0.2, 0.9, -0.4];
        let x_data = vec![0.5, -1.2];
        let eval = |m: &[f64], x: &[f64]| -> f64 {
            let mut t = Tape::new();
            let m = t.leaf_mat(3, 2, m.to_vec());
            let x = t.leaf_vec(x.to_vec());
            let y = t.matvec(m, x);
            let z = t.tanh(y);
            let f = t.sum_squares(z);
            t.scalar(f)
        };
        let mut t = Tape::new();
        let m = t.leaf_mat(3, 2, m_data.clone());
        let x = t.leaf_vec(x_data.clone());
        let y = t.matvec(m, x);
        let z = t.tanh(y);
        let f = t.sum_squares(z);
        let g = t.grad(f, &[m, x]).unwrap();

        let h = 1e-6;
        for i in 0..6 {
            let mut up = m_data.clone();
            let mut dn = m_data.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(&up, &x_data) - eval(&dn, &x_data)) / (2.0 * h);
            assert!((g[0][i] - fd).abs() < 1e-7, "m[{i}]: {} vs {}", g[0][i], fd);
        }
        for i in 0..2 {
            let mut up = x_data.clone();
            let mut dn = x_data.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(&m_data, &up) - eval(&m_data, &dn)) / (2.0 * h);
            assert!((g[1][i] - fd).abs() < 1e-7, "x[{i}]: {} vs {}", g[1][i], fd);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf_vec(vec![1.0, 2.0]);
        assert!(t.grad(x, &[x]).is_err());
    }

    #[test]
    fn nan_is_reported() {
        let mut t = Tape::new();
        let x = t.leaf_vec(vec![1e308]);
        let _y = t.exp(x); // overflows to +inf
        assert!(t.check().is_err());
        assert!(t.check().is_ok()); // error is consumed
    }

    #[test]
    fn truncate_rolls_back() {
        let mut t = Tape::new();
        let x = t.leaf_vec(vec![1.0]);
        let mark = t.len();
        let _dead = t.tanh(x);
        t.truncate(mark);
        assert_eq!(t.len(), mark);
        let f = t.sum_squares(x);
        assert_eq!(t.grad(f, &[x]).unwrap()[0], vec![2.0]);
    }
}
