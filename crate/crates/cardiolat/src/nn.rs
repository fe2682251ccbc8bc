//! Neural building blocks: the tanh MLP used for ODE dynamics and the GRU
//! cell used by the encoder. Each has a plain f64 forward pass (inference)
//! and a tape-backed forward pass (training).
//!
//! Parameter order is canonical and shared between `flatten`, `load_flat`,
//! and the tape bindings, so gradients line up with the flat vector the
//! optimizer sees.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major [out_dim x in_dim].
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Linear {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward_plain(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.out_dim {
            let row = &self.weight[i * self.in_dim..(i + 1) * self.in_dim];
            let mut acc = self.bias[i];
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            out.push(acc);
        }
    }

    /// Weight-only product, no bias. Used for the GRU's recurrent halves,
    /// which share the bias with their input halves.
    pub fn matvec_plain(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for i in 0..self.out_dim {
            let row = &self.weight[i * self.in_dim..(i + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            out.push(acc);
        }
    }

    pub fn alloc(&self, tape: &mut Tape) -> (NodeId, NodeId) {
        let w = tape.leaf_mat(self.out_dim, self.in_dim, self.weight.clone());
        let b = tape.leaf_vec(self.bias.clone());
        (w, b)
    }

    pub fn forward_tape(tape: &mut Tape, w: NodeId, b: NodeId, x: NodeId) -> NodeId {
        let mv = tape.matvec(w, x);
        tape.add(mv, b)
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Feed-forward network: hidden layers with tanh activation, linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

pub struct MlpBinding {
    params: Vec<(NodeId, NodeId)>,
}

impl Mlp {
    /// `hidden` lists the widths of the hidden layers, e.g. `&[50, 50]` for
    /// two tanh layers of width 50.
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &h in hidden {
            layers.push(Linear::new(prev, h, rng));
            prev = h;
        }
        layers.push(Linear::new(prev, out_dim, rng));
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward_plain(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape {
                expected: self.in_dim(),
                got: x.len(),
                context: "mlp input".into(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_plain(&cur, &mut next);
            if i < last {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn alloc(&self, tape: &mut Tape) -> MlpBinding {
        MlpBinding {
            params: self.layers.iter().map(|l| l.alloc(tape)).collect(),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, binding: &MlpBinding, x: NodeId) -> Result<NodeId> {
        if tape.value(x).len() != self.in_dim() {
            return Err(Error::Shape {
                expected: self.in_dim(),
                got: tape.value(x).len(),
                context: "mlp input".into(),
            });
        }
        let mut cur = x;
        let last = binding.params.len() - 1;
        for (i, &(w, b)) in binding.params.iter().enumerate() {
            cur = Linear::forward_tape(tape, w, b, cur);
            if i < last {
                cur = tape.tanh(cur);
            }
        }
        Ok(cur)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Linear::n_params).sum()
    }
}

/// GRU cell with the carry convention h' = z*h + (1-z)*candidate, so a
/// saturated update gate passes the hidden state through unchanged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wz: Linear,
    pub uz: Linear,
    pub wr: Linear,
    pub ur: Linear,
    pub wh: Linear,
    pub uh: Linear,
}

pub struct GruBinding {
    ids: Vec<(NodeId, NodeId)>,
}

impl Gru {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        Gru {
            input_dim,
            hidden_dim,
            wz: Linear::new(input_dim, hidden_dim, rng),
            uz: Linear::new(hidden_dim, hidden_dim, rng),
            wr: Linear::new(input_dim, hidden_dim, rng),
            ur: Linear::new(hidden_dim, hidden_dim, rng),
            wh: Linear::new(input_dim, hidden_dim, rng),
            uh: Linear::new(hidden_dim, hidden_dim, rng),
        }
    }

    fn parts(&self) -> [&Linear; 6] {
        [&self.wz, &self.uz, &self.wr, &self.ur, &self.wh, &self.uh]
    }

    fn parts_mut(&mut self) -> [&mut Linear; 6] {
        [
            &mut self.wz,
            &mut self.uz,
            &mut self.wr,
            &mut self.ur,
            &mut self.wh,
            &mut self.uh,
        ]
    }

    pub fn step_plain(&self, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_shapes(h.len(), x.len())?;
        let n = self.hidden_dim;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let mut z = vec![0.0; n];
        let mut r = vec![0.0; n];
        self.wz.forward_plain(x, &mut a);
        self.uz.matvec_plain(h, &mut b);
        for i in 0..n {
            z[i] = sigmoid(a[i] + b[i]);
        }
        self.wr.forward_plain(x, &mut a);
        self.ur.matvec_plain(h, &mut b);
        for i in 0..n {
            r[i] = sigmoid(a[i] + b[i]);
        }
        let rh: Vec<f64> = r.iter().zip(h.iter()).map(|(ri, hi)| ri * hi).collect();
        self.wh.forward_plain(x, &mut a);
        self.uh.matvec_plain(&rh, &mut b);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let cand = (a[i] + b[i]).tanh();
            out[i] = z[i] * h[i] + (1.0 - z[i]) * cand;
        }
        Ok(out)
    }

    pub fn alloc(&self, tape: &mut Tape) -> GruBinding {
        GruBinding {
            ids: self.parts().iter().map(|l| l.alloc(tape)).collect(),
        }
    }

    pub fn step_tape(
        &self,
        tape: &mut Tape,
        binding: &GruBinding,
        h: NodeId,
        x: NodeId,
    ) -> Result<NodeId> {
        self.check_shapes(tape.value(h).len(), tape.value(x).len())?;
        let ones = vec![1.0; self.hidden_dim];
        let [(wzw, wzb), (uzw, _), (wrw, wrb), (urw, _), (whw, whb), (uhw, _)] =
            [binding.ids[0], binding.ids[1], binding.ids[2], binding.ids[3], binding.ids[4], binding.ids[5]];

        // Gate pre-activations use the W-side bias only; the U-side bias is
        // excluded to avoid a redundant duplicate parameter.
        let zx = Linear::forward_tape(tape, wzw, wzb, x);
        let zh = tape.matvec(uzw, h);
        let z_pre = tape.add(zx, zh);
        let z = tape.sigmoid(z_pre);

        let rx = Linear::forward_tape(tape, wrw, wrb, x);
        let rh_ = tape.matvec(urw, h);
        let r_pre = tape.add(rx, rh_);
        let r = tape.sigmoid(r_pre);

        let rh = tape.hadamard(r, h);
        let cx = Linear::forward_tape(tape, whw, whb, x);
        let ch = tape.matvec(uhw, rh);
        let c_pre = tape.add(cx, ch);
        let cand = tape.tanh(c_pre);

        let zh_term = tape.hadamard(z, h);
        let one_minus_z = tape.linear_comb(&[(-1.0, z)], Some(&ones));
        let cand_term = tape.hadamard(one_minus_z, cand);
        Ok(tape.add(zh_term, cand_term))
    }

    fn check_shapes(&self, h_len: usize, x_len: usize) -> Result<()> {
        if h_len != self.hidden_dim {
            return Err(Error::Shape {
                expected: self.hidden_dim,
                got: h_len,
                context: "gru hidden state".into(),
            });
        }
        if x_len != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                got: x_len,
                context: "gru input".into(),
            });
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.parts().iter().map(|l| l.n_params()).sum()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// Flat parameter plumbing shared with the optimizer and the tape bindings.

pub trait FlatParams {
    fn append_flat(&self, out: &mut Vec<f64>);
    fn read_flat(&mut self, src: &[f64], pos: &mut usize);
    /// Tape leaf nodes in the same canonical order as `append_flat`.
    fn append_node_ids(binding: &Self::Binding, out: &mut Vec<NodeId>)
    where
        Self: Sized;
    type Binding;
}

impl FlatParams for Mlp {
    type Binding = MlpBinding;

    fn append_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    fn read_flat(&mut self, src: &[f64], pos: &mut usize) {
        for l in &mut self.layers {
            let (wl, bl) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&src[*pos..*pos + wl]);
            *pos += wl;
            l.bias.copy_from_slice(&src[*pos..*pos + bl]);
            *pos += bl;
        }
    }

    fn append_node_ids(binding: &MlpBinding, out: &mut Vec<NodeId>) {
        for &(w, b) in &binding.params {
            out.push(w);
            out.push(b);
        }
    }
}

impl FlatParams for Gru {
    type Binding = GruBinding;

    fn append_flat(&self, out: &mut Vec<f64>) {
        for l in self.parts() {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    fn read_flat(&mut self, src: &[f64], pos: &mut usize) {
        for l in self.parts_mut() {
            let (wl, bl) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&src[*pos..*pos + wl]);
            *pos += wl;
            l.bias.copy_from_slice(&src[*pos..*pos + bl]);
            *pos += bl;
        }
    }

    fn append_node_ids(binding: &GruBinding, out: &mut Vec<NodeId>) {
        for &(w, b) in &binding.ids {
            out.push(w);
            out.push(b);
        }
    }
}

impl FlatParams for Linear {
    type Binding = (NodeId, NodeId);

    fn append_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    fn read_flat(&mut self, src: &[f64], pos: &mut usize) {
        let (wl, bl) = (self.weight.len(), self.bias.len());
        self.weight.copy_from_slice(&src[*pos..*pos + wl]);
        *pos += wl;
        self.bias.copy_from_slice(&src[*pos..*pos + bl]);
        *pos += bl;
    }

    fn append_node_ids(binding: &(NodeId, NodeId), out: &mut Vec<NodeId>) {
        out.push(binding.0);
        out.push(binding.1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let mut mlp = Mlp::new(3, &[4], 2, &mut rng(0));
        for l in &mut mlp.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        assert_eq!(mlp.forward_plain(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_identity_is_tanh() {
        // One hidden "layer" realized as identity weights into tanh, then
        // identity output.
        let mut mlp = Mlp::new(2, &[2], 2, &mut rng(0));
        mlp.layers[0].weight = vec![1.0, 0.0, 0.0, 1.0];
        mlp.layers[0].bias = vec![0.0, 0.0];
        mlp.layers[1].weight = vec![1.0, 0.0, 0.0, 1.0];
        mlp.layers[1].bias = vec![0.0, 0.0];
        let y = mlp.forward_plain(&[0.3, -1.1]).unwrap();
        assert!((y[0] - 0.3f64.tanh()).abs() < 1e-15);
        assert!((y[1] - (-1.1f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn plain_and_tape_forward_agree() {
        let mlp = Mlp::new(4, &[5, 5], 3, &mut rng(7));
        let x = vec![0.1, -0.4, 0.9, 0.2];
        let plain = mlp.forward_plain(&x).unwrap();
        let mut tape = Tape::new();
        let binding = mlp.alloc(&mut tape);
        let xn = tape.leaf_vec(x);
        let yn = mlp.forward_tape(&mut tape, &binding, xn).unwrap();
        for (a, b) in plain.iter().zip(tape.value(yn).iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mlp = Mlp::new(3, &[5, 5], 2, &mut rng(3));
        let x = vec![0.4, -0.2, 0.7];
        let loss_of = |m: &Mlp| {
            let y = m.forward_plain(&x).unwrap();
            y.iter().map(|v| v * v).sum::<f64>()
        };
        let mut tape = Tape::new();
        let binding = mlp.alloc(&mut tape);
        let xn = tape.leaf_vec(x.clone());
        let yn = mlp.forward_tape(&mut tape, &binding, xn).unwrap();
        let loss = tape.sum_squares(yn);
        let mut ids = Vec::new();
        Mlp::append_node_ids(&binding, &mut ids);
        let grads = tape.grad(loss, &ids).unwrap();
        let grad_flat: Vec<f64> = grads.into_iter().flatten().collect();

        let mut flat = Vec::new();
        mlp.append_flat(&mut flat);
        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[i] += h;
            dn[i] -= h;
            let mut m_up = mlp.clone();
            let mut m_dn = mlp.clone();
            let mut p = 0;
            m_up.read_flat(&up, &mut p);
            p = 0;
            m_dn.read_flat(&dn, &mut p);
            let fd = (loss_of(&m_up) - loss_of(&m_dn)) / (2.0 * h);
            let denom = fd.abs().max(1e-6);
            max_rel = max_rel.max((grad_flat[i] - fd).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn gru_carry_through_with_saturated_update_gate() {
        let mut gru = Gru::new(1, 4, &mut rng(1));
        gru.wz.bias.iter_mut().for_each(|b| *b = 50.0); // force z ~ 1
        let h = vec![0.3, -0.7, 0.2, 0.9];
        let out = gru.step_plain(&h, &[0.5]).unwrap();
        for (a, b) in out.iter().zip(h.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn gru_zero_params_closed_form() {
        let mut gru = Gru::new(1, 3, &mut rng(2));
        for l in gru.parts_mut() {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        // z = r = 0.5, candidate = tanh(0) = 0 -> h' = 0.5 h
        let h = vec![0.4, -0.8, 1.2];
        let out = gru.step_plain(&h, &[0.1]).unwrap();
        for (a, b) in out.iter().zip(h.iter()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_plain_and_tape_agree_and_gradcheck() {
        let gru = Gru::new(2, 4, &mut rng(9));
        let h = vec![0.1, -0.3, 0.5, 0.2];
        let x = vec![0.7, -0.6];
        let plain = gru.step_plain(&h, &x).unwrap();

        let mut tape = Tape::new();
        let binding = gru.alloc(&mut tape);
        let hn = tape.leaf_vec(h.clone());
        let xn = tape.leaf_vec(x.clone());
        let out = gru.step_tape(&mut tape, &binding, hn, xn).unwrap();
        for (a, b) in plain.iter().zip(tape.value(out).iter()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }

        let loss = tape.sum_squares(out);
        let mut ids = Vec::new();
        Gru::append_node_ids(&binding, &mut ids);
        let grads = tape.grad(loss, &ids).unwrap();
        let grad_flat: Vec<f64> = grads.into_iter().flatten().collect();

        let loss_of = |g: &Gru| {
            let y = g.step_plain(&h, &x).unwrap();
            y.iter().map(|v| v * v).sum::<f64>()
        };
        let mut flat = Vec::new();
        gru.append_flat(&mut flat);
        let step = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[i] += step;
            dn[i] -= step;
            let mut g_up = gru.clone();
            let mut g_dn = gru.clone();
            let mut p = 0;
            g_up.read_flat(&up, &mut p);
            p = 0;
            g_dn.read_flat(&dn, &mut p);
            let fd = (loss_of(&g_up) - loss_of(&g_dn)) / (2.0 * step);
            let denom = fd.abs().max(1e-6);
            max_rel = max_rel.max((grad_flat[i] - fd).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn flat_roundtrip() {
        let mlp = Mlp::new(3, &[4, 4], 2, &mut rng(5));
        let mut flat = Vec::new();
        mlp.append_flat(&mut flat);
        assert_eq!(flat.len(), mlp.n_params());
        let mut other = Mlp::new(3, &[4, 4], 2, &mut rng(99));
        let mut pos = 0;
        other.read_flat(&flat, &mut pos);
        assert_eq!(pos, flat.len());
        let x = vec![0.2, 0.4, -0.6];
        assert_eq!(mlp.forward_plain(&x).unwrap(), other.forward_plain(&x).unwrap());
    }
}
