use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{matvec, sigmoid};
use super::params::{uniform_fan_in, ParamId, ParameterStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

fn lookup(store: &ParameterStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))?;
    if store.param(id).shape != shape {
        return Err(Error::Shape(format!(
            "{name}: expected shape {shape:?}, found {:?}",
            store.param(id).shape
        )));
    }
    Ok(id)
}

fn affine(store: &ParameterStore, w: ParamId, b: ParamId, x: &[f64]) -> Vec<f64> {
    let p = store.param(w);
    let mut out = matvec(&p.value, p.rows(), p.cols(), x);
    for (o, bias) in out.iter_mut().zip(store.value(b)) {
        *o += bias;
    }
    out
}

/// Gated recurrent unit with hidden size equal to the input size.
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub dim: usize,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_h: ParamId,
    u_h: ParamId,
    b_h: ParamId,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl GruCell {
    pub fn register<R: Rng + ?Sized>(store: &mut ParameterStore, prefix: &str, dim: usize, rng: &mut R) -> Result<Self> {
        for g in GATES {
            store.add(format!("{prefix}.w_{g}"), vec![dim, dim], uniform_fan_in(rng, dim * dim, dim))?;
            store.add(format!("{prefix}.u_{g}"), vec![dim, dim], uniform_fan_in(rng, dim * dim, dim))?;
            store.add(format!("{prefix}.b_{g}"), vec![dim], uniform_fan_in(rng, dim, dim))?;
        }
        Self::from_store(store, prefix, dim)
    }

    pub fn from_store(store: &ParameterStore, prefix: &str, dim: usize) -> Result<Self> {
        let m = |n: &str| lookup(store, &format!("{prefix}.{n}"), &[dim, dim]);
        let v = |n: &str| lookup(store, &format!("{prefix}.{n}"), &[dim]);
        Ok(Self {
            dim,
            w_z: m("w_z")?,
            u_z: m("u_z")?,
            b_z: v("b_z")?,
            w_r: m("w_r")?,
            u_r: m("u_r")?,
            b_r: v("b_r")?,
            w_h: m("w_h")?,
            u_h: m("u_h")?,
            b_h: v("b_h")?,
        })
    }

    fn gate(store: &ParameterStore, w: ParamId, u: ParamId, b: ParamId, x: &[f64], h: &[f64]) -> Vec<f64> {
        let pw = store.param(w);
        let pu = store.param(u);
        let wx = matvec(&pw.value, pw.rows(), pw.cols(), x);
        let uh = matvec(&pu.value, pu.rows(), pu.cols(), h);
        wx.iter()
            .zip(&uh)
            .zip(store.value(b))
            .map(|((a, c), bias)| (a + c) + bias)
            .collect()
    }

    pub fn step(&self, store: &ParameterStore, x: &[f64], h: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = Self::gate(store, self.w_z, self.u_z, self.b_z, x, h)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = Self::gate(store, self.w_r, self.u_r, self.b_r, x, h)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = Self::gate(store, self.w_h, self.u_h, self.b_h, x, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        (0..self.dim)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
            .collect()
    }

    fn gate_tape(tape: &mut Tape<'_>, w: ParamId, u: ParamId, b: ParamId, x: NodeId, h: NodeId) -> NodeId {
        let wx = tape.mat_vec(w, x);
        let uh = tape.mat_vec(u, h);
        let s = tape.add(wx, uh);
        let bias = tape.param(b);
        tape.add(s, bias)
    }

    pub fn step_tape(&self, tape: &mut Tape<'_>, x: NodeId, h: NodeId) -> NodeId {
        let z = Self::gate_tape(tape, self.w_z, self.u_z, self.b_z, x, h);
        let z = tape.sigmoid(z);
        let r = Self::gate_tape(tape, self.w_r, self.u_r, self.b_r, x, h);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let cand = Self::gate_tape(tape, self.w_h, self.u_h, self.b_h, x, rh);
        let cand = tape.tanh(cand);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        tape.add(old, new)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// One-hidden-layer perceptron: `W2 act(W1 x + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Mlp {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        (input, hidden, output): (usize, usize, usize),
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        store.add(format!("{prefix}.w1"), vec![hidden, input], uniform_fan_in(rng, hidden * input, input))?;
        store.add(format!("{prefix}.b1"), vec![hidden], uniform_fan_in(rng, hidden, input))?;
        store.add(format!("{prefix}.w2"), vec![output, hidden], uniform_fan_in(rng, output * hidden, hidden))?;
        store.add(format!("{prefix}.b2"), vec![output], uniform_fan_in(rng, output, hidden))?;
        Self::from_store(store, prefix, activation)
    }

    pub fn from_store(store: &ParameterStore, prefix: &str, activation: Activation) -> Result<Self> {
        let w1 = store
            .id(&format!("{prefix}.w1"))
            .ok_or_else(|| Error::Shape(format!("missing parameter {prefix}.w1")))?;
        let shape = &store.param(w1).shape;
        if shape.len() != 2 {
            return Err(Error::Shape(format!("{prefix}.w1 must be a matrix")));
        }
        let (hidden, input) = (shape[0], shape[1]);
        let output = store
            .id(&format!("{prefix}.b2"))
            .map(|id| store.param(id).rows())
            .ok_or_else(|| Error::Shape(format!("missing parameter {prefix}.b2")))?;
        Ok(Self {
            input,
            hidden,
            output,
            activation,
            w1,
            b1: lookup(store, &format!("{prefix}.b1"), &[hidden])?,
            w2: lookup(store, &format!("{prefix}.w2"), &[output, hidden])?,
            b2: lookup(store, &format!("{prefix}.b2"), &[output])?,
        })
    }

    pub fn forward(&self, store: &ParameterStore, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = affine(store, self.w1, self.b1, x)
            .into_iter()
            .map(|v| self.activation.apply(v))
            .collect();
        affine(store, self.w2, self.b2, &hidden)
    }

    pub fn forward_tape(&self, tape: &mut Tape<'_>, x: NodeId) -> NodeId {
        let a = tape.mat_vec(self.w1, x);
        let b1 = tape.param(self.b1);
        let a = tape.add(a, b1);
        let a = match self.activation {
            Activation::Tanh => tape.tanh(a),
            Activation::Relu => tape.relu(a),
        };
        let o = tape.mat_vec(self.w2, a);
        let b2 = tape.param(self.b2);
        tape.add(o, b2)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::params::normal;

    fn zero_gru(dim: usize) -> (ParameterStore, GruCell) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::register(&mut store, "gru", dim, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        (store, cell)
    }

    #[test]
    fn zero_gru_halves_state() {
        let (store, cell) = zero_gru(3);
        let h = [0.4, -2.0, 1.0];
        let out = cell.step(&store, &[5.0, -1.0, 0.3], &h);
        assert_eq!(out, vec![0.2, -1.0, 0.5]);
    }

    #[test]
    fn saturated_update_gate_takes_candidate() {
        let (mut store, cell) = zero_gru(2);
        let bz = store.id("gru.b_z").unwrap();
        store.value_mut(bz).fill(800.0);
        let bh = store.id("gru.b_h").unwrap();
        store.value_mut(bh).copy_from_slice(&[0.3, -0.7]);
        let out = cell.step(&store, &[1.0, 2.0], &[9.0, 9.0]);
        assert_eq!(out, vec![0.3f64.tanh(), (-0.7f64).tanh()]);
    }

    /// Straight-line recomputation of the gate equations with explicit
    /// loops over matrix entries.
    fn gru_reference(store: &ParameterStore, d: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
        let get = |n: &str| store.value(store.id(n).unwrap()).to_vec();
        let mv = |w: &[f64], v: &[f64], i: usize| (0..d).map(|j| w[i * d + j] * v[j]).sum::<f64>();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (wz, uz, bz) = (get("gru.w_z"), get("gru.u_z"), get("gru.b_z"));
        let (wr, ur, br) = (get("gru.w_r"), get("gru.u_r"), get("gru.b_r"));
        let (wh, uh, bh) = (get("gru.w_h"), get("gru.u_h"), get("gru.b_h"));
        let r: Vec<f64> = (0..d).map(|i| sig(mv(&wr, x, i) + mv(&ur, h, i) + br[i])).collect();
        let rh: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
        (0..d)
            .map(|i| {
                let z = sig(mv(&wz, x, i) + mv(&uz, h, i) + bz[i]);
                let c = (mv(&wh, x, i) + mv(&uh, &rh, i) + bh[i]).tanh();
                h[i] + z * (c - h[i])
            })
            .collect()
    }

    #[test]
    fn gru_matches_reference_on_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut store = ParameterStore::new();
            let cell = GruCell::register(&mut store, "gru", 4, &mut rng).unwrap();
            let x = normal(&mut rng, 4, 1.0);
            let h = normal(&mut rng, 4, 1.0);
            let got = cell.step(&store, &x, &h);
            let want = gru_reference(&store, 4, &x, &h);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gru_tape_matches_plain_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::new();
        let cell = GruCell::register(&mut store, "gru", 3, &mut rng).unwrap();
        let x = normal(&mut rng, 3, 1.0);
        let h = normal(&mut rng, 3, 1.0);
        let mut tape = Tape::new(&store);
        let xn = tape.input(x.clone());
        let hn = tape.input(h.clone());
        let out = cell.step_tape(&mut tape, xn, hn);
        assert_eq!(tape.value(out), cell.step(&store, &x, &h).as_slice());
        assert_eq!(cell.step(&store, &x, &h), cell.step(&store, &x, &h));
    }

    #[test]
    fn zero_mlp_returns_output_bias() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::register(&mut store, "mlp", (3, 5, 3), Activation::Tanh, &mut rng).unwrap();
        for name in ["mlp.w1", "mlp.b1", "mlp.w2"] {
            let id = store.id(name).unwrap();
            store.value_mut(id).fill(0.0);
        }
        let b2 = store.value(store.id("mlp.b2").unwrap()).to_vec();
        assert_eq!(mlp.forward(&store, &[1.0, 2.0, 3.0]), b2);
    }

    #[test]
    fn scaled_identity_with_zero_preactivation_returns_bias() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::register(&mut store, "mlp", (2, 2, 2), Activation::Tanh, &mut rng).unwrap();
        let w1 = store.id("mlp.w1").unwrap();
        store.value_mut(w1).fill(0.0);
        let b1 = store.id("mlp.b1").unwrap();
        store.value_mut(b1).fill(0.0);
        let w2 = store.id("mlp.w2").unwrap();
        store.value_mut(w2).copy_from_slice(&[3.0, 0.0, 0.0, 3.0]);
        let b2 = store.value(store.id("mlp.b2").unwrap()).to_vec();
        assert_eq!(mlp.forward(&store, &[0.5, -0.5]), b2);
    }

    #[test]
    fn mlp_matches_reference_on_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in [Activation::Tanh, Activation::Relu] {
            let mut store = ParameterStore::new();
            let mlp = Mlp::register(&mut store, "mlp", (4, 7, 4), act, &mut rng).unwrap();
            let x = normal(&mut rng, 4, 1.0);
            let get = |n: &str| store.value(store.id(n).unwrap()).to_vec();
            let (w1, b1, w2, b2) = (get("mlp.w1"), get("mlp.b1"), get("mlp.w2"), get("mlp.b2"));
            let mut hidden = [0.0; 7];
            for i in 0..7 {
                let mut s = b1[i];
                for j in 0..4 {
                    s += w1[i * 4 + j] * x[j];
                }
                hidden[i] = match act {
                    Activation::Tanh => s.tanh(),
                    Activation::Relu => s.max(0.0),
                };
            }
            let got = mlp.forward(&store, &x);
            for i in 0..4 {
                let mut s = b2[i];
                for j in 0..7 {
                    s += w2[i * 7 + j] * hidden[j];
                }
                assert!((got[i] - s).abs() < 1e-13);
            }
            let mut tape = Tape::new(&store);
            let xn = tape.input(x.clone());
            let out = mlp.forward_tape(&mut tape, xn);
            assert_eq!(tape.value(out), got.as_slice());
        }
    }
}
