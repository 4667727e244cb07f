use super::{FanInUniform, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

/// One LSTM layer. Gate blocks in `w_x`, `w_h` and `bias` are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmLayerParams {
    /// `input_dim × 4·hidden`
    pub w_x: ParamId,
    /// `hidden × 4·hidden`
    pub w_h: ParamId,
    /// `4·hidden`
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmLayerParams {
    /// Fan-in uniform weights; bias zero except the forget block, which is 1.
    pub fn new(
        store: &mut ParamStore,
        init: &mut FanInUniform,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let w_x = store.add(
            format!("{name}.w_x"),
            init.sample(&[input_dim, 4 * hidden], input_dim),
            false,
        );
        let w_h = store.add(
            format!("{name}.w_h"),
            init.sample(&[hidden, 4 * hidden], hidden),
            false,
        );
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::from_vec(b), false);
        LstmLayerParams {
            w_x,
            w_h,
            bias,
            input_dim,
            hidden,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}

/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_step(
    layer: &LstmLayerParams,
    params: &[Tensor],
    x: &Tensor,
    state: &LstmState,
) -> Result<LstmState> {
    let hd = layer.hidden;
    if x.shape() != [layer.input_dim] || state.h.shape() != [hd] || state.c.shape() != [hd] {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_cell_step",
            lhs: vec![layer.input_dim, hd],
            rhs: x.shape().to_vec(),
        });
    }
    let xw = x
        .reshape(&[1, layer.input_dim])?
        .matmul(&params[layer.w_x.0])?;
    let hw = state.h.reshape(&[1, hd])?.matmul(&params[layer.w_h.0])?;
    let gates = xw
        .add(&hw)?
        .reshape(&[4 * hd])?
        .add(&params[layer.bias.0])?;
    let i = gates.slice(0, 0, hd)?.sigmoid()?;
    let f = gates.slice(0, hd, hd)?.sigmoid()?;
    let g = gates.slice(0, 2 * hd, hd)?.tanh()?;
    let o = gates.slice(0, 3 * hd, hd)?.sigmoid()?;
    let c = f.mul(&state.c)?.add(&i.mul(&g)?)?;
    let h = o.mul(&c.tanh()?)?;
    Ok(LstmState { h, c })
}

/// Layers applied in series; each consumes the previous layer's hidden sequence.
#[derive(Debug, Clone)]
pub struct StackedLstm {
    pub layers: Vec<LstmLayerParams>,
}

impl StackedLstm {
    pub fn new(
        store: &mut ParamStore,
        init: &mut FanInUniform,
        name: &str,
        input_dim: usize,
        hidden: usize,
        depth: usize,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let d = if l == 0 { input_dim } else { hidden };
                LstmLayerParams::new(store, init, &format!("{name}.{l}"), d, hidden)
            })
            .collect();
        StackedLstm { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    /// Runs `T×input_dim` inputs from zero state; returns the top layer's `T×hidden` outputs.
    pub fn forward(&self, params: &[Tensor], inputs: &Tensor) -> Result<Tensor> {
        if inputs.ndim() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "stacked_lstm_forward",
                msg: format!("expected T×features, got {:?}", inputs.shape()),
            });
        }
        let mut seq: Vec<Tensor> = (0..inputs.shape()[0])
            .map(|t| inputs.select(t))
            .collect::<Result<_>>()?;
        for layer in &self.layers {
            let mut state = LstmState::zeros(layer.hidden);
            let mut out = Vec::with_capacity(seq.len());
            for x in &seq {
                state = lstm_cell_step(layer, params, x, &state)?;
                out.push(state.h.clone());
            }
            seq = out;
        }
        Tensor::stack(&seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar loop reference for one cell step.
    fn oracle_step(
        wx: &[f64],
        wh: &[f64],
        b: &[f64],
        x: &[f64],
        h: &[f64],
        c: &[f64],
        hd: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let n4 = 4 * hd;
        let mut z = b.to_vec();
        for (k, xv) in x.iter().enumerate() {
            for j in 0..n4 {
                z[j] += xv * wx[k * n4 + j];
            }
        }
        for (k, hv) in h.iter().enumerate() {
            for j in 0..n4 {
                z[j] += hv * wh[k * n4 + j];
            }
        }
        let mut h2 = vec![0.0; hd];
        let mut c2 = vec![0.0; hd];
        for u in 0..hd {
            let i = sigmoid(z[u]);
            let f = sigmoid(z[hd + u]);
            let g = z[2 * hd + u].tanh();
            let o = sigmoid(z[3 * hd + u]);
            c2[u] = f * c[u] + i * g;
            h2[u] = o * c2[u].tanh();
        }
        (h2, c2)
    }

    fn layer(input: usize, hidden: usize, seed: u64) -> (ParamStore, LstmLayerParams) {
        let mut store = ParamStore::new();
        let mut init = FanInUniform::new(seed);
        let l = LstmLayerParams::new(&mut store, &mut init, "lstm", input, hidden);
        (store, l)
    }

    #[test]
    fn zero_params_give_zero_hidden() {
        let (mut store, l) = layer(3, 4, 1);
        for id in [l.w_x, l.w_h, l.bias] {
            let n = store.get(id).value.numel();
            store.set_data(id, vec![0.0; n]);
        }
        let x = Tensor::from_vec(vec![0.3, -2.0, 5.0]);
        let s = lstm_cell_step(&l, &store.values(), &x, &LstmState::zeros(4)).unwrap();
        assert!(s.h.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_forget_carries_memory() {
        let (mut store, l) = layer(2, 3, 2);
        store.set_data(l.w_x, vec![0.0; 2 * 12]);
        store.set_data(l.w_h, vec![0.0; 3 * 12]);
        let mut b = vec![0.0; 12];
        b[..3].fill(-1e3);
        b[3..6].fill(1e3);
        store.set_data(l.bias, b);
        let c = Tensor::from_vec(vec![0.25, -0.5, 2.0]);
        let state = LstmState {
            h: Tensor::zeros(&[3]),
            c: c.clone(),
        };
        let s = lstm_cell_step(
            &l,
            &store.values(),
            &Tensor::from_vec(vec![1.0, -1.0]),
            &state,
        )
        .unwrap();
        assert_eq!(s.c.data(), c.data());
    }

    #[test]
    fn matches_scalar_oracle() {
        let (store, l) = layer(5, 3, 9);
        let p = store.values();
        let x = Tensor::from_vec(vec![0.1, -0.4, 0.9, 0.0, -1.3]);
        let h = Tensor::from_vec(vec![0.2, -0.1, 0.5]);
        let c = Tensor::from_vec(vec![-0.7, 0.3, 1.1]);
        let s = lstm_cell_step(
            &l,
            &p,
            &x,
            &LstmState {
                h: h.clone(),
                c: c.clone(),
            },
        )
        .unwrap();
        let (h2, c2) = oracle_step(
            p[l.w_x.0].data(),
            p[l.w_h.0].data(),
            p[l.bias.0].data(),
            x.data(),
            h.data(),
            c.data(),
            3,
        );
        for (a, b) in s.h.data().iter().zip(&h2).chain(s.c.data().iter().zip(&c2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let (store, l) = layer(4, 6, 3);
        let b = store.get(l.bias).value.to_vec();
        assert!(b[6..12].iter().all(|v| *v == 1.0));
        assert!(b[..6].iter().chain(&b[12..]).all(|v| *v == 0.0));
    }

    fn stack(input: usize, hidden: usize) -> (ParamStore, StackedLstm) {
        let mut store = ParamStore::new();
        let mut init = FanInUniform::new(17);
        let s = StackedLstm::new(&mut store, &mut init, "lstm", input, hidden, 2);
        (store, s)
    }

    #[test]
    fn stacked_shapes() {
        let (store, s) = stack(256, 256);
        let x = FanInUniform::new(4).sample(&[5, 256], 1);
        let y = s.forward(&store.values(), &x).unwrap();
        assert_eq!(y.shape(), &[5, 256]);
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn single_step_equals_two_cells() {
        let (store, s) = stack(4, 3);
        let p = store.values();
        let x = Tensor::new(&[1, 4], vec![0.5, -0.2, 0.1, 0.9]).unwrap();
        let y = s.forward(&p, &x).unwrap();
        let s1 = lstm_cell_step(
            &s.layers[0],
            &p,
            &x.select(0).unwrap(),
            &LstmState::zeros(3),
        )
        .unwrap();
        let s2 = lstm_cell_step(&s.layers[1], &p, &s1.h, &LstmState::zeros(3)).unwrap();
        assert_eq!(y.select(0).unwrap().data(), s2.h.data());
    }

    #[test]
    fn outputs_are_causal() {
        let (store, s) = stack(6, 4);
        let p = store.values();
        let x = FanInUniform::new(8).sample(&[5, 6], 1);
        let base = s.forward(&p, &x).unwrap();
        for t in 0..4 {
            let mut d = x.to_vec();
            for v in &mut d[(t + 1) * 6..] {
                *v += 0.75;
            }
            let y = s.forward(&p, &Tensor::new(&[5, 6], d).unwrap()).unwrap();
            for u in 0..=t {
                assert_eq!(y.select(u).unwrap().data(), base.select(u).unwrap().data());
            }
            assert_ne!(
                y.select(t + 1).unwrap().data(),
                base.select(t + 1).unwrap().data()
            );
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let (store, s) = stack(2, 2);
        assert!(s
            .forward(&store.values(), &Tensor::from_vec(vec![1.0, 2.0]))
            .is_err());
    }

    #[test]
    fn tracked_forward_produces_parameter_gradients() {
        let (store, s) = stack(3, 2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = FanInUniform::new(1).sample(&[5, 3], 1);
        let loss = s.forward(&p, &x).unwrap().sum().unwrap();
        let grads = loss.backward().unwrap();
        for t in &p {
            assert_eq!(grads.get(t).unwrap().shape(), t.shape());
        }
    }
}
