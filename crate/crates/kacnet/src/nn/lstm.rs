//! Single-layer recurrent cell with input, forget, cell and output gates.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::error::{Error, Result};

use super::xavier_bound;

/// Gate blocks are stored fused in `[i, f, g, o]` order: `w_ih` is
/// `[4d × input]`, `w_hh` is `[4d × d]`, `bias` is `[4d]` with the
/// forget-gate block initialized to 1.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    input_dim: usize,
    hidden_dim: usize,
}

impl LstmCell {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let b_ih = xavier_bound(input_dim, hidden_dim);
        let b_hh = xavier_bound(hidden_dim, hidden_dim);
        let w_ih: Vec<f64> = (0..4 * hidden_dim * input_dim)
            .map(|_| rng.random_range(-b_ih..b_ih))
            .collect();
        let w_hh: Vec<f64> = (0..4 * hidden_dim * hidden_dim)
            .map(|_| rng.random_range(-b_hh..b_hh))
            .collect();
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        LstmCell {
            w_ih: Tensor::new(vec![4 * hidden_dim, input_dim], w_ih).expect("w_ih shape"),
            w_hh: Tensor::new(vec![4 * hidden_dim, hidden_dim], w_hh).expect("w_hh shape"),
            bias: Tensor::vector(bias),
            input_dim,
            hidden_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundLstm {
        BoundLstm {
            w_ih: tape.input(self.w_ih.clone(), trainable),
            w_hh: tape.input(self.w_hh.clone(), trainable),
            bias: tape.input(self.bias.clone(), trainable),
            hidden_dim: self.hidden_dim,
            input_dim: self.input_dim,
        }
    }
}

#[derive(Copy, Clone)]
pub struct BoundLstm {
    pub w_ih: TensorId,
    pub w_hh: TensorId,
    pub bias: TensorId,
    hidden_dim: usize,
    input_dim: usize,
}

impl BoundLstm {
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Zero initial state registered as constants on the tape.
    pub fn zero_state(&self, tape: &mut Tape) -> (TensorId, TensorId) {
        let h = tape.constant(Tensor::zeros(&[self.hidden_dim]));
        let c = tape.constant(Tensor::zeros(&[self.hidden_dim]));
        (h, c)
    }

    /// One recurrence: gates from `x_t` and `h_prev`, then
    /// `c_t = f ⊙ c_prev + i ⊙ g`, `h_t = o ⊙ tanh(c_t)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        x_t: TensorId,
        h_prev: TensorId,
        c_prev: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let d = self.hidden_dim;
        if tape.value(x_t).shape() != [self.input_dim] {
            return Err(Error::Dimension {
                op: "lstm_step",
                detail: format!(
                    "input shape {:?}, cell expects [{}]",
                    tape.value(x_t).shape(),
                    self.input_dim
                ),
            });
        }
        let from_x = tape.matvec(self.w_ih, x_t)?;
        let from_h = tape.matvec(self.w_hh, h_prev)?;
        let pre = tape.add(from_x, from_h)?;
        let pre = tape.add(pre, self.bias)?;

        let i_gate = tape.slice_vec(pre, 0, d)?;
        let f_gate = tape.slice_vec(pre, d, d)?;
        let g_cand = tape.slice_vec(pre, 2 * d, d)?;
        let o_gate = tape.slice_vec(pre, 3 * d, d)?;

        let i_gate = tape.sigmoid(i_gate);
        let f_gate = tape.sigmoid(f_gate);
        let g_cand = tape.tanh(g_cand);
        let o_gate = tape.sigmoid(o_gate);

        let keep = tape.mul(f_gate, c_prev)?;
        let write = tape.mul(i_gate, g_cand)?;
        let c_t = tape.add(keep, write)?;
        let c_tanh = tape.tanh(c_t);
        let h_t = tape.mul(o_gate, c_tanh)?;
        Ok((h_t, c_t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn run_step(cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let bound = cell.bind(&mut tape, false);
        let x = tape.constant(Tensor::vector(x.to_vec()));
        let h = tape.constant(Tensor::vector(h.to_vec()));
        let c = tape.constant(Tensor::vector(c.to_vec()));
        let (h_t, c_t) = bound.step(&mut tape, x, h, c).unwrap();
        (
            tape.value(h_t).data().to_vec(),
            tape.value(c_t).data().to_vec(),
        )
    }

    /// Plain scalar-loop recurrence used as an independent reference.
    fn scalar_step(cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = cell.hidden_dim();
        let di = cell.input_dim();
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut pre = vec![0.0; 4 * d];
        for r in 0..4 * d {
            let mut acc = cell.bias.data()[r];
            for j in 0..di {
                acc += cell.w_ih.data()[r * di + j] * x[j];
            }
            for j in 0..d {
                acc += cell.w_hh.data()[r * d + j] * h[j];
            }
            pre[r] = acc;
        }
        let mut h_t = vec![0.0; d];
        let mut c_t = vec![0.0; d];
        for j in 0..d {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[d + j]);
            let g = pre[2 * d + j].tanh();
            let o = sigmoid(pre[3 * d + j]);
            c_t[j] = f * c[j] + i * g;
            h_t[j] = o * c_t[j].tanh();
        }
        (h_t, c_t)
    }

    #[test]
    fn zero_cell_from_zero_state_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cell = LstmCell::new(3, 4, &mut rng);
        cell.w_ih = Tensor::zeros(&[16, 3]);
        cell.w_hh = Tensor::zeros(&[16, 4]);
        cell.bias = Tensor::zeros(&[16]);
        let (h, c) = run_step(&cell, &[5.0, -2.0, 1.0], &[0.0; 4], &[0.0; 4]);
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(c, vec![0.0; 4]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cell = LstmCell::new(3, 4, &mut rng);
        cell.bias.data_mut()[4..8].fill(20.0);
        let x = rand_vec(&mut rng, 3);
        let h = rand_vec(&mut rng, 4);
        let c = rand_vec(&mut rng, 4);
        let (_, c_t) = run_step(&cell, &x, &h, &c);

        // With f ≈ 1: c_t ≈ c_prev + i ⊙ g.
        let d = 4;
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..d {
            let mut pre_i = cell.bias.data()[j];
            let mut pre_g = cell.bias.data()[2 * d + j];
            for k in 0..3 {
                pre_i += cell.w_ih.data()[j * 3 + k] * x[k];
                pre_g += cell.w_ih.data()[(2 * d + j) * 3 + k] * x[k];
            }
            for k in 0..d {
                pre_i += cell.w_hh.data()[j * d + k] * h[k];
                pre_g += cell.w_hh.data()[(2 * d + j) * d + k] * h[k];
            }
            let want = c[j] + sigmoid(pre_i) * pre_g.tanh();
            assert!((c_t[j] - want).abs() < 1e-8);
        }
    }

    #[test]
    fn random_step_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = LstmCell::new(5, 3, &mut rng);
        let x = rand_vec(&mut rng, 5);
        let h = rand_vec(&mut rng, 3);
        let c = rand_vec(&mut rng, 3);
        let (h_t, c_t) = run_step(&cell, &x, &h, &c);
        let (h_ref, c_ref) = scalar_step(&cell, &x, &h, &c);
        for j in 0..3 {
            assert!((h_t[j] - h_ref[j]).abs() < 1e-12);
            assert!((c_t[j] - c_ref[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = LstmCell::new(3, 2, &mut rng);
        let x = rand_vec(&mut rng, 3);
        let h = rand_vec(&mut rng, 2);
        let c = rand_vec(&mut rng, 2);

        // Pack [x, h, c, w_ih, w_hh, bias] into one flat input so a single
        // check covers every partial derivative.
        let mut flat = Vec::new();
        flat.extend_from_slice(&x);
        flat.extend_from_slice(&h);
        flat.extend_from_slice(&c);
        flat.extend_from_slice(cell.w_ih.data());
        flat.extend_from_slice(cell.w_hh.data());
        flat.extend_from_slice(cell.bias.data());

        let err = finite_difference_check(
            &|tape: &mut Tape, packed| {
                let x = tape.slice_vec(packed, 0, 3)?;
                let h = tape.slice_vec(packed, 3, 2)?;
                let c = tape.slice_vec(packed, 5, 2)?;
                let w_ih = tape.slice_vec(packed, 7, 24)?;
                let w_ih = tape.reshape(w_ih, vec![8, 3])?;
                let w_hh = tape.slice_vec(packed, 31, 16)?;
                let w_hh = tape.reshape(w_hh, vec![8, 2])?;
                let bias = tape.slice_vec(packed, 47, 8)?;

                let from_x = tape.matvec(w_ih, x)?;
                let from_h = tape.matvec(w_hh, h)?;
                let pre = tape.add(from_x, from_h)?;
                let pre = tape.add(pre, bias)?;
                let i = tape.slice_vec(pre, 0, 2)?;
                let f = tape.slice_vec(pre, 2, 2)?;
                let g = tape.slice_vec(pre, 4, 2)?;
                let o = tape.slice_vec(pre, 6, 2)?;
                let i = tape.sigmoid(i);
                let f = tape.sigmoid(f);
                let g = tape.tanh(g);
                let o = tape.sigmoid(o);
                let keep = tape.mul(f, c)?;
                let write = tape.mul(i, g)?;
                let c_t = tape.add(keep, write)?;
                let c_tanh = tape.tanh(c_t);
                let h_t = tape.mul(o, c_tanh)?;
                let both = tape.concat_vecs(&[h_t, c_t])?;
                Ok(tape.sum(both))
            },
            &Tensor::vector(flat),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {}", err);
    }
}
