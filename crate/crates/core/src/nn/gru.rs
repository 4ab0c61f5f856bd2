//! Gated recurrent unit cell.
//!
//! With `xh = [x; h_prev]`:
//!
//! ```text
//! z  = sigmoid(W_z xh + b_z)                 update gate
//! r  = sigmoid(W_r xh + b_r)                 reset gate
//! n  = tanh(W_n [x; r * h_prev] + b_n)       candidate state
//! h  = (1 - z) * h_prev + z * n
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{matvec, sigmoid, Tensor};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub update_w: Tensor,
    pub update_b: Tensor,
    pub reset_w: Tensor,
    pub reset_b: Tensor,
    pub candidate_w: Tensor,
    pub candidate_b: Tensor,
}

impl GruCell {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let cols = input_size + hidden_size;
        Self {
            input_size,
            hidden_size,
            update_w: Tensor::zeros(hidden_size, cols),
            update_b: Tensor::zeros(hidden_size, 1),
            reset_w: Tensor::zeros(hidden_size, cols),
            reset_b: Tensor::zeros(hidden_size, 1),
            candidate_w: Tensor::zeros(hidden_size, cols),
            candidate_b: Tensor::zeros(hidden_size, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let cols = input_size + hidden_size;
        let mut t = |r, c| Tensor::uniform_fan_in(r, c, cols, rng);
        Self {
            input_size,
            hidden_size,
            update_w: t(hidden_size, cols),
            update_b: t(hidden_size, 1),
            reset_w: t(hidden_size, cols),
            reset_b: t(hidden_size, 1),
            candidate_w: t(hidden_size, cols),
            candidate_b: t(hidden_size, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.input_size + self.hidden_size;
        for (w, b) in [
            (&self.update_w, &self.update_b),
            (&self.reset_w, &self.reset_b),
            (&self.candidate_w, &self.candidate_b),
        ] {
            check_dim("gru gate rows", self.hidden_size, w.rows())?;
            check_dim("gru gate cols", cols, w.cols())?;
            check_dim("gru gate bias", self.hidden_size, b.len())?;
            if !w.all_finite() || !b.all_finite() {
                return Err(Error::NumericOverflow("gru parameters".into()));
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        vec![
            &self.update_w,
            &self.update_b,
            &self.reset_w,
            &self.reset_b,
            &self.candidate_w,
            &self.candidate_b,
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.update_w,
            &mut self.update_b,
            &mut self.reset_w,
            &mut self.reset_b,
            &mut self.candidate_w,
            &mut self.candidate_b,
        ]
    }

    fn gate(&self, w: &Tensor, b: &Tensor, xh: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.hidden_size];
        matvec(w.as_slice(), w.rows(), w.cols(), xh, &mut out);
        for (o, b) in out.iter_mut().zip(b.as_slice()) {
            *o += b;
        }
        out
    }

    pub fn step(&self, input: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        check_dim("gru input", self.input_size, input.len())?;
        check_dim("gru hidden state", self.hidden_size, h_prev.len())?;
        let mut xh = Vec::with_capacity(self.input_size + self.hidden_size);
        xh.extend_from_slice(input);
        xh.extend_from_slice(h_prev);

        let z: Vec<f64> = self
            .gate(&self.update_w, &self.update_b, &xh)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = self
            .gate(&self.reset_w, &self.reset_b, &xh)
            .into_iter()
            .map(sigmoid)
            .collect();
        for k in 0..self.hidden_size {
            xh[self.input_size + k] = r[k] * h_prev[k];
        }
        let n = self.gate(&self.candidate_w, &self.candidate_b, &xh);
        let h = (0..self.hidden_size)
            .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * n[k].tanh())
            .collect();
        Ok(h)
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, base_slot: usize) -> BoundGru {
        let p = self.parameters();
        let v: Vec<Var> = p
            .into_iter()
            .enumerate()
            .map(|(i, t)| tape.param(t, base_slot + i))
            .collect();
        BoundGru {
            update: (v[0], v[1]),
            reset: (v[2], v[3]),
            candidate: (v[4], v[5]),
        }
    }
}

pub struct BoundGru {
    update: (Var, Var),
    reset: (Var, Var),
    candidate: (Var, Var),
}

impl BoundGru {
    pub fn step(&self, tape: &mut Tape<'_>, input: Var, h_prev: Var) -> Var {
        let xh = tape.concat(&[input, h_prev]);
        let zm = tape.matvec(self.update.0, xh);
        let zp = tape.add(zm, self.update.1);
        let z = tape.sigmoid(zp);
        let rm = tape.matvec(self.reset.0, xh);
        let rp = tape.add(rm, self.reset.1);
        let r = tape.sigmoid(rp);
        let rh = tape.mul(r, h_prev);
        let xrh = tape.concat(&[input, rh]);
        let nm = tape.matvec(self.candidate.0, xrh);
        let np = tape.add(nm, self.candidate.1);
        let n = tape.tanh(np);
        let keep = tape.one_minus(z);
        let a = tape.mul(keep, h_prev);
        let b = tape.mul(z, n);
        tape.add(a, b)
    }
}
