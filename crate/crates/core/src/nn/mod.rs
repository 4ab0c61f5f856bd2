//! Dense layers, residual MLP, GRU cell and the reverse-mode tape that
//! differentiates them.

mod gru;
mod layers;
mod tape;
mod tensor;

pub use gru::{BoundGru, GruCell};
pub use layers::{Activation, BoundMlp, DenseLayer, ResidualMlp};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{gaussian_log_density, log_sum_exp, matvec, sigmoid, softplus, Tensor, HALF_LN_2PI};

#[cfg(test)]
mod gradient_checks {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Max relative error between tape gradients and central differences
    /// (step 1e-5) over every parameter entry.
    fn max_rel_error<P: Clone>(
        params: &P,
        tensors: impl Fn(&P) -> Vec<&Tensor>,
        tensors_mut: impl Fn(&mut P) -> Vec<&mut Tensor>,
        loss: impl Fn(&P) -> f64,
        grads: &Gradients,
    ) -> f64 {
        let h = 1e-5;
        let n_tensors = tensors(params).len();
        let dense = grads.dense_for(&tensors(params));
        let mut worst: f64 = 0.0;
        for t in 0..n_tensors {
            let len = tensors(params)[t].len();
            for k in 0..len {
                let mut plus = params.clone();
                tensors_mut(&mut plus)[t].as_mut_slice()[k] += h;
                let mut minus = params.clone();
                tensors_mut(&mut minus)[t].as_mut_slice()[k] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = dense[t][k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for trial in 0..20 {
            let act = [Activation::Tanh, Activation::Softplus, Activation::Sigmoid][trial % 3];
            let net = ResidualMlp::energy_default(3, 4, act, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let loss = |n: &ResidualMlp| {
                let y = n.forward_scalar(&x).unwrap();
                y * y + y
            };
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, 0);
            let xv = tape.constant(x.clone());
            let y = bound.forward(&mut tape, xv);
            let sq = tape.square(y);
            let l = tape.add(sq, y);
            let g = tape.backward(l).unwrap();
            let err = max_rel_error(&net, ResidualMlp::parameters, ResidualMlp::parameters_mut, loss, &g);
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let cell = GruCell::init(3, 4, &mut rng);
            let xs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let target: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
            let loss = |c: &GruCell| {
                let mut h = vec![0.0; 4];
                for x in &xs {
                    h = c.step(x, &h).unwrap();
                }
                h.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            };
            let mut tape = Tape::new();
            let bound = cell.bind(&mut tape, 0);
            let mut h = tape.constant(vec![0.0; 4]);
            for x in &xs {
                let xv = tape.constant(x.clone());
                h = bound.step(&mut tape, xv, h);
            }
            let t = tape.constant(target.clone());
            let d = tape.sub(h, t);
            let sq = tape.square(d);
            let l = tape.sum(sq);
            let g = tape.backward(l).unwrap();
            let err = max_rel_error(&cell, GruCell::parameters, GruCell::parameters_mut, loss, &g);
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let a = ResidualMlp::energy_default(4, 6, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(8));
        let b = ResidualMlp::energy_default(4, 6, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(8));
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(
            a.forward_scalar(&x).unwrap().to_bits(),
            b.forward_scalar(&x).unwrap().to_bits()
        );
    }
}
