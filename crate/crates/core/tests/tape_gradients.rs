//! Reverse-mode adjoints of each primitive against central differences.

mod common;

use common::random_tensor;
use ile::gradcheck::finite_diff_check;
use ile::tape::{Tape, Var};
use ile::{Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-6;

/// Reduces `op`'s output to a scalar with fixed random weights and checks
/// the gradient w.r.t. every input.
fn check<F>(inputs: Vec<Tensor>, op: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |ps: &[Tensor], weights: Option<&Tensor>| -> Result<(f64, Vec<Tensor>, Tensor)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = op(&mut tape, &vars)?;
        let shape = tape.value(out).shape().to_vec();
        let w = match weights {
            Some(w) => w.clone(),
            None => Tensor::zeros(&shape),
        };
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv)?;
        let loss = tape.sum(prod)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, vars.iter().map(|&v| grads.get_or_zero(v)).collect(), w))
    };
    let (_, _, zeros) = eval(&inputs, None).unwrap();
    let numel = zeros.numel();
    let w = Tensor::new(
        zeros.shape().to_vec(),
        (0..numel).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect(),
    )
    .unwrap();
    let err = finite_diff_check(
        |ps| {
            let (v, g, _) = eval(ps, Some(&w))?;
            Ok((v, g))
        },
        &inputs,
        H,
    )
    .unwrap();
    assert!(err < TOL, "relative error {err:e}");
}

fn rand(seed: u64, r: usize, c: usize) -> Tensor {
    random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), r, c, 1.0)
}

#[test]
fn elementwise_binary() {
    check(vec![rand(1, 3, 4), rand(2, 3, 4)], |t, v| t.add(v[0], v[1]));
    check(vec![rand(1, 3, 4), rand(2, 3, 4)], |t, v| t.sub(v[0], v[1]));
    check(vec![rand(1, 3, 4), rand(2, 3, 4)], |t, v| t.mul(v[0], v[1]));
    check(vec![rand(3, 3, 4), rand(4, 1, 4)], |t, v| t.add_row(v[0], v[1]));
}

#[test]
fn matmul() {
    check(vec![rand(5, 3, 4), rand(6, 4, 2)], |t, v| t.matmul(v[0], v[1]));
    check(vec![rand(5, 3, 3)], |t, v| t.matmul(v[0], v[0]));
}

#[test]
fn unary() {
    check(vec![rand(7, 2, 5)], |t, v| t.tanh(v[0]));
    check(vec![rand(7, 2, 5)], |t, v| t.exp(v[0]));
    check(vec![rand(7, 2, 5)], |t, v| t.scale(v[0], -2.5));
    check(vec![rand(7, 2, 5)], |t, v| t.neg(v[0]));
    check(vec![rand(7, 2, 5)], |t, v| t.add_scalar(v[0], 3.0));
    // Kinks are avoided: random entries are almost surely away from 0.
    check(vec![rand(8, 2, 5)], |t, v| t.abs(v[0]));
    check(vec![rand(8, 2, 5)], |t, v| t.relu(v[0]));
    check(vec![rand(9, 2, 5).map(|x| x.abs() + 0.5)], |t, v| t.sqrt(v[0]));
    check(vec![rand(9, 2, 5).map(|x| x.abs() + 0.5)], |t, v| t.ln(v[0]));
    check(vec![rand(9, 2, 5).map(|x| x.abs() + 0.5)], |t, v| t.recip(v[0]));
}

#[test]
fn reductions_and_layout() {
    check(vec![rand(10, 3, 3)], |t, v| t.sum(v[0]));
    check(vec![rand(10, 3, 3)], |t, v| t.pick(v[0], 4));
    check(vec![rand(11, 3, 5)], |t, v| t.select_cols(v[0], &[4, 0, 2]));
    check(vec![rand(12, 3, 2), rand(13, 3, 3)], |t, v| t.concat_cols(v[0], v[1]));
    check(vec![rand(12, 1, 3), rand(13, 2, 3)], |t, v| t.concat_rows(&[v[0], v[1], v[0]]));
    check(vec![rand(14, 2, 6)], |t, v| t.reshape(v[0], &[12, 1]));
}

#[test]
fn jnf_right_mul() {
    check(vec![rand(15, 4, 6), rand(16, 3, 1), rand(17, 3, 1)], |t, v| {
        t.jnf_right_mul(v[0], v[1], v[2])
    });
}

#[test]
fn ridge_solve() {
    check(vec![rand(18, 7, 3), rand(19, 7, 1)], |t, v| t.ridge_solve(v[0], v[1], 1e-3));
    check(vec![rand(20, 6, 4), rand(21, 6, 2)], |t, v| t.ridge_solve(v[0], v[1], 1e-8));
}

#[test]
fn composite_graph_with_fan_out() {
    check(vec![rand(22, 3, 3), rand(23, 3, 1)], |t, v| {
        let a = t.tanh(v[0])?;
        let b = t.matmul(a, v[1])?;
        let c = t.matmul(v[0], b)?;
        let d = t.exp(c)?;
        t.add(d, b)
    });
}
