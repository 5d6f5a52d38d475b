mod common;

use common::to_na;
use ile::flow::{invert_permutation, FlowNetwork};
use ile::tape::Tape;
use ile::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frame(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d).map(|_| rng.random_range(0.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_then_decode_is_identity(d in 2usize..=64, depth in 1usize..6, hidden in 1usize..12,
                                      std in 0.0f64..0.5, seed in any::<u64>()) {
        let net = FlowNetwork::with_random_weights(d, depth, hidden, seed, std).unwrap();
        let o = frame(seed.wrapping_add(1), d);
        let (z, _) = net.encode(&o).unwrap();
        let back = net.decode(&z).unwrap();
        let err = o.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9, "roundtrip error {err:e}");
        let again = net.encode(&net.decode(&z).unwrap()).unwrap().0;
        let err = z.iter().zip(&again).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-9);
    }

    #[test]
    fn logdet_matches_jacobian_determinant(d in 2usize..=10, depth in 1usize..5, seed in any::<u64>()) {
        let net = FlowNetwork::with_random_weights(d, depth, 5, seed, 0.4).unwrap();
        let o = frame(seed ^ 7, d);
        let (_, analytic) = net.encode(&o).unwrap();
        // Independent oracle: Jacobian from finite differences, LU determinant.
        let h = 1e-6;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            let mut p = o.clone();
            let mut m = o.clone();
            p[j] += h;
            m[j] -= h;
            let (zp, _) = net.encode(&p).unwrap();
            let (zm, _) = net.encode(&m).unwrap();
            for i in 0..d {
                jac[(i, j)] = (zp[i] - zm[i]) / (2.0 * h);
            }
        }
        let fd = jac.determinant().abs().ln();
        prop_assert!((analytic - fd).abs() < 1e-5, "{analytic} vs {fd}");
        let brute = net.brute_force_logdet(&o).unwrap();
        prop_assert!((analytic - brute).abs() < 1e-9, "{analytic} vs {brute}");
    }

    #[test]
    fn row_batches_match_single_frames(d in 2usize..20, rows in 1usize..5, seed in any::<u64>()) {
        let net = FlowNetwork::with_random_weights(d, 3, 4, seed, 0.3).unwrap();
        let frames: Vec<Vec<f64>> = (0..rows).map(|r| frame(seed.wrapping_add(r as u64), d)).collect();
        let (z, ld) = net.encode_rows(&Tensor::from_rows(&frames).unwrap()).unwrap();
        for (r, f) in frames.iter().enumerate() {
            let (zr, lr) = net.encode(f).unwrap();
            prop_assert_eq!(z.row(r), &zr[..]);
            prop_assert_eq!(ld[r], lr);
        }
    }
}

#[test]
fn jacobian_from_tape_matches_finite_differences() {
    let net = FlowNetwork::with_random_weights(6, 3, 5, 3, 0.5).unwrap();
    let o = frame(3, 6);
    let jac = to_na(&net.jacobian(&o).unwrap());
    for j in 0..6 {
        let mut p = o.clone();
        let mut m = o.clone();
        p[j] += 1e-6;
        m[j] -= 1e-6;
        let (zp, _) = net.encode(&p).unwrap();
        let (zm, _) = net.encode(&m).unwrap();
        for i in 0..6 {
            let fd = (zp[i] - zm[i]) / 2e-6;
            assert!((jac[(i, j)] - fd).abs() < 1e-7);
        }
    }
}

#[test]
fn traced_encode_matches_plain_encode() {
    let net = FlowNetwork::with_random_weights(7, 4, 6, 11, 0.5).unwrap();
    let frames = Tensor::from_rows(&[frame(1, 7), frame(2, 7), frame(3, 7)]).unwrap();
    let (z, ld) = net.encode_rows(&frames).unwrap();
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true);
    let x = tape.constant(frames);
    let (zv, ldv) = net.trace_encode(&mut tape, &vars, x).unwrap();
    assert!(tape.value(zv).max_abs_diff(&z) < 1e-14);
    assert!((tape.value(ldv).item() - ld.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn fresh_network_is_identity() {
    let net = FlowNetwork::new(9, 5, 8, 0).unwrap();
    let o = frame(0, 9);
    let (z, ld) = net.encode(&o).unwrap();
    // Every layer starts as a pure permutation, so z is a reordering of o.
    let mut a = o.clone();
    let mut b = z.clone();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);
    assert_eq!(ld, 0.0);
}

#[test]
fn permutation_inverse() {
    let p = vec![2, 0, 3, 1];
    let inv = invert_permutation(&p);
    for (i, &pi) in p.iter().enumerate() {
        assert_eq!(inv[pi], i);
    }
}

#[test]
fn brute_force_rejects_large_inputs() {
    let net = FlowNetwork::new(32, 1, 2, 0).unwrap();
    assert!(net.brute_force_logdet(&vec![0.5; 32]).is_err());
}
