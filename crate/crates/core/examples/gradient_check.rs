//! Compares the taped gradient of the full sequence loss against central
//! finite differences, with the scale `γ` held at its current value.

use ile::gradcheck::finite_diff_check;
use ile::model::{scale_gamma, trace_sequence_loss};
use ile::{IleConfig, IleModel, Tensor, Trainable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ile::Result<()> {
    let cfg = IleConfig {
        flow_depth: 2,
        flow_hidden: 6,
        state_dim: 4,
        cond_len: 2,
        ..IleConfig::new(2, 3, 5)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = IleModel::init(&cfg)?;
    // Move away from the identity start so every path carries gradient.
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let frames = Tensor::matrix(5, 6, (0..30).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let (z, _) = model.flow.encode_rows(&frames)?;
    let gamma = scale_gamma(&z, cfg.gamma_floor);

    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    let err = finite_diff_check(
        |ps| {
            let mut m = model.clone();
            for (dst, src) in m.params_mut().into_iter().zip(ps) {
                *dst = src.clone();
            }
            let traced = trace_sequence_loss(&m, &frames, &cfg, Trainable::default(), Some(gamma))?;
            let value = traced.tape.value(traced.loss).item();
            let grads = traced.tape.backward(traced.loss)?;
            Ok((value, traced.params.iter().map(|&v| grads.get_or_zero(v)).collect()))
        },
        &params,
        1e-6,
    )?;
    let count: usize = params.iter().map(|p| p.data().len()).sum();
    println!("{count} parameters, gamma {gamma:.4}, max relative error {err:.2e}");
    Ok(())
}
