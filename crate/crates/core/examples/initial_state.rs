//! Infers the initial latent state of a noisy trajectory two ways: the
//! ridge solve used in training and a Gaussian smoother with a flat prior.

use ile::lti::{infer_initial_state, observability_stack, rollout, simulate_lti, smoother_oracle};
use ile::{JnfParams, ObservationMatrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ile::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = ile::lti::build_state_matrix(&JnfParams::new(vec![0.05, 0.2], vec![0.3, -0.6])?);
    let (d, n, t) = (5, 4, 15);
    let c = ObservationMatrix::new(Tensor::matrix(d, n, (0..d * n).map(|_| rng.random_range(-1.0..1.0)).collect())?)?;
    let x0 = vec![1.0, -0.5, 0.25, 2.0];
    let z = simulate_lti(&a, &c, &x0, t, 0.05, &mut rng)?;

    let stack = observability_stack(&a, &c, t)?;
    let ridge = infer_initial_state(&stack, z.data(), 1e-8)?;
    let smooth = smoother_oracle(&a, &c, &z, 1e8)?;
    println!("true     {x0:.4?}");
    println!("ridge    {ridge:.4?}");
    println!("smoother {smooth:.4?}");

    let fit = rollout(&a, &c, &ridge, t)?;
    let rmse = (fit.data().iter().zip(z.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / (t * d) as f64).sqrt();
    println!("rollout rmse against the noisy observations {rmse:.4}");
    Ok(())
}
