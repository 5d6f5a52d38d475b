//! Recovers the eigenvalue moduli of a known linear system from noisy
//! trajectories, with the flow frozen to the identity.

use ile::lti::simulate_lti;
use ile::{IleConfig, ObservationMatrix, StateMatrix, Tensor, Trainable, TrainState, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> ile::Result<()> {
    let (t, d) = (20, 6);
    let truth = [(0.97f64, 0.4f64), (0.8, 1.2)];
    let a = StateMatrix::from_blocks(truth.iter().map(|&(r, w)| (r * w.cos(), r * w.sin())).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = ObservationMatrix::new(Tensor::matrix(d, 4, (0..d * 4).map(|_| rng.random_range(-1.0..1.0)).collect())?)?;
    let data = (0..200)
        .map(|_| {
            let x0: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            simulate_lti(&a, &c, &x0, t, 0.01, &mut rng)
        })
        .collect::<ile::Result<Vec<_>>>()?;

    // One fresh coupling layer with the natural ordering is the identity map.
    let cfg = IleConfig {
        flow_depth: 1,
        flow_hidden: 2,
        state_dim: 4,
        lr: 1e-2,
        seed: 6,
        ..IleConfig::new(1, d, t)
    };
    let mut trainer = Trainer::new(cfg.clone(), TrainState::init(&cfg)?, &data)?
        .with_trainable(Trainable { flow: false, dynamics: true });
    for round in 1..=4 {
        let mut loss = 0.0;
        trainer.run(500, |row| loss = row.loss.total)?;
        let mut moduli = trainer.state.model.state_matrix().eigen_moduli();
        moduli.sort_by(f64::total_cmp);
        moduli.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
        println!("step {:>5}  loss {loss:>10.3}  moduli {moduli:.4?}", round * 500);
    }
    println!("true moduli [0.8, 0.97]");
    Ok(())
}
