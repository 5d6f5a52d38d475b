//! Pushes frames through a randomly initialized flow and back, and checks
//! the analytic log-determinant against a dense Jacobian.

use ile::FlowNetwork;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ile::Result<()> {
    let dim = 8;
    let flow = FlowNetwork::with_random_weights(dim, 4, 16, 7, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("{:>6} {:>14} {:>14} {:>10}", "frame", "logdet", "dense", "roundtrip");
    for i in 0..5 {
        let frame: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        let (z, logdet) = flow.encode(&frame)?;
        let back = flow.decode(&z)?;
        let err = frame.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dense = flow.brute_force_logdet(&frame)?;
        println!("{i:>6} {logdet:>14.10} {dense:>14.10} {err:>10.2e}");
    }

    let fresh = FlowNetwork::new(dim, 4, 16, 7)?;
    let probe: Vec<f64> = (0..dim).map(|i| i as f64).collect();
    let (z, logdet) = fresh.encode(&probe)?;
    println!("fresh network: {probe:?} -> {z:?}, logdet {logdet}");
    Ok(())
}
