use kgetot::ot::*;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let n = rng.gen_range(1..7);
        let m = rng.gen_range(1..7);
        let c = Array2::from_shape_fn((n, m), |_| rng.gen_range(0.0..2.0));
        for (eps, iters) in [(0.05, 5000usize), (0.05, 100000), (0.01, 100000)] {
            let cfg = SinkhornConfig { epsilon: eps, max_iters: iters, tol: 1e-8 };
            let plan = sinkhorn(&c, &DiscreteDistribution::uniform(n), &DiscreteDistribution::uniform(m), &cfg).unwrap();
            println!("trial {trial} {n}x{m} eps {eps} iters {} residual {:.3e}", plan.iterations, plan.marginal_residual);
        }
    }
}
