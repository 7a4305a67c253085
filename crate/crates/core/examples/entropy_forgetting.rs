// Entropy-guided forgetting on a tiny quantized net: descending the
// negative entropy pushes forget-set predictions towards uniform.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearnq::losses::{entropy, kl_to_uniform, mean_entropy, LossKind};
use unlearnq::net::{Model, NetConfig, ProbDist, QuantPolicy};

pub fn run_example() -> unlearnq::Result<()> {
    let k = 4;
    let one_hot = ProbDist::new(vec![1.0, 0.0, 0.0, 0.0])?;
    let uniform = ProbDist::uniform(k);
    println!(
        "one-hot: H = {:.4}, KL to uniform = {:.4}; uniform: H = {:.4} (log K = {:.4})",
        entropy(&one_hot),
        kl_to_uniform(&one_hot),
        entropy(&uniform),
        (k as f64).ln()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = NetConfig::new(vec![3, 16, k], QuantPolicy::uniform(8))?;
    let mut model = Model::init(cfg, &mut rng)?;
    let x = Array2::from_shape_fn((20, 3), |_| rng.gen_range(-2.0..2.0));
    model.calibrate(x.view())?;

    let before = mean_entropy(&model, x.view())?.value;
    for _ in 0..200 {
        let (_, g) = model.grad(x.view(), None, LossKind::NegativeEntropy)?;
        model.params.descend(&g, 0.5)?;
    }
    let after = mean_entropy(&model, x.view())?.value;
    println!(
        "mean entropy {before:.4} -> {after:.4} (max {:.4})",
        (k as f64).ln()
    );
    assert!(after > before);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("entropy forgetting example");
}
