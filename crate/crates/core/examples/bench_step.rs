use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xlab_core::nn::model::random_tensor;
use xlab_core::nn::{
    backward, init_params, one_hot, predict, AdadeltaConfig, AdadeltaState, ClassWeights, ModelConfig,
};

fn main() {
    let cfg = ModelConfig::table1(true);
    let mut params = init_params::<f32>(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor::<f32, _>(vec![128, 28, 28, 1], 0.0, 1.0, &mut rng);
    let labels: Vec<u8> = (0..128).map(|i| (i % 10) as u8).collect();
    let y = one_hot::<f32>(&labels, 10);
    let w = ClassWeights::uniform(10);
    let mut opt = AdadeltaState::new(AdadeltaConfig::default(), &params);
    let steps = 10;
    let t = Instant::now();
    for _ in 0..steps {
        let g = backward(&cfg, &params, &x, &y, &w, &mut rng).unwrap();
        opt.step(&mut params, &g.grads);
    }
    let per = t.elapsed().as_secs_f64() / steps as f64;
    println!("train step (128): {:.3}s -> {:.1}s per 60k-sample epoch", per, per * 60000.0 / 128.0);
    let t = Instant::now();
    let xs = random_tensor::<f32, _>(vec![1024, 28, 28, 1], 0.0, 1.0, &mut rng);
    predict(&cfg, &params, &xs, 128).unwrap();
    let per = t.elapsed().as_secs_f64() / 1024.0;
    println!("predict: {:.3}ms/sample -> {:.1}s per 60k", per * 1e3, per * 60000.0);
}
