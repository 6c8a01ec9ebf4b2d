use std::time::Instant;
use xlab_core::noise::{gen_ising_set, Coupling};

fn main() {
    let t = Instant::now();
    let b = gen_ising_set(500, &[0.3], Coupling::Ferromagnetic, 200, 1).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let updates = 500.0 * 200.0 * 784.0;
    println!(
        "{:.2} ns/update, {:.1}s per 70k images ({} px)",
        secs / updates * 1e9,
        secs / 500.0 * 70000.0,
        b.images.len()
    );
}
