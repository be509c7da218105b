//! Rough throughput probe for the reference model; used to size training
//! configs. Run with `cargo run --release -p mlr-core --example train_speed`.

use std::time::Instant;

use mlr_core::cae::{build_cae, stack_batch, CAEArchitecture};
use mlr_core::init::normal_init;

fn main() {
    let arch = CAEArchitecture::reference(false);
    let model = build_cae((20, 409), &arch, 1, 0.02).unwrap();
    println!("code len {}", model.code_len());

    for &bs in &[8usize, 32, 64] {
        let items: Vec<_> = (0..bs)
            .map(|i| normal_init(&[20, 409], i as u64, 1.0).map(|v| 0.5 + 0.3 * v.tanh()))
            .collect();
        let batch = stack_batch(&items).unwrap();
        // warm-up
        let (_loss, _g, _, _) = model.loss_and_gradients(&batch, 0.1).unwrap();
        let t0 = Instant::now();
        let reps = 3;
        for _ in 0..reps {
            let (_loss, _g, _, _) = model.loss_and_gradients(&batch, 0.1).unwrap();
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        println!(
            "batch {bs:3}: {:.3} s/step  ({:.1} ms/item, {:.1} s per 1400-item epoch)",
            dt,
            1000.0 * dt / bs as f64,
            dt * 1400.0 / bs as f64
        );
    }
}
