//! Times forward and forward+backward passes of the default network.
//!
//! ```bash
//! cargo run --release -p ssmixnet --example throughput
//! ```

use std::time::Instant;

use ssmixnet::model::{Model, ModelConfig};
use ssmixnet::{Graph, Tensor};

fn main() -> ssmixnet::Result<()> {
    let model = Model::<f32>::build(ModelConfig::new(5))?;
    let batch = 64;
    let x = Tensor::from_fn(&[batch, 9, 9, 15], |i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5);
    let labels: Vec<usize> = (0..batch).map(|i| i % 5).collect();

    let start = Instant::now();
    let logits = model.logits(&x)?;
    let fwd = start.elapsed();
    println!("forward  batch {batch}: {:>8.1} ms ({:.2} ms/sample)", fwd.as_secs_f64() * 1e3, fwd.as_secs_f64() * 1e3 / batch as f64);
    assert_eq!(logits.shape(), &[batch, 5]);

    let start = Instant::now();
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let xv = g.constant(x);
    let out = model.forward(&mut g, &vars, &xv)?;
    let (loss, _) = g.softmax_cross_entropy(&out, &labels)?;
    g.backward(&loss)?;
    let step = start.elapsed();
    println!("train    batch {batch}: {:>8.1} ms ({:.2} ms/sample)", step.as_secs_f64() * 1e3, step.as_secs_f64() * 1e3 / batch as f64);
    println!("forward MACs per sample: {}", g.counter().macs / batch as u64);
    Ok(())
}
