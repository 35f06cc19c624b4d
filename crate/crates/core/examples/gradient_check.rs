//! Compares backprop gradients of a small network against central differences.

use ssmixnet::model::{Model, ModelConfig};
use ssmixnet::{Graph, Tensor};

fn loss(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let x = g.constant(x.clone());
    let logits = model.forward(&mut g, &vars, &x).unwrap();
    g.softmax_cross_entropy(&logits, labels).unwrap().0.value().data()[0]
}

fn main() -> ssmixnet::Result<()> {
    let cfg = ModelConfig {
        patch_size: 3,
        pca_dims: 4,
        stem_filters: 2,
        channels: 2,
        hidden: 3,
        blocks: 1,
        init_seed: 1,
        ..ModelConfig::new(2)
    };
    let mut model = Model::<f64>::build(cfg)?;
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        if p.name.ends_with("bias") {
            let n = p.value.len();
            p.value = Tensor::from_fn(&[n], |j| 0.1 * ((i + j) % 5) as f64 - 0.2);
        }
    }
    let x = Tensor::from_fn(&[2, 3, 3, 4], |i| ((i * 37) % 17) as f64 / 8.0 - 1.0);
    let labels = [0, 1];

    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let logits = model.forward(&mut g, &vars, &xv)?;
    let (l, _) = g.softmax_cross_entropy(&logits, &labels)?;
    g.backward(&l)?;
    let grads: Vec<Vec<f64>> = vars.all.iter().map(|v| g.grad(v).unwrap().to_vec()).collect();

    let h = 1e-4;
    let mut probe = model.clone();
    for (i, grad) in grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..grad.len() {
            let orig = probe.params()[i].value.data()[j];
            probe.params_mut()[i].value.data_mut()[j] = orig + h;
            let up = loss(&probe, &x, &labels);
            probe.params_mut()[i].value.data_mut()[j] = orig - h;
            let down = loss(&probe, &x, &labels);
            probe.params_mut()[i].value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((grad[j] - numeric).abs() / grad[j].abs().max(numeric.abs()).max(1e-6));
        }
        println!("{:<22} {:>4} values  worst relative error {worst:.2e}", model.params()[i].name, grad.len());
    }
    Ok(())
}
