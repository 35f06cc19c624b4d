#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssmixnet::model::ModelConfig;
use ssmixnet::{Graph, Result, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Random values kept at least `gap` away from zero, for kinked activations.
pub fn random_away_from_zero(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

pub struct GradReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_at: (usize, usize),
}

/// Compares backprop gradients of a scalar loss against central differences.
///
/// `build` receives the inputs bound on a fresh graph and returns the loss.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let mut g = Graph::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| g.grad(v).map_or_else(|| vec![0.0; v.value().len()], <[f64]>::to_vec))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(build(&mut g, &vars)?.value().data()[0])
    };

    let mut report = GradReport {
        checked: 0,
        worst_rel: 0.0,
        worst_at: (0, 0),
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for j in 0..grads.len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grads[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > report.worst_rel {
                report.worst_rel = rel;
                report.worst_at = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output element gets a distinct weight.
pub fn weighted_sum(g: &mut Graph<f64>, y: &Var<f64>, seed: u64) -> Result<Var<f64>> {
    let mut r = rng(seed);
    let w = g.constant(random_tensor(&mut r, y.shape(), 1.0));
    let p = g.mul(y, &w)?;
    g.sum(&p)
}

/// Direct zero-padded 3×3×3 convolution on `[B,H,W,S,Cin]` with a `[3,3,3,Cin,Cout]` kernel.
pub fn naive_conv3d(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (bn, h, w, d, cin) = (s[0], s[1], s[2], s[3], s[4]);
    let cout = k.shape()[4];
    let mut y = Tensor::zeros(&[bn, h, w, d, cout]);
    for n in 0..bn {
        for i in 0..h {
            for j in 0..w {
                for l in 0..d {
                    for o in 0..cout {
                        let mut acc = b.data()[o];
                        for di in 0..3 {
                            for dj in 0..3 {
                                for dl in 0..3 {
                                    let (ii, jj, ll) = (i + di, j + dj, l + dl);
                                    if ii < 1 || jj < 1 || ll < 1 || ii > h || jj > w || ll > d {
                                        continue;
                                    }
                                    for c in 0..cin {
                                        acc += x.at(&[n, ii - 1, jj - 1, ll - 1, c]) * k.at(&[di, dj, dl, c, o]);
                                    }
                                }
                            }
                        }
                        let off = y.offset(&[n, i, j, l, o]);
                        y.data_mut()[off] = acc;
                    }
                }
            }
        }
    }
    y
}

/// Direct zero-padded 3×3 depthwise convolution on `[B,H,W,C]` with a `[3,3,C]` kernel.
pub fn naive_depthwise(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (bn, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut y = Tensor::zeros(s);
    for n in 0..bn {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let mut acc = b.data()[ch];
                    for di in 0..3 {
                        for dj in 0..3 {
                            let (ii, jj) = (i + di, j + dj);
                            if ii < 1 || jj < 1 || ii > h || jj > w {
                                continue;
                            }
                            acc += x.at(&[n, ii - 1, jj - 1, ch]) * k.at(&[di, dj, ch]);
                        }
                    }
                    let off = y.offset(&[n, i, j, ch]);
                    y.data_mut()[off] = acc;
                }
            }
        }
    }
    y
}

/// OA, AA over non-empty rows, and kappa straight from their definitions.
pub fn direct_metrics(cm: &[Vec<u64>]) -> (f64, f64, f64) {
    let k = cm.len();
    let total: f64 = cm.iter().flatten().map(|&v| v as f64).sum();
    let diag: f64 = (0..k).map(|i| cm[i][i] as f64).sum();
    let oa = diag / total;
    let mut accs = Vec::new();
    for (i, row) in cm.iter().enumerate() {
        let rs: u64 = row.iter().sum();
        if rs > 0 {
            accs.push(cm[i][i] as f64 / rs as f64);
        }
    }
    let aa = accs.iter().sum::<f64>() / accs.len() as f64;
    let mut pe = 0.0;
    for i in 0..k {
        let rs: f64 = cm[i].iter().map(|&v| v as f64).sum();
        let cs: f64 = (0..k).map(|t| cm[t][i] as f64).sum();
        pe += rs * cs;
    }
    pe /= total * total;
    let kappa = if pe >= 1.0 { 0.0 } else { (oa - pe) / (1.0 - pe) };
    (oa, aa, kappa)
}

/// The smallest configuration exercised end to end in gradient checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        patch_size: 3,
        pca_dims: 4,
        stem_filters: 2,
        channels: 2,
        hidden: 3,
        blocks: 1,
        classes: 2,
        ..ModelConfig::new(2)
    }
}

/// A random small configuration with every component toggled independently.
pub fn random_config(rng: &mut impl Rng, small: bool) -> ModelConfig {
    let (dims_hi, width_hi) = if small { (6, 4) } else { (16, 48) };
    ModelConfig {
        patch_size: [3, 5, 7, 9][rng.gen_range(0..if small { 2 } else { 4 })],
        pca_dims: rng.gen_range(4..=dims_hi),
        stem_filters: rng.gen_range(1..=width_hi),
        channels: rng.gen_range(1..=width_hi),
        hidden: rng.gen_range(1..=width_hi * 2),
        blocks: rng.gen_range(1..=4),
        classes: rng.gen_range(2..=20),
        use_spectral: rng.gen_bool(0.7),
        use_spatial: rng.gen_bool(0.7),
        use_attention: rng.gen_bool(0.7),
        init_seed: rng.gen(),
        ..ModelConfig::new(2)
    }
}

/// Central-difference check of every parameter gradient of a full model under cross-entropy.
pub fn model_grad_check(
    model: &ssmixnet::model::Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    h: f64,
) -> Result<GradReport> {
    let loss_of = |m: &ssmixnet::model::Model<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let logits = m.forward(&mut g, &vars, &xv)?;
        Ok(g.softmax_cross_entropy(&logits, labels)?.0.value().data()[0])
    };
    let mut g = Graph::new();
    let vars = model.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let logits = model.forward(&mut g, &vars, &xv)?;
    let (loss, _) = g.softmax_cross_entropy(&logits, labels)?;
    g.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .all
        .iter()
        .map(|v| g.grad(v).map_or_else(|| vec![0.0; v.value().len()], <[f64]>::to_vec))
        .collect();

    let mut work = model.clone();
    let mut report = GradReport {
        checked: 0,
        worst_rel: 0.0,
        worst_at: (0, 0),
    };
    for (i, grads) in analytic.iter().enumerate() {
        for j in 0..grads.len() {
            let orig = work.params()[i].value.data()[j];
            work.params_mut()[i].value.data_mut()[j] = orig + h;
            let up = loss_of(&work)?;
            work.params_mut()[i].value.data_mut()[j] = orig - h;
            let down = loss_of(&work)?;
            work.params_mut()[i].value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grads[j] - numeric).abs() / grads[j].abs().max(numeric.abs()).max(1e-6);
            if rel > report.worst_rel {
                report.worst_rel = rel;
                report.worst_at = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
