//! Closed-form parameter, MAC and FLOP counts per layer.
//!
//! FLOPs count 2 per multiply-accumulate, 1 per bias add, and 1 per element
//! passing through an activation, residual add, attention product or the
//! average pool. Reshapes, permutes and concatenation are free.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    /// Multiply-accumulates per sample.
    pub macs: u64,
    /// Floating-point operations per sample.
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_macs: u64,
    pub total_flops: u64,
}

fn layer(name: impl Into<String>, params: usize, macs: usize, extra_flops: usize) -> LayerCost {
    LayerCost {
        name: name.into(),
        params: params as u64,
        macs: macs as u64,
        flops: 2 * macs as u64 + extra_flops as u64,
    }
}

/// One residual MLP block over `positions` vectors of width `n`.
fn mixer_block(name: String, positions: usize, n: usize, h: usize) -> LayerCost {
    let params = n * h + h + h * n + n;
    let macs = positions * (n * h + h * n);
    // bias adds, activation, bias adds, residual add
    let extra = positions * (h + h + n + n);
    layer(name, params, macs, extra)
}

pub fn complexity(cfg: &ModelConfig) -> Result<Complexity> {
    cfg.validate()?;
    let (m2, p, f1, d, h, k) = (
        cfg.tokens(),
        cfg.pca_dims,
        cfg.stem_filters,
        cfg.channels,
        cfg.hidden,
        cfg.classes,
    );
    let cc = cfg.feature_channels();
    let mut layers = Vec::new();

    let out1 = m2 * p * f1;
    layers.push(layer("stem.conv1", 27 * f1 + f1, out1 * 27, 2 * out1));
    let out2 = m2 * p * d;
    layers.push(layer("stem.conv2", 27 * f1 * d + d, out2 * 27 * f1, 2 * out2));
    if cfg.use_spectral {
        for i in 0..cfg.blocks {
            layers.push(mixer_block(format!("spectral.{i}"), m2 * d, p, h));
        }
    }
    if cfg.use_spatial {
        for i in 0..cfg.blocks {
            layers.push(mixer_block(format!("spatial.{i}"), p * d, m2, h));
        }
    }
    let map = m2 * cc;
    if cfg.use_attention {
        // bias, sigmoid, product
        layers.push(layer("attention", 9 * cc + cc, map * 9, 3 * map));
    }
    layers.push(layer("pool", 0, 0, map));
    layers.push(layer("head", cc * k + k, cc * k, k));

    Ok(Complexity {
        total_params: layers.iter().map(|l| l.params).sum(),
        total_macs: layers.iter().map(|l| l.macs).sum(),
        total_flops: layers.iter().map(|l| l.flops).sum(),
        layers,
    })
}

pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    Ok(complexity(cfg)?.total_params)
}

pub fn count_macs(cfg: &ModelConfig) -> Result<u64> {
    Ok(complexity(cfg)?.total_macs)
}

pub fn count_flops(cfg: &ModelConfig) -> Result<u64> {
    Ok(complexity(cfg)?.total_flops)
}

fn grouped(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl Complexity {
    /// Aligned text table with a totals row.
    pub fn table(&self) -> String {
        let total = LayerCost {
            name: "total".into(),
            params: self.total_params,
            macs: self.total_macs,
            flops: self.total_flops,
        };
        let rows: Vec<[String; 4]> = self
            .layers
            .iter()
            .chain(std::iter::once(&total))
            .map(|l| [l.name.clone(), grouped(l.params), grouped(l.macs), grouped(l.flops)])
            .collect();
        let head = ["layer", "params", "macs", "flops"];
        let mut widths = head.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: [&str; 4]| {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        };
        line(&mut out, head);
        let rule = widths.iter().sum::<usize>() + 6;
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for (i, r) in rows.iter().enumerate() {
            if i == rows.len() - 1 {
                out.push_str(&"-".repeat(rule));
                out.push('\n');
            }
            line(&mut out, [&r[0], &r[1], &r[2], &r[3]]);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("complexity serializes")
    }
}
