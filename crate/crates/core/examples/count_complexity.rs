//! Parameter, MAC and FLOP budgets per layer, and for each ablation variant.

use ssmixnet::complexity::complexity;
use ssmixnet::model::ModelConfig;
use ssmixnet::pipeline::ablation_configs;

fn main() -> ssmixnet::Result<()> {
    let full = ModelConfig::new(18);
    print!("{}", complexity(&full)?.table());
    println!();

    println!("{:<32} {:>10} {:>14}", "combination", "params", "MACs");
    for cfg in ablation_configs(&full) {
        let c = complexity(&cfg)?;
        println!("{:<32} {:>10} {:>14}", cfg.combination_label(), c.total_params, c.total_macs);
    }

    let narrow = ModelConfig {
        hidden: 64,
        blocks: 2,
        ..full
    };
    println!("\nhidden 64, 2 blocks: {} parameters", complexity(&narrow)?.total_params);
    Ok(())
}
