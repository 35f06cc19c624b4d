//! Reduces a scene with PCA, cuts mirror-padded patches and draws a stratified split.

use ssmixnet::hsi::{generate_synthetic, SyntheticSceneSpec};
use ssmixnet::preprocess::{apply_pca, extract_patches, fit_pca, Split};

fn main() -> ssmixnet::Result<()> {
    let (cube, labels) = generate_synthetic(&SyntheticSceneSpec::new(64, 64, 40, 5, 0.02, 7))?;

    let pca = fit_pca(&cube, 15)?;
    let total: f64 = fit_pca(&cube, cube.bands())?.explained_variance().iter().sum();
    let mut kept = 0.0;
    for (i, v) in pca.explained_variance().iter().enumerate().take(5) {
        kept += v;
        println!("component {:>2}: variance {v:.5} (cumulative {:.2}%)", i + 1, 100.0 * kept / total);
    }
    let kept: f64 = pca.explained_variance().iter().sum();
    println!("15 components keep {:.4}% of the variance", 100.0 * kept / total);

    let reduced = apply_pca(&cube, &pca)?;
    let patches = extract_patches(&reduced, &labels, 9)?.assign_splits(0.01, 0.01, 7)?;
    println!("{} patches of shape {:?}", patches.len(), &patches.patches().shape()[1..]);

    println!("class  train  val  test");
    for (k, [tr, va, te]) in patches.split_table().iter().enumerate() {
        println!("{:>5}  {tr:>5}  {va:>3}  {te:>4}", k + 1);
    }
    let train = patches.samples(Split::Train);
    println!("train tensor {:?}", train.patches.shape());
    Ok(())
}
