//! Generates a synthetic hyperspectral scene and writes it to disk.
//!
//! ```bash
//! cargo run --release -p ssmixnet --example synth_scene -- /tmp/scene
//! ```

use std::path::PathBuf;

use ssmixnet::hsi::{generate_synthetic, load_scene, save_scene, SyntheticSceneSpec};

fn main() -> ssmixnet::Result<()> {
    let prefix = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ssmix-scene"));

    let spec = SyntheticSceneSpec::new(64, 64, 40, 5, 0.02, 7);
    let (cube, labels) = generate_synthetic(&spec)?;
    save_scene(&prefix, &cube, &labels)?;
    println!(
        "{}x{} pixels, {} bands -> {}.{{json,f32,u16}}",
        cube.height(),
        cube.width(),
        cube.bands(),
        prefix.display()
    );

    for (class, n) in labels.class_counts().iter().enumerate().skip(1) {
        println!("class {class}: {n:>5} pixels");
    }

    // a class's pixels share a signature up to the noise
    let (r, c) = (0..labels.height())
        .flat_map(|r| (0..labels.width()).map(move |c| (r, c)))
        .find(|&(r, c)| labels.get(r, c) == 1)
        .unwrap();
    let px = cube.pixel(r, c);
    println!("pixel ({r},{c}) first bands: {:.3?}", &px[..6]);

    let (back, back_labels) = load_scene(&prefix)?;
    assert_eq!(back, cube);
    assert_eq!(back_labels, labels);
    Ok(())
}
