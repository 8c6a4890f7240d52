//! Generate a small two-digit dataset, write it with its manifest, and read
//! it back with checksum verification.

use monocanon::datagen::{generate_split, read_dataset, write_dataset, ComposeConfig, DigitSource, Split};

fn main() -> monocanon::Result<()> {
    let cfg = ComposeConfig::default();
    let source = DigitSource::open(
        std::env::var("MNIST_DIR").ok().as_deref().map(std::path::Path::new),
        Split::Train,
    )?;
    let train = generate_split(&source, &cfg, 0, 200)?;
    for s in train.iter().take(3) {
        println!(
            "label {:02}  scales {:?}  boxes {:?}",
            s.label, s.digit_scales, s.placements
        );
    }
    let dir = std::env::temp_dir().join("monocanon-datagen-example");
    let m = write_dataset(&dir, &cfg, 0, source.kind, &[("train", Split::Train, &train)])?;
    println!(
        "wrote {} ({} samples, sha256 {})",
        dir.display(),
        m.splits[0].count,
        m.splits[0].sha256
    );
    let (_, back) = read_dataset(&dir, "train")?;
    println!("read back identical: {}", back == train);
    Ok(())
}
