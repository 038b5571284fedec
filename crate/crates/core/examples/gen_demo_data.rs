//! Writes the synthetic demo samples to `data/`.
//!
//! Reference ~ N(200, 15^2), n = 24; test ~ N(225, 10^2), n = 48.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SEED: u64 = 3;

fn write(path: &Path, values: &[f64]) -> std::io::Result<()> {
    let mut s = String::from("value\n");
    for v in values {
        s.push_str(&format!("{v:.2}\n"));
    }
    fs::write(path, s)
}

fn main() -> std::io::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let r = Normal::new(200.0, 15.0).unwrap();
    let t = Normal::new(225.0, 10.0).unwrap();
    let reference: Vec<f64> = (0..24).map(|_| r.sample(&mut rng)).collect();
    let test: Vec<f64> = (0..48).map(|_| t.sample(&mut rng)).collect();
    write(&dir.join("demo_reference.csv"), &reference)?;
    write(&dir.join("demo_test.csv"), &test)?;
    println!("wrote {}", dir.display());
    Ok(())
}
