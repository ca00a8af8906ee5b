//! Smooth a noisy band with an 11-point quadratic Savitzky-Golay filter.

use carenet::spectral::SavitzkyGolay;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> carenet::Result<()> {
    let n = 120;
    let clean: Vec<f64> = (0..n)
        .map(|i| (-0.5 * ((i as f64 - 60.0) / 8.0).powi(2)).exp())
        .collect();
    let noise = Normal::new(0.0, 0.03).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noisy: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();

    let sg = SavitzkyGolay::new(11, 2)?;
    let smooth = sg.apply(&noisy)?;
    let rms = |a: &[f64]| {
        (a.iter()
            .zip(&clean)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    };
    println!(
        "rms error: noisy {:.4}, smoothed {:.4}",
        rms(&noisy),
        rms(&smooth)
    );

    // quadratics pass through unchanged, edges included
    let quad: Vec<f64> = (0..n)
        .map(|i| 0.2 + 0.01 * i as f64 - 1e-4 * (i * i) as f64)
        .collect();
    let worst = sg
        .apply(&quad)?
        .iter()
        .zip(&quad)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max deviation on a quadratic: {worst:.1e}");
    Ok(())
}
