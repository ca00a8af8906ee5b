//! Layer shapes and parameter counts of both heads, plus a finite-difference
//! gradient check of the full binary model in f64.

use carenet::model::{build_carenet, count_params, Head, REPORTED_PARAM_COUNT};
use carenet::nn::{bce_loss, check_network, GradCheckConfig, Tensor};

fn main() -> carenet::Result<()> {
    for head in [Head::Type, Head::Subtype] {
        let model = build_carenet(head, 0)?;
        let trace = model.net.shape_trace()?;
        println!(
            "{head} head: {} parameters, {} layers",
            count_params(&model),
            trace.len()
        );
        if head == Head::Type {
            for (i, (c, l)) in trace.iter().enumerate() {
                println!("  {i:>2} {c:>3} x {l}");
            }
        }
    }
    println!("parameter count reported for the original network: {REPORTED_PARAM_COUNT}");

    let model = build_carenet(Head::Type, 1)?;
    let mut net = model.net.cast::<f64>();
    let x = Tensor::from_vec(
        1,
        2,
        467,
        (0..2 * 467)
            .map(|i| ((i % 97) as f64 / 97.0).sin().abs())
            .collect(),
    )?;
    let cfg = GradCheckConfig {
        entries_per_tensor: 2,
        ..Default::default()
    };
    let r = check_network(&mut net, &x, &|y| bce_loss(y, &[1.0, 0.0]), cfg)?;
    println!(
        "gradient check: {} entries, max relative error {:.1e} ({} ReLU kinks skipped)",
        r.checked, r.max_rel_error, r.skipped_kinks
    );
    Ok(())
}
