//! Patient-level split: one test patient per subtype, four dev folds.

use carenet::labels::Subtype;
use carenet::pipeline::make_split;

fn main() -> carenet::Result<()> {
    let counts = [8, 8, 7, 7];
    let mut patients = Vec::new();
    for (s, &n) in Subtype::ALL.iter().zip(&counts) {
        for _ in 0..n {
            patients.push((patients.len() as u32, *s));
        }
    }
    let plan = make_split(&patients, 0)?;
    for t in &plan.test {
        println!(
            "test patient {:>2} {:<4} type core {}",
            t.patient_id,
            t.subtype.name(),
            t.type_core.name()
        );
    }
    for (k, f) in plan.folds.iter().enumerate() {
        println!(
            "fold {k}: {} train / {} dev, dev = {:?}",
            f.train.len(),
            f.dev.len(),
            f.dev
        );
    }
    Ok(())
}
