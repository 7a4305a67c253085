// The confidence-threshold membership attack on an original model and on
// the model retrained without the forget set.

use unlearnq::config::ExperimentConfig;
use unlearnq::metrics::{confidences, evaluate, fit_threshold, MiaSets};
use unlearnq::runner;

pub fn run_example() -> unlearnq::Result<()> {
    let cfg = ExperimentConfig::parse(
        "data.kind = moons\ndata.dim = 8\nsplit.ratio = 0.3\nquant.bits = 8\n",
    )?;
    let split = runner::prepare_split(&cfg, 3)?;
    let (original, _) = runner::train_original(&cfg, 3, &split)?;
    let (retrained, _) = runner::retrain(&cfg, 3, &split)?;

    let sets = MiaSets::from_split(&split)?;
    for (name, model) in [("original", &original), ("retrained", &retrained)] {
        let members = confidences(model, sets.member_probe.features())?;
        let outsiders = confidences(model, sets.non_members.features())?;
        let attacker = fit_threshold(&members, &outsiders)?;
        let e = evaluate(model, &split)?;
        println!(
            "{name:<9} threshold {:.4}, balanced accuracy {:.3}; forget set non-member {:5.1}%, fresh test non-member {:5.1}%",
            attacker.threshold, attacker.balanced_accuracy, e.mia.score, e.fresh_non_member_rate
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("membership inference example");
}
