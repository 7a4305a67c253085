// OEU against fine-tuning, gradient ascent, random labels and the
// retrained reference, averaged over seeds.

use unlearnq::config::ExperimentConfig;
use unlearnq::runner::compare;
use unlearnq::unlearner::Method;

pub fn run_example() -> unlearnq::Result<()> {
    let mut cfg = ExperimentConfig::parse(include_str!("../configs/blobs.conf"))?;
    // Fewer seeds and a shorter run keep the example quick.
    cfg.set("seeds", "0,1")?;
    cfg.set("unlearn.epochs", "100")?;
    cfg.validate()?;

    let methods = [
        Method::Oeu,
        Method::Ft,
        Method::Ga,
        Method::Rl,
        Method::Retrain,
    ];
    let table = compare(&cfg, &methods, &cfg.seeds)?;
    print!("{}", table.to_text());

    let ag = |m| table.row(m).expect("row").ag.mean;
    assert!(ag(Method::Oeu) <= ag(Method::Ga));
    assert_eq!(ag(Method::Retrain), 0.0);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("baselines example");
}
