// OEU with projection switched off, with random labels in place of the
// entropy objective, and with one global projection.

use unlearnq::config::ExperimentConfig;
use unlearnq::runner::compare;
use unlearnq::unlearner::Method;

pub fn run_example() -> unlearnq::Result<()> {
    let mut cfg = ExperimentConfig::parse(include_str!("../configs/blobs_conflicted.conf"))?;
    cfg.set("seeds", "0,1")?;
    cfg.validate()?;

    let methods = [
        Method::Oeu,
        Method::OeuNoGop,
        Method::OeuNoEgu,
        Method::OeuGlobal,
    ];
    let table = compare(&cfg, &methods, &cfg.seeds)?;
    print!("{}", table.to_text());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("ablation example");
}
