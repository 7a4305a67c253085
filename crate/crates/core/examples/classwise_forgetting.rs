// Forgetting every training point of one class.

use unlearnq::config::ExperimentConfig;
use unlearnq::runner::run_seed;
use unlearnq::unlearner::Method;

pub fn run_example() -> unlearnq::Result<()> {
    let cfg = ExperimentConfig::parse(include_str!("../configs/blobs_classwise.conf"))?;
    let seed = cfg.seeds[0];
    let runs = run_seed(&cfg, seed, &[Method::Oeu, Method::Rl])?;
    for run in &runs {
        let m = &run.report.metrics;
        println!(
            "{:<4} FA {:6.2} (retrain {:5.2})  RA {:6.2}  TA {:6.2}  AG {:5.2}",
            run.report.method, m.fa, run.report.retrain.fa, m.ra, m.ta, m.ag
        );
    }
    assert!(runs[0].report.metrics.gaps.fa <= 5.0);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("class-wise example");
}
