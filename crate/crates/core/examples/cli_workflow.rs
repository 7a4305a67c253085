// The `unlearnq` command line driven in-process: train, unlearn, evaluate.

use unlearnq::cli::{run, EXIT_OK};

pub fn run_example() -> unlearnq::Result<()> {
    let dir = tempfile::tempdir()?;
    let out = dir.path().to_str().expect("utf-8 temp path").to_string();
    let config = dir.path().join("moons.conf");
    std::fs::write(
        &config,
        "data.kind = moons\nnet.hidden = 16\ntrain.epochs = 20\n",
    )?;
    let config = config.to_str().expect("utf-8 temp path").to_string();

    for cmd in [
        vec!["train"],
        vec!["unlearn", "--method", "oeu"],
        vec!["evaluate"],
    ] {
        let mut args = vec!["unlearnq"];
        args.extend(&cmd);
        args.extend([
            "--config",
            &config,
            "--out",
            &out,
            "--seed",
            "0",
            "--set",
            "unlearn.epochs=5",
        ]);
        let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
        let code = run(args, &mut stdout, &mut stderr);
        println!("$ unlearnq {} -> exit {code}", cmd.join(" "));
        print!("{}", String::from_utf8_lossy(&stdout));
        assert_eq!(code, EXIT_OK, "{}", String::from_utf8_lossy(&stderr));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("cli example");
}
