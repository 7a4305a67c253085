// Removing the retain direction from a forgetting gradient, globally and
// per weight/bias unit.

use ndarray::{array, Array1};
use unlearnq::gop::{diagnostics, project_global, project_layerwise, ProjectionConfig};
use unlearnq::net::{GradientSet, Layer};

fn grads(w: ndarray::Array2<f64>, b: Array1<f64>) -> unlearnq::Result<GradientSet> {
    GradientSet::from_layers(vec![Layer {
        name: "fc0".into(),
        weights: w,
        bias: b,
    }])
}

pub fn run_example() -> unlearnq::Result<()> {
    let g_f = grads(array![[2.0, 2.0], [1.0, -1.0]], array![0.5, 0.0])?;
    let g_r = grads(array![[-3.0, 0.0], [-2.0, 1.0]], array![0.0, 4.0])?;

    let d = diagnostics(&g_f, &g_r)?;
    println!(
        "cosine(g_f, g_r) = {:.4}, conflicted units: {}",
        d.cosine,
        d.conflicted_units()
    );

    let global = project_global(&g_f, &g_r, 1.0, 1e-12)?.grads;
    println!("global:     <g_hat, g_r> = {:.2e}", global.dot(&g_r));

    let layerwise = project_layerwise(&g_f, &g_r, &ProjectionConfig::default())?.grads;
    for (u, r) in layerwise.units().iter().zip(g_r.units()) {
        let dot: f64 = u.values.iter().zip(r.values).map(|(a, b)| a * b).sum();
        println!("layer-wise: {} <g_hat, g_r> = {dot:.2e}", u.name());
        assert!(dot.abs() < 1e-12);
    }

    // alpha interpolates: half-strength keeps half the retain component.
    let half = ProjectionConfig {
        alpha: 0.5,
        ..Default::default()
    };
    let partial = project_layerwise(&g_f, &g_r, &half)?.grads;
    println!("alpha = 0.5: <g_hat, g_r> = {:.4}", partial.dot(&g_r));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("gradient projection example");
}
