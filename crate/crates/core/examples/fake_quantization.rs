// Min-max calibrated fake quantization and its straight-through mask.

use unlearnq::quant::{quantize, ste_backward, QuantSpec};

pub fn run_example() -> unlearnq::Result<()> {
    let weights = [0.42, -1.05, 0.11, 0.7, -0.33, 1.4];
    let spec = QuantSpec::calibrate(4, weights.iter().copied())?;
    println!(
        "4-bit grid: scale {:.4}, levels {}..{}",
        spec.scale(),
        spec.level_min(),
        spec.level_max()
    );

    let (q, mask) = quantize(&weights, &spec)?;
    for (w, v) in weights.iter().zip(&q) {
        println!("{w:>6.2} -> {v:>7.4}");
    }
    assert!(q.iter().all(|&v| spec.on_grid(v)));

    // Grid values are fixed points.
    let (again, _) = quantize(&q, &spec)?;
    assert_eq!(again, q);

    // Values past the clamp range saturate and stop the gradient.
    let wide = [0.5, 3.0, -3.0];
    let (clamped, wide_mask) = quantize(&wide, &spec)?;
    let grads = ste_backward(&[1.0, 1.0, 1.0], &wide_mask)?;
    println!("clamped {clamped:?}, straight-through gradient {grads:?}");
    assert_eq!(grads, vec![1.0, 0.0, 0.0]);
    assert!(mask.as_slice().iter().all(|&inside| inside));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("fake quantization example");
}
