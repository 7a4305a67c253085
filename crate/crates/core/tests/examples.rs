//! Every example under `examples/` runs as a test.

macro_rules! example {
    ($name:ident, $file:literal) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $name() {
            $name::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(fake_quantization, "fake_quantization.rs");
example!(entropy_forgetting, "entropy_forgetting.rs");
example!(gradient_projection, "gradient_projection.rs");
example!(oeu_two_moons, "oeu_two_moons.rs");
example!(baselines_comparison, "baselines_comparison.rs");
example!(ablation_study, "ablation_study.rs");
example!(classwise_forgetting, "classwise_forgetting.rs");
example!(membership_inference, "membership_inference.rs");
example!(dataset_io, "dataset_io.rs");
example!(cli_workflow, "cli_workflow.rs");
