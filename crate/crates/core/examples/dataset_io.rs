// Synthetic datasets, the binary dataset format and seeded splits.

use unlearnq::data::{
    gen_synthetic, split_classwise, split_random, train_test_split, DatasetKind, LabeledSet,
    SyntheticSpec,
};

pub fn run_example() -> unlearnq::Result<()> {
    for kind in [DatasetKind::Blobs, DatasetKind::Moons, DatasetKind::Rings] {
        let data = gen_synthetic(&SyntheticSpec {
            kind,
            classes: 2,
            samples: 200,
            noise: 0.1,
            dim: 3,
            seed: 1,
        })?;
        println!(
            "{kind}: {} rows, {} features, class counts {:?}",
            data.len(),
            data.dim(),
            data.class_counts()
        );
    }

    let data = gen_synthetic(&SyntheticSpec {
        kind: DatasetKind::Blobs,
        classes: 4,
        samples: 400,
        noise: 0.5,
        dim: 5,
        seed: 2,
    })?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("blobs.bin");
    data.save(&path)?;
    let back = LabeledSet::load(&path)?;
    assert_eq!(back.features(), data.features());
    assert_eq!(back.labels(), data.labels());
    println!(
        "round trip through {} bytes",
        std::fs::metadata(&path)?.len()
    );

    let (train, test) = train_test_split(&data, 0.25, 3)?;
    let random = split_random(&train, &test, 0.1, 4)?;
    let by_class = split_classwise(&train, &test, 2)?;
    println!(
        "random 10%: forget {} / retain {}; class 2: forget {} / retain {}",
        random.forget.len(),
        random.retain.len(),
        by_class.forget.len(),
        by_class.retain.len()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("dataset example");
}
