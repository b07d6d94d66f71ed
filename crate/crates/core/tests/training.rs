//! Smoke runs on real MNIST. Skipped (with a note) when the IDX files are
//! not present; see scripts/fetch_mnist.sh.

use std::path::PathBuf;

use repinf_core::classifier::{train_discriminator, DiscriminatorConfig, DiscriminatorDims, DiscriminatorModel};
use repinf_core::data::{load_mnist, Dataset, Split, DATA_DIR_ENV};
use repinf_core::vae::{default_schedule, test_elbo, train, LrStage, TrainConfig, VaeDims, VaeModel};
use repinf_core::{Rng, Tensor};

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist(split: Split) -> Option<Dataset> {
    match load_mnist(&data_dir(), split) {
        Ok(d) => Some(d),
        Err(e) => {
            eprintln!("skipping: MNIST unavailable ({e})");
            None
        }
    }
}

fn config(schedule: Vec<LrStage>) -> TrainConfig {
    TrainConfig { schedule, batch_size: 100, seed: 1, checkpoint_dir: None }
}

#[test]
fn one_epoch_improves_the_bound_and_is_reproducible() {
    let Some(train_set) = mnist(Split::Train) else { return };
    let subset = train_set.head(1000);
    let run = || {
        let mut rng = Rng::new(5);
        let mut m = VaeModel::<f32>::new(VaeDims::mnist(20), &mut rng);
        let before = test_elbo(&m, &subset, 9).unwrap();
        let log = train(&mut m, &subset, &config(default_schedule(1)), &mut rng, |_| {}).unwrap();
        (before, test_elbo(&m, &subset, 9).unwrap(), log)
    };
    let (before, after, log) = run();
    assert!(after > before, "bound went from {before} to {after}");
    assert_eq!(run().2, log);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let Some(train_set) = mnist(Split::Train) else { return };
    let subset = train_set.head(300);
    let mut rng = Rng::new(6);
    let mut m = VaeModel::<f32>::new(VaeDims::mnist(5), &mut rng);
    let before = m.clone();
    train(&mut m, &subset, &config(vec![LrStage { learning_rate: 0.0, epochs: 1 }]), &mut rng, |_| {}).unwrap();
    for ((_, a), (_, b)) in m.params().iter().zip(before.params()) {
        assert_eq!(*a, b);
    }
}

#[test]
fn held_out_bound_properties() {
    let (Some(train_set), Some(test_set)) = (mnist(Split::Train), mnist(Split::Test)) else { return };
    let held_out = test_set.head(500);
    let mut rng = Rng::new(7);
    let untrained = VaeModel::<f32>::new(VaeDims::mnist(10), &mut rng);
    let mut trained = untrained.clone();
    train(&mut trained, &train_set.head(2000), &config(default_schedule(2)), &mut rng, |_| {}).unwrap();
    let a = test_elbo(&trained, &held_out, 3).unwrap();
    assert_eq!(a, test_elbo(&trained, &held_out, 3).unwrap());
    assert!(a > test_elbo(&untrained, &held_out, 3).unwrap());

    let one = held_out.head(1);
    let direct = trained.elbo(&Tensor::vector(one.image(0).to_vec()), &mut Rng::new(3)).unwrap();
    assert!((test_elbo(&trained, &one, 3).unwrap() - direct.elbo).abs() < 1e-9);
}

#[test]
fn classifier_smoke_and_chance_baseline() {
    let (Some(train_set), Some(test_set)) = (mnist(Split::Train), mnist(Split::Test)) else { return };
    let held_out = test_set.head(1000);
    let untrained = DiscriminatorModel::new(DiscriminatorDims::default(), &mut Rng::new(0)).unwrap();
    let chance = untrained.accuracy(&held_out).unwrap();
    assert!((0.0..0.3).contains(&chance), "untrained accuracy {chance}");

    let cfg = DiscriminatorConfig { epochs: 1, batch_size: 32, seed: 4, ..Default::default() };
    let (m, _) = train_discriminator(&train_set.head(2000), &cfg, |_| {}).unwrap();
    let acc = m.accuracy(&held_out).unwrap();
    assert!(acc > 0.8, "one-epoch accuracy {acc}");
}
