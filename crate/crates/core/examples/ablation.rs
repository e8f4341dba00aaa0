//! Train the two pointer arms and the four inference-time fusion variants
//! on a shortened schedule and print the comparison tables.
//!
//! cargo run --release --example ablation [iterations]

use reverie_agent::config::Profile;
use reverie_agent::eval::{comparison_table, AblationKind, Experiment};
use reverie_agent::pipeline::{pretrain_object, pretrain_scene};
use reverie_agent::trainer::LossWeights;
use reverie_agent::world::{Dataset, Vocab};

fn main() -> reverie_agent::Result<()> {
    let mut profile = Profile::named("toy")?;
    profile.train.iterations = std::env::args().nth(1).and_then(|n| n.parse().ok()).unwrap_or(600);
    profile.train.weights = LossWeights::IMITATION_ONLY;
    let vocab = Vocab::standard();
    let ds = Dataset::generate(&profile.data, &vocab)?;
    let (scene, _, _) = pretrain_scene(&profile, &ds, &vocab)?;
    let (object, _, _) = pretrain_object(&profile, &ds, &vocab)?;

    let mut exp = Experiment::new(&profile, &ds, &vocab, Some(&scene), Some(&object));
    for kind in [AblationKind::Pointer, AblationKind::Fusion] {
        let outcomes = exp.run(kind, &ds.val_unseen)?;
        println!("{}", comparison_table(kind.name(), &outcomes));
    }
    Ok(())
}
