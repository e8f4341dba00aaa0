//! Pre-train the scene grounding scorer on a toy dataset and report 5-way
//! accuracy before and after training.
//!
//! cargo run --release --example scene_grounding

use std::time::Instant;

use reverie_agent::autodiff::{ParamStore, RngStream};
use reverie_agent::grounding::{evaluate_scene, sample_scene_batch, train_scene_grounding, GroundingTrainConfig, SceneGroundingModel};
use reverie_agent::nn::EncoderConfig;
use reverie_agent::world::{Dataset, DatasetConfig, Vocab, MAX_INSTRUCTION_LEN};

fn main() -> reverie_agent::Result<()> {
    let vocab = Vocab::standard();
    let ds = Dataset::generate(&DatasetConfig::default(), &vocab)?;
    let mut rng = RngStream::new(7);
    let train = sample_scene_batch(&ds.worlds, &ds.train, 2000, &mut rng.fork("train"))?;
    let held_out = sample_scene_batch(&ds.worlds, &ds.val_seen, 300, &mut rng.fork("val"))?;

    let mut store = ParamStore::new();
    let cfg = EncoderConfig::toy(vocab.len(), MAX_INSTRUCTION_LEN, ds.worlds[0].f_view);
    let model = SceneGroundingModel::new(&mut store, "scene", cfg, &mut rng);
    let (acc0, loss0) = evaluate_scene(&model, &store, &ds.worlds, &held_out)?;
    println!("untrained: accuracy {:.3}, loss {:.3}", acc0, loss0);

    let t = Instant::now();
    let report = train_scene_grounding(&model, &mut store, &ds.worlds, &train, &GroundingTrainConfig::default())?;
    for (i, (l, a)) in report.epoch_loss.iter().zip(&report.epoch_accuracy).enumerate() {
        println!("epoch {}: loss {:.4}, train accuracy {:.3}", i + 1, l, a);
    }
    let (acc, loss) = evaluate_scene(&model, &store, &ds.worlds, &held_out)?;
    println!("trained: accuracy {:.3}, loss {:.3} ({:.1}s)", acc, loss, t.elapsed().as_secs_f64());
    Ok(())
}
