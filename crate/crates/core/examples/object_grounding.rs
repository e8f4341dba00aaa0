//! Two-stage object grounding: image-based pre-training, then
//! viewpoint-based fine-tuning, with per-object accuracy on held-out
//! viewpoints after each stage.
//!
//! cargo run --release --example object_grounding

use reverie_agent::autodiff::{ParamStore, RngStream};
use reverie_agent::grounding::{evaluate_objects, sample_object_batch, train_object_grounding, GroundingTrainConfig, ObjectGroundingModel, Stage, BOX_EXTRA_DIMS};
use reverie_agent::nn::EncoderConfig;
use reverie_agent::world::{Dataset, DatasetConfig, Vocab, MAX_INSTRUCTION_LEN};

fn main() -> reverie_agent::Result<()> {
    let vocab = Vocab::standard();
    let ds = Dataset::generate(&DatasetConfig::default(), &vocab)?;
    let rng = RngStream::new(11);
    let image = sample_object_batch(&ds.worlds, &ds.train, Stage::ImageBased, 1000, &mut rng.fork("image"))?;
    let viewpoint = sample_object_batch(&ds.worlds, &ds.train, Stage::ViewpointBased, 1000, &mut rng.fork("viewpoint"))?;
    let held_out = sample_object_batch(&ds.worlds, &ds.val_unseen, Stage::ViewpointBased, 300, &mut rng.fork("held-out"))?;

    let mut store = ParamStore::new();
    let cfg = EncoderConfig::toy(vocab.len(), MAX_INSTRUCTION_LEN, ds.worlds[0].f_box + BOX_EXTRA_DIMS);
    let mut model = ObjectGroundingModel::new(&mut store, "object", cfg, &mut rng.fork("init"));
    let train_cfg = GroundingTrainConfig { epochs: 4, ..Default::default() };

    let e = evaluate_objects(&model, &store, &held_out)?;
    println!("untrained: per-object accuracy {:.3} (chance {:.3})", e.accuracy, e.chance);
    train_object_grounding(&mut model, &mut store, &image, Stage::ImageBased, &train_cfg, false)?;
    let e = evaluate_objects(&model, &store, &held_out)?;
    println!("image-based: per-object accuracy {:.3} (chance {:.3})", e.accuracy, e.chance);
    train_object_grounding(&mut model, &mut store, &viewpoint, Stage::ViewpointBased, &train_cfg, false)?;
    let e = evaluate_objects(&model, &store, &held_out)?;
    println!("viewpoint-based: per-object accuracy {:.3} (chance {:.3})", e.accuracy, e.chance);
    Ok(())
}
