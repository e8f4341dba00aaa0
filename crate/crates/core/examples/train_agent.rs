//! Pre-train both grounding scorers, train the navigation policy and
//! compare it with a uniform-random policy on seen and unseen worlds.
//!
//! cargo run --release --example train_agent [iterations]

use reverie_agent::agent::FusionFlags;
use reverie_agent::config::Profile;
use reverie_agent::eval::{compute_metrics, evaluate_agent, random_policy_results, MetricsReport};
use reverie_agent::pipeline::{build_agent, pretrain_object, pretrain_scene};
use reverie_agent::trainer::train_agent;
use reverie_agent::world::{Dataset, Vocab};

fn show(label: &str, m: &MetricsReport) {
    println!(
        "{label:<22} SR {:>5.1}  OSR {:>5.1}  SPL {:>5.1}  RGS {:>5.1}  RG-SPL {:>5.1}  length {:>5.1} m",
        100.0 * m.success,
        100.0 * m.oracle_success,
        100.0 * m.spl,
        100.0 * m.rgs,
        100.0 * m.rg_spl,
        m.length
    );
}

fn main() -> reverie_agent::Result<()> {
    let mut profile = Profile::named("toy")?;
    if let Some(n) = std::env::args().nth(1) {
        profile.train.iterations = n.parse().map_err(|_| reverie_agent::Error::Config(format!("bad iteration count {n:?}")))?;
    }
    let vocab = Vocab::standard();
    let ds = Dataset::generate(&profile.data, &vocab)?;

    let (scene, _, s) = pretrain_scene(&profile, &ds, &vocab)?;
    println!("scene grounding accuracy {:.3} (untrained {:.3})", s.accuracy, s.untrained_accuracy);
    let (object, _, o) = pretrain_object(&profile, &ds, &vocab)?;
    let vp = o.viewpoint_based.unwrap_or(o.image_based);
    println!("object grounding accuracy {:.3} (chance {:.3})", vp.accuracy, vp.chance);

    let mut agent = build_agent(&profile, &profile.agent, &ds, &vocab, Some(&scene), Some(&object))?;
    let summary = train_agent(&mut agent, &ds.worlds, &ds.train, &ds.val_seen, &profile.train, None)?;
    println!("trained {} iterations in {:.0}s, best validation success {:?}\n", summary.iterations, summary.seconds, summary.best_val_success);

    for (name, split) in [("val_seen", &ds.val_seen), ("val_unseen", &ds.val_unseen)] {
        for (tag, fusion) in [("", FusionFlags::NONE), (" + fusion", FusionFlags::BOTH)] {
            let (results, _) = evaluate_agent(&agent, &ds.worlds, split, fusion)?;
            show(&format!("{name}{tag}"), &compute_metrics(&results)?);
        }
        let random = random_policy_results(&ds.worlds, split, profile.agent.max_steps, profile.seed)?;
        show(&format!("{name} random"), &compute_metrics(&random)?);
    }
    Ok(())
}
