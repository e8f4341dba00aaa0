//! Write step and episode traces for a random policy and an untrained
//! agent, read them back and bucket outcomes by shortest-path length.
//!
//! cargo run --release --example trace_report

use reverie_agent::agent::{Agent, FusionFlags};
use reverie_agent::config::Profile;
use reverie_agent::eval::{evaluate_agent, random_policy_results, trace_report, traces_from_str, traces_to_string};
use reverie_agent::world::{Dataset, Vocab};

fn main() -> reverie_agent::Result<()> {
    let profile = Profile::named("toy")?;
    let vocab = Vocab::standard();
    let ds = Dataset::generate(&profile.data, &vocab)?;

    let random = random_policy_results(&ds.worlds, &ds.val_seen, profile.agent.max_steps, 1)?;
    let w = &ds.worlds[0];
    let agent = Agent::new(
        profile.agent.clone(),
        profile.encoder.scene(vocab.len(), w.f_view),
        profile.encoder.object(vocab.len(), w.f_box),
        w.f_view,
        profile.seed,
    )?;
    let (results, steps) = evaluate_agent(&agent, &ds.worlds, &ds.val_unseen, FusionFlags::BOTH)?;

    let text = traces_to_string(&steps, &[random, results].concat())?;
    println!("{} trace lines, {} of them steps", text.lines().count(), steps.len());
    let records = traces_from_str(&text)?;

    println!("\nterciles of the evaluated set:\n{}", trace_report(&records, None)?.to_text());
    println!("fixed boundaries at 6 m and 12 m:\n{}", trace_report(&records, Some(&[6.0, 12.0]))?.to_text());
    Ok(())
}
