//! Generate a toy dataset, walk one episode along its shortest path and
//! write the worlds and splits to disk.
//!
//! cargo run --release --example world_generation [out_dir]

use reverie_agent::world::{observe, step, Dataset, DatasetConfig, EpisodeState, Vocab, SUCCESS_RADIUS};

fn main() -> reverie_agent::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("reverie-worlds"));
    let vocab = Vocab::standard();
    let ds = Dataset::generate(&DatasetConfig::default(), &vocab)?;
    println!("{} worlds; {} train, {} val_seen, {} val_unseen episodes", ds.worlds.len(), ds.train.len(), ds.val_seen.len(), ds.val_unseen.len());

    let w = &ds.worlds[0];
    let total: f64 = w.edges.iter().map(|e| e.length).sum();
    println!(
        "world 0: {} viewpoints, {} edges ({:.1} m total), max degree {}, {} objects",
        w.len(),
        w.edges.len(),
        total,
        w.max_degree(),
        w.objects.len()
    );

    let ep = &ds.train[0];
    println!("\nepisode {}: {:?}", ep.id, ep.instruction);
    println!("start {} -> target {} ({:.2} m, path {:?})", ep.start, ep.target, ep.path_length, ep.path);
    let mut state = EpisodeState::start(ep);
    for &next in &ep.path[1..] {
        let obs = observe(w, state.current);
        let action = obs.candidates.iter().position(|c| c.destination == Some(next)).expect("path follows edges");
        println!("  at {:>2}: {} candidates, {} boxes visible; moving to {next}", obs.viewpoint, obs.candidates.len(), obs.boxes.len());
        step(w, &mut state, action)?;
    }
    step(w, &mut state, 0)?;
    let here = state.current;
    println!("stopped at {here}: {:.2} m from the target (success radius {SUCCESS_RADIUS} m)", w.distance(here, ep.target));

    ds.save(&out)?;
    println!("\nwrote {}", out.display());
    Ok(())
}
