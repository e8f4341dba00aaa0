use proptest::prelude::*;

use reverie_agent::autodiff::RngStream;
use reverie_agent::world::io::{worlds_from_str, worlds_to_string};
use reverie_agent::world::{generate_world, make_episodes, observe, step, Dataset, DatasetConfig, EpisodeState, Vocab, World, WorldConfig, LENGTH_QUANTUM, MAX_INSTRUCTION_LEN, N_VIEWS};

fn world(seed: u64, n: usize, branching: usize) -> World {
    generate_world(&WorldConfig { n_viewpoints: n, branching, n_objects: 10, f_view: 6, f_box: 5, seed, ..Default::default() }, 0).unwrap()
}

/// Hop counts by repeated relaxation with unit edge weights.
fn unit_relaxation(w: &World, source: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; w.len()];
    d[source] = Some(0);
    loop {
        let mut changed = false;
        for e in &w.edges {
            for (u, v) in [(e.a, e.b), (e.b, e.a)] {
                if let Some(du) = d[u] {
                    if d[v].is_none_or(|dv| du + 1 < dv) {
                        d[v] = Some(du + 1);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn generated_worlds_hold_their_invariants(seed in 0u64..10_000, n in 5usize..40, branching in 2usize..5) {
        let w = world(seed, n, branching);
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.max_degree() <= branching);
        for v in 0..n {
            prop_assert!(w.distance(0, v).is_finite());
            prop_assert_eq!(w.viewpoints[v].panorama.dims2(), (N_VIEWS, 6));
        }
        for e in &w.edges {
            prop_assert!(e.length > 0.0 && e.length <= 5.5, "edge length {}", e.length);
            prop_assert_eq!((e.length / LENGTH_QUANTUM).fract(), 0.0);
            prop_assert_eq!(w.edge_length(e.a, e.b), Some(e.length));
            prop_assert_eq!(w.edge_length(e.b, e.a), Some(e.length));
        }
        for o in &w.objects {
            prop_assert!(!o.boxes.is_empty());
            prop_assert!(o.boxes.iter().all(|b| b.rect.in_frame() && b.view < N_VIEWS));
        }
    }

    #[test]
    fn distances_are_a_metric(seed in 0u64..10_000) {
        let w = world(seed, 15, 3);
        for a in 0..w.len() {
            prop_assert_eq!(w.distance(a, a), 0.0);
            for b in 0..w.len() {
                prop_assert_eq!(w.distance(a, b), w.distance(b, a));
                for c in 0..w.len() {
                    prop_assert!(w.distance(a, c) <= w.distance(a, b) + w.distance(b, c));
                }
            }
        }
    }

    #[test]
    fn hop_counts_match_unit_relaxation(seed in 0u64..10_000, n in 5usize..30) {
        let w = world(seed, n, 3);
        for s in 0..w.len() {
            prop_assert_eq!(w.hops_from(s), unit_relaxation(&w, s));
        }
    }

    #[test]
    fn walking_accumulates_edge_lengths(seed in 0u64..10_000, moves in prop::collection::vec(0usize..8, 0..12)) {
        let w = world(seed, 12, 3);
        let vocab = Vocab::standard();
        let ep = make_episodes(&w, 1, &vocab, &mut RngStream::new(seed)).unwrap().remove(0);
        let mut state = EpisodeState::start(&ep);
        let mut expect = 0.0;
        for m in moves {
            let obs = observe(&w, state.current);
            prop_assert_eq!(obs.candidates.len(), w.neighbors(state.current).len() + 1);
            prop_assert!(obs.candidates[0].is_stop());
            let action = 1 + m % (obs.candidates.len() - 1);
            let to = obs.candidates[action].destination.unwrap();
            expect += w.edge_length(state.current, to).unwrap();
            step(&w, &mut state, action).unwrap();
            prop_assert_eq!(state.current, to);
        }
        prop_assert_eq!(state.length, expect);
        step(&w, &mut state, 0).unwrap();
        prop_assert!(state.done);
        prop_assert!(step(&w, &mut state, 0).is_err());
    }
}

#[test]
fn episodes_follow_shortest_paths() {
    let vocab = Vocab::standard();
    let ds = Dataset::generate(&DatasetConfig { train_worlds: 3, unseen_worlds: 1, train_episodes_per_world: 10, val_episodes_per_world: 4, ..Default::default() }, &vocab).unwrap();
    assert_eq!((ds.train.len(), ds.val_seen.len(), ds.val_unseen.len()), (30, 12, 4));
    for ep in ds.train.iter().chain(&ds.val_seen).chain(&ds.val_unseen) {
        let w = ds.world_of(ep);
        assert_eq!(ep.path.first(), Some(&ep.start));
        assert_eq!(ep.path.last(), Some(&ep.target));
        assert_eq!(ep.path_length, w.distance(ep.start, ep.target));
        assert_eq!(w.objects[ep.target_object].anchor, ep.target);
        assert_eq!(vocab.encode(&ep.instruction).unwrap(), ep.tokens);
        assert!(ep.tokens.len() <= MAX_INSTRUCTION_LEN);
    }
    assert!(ds.val_unseen.iter().all(|e| e.world == 3));
    assert!(ds.train.iter().chain(&ds.val_seen).all(|e| e.world < 3));
}

#[test]
fn same_seed_same_dataset() {
    let vocab = Vocab::standard();
    let cfg = DatasetConfig { train_worlds: 2, unseen_worlds: 1, train_episodes_per_world: 5, val_episodes_per_world: 2, ..Default::default() };
    assert_eq!(Dataset::generate(&cfg, &vocab).unwrap(), Dataset::generate(&cfg, &vocab).unwrap());
    let mut other = cfg.clone();
    other.world.seed = 99;
    assert_ne!(Dataset::generate(&cfg, &vocab).unwrap().worlds, Dataset::generate(&other, &vocab).unwrap().worlds);
}

#[test]
fn datasets_roundtrip_through_disk() {
    let vocab = Vocab::standard();
    let cfg = DatasetConfig { train_worlds: 2, unseen_worlds: 1, train_episodes_per_world: 5, val_episodes_per_world: 2, ..Default::default() };
    let ds = Dataset::generate(&cfg, &vocab).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    let text = worlds_to_string(&ds.worlds).unwrap();
    assert_eq!(worlds_from_str(&text).unwrap(), ds.worlds);
}
