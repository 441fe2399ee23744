use admissos::heuristic::Heuristic;
use admissos::planner::{plan, validate_path, SearchStatus, World};
use proptest::prelude::*;

#[test]
fn informed_search_never_expands_more() {
    for name in ["forest", "corridor"] {
        let w = World::bundled(name).unwrap();
        let (p, cfg) = (w.problem(), w.config());
        let informed = plan(&p, &w.heuristic(), &w.start, &cfg).unwrap();
        let blind = plan(&p, &Heuristic::zero(p.nstate()), &w.start, &cfg).unwrap();
        assert!(informed.iterations <= blind.iterations, "{name}");
    }
}

#[test]
fn priorities_are_nondecreasing_along_paths() {
    for name in ["forest", "corridor"] {
        let w = World::bundled(name).unwrap();
        let r = plan(&w.problem(), &w.heuristic(), &w.start, &w.config()).unwrap();
        assert_eq!(r.status, SearchStatus::Solved);
        for (k, pair) in r.priorities.windows(2).enumerate() {
            assert!(pair[1] >= pair[0] - 1e-9, "{name} edge {k}: {} after {}", pair[1], pair[0]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forest_paths_revalidate_from_any_free_start(x in 0.2..9.8f64, y in 0.2..9.8f64) {
        let mut w = World::bundled("forest").unwrap();
        prop_assume!(w.is_free(&[x, y]));
        w.start = vec![x, y];
        let (p, cfg) = (w.problem(), w.config());
        for h in [w.heuristic(), Heuristic::zero(2)] {
            let r = plan(&p, &h, &w.start, &cfg).unwrap();
            if r.status == SearchStatus::Solved {
                prop_assert!(validate_path(&p, &r, &cfg).is_ok(), "{:?}", validate_path(&p, &r, &cfg));
                prop_assert!(r.cost >= w.heuristic().value(&w.start) - 1e-9);
            }
        }
    }
}
