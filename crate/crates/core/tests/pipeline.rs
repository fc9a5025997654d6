use std::sync::Arc;

use popmachine::experiment::{all_kinds, build_rm, ExperimentConfig};
use popmachine::*;
use proptest::prelude::*;

fn map_names() -> Vec<String> {
    let mut names = Vec::new();
    for task in fixtures::DOMAINS {
        names.push(format!("{task}-7"));
        names.extend((0..3).map(|i| format!("{task}-15-{i}")));
        names.extend((0..10).map(|i| format!("{task}-41-{i}")));
    }
    names
}

#[test]
fn bundled_maps_parse_and_round_trip() {
    for name in map_names() {
        let map = fixtures::map(&name).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_map(&map.to_text()).unwrap(), map, "{name}");
        assert_eq!(map.eval_starts().len(), 5, "{name}");
        for &s in map.eval_starts() {
            assert_eq!(map.cell(s), CellKind::Empty, "{name}: start {s:?}");
        }
    }
}

#[test]
fn large_maps_split_bridge_materials() {
    for task in fixtures::DOMAINS {
        for i in 0..10 {
            let map = fixtures::map(&format!("{task}-41-{i}")).unwrap();
            assert_eq!((map.width(), map.height()), (41, 41));
            let half = map.height() / 2;
            for c in map.free_cells() {
                match map.cell(c) {
                    CellKind::Iron | CellKind::Factory => assert!(c.1 < half, "{task}-41-{i}: {c:?}"),
                    CellKind::Grass | CellKind::Toolshed => assert!(c.1 > half, "{task}-41-{i}: {c:?}"),
                    _ => {}
                }
            }
        }
    }
}

#[test]
fn bundled_domains_round_trip() {
    for name in fixtures::DOMAINS {
        let file = fixtures::domain(name).unwrap();
        let text = serialize_domain(&file.domain, &file.tasks);
        let again = parse_domain(&text).unwrap();
        assert_eq!(serialize_domain(&again.domain, &again.tasks), text);
    }
}

#[test]
fn bundled_experiment_configs() {
    for task in fixtures::DOMAINS {
        let desk = ExperimentConfig::load(&fixtures::experiment_path(&format!("desk-{task}"))).unwrap();
        assert_eq!(desk.maps.len(), 3);
        assert_eq!(desk.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(desk.hyperparams.total_steps, 500_000);
        let plans = enumerate_pops(&desk.load_task().unwrap(), 1).unwrap();
        let cells = desk.maps.len() * desk.expand_kinds(&plans).len() * desk.seeds.len();
        assert_eq!(cells, if task == "gold-or-gem" { 165 } else { 105 });
        for m in &desk.maps {
            assert!(m.exists(), "{}", m.display());
        }

        let paper = ExperimentConfig::load(&fixtures::experiment_path(&format!("paper-{task}"))).unwrap();
        assert_eq!(paper.maps.len(), 10);
        assert_eq!(paper.hyperparams.total_steps, 10_000_000);
        assert_eq!(paper.hyperparams.eval_every, 10_000);
        assert_eq!(paper.hyperparams.episode_cap, 1000);
        assert_eq!((paper.hyperparams.alpha, paper.hyperparams.gamma, paper.hyperparams.epsilon), (0.95, 1.0, 0.1));
    }
}

/// Every reward machine of every task reaches its goal state along each of
/// the plans it was built from.
#[test]
fn every_rm_accepts_its_plans() {
    for name in fixtures::DOMAINS {
        let task = fixtures::task(name).unwrap();
        let plans = enumerate_pops(&task, 1).unwrap();
        let seqs = plans.sequential_plans();
        for kind in all_kinds(&plans) {
            let rm = build_rm(&task, &plans, kind).unwrap();
            let accepted: Vec<&SequentialPlan> = match kind {
                RmKind::Mprm => seqs.iter().collect(),
                RmKind::Pop(i) => {
                    let lins = linearisations(&plans.plans()[i]).unwrap();
                    seqs.iter().filter(|s| lins.contains(s)).collect()
                }
                RmKind::Seq(j) => vec![&seqs[j]],
            };
            for plan in accepted {
                let mut u = rm.initial();
                for &a in plan {
                    u = rm.delta(u, &ObservationLabel::of_action(&task.domain, a));
                }
                assert_eq!(u, rm.goal_state(), "{name} {kind}");
            }
        }
    }
}

fn walk(actions: &[usize]) -> (Vec<(Coord, RmStateId)>, f64) {
    let task = fixtures::task("gold").unwrap();
    let map = fixtures::map("gold-7").unwrap();
    let world = CraftWorld::new(Arc::new(map), task.domain.clone());
    let rm = build_mprm(&enumerate_pops(&task, 1).unwrap(), &task);
    let mut s = world.reset_at((3, 2)).unwrap();
    let mut u = rm.initial();
    let mut ret = 0.0;
    let mut out = Vec::new();
    for &a in actions {
        if u == rm.goal_state() {
            break;
        }
        let next = world.step(&s, EnvAction::ALL[a]);
        let l = signed_delta(label(&s), label(&next));
        let (v, r) = rm.step(u, &l).unwrap();
        ret += r;
        s = next;
        u = v;
        out.push((s.agent, u));
    }
    (out, ret)
}

proptest! {
    /// Rewards along any walk are -1 per step except a final 0 on reaching the goal.
    #[test]
    fn walk_rewards(actions in proptest::collection::vec(0usize..4, 0..200)) {
        let (trace, ret) = walk(&actions);
        let n = trace.len() as f64;
        let task = fixtures::task("gold").unwrap();
        let goal = build_mprm(&enumerate_pops(&task, 1).unwrap(), &task).goal_state();
        let hit = trace.last().map(|&(_, u)| u == goal).unwrap_or(false);
        prop_assert_eq!(ret, if hit { -(n - 1.0) } else { -n });
    }

    /// The same walk always produces the same trace.
    #[test]
    fn walks_are_deterministic(actions in proptest::collection::vec(0usize..4, 0..100)) {
        prop_assert_eq!(walk(&actions), walk(&actions));
    }
}
