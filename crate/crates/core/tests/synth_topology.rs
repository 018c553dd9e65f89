use occluplan::occlusion::{synth_map, MapKind, MapSpec};
use occluplan::skeleton::{count_branches, extract_graph, road_mask, thin_zhang, NodeKind};

fn graph_of(kind: MapKind, seed: u64) -> occluplan::skeleton::SkeletonGraph {
    let g = synth_map(&MapSpec::new(kind, seed), 256, 256).unwrap();
    extract_graph(&thin_zhang(&road_mask(&g, 5, 2).unwrap())).unwrap()
}

#[test]
fn t_junction_has_one_degree_three_junction() {
    for seed in 0..10 {
        let g = graph_of(MapKind::TJunction, seed);
        let junctions: Vec<_> = g.junctions().collect();
        assert_eq!(junctions.len(), 1, "seed {seed}");
        assert_eq!(g.degree(junctions[0].id), 3, "seed {seed}");
    }
}

#[test]
fn other_topologies() {
    for seed in 0..5 {
        let x = graph_of(MapKind::XJunction, seed);
        assert_eq!(x.junctions().count(), 1);
        assert_eq!(count_branches(&x), 4);

        for kind in [MapKind::Straight, MapKind::LTurn] {
            let g = graph_of(kind, seed);
            assert_eq!(g.junctions().count(), 0);
            assert_eq!(g.nodes.iter().filter(|n| n.kind == NodeKind::Endpoint).count(), 2);
            assert_eq!(count_branches(&g), 1);
        }
    }
}
