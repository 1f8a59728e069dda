use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, HashMap};

fn unit_tree(alpha: usize, m: usize) -> MTree {
    MTree::new(Rect::unit(), SplitConfig::new(alpha, m).unwrap())
}

fn brute(objects: &HashMap<ObjectId, Point>, c: &Circle) -> BTreeSet<ObjectId> {
    objects.iter().filter(|(_, p)| c.contains(p)).map(|(o, _)| *o).collect()
}

fn sorted(v: Vec<ObjectId>) -> BTreeSet<ObjectId> {
    let n = v.len();
    let s: BTreeSet<_> = v.into_iter().collect();
    assert_eq!(s.len(), n, "duplicate ids in result");
    s
}

/// Centre of sub-cell `(r, c)` of a 3x3 split of `b`.
fn sub_center(b: &Rect, r: usize, c: usize) -> Point {
    Point::new(
        b.x_lo + b.width() * (c as f64 + 0.5) / 3.0,
        b.y_lo + b.height() * (r as f64 + 0.5) / 3.0,
    )
}

#[test]
fn factors_follow_largest_divisor_rule() {
    let f = |m| SplitConfig::new(20, m).unwrap().factors();
    assert_eq!(f(2), (1, 2));
    assert_eq!(f(4), (2, 2));
    assert_eq!(f(6), (2, 3));
    assert_eq!(f(9), (3, 3));
    assert_eq!(f(16), (4, 4));
    assert_eq!(f(7), (1, 7));
    assert!(SplitConfig::new(1, 4).is_err());
    assert!(SplitConfig::new(4, 1).is_err());
}

#[test]
fn beta_is_compared_without_fractions() {
    let cfg = SplitConfig::new(5, 9).unwrap();
    assert!(cfg.below_beta(0));
    assert!(!cfg.below_beta(1));
    let cfg = SplitConfig::new(20, 6).unwrap();
    assert!(cfg.below_beta(3));
    assert!(!cfg.below_beta(4));
}

#[test]
fn single_insert_stays_in_root_leaf() {
    let mut t = unit_tree(5, 9);
    t.insert_object(ObjectId(1), Point::new(0.3, 0.3)).unwrap();
    let root = t.node(t.root());
    assert!(root.is_leaf());
    assert_eq!(root.objects(), &[(ObjectId(1), Point::new(0.3, 0.3))]);
    t.check_invariants().unwrap();
}

#[test]
fn fifth_insert_splits_root_into_nine() {
    let mut t = unit_tree(5, 9);
    let sub = Rect::new(0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0);
    for i in 0..4 {
        t.insert_object(ObjectId(i), sub_center(&sub, i as usize % 3, i as usize / 3)).unwrap();
        assert!(t.node(t.root()).is_leaf());
    }
    t.insert_object(ObjectId(4), sub_center(&sub, 2, 2)).unwrap();
    let root = t.node(t.root());
    assert_eq!(root.children().len(), 9);
    assert_eq!(root.layout(), (3, 3));
    // all five sat in the first ninth, which had to split again
    let first = t.node(root.children().start);
    assert_eq!(first.children().len(), 9);
    t.check_invariants().unwrap();
}

#[test]
fn colocated_objects_stop_at_depth_cap() {
    let mut t = unit_tree(5, 9);
    let p = Point::new(0.42, 0.17);
    for i in 0..5 {
        t.insert_object(ObjectId(i), p).unwrap();
    }
    let leaf = t.node(t.leaf_for(&p));
    assert_eq!(leaf.depth(), MAX_DEPTH);
    assert_eq!(leaf.objects().len(), 5);
    t.check_invariants().unwrap();
}

#[test]
fn insert_errors() {
    let mut t = MTree::new(Rect::new(0.0, 0.0, 0.5, 0.5), SplitConfig::default());
    assert_eq!(
        t.insert_object(ObjectId(1), Point::new(0.6, 0.1)),
        Err(TreeError::OutOfBounds(Point::new(0.6, 0.1)))
    );
    t.insert_object(ObjectId(1), Point::new(0.1, 0.1)).unwrap();
    assert_eq!(
        t.insert_object(ObjectId(1), Point::new(0.2, 0.1)),
        Err(TreeError::DuplicateObject(ObjectId(1)))
    );
    assert_eq!(t.remove_object(ObjectId(9), Point::new(0.1, 0.1)), Err(TreeError::NotFound(ObjectId(9))));
    // present, but not where the caller says
    t.insert_object(ObjectId(2), Point::new(0.4, 0.4)).unwrap();
    for i in 3..40 {
        t.insert_object(ObjectId(i), Point::new(0.01 * (i as f64 % 10.0), 0.01 * (i / 10) as f64)).unwrap();
    }
    assert_eq!(t.remove_object(ObjectId(2), Point::new(0.05, 0.05)), Err(TreeError::NotFound(ObjectId(2))));
}

#[test]
fn removing_last_object_of_group_merges() {
    let mut t = unit_tree(5, 9);
    let pts: Vec<Point> = (0..5).map(|i| sub_center(&Rect::unit(), i / 3, i % 3)).collect();
    for (i, p) in pts.iter().enumerate() {
        t.insert_object(ObjectId(i as u64), *p).unwrap();
    }
    assert_eq!(t.node(t.root()).children().len(), 9);
    // sum 4, 3, 2, 1: sum * 9 >= 5, so the split stays
    for i in 0..4 {
        t.remove_object(ObjectId(i), pts[i as usize]).unwrap();
        assert_eq!(t.node(t.root()).children().len(), 9, "after removing {i}");
    }
    t.remove_object(ObjectId(4), pts[4]).unwrap();
    let root = t.node(t.root());
    assert!(root.is_leaf());
    assert!(root.objects().is_empty());
    assert_eq!(t.node_count(), 1);
    t.check_invariants().unwrap();
}

#[test]
fn removal_above_beta_keeps_structure() {
    let mut t = unit_tree(20, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<Point> = (0..30).map(|_| Point::new(rng.gen(), rng.gen())).collect();
    for (i, p) in pts.iter().enumerate() {
        t.insert_object(ObjectId(i as u64), *p).unwrap();
    }
    let before: Vec<_> = t.node_ids().collect();
    t.remove_object(ObjectId(0), pts[0]).unwrap();
    // 29 * 4 >= 20
    let after: Vec<_> = t.node_ids().collect();
    assert_eq!(before, after);
    t.check_invariants().unwrap();
}

#[test]
fn removal_from_root_leaf_leaves_empty_leaf() {
    let mut t = unit_tree(5, 4);
    t.insert_object(ObjectId(1), Point::new(0.5, 0.5)).unwrap();
    t.remove_object(ObjectId(1), Point::new(0.5, 0.5)).unwrap();
    assert!(t.node(t.root()).is_leaf());
    assert!(t.is_empty());
}

#[test]
fn query_covering_root_is_listed_only_at_root() {
    let mut t = unit_tree(5, 9);
    for i in 0..20 {
        t.insert_object(ObjectId(i), Point::new(0.05 * i as f64, 0.5)).unwrap();
    }
    t.insert_query(QueryId(1), Circle::new(Point::new(0.5, 0.5), 0.8)).unwrap();
    for id in t.node_ids() {
        let listed = t.node(id).query_list().contains(&QueryId(1));
        assert_eq!(listed, id == t.root());
    }
}

#[test]
fn disjoint_query_is_rejected() {
    let mut t = MTree::new(Rect::new(0.0, 0.0, 0.1, 0.1), SplitConfig::default());
    assert_eq!(
        t.insert_query(QueryId(3), Circle::new(Point::new(0.5, 0.5), 0.1)),
        Err(TreeError::NoIntersection(QueryId(3)))
    );
}

/// A structure shaped like the worked 9-ary example: the root split, one
/// child (`a`) split and fully covered, and a sibling (`b`) split with four
/// fully covered and four partially intersected leaves.
#[test]
fn worked_example_placement() {
    let mut t = unit_tree(5, 9);
    let third = 1.0 / 3.0;
    let a = Rect::new(0.0, 0.0, third, third);
    let b = Rect::new(third, 0.0, 2.0 * third, third);
    let mut id = 0;
    for rect in [a, b] {
        for k in 0..5 {
            t.insert_object(ObjectId(id), sub_center(&rect, k / 3, k % 3)).unwrap();
            id += 1;
        }
    }
    let root = t.node(t.root());
    let (na, nb) = (root.children().start, root.children().start + 1);
    assert_eq!(t.node(na).children().len(), 9);
    assert_eq!(t.node(nb).children().len(), 9);

    let q = Circle::new(Point::new(0.1227, 0.1079), 0.4476);
    t.insert_query(QueryId(1), q).unwrap();
    t.check_invariants().unwrap();

    let holders: BTreeSet<NodeId> = t.node_ids().filter(|n| t.node(*n).query_list().contains(&QueryId(1))).collect();
    let full_inner: Vec<_> = holders.iter().filter(|n| !t.node(**n).is_leaf()).collect();
    assert_eq!(full_inner, vec![&na]);
    let under_b = |n: &NodeId| t.node(*n).parent() == Some(nb);
    let full_b = holders.iter().filter(|n| under_b(n) && classify(&q, t.node(**n).bounds()) == Coverage::Full).count();
    let part_b = holders.iter().filter(|n| under_b(n) && classify(&q, t.node(**n).bounds()) == Coverage::Partial).count();
    let part_top = holders.iter().filter(|n| t.node(**n).is_leaf() && t.node(**n).parent() == Some(t.root())).count();
    assert_eq!((full_b, part_b, part_top), (4, 4, 2));
    // nothing below the fully covered inner node
    assert!(t.node(na).children().all(|c| t.node(c).query_list().is_empty()));
}

#[test]
fn corner_touching_query_lands_on_one_leaf() {
    let mut t = unit_tree(5, 4);
    for i in 0..5 {
        t.insert_object(ObjectId(i), Point::new(0.1 + 0.2 * i as f64, 0.1 + 0.2 * i as f64)).unwrap();
    }
    let q = Circle::new(Point::new(0.02, 0.02), 0.01);
    t.insert_query(QueryId(7), q).unwrap();
    let holders: Vec<NodeId> = t.node_ids().filter(|n| t.node(*n).query_list().contains(&QueryId(7))).collect();
    let expected: Vec<NodeId> = t
        .node_ids()
        .filter(|n| t.node(*n).is_leaf() && classify(&q, t.node(*n).bounds()).intersects())
        .collect();
    assert_eq!(holders.len(), 1);
    assert_eq!(holders, expected);
}

#[test]
fn remove_query_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut t = unit_tree(6, 4);
    for i in 0..200 {
        t.insert_object(ObjectId(i), Point::new(rng.gen(), rng.gen())).unwrap();
    }
    let snapshot = |t: &MTree| -> Vec<(NodeId, Vec<QueryId>)> {
        t.node_ids()
            .map(|n| {
                let mut ql = t.node(n).query_list().to_vec();
                ql.sort();
                (n, ql)
            })
            .collect()
    };
    let empty = snapshot(&t);
    t.insert_query(QueryId(1), Circle::new(Point::new(0.4, 0.4), 0.3)).unwrap();
    let only_one = snapshot(&t);
    t.insert_query(QueryId(2), Circle::new(Point::new(0.6, 0.5), 0.2)).unwrap();
    t.remove_query(QueryId(2));
    assert_eq!(snapshot(&t), only_one);
    t.remove_query(QueryId(1));
    assert_eq!(snapshot(&t), empty);
    t.remove_query(QueryId(99));
    assert_eq!(snapshot(&t), empty);
}

#[test]
fn split_and_merge_keep_query_placement() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = unit_tree(4, 4);
    t.insert_query(QueryId(1), Circle::new(Point::new(0.3, 0.3), 0.25)).unwrap();
    t.insert_query(QueryId(2), Circle::new(Point::new(0.7, 0.6), 0.1)).unwrap();
    let mut pts = Vec::new();
    for i in 0..300 {
        let p = Point::new(rng.gen(), rng.gen());
        t.insert_object(ObjectId(i), p).unwrap();
        pts.push(p);
        t.check_invariants().unwrap();
    }
    for (i, p) in pts.iter().enumerate() {
        t.remove_object(ObjectId(i as u64), *p).unwrap();
        t.check_invariants().unwrap();
    }
    assert_eq!(t.node_count(), 1);
}

#[test]
fn search_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut t = unit_tree(8, 6);
    let mut objects = HashMap::new();
    for i in 0..1000 {
        let p = Point::new(rng.gen(), rng.gen());
        t.insert_object(ObjectId(i), p).unwrap();
        objects.insert(ObjectId(i), p);
    }
    let mut bgi = Bgi::new();
    for k in 0..1000 {
        let c = Circle::new(Point::new(rng.gen(), rng.gen()), rng.gen_range(0.001..0.4));
        let expected = brute(&objects, &c);
        let mut stats = SearchStats::default();
        assert_eq!(sorted(t.search_range(&c, &mut stats)), expected);
        assert_eq!(sorted(t.search_range_shared(QueryId(k), &c, &mut bgi, &mut stats)), expected);
    }
    assert!(bgi.check_references().is_ok());
}

#[test]
fn empty_and_covering_searches() {
    let t = unit_tree(5, 4);
    let mut s = SearchStats::default();
    assert!(t.search_range(&Circle::new(Point::new(0.5, 0.5), 1.0), &mut s).is_empty());
    assert!(t.collect_all().is_empty());

    let mut t = unit_tree(5, 4);
    for i in 0..50 {
        t.insert_object(ObjectId(i), Point::new((i as f64) / 50.0, 0.3)).unwrap();
    }
    let all = sorted(t.search_range(&Circle::new(Point::new(0.5, 0.5), 0.75), &mut s));
    assert_eq!(all.len(), 50);
    assert_eq!(sorted(t.collect_all()), all);
}

#[test]
fn collect_all_equals_union_of_leaves() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut t = unit_tree(5, 9);
    for i in 0..400 {
        t.insert_object(ObjectId(i), Point::new(rng.gen(), rng.gen::<f64>().powi(3))).unwrap();
    }
    let leaves: BTreeSet<ObjectId> = t
        .node_ids()
        .filter(|n| t.node(*n).is_leaf())
        .flat_map(|n| t.node(n).objects().iter().map(|(o, _)| *o).collect::<Vec<_>>())
        .collect();
    assert_eq!(sorted(t.collect_all()), leaves);
    assert_eq!(leaves.len(), 400);
}

#[test]
fn second_identical_query_reuses_cached_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = unit_tree(5, 9);
    for i in 0..2000 {
        t.insert_object(ObjectId(i), Point::new(rng.gen(), rng.gen())).unwrap();
    }
    let c = Circle::new(Point::new(0.45, 0.5), 0.3);
    let mut bgi = Bgi::new();
    let mut first = SearchStats::default();
    let r1 = sorted(t.search_range_shared(QueryId(1), &c, &mut bgi, &mut first));
    assert!(first.leaf_descents > 0);
    assert_eq!(first.cache_hits, 0);

    let mut second = SearchStats::default();
    let r2 = sorted(t.search_range_shared(QueryId(2), &c, &mut bgi, &mut second));
    assert_eq!(r1, r2);
    assert_eq!(second.leaf_descents, 0);
    assert_eq!(second.cache_hits as usize, bgi.nodes_of(QueryId(1)).len());
    assert_eq!(bgi.nodes_of(QueryId(1)), bgi.nodes_of(QueryId(2)));
    assert_eq!(bgi.queries().len(), 2);
}

#[test]
fn empty_bgi_search_populates_cache() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut t = unit_tree(5, 4);
    for i in 0..500 {
        t.insert_object(ObjectId(i), Point::new(rng.gen(), rng.gen())).unwrap();
    }
    let c = Circle::new(Point::new(0.5, 0.5), 0.35);
    let mut bgi = Bgi::new();
    let mut s = SearchStats::default();
    let shared = sorted(t.search_range_shared(QueryId(1), &c, &mut bgi, &mut s));
    assert_eq!(shared, sorted(t.search_range(&c, &mut s)));
    assert!(bgi.cached_sets() > 0);
    assert!(!bgi.nodes_of(QueryId(1)).is_empty());
}

#[test]
fn mutation_under_cached_node_invalidates_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut t = unit_tree(5, 4);
    let mut objects = HashMap::new();
    for i in 0..500 {
        let p = Point::new(rng.gen(), rng.gen());
        t.insert_object(ObjectId(i), p).unwrap();
        objects.insert(ObjectId(i), p);
    }
    let c = Circle::new(Point::new(0.5, 0.5), 0.35);
    let mut bgi = Bgi::new();
    let mut s = SearchStats::default();
    t.search_range_shared(QueryId(1), &c, &mut bgi, &mut s);
    let p = Point::new(0.5, 0.5);
    t.insert_object(ObjectId(10_000), p).unwrap();
    objects.insert(ObjectId(10_000), p);
    let mut s2 = SearchStats::default();
    let r = sorted(t.search_range_shared(QueryId(1), &c, &mut bgi, &mut s2));
    assert!(r.contains(&ObjectId(10_000)));
    assert_eq!(r, brute(&objects, &c));
}

#[test]
fn difference_search_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut t = unit_tree(6, 6);
    let mut objects = HashMap::new();
    for i in 0..800 {
        let p = Point::new(rng.gen(), rng.gen());
        t.insert_object(ObjectId(i), p).unwrap();
        objects.insert(ObjectId(i), p);
    }
    let all: BTreeSet<_> = objects.keys().copied().collect();
    for _ in 0..300 {
        let a = Circle::new(Point::new(rng.gen(), rng.gen()), rng.gen_range(0.01..0.3));
        let b = Circle::new(Point::new(rng.gen(), rng.gen()), rng.gen_range(0.01..0.3));
        let (ia, ib) = (brute(&objects, &a), brute(&objects, &b));
        let mut s = SearchStats::default();
        let (rem, add) = t.search_difference(Region::Circle(&a), Region::Circle(&b), &mut s);
        assert_eq!(sorted(rem), ia.difference(&ib).copied().collect());
        assert_eq!(sorted(add), ib.difference(&ia).copied().collect());
        let (rem, add) = t.search_difference(Region::Everything, Region::Circle(&b), &mut s);
        assert_eq!(sorted(rem), all.difference(&ib).copied().collect());
        assert!(add.is_empty());
        let (rem, add) = t.search_difference(Region::Circle(&a), Region::Everything, &mut s);
        assert!(rem.is_empty());
        assert_eq!(sorted(add), all.difference(&ia).copied().collect());
    }
}

#[test]
fn queries_at_reads_path_lists() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut t = unit_tree(5, 4);
    for i in 0..300 {
        t.insert_object(ObjectId(i), Point::new(rng.gen(), rng.gen())).unwrap();
    }
    let circles: Vec<Circle> = (0..30)
        .map(|_| Circle::new(Point::new(rng.gen(), rng.gen()), rng.gen_range(0.02..0.4)))
        .collect();
    for (i, c) in circles.iter().enumerate() {
        t.insert_query(QueryId(i as u64), *c).unwrap();
    }
    for _ in 0..500 {
        let p = Point::new(rng.gen(), rng.gen());
        let mut got = t.queries_at(&p, &mut SearchStats::default());
        got.sort();
        let want: Vec<QueryId> = (0..30).filter(|i| circles[*i].contains(&p)).map(|i| QueryId(i as u64)).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn random_fuzz_preserves_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for (alpha, m) in [(5, 9), (4, 2), (8, 6), (20, 16)] {
        let mut t = unit_tree(alpha, m);
        let mut objects: HashMap<ObjectId, Point> = HashMap::new();
        let mut next = 0u64;
        for step in 0..2_000 {
            match rng.gen_range(0..10) {
                0..=4 => {
                    // clustered inserts exercise deep splits
                    let p = if rng.gen_bool(0.5) {
                        Point::new(rng.gen_range(0.2..0.21), rng.gen_range(0.7..0.71))
                    } else {
                        Point::new(rng.gen(), rng.gen())
                    };
                    t.insert_object(ObjectId(next), p).unwrap();
                    objects.insert(ObjectId(next), p);
                    next += 1;
                }
                5..=7 if !objects.is_empty() => {
                    let k = *objects.keys().nth(rng.gen_range(0..objects.len())).unwrap();
                    let p = objects.remove(&k).unwrap();
                    t.remove_object(k, p).unwrap();
                }
                8 if !objects.is_empty() => {
                    let k = *objects.keys().nth(rng.gen_range(0..objects.len())).unwrap();
                    let to = Point::new(rng.gen(), rng.gen());
                    t.move_object(k, objects[&k], to).unwrap();
                    objects.insert(k, to);
                }
                _ => {
                    let q = QueryId(rng.gen_range(0..10));
                    if rng.gen_bool(0.3) {
                        t.remove_query(q);
                    } else {
                        let c = Circle::new(Point::new(rng.gen(), rng.gen()), rng.gen_range(0.01..0.4));
                        t.insert_query(q, c).unwrap();
                    }
                }
            }
            if step % 50 == 0 {
                t.check_invariants().unwrap_or_else(|e| panic!("alpha={alpha} m={m} step={step}: {e}"));
            }
        }
        t.check_invariants().unwrap();
        assert_eq!(t.len(), objects.len());
    }
}
