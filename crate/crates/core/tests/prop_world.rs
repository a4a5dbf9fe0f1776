mod common;

use std::collections::BTreeMap;

use cotnav::world::{deserialize_scene, generate_scene, serialize_scene, CellKind, RoomType};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generation_is_deterministic(seed in any::<u64>(), w in 8usize..24, h in 8usize..24, rooms in 1usize..5) {
        let (v, p) = (common::vocab(), common::priors());
        match generate_scene(seed, w, h, rooms, &v, &p) {
            Ok(a) => prop_assert_eq!(a, generate_scene(seed, w, h, rooms, &v, &p).unwrap()),
            Err(_) => prop_assert!(generate_scene(seed, w, h, rooms, &v, &p).is_err()),
        }
    }

    #[test]
    fn floor_is_one_component(seed in any::<u64>()) {
        let s = common::scene(seed);
        let floor: Vec<_> = s.floor_cells().collect();
        let reached = common::bfs(&s, floor[0]);
        prop_assert_eq!(reached.len(), floor.len());
    }

    #[test]
    fn objects_sit_in_exactly_one_room(seed in any::<u64>()) {
        let s = common::scene(seed);
        for o in &s.objects {
            prop_assert!(s.is_floor(o.cell));
            prop_assert_eq!(s.rooms.iter().filter(|r| r.contains(o.cell)).count(), 1);
        }
        for (i, a) in s.rooms.iter().enumerate() {
            for b in &s.rooms[i + 1..] {
                prop_assert!(a.cells().all(|c| !b.contains(c)));
            }
        }
        // Room interiors are floor; everything else on the floor is a door.
        for c in s.floor_cells() {
            let in_rooms = s.rooms.iter().filter(|r| r.contains(c)).count();
            prop_assert!(in_rooms == 1 || s.doors.contains(&c));
        }
        for r in &s.rooms {
            prop_assert!(r.cells().all(|c| s.cells[s.size.index(c)] == CellKind::Floor));
        }
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>()) {
        let s = common::scene(seed);
        let bytes = serialize_scene(&s).unwrap();
        let back = deserialize_scene(&bytes).unwrap();
        prop_assert_eq!(&back, &*s);
        prop_assert_eq!(serialize_scene(&back).unwrap(), bytes);
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

#[test]
fn placement_frequency_tracks_room_priors() {
    let (v, p) = (common::vocab(), common::priors());
    let mut counts: BTreeMap<(String, RoomType), f64> = BTreeMap::new();
    for seed in 0..120 {
        let s = generate_scene(seed, 16, 16, 4, &v, &p).unwrap();
        for o in &s.objects {
            *counts.entry((o.category.clone(), s.room_type_at(o.cell))).or_default() += 1.0;
        }
    }
    let (mut freq, mut prior) = (Vec::new(), Vec::new());
    for c in &v.object_categories {
        for room in RoomType::ALL.into_iter().filter(|r| *r != RoomType::Unknown) {
            freq.push(counts.get(&(c.clone(), room)).copied().unwrap_or(0.0));
            prior.push(p.room_prior(c, room).unwrap());
        }
    }
    let rho = pearson(&ranks(&freq), &ranks(&prior));
    assert!(rho > 0.0, "spearman rho {rho}");
}
