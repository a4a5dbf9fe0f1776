#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use cotnav::episodes::{sample_episodes, Episode};
use cotnav::geom::Cell;
use cotnav::world::{generate_scene, CategoryVocab, CooccurrencePriors, Scene};

pub fn vocab() -> CategoryVocab {
    CategoryVocab::default()
}

pub fn priors() -> Arc<CooccurrencePriors> {
    Arc::new(CooccurrencePriors::default())
}

pub fn scene(seed: u64) -> Arc<Scene> {
    Arc::new(generate_scene(seed, 16, 16, 4, &vocab(), &priors()).unwrap())
}

pub fn episodes(scene: &Scene, count: usize, seed: u64) -> Vec<Episode> {
    let cats: Vec<String> = vocab().object_categories.iter().filter(|c| scene.has_category(c)).cloned().collect();
    sample_episodes(scene, &cats, count, seed).unwrap()
}

/// Plain 4-connected BFS hop counts over floor cells, written without the
/// library's grid helpers.
pub fn bfs(scene: &Scene, from: Cell) -> HashMap<Cell, u32> {
    let mut dist = HashMap::from([(from, 0u32)]);
    let mut q = VecDeque::from([from]);
    while let Some(c) = q.pop_front() {
        let d = dist[&c];
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = Cell::new(c.x + dx, c.y + dy);
            if scene.is_floor(n) && !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                q.push_back(n);
            }
        }
    }
    dist
}

/// Hops from `from` to the nearest floor cell within `radius` hops of any
/// instance of `category`.
pub fn oracle_geodesic_hops(scene: &Scene, from: Cell, category: &str, radius: u32) -> Option<u32> {
    let from_start = bfs(scene, from);
    scene
        .objects
        .iter()
        .filter(|o| o.category == category)
        .flat_map(|o| bfs(scene, o.cell).into_iter().filter(|&(_, d)| d <= radius).map(|(c, _)| c).collect::<Vec<_>>())
        .filter_map(|c| from_start.get(&c).copied())
        .min()
}
