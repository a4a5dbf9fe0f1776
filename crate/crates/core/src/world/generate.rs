//! Binary-space-partition scene generator.
//!
//! The interior of the grid is split recursively by one-cell wall lines into
//! rectangular rooms with sides of at least [`MIN_ROOM_SIDE`]. Once both
//! halves of a split are final, one doorway is punched through the dividing
//! wall, so every subtree stays connected.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CategoryVocab, CellKind, CooccurrencePriors, Room, RoomType, Scene, SceneObject, DEFAULT_CELL_SIZE_M};
use crate::error::{Error, Result};
use crate::geom::{Cell, GridSize};

pub const MIN_ROOM_SIDE: i32 = 3;

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: i32,
    y0: i32,
    x1: i32,
    y1: i32,
}

impl Rect {
    fn width(&self) -> i32 {
        self.x1 - self.x0 + 1
    }
    fn height(&self) -> i32 {
        self.y1 - self.y0 + 1
    }
}

enum Node {
    Leaf(Rect),
    Split {
        vertical: bool,
        /// Column (vertical) or row (horizontal) of the dividing wall.
        line: i32,
        rect: Rect,
        first: Box<Node>,
        second: Box<Node>,
    },
}

/// Rooms that fit along one axis of `len` interior cells.
fn per_axis(len: i32) -> i32 {
    ((len + 1) / (MIN_ROOM_SIDE + 1)).max(0)
}

/// Maximum number of rooms a `width x height` grid (outer wall included) can
/// be partitioned into.
pub fn room_capacity(width: usize, height: usize) -> usize {
    let iw = width as i32 - 2;
    let ih = height as i32 - 2;
    (per_axis(iw) * per_axis(ih)).max(0) as usize
}

fn capacity(w: i32, h: i32) -> i32 {
    per_axis(w) * per_axis(h)
}

fn partition(rect: Rect, rooms: i32, rng: &mut ChaCha8Rng) -> Node {
    if rooms == 1 {
        return Node::Leaf(rect);
    }
    // (vertical, offset of the wall from the rect origin, rooms in first half)
    let mut options: Vec<(bool, i32, i32)> = Vec::new();
    for vertical in [true, false] {
        let (len, other) = if vertical {
            (rect.width(), rect.height())
        } else {
            (rect.height(), rect.width())
        };
        for off in MIN_ROOM_SIDE..=(len - MIN_ROOM_SIDE - 1) {
            let cap_a = capacity(off, other);
            let cap_b = capacity(len - off - 1, other);
            let lo = 1.max(rooms - cap_b);
            let hi = (rooms - 1).min(cap_a);
            if lo > hi {
                continue;
            }
            // Rooms proportional to the area on each side.
            let want = ((rooms as f64) * (off as f64) / ((len - 1) as f64)).round() as i32;
            options.push((vertical, off, want.clamp(lo, hi)));
        }
    }
    assert!(!options.is_empty(), "capacity check guarantees a feasible split");
    // Prefer cutting across the longer side.
    let prefer_vertical = rect.width() >= rect.height();
    let preferred: Vec<_> = options.iter().copied().filter(|o| o.0 == prefer_vertical).collect();
    let pool = if preferred.is_empty() { &options } else { &preferred };
    // Keep cuts away from the extremes when there is room to do so.
    let len = |v: bool| if v { rect.width() } else { rect.height() };
    let central: Vec<_> = pool
        .iter()
        .copied()
        .filter(|&(v, off, _)| {
            let l = len(v);
            off * 4 >= l - 1 && off * 4 <= 3 * (l - 1)
        })
        .collect();
    let pool = if central.is_empty() { pool.clone() } else { central };
    let (vertical, off, n_first) = pool[rng.gen_range(0..pool.len())];

    let (first, second, line) = if vertical {
        let line = rect.x0 + off;
        (Rect { x1: line - 1, ..rect }, Rect { x0: line + 1, ..rect }, line)
    } else {
        let line = rect.y0 + off;
        (Rect { y1: line - 1, ..rect }, Rect { y0: line + 1, ..rect }, line)
    };
    Node::Split {
        vertical,
        line,
        rect,
        first: Box::new(partition(first, n_first, rng)),
        second: Box::new(partition(second, rooms - n_first, rng)),
    }
}

fn carve(node: &Node, size: GridSize, cells: &mut [CellKind], leaves: &mut Vec<Rect>) {
    match node {
        Node::Leaf(r) => {
            for y in r.y0..=r.y1 {
                for x in r.x0..=r.x1 {
                    cells[size.index(Cell::new(x, y))] = CellKind::Floor;
                }
            }
            leaves.push(*r);
        }
        Node::Split { first, second, .. } => {
            carve(first, size, cells, leaves);
            carve(second, size, cells, leaves);
        }
    }
}

/// Post-order doorway placement: children are final before their parent's
/// dividing wall is opened.
fn punch_doors(node: &Node, size: GridSize, cells: &mut [CellKind], doors: &mut Vec<Cell>, rng: &mut ChaCha8Rng) -> Result<()> {
    if let Node::Split {
        vertical,
        line,
        rect,
        first,
        second,
    } = node
    {
        punch_doors(first, size, cells, doors, rng)?;
        punch_doors(second, size, cells, doors, rng)?;
        let floor = |c: Cell, cells: &[CellKind]| cells[size.index(c)] == CellKind::Floor;
        let candidates: Vec<Cell> = if *vertical {
            (rect.y0..=rect.y1)
                .map(|y| Cell::new(*line, y))
                .filter(|c| floor(c.offset(-1, 0), cells) && floor(c.offset(1, 0), cells))
                .collect()
        } else {
            (rect.x0..=rect.x1)
                .map(|x| Cell::new(x, *line))
                .filter(|c| floor(c.offset(0, -1), cells) && floor(c.offset(0, 1), cells))
                .collect()
        };
        let door = *candidates
            .choose(rng)
            .ok_or_else(|| Error::Sizing("no doorway position along a dividing wall".into()))?;
        cells[size.index(door)] = CellKind::Floor;
        doors.push(door);
    }
    Ok(())
}

fn sample_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Generates a scene deterministically from its inputs.
///
/// Room types are drawn without replacement from the seven concrete types
/// (cycling if there are more rooms). Each room receives `1 + area / 10`
/// objects whose categories are sampled in proportion to the room's
/// `object_room` priors.
pub fn generate_scene(
    seed: u64,
    width: usize,
    height: usize,
    room_count: usize,
    vocab: &CategoryVocab,
    priors: &CooccurrencePriors,
) -> Result<Scene> {
    if width < 8 || height < 8 {
        return Err(Error::Sizing(format!("grid {width}x{height} is below the 8x8 minimum")));
    }
    if !(2..=12).contains(&room_count) {
        return Err(Error::Precondition(format!("room_count {room_count} outside 2..=12")));
    }
    let cap = room_capacity(width, height);
    if room_count > cap {
        return Err(Error::Sizing(format!(
            "{room_count} rooms cannot partition a {width}x{height} grid with minimum room side {MIN_ROOM_SIDE} (max {cap})"
        )));
    }
    priors.check_vocab(vocab)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = GridSize::new(width, height);
    let mut cells = vec![CellKind::Wall; size.len()];
    let interior = Rect {
        x0: 1,
        y0: 1,
        x1: width as i32 - 2,
        y1: height as i32 - 2,
    };
    let tree = partition(interior, room_count as i32, &mut rng);
    let mut leaves = Vec::new();
    carve(&tree, size, &mut cells, &mut leaves);
    let mut doors = Vec::new();
    punch_doors(&tree, size, &mut cells, &mut doors, &mut rng)?;

    let concrete = &RoomType::ALL[..RoomType::COUNT - 1];
    let mut types = Vec::with_capacity(leaves.len());
    while types.len() < leaves.len() {
        let mut batch = concrete.to_vec();
        batch.shuffle(&mut rng);
        types.extend(batch);
    }

    let mut rooms = Vec::with_capacity(leaves.len());
    let mut objects = Vec::new();
    for (rect, room_type) in leaves.iter().zip(types) {
        let room = Room {
            room_type,
            x0: rect.x0,
            y0: rect.y0,
            x1: rect.x1,
            y1: rect.y1,
        };
        let mut free: Vec<Cell> = room.cells().collect();
        free.shuffle(&mut rng);
        let count = (1 + free.len() / 10).min(free.len());
        let weights: Vec<f64> = priors.object_room.iter().map(|row| row[room_type.index()]).collect();
        for cell in free.into_iter().take(count) {
            let cat = sample_weighted(&weights, &mut rng);
            objects.push(SceneObject {
                instance_id: objects.len() as u32,
                category: vocab.object_categories[cat].clone(),
                cell,
            });
        }
        rooms.push(room);
    }

    let scene = Scene {
        id: format!("scene-{seed}"),
        size,
        cell_size_m: DEFAULT_CELL_SIZE_M,
        cells,
        rooms,
        doors,
        objects,
    };
    scene.validate()?;
    Ok(scene)
}
