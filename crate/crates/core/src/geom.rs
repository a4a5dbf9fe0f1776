//! Grid geometry shared by the simulator, planners and metrics.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Integer grid coordinate. `x` grows east, `y` grows south. Serialized as
/// `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl From<[i32; 2]> for Cell {
    fn from([x, y]: [i32; 2]) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Cell {
        Cell::new(self.x + dx, self.y + dy)
    }

    pub fn neighbors4(self) -> [Cell; 4] {
        Cardinal::ALL.map(|d| d.step(self))
    }

    pub fn euclidean(self, other: Cell) -> f64 {
        let dx = f64::from(other.x - self.x);
        let dy = f64::from(other.y - self.y);
        dx.hypot(dy)
    }

    /// Compass bearing in degrees of the ray `self -> other`, clockwise from
    /// north, in `[0, 360)`.
    pub fn compass_to(self, other: Cell) -> f64 {
        let dx = f64::from(other.x - self.x);
        let dy = f64::from(other.y - self.y);
        if dx == 0.0 && dy == 0.0 {
            return 0.0;
        }
        dx.atan2(-dy).to_degrees().rem_euclid(360.0)
    }
}

/// Lattice directions in clockwise order starting at north.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cardinal {
    North,
    East,
    South,
    West,
}

impl Cardinal {
    pub const ALL: [Cardinal; 4] = [Cardinal::North, Cardinal::East, Cardinal::South, Cardinal::West];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Cardinal::North => (0, -1),
            Cardinal::East => (1, 0),
            Cardinal::South => (0, 1),
            Cardinal::West => (-1, 0),
        }
    }

    pub fn step(self, c: Cell) -> Cell {
        let (dx, dy) = self.delta();
        c.offset(dx, dy)
    }

    /// Compass angle of this direction in degrees.
    pub fn degrees(self) -> f64 {
        match self {
            Cardinal::North => 0.0,
            Cardinal::East => 90.0,
            Cardinal::South => 180.0,
            Cardinal::West => 270.0,
        }
    }

    pub fn between(from: Cell, to: Cell) -> Option<Cardinal> {
        match (to.x - from.x, to.y - from.y) {
            (0, -1) => Some(Cardinal::North),
            (1, 0) => Some(Cardinal::East),
            (0, 1) => Some(Cardinal::South),
            (-1, 0) => Some(Cardinal::West),
            _ => None,
        }
    }
}

/// Signed difference `to - from` folded into `(-180, 180]`.
pub fn angle_diff(from_deg: f64, to_deg: f64) -> f64 {
    let d = (to_deg - from_deg).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Bresenham line from `a` to `b`, both endpoints included.
pub fn bresenham(a: Cell, b: Cell) -> Vec<Cell> {
    let mut out = Vec::new();
    let (mut x, mut y) = (a.x, a.y);
    let dx = (b.x - a.x).abs();
    let dy = -(b.y - a.y).abs();
    let sx = if a.x < b.x { 1 } else { -1 };
    let sy = if a.y < b.y { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        out.push(Cell::new(x, y));
        if x == b.x && y == b.y {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Rectangular grid extent used to index per-cell arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSize {
    pub width: usize,
    pub height: usize,
}

impl GridSize {
    pub fn new(width: usize, height: usize) -> Self {
        GridSize { width, height }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        debug_assert!(self.contains(c));
        c.y as usize * self.width + c.x as usize
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell(i))
    }
}

/// Multi-source 4-connected BFS. Returns hop counts per cell index; `None`
/// marks cells not reachable through `passable` cells. Sources are always
/// distance 0 even if not passable themselves.
pub fn bfs_field<F>(size: GridSize, sources: &[Cell], passable: F) -> Vec<Option<u32>>
where
    F: Fn(Cell) -> bool,
{
    let mut dist = vec![None; size.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if size.contains(s) && dist[size.index(s)].is_none() {
            dist[size.index(s)] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[size.index(c)].expect("queued cells carry a distance");
        for n in c.neighbors4() {
            if size.contains(n) && dist[size.index(n)].is_none() && passable(n) {
                dist[size.index(n)] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}
