//! Scenes: typed rooms, walls and category-labelled objects on a cell grid.

mod generate;
mod priors;

pub use generate::{generate_scene, room_capacity, MIN_ROOM_SIDE};
pub use priors::{load_priors, CooccurrencePriors};

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{bfs_field, Cell, GridSize};

pub const SCENE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CELL_SIZE_M: f64 = 0.25;

/// The MP3D object-goal categories, in feature-index order.
pub const OBJECT_CATEGORIES: [&str; 21] = [
    "chair",
    "table",
    "picture",
    "cabinet",
    "cushion",
    "sofa",
    "bed",
    "chest_of_drawers",
    "plant",
    "sink",
    "toilet",
    "stool",
    "towel",
    "tv_monitor",
    "shower",
    "bathtub",
    "counter",
    "fireplace",
    "gym_equipment",
    "seating",
    "clothes",
];

/// Categories held out for the object-generalization protocol.
pub const UNSEEN_CATEGORIES: [&str; 5] = ["counter", "bed", "toilet", "chest_of_drawers", "plant"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    LivingRoom,
    Kitchen,
    Bedroom,
    Bathroom,
    DiningRoom,
    Hallway,
    Office,
    Unknown,
}

impl RoomType {
    pub const COUNT: usize = 8;
    pub const ALL: [RoomType; 8] = [
        RoomType::LivingRoom,
        RoomType::Kitchen,
        RoomType::Bedroom,
        RoomType::Bathroom,
        RoomType::DiningRoom,
        RoomType::Hallway,
        RoomType::Office,
        RoomType::Unknown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RoomType::LivingRoom => "living_room",
            RoomType::Kitchen => "kitchen",
            RoomType::Bedroom => "bedroom",
            RoomType::Bathroom => "bathroom",
            RoomType::DiningRoom => "dining_room",
            RoomType::Hallway => "hallway",
            RoomType::Office => "office",
            RoomType::Unknown => "unknown",
        }
    }

    /// Room display name used in annotation text ("living room").
    pub fn phrase(self) -> String {
        self.name().replace('_', " ")
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoomType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoomType::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Vocabulary(format!("room type `{s}`")))
    }
}

/// Ordered object-category and room-type vocabulary. Feature indices depend
/// on the order, so it is fixed for the lifetime of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocab {
    pub object_categories: Vec<String>,
    pub room_types: Vec<RoomType>,
}

impl Default for CategoryVocab {
    fn default() -> Self {
        CategoryVocab {
            object_categories: OBJECT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            room_types: RoomType::ALL.to_vec(),
        }
    }
}

impl CategoryVocab {
    pub fn new(object_categories: Vec<String>) -> Result<Self> {
        let vocab = CategoryVocab {
            object_categories,
            room_types: RoomType::ALL.to_vec(),
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.object_categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::Validation(format!("duplicate category `{c}`")));
            }
        }
        if self.room_types != RoomType::ALL {
            return Err(Error::Validation("room types must be the fixed 8-type list".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.object_categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.object_categories.is_empty()
    }

    pub fn index_of(&self, category: &str) -> Result<usize> {
        self.object_categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| Error::Vocabulary(format!("category `{category}`")))
    }

    pub fn contains(&self, category: &str) -> bool {
        self.object_categories.iter().any(|c| c == category)
    }

    /// Short stable fingerprint of the vocabulary, stored in model files.
    pub fn fingerprint(&self) -> String {
        crate::artifact::sha256_hex(self.object_categories.join("\n").as_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Floor,
    Wall,
}

/// Axis-aligned room rectangle, bounds inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub room_type: RoomType,
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Room {
    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.x0 && c.x <= self.x1 && c.y >= self.y0 && c.y <= self.y1
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| Cell::new(x, y)))
    }

    fn overlaps(&self, other: &Room) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub instance_id: u32,
    pub category: String,
    pub cell: Cell,
}

/// A gridworld scene. Doorway cells are floor cells punched through a
/// dividing wall; they connect rooms but belong to none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneRepr", into = "SceneRepr")]
pub struct Scene {
    pub id: String,
    pub size: GridSize,
    pub cell_size_m: f64,
    pub cells: Vec<CellKind>,
    pub rooms: Vec<Room>,
    pub doors: Vec<Cell>,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn width(&self) -> usize {
        self.size.width
    }

    pub fn height(&self) -> usize {
        self.size.height
    }

    pub fn is_floor(&self, c: Cell) -> bool {
        self.size.contains(c) && self.cells[self.size.index(c)] == CellKind::Floor
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        !self.is_floor(c)
    }

    pub fn room_index_at(&self, c: Cell) -> Option<usize> {
        if !self.is_floor(c) {
            return None;
        }
        self.rooms.iter().position(|r| r.contains(c))
    }

    /// Ground-truth room type at a cell; doorways and walls report `Unknown`.
    pub fn room_type_at(&self, c: Cell) -> RoomType {
        if self.doors.contains(&c) {
            return RoomType::Unknown;
        }
        self.room_index_at(c)
            .map(|i| self.rooms[i].room_type)
            .unwrap_or(RoomType::Unknown)
    }

    pub fn instances_of<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a SceneObject> + 'a {
        self.objects.iter().filter(move |o| o.category == category)
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.instances_of(category).next().is_some()
    }

    /// Distinct categories present, sorted by name.
    pub fn categories(&self) -> BTreeSet<String> {
        self.objects.iter().map(|o| o.category.clone()).collect()
    }

    pub fn floor_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.size.cells().filter(|&c| self.is_floor(c))
    }

    /// Hop counts from `sources` over floor cells.
    pub fn hop_field(&self, sources: &[Cell]) -> Vec<Option<u32>> {
        bfs_field(self.size, sources, |c| self.is_floor(c))
    }

    /// Single-room scene from an ASCII map: `#` wall, anything else floor.
    /// The room spans the whole grid. Intended for hand-built fixtures.
    pub fn from_ascii(id: &str, rows: &[&str], room_type: RoomType, objects: &[(&str, Cell)]) -> Result<Scene> {
        let height = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Validation("ragged ascii map".into()));
        }
        let cells = rows
            .iter()
            .flat_map(|r| r.chars().map(|ch| if ch == '#' { CellKind::Wall } else { CellKind::Floor }))
            .collect();
        let scene = Scene {
            id: id.to_string(),
            size: GridSize::new(width, height),
            cell_size_m: DEFAULT_CELL_SIZE_M,
            cells,
            rooms: vec![Room {
                room_type,
                x0: 0,
                y0: 0,
                x1: width as i32 - 1,
                y1: height as i32 - 1,
            }],
            doors: Vec::new(),
            objects: objects
                .iter()
                .enumerate()
                .map(|(i, (cat, cell))| SceneObject {
                    instance_id: i as u32,
                    category: cat.to_string(),
                    cell: *cell,
                })
                .collect(),
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Checks every structural invariant: objects on floor inside exactly
    /// one room, disjoint room extents covering all non-door floor, and a
    /// single 4-connected floor component.
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.size.len() {
            return Err(Error::Validation(format!(
                "scene {}: {} cells for a {}x{} grid",
                self.id,
                self.cells.len(),
                self.size.width,
                self.size.height
            )));
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(Error::Validation(format!("scene {}: bad cell size", self.id)));
        }
        for (i, a) in self.rooms.iter().enumerate() {
            if a.x0 > a.x1 || a.y0 > a.y1 || !self.size.contains(Cell::new(a.x0, a.y0)) || !self.size.contains(Cell::new(a.x1, a.y1)) {
                return Err(Error::Validation(format!("scene {}: room {i} out of bounds", self.id)));
            }
            if self.rooms[..i].iter().any(|b| a.overlaps(b)) {
                return Err(Error::Validation(format!("scene {}: room {i} overlaps another room", self.id)));
            }
        }
        for d in &self.doors {
            if !self.is_floor(*d) {
                return Err(Error::Validation(format!("scene {}: doorway {d:?} is not floor", self.id)));
            }
        }
        for c in self.floor_cells() {
            let covering = self.rooms.iter().filter(|r| r.contains(c)).count();
            let door = self.doors.contains(&c);
            if (door && covering != 0) || (!door && covering != 1) {
                return Err(Error::Validation(format!(
                    "scene {}: floor cell ({}, {}) lies in {covering} rooms",
                    self.id, c.x, c.y
                )));
            }
        }
        let mut ids = HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.instance_id) {
                return Err(Error::Validation(format!("scene {}: duplicate instance id {}", self.id, o.instance_id)));
            }
            if !self.is_floor(o.cell) {
                return Err(Error::Validation(format!(
                    "scene {}: object {} ({}) sits on a wall cell",
                    self.id, o.instance_id, o.category
                )));
            }
            if self.room_index_at(o.cell).is_none() || self.doors.contains(&o.cell) {
                return Err(Error::Validation(format!(
                    "scene {}: object {} ({}) is not inside a room",
                    self.id, o.instance_id, o.category
                )));
            }
        }
        let floor: Vec<Cell> = self.floor_cells().collect();
        if let Some(&first) = floor.first() {
            let field = self.hop_field(&[first]);
            if floor.iter().any(|&c| field[self.size.index(c)].is_none()) {
                return Err(Error::Validation(format!("scene {}: floor is not connected", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SceneRepr {
    id: String,
    width: usize,
    height: usize,
    cell_size_m: f64,
    /// One string per row: `#` wall, `.` floor.
    grid: Vec<String>,
    rooms: Vec<Room>,
    doors: Vec<Cell>,
    objects: Vec<SceneObject>,
}

impl From<Scene> for SceneRepr {
    fn from(s: Scene) -> Self {
        let grid = s
            .cells
            .chunks(s.size.width.max(1))
            .map(|row| row.iter().map(|k| if *k == CellKind::Wall { '#' } else { '.' }).collect())
            .collect();
        SceneRepr {
            id: s.id,
            width: s.size.width,
            height: s.size.height,
            cell_size_m: s.cell_size_m,
            grid,
            rooms: s.rooms,
            doors: s.doors,
            objects: s.objects,
        }
    }
}

impl TryFrom<SceneRepr> for Scene {
    type Error = String;

    fn try_from(r: SceneRepr) -> std::result::Result<Self, String> {
        if r.grid.len() != r.height || r.grid.iter().any(|row| row.chars().count() != r.width) {
            return Err(format!("grid does not match {}x{}", r.width, r.height));
        }
        let mut cells = Vec::with_capacity(r.width * r.height);
        for row in &r.grid {
            for ch in row.chars() {
                cells.push(match ch {
                    '#' => CellKind::Wall,
                    '.' => CellKind::Floor,
                    other => return Err(format!("unexpected grid character `{other}`")),
                });
            }
        }
        Ok(Scene {
            id: r.id,
            size: GridSize::new(r.width, r.height),
            cell_size_m: r.cell_size_m,
            cells,
            rooms: r.rooms,
            doors: r.doors,
            objects: r.objects,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest_hash: Option<String>,
    scene: Scene,
}

/// Serializes a scene after checking its invariants.
pub fn serialize_scene(scene: &Scene) -> Result<Vec<u8>> {
    serialize_scene_with(scene, None)
}

pub fn serialize_scene_with(scene: &Scene, manifest_hash: Option<&str>) -> Result<Vec<u8>> {
    scene.validate()?;
    let file = SceneFile {
        format_version: SCENE_FORMAT_VERSION,
        manifest_hash: manifest_hash.map(str::to_string),
        scene: scene.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn deserialize_scene(bytes: &[u8]) -> Result<Scene> {
    let file: SceneFile = serde_json::from_slice(bytes).map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))?;
    if file.format_version != SCENE_FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported scene format_version {}",
            file.format_version
        )));
    }
    file.scene.validate()?;
    Ok(file.scene)
}
