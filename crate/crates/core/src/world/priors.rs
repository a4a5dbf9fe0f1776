//! Co-occurrence priors: P(object | room) and object-object proximity.
//!
//! File format: whitespace-separated columns, `#` comments, and two sections.
//!
//! ```text
//! [object_room]
//! category   living_room kitchen ... unknown
//! chair      0.60        0.40    ... 0.40
//!
//! [object_object]
//! category   chair table ...
//! chair      1.000 0.939 ...
//! ```
//!
//! Both sections must list the same categories in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CategoryVocab, RoomType};
use crate::error::{Error, Result};

const DEFAULT_PRIORS: &str = include_str!("../../data/priors.txt");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrencePriors {
    pub categories: Vec<String>,
    /// `object_room[c][r]`, indexed by category then `RoomType::index`.
    pub object_room: Vec<[f64; RoomType::COUNT]>,
    /// Symmetric, unit diagonal.
    pub object_object: Vec<Vec<f64>>,
}

impl Default for CooccurrencePriors {
    fn default() -> Self {
        CooccurrencePriors::parse(DEFAULT_PRIORS).expect("shipped priors table is valid")
    }
}

pub fn load_priors(path: &Path) -> Result<CooccurrencePriors> {
    let text = std::fs::read_to_string(path)?;
    CooccurrencePriors::parse(&text)
}

#[derive(PartialEq)]
enum Section {
    None,
    ObjectRoom,
    ObjectObject,
}

struct Table {
    header: Vec<String>,
    rows: Vec<(String, Vec<f64>)>,
}

impl CooccurrencePriors {
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = Section::None;
        let mut object_room: Option<Table> = None;
        let mut object_object: Option<Table> = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim_end();
            let trimmed = line.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if trimmed.starts_with('[') {
                section = match trimmed {
                    "[object_room]" => Section::ObjectRoom,
                    "[object_object]" => Section::ObjectObject,
                    other => return Err(Error::parse(line_no, 1, format!("unknown section `{other}`"))),
                };
                let slot = match section {
                    Section::ObjectRoom => &mut object_room,
                    _ => &mut object_object,
                };
                if slot.is_some() {
                    return Err(Error::parse(line_no, 1, format!("duplicate section `{trimmed}`")));
                }
                *slot = Some(Table {
                    header: Vec::new(),
                    rows: Vec::new(),
                });
                continue;
            }
            let table = match section {
                Section::None => return Err(Error::parse(line_no, 1, "data before any section header")),
                Section::ObjectRoom => object_room.as_mut(),
                Section::ObjectObject => object_object.as_mut(),
            }
            .expect("section table initialised at header");

            let fields = split_with_columns(line);
            if table.header.is_empty() {
                if fields[0].1 != "category" {
                    return Err(Error::parse(line_no, fields[0].0, "header must start with `category`"));
                }
                table.header = fields[1..].iter().map(|(_, f)| f.to_string()).collect();
                continue;
            }
            if fields.len() != table.header.len() + 1 {
                let col = fields.last().map(|f| f.0).unwrap_or(1);
                return Err(Error::parse(
                    line_no,
                    col,
                    format!("expected {} values, found {}", table.header.len(), fields.len() - 1),
                ));
            }
            let mut values = Vec::with_capacity(table.header.len());
            for &(col, f) in &fields[1..] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::parse(line_no, col, format!("`{f}` is not a number")))?;
                values.push(v);
            }
            table.rows.push((fields[0].1.to_string(), values));
        }

        let object_room = object_room.ok_or_else(|| Error::parse(text.lines().count().max(1), 1, "missing [object_room] section"))?;
        let object_object =
            object_object.ok_or_else(|| Error::parse(text.lines().count().max(1), 1, "missing [object_object] section"))?;
        Self::from_tables(object_room, object_object)
    }

    fn from_tables(room: Table, obj: Table) -> Result<Self> {
        let room_cols: Vec<RoomType> = room.header.iter().map(|h| h.parse()).collect::<Result<_>>()?;
        let mut sorted = room_cols.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != RoomType::COUNT || room_cols.len() != RoomType::COUNT {
            return Err(Error::Validation("object_room must have one column per room type".into()));
        }
        let categories: Vec<String> = room.rows.iter().map(|(c, _)| c.clone()).collect();
        let vocab = CategoryVocab::new(categories.clone())?;

        let mut object_room = Vec::with_capacity(categories.len());
        for (cat, values) in &room.rows {
            let mut row = [0.0; RoomType::COUNT];
            for (v, r) in values.iter().zip(&room_cols) {
                check_unit(*v, || format!("object_room[{cat}][{r}]"))?;
                row[r.index()] = *v;
            }
            object_room.push(row);
        }

        if obj.header != categories {
            return Err(Error::Validation(
                "object_object columns must list the object_room categories in order".into(),
            ));
        }
        let obj_rows: Vec<String> = obj.rows.iter().map(|(c, _)| c.clone()).collect();
        if obj_rows != categories {
            return Err(Error::Validation(
                "object_object rows must list the object_room categories in order".into(),
            ));
        }
        let object_object: Vec<Vec<f64>> = obj.rows.into_iter().map(|(_, v)| v).collect();
        for (i, row) in object_object.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let (a, b) = (&vocab.object_categories[i], &vocab.object_categories[j]);
                check_unit(*v, || format!("object_object[{a}][{b}]"))?;
                if i == j && *v != 1.0 {
                    return Err(Error::Validation(format!("object_object[{a}][{a}] must be 1")));
                }
                if object_object[j][i] != *v {
                    return Err(Error::Validation(format!("object_object[{a}][{b}] is not symmetric")));
                }
            }
        }
        Ok(CooccurrencePriors {
            categories,
            object_room,
            object_object,
        })
    }

    /// The shipped priors table as text.
    pub fn default_text() -> &'static str {
        DEFAULT_PRIORS
    }

    pub fn vocab(&self) -> CategoryVocab {
        CategoryVocab {
            object_categories: self.categories.clone(),
            room_types: RoomType::ALL.to_vec(),
        }
    }

    pub fn index_of(&self, category: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| Error::Vocabulary(format!("category `{category}`")))
    }

    pub fn room_prior(&self, category: &str, room: RoomType) -> Result<f64> {
        Ok(self.object_room[self.index_of(category)?][room.index()])
    }

    pub fn proximity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.object_object[self.index_of(a)?][self.index_of(b)?])
    }

    /// Checks the priors cover exactly this vocabulary, in order.
    pub fn check_vocab(&self, vocab: &CategoryVocab) -> Result<()> {
        if self.categories != vocab.object_categories {
            return Err(Error::Validation("priors categories do not match the vocabulary".into()));
        }
        Ok(())
    }
}

fn check_unit(v: f64, name: impl FnOnce() -> String) -> Result<()> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{} = {v} is outside [0, 1]", name())))
    }
}

/// Whitespace-separated fields with their 1-based starting column.
fn split_with_columns(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}
