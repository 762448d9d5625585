//! Module lattice: coordinates, occupancy with compression, cells and
//! shape classification.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ModuleId = u32;

/// Atoms per module (4x4).
pub const ATOMS_PER_MODULE: u64 = 16;
/// Modules along one side of an input block.
pub const BLOCK_MODULES: i32 = 8;
/// Side of a level-0 cell in module units.
pub const BASE_CELL_SIDE: i32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModuleCoord {
    pub x: i32,
    pub y: i32,
}

impl ModuleCoord {
    pub const fn new(x: i32, y: i32) -> Self {
        ModuleCoord { x, y }
    }

    pub fn step(self, dir: Dir, dist: i32) -> Self {
        let (dx, dy) = dir.delta();
        ModuleCoord::new(self.x + dx * dist, self.y + dy * dist)
    }

    pub fn neighbors(self) -> [ModuleCoord; 4] {
        Dir::ALL.map(|d| self.step(d, 1))
    }

    /// Direction from `self` to an axis-aligned `other`, if any.
    pub fn dir_to(self, other: ModuleCoord) -> Option<Dir> {
        match (other.x - self.x, other.y - self.y) {
            (0, dy) if dy > 0 => Some(Dir::N),
            (0, dy) if dy < 0 => Some(Dir::S),
            (dx, 0) if dx > 0 => Some(Dir::E),
            (dx, 0) if dx < 0 => Some(Dir::W),
            _ => None,
        }
    }

    pub fn manhattan(self, other: ModuleCoord) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }
}

impl fmt::Display for ModuleCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Dir::N => (0, 1),
            Dir::E => (1, 0),
            Dir::S => (0, -1),
            Dir::W => (-1, 0),
        }
    }

    pub fn opposite(self) -> Dir {
        match self {
            Dir::N => Dir::S,
            Dir::E => Dir::W,
            Dir::S => Dir::N,
            Dir::W => Dir::E,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Dir::E | Dir::W)
    }

    /// The two directions perpendicular to `self`.
    pub fn perpendicular(self) -> [Dir; 2] {
        if self.is_horizontal() {
            [Dir::N, Dir::S]
        } else {
            [Dir::E, Dir::W]
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Dir::N => 'N',
            Dir::E => 'E',
            Dir::S => 'S',
            Dir::W => 'W',
        }
    }

    pub fn from_char(c: char) -> Option<Dir> {
        match c {
            'N' => Some(Dir::N),
            'E' => Some(Dir::E),
            'S' => Some(Dir::S),
            'W' => Some(Dir::W),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Occupancy {
    #[default]
    Empty,
    Single(ModuleId),
    /// Resident first, guest second. The guest is the module that leaves
    /// on decompression.
    Compressed(ModuleId, ModuleId),
}

impl Occupancy {
    pub fn is_empty(self) -> bool {
        matches!(self, Occupancy::Empty)
    }

    pub fn count(self) -> usize {
        match self {
            Occupancy::Empty => 0,
            Occupancy::Single(_) => 1,
            Occupancy::Compressed(..) => 2,
        }
    }

    pub fn contains(self, id: ModuleId) -> bool {
        match self {
            Occupancy::Empty => false,
            Occupancy::Single(a) => a == id,
            Occupancy::Compressed(a, b) => a == id || b == id,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("no block is occupied")]
    EmptyInput,
    #[error("occupied blocks are not 4-connected")]
    DisconnectedInput,
    #[error("coordinate {0} lies outside the lattice square")]
    OutOfBounds(ModuleCoord),
    #[error("cell {0} is listed twice")]
    DuplicateCell(ModuleCoord),
}

/// Occupancy of a square module lattice of side `side`, plus the inverse
/// index from module id to position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    side: i32,
    cells: Vec<Occupancy>,
    index: Vec<ModuleCoord>,
}

impl Configuration {
    pub fn empty(side: i32) -> Self {
        assert!(side > 0, "lattice side must be positive");
        Configuration {
            side,
            cells: vec![Occupancy::Empty; (side * side) as usize],
            index: Vec::new(),
        }
    }

    /// One module per listed cell; ids follow the order of `cells`.
    pub fn from_cells(side: i32, cells: &[ModuleCoord]) -> Result<Self, LatticeError> {
        let mut cfg = Configuration::empty(side);
        for &c in cells {
            if !cfg.in_bounds(c) {
                return Err(LatticeError::OutOfBounds(c));
            }
            if !cfg.get(c).is_empty() {
                return Err(LatticeError::DuplicateCell(c));
            }
            let id = cfg.index.len() as ModuleId;
            cfg.index.push(c);
            let i = cfg.idx(c);
            cfg.cells[i] = Occupancy::Single(id);
        }
        Ok(cfg)
    }

    /// Expand a block grid (row 0 = top) into modules. The lattice square is
    /// the smallest 2^h * 16 square holding the block bounding box, anchored
    /// at its lower-left corner.
    pub fn from_block_grid(grid: &BlockGrid) -> Result<Self, LatticeError> {
        let blocks = grid.blocks();
        if blocks.is_empty() {
            return Err(LatticeError::EmptyInput);
        }
        if !grid.is_connected() {
            return Err(LatticeError::DisconnectedInput);
        }
        let min_x = blocks.iter().map(|b| b.0).min().unwrap();
        let min_y = blocks.iter().map(|b| b.1).min().unwrap();
        let max_x = blocks.iter().map(|b| b.0).max().unwrap();
        let max_y = blocks.iter().map(|b| b.1).max().unwrap();
        let extent = (max_x - min_x + 1).max(max_y - min_y + 1) * BLOCK_MODULES;
        let side = b2_side(extent);
        let mut occupied = vec![false; (side * side) as usize];
        for &(bx, by) in &blocks {
            for dy in 0..BLOCK_MODULES {
                for dx in 0..BLOCK_MODULES {
                    let x = (bx - min_x) * BLOCK_MODULES + dx;
                    let y = (by - min_y) * BLOCK_MODULES + dy;
                    occupied[(y * side + x) as usize] = true;
                }
            }
        }
        let cells: Vec<ModuleCoord> = (0..side)
            .flat_map(|y| (0..side).map(move |x| ModuleCoord::new(x, y)))
            .filter(|c| occupied[(c.y * side + c.x) as usize])
            .collect();
        Configuration::from_cells(side, &cells)
    }

    pub fn side(&self) -> i32 {
        self.side
    }

    /// Recursion depth h of the lattice square (side = 2^h * 16), if the side
    /// has that form.
    pub fn level(&self) -> Option<u32> {
        level_of_side(self.side)
    }

    pub fn in_bounds(&self, c: ModuleCoord) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.side && c.y < self.side
    }

    fn idx(&self, c: ModuleCoord) -> usize {
        (c.y * self.side + c.x) as usize
    }

    /// Occupancy at `c`; out-of-bounds positions read as empty.
    pub fn get(&self, c: ModuleCoord) -> Occupancy {
        if self.in_bounds(c) {
            self.cells[self.idx(c)]
        } else {
            Occupancy::Empty
        }
    }

    pub fn is_occupied(&self, c: ModuleCoord) -> bool {
        !self.get(c).is_empty()
    }

    pub fn module_count(&self) -> usize {
        self.index.len()
    }

    pub fn position_of(&self, id: ModuleId) -> Option<ModuleCoord> {
        self.index.get(id as usize).copied()
    }

    /// Occupied positions in (y, x) scan order.
    pub fn occupied_cells(&self) -> Vec<ModuleCoord> {
        let mut out = Vec::with_capacity(self.index.len());
        for y in 0..self.side {
            for x in 0..self.side {
                let c = ModuleCoord::new(x, y);
                if !self.cells[self.idx(c)].is_empty() {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn occupied_mask(&self) -> Vec<bool> {
        self.cells.iter().map(|o| !o.is_empty()).collect()
    }

    pub fn compressed_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|o| matches!(o, Occupancy::Compressed(..)))
            .count()
    }

    /// Equal occupancy shape, ignoring module identities.
    pub fn same_shape(&self, other: &Configuration) -> bool {
        self.side == other.side
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| a.count() == b.count())
    }

    pub(crate) fn set(&mut self, c: ModuleCoord, occ: Occupancy) {
        let i = self.idx(c);
        self.cells[i] = occ;
        match occ {
            Occupancy::Empty => {}
            Occupancy::Single(a) => self.index[a as usize] = c,
            Occupancy::Compressed(a, b) => {
                self.index[a as usize] = c;
                self.index[b as usize] = c;
            }
        }
    }

    /// Checks that the id index and the occupancy grid agree.
    pub fn check_consistency(&self) -> bool {
        let mut seen = vec![false; self.index.len()];
        for y in 0..self.side {
            for x in 0..self.side {
                let c = ModuleCoord::new(x, y);
                let ids: Vec<ModuleId> = match self.get(c) {
                    Occupancy::Empty => vec![],
                    Occupancy::Single(a) => vec![a],
                    Occupancy::Compressed(a, b) => {
                        if a == b {
                            return false;
                        }
                        vec![a, b]
                    }
                };
                for id in ids {
                    let Some(slot) = seen.get_mut(id as usize) else {
                        return false;
                    };
                    if *slot || self.index[id as usize] != c {
                        return false;
                    }
                    *slot = true;
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// True iff the module adjacency graph is connected. An empty
    /// configuration counts as connected.
    pub fn is_connected(&self) -> bool {
        let mask = self.occupied_mask();
        mask_is_connected(&mask, self.side)
    }

    /// Rename module ids so that `self` uses the same id as `reference` at
    /// every occupied position. Both configurations must have the same
    /// shape and no compressed cells.
    pub fn relabel_like(&self, reference: &Configuration) -> Option<Vec<ModuleId>> {
        if !self.same_shape(reference) || self.compressed_count() > 0 {
            return None;
        }
        let mut map = vec![0; self.index.len()];
        for (id, &pos) in self.index.iter().enumerate() {
            match reference.get(pos) {
                Occupancy::Single(r) => map[id] = r,
                _ => return None,
            }
        }
        Some(map)
    }
}

pub(crate) fn mask_is_connected(mask: &[bool], side: i32) -> bool {
    let Some(start) = mask.iter().position(|&m| m) else {
        return true;
    };
    let total = mask.iter().filter(|&&m| m).count();
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    let mut visited = 0;
    while let Some(i) = queue.pop_front() {
        visited += 1;
        let x = i as i32 % side;
        let y = i as i32 / side;
        for (nx, ny) in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if nx < 0 || ny < 0 || nx >= side || ny >= side {
                continue;
            }
            let j = (ny * side + nx) as usize;
            if mask[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    visited == total
}

/// Smallest 2^h * 16 that is at least `extent`.
pub fn b2_side(extent: i32) -> i32 {
    let mut side = BASE_CELL_SIDE;
    while side < extent {
        side *= 2;
    }
    side
}

pub fn level_of_side(side: i32) -> Option<u32> {
    if side < BASE_CELL_SIDE || side % BASE_CELL_SIDE != 0 {
        return None;
    }
    let q = side / BASE_CELL_SIDE;
    if q & (q - 1) == 0 {
        Some(q.trailing_zeros())
    } else {
        None
    }
}

/// Block occupancy matrix, row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl BlockGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        BlockGrid {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged block rows");
        BlockGrid {
            rows: rows.len(),
            cols,
            cells: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.cols + col] = value;
    }

    /// Occupied blocks as (bx, by) with y growing upward.
    pub fn blocks(&self) -> Vec<(i32, i32)> {
        let mut out = Vec::new();
        for row in 0..self.rows {
            for col in 0..self.cols {
                if self.get(row, col) {
                    out.push((col as i32, (self.rows - 1 - row) as i32));
                }
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn is_connected(&self) -> bool {
        if self.cols == 0 {
            return true;
        }
        // Embed into a square mask to reuse the lattice flood fill.
        let side = self.rows.max(self.cols) as i32;
        let mut mask = vec![false; (side * side) as usize];
        for row in 0..self.rows {
            for col in 0..self.cols {
                mask[row * side as usize + col] = self.get(row, col);
            }
        }
        mask_is_connected(&mask, side)
    }
}

/// Axis-aligned rectangle of module positions; `k1` wide, `k2` tall.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub origin: ModuleCoord,
    pub k1: i32,
    pub k2: i32,
}

impl Rect {
    pub fn new(x: i32, y: i32, k1: i32, k2: i32) -> Self {
        assert!(k1 >= 1 && k2 >= 1, "rectangle sides must be positive");
        Rect {
            origin: ModuleCoord::new(x, y),
            k1,
            k2,
        }
    }

    pub fn x0(&self) -> i32 {
        self.origin.x
    }
    pub fn y0(&self) -> i32 {
        self.origin.y
    }
    pub fn x1(&self) -> i32 {
        self.origin.x + self.k1
    }
    pub fn y1(&self) -> i32 {
        self.origin.y + self.k2
    }

    pub fn contains(&self, c: ModuleCoord) -> bool {
        c.x >= self.x0() && c.x < self.x1() && c.y >= self.y0() && c.y < self.y1()
    }

    pub fn cells(&self) -> impl Iterator<Item = ModuleCoord> + '_ {
        (self.y0()..self.y1())
            .flat_map(move |y| (self.x0()..self.x1()).map(move |x| ModuleCoord::new(x, y)))
    }

    pub fn area(&self) -> i32 {
        self.k1 * self.k2
    }

    /// Smallest rectangle containing both.
    pub fn union(&self, other: &Rect) -> Rect {
        let x0 = self.x0().min(other.x0());
        let y0 = self.y0().min(other.y0());
        let x1 = self.x1().max(other.x1());
        let y1 = self.y1().max(other.y1());
        Rect::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// An aligned square of the recursion hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub origin: ModuleCoord,
    pub level: u32,
}

impl Cell {
    pub fn new(origin: ModuleCoord, level: u32) -> Self {
        let cell = Cell { origin, level };
        let s = cell.side_modules();
        assert!(
            origin.x % s == 0 && origin.y % s == 0,
            "cell origin must be aligned to its side"
        );
        cell
    }

    pub fn side_modules(&self) -> i32 {
        BASE_CELL_SIDE << self.level
    }

    pub fn subcell_side(&self) -> i32 {
        self.side_modules() / 2
    }

    pub fn rect(&self) -> Rect {
        let s = self.side_modules();
        Rect::new(self.origin.x, self.origin.y, s, s)
    }

    pub fn contains(&self, c: ModuleCoord) -> bool {
        self.rect().contains(c)
    }

    pub fn on_boundary(&self, c: ModuleCoord) -> bool {
        on_square_boundary(self.origin, self.side_modules(), c)
    }

    pub fn boundary_positions(&self) -> Vec<ModuleCoord> {
        square_boundary(self.origin, self.side_modules())
    }
}

pub(crate) fn on_square_boundary(origin: ModuleCoord, side: i32, c: ModuleCoord) -> bool {
    let (x, y) = (c.x - origin.x, c.y - origin.y);
    x >= 0 && y >= 0 && x < side && y < side && (x == 0 || y == 0 || x == side - 1 || y == side - 1)
}

/// Boundary ring of a square, clockwise from the lower-left corner: up the
/// left side, along the top, down the right side, back along the bottom.
pub fn square_boundary(origin: ModuleCoord, side: i32) -> Vec<ModuleCoord> {
    let (ox, oy) = (origin.x, origin.y);
    if side == 1 {
        return vec![origin];
    }
    let mut out = Vec::with_capacity((4 * side - 4) as usize);
    for y in 0..side {
        out.push(ModuleCoord::new(ox, oy + y));
    }
    for x in 1..side {
        out.push(ModuleCoord::new(ox + x, oy + side - 1));
    }
    for y in (0..side - 1).rev() {
        out.push(ModuleCoord::new(ox + side - 1, oy + y));
    }
    for x in (1..side - 1).rev() {
        out.push(ModuleCoord::new(ox + x, oy));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    Empty,
    Ring,
    Sparse,
    Unprocessed,
}

pub fn classify_cell(cfg: &Configuration, cell: &Cell) -> CellClass {
    classify_square(cfg, cell.origin, cell.side_modules())
}

pub(crate) fn classify_square(cfg: &Configuration, origin: ModuleCoord, side: i32) -> CellClass {
    let rect = Rect::new(origin.x, origin.y, side, side);
    let occupied: Vec<ModuleCoord> = rect.cells().filter(|&c| cfg.is_occupied(c)).collect();
    if occupied.is_empty() {
        return CellClass::Empty;
    }
    let boundary = square_boundary(origin, side);
    if boundary.iter().all(|&c| cfg.is_occupied(c)) {
        let interior = interior_order(origin, side);
        let k = interior.iter().filter(|&&c| cfg.is_occupied(c)).count();
        if interior[..k].iter().all(|&c| cfg.is_occupied(c)) {
            return CellClass::Ring;
        }
    }
    if occupied.iter().all(|&c| on_square_boundary(origin, side, c)) {
        CellClass::Sparse
    } else {
        CellClass::Unprocessed
    }
}

/// Interior positions of a square in ring fill order: bottom row first,
/// left to right.
pub(crate) fn interior_order(origin: ModuleCoord, side: i32) -> Vec<ModuleCoord> {
    let mut out = Vec::new();
    for y in 1..side - 1 {
        for x in 1..side - 1 {
            out.push(ModuleCoord::new(origin.x + x, origin.y + y));
        }
    }
    out
}

/// Occupied positions of the ring holding `count` modules in the square.
/// Panics if `count` is below the boundary length or above the area.
pub fn ring_shape(origin: ModuleCoord, side: i32, count: usize) -> Vec<ModuleCoord> {
    let mut out = square_boundary(origin, side);
    assert!(
        count >= out.len() && count <= (side * side) as usize,
        "ring of side {side} cannot hold {count} modules"
    );
    let extra = count - out.len();
    out.extend(interior_order(origin, side).into_iter().take(extra));
    out
}

/// Boundary length of the cell, 8c - 4 for subcell side c.
pub fn ring_mass_threshold(cell: &Cell) -> usize {
    threshold_for_subcell_side(cell.subcell_side())
}

pub fn threshold_for_subcell_side(c: i32) -> usize {
    (8 * c - 4).max(0) as usize
}

/// Number of modules inside `rect`, compressed cells counting twice.
pub fn count_in(cfg: &Configuration, rect: &Rect) -> usize {
    rect.cells().map(|c| cfg.get(c).count()).sum()
}

/// The canonical configuration for a lattice square: a ring of the whole
/// square holding `count` modules. Ids follow ring order.
pub fn canonical_shape(side: i32, count: usize) -> Vec<ModuleCoord> {
    ring_shape(ModuleCoord::new(0, 0), side, count)
}
