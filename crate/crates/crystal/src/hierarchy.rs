//! Divide-and-conquer merging of aligned cells.
//!
//! Level 0 cells are 16x16 modules. After a level is merged every cell of
//! that level is a Ring (when it holds at least as many modules as its
//! boundary has positions) or Sparse (all modules on its boundary), or
//! empty. All cells of a level are merged at the same time; each keeps its
//! contact modules, the ones touching another cell, in place.

use std::collections::VecDeque;

use thiserror::Error;

use crate::engine::{EngineError, Goal, LocalCell};
use crate::lattice::{
    classify_cell, count_in, on_square_boundary, ring_mass_threshold, ring_shape, Cell, CellClass,
    Configuration, Dir, ModuleCoord, Rect, BLOCK_MODULES,
};
use crate::primitives::{apply_step_mut, ParallelStep, PrimitiveOp, StepSequence, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("a level 0 cell cannot be subdivided")]
    BaseLevel,
    #[error("cell at {0} holds no modules")]
    EmptyCell(ModuleCoord),
    #[error("quadrants of the cell at {0} are not each full or empty")]
    NotBlockAligned(ModuleCoord),
    #[error("cell at {origin} (level {level}) is {class:?}")]
    HypothesisViolated {
        origin: ModuleCoord,
        level: u32,
        class: CellClass,
    },
    #[error("cells {0} and {1} do not share a side")]
    NotAdjacent(ModuleCoord, ModuleCoord),
    #[error("removing the branch would disconnect the robot")]
    ConnectivityRequired,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("emitted step {index} is illegal: {violation}")]
    Invalid { index: usize, violation: Violation },
}

/// A cell about to be merged together with the state of its quadrants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeContext {
    pub cell: Cell,
    pub subcells: [(Cell, CellClass); 4],
    pub ring_count: usize,
    /// Pairs of boundary positions joined inside the cell that must stay
    /// joined through the merge.
    pub connectivity_obligations: Vec<(ModuleCoord, ModuleCoord)>,
}

/// Quadrants in the order lower-left, lower-right, upper-left, upper-right.
pub fn subdivide(cell: &Cell) -> Result<[Cell; 4], HierarchyError> {
    if cell.level == 0 {
        return Err(HierarchyError::BaseLevel);
    }
    let c = cell.subcell_side();
    let o = cell.origin;
    let l = cell.level - 1;
    Ok([
        Cell::new(o, l),
        Cell::new(ModuleCoord::new(o.x + c, o.y), l),
        Cell::new(ModuleCoord::new(o.x, o.y + c), l),
        Cell::new(ModuleCoord::new(o.x + c, o.y + c), l),
    ])
}

fn quadrant_rects(cell: &Cell) -> [Rect; 4] {
    let c = cell.subcell_side();
    let o = cell.origin;
    [
        Rect::new(o.x, o.y, c, c),
        Rect::new(o.x + c, o.y, c, c),
        Rect::new(o.x, o.y + c, c, c),
        Rect::new(o.x + c, o.y + c, c, c),
    ]
}

/// Copies a rectangle of the configuration. Modules on the rectangle's rim
/// that touch a module outside it are marked fixed.
pub(crate) fn local_region(cfg: &Configuration, rect: &Rect) -> LocalCell {
    let (w, h) = (rect.k1, rect.k2);
    let mut occ = vec![0u8; (w * h) as usize];
    let mut fixed = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let c = ModuleCoord::new(rect.x0() + x, rect.y0() + y);
            let i = (y * w + x) as usize;
            occ[i] = cfg.get(c).count() as u8;
            if occ[i] > 0 {
                fixed[i] = c.neighbors().iter().any(|&n| !rect.contains(n) && cfg.is_occupied(n));
            }
        }
    }
    LocalCell::new(rect.origin, w, h, occ, fixed)
}

fn rect_mask(region: &LocalCell, pred: impl Fn(ModuleCoord) -> bool) -> Vec<bool> {
    (0..region.occ.len())
        .map(|i| {
            let (x, y) = region.coord(i);
            pred(ModuleCoord::new(region.origin.x + x, region.origin.y + y))
        })
        .collect()
}

pub fn has_ring_mass(ctx: &MergeContext, cfg: &Configuration) -> bool {
    count_in(cfg, &ctx.cell.rect()) >= ring_mass_threshold(&ctx.cell)
}

/// The shape a merge aims for: the packed ring when there is enough
/// material, otherwise any arrangement on the boundary.
fn merge_goal(region: &LocalCell, cell: &Cell) -> Goal {
    let side = cell.side_modules();
    let count = region.module_count();
    if count >= ring_mass_threshold(cell) {
        let ring: std::collections::HashSet<ModuleCoord> = ring_shape(cell.origin, side, count).into_iter().collect();
        Goal::onto(rect_mask(region, |c| ring.contains(&c)))
    } else {
        Goal::onto(rect_mask(region, |c| on_square_boundary(cell.origin, side, c)))
    }
}

fn to_sequence(tag: &str, footprint: Rect, steps: Vec<Vec<PrimitiveOp>>) -> StepSequence {
    let mut seq = StepSequence::new(tag, footprint);
    for ops in steps {
        seq.push(ops);
    }
    seq
}

fn reshape_cell(cfg: &Configuration, cell: &Cell, tag: &str) -> Result<StepSequence, HierarchyError> {
    let mut region = local_region(cfg, &cell.rect());
    if region.module_count() == 0 {
        return Ok(StepSequence::new(tag, cell.rect()));
    }
    let goal = merge_goal(&region, cell);
    let steps = region.reshape(&goal)?;
    Ok(to_sequence(tag, cell.rect(), steps))
}

pub fn merge_context(cfg: &Configuration, cell: &Cell) -> Result<MergeContext, HierarchyError> {
    let subs = subdivide(cell)?;
    let subcells = subs.map(|s| (s, classify_cell(cfg, &s)));
    let ring_count = subcells.iter().filter(|s| s.1 == CellClass::Ring).count();
    Ok(MergeContext {
        cell: *cell,
        subcells,
        ring_count,
        connectivity_obligations: obligations(cfg, cell),
    })
}

/// Consecutive contacts, in boundary order, of every component inside the
/// cell.
fn obligations(cfg: &Configuration, cell: &Cell) -> Vec<(ModuleCoord, ModuleCoord)> {
    let rect = cell.rect();
    let region = local_region(cfg, &rect);
    let label = component_labels(&region);
    let mut per: std::collections::BTreeMap<u32, Vec<ModuleCoord>> = Default::default();
    for c in cell.boundary_positions() {
        let i = region.idx(c.x - rect.x0(), c.y - rect.y0());
        if region.fixed[i] {
            per.entry(label[i]).or_default().push(c);
        }
    }
    per.values().flat_map(|v| v.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()).collect()
}

fn component_labels(region: &LocalCell) -> Vec<u32> {
    let n = region.occ.len();
    let mut label = vec![u32::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if region.occ[s] == 0 || label[s] != u32::MAX {
            continue;
        }
        label[s] = next;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            let (x, y) = region.coord(i);
            for d in Dir::ALL {
                let (dx, dy) = d.delta();
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= region.w || ny >= region.h {
                    continue;
                }
                let j = region.idx(nx, ny);
                if region.occ[j] > 0 && label[j] == u32::MAX {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    label
}

/// Merges a level 0 cell whose four 8x8 quadrants are each full or empty
/// into a ring.
pub fn base_merge(cfg: &Configuration, cell: &Cell) -> Result<StepSequence, HierarchyError> {
    if cell.level != 0 {
        return Err(HierarchyError::NotBlockAligned(cell.origin));
    }
    let mut any = false;
    for q in quadrant_rects(cell) {
        let n = count_in(cfg, &q);
        if n != 0 && n != (BLOCK_MODULES * BLOCK_MODULES) as usize {
            return Err(HierarchyError::NotBlockAligned(cell.origin));
        }
        any |= n > 0;
    }
    if !any {
        return Err(HierarchyError::EmptyCell(cell.origin));
    }
    reshape_cell(cfg, cell, "base")
}

/// Merges the four quadrants of a cell, each already Ring, Sparse or empty.
pub fn merge_cells(cfg: &Configuration, ctx: &MergeContext) -> Result<StepSequence, HierarchyError> {
    for (sub, class) in &ctx.subcells {
        if *class == CellClass::Unprocessed {
            return Err(HierarchyError::HypothesisViolated {
                origin: sub.origin,
                level: sub.level,
                class: *class,
            });
        }
    }
    reshape_cell(cfg, &ctx.cell, &format!("merge L{}", ctx.cell.level))
}

/// Moves interior material of a cell to its boundary, or turns the cell
/// into a ring if the boundary cannot take all of it.
pub fn sweep_cell_to_boundary(cfg: &Configuration, cell: &Cell) -> Result<StepSequence, HierarchyError> {
    reshape_cell(cfg, cell, "sweep")
}

/// Side of `a` facing `b`, as positions of `a` ordered from the lower or
/// left end.
fn facing_side(a: &Cell, b: &Cell) -> Option<(Vec<ModuleCoord>, Vec<ModuleCoord>)> {
    let s = a.side_modules();
    if b.side_modules() != s {
        return None;
    }
    let (ax, ay, bx, by) = (a.origin.x, a.origin.y, b.origin.x, b.origin.y);
    let line = |x: i32, y: i32, horizontal: bool| -> Vec<ModuleCoord> {
        (0..s)
            .map(|t| if horizontal { ModuleCoord::new(x + t, y) } else { ModuleCoord::new(x, y + t) })
            .collect()
    };
    if ay == by && bx == ax + s {
        Some((line(ax + s - 1, ay, false), line(bx, by, false)))
    } else if ay == by && ax == bx + s {
        Some((line(ax, ay, false), line(bx + s - 1, by, false)))
    } else if ax == bx && by == ay + s {
        Some((line(ax, ay + s - 1, true), line(bx, by, true)))
    } else if ax == bx && ay == by + s {
        Some((line(ax, ay, true), line(bx, by + s - 1, true)))
    } else {
        None
    }
}

/// Target layout of a border side: the runs already touching each end stay,
/// everything else on the side is appended to the run at the lower end.
fn consolidated(side: &[ModuleCoord], cfg: &Configuration) -> Vec<bool> {
    let occ: Vec<bool> = side.iter().map(|&c| cfg.is_occupied(c)).collect();
    let m = occ.iter().filter(|&&o| o).count();
    let n = side.len();
    let suffix = occ.iter().rev().take_while(|&&o| o).count().min(m);
    let prefix = m - suffix;
    (0..n).map(|i| i < prefix || i >= n - suffix).collect()
}

/// Gathers the modules on each side of the border between two adjacent
/// cells into at most two runs per side, each touching an end of the
/// border. Both cells keep their module counts.
pub fn merge_side_branches(cfg: &Configuration, a: &Cell, b: &Cell) -> Result<StepSequence, HierarchyError> {
    let (side_a, side_b) = facing_side(a, b).ok_or(HierarchyError::NotAdjacent(a.origin, b.origin))?;
    let union = a.rect().union(&b.rect());
    let mut seq = StepSequence::new("side branches", union);
    let mut cur = cfg.clone();
    for side in [side_a, side_b] {
        let want = consolidated(&side, &cur);
        let mut region = local_region(&cur, &union);
        let on_side: std::collections::HashMap<ModuleCoord, bool> = side.iter().copied().zip(want).collect();
        let goal = Goal {
            movable: rect_mask(&region, |c| on_side.get(&c) == Some(&false)),
            dest: rect_mask(&region, |c| on_side.get(&c) == Some(&true)),
            partial: false,
        };
        let steps = region.reshape(&goal)?;
        let part = to_sequence("side branches", union, steps);
        cur = replay_into(&cur, &part.steps)?;
        seq.steps.extend(part.steps);
    }
    Ok(seq)
}

/// Moves modules of `branch`, a run in the near-boundary row or column of
/// `cell`, into the vacancies of the cell's boundary side `side`. Stops when
/// the branch is used up or the side is full.
pub fn absorb_branch_into_boundary(
    cfg: &Configuration,
    branch: &[ModuleCoord],
    cell: &Cell,
    side: Dir,
) -> Result<StepSequence, HierarchyError> {
    let rect = cell.rect();
    let mut seq = StepSequence::new("absorb", rect);
    if branch.is_empty() {
        return Ok(seq);
    }
    let mut mask = cfg.occupied_mask();
    let s = cfg.side();
    for c in branch {
        mask[(c.y * s + c.x) as usize] = false;
    }
    if !crate::lattice::mask_is_connected(&mask, s) {
        return Err(HierarchyError::ConnectivityRequired);
    }
    let side_cells: std::collections::HashSet<ModuleCoord> = side_positions(cell, side).into_iter().collect();
    let branch_cells: std::collections::HashSet<ModuleCoord> = branch.iter().copied().collect();
    let mut region = local_region(cfg, &rect);
    let goal = Goal {
        movable: rect_mask(&region, |c| branch_cells.contains(&c)),
        dest: rect_mask(&region, |c| side_cells.contains(&c)),
        partial: true,
    };
    for ops in region.reshape(&goal)? {
        seq.push(ops);
    }
    Ok(seq)
}

/// Boundary positions of one side of a cell, corners included.
pub fn side_positions(cell: &Cell, side: Dir) -> Vec<ModuleCoord> {
    let s = cell.side_modules();
    let o = cell.origin;
    (0..s)
        .map(|t| match side {
            Dir::S => ModuleCoord::new(o.x + t, o.y),
            Dir::N => ModuleCoord::new(o.x + t, o.y + s - 1),
            Dir::W => ModuleCoord::new(o.x, o.y + t),
            Dir::E => ModuleCoord::new(o.x + s - 1, o.y + t),
        })
        .collect()
}

/// True when, in the entry configuration, no path inside the cell leads
/// from the cell's top border down into its two lower quadrants.
pub fn check_two_sparse_top(cfg_initial: &Configuration, cell: &Cell) -> bool {
    let rect = cell.rect();
    let half = cell.subcell_side();
    let mut seen = std::collections::HashSet::new();
    let mut queue: VecDeque<ModuleCoord> = side_positions(cell, Dir::N)
        .into_iter()
        .filter(|&c| cfg_initial.is_occupied(c))
        .collect();
    seen.extend(queue.iter().copied());
    while let Some(c) = queue.pop_front() {
        if c.y < rect.y0() + half {
            return false;
        }
        for n in c.neighbors() {
            if rect.contains(n) && cfg_initial.is_occupied(n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    true
}

/// Fills in the module ids of engine slides from the state they start in.
pub(crate) fn name_slides(cfg: &Configuration, ops: &mut [PrimitiveOp]) {
    for op in ops {
        if let PrimitiveOp::Slide { module, from, .. } = op {
            if *module == crate::engine::UNNAMED {
                if let crate::lattice::Occupancy::Single(id) = cfg.get(*from) {
                    *module = id;
                }
            }
        }
    }
}

fn replay_into(cfg: &Configuration, steps: &[ParallelStep]) -> Result<Configuration, HierarchyError> {
    let mut cur = cfg.clone();
    for (index, s) in steps.iter().enumerate() {
        apply_step_mut(&mut cur, s).map_err(|violation| HierarchyError::Invalid { index, violation })?;
    }
    Ok(cur)
}

/// Cells of one level tiling the configuration's square, ordered by origin
/// (rows bottom to top, left to right).
pub fn cells_at_level(side: i32, level: u32) -> Vec<Cell> {
    let s = 16 << level;
    let mut out = Vec::new();
    let mut y = 0;
    while y < side {
        let mut x = 0;
        while x < side {
            out.push(Cell::new(ModuleCoord::new(x, y), level));
            x += s;
        }
        y += s;
    }
    out
}

/// Merges every cell of `level` at once. Returns the combined steps, each
/// already validated, and the configuration they lead to.
pub fn merge_level(cfg: &Configuration, level: u32) -> Result<(Vec<ParallelStep>, Configuration), HierarchyError> {
    let tag = if level == 0 { "base".to_string() } else { format!("merge L{level}") };
    let mut combined: Vec<Vec<PrimitiveOp>> = Vec::new();
    let cells = cells_at_level(cfg.side(), level);
    for cell in &cells {
        let mut region = local_region(cfg, &cell.rect());
        if region.module_count() == 0 {
            continue;
        }
        let goal = merge_goal(&region, cell);
        let steps = region.reshape(&goal)?;
        if combined.len() < steps.len() {
            combined.resize_with(steps.len(), Vec::new);
        }
        for (k, ops) in steps.into_iter().enumerate() {
            combined[k].extend(ops);
        }
    }
    let mut steps = Vec::with_capacity(combined.len());
    let mut after = cfg.clone();
    for (index, mut ops) in combined.into_iter().enumerate() {
        name_slides(&after, &mut ops);
        let step = ParallelStep::new(tag.clone(), ops);
        apply_step_mut(&mut after, &step).map_err(|violation| HierarchyError::Invalid { index, violation })?;
        steps.push(step);
    }
    for cell in &cells {
        let class = classify_cell(&after, cell);
        let ring_mass = count_in(&after, &cell.rect()) >= ring_mass_threshold(cell);
        let ok = match class {
            CellClass::Empty => true,
            CellClass::Ring => ring_mass,
            CellClass::Sparse => !ring_mass,
            CellClass::Unprocessed => false,
        };
        if !ok {
            return Err(HierarchyError::HypothesisViolated {
                origin: cell.origin,
                level,
                class,
            });
        }
    }
    Ok((steps, after))
}
