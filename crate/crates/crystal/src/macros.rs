//! Composite moves built from slides and tunnels: staircase (plain and
//! confined to the bounding box), elevator, corner pop and parallel tunnel.
//!
//! Every macro is scheduled against its entry configuration and replayed
//! step by step while it is built, so a returned sequence is known to be
//! valid from that configuration.

use thiserror::Error;

use crate::engine::{EngineError, Goal};
use crate::hierarchy::{local_region, name_slides};
use crate::lattice::{Configuration, Dir, ModuleCoord, Occupancy, Rect};
use crate::primitives::{apply_step_mut, ParallelStep, PrimitiveOp, StepSequence, Violation};

/// Steps of a staircase on a rectangle at least two modules thick.
pub const STAIRCASE_STEPS: usize = 3;
/// Steps of a corner pop on an R at least 3 modules on each side.
pub const CORNER_POP_STEPS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MacroError {
    #[error("rectangle must be anchored at its lower-left corner {0} and touch the rest of the robot only there")]
    AnchorMoves(ModuleCoord),
    #[error("rectangle cell {0} is empty")]
    NotFull(ModuleCoord),
    #[error("workspace cell {0} is occupied or off the lattice")]
    Obstructed(ModuleCoord),
    #[error("elevator corridor cell {0} is occupied or off the lattice")]
    CorridorBlocked(ModuleCoord),
    #[error("strip is not a full column beside the cargo along its whole travel")]
    StripTooThin,
    #[error("R does not hold exactly its left and bottom border (cell {0})")]
    NotAnL(ModuleCoord),
    #[error("module {0} outside R touches R away from its top-left and bottom-right corners, or the corners are not joined outside R")]
    IllegalOutsideContacts(ModuleCoord),
    #[error("fragment at {0} touches something other than the row")]
    ComponentHasOtherConnections(ModuleCoord),
    #[error("row rectangle must be one module tall, fully occupied, and hold the regathered strip")]
    NotARow,
    #[error("step {index} of the macro is invalid: {violation}")]
    Invalid { index: usize, violation: Violation },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Replays steps as they are scheduled.
struct Builder {
    cur: Configuration,
    seq: StepSequence,
}

impl Builder {
    fn new(cfg: &Configuration, tag: &str, footprint: Rect) -> Self {
        Builder {
            cur: cfg.clone(),
            seq: StepSequence::new(tag, footprint),
        }
    }

    fn ops(&mut self, mut ops: Vec<PrimitiveOp>) -> Result<(), MacroError> {
        if ops.is_empty() {
            return Ok(());
        }
        name_slides(&self.cur, &mut ops);
        let step = ParallelStep::new(self.seq.tag.clone(), ops);
        apply_step_mut(&mut self.cur, &step).map_err(|violation| MacroError::Invalid {
            index: self.seq.steps.len(),
            violation,
        })?;
        self.seq.steps.push(step);
        Ok(())
    }

    /// One step sliding every listed module.
    fn slides(&mut self, moves: impl IntoIterator<Item = (ModuleCoord, Dir, i32)>) -> Result<(), MacroError> {
        let ops = moves
            .into_iter()
            .filter(|m| m.2 > 0)
            .map(|(from, dir, dist)| {
                let id = match self.cur.get(from) {
                    Occupancy::Single(id) => id,
                    _ => crate::engine::UNNAMED,
                };
                PrimitiveOp::slide(id, from, dir, dist)
            })
            .collect();
        self.ops(ops)
    }

    fn finish(self) -> StepSequence {
        self.seq
    }
}

/// Local frame of a staircase: u across the thin side, v along the long
/// side, both from the anchor. Wide rectangles use the transposed frame.
#[derive(Clone, Copy)]
struct Frame {
    origin: ModuleCoord,
    transposed: bool,
}

impl Frame {
    fn at(&self, u: i32, v: i32) -> ModuleCoord {
        if self.transposed {
            ModuleCoord::new(self.origin.x + v, self.origin.y + u)
        } else {
            ModuleCoord::new(self.origin.x + u, self.origin.y + v)
        }
    }

    fn dir(&self, d: Dir) -> Dir {
        if !self.transposed {
            return d;
        }
        match d {
            Dir::N => Dir::E,
            Dir::E => Dir::N,
            Dir::S => Dir::W,
            Dir::W => Dir::S,
        }
    }

    fn rect(&self, u0: i32, v0: i32, du: i32, dv: i32) -> Rect {
        let c = self.at(u0, v0);
        if self.transposed {
            Rect::new(c.x, c.y, dv, du)
        } else {
            Rect::new(c.x, c.y, du, dv)
        }
    }
}

fn check_anchor(cfg: &Configuration, rect: &Rect, corner: ModuleCoord) -> Result<(), MacroError> {
    if corner != rect.origin {
        return Err(MacroError::AnchorMoves(corner));
    }
    for c in rect.cells() {
        if !cfg.in_bounds(c) || !cfg.is_occupied(c) {
            return Err(MacroError::NotFull(c));
        }
    }
    for c in rect.cells().filter(|&c| c != corner) {
        for n in c.neighbors() {
            if !rect.contains(n) && cfg.in_bounds(n) && cfg.is_occupied(n) {
                return Err(MacroError::AnchorMoves(n));
            }
        }
    }
    Ok(())
}

fn check_vacant(cfg: &Configuration, area: &Rect, keep: &Rect) -> Result<(), MacroError> {
    for c in area.cells() {
        if !cfg.in_bounds(c) || (!keep.contains(c) && cfg.is_occupied(c)) {
            return Err(MacroError::Obstructed(c));
        }
    }
    Ok(())
}

/// The rectangle with sides swapped and the same lower-left corner.
fn transposed(rect: &Rect) -> Rect {
    Rect::new(rect.x0(), rect.y0(), rect.k2, rect.k1)
}

/// Turns a `k1 x k2` rectangle into a `k2 x k1` one with the same
/// lower-left corner, which stays put. Rows shear out, columns drop, rows
/// shear back. A one module thick strip has no track to shear along and is
/// folded by tunnels instead, in time linear in its length.
pub fn staircase(cfg: &Configuration, rect: Rect, corner: ModuleCoord) -> Result<StepSequence, MacroError> {
    check_anchor(cfg, &rect, corner)?;
    let (w, t) = (rect.k1.min(rect.k2), rect.k1.max(rect.k2));
    let frame = Frame {
        origin: rect.origin,
        transposed: rect.k1 > rect.k2,
    };
    if w == t {
        return Ok(StepSequence::new("staircase", rect));
    }
    if w == 1 {
        return fold_strip(cfg, &rect, frame, t);
    }
    let footprint = frame.rect(0, 0, t + w - 1, t);
    check_vacant(cfg, &footprint, &rect)?;
    let mut b = Builder::new(cfg, "staircase", footprint);
    shear(&mut b, frame, w, t, t)?;
    Ok(b.finish())
}

/// The three shear phases in the local frame. Rows shift right by their
/// height capped at `cap`; columns then drop to the floor; the bottom `w`
/// rows shift back.
fn shear(b: &mut Builder, frame: Frame, w: i32, t: i32, cap: i32) -> Result<(), MacroError> {
    let width = t + w - 1;
    b.slides((1..t).flat_map(|v| (0..w).map(move |u| (frame.at(u, v), frame.dir(Dir::E), v.min(cap)))))?;
    let drop = |u: i32| u.min(t - 1) - u.min(w - 1);
    let mut moves = Vec::new();
    for u in 0..width {
        for v in 0..t {
            if b.cur.is_occupied(frame.at(u, v)) {
                moves.push((frame.at(u, v), frame.dir(Dir::S), drop(u)));
            }
        }
    }
    b.slides(moves)?;
    let mut moves = Vec::new();
    for v in 1..w {
        for u in 0..width {
            if b.cur.is_occupied(frame.at(u, v)) {
                moves.push((frame.at(u, v), frame.dir(Dir::W), v.min(cap)));
            }
        }
    }
    b.slides(moves)
}

/// A strip one module thick, folded by the engine within the square on
/// its long side.
fn fold_strip(cfg: &Configuration, rect: &Rect, frame: Frame, t: i32) -> Result<StepSequence, MacroError> {
    let area = frame.rect(0, 0, t, t);
    check_vacant(cfg, &area, rect)?;
    let target = transposed(rect);
    let mut b = Builder::new(cfg, "staircase", area);
    reshape_onto(&mut b, &area, &target)?;
    Ok(b.finish())
}

/// Runs the engine on `area` until exactly the cells of `target` are
/// occupied there.
fn reshape_onto(b: &mut Builder, area: &Rect, target: &Rect) -> Result<(), MacroError> {
    let mut region = local_region(&b.cur, area);
    let mask: Vec<bool> = (0..region.occ.len())
        .map(|i| {
            let (x, y) = region.coord(i);
            target.contains(ModuleCoord::new(area.x0() + x, area.y0() + y))
        })
        .collect();
    for ops in region.reshape(&Goal::onto(mask))? {
        b.ops(ops)?;
    }
    Ok(())
}

/// Same net effect as [`staircase`], but no module ever leaves the union
/// of the source and target rectangles. The shear is capped so the top
/// rows stay inside; the triangle they leave above the new rectangle is
/// tunnelled into the gap at its far end, in a number of steps that grows
/// with the side.
pub fn staircase_in_bbox(cfg: &Configuration, rect: Rect, corner: ModuleCoord) -> Result<StepSequence, MacroError> {
    check_anchor(cfg, &rect, corner)?;
    let (w, t) = (rect.k1.min(rect.k2), rect.k1.max(rect.k2));
    let frame = Frame {
        origin: rect.origin,
        transposed: rect.k1 > rect.k2,
    };
    if w == t {
        return Ok(StepSequence::new("staircase-bbox", rect));
    }
    let area = frame.rect(0, 0, t, t);
    check_vacant(cfg, &area, &rect)?;
    let mut b = Builder::new(cfg, "staircase-bbox", area);
    if w > 1 {
        shear(&mut b, frame, w, t, t - w)?;
    }
    reshape_onto(&mut b, &area, &transposed(&rect))?;
    Ok(b.finish())
}

/// Moves `cargo` vertically by `drop` modules (positive is down) between
/// the strips on its left and right. The cargo slides as one rigid block
/// along the strips, which never move.
pub fn elevator(
    cfg: &Configuration,
    cargo: Rect,
    drop: i32,
    left_strip: Rect,
    right_strip: Rect,
) -> Result<StepSequence, MacroError> {
    let dir = if drop >= 0 { Dir::S } else { Dir::N };
    let dist = drop.abs();
    let lo = cargo.y0().min(cargo.y0() - drop);
    let hi = cargo.y1().max(cargo.y1() - drop);
    let reach = Rect::new(cargo.x0(), lo, cargo.k1, hi - lo);
    let footprint = reach.union(&left_strip).union(&right_strip);
    if dist == 0 {
        return Ok(StepSequence::new("elevator", footprint));
    }
    if left_strip.x1() != cargo.x0() || right_strip.x0() != cargo.x1() {
        return Err(MacroError::StripTooThin);
    }
    for strip in [&left_strip, &right_strip] {
        if strip.y0() > lo || strip.y1() < hi {
            return Err(MacroError::StripTooThin);
        }
        if strip.cells().any(|c| !cfg.in_bounds(c) || !cfg.is_occupied(c)) {
            return Err(MacroError::StripTooThin);
        }
    }
    for c in cargo.cells() {
        if !cfg.in_bounds(c) || !cfg.is_occupied(c) {
            return Err(MacroError::NotFull(c));
        }
    }
    for c in reach.cells().filter(|&c| !cargo.contains(c)) {
        if !cfg.in_bounds(c) || cfg.is_occupied(c) {
            return Err(MacroError::CorridorBlocked(c));
        }
    }
    let mut b = Builder::new(cfg, "elevator", footprint);
    b.slides(cargo.cells().map(|c| (c, dir, dist)).collect::<Vec<_>>())?;
    Ok(b.finish())
}

/// Moves an L on the left and bottom border of `r` onto its top and right
/// border. The top-left and bottom-right modules stay put. Every module
/// strictly inside the L is a cut vertex of it, so the rest of the robot
/// has to join those two corners by itself.
pub fn corner_pop(cfg: &Configuration, r: Rect) -> Result<StepSequence, MacroError> {
    let (x0, y0, x1, y1) = (r.x0(), r.y0(), r.x1() - 1, r.y1() - 1);
    let in_l = |c: ModuleCoord| c.x == x0 || c.y == y0;
    for c in r.cells() {
        if !cfg.in_bounds(c) || cfg.is_occupied(c) != in_l(c) {
            return Err(MacroError::NotAnL(c));
        }
    }
    let tl = ModuleCoord::new(x0, y1);
    let br = ModuleCoord::new(x1, y0);
    for c in r.cells().filter(|&c| in_l(c) && c != tl && c != br) {
        for n in c.neighbors() {
            if !r.contains(n) && cfg.in_bounds(n) && cfg.is_occupied(n) {
                return Err(MacroError::IllegalOutsideContacts(n));
            }
        }
    }
    if r.k1 < 2 || r.k2 < 2 {
        return Ok(StepSequence::new("corner-pop", r));
    }
    let inner = |c: ModuleCoord| r.contains(c) && in_l(c) && c != tl && c != br;
    let rest: Vec<ModuleCoord> = cfg.occupied_cells().into_iter().filter(|&c| !inner(c)).collect();
    let joined = Configuration::from_cells(cfg.side(), &rest).map_or(false, |c| c.is_connected());
    if !joined {
        return Err(MacroError::IllegalOutsideContacts(tl));
    }
    let k = ModuleCoord::new(x0, y0);
    let mut b = Builder::new(cfg, "corner-pop", r);
    // The inner part of the left arm slides along the bottom arm to the
    // right border.
    b.slides((y0 + 1..y1).map(|y| (ModuleCoord::new(x0, y), Dir::E, x1 - x0)).collect::<Vec<_>>())?;
    // The bottom arm rises along the right border to just below the top.
    b.slides((x0..x1).map(|x| (ModuleCoord::new(x, y0), Dir::N, y1 - 1 - y0)).collect::<Vec<_>>())?;
    // All of it but the old corner steps onto the top border.
    b.slides((x0 + 1..x1).map(|x| (ModuleCoord::new(x, y1 - 1), Dir::N, 1)).collect::<Vec<_>>())?;
    // The old corner tunnels through the top-left module to the top-right.
    let k = ModuleCoord::new(k.x, y1 - 1);
    b.ops(vec![PrimitiveOp::Compress { from: k, into: tl }])?;
    let last = ModuleCoord::new(x1 - 1, y1);
    if last != tl {
        b.ops(vec![PrimitiveOp::Transfer { from: tl, to: last }])?;
    }
    b.ops(vec![PrimitiveOp::Decompress { at: last, toward: Dir::E }])?;
    Ok(b.finish())
}

/// Gathers the fragments lying along the `side` of the row `h` into one
/// strip starting at `anchor` (default: the leftmost fragment's first
/// cell). Every fragment slides along the row at its own speed; they meet
/// exactly when the step ends.
pub fn parallel_tunnel(
    cfg: &Configuration,
    h: Rect,
    side: Dir,
    anchor: Option<i32>,
) -> Result<StepSequence, MacroError> {
    if h.k2 != 1 || !matches!(side, Dir::N | Dir::S) {
        return Err(MacroError::NotARow);
    }
    if h.cells().any(|c| !cfg.in_bounds(c) || !cfg.is_occupied(c)) {
        return Err(MacroError::NotARow);
    }
    let y = h.y0() + if side == Dir::N { 1 } else { -1 };
    let beyond = y + if side == Dir::N { 1 } else { -1 };
    let lane = Rect::new(h.x0(), y.min(h.y0()), h.k1, 2);
    let occupied = |x: i32| {
        let c = ModuleCoord::new(x, y);
        cfg.in_bounds(c) && cfg.is_occupied(c)
    };
    let mut fragments: Vec<(i32, i32)> = Vec::new();
    let mut x = h.x0();
    while x < h.x1() {
        if occupied(x) {
            let start = x;
            while x < h.x1() && occupied(x) {
                x += 1;
            }
            fragments.push((start, x - start));
        } else {
            x += 1;
        }
    }
    if fragments.is_empty() {
        return Ok(StepSequence::new("parallel-tunnel", lane));
    }
    for &(start, len) in &fragments {
        let end = start + len - 1;
        let mut contacts = vec![ModuleCoord::new(start - 1, y), ModuleCoord::new(end + 1, y)];
        contacts.extend((start..=end).map(|x| ModuleCoord::new(x, beyond)));
        for c in contacts {
            if cfg.in_bounds(c) && cfg.is_occupied(c) {
                return Err(MacroError::ComponentHasOtherConnections(c));
            }
        }
    }
    let total: i32 = fragments.iter().map(|f| f.1).sum();
    let a = anchor.unwrap_or(fragments[0].0);
    if a < h.x0() || a + total > h.x1() {
        return Err(MacroError::NotARow);
    }
    let mut b = Builder::new(cfg, "parallel-tunnel", lane);
    let mut moves = Vec::new();
    let mut at = a;
    for &(start, len) in &fragments {
        let shift = at - start;
        let dir = if shift >= 0 { Dir::E } else { Dir::W };
        moves.extend((start..start + len).map(|x| (ModuleCoord::new(x, y), dir, shift.abs())));
        at += len;
    }
    b.slides(moves)?;
    Ok(b.finish())
}
