//! Primitive module operations, parallel steps, validation, application
//! and inversion, plus the k-tunnel composite.
//!
//! Motion model (all ops of a step happen during one unit of time):
//! - `Slide` moves one uncompressed module `dist` cells in a straight line.
//!   Movers are unit squares travelling at constant speed; two movers, or a
//!   mover and a stationary module, may never overlap at any instant.
//!   A slide needs substrate: along one perpendicular side every cell next to
//!   its swept segment is held by stationary modules, or the slide is made
//!   relative to a neighbouring rigid group that is itself supported. Modules
//!   moving together by the same vector and touching each other form a rigid
//!   group that shares support.
//! - `Compress` pushes a module into an adjacent single cell; `Decompress`
//!   lets the guest of a compressed cell out into an adjacent empty cell.
//! - `Transfer` carries a compression along a straight run of single cells
//!   (the branch shift of a tunnel move).
//! - The post-state must be connected.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Configuration, Dir, ModuleCoord, ModuleId, Occupancy, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimitiveOp {
    Slide {
        module: ModuleId,
        from: ModuleCoord,
        dir: Dir,
        dist: i32,
    },
    Compress {
        from: ModuleCoord,
        into: ModuleCoord,
    },
    Decompress {
        at: ModuleCoord,
        toward: Dir,
    },
    Transfer {
        from: ModuleCoord,
        to: ModuleCoord,
    },
}

impl PrimitiveOp {
    pub fn slide(module: ModuleId, from: ModuleCoord, dir: Dir, dist: i32) -> Self {
        PrimitiveOp::Slide {
            module,
            from,
            dir,
            dist,
        }
    }

    /// Coordinate used for deterministic ordering.
    pub fn source(&self) -> ModuleCoord {
        match *self {
            PrimitiveOp::Slide { from, .. } => from,
            PrimitiveOp::Compress { from, .. } => from,
            PrimitiveOp::Decompress { at, .. } => at,
            PrimitiveOp::Transfer { from, .. } => from,
        }
    }

    pub fn destination(&self) -> ModuleCoord {
        match *self {
            PrimitiveOp::Slide { from, dir, dist, .. } => from.step(dir, dist),
            PrimitiveOp::Compress { into, .. } => into,
            PrimitiveOp::Decompress { at, toward } => at.step(toward, 1),
            PrimitiveOp::Transfer { to, .. } => to,
        }
    }

    /// Every cell the op touches.
    pub fn footprint(&self) -> Vec<ModuleCoord> {
        let (a, b) = (self.source(), self.destination());
        match a.dir_to(b) {
            Some(d) => (0..=a.manhattan(b)).map(|t| a.step(d, t)).collect(),
            None => vec![a],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PrimitiveOp::Slide { .. } => "slide",
            PrimitiveOp::Compress { .. } => "compress",
            PrimitiveOp::Decompress { .. } => "decompress",
            PrimitiveOp::Transfer { .. } => "transfer",
        }
    }
}

impl fmt::Display for PrimitiveOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PrimitiveOp::Slide {
                module,
                from,
                dir,
                dist,
            } => write!(f, "slide m{module} {from} {}x{dist}", dir.as_char()),
            PrimitiveOp::Compress { from, into } => write!(f, "compress {from}->{into}"),
            PrimitiveOp::Decompress { at, toward } => {
                write!(f, "decompress {at} {}", toward.as_char())
            }
            PrimitiveOp::Transfer { from, to } => write!(f, "transfer {from}->{to}"),
        }
    }
}

/// Inverse of a single op: applying `op` then `invert_op(op)` restores the
/// configuration.
pub fn invert_op(op: &PrimitiveOp) -> PrimitiveOp {
    match *op {
        PrimitiveOp::Slide {
            module,
            from,
            dir,
            dist,
        } => PrimitiveOp::Slide {
            module,
            from: from.step(dir, dist),
            dir: dir.opposite(),
            dist,
        },
        PrimitiveOp::Compress { from, into } => PrimitiveOp::Decompress {
            at: into,
            toward: into.dir_to(from).expect("compress cells are adjacent"),
        },
        PrimitiveOp::Decompress { at, toward } => PrimitiveOp::Compress {
            from: at.step(toward, 1),
            into: at,
        },
        PrimitiveOp::Transfer { from, to } => PrimitiveOp::Transfer { from: to, to: from },
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParallelStep {
    pub ops: Vec<PrimitiveOp>,
    pub tag: String,
}

impl ParallelStep {
    pub fn new(tag: impl Into<String>, ops: Vec<PrimitiveOp>) -> Self {
        let mut step = ParallelStep {
            ops,
            tag: tag.into(),
        };
        step.sort();
        step
    }

    pub fn sort(&mut self) {
        self.ops
            .sort_by_key(|op| (op.source().y, op.source().x, op.destination().y, op.destination().x));
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Every op inverted; the step order within a parallel step is irrelevant.
    pub fn reversed(&self) -> ParallelStep {
        ParallelStep::new(self.tag.clone(), self.ops.iter().map(invert_op).collect())
    }
}

/// An ordered list of steps confined to a footprint rectangle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSequence {
    pub steps: Vec<ParallelStep>,
    pub footprint: Rect,
    pub tag: String,
}

impl StepSequence {
    pub fn new(tag: impl Into<String>, footprint: Rect) -> Self {
        StepSequence {
            steps: Vec::new(),
            footprint,
            tag: tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, ops: Vec<PrimitiveOp>) {
        if !ops.is_empty() {
            self.steps.push(ParallelStep::new(self.tag.clone(), ops));
        }
    }

    pub fn op_count(&self) -> usize {
        self.steps.iter().map(|s| s.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    Collision,
    Disconnection,
    NoSubstrate,
    CompressionOverflow,
    VacantSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind:?} at {at:?}: {detail}")]
pub struct Violation {
    pub kind: ViolationKind,
    pub op: Option<PrimitiveOp>,
    pub at: Vec<ModuleCoord>,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, op: Option<PrimitiveOp>, at: Vec<ModuleCoord>, detail: String) -> Self {
        Violation {
            kind,
            op,
            at,
            detail,
        }
    }
}

/// Checks a step against the configuration. Ops are scanned in source
/// order so the reported violation is deterministic.
pub fn validate_step(cfg: &Configuration, step: &ParallelStep) -> Result<(), Violation> {
    let mut post = cfg.clone();
    apply_step_mut(&mut post, step)
}

/// Validates and applies a step.
pub fn apply_step(cfg: &Configuration, step: &ParallelStep) -> Result<Configuration, Violation> {
    let mut post = cfg.clone();
    apply_step_mut(&mut post, step)?;
    Ok(post)
}

/// Validates and applies a step in place. On error `cfg` is left in an
/// unspecified state.
pub fn apply_step_mut(cfg: &mut Configuration, step: &ParallelStep) -> Result<(), Violation> {
    let ops = check_ops(cfg, step)?;
    let changes = post_changes(cfg, &ops);
    let vacated: Vec<ModuleCoord> = changes.iter().filter(|c| c.1 == Occupancy::Empty).map(|c| c.0).collect();
    let added: Vec<ModuleCoord> = changes
        .iter()
        .filter(|c| c.1 != Occupancy::Empty && cfg.get(c.0) == Occupancy::Empty)
        .map(|c| c.0)
        .collect();
    for &(c, occ) in &changes {
        cfg.set(c, occ);
    }
    if !still_connected(cfg, &vacated, &added) {
        let at = step.ops.iter().map(|o| o.source()).min().into_iter().collect();
        return Err(Violation::new(
            ViolationKind::Disconnection,
            None,
            at,
            "post-step module graph is disconnected".into(),
        ));
    }
    Ok(())
}

/// Applies every step in order, stopping at the first illegal one.
pub fn replay(cfg: &Configuration, steps: &[ParallelStep]) -> Result<Configuration, (usize, Violation)> {
    let mut cur = cfg.clone();
    for (i, s) in steps.iter().enumerate() {
        apply_step_mut(&mut cur, s).map_err(|v| (i, v))?;
    }
    Ok(cur)
}

const LOCAL_SEARCH: usize = 512;

/// Connectivity of `post`, which was connected before `vacated` emptied
/// and `added` filled. Each cluster of vacated cells must leave its
/// surviving neighbours joined, and each added cell must reach an
/// unchanged module; both are searched locally first.
fn still_connected(post: &Configuration, vacated: &[ModuleCoord], added: &[ModuleCoord]) -> bool {
    if vacated.is_empty() && added.is_empty() {
        return true;
    }
    let vac: HashSet<ModuleCoord> = vacated.iter().copied().collect();
    let add: HashSet<ModuleCoord> = added.iter().copied().collect();
    let occupied = |c: ModuleCoord| post.in_bounds(c) && post.is_occupied(c);
    let mut done: HashSet<ModuleCoord> = HashSet::new();
    for &v in vacated {
        if done.contains(&v) {
            continue;
        }
        let mut cluster = vec![v];
        done.insert(v);
        let mut head = 0;
        while head < cluster.len() {
            let c = cluster[head];
            head += 1;
            for n in c.neighbors() {
                if vac.contains(&n) && done.insert(n) {
                    cluster.push(n);
                }
            }
        }
        let mut targets: Vec<ModuleCoord> = cluster
            .iter()
            .flat_map(|c| c.neighbors())
            .filter(|&n| occupied(n))
            .collect();
        targets.sort_by_key(|c| (c.y, c.x));
        targets.dedup();
        if targets.len() > 1 && !local_reach(post, targets[0], |c| targets.contains(&c), targets.len()) {
            return post.is_connected();
        }
    }
    for &a in added {
        let anchored = local_reach(post, a, |c| !add.contains(&c), 1);
        if !anchored {
            return post.is_connected();
        }
    }
    true
}

/// Whether a bounded search from `start` over occupied cells meets `want`
/// cells satisfying `hit` (the start counts if it satisfies `hit`).
fn local_reach(post: &Configuration, start: ModuleCoord, hit: impl Fn(ModuleCoord) -> bool, want: usize) -> bool {
    let mut seen: HashSet<ModuleCoord> = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    let mut found = 0;
    while let Some(c) = queue.pop_front() {
        if hit(c) {
            found += 1;
            if found >= want {
                return true;
            }
        }
        if seen.len() > LOCAL_SEARCH {
            return false;
        }
        for n in c.neighbors() {
            if post.in_bounds(n) && post.is_occupied(n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    false
}

/// Everything except the connectivity check; returns the post-state.
/// Every local rule of a step; returns its ops in source order.
fn check_ops(cfg: &Configuration, step: &ParallelStep) -> Result<Vec<PrimitiveOp>, Violation> {
    let mut ops: Vec<PrimitiveOp> = step.ops.clone();
    ops.sort_by_key(|op| (op.source().y, op.source().x, op.destination().y, op.destination().x));

    check_sources(cfg, &ops)?;
    let owner = check_footprints(cfg, &ops)?;
    check_slides(cfg, &ops, &owner)?;
    check_support(cfg, &ops, &owner)?;
    Ok(ops)
}

fn oob(cfg: &Configuration, op: &PrimitiveOp, c: ModuleCoord) -> Result<(), Violation> {
    if cfg.in_bounds(c) {
        Ok(())
    } else {
        Err(Violation::new(
            ViolationKind::Collision,
            Some(*op),
            vec![c],
            "move leaves the lattice square".into(),
        ))
    }
}

fn check_sources(cfg: &Configuration, ops: &[PrimitiveOp]) -> Result<(), Violation> {
    use ViolationKind::*;
    let vac = |op: &PrimitiveOp, c: ModuleCoord, what: &str| {
        Err(Violation::new(VacantSource, Some(*op), vec![c], what.to_string()))
    };
    for op in ops {
        match *op {
            PrimitiveOp::Slide {
                module,
                from,
                dir,
                dist,
            } => {
                if cfg.get(from) != Occupancy::Single(module) {
                    return vac(op, from, "slide source does not hold the named single module");
                }
                if dist < 1 {
                    return Err(Violation::new(
                        Collision,
                        Some(*op),
                        vec![from],
                        "slide distance must be positive".into(),
                    ));
                }
                oob(cfg, op, from.step(dir, dist))?;
            }
            PrimitiveOp::Compress { from, into } => {
                if from.manhattan(into) != 1 {
                    return Err(Violation::new(
                        Collision,
                        Some(*op),
                        vec![from, into],
                        "compression cells are not adjacent".into(),
                    ));
                }
                match cfg.get(from) {
                    Occupancy::Single(_) => {}
                    Occupancy::Empty => return vac(op, from, "compress source is empty"),
                    Occupancy::Compressed(..) => {
                        return Err(Violation::new(
                            CompressionOverflow,
                            Some(*op),
                            vec![from],
                            "compress source is already compressed".into(),
                        ))
                    }
                }
                match cfg.get(into) {
                    Occupancy::Single(_) => {}
                    Occupancy::Empty => return vac(op, into, "compress target is empty"),
                    Occupancy::Compressed(..) => {
                        return Err(Violation::new(
                            CompressionOverflow,
                            Some(*op),
                            vec![into],
                            "third module pushed into a compressed cell".into(),
                        ))
                    }
                }
            }
            PrimitiveOp::Decompress { at, toward } => {
                if !matches!(cfg.get(at), Occupancy::Compressed(..)) {
                    return vac(op, at, "decompress source holds no compressed pair");
                }
                let t = at.step(toward, 1);
                oob(cfg, op, t)?;
                if !cfg.get(t).is_empty() {
                    return Err(Violation::new(
                        Collision,
                        Some(*op),
                        vec![t],
                        "decompression target is occupied".into(),
                    ));
                }
            }
            PrimitiveOp::Transfer { from, to } => {
                let Some(d) = from.dir_to(to) else {
                    return Err(Violation::new(
                        Collision,
                        Some(*op),
                        vec![from, to],
                        "transfer must run along a straight line".into(),
                    ));
                };
                if !matches!(cfg.get(from), Occupancy::Compressed(..)) {
                    return vac(op, from, "transfer source holds no compressed pair");
                }
                for t in 1..=from.manhattan(to) {
                    let c = from.step(d, t);
                    match cfg.get(c) {
                        Occupancy::Single(_) => {}
                        Occupancy::Empty => return vac(op, c, "transfer runs through an empty cell"),
                        Occupancy::Compressed(..) => {
                            return Err(Violation::new(
                                CompressionOverflow,
                                Some(*op),
                                vec![c],
                                "transfer runs into a compressed cell".into(),
                            ))
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Cells claimed by fixed-footprint ops (compress, decompress, transfer)
/// must not be touched by any other op. Returns the op index owning each
/// claimed cell.
fn check_footprints(cfg: &Configuration, ops: &[PrimitiveOp]) -> Result<HashMap<ModuleCoord, usize>, Violation> {
    let mut owner: HashMap<ModuleCoord, usize> = HashMap::new();
    let mut slide_sources: HashMap<ModuleCoord, usize> = HashMap::new();
    for (i, op) in ops.iter().enumerate() {
        if let PrimitiveOp::Slide { from, .. } = op {
            if slide_sources.insert(*from, i).is_some() {
                return Err(Violation::new(
                    ViolationKind::Collision,
                    Some(*op),
                    vec![*from],
                    "module moved by two ops".into(),
                ));
            }
            continue;
        }
        for c in op.footprint() {
            if let Some(&j) = owner.get(&c) {
                return Err(Violation::new(
                    ViolationKind::Collision,
                    Some(*op),
                    vec![c],
                    format!("footprint overlaps {}", ops[j]),
                ));
            }
            owner.insert(c, i);
        }
    }
    for op in ops {
        if let PrimitiveOp::Slide { .. } = op {
            for c in op.footprint() {
                if let Some(&j) = owner.get(&c) {
                    return Err(Violation::new(
                        ViolationKind::Collision,
                        Some(*op),
                        vec![c],
                        format!("slide crosses the footprint of {}", ops[j]),
                    ));
                }
            }
        }
    }
    let _ = cfg;
    Ok(owner)
}

/// Slides may not run into stationary modules, and no two movers may
/// overlap at any time during the step.
fn check_slides(cfg: &Configuration, ops: &[PrimitiveOp], owner: &HashMap<ModuleCoord, usize>) -> Result<(), Violation> {
    let slides: Vec<(usize, ModuleCoord, Dir, i32)> = ops
        .iter()
        .enumerate()
        .filter_map(|(i, op)| match *op {
            PrimitiveOp::Slide { from, dir, dist, .. } => Some((i, from, dir, dist)),
            _ => None,
        })
        .collect();
    let moving: HashMap<ModuleCoord, usize> = slides.iter().map(|s| (s.1, s.0)).collect();
    let mut buckets: HashMap<ModuleCoord, Vec<usize>> = HashMap::new();
    for (k, &(i, from, dir, dist)) in slides.iter().enumerate() {
        for t in 0..=dist {
            let c = from.step(dir, t);
            if t > 0 && cfg.is_occupied(c) && !moving.contains_key(&c) && !owner.contains_key(&c) {
                return Err(Violation::new(
                    ViolationKind::Collision,
                    Some(ops[i]),
                    vec![c],
                    "slide runs into a stationary module".into(),
                ));
            }
            buckets.entry(c).or_default().push(k);
        }
    }
    let mut keys: Vec<&ModuleCoord> = buckets.keys().collect();
    keys.sort_by_key(|c| (c.y, c.x));
    for c in keys {
        let list = &buckets[c];
        for a in 0..list.len() {
            for b in a + 1..list.len() {
                let (ia, fa, da, ka) = slides[list[a]];
                let (ib, fb, db, kb) = slides[list[b]];
                if movers_overlap(fa, da, ka, fb, db, kb) {
                    let (first, second) = if ia < ib { (ia, ib) } else { (ib, ia) };
                    return Err(Violation::new(
                        ViolationKind::Collision,
                        Some(ops[first]),
                        vec![*c],
                        format!("collides with {}", ops[second]),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Two unit squares moving linearly over t in [0, 1]: do their interiors
/// ever intersect?
fn movers_overlap(fa: ModuleCoord, da: Dir, ka: i32, fb: ModuleCoord, db: Dir, kb: i32) -> bool {
    let (ax, ay) = da.delta();
    let (bx, by) = db.delta();
    let r0 = ((fa.x - fb.x) as f64, (fa.y - fb.y) as f64);
    let v = ((ax * ka - bx * kb) as f64, (ay * ka - by * kb) as f64);
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (r, dv) in [(r0.0, v.0), (r0.1, v.1)] {
        if dv == 0.0 {
            if r.abs() >= 1.0 {
                return false;
            }
        } else {
            let t1 = (-1.0 - r) / dv;
            let t2 = (1.0 - r) / dv;
            lo = lo.max(t1.min(t2));
            hi = hi.min(t1.max(t2));
        }
    }
    lo < hi && hi > 0.0 && lo < 1.0
}

/// Substrate rule for slides, see the module docs.
fn check_support(cfg: &Configuration, ops: &[PrimitiveOp], owner: &HashMap<ModuleCoord, usize>) -> Result<(), Violation> {
    let slides: Vec<(usize, ModuleCoord, Dir, i32)> = ops
        .iter()
        .enumerate()
        .filter_map(|(i, op)| match *op {
            PrimitiveOp::Slide { from, dir, dist, .. } => Some((i, from, dir, dist)),
            _ => None,
        })
        .collect();
    if slides.is_empty() {
        return Ok(());
    }
    let disp = |dir: Dir, dist: i32| {
        let (dx, dy) = dir.delta();
        (dx * dist, dy * dist)
    };
    let slide_at: HashMap<ModuleCoord, usize> = slides.iter().enumerate().map(|(k, s)| (s.1, k)).collect();

    // Rigid groups: touching movers with identical displacement.
    let mut group = vec![usize::MAX; slides.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..slides.len() {
        if group[start] != usize::MAX {
            continue;
        }
        let g = groups.len();
        let d0 = disp(slides[start].2, slides[start].3);
        let mut members = vec![start];
        group[start] = g;
        let mut head = 0;
        while head < members.len() {
            let k = members[head];
            head += 1;
            for n in slides[k].1.neighbors() {
                if let Some(&j) = slide_at.get(&n) {
                    if group[j] == usize::MAX && disp(slides[j].2, slides[j].3) == d0 {
                        group[j] = g;
                        members.push(j);
                    }
                }
            }
        }
        groups.push(members);
    }

    let stationary = |c: ModuleCoord| cfg.is_occupied(c) && !slide_at.contains_key(&c) && !owner.contains_key(&c);

    let mut supported = vec![false; groups.len()];
    // Pass 1: support from stationary flank tracks.
    for (g, members) in groups.iter().enumerate() {
        'members: for &k in members {
            let (_, from, dir, dist) = slides[k];
            for side in dir.perpendicular() {
                if (0..=dist).all(|t| stationary(from.step(dir, t).step(side, 1))) {
                    supported[g] = true;
                    break 'members;
                }
            }
        }
    }
    // Later passes: relative slides along an already supported group.
    loop {
        let mut changed = false;
        for g in 0..groups.len() {
            if supported[g] {
                continue;
            }
            let (_, _, gdir, gdist) = slides[groups[g][0]];
            let v = disp(gdir, gdist);
            'search: for &k in &groups[g] {
                let from = slides[k].1;
                for side in gdir.perpendicular() {
                    let n = from.step(side, 1);
                    let Some(&j) = slide_at.get(&n) else { continue };
                    let h = group[j];
                    if h == g || !supported[h] {
                        continue;
                    }
                    let w = disp(slides[j].2, slides[j].3);
                    let rel = (v.0 - w.0, v.1 - w.1);
                    // Relative motion must run along the shared face.
                    let along_x = rel.1 == 0 && rel.0 != 0 && gdir.is_horizontal();
                    let along_y = rel.0 == 0 && rel.1 != 0 && !gdir.is_horizontal();
                    if !(along_x || along_y) {
                        continue;
                    }
                    let len = rel.0.abs().max(rel.1.abs());
                    let unit = (rel.0.signum(), rel.1.signum());
                    let ok = (0..=len).all(|t| {
                        let c = ModuleCoord::new(n.x + unit.0 * t, n.y + unit.1 * t);
                        slide_at.get(&c).is_some_and(|&m| group[m] == h)
                    });
                    if ok {
                        supported[g] = true;
                        changed = true;
                        break 'search;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut bad: Option<usize> = None;
    for (g, members) in groups.iter().enumerate() {
        if !supported[g] {
            let first = members.iter().map(|&k| slides[k].0).min().unwrap();
            bad = Some(bad.map_or(first, |b: usize| b.min(first)));
        }
    }
    if let Some(i) = bad {
        return Err(Violation::new(
            ViolationKind::NoSubstrate,
            Some(ops[i]),
            vec![ops[i].source()],
            "slide has no substrate track".into(),
        ));
    }
    Ok(())
}

/// New occupancy of every cell a checked step touches.
fn post_changes(cfg: &Configuration, ops: &[PrimitiveOp]) -> Vec<(ModuleCoord, Occupancy)> {
    let mut cells: HashMap<ModuleCoord, Occupancy> = HashMap::new();
    let mut placements: Vec<(ModuleCoord, ModuleId)> = Vec::new();
    for op in ops {
        match *op {
            PrimitiveOp::Slide { module, from, dir, dist } => {
                cells.insert(from, Occupancy::Empty);
                placements.push((from.step(dir, dist), module));
            }
            PrimitiveOp::Compress { from, into } => {
                let Occupancy::Single(m) = cfg.get(from) else { unreachable!() };
                cells.insert(from, Occupancy::Empty);
                placements.push((into, m));
            }
            PrimitiveOp::Decompress { at, toward } => {
                let Occupancy::Compressed(r, g) = cfg.get(at) else { unreachable!() };
                cells.insert(at, Occupancy::Single(r));
                placements.push((at.step(toward, 1), g));
            }
            PrimitiveOp::Transfer { from, to } => {
                let Occupancy::Compressed(r, g) = cfg.get(from) else { unreachable!() };
                cells.insert(from, Occupancy::Single(r));
                placements.push((to, g));
            }
        }
    }
    for (c, m) in placements {
        let cur = cells.get(&c).copied().unwrap_or_else(|| cfg.get(c));
        let occ = match cur {
            Occupancy::Empty => Occupancy::Single(m),
            Occupancy::Single(r) => Occupancy::Compressed(r, m),
            Occupancy::Compressed(..) => unreachable!("depth checked during validation"),
        };
        cells.insert(c, occ);
    }
    let mut out: Vec<(ModuleCoord, Occupancy)> = cells.into_iter().collect();
    out.sort_by_key(|c| (c.0.y, c.0.x));
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TunnelError {
    #[error("tunnel path is not an occupied contiguous lattice path")]
    BadPath,
    #[error("tunnel source is not a leaf module")]
    NotALeaf,
    #[error("tunnel destination is occupied")]
    DestinationOccupied,
}

/// Tunnel constants: a k-tunnel emits at most `TUNNEL_A * k + TUNNEL_B`
/// steps, k being the number of bends of the path between the two leaves.
pub const TUNNEL_A: usize = 1;
pub const TUNNEL_B: usize = 3;

/// Moves the leaf at `src_leaf` to the vacant `dst` by compressing it into
/// the path, carrying the compression bend to bend, and decompressing next
/// to `dst`. `path` starts next to `src_leaf` and ends next to `dst`.
pub fn k_tunnel(
    cfg: &Configuration,
    src_leaf: ModuleCoord,
    dst: ModuleCoord,
    path: &[ModuleCoord],
) -> Result<StepSequence, TunnelError> {
    if !matches!(cfg.get(src_leaf), Occupancy::Single(_)) {
        return Err(TunnelError::NotALeaf);
    }
    let degree = src_leaf.neighbors().iter().filter(|&&n| cfg.is_occupied(n)).count();
    if degree != 1 {
        return Err(TunnelError::NotALeaf);
    }
    if cfg.is_occupied(dst) || !cfg.in_bounds(dst) {
        return Err(TunnelError::DestinationOccupied);
    }
    let (Some(&first), Some(&last)) = (path.first(), path.last()) else {
        return Err(TunnelError::BadPath);
    };
    if first.manhattan(src_leaf) != 1 || last.manhattan(dst) != 1 {
        return Err(TunnelError::BadPath);
    }
    if path.iter().any(|&c| !matches!(cfg.get(c), Occupancy::Single(_))) {
        return Err(TunnelError::BadPath);
    }
    if path.windows(2).any(|w| w[0].manhattan(w[1]) != 1) {
        return Err(TunnelError::BadPath);
    }
    let mut xs: Vec<i32> = path.iter().map(|c| c.x).collect();
    xs.extend([src_leaf.x, dst.x]);
    let mut ys: Vec<i32> = path.iter().map(|c| c.y).collect();
    ys.extend([src_leaf.y, dst.y]);
    let (x0, x1) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
    let (y0, y1) = (*ys.iter().min().unwrap(), *ys.iter().max().unwrap());
    let mut seq = StepSequence::new("k-tunnel", Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1));
    seq.push(vec![PrimitiveOp::Compress { from: src_leaf, into: first }]);
    for (a, b) in straight_runs(path) {
        seq.push(vec![PrimitiveOp::Transfer { from: a, to: b }]);
    }
    seq.push(vec![PrimitiveOp::Decompress {
        at: last,
        toward: last.dir_to(dst).expect("adjacent"),
    }]);
    Ok(seq)
}

/// Splits a contiguous path into maximal straight runs, returned as
/// (start, end) pairs; consecutive runs share their bend cell.
pub fn straight_runs(path: &[ModuleCoord]) -> Vec<(ModuleCoord, ModuleCoord)> {
    let mut out = Vec::new();
    if path.len() < 2 {
        return out;
    }
    let mut start = 0;
    let mut dir = path[0].dir_to(path[1]);
    for i in 1..path.len() - 1 {
        let d = path[i].dir_to(path[i + 1]);
        if d != dir {
            out.push((path[start], path[i]));
            start = i;
            dir = d;
        }
    }
    out.push((path[start], path[path.len() - 1]));
    out
}

/// Number of bends along a contiguous path.
pub fn bends(path: &[ModuleCoord]) -> usize {
    straight_runs(path).len().saturating_sub(1)
}
