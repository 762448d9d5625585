//! Local reshaping engine used by every cell merge.
//!
//! A cell is reshaped in rounds. A round either slides a rigid chunk of
//! stray material toward the goal, or tunnels stray modules in parallel
//! along vertex-disjoint paths to goal vacancies. Tunnel sources are
//! modules whose removal cannot split their component: simple surface
//! cells, or leaves of a spanning tree when none are left. Contact modules
//! (those touching modules of other cells) never move, so cells of one
//! level can be reshaped at the same time without breaking global
//! connectivity.

use std::collections::VecDeque;

use crate::lattice::{Dir, ModuleCoord, ModuleId};
use crate::primitives::PrimitiveOp;

const INF: u32 = u32::MAX / 2;
const ROUTING_PASSES: usize = 8;

/// Placeholder id in slides emitted by the engine, which only tracks
/// counts. The caller names the module when it replays the step.
pub(crate) const UNNAMED: ModuleId = ModuleId::MAX;

/// What a reshape should achieve: every module on a `movable` cell is
/// carried to an empty `dest` cell. With `partial` set the reshape stops
/// quietly once no destination is left or nothing can move.
#[derive(Clone, Debug)]
pub(crate) struct Goal {
    pub movable: Vec<bool>,
    pub dest: Vec<bool>,
    pub partial: bool,
}

impl Goal {
    /// Every module ends up on a cell of `mask`; when the mask holds as
    /// many cells as there are modules this fixes the final shape exactly.
    pub fn onto(mask: Vec<bool>) -> Self {
        Goal {
            movable: mask.iter().map(|&m| !m).collect(),
            dest: mask,
            partial: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("no module outside its goal can be moved (cell at {origin}, {stranded} modules stranded)")]
    Stuck { origin: ModuleCoord, stranded: usize },
    #[error("goal of cell at {origin} does not match its module count")]
    BadGoal { origin: ModuleCoord },
}

/// Occupancy of a rectangular region in local coordinates; counts are 0, 1
/// or 2.
#[derive(Clone, Debug)]
pub(crate) struct LocalCell {
    pub origin: ModuleCoord,
    pub w: i32,
    pub h: i32,
    pub occ: Vec<u8>,
    pub fixed: Vec<bool>,
    adj: Vec<[u32; 4]>,
}

struct Tunnel {
    ops: Vec<PrimitiveOp>,
}

/// Routing field: runs to a sink per cell and per entry direction, and
/// plain distance to a sink.
struct RouteState {
    claimed: Vec<bool>,
    removed: Vec<bool>,
    out: Vec<Tunnel>,
    limit: Option<u32>,
    // Set when a source within the run limit found no path; run counts only
    // grow as cells are claimed, so otherwise another pass finds nothing.
    retry: bool,
}

struct Field {
    h: Vec<u32>,
    f: Vec<[u32; 4]>,
    dist: Vec<u32>,
}

impl LocalCell {
    pub fn new(origin: ModuleCoord, w: i32, h: i32, occ: Vec<u8>, fixed: Vec<bool>) -> Self {
        let adj = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                Dir::ALL.map(|d| {
                    let (dx, dy) = d.delta();
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        u32::MAX
                    } else {
                        (ny * w + nx) as u32
                    }
                })
            })
            .collect();
        LocalCell { origin, w, h, occ, fixed, adj }
    }

    pub fn idx(&self, x: i32, y: i32) -> usize {
        (y * self.w + x) as usize
    }

    pub fn coord(&self, i: usize) -> (i32, i32) {
        (i as i32 % self.w, i as i32 / self.w)
    }

    fn global(&self, i: usize) -> ModuleCoord {
        let (x, y) = self.coord(i);
        ModuleCoord::new(self.origin.x + x, self.origin.y + y)
    }

    #[inline]
    fn neighbor(&self, i: usize, d: Dir) -> Option<usize> {
        let m = self.adj[i][d as usize];
        (m != u32::MAX).then_some(m as usize)
    }

    pub fn module_count(&self) -> usize {
        self.occ.iter().map(|&v| v as usize).sum()
    }

    fn stranded(&self, goal: &Goal) -> usize {
        self.occ.iter().zip(&goal.movable).filter(|(&o, &m)| o > 0 && m).count()
    }

    /// Reshapes the cell toward `goal`. Returns the steps in global
    /// coordinates; the cell's occupancy is updated in place.
    pub fn reshape(&mut self, goal: &Goal) -> Result<Vec<Vec<PrimitiveOp>>, EngineError> {
        let room = (0..self.occ.len()).filter(|&i| goal.dest[i] && self.occ[i] == 0).count();
        if !goal.partial && room < self.stranded(goal) {
            return Err(EngineError::BadGoal { origin: self.origin });
        }
        let mut steps: Vec<Vec<PrimitiveOp>> = Vec::new();
        let mut lent = vec![false; self.occ.len()];
        loop {
            let stranded = self.stranded(goal);
            if stranded == 0 {
                return Ok(steps);
            }
            if let Some(ops) = self.try_drop(goal) {
                for op in &ops {
                    self.apply(op);
                }
                steps.push(ops);
                continue;
            }
            let tunnels = self.plan_round(goal, &mut lent);
            if tunnels.is_empty() {
                if goal.partial {
                    return Ok(steps);
                }
                return Err(EngineError::Stuck {
                    origin: self.origin,
                    stranded,
                });
            }
            let len = tunnels.iter().map(|t| t.ops.len()).max().unwrap();
            let base = steps.len();
            steps.resize_with(base + len, Vec::new);
            for t in &tunnels {
                for (k, op) in t.ops.iter().enumerate() {
                    steps[base + k].push(*op);
                }
            }
            for t in &tunnels {
                for op in &t.ops {
                    self.apply(op);
                }
            }
        }
    }

    fn local(&self, c: ModuleCoord) -> usize {
        self.idx(c.x - self.origin.x, c.y - self.origin.y)
    }

    fn apply(&mut self, op: &PrimitiveOp) {
        match *op {
            PrimitiveOp::Compress { from, into } => {
                let (a, b) = (self.local(from), self.local(into));
                self.occ[a] -= 1;
                self.occ[b] += 1;
            }
            PrimitiveOp::Transfer { from, to } => {
                let (a, b) = (self.local(from), self.local(to));
                self.occ[a] -= 1;
                self.occ[b] += 1;
            }
            PrimitiveOp::Decompress { at, toward } => {
                let (a, b) = (self.local(at), self.local(at.step(toward, 1)));
                self.occ[a] -= 1;
                self.occ[b] += 1;
            }
            PrimitiveOp::Slide { from, dir, dist, .. } => {
                let (a, b) = (self.local(from), self.local(from.step(dir, dist)));
                self.occ[a] -= 1;
                self.occ[b] += 1;
            }
        }
    }

    /// A rigid slide of a loose chunk of stranded modules that lands more
    /// of them on destinations, if one exists. Tunnels need a chain of
    /// modules to run through; this carries material across empty gaps.
    fn try_drop(&self, goal: &Goal) -> Option<Vec<PrimitiveOp>> {
        let n = self.occ.len();
        let cand: Vec<bool> = (0..n)
            .map(|i| self.occ[i] == 1 && goal.movable[i] && !self.fixed[i])
            .collect();
        let mut best: Option<(usize, Vec<usize>, Dir, i32)> = None;
        for d in Dir::ALL {
            // Cells that can all shift one step in d together.
            let mut free = cand.clone();
            let mut stack: Vec<usize> = Vec::new();
            for i in 0..n {
                if free[i] && self.neighbor(i, d).map_or(true, |m| self.occ[m] > 0 && !free[m]) {
                    free[i] = false;
                    stack.push(i);
                }
            }
            while let Some(i) = stack.pop() {
                if let Some(b) = self.neighbor(i, d.opposite()) {
                    if free[b] {
                        free[b] = false;
                        stack.push(b);
                    }
                }
            }
            let mut seen = vec![false; n];
            for s in 0..n {
                if !free[s] || seen[s] {
                    continue;
                }
                let mut chunk = vec![s];
                seen[s] = true;
                let mut head = 0;
                while head < chunk.len() {
                    let c = chunk[head];
                    head += 1;
                    for e in Dir::ALL {
                        if let Some(m) = self.neighbor(c, e) {
                            if free[m] && !seen[m] {
                                seen[m] = true;
                                chunk.push(m);
                            }
                        }
                    }
                }
                if let Some((gain, dist)) = self.drop_gain(&chunk, &free, d, goal) {
                    if best.as_ref().map_or(true, |b| gain > b.0) {
                        best = Some((gain, chunk, d, dist));
                    }
                }
            }
        }
        let (_, chunk, d, dist) = best?;
        let ops: Vec<PrimitiveOp> = chunk
            .iter()
            .map(|&c| PrimitiveOp::Slide {
                module: UNNAMED,
                from: self.global(c),
                dir: d,
                dist,
            })
            .collect();
        let mut after = self.clone();
        for op in &ops {
            after.apply(op);
        }
        // A drop may not wedge stranded modules between two anchors where
        // no tunnel can pick them up.
        let drainable = after.stranded(goal) == 0 || !after.removable_leaves(goal).is_empty();
        (drainable && self.coarsens_to(&after)).then_some(ops)
    }

    /// Best positive gain in destination cells for sliding `chunk` in `d`,
    /// with the distance achieving it, provided some member is carried
    /// along a stationary track the whole way.
    fn drop_gain(&self, chunk: &[usize], free: &[bool], d: Dir, goal: &Goal) -> Option<(usize, i32)> {
        let mut in_chunk = vec![false; self.occ.len()];
        for &c in chunk {
            in_chunk[c] = true;
        }
        // Room ahead of every front cell.
        let mut reach = i32::MAX;
        for &c in chunk {
            let Some(m) = self.neighbor(c, d) else { return None };
            if in_chunk[m] {
                continue;
            }
            let mut t = 0;
            let mut e = c;
            while let Some(m) = self.neighbor(e, d) {
                if self.occ[m] > 0 && !in_chunk[m] {
                    break;
                }
                t += 1;
                e = m;
                if t >= reach {
                    break;
                }
            }
            reach = reach.min(t);
        }
        debug_assert!(free.len() == in_chunk.len());
        if reach == 0 || reach == i32::MAX {
            return None;
        }
        let on_dest = |t: i32| {
            chunk
                .iter()
                .filter(|&&c| {
                    let (x, y) = self.coord(c);
                    let (dx, dy) = d.delta();
                    goal.dest[self.idx(x + dx * t, y + dy * t)]
                })
                .count()
        };
        let base = on_dest(0);
        let (gain, dist) = (1..=reach).map(|t| (on_dest(t), t)).max()?;
        // Long hauls that land little tend to wedge the chunk somewhere
        // tunnels cannot drain it.
        if gain <= base || gain - base < 4 * dist as usize {
            return None;
        }
        let stationary = |i: usize| self.occ[i] > 0 && !in_chunk[i];
        let supported = chunk.iter().any(|&c| {
            d.perpendicular().iter().any(|&side| {
                let mut e = c;
                for t in 0..=dist {
                    if t > 0 {
                        e = self.neighbor(e, d).expect("within reach");
                    }
                    if !self.neighbor(e, side).is_some_and(stationary) {
                        return false;
                    }
                }
                true
            })
        });
        supported.then_some((gain - base, dist))
    }

    /// Whether `after` keeps every group of fixed cells that shared a
    /// component together and leaves no component without a fixed cell.
    fn coarsens_to(&self, after: &LocalCell) -> bool {
        let (before, _) = self.components();
        let (post, count) = after.components();
        let mut map = std::collections::HashMap::new();
        let mut anchored = vec![false; count];
        let mut any_fixed = false;
        for i in 0..self.occ.len() {
            if !self.fixed[i] {
                continue;
            }
            any_fixed = true;
            anchored[post[i] as usize] = true;
            if *map.entry(before[i]).or_insert(post[i]) != post[i] {
                return false;
            }
        }
        if any_fixed {
            anchored.iter().all(|&a| a)
        } else {
            count == 1
        }
    }

    /// Component labels of occupied cells.
    fn components(&self) -> (Vec<u32>, usize) {
        let n = self.occ.len();
        let mut label = vec![u32::MAX; n];
        let mut count = 0;
        let mut queue = Vec::new();
        for s in 0..n {
            if self.occ[s] == 0 || label[s] != u32::MAX {
                continue;
            }
            label[s] = count as u32;
            queue.clear();
            queue.push(s);
            while let Some(c) = queue.pop() {
                for d in Dir::ALL {
                    if let Some(m) = self.neighbor(c, d) {
                        if self.occ[m] > 0 && label[m] == u32::MAX {
                            label[m] = count as u32;
                            queue.push(m);
                        }
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Leaves of a spanning tree of each component that are neither fixed
    /// nor already in goal. Trees grow through goal cells first so the
    /// stranded modules hang off the outside of the tree.
    fn removable_leaves(&self, goal: &Goal) -> Vec<usize> {
        self.tree_leaves(goal, true)
    }

    /// Leaves of the spanning trees that are not fixed and not roots,
    /// restricted to stranded ones when `stranded_only` is set.
    fn tree_leaves(&self, goal: &Goal, stranded_only: bool) -> Vec<usize> {
        let n = self.occ.len();
        let (label, count) = self.components();
        let mut root = vec![usize::MAX; count];
        let mut rank = vec![3u8; count];
        for i in 0..n {
            if self.occ[i] == 0 {
                continue;
            }
            let r = if self.fixed[i] {
                0
            } else if !goal.movable[i] {
                1
            } else {
                2
            };
            let l = label[i] as usize;
            if r < rank[l] {
                rank[l] = r;
                root[l] = i;
            }
        }
        let mut visited = vec![false; n];
        let mut children = vec![0u32; n];
        let mut deque = VecDeque::new();
        for &r in &root {
            visited[r] = true;
            deque.push_back(r);
            while let Some(c) = deque.pop_front() {
                for d in Dir::ALL {
                    let Some(m) = self.neighbor(c, d) else { continue };
                    if self.occ[m] == 0 || visited[m] {
                        continue;
                    }
                    visited[m] = true;
                    children[c] += 1;
                    if !goal.movable[m] {
                        deque.push_front(m);
                    } else {
                        deque.push_back(m);
                    }
                }
            }
        }
        let roots: std::collections::HashSet<usize> = root.iter().copied().collect();
        (0..n)
            .filter(|&i| {
                self.occ[i] == 1
                    && (goal.movable[i] || !stranded_only)
                    && !self.fixed[i]
                    && children[i] == 0
                    && !roots.contains(&i)
            })
            .collect()
    }

    /// Multi-source search from the sinks (cells next to an empty goal
    /// cell). `h[c]` is the least number of straight runs needed to carry a
    /// compression from `c` to a sink; `f[c][d]` the same when the first run
    /// leaves `c` in direction `d`.
    fn run_field(&self, trav: &[bool], open: &[bool]) -> (Vec<u32>, Vec<[u32; 4]>) {
        let n = self.occ.len();
        let mut h = vec![INF; n];
        let mut frontier: Vec<usize> = (0..n)
            .filter(|&i| trav[i] && Dir::ALL.iter().any(|&d| self.neighbor(i, d).is_some_and(|m| open[m])))
            .collect();
        for &i in &frontier {
            h[i] = 0;
        }
        // Level by level: every cell a straight run away from level L is at
        // most L + 1. A ray can stop at a cell of level L or less, whose own
        // ray covers what lies beyond.
        let mut level = 0;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &c in &frontier {
                for d in Dir::ALL {
                    let mut e = c;
                    while let Some(m) = self.neighbor(e, d) {
                        if !trav[m] || h[m] <= level {
                            break;
                        }
                        if h[m] == INF {
                            h[m] = level + 1;
                            next.push(m);
                        }
                        e = m;
                    }
                }
            }
            frontier = next;
            level += 1;
        }
        // f[c][d]: runs left after stepping from c in direction d, either
        // continuing straight or starting a new run there.
        let mut f = vec![[INF; 4]; n];
        for (di, d) in Dir::ALL.into_iter().enumerate() {
            let ahead_first = matches!(d, Dir::N | Dir::E);
            for k in 0..n {
                let c = if ahead_first { n - 1 - k } else { k };
                if !trav[c] {
                    continue;
                }
                let Some(m) = self.neighbor(c, d) else { continue };
                if trav[m] {
                    f[c][di] = f[m][di].min(h[m].saturating_add(1)).min(INF);
                }
            }
        }
        (h, f)
    }

    /// Path of cells from `start` to a sink with exactly `h[start]` runs,
    /// avoiding claimed cells. Longer straight runs are tried first.
    fn trace_path(
        &self,
        start: usize,
        h: &[u32],
        f: &[[u32; 4]],
        open: &[bool],
        claimed: &[bool],
    ) -> Option<Vec<usize>> {
        let mut budget = 8 * (self.w + self.h) as usize;
        let mut path = vec![start];
        if self.trace_from(start, h, f, open, claimed, &mut path, &mut budget) {
            Some(path)
        } else {
            None
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn trace_from(
        &self,
        c: usize,
        h: &[u32],
        f: &[[u32; 4]],
        open: &[bool],
        claimed: &[bool],
        path: &mut Vec<usize>,
        budget: &mut usize,
    ) -> bool {
        let want = h[c];
        if want == 0 {
            return Dir::ALL
                .iter()
                .filter_map(|&d| self.neighbor(c, d))
                .any(|m| open[m] && !claimed[m]);
        }
        for di in 0..4 {
            if f[c][di] != want {
                continue;
            }
            let d = Dir::ALL[di];
            let mut ray = Vec::new();
            let mut stops = Vec::new();
            let mut e = c;
            while let Some(next) = self.neighbor(e, d) {
                if claimed[next] || open[next] || *budget == 0 {
                    break;
                }
                *budget -= 1;
                let stop = h[next] + 1 == want;
                if !stop && f[next][di] != want {
                    break;
                }
                ray.push(next);
                if stop {
                    stops.push(ray.len());
                }
                e = next;
            }
            for &k in stops.iter().rev() {
                let base = path.len();
                path.extend_from_slice(&ray[..k]);
                if self.trace_from(ray[k - 1], h, f, open, claimed, path, budget) {
                    return true;
                }
                path.truncate(base);
            }
        }
        false
    }

    /// Plain step distance from every traversable cell to the nearest sink.
    fn sink_distance(&self, trav: &[bool], h: &[u32]) -> Vec<u32> {
        let mut dist = vec![INF; self.occ.len()];
        let mut q = std::collections::VecDeque::new();
        for i in 0..self.occ.len() {
            if trav[i] && h[i] == 0 {
                dist[i] = 0;
                q.push_back(i);
            }
        }
        while let Some(c) = q.pop_front() {
            for d in Dir::ALL {
                if let Some(m) = self.neighbor(c, d) {
                    if trav[m] && dist[m] == INF {
                        dist[m] = dist[c] + 1;
                        q.push_back(m);
                    }
                }
            }
        }
        dist
    }

    fn plan_round(&self, goal: &Goal, lent: &mut [bool]) -> Vec<Tunnel> {
        let movable: Vec<usize> = (0..self.occ.len())
            .filter(|&i| self.occ[i] == 1 && goal.movable[i] && !self.fixed[i])
            .filter(|&i| Dir::ALL.iter().any(|&d| self.neighbor(i, d).map_or(true, |m| self.occ[m] == 0)))
            .collect();
        let tunnels = self.route(&movable, &goal.dest, true);
        if !tunnels.is_empty() {
            return tunnels;
        }
        // No simple cell can leave, for example on a thin cycle. Leaves of a
        // spanning tree always can, one at a time if need be.
        let leaves = self.removable_leaves(goal);
        let tunnels = self.route(&leaves, &goal.dest, false);
        if !tunnels.is_empty() {
            return tunnels;
        }
        for &l in &leaves {
            let tunnels = self.route(&[l], &goal.dest, false);
            if !tunnels.is_empty() {
                return tunnels;
            }
        }
        // Stranded modules may be all that holds up a piece of the goal.
        // Moving that piece's own leaves elsewhere in the goal frees them.
        let anchored = self.anchored(goal);
        let before = anchored.iter().filter(|&&a| a).count();
        let landing: Vec<bool> = (0..self.occ.len())
            .map(|i| {
                goal.dest[i]
                    && self.occ[i] == 0
                    && Dir::ALL.iter().any(|&d| self.neighbor(i, d).is_some_and(|m| anchored[m]))
            })
            .collect();
        for l in self.tree_leaves(goal, false) {
            if !goal.dest[l] || anchored[l] {
                continue;
            }
            let tunnels = self.route(&[l], &landing, false);
            if tunnels.is_empty() {
                continue;
            }
            let mut after = self.clone();
            for t in &tunnels {
                for op in &t.ops {
                    after.apply(op);
                }
            }
            if after.anchored(goal).iter().filter(|&&a| a).count() > before {
                return tunnels;
            }
        }
        if goal.partial {
            return Vec::new();
        }
        // A stranded chain of cut cells can only drain once both its ends
        // sit on goal material. Lend goal modules to grow the goal front
        // toward it; the holes are refilled from the chain later. A cell
        // takes part in at most one loan, so this cannot cycle.
        let lenders: Vec<usize> = (0..self.occ.len())
            .filter(|&i| anchored[i] && goal.dest[i] && !self.fixed[i] && self.occ[i] == 1 && !lent[i])
            .filter(|&i| Dir::ALL.iter().any(|&d| self.neighbor(i, d).is_some_and(|m| self.occ[m] == 0)))
            .collect();
        let beside: Vec<bool> = (0..self.occ.len()).map(|i| landing[i] && !lent[i]).collect();
        let mut tunnels = self.route(&lenders, &beside, true);
        tunnels.truncate(1);
        if let Some(t) = tunnels.first() {
            for op in &t.ops {
                match *op {
                    PrimitiveOp::Compress { from, .. } => lent[self.local(from)] = true,
                    PrimitiveOp::Decompress { at, toward } => lent[self.local(at.step(toward, 1))] = true,
                    _ => {}
                }
            }
        }
        tunnels
    }

    /// Cells held in place by the fixed cells through goal material, or the
    /// largest goal piece when nothing is fixed.
    fn anchored(&self, goal: &Goal) -> Vec<bool> {
        let n = self.occ.len();
        let solid = |i: usize| self.occ[i] > 0 && !goal.movable[i];
        let flood = |seeds: Vec<usize>| {
            let mut seen = vec![false; n];
            let mut stack = Vec::new();
            for s in seeds {
                if solid(s) && !seen[s] {
                    seen[s] = true;
                    stack.push(s);
                }
            }
            while let Some(c) = stack.pop() {
                for d in Dir::ALL {
                    if let Some(m) = self.neighbor(c, d) {
                        if solid(m) && !seen[m] {
                            seen[m] = true;
                            stack.push(m);
                        }
                    }
                }
            }
            seen
        };
        let fixed: Vec<usize> = (0..n).filter(|&i| self.fixed[i]).collect();
        if fixed.iter().any(|&i| solid(i)) {
            return flood(fixed);
        }
        let mut best = vec![false; n];
        let mut best_size = 0;
        let mut covered = vec![false; n];
        for i in 0..n {
            if solid(i) && !covered[i] {
                let piece = flood(vec![i]);
                let size = piece.iter().filter(|&&a| a).count();
                for (c, &p) in covered.iter_mut().zip(&piece) {
                    *c |= p;
                }
                if size > best_size {
                    best_size = size;
                    best = piece;
                }
            }
        }
        best
    }

    /// Whether emptying `c` keeps its occupied edge neighbours connected
    /// through its 3x3 window.
    fn is_simple(&self, c: usize, removed: &[bool]) -> bool {
        let (x, y) = ((c % self.w as usize) as i32, (c / self.w as usize) as i32);
        const RING: [(i32, i32); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];
        let occ: Vec<bool> = RING
            .iter()
            .map(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= self.w || ny >= self.h {
                    return false;
                }
                let i = (ny * self.w + nx) as usize;
                self.occ[i] > 0 && !removed[i]
            })
            .collect();
        let mut runs = 0;
        for k in (0..8).step_by(2) {
            // An edge neighbour starts a run if the ring position before it
            // (going backwards through a diagonal) does not connect it.
            if !occ[k] {
                continue;
            }
            let prev_diag = occ[(k + 7) % 8];
            let prev_edge = occ[(k + 6) % 8];
            if !(prev_diag && prev_edge) {
                runs += 1;
            }
        }
        runs == 1 || (runs == 0 && occ[0])
    }

    fn field(&self, trav: &[bool], open: &[bool]) -> Field {
        let (h, f) = self.run_field(trav, open);
        let dist = self.sink_distance(trav, &h);
        Field { h, f, dist }
    }

    /// Routes sources over several passes, each on a field recomputed
    /// around the tunnels already taken so later ones detour instead of
    /// giving up.
    fn route(&self, sources: &[usize], dest: &[bool], check_simple: bool) -> Vec<Tunnel> {
        let n = self.occ.len();
        let mut st = RouteState {
            claimed: vec![false; n],
            removed: vec![false; n],
            out: Vec::new(),
            limit: None,
            retry: false,
        };
        for _ in 0..ROUTING_PASSES {
            let trav: Vec<bool> = (0..n).map(|i| self.occ[i] == 1 && !st.claimed[i]).collect();
            let open: Vec<bool> = (0..n).map(|i| dest[i] && self.occ[i] == 0 && !st.claimed[i]).collect();
            let field = self.field(&trav, &open);
            let before = st.out.len();
            self.route_pass(sources, &trav, &open, &field, check_simple, &mut st);
            if st.out.len() == before || !st.retry {
                break;
            }
            st.retry = false;
        }
        st.out
    }

    fn route_pass(
        &self,
        sources: &[usize],
        trav: &[bool],
        open: &[bool],
        field: &Field,
        check_simple: bool,
        st: &mut RouteState,
    ) {
        let Field { h, f, dist } = field;
        let mut blocked: Vec<bool> = (0..trav.len()).map(|i| st.claimed[i] || !(trav[i] || open[i])).collect();
        let runs_from = |s: usize, blocked: &[bool]| {
            Dir::ALL
                .iter()
                .filter_map(|&d| self.neighbor(s, d))
                .filter(|&m| trav[m] && !blocked[m] && h[m] < INF)
                .map(|m| h[m])
                .min()
        };
        // Far sources first: their paths hug the outside, nearer sources
        // nest inside them, and the material near the sinks stays put as a
        // bridge for the rest.
        let mut cand: Vec<(std::cmp::Reverse<u32>, usize)> = sources
            .iter()
            .filter(|&&s| !st.claimed[s] && trav[s] && dist[s] < INF)
            .map(|&s| (std::cmp::Reverse(dist[s]), s))
            .collect();
        cand.sort();
        let Some(shortest) = cand.iter().filter_map(|&(_, s)| runs_from(s, &blocked)).min() else { return };
        let limit = *st.limit.get_or_insert(shortest + 2);
        for (_, s) in cand {
            if blocked[s] {
                continue;
            }
            let Some(runs) = runs_from(s, &blocked) else {
                st.retry = true;
                continue;
            };
            if runs > limit || (check_simple && !self.is_simple(s, &st.removed)) {
                continue;
            }
            blocked[s] = true;
            let mut found = None;
            for d in Dir::ALL {
                let Some(p0) = self.neighbor(s, d) else { continue };
                if !trav[p0] || blocked[p0] || h[p0] != runs {
                    continue;
                }
                if let Some(path) = self.trace_path(p0, h, f, open, &blocked) {
                    let mut seen: Vec<usize> = path.clone();
                    seen.sort_unstable();
                    seen.dedup();
                    if seen.len() == path.len() {
                        found = Some(path);
                        break;
                    }
                }
            }
            let Some(path) = found else {
                blocked[s] = false;
                st.retry = true;
                continue;
            };
            let last = *path.last().unwrap();
            let t = Dir::ALL
                .iter()
                .filter_map(|&d| self.neighbor(last, d))
                .find(|&m| open[m] && !blocked[m])
                .expect("trace ends beside a free destination");
            for &c in path.iter().chain([&s, &t]) {
                blocked[c] = true;
                st.claimed[c] = true;
            }
            st.removed[s] = true;
            st.out.push(self.emit(s, &path, t));
        }
    }

    fn emit(&self, src: usize, path: &[usize], dst: usize) -> Tunnel {
        let coords: Vec<ModuleCoord> = path.iter().map(|&c| self.global(c)).collect();
        let mut ops = vec![PrimitiveOp::Compress {
            from: self.global(src),
            into: coords[0],
        }];
        for (a, b) in crate::primitives::straight_runs(&coords) {
            ops.push(PrimitiveOp::Transfer { from: a, to: b });
        }
        let last = *coords.last().unwrap();
        ops.push(PrimitiveOp::Decompress {
            at: last,
            toward: last.dir_to(self.global(dst)).expect("adjacent"),
        });
        Tunnel { ops }
    }
}
