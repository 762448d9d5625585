//! Acceptance checks. All criteria run in one test so their timings are
//! not disturbed by other tests running on the same core.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use crystal::cli_io::{parse_trace, write_block_grid, write_trace, TraceOp, TraceRecord};
use crystal::lattice::{count_in, BlockGrid, Cell, CellClass, Configuration, Dir, ModuleCoord, Rect};
use crystal::macros;
use crystal::planner::{canonicalize, compute_metrics, reconfigure, reverse_plan, Plan};
use crystal::primitives::{apply_step_mut, ParallelStep, PrimitiveOp};

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

fn check(id: usize, limit_secs: f64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t0 = Instant::now();
    let (ok, detail) = f();
    let elapsed = t0.elapsed();
    let limit = Duration::from_secs_f64(limit_secs);
    let o = Outcome {
        id,
        pass: ok && elapsed < limit,
        detail,
        elapsed,
        limit,
    };
    println!(
        "criterion {:>2}: {}  {} ({:.2}s of {:.0}s)",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        o.elapsed.as_secs_f64(),
        o.limit.as_secs_f64()
    );
    o
}

fn shape(cfg: &Configuration) -> BTreeSet<(i32, i32)> {
    cfg.occupied_cells().into_iter().map(|c| (c.x, c.y)).collect()
}

fn replay_all(cfg: &Configuration, steps: &[ParallelStep]) -> Configuration {
    let mut cur = cfg.clone();
    for s in steps {
        apply_step_mut(&mut cur, s).unwrap();
    }
    cur
}

/// Pairs of distinct connected shapes with equal module count and equal
/// bounding square.
fn matched_pairs(n: usize) -> Vec<(Configuration, Configuration)> {
    let mut out = Vec::new();
    let mut seed = 0u64;
    while out.len() < n {
        seed += 1;
        let count = 2 + (seed % 9) as usize;
        let a = Configuration::from_block_grid(&common::random_grid(seed, 4, 4, count)).unwrap();
        let b = Configuration::from_block_grid(&common::random_grid(seed + 50_000, 4, 4, count)).unwrap();
        if a.side() == b.side() && a.module_count() == b.module_count() && !a.same_shape(&b) {
            out.push((a, b));
        }
    }
    out
}

fn staircase_steps() -> (bool, String) {
    let mut bad = Vec::new();
    let mut total = 0;
    for k1 in 2..=12 {
        for k2 in 1..k1 {
            total += 1;
            let r = Rect::new(0, 0, k1, k2);
            let cfg = Configuration::from_cells(32, &r.cells().collect::<Vec<_>>()).unwrap();
            let seq = macros::staircase(&cfg, r, r.origin).unwrap();
            let end = replay_all(&cfg, &seq.steps);
            let want: BTreeSet<_> = Rect::new(0, 0, k2, k1).cells().map(|c| (c.x, c.y)).collect();
            if seq.steps.len() != 3 || shape(&end) != want {
                bad.push(format!("{k1}x{k2}:{}", seq.steps.len()));
            }
        }
    }
    let detail = format!(
        "staircase exact 3 steps and transposed: {}/{} cases; off: {}",
        total - bad.len(),
        total,
        if bad.is_empty() { "none".into() } else { bad.join(" ") }
    );
    (bad.is_empty(), detail)
}

fn base_case() -> (bool, String) {
    let cfg = Configuration::from_block_grid(&BlockGrid::from_rows(&[vec![true]])).unwrap();
    let (_, end) = canonicalize(&cfg).unwrap();
    let cell = Cell::new(ModuleCoord::new(0, 0), 0);
    let boundary: BTreeSet<_> = cell.boundary_positions().into_iter().collect();
    let on = end.occupied_cells().iter().filter(|c| boundary.contains(c)).count();
    let inside = end.module_count() - on;
    let class = crystal::lattice::classify_cell(&end, &cell);
    (
        class == CellClass::Ring && on == 60 && inside == 4,
        format!("one block in a 16x16 cell: {class:?}, {on} boundary + {inside} interior"),
    )
}

fn constant_macros() -> (bool, String) {
    let mut counts: Vec<(&str, Vec<usize>)> = Vec::new();
    let scales = [1, 2, 4];

    let mut e = Vec::new();
    for s in scales {
        let (w, h, strip) = (2 * s, 2 * s, 8 * s);
        let left = Rect::new(0, 0, 1, strip);
        let right = Rect::new(w + 1, 0, 1, strip);
        let cargo = Rect::new(1, strip - h, w, h);
        let mut cells: Vec<_> = left.cells().chain(right.cells()).chain(cargo.cells()).collect();
        cells.extend((1..=w).map(|x| ModuleCoord::new(x, 0)));
        let cfg = Configuration::from_cells(64, &cells).unwrap();
        let seq = macros::elevator(&cfg, cargo, strip - h - 1, left, right).unwrap();
        replay_all(&cfg, &seq.steps);
        e.push(seq.steps.len());
    }
    counts.push(("elevator", e));

    let mut c = Vec::new();
    for s in scales {
        let r = Rect::new(1, 1, 4 * s, 3 * s);
        let mut cells: Vec<_> = r.cells().filter(|p| p.x == 1 || p.y == 1).collect();
        cells.extend((1..=r.x1()).map(|x| ModuleCoord::new(x, r.y1())));
        cells.extend((1..r.y1()).map(|y| ModuleCoord::new(r.x1(), y)));
        let cfg = Configuration::from_cells(64, &cells).unwrap();
        let seq = macros::corner_pop(&cfg, r).unwrap();
        replay_all(&cfg, &seq.steps);
        c.push(seq.steps.len());
    }
    counts.push(("corner_pop", c));

    let mut p = Vec::new();
    for s in scales {
        let h = Rect::new(0, 0, 12 * s, 1);
        let mut cells: Vec<_> = h.cells().collect();
        for (x, l) in [(s, s), (4 * s, 2 * s), (9 * s, s)] {
            cells.extend((x..x + l).map(|x| ModuleCoord::new(x, 1)));
        }
        let cfg = Configuration::from_cells(64, &cells).unwrap();
        let seq = macros::parallel_tunnel(&cfg, h, Dir::N, None).unwrap();
        replay_all(&cfg, &seq.steps);
        p.push(seq.steps.len());
    }
    counts.push(("parallel_tunnel", p));

    let ok = counts.iter().all(|(_, v)| v.windows(2).all(|w| w[0] == w[1]));
    let detail = counts
        .iter()
        .map(|(n, v)| format!("{n} {v:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    (ok, format!("steps at scales 1,2,4: {detail}"))
}

/// Independent step check: legal, connected, conserving.
fn validity(plans: &mut Vec<(Configuration, Plan)>) -> (bool, String) {
    let mut steps = 0usize;
    let mut failures = Vec::new();
    for i in 0..200u64 {
        let cfg = common::corpus_config(i);
        let plan = match canonicalize(&cfg) {
            Ok((p, _)) => p,
            Err(e) => {
                failures.push(format!("#{i}: {e}"));
                continue;
            }
        };
        // Every step is validated, which covers collisions, substrate and
        // connectivity; conservation and a full flood are checked again at
        // each level boundary.
        let mut cur = cfg.clone();
        'levels: for range in &plan.levels {
            for k in range.clone() {
                if let Err(v) = apply_step_mut(&mut cur, &plan.steps[k]) {
                    failures.push(format!("#{i} step {k}: {v}"));
                    break 'levels;
                }
            }
            if !cur.is_connected() || count_in(&cur, &Rect::new(0, 0, cur.side(), cur.side())) != cfg.module_count() {
                failures.push(format!("#{i} level ending at step {}: disconnected or not conserving", range.end));
                break;
            }
        }
        steps += plan.steps.len();
        plans.push((cfg, plan));
    }
    (
        failures.is_empty(),
        format!(
            "200 corpus plans, {steps} steps, {} failing{}",
            failures.len(),
            failures.first().map(|f| format!(" (first {f})")).unwrap_or_default()
        ),
    )
}

fn uniqueness() -> (bool, String) {
    let pairs = matched_pairs(50);
    let mut same = 0;
    for (a, b) in &pairs {
        let (_, ca) = canonicalize(a).unwrap();
        let (_, cb) = canonicalize(b).unwrap();
        if shape(&ca) == shape(&cb) && ca.compressed_count() == 0 && cb.compressed_count() == 0 {
            same += 1;
        }
    }
    (same == pairs.len(), format!("{same}/{} pairs reach identical canonical shapes", pairs.len()))
}

fn square(h: u32) -> Configuration {
    let n = 1usize << h;
    Configuration::from_block_grid(&BlockGrid::from_rows(&vec![vec![true; n]; n])).unwrap()
}

fn square_family() -> Vec<(u32, Configuration, u64, u64)> {
    (0..=4)
        .map(|h| {
            let cfg = square(h);
            let (plan, _) = canonicalize(&cfg).unwrap();
            let m = compute_metrics(&plan, &cfg);
            (h, cfg, m.parallel_steps, m.module_ops)
        })
        .collect()
}

fn makespan() -> (bool, String) {
    let fam = square_family();
    let steps: Vec<f64> = fam.iter().map(|f| f.2 as f64).collect();
    let inc: Vec<f64> = steps.windows(2).map(|w| w[1] - w[0]).collect();
    let max_inc = inc.iter().cloned().fold(f64::MIN, f64::max);
    let min_inc = inc.iter().cloned().fold(f64::MAX, f64::min);
    let bounded = max_inc <= 2.0 * min_inc;
    let hs: Vec<f64> = fam.iter().map(|f| f.0 as f64).collect();
    let n = hs.len() as f64;
    let (mh, ms) = (hs.iter().sum::<f64>() / n, steps.iter().sum::<f64>() / n);
    let slope = hs.iter().zip(&steps).map(|(h, s)| (h - mh) * (s - ms)).sum::<f64>()
        / hs.iter().map(|h| (h - mh).powi(2)).sum::<f64>();
    let icpt = ms - slope * mh;
    let resid = hs.iter().zip(&steps).map(|(h, s)| (s - icpt - slope * h).abs()).fold(0.0, f64::max);
    let range = steps.iter().cloned().fold(f64::MIN, f64::max) - steps.iter().cloned().fold(f64::MAX, f64::min);
    let linear = resid <= 0.1 * range;
    (
        bounded && linear,
        format!(
            "steps {steps:?}, increments {inc:?} (max <= 2*min: {bounded}), fit residual {resid:.1} vs range {range:.1} (<= 10%: {linear})"
        ),
    )
}

fn work() -> (bool, String) {
    let fam = square_family();
    let ratios: Vec<f64> = fam
        .iter()
        .map(|(h, cfg, _, ops)| *ops as f64 / (cfg.module_count() as f64 * (*h as f64 + 1.0)))
        .collect();
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let spread = if min > 0.0 { max / min } else { f64::INFINITY };
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    (
        spread <= 3.0,
        format!("module_ops/(count*(h+1)) = [{}], max/min {spread:.2}", shown.join(", ")),
    )
}

fn end_to_end() -> (bool, String) {
    let pairs = matched_pairs(25);
    let mut exact = 0;
    let mut outside = 0;
    for (s, t) in &pairs {
        let plan = reconfigure(s, t).unwrap();
        let side = s.side();
        let inside = |c: ModuleCoord| (0..side).contains(&c.x) && (0..side).contains(&c.y);
        if plan.steps.iter().flat_map(|st| &st.ops).any(|op| !op.footprint().into_iter().all(inside)) {
            outside += 1;
        }
        if shape(&replay_all(s, &plan.steps)) == shape(t) {
            exact += 1;
        }
    }
    (
        exact == pairs.len() && outside == 0,
        format!("{exact}/{} pairs end at T, {outside} plans write outside the square", pairs.len()),
    )
}

fn reversal(plans: &[(Configuration, Plan)]) -> (bool, String) {
    let mut ok = 0;
    for (cfg, plan) in plans {
        let end = replay_all(cfg, &plan.steps);
        if replay_all(&end, &reverse_plan(plan).steps) == *cfg {
            ok += 1;
        }
    }
    (ok == plans.len(), format!("{ok}/{} reversed plans recover the start exactly", plans.len()))
}

fn trace_text(steps: &[ParallelStep]) -> String {
    let mut out = Vec::new();
    write_trace(steps, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

/// Ten illegal edits of one trace: dropped ops, duplicated destinations and
/// teleported modules.
fn mutations(cfg: &Configuration, text: &str) -> Vec<(String, String)> {
    let records: Vec<TraceRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let steps = parse_trace(text).unwrap();
    let dump = |rs: &[TraceRecord]| rs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect::<String>();
    let mut out = Vec::new();

    // A compression whose cell is used by the next step.
    let mut dropped = 0;
    for k in 0..records.len() - 1 {
        if dropped == 4 {
            break;
        }
        for (j, op) in steps[k].ops.iter().enumerate() {
            if let PrimitiveOp::Compress { into, .. } = *op {
                let used = steps[k + 1].ops.iter().any(|n| n.source() == into);
                if used {
                    let mut rs = records.clone();
                    rs[k].ops.remove(j);
                    out.push((format!("dropped compress in step {k}"), dump(&rs)));
                    dropped += 1;
                    break;
                }
            }
        }
    }

    // The same op twice in one step.
    let mut dup = 0;
    for k in (0..records.len()).step_by(7) {
        if dup == 3 {
            break;
        }
        if let Some(op) = records[k].ops.first().cloned() {
            let mut rs = records.clone();
            rs[k].ops.push(op);
            out.push((format!("duplicated destination in step {k}"), dump(&rs)));
            dup += 1;
        }
    }

    // An op whose source is an empty cell far from the robot.
    let side = cfg.side();
    let hole = (0..side * side)
        .rev()
        .map(|i| ModuleCoord::new(i % side, i / side))
        .find(|&c| !cfg.is_occupied(c) && c.neighbors().iter().all(|&n| !cfg.in_bounds(n) || !cfg.is_occupied(n)))
        .expect("a vacant cell away from the robot");
    let far = [hole.x, hole.y];
    for k in [0, records.len() / 2, records.len() - 1].into_iter().take(3) {
        let mut rs = records.clone();
        match &mut rs[k].ops[0] {
            TraceOp::Slide { from, .. } | TraceOp::Compress { from, .. } | TraceOp::Transfer { from, .. } => *from = far,
            TraceOp::Decompress { at, .. } => *at = far,
        }
        out.push((format!("teleported module in step {k}"), dump(&rs)));
    }
    out
}

fn verification(plans: &[(Configuration, Plan)]) -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_crystal");
    let verify = |grid: &std::path::Path, trace: &std::path::Path| {
        Command::new(bin).arg("verify").arg(grid).arg(trace).output().unwrap().status.code()
    };
    // The smallest corpus plans plus two reconfigurations.
    let mut order: Vec<usize> = (0..plans.len()).collect();
    order.sort_by_key(|&i| plans[i].1.steps.len());
    let mut emitted: Vec<(Configuration, Vec<ParallelStep>)> =
        order.iter().take(10).map(|&i| (plans[i].0.clone(), plans[i].1.steps.clone())).collect();
    for (s, t) in matched_pairs(2) {
        emitted.push((s.clone(), reconfigure(&s, &t).unwrap().steps));
    }
    let mut accepted = 0;
    for (k, (cfg, steps)) in emitted.iter().enumerate() {
        let grid = dir.path().join(format!("{k}.grid"));
        let trace = dir.path().join(format!("{k}.jsonl"));
        fs::write(&grid, write_block_grid(&crystal::cli_io::block_grid_of(cfg).unwrap())).unwrap();
        fs::write(&trace, trace_text(steps)).unwrap();
        if verify(&grid, &trace) == Some(0) {
            accepted += 1;
        }
    }
    // Mutate the shortest emitted trace that has room for ten edits.
    let k = (0..emitted.len()).find(|&k| emitted[k].1.len() >= 30).expect("a trace of 30 steps");
    let (cfg, steps) = &emitted[k];
    let grid = dir.path().join(format!("{k}.grid"));
    let muts = mutations(cfg, &trace_text(steps));
    let mut rejected = 0;
    let mut missed = Vec::new();
    for (k, (what, text)) in muts.iter().enumerate() {
        let trace = dir.path().join(format!("mut{k}.jsonl"));
        fs::write(&trace, text).unwrap();
        if verify(&grid, &trace) == Some(3) {
            rejected += 1;
        } else {
            missed.push(what.clone());
        }
    }
    (
        accepted == emitted.len() && rejected == 10 && muts.len() == 10,
        format!(
            "{accepted}/{} traces accepted, {rejected}/{} mutations rejected with exit 3{}",
            emitted.len(),
            muts.len(),
            if missed.is_empty() { String::new() } else { format!(" (missed: {})", missed.join("; ")) }
        ),
    )
}

#[test]
fn acceptance() {
    let mut plans = Vec::new();
    let outcomes = vec![
        check(1, 1.0, staircase_steps),
        check(2, 1.0, base_case),
        check(3, 5.0, constant_macros),
        check(4, 120.0, || validity(&mut plans)),
        check(5, 60.0, uniqueness),
        check(6, 120.0, makespan),
        check(7, 120.0, work),
        check(8, 120.0, end_to_end),
        check(9, 60.0, || reversal(&plans)),
        check(10, 30.0, || verification(&plans)),
    ];
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("acceptance: {}/{} criteria pass", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
