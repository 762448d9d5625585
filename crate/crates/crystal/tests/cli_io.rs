mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use crystal::cli_io::{
    block_grid_of, parse_block_grid, parse_trace, render_frames, replay_trace, write_block_grid, write_trace, GridError,
};
use crystal::lattice::{BlockGrid, Configuration};
use crystal::planner::canonicalize;
use crystal::primitives::replay;

#[test]
fn parse_single_block() {
    let g = parse_block_grid("crystal v1 1 1\n#").unwrap();
    assert_eq!(g, BlockGrid::from_rows(&[vec![true]]));
}

#[test]
fn parse_row_with_gap() {
    let g = parse_block_grid("crystal v1 1 2\n#.").unwrap();
    assert_eq!(g, BlockGrid::from_rows(&[vec![true, false]]));
}

#[test]
fn ragged_row_reports_location() {
    assert_eq!(
        parse_block_grid("crystal v1 2 3\n###\n##\n").unwrap_err(),
        GridError::RaggedRows { line: 3, col: 3 }
    );
    assert_eq!(
        parse_block_grid("crystal v1 2 2\n##\n###\n").unwrap_err(),
        GridError::RaggedRows { line: 3, col: 3 }
    );
    assert!(matches!(
        parse_block_grid("crystal v1 3 1\n#\n#\n").unwrap_err(),
        GridError::RaggedRows { .. }
    ));
}

#[test]
fn header_and_content_errors() {
    assert!(matches!(parse_block_grid("").unwrap_err(), GridError::BadHeader { line: 1, .. }));
    assert!(matches!(parse_block_grid("crystal v2 1 1\n#").unwrap_err(), GridError::BadHeader { .. }));
    assert!(matches!(parse_block_grid("crystal v1 x 1\n#").unwrap_err(), GridError::BadHeader { .. }));
    assert_eq!(parse_block_grid("crystal v1 1 2\n..").unwrap_err(), GridError::Empty);
    assert_eq!(
        parse_block_grid("crystal v1 1 2\n#x").unwrap_err(),
        GridError::BadCell { line: 2, col: 2, found: 'x' }
    );
    assert_eq!(
        parse_block_grid("crystal v1 2 2\n#.\n.#\n").unwrap_err(),
        GridError::NotConnected { line: 3, col: 2 }
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_files_round_trip(seed in 0u64..1000, rows in 1usize..9, cols in 1usize..9, fill in 1usize..64) {
        let g = common::random_grid(seed, rows, cols, fill);
        let text = write_block_grid(&g);
        prop_assert_eq!(parse_block_grid(&text).unwrap(), g.clone());
        let cfg = Configuration::from_block_grid(&g).unwrap();
        let cropped = block_grid_of(&cfg).unwrap();
        prop_assert_eq!(Configuration::from_block_grid(&cropped).unwrap(), cfg);
    }
}

fn small_plan() -> (Configuration, Vec<crystal::primitives::ParallelStep>) {
    let cfg = Configuration::from_block_grid(&parse_block_grid("crystal v1 2 2\n##\n#.\n").unwrap()).unwrap();
    let (plan, _) = canonicalize(&cfg).unwrap();
    (cfg, plan.steps)
}

#[test]
fn empty_trace_has_no_lines() {
    let mut out = Vec::new();
    assert_eq!(write_trace(&[], &mut out).unwrap(), 0);
    assert!(out.is_empty());
    assert!(parse_trace("").unwrap().is_empty());
}

#[test]
fn single_step_trace_round_trips() {
    let (_, steps) = small_plan();
    let mut out = Vec::new();
    let bytes = write_trace(&steps[..1], &mut out).unwrap();
    assert_eq!(bytes, out.len());
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), 1);
    let back = parse_trace(&text).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].ops.len(), steps[0].ops.len());
    assert_eq!(back[0].tag, steps[0].tag);
}

#[test]
fn trace_write_parse_write_is_byte_identical() {
    let (cfg, steps) = small_plan();
    let mut first = Vec::new();
    write_trace(&steps, &mut first).unwrap();
    let parsed = parse_trace(std::str::from_utf8(&first).unwrap()).unwrap();
    let mut second = Vec::new();
    write_trace(&parsed, &mut second).unwrap();
    assert_eq!(first, second);
    let direct = replay(&cfg, &steps).unwrap();
    let via_file = replay_trace(&cfg, &parsed).unwrap();
    assert!(direct.same_shape(&via_file));
}

#[test]
fn trace_step_numbers_must_count_up() {
    let line = r#"{"step":1,"tag":"x","ops":[]}"#;
    assert!(parse_trace(line).is_err());
    let bad_dir = r#"{"step":0,"tag":"x","ops":[{"kind":"slide","from":[0,0],"dir":"Q","dist":1}]}"#;
    assert!(parse_trace(bad_dir).is_err());
}

fn svg_cells(svg: &str) -> BTreeSet<(i32, i32)> {
    // Modules are drawn as 4 px squares, y flipped.
    let mut out = BTreeSet::new();
    for line in svg.lines() {
        let num = |key: &str| -> Option<i32> {
            let at = line.find(key)? + key.len();
            line[at..].split(|c: char| !c.is_ascii_digit()).next()?.parse().ok()
        };
        if line.starts_with("<rect class=\"module\"") {
            out.insert((num("x=\"").unwrap() / 4, num("y=\"").unwrap() / 4));
        } else if line.starts_with("<g class=\"compressed\"") {
            let pts = line.split("points=\"").nth(1).unwrap();
            let first: Vec<i32> = pts.split([' ', ','].as_ref()).take(2).map(|v| v.parse().unwrap()).collect();
            out.insert((first[0] / 4, first[1] / 4));
        }
    }
    out
}

#[test]
fn frame_counts() {
    let (cfg, steps) = small_plan();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(render_frames(&cfg, &[], dir.path(), 1).unwrap(), 1);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(render_frames(&cfg, &steps[..6], dir.path(), 2).unwrap(), 4);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 4);
}

#[test]
fn frames_show_replayed_states() {
    let (cfg, steps) = small_plan();
    let every = 7;
    let dir = tempfile::tempdir().unwrap();
    let n = render_frames(&cfg, &steps, dir.path(), every).unwrap();
    assert_eq!(n, (steps.len() + 1).div_ceil(every));
    let side = cfg.side();
    for k in 0..n {
        let svg = std::fs::read_to_string(dir.path().join(format!("frame_{k:05}.svg"))).unwrap();
        let state = replay(&cfg, &steps[..k * every]).unwrap();
        let want: BTreeSet<_> = state.occupied_cells().into_iter().map(|p| (p.x, side - 1 - p.y)).collect();
        assert_eq!(svg_cells(&svg), want, "frame {k}");
    }
}
