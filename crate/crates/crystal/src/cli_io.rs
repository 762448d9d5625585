//! Block-grid files, JSONL step traces and SVG frames.
//!
//! A grid file is a header `crystal v1 <rows> <cols>` followed by `rows`
//! lines of `#` (block) and `.` (empty), top row first. A trace has one
//! JSON object per parallel step.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{BlockGrid, Configuration, Dir, ModuleCoord, Occupancy, BLOCK_MODULES};
use crate::primitives::{apply_step_mut, ParallelStep, PrimitiveOp, Violation};

const HEADER: &str = "crystal v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("line {line}: bad header, expected `{HEADER} <rows> <cols>`: {detail}")]
    BadHeader { line: usize, detail: String },
    #[error("line {line}, column {col}: row does not match the header size")]
    RaggedRows { line: usize, col: usize },
    #[error("line {line}, column {col}: unexpected character {found:?}")]
    BadCell { line: usize, col: usize, found: char },
    #[error("line {line}, column {col}: block is not connected to the first block")]
    NotConnected { line: usize, col: usize },
    #[error("grid holds no blocks")]
    Empty,
}

/// Parses a block grid. Lines and columns in errors count from 1.
pub fn parse_block_grid(text: &str) -> Result<BlockGrid, GridError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(GridError::BadHeader {
        line: 1,
        detail: "file is empty".into(),
    })?;
    let bad = |detail: &str| GridError::BadHeader {
        line: hline + 1,
        detail: detail.into(),
    };
    let rest = header.trim().strip_prefix(HEADER).ok_or_else(|| bad("missing magic"))?;
    let dims: Vec<&str> = rest.split_whitespace().collect();
    let [rows, cols] = dims[..] else {
        return Err(bad("expected two sizes"));
    };
    let rows: usize = rows.parse().map_err(|_| bad("row count is not a number"))?;
    let cols: usize = cols.parse().map_err(|_| bad("column count is not a number"))?;
    if rows == 0 || cols == 0 {
        return Err(bad("sizes must be positive"));
    }

    let mut grid = BlockGrid::new(rows, cols);
    let mut lineno = Vec::with_capacity(rows);
    for (i, line) in lines {
        let row = lineno.len();
        let line = line.trim_end();
        if row == rows {
            return Err(GridError::RaggedRows { line: i + 1, col: 1 });
        }
        for (col, ch) in line.chars().enumerate() {
            if col >= cols {
                return Err(GridError::RaggedRows {
                    line: i + 1,
                    col: col + 1,
                });
            }
            match ch {
                '#' => grid.set(row, col, true),
                '.' => {}
                found => {
                    return Err(GridError::BadCell {
                        line: i + 1,
                        col: col + 1,
                        found,
                    })
                }
            }
        }
        let width = line.chars().count();
        if width != cols {
            return Err(GridError::RaggedRows {
                line: i + 1,
                col: width + 1,
            });
        }
        lineno.push(i + 1);
    }
    if lineno.len() != rows {
        return Err(GridError::RaggedRows {
            line: text.lines().count() + 1,
            col: 1,
        });
    }
    if grid.count() == 0 {
        return Err(GridError::Empty);
    }
    if let Some((row, col)) = first_unreached(&grid) {
        return Err(GridError::NotConnected {
            line: lineno[row],
            col: col + 1,
        });
    }
    Ok(grid)
}

/// First block, in reading order, that the flood from the first block misses.
fn first_unreached(grid: &BlockGrid) -> Option<(usize, usize)> {
    let (rows, cols) = (grid.rows(), grid.cols());
    let cells: Vec<(usize, usize)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| grid.get(r, c))
        .collect();
    let mut seen = vec![false; rows * cols];
    let mut stack = vec![cells[0]];
    seen[cells[0].0 * cols + cells[0].1] = true;
    while let Some((r, c)) = stack.pop() {
        let near = [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ];
        for (nr, nc) in near {
            if nr < rows && nc < cols && grid.get(nr, nc) && !seen[nr * cols + nc] {
                seen[nr * cols + nc] = true;
                stack.push((nr, nc));
            }
        }
    }
    cells.into_iter().find(|&(r, c)| !seen[r * cols + c])
}

pub fn write_block_grid(grid: &BlockGrid) -> String {
    let mut out = format!("{HEADER} {} {}\n", grid.rows(), grid.cols());
    for row in 0..grid.rows() {
        out.extend((0..grid.cols()).map(|col| if grid.get(row, col) { '#' } else { '.' }));
        out.push('\n');
    }
    out
}

/// The block grid of a configuration made of whole, aligned blocks,
/// cropped to its bounding box.
pub fn block_grid_of(cfg: &Configuration) -> Option<BlockGrid> {
    let cells = cfg.occupied_cells();
    if cells.is_empty() || cfg.compressed_count() > 0 {
        return None;
    }
    let blocks: Vec<(i32, i32)> = cells
        .iter()
        .filter(|c| c.x % BLOCK_MODULES == 0 && c.y % BLOCK_MODULES == 0)
        .map(|c| (c.x / BLOCK_MODULES, c.y / BLOCK_MODULES))
        .collect();
    if blocks.len() * (BLOCK_MODULES * BLOCK_MODULES) as usize != cells.len() {
        return None;
    }
    for &(bx, by) in &blocks {
        for dy in 0..BLOCK_MODULES {
            for dx in 0..BLOCK_MODULES {
                let c = ModuleCoord::new(bx * BLOCK_MODULES + dx, by * BLOCK_MODULES + dy);
                if !cfg.is_occupied(c) {
                    return None;
                }
            }
        }
    }
    let x0 = blocks.iter().map(|b| b.0).min()?;
    let y0 = blocks.iter().map(|b| b.1).min()?;
    let x1 = blocks.iter().map(|b| b.0).max()?;
    let y1 = blocks.iter().map(|b| b.1).max()?;
    let mut grid = BlockGrid::new((y1 - y0 + 1) as usize, (x1 - x0 + 1) as usize);
    for (bx, by) in blocks {
        grid.set((y1 - by) as usize, (bx - x0) as usize, true);
    }
    Some(grid)
}

/// One op of a trace line. Slides carry no module id; a replayer names
/// them after the module standing at the source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TraceOp {
    Slide { from: [i32; 2], dir: char, dist: i32 },
    Compress { from: [i32; 2], into: [i32; 2] },
    Decompress { at: [i32; 2], dir: char },
    Transfer { from: [i32; 2], to: [i32; 2] },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub step: usize,
    pub tag: String,
    pub ops: Vec<TraceOp>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn xy(c: ModuleCoord) -> [i32; 2] {
    [c.x, c.y]
}

fn at(p: [i32; 2]) -> ModuleCoord {
    ModuleCoord::new(p[0], p[1])
}

impl From<&PrimitiveOp> for TraceOp {
    fn from(op: &PrimitiveOp) -> Self {
        match *op {
            PrimitiveOp::Slide { from, dir, dist, .. } => TraceOp::Slide {
                from: xy(from),
                dir: dir.as_char(),
                dist,
            },
            PrimitiveOp::Compress { from, into } => TraceOp::Compress {
                from: xy(from),
                into: xy(into),
            },
            PrimitiveOp::Decompress { at, toward } => TraceOp::Decompress {
                at: xy(at),
                dir: toward.as_char(),
            },
            PrimitiveOp::Transfer { from, to } => TraceOp::Transfer {
                from: xy(from),
                to: xy(to),
            },
        }
    }
}

impl TraceOp {
    /// The op, with slides naming no module.
    pub fn to_op(&self) -> Option<PrimitiveOp> {
        Some(match *self {
            TraceOp::Slide { from, dir, dist } => PrimitiveOp::slide(UNNAMED, at(from), Dir::from_char(dir)?, dist),
            TraceOp::Compress { from, into } => PrimitiveOp::Compress {
                from: at(from),
                into: at(into),
            },
            TraceOp::Decompress { at: p, dir } => PrimitiveOp::Decompress {
                at: at(p),
                toward: Dir::from_char(dir)?,
            },
            TraceOp::Transfer { from, to } => PrimitiveOp::Transfer {
                from: at(from),
                to: at(to),
            },
        })
    }
}

/// Slide id of a parsed trace before replay names it.
pub const UNNAMED: u32 = u32::MAX;

/// Writes one line per step and returns the byte count.
pub fn write_trace(steps: &[ParallelStep], sink: &mut impl Write) -> io::Result<usize> {
    let mut bytes = 0;
    for (i, step) in steps.iter().enumerate() {
        let mut step = step.clone();
        step.sort();
        let record = TraceRecord {
            step: i,
            tag: step.tag.clone(),
            ops: step.ops.iter().map(TraceOp::from).collect(),
        };
        let mut line = serde_json::to_string(&record).map_err(io::Error::other)?;
        line.push('\n');
        sink.write_all(line.as_bytes())?;
        bytes += line.len();
    }
    Ok(bytes)
}

pub fn parse_trace(text: &str) -> Result<Vec<ParallelStep>, TraceError> {
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| TraceError::Parse { line: i + 1, detail };
        let record: TraceRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if record.step != steps.len() {
            return Err(err(format!("expected step {}, found {}", steps.len(), record.step)));
        }
        let ops = record
            .ops
            .iter()
            .map(|o| o.to_op().ok_or_else(|| err(format!("bad direction in {o:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        steps.push(ParallelStep::new(record.tag, ops));
    }
    Ok(steps)
}

/// Replays a parsed trace, naming every slide after the module standing
/// at its source. Returns the final state or the first illegal step.
pub fn replay_trace(cfg: &Configuration, steps: &[ParallelStep]) -> Result<Configuration, (usize, Violation)> {
    let mut cur = cfg.clone();
    for (i, step) in steps.iter().enumerate() {
        let mut step = step.clone();
        for op in &mut step.ops {
            if let PrimitiveOp::Slide { module, from, .. } = op {
                if let Occupancy::Single(id) = cur.get(*from) {
                    *module = id;
                }
            }
        }
        apply_step_mut(&mut cur, &step).map_err(|v| (i, v))?;
    }
    Ok(cur)
}

/// Pixels per module in rendered frames.
const SCALE: i32 = 4;

/// Writes `frame_NNNNN.svg` for the start state and every `every`-th step
/// after it. Cells changed by the step just before a frame are outlined.
/// Returns the number of frames.
pub fn render_frames(start: &Configuration, steps: &[ParallelStep], out_dir: &Path, every: usize) -> io::Result<usize> {
    assert!(every >= 1, "frame interval must be positive");
    fs::create_dir_all(out_dir)?;
    let mut cur = start.clone();
    let mut prev = start.clone();
    let mut frames = 0;
    for k in 0..=steps.len() {
        if k > 0 {
            prev = cur.clone();
            apply_step_mut(&mut cur, &steps[k - 1]).map_err(io::Error::other)?;
        }
        if k % every == 0 {
            let svg = frame_svg(&cur, (k > 0).then_some(&prev));
            fs::write(out_dir.join(format!("frame_{frames:05}.svg")), svg)?;
            frames += 1;
        }
    }
    Ok(frames)
}

/// SVG picture of a configuration, y growing upward. Compressed cells are
/// split diagonally; cells that differ from `before` are outlined.
pub fn frame_svg(cfg: &Configuration, before: Option<&Configuration>) -> String {
    let side = cfg.side();
    let px = side * SCALE;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{px}\" height=\"{px}\" viewBox=\"0 0 {px} {px}\">\n\
         <rect width=\"{px}\" height=\"{px}\" fill=\"#ffffff\"/>\n"
    );
    for y in 0..side {
        for x in 0..side {
            let c = ModuleCoord::new(x, y);
            let (left, top) = (x * SCALE, (side - 1 - y) * SCALE);
            match cfg.get(c) {
                Occupancy::Empty => {}
                Occupancy::Single(_) => s.push_str(&format!(
                    "<rect class=\"module\" x=\"{left}\" y=\"{top}\" width=\"{SCALE}\" height=\"{SCALE}\" fill=\"#4a6fa5\"/>\n"
                )),
                Occupancy::Compressed(..) => {
                    let (r, b) = (left + SCALE, top + SCALE);
                    s.push_str(&format!(
                        "<g class=\"compressed\"><polygon points=\"{left},{top} {r},{top} {left},{b}\" fill=\"#4a6fa5\"/>\
                         <polygon points=\"{r},{top} {r},{b} {left},{b}\" fill=\"#c0504d\"/></g>\n"
                    ));
                }
            }
            if before.is_some_and(|b| b.get(c).count() != cfg.get(c).count()) {
                s.push_str(&format!(
                    "<rect class=\"changed\" x=\"{left}\" y=\"{top}\" width=\"{SCALE}\" height=\"{SCALE}\" fill=\"none\" stroke=\"#f0a030\" stroke-width=\"1\"/>\n"
                ));
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
