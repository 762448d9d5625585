#![allow(dead_code)]

use crystal::lattice::{BlockGrid, Configuration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected block grid grown from a seed cell, fitting in
/// `rows` x `cols`, with `count` blocks.
pub fn random_grid(seed: u64, rows: usize, cols: usize, count: usize) -> BlockGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = BlockGrid::new(rows, cols);
    let start = (rng.gen_range(0..rows), rng.gen_range(0..cols));
    grid.set(start.0, start.1, true);
    let mut cells = vec![start];
    while cells.len() < count.min(rows * cols) {
        let (r, c) = cells[rng.gen_range(0..cells.len())];
        let (dr, dc) = [(0i32, 1i32), (1, 0), (0, -1), (-1, 0)][rng.gen_range(0..4)];
        let (nr, nc) = (r as i32 + dr, c as i32 + dc);
        if nr < 0 || nc < 0 || nr >= rows as i32 || nc >= cols as i32 {
            continue;
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if !grid.get(nr, nc) {
            grid.set(nr, nc, true);
            cells.push((nr, nc));
        }
    }
    grid
}

/// Corpus entry `i`: sizes cycle through small and large grids.
pub fn corpus_grid(i: u64) -> BlockGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ i);
    let rows = rng.gen_range(1..=16);
    let cols = rng.gen_range(1..=16);
    let area = rows * cols;
    let count = rng.gen_range(1..=area);
    random_grid(i, rows, cols, count)
}

pub fn corpus_config(i: u64) -> Configuration {
    Configuration::from_block_grid(&corpus_grid(i)).expect("corpus grids are connected")
}
