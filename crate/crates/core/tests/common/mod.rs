#![allow(dead_code)]

use std::f64::consts::TAU;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use semilex::dataset::MnistPaths;
use semilex::raster::Raster;

/// MNIST files; panics with fetch instructions when they are absent.
pub fn mnist() -> MnistPaths {
    let dir = std::env::var_os("SEMILEX_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let paths = MnistPaths::in_dir(&dir);
    assert!(
        paths.exists(),
        "MNIST not found in {}; run scripts/fetch-mnist.sh or set SEMILEX_DATA_DIR",
        dir.display()
    );
    paths
}

/// A solved grid from randomized backtracking, row-major.
pub fn random_solution(rng: &mut impl Rng) -> [u8; 81] {
    fn fill(grid: &mut [u8; 81], at: usize, rng: &mut impl Rng) -> bool {
        if at == 81 {
            return true;
        }
        let mut digits: Vec<u8> = (1..=9).collect();
        digits.shuffle(rng);
        for d in digits {
            if allowed(grid, at, d) {
                grid[at] = d;
                if fill(grid, at + 1, rng) {
                    return true;
                }
                grid[at] = 0;
            }
        }
        false
    }
    fn allowed(grid: &[u8; 81], at: usize, d: u8) -> bool {
        let (r, c) = (at / 9, at % 9);
        (0..9).all(|k| {
            let br = r / 3 * 3 + k / 3;
            let bc = c / 3 * 3 + k % 3;
            grid[r * 9 + k] != d && grid[k * 9 + c] != d && grid[br * 9 + bc] != d
        })
    }
    let mut grid = [0u8; 81];
    assert!(fill(&mut grid, 0, rng));
    grid
}

/// True when no two cells sharing a row, column or box hold the same digit.
pub fn pairwise_valid(grid: &[u8; 81]) -> bool {
    for a in 0..81 {
        for b in a + 1..81 {
            let (ra, ca, rb, cb) = (a / 9, a % 9, b / 9, b % 9);
            let related = ra == rb || ca == cb || (ra / 3 == rb / 3 && ca / 3 == cb / 3);
            if related && grid[a] == grid[b] {
                return false;
            }
        }
    }
    true
}

/// A wheel crop: a rim with `spokes` spokes and a hub, light on dark.
pub fn spoked_wheel(side: usize, cx: f64, cy: f64, r: f64, spokes: usize, phase: f64) -> Raster {
    let mut img = Raster::zeros(side, side);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let d = (dx * dx + dy * dy).sqrt();
            let mut v = (1.0 - (d - r).abs() / 2.0).max(0.0);
            if d < r {
                let a = dy.atan2(dx) - phase;
                for s in 0..spokes {
                    let t = a - s as f64 * TAU / spokes as f64;
                    if t.cos() > 0.0 {
                        v = v.max(1.0 - (d * t.sin()).abs());
                    }
                }
                if d < 3.0 {
                    v = 1.0;
                }
            }
            img.set(x, y, v.clamp(0.0, 1.0) as f32);
        }
    }
    img
}

/// A checkered square that a detector might mistake for a wheel.
pub fn checkered_block(side: usize, cx: f64, cy: f64, r: f64) -> Raster {
    let mut img = Raster::zeros(side, side);
    for y in 0..side {
        for x in 0..side {
            let inside = (x as f64 - cx).abs() < r && (y as f64 - cy).abs() < r;
            if inside && (x / 6 + y / 6) % 2 == 0 {
                img.set(x, y, 1.0);
            }
        }
    }
    img
}
