//! Dense row-major grids and cell coordinates shared across the crate.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Zero-based cell coordinates. Row 0 is the top row, so "up" decreases `row`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Offsets the position, returning `None` when it would leave a
    /// `height` x `width` grid.
    pub fn offset(self, dr: i32, dc: i32, height: usize, width: usize) -> Option<GridPos> {
        let row = self.row as i64 + dr as i64;
        let col = self.col as i64 + dc as i64;
        if row < 0 || col < 0 || row >= height as i64 || col >= width as i64 {
            None
        } else {
            Some(GridPos::new(row as usize, col as usize))
        }
    }

    /// Chebyshev (max-coordinate) distance; the 3x3 window around a cell is
    /// exactly the cells at distance <= 1.
    pub fn chebyshev(self, other: GridPos) -> usize {
        let dr = self.row.abs_diff(other.row);
        let dc = self.col.abs_diff(other.col);
        dr.max(dc)
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Dense row-major grid of `T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    cells: Vec<T>,
}

impl<T: Clone + Default> Grid<T> {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![T::default(); height * width],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, cells: Vec<T>) -> Self {
        assert_eq!(cells.len(), height * width, "cell count must match dimensions");
        Self { height, width, cells }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn contains(&self, pos: GridPos) -> bool {
        pos.row < self.height && pos.col < self.width
    }

    /// Iterates all positions in row-major order.
    pub fn positions(&self) -> impl Iterator<Item = GridPos> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| GridPos::new(r, c)))
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            cells: self.cells.iter().map(f).collect(),
        }
    }

    fn flat(&self, pos: GridPos) -> usize {
        debug_assert!(self.contains(pos), "{pos} out of {}x{}", self.height, self.width);
        pos.row * self.width + pos.col
    }
}

impl<T> Index<GridPos> for Grid<T> {
    type Output = T;

    fn index(&self, pos: GridPos) -> &T {
        &self.cells[self.flat(pos)]
    }
}

impl<T> IndexMut<GridPos> for Grid<T> {
    fn index_mut(&mut self, pos: GridPos) -> &mut T {
        let i = self.flat(pos);
        &mut self.cells[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_clips_at_borders() {
        let p = GridPos::new(0, 2);
        assert_eq!(p.offset(-1, 0, 5, 5), None);
        assert_eq!(p.offset(1, -2, 5, 5), Some(GridPos::new(1, 0)));
        assert_eq!(p.offset(0, 3, 5, 5), None);
        assert_eq!(GridPos::new(4, 4).offset(1, 0, 5, 5), None);
    }

    #[test]
    fn row_major_indexing() {
        let mut g: Grid<u32> = Grid::new(2, 3);
        g[GridPos::new(1, 2)] = 7;
        assert_eq!(g.cells(), &[0, 0, 0, 0, 0, 7]);
        assert_eq!(g.positions().count(), 6);
    }

    #[test]
    fn lexicographic_ordering_is_row_then_col() {
        assert!(GridPos::new(1, 9) < GridPos::new(2, 0));
        assert!(GridPos::new(3, 4) < GridPos::new(3, 5));
    }
}
