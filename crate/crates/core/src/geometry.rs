//! Square torus arithmetic and a uniform-grid index for fixed-radius
//! neighbor queries.

use thiserror::Error;

pub type EntityId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid world: side length {side} and cell size {cell} must both be positive and finite")]
    InvalidWorld { side: f64, cell: f64 },
    #[error("query radius {radius} exceeds grid cell size {cell}")]
    RadiusExceedsCell { radius: f64, cell: f64 },
}

/// Dimensions of the simulated plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldSpec {
    side: f64,
    cell_size: f64,
}

impl WorldSpec {
    pub fn new(side: f64, cell_size: f64) -> Result<Self, GeometryError> {
        if !(side.is_finite() && side > 0.0 && cell_size.is_finite() && cell_size > 0.0) {
            return Err(GeometryError::InvalidWorld {
                side,
                cell: cell_size,
            });
        }
        Ok(Self { side, cell_size })
    }

    /// Square torus holding `entities` at one entity per `area_per_entity`
    /// square spaceunits.
    pub fn from_density(
        entities: u32,
        area_per_entity: f64,
        cell_size: f64,
    ) -> Result<Self, GeometryError> {
        Self::new((entities as f64 * area_per_entity).sqrt(), cell_size)
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Cells per axis. A world smaller than one cell is a single cell.
    pub fn grid_dim(&self) -> usize {
        ((self.side / self.cell_size).floor() as usize).max(1)
    }

    /// Maps any finite coordinate into `[0, side)`.
    #[inline]
    pub fn wrap(&self, c: f64) -> f64 {
        let w = c.rem_euclid(self.side);
        // rem_euclid can round up to `side` for tiny negative inputs
        if w >= self.side {
            0.0
        } else {
            w
        }
    }

    #[inline]
    pub fn wrap_position(&self, x: f64, y: f64) -> Position {
        Position::new(self.wrap(x), self.wrap(y))
    }

    /// Signed minimum-image displacement from `a` to `b` along one axis.
    #[inline]
    pub fn min_image(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        let half = self.side * 0.5;
        if d > half {
            d - self.side
        } else if d < -half {
            d + self.side
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Euclidean distance between the closest images of `a` and `b`.
#[inline]
pub fn torus_distance(a: Position, b: Position, world: &WorldSpec) -> f64 {
    let side = world.side;
    let mut dx = (a.x - b.x).abs();
    let mut dy = (a.y - b.y).abs();
    dx = dx.min(side - dx);
    dy = dy.min(side - dy);
    (dx * dx + dy * dy).sqrt()
}

/// Entities bucketed by grid cell, rebuilt once per timestep.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    world: WorldSpec,
    dim: usize,
    inv_width: f64,
    /// `starts[c]..starts[c + 1]` indexes the entries of cell `c`.
    starts: Vec<u32>,
    ids: Vec<EntityId>,
    points: Vec<Position>,
}

impl SpatialIndex {
    pub fn build<I>(entities: I, world: &WorldSpec) -> Self
    where
        I: IntoIterator<Item = (EntityId, Position)>,
        I::IntoIter: Clone,
    {
        let dim = world.grid_dim();
        let inv_width = dim as f64 / world.side;
        let cells = dim * dim;
        let iter = entities.into_iter();

        let mut starts = vec![0u32; cells + 1];
        for (_, p) in iter.clone() {
            starts[cell_index(p, dim, inv_width) + 1] += 1;
        }
        for c in 0..cells {
            starts[c + 1] += starts[c];
        }
        let n = starts[cells] as usize;
        let mut cursor = starts.clone();
        let mut ids = vec![0; n];
        let mut points = vec![Position::default(); n];
        for (id, p) in iter {
            let c = cell_index(p, dim, inv_width);
            let slot = cursor[c] as usize;
            cursor[c] += 1;
            ids[slot] = id;
            points[slot] = p;
        }
        Self {
            world: *world,
            dim,
            inv_width,
            starts,
            ids,
            points,
        }
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `(column, row)` of the cell holding `p`.
    pub fn cell_of(&self, p: Position) -> (usize, usize) {
        (
            axis_cell(p.x, self.dim, self.inv_width),
            axis_cell(p.y, self.dim, self.inv_width),
        )
    }

    pub fn cell_occupancy(&self, col: usize, row: usize) -> usize {
        let c = row * self.dim + col;
        (self.starts[c + 1] - self.starts[c]) as usize
    }

    /// Calls `f(id, position)` for every entity within `radius` of `center`
    /// (inclusive), skipping `exclude`.
    #[inline]
    pub fn for_each_within<F>(
        &self,
        center: Position,
        radius: f64,
        exclude: Option<EntityId>,
        mut f: F,
    ) -> Result<(), GeometryError>
    where
        F: FnMut(EntityId, Position),
    {
        if radius > self.world.cell_size {
            return Err(GeometryError::RadiusExceedsCell {
                radius,
                cell: self.world.cell_size,
            });
        }
        let (cx, cy) = self.cell_of(center);
        let cols = neighborhood(cx, self.dim);
        let rows = neighborhood(cy, self.dim);
        for &row in rows.as_slice() {
            for &col in cols.as_slice() {
                let c = row * self.dim + col;
                let (lo, hi) = (self.starts[c] as usize, self.starts[c + 1] as usize);
                for k in lo..hi {
                    let id = self.ids[k];
                    if Some(id) == exclude {
                        continue;
                    }
                    let p = self.points[k];
                    if torus_distance(center, p, &self.world) <= radius {
                        f(id, p);
                    }
                }
            }
        }
        Ok(())
    }

    /// Ids of all entities within `radius` of `center`, ascending.
    pub fn neighbors_within(
        &self,
        center: Position,
        radius: f64,
        exclude: Option<EntityId>,
    ) -> Result<Vec<EntityId>, GeometryError> {
        let mut out = Vec::new();
        self.for_each_within(center, radius, exclude, |id, _| out.push(id))?;
        out.sort_unstable();
        Ok(out)
    }
}

#[inline]
fn axis_cell(c: f64, dim: usize, inv_width: f64) -> usize {
    ((c * inv_width) as usize).min(dim - 1)
}

#[inline]
fn cell_index(p: Position, dim: usize, inv_width: f64) -> usize {
    axis_cell(p.y, dim, inv_width) * dim + axis_cell(p.x, dim, inv_width)
}

/// Distinct cells at offsets -1, 0, +1 around `c`, wrapping.
struct Neighborhood {
    cells: [usize; 3],
    len: usize,
}

impl Neighborhood {
    fn as_slice(&self) -> &[usize] {
        &self.cells[..self.len]
    }
}

#[inline]
fn neighborhood(c: usize, dim: usize) -> Neighborhood {
    match dim {
        1 => Neighborhood {
            cells: [0, 0, 0],
            len: 1,
        },
        2 => Neighborhood {
            cells: [0, 1, 0],
            len: 2,
        },
        _ => Neighborhood {
            cells: [(c + dim - 1) % dim, c, (c + 1) % dim],
            len: 3,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn world(side: f64) -> WorldSpec {
        WorldSpec::new(side, 250.0).unwrap()
    }

    fn brute_force(pts: &[Position], center: Position, r: f64, skip: u32, w: &WorldSpec) -> Vec<u32> {
        // plain min-image scan, written without torus_distance
        let s = w.side();
        pts.iter()
            .enumerate()
            .filter(|&(i, _)| i as u32 != skip)
            .filter(|(_, p)| {
                let mut best = f64::INFINITY;
                for ox in [-s, 0.0, s] {
                    for oy in [-s, 0.0, s] {
                        let dx = p.x + ox - center.x;
                        let dy = p.y + oy - center.y;
                        best = best.min(dx * dx + dy * dy);
                    }
                }
                best.sqrt() <= r
            })
            .map(|(i, _)| i as u32)
            .collect()
    }

    #[test]
    fn distance_identity() {
        let w = world(1000.0);
        assert_eq!(torus_distance(Position::new(0.0, 0.0), Position::new(0.0, 0.0), &w), 0.0);
    }

    #[test]
    fn distance_wraps_both_axes() {
        let w = world(1000.0);
        let d = torus_distance(Position::new(10.0, 10.0), Position::new(990.0, 990.0), &w);
        assert!((d - 800f64.sqrt()).abs() < 1e-12);
        assert!((d - 28.2843).abs() < 1e-4);
    }

    #[test]
    fn distance_half_side() {
        let w = world(1000.0);
        assert_eq!(torus_distance(Position::new(0.0, 0.0), Position::new(500.0, 0.0), &w), 500.0);
    }

    #[test]
    fn side_from_density() {
        let w = WorldSpec::from_density(1000, 10_000.0, 250.0).unwrap();
        assert!((w.side() * w.side() - 1.0e7).abs() < 1e-6);
        assert_eq!(w.grid_dim(), 12);
        assert!(WorldSpec::new(0.0, 250.0).is_err());
        assert!(WorldSpec::new(100.0, f64::NAN).is_err());
    }

    #[test]
    fn cell_assignment() {
        let w = world(1000.0);
        let idx = SpatialIndex::build(vec![(0, Position::new(510.0, 20.0))], &w);
        assert_eq!(idx.cell_of(Position::new(510.0, 20.0)), (2, 0));
        assert_eq!(idx.cell_of(Position::new(0.0, 0.0)), (0, 0));
        assert_eq!(idx.cell_occupancy(2, 0), 1);
    }

    #[test]
    fn occupancy_sums_to_population() {
        let w = world(3162.0);
        let pts: Vec<_> = (0..1000u32)
            .map(|i| {
                let u = crate::rng::unit_f64(crate::rng::hash_words(&[i as u64, 1]));
                let v = crate::rng::unit_f64(crate::rng::hash_words(&[i as u64, 2]));
                (i, w.wrap_position(u * w.side(), v * w.side()))
            })
            .collect();
        let idx = SpatialIndex::build(pts.iter().copied(), &w);
        let dim = w.grid_dim();
        let total: usize = (0..dim)
            .flat_map(|r| (0..dim).map(move |c| (c, r)))
            .map(|(c, r)| idx.cell_occupancy(c, r))
            .sum();
        assert_eq!(total, 1000);
    }

    #[test]
    fn lone_entity_has_no_neighbors() {
        let w = world(1000.0);
        let p = Position::new(100.0, 100.0);
        let idx = SpatialIndex::build(vec![(0, p)], &w);
        assert!(idx.neighbors_within(p, 250.0, Some(0)).unwrap().is_empty());
    }

    #[test]
    fn boundary_is_inclusive() {
        let w = world(1000.0);
        let a = Position::new(100.0, 100.0);
        let b = Position::new(350.0, 100.0);
        assert_eq!(torus_distance(a, b, &w), 250.0);
        let idx = SpatialIndex::build(vec![(0, a), (1, b)], &w);
        assert_eq!(idx.neighbors_within(a, 250.0, Some(0)).unwrap(), vec![1]);
        assert_eq!(idx.neighbors_within(b, 250.0, Some(1)).unwrap(), vec![0]);
        // and across the seam
        let c = Position::new(900.0, 100.0);
        let d = Position::new(150.0, 100.0);
        let idx = SpatialIndex::build(vec![(0, c), (1, d)], &w);
        assert_eq!(idx.neighbors_within(c, 250.0, Some(0)).unwrap(), vec![1]);
    }

    #[test]
    fn radius_larger_than_cell_rejected() {
        let w = world(1000.0);
        let idx = SpatialIndex::build(vec![(0, Position::new(1.0, 1.0))], &w);
        assert!(matches!(
            idx.neighbors_within(Position::new(1.0, 1.0), 251.0, None),
            Err(GeometryError::RadiusExceedsCell { .. })
        ));
    }

    #[test]
    fn tiny_world_single_cell() {
        // world smaller than a cell still answers exactly
        let w = world(100.0);
        assert_eq!(w.grid_dim(), 1);
        let idx = SpatialIndex::build(vec![(0, Position::new(1.0, 1.0)), (1, Position::new(99.0, 99.0))], &w);
        assert_eq!(idx.neighbors_within(Position::new(1.0, 1.0), 250.0, Some(0)).unwrap(), vec![1]);
    }

    #[test]
    fn grid_matches_brute_force_n200() {
        for seed in 0..20u64 {
            let w = world(1414.2);
            let pts: Vec<Position> = (0..200u64)
                .map(|i| {
                    let u = crate::rng::unit_f64(crate::rng::hash_words(&[seed, i, 1]));
                    let v = crate::rng::unit_f64(crate::rng::hash_words(&[seed, i, 2]));
                    w.wrap_position(u * w.side(), v * w.side())
                })
                .collect();
            let idx = SpatialIndex::build(pts.iter().enumerate().map(|(i, p)| (i as u32, *p)), &w);
            for (i, p) in pts.iter().enumerate() {
                let got = idx.neighbors_within(*p, 250.0, Some(i as u32)).unwrap();
                assert_eq!(got, brute_force(&pts, *p, 250.0, i as u32, &w));
            }
        }
    }

    proptest! {
        #[test]
        fn distance_symmetric(ax in 0.0..1000.0f64, ay in 0.0..1000.0f64, bx in 0.0..1000.0f64, by in 0.0..1000.0f64) {
            let w = world(1000.0);
            let (a, b) = (Position::new(ax, ay), Position::new(bx, by));
            prop_assert_eq!(torus_distance(a, b, &w).to_bits(), torus_distance(b, a, &w).to_bits());
            prop_assert!(torus_distance(a, b, &w) <= 1000.0 * std::f64::consts::SQRT_2 / 2.0 + 1e-9);
        }

        #[test]
        fn distance_translation_invariant(ax in 0.0..1000.0f64, ay in 0.0..1000.0f64, bx in 0.0..1000.0f64,
                                          by in 0.0..1000.0f64, ox in -3000.0..3000.0f64, oy in -3000.0..3000.0f64) {
            let w = world(1000.0);
            let (a, b) = (Position::new(ax, ay), Position::new(bx, by));
            let a2 = w.wrap_position(ax + ox, ay + oy);
            let b2 = w.wrap_position(bx + ox, by + oy);
            let d1 = torus_distance(a, b, &w);
            let d2 = torus_distance(a2, b2, &w);
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn wrap_lands_in_range(c in -1.0e7..1.0e7f64, side in 1.0..5000.0f64) {
            let w = WorldSpec::new(side, 1.0).unwrap();
            let v = w.wrap(c);
            prop_assert!((0.0..side).contains(&v));
            let k = (c - v) / side;
            prop_assert!((k - k.round()).abs() < 1e-6);
        }
    }
}
