//! Sparse voxel grids and octree index arithmetic.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geom::Point3;

pub type Coord = [u32; 3];

const AXIS_BITS: u32 = 21;
const AXIS_MASK: u64 = (1 << AXIS_BITS) - 1;
pub const MAX_RESOLUTION: u32 = 1 << AXIS_BITS;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("truncated grid data")]
    Truncated,
    #[error("coordinate {coord:?} outside resolution {resolution}")]
    OutOfRange { coord: Coord, resolution: u32 },
    #[error("grid entries are not strictly sorted")]
    Unsorted,
    #[error("payload width {found} does not match expected {expected}")]
    PayloadWidth { expected: usize, found: usize },
    #[error("occupancy level {level} is not nested in its parent level")]
    NotNested { level: usize },
    #[error("resolution {0} is not supported")]
    BadResolution(u32),
}

/// Packs a coordinate so that integer order equals lexicographic `(x, y, z)` order.
#[inline]
pub fn pack(c: Coord) -> u64 {
    ((c[0] as u64) << (2 * AXIS_BITS)) | ((c[1] as u64) << AXIS_BITS) | c[2] as u64
}

#[inline]
pub fn unpack(key: u64) -> Coord {
    [
        (key >> (2 * AXIS_BITS)) as u32,
        ((key >> AXIS_BITS) & AXIS_MASK) as u32,
        (key & AXIS_MASK) as u32,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid<P> {
    resolution: u32,
    entries: BTreeMap<u64, P>,
}

impl<P> SparseGrid<P> {
    pub fn new(resolution: u32) -> Self {
        assert!(
            (1..=MAX_RESOLUTION).contains(&resolution),
            "resolution {resolution}"
        );
        Self {
            resolution,
            entries: BTreeMap::new(),
        }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn in_range(&self, c: Coord) -> bool {
        c.iter().all(|&v| v < self.resolution)
    }

    /// Inserts or replaces. Panics on an out-of-range coordinate.
    pub fn insert(&mut self, c: Coord, payload: P) -> Option<P> {
        assert!(
            self.in_range(c),
            "coord {c:?} outside resolution {}",
            self.resolution
        );
        self.entries.insert(pack(c), payload)
    }

    pub fn get(&self, c: Coord) -> Option<&P> {
        if !self.in_range(c) {
            return None;
        }
        self.entries.get(&pack(c))
    }

    pub fn get_mut(&mut self, c: Coord) -> Option<&mut P> {
        if !self.in_range(c) {
            return None;
        }
        self.entries.get_mut(&pack(c))
    }

    pub fn entry_or_insert_with(&mut self, c: Coord, f: impl FnOnce() -> P) -> &mut P {
        assert!(
            self.in_range(c),
            "coord {c:?} outside resolution {}",
            self.resolution
        );
        self.entries.entry(pack(c)).or_insert_with(f)
    }

    pub fn contains(&self, c: Coord) -> bool {
        self.get(c).is_some()
    }

    /// Entries in lexicographic coordinate order.
    pub fn iter(&self) -> impl Iterator<Item = (Coord, &P)> + '_ {
        self.entries.iter().map(|(&k, p)| (unpack(k), p))
    }

    pub fn coords(&self) -> Vec<Coord> {
        self.entries.keys().map(|&k| unpack(k)).collect()
    }

    /// Position of `c` in iteration order.
    pub fn rank(&self, c: Coord) -> Option<usize> {
        let key = pack(c);
        self.entries
            .contains_key(&key)
            .then(|| self.entries.range(..key).count())
    }

    pub fn map<Q>(&self, mut f: impl FnMut(Coord, &P) -> Q) -> SparseGrid<Q> {
        SparseGrid {
            resolution: self.resolution,
            entries: self
                .entries
                .iter()
                .map(|(&k, p)| (k, f(unpack(k), p)))
                .collect(),
        }
    }

    /// Entries within Chebyshev distance `radius` of `center`, sorted.
    pub fn neighbors(&self, center: Coord, radius: u32, include_center: bool) -> Vec<(Coord, &P)> {
        let r = radius as i64;
        let lo = |v: u32| (v as i64 - r).max(0);
        let hi = |v: u32| (v as i64 + r).min(self.resolution as i64 - 1);
        let mut out = Vec::new();
        for x in lo(center[0])..=hi(center[0]) {
            for y in lo(center[1])..=hi(center[1]) {
                for z in lo(center[2])..=hi(center[2]) {
                    let c = [x as u32, y as u32, z as u32];
                    if !include_center && c == center {
                        continue;
                    }
                    if let Some(p) = self.get(c) {
                        out.push((c, p));
                    }
                }
            }
        }
        out
    }
}

impl<P> SparseGrid<P> {
    pub fn from_entries(resolution: u32, entries: impl IntoIterator<Item = (Coord, P)>) -> Self {
        let mut grid = Self::new(resolution);
        for (c, p) in entries {
            grid.insert(c, p);
        }
        grid
    }
}

/// Voxel containing `p` at resolution `r`; the upper boundary clamps into the last voxel.
pub fn voxel_of(p: Point3, resolution: u32) -> Coord {
    let max = resolution - 1;
    p.map(|v| {
        let scaled = (v * resolution as f64).floor();
        if scaled <= 0.0 {
            0
        } else {
            (scaled as u64).min(max as u64) as u32
        }
    })
}

/// Buckets point indices by voxel, preserving input order within each bucket.
pub fn voxelize(points: &[Point3], resolution: u32) -> SparseGrid<Vec<usize>> {
    let mut grid = SparseGrid::new(resolution);
    for (i, &p) in points.iter().enumerate() {
        grid.entry_or_insert_with(voxel_of(p, resolution), Vec::new)
            .push(i);
    }
    grid
}

/// The eight children of `c` at twice the resolution, in `(dx, dy, dz)` lexicographic order.
pub fn subdivide(c: Coord) -> [Coord; 8] {
    std::array::from_fn(|i| {
        let d = octant(i);
        [2 * c[0] + d[0], 2 * c[1] + d[1], 2 * c[2] + d[2]]
    })
}

/// Offset of child `i` (0..8) within its parent.
#[inline]
pub fn octant(i: usize) -> [u32; 3] {
    [(i >> 2) as u32 & 1, (i >> 1) as u32 & 1, i as u32 & 1]
}

#[inline]
pub fn parent(c: Coord) -> Coord {
    c.map(|v| v >> 1)
}

pub fn centroid(c: Coord, resolution: u32) -> Point3 {
    c.map(|v| (v as f64 + 0.5) / resolution as f64)
}

/// Nested vertex-occupancy grids at resolutions `base * 2^l`, `l = 0..=levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyLadder {
    levels: Vec<SparseGrid<()>>,
}

impl OccupancyLadder {
    pub fn build(vertices: &[Point3], base_resolution: u32, stages: usize) -> Self {
        let finest_res = base_resolution << stages;
        let mut finest = SparseGrid::new(finest_res);
        for &v in vertices {
            finest.insert(voxel_of(v, finest_res), ());
        }
        let mut levels = vec![finest];
        for _ in 0..stages {
            let below = levels.last().unwrap();
            let mut up = SparseGrid::new(below.resolution() / 2);
            for (c, _) in below.iter() {
                up.insert(parent(c), ());
            }
            levels.push(up);
        }
        levels.reverse();
        Self { levels }
    }

    /// Validates nesting and resolution doubling.
    pub fn from_levels(levels: Vec<SparseGrid<()>>) -> Result<Self, GridError> {
        for l in 1..levels.len() {
            if levels[l].resolution() != 2 * levels[l - 1].resolution() {
                return Err(GridError::BadResolution(levels[l].resolution()));
            }
            if levels[l]
                .iter()
                .any(|(c, _)| !levels[l - 1].contains(parent(c)))
            {
                return Err(GridError::NotNested { level: l });
            }
        }
        Ok(Self { levels })
    }

    pub fn stages(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn level(&self, l: usize) -> &SparseGrid<()> {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[SparseGrid<()>] {
        &self.levels
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.levels.len() as u32).to_le_bytes().to_vec();
        for level in &self.levels {
            out.extend(write_grid(level, 0, |_, _| {}));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GridError> {
        let count = read_u32(bytes, 0)? as usize;
        let mut offset = 4;
        let mut levels = Vec::with_capacity(count);
        for _ in 0..count {
            let (grid, used) = read_grid(&bytes[offset..], Some(0), |_| ())?;
            offset += used;
            levels.push(grid);
        }
        Self::from_levels(levels)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, GridError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or(GridError::Truncated)
}

/// Header `{resolution: u32, count: u64, payload width: u32}` then sorted
/// `(x, y, z: u32 LE, payload bytes)` records.
pub fn write_grid<P>(
    grid: &SparseGrid<P>,
    width: usize,
    mut encode: impl FnMut(&P, &mut Vec<u8>),
) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + grid.len() * (12 + width));
    out.extend(grid.resolution().to_le_bytes());
    out.extend((grid.len() as u64).to_le_bytes());
    out.extend((width as u32).to_le_bytes());
    for (c, p) in grid.iter() {
        for v in c {
            out.extend(v.to_le_bytes());
        }
        let before = out.len();
        encode(p, &mut out);
        assert_eq!(
            out.len() - before,
            width,
            "payload encoder wrote the wrong width"
        );
    }
    out
}

/// Reads one grid; returns it with the number of bytes consumed.
pub fn read_grid<P>(
    bytes: &[u8],
    expected_width: Option<usize>,
    mut decode: impl FnMut(&[u8]) -> P,
) -> Result<(SparseGrid<P>, usize), GridError> {
    let resolution = read_u32(bytes, 0)?;
    if resolution == 0 || resolution > MAX_RESOLUTION {
        return Err(GridError::BadResolution(resolution));
    }
    let count = bytes
        .get(4..12)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
        .ok_or(GridError::Truncated)? as usize;
    let width = read_u32(bytes, 12)? as usize;
    if let Some(expected) = expected_width {
        if expected != width {
            return Err(GridError::PayloadWidth {
                expected,
                found: width,
            });
        }
    }
    let record = 12 + width;
    let end = count
        .checked_mul(record)
        .and_then(|n| n.checked_add(16))
        .ok_or(GridError::Truncated)?;
    if bytes.len() < end {
        return Err(GridError::Truncated);
    }
    let mut grid = SparseGrid::new(resolution);
    let mut last: Option<u64> = None;
    for i in 0..count {
        let at = 16 + i * record;
        let c = [
            read_u32(bytes, at)?,
            read_u32(bytes, at + 4)?,
            read_u32(bytes, at + 8)?,
        ];
        if !grid.in_range(c) {
            return Err(GridError::OutOfRange {
                coord: c,
                resolution,
            });
        }
        let key = pack(c);
        if last.is_some_and(|prev| prev >= key) {
            return Err(GridError::Unsorted);
        }
        last = Some(key);
        grid.entries
            .insert(key, decode(&bytes[at + 12..at + record]));
    }
    Ok((grid, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn floor_and_clamp() {
        assert_eq!(voxel_of([0.5; 3], 2), [1, 1, 1]);
        assert_eq!(voxel_of([1.0, 0.0, 0.0], 4), [3, 0, 0]);
        assert_eq!(voxel_of([-0.0, 0.999, 0.25], 4), [0, 3, 1]);
    }

    #[test]
    fn voxelize_partitions_points() {
        let pts: Vec<Point3> = (0..1000)
            .map(|i| {
                let mut r = rng::stream(1, 99, i);
                [
                    rng::uniform(&mut r),
                    rng::uniform(&mut r),
                    rng::uniform(&mut r),
                ]
            })
            .collect();
        let grid = voxelize(&pts, 16);
        let mut all: Vec<usize> = grid.iter().flat_map(|(_, b)| b.iter().copied()).collect();
        for (c, bucket) in grid.iter() {
            assert!(bucket.windows(2).all(|w| w[0] < w[1]));
            assert!(bucket.iter().all(|&i| voxel_of(pts[i], 16) == c));
        }
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn subdivision_order() {
        let kids = subdivide([0, 0, 0]);
        assert_eq!(kids[0], [0, 0, 0]);
        assert_eq!(kids[1], [0, 0, 1]);
        assert_eq!(kids[7], [1, 1, 1]);
        let kids = subdivide([3, 1, 2]);
        assert_eq!(kids[0], [6, 2, 4]);
        assert_eq!(kids[7], [7, 3, 5]);
        assert!(kids.iter().all(|&k| parent(k) == [3, 1, 2]));
    }

    #[test]
    fn centroids() {
        assert_eq!(centroid([0, 0, 0], 2), [0.25; 3]);
        assert_eq!(centroid([127, 127, 127], 128), [0.99609375; 3]);
    }

    #[test]
    fn ladder_single_vertex() {
        let ladder = OccupancyLadder::build(&[[0.5; 3]], 2, 1);
        assert_eq!(ladder.level(1).coords(), vec![[2, 2, 2]]);
        assert_eq!(ladder.level(0).coords(), vec![[1, 1, 1]]);
        assert_eq!(ladder.level(1).resolution(), 4);
        let empty = OccupancyLadder::build(&[], 4, 3);
        assert_eq!(empty.stages(), 3);
        assert!(empty.levels().iter().all(|g| g.is_empty()));
    }

    #[test]
    fn ladder_counts_grow_with_level() {
        let pts: Vec<Point3> = (0..100)
            .map(|i| {
                let mut r = rng::stream(2, 99, i);
                [
                    rng::uniform(&mut r),
                    rng::uniform(&mut r),
                    rng::uniform(&mut r),
                ]
            })
            .collect();
        let ladder = OccupancyLadder::build(&pts, 4, 3);
        for l in 0..3 {
            assert!(ladder.level(l).len() <= ladder.level(l + 1).len());
        }
        assert!(ladder.level(3).len() <= 100);
        let back = OccupancyLadder::from_bytes(&ladder.to_bytes()).unwrap();
        assert_eq!(back, ladder);
    }

    #[test]
    fn ladder_rejects_unnested() {
        let mut coarse = SparseGrid::new(2);
        coarse.insert([0, 0, 0], ());
        let mut fine = SparseGrid::new(4);
        fine.insert([3, 3, 3], ());
        let err = OccupancyLadder::from_levels(vec![coarse.clone(), fine.clone()]).unwrap_err();
        assert_eq!(err, GridError::NotNested { level: 1 });
        let bytes = [
            2u32.to_le_bytes().to_vec(),
            write_grid(&coarse, 0, |_, _| {}),
            write_grid(&fine, 0, |_, _| {}),
        ]
        .concat();
        assert!(OccupancyLadder::from_bytes(&bytes).is_err());
    }

    #[test]
    fn neighborhoods() {
        let mut g = SparseGrid::new(8);
        g.insert([4, 4, 4], 1u8);
        assert_eq!(g.neighbors([4, 4, 4], 1, true).len(), 1);
        assert!(g.neighbors([4, 4, 4], 1, false).is_empty());
        let mut block = SparseGrid::new(8);
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    block.insert([x, y, z], ());
                }
            }
        }
        assert_eq!(block.neighbors([1, 1, 1], 1, true).len(), 27);
        assert_eq!(block.neighbors([0, 0, 0], 1, true).len(), 8);
    }

    #[test]
    fn neighbors_match_brute_force() {
        let mut g = SparseGrid::new(10);
        for i in 0..150 {
            let mut r = rng::stream(3, 99, i);
            let c = [0, 0, 0].map(|_: u32| (rng::uniform(&mut r) * 10.0) as u32);
            g.insert(c, i);
        }
        for (q, radius) in [([5, 5, 5], 1), ([0, 9, 3], 2), ([7, 2, 8], 0)] {
            for include in [true, false] {
                let fast: Vec<Coord> = g
                    .neighbors(q, radius, include)
                    .into_iter()
                    .map(|(c, _)| c)
                    .collect();
                let brute: Vec<Coord> = g
                    .iter()
                    .map(|(c, _)| c)
                    .filter(|c| (0..3).all(|k| (c[k] as i64 - q[k] as i64).abs() <= radius as i64))
                    .filter(|&c| include || c != q)
                    .collect();
                assert_eq!(fast, brute);
            }
        }
    }

    #[test]
    fn grid_bytes_reject_corruption() {
        let mut g = SparseGrid::new(4);
        g.insert([1, 2, 3], 7u16);
        g.insert([0, 0, 1], 9u16);
        let bytes = write_grid(&g, 2, |p, out| out.extend(p.to_le_bytes()));
        let (back, used) =
            read_grid(&bytes, Some(2), |b| u16::from_le_bytes([b[0], b[1]])).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, g);
        assert_eq!(
            read_grid(&bytes[..bytes.len() - 1], Some(2), |_| 0u16).unwrap_err(),
            GridError::Truncated
        );
        assert!(matches!(
            read_grid(&bytes, Some(4), |_| 0u16).unwrap_err(),
            GridError::PayloadWidth { .. }
        ));
        let mut swapped = bytes.clone();
        // Swap the two records to break the sort order.
        let rec = 14;
        let (a, b) = swapped[16..16 + 2 * rec].split_at_mut(rec);
        a.swap_with_slice(b);
        assert_eq!(
            read_grid(&swapped, Some(2), |_| 0u16).unwrap_err(),
            GridError::Unsorted
        );
    }

    proptest! {
        #[test]
        fn centroid_voxelizes_to_itself(x in 0u32..1024, y in 0u32..1024, z in 0u32..1024, r in 1u32..1024) {
            let c = [x % r, y % r, z % r];
            prop_assert_eq!(voxel_of(centroid(c, r), r), c);
        }

        #[test]
        fn iteration_ignores_insertion_order(mut cs in prop::collection::vec(prop::array::uniform3(0u32..16), 1..50)) {
            let a = SparseGrid::from_entries(16, cs.iter().map(|&c| (c, ())));
            cs.reverse();
            let b = SparseGrid::from_entries(16, cs.iter().map(|&c| (c, ())));
            prop_assert_eq!(a.coords(), b.coords());
            let coords = a.coords();
            prop_assert!(coords.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn points_within_half_diagonal(p in prop::array::uniform3(0.0f64..1.0), r in 1u32..200) {
            let c = centroid(voxel_of(p, r), r);
            let d = crate::geom::dist(p, c);
            prop_assert!(d <= 3f64.sqrt() / (2.0 * r as f64) + 1e-12);
        }
    }
}
