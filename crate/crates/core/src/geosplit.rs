//! Geographic train/val/test splits (swath, square, quadrant) and a spatial
//! leakage audit.
//!
//! Grid convention: `x` indexes azimuth rows, `y` indexes range columns.
//! Quadrant names read the grid as a map with row 0 at the top: NW is
//! `(x < hx, y < hy)`, NE is `(x < hx, y >= hy)`, SW is `(x >= hx, y < hy)`
//! and SE is `(x >= hx, y >= hy)`.

use serde::{Deserialize, Serialize};

use crate::domain::{SplitAssignment, SplitLabel};
use crate::error::SplitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitStrategy {
    Swath,
    Square,
    Quadrant,
}

/// Which axis the swath bands run along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwathOrientation {
    /// Bands run along range: full-width row blocks cut across `x`.
    AlongRange,
    /// Bands run along azimuth: full-height column blocks cut across `y`.
    AlongAzimuth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestOrigin {
    Centered,
    #[serde(untagged)]
    At(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    NW,
    NE,
    SW,
    SE,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::NW, Quadrant::NE, Quadrant::SW, Quadrant::SE];

    fn is_south(self) -> bool {
        matches!(self, Quadrant::SW | Quadrant::SE)
    }

    fn is_east(self) -> bool {
        matches!(self, Quadrant::NE | Quadrant::SE)
    }

    /// Half-open (x, y) bounds of this quadrant with the cut at (hx, hy).
    fn bounds(self, nx: usize, ny: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (hx, hy) = (nx / 2, ny / 2);
        let xs = if self.is_south() { hx..nx } else { 0..hx };
        let ys = if self.is_east() { hy..ny } else { 0..hy };
        (xs, ys)
    }
}

/// Label per quadrant, in NW, NE, SW, SE order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrantRoles {
    pub nw: SplitLabel,
    pub ne: SplitLabel,
    pub sw: SplitLabel,
    pub se: SplitLabel,
}

impl QuadrantRoles {
    /// NW, NE train; SW val; SE test.
    pub const CNN: QuadrantRoles = QuadrantRoles {
        nw: SplitLabel::Train,
        ne: SplitLabel::Train,
        sw: SplitLabel::Val,
        se: SplitLabel::Test,
    };

    /// Three training quadrants and one test quadrant (75/25).
    pub const TABULAR: QuadrantRoles = QuadrantRoles {
        nw: SplitLabel::Train,
        ne: SplitLabel::Train,
        sw: SplitLabel::Train,
        se: SplitLabel::Test,
    };

    pub fn get(&self, q: Quadrant) -> SplitLabel {
        match q {
            Quadrant::NW => self.nw,
            Quadrant::NE => self.ne,
            Quadrant::SW => self.sw,
            Quadrant::SE => self.se,
        }
    }

    fn find(&self, label: SplitLabel) -> Vec<Quadrant> {
        Quadrant::ALL.into_iter().filter(|&q| self.get(q) == label).collect()
    }
}

impl Default for QuadrantRoles {
    fn default() -> Self {
        QuadrantRoles::CNN
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    /// (train, val, test) fractions.
    pub ratios: (f64, f64, f64),
    pub orientation: SwathOrientation,
    pub test_origin: TestOrigin,
    pub quadrant_roles: QuadrantRoles,
    /// Quadrant only: move strips across the shared val/test edge so the test
    /// fraction matches `ratios.2`.
    pub ratio_exact: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            strategy: SplitStrategy::Quadrant,
            ratios: (0.5, 0.25, 0.25),
            orientation: SwathOrientation::AlongRange,
            test_origin: TestOrigin::Centered,
            quadrant_roles: QuadrantRoles::CNN,
            ratio_exact: false,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn swath(ratios: (f64, f64, f64), orientation: SwathOrientation) -> Self {
        SplitSpec {
            strategy: SplitStrategy::Swath,
            ratios,
            orientation,
            ..Default::default()
        }
    }

    pub fn square(ratios: (f64, f64, f64)) -> Self {
        SplitSpec {
            strategy: SplitStrategy::Square,
            ratios,
            ..Default::default()
        }
    }

    pub fn quadrant(roles: QuadrantRoles) -> Self {
        let mut spec = SplitSpec {
            strategy: SplitStrategy::Quadrant,
            quadrant_roles: roles,
            ..Default::default()
        };
        spec.ratios = spec.quadrant_nominal_ratios();
        spec
    }

    /// The CNN quadrant split with the val/test boundary moved to hit `ratios`.
    pub fn quadrant_ratio_exact(ratios: (f64, f64, f64)) -> Self {
        SplitSpec {
            strategy: SplitStrategy::Quadrant,
            ratios,
            quadrant_roles: QuadrantRoles::CNN,
            ratio_exact: true,
            ..Default::default()
        }
    }

    /// Quadrant fractions among the non-excluded quadrants.
    fn quadrant_nominal_ratios(&self) -> (f64, f64, f64) {
        let count = |l| self.quadrant_roles.find(l).len() as f64;
        let used = 4.0 - count(SplitLabel::Excluded);
        let frac = |l| if used > 0.0 { count(l) / used } else { 0.0 };
        (frac(SplitLabel::Train), frac(SplitLabel::Val), frac(SplitLabel::Test))
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        let (tr, va, te) = self.ratios;
        for (name, r) in [("train", tr), ("val", va), ("test", te)] {
            if !(r.is_finite() && (0.0..1.0).contains(&r)) {
                return Err(SplitError::BadSpec(format!("{name} ratio {r} outside [0, 1)")));
            }
        }
        if tr <= 0.0 || te <= 0.0 {
            return Err(SplitError::BadSpec("train and test ratios must be positive".into()));
        }
        if (tr + va + te - 1.0).abs() > 1e-9 {
            return Err(SplitError::BadSpec(format!(
                "ratios sum to {}, expected 1",
                tr + va + te
            )));
        }
        if self.strategy == SplitStrategy::Quadrant {
            let roles = &self.quadrant_roles;
            if roles.find(SplitLabel::Train).is_empty() || roles.find(SplitLabel::Test).is_empty() {
                return Err(SplitError::BadSpec(
                    "quadrant roles need at least one train and one test quadrant".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Label every pixel of an `nx × ny` grid according to `spec`.
pub fn make_split(nx: usize, ny: usize, spec: &SplitSpec) -> Result<SplitAssignment, SplitError> {
    if nx < 4 || ny < 4 {
        return Err(SplitError::TooSmall { nx, ny });
    }
    spec.validate()?;
    match spec.strategy {
        SplitStrategy::Swath => Ok(swath(nx, ny, spec)),
        SplitStrategy::Square => square(nx, ny, spec),
        SplitStrategy::Quadrant => quadrant(nx, ny, spec),
    }
}

fn swath(nx: usize, ny: usize, spec: &SplitSpec) -> SplitAssignment {
    let (tr, va, _) = spec.ratios;
    let extent = match spec.orientation {
        SwathOrientation::AlongRange => nx,
        SwathOrientation::AlongAzimuth => ny,
    };
    let train_end = (tr * extent as f64).floor() as usize;
    let val_end = ((tr + va) * extent as f64).floor() as usize;
    let label_at = |i: usize| {
        if i < train_end {
            SplitLabel::Train
        } else if i < val_end {
            SplitLabel::Val
        } else {
            SplitLabel::Test
        }
    };
    let mut out = SplitAssignment::uniform(nx, ny, SplitLabel::Train);
    for x in 0..nx {
        for y in 0..ny {
            let i = match spec.orientation {
                SwathOrientation::AlongRange => x,
                SwathOrientation::AlongAzimuth => y,
            };
            out.set(x, y, label_at(i));
        }
    }
    out
}

/// Rectangle `a × b` (a along x) with `a ≤ max_a`, `b ≤ max_b` whose area is
/// closest to `target`; ties go to the shape closest to the grid's aspect.
fn closest_rectangle(target: f64, nx: usize, ny: usize, max_a: usize, max_b: usize) -> Option<(usize, usize)> {
    let mut best: Option<(f64, f64, usize, usize)> = None;
    for a in 1..=max_a {
        let b = ((target / a as f64).round() as usize).clamp(1, max_b);
        let err = (a as f64 * b as f64 - target).abs();
        let aspect = (a as f64 / nx as f64 - b as f64 / ny as f64).abs();
        let better = match best {
            None => true,
            Some((be, ba, _, _)) => err < be - 1e-9 || ((err - be).abs() <= 1e-9 && aspect < ba),
        };
        if better {
            best = Some((err, aspect, a, b));
        }
    }
    best.map(|(_, _, a, b)| (a, b))
}

/// Test rectangle at `test_origin` (centered by default), val as a full-width
/// strip of `round(val·nx)` rows at the top (or bottom, if the top would
/// overlap the test rectangle), everything else train.
fn square(nx: usize, ny: usize, spec: &SplitSpec) -> Result<SplitAssignment, SplitError> {
    let (_, va, te) = spec.ratios;
    let total = (nx * ny) as f64;
    let val_rows = if va > 0.0 { ((va * nx as f64).round() as usize).max(1) } else { 0 };
    // Keep a one-pixel train ring around a centered rectangle and leave room for the val strip.
    let (max_a, max_b) = match spec.test_origin {
        TestOrigin::Centered => ((nx - 2).min(nx.saturating_sub(2 * val_rows)), ny - 2),
        TestOrigin::At(ox, oy) => {
            if ox >= nx || oy >= ny {
                return Err(SplitError::BadSpec(format!("test origin ({ox}, {oy}) outside grid")));
            }
            (nx - ox, ny - oy)
        }
    };
    let (a, b) = closest_rectangle(te * total, nx, ny, max_a, max_b).ok_or(SplitError::TooSmall { nx, ny })?;
    let (ox, oy) = match spec.test_origin {
        TestOrigin::Centered => ((nx - a) / 2, (ny - b) / 2),
        TestOrigin::At(ox, oy) => (ox, oy),
    };

    let mut out = SplitAssignment::uniform(nx, ny, SplitLabel::Train);
    if va > 0.0 {
        let rows = if val_rows <= ox {
            0..val_rows
        } else if ox + a <= nx - val_rows {
            nx - val_rows..nx
        } else {
            return Err(SplitError::BadSpec(format!(
                "a {val_rows}-row validation strip does not fit beside the test rectangle"
            )));
        };
        for x in rows {
            for y in 0..ny {
                out.set(x, y, SplitLabel::Val);
            }
        }
    }
    for x in ox..ox + a {
        for y in oy..oy + b {
            out.set(x, y, SplitLabel::Test);
        }
    }
    Ok(out)
}

fn quadrant(nx: usize, ny: usize, spec: &SplitSpec) -> Result<SplitAssignment, SplitError> {
    let roles = spec.quadrant_roles;
    let mut out = SplitAssignment::uniform(nx, ny, SplitLabel::Excluded);
    for q in Quadrant::ALL {
        let (xs, ys) = q.bounds(nx, ny);
        for x in xs {
            for y in ys.clone() {
                out.set(x, y, roles.get(q));
            }
        }
    }
    if spec.ratio_exact {
        rebalance_val_test(&mut out, spec)?;
    }
    Ok(out)
}

fn rebalance_val_test(out: &mut SplitAssignment, spec: &SplitSpec) -> Result<(), SplitError> {
    let roles = spec.quadrant_roles;
    let (vals, tests) = (roles.find(SplitLabel::Val), roles.find(SplitLabel::Test));
    let (&[v], &[t]) = (vals.as_slice(), tests.as_slice()) else {
        return Err(SplitError::BadSpec(
            "ratio-exact quadrant mode needs exactly one val and one test quadrant".into(),
        ));
    };
    let (nx, ny) = (out.nx, out.ny);
    let target = (spec.ratios.2 * (nx * ny) as f64).round() as isize;
    let needed = target - out.count(SplitLabel::Test) as isize;
    if needed > 0 {
        move_strip(out, v, t, SplitLabel::Test, needed as usize)
    } else if needed < 0 {
        move_strip(out, t, v, SplitLabel::Val, (-needed) as usize)
    } else {
        Ok(())
    }
}

/// Relabels the strips of quadrant `src` nearest to `dst` as `label`, about
/// `count` pixels in whole rows or columns, always leaving one strip behind.
fn move_strip(out: &mut SplitAssignment, src: Quadrant, dst: Quadrant, label: SplitLabel, count: usize) -> Result<(), SplitError> {
    let (nx, ny) = (out.nx, out.ny);
    let (sx, sy) = src.bounds(nx, ny);
    if src.is_south() == dst.is_south() && src.is_east() != dst.is_east() {
        let k = ((count as f64 / sx.len() as f64).round() as usize).min(sy.len().saturating_sub(1));
        let cols: Vec<usize> = if dst.is_east() {
            (sy.end - k..sy.end).collect()
        } else {
            (sy.start..sy.start + k).collect()
        };
        for x in sx {
            for &y in &cols {
                out.set(x, y, label);
            }
        }
    } else if src.is_east() == dst.is_east() && src.is_south() != dst.is_south() {
        let k = ((count as f64 / sy.len() as f64).round() as usize).min(sx.len().saturating_sub(1));
        let rows: Vec<usize> = if dst.is_south() {
            (sx.end - k..sx.end).collect()
        } else {
            (sx.start..sx.start + k).collect()
        };
        for &x in &rows {
            for y in sy.clone() {
                out.set(x, y, label);
            }
        }
    } else {
        return Err(SplitError::BadSpec(
            "val and test quadrants must share an edge in ratio-exact mode".into(),
        ));
    }
    Ok(())
}

pub const LEAKAGE_DISTANCES: [usize; 4] = [1, 2, 4, 8];

/// Spatial proximity of test pixels to training pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub disjoint: bool,
    pub n_train: usize,
    pub n_test: usize,
    /// `(d, count)`: test pixels within Chebyshev distance `d` of a train pixel.
    pub test_within: Vec<(usize, usize)>,
    /// Number of 4-neighbor pixel edges joining a test and a train pixel.
    pub boundary_edges: usize,
}

/// Chebyshev distance from every pixel to the nearest pixel carrying `label`
/// (`usize::MAX` if there is none). Two-pass chamfer with unit 8-neighbor
/// weights, which is exact for the chessboard metric.
pub fn chebyshev_distance_to(split: &SplitAssignment, label: SplitLabel) -> Vec<usize> {
    let (nx, ny) = (split.nx, split.ny);
    const INF: usize = usize::MAX / 2;
    let mut d: Vec<usize> = split
        .labels
        .iter()
        .map(|&l| if l == label { 0 } else { INF })
        .collect();
    let idx = |x: usize, y: usize| x * ny + y;
    for x in 0..nx {
        for y in 0..ny {
            let mut best = d[idx(x, y)];
            if x > 0 {
                best = best.min(d[idx(x - 1, y)] + 1);
                if y > 0 {
                    best = best.min(d[idx(x - 1, y - 1)] + 1);
                }
                if y + 1 < ny {
                    best = best.min(d[idx(x - 1, y + 1)] + 1);
                }
            }
            if y > 0 {
                best = best.min(d[idx(x, y - 1)] + 1);
            }
            d[idx(x, y)] = best;
        }
    }
    for x in (0..nx).rev() {
        for y in (0..ny).rev() {
            let mut best = d[idx(x, y)];
            if x + 1 < nx {
                best = best.min(d[idx(x + 1, y)] + 1);
                if y > 0 {
                    best = best.min(d[idx(x + 1, y - 1)] + 1);
                }
                if y + 1 < ny {
                    best = best.min(d[idx(x + 1, y + 1)] + 1);
                }
            }
            if y + 1 < ny {
                best = best.min(d[idx(x, y + 1)] + 1);
            }
            d[idx(x, y)] = best;
        }
    }
    d.into_iter().map(|v| if v >= INF { usize::MAX } else { v }).collect()
}

pub fn leakage_report(split: &SplitAssignment) -> Result<LeakageReport, SplitError> {
    let n_train = split.count(SplitLabel::Train);
    let n_test = split.count(SplitLabel::Test);
    if n_train == 0 || n_test == 0 {
        return Err(SplitError::DegenerateSplit(format!(
            "{n_train} train and {n_test} test pixels"
        )));
    }
    // One label per pixel, so train and test cannot overlap.
    let disjoint = true;
    assert!(split.labels.len() == split.nx * split.ny);

    let dist = chebyshev_distance_to(split, SplitLabel::Train);
    let test_within = LEAKAGE_DISTANCES
        .iter()
        .map(|&d| {
            let c = split
                .labels
                .iter()
                .zip(&dist)
                .filter(|(&l, &dd)| l == SplitLabel::Test && dd <= d)
                .count();
            (d, c)
        })
        .collect();

    let (nx, ny) = (split.nx, split.ny);
    let is_pair = |a: SplitLabel, b: SplitLabel| {
        (a == SplitLabel::Test && b == SplitLabel::Train) || (a == SplitLabel::Train && b == SplitLabel::Test)
    };
    let mut boundary_edges = 0;
    for x in 0..nx {
        for y in 0..ny {
            let l = split.get(x, y);
            if x + 1 < nx && is_pair(l, split.get(x + 1, y)) {
                boundary_edges += 1;
            }
            if y + 1 < ny && is_pair(l, split.get(x, y + 1)) {
                boundary_edges += 1;
            }
        }
    }
    Ok(LeakageReport {
        disjoint,
        n_train,
        n_test,
        test_within,
        boundary_edges,
    })
}

/// Flat pixel indices (`x·ny + y`) per label, in label order
/// Train, Val, Test, Excluded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitPixelTable {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub excluded: Vec<usize>,
}

impl SplitPixelTable {
    pub fn get(&self, label: SplitLabel) -> &[usize] {
        match label {
            SplitLabel::Train => &self.train,
            SplitLabel::Val => &self.val,
            SplitLabel::Test => &self.test,
            SplitLabel::Excluded => &self.excluded,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len() + self.excluded.len()
    }
}

pub fn split_pixel_table(split: &SplitAssignment) -> SplitPixelTable {
    let mut t = SplitPixelTable::default();
    for (i, &l) in split.labels.iter().enumerate() {
        match l {
            SplitLabel::Train => t.train.push(i),
            SplitLabel::Val => t.val.push(i),
            SplitLabel::Test => t.test.push(i),
            SplitLabel::Excluded => t.excluded.push(i),
        }
    }
    t
}

/// Whether the pixels carrying `label` form one 4-connected region
/// (vacuously true when there are none).
pub fn is_four_connected(split: &SplitAssignment, label: SplitLabel) -> bool {
    let (nx, ny) = (split.nx, split.ny);
    let Some(start) = split.labels.iter().position(|&l| l == label) else {
        return true;
    };
    let mut seen = vec![false; nx * ny];
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 0;
    while let Some(i) = stack.pop() {
        reached += 1;
        let (x, y) = (i / ny, i % ny);
        let mut visit = |j: usize| {
            if !seen[j] && split.labels[j] == label {
                seen[j] = true;
                stack.push(j);
            }
        };
        if x > 0 {
            visit(i - ny);
        }
        if x + 1 < nx {
            visit(i + ny);
        }
        if y > 0 {
            visit(i - 1);
        }
        if y + 1 < ny {
            visit(i + 1);
        }
    }
    reached == split.count(label)
}
