//! Antenna placement, bistatic delay/Doppler and the fast-time range window.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Points closer than this to an antenna are treated as coincident.
const COINCIDENCE_TOL: f64 = 1e-9;

/// Boundary samples per edge used to bracket the minimum bistatic range.
const EDGE_SAMPLES: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Vec2::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Axis-aligned surveillance rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionSpec", into = "RegionSpec")]
pub struct Region {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
struct RegionSpec {
    x: [f64; 2],
    y: [f64; 2],
}

impl TryFrom<RegionSpec> for Region {
    type Error = Error;
    fn try_from(s: RegionSpec) -> Result<Self> {
        Region::new(s.x[0], s.x[1], s.y[0], s.y[1])
    }
}

impl From<Region> for RegionSpec {
    fn from(r: Region) -> Self {
        RegionSpec {
            x: [r.x_min, r.x_max],
            y: [r.y_min, r.y_max],
        }
    }
}

impl Region {
    /// A rectangle; zero width or height is allowed (a segment or a point).
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::param("region", "bounds must be finite"));
        }
        if x_min > x_max || y_min > y_max {
            return Err(Error::param("region", "min bound exceeds max bound"));
        }
        Ok(Region {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn point(p: Vec2) -> Result<Self> {
        Region::new(p.x, p.x, p.y, p.y)
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            Vec2::new(self.x_min, self.y_min),
            Vec2::new(self.x_max, self.y_min),
            Vec2::new(self.x_max, self.y_max),
            Vec2::new(self.x_min, self.y_max),
        ]
    }

    pub fn translate(&self, by: Vec2) -> Region {
        Region {
            x_min: self.x_min + by.x,
            x_max: self.x_max + by.x,
            y_min: self.y_min + by.y,
            y_max: self.y_max + by.y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub position: Vec2,
    #[serde(default)]
    pub velocity: Vec2,
}

impl Target {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        Target { position, velocity }
    }
}

/// Transmit and receive antenna positions plus the surveillance region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometrySpec", into = "GeometrySpec")]
pub struct AntennaGeometry {
    tx: Vec<Vec2>,
    rx: Vec<Vec2>,
    region: Region,
}

#[derive(Serialize, Deserialize)]
struct GeometrySpec {
    tx: Vec<Vec2>,
    rx: Vec<Vec2>,
    region: Region,
}

impl TryFrom<GeometrySpec> for AntennaGeometry {
    type Error = Error;
    fn try_from(s: GeometrySpec) -> Result<Self> {
        AntennaGeometry::new(s.tx, s.rx, s.region)
    }
}

impl From<AntennaGeometry> for GeometrySpec {
    fn from(g: AntennaGeometry) -> Self {
        GeometrySpec {
            tx: g.tx,
            rx: g.rx,
            region: g.region,
        }
    }
}

impl AntennaGeometry {
    pub fn new(tx: Vec<Vec2>, rx: Vec<Vec2>, region: Region) -> Result<Self> {
        if tx.is_empty() || rx.is_empty() {
            return Err(Error::param("geometry", "need at least one transmitter and one receiver"));
        }
        if !tx.iter().chain(&rx).all(|p| p.is_finite()) {
            return Err(Error::param("geometry", "antenna positions must be finite"));
        }
        if !(region.area() > 0.0) {
            return Err(Error::param("region", "surveillance region must have positive area"));
        }
        if let Some(p) = tx.iter().chain(&rx).find(|p| region.contains(**p)) {
            return Err(Error::param(
                "geometry",
                format!("antenna at ({}, {}) lies inside the surveillance region", p.x, p.y),
            ));
        }
        Ok(AntennaGeometry { tx, rx, region })
    }

    pub fn tx(&self) -> &[Vec2] {
        &self.tx
    }

    pub fn rx(&self) -> &[Vec2] {
        &self.rx
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn n_tx(&self) -> usize {
        self.tx.len()
    }

    pub fn n_rx(&self) -> usize {
        self.rx.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.tx.len() * self.rx.len()
    }

    /// Transmitter-major linear index of pair (m, n).
    pub fn pair_index(&self, pair: (usize, usize)) -> usize {
        pair.0 * self.rx.len() + pair.1
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n_rx = self.rx.len();
        (0..self.tx.len()).flat_map(move |m| (0..n_rx).map(move |n| (m, n)))
    }

    pub fn antennas(&self, pair: (usize, usize)) -> (Vec2, Vec2) {
        (self.tx[pair.0], self.rx[pair.1])
    }

    pub fn bistatic_range(&self, pair: (usize, usize), p: Vec2) -> f64 {
        let (t, r) = self.antennas(pair);
        bistatic_range(t, r, p)
    }

    /// Same geometry shifted by a common vector.
    pub fn translate(&self, by: Vec2) -> AntennaGeometry {
        AntennaGeometry {
            tx: self.tx.iter().map(|p| *p + by).collect(),
            rx: self.rx.iter().map(|p| *p + by).collect(),
            region: self.region.translate(by),
        }
    }
}

/// Parametric antenna layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// Both arrays on origin-centred circles, first element at angle 0, counter-clockwise.
    Circular {
        n_tx: usize,
        n_rx: usize,
        tx_radius: f64,
        rx_radius: f64,
    },
    /// Transmitters on a circle; receivers at k·spacing along +x then +y.
    LShaped {
        n_tx: usize,
        n_rx: usize,
        tx_radius: f64,
        rx_spacing: f64,
    },
    /// Transmitters on a circle; receivers uniform over [-half_width, half_width]², outside the region.
    Random {
        n_tx: usize,
        n_rx: usize,
        tx_radius: f64,
        half_width: f64,
    },
    /// Antenna positions given directly.
    Explicit { tx: Vec<Vec2>, rx: Vec<Vec2> },
}

impl Layout {
    pub fn fig3_circular() -> Layout {
        Layout::Circular {
            n_tx: 3,
            n_rx: 10,
            tx_radius: 5000.0,
            rx_radius: 3000.0,
        }
    }

    /// Receiver spacing of 495 m reproduces the reported 116-sample window.
    pub fn fig4_l_shaped() -> Layout {
        Layout::LShaped {
            n_tx: 3,
            n_rx: 10,
            tx_radius: 5000.0,
            rx_spacing: 495.0,
        }
    }
}

pub fn circle(count: usize, radius: f64) -> Vec<Vec2> {
    (0..count)
        .map(|i| Vec2::from_polar(radius, 2.0 * PI * i as f64 / count as f64))
        .collect()
}

pub fn make_geometry(layout: &Layout, region: Region, seed: u64) -> Result<AntennaGeometry> {
    let check_count = |name: &'static str, n: usize| {
        if n == 0 {
            Err(Error::param(name, "must be at least 1"))
        } else {
            Ok(())
        }
    };
    let check_length = |name: &'static str, v: f64| {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::param(name, format!("must be finite and positive, got {v}")))
        }
    };
    let (tx, rx) = match layout.clone() {
        Layout::Circular {
            n_tx,
            n_rx,
            tx_radius,
            rx_radius,
        } => {
            check_count("n_tx", n_tx)?;
            check_count("n_rx", n_rx)?;
            check_length("tx_radius", tx_radius)?;
            check_length("rx_radius", rx_radius)?;
            (circle(n_tx, tx_radius), circle(n_rx, rx_radius))
        }
        Layout::LShaped {
            n_tx,
            n_rx,
            tx_radius,
            rx_spacing,
        } => {
            check_count("n_tx", n_tx)?;
            check_count("n_rx", n_rx)?;
            check_length("tx_radius", tx_radius)?;
            check_length("rx_spacing", rx_spacing)?;
            let on_x = n_rx.div_ceil(2);
            let rx = (0..n_rx)
                .map(|i| {
                    if i < on_x {
                        Vec2::new((i + 1) as f64 * rx_spacing, 0.0)
                    } else {
                        Vec2::new(0.0, (i - on_x + 1) as f64 * rx_spacing)
                    }
                })
                .collect();
            (circle(n_tx, tx_radius), rx)
        }
        Layout::Random {
            n_tx,
            n_rx,
            tx_radius,
            half_width,
        } => {
            check_count("n_tx", n_tx)?;
            check_count("n_rx", n_rx)?;
            check_length("tx_radius", tx_radius)?;
            check_length("half_width", half_width)?;
            let bounds = Region::new(-half_width, half_width, -half_width, half_width)?;
            if region.contains(bounds.corners()[0]) && region.contains(bounds.corners()[2]) {
                return Err(Error::param("half_width", "receiver box lies inside the region"));
            }
            let mut rng = rng::stream(seed, Purpose::Geometry, &[]);
            let mut rx = Vec::with_capacity(n_rx);
            while rx.len() < n_rx {
                let p = Vec2::new(
                    rng.gen_range(-half_width..=half_width),
                    rng.gen_range(-half_width..=half_width),
                );
                if !region.contains(p) {
                    rx.push(p);
                }
            }
            (circle(n_tx, tx_radius), rx)
        }
        Layout::Explicit { tx, rx } => (tx, rx),
    };
    AntennaGeometry::new(tx, rx, region)
}

pub fn bistatic_range(tx: Vec2, rx: Vec2, p: Vec2) -> f64 {
    p.distance(tx) + p.distance(rx)
}

fn check_distinct(p: Vec2, antenna: Vec2) -> Result<f64> {
    let d = p.distance(antenna);
    if d <= COINCIDENCE_TOL {
        Err(Error::CoincidentPoints { x: p.x, y: p.y })
    } else {
        Ok(d)
    }
}

/// Propagation delay tx → target → rx in seconds.
pub fn delay(tx: Vec2, rx: Vec2, target: Vec2) -> Result<f64> {
    let dt = check_distinct(target, tx)?;
    let dr = check_distinct(target, rx)?;
    Ok((dt + dr) / SPEED_OF_LIGHT)
}

/// Sum of the unit vectors from each antenna towards the target.
///
/// The bistatic Doppler is `carrier / c · ⟨velocity, bistatic_direction⟩`.
pub fn bistatic_direction(tx: Vec2, rx: Vec2, target: Vec2) -> Result<Vec2> {
    let dt = check_distinct(target, tx)?;
    let dr = check_distinct(target, rx)?;
    Ok((target - tx) * (1.0 / dt) + (target - rx) * (1.0 / dr))
}

/// Bistatic Doppler frequency in Hz.
pub fn doppler_shift(tx: Vec2, rx: Vec2, target: &Target, carrier_hz: f64) -> Result<f64> {
    let dir = bistatic_direction(tx, rx, target.position)?;
    Ok(carrier_hz / SPEED_OF_LIGHT * target.velocity.dot(dir))
}

/// How range windows are laid out across pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPolicy {
    /// One window for every pair: global min/max bistatic range over all pairs.
    #[default]
    Shared,
    /// Each pair sized to its own min/max bistatic range over the region.
    PerPair,
}

/// Fast-time extent of one pair's receive window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeBounds {
    pub r_min: f64,
    pub r_max: f64,
    pub l_max: usize,
    /// Range spanned by one fast-time sample, c·T_s.
    pub cell: f64,
}

impl RangeBounds {
    pub fn from_extent(r_min: f64, r_max: f64, sample_period: f64) -> Result<Self> {
        if !(sample_period > 0.0) || !sample_period.is_finite() {
            return Err(Error::param("sample_period", "must be finite and positive"));
        }
        let cell = SPEED_OF_LIGHT * sample_period;
        let l_max = ((r_max - r_min) / cell).floor().max(0.0) as usize;
        Ok(RangeBounds {
            r_min,
            r_max,
            l_max,
            cell,
        })
    }

    /// Bounds of one transmitter/receiver pair over a region.
    pub fn over(region: &Region, tx: Vec2, rx: Vec2, sample_period: f64) -> Result<Self> {
        let (lo, hi) = range_extent(region, tx, rx);
        RangeBounds::from_extent(lo, hi, sample_period)
    }

    /// Integer sample offset of a bistatic range, or `None` outside the window.
    pub fn offset(&self, range: f64) -> Option<usize> {
        let x = (range - self.r_min) / self.cell;
        let l = if x < 0.0 && x > -1e-9 { 0.0 } else { x.floor() };
        if l >= 0.0 && l <= self.l_max as f64 {
            Some(l as usize)
        } else {
            None
        }
    }

    /// Bistatic range at a (possibly fractional) sample offset.
    pub fn range_at(&self, offset: f64) -> f64 {
        self.r_min + offset * self.cell
    }

    pub fn columns(&self, code_length: usize) -> usize {
        code_length + self.l_max
    }
}

/// Min and max of the bistatic range over a rectangle.
///
/// The bistatic range is convex, so the max sits on a corner and the min on
/// the boundary (or on the tx–rx segment, which also meets the boundary when
/// it crosses the region). Each edge is sampled densely and the best sample
/// refined by golden-section search.
pub fn range_extent(region: &Region, tx: Vec2, rx: Vec2) -> (f64, f64) {
    let f = |p: Vec2| bistatic_range(tx, rx, p);
    let corners = region.corners();
    let r_max = corners.iter().map(|&c| f(c)).fold(f64::NEG_INFINITY, f64::max);
    let mut r_min = f64::INFINITY;
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        let at = |t: f64| f(a + (b - a) * t);
        let mut best = 0;
        let mut best_v = f64::INFINITY;
        for k in 0..EDGE_SAMPLES {
            let v = at(k as f64 / (EDGE_SAMPLES - 1) as f64);
            if v < best_v {
                best_v = v;
                best = k;
            }
        }
        let step = 1.0 / (EDGE_SAMPLES - 1) as f64;
        let lo = (best as f64 - 1.0).max(0.0) * step;
        let hi = ((best as f64 + 1.0) * step).min(1.0);
        r_min = r_min.min(best_v).min(golden_min(at, lo, hi));
    }
    (r_min, r_max)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Range windows for every pair of a geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub policy: WindowPolicy,
    n_rx: usize,
    bounds: Vec<RangeBounds>,
}

impl WindowPlan {
    pub fn new(geometry: &AntennaGeometry, sample_period: f64, policy: WindowPolicy) -> Result<Self> {
        let extents: Vec<(f64, f64)> = geometry
            .pairs()
            .map(|pair| {
                let (t, r) = geometry.antennas(pair);
                range_extent(geometry.region(), t, r)
            })
            .collect();
        let bounds = match policy {
            WindowPolicy::PerPair => extents
                .iter()
                .map(|&(lo, hi)| RangeBounds::from_extent(lo, hi, sample_period))
                .collect::<Result<Vec<_>>>()?,
            WindowPolicy::Shared => {
                let lo = extents.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
                let hi = extents.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
                let b = RangeBounds::from_extent(lo, hi, sample_period)?;
                vec![b; extents.len()]
            }
        };
        Ok(WindowPlan {
            policy,
            n_rx: geometry.n_rx(),
            bounds,
        })
    }

    pub fn bounds(&self, pair: (usize, usize)) -> &RangeBounds {
        &self.bounds[pair.0 * self.n_rx + pair.1]
    }

    /// Largest window over all pairs.
    pub fn l_max(&self) -> usize {
        self.bounds.iter().map(|b| b.l_max).max().unwrap_or(0)
    }
}

/// One pair's window together with the offsets of a set of targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeWindow {
    pub r_min: f64,
    pub r_max: f64,
    pub l_max: usize,
    pub offsets: Vec<usize>,
}

impl RangeWindow {
    pub fn from_bounds(
        bounds: &RangeBounds,
        geometry: &AntennaGeometry,
        pair: (usize, usize),
        targets: &[Target],
    ) -> Result<Self> {
        let (t, r) = geometry.antennas(pair);
        let offsets = targets
            .iter()
            .map(|tg| {
                let range = delay(t, r, tg.position)? * SPEED_OF_LIGHT;
                bounds.offset(range).ok_or(Error::OutsideWindow {
                    tx: pair.0,
                    rx: pair.1,
                    x: tg.position.x,
                    y: tg.position.y,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RangeWindow {
            r_min: bounds.r_min,
            r_max: bounds.r_max,
            l_max: bounds.l_max,
            offsets,
        })
    }
}

pub fn range_window(
    geometry: &AntennaGeometry,
    pair: (usize, usize),
    targets: &[Target],
    sample_period: f64,
    policy: WindowPolicy,
) -> Result<RangeWindow> {
    if pair.0 >= geometry.n_tx() || pair.1 >= geometry.n_rx() {
        return Err(Error::param("pair", format!("{pair:?} out of range")));
    }
    let plan = WindowPlan::new(geometry, sample_period, policy)?;
    RangeWindow::from_bounds(plan.bounds(pair), geometry, pair, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig3_region() -> Region {
        Region::new(1000.0, 1200.0, 1000.0, 1200.0).unwrap()
    }

    #[test]
    fn circular_layout_matches_reported_coordinates() {
        let g = make_geometry(&Layout::fig3_circular(), fig3_region(), 0).unwrap();
        let tx = g.tx()[2];
        assert!((tx.x + 2500.0).abs() < 0.05 && (tx.y + 4330.1).abs() < 0.05, "{tx:?}");
        let rx = g.rx()[9];
        assert!((rx.x - 2427.1).abs() < 0.05 && (rx.y + 1763.4).abs() < 0.05, "{rx:?}");
    }

    #[test]
    fn single_tx_sits_at_angle_zero() {
        let region = Region::new(10.0, 11.0, 10.0, 11.0).unwrap();
        let layout = Layout::Circular {
            n_tx: 1,
            n_rx: 1,
            tx_radius: 1.0,
            rx_radius: 2.0,
        };
        let g = make_geometry(&layout, region, 0).unwrap();
        assert_relative_eq!(g.tx()[0].x, 1.0);
        assert_eq!(g.tx()[0].y, 0.0);
    }

    #[test]
    fn layouts_reject_bad_parameters() {
        let bad = [
            Layout::Circular { n_tx: 0, n_rx: 1, tx_radius: 1.0, rx_radius: 1.0 },
            Layout::Circular { n_tx: 1, n_rx: 1, tx_radius: f64::NAN, rx_radius: 1.0 },
            Layout::LShaped { n_tx: 1, n_rx: 0, tx_radius: 1.0, rx_spacing: 1.0 },
            Layout::Random { n_tx: 1, n_rx: 1, tx_radius: f64::INFINITY, half_width: 1.0 },
        ];
        for l in bad {
            assert!(make_geometry(&l, fig3_region(), 0).is_err(), "{l:?}");
        }
    }

    #[test]
    fn l_shape_places_receivers_on_both_axes() {
        let g = make_geometry(&Layout::fig4_l_shaped(), fig3_region(), 0).unwrap();
        let on_x = g.rx().iter().filter(|p| p.y == 0.0 && p.x > 0.0).count();
        let on_y = g.rx().iter().filter(|p| p.x == 0.0 && p.y > 0.0).count();
        assert_eq!((on_x, on_y), (5, 5));
        assert_relative_eq!(g.rx()[1].x - g.rx()[0].x, 495.0);
    }

    #[test]
    fn random_layout_is_seeded() {
        let layout = Layout::Random { n_tx: 3, n_rx: 10, tx_radius: 5000.0, half_width: 3000.0 };
        let a = make_geometry(&layout, fig3_region(), 9).unwrap();
        let b = make_geometry(&layout, fig3_region(), 9).unwrap();
        let c = make_geometry(&layout, fig3_region(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.rx().iter().all(|p| p.x.abs() <= 3000.0 && p.y.abs() <= 3000.0));
    }

    #[test]
    fn monostatic_delay() {
        let tau = delay(Vec2::ZERO, Vec2::ZERO, Vec2::new(1500.0, 0.0)).unwrap();
        assert_relative_eq!(tau, 1.0e-5, max_relative = 1e-15);
    }

    #[test]
    fn coincident_points_are_rejected() {
        let t = Target::new(Vec2::new(1.0, 2.0), Vec2::new(1.0, 0.0));
        assert!(matches!(
            delay(Vec2::new(1.0, 2.0), Vec2::ZERO, t.position),
            Err(Error::CoincidentPoints { .. })
        ));
        assert!(doppler_shift(Vec2::ZERO, Vec2::new(1.0, 2.0), &t, 1e9).is_err());
    }

    #[test]
    fn monostatic_radial_doppler() {
        let t = Target::new(Vec2::new(700.0, 0.0), Vec2::new(12.0, 0.0));
        let f = doppler_shift(Vec2::ZERO, Vec2::ZERO, &t, 5e9).unwrap();
        assert_relative_eq!(f, 2.0 * 5e9 * 12.0 / SPEED_OF_LIGHT, max_relative = 1e-14);
        let still = Target::new(t.position, Vec2::ZERO);
        assert_eq!(doppler_shift(Vec2::ZERO, Vec2::ZERO, &still, 5e9).unwrap(), 0.0);
    }

    #[test]
    fn reported_sample_offset_144() {
        let g = make_geometry(&Layout::fig3_circular(), fig3_region(), 0).unwrap();
        let target = Target::new(Vec2::new(1100.0, 1100.0), Vec2::new(10.0, 10.0));
        let w = range_window(&g, (2, 9), &[target], 1e-7, WindowPolicy::Shared).unwrap();
        assert_eq!(w.offsets, vec![144]);
        assert_eq!(w.l_max, 200);
    }

    #[test]
    fn point_region_gives_zero_offset() {
        let p = Vec2::new(1100.0, 1100.0);
        let b = RangeBounds::over(&Region::point(p).unwrap(), Vec2::new(-2500.0, -4330.1), Vec2::new(2427.1, -1763.4), 1e-7).unwrap();
        assert_eq!(b.l_max, 0);
        assert_eq!(b.offset(bistatic_range(Vec2::new(-2500.0, -4330.1), Vec2::new(2427.1, -1763.4), p)), Some(0));
    }

    #[test]
    fn nonpositive_sample_period_rejected() {
        let g = make_geometry(&Layout::fig3_circular(), fig3_region(), 0).unwrap();
        assert!(range_window(&g, (0, 0), &[], 0.0, WindowPolicy::Shared).is_err());
        assert!(range_window(&g, (0, 0), &[], -1.0, WindowPolicy::PerPair).is_err());
    }

    #[test]
    fn extent_matches_brute_force_interior_scan() {
        let region = fig3_region();
        let (t, r) = (Vec2::new(5000.0, 0.0), Vec2::new(-927.0, 2853.2));
        let (lo, hi) = range_extent(&region, t, r);
        let mut blo = f64::INFINITY;
        let mut bhi = f64::NEG_INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                let p = Vec2::new(1000.0 + i as f64 * 0.5, 1000.0 + j as f64 * 0.5);
                let v = bistatic_range(t, r, p);
                blo = blo.min(v);
                bhi = bhi.max(v);
            }
        }
        assert!(lo <= blo + 1e-9 && blo - lo < 1e-3, "{lo} vs {blo}");
        assert_relative_eq!(hi, bhi, max_relative = 1e-12);
    }

    #[test]
    fn segment_crossing_region_gives_baseline_minimum() {
        let region = Region::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let (t, r) = (Vec2::new(-10.0, 0.2), Vec2::new(10.0, 0.2));
        let (lo, _) = range_extent(&region, t, r);
        assert_relative_eq!(lo, 20.0, max_relative = 1e-12);
    }

    #[test]
    fn region_rejects_antenna_inside() {
        let region = fig3_region();
        let err = AntennaGeometry::new(vec![Vec2::new(1100.0, 1100.0)], vec![Vec2::ZERO], region);
        assert!(err.is_err());
    }

    #[test]
    fn geometry_roundtrips_through_toml() {
        let g = make_geometry(&Layout::fig3_circular(), fig3_region(), 0).unwrap();
        let s = toml::to_string(&g).unwrap();
        let back: AntennaGeometry = toml::from_str(&s).unwrap();
        assert_eq!(g, back);
    }
}
