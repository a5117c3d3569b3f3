//! Parametric coil centerlines and their straight-filament discretization.
//!
//! Conventions: meander panels lie in the `z = 0` plane with runs parallel to
//! `y` and stepping along `x`; the body sits on the `-z` side. Helical coils
//! wind about the `z` axis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::num::{CompensatedSum, Mat3, Real, Vec3};

/// Minimum separation between consecutive path points, in meters.
pub const MIN_POINT_SEPARATION: f64 = 1e-9;

/// Points per turn used when polygonizing circular and helical coils.
pub const POINTS_PER_TURN: usize = 128;

/// Wire centerline: an ordered polyline with an optional implicit closing edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoilPath<T>", into = "RawCoilPath<T>")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct CoilPath<T> {
    points: Vec<Vec3<T>>,
    closed: bool,
    wire_radius: T,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
struct RawCoilPath<T> {
    points: Vec<Vec3<T>>,
    closed: bool,
    wire_radius: T,
}

impl<T: Real> TryFrom<RawCoilPath<T>> for CoilPath<T> {
    type Error = crate::Error;
    fn try_from(raw: RawCoilPath<T>) -> Result<Self> {
        CoilPath::new(raw.points, raw.closed, raw.wire_radius)
    }
}

impl<T: Real> From<CoilPath<T>> for RawCoilPath<T> {
    fn from(p: CoilPath<T>) -> Self {
        RawCoilPath {
            points: p.points,
            closed: p.closed,
            wire_radius: p.wire_radius,
        }
    }
}

impl<T: Real> CoilPath<T> {
    pub fn new(points: Vec<Vec3<T>>, closed: bool, wire_radius: T) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("coil path needs at least 2 points"));
        }
        if !(wire_radius > T::zero()) || !wire_radius.is_finite() {
            return Err(invalid("wire_radius must be positive"));
        }
        let min_sep = T::lit(MIN_POINT_SEPARATION);
        for (i, w) in points.windows(2).enumerate() {
            if !w[0].is_finite() || !w[1].is_finite() {
                return Err(invalid(format!("non-finite point near index {i}")));
            }
            if w[0].distance(w[1]) <= min_sep {
                return Err(invalid(format!("points {i} and {} coincide", i + 1)));
            }
        }
        if closed && points[0].distance(points[points.len() - 1]) <= min_sep {
            return Err(invalid("closed path repeats its first point at the end"));
        }
        Ok(Self {
            points,
            closed,
            wire_radius,
        })
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn wire_radius(&self) -> T {
        self.wire_radius
    }

    /// Straight edges of the polyline, including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Vec3<T>, Vec3<T>)> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    pub fn length(&self) -> T {
        let mut acc = CompensatedSum::new();
        for (a, b) in self.edges() {
            acc.add(a.distance(b));
        }
        acc.value()
    }

    /// Arithmetic mean of the vertices.
    pub fn centroid(&self) -> Vec3<T> {
        let n = T::from_usize(self.points.len()).unwrap();
        let mut c = Vec3::zero();
        for &p in &self.points {
            c += p;
        }
        c * (T::one() / n)
    }

    pub fn translated(&self, by: Vec3<T>) -> Self {
        self.map_points(|p| p + by)
    }

    pub(crate) fn map_points(&self, f: impl Fn(Vec3<T>) -> Vec3<T>) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
            closed: self.closed,
            wire_radius: self.wire_radius,
        }
    }

    /// Lengths of the straight edges, in path order.
    pub fn edge_lengths(&self) -> Vec<T> {
        self.edges().map(|(a, b)| a.distance(b)).collect()
    }
}

/// Serpentine (meander) panel description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct MeanderSpec<T> {
    pub panel_width: T,
    pub panel_height: T,
    /// Center-to-center distance of adjacent parallel runs.
    pub wire_spacing: T,
    pub wire_radius: T,
    pub n_runs: usize,
}

impl<T: Real> MeanderSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs < 2 {
            return Err(invalid("meander needs n_runs >= 2"));
        }
        if !(self.panel_width > T::zero() && self.panel_height > T::zero()) {
            return Err(invalid("panel dimensions must be positive"));
        }
        if !(self.wire_radius > T::zero()) {
            return Err(invalid("wire_radius must be positive"));
        }
        if !(self.wire_spacing > T::lit(2.0) * self.wire_radius) {
            return Err(invalid("wire_spacing must exceed the wire diameter"));
        }
        let span = self.span();
        if span > self.panel_width * (T::one() + T::lit(1e-12)) {
            return Err(invalid(format!(
                "{} runs at spacing {} span {} m, wider than the {} m panel",
                self.n_runs, self.wire_spacing, span, self.panel_width
            )));
        }
        Ok(())
    }

    /// Centerline distance between the first and last run.
    pub fn span(&self) -> T {
        self.wire_spacing * T::from_usize(self.n_runs - 1).unwrap()
    }

    /// Centerline length of the serpentine path.
    pub fn wire_length(&self) -> T {
        let n = T::from_usize(self.n_runs).unwrap();
        n * self.panel_height + self.span()
    }

    /// Default filament length for this panel: a quarter spacing, capped at 5 mm.
    pub fn default_max_segment(&self) -> T {
        (self.wire_spacing / T::lit(4.0)).min(T::lit(5e-3))
    }
}

/// Two congruent meander halves side by side along `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct TwinMeanderSpec<T> {
    pub half: MeanderSpec<T>,
    /// Gap between the two panels.
    pub separation: T,
}

/// Rigid placement: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Placement<T> {
    pub translation: Vec3<T>,
    pub rotation: Mat3<T>,
}

impl<T: Real> Default for Placement<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Placement<T> {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zero(),
            rotation: Mat3::identity(),
        }
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Self {
            translation: t,
            rotation: Mat3::identity(),
        }
    }

    pub fn rotation(axis: Vec3<T>, angle: T) -> Self {
        Self {
            translation: Vec3::zero(),
            rotation: Mat3::rotation(axis, angle),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.translation.is_finite() {
            return Err(invalid("placement translation must be finite"));
        }
        if !(self.rotation.orthonormality_error() <= T::lit(1e-9)) {
            return Err(invalid("placement rotation is not orthonormal"));
        }
        Ok(())
    }

    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.apply(p) + self.translation
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &Self) -> Self {
        Self {
            translation: self.apply(inner.translation),
            rotation: self.rotation.mul(&inner.rotation),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionMode {
    /// Uniform in-plane (`x`, `y`) strain about the path centroid.
    Stretch,
    /// Cylindrical bend about an axis parallel to `y` on the body side.
    Bend,
    /// Seeded smooth random displacement field.
    RandomSmooth,
}

/// Parametric garment deformation standing in for body motion.
///
/// `amplitude` is a strain for `Stretch`, a bend angle (radians) accrued per
/// `spatial_wavelength` of arc for `Bend`, and a displacement in meters for
/// `RandomSmooth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct MotionPerturbation<T> {
    pub mode: MotionMode,
    pub amplitude: T,
    pub spatial_wavelength: T,
    pub seed: u64,
}

const RANDOM_MODES: usize = 8;

impl<T: Real> MotionPerturbation<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= T::zero()) {
            return Err(invalid("motion amplitude must be >= 0"));
        }
        if !(self.spatial_wavelength > T::zero()) {
            return Err(invalid("motion spatial_wavelength must be > 0"));
        }
        Ok(())
    }

    fn random_modes(&self) -> Vec<(Vec3<T>, Vec3<T>, T)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let unit = |rng: &mut ChaCha8Rng| loop {
            let v = Vec3::new(
                T::lit(rng.random_range(-1.0..1.0)),
                T::lit(rng.random_range(-1.0..1.0)),
                T::lit(rng.random_range(-1.0..1.0)),
            );
            let n = v.norm();
            if n > T::lit(0.1) && n <= T::one() {
                return v * (T::one() / n);
            }
        };
        (0..RANDOM_MODES)
            .map(|_| {
                let k = unit(&mut rng);
                let d = unit(&mut rng);
                let phase = T::lit(rng.random_range(0.0..std::f64::consts::TAU));
                (k, d, phase)
            })
            .collect()
    }

    /// Returns a point map for this deformation about `pivot`.
    fn point_map(&self, pivot: Vec3<T>) -> Box<dyn Fn(Vec3<T>) -> Vec3<T> + '_> {
        match self.mode {
            MotionMode::Stretch => {
                let s = T::one() + self.amplitude;
                Box::new(move |p| {
                    let d = p - pivot;
                    Vec3::new(pivot.x + d.x * s, pivot.y + d.y * s, p.z)
                })
            }
            MotionMode::Bend => {
                let radius = self.spatial_wavelength / self.amplitude;
                Box::new(move |p| wrap_point(p, pivot, radius))
            }
            MotionMode::RandomSmooth => {
                let modes = self.random_modes();
                let k = T::TAU() / self.spatial_wavelength;
                let norm = self.amplitude / T::from_usize(RANDOM_MODES).unwrap().sqrt();
                Box::new(move |p| {
                    let mut disp = Vec3::zero();
                    for &(dir, pol, phase) in &modes {
                        disp += pol * (k * dir.dot(p) + phase).sin();
                    }
                    p + disp * norm
                })
            }
        }
    }
}

/// Maps `p` onto a cylinder of `radius` whose axis is parallel to `y`, lying
/// `radius` below `pivot` on the `-z` side. Heights above `z = pivot.z` map
/// to radial offsets, so the `z = pivot.z` plane is wrapped isometrically.
fn wrap_point<T: Real>(p: Vec3<T>, pivot: Vec3<T>, radius: T) -> Vec3<T> {
    let phi = (p.x - pivot.x) / radius;
    let r = radius + (p.z - pivot.z);
    let (s, c) = phi.sin_cos();
    Vec3::new(
        pivot.x + r * s,
        p.y,
        pivot.z + r * c - radius,
    )
}

/// Rigid transform of a path. Lengths and pairwise distances are preserved.
pub fn place<T: Real>(path: &CoilPath<T>, placement: &Placement<T>) -> CoilPath<T> {
    path.map_points(|p| placement.apply(p))
}

/// Wraps a planar garment path around a cylinder of the given radius
/// (torso surface). The panel stays tangent to the cylinder at `x = 0`.
pub fn wrap_on_cylinder<T: Real>(path: &CoilPath<T>, radius: T) -> CoilPath<T> {
    path.map_points(|p| wrap_point(p, Vec3::zero(), radius))
}

/// Applies a motion deformation. Zero amplitude returns the input unchanged.
pub fn deform<T: Real>(path: &CoilPath<T>, p: &MotionPerturbation<T>) -> CoilPath<T> {
    if p.amplitude == T::zero() {
        return path.clone();
    }
    let f = p.point_map(path.centroid());
    path.map_points(f)
}

/// Moves a rigid object (e.g. a tag) along with a garment deformation: the
/// object is translated by the displacement of its centroid and, for bends,
/// rotated to stay tangent to the surface. `garment_pivot` is the centroid of
/// the garment path the deformation was applied to.
pub fn follow_rigidly<T: Real>(
    object: &CoilPath<T>,
    p: &MotionPerturbation<T>,
    garment_pivot: Vec3<T>,
) -> CoilPath<T> {
    if p.amplitude == T::zero() {
        return object.clone();
    }
    let c = object.centroid();
    let moved = p.point_map(garment_pivot)(c);
    let rotation = match p.mode {
        MotionMode::Bend => {
            let radius = p.spatial_wavelength / p.amplitude;
            Mat3::rotation(Vec3::unit_y(), (c.x - garment_pivot.x) / radius)
        }
        _ => Mat3::identity(),
    };
    object.map_points(|q| rotation.apply(q - c) + moved)
}

pub fn make_meander<T: Real>(spec: &MeanderSpec<T>) -> Result<CoilPath<T>> {
    spec.validate()?;
    let half_span = spec.span() / T::lit(2.0);
    let half_h = spec.panel_height / T::lit(2.0);
    let mut points = Vec::with_capacity(2 * spec.n_runs);
    for run in 0..spec.n_runs {
        let x = -half_span + spec.wire_spacing * T::from_usize(run).unwrap();
        let (y0, y1) = if run % 2 == 0 {
            (-half_h, half_h)
        } else {
            (half_h, -half_h)
        };
        points.push(Vec3::new(x, y0, T::zero()));
        points.push(Vec3::new(x, y1, T::zero()));
    }
    CoilPath::new(points, false, spec.wire_radius)
}

/// Two congruent meander halves; the second is the first shifted along `x`
/// by `panel_width + separation`.
pub fn make_twin_meander<T: Real>(spec: &TwinMeanderSpec<T>) -> Result<(CoilPath<T>, CoilPath<T>)> {
    if !(spec.separation >= T::zero()) {
        return Err(invalid("twin separation must be >= 0"));
    }
    let first = make_meander(&spec.half)?;
    let pitch = spec.half.panel_width + spec.separation;
    let gap = pitch - spec.half.span();
    if !(gap > T::lit(2.0) * spec.half.wire_radius) {
        return Err(invalid(format!(
            "adjacent runs of the two halves are {gap} m apart and would touch"
        )));
    }
    let second = first.translated(Vec3::new(pitch, T::zero(), T::zero()));
    Ok((first, second))
}

fn helix<T: Real>(radius: T, turns: usize, pitch: T, wire_radius: T) -> Result<CoilPath<T>> {
    if turns == 0 {
        return Err(invalid("turns must be >= 1"));
    }
    if !(radius > wire_radius) || !(wire_radius > T::zero()) {
        return Err(invalid("coil diameter must exceed the wire diameter"));
    }
    if !(pitch >= T::zero()) {
        return Err(invalid("pitch must be >= 0"));
    }
    if turns == 1 {
        let points = (0..POINTS_PER_TURN)
            .map(|i| {
                let phi = T::TAU() * T::from_usize(i).unwrap() / T::from_usize(POINTS_PER_TURN).unwrap();
                Vec3::new(radius * phi.cos(), radius * phi.sin(), T::zero())
            })
            .collect();
        return CoilPath::new(points, true, wire_radius);
    }
    if !(pitch > T::lit(2.0) * wire_radius) {
        return Err(invalid("pitch must exceed the wire diameter for multi-turn coils"));
    }
    let n = turns * POINTS_PER_TURN;
    let per_turn = T::from_usize(POINTS_PER_TURN).unwrap();
    let points = (0..=n)
        .map(|i| {
            let u = T::from_usize(i).unwrap() / per_turn;
            let phi = T::TAU() * u;
            Vec3::new(radius * phi.cos(), radius * phi.sin(), pitch * u)
        })
        .collect();
    CoilPath::new(points, false, wire_radius)
}

/// Small tag coil: `turns` circular loops stacked along `z` with the given
/// pitch, starting in the `z = 0` plane. A single turn is a closed loop.
pub fn make_circular_coil<T: Real>(diameter: T, turns: usize, pitch: T, wire_radius: T) -> Result<CoilPath<T>> {
    helix(diameter / T::lit(2.0), turns, pitch, wire_radius)
}

/// Body-scale helical coil wound around the torso axis (`z`).
pub fn make_helical_body_coil<T: Real>(
    circumference: T,
    turns: usize,
    pitch: T,
    wire_radius: T,
) -> Result<CoilPath<T>> {
    helix(circumference / T::TAU(), turns, pitch, wire_radius)
}

/// Straight-segment discretization of a coil path.
#[derive(Debug, Clone, PartialEq)]
pub struct FilamentSet<T> {
    segments: Vec<(Vec3<T>, Vec3<T>)>,
    wire_radius: T,
    /// Cumulative arc length at each segment start.
    arc_start: Vec<T>,
    /// Total arc length when the source path was closed.
    closed_perimeter: Option<T>,
}

impl<T: Real> FilamentSet<T> {
    pub fn segments(&self) -> &[(Vec3<T>, Vec3<T>)] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn wire_radius(&self) -> T {
        self.wire_radius
    }

    pub fn total_length(&self) -> T {
        let mut acc = CompensatedSum::new();
        for &(a, b) in &self.segments {
            acc.add(a.distance(b));
        }
        acc.value()
    }

    pub(crate) fn arc_start(&self, i: usize) -> T {
        self.arc_start[i]
    }

    pub(crate) fn closed_perimeter(&self) -> Option<T> {
        self.closed_perimeter
    }

    /// Concatenates two filament sets into one series-connected conductor
    /// (used for joint drive in field maps). The result keeps the smaller
    /// wire radius and does not carry arc-length bookkeeping across sets.
    pub fn joined(&self, other: &Self) -> Self {
        let mut segments = self.segments.clone();
        segments.extend_from_slice(&other.segments);
        let offset = self.total_length() + T::lit(1.0e6);
        let mut arc_start = self.arc_start.clone();
        arc_start.extend(other.arc_start.iter().map(|&s| s + offset));
        Self {
            segments,
            wire_radius: self.wire_radius.min(other.wire_radius),
            arc_start,
            closed_perimeter: None,
        }
    }
}

/// Splits every edge of `path` into equal pieces no longer than `max_seg_len`.
pub fn discretize<T: Real>(path: &CoilPath<T>, max_seg_len: T) -> Result<FilamentSet<T>> {
    if !(max_seg_len > T::zero()) {
        return Err(invalid("max_seg_len must be positive"));
    }
    let mut segments = Vec::new();
    let mut arc_start = Vec::new();
    let mut arc = T::zero();
    for (a, b) in path.edges() {
        let len = a.distance(b);
        let pieces = (len / max_seg_len - T::lit(1e-9)).ceil().max(T::one());
        let count = pieces.to_usize().unwrap();
        let step = T::one() / pieces;
        let mut prev = a;
        for k in 1..=count {
            let next = if k == count {
                b
            } else {
                a + (b - a) * (step * T::from_usize(k).unwrap())
            };
            arc_start.push(arc);
            arc += prev.distance(next);
            segments.push((prev, next));
            prev = next;
        }
    }
    Ok(FilamentSet {
        segments,
        wire_radius: path.wire_radius(),
        arc_start,
        closed_perimeter: path.is_closed().then_some(arc),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(n_runs: usize, width: f64, height: f64, spacing: f64) -> MeanderSpec<f64> {
        MeanderSpec {
            panel_width: width,
            panel_height: height,
            wire_spacing: spacing,
            wire_radius: 0.005,
            n_runs,
        }
    }

    #[test]
    fn smallest_meander_is_a_u() {
        let p = make_meander(&panel(2, 0.1, 0.1, 0.1)).unwrap();
        assert_eq!(p.points().len(), 4);
        assert!((p.length() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn tops_spacing_builds() {
        let p = make_meander(&panel(15, 0.6, 0.5, 0.04)).unwrap();
        assert!(!p.is_closed());
        assert!(p.points().iter().all(|q| q.z == 0.0));
    }

    #[test]
    fn six_run_length_matches_hand_sum() {
        let p = make_meander(&panel(6, 0.3, 0.5, 0.04)).unwrap();
        let expected = 0.5 + 0.5 + 0.5 + 0.5 + 0.5 + 0.5 + 0.04 + 0.04 + 0.04 + 0.04 + 0.04;
        assert!((p.length() - expected).abs() < 1e-12);
    }

    #[test]
    fn runs_that_do_not_fit_are_rejected() {
        assert!(make_meander(&panel(10, 0.3, 0.5, 0.04)).is_err());
        assert!(make_meander(&panel(1, 0.3, 0.5, 0.04)).is_err());
        assert!(make_meander(&panel(3, 0.3, 0.5, 0.009)).is_err());
    }

    #[test]
    fn twin_halves_are_offset_and_congruent() {
        let spec = TwinMeanderSpec {
            half: panel(6, 0.3, 0.5, 0.04),
            separation: 0.05,
        };
        let (a, b) = make_twin_meander(&spec).unwrap();
        let d = b.centroid() - a.centroid();
        assert!((d.x - 0.35).abs() < 1e-12 && d.y.abs() < 1e-12 && d.z.abs() < 1e-12);
        let mut la = a.edge_lengths();
        let mut lb = b.edge_lengths();
        la.sort_by(f64::total_cmp);
        lb.sort_by(f64::total_cmp);
        for (x, y) in la.iter().zip(&lb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn abutting_halves_do_not_touch() {
        let spec = TwinMeanderSpec {
            half: panel(6, 0.3, 0.5, 0.04),
            separation: 0.0,
        };
        let (a, b) = make_twin_meander(&spec).unwrap();
        let max_a = a.points().iter().map(|p| p.x).fold(f64::MIN, f64::max);
        let min_b = b.points().iter().map(|p| p.x).fold(f64::MAX, f64::min);
        assert!(min_b - max_a > 2.0 * 0.005);
        // Panels filled edge to edge would put two runs on top of each other.
        let full = TwinMeanderSpec {
            half: panel(2, 0.1, 0.1, 0.1),
            separation: 0.0,
        };
        assert!(make_twin_meander(&full).is_err());
    }

    #[test]
    fn tag_coil_length() {
        let p = make_circular_coil(0.03, 6, 5e-4, 2e-4).unwrap();
        let expected = 6.0 * std::f64::consts::PI * 0.03;
        assert!(((p.length() - expected) / expected).abs() < 1e-3);
        let loop1 = make_circular_coil(0.04, 1, 0.0, 2e-4).unwrap();
        assert!(loop1.is_closed());
        let expected = std::f64::consts::PI * 0.04;
        assert!(((loop1.length() - expected) / expected).abs() < 1e-3);
        assert!(make_circular_coil(0.03, 0, 5e-4, 2e-4).is_err());
        assert!(make_circular_coil(0.0003, 2, 5e-4, 2e-4).is_err());
    }

    #[test]
    fn body_coil_radius() {
        let p = make_helical_body_coil(0.9f64, 4, 0.05, 0.005).unwrap();
        let r = (p.points()[0].x.powi(2) + p.points()[0].y.powi(2)).sqrt();
        assert!((r - 0.9 / std::f64::consts::TAU).abs() < 1e-12);
        assert!((r - 0.143).abs() < 1e-3);
        assert!(make_helical_body_coil(0.9, 1, 0.05, 0.005).unwrap().is_closed());
    }

    #[test]
    fn identity_placement_is_bitwise() {
        let p = make_circular_coil(0.03, 6, 5e-4, 2e-4).unwrap();
        assert_eq!(place(&p, &Placement::identity()), p);
    }

    #[test]
    fn translation_shifts_z() {
        let p = make_meander(&panel(4, 0.3, 0.5, 0.04)).unwrap();
        let q = place(&p, &Placement::translation(Vec3::new(0.0, 0.0, 0.01)));
        for (a, b) in p.points().iter().zip(q.points()) {
            assert_eq!(b.z, a.z + 0.01);
        }
    }

    #[test]
    fn quarter_turns_compose() {
        let p = make_circular_coil(0.03, 2, 1e-3, 2e-4).unwrap();
        let quarter = Placement::rotation(Vec3::unit_z(), std::f64::consts::FRAC_PI_2);
        let half = Placement::rotation(Vec3::unit_z(), std::f64::consts::PI);
        let twice = place(&place(&p, &quarter), &quarter);
        let once = place(&p, &half);
        for (a, b) in twice.points().iter().zip(once.points()) {
            assert!(a.distance(*b) < 1e-12);
        }
        assert!(Placement::<f64> {
            translation: Vec3::zero(),
            rotation: Mat3([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        }
        .validate()
        .is_err());
    }

    #[test]
    fn stretch_scales_planar_length() {
        let p = make_meander(&panel(6, 0.3, 0.5, 0.04)).unwrap();
        let m = MotionPerturbation {
            mode: MotionMode::Stretch,
            amplitude: 0.05,
            spatial_wavelength: 0.1,
            seed: 1,
        };
        let ratio = deform(&p, &m).length() / p.length();
        assert!((ratio - 1.05).abs() < 0.005);
    }

    #[test]
    fn bend_is_isometric_on_the_surface() {
        let p = make_meander(&panel(6, 0.3, 0.5, 0.04)).unwrap();
        let m = MotionPerturbation {
            mode: MotionMode::Bend,
            amplitude: 0.5,
            spatial_wavelength: 0.1,
            seed: 0,
        };
        let q = deform(&p, &m);
        let runs_p: Vec<f64> = p.edge_lengths().iter().step_by(2).copied().collect();
        let runs_q: Vec<f64> = q.edge_lengths().iter().step_by(2).copied().collect();
        for (a, b) in runs_p.iter().zip(&runs_q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(q.points().iter().any(|pt| pt.z < -1e-3));
    }

    #[test]
    fn zero_amplitude_is_identity_and_seeds_are_deterministic() {
        let p = make_meander(&panel(6, 0.3, 0.5, 0.04)).unwrap();
        for mode in [MotionMode::Stretch, MotionMode::Bend, MotionMode::RandomSmooth] {
            let still = MotionPerturbation {
                mode,
                amplitude: 0.0,
                spatial_wavelength: 0.2,
                seed: 9,
            };
            assert_eq!(deform(&p, &still), p);
        }
        let wobble = MotionPerturbation {
            mode: MotionMode::RandomSmooth,
            amplitude: 0.01,
            spatial_wavelength: 0.2,
            seed: 42,
        };
        let a = deform(&p, &wobble);
        assert_eq!(a, deform(&p, &wobble));
        assert_ne!(a, p);
        let other = deform(&p, &MotionPerturbation { seed: 43, ..wobble });
        assert_ne!(a, other);
    }

    #[test]
    fn straight_line_splits_evenly() {
        let p = CoilPath::new(vec![Vec3::zero(), Vec3::new(1.0f64, 0.0, 0.0)], false, 1e-3).unwrap();
        let f = discretize(&p, 0.1).unwrap();
        assert_eq!(f.len(), 10);
        for (a, b) in f.segments() {
            assert!((a.distance(*b) - 0.1).abs() < 1e-12);
        }
        assert!(discretize(&p, 0.0).is_err());
    }

    #[test]
    fn refinement_doubles_curved_segment_count() {
        let p = make_circular_coil(0.2f64, 1, 0.0, 1e-3).unwrap();
        let coarse = discretize(&p, 0.001).unwrap();
        let fine = discretize(&p, 0.0005).unwrap();
        assert!(fine.len() >= 2 * coarse.len());
        let rel = (fine.total_length() - p.length()).abs() / p.length();
        assert!(rel < 1e-9);
    }

    #[test]
    fn invalid_paths_are_rejected() {
        assert!(CoilPath::new(vec![Vec3::<f64>::zero()], false, 1e-3).is_err());
        assert!(CoilPath::new(vec![Vec3::<f64>::zero(), Vec3::zero()], false, 1e-3).is_err());
        assert!(CoilPath::new(vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0)], false, 0.0).is_err());
        let closed_dup = vec![Vec3::zero(), Vec3::new(1.0, 0.0, 0.0), Vec3::zero()];
        assert!(CoilPath::new(closed_dup, true, 1e-3).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let p = make_circular_coil(0.03, 2, 1e-3, 2e-4).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with("{\"points\":[["));
        let q: CoilPath<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let bad = r#"{"points": [[0,0,0]], "closed": false, "wire_radius": 0.001}"#;
        assert!(serde_json::from_str::<CoilPath<f64>>(bad).is_err());
    }
}
