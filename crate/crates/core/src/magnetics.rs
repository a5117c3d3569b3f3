//! Magnetoquasistatic inductance and field computations on filament sets.
//!
//! Mutual inductance is the Neumann double line integral. Distant segment
//! pairs use the midpoint rule; close pairs integrate the outer segment with
//! Gauss–Legendre and the inner segment in closed form. Self inductance
//! excludes the `|s − s'| < a/2` band along the wire (surface-current model,
//! no internal inductance term), so the result converges under refinement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FilamentSet;
use crate::num::{compensated_sum, mu0_over_4pi, CompensatedSum, Real, Vec3};

const GL8: [(f64, f64); 8] = [
    (0.019_855_071_751_231_856, 0.050_614_268_145_188_13),
    (0.101_666_761_293_186_63, 0.111_190_517_226_687_24),
    (0.237_233_795_041_835_5, 0.156_853_322_938_943_64),
    (0.408_282_678_752_175_1, 0.181_341_891_689_180_99),
    (0.591_717_321_247_824_9, 0.181_341_891_689_180_99),
    (0.762_766_204_958_164_5, 0.156_853_322_938_943_64),
    (0.898_333_238_706_813_4, 0.111_190_517_226_687_24),
    (0.980_144_928_248_768_1, 0.050_614_268_145_188_13),
];

/// Pairs closer than this many wire radii always get the refined quadrature.
const NEAR_WIRE_RADII: f64 = 5.0;
/// Pairs closer than this multiple of their summed lengths get the refined quadrature.
const NEAR_LENGTH_FACTOR: f64 = 3.0;

/// Beyond this multiple of the summed lengths the midpoint rule is used.
const FAR_LENGTH_FACTOR: f64 = 10.0;

#[derive(Clone, Copy)]
struct Seg<T> {
    a: Vec3<T>,
    b: Vec3<T>,
    d: Vec3<T>,
    mid: Vec3<T>,
    len: T,
}

impl<T: Real> Seg<T> {
    fn new(a: Vec3<T>, b: Vec3<T>) -> Self {
        let d = b - a;
        Self {
            a,
            b,
            d,
            mid: (a + b) * T::lit(0.5),
            len: d.norm(),
        }
    }

    fn at(&self, u: T) -> Vec3<T> {
        self.a + self.d * u
    }
}

fn segs<T: Real>(f: &FilamentSet<T>) -> Vec<Seg<T>> {
    f.segments().iter().map(|&(a, b)| Seg::new(a, b)).collect()
}

/// `∫ ds / |p − r(s)|` over the straight segment `a→b`, exactly.
fn line_potential<T: Real>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>) -> T {
    let len = a.distance(b);
    if len == T::zero() {
        return T::zero();
    }
    let r1 = p.distance(a);
    let r2 = p.distance(b);
    let s = r1 + r2;
    let den = s - len;
    if den <= T::zero() {
        return T::infinity();
    }
    ((s + len) / den).ln()
}

/// Two-point Gauss product rule for `∬ du dv / |r(u) − r'(v)|` on the unit square.
fn gauss2_product<T: Real>(s: &Seg<T>, t: &Seg<T>) -> T {
    let g = T::lit(0.5 - 0.5 / 3f64.sqrt());
    let nodes = [g, T::one() - g];
    let mut acc = T::zero();
    for &u in &nodes {
        let p = s.at(u);
        for &v in &nodes {
            acc += T::one() / p.distance(t.at(v));
        }
    }
    acc * T::lit(0.25)
}

/// Closest distance between two segments.
fn segment_distance<T: Real>(s: &Seg<T>, t: &Seg<T>) -> T {
    let eps = T::epsilon();
    let r = s.a - t.a;
    let a = s.d.dot(s.d);
    let e = t.d.dot(t.d);
    let f = t.d.dot(r);
    let clamp = |x: T| x.max(T::zero()).min(T::one());
    let (sc, tc);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        sc = T::zero();
        tc = clamp(f / e);
    } else {
        let c = s.d.dot(r);
        if e <= eps {
            tc = T::zero();
            sc = clamp(-c / a);
        } else {
            let b = s.d.dot(t.d);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps * a * e {
                clamp((b * f - c * e) / denom)
            } else {
                T::zero()
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < T::zero() {
                t0 = T::zero();
                s0 = clamp(-c / a);
            } else if t0 > T::one() {
                t0 = T::one();
                s0 = clamp((b - c) / a);
            }
            sc = s0;
            tc = t0;
        }
    }
    (s.at(sc) - t.at(tc)).norm()
}

/// Outer Gauss–Legendre over `outer`, exact inner integral over `inner`.
fn semi_analytic<T: Real>(outer: &Seg<T>, inner: &Seg<T>, min_dist: T) -> T {
    let n_sub = ((T::lit(2.0) * outer.len / min_dist.max(T::epsilon()))
        .ceil()
        .to_usize()
        .unwrap_or(64))
    .clamp(1, 64);
    let h = T::one() / T::from_usize(n_sub).unwrap();
    let mut acc = T::zero();
    for k in 0..n_sub {
        let u0 = h * T::from_usize(k).unwrap();
        for &(x, w) in &GL8 {
            let p = outer.at(u0 + h * T::lit(x));
            acc += T::lit(w) * h * line_potential(p, inner.a, inner.b);
        }
    }
    acc * outer.len
}

/// `(t̂ᵢ·t̂ⱼ) ∬ ds ds' / |r − r'|` for a pair of distinct, non-arc-adjacent segments.
fn pair_integral<T: Real>(s: &Seg<T>, t: &Seg<T>, near_radius: T) -> T {
    let dot = s.d.dot(t.d);
    if dot == T::zero() {
        return T::zero();
    }
    let centre = s.mid.distance(t.mid);
    let reach = (s.len + t.len) * T::lit(0.5);
    let threshold = near_radius.max(T::lit(NEAR_LENGTH_FACTOR) * (s.len + t.len));
    let gap = centre - reach;
    if gap > T::lit(FAR_LENGTH_FACTOR) * (s.len + t.len) && gap > threshold {
        return dot / centre;
    }
    if gap > threshold {
        return dot * gauss2_product(s, t);
    }
    let dmin = segment_distance(s, t);
    let cos = dot / (s.len * t.len);
    let forward = semi_analytic(s, t, dmin);
    let backward = semi_analytic(t, s, dmin);
    cos * (forward + backward) * T::lit(0.5)
}

fn check_overlap<T: Real>(a: &[Seg<T>], b: &[Seg<T>], limit: T) -> Result<()> {
    let worst = a
        .par_iter()
        .map(|s| {
            b.iter()
                .filter(|t| s.mid.distance(t.mid) - (s.len + t.len) * T::lit(0.5) <= limit)
                .map(|t| segment_distance(s, t))
                .fold(T::infinity(), T::min)
        })
        .reduce(T::infinity, T::min);
    if worst <= limit {
        return Err(Error::Overlap {
            distance: worst.as_f64(),
            limit: limit.as_f64(),
        });
    }
    Ok(())
}

/// Mutual inductance between two filament sets, in henries.
pub fn mutual_inductance<T: Real>(a: &FilamentSet<T>, b: &FilamentSet<T>) -> Result<T> {
    let sa = segs(a);
    let sb = segs(b);
    check_overlap(&sa, &sb, a.wire_radius() + b.wire_radius())?;
    let near = T::lit(NEAR_WIRE_RADII) * a.wire_radius().max(b.wire_radius());
    let rows: Vec<T> = sa
        .par_iter()
        .map(|s| {
            let mut acc = CompensatedSum::new();
            for t in &sb {
                acc.add(pair_integral(s, t, near));
            }
            acc.value()
        })
        .collect();
    Ok(mu0_over_4pi::<T>() * compensated_sum(&rows))
}

/// Arc-length bookkeeping for the exclusion band of a single conductor.
struct Arc<'a, T> {
    set: &'a FilamentSet<T>,
    half_band: T,
}

impl<T: Real> Arc<'_, T> {
    /// Smallest arc distance between any point of segment `i` and any of `j`.
    fn gap(&self, i: usize, j: usize, si: &Seg<T>, sj: &Seg<T>) -> T {
        let (a0, a1) = (self.set.arc_start(i), self.set.arc_start(i) + si.len);
        let (b0, b1) = (self.set.arc_start(j), self.set.arc_start(j) + sj.len);
        let linear = |shift: T| {
            let lo = b0 + shift;
            let hi = b1 + shift;
            if hi < a0 {
                a0 - hi
            } else if lo > a1 {
                lo - a1
            } else {
                T::zero()
            }
        };
        match self.set.closed_perimeter() {
            Some(p) => linear(T::zero()).min(linear(p)).min(linear(-p)),
            None => linear(T::zero()),
        }
    }

    /// Parameter sub-intervals of segment `j` at arc distance ≥ a/2 from arc position `s`.
    fn allowed(&self, s: T, j: usize, sj: &Seg<T>) -> Vec<(T, T)> {
        let start = self.set.arc_start(j);
        let mut cuts: Vec<(T, T)> = Vec::with_capacity(3);
        let shifts: Vec<T> = match self.set.closed_perimeter() {
            Some(p) => vec![-p, T::zero(), p],
            None => vec![T::zero()],
        };
        for shift in shifts {
            let lo = (s + shift - self.half_band - start).max(T::zero());
            let hi = (s + shift + self.half_band - start).min(sj.len);
            if hi > lo {
                cuts.push((lo, hi));
            }
        }
        cuts.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let mut out = Vec::with_capacity(2);
        let mut cursor = T::zero();
        for (lo, hi) in cuts {
            if lo > cursor {
                out.push((cursor, lo));
            }
            cursor = cursor.max(hi);
        }
        if cursor < sj.len {
            out.push((cursor, sj.len));
        }
        out
    }
}

/// `∬` over a segment pair whose arc separation dips below a/2, with the band removed.
///
/// The outer segment is split wherever the band edge crosses an end of the
/// inner segment, so each piece sees a smooth integrand.
fn excluded_pair<T: Real>(arc: &Arc<'_, T>, i: usize, j: usize, si: &Seg<T>, sj: &Seg<T>) -> T {
    let dot = si.d.dot(sj.d);
    if dot == T::zero() {
        return T::zero();
    }
    let start_i = arc.set.arc_start(i);
    let start_j = arc.set.arc_start(j);
    let shifts: Vec<T> = match arc.set.closed_perimeter() {
        Some(p) => vec![-p, T::zero(), p],
        None => vec![T::zero()],
    };
    let mut breaks = vec![T::zero(), T::one()];
    for &shift in &shifts {
        for edge in [start_j, start_j + sj.len] {
            for band in [arc.half_band, -arc.half_band] {
                let u = (edge - shift - band - start_i) / si.len;
                if u > T::zero() && u < T::one() {
                    breaks.push(u);
                }
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tj = sj.d * (T::one() / sj.len);
    let mut acc = T::zero();
    for w in breaks.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        let h = u1 - u0;
        if h <= T::zero() {
            continue;
        }
        for &(x, wt) in &GL8 {
            let u = u0 + h * T::lit(x);
            let p = si.at(u);
            let s = start_i + u * si.len;
            let mut inner = T::zero();
            for (lo, hi) in arc.allowed(s, j, sj) {
                inner += line_potential(p, sj.a + tj * lo, sj.a + tj * hi);
            }
            acc += T::lit(wt) * h * inner;
        }
    }
    acc * si.len * dot / (si.len * sj.len)
}

/// `∬_{|s−s'|>a/2}` of a straight segment with itself.
fn self_term<T: Real>(len: T, wire_radius: T) -> T {
    let half = wire_radius * T::lit(0.5);
    if len <= half {
        return T::zero();
    }
    T::lit(2.0) * (len * (len / half).ln() - (len - half))
}

/// Self inductance of a single conductor, in henries.
pub fn self_inductance<T: Real>(f: &FilamentSet<T>) -> Result<T> {
    let a = f.wire_radius();
    if !(a > T::zero()) {
        return Err(crate::error::invalid("wire_radius must be positive"));
    }
    let s = segs(f);
    let arc = Arc {
        set: f,
        half_band: a * T::lit(0.5),
    };
    let near = T::lit(NEAR_WIRE_RADII) * a;
    let rows: Vec<T> = (0..s.len())
        .into_par_iter()
        .map(|i| {
            let si = &s[i];
            let mut acc = CompensatedSum::new();
            acc.add(self_term(si.len, a));
            for (j, sj) in s.iter().enumerate() {
                if j == i {
                    continue;
                }
                let v = if arc.gap(i, j, si, sj) < arc.half_band {
                    (excluded_pair(&arc, i, j, si, sj) + excluded_pair(&arc, j, i, sj, si)) * T::lit(0.5)
                } else {
                    pair_integral(si, sj, near)
                };
                acc.add(v);
            }
            acc.value()
        })
        .collect();
    Ok(mu0_over_4pi::<T>() * compensated_sum(&rows))
}

/// `k = M / √(L_a·L_b)`.
pub fn coupling_coefficient<T: Real>(a: &FilamentSet<T>, b: &FilamentSet<T>) -> Result<T> {
    let m = mutual_inductance(a, b)?;
    let la = self_inductance(a)?;
    let lb = self_inductance(b)?;
    Ok(m / (la * lb).sqrt())
}

/// Self and mutual inductances of a set of conductors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct LinkMatrix<T> {
    pub self_l: Vec<T>,
    pub mutual_m: Vec<Vec<T>>,
    pub k: Vec<Vec<T>>,
}

impl<T: Real> LinkMatrix<T> {
    pub fn compute(coils: &[FilamentSet<T>]) -> Result<Self> {
        let n = coils.len();
        let self_l = coils.iter().map(self_inductance).collect::<Result<Vec<_>>>()?;
        let mut mutual_m = vec![vec![T::zero(); n]; n];
        for i in 0..n {
            mutual_m[i][i] = self_l[i];
            for j in (i + 1)..n {
                let m = mutual_inductance(&coils[i], &coils[j])?;
                mutual_m[i][j] = m;
                mutual_m[j][i] = m;
            }
        }
        let k = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| mutual_m[i][j] / (self_l[i] * self_l[j]).sqrt())
                    .collect()
            })
            .collect();
        Ok(Self { self_l, mutual_m, k })
    }
}

/// Biot–Savart field of a straight segment carrying `current` from `a` to `b`.
fn segment_field<T: Real>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    let r1 = p - a;
    let r2 = p - b;
    let n1 = r1.norm();
    let n2 = r2.norm();
    let den = n1 * n2 * (n1 * n2 + r1.dot(r2));
    if den <= T::zero() {
        return Vec3::zero();
    }
    r1.cross(r2) * ((n1 + n2) / den)
}

/// Flux density at `p` for unit current, in T/A.
pub fn field_at<T: Real>(f: &FilamentSet<T>, p: Vec3<T>) -> Vec3<T> {
    let mut b = Vec3::zero();
    for &(a, e) in f.segments() {
        b += segment_field(p, a, e);
    }
    b * mu0_over_4pi::<T>()
}

/// Planar sampling grid: `origin + i·spacing·axis_u + j·spacing·axis_v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct GridSpec<T> {
    pub origin: Vec3<T>,
    pub axis_u: Vec3<T>,
    pub axis_v: Vec3<T>,
    pub nx: usize,
    pub ny: usize,
    pub spacing: T,
}

impl<T: Real> GridSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let tol = T::lit(1e-9);
        if !(self.spacing > T::zero()) || self.nx == 0 || self.ny == 0 {
            return Err(crate::error::invalid("grid needs positive spacing and extents"));
        }
        if (self.axis_u.norm() - T::one()).abs() > tol
            || (self.axis_v.norm() - T::one()).abs() > tol
            || self.axis_u.dot(self.axis_v).abs() > tol
        {
            return Err(crate::error::invalid("grid axes must be orthonormal"));
        }
        Ok(())
    }

    pub fn point(&self, i: usize, j: usize) -> Vec3<T> {
        self.origin
            + self.axis_u * (self.spacing * T::from_usize(i).unwrap())
            + self.axis_v * (self.spacing * T::from_usize(j).unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct FieldSample<T> {
    pub position: Vec3<T>,
    pub b: Vec3<T>,
    pub magnitude: T,
    /// Sample lies inside a conductor; `b` is zeroed.
    pub masked: bool,
}

/// Sampled flux density map, row-major in `i` (fastest) then `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct BFieldGrid<T> {
    pub grid: GridSpec<T>,
    pub current: T,
    pub samples: Vec<FieldSample<T>>,
}

impl<T: Real> BFieldGrid<T> {
    pub fn sample(&self, i: usize, j: usize) -> &FieldSample<T> {
        &self.samples[j * self.grid.nx + i]
    }

    /// CSV with columns `x,y,z,Bx,By,Bz,|B|`. Masked samples report NaN.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z,Bx,By,Bz,|B|\n");
        for s in &self.samples {
            let p = s.position;
            if s.masked {
                out.push_str(&format!("{:e},{:e},{:e},NaN,NaN,NaN,NaN\n", p.x, p.y, p.z));
            } else {
                out.push_str(&format!(
                    "{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                    p.x, p.y, p.z, s.b.x, s.b.y, s.b.z, s.magnitude
                ));
            }
        }
        out
    }

    /// Grid metadata for the CSV sidecar.
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "origin": self.grid.origin,
            "axis_u": self.grid.axis_u,
            "axis_v": self.grid.axis_v,
            "nx": self.grid.nx,
            "ny": self.grid.ny,
            "spacing_m": self.grid.spacing,
            "current_a": self.current,
            "units": {"position": "m", "field": "T"},
            "masked_samples": self.samples.iter().filter(|s| s.masked).count(),
        })
    }
}

/// Biot–Savart map of `f` driven by `current` over `grid`. Points within a
/// wire radius of any filament are masked.
pub fn field_map<T: Real>(f: &FilamentSet<T>, current: T, grid: &GridSpec<T>) -> Result<BFieldGrid<T>> {
    grid.validate()?;
    let s = segs(f);
    let a = f.wire_radius();
    let samples = (0..grid.nx * grid.ny)
        .into_par_iter()
        .map(|idx| {
            let p = grid.point(idx % grid.nx, idx / grid.nx);
            let probe = Seg::new(p, p);
            let masked = s.iter().any(|t| {
                p.distance(t.mid) <= t.len * T::lit(0.5) + a && segment_distance(&probe, t) < a
            });
            if masked {
                return FieldSample {
                    position: p,
                    b: Vec3::zero(),
                    magnitude: T::zero(),
                    masked: true,
                };
            }
            let b = field_at(f, p) * current;
            FieldSample {
                position: p,
                b,
                magnitude: b.norm(),
                masked: false,
            }
        })
        .collect();
    Ok(BFieldGrid {
        grid: *grid,
        current,
        samples,
    })
}
