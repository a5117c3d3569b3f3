//! Wireless power transfer over the reader–tag link: optimal load,
//! AC-to-AC efficiency and geometry-driven sweeps.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{solve_linear, InductiveLink, ReaderCircuit, Resonator, SensorCircuit};
use crate::error::{invalid, Error, Result};
use crate::geometry::{deform, discretize, follow_rigidly, CoilPath, FilamentSet, MotionPerturbation};
use crate::magnetics::{mutual_inductance, self_inductance};
use crate::num::{Real, Vec3};

/// Default per-tag output power needed to light the indicator LED, W.
pub const LED_THRESHOLD_W: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct PowerLink<T> {
    pub reader: ReaderCircuit<T>,
    pub sensor: SensorCircuit<T>,
    pub link: InductiveLink<T>,
    pub p_in: T,
}

impl<T: Real> PowerLink<T> {
    pub fn new(reader: ReaderCircuit<T>, sensor: SensorCircuit<T>, k: T, f: T, p_in: T) -> Result<Self> {
        let pl = Self {
            reader,
            sensor,
            link: InductiveLink::from_k(k, reader.l, sensor.l_s, f)?,
            p_in,
        };
        pl.validate()?;
        Ok(pl)
    }

    pub fn validate(&self) -> Result<()> {
        self.reader.validate()?;
        self.sensor.validate()?;
        if !(self.p_in >= T::zero()) {
            return Err(invalid("P_in must be >= 0"));
        }
        let m = self.link.k * (self.reader.l * self.sensor.l_s).sqrt();
        let tol = T::lit(1e-9) * (m.abs() + self.link.m.abs()) + T::min_positive_value();
        if (m - self.link.m).abs() > tol {
            return Err(invalid("link M is inconsistent with k and the circuit inductances"));
        }
        Ok(())
    }

    /// Figure of merit `k²·Q_r·Q_s` at the link frequency.
    pub fn figure_of_merit(&self) -> T {
        let f = self.link.f;
        self.link.k * self.link.k * self.reader.q_factor(f) * self.sensor.q_factor(f)
    }

    pub fn with_p_in(&self, p_in: T) -> Self {
        Self { p_in, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct PowerResult<T> {
    pub p_out: T,
    pub efficiency: T,
}

impl<T: Real> PowerResult<T> {
    pub fn zero() -> Self {
        Self {
            p_out: T::zero(),
            efficiency: T::zero(),
        }
    }

    /// DC power after a rectifier of the given efficiency.
    pub fn dc_power(&self, rectifier_efficiency: T) -> T {
        self.p_out * rectifier_efficiency
    }
}

/// `η_max = x / (1 + √(1 + x))²` with `x = k²·Q_r·Q_s`.
pub fn max_efficiency<T: Real>(x: T) -> T {
    let d = T::one() + (T::one() + x).sqrt();
    x / (d * d)
}

/// Load maximizing efficiency: `R_s·√(1 + k²Q_rQ_s)` plus the conjugate of
/// the residual sensor reactance.
pub fn optimal_load<T: Real>(link: &PowerLink<T>) -> Complex<T> {
    let x = link.figure_of_merit();
    let coil = link.sensor.coil_impedance(link.link.f);
    Complex::new(link.sensor.r_s * (T::one() + x).sqrt(), -coil.im)
}

/// Exact two-mesh AC-to-AC efficiency `P_load / P_delivered`.
pub fn transfer_efficiency<T: Real>(link: &PowerLink<T>, z_load: Complex<T>) -> Result<T> {
    Ok(mesh_currents(link, z_load, 1)?.1)
}

/// Solves reader + `n` identical tags; returns (per-tag load power per watt
/// delivered, per-tag efficiency).
fn mesh_currents<T: Real>(link: &PowerLink<T>, z_load: Complex<T>, n: usize) -> Result<(T, T)> {
    if !(z_load.norm() > T::zero()) {
        return Err(Error::DegenerateImpedance("load impedance is zero"));
    }
    if !(z_load.re >= T::zero()) {
        return Err(invalid("load must be passive"));
    }
    let f = link.link.f;
    let zero = Complex::new(T::zero(), T::zero());
    let jwm = Complex::new(T::zero(), link.link.coupling_reactance());
    let z_tag = link.sensor.coil_impedance(f) + z_load;
    let mut a = vec![vec![zero; n + 1]; n + 1];
    a[0][0] = link.reader.impedance(f);
    for i in 1..=n {
        a[0][i] = jwm;
        a[i][0] = jwm;
        a[i][i] = z_tag;
    }
    let mut b = vec![zero; n + 1];
    b[0] = Complex::new(T::one(), T::zero());
    let i = solve_linear(a, b)?;
    let p_in = i[0].re; // Re(V·I*) with V = 1
    if !(p_in > T::zero()) {
        return Err(Error::DegenerateImpedance("no power delivered into the reader"));
    }
    let eta = i[1].norm_sqr() * z_load.re / p_in;
    Ok((eta, eta))
}

pub fn output_power<T: Real>(link: &PowerLink<T>, z_load: Complex<T>) -> Result<PowerResult<T>> {
    let efficiency = transfer_efficiency(link, z_load)?;
    Ok(PowerResult {
        p_out: efficiency * link.p_in,
        efficiency,
    })
}

/// Per-tag result when `n` identical tags share one reader at the same coupling.
pub fn simultaneous_output_power<T: Real>(link: &PowerLink<T>, z_load: Complex<T>, n: usize) -> Result<PowerResult<T>> {
    if n == 0 {
        return Ok(PowerResult::zero());
    }
    let (eta, _) = mesh_currents(link, z_load, n)?;
    Ok(PowerResult {
        p_out: eta * link.p_in,
        efficiency: eta,
    })
}

/// Largest tag count (up to `n_max`) whose per-tag output stays at or above `threshold_w`.
pub fn max_powered_tags<T: Real>(link: &PowerLink<T>, z_load: Complex<T>, threshold_w: T, n_max: usize) -> Result<usize> {
    let mut best = 0;
    for n in 1..=n_max {
        if simultaneous_output_power(link, z_load, n)?.p_out >= threshold_w {
            best = n;
        } else {
            break;
        }
    }
    Ok(best)
}

/// Geometry and circuits of a reader–tag pair, from which links at any tag
/// position or garment deformation are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct LinkTemplate<T> {
    pub reader_path: CoilPath<T>,
    pub reader_max_segment: T,
    pub reader: ReaderCircuit<T>,
    /// Tag path in its local frame; positions translate it.
    pub tag_path: CoilPath<T>,
    pub tag_max_segment: T,
    pub sensor: SensorCircuit<T>,
    /// Nominal (standing, centered) tag position.
    pub nominal: Vec3<T>,
    pub frequency: T,
    pub p_in: T,
}

/// A [`LinkTemplate`] with its geometric self inductances evaluated and the
/// standing-pose optimal load fixed.
#[derive(Debug, Clone)]
pub struct PreparedLink<T> {
    pub template: LinkTemplate<T>,
    reader_filaments: FilamentSet<T>,
    reader_l_geom: T,
    tag_l_geom: T,
    pub z_load: Complex<T>,
}

/// One row of a geometric sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SweepPoint<T> {
    pub coordinate: T,
    pub k: T,
    pub result: PowerResult<T>,
}

/// A labelled garment motion; `outage` marks poses where the reader coils
/// touch and the link collapses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct MotionCase<T> {
    pub label: String,
    #[serde(default)]
    pub perturbation: Option<MotionPerturbation<T>>,
    #[serde(default)]
    pub outage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct MotionPoint<T> {
    pub label: String,
    pub k: T,
    pub outage: bool,
    pub result: PowerResult<T>,
}

impl<T: Real> PreparedLink<T> {
    pub fn new(template: LinkTemplate<T>) -> Result<Self> {
        template.reader.validate()?;
        template.sensor.validate()?;
        let reader_filaments = discretize(&template.reader_path, template.reader_max_segment)?;
        let reader_l_geom = self_inductance(&reader_filaments)?;
        let tag_l_geom = self_inductance(&discretize(&template.tag_path, template.tag_max_segment)?)?;
        let mut prepared = Self {
            template,
            reader_filaments,
            reader_l_geom,
            tag_l_geom,
            z_load: Complex::new(T::one(), T::zero()),
        };
        let (_, standing) = prepared.link_at(prepared.template.nominal)?;
        prepared.z_load = optimal_load(&standing);
        Ok(prepared)
    }

    pub fn reader_geometric_inductance(&self) -> T {
        self.reader_l_geom
    }

    pub fn tag_geometric_inductance(&self) -> T {
        self.tag_l_geom
    }

    fn circuit_link(&self, k: T, reader: ReaderCircuit<T>) -> Result<PowerLink<T>> {
        PowerLink::new(reader, self.template.sensor, k, self.template.frequency, self.template.p_in)
    }

    /// Coupling and circuit link with the tag translated to `position`.
    pub fn link_at(&self, position: Vec3<T>) -> Result<(T, PowerLink<T>)> {
        let tag = discretize(&self.template.tag_path.translated(position), self.template.tag_max_segment)?;
        let k = mutual_inductance(&self.reader_filaments, &tag)? / (self.reader_l_geom * self.tag_l_geom).sqrt();
        Ok((k, self.circuit_link(k, self.template.reader)?))
    }

    fn point_at(&self, coordinate: T, position: Vec3<T>) -> Result<SweepPoint<T>> {
        let (k, link) = self.link_at(position)?;
        Ok(SweepPoint {
            coordinate,
            k,
            result: output_power(&link, self.z_load)?,
        })
    }

    /// Tag shifted by `offset` along `x` (across the runs) from the nominal position.
    pub fn misalignment_point(&self, offset: T) -> Result<SweepPoint<T>> {
        if !offset.is_finite() {
            return Err(invalid("offsets must be finite"));
        }
        let n = self.template.nominal;
        self.point_at(offset, Vec3::new(n.x + offset, n.y, n.z))
    }

    /// Tag base at `height` above the reader plane.
    pub fn distance_point(&self, height: T) -> Result<SweepPoint<T>> {
        if !height.is_finite() {
            return Err(invalid("heights must be finite"));
        }
        let n = self.template.nominal;
        self.point_at(height, Vec3::new(n.x, n.y, height))
    }

    pub fn sweep_misalignment(&self, offsets: &[T]) -> Result<Vec<SweepPoint<T>>> {
        offsets.par_iter().map(|&o| self.misalignment_point(o)).collect()
    }

    pub fn sweep_distance(&self, heights: &[T]) -> Result<Vec<SweepPoint<T>>> {
        heights.par_iter().map(|&h| self.distance_point(h)).collect()
    }

    /// Power under garment deformations with the standing-pose load held fixed.
    /// The reader inductance follows the deformed geometry; its capacitors do not.
    pub fn motion_power_profile(&self, motions: &[MotionCase<T>]) -> Result<Vec<MotionPoint<T>>> {
        motions.par_iter().map(|m| self.motion_point(m)).collect()
    }

    pub fn motion_point(&self, case: &MotionCase<T>) -> Result<MotionPoint<T>> {
        if case.outage {
            return Ok(MotionPoint {
                label: case.label.clone(),
                k: T::zero(),
                outage: true,
                result: PowerResult::zero(),
            });
        }
        let Some(p) = case.perturbation.filter(|p| p.amplitude > T::zero()) else {
            let (k, link) = self.link_at(self.template.nominal)?;
            return Ok(MotionPoint {
                label: case.label.clone(),
                k,
                outage: false,
                result: output_power(&link, self.z_load)?,
            });
        };
        p.validate()?;
        let t = &self.template;
        let reader_path = deform(&t.reader_path, &p);
        let tag_path = follow_rigidly(&t.tag_path.translated(t.nominal), &p, t.reader_path.centroid());
        let rf = discretize(&reader_path, t.reader_max_segment)?;
        let l_geom = self_inductance(&rf)?;
        let m = mutual_inductance(&rf, &discretize(&tag_path, t.tag_max_segment)?)?;
        let k = m / (l_geom * self.tag_l_geom).sqrt();
        let reader = ReaderCircuit {
            l: t.reader.l * l_geom / self.reader_l_geom,
            ..t.reader
        };
        let link = self.circuit_link(k, reader)?;
        Ok(MotionPoint {
            label: case.label.clone(),
            k,
            outage: false,
            result: output_power(&link, self.z_load)?,
        })
    }
}

/// CSV body for a geometric sweep; `coordinate` names the first column.
pub fn sweep_csv<T: Real>(coordinate: &str, rows: &[SweepPoint<T>]) -> String {
    let mut s = format!("{coordinate},k,efficiency,P_out_W\n");
    for r in rows {
        s.push_str(&format!(
            "{:e},{:e},{:e},{:e}\n",
            r.coordinate, r.k, r.result.efficiency, r.result.p_out
        ));
    }
    s
}

pub fn motion_csv<T: Real>(rows: &[MotionPoint<T>]) -> String {
    let mut s = String::from("motion,k,efficiency,P_out_W,outage\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{}\n",
            r.label, r.k, r.result.efficiency, r.result.p_out, r.outage
        ));
    }
    s
}
