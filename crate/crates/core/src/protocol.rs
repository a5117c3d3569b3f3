//! Framed slotted-Aloha readout of several tags on one reader, with sensor
//! calibration and per-tag delivery accounting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Placement;
use crate::phy::Bitrate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Temperature,
    Bend,
    Generic,
}

/// Physical value = `ratio · slope + intercept`, where `ratio` is the
/// sensor's resistance-change ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCalibration {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearCalibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.slope.is_finite() && self.slope != 0.0 && self.intercept.is_finite()) {
            return Err(invalid("calibration slope must be finite and nonzero"));
        }
        Ok(())
    }

    /// Ratio that decodes to `value`.
    pub fn encode(&self, value: f64) -> f64 {
        (value - self.intercept) / self.slope
    }
}

/// Slowly varying physical quantity a tag measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSignal {
    pub baseline: f64,
    pub amplitude: f64,
    pub period_s: f64,
    /// Standard deviation of the measured ratio.
    pub ratio_noise: f64,
}

impl SensorSignal {
    /// Skin-side textile temperature around 30 °C.
    pub fn textile_temperature() -> Self {
        Self {
            baseline: 30.0,
            amplitude: 0.2,
            period_s: 60.0,
            ratio_noise: 1e-4,
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.baseline + self.amplitude * (std::f64::consts::TAU * t / self.period_s).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagDescriptor {
    pub uid: u64,
    pub sensor_kind: SensorKind,
    #[serde(default)]
    pub position: Placement<f64>,
    pub calibration: LinearCalibration,
    pub signal: SensorSignal,
}

impl TagDescriptor {
    /// Temperature tag with the default textile calibration.
    pub fn temperature(uid: u64) -> Self {
        Self {
            uid,
            sensor_kind: SensorKind::Temperature,
            position: Placement::identity(),
            calibration: LinearCalibration {
                slope: 100.0,
                intercept: 30.0,
            },
            signal: SensorSignal::textile_temperature(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub slots_per_round: usize,
    pub slot_duration: f64,
    pub per_read_payload: usize,
    pub bitrate: Bitrate,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            slots_per_round: 4,
            slot_duration: 0.070,
            per_read_payload: 128,
            bitrate: Bitrate::R106,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots_per_round == 0 {
            return Err(invalid("slots_per_round must be > 0"));
        }
        if !(self.slot_duration >= self.airtime()) {
            return Err(invalid("slot_duration is shorter than the payload airtime"));
        }
        Ok(())
    }

    /// Time to send one payload at the configured bitrate.
    pub fn airtime(&self) -> f64 {
        self.per_read_payload as f64 / self.bitrate.bits_per_second()
    }

    pub fn round_duration(&self) -> f64 {
        self.slots_per_round as f64 * self.slot_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub singletons: usize,
    pub collisions: usize,
    pub empties: usize,
}

/// Slot chosen by each tag, uniformly at random.
fn assign_slots(n_tags: usize, slots: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n_tags).map(|_| rng.random_range(0..slots)).collect()
}

fn classify(choices: &[usize], slots: usize) -> (RoundOutcome, Vec<usize>) {
    let mut occupancy = vec![0usize; slots];
    for &c in choices {
        occupancy[c] += 1;
    }
    let mut out = RoundOutcome::default();
    for &o in &occupancy {
        match o {
            0 => out.empties += 1,
            1 => out.singletons += 1,
            _ => out.collisions += 1,
        }
    }
    (out, occupancy)
}

/// One inventory round with `n_tags` contending for `slots_per_round` slots.
pub fn inventory_round(n_tags: usize, cfg: &FrameConfig, rng: &mut impl Rng) -> RoundOutcome {
    classify(&assign_slots(n_tags, cfg.slots_per_round, rng), cfg.slots_per_round).0
}

/// Runs `rounds` inventory rounds from `seed` and sums the outcomes.
pub fn inventory_rounds(n_tags: usize, cfg: &FrameConfig, rounds: usize, seed: u64) -> RoundOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = RoundOutcome::default();
    for _ in 0..rounds {
        let r = inventory_round(n_tags, cfg, &mut rng);
        total.singletons += r.singletons;
        total.collisions += r.collisions;
        total.empties += r.empties;
    }
    total
}

/// Slotted-Aloha throughput `S = G·e^(−G)`.
pub fn expected_throughput(g: f64) -> f64 {
    g * (-g).exp()
}

/// Simulated throughput at offered load `g`: each round a Poisson number of
/// tags with mean `g·slots` contends; returns successful slots per slot.
pub fn simulate_throughput(g: f64, slots: usize, rounds: usize, seed: u64) -> Result<f64> {
    if !(g >= 0.0) || slots == 0 || rounds == 0 {
        return Err(invalid("throughput needs G >= 0, slots > 0 and rounds > 0"));
    }
    if g == 0.0 {
        return Ok(0.0);
    }
    let poisson = Poisson::new(g * slots as f64).map_err(|e| invalid(&e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut success = 0usize;
    for _ in 0..rounds {
        let n = poisson.sample(&mut rng) as usize;
        success += classify(&assign_slots(n, slots, &mut rng), slots).0.singletons;
    }
    Ok(success as f64 / (slots * rounds) as f64)
}

/// Probability that a given tag is alone in its slot.
pub fn singleton_probability(n_tags: usize, slots: usize) -> f64 {
    if n_tags == 0 {
        return 0.0;
    }
    (1.0 - 1.0 / slots as f64).powi(n_tags as i32 - 1)
}

/// Probability that a packet survives bit errors.
pub fn packet_success(ber: f64, payload_bits: usize) -> f64 {
    (1.0 - ber).powi(payload_bits as i32)
}

/// Slot duration giving each of `n_tags` tags `rate_hz` delivered readings
/// per second on average.
pub fn calibrate_slot_duration(n_tags: usize, cfg: &FrameConfig, ber: f64, rate_hz: f64) -> Result<f64> {
    if n_tags == 0 || !(rate_hz > 0.0) {
        return Err(invalid("calibration needs tags and a positive rate"));
    }
    let p = singleton_probability(n_tags, cfg.slots_per_round) * packet_success(ber, cfg.per_read_payload);
    let slot = p / (cfg.slots_per_round as f64 * rate_hz);
    if slot < cfg.airtime() {
        return Err(Error::Calibration(format!(
            "{rate_hz} Hz per tag needs {slot:.3e} s slots, shorter than the {:.3e} s airtime",
            cfg.airtime()
        )));
    }
    Ok(slot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadStatus {
    Ok,
    Collision,
    BitErrors,
    Outage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub t_s: f64,
    pub value: Option<f64>,
    pub status: ReadStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSeries {
    pub uid: u64,
    pub readings: Vec<Reading>,
    pub attempts: usize,
    pub delivered: usize,
    pub rate_hz: f64,
    pub loss: f64,
}

impl TagSeries {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_s,value,status\n");
        for r in &self.readings {
            let v = r.value.map(|v| format!("{v:.6}")).unwrap_or_default();
            let status = serde_json::to_value(r.status).expect("status serializes");
            s.push_str(&format!("{:.6},{v},{}\n", r.t_s, status.as_str().unwrap_or_default()));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl OutageInterval {
    fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub tags: Vec<TagDescriptor>,
    pub frame: FrameConfig,
    /// Bit error rate of each tag's link, in tag order.
    pub link_ber: Vec<f64>,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub outage: Option<OutageInterval>,
}

impl SessionSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(e) = self.frame.validate() {
            errs.push(format!("frame: {e}"));
        }
        if self.link_ber.len() != self.tags.len() {
            errs.push("link_ber must have one entry per tag".to_string());
        }
        if self.link_ber.iter().any(|b| !(0.0..=0.5).contains(b)) {
            errs.push("link_ber entries must lie in [0, 0.5]".to_string());
        }
        if !(self.duration_s > 0.0) {
            errs.push("duration_s must be > 0".to_string());
        }
        let mut uids: Vec<u64> = self.tags.iter().map(|t| t.uid).collect();
        uids.sort_unstable();
        if uids.windows(2).any(|w| w[0] == w[1]) {
            errs.push("tag uids must be unique".to_string());
        }
        for (i, t) in self.tags.iter().enumerate() {
            if let Err(e) = t.calibration.validate() {
                errs.push(format!("tags[{i}].calibration: {e}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub rounds: usize,
    pub singletons: usize,
    pub collisions: usize,
    pub empties: usize,
    pub tags: Vec<TagSeries>,
}

impl SessionResult {
    pub fn mean_rate_hz(&self) -> f64 {
        self.tags.iter().map(|t| t.rate_hz).sum::<f64>() / self.tags.len().max(1) as f64
    }

    pub fn mean_loss(&self) -> f64 {
        self.tags.iter().map(|t| t.loss).sum::<f64>() / self.tags.len().max(1) as f64
    }

    /// Summary without the per-reading series.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rounds": self.rounds,
            "singletons": self.singletons,
            "collisions": self.collisions,
            "empties": self.empties,
            "tags": self.tags.iter().map(|t| serde_json::json!({
                "uid": t.uid,
                "attempts": t.attempts,
                "delivered": t.delivered,
                "rate_hz": t.rate_hz,
                "loss": t.loss,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Back-to-back inventory rounds for `duration_s`. Each tag answers once per
/// round; collided slots carry nothing and singletons survive bit errors with
/// probability `(1 − BER)^payload`.
pub fn run_session(spec: &SessionSpec) -> Result<SessionResult> {
    spec.validate()?;
    let cfg = &spec.frame;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rounds = (spec.duration_s / cfg.round_duration()).floor() as usize;
    let mut result = SessionResult {
        rounds,
        singletons: 0,
        collisions: 0,
        empties: 0,
        tags: spec
            .tags
            .iter()
            .map(|t| TagSeries {
                uid: t.uid,
                readings: Vec::with_capacity(rounds),
                attempts: 0,
                delivered: 0,
                rate_hz: 0.0,
                loss: 0.0,
            })
            .collect(),
    };
    let success: Vec<f64> = spec.link_ber.iter().map(|&b| packet_success(b, cfg.per_read_payload)).collect();
    for r in 0..rounds {
        let t0 = r as f64 * cfg.round_duration();
        let choices = assign_slots(spec.tags.len(), cfg.slots_per_round, &mut rng);
        let (outcome, occupancy) = classify(&choices, cfg.slots_per_round);
        result.singletons += outcome.singletons;
        result.collisions += outcome.collisions;
        result.empties += outcome.empties;
        for (i, tag) in spec.tags.iter().enumerate() {
            let slot = choices[i];
            // Readings are stamped at the end of the tag's slot.
            let t = t0 + (slot + 1) as f64 * cfg.slot_duration;
            let survived = rng.random::<f64>() < success[i];
            let noise: f64 = Normal::new(0.0, tag.signal.ratio_noise.max(0.0))
                .map_err(|e| invalid(&e.to_string()))?
                .sample(&mut rng);
            let status = if spec.outage.is_some_and(|o| o.contains(t)) {
                ReadStatus::Outage
            } else if occupancy[slot] > 1 {
                ReadStatus::Collision
            } else if !survived {
                ReadStatus::BitErrors
            } else {
                ReadStatus::Ok
            };
            let value = (status == ReadStatus::Ok).then(|| {
                let ratio = tag.calibration.encode(tag.signal.value_at(t)) + noise;
                decode_sensor(ratio, &tag.calibration)
            });
            let series = &mut result.tags[i];
            series.attempts += 1;
            series.delivered += usize::from(value.is_some());
            series.readings.push(Reading { t_s: t, value, status });
        }
    }
    for s in &mut result.tags {
        s.rate_hz = s.delivered as f64 / spec.duration_s;
        s.loss = if s.attempts > 0 {
            1.0 - s.delivered as f64 / s.attempts as f64
        } else {
            0.0
        };
    }
    Ok(result)
}

pub fn decode_sensor(ratio: f64, cal: &LinearCalibration) -> f64 {
    ratio * cal.slope + cal.intercept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub calibration: LinearCalibration,
    pub residuals: Vec<f64>,
}

/// Ordinary least-squares line through `(ratio, physical)` points.
pub fn fit_calibration(points: &[(f64, f64)]) -> Result<CalibrationFit> {
    if points.len() < 2 {
        return Err(Error::RankDeficient("need at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let scale = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if !(sxx > (1e-12 * scale).powi(2) * n) {
        return Err(Error::RankDeficient("all calibration ratios are equal"));
    }
    let slope = sxy / sxx;
    let calibration = LinearCalibration {
        slope,
        intercept: my - slope * mx,
    };
    calibration.validate()?;
    let residuals = points.iter().map(|&(x, y)| y - decode_sensor(x, &calibration)).collect();
    Ok(CalibrationFit { calibration, residuals })
}
