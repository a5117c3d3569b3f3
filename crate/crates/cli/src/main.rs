use std::path::PathBuf;
use std::process::ExitCode;

use bodynfc::circuit::CARRIER_HZ;
use bodynfc::geometry::CoilPath;
use bodynfc::magnetics::GridSpec;
use bodynfc::phy::FrontEnd;
use bodynfc::power::optimal_load;
use bodynfc::scenario::{
    self, calibrate_garment, load_scenario, BerSweep, FieldMapSweep, GarmentBounds, GarmentTargets, ImpedanceSweep,
    NoiseSpec, OutputFormat, Prepared, ProtocolSweep, ReaderGeometry, ScenarioConfig,
    Sweeps,
};
use bodynfc::{Error, Vec3};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bodynfc", version, about = "Body-scale 13.56 MHz sensor network simulator")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    PaperRepro,
    Minimal,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrontEndArg {
    TwinBridge,
    SingleCoil,
}

impl From<FrontEndArg> for FrontEnd {
    fn from(f: FrontEndArg) -> Self {
        match f {
            FrontEndArg::TwinBridge => FrontEnd::TwinBridge,
            FrontEndArg::SingleCoil => FrontEnd::SingleCoil,
        }
    }
}

/// Base scenario for the single-pipeline commands.
#[derive(Args)]
struct Base {
    /// Scenario file supplying reader, tags and defaults.
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::PaperRepro)]
    preset: Preset,
}

impl Base {
    fn load(&self) -> bodynfc::Result<ScenarioConfig> {
        match &self.scenario {
            Some(p) => load_scenario(p),
            None => Ok(match self.preset {
                Preset::PaperRepro => ScenarioConfig::paper_repro(),
                Preset::Minimal => ScenarioConfig::minimal(),
            }),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// |B| map over a planar grid for the reader (or a coil JSON file).
    FieldMap {
        #[command(flatten)]
        base: Base,
        /// Coil path JSON: {"points": [[x,y,z],...], "closed": bool, "wire_radius": r}.
        #[arg(long)]
        coil: Option<PathBuf>,
        #[arg(long, default_value_t = 61)]
        nx: usize,
        #[arg(long, default_value_t = 61)]
        ny: usize,
        #[arg(long, default_value_t = 0.01)]
        spacing: f64,
        /// Plane height above the coil, m.
        #[arg(long, default_value_t = 0.01)]
        z: f64,
        #[arg(long, default_value_t = 1.0)]
        current: f64,
        /// Depths for the meander vs helix confinement profile, m.
        #[arg(long, value_delimiter = ',')]
        depths: Vec<f64>,
    },
    /// Reader impedance sweep and balance bands.
    Impedance {
        #[command(flatten)]
        base: Base,
        #[arg(long, default_value_t = 11e6)]
        f_start: f64,
        #[arg(long, default_value_t = 15e6)]
        f_stop: f64,
        #[arg(long, default_value_t = 4001)]
        points: usize,
        /// Calibrates the stray shunt to this coil-vs-chip band width, Hz.
        #[arg(long)]
        chip_band: Option<f64>,
    },
    /// Coupling and optimal-load power transfer at one tag position.
    Link {
        #[command(flatten)]
        base: Base,
        #[arg(long, default_value_t = 0)]
        tag: usize,
        /// Offset from the nominal tag position, m.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.0, 0.0, 0.0])]
        offset: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        p_in: f64,
    },
    /// Power versus misalignment, distance and motion.
    PowerSweep {
        #[command(flatten)]
        base: Base,
        #[arg(long)]
        p_in: Option<f64>,
    },
    /// BER versus drive power for each scheme and front end.
    Ber {
        #[command(flatten)]
        base: Base,
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<u32>,
        #[arg(long, value_enum, value_delimiter = ',')]
        front_ends: Vec<FrontEndArg>,
        #[arg(long)]
        bits: Option<u64>,
        /// Fixed noise density, V²/Hz; skips the one-point calibration.
        #[arg(long)]
        noise_density: Option<f64>,
    },
    /// Multi-tag slotted-Aloha readout session.
    ProtocolSim {
        #[command(flatten)]
        base: Base,
        #[arg(long, value_delimiter = ',')]
        tags: Vec<usize>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        link_ber: Option<f64>,
        /// Slot duration, s; overrides the rate calibration.
        #[arg(long)]
        slot: Option<f64>,
    },
    /// Runs every sweep in a scenario file.
    Run { scenario: PathBuf },
    /// Writes a bundled preset as a scenario file.
    Preset {
        #[arg(value_enum)]
        preset: Preset,
    },
    /// Sizes a garment meander for a target inductance and resistance.
    Calibrate {
        #[arg(long)]
        l: f64,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        k_ref: Option<f64>,
        #[arg(long, default_value_t = 4)]
        n_caps: usize,
        #[arg(long, default_value_t = 0.5)]
        panel_width: f64,
        #[arg(long, default_value_t = 0.2)]
        min_height: f64,
        #[arg(long, default_value_t = 0.6)]
        max_height: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidSpec(_) | Error::Parse(_) | Error::Validation(_) | Error::UnsupportedRate(_) => 2,
        _ => 3,
    }
}

fn single(mut cfg: ScenarioConfig, sweeps: Sweeps) -> ScenarioConfig {
    cfg.sweeps = sweeps;
    cfg
}

fn execute(cli: &Cli) -> bodynfc::Result<Vec<PathBuf>> {
    let format = match cli.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
    };
    let finish = |mut cfg: ScenarioConfig| -> bodynfc::Result<Vec<PathBuf>> {
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        scenario::run(&cfg, &cli.out_dir, format)
    };
    match &cli.command {
        Command::FieldMap {
            base,
            coil,
            nx,
            ny,
            spacing,
            z,
            current,
            depths,
        } => {
            let mut cfg = base.load()?;
            if let Some(path) = coil {
                let text = std::fs::read_to_string(path)?;
                let c: CoilPath<f64> = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
                cfg.reader.geometry = ReaderGeometry::Path(c);
                cfg.reader.max_segment = None;
            }
            let (path, _) = cfg.reader.geometry.build()?;
            let c = path.centroid();
            let half_u = 0.5 * spacing * (*nx as f64 - 1.0);
            let half_v = 0.5 * spacing * (*ny as f64 - 1.0);
            let grid = GridSpec {
                origin: Vec3::new(c.x - half_u, c.y - half_v, c.z + z),
                axis_u: Vec3::unit_x(),
                axis_v: Vec3::unit_y(),
                nx: *nx,
                ny: *ny,
                spacing: *spacing,
            };
            let prior = cfg.sweeps.field_map.clone();
            let sweep = FieldMapSweep {
                grid,
                current: *current,
                depths: if depths.is_empty() {
                    prior.as_ref().map(|p| p.depths.clone()).unwrap_or_default()
                } else {
                    depths.clone()
                },
                helical_turns: prior.map(|p| p.helical_turns).unwrap_or(7),
            };
            finish(single(
                cfg,
                Sweeps {
                    field_map: Some(sweep),
                    ..Default::default()
                },
            ))
        }
        Command::Impedance {
            base,
            f_start,
            f_stop,
            points,
            chip_band,
        } => {
            let cfg = base.load()?;
            let chip = chip_band.or(cfg.sweeps.impedance.and_then(|z| z.chip_band_target_hz));
            finish(single(
                cfg,
                Sweeps {
                    impedance: Some(ImpedanceSweep {
                        f_start: *f_start,
                        f_stop: *f_stop,
                        points: *points,
                        chip_band_target_hz: chip,
                    }),
                    ..Default::default()
                },
            ))
        }
        Command::Link { base, tag, offset, p_in } => {
            let mut cfg = base.load()?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let prepared = Prepared::new(&cfg)?;
            let link = prepared.prepared_link(*tag, *p_in)?;
            let pos = link.template.nominal + Vec3::new(offset[0], offset[1], offset[2]);
            let (k, pl) = link.link_at(pos)?;
            let z = optimal_load(&pl);
            let res = bodynfc::power::output_power(&pl, z)?;
            let f = cfg.frequency_hz;
            let v = json!({
                "position_m": [pos.x, pos.y, pos.z],
                "k": k,
                "mutual_H": pl.link.m,
                "reader_l_H": pl.reader.l,
                "sensor_l_H": pl.sensor.l_s,
                "reader_q": bodynfc::circuit::Resonator::q_factor(&pl.reader, f),
                "sensor_q": bodynfc::circuit::Resonator::q_factor(&pl.sensor, f),
                "figure_of_merit": pl.figure_of_merit(),
                "optimal_load_ohm": [z.re, z.im],
                "efficiency": res.efficiency,
                "p_in_W": p_in,
                "p_out_W": res.p_out,
            });
            println!("{}", serde_json::to_string_pretty(&v)?);
            let prov = scenario::Provenance::of(&cfg);
            scenario::write_artifacts(
                &cli.out_dir,
                &[scenario::Artifact {
                    name: "link".into(),
                    body: scenario::ArtifactBody::Json(v),
                }],
                &prov,
                format,
            )
        }
        Command::PowerSweep { base, p_in } => {
            let cfg = base.load()?;
            let mut sweep = cfg.sweeps.power.clone().unwrap_or_else(|| {
                ScenarioConfig::paper_repro()
                    .sweeps
                    .power
                    .expect("preset has a power sweep")
            });
            if let Some(p) = p_in {
                sweep.p_in_w = *p;
            }
            finish(single(
                cfg,
                Sweeps {
                    power: Some(sweep),
                    ..Default::default()
                },
            ))
        }
        Command::Ber {
            base,
            schemes,
            front_ends,
            bits,
            noise_density,
        } => {
            let cfg = base.load()?;
            let mut sweep: BerSweep = cfg
                .sweeps
                .ber
                .clone()
                .unwrap_or_else(|| ScenarioConfig::paper_repro().sweeps.ber.expect("preset has a ber sweep"));
            if !schemes.is_empty() {
                sweep.schemes_kbps = schemes.clone();
            }
            if !front_ends.is_empty() {
                sweep.front_ends = front_ends.iter().map(|&f| f.into()).collect();
            }
            if let Some(b) = bits {
                sweep.bits_per_point = *b;
            }
            if let Some(n0) = noise_density {
                sweep.noise = NoiseSpec::Fixed { noise_density: *n0 };
            }
            finish(single(
                cfg,
                Sweeps {
                    ber: Some(sweep),
                    ..Default::default()
                },
            ))
        }
        Command::ProtocolSim {
            base,
            tags,
            duration,
            link_ber,
            slot,
        } => {
            let mut cfg = base.load()?;
            let mut sweep: ProtocolSweep = cfg.sweeps.protocol.clone().unwrap_or_else(|| {
                ScenarioConfig::paper_repro()
                    .sweeps
                    .protocol
                    .expect("preset has a protocol sweep")
            });
            if !tags.is_empty() {
                sweep.tag_counts = tags.clone();
            }
            if let Some(d) = duration {
                sweep.duration_s = *d;
            }
            if let Some(b) = link_ber {
                sweep.link_ber = *b;
            }
            if let Some(s) = slot {
                cfg.frame.slot_duration = *s;
                sweep.target_rate_hz = None;
            }
            finish(single(
                cfg,
                Sweeps {
                    protocol: Some(sweep),
                    ..Default::default()
                },
            ))
        }
        Command::Run { scenario } => finish(load_scenario(scenario)?),
        Command::Preset { preset } => {
            let (cfg, name) = match preset {
                Preset::PaperRepro => (ScenarioConfig::paper_repro(), "paper-repro.json"),
                Preset::Minimal => (ScenarioConfig::minimal(), "minimal.json"),
            };
            std::fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join(name);
            scenario::save_scenario(&cfg, &path)?;
            Ok(vec![path])
        }
        Command::Calibrate {
            l,
            r,
            q,
            k_ref,
            n_caps,
            panel_width,
            min_height,
            max_height,
        } => {
            let targets = GarmentTargets {
                l: *l,
                r: *r,
                q: *q,
                k_at_reference_tag: *k_ref,
            };
            let bounds = GarmentBounds {
                panel_width: *panel_width,
                min_height: *min_height,
                max_height: *max_height,
                n_caps: *n_caps,
                ..GarmentBounds::default()
            };
            let cal = calibrate_garment(&targets, &bounds, CARRIER_HZ)?;
            let v = serde_json::to_value(&cal)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
            std::fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join("calibration.json");
            std::fs::write(&path, serde_json::to_string_pretty(&v)? + "\n")?;
            Ok(vec![path])
        }
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match execute(&cli) {
        Ok(paths) => {
            report(&paths);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
