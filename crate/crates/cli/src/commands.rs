use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentsim_core::map::{parse_opendrive_subset, parse_scene, RoadMap};
use agentsim_core::presence::score_csv;
use agentsim_core::record::{export_frames, ExportError, RecordLog, SensorSuite};
use agentsim_core::scenario::{build_world, crosswalk_demo, run_scenario, ScenarioConfig};
use agentsim_core::world::{Event, World, WorldConfig, WorldSnapshot};
use agentsim_core::Execution;
use agentsim_net::protocol::ServerMode;
use agentsim_net::server::ServerCore;
use agentsim_net::transport::{self, ServeConfig};
use anyhow::{anyhow, Context};
use sha2::{Digest, Sha256};

use crate::{ExportArgs, Mode, ReplayArgs, RunArgs, ScoreArgs, ServeArgs};

pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Assertion(Vec<String>),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Assertion(_) => 4,
        }
    }

    pub fn report(&self) {
        match self {
            Failure::Config(e) => eprintln!("config error: {e:#}"),
            Failure::Runtime(e) => eprintln!("runtime fault: {e:#}"),
            Failure::Assertion(list) => {
                for f in list {
                    eprintln!("assertion failed: {f}");
                }
            }
        }
    }
}

type Outcome = Result<(), Failure>;

trait Classify<T> {
    fn or_config(self) -> Result<T, Failure>;
    fn or_runtime(self) -> Result<T, Failure>;
}

impl<T> Classify<T> for anyhow::Result<T> {
    fn or_config(self) -> Result<T, Failure> {
        self.map_err(Failure::Config)
    }

    fn or_runtime(self) -> Result<T, Failure> {
        self.map_err(Failure::Runtime)
    }
}

fn load_map(path: &Path) -> anyhow::Result<RoadMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let map = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xodr")) {
        parse_opendrive_subset(&text)
    } else {
        parse_scene(&text)
    };
    map.with_context(|| format!("parsing {}", path.display()))
}

fn load_scenario(path: &Path) -> anyhow::Result<ScenarioConfig> {
    ScenarioConfig::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn read_log(path: &Path) -> anyhow::Result<RecordLog> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    RecordLog::read_from(BufReader::new(file)).with_context(|| format!("reading log {}", path.display()))
}

fn serve_world(args: &ServeArgs, exec: Execution) -> anyhow::Result<World> {
    if let Some(map) = &args.map {
        let cfg = WorldConfig {
            exec,
            ..WorldConfig::default()
        };
        return Ok(World::new(Arc::new(load_map(map)?), cfg));
    }
    let cfg = match &args.scenario {
        Some(path) => load_scenario(path)?,
        None => {
            // the connecting client supplies the pedestrian
            let mut demo = crosswalk_demo();
            demo.actors.retain(|a| !a.blueprint.starts_with("walker."));
            demo
        }
    };
    Ok(build_world(&cfg, exec)?.0)
}

pub fn serve(args: ServeArgs, exec: Execution) -> Outcome {
    let world = serve_world(&args, exec).or_config()?;
    let mode = match args.mode {
        Mode::Lockstep => ServerMode::Lockstep,
        Mode::Realtime => ServerMode::Realtime,
    };
    let config = ServeConfig {
        tcp_addr: (args.host, args.port).into(),
        ws_addr: (args.host, args.ws_port).into(),
        static_dir: args.static_dir,
        responses_dir: args.responses,
    };
    let handle = transport::start(ServerCore::new(world, mode, exec), config)
        .context("starting listeners")
        .or_runtime()?;
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "tcp {}", handle.tcp_addr);
    let _ = writeln!(out, "ws ws://{}/ws", handle.ws_addr);
    let _ = out.flush();
    drop(out);
    tracing::info!(?mode, "serving");
    handle.wait();
    Ok(())
}

pub fn run(args: RunArgs, exec: Execution) -> Outcome {
    let cfg = load_scenario(&args.scenario).or_config()?;
    let start = Instant::now();
    let run = run_scenario(&cfg, exec).map_err(|e| {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    })?;
    let elapsed = start.elapsed();
    let bytes = run.log.to_bytes();
    fs::write(&args.out, &bytes)
        .with_context(|| format!("writing {}", args.out.display()))
        .or_runtime()?;
    if let Some(path) = &args.summary_json {
        let json = serde_json::to_vec_pretty(&run.summary).expect("summary serializes");
        fs::write(path, json)
            .with_context(|| format!("writing {}", path.display()))
            .or_runtime()?;
    }
    print!("{}", run.summary);
    println!("log: {} ({} frames)", args.out.display(), run.log.len());
    println!("sha256: {:x}", Sha256::digest(&bytes));
    println!("elapsed: {:.3} s", elapsed.as_secs_f64());
    if !run.summary.faults.is_empty() {
        return Err(Failure::Runtime(anyhow!("{} actor faults during the run", run.summary.faults.len())));
    }
    if !run.failures.is_empty() {
        return Err(Failure::Assertion(run.failures));
    }
    Ok(())
}

fn event_name(e: &Event) -> String {
    match e {
        Event::Spawn { actor, .. } => format!("spawn:{actor}"),
        Event::Destroy { actor } => format!("destroy:{actor}"),
        Event::Collision { a, b, .. } => format!("collision:{a}-{b}"),
        Event::CompleteStop { actor } => format!("stop:{actor}"),
        Event::OutOfBounds { actor } => format!("out-of-bounds:{actor}"),
        Event::Fault { actor, .. } => format!("fault:{actor}"),
        Event::LaneChangeRequested { actor } => format!("lane-change:{actor}"),
    }
}

fn summary_line(s: &WorldSnapshot) -> String {
    let mut line = format!("frame {:>6}  t={:>8.3}", s.frame, s.sim_time);
    for v in &s.vehicles {
        let _ = write!(
            line,
            "  {} {:.2}m/s {:?}{}",
            v.id,
            v.speed,
            v.ehmi.mode,
            if v.ehmi.strip_active { "*" } else { "" }
        );
    }
    for w in &s.walkers {
        let p = w.transform.position;
        let _ = write!(line, "  {} ({:.2},{:.2})", w.id, p.x, p.y);
    }
    if !s.events.is_empty() {
        let names: Vec<String> = s.events.iter().map(event_name).collect();
        let _ = write!(line, "  [{}]", names.join(" "));
    }
    line
}

pub fn replay(args: ReplayArgs) -> Outcome {
    if !(args.speed >= 0.0 && args.speed.is_finite()) {
        return Err(Failure::Config(anyhow!("--speed must be a finite number >= 0")));
    }
    let log = read_log(&args.log).or_config()?;
    let frames: Vec<&WorldSnapshot> = match args.frame {
        Some(k) => vec![log
            .frame(k)
            .ok_or_else(|| anyhow!("frame {k} is not in the log ({} frames)", log.len()))
            .or_config()?],
        None => log.replay().collect(),
    };
    let pace = (args.speed > 0.0).then(|| Duration::from_secs_f64(log.header.dt / args.speed));
    let start = Instant::now();
    let mut out = io::stdout().lock();
    for (i, snap) in frames.iter().enumerate() {
        if let Some(p) = pace {
            let due = p * i as u32;
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let line = if args.json {
            serde_json::to_string(snap).expect("snapshot serializes")
        } else {
            summary_line(snap)
        };
        if writeln!(out, "{line}").is_err() {
            // downstream closed the pipe
            return Ok(());
        }
    }
    drop(out);
    if let Some(path) = &args.out {
        let mut copy = RecordLog::new(log.header.clone());
        for snap in frames {
            copy.record_tick(snap.clone()).map_err(|e| Failure::Runtime(e.into()))?;
        }
        fs::write(path, copy.to_bytes())
            .with_context(|| format!("writing {}", path.display()))
            .or_runtime()?;
    }
    Ok(())
}

pub fn export(args: ExportArgs, exec: Execution) -> Outcome {
    let log = read_log(&args.log).or_config()?;
    let text = fs::read_to_string(&args.sensors)
        .with_context(|| format!("reading {}", args.sensors.display()))
        .or_config()?;
    let suite: SensorSuite = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.sensors.display()))
        .or_config()?;
    let manifest = export_frames(&log, &suite, &args.out, exec).map_err(|e| match e {
        ExportError::Io { .. } => Failure::Runtime(e.into()),
        _ => Failure::Config(e.into()),
    })?;
    println!(
        "exported {} files from {} frames to {}",
        manifest.files.len(),
        log.len(),
        args.out.display()
    );
    Ok(())
}

pub fn score(args: ScoreArgs) -> Outcome {
    let file = File::open(&args.responses)
        .with_context(|| format!("opening {}", args.responses.display()))
        .or_config()?;
    let report = score_csv(BufReader::new(file))
        .with_context(|| format!("scoring {}", args.responses.display()))
        .or_config()?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{report}");
    }
    Ok(())
}
