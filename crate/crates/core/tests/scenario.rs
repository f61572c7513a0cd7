use std::path::PathBuf;
use std::time::Instant;

use agentsim_core::map::parse_scene;
use agentsim_core::mocap::{parse_bvh, synth};
use agentsim_core::scenario::{crosswalk_demo, run_scenario, ClipSource, DriveSpec, MapSource, ScenarioConfig};
use agentsim_core::traffic::{EhmiMode, STOP_SPEED};
use agentsim_core::world::Event;
use agentsim_core::Execution;

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

fn bundled() -> ScenarioConfig {
    ScenarioConfig::load(&asset("crosswalk_demo.json")).unwrap()
}

#[test]
fn bundled_files_match_builtin_demo() {
    let file = bundled();
    let builtin = crosswalk_demo();
    let MapSource::Inline(map) = &builtin.map else { panic!() };
    let scene = parse_scene(&std::fs::read_to_string(asset("crosswalk.json")).unwrap()).unwrap();
    assert_eq!(&scene, map);
    let Some(DriveSpec::BvhReplay { clip: ClipSource::File(_), .. }) = &file.actors[1].drive else {
        panic!("bundled pedestrian should replay a BVH file")
    };
    let Some(DriveSpec::BvhReplay {
        clip: ClipSource::Crossing {
            distance,
            speed,
            hold,
            frame_time,
        },
        ..
    }) = &builtin.actors[1].drive
    else {
        panic!()
    };
    let generated = synth::crossing_clip(*distance, *speed, *hold, *frame_time);
    let parsed = parse_bvh(&std::fs::read_to_string(asset("pedestrian_crossing.bvh")).unwrap()).unwrap();
    assert_eq!(parsed.frame_count(), generated.frame_count());
    for (a, b) in parsed.frames.iter().flatten().zip(generated.frames.iter().flatten()) {
        assert!((a - b).abs() <= 1e-6);
    }
    assert_eq!(file.actors[0], builtin.actors[0]);
    assert_eq!((file.duration, file.seed, file.traffic), (builtin.duration, builtin.seed, builtin.traffic));
}

#[test]
fn crosswalk_demo_yields_and_stops() {
    let cfg = bundled();
    let start = Instant::now();
    let run = run_scenario(&cfg, Execution::default()).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "{elapsed:?}");
    assert_eq!(run.log.len(), 601);
    let s = &run.summary;
    assert_eq!(s.collision_events, 0, "{s}");
    assert!(!s.complete_stops.is_empty(), "{s}");
    let av = &s.vehicles[0];
    assert!(av.final_speed < 0.05, "{s}");
    let d = av.stop_line_distance.unwrap();
    assert!((0.5..=5.0).contains(&d), "bumper {d} m before the stop line");
    assert!(run.failures.is_empty(), "{:?}", run.failures);
    assert!(s.faults.is_empty());
}

#[test]
fn ignoring_pedestrians_causes_collision() {
    let mut cfg = bundled();
    cfg.traffic.ignore_pedestrians = true;
    let run = run_scenario(&cfg, Execution::default()).unwrap();
    let hits: Vec<&Event> = run
        .log
        .replay()
        .flat_map(|s| &s.events)
        .filter(|e| matches!(e, Event::Collision { .. }))
        .collect();
    assert!(!hits.is_empty());
    assert!(run.failures.iter().any(|f| f.contains("collision")));
}

#[test]
fn strip_lit_exactly_when_yielding_or_stopped() {
    for ignore in [false, true] {
        let mut cfg = bundled();
        cfg.traffic.ignore_pedestrians = ignore;
        let run = run_scenario(&cfg, Execution::default()).unwrap();
        let mut lit = 0;
        for snap in run.log.replay() {
            for v in &snap.vehicles {
                let should = matches!(v.ehmi.mode, EhmiMode::Yielding | EhmiMode::Stopped);
                assert_eq!(v.ehmi.strip_active, should, "frame {} {:?}", snap.frame, v.ehmi);
                lit += usize::from(should);
                if v.ehmi.mode == EhmiMode::Stopped {
                    assert!(v.speed <= STOP_SPEED);
                }
            }
        }
        assert_eq!(lit > 0, !ignore);
    }
}

#[test]
fn same_config_same_log_bytes() {
    let cfg = bundled();
    let a = run_scenario(&cfg, Execution::Sequential).unwrap().log.to_bytes();
    let b = run_scenario(&cfg, Execution::Parallel).unwrap().log.to_bytes();
    let c = run_scenario(&cfg, Execution::Parallel).unwrap().log.to_bytes();
    assert!(a == b && b == c);
    let mut other = cfg.clone();
    other.seed += 1;
    let d = run_scenario(&other, Execution::Parallel).unwrap().log.to_bytes();
    assert_ne!(a, d);
}
