//! Shared fixtures and independent oracles for the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use react_planner::context::{update_context, Context, ContextEntry, EntryKind};
use react_planner::grammar::{PolicyAction, SkillCall, SkillName};
use react_planner::perception::{PerceptionCall, PerceptionName};
use react_planner::scenario::Scenario;
use react_planner::world::{
    ArmSide, ArmState, Arms, BasePose, Command, CommandName, ErrorCode, ObjectEntry, Point3, Rect,
    RobotState, Room, RoomPair, WorldState,
};

pub const GOLDEN_REQUEST: &str =
    "Go to the table in the kitchen, pick up the bottle, and place it on the table in the bedroom.";

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

pub fn golden() -> Scenario {
    Scenario::load(&repo_path("scenarios/golden.json")).expect("golden scenario loads")
}

pub fn suite_scenarios() -> Vec<Scenario> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(repo_path("scenarios/suite"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths.iter().map(|p| Scenario::load(p).unwrap()).collect()
}

fn point<R: Rng>(rng: &mut R, bounds: &Rect, z: f64) -> Point3 {
    let x = rng.gen_range(bounds.min[0] + 0.1..bounds.max[0] - 0.1);
    let y = rng.gen_range(bounds.min[1] + 0.1..bounds.max[1] - 0.1);
    Point3::new(x, y, z)
}

/// 1 to 3 rooms side by side, a handful of objects, sometimes something held
/// and sometimes a blocked doorway.
pub fn random_world<R: Rng>(rng: &mut R) -> WorldState {
    let names = ["kitchen", "bedroom", "office"];
    let n_rooms = rng.gen_range(1..=3);
    let rooms: Vec<Room> = (0..n_rooms)
        .map(|i| Room {
            name: names[i].to_string(),
            bounds: Rect {
                min: [i as f64 * 6.0, 0.0],
                max: [(i + 1) as f64 * 6.0, 5.0],
            },
        })
        .collect();

    let mut objects: Vec<ObjectEntry> = Vec::new();
    let n_objects = rng.gen_range(1..=6);
    for i in 0..n_objects {
        let room = rooms.choose(rng).unwrap();
        let is_surface = rng.gen_bool(0.35);
        let surfaces: Vec<&ObjectEntry> = objects
            .iter()
            .filter(|o| o.is_surface && o.room.as_deref() == Some(room.name.as_str()))
            .collect();
        let (pose, support) = match surfaces.choose(rng) {
            Some(s) if !is_surface && rng.gen_bool(0.5) => (s.pose, Some(s.id.clone())),
            _ => (point(rng, &room.bounds, 0.7), None),
        };
        objects.push(ObjectEntry {
            id: format!("obj{i}"),
            label: format!("obj{i}"),
            pose,
            supported_by: support,
            room: Some(room.name.clone()),
            is_surface,
        });
    }

    let robot_room = rooms.choose(rng).unwrap();
    let pose = point(rng, &robot_room.bounds, 0.0);
    let mut arms = Arms::default();
    // hold a free-standing non-surface object in one arm
    if rng.gen_bool(0.3) {
        let free: Vec<usize> = (0..objects.len())
            .filter(|&i| {
                let id = &objects[i].id;
                !objects[i].is_surface
                    && objects[i].supported_by.is_none()
                    && !objects
                        .iter()
                        .any(|o| o.supported_by.as_deref() == Some(id))
            })
            .collect();
        if let Some(&i) = free.choose(rng) {
            let side = *ArmSide::ALL.choose(rng).unwrap();
            arms.get_mut(side).state = ArmState::Holding(objects[i].id.clone());
            objects[i].room = None;
            objects[i].pose = Point3::new(pose.x, pose.y, 1.0);
        }
    }
    let robot = RobotState {
        pose: BasePose {
            x: pose.x,
            y: pose.y,
            heading: 0.0,
        },
        room: robot_room.name.clone(),
        arms,
    };
    let mut world = WorldState::new(rooms.clone(), objects, robot);
    if rooms.len() > 1 && rng.gen_bool(0.4) {
        world
            .blocked_paths
            .insert(RoomPair::new(rooms[0].name.clone(), rooms[1].name.clone()));
    }
    world.validate().expect("generated world is valid");
    world
}

/// A skill call aimed at something plausible in the world, or at nothing.
pub fn random_skill<R: Rng>(rng: &mut R, world: &WorldState) -> SkillCall {
    let mut targets: Vec<String> = world.objects.keys().cloned().collect();
    targets.push("ghost".into());
    let target = targets.choose(rng).unwrap().clone();
    let arm = *ArmSide::ALL.choose(rng).unwrap();
    match rng.gen_range(0..3) {
        0 => {
            let mut goto_targets = targets;
            goto_targets.extend(world.rooms.iter().map(|r| r.name.clone()));
            SkillCall::goto(goto_targets.choose(rng).unwrap())
        }
        1 => SkillCall::pick(&target, arm),
        _ => SkillCall::place(&target, arm),
    }
}

fn planar(p: &Point3, world: &WorldState) -> f64 {
    ((p.x - world.robot.pose.x).powi(2) + (p.y - world.robot.pose.y).powi(2)).sqrt()
}

/// First violated precondition, recomputed from the world alone. Targets in
/// generated worlds are unique ids, so no label resolution is needed.
pub fn precondition_oracle(call: &SkillCall, world: &WorldState) -> Option<ErrorCode> {
    let target = call.params[0].as_str();
    let placed = |id: &str| world.objects.get(id).filter(|o| o.room.is_some());
    let robot = &world.robot;
    match call.name {
        SkillName::Pick => {
            let Some(o) = placed(target) else {
                return Some(ErrorCode::NodeNotFound);
            };
            if o.room.as_deref() != Some(robot.room.as_str()) || planar(&o.pose, world) > 4.0 {
                return Some(ErrorCode::ObjectNotVisible);
            }
            if planar(&o.pose, world) > 0.8 {
                return Some(ErrorCode::ObjectTooFar);
            }
            let arm = call.params[1].parse::<ArmSide>().unwrap();
            if robot.arms.get(arm).state != ArmState::Free {
                return Some(ErrorCode::ArmBusy);
            }
            None
        }
        SkillName::Place => {
            let arm = call.params[1].parse::<ArmSide>().unwrap();
            if robot.arms.get(arm).state != ArmState::Holding(target.to_string()) {
                return Some(ErrorCode::NotHolding);
            }
            let reachable = world.objects.values().any(|o| {
                o.is_surface
                    && o.room.as_deref() == Some(robot.room.as_str())
                    && planar(&o.pose, world) <= 0.8
            });
            (!reachable).then_some(ErrorCode::NoSurfaceInReach)
        }
        SkillName::Goto => {
            let dest = if world.rooms.iter().any(|r| r.name == target) {
                target.to_string()
            } else if let Some(o) = placed(target) {
                o.room.clone().unwrap()
            } else {
                return Some(ErrorCode::NodeNotFound);
            };
            let blocked = dest != robot.room
                && world
                    .blocked_paths
                    .contains(&RoomPair::new(robot.room.clone(), dest.clone()));
            blocked.then_some(ErrorCode::PathBlocked)
        }
    }
}

/// Arbitrary well-formed command over the world's objects and rooms.
pub fn random_command<R: Rng>(rng: &mut R, world: &WorldState) -> Command {
    let arm = *ArmSide::ALL.choose(rng).unwrap();
    let ids: Vec<&String> = world.objects.keys().collect();
    let id = ids.choose(rng).unwrap().to_string();
    let room = world.rooms.choose(rng).unwrap();
    match *CommandName::ALL.choose(rng).unwrap() {
        CommandName::PlanPath => Command::plan_path(id, room.name.clone()),
        CommandName::MoveBase => {
            Command::move_base(point(rng, &room.bounds, 0.0), room.name.clone())
        }
        CommandName::ApproachArm => {
            let pose = world.objects[&id].pose;
            Command::approach_arm(arm, id, pose)
        }
        other => Command::arm_only(other, arm),
    }
}

/// Random valid action for grammar round-trips.
pub fn random_action<R: Rng>(rng: &mut R) -> PolicyAction {
    const WORDS: [&str; 8] = [
        "bottle", "table_2", "kitchen", "lamp", "cup3", "x", "bed_room", "A1",
    ];
    let word = |rng: &mut R| WORDS.choose(rng).unwrap().to_string();
    let text = |rng: &mut R| {
        let n = rng.gen_range(0..6);
        (0..n).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
    };
    let arm = |rng: &mut R| *ArmSide::ALL.choose(rng).unwrap();
    match rng.gen_range(0..4) {
        0 => PolicyAction::Thought(text(rng)),
        1 => PolicyAction::Finish(text(rng)),
        2 => {
            let name = *PerceptionName::ALL.choose(rng).unwrap();
            let args = (0..name.arity()).map(|_| word(rng)).collect();
            PolicyAction::Perception(PerceptionCall { name, args })
        }
        _ => PolicyAction::Skill(match rng.gen_range(0..3) {
            0 => SkillCall::goto(&word(rng)),
            1 => SkillCall::pick(&word(rng), arm(rng)),
            _ => SkillCall::place(&word(rng), arm(rng)),
        }),
    }
}

fn unescape(text: &str) -> String {
    let mut out = String::new();
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Recovers context entries from a transcript log, skipping headers and
/// execution feedback.
pub fn entries_from_log(log: &str) -> Vec<ContextEntry> {
    log.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("  Feedback: "))
        .map(|line| {
            let (kind, text) = if let Some(rest) = line.strip_prefix("User Request: \"") {
                (EntryKind::UserRequest, rest.strip_suffix('"').unwrap())
            } else if let Some(rest) = line.strip_prefix("Robot State: ") {
                (EntryKind::RobotStateSummary, rest)
            } else if let Some(rest) = line.strip_prefix("Observation: ") {
                (EntryKind::Observation, rest)
            } else if let Some(rest) = line.strip_prefix("Thought: ") {
                (EntryKind::Thought, rest)
            } else {
                (EntryKind::ActionTaken, line)
            };
            ContextEntry::new(kind, unescape(text))
        })
        .collect()
}

/// Folds entries through `update_context` starting from the two headers.
pub fn fold_entries(entries: &[ContextEntry]) -> Context {
    assert!(entries.len() >= 2);
    let mut ctx = Context::new(&entries[0].text, &entries[1].text);
    for e in &entries[2..] {
        ctx = update_context(&ctx, e.clone());
    }
    ctx
}
