//! Skill planner: precondition gate, target-node extraction and HTN
//! decomposition of GOTO/PICK/PLACE into low-level commands.
//!
//! Decomposition is a single-level method table with no backtracking and no
//! command-level recovery: if one command fails, the whole skill fails.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{SkillCall, SkillName};
use crate::perception::{MapNode, NodeKind, SemanticMap};
use crate::world::{
    ArgSlot, Command, CommandArgs, CommandName, ErrorCode, Point3, RobotState, WorldState,
    PICK_TOO_FAR_MESSAGE,
};

const BUILTIN_METHODS: &str = include_str!("../assets/htn_methods.json");

/// Keeps `move_base` targets strictly inside room walls.
const WALL_MARGIN: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("NODE_NOT_FOUND: there is no '{0}' in the semantic map")]
    NodeNotFound(String),
    #[error("invalid method table: {0}")]
    MethodTable(String),
    #[error("cannot read method table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrecondResult {
    Satisfied,
    Unsatisfied {
        error_code: ErrorCode,
        reason: String,
    },
}

impl PrecondResult {
    fn fail(error_code: ErrorCode, reason: impl Into<String>) -> Self {
        PrecondResult::Unsatisfied {
            error_code,
            reason: reason.into(),
        }
    }

    pub fn is_satisfied(&self) -> bool {
        matches!(self, PrecondResult::Satisfied)
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        match self {
            PrecondResult::Satisfied => None,
            PrecondResult::Unsatisfied { error_code, .. } => Some(*error_code),
        }
    }
}

fn planar(node: &MapNode, robot: &RobotState) -> f64 {
    node.pose.planar_distance(robot.pose.x, robot.pose.y)
}

fn nearest<'a>(
    candidates: impl Iterator<Item = &'a MapNode>,
    robot: &RobotState,
) -> Option<&'a MapNode> {
    candidates.min_by(|a, b| {
        planar(a, robot)
            .total_cmp(&planar(b, robot))
            .then_with(|| a.id.cmp(&b.id))
    })
}

/// Resolves the skill's target to a map node. GOTO and PICK match the id
/// exactly, then fall back to the label (nearest wins, ties by id). PLACE
/// targets the nearest surface in the robot's room.
pub fn extract_target_node(
    call: &SkillCall,
    map: &SemanticMap,
    robot: &RobotState,
) -> Result<MapNode, SkillError> {
    let target = call.target();
    let found = match call.name {
        SkillName::Place => nearest(
            map.nodes
                .values()
                .filter(|n| n.is_surface && map.room_of(&n.id) == Some(robot.room.as_str())),
            robot,
        ),
        SkillName::Goto | SkillName::Pick => map
            .node(target)
            .or_else(|| nearest(map.nodes.values().filter(|n| n.label == target), robot)),
    };
    found
        .cloned()
        .ok_or_else(|| SkillError::NodeNotFound(target.to_string()))
}

/// The precondition function P. Conditions are checked in a fixed order and
/// the first violation is reported:
///
/// * PICK: node exists, object visible, object within reach, arm free
/// * PLACE: arm holds the object, a surface is within reach
/// * GOTO: node exists, path to its room is open
pub fn check_preconditions(
    call: &SkillCall,
    world: &WorldState,
    map: &SemanticMap,
) -> PrecondResult {
    let robot = &world.robot;
    let target = call.target();
    match call.name {
        SkillName::Pick => {
            let Ok(node) = extract_target_node(call, map, robot) else {
                return PrecondResult::fail(
                    ErrorCode::NodeNotFound,
                    format!("There is no {target} in the semantic map"),
                );
            };
            if !world.is_visible(&node.id) {
                return PrecondResult::fail(
                    ErrorCode::ObjectNotVisible,
                    format!("The robot can't see the {target} to pick"),
                );
            }
            let pose = world.objects[&node.id].pose;
            if world.robot_distance(&pose) > world.params.reach_radius {
                return PrecondResult::fail(ErrorCode::ObjectTooFar, PICK_TOO_FAR_MESSAGE);
            }
            let arm = call.arm().expect("validated by the grammar");
            if let Some(held) = robot.arms.get(arm).state.held() {
                return PrecondResult::fail(
                    ErrorCode::ArmBusy,
                    format!("The {arm} arm is busy holding the {held}"),
                );
            }
            PrecondResult::Satisfied
        }
        SkillName::Place => {
            let arm = call.arm().expect("validated by the grammar");
            let holds_target = robot.arms.get(arm).state.held().is_some_and(|held| {
                held == target || world.objects.get(held).is_some_and(|o| o.label == target)
            });
            if !holds_target {
                return PrecondResult::fail(
                    ErrorCode::NotHolding,
                    format!("The {arm} arm is not holding the {target}"),
                );
            }
            let reachable = map.nodes.values().any(|n| {
                n.is_surface
                    && map.room_of(&n.id) == Some(robot.room.as_str())
                    && planar(n, robot) <= world.params.reach_radius
            });
            if !reachable {
                return PrecondResult::fail(
                    ErrorCode::NoSurfaceInReach,
                    format!("There is no surface within reach to place the {target}"),
                );
            }
            PrecondResult::Satisfied
        }
        SkillName::Goto => {
            let Ok(node) = extract_target_node(call, map, robot) else {
                return PrecondResult::fail(
                    ErrorCode::NodeNotFound,
                    format!("There is no {target} in the semantic map"),
                );
            };
            let room = map.room_of(&node.id).unwrap_or(robot.room.as_str());
            if world.is_blocked(&robot.room, room) {
                return PrecondResult::fail(
                    ErrorCode::PathBlocked,
                    format!("The path from the {} to the {room} is blocked", robot.room),
                );
            }
            PrecondResult::Satisfied
        }
    }
}

/// Values a command template can draw from at decomposition time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binding {
    #[serde(rename = "$arm")]
    Arm,
    #[serde(rename = "$node")]
    Node,
    #[serde(rename = "$node_pose")]
    NodePose,
    #[serde(rename = "$standoff_pose")]
    StandoffPose,
    #[serde(rename = "$node_room")]
    NodeRoom,
}

impl Binding {
    fn fits(self, slot: ArgSlot) -> bool {
        matches!(
            (slot, self),
            (ArgSlot::Arm, Binding::Arm)
                | (ArgSlot::Target, Binding::Node)
                | (ArgSlot::Pose, Binding::NodePose | Binding::StandoffPose)
                | (ArgSlot::Room, Binding::NodeRoom)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandTemplate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    pub command: CommandName,
    pub args: BTreeMap<ArgSlot, Binding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtnMethod {
    pub skill: SkillName,
    pub expansion: Vec<CommandTemplate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodTable {
    methods: BTreeMap<SkillName, HtnMethod>,
}

impl Default for MethodTable {
    fn default() -> Self {
        Self::builtin()
    }
}

impl MethodTable {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_METHODS).expect("embedded method table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, SkillError> {
        let text = std::fs::read_to_string(path).map_err(|source| SkillError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Parses `{ "PICK": [template, ...], ... }` and checks every template
    /// against its command's signature.
    pub fn from_json(text: &str) -> Result<Self, SkillError> {
        let raw: BTreeMap<SkillName, Vec<CommandTemplate>> =
            serde_json::from_str(text).map_err(|e| SkillError::MethodTable(e.to_string()))?;
        let mut methods = BTreeMap::new();
        for skill in SkillName::ALL {
            let expansion = raw
                .get(&skill)
                .cloned()
                .ok_or_else(|| SkillError::MethodTable(format!("no method for {skill}")))?;
            if expansion.is_empty() {
                return Err(SkillError::MethodTable(format!("empty method for {skill}")));
            }
            for t in &expansion {
                let slots: Vec<ArgSlot> = t.args.keys().copied().collect();
                if slots != t.command.signature() {
                    return Err(SkillError::MethodTable(format!(
                        "{skill}: {} arguments do not match its signature",
                        t.command
                    )));
                }
                for (slot, binding) in &t.args {
                    if !binding.fits(*slot) {
                        return Err(SkillError::MethodTable(format!(
                            "{skill}: {binding:?} cannot fill the {slot:?} slot of {}",
                            t.command
                        )));
                    }
                    if *binding == Binding::Arm && skill == SkillName::Goto {
                        return Err(SkillError::MethodTable("GOTO has no arm parameter".into()));
                    }
                }
            }
            methods.insert(skill, HtnMethod { skill, expansion });
        }
        Ok(Self { methods })
    }

    pub fn method(&self, skill: SkillName) -> &HtnMethod {
        &self.methods[&skill]
    }

    /// `CM(skill, node, s_t)`: instantiate the skill's method with bindings
    /// drawn from the target node and the robot state.
    pub fn decompose(&self, call: &SkillCall, node: &MapNode, world: &WorldState) -> Vec<Command> {
        let room = node_room(node, world);
        let standoff = standoff_pose(node, &room, world);
        self.method(call.name)
            .expansion
            .iter()
            .map(|t| {
                let mut args = CommandArgs::default();
                for (slot, binding) in &t.args {
                    match (slot, binding) {
                        (ArgSlot::Arm, _) => args.arm = call.arm(),
                        (ArgSlot::Target, _) => args.target = Some(node.id.clone()),
                        (ArgSlot::Pose, Binding::StandoffPose) => args.pose = Some(standoff),
                        (ArgSlot::Pose, _) => args.pose = Some(node.pose),
                        (ArgSlot::Room, _) => args.room = Some(room.clone()),
                    }
                }
                Command {
                    name: t.command,
                    args,
                }
            })
            .collect()
    }

    /// Phase label of the i-th command of a skill, when the table names one.
    pub fn phase(&self, skill: SkillName, index: usize) -> Option<&str> {
        self.method(skill)
            .expansion
            .get(index)
            .and_then(|t| t.phase.as_deref())
    }
}

fn node_room(node: &MapNode, world: &WorldState) -> String {
    if node.kind == NodeKind::Room {
        return node.id.clone();
    }
    world
        .room_at(node.pose.x, node.pose.y)
        .map(|r| r.name.clone())
        .unwrap_or_else(|| world.robot.room.clone())
}

/// Base pose for reaching a node: the room center for rooms, otherwise a
/// point `standoff` meters short of the node on the line from the robot.
fn standoff_pose(node: &MapNode, room: &str, world: &WorldState) -> Point3 {
    let robot = &world.robot.pose;
    let (x, y) = if node.kind == NodeKind::Room {
        (node.pose.x, node.pose.y)
    } else {
        let (dx, dy) = (robot.x - node.pose.x, robot.y - node.pose.y);
        let d = (dx * dx + dy * dy).sqrt();
        let standoff = world.params.standoff;
        if d <= standoff {
            (robot.x, robot.y)
        } else {
            (
                node.pose.x + standoff * dx / d,
                node.pose.y + standoff * dy / d,
            )
        }
    };
    let (x, y) = match world.room(room) {
        Some(r) => r.bounds.clamp(x, y, WALL_MARGIN),
        None => (x, y),
    };
    Point3::new(x, y, 0.0)
}
