//! Ground-truth simulated environment.
//!
//! The world is a small 2-D layout of rectangular rooms holding objects with
//! 3-D poses. Low-level robot commands are applied atomically: a command either
//! succeeds and applies its effect, or fails and leaves everything except the
//! clock untouched. Scheduled events model external agents changing the world
//! while the robot works.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure reason reported when an approach movement targets something out of reach.
pub const PICK_TOO_FAR_MESSAGE: &str =
    "Cannot execute the approach movement for the PICK skill, object too far";
pub const PLACE_TOO_FAR_MESSAGE: &str =
    "Cannot execute the approach movement for the PLACE skill, surface too far";

/// Geometric thresholds of the simulation, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub reach_radius: f64,
    pub visibility_radius: f64,
    pub grasp_tolerance: f64,
    /// Horizontal radius within which a released object lands on a surface.
    pub surface_radius: f64,
    /// Distance the base keeps from an object target after `move_base`.
    pub standoff: f64,
    pub lift_height: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            reach_radius: 0.8,
            visibility_radius: 4.0,
            grasp_tolerance: 0.10,
            surface_radius: 0.5,
            standoff: 0.5,
            lift_height: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }

    pub fn planar_distance(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.2}, {:.2}, {:.2})", self.x, self.y, self.z)
    }
}

/// Axis-aligned rectangle; `min` is inclusive, `max` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x < self.max[0] && y >= self.min[1] && y < self.max[1]
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        )
    }

    /// True when the two rectangles share a region of positive area.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.min[0] < other.max[0]
            && other.min[0] < self.max[0]
            && self.min[1] < other.max[1]
            && other.min[1] < self.max[1]
    }

    /// Nearest point inside the rectangle, keeping `margin` from the walls when possible.
    pub fn clamp(&self, x: f64, y: f64, margin: f64) -> (f64, f64) {
        let clamp_axis = |v: f64, lo: f64, hi: f64| {
            let (lo, hi) = if hi - lo > 2.0 * margin {
                (lo + margin, hi - margin)
            } else {
                let mid = (lo + hi) / 2.0;
                (mid, mid)
            };
            v.clamp(lo, hi)
        };
        (
            clamp_axis(x, self.min[0], self.max[0]),
            clamp_axis(y, self.min[1], self.max[1]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub name: String,
    pub bounds: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: String,
    pub label: String,
    pub pose: Point3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supported_by: Option<String>,
    /// `None` while the object is held by the robot.
    #[serde(default)]
    pub room: Option<String>,
    #[serde(default)]
    pub is_surface: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmSide {
    Left,
    Right,
}

impl ArmSide {
    pub const ALL: [ArmSide; 2] = [ArmSide::Right, ArmSide::Left];

    pub fn as_str(self) -> &'static str {
        match self {
            ArmSide::Left => "left",
            ArmSide::Right => "right",
        }
    }
}

impl fmt::Display for ArmSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArmSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(ArmSide::Left),
            "right" => Ok(ArmSide::Right),
            other => Err(format!("unknown arm '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArmState {
    #[default]
    Free,
    Holding(String),
}

impl ArmState {
    pub fn held(&self) -> Option<&str> {
        match self {
            ArmState::Free => None,
            ArmState::Holding(id) => Some(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Arm {
    #[serde(default)]
    pub state: ArmState,
    /// Gripper point; `None` while the arm is retracted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gripper: Option<Point3>,
    #[serde(default)]
    pub gripper_open: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Arms {
    #[serde(default)]
    pub left: Arm,
    #[serde(default)]
    pub right: Arm,
}

impl Arms {
    pub fn get(&self, side: ArmSide) -> &Arm {
        match side {
            ArmSide::Left => &self.left,
            ArmSide::Right => &self.right,
        }
    }

    pub fn get_mut(&mut self, side: ArmSide) -> &mut Arm {
        match side {
            ArmSide::Left => &mut self.left,
            ArmSide::Right => &mut self.right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: BasePose,
    pub room: String,
    #[serde(default)]
    pub arms: Arms,
}

impl RobotState {
    pub fn holding(&self, id: &str) -> Option<ArmSide> {
        ArmSide::ALL
            .into_iter()
            .find(|side| self.arms.get(*side).state.held() == Some(id))
    }
}

/// Unordered pair of room names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[String; 2]", into = "[String; 2]")]
pub struct RoomPair(String, String);

impl RoomPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }
}

impl From<[String; 2]> for RoomPair {
    fn from([a, b]: [String; 2]) -> Self {
        Self::new(a, b)
    }
}

impl From<RoomPair> for [String; 2] {
    fn from(p: RoomPair) -> Self {
        [p.0, p.1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Fires once the world clock reaches the given step.
    AtStep(u64),
    /// Fires after the planner has dispatched the given number of skills (1-based).
    AfterSkillIndex(u32),
}

impl Trigger {
    /// Whether a pending event with trigger `self` fires on `current`.
    pub fn fires_on(&self, current: &Trigger) -> bool {
        match (self, current) {
            (Trigger::AtStep(n), Trigger::AtStep(clock)) => n <= clock,
            (Trigger::AfterSkillIndex(k), Trigger::AfterSkillIndex(done)) => k == done,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    MoveObject {
        id: String,
        pose: Point3,
        #[serde(default)]
        support: Option<String>,
        room: String,
    },
    RemoveObject {
        id: String,
    },
    BlockPath {
        a: String,
        b: String,
    },
    UnblockPath {
        a: String,
        b: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub trigger: Trigger,
    pub mutation: Mutation,
}

/// Outcome of one event that matched a trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct FiredEvent {
    pub mutation: Mutation,
    pub applied: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    PlanPath,
    MoveBase,
    ApproachArm,
    OpenGripper,
    CloseGripper,
    VerifyGrasp,
    LiftArm,
    RetractArm,
}

impl CommandName {
    pub const ALL: [CommandName; 8] = [
        CommandName::PlanPath,
        CommandName::MoveBase,
        CommandName::ApproachArm,
        CommandName::OpenGripper,
        CommandName::CloseGripper,
        CommandName::VerifyGrasp,
        CommandName::LiftArm,
        CommandName::RetractArm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::PlanPath => "plan_path",
            CommandName::MoveBase => "move_base",
            CommandName::ApproachArm => "approach_arm",
            CommandName::OpenGripper => "open_gripper",
            CommandName::CloseGripper => "close_gripper",
            CommandName::VerifyGrasp => "verify_grasp",
            CommandName::LiftArm => "lift_arm",
            CommandName::RetractArm => "retract_arm",
        }
    }

    /// Argument slots the command requires, exactly.
    pub fn signature(self) -> &'static [ArgSlot] {
        use ArgSlot::*;
        match self {
            CommandName::PlanPath => &[Target, Room],
            CommandName::MoveBase => &[Pose, Room],
            CommandName::ApproachArm => &[Arm, Target, Pose],
            CommandName::OpenGripper
            | CommandName::CloseGripper
            | CommandName::VerifyGrasp
            | CommandName::LiftArm
            | CommandName::RetractArm => &[Arm],
        }
    }
}

impl fmt::Display for CommandName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommandName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommandName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown command '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgSlot {
    Arm,
    Target,
    Pose,
    Room,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandArgs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmSide>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
}

impl CommandArgs {
    fn slots(&self) -> Vec<ArgSlot> {
        let mut slots = Vec::new();
        if self.arm.is_some() {
            slots.push(ArgSlot::Arm);
        }
        if self.target.is_some() {
            slots.push(ArgSlot::Target);
        }
        if self.pose.is_some() {
            slots.push(ArgSlot::Pose);
        }
        if self.room.is_some() {
            slots.push(ArgSlot::Room);
        }
        slots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub name: CommandName,
    #[serde(default)]
    pub args: CommandArgs,
}

impl Command {
    pub fn plan_path(target: impl Into<String>, room: impl Into<String>) -> Self {
        Self {
            name: CommandName::PlanPath,
            args: CommandArgs {
                target: Some(target.into()),
                room: Some(room.into()),
                ..Default::default()
            },
        }
    }

    pub fn move_base(pose: Point3, room: impl Into<String>) -> Self {
        Self {
            name: CommandName::MoveBase,
            args: CommandArgs {
                pose: Some(pose),
                room: Some(room.into()),
                ..Default::default()
            },
        }
    }

    pub fn approach_arm(arm: ArmSide, target: impl Into<String>, pose: Point3) -> Self {
        Self {
            name: CommandName::ApproachArm,
            args: CommandArgs {
                arm: Some(arm),
                target: Some(target.into()),
                pose: Some(pose),
                room: None,
            },
        }
    }

    /// One of the single-argument arm commands.
    pub fn arm_only(name: CommandName, arm: ArmSide) -> Self {
        Self {
            name,
            args: CommandArgs {
                arm: Some(arm),
                ..Default::default()
            },
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.args.slots() == self.name.signature()
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(arm) = self.args.arm {
            parts.push(format!("arm={arm}"));
        }
        if let Some(target) = &self.args.target {
            parts.push(format!("target={target}"));
        }
        if let Some(pose) = &self.args.pose {
            parts.push(format!("pose={pose}"));
        }
        if let Some(room) = &self.args.room {
            parts.push(format!("room={room}"));
        }
        write!(f, "{}({})", self.name, parts.join(", "))
    }
}

/// Stable failure identifiers shared by the executor and the precondition checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    ObjectTooFar,
    ObjectNotVisible,
    GraspFailed,
    PathBlocked,
    ArmBusy,
    NodeNotFound,
    NotHolding,
    NoSurfaceInReach,
    MalformedCommand,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 9] = [
        ErrorCode::ObjectTooFar,
        ErrorCode::ObjectNotVisible,
        ErrorCode::GraspFailed,
        ErrorCode::PathBlocked,
        ErrorCode::ArmBusy,
        ErrorCode::NodeNotFound,
        ErrorCode::NotHolding,
        ErrorCode::NoSurfaceInReach,
        ErrorCode::MalformedCommand,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::ObjectTooFar => "OBJECT_TOO_FAR",
            ErrorCode::ObjectNotVisible => "OBJECT_NOT_VISIBLE",
            ErrorCode::GraspFailed => "GRASP_FAILED",
            ErrorCode::PathBlocked => "PATH_BLOCKED",
            ErrorCode::ArmBusy => "ARM_BUSY",
            ErrorCode::NodeNotFound => "NODE_NOT_FOUND",
            ErrorCode::NotHolding => "NOT_HOLDING",
            ErrorCode::NoSurfaceInReach => "NO_SURFACE_IN_REACH",
            ErrorCode::MalformedCommand => "MALFORMED_COMMAND",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCode::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown error code '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CommandFeedback {
    Success,
    Failure {
        error_code: ErrorCode,
        message: String,
    },
}

impl CommandFeedback {
    pub fn failure(error_code: ErrorCode, message: impl Into<String>) -> Self {
        CommandFeedback::Failure {
            error_code,
            message: message.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, CommandFeedback::Success)
    }
}

impl fmt::Display for CommandFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandFeedback::Success => f.write_str("Success"),
            CommandFeedback::Failure {
                error_code,
                message,
            } => write!(f, "Failure {error_code}: {message}"),
        }
    }
}

/// Forces the `occurrence`-th execution (1-based) of `command` to fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub command: CommandName,
    pub occurrence: u32,
    pub error_code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("duplicate room name '{0}'")]
    DuplicateRoom(String),
    #[error("rooms '{0}' and '{1}' overlap")]
    OverlappingRooms(String, String),
    #[error("id '{0}' is used by more than one room or object")]
    DuplicateId(String),
    #[error("object '{0}' refers to unknown room '{1}'")]
    UnknownRoom(String, String),
    #[error("object '{0}' is neither held nor located in a room")]
    Unlocated(String),
    #[error("object '{0}' is held but still has a room or support")]
    HeldButPlaced(String),
    #[error("object '{0}' is held by both arms")]
    HeldTwice(String),
    #[error("arm holds unknown object '{0}'")]
    UnknownHeldObject(String),
    #[error("object '{0}' has an invalid support '{1}'")]
    InvalidSupport(String, String),
    #[error("support relation is cyclic through '{0}'")]
    CyclicSupport(String),
    #[error("robot is in unknown room '{0}'")]
    RobotRoom(String),
    #[error("object map key '{0}' does not match its id '{1}'")]
    KeyMismatch(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    #[serde(default)]
    pub params: SimParams,
    pub rooms: Vec<Room>,
    #[serde(with = "object_list")]
    pub objects: IndexMap<String, ObjectEntry>,
    pub robot: RobotState,
    #[serde(default)]
    pub clock: u64,
    #[serde(default)]
    pub pending_events: Vec<ScheduledEvent>,
    #[serde(default)]
    pub blocked_paths: BTreeSet<RoomPair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<InjectedFault>,
    /// Attempts per command name, used to address injected faults.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub command_counts: BTreeMap<CommandName, u32>,
}

mod object_list {
    use super::ObjectEntry;
    use indexmap::IndexMap;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        objects: &IndexMap<String, ObjectEntry>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(objects.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<IndexMap<String, ObjectEntry>, D::Error> {
        let list = Vec::<ObjectEntry>::deserialize(d)?;
        let mut map = IndexMap::with_capacity(list.len());
        for entry in list {
            if map.contains_key(&entry.id) {
                return Err(serde::de::Error::custom(format!(
                    "duplicate object id '{}'",
                    entry.id
                )));
            }
            map.insert(entry.id.clone(), entry);
        }
        Ok(map)
    }
}

type Outcome = Result<(), (ErrorCode, String)>;

impl WorldState {
    pub fn new(rooms: Vec<Room>, objects: Vec<ObjectEntry>, robot: RobotState) -> Self {
        Self {
            params: SimParams::default(),
            rooms,
            objects: objects.into_iter().map(|o| (o.id.clone(), o)).collect(),
            robot,
            clock: 0,
            pending_events: Vec::new(),
            blocked_paths: BTreeSet::new(),
            faults: Vec::new(),
            command_counts: BTreeMap::new(),
        }
    }

    pub fn room(&self, name: &str) -> Option<&Room> {
        self.rooms.iter().find(|r| r.name == name)
    }

    /// Room whose bounds contain the planar point.
    pub fn room_at(&self, x: f64, y: f64) -> Option<&Room> {
        self.rooms.iter().find(|r| r.bounds.contains(x, y))
    }

    pub fn is_blocked(&self, a: &str, b: &str) -> bool {
        a != b && self.blocked_paths.contains(&RoomPair::new(a, b))
    }

    pub fn robot_distance(&self, p: &Point3) -> f64 {
        p.planar_distance(self.robot.pose.x, self.robot.pose.y)
    }

    /// The visibility predicate: the object is placed in the robot's room and
    /// within the visibility radius of the base.
    pub fn is_visible(&self, id: &str) -> bool {
        self.objects.get(id).is_some_and(|o| {
            o.room.as_deref() == Some(self.robot.room.as_str())
                && self.robot_distance(&o.pose) <= self.params.visibility_radius
        })
    }

    /// Checks every structural invariant of the world.
    pub fn validate(&self) -> Result<(), WorldError> {
        let mut names = BTreeSet::new();
        for (i, room) in self.rooms.iter().enumerate() {
            if !names.insert(room.name.as_str()) {
                return Err(WorldError::DuplicateRoom(room.name.clone()));
            }
            for other in &self.rooms[i + 1..] {
                if room.bounds.overlaps(&other.bounds) {
                    return Err(WorldError::OverlappingRooms(
                        room.name.clone(),
                        other.name.clone(),
                    ));
                }
            }
        }
        for (key, object) in &self.objects {
            if key != &object.id {
                return Err(WorldError::KeyMismatch(key.clone(), object.id.clone()));
            }
            if names.contains(object.id.as_str()) {
                return Err(WorldError::DuplicateId(object.id.clone()));
            }
        }
        if self.room(&self.robot.room).is_none() {
            return Err(WorldError::RobotRoom(self.robot.room.clone()));
        }

        let left = self.robot.arms.left.state.held();
        let right = self.robot.arms.right.state.held();
        if left.is_some() && left == right {
            return Err(WorldError::HeldTwice(left.unwrap_or_default().to_string()));
        }
        for held in [left, right].into_iter().flatten() {
            if !self.objects.contains_key(held) {
                return Err(WorldError::UnknownHeldObject(held.to_string()));
            }
        }

        for object in self.objects.values() {
            let held = self.robot.holding(&object.id).is_some();
            if held {
                if object.room.is_some() || object.supported_by.is_some() {
                    return Err(WorldError::HeldButPlaced(object.id.clone()));
                }
                continue;
            }
            let room = object
                .room
                .as_deref()
                .ok_or_else(|| WorldError::Unlocated(object.id.clone()))?;
            if self.room(room).is_none() {
                return Err(WorldError::UnknownRoom(object.id.clone(), room.to_string()));
            }
            if let Some(support) = &object.supported_by {
                let ok = self.objects.get(support).is_some_and(|s| {
                    s.is_surface && s.room.as_deref() == Some(room) && s.id != object.id
                });
                if !ok {
                    return Err(WorldError::InvalidSupport(
                        object.id.clone(),
                        support.clone(),
                    ));
                }
            }
        }

        for id in self.objects.keys() {
            let mut seen = BTreeSet::new();
            let mut cursor = Some(id.as_str());
            while let Some(current) = cursor {
                if !seen.insert(current) {
                    return Err(WorldError::CyclicSupport(id.clone()));
                }
                cursor = self
                    .objects
                    .get(current)
                    .and_then(|o| o.supported_by.as_deref());
            }
        }
        Ok(())
    }

    /// Applies one low-level command. On failure only the clock (and the
    /// per-command attempt counter) advances.
    pub fn apply_command(&mut self, cmd: &Command) -> CommandFeedback {
        let attempt = {
            let count = self.command_counts.entry(cmd.name).or_default();
            *count += 1;
            *count
        };
        self.clock += 1;

        if let Some(fault) = self
            .faults
            .iter()
            .find(|f| f.command == cmd.name && f.occurrence == attempt)
        {
            return CommandFeedback::failure(fault.error_code, fault.message.clone());
        }
        if !cmd.is_well_formed() {
            return CommandFeedback::failure(
                ErrorCode::MalformedCommand,
                format!("{} does not match the signature of {}", cmd, cmd.name),
            );
        }

        let mut next = self.clone();
        match next.execute(cmd) {
            Ok(()) => {
                *self = next;
                CommandFeedback::Success
            }
            Err((code, message)) => CommandFeedback::failure(code, message),
        }
    }

    fn execute(&mut self, cmd: &Command) -> Outcome {
        let args = &cmd.args;
        match cmd.name {
            CommandName::PlanPath => {
                let room = args.room.as_deref().unwrap_or_default();
                self.require_room(room)?;
                self.require_open_path(room)
            }
            CommandName::MoveBase => {
                let room = args.room.as_deref().unwrap_or_default();
                let pose = args.pose.unwrap_or(Point3::new(0.0, 0.0, 0.0));
                let bounds = self.require_room(room)?.bounds;
                if !bounds.contains(pose.x, pose.y) {
                    return Err((
                        ErrorCode::MalformedCommand,
                        format!("pose {pose} lies outside the {room}"),
                    ));
                }
                self.require_open_path(room)?;
                self.move_base(pose.x, pose.y, room);
                Ok(())
            }
            CommandName::ApproachArm => {
                let side = args.arm.unwrap_or(ArmSide::Right);
                let target = args.target.as_deref().unwrap_or_default();
                let pose = args.pose.unwrap_or(Point3::new(0.0, 0.0, 0.0));
                let placing = self.robot.arms.get(side).state.held().is_some();
                if !self.is_visible(target) {
                    let what = if placing { "place on" } else { "pick" };
                    return Err((
                        ErrorCode::ObjectNotVisible,
                        format!("The robot can't see the {target} to {what}"),
                    ));
                }
                if self.robot_distance(&pose) > self.params.reach_radius {
                    let message = if placing {
                        PLACE_TOO_FAR_MESSAGE
                    } else {
                        PICK_TOO_FAR_MESSAGE
                    };
                    return Err((ErrorCode::ObjectTooFar, message.to_string()));
                }
                self.robot.arms.get_mut(side).gripper = Some(pose);
                Ok(())
            }
            CommandName::OpenGripper => {
                let side = args.arm.unwrap_or(ArmSide::Right);
                self.open_gripper(side);
                Ok(())
            }
            CommandName::CloseGripper => {
                let side = args.arm.unwrap_or(ArmSide::Right);
                if let Some(held) = self.robot.arms.get(side).state.held() {
                    return Err((
                        ErrorCode::ArmBusy,
                        format!("The {side} arm is already holding the {held}"),
                    ));
                }
                self.close_gripper(side);
                Ok(())
            }
            CommandName::VerifyGrasp => {
                let side = args.arm.unwrap_or(ArmSide::Right);
                match self.robot.arms.get(side).state {
                    ArmState::Holding(_) => Ok(()),
                    ArmState::Free => Err((
                        ErrorCode::GraspFailed,
                        format!("Grasp verification failed, the {side} gripper is empty"),
                    )),
                }
            }
            CommandName::LiftArm => {
                let side = args.arm.unwrap_or(ArmSide::Right);
                let lift = self.params.lift_height;
                let arm = self.robot.arms.get_mut(side);
                let Some(held) = arm.state.held().map(str::to_string) else {
                    return Err((
                        ErrorCode::GraspFailed,
                        format!("Nothing to lift in the {side} gripper"),
                    ));
                };
                if let Some(g) = arm.gripper.as_mut() {
                    g.z += lift;
                }
                if let Some(object) = self.objects.get_mut(&held) {
                    object.pose.z += lift;
                    object.supported_by = None;
                }
                Ok(())
            }
            CommandName::RetractArm => {
                let side = args.arm.unwrap_or(ArmSide::Right);
                self.robot.arms.get_mut(side).gripper = None;
                Ok(())
            }
        }
    }

    fn require_room(&self, name: &str) -> Result<&Room, (ErrorCode, String)> {
        self.room(name).ok_or_else(|| {
            (
                ErrorCode::MalformedCommand,
                format!("unknown room '{name}'"),
            )
        })
    }

    fn require_open_path(&self, room: &str) -> Outcome {
        if self.is_blocked(&self.robot.room, room) {
            Err((
                ErrorCode::PathBlocked,
                format!(
                    "The path from the {} to the {room} is blocked",
                    self.robot.room
                ),
            ))
        } else {
            Ok(())
        }
    }

    fn move_base(&mut self, x: f64, y: f64, room: &str) {
        let (dx, dy) = (x - self.robot.pose.x, y - self.robot.pose.y);
        if dx != 0.0 || dy != 0.0 {
            self.robot.pose.heading = dy.atan2(dx);
        }
        self.robot.pose.x = x;
        self.robot.pose.y = y;
        self.robot.room = room.to_string();
        for side in ArmSide::ALL {
            let arm = self.robot.arms.get_mut(side);
            if let Some(g) = arm.gripper.as_mut() {
                g.x += dx;
                g.y += dy;
            }
            if let Some(held) = arm.state.held().map(str::to_string) {
                if let Some(object) = self.objects.get_mut(&held) {
                    object.pose.x += dx;
                    object.pose.y += dy;
                }
            }
        }
    }

    fn open_gripper(&mut self, side: ArmSide) {
        let base = Point3::new(self.robot.pose.x, self.robot.pose.y, 0.0);
        let arm = self.robot.arms.get_mut(side);
        arm.gripper_open = true;
        let release_at = arm.gripper.unwrap_or(base);
        let ArmState::Holding(held) = std::mem::take(&mut arm.state) else {
            return;
        };
        let room = self.robot.room.clone();
        let surface = self
            .objects
            .values()
            .filter(|o| o.is_surface && o.room.as_deref() == Some(room.as_str()))
            .map(|o| (o.pose.planar_distance(release_at.x, release_at.y), o))
            .filter(|(d, _)| *d <= self.params.surface_radius)
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)))
            .map(|(_, o)| (o.id.clone(), o.pose.z));
        if let Some(object) = self.objects.get_mut(&held) {
            object.room = Some(room);
            match surface {
                Some((id, z)) => {
                    object.pose = Point3::new(release_at.x, release_at.y, z);
                    object.supported_by = Some(id);
                }
                None => {
                    object.pose = Point3::new(release_at.x, release_at.y, 0.0);
                    object.supported_by = None;
                }
            }
        }
    }

    fn close_gripper(&mut self, side: ArmSide) {
        let arm = self.robot.arms.get(side);
        let captured = arm.gripper.and_then(|g| {
            self.objects
                .values()
                .filter(|o| !o.is_surface && o.room.as_deref() == Some(self.robot.room.as_str()))
                .map(|o| (o.pose.distance(&g), o))
                .filter(|(d, _)| *d <= self.params.grasp_tolerance)
                .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)))
                .map(|(_, o)| o.id.clone())
        });
        let arm = self.robot.arms.get_mut(side);
        arm.gripper_open = false;
        if let Some(id) = captured {
            arm.state = ArmState::Holding(id.clone());
            if let Some(object) = self.objects.get_mut(&id) {
                object.room = None;
                object.supported_by = None;
            }
        }
    }

    /// Fires every pending event whose trigger matches, in declaration order.
    pub fn fire_events(&mut self, trigger: Trigger) -> Vec<FiredEvent> {
        let (due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending_events)
            .into_iter()
            .partition(|e| e.trigger.fires_on(&trigger));
        self.pending_events = keep;
        due.into_iter()
            .map(|event| {
                let result = self.apply_mutation(&event.mutation);
                if let Err(note) = &result {
                    log::warn!("skipped event {:?}: {note}", event.mutation);
                }
                FiredEvent {
                    mutation: event.mutation,
                    applied: result.is_ok(),
                    note: result.err(),
                }
            })
            .collect()
    }

    /// Applies a single mutation; on error the world is left untouched.
    pub fn apply_mutation(&mut self, mutation: &Mutation) -> Result<(), String> {
        match mutation {
            Mutation::MoveObject {
                id,
                pose,
                support,
                room,
            } => {
                let object = self
                    .objects
                    .get(id)
                    .ok_or_else(|| format!("no object '{id}'"))?;
                if self.robot.holding(id).is_some() {
                    return Err(format!("object '{id}' is held by the robot"));
                }
                if self.room(room).is_none() {
                    return Err(format!("no room '{room}'"));
                }
                if let Some(support) = support {
                    let s = self
                        .objects
                        .get(support)
                        .ok_or_else(|| format!("no support '{support}'"))?;
                    if !s.is_surface || s.room.as_deref() != Some(room.as_str()) {
                        return Err(format!("'{support}' is not a surface in the {room}"));
                    }
                    if self.support_chain(support).any(|s| s == id.as_str()) {
                        return Err(format!("placing '{id}' on '{support}' creates a cycle"));
                    }
                }
                let delta = Point3::new(
                    pose.x - object.pose.x,
                    pose.y - object.pose.y,
                    pose.z - object.pose.z,
                );
                let carried: Vec<String> = self.carried_by(id);
                for carried_id in carried {
                    if let Some(o) = self.objects.get_mut(&carried_id) {
                        o.pose.x += delta.x;
                        o.pose.y += delta.y;
                        o.pose.z += delta.z;
                        o.room = Some(room.clone());
                    }
                }
                let object = self.objects.get_mut(id).expect("checked above");
                object.pose = *pose;
                object.supported_by = support.clone();
                object.room = Some(room.clone());
                Ok(())
            }
            Mutation::RemoveObject { id } => {
                if !self.objects.contains_key(id) {
                    return Err(format!("no object '{id}'"));
                }
                if self.robot.holding(id).is_some() {
                    return Err(format!("object '{id}' is held by the robot"));
                }
                for o in self.objects.values_mut() {
                    if o.supported_by.as_deref() == Some(id.as_str()) {
                        o.supported_by = None;
                        o.pose.z = 0.0;
                    }
                }
                self.objects.shift_remove(id);
                Ok(())
            }
            Mutation::BlockPath { a, b } => {
                self.blocked_paths
                    .insert(RoomPair::new(a.clone(), b.clone()));
                Ok(())
            }
            Mutation::UnblockPath { a, b } => {
                self.blocked_paths
                    .remove(&RoomPair::new(a.clone(), b.clone()));
                Ok(())
            }
        }
    }

    fn support_chain<'a>(&'a self, start: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        let mut cursor = Some(start);
        let mut steps = 0usize;
        let limit = self.objects.len() + 1;
        std::iter::from_fn(move || {
            let current = cursor?;
            steps += 1;
            if steps > limit {
                return None;
            }
            cursor = self
                .objects
                .get(current)
                .and_then(|o| o.supported_by.as_deref());
            Some(current)
        })
    }

    /// Objects resting (transitively) on `id`.
    fn carried_by(&self, id: &str) -> Vec<String> {
        self.objects
            .values()
            .filter(|o| o.id != id && self.support_chain(&o.id).skip(1).any(|s| s == id))
            .map(|o| o.id.clone())
            .collect()
    }
}
