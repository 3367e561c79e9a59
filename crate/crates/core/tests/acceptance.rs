//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::Command as Process;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use react_planner::context::EntryKind;
use react_planner::execution::{execute_skill, FailureMessage};
use react_planner::explainer::{cosine, embed, Embedding, Explainer, EMBEDDING_DIM};
use react_planner::grammar::{parse_action, render_action, PolicyAction, SkillCall, SkillName};
use react_planner::harness::{executed_actions, run_scenario, run_scripted, run_suite};
use react_planner::perception::{PerceptionCall, PerceptionName, SemanticMap};
use react_planner::planner::{PlannerOutcome, TaskPlanner};
use react_planner::policy::{ScriptStep, ScriptedPolicy};
use react_planner::skills::{extract_target_node, MethodTable};
use react_planner::world::{
    ArmSide, CommandName, ErrorCode, InjectedFault, WorldState, PICK_TOO_FAR_MESSAGE,
};

use common::*;

const GOLDEN_RUNTIME_LIMIT: Duration = Duration::from_secs(1);
const MIN_SIMPLE: usize = 10;
const MIN_MODERATE: usize = 5;
const REQUIRED_RATE: f64 = 100.0;
const FAIL_FAST_CASES: usize = 100;
const GATING_CASES: usize = 100;
const COSINE_PAIRS: usize = 1000;
const COSINE_TOL: f64 = 1e-9;
#[allow(clippy::approx_constant)]
const HAND_COSINE: f64 = 0.70711;
const HAND_COSINE_TOL: f64 = 1e-5;
const ROUND_TRIPS: usize = 1000;

/// The action sequence of the reference trace; `true` marks the skill that fails.
const REFERENCE_TRACE: [(&str, bool); 12] = [
    ("Perception action: GetMapRooms()", false),
    ("Skill action: GOTO(kitchen)", false),
    ("Perception action: GetObjectInRoom(kitchen)", false),
    ("Skill action: GOTO(bottle)", false),
    ("Skill action: PICK(bottle, right)", true),
    ("Perception action: GetObjectInRoom(kitchen)", false),
    ("Skill action: GOTO(table_2)", false),
    ("Skill action: PICK(bottle, right)", false),
    ("Skill action: GOTO(bedroom)", false),
    ("Perception action: GetObjectInRoom(bedroom)", false),
    ("Skill action: GOTO(table)", false),
    ("Skill action: PLACE(bottle, right)", false),
];

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ac1_golden() -> Check {
    let planner = TaskPlanner::default();
    let start = Instant::now();
    let run =
        run_scenario(&repo_path("scenarios/golden.json"), &planner).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let actual: Vec<(String, bool)> = executed_actions(&run.outcome)
        .into_iter()
        .map(|a| (a.action, a.failed))
        .collect();
    let expected: Vec<(String, bool)> = REFERENCE_TRACE
        .iter()
        .map(|(a, f)| (a.to_string(), *f))
        .collect();
    ensure(actual == expected, || {
        format!("action sequence differs: {actual:?}")
    })?;
    ensure(run.outcome.status.is_success(), || {
        format!("status {:?}", run.outcome.status)
    })?;
    let observations: Vec<&str> = run
        .outcome
        .context
        .entries
        .iter()
        .filter(|e| e.kind == EntryKind::Observation)
        .map(|e| e.text.as_str())
        .collect();
    ensure(observations[4].contains("can't see the bottle"), || {
        format!("fifth observation is '{}'", observations[4])
    })?;
    ensure(elapsed < GOLDEN_RUNTIME_LIMIT, || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "12 actions matched, failed PICK observed, {elapsed:?} < {GOLDEN_RUNTIME_LIMIT:?}"
    ))
}

fn ac2_explainer() -> Check {
    let failure = FailureMessage {
        skill: SkillName::Pick,
        error_code: ErrorCode::ObjectTooFar,
        reason: PICK_TOO_FAR_MESSAGE.to_string(),
        failed_command: Some(CommandName::ApproachArm),
    };
    let s = Explainer::default()
        .suggest(&failure, GOLDEN_REQUEST)
        .ok_or("no suggestion")?;
    ensure(
        s.text == "Use the GOTO skill to move near the object to pick",
        || format!("got '{}'", s.text),
    )?;
    Ok(format!(
        "record {} at similarity {:.4}",
        s.matched_record, s.similarity
    ))
}

fn ac3_suite() -> Check {
    let summary = run_suite(&repo_path("scenarios/suite"), &TaskPlanner::default())
        .map_err(|e| e.to_string())?;
    let table = summary.table();
    let header = table.lines().next().unwrap_or_default();
    for col in ["Request type", "Number of attempts", "Success rate"] {
        ensure(header.contains(col), || format!("missing column '{col}'"))?;
    }
    for (category, min) in [("simple", MIN_SIMPLE), ("moderate", MIN_MODERATE)] {
        let row = summary.row(category).ok_or(format!("no {category} row"))?;
        ensure(row.attempts >= min, || {
            format!("{category}: only {} attempts", row.attempts)
        })?;
        ensure(row.success_rate() == REQUIRED_RATE, || {
            format!("{category}: {:.1}% success", row.success_rate())
        })?;
    }
    let rows: Vec<String> = summary
        .rows
        .iter()
        .map(|r| format!("{} {}/{}", r.category, r.successes, r.attempts))
        .collect();
    Ok(rows.join(", "))
}

fn structured_sequence(
    rng: &mut ChaCha8Rng,
    world: &WorldState,
) -> Vec<react_planner::world::Command> {
    let map = SemanticMap::build(world);
    let methods = MethodTable::builtin();
    let movable: Vec<&String> = world
        .objects
        .values()
        .filter(|o| !o.is_surface && o.room.is_some())
        .map(|o| &o.id)
        .collect();
    let target = movable[rng.gen_range(0..movable.len())].clone();
    let arm = if rng.gen_bool(0.5) {
        ArmSide::Right
    } else {
        ArmSide::Left
    };
    let mut cmds = Vec::new();
    for call in [SkillCall::goto(&target), SkillCall::pick(&target, arm)] {
        let node = extract_target_node(&call, &map, &world.robot).unwrap();
        cmds.extend(methods.decompose(&call, &node, world));
    }
    cmds
}

fn ac4_fail_fast() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC4);
    let base = golden().world;
    let mut violations = Vec::new();
    let mut injected_first = 0;
    for case in 0..FAIL_FAST_CASES {
        let cmds = if case % 2 == 0 {
            structured_sequence(&mut rng, &base)
        } else {
            let n = rng.gen_range(1..=10);
            (0..n).map(|_| random_command(&mut rng, &base)).collect()
        };
        let i = rng.gen_range(0..cmds.len());
        let occurrence = cmds[..=i].iter().filter(|c| c.name == cmds[i].name).count() as u32;
        let mut world = base.clone();
        world.faults.push(InjectedFault {
            command: cmds[i].name,
            occurrence,
            error_code: ErrorCode::GraspFailed,
            message: "injected".into(),
        });

        // prefix replay oracle
        let mut oracle = world.clone();
        let mut first_failure = cmds.len();
        for (j, c) in cmds.iter().enumerate() {
            if !oracle.apply_command(c).is_success() {
                first_failure = j;
                break;
            }
        }

        let result = execute_skill(SkillName::Pick, &cmds, &mut world);
        if first_failure == i {
            injected_first += 1;
        }
        let ok = first_failure <= i
            && result.executed_count == first_failure + 1
            && result.feedback.len() == first_failure + 1
            && world == oracle;
        if !ok {
            violations.push(format!(
                "case {case}: i={i} first={first_failure} executed={}",
                result.executed_count
            ));
        }
    }
    ensure(violations.is_empty(), || {
        format!("{} violations: {:?}", violations.len(), violations)
    })?;
    Ok(format!("{FAIL_FAST_CASES} sequences, 0 violations ({injected_first} stopped at the injected index)"))
}

fn single_skill_run(world: &WorldState, call: &SkillCall) -> PlannerOutcome {
    let mut policy = ScriptedPolicy::new(vec![
        ScriptStep::new(PolicyAction::Skill(call.clone())),
        ScriptStep::new(PolicyAction::Finish("done".into())),
    ]);
    TaskPlanner::default().run("gate check", world.clone(), &mut policy)
}

fn ac5_gating() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC5);
    let mut gated = 0;
    let mut satisfied = 0;
    let mut violations = Vec::new();
    let mut by_code = std::collections::BTreeMap::<&str, usize>::new();
    let mut attempts = 0;
    while gated < GATING_CASES {
        attempts += 1;
        if attempts > 100 * GATING_CASES {
            return Err(format!("only {gated} gated samples generated"));
        }
        let world = random_world(&mut rng);
        let call = random_skill(&mut rng, &world);
        let expected = precondition_oracle(&call, &world);
        let out = single_skill_run(&world, &call);
        let log = &out.skill_log[0];
        match expected {
            Some(code) => {
                gated += 1;
                *by_code.entry(code.as_str()).or_default() += 1;
                let ok = log.error_code == Some(code)
                    && log.commands_executed == 0
                    && out.world == world;
                if !ok {
                    violations.push(format!(
                        "{call}: expected {code:?}, got {:?} after {} commands",
                        log.error_code, log.commands_executed
                    ));
                }
            }
            None => {
                satisfied += 1;
                if log.commands_executed == 0 {
                    violations.push(format!(
                        "{call}: oracle satisfied but planner gated with {:?}",
                        log.error_code
                    ));
                }
            }
        }
    }
    ensure(violations.is_empty(), || {
        format!("{} violations: {:?}", violations.len(), violations)
    })?;
    Ok(format!(
        "{gated} gated worlds ({by_code:?}), {satisfied} satisfied cross-checked, 0 violations"
    ))
}

fn check_laws(name: &str, out: &PlannerOutcome) -> Result<(), String> {
    let entries: Vec<_> = out.transcript.entries().collect();
    ensure(
        fold_entries(&entries).entries == out.context.entries,
        || format!("{name}: fold differs"),
    )?;
    let mut prev = 2;
    for &len in &out.context_lengths {
        ensure(len > prev, || {
            format!("{name}: context length {len} after {prev}")
        })?;
        prev = len;
    }
    ensure(out.context_lengths.len() == out.steps_used as usize, || {
        format!("{name}: lengths/steps mismatch")
    })?;
    ensure(out.transcript.alternation_holds(), || {
        format!("{name}: alternation broken")
    })
}

fn ac6_context_laws() -> Check {
    let planner = TaskPlanner::default();
    let mut checked = 0;
    let golden_run = run_scripted(&golden(), &planner).map_err(|e| e.to_string())?;
    check_laws("golden", &golden_run.outcome)?;
    let reference =
        std::fs::read_to_string(repo_path("scenarios/golden.log")).map_err(|e| e.to_string())?;
    let folded = fold_entries(&entries_from_log(&reference));
    ensure(folded.entries == golden_run.outcome.context.entries, || {
        "folding the reference log does not reproduce the golden context".into()
    })?;
    checked += 1;
    for s in suite_scenarios() {
        let run = run_scripted(&s, &planner).map_err(|e| e.to_string())?;
        check_laws(&s.name, &run.outcome)?;
        checked += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC6);
    for i in 0..50 {
        let world = random_world(&mut rng);
        let mut steps: Vec<ScriptStep> = (0..rng.gen_range(1..8))
            .map(|_| {
                let action = match rng.gen_range(0..3) {
                    0 => PolicyAction::Thought("thinking".into()),
                    1 => PolicyAction::Perception(PerceptionCall {
                        name: PerceptionName::GetRobotState,
                        args: vec![],
                    }),
                    _ => PolicyAction::Skill(random_skill(&mut rng, &world)),
                };
                ScriptStep::new(action)
            })
            .collect();
        if rng.gen_bool(0.7) {
            steps.push(ScriptStep::new(PolicyAction::Finish("ok".into())));
        }
        let out = planner.run("random", world, &mut ScriptedPolicy::new(steps));
        check_laws(&format!("random {i}"), &out)?;
        checked += 1;
    }
    Ok(format!("{checked} transcripts: fold, strict growth and alternation hold; reference log folds to the golden context"))
}

fn random_embedding(rng: &mut ChaCha8Rng) -> Embedding {
    let mut c = [0.0; EMBEDDING_DIM];
    if rng.gen_bool(0.05) {
        return Embedding::normalized(c);
    }
    let density = rng.gen_range(0.01..1.0);
    for x in c.iter_mut() {
        if rng.gen_bool(density) {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    Embedding::normalized(c)
}

fn embed_via_binary(text: &str) -> Result<String, String> {
    let out = Process::new(env!("CARGO_BIN_EXE_react-planner"))
        .args(["embed", text])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("embed exited with {}", out.status)
    })?;
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn ac7_cosine() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC7);
    for k in 0..COSINE_PAIRS {
        let (a, b) = (random_embedding(&mut rng), random_embedding(&mut rng));
        let (ab, ba) = (cosine(&a, &b), cosine(&b, &a));
        ensure((ab - ba).abs() <= COSINE_TOL, || {
            format!("pair {k}: asymmetric {ab} vs {ba}")
        })?;
        ensure((-1.0 - COSINE_TOL..=1.0 + COSINE_TOL).contains(&ab), || {
            format!("pair {k}: {ab} out of range")
        })?;
        for v in [&a, &b] {
            if v.is_zero() {
                ensure(cosine(v, v) == 0.0, || {
                    format!("pair {k}: zero self-similarity")
                })?;
            } else {
                ensure((cosine(v, v) - 1.0).abs() <= COSINE_TOL, || {
                    format!("pair {k}: self-similarity {}", cosine(v, v))
                })?;
                ensure((v.norm() - 1.0).abs() <= COSINE_TOL, || {
                    format!("pair {k}: norm {}", v.norm())
                })?;
            }
        }
    }
    let mut e0 = [0.0; EMBEDDING_DIM];
    e0[0] = 1.0;
    let mut e01 = [0.0; EMBEDDING_DIM];
    e01[0] = 1.0 / 2f64.sqrt();
    e01[1] = 1.0 / 2f64.sqrt();
    let hand = cosine(&Embedding::normalized(e0), &Embedding::normalized(e01));
    ensure((hand - HAND_COSINE).abs() <= HAND_COSINE_TOL, || {
        format!("hand example gave {hand}")
    })?;

    let first = embed_via_binary(GOLDEN_REQUEST)?;
    let second = embed_via_binary(GOLDEN_REQUEST)?;
    let local: Vec<String> = embed(GOLDEN_REQUEST)
        .components()
        .iter()
        .map(|c| format!("{:016x}", c.to_bits()))
        .collect();
    ensure(first == second, || "two processes disagree".into())?;
    ensure(first.trim_end() == local.join(" "), || {
        "process output differs from in-process embedding".into()
    })?;
    Ok(format!("{COSINE_PAIRS} pairs within {COSINE_TOL:e}, hand example {hand:.6}, embeddings byte-identical across 2 processes"))
}

fn ac8_grammar() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC8);
    for k in 0..ROUND_TRIPS {
        let a = random_action(&mut rng);
        let back = parse_action(&render_action(&a)).map_err(|e| format!("case {k}: {e}"))?;
        ensure(back == a, || format!("case {k}: {a:?} became {back:?}"))?;
    }
    let cases = [
        (
            "Perception action: GetMapRooms()",
            PolicyAction::Perception(PerceptionCall {
                name: PerceptionName::GetMapRooms,
                args: vec![],
            }),
        ),
        (
            "Skill action: GOTO(kitchen)",
            PolicyAction::Skill(SkillCall::goto("kitchen")),
        ),
        (
            "Perception action: GetObjectInRoom(kitchen)",
            PolicyAction::Perception(PerceptionCall {
                name: PerceptionName::GetObjectInRoom,
                args: vec!["kitchen".into()],
            }),
        ),
        (
            "Skill action: PICK(bottle, right)",
            PolicyAction::Skill(SkillCall::pick("bottle", ArmSide::Right)),
        ),
    ];
    for (line, expected) in cases {
        let got = parse_action(line).map_err(|e| format!("'{line}': {e}"))?;
        ensure(got == expected, || format!("'{line}' parsed to {got:?}"))?;
    }
    Ok(format!("{ROUND_TRIPS} round-trips and 4 trace lines"))
}

fn ac9_determinism() -> Check {
    let planner = TaskPlanner::default();
    let mut compared = 0;
    let mut scenarios = vec![golden()];
    scenarios.extend(suite_scenarios());
    for s in &scenarios {
        let a = run_scripted(s, &planner).map_err(|e| e.to_string())?;
        let b = run_scripted(s, &planner).map_err(|e| e.to_string())?;
        ensure(a.log == b.log, || format!("{}: logs differ", s.name))?;
        compared += 1;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("run{k}.log"));
        let status = Process::new(env!("CARGO_BIN_EXE_react-planner"))
            .arg("run")
            .arg(repo_path("scenarios/golden.json"))
            .arg("--log")
            .arg(&path)
            .output()
            .map_err(|e| e.to_string())?
            .status;
        ensure(status.success(), || {
            format!("golden run exited with {status}")
        })?;
        logs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure(logs[0] == logs[1], || {
        "golden logs differ across processes".into()
    })?;
    let reference = std::fs::read(repo_path("scenarios/golden.log")).map_err(|e| e.to_string())?;
    ensure(logs[0] == reference, || {
        "golden log differs from scenarios/golden.log".into()
    })?;
    Ok(format!("{compared} scenarios byte-identical in-process; golden byte-identical across 2 processes and the reference log"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("AC1", "golden trace reproduction", ac1_golden),
        ("AC2", "explainer worked example", ac2_explainer),
        ("AC3", "scripted suite success table", ac3_suite),
        ("AC4", "fail-fast execution", ac4_fail_fast),
        ("AC5", "precondition gating", ac5_gating),
        ("AC6", "context update laws", ac6_context_laws),
        ("AC7", "cosine and embedding", ac7_cosine),
        ("AC8", "grammar round-trip", ac8_grammar),
        ("AC9", "transcript determinism", ac9_determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {id} {name}: {detail}"),
            Ok(Err(reason)) => {
                failed += 1;
                println!("FAIL {id} {name}: {reason}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {id} {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
