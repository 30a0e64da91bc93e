//! End-to-end engine behavior: the worked example, mode agreement, the
//! soundness oracle, determinism, and iteration caps.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use tracecause::engine::{
    bench_modes, build_report, find_actual_cause, verify_cause, EngineConfig, Mode, NoCauseReason,
    Outcome,
};
use tracecause::generators::{simulate, MountainCarParams, Policy};
use tracecause::hp::{derive_partition, CandidatePrim, CauseCandidate, CheckOpts};
use tracecause::testsupport::{random_formula, random_log, random_signature, Rng};
use tracecause::{
    CausalFormula, IngestMode, Signature, State, Token, Trace, TraceLog, Value,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fig4").join(name)
}

fn fig4_log() -> TraceLog<f64> {
    let sig: Signature<f64> =
        Signature::parse(&fs::read_to_string(fixture("signature.json")).unwrap()).unwrap();
    TraceLog::parse_csv(&fs::read_to_string(fixture("log.csv")).unwrap(), &sig, IngestMode::Strict)
        .unwrap()
}

fn base_config(cause_vars: &[&str]) -> EngineConfig {
    EngineConfig {
        cause_vars: cause_vars.iter().map(|s| s.to_string()).collect(),
        ..EngineConfig::default()
    }
}

#[test]
fn fig4_cause_is_the_first_acceleration_decision() {
    let log = fig4_log();
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    for mode in Mode::ALL {
        let mut cfg = base_config(&["action"]);
        cfg.mode = mode;
        cfg.alpha0 = 1.0; // three traces: sample everything
        let outcome = find_actual_cause(&log, &effect, &cfg).unwrap();
        match outcome {
            Outcome::Cause(found) => {
                assert_eq!(found.candidate.to_string(), "action(0) = 1", "mode {mode}");
                assert_eq!(found.witness, "tau0", "mode {mode}");
                assert_eq!(found.counterfactual, "tau1", "mode {mode}");
                assert!(found.verification.passes(), "mode {mode}");
                assert_eq!(found.verification.checked_universe, 2, "mode {mode}");
            }
            Outcome::NoCause(nc) => panic!("mode {mode}: expected a cause, got {:?}", nc.reason),
        }
    }
}

#[test]
fn all_success_log_has_no_cause() {
    let sig = fig4_log().signature().clone();
    let mk = |pos: f64, vel: f64, action: i64| {
        State::new(vec![
            Value::Continuous(pos),
            Value::Continuous(vel),
            Value::Discrete(Token::Int(action)),
            Value::Continuous(0.0),
            Value::Continuous(0.02),
            Value::Continuous(0.0025),
        ])
    };
    let t0 = Trace::new("s0", vec![mk(0.0, 0.02, 1), mk(0.58, 0.05, 1), mk(0.6, 0.05, 1)]);
    let t1 = Trace::new("s1", vec![mk(0.0, 0.02, -1), mk(0.55, 0.06, 1), mk(0.6, 0.06, 1)]);
    let log = TraceLog::new(sig, vec![t0, t1]).unwrap();
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    let outcome = find_actual_cause(&log, &effect, &base_config(&["action"])).unwrap();
    match outcome {
        Outcome::NoCause(nc) => assert_eq!(nc.reason, NoCauseReason::Ac1Unsat),
        Outcome::Cause(found) => panic!("unexpected cause {}", found.candidate),
    }
}

/// A mountain-car log in which every failing first decision is `action = 1`
/// and every success starts with `action = -1`, so the identified cause is
/// forced and all modes must agree on it.
fn forced_cause_log(n_traces: usize) -> TraceLog<f64> {
    let p = MountainCarParams::<f64>::standard();
    let sig = tracecause::generators::mountain_car_signature::<f64>();
    let policies = [Policy::AlwaysRight, Policy::AlwaysLeft, Policy::BangBang];
    let mut rng = Rng::new(401);
    let mut traces = Vec::new();
    'outer: loop {
        let pos0 = rng.range(-0.7, -0.1);
        let vel0 = rng.range(-0.02, -0.001); // strictly negative: pumping starts left
        for policy in policies {
            if traces.len() == n_traces {
                break 'outer;
            }
            let rows = simulate(policy, (pos0, vel0), &p);
            let states = rows
                .into_iter()
                .map(|(pos, vel, action)| {
                    State::new(vec![
                        Value::Continuous(pos),
                        Value::Continuous(vel),
                        Value::Discrete(Token::Int(action)),
                        Value::Continuous(pos0),
                        Value::Continuous(vel0),
                        Value::Continuous(0.0025),
                    ])
                })
                .collect();
            traces.push(Trace::new(format!("t{:05}", traces.len()), states));
        }
    }
    TraceLog::new(sig, traces).unwrap()
}

#[test]
fn abstraction_modes_find_the_same_cause_as_full_modes() {
    let log = forced_cause_log(1000);
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    let mut causes = Vec::new();
    for mode in Mode::ALL {
        let mut cfg = base_config(&["action"]);
        cfg.mode = mode;
        cfg.alpha0 = 0.1;
        cfg.beta = 0.05;
        cfg.seed = 7;
        let outcome = find_actual_cause(&log, &effect, &cfg).unwrap();
        match outcome {
            Outcome::Cause(found) => {
                assert!(found.verification.passes(), "mode {mode} returned an unverified cause");
                causes.push(found.candidate.to_string());
            }
            Outcome::NoCause(nc) => panic!("mode {mode}: no cause ({:?})", nc.reason),
        }
    }
    assert!(causes.iter().all(|c| c == "action(0) = 1"), "causes diverged: {causes:?}");
}

#[test]
fn verify_cause_rejects_the_wrong_first_action() {
    let log = fig4_log();
    let sig = log.signature();
    let effect = CausalFormula::parse("pos(n) != 0.6", sig).unwrap();
    let partition =
        derive_partition(sig, &std::collections::BTreeSet::from(["action".to_string()])).unwrap();
    let cand = CauseCandidate {
        prims: vec![CandidatePrim {
            var: sig.index_of("action").unwrap(),
            name: "action".into(),
            step: 0,
            value: Value::Discrete(Token::Int(-1)),
        }],
        partition,
    };
    let v = verify_cause(&log, &cand, &effect, CheckOpts::default()).unwrap();
    assert!(!v.ac1, "action(0) = -1 never precedes a failure");
    assert!(!v.passes());
}

#[test]
fn repeated_runs_are_identical_modulo_wall_time() {
    let log = forced_cause_log(120);
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    let mut cfg = base_config(&["action"]);
    cfg.mode = Mode::DirectAbs;
    cfg.alpha0 = 0.25;
    cfg.seed = 11;
    let render = |outcome: &Outcome<f64>| {
        let mut report = build_report(outcome, &cfg);
        report.stats.wall_ms = 0;
        report.to_json()
    };
    let a = render(&find_actual_cause(&log, &effect, &cfg).unwrap());
    let b = render(&find_actual_cause(&log, &effect, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn outer_iteration_cap_reports_caps() {
    // only always-right traces: no counterfactual exists, so abstraction
    // refinement keeps growing alpha until the cap fires
    let p = MountainCarParams::<f64>::standard();
    let sig = tracecause::generators::mountain_car_signature::<f64>();
    let mut traces = Vec::new();
    let mut rng = Rng::new(5);
    for i in 0..40 {
        let pos0 = rng.range(-0.7, -0.1);
        let rows = simulate(Policy::AlwaysRight, (pos0, 0.0), &p);
        let states = rows
            .into_iter()
            .map(|(pos, vel, action)| {
                State::new(vec![
                    Value::Continuous(pos),
                    Value::Continuous(vel),
                    Value::Discrete(Token::Int(action)),
                    Value::Continuous(pos0),
                    Value::Continuous(0.0),
                    Value::Continuous(0.0025),
                ])
            })
            .collect();
        traces.push(Trace::new(format!("t{i}"), states));
    }
    let log = TraceLog::new(sig, traces).unwrap();
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    let mut cfg = base_config(&["action"]);
    cfg.mode = Mode::DirectAbs;
    cfg.alpha0 = 0.05;
    cfg.max_outer_iters = 2;
    match find_actual_cause(&log, &effect, &cfg).unwrap() {
        Outcome::NoCause(nc) => {
            assert_eq!(nc.reason, NoCauseReason::Caps);
            assert_eq!(nc.stats.outer_iters, 2);
        }
        Outcome::Cause(found) => panic!("unexpected cause {}", found.candidate),
    }
    // without the cap the search exhausts the sample and reports the stage
    cfg.max_outer_iters = 16;
    match find_actual_cause(&log, &effect, &cfg).unwrap() {
        Outcome::NoCause(nc) => assert_eq!(nc.reason, NoCauseReason::Ac2aUnsat),
        Outcome::Cause(found) => panic!("unexpected cause {}", found.candidate),
    }
}

#[test]
fn search_and_table_backends_agree_on_random_logs() {
    for case in 0..150u64 {
        let mut rng = Rng::new(0xbac0 + case);
        let sig = random_signature(&mut rng);
        let log = random_log(&mut rng, &sig, 12, 8);
        let effect = random_formula(&mut rng, &sig, log.traces().iter().map(|t| t.len()).min().unwrap(), 2);
        let endo: Vec<String> = sig.endogenous_names().into_iter().collect();
        let mut base = base_config(&endo.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        base.same_context = case % 2 == 0;
        base.equiv_prefix = case % 3 == 0;
        let run = |mode: Mode| {
            let mut cfg = base.clone();
            cfg.mode = mode;
            find_actual_cause(&log, &effect, &cfg).unwrap()
        };
        let direct = run(Mode::DirectFull);
        let table = run(Mode::BackendFull);
        match (&direct, &table) {
            (Outcome::Cause(a), Outcome::Cause(b)) => {
                assert_eq!(a.candidate.to_string(), b.candidate.to_string(), "case {case}");
                assert_eq!(a.witness, b.witness, "case {case}");
                assert_eq!(a.counterfactual, b.counterfactual, "case {case}");
            }
            (Outcome::NoCause(a), Outcome::NoCause(b)) => {
                assert_eq!(a.reason, b.reason, "case {case}");
            }
            _ => panic!("case {case}: backends disagreed on the outcome kind"),
        }
    }
}

#[test]
fn bench_rows_cover_the_grid_and_record_timeouts() {
    let log = forced_cause_log(200);
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    let cfg = base_config(&["action"]);
    let rows = bench_modes(
        &log,
        &effect,
        &cfg,
        &[50, 200],
        &[Mode::DirectFull, Mode::DirectAbs],
        None,
        None,
    )
    .unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.outcome == "cause-found"));

    let rows = bench_modes(
        &log,
        &effect,
        &cfg,
        &[200],
        &[Mode::DirectFull],
        None,
        Some(Duration::from_millis(0)),
    )
    .unwrap();
    assert_eq!(rows[0].outcome, "timeout");

    // sizes beyond the log are a configuration error
    assert!(bench_modes(&log, &effect, &cfg, &[500], &[Mode::DirectFull], None, None).is_err());
}

#[test]
fn invalid_configuration_is_an_error() {
    let log = fig4_log();
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    for bad in [
        EngineConfig { alpha0: 0.0, ..base_config(&["action"]) },
        EngineConfig { alpha0: 1.5, ..base_config(&["action"]) },
        EngineConfig { beta: -0.1, ..base_config(&["action"]) },
        EngineConfig { max_outer_iters: 0, ..base_config(&["action"]) },
        base_config(&[]),
    ] {
        assert!(find_actual_cause(&log, &effect, &bad).is_err());
    }
}

#[test]
fn context_partitioning_still_finds_the_cause() {
    let log = forced_cause_log(90);
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    let mut cfg = base_config(&["action"]);
    cfg.partition_by_context = true;
    match find_actual_cause(&log, &effect, &cfg).unwrap() {
        Outcome::Cause(found) => {
            assert_eq!(found.candidate.to_string(), "action(0) = 1");
            assert!(found.verification.passes());
        }
        Outcome::NoCause(nc) => panic!("expected a cause, got {:?}", nc.reason),
    }
    // a log whose only group is all-failing reports no cause
    let p = MountainCarParams::<f64>::standard();
    let sig = tracecause::generators::mountain_car_signature::<f64>();
    let rows = simulate(Policy::AlwaysRight, (-0.5, 0.0), &p);
    let states: Vec<State<f64>> = rows
        .into_iter()
        .map(|(pos, vel, action)| {
            State::new(vec![
                Value::Continuous(pos),
                Value::Continuous(vel),
                Value::Discrete(Token::Int(action)),
                Value::Continuous(-0.5),
                Value::Continuous(0.0),
                Value::Continuous(0.0025),
            ])
        })
        .collect();
    let log = TraceLog::new(
        sig,
        vec![Trace::new("only", states.clone()), Trace::new("dup", states)],
    )
    .unwrap();
    match find_actual_cause(&log, &effect, &cfg).unwrap() {
        Outcome::NoCause(nc) => assert_eq!(nc.reason, NoCauseReason::Ac2aUnsat),
        Outcome::Cause(found) => panic!("unexpected cause {}", found.candidate),
    }
}

#[test]
fn conjunction_candidates_are_searched_after_singletons() {
    let log = forced_cause_log(60);
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    let mut cfg = base_config(&["action"]);
    cfg.max_conjuncts = 2;
    // the singleton cause still wins; pair enumeration must not disturb it
    match find_actual_cause(&log, &effect, &cfg).unwrap() {
        Outcome::Cause(found) => assert_eq!(found.candidate.to_string(), "action(0) = 1"),
        Outcome::NoCause(nc) => panic!("expected a cause, got {:?}", nc.reason),
    }
}

/// Confirm a candidate the way the specification of the conditions reads,
/// using only the brute-force oracles: some witness pair must pass all three.
fn brute_force_confirms(
    log: &TraceLog<f64>,
    cand: &CauseCandidate<f64>,
    effect: &tracecause::CausalFormula64,
    opts: CheckOpts,
) -> bool {
    use tracecause::hp::Ac2bOutcome;
    use tracecause::testsupport::{bf_check_ac1, bf_check_ac2a, bf_check_ac2b};
    let Some(first) = bf_check_ac1(log, cand, effect).unwrap() else {
        return false;
    };
    for tau in first..log.len() {
        // bf_check_ac1 finds the first witness; later traces re-checked the
        // same way
        if tau != first {
            let tail: Vec<usize> = (tau..log.len()).collect();
            let sub = log.select(&tail);
            match bf_check_ac1(&sub, cand, effect).unwrap() {
                Some(0) => {}
                _ => continue,
            }
        }
        if bf_check_ac2a(log, tau, cand, effect, opts).unwrap().is_none() {
            continue;
        }
        if matches!(bf_check_ac2b(log, tau, cand, effect, opts).unwrap(), Ac2bOutcome::Holds { .. }) {
            return true;
        }
    }
    false
}

#[test]
fn every_mode_returns_only_brute_force_confirmable_causes() {
    let mut confirmed = 0;
    for case in 0..200u64 {
        let mut rng = Rng::new(0x50a_0000 + case);
        let sig = random_signature(&mut rng);
        let log = random_log(&mut rng, &sig, 14, 10);
        let min_len = log.traces().iter().map(|t| t.len()).min().unwrap();
        let effect = random_formula(&mut rng, &sig, min_len, 2);
        let endo: Vec<String> = sig.endogenous_names().into_iter().collect();
        for mode in Mode::ALL {
            let mut cfg = base_config(&endo.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            cfg.mode = mode;
            cfg.alpha0 = [0.25, 0.5, 1.0][(case % 3) as usize];
            cfg.beta = [0.0, 0.1][(case % 2) as usize];
            cfg.same_context = case.is_multiple_of(2);
            cfg.seed = case;
            let opts = CheckOpts {
                same_context: cfg.same_context,
                equiv_prefix: cfg.equiv_prefix,
            };
            let outcome = find_actual_cause(&log, &effect, &cfg).unwrap();
            if let Outcome::Cause(found) = outcome {
                confirmed += 1;
                assert!(
                    brute_force_confirms(&log, &found.candidate, &effect, opts),
                    "case {case} mode {mode}: cause {} not confirmable by brute force",
                    found.candidate
                );
            }
        }
    }
    assert!(confirmed >= 80, "only {confirmed} causes found across the corpus");
}

#[test]
fn shared_types_are_send_and_sync() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<TraceLog<f64>>();
    assert_send_sync::<tracecause::Signature64>();
    assert_send_sync::<tracecause::CausalFormula64>();
    assert_send_sync::<tracecause::CauseCandidate64>();
    assert_send_sync::<tracecause::abstraction::AbstractModel<f64>>();
}

#[test]
fn f32_logs_yield_the_same_cause() {
    let sig32 = tracecause::generators::mountain_car_signature::<f32>();
    let p = MountainCarParams::<f32>::standard();
    let mut traces = Vec::new();
    let mut rng = Rng::new(77);
    for i in 0..30 {
        let pos0 = rng.range(-0.7, -0.1) as f32;
        let vel0 = rng.range(-0.02, -0.001) as f32;
        for policy in [Policy::AlwaysRight, Policy::BangBang] {
            let rows = simulate(policy, (pos0, vel0), &p);
            let states = rows
                .into_iter()
                .map(|(pos, vel, action)| {
                    State::new(vec![
                        Value::Continuous(pos),
                        Value::Continuous(vel),
                        Value::Discrete(Token::Int(action)),
                        Value::Continuous(pos0),
                        Value::Continuous(vel0),
                        Value::Continuous(0.0025),
                    ])
                })
                .collect();
            traces.push(Trace::new(format!("t{i}-{}", traces.len()), states));
        }
    }
    let log: TraceLog<f32> = TraceLog::new(sig32, traces).unwrap();
    let effect = CausalFormula::parse("pos(n) != 0.6", log.signature()).unwrap();
    let outcome = find_actual_cause(&log, &effect, &base_config(&["action"])).unwrap();
    match outcome {
        Outcome::Cause(found) => assert_eq!(found.candidate.to_string(), "action(0) = 1"),
        Outcome::NoCause(nc) => panic!("expected a cause, got {:?}", nc.reason),
    }
}
