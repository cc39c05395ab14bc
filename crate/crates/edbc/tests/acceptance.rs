//! End-to-end acceptance suite: one test per shipped behavior, driven
//! through the public `Runtime` facade and the corpus programs.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edbc::instrument::instrument_module;
use edbc::parse_module;
use edbc::runtime::{Config, Detail, EvalError, Kind, ProcCtx, Runtime};
use edbc::server;
use edbc::value::Value;
use edbc::Expr;

fn corpus(name: &str) -> String {
    let path = format!("{}/corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn load(rt: &Runtime, file: &str, contracts: bool) -> String {
    rt.load_source(&corpus(file), contracts).unwrap()
}

fn rt_with(file: &str) -> (Runtime, String) {
    let rt = Runtime::new(Config::default());
    let m = load(&rt, file, true);
    (rt, m)
}

fn int(i: i64) -> Value {
    Value::Int(i)
}

fn violation_of(r: Result<Value, EvalError>) -> edbc::runtime::Violation {
    match r {
        Err(EvalError::Violation(v)) => *v,
        other => panic!("expected a violation, got {other:?}"),
    }
}

// --- 1. Fibonacci: values vs. oracle, precondition, decreasing bug ---

fn fib_oracle(n: u64) -> i64 {
    let (mut a, mut b) = (0i64, 1i64);
    for _ in 0..n {
        let next = a + b;
        a = b;
        b = next;
    }
    a
}

#[test]
fn fibonacci_values_precondition_and_decrease() {
    let start = Instant::now();
    let (rt, m) = rt_with("fib.edl");
    for n in [0u64, 1, 10] {
        let v = rt.run_entry(&m, "fib", vec![int(n as i64)]).unwrap();
        assert_eq!(v, int(fib_oracle(n)));
    }
    assert_eq!(fib_oracle(10), 55);

    let v = violation_of(rt.run_entry(&m, "fib", vec![int(-1)]));
    assert_eq!(v.kind, Kind::Precondition);
    assert_eq!(
        v.message(),
        "The precondition does not hold. Last call: fib:fib(-1)."
    );

    let rt2 = Runtime::new(Config::default());
    let m2 = load(&rt2, "fib_bug.edl", true);
    let v = violation_of(rt2.run_entry(&m2, "fib", vec![int(2)]));
    assert_eq!(v.kind, Kind::Decrease);
    assert!(
        v.message()
            .contains("Previous call: fib(2). Current call: fib(4)."),
        "got: {}",
        v.message()
    );
    assert!(start.elapsed() < Duration::from_secs(1));
}

// --- 2. find: randomized instances vs. brute-force oracle ---

fn gen_find_instance(rng: &mut ChaCha8Rng) -> (Vec<&'static str>, &'static str, i64) {
    const ALPHABET: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];
    loop {
        let len = rng.gen_range(1..=8);
        let list: Vec<&str> = (0..len)
            .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
            .collect();
        let key = ALPHABET[rng.gen_range(0..ALPHABET.len())];
        // Brute-force oracle: first 1-based position, -1 on miss.
        let oracle = list
            .iter()
            .position(|x| *x == key)
            .map(|i| i as i64 + 1)
            .unwrap_or(-1);
        // The as-written postcondition excludes last-position finds.
        if oracle != len as i64 {
            return (list, key, oracle);
        }
    }
}

#[test]
fn find_randomized_against_oracle_and_buggy_miss() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (rt, m) = rt_with("find.edl");
    let mut misses = Vec::new();
    for _ in 0..200 {
        let (list, key, oracle) = gen_find_instance(&mut rng);
        let args = vec![
            Value::List(list.iter().map(|a| Value::atom(a)).collect()),
            Value::atom(key),
        ];
        if oracle == -1 {
            misses.push(args.clone());
        }
        let got = rt.run_entry(&m, "find", args).unwrap();
        assert_eq!(got, int(oracle), "find({list:?}, {key})");
    }
    assert!(misses.len() > 10, "seed produced too few miss instances");

    let rt_bug = Runtime::new(Config::default());
    let m_bug = load(&rt_bug, "find_bug.edl", true);
    for args in misses {
        let v = violation_of(rt_bug.run_entry(&m_bug, "find", args));
        assert_eq!(v.kind, Kind::Postcondition);
    }
}

// --- 3. Type specs at call boundaries ---

#[test]
fn spec_violations_on_argument_and_return() {
    let (rt, m) = rt_with("fib_spec.edl");
    let v = violation_of(rt.run_entry(&m, "fib", vec![Value::atom("a")]));
    assert_eq!(v.kind, Kind::SpecPre);
    assert!(
        v.message().contains("The value a is not of type integer()."),
        "got: {}",
        v.message()
    );

    let (rt2, m2) = rt_with("spec_ret_bug.edl");
    let v = violation_of(rt2.run_entry(&m2, "answer", vec![int(1)]));
    assert_eq!(v.kind, Kind::SpecPost);
    assert!(v.message().contains("The value wrong is not of type integer()."));
}

// --- 4. Purity: corpus pair plus a generated-program oracle ---

#[test]
fn purity_corpus_and_generated_oracle() {
    let (rt, m) = rt_with("pure.edl");
    assert_eq!(rt.run_entry(&m, "g4", vec![]).unwrap(), int(2 * 3 * 7));
    assert!(rt.violations().is_empty());

    let v = violation_of(rt.run_entry(&m, "g3", vec![]));
    assert_eq!(v.kind, Kind::Purity);
    assert!(v.message().contains("impure BIF erlang:put/2"));

    // Property: over generated programs, a purity violation is raised
    // iff at least one impure builtin is actually executed.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let mut body = Vec::new();
        let mut impure_executed = false;
        for slot in 0..rng.gen_range(1..=5) {
            match rng.gen_range(0..5) {
                0 => body.push(format!("1 + {slot}")),
                1 => body.push("length([a, b, c])".to_string()),
                2 => {
                    body.push(format!("put(k{slot}, {slot})"));
                    impure_executed = true;
                }
                3 => {
                    body.push("io:format(\"x~n\")".to_string());
                    impure_executed = true;
                }
                _ => {
                    // Impure code that only sometimes runs.
                    let taken = rng.gen_bool(0.5);
                    body.push(format!(
                        "case {taken} of true -> put(c{slot}, 1); false -> 0 end"
                    ));
                    impure_executed |= taken;
                }
            }
        }
        let src = format!("-module(p).\n?PURE.\nf() -> {}.\n", body.join(", "));
        let rt = Runtime::new(Config::default());
        let m = rt.load_source(&src, true).unwrap();
        let r = rt.run_entry(&m, "f", vec![]);
        match r {
            Ok(_) => assert!(!impure_executed, "case {case}: missed violation in {src}"),
            Err(EvalError::Violation(v)) => {
                assert_eq!(v.kind, Kind::Purity);
                assert!(impure_executed, "case {case}: spurious violation in {src}");
            }
            Err(e) => panic!("case {case}: unexpected error {e} in {src}"),
        }
    }
}

// --- 5. Expected execution time (sleeps scaled, 20 ms slack) ---

#[test]
fn expected_time_pass_and_fail() {
    let (rt, m) = rt_with("time.edl");
    let list = Value::List((1..=10).map(int).collect());
    let start = Instant::now();
    rt.run_entry(&m, "f_time", vec![list.clone()]).unwrap();
    let real = start.elapsed();
    assert!(rt.violations().is_empty());
    assert!(
        real >= Duration::from_millis(150) && real <= Duration::from_millis(300),
        "real elapsed {real:?} outside [150, 300] ms"
    );

    let rt2 = Runtime::new(Config::default());
    let m2 = load(&rt2, "time_bug.edl", true);
    let v = violation_of(rt2.run_entry(&m2, "f_time2", vec![list]));
    assert_eq!(v.kind, Kind::ExpectedTime);
    assert!(v.message().contains("took too much time"));
    match v.detail {
        Detail::Time {
            real_ms,
            expected_ms,
        } => assert!(real_ms > expected_ms as f64, "{real_ms} <= {expected_ms}"),
        other => panic!("unexpected detail {other:?}"),
    }
}

// --- 6. Instrumentation structure and wrapper-chain call order ---

#[test]
fn instrumentation_shape_and_frame_cycle() {
    let m = parse_module(&corpus("fib.edl")).unwrap();
    let inst = instrument_module(&m, true).unwrap();
    let names: Vec<&str> = inst.module.fundefs.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, ["fib", "fib__edbc0", "fib__edbc2", "fib__edbc1"]);

    // Entry, pre wrapper, and decrease checker end in a tail call.
    for f in &inst.module.fundefs {
        if f.name == "fib__edbc2" {
            continue; // the original body keeps its own shape
        }
        for c in &f.clauses {
            assert!(
                matches!(c.body.last(), Some(Expr::Call { .. })),
                "{} does not end in a call",
                f.name
            );
        }
    }

    // Observed frames cycle entry -> pre -> original -> decrease -> entry.
    let rt = Runtime::new(Config::default());
    rt.load_ast(&m, true).unwrap();
    rt.enable_call_trace();
    rt.run_entry("fib", "fib", vec![int(3)]).unwrap();
    let trace = rt.take_call_trace();
    assert_eq!(trace[..3], ["fib", "fib__edbc0", "fib__edbc2"]);
    for (i, frame) in trace.iter().enumerate() {
        match frame.as_str() {
            "fib" => assert_eq!(trace[i + 1], "fib__edbc0"),
            "fib__edbc0" => assert_eq!(trace[i + 1], "fib__edbc2"),
            "fib__edbc1" => assert_eq!(trace[i + 1], "fib"),
            _ => {}
        }
    }
    assert!(trace.contains(&"fib__edbc1".to_string()));
}

// --- 7. Transparency of instrumentation ---

#[test]
fn disabled_contracts_match_enabled_results_and_plain_speed() {
    let cases: &[(&str, &str, Vec<Value>)] = &[
        ("fib.edl", "fib", vec![int(10)]),
        ("fib_spec.edl", "fib", vec![int(10)]),
        (
            "find.edl",
            "find",
            vec![
                Value::List(vec![Value::atom("a"), Value::atom("b"), Value::atom("c")]),
                Value::atom("b"),
            ],
        ),
        ("pure.edl", "g4", vec![]),
    ];
    for (file, entry, args) in cases {
        let (on, m_on) = rt_with(file);
        let off = Runtime::new(Config::default());
        let m_off = load(&off, file, false);
        let a = on.run_entry(&m_on, entry, args.clone()).unwrap();
        let b = off.run_entry(&m_off, entry, args.clone()).unwrap();
        assert_eq!(a, b, "{file} {entry} differs with contracts disabled");
        assert!(on.violations().is_empty());
    }

    // Contract-stripped code should run like a hand-written plain module.
    let timed = |file: &str| {
        let rt = Runtime::new(Config::default());
        let m = load(&rt, file, false);
        (0..3)
            .map(|_| {
                let t = Instant::now();
                assert_eq!(rt.run_entry(&m, "fib", vec![int(21)]).unwrap(), int(10946));
                t.elapsed()
            })
            .min()
            .unwrap()
    };
    let stripped = timed("fib.edl");
    let plain = timed("fib_plain.edl");
    assert!(
        stripped <= plain * 2 + Duration::from_millis(10),
        "stripped {stripped:?} vs plain {plain:?}"
    );
}

// --- 8. Readers-writers invariant, without and with cpre ---

struct Client {
    rt: Arc<edbc::runtime::RuntimeState>,
    server: Value,
    rng: ChaCha8Rng,
}

impl Client {
    fn run_ops(&mut self, ops: usize, hold: bool) {
        let mut ctx = ProcCtx::spawn(self.rt.clone());
        for _ in 0..ops {
            let write = self.rng.gen_bool(0.3);
            let (req, fin) = if write {
                ("request_write", "finish_write")
            } else {
                ("request_read", "finish_read")
            };
            match server::server_call(&mut ctx, self.server.clone(), Value::atom(req)) {
                Ok(_) => {
                    if hold {
                        std::thread::sleep(Duration::from_millis(self.rng.gen_range(1..=3)));
                    }
                    let _ =
                        server::server_cast(&mut ctx, self.server.clone(), Value::atom(fin));
                }
                Err(_) => return, // server terminated on a violation
            }
        }
    }
}

fn start_rw(file: &str, rt: &Runtime) -> Value {
    load(rt, file, true);
    let mut ctx = ProcCtx::spawn(rt.state.clone());
    server::server_start(
        &mut ctx,
        Value::atom("readers_writers"),
        Value::atom("fair"),
    )
    .unwrap()
}

#[test]
fn readers_writers_without_cpre_breaks_invariant() {
    let rt = Runtime::new(Config::default());
    let server = start_rw("readers_writers.edl", &rt);
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let mut client = Client {
                rt: rt.state.clone(),
                server: server.clone(),
                rng: ChaCha8Rng::seed_from_u64(100 + i),
            };
            std::thread::spawn(move || client.run_ops(50, true))
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }

    let violations = rt.violations();
    assert!(!violations.is_empty(), "no invariant violation observed");
    let v = &violations[0];
    assert_eq!(v.kind, Kind::Invariant);
    assert!(v.message().contains("The invariant does not hold."));
    // The offending state must be {state, Readers >= 1, true}.
    let result = match &v.detail {
        Detail::Invariant { result } => result.clone(),
        other => panic!("unexpected detail {other:?}"),
    };
    let state = match result {
        Value::Tuple(items) => items.last().unwrap().clone(),
        other => other,
    };
    match state {
        Value::Tuple(items) => {
            assert_eq!(items[0], Value::atom("state"));
            assert!(matches!(items[1], Value::Int(r) if r >= 1));
            assert_eq!(items[2], Value::Bool(true));
        }
        other => panic!("unexpected state {other}"),
    }
}

#[test]
fn readers_writers_with_cpre_holds_invariant() {
    let rt = Runtime::new(Config::default());
    rt.enable_state_log();
    let server = start_rw("readers_writers_cpre.edl", &rt);
    let handles: Vec<_> = (0..20)
        .map(|i| {
            let mut client = Client {
                rt: rt.state.clone(),
                server: server.clone(),
                rng: ChaCha8Rng::seed_from_u64(500 + i),
            };
            std::thread::spawn(move || client.run_ops(50, false))
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }

    assert!(rt.violations().is_empty(), "unexpected violations");
    let states = rt.take_state_log();
    assert!(states.len() >= 1000, "too few sampled states: {}", states.len());
    for s in states {
        match s {
            Value::Tuple(items) if items.len() == 3 => {
                let readers = match items[1] {
                    Value::Int(r) => r,
                    ref other => panic!("bad readers {other}"),
                };
                let writer = items[2] == Value::Bool(true);
                assert!(readers >= 0);
                assert!(!writer || readers == 0, "writer with {readers} readers");
            }
            other => panic!("unexpected state {other}"),
        }
    }
}

// --- 9. Selective receive: ascending service order under both policies ---

#[test]
fn selective_receive_orders_results_under_both_policies() {
    for policy in ["fair", "resend"] {
        let rt = Runtime::new(Config::default());
        load(&rt, "selective_receive.edl", true);
        let m = load(&rt, "driver.edl", true);
        let r = rt.run_entry(&m, "test", vec![Value::atom(policy)]).unwrap();
        assert_eq!(r, Value::atom("ok"));
        rt.join_threads();
        let want: Vec<String> = (0..10).map(|n| format!("result: {n}\n")).collect();
        assert_eq!(rt.io_log(), want, "policy {policy}");
    }
}

// --- 10. Fair vs. resend on a synthetic enablement schedule ---

#[test]
fn fair_serves_older_resend_serves_newer() {
    use edbc::server::{Policy, ServerCore, StepOutcome};

    let drive = |policy: Policy| {
        let rt = Runtime::new(Config::default());
        load(&rt, "sched.edl", true);
        let mut core = ServerCore::new_sync(rt.state, "sched", policy).unwrap();
        let old = core.enqueue_call(Value::Tuple(vec![Value::atom("req"), int(1)]));
        core.enqueue_cast(Value::atom("open"));
        let new = core.enqueue_call(Value::Tuple(vec![Value::atom("req"), int(2)]));
        // Defer the old request, then open the server: both requests are
        // now enabled simultaneously.
        assert!(matches!(core.step().unwrap(), StepOutcome::Deferred));
        assert!(matches!(core.step().unwrap(), StepOutcome::Cast));
        assert!(matches!(core.step().unwrap(), StepOutcome::Served));
        let first_is_old = old.try_recv().is_ok();
        while core.has_work() {
            core.step().unwrap();
        }
        assert!(old.try_recv().is_ok() || first_is_old);
        assert!(new.try_recv().is_ok() || !first_is_old);
        first_is_old
    };

    assert!(drive(Policy::Fair), "fair must serve the older request first");
    assert!(
        !drive(Policy::Resend),
        "resend re-posts the old request behind the newer one"
    );
}
