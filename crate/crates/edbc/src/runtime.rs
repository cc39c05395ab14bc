//! Runtime infrastructure: shared state across processes, per-process
//! evaluation context, and the error/violation types the evaluator and
//! contract library raise.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Receiver};
use thiserror::Error;

use crate::ast::ModuleAst;
use crate::instrument::{instrument_module, InstrumentError};
use crate::parser::{parse_module, ParseError};
use crate::typespec::TypeSpec;
use crate::value::{format_args, Pid, PidPort, Value};

/// One logical call, as recorded by the entry-point wrappers.
#[derive(Debug, Clone, PartialEq)]
pub struct CallInfo {
    pub module: String,
    pub name: String,
    pub args: Vec<Value>,
}

impl CallInfo {
    pub fn qualified(&self) -> String {
        format!("{}:{}({})", self.module, self.name, format_args(&self.args))
    }

    pub fn unqualified(&self) -> String {
        format!("{}({})", self.name, format_args(&self.args))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Precondition,
    Postcondition,
    Decrease,
    ExpectedTime,
    Timeout,
    Purity,
    Invariant,
    SpecPre,
    SpecPost,
}

/// Kind-specific payload a report template needs beyond the call info.
#[derive(Debug, Clone, PartialEq)]
pub enum Detail {
    None,
    Decrease {
        fname: String,
        prev: Vec<Value>,
        next: Vec<Value>,
    },
    Spec {
        value: Value,
        ty: TypeSpec,
    },
    Time {
        real_ms: f64,
        expected_ms: i64,
    },
    TimeoutHit {
        expected_ms: i64,
    },
    Purity {
        bif: String,
    },
    Invariant {
        result: Value,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: Kind,
    pub call: CallInfo,
    pub user_reason: Option<String>,
    pub detail: Detail,
}

impl Violation {
    pub fn message(&self) -> String {
        crate::report::format_violation(self)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("no function clause matching {module}:{name}({})", format_args(args))]
    FunctionClause {
        module: String,
        name: String,
        args: Vec<Value>,
    },
    #[error("no case clause matching {0}")]
    CaseClause(String),
    #[error("no true branch in if expression")]
    IfClause,
    #[error("no match of right hand side value {0}")]
    Badmatch(String),
    #[error("bad argument in an arithmetic expression")]
    Badarith,
    #[error("bad argument: {0}")]
    Badarg(String),
    #[error("undefined function {name}/{arity}")]
    Undef { name: String, arity: usize },
    #[error("module {0} is not loaded")]
    ModuleNotLoaded(String),
    #[error("bad contract return: {0}")]
    BadContractReturn(String),
    #[error("argument {0} is not measurable for a decrease contract")]
    NotMeasurable(String),
    #[error("the server terminated before replying")]
    ServerDown,
    #[error("server start failed: {0}")]
    ServerStart(String),
    #[error("effectful operation {0} is not allowed inside cpre/3")]
    EffectForbidden(String),
    #[error("evaluation aborted")]
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{}", .0.message())]
    Violation(Box<Violation>),
    #[error("{0}")]
    Error(RuntimeError),
}

impl From<RuntimeError> for EvalError {
    fn from(e: RuntimeError) -> Self {
        EvalError::Error(e)
    }
}

impl From<Violation> for EvalError {
    fn from(v: Violation) -> Self {
        EvalError::Violation(Box::new(v))
    }
}

pub type EResult<T> = Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Instrument(#[from] InstrumentError),
}

#[derive(Debug, Clone)]
pub struct Config {
    /// Grace added to execution-time budgets before a violation fires.
    pub slack_ms: u64,
    /// Echo io:format output to stdout and violation reports to stderr.
    pub echo: bool,
    /// Policy used by the server_start/1 shorthand: "fair" or "resend".
    pub default_policy: String,
    /// Seed for randomized stress harnesses driving this runtime.
    pub seed: Option<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            slack_ms: 20,
            echo: false,
            default_policy: "fair".to_string(),
            seed: None,
        }
    }
}

/// State shared by every process of one runtime instance.
pub struct RuntimeState {
    pub config: Config,
    modules: RwLock<HashMap<String, Arc<ModuleAst>>>,
    next_pid: AtomicU64,
    next_tag: AtomicU64,
    io_log: Mutex<Vec<String>>,
    contract_log: Mutex<Vec<String>>,
    violations: Mutex<Vec<Violation>>,
    call_trace: Mutex<Option<Vec<String>>>,
    state_log: Mutex<Option<Vec<Value>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    server_threads: Mutex<Vec<JoinHandle<()>>>,
}

impl RuntimeState {
    pub fn get_module(&self, name: &str) -> Result<Arc<ModuleAst>, RuntimeError> {
        self.modules
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| RuntimeError::ModuleNotLoaded(name.to_string()))
    }

    pub fn fresh_pid_id(&self) -> u64 {
        self.next_pid.fetch_add(1, Ordering::Relaxed)
    }

    pub fn fresh_tag(&self) -> u64 {
        self.next_tag.fetch_add(1, Ordering::Relaxed)
    }

    pub fn log_io(&self, line: String) {
        if self.config.echo {
            print!("{line}");
        }
        self.io_log.lock().unwrap().push(line);
    }

    pub fn log_contract(&self, line: String) {
        self.contract_log.lock().unwrap().push(line);
    }

    pub fn record_violation(&self, v: Violation) {
        if self.config.echo {
            eprintln!("{}", v.message());
        }
        self.violations.lock().unwrap().push(v);
    }

    pub fn trace_call(&self, name: &str) {
        if let Some(t) = self.call_trace.lock().unwrap().as_mut() {
            t.push(name.to_string());
        }
    }

    pub fn observe_state(&self, state: &Value) {
        if let Some(log) = self.state_log.lock().unwrap().as_mut() {
            log.push(state.clone());
        }
    }

    pub fn register_thread(&self, h: JoinHandle<()>) {
        self.threads.lock().unwrap().push(h);
    }

    /// Server threads are tracked separately: a server loop holds its
    /// own mailbox sender (via self()), so it never quiesces on channel
    /// disconnect and is detached at process exit instead of joined.
    pub fn register_server_thread(&self, h: JoinHandle<()>) {
        self.server_threads.lock().unwrap().push(h);
    }
}

/// Per-process evaluation context. One per OS thread running
/// mini-language code; never shared.
pub struct ProcCtx {
    pub rt: Arc<RuntimeState>,
    pub pid: Pid,
    pub mailbox: Receiver<Value>,
    pub call_stack: Vec<CallInfo>,
    /// Process dictionary (erlang:put/get). Assoc list: Value is not Hash.
    pub pdict: Vec<(Value, Value)>,
    /// >0 while a ?PURE delayed call is being traced.
    pub purity_depth: usize,
    /// Impure builtins observed while tracing, e.g. "erlang:put/2".
    pub impure_events: Vec<String>,
    /// >0 while evaluating a contract condition (exempt from tracing).
    pub in_contract: usize,
    /// Set in cpre/3 evaluation: sends/receives become errors.
    pub forbid_effects: bool,
    pub abort: Arc<AtomicBool>,
}

impl ProcCtx {
    pub fn spawn(rt: Arc<RuntimeState>) -> ProcCtx {
        let (tx, rx) = unbounded();
        let pid = Pid {
            id: rt.fresh_pid_id(),
            port: PidPort::Proc(tx),
        };
        ProcCtx::for_pid(rt, pid, rx)
    }

    pub fn for_pid(rt: Arc<RuntimeState>, pid: Pid, mailbox: Receiver<Value>) -> ProcCtx {
        ProcCtx {
            rt,
            pid,
            mailbox,
            call_stack: Vec::new(),
            pdict: Vec::new(),
            purity_depth: 0,
            impure_events: Vec::new(),
            in_contract: 0,
            forbid_effects: false,
            abort: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn check_abort(&self) -> Result<(), RuntimeError> {
        if self.abort.load(Ordering::Relaxed) {
            Err(RuntimeError::Aborted)
        } else {
            Ok(())
        }
    }

    /// Call-site context for a violation report: the innermost
    /// recorded call, or a placeholder outside any contracted call.
    pub fn current_call(&self, module: &str) -> CallInfo {
        self.call_stack.last().cloned().unwrap_or_else(|| CallInfo {
            module: module.to_string(),
            name: "<entry>".to_string(),
            args: Vec::new(),
        })
    }
}

/// Facade owning the shared state; the unit tests and the CLI talk to
/// this.
pub struct Runtime {
    pub state: Arc<RuntimeState>,
}

impl Runtime {
    pub fn new(config: Config) -> Runtime {
        Runtime {
            state: Arc::new(RuntimeState {
                config,
                modules: RwLock::new(HashMap::new()),
                next_pid: AtomicU64::new(1),
                next_tag: AtomicU64::new(1),
                io_log: Mutex::new(Vec::new()),
                contract_log: Mutex::new(Vec::new()),
                violations: Mutex::new(Vec::new()),
                call_trace: Mutex::new(None),
                state_log: Mutex::new(None),
                threads: Mutex::new(Vec::new()),
                server_threads: Mutex::new(Vec::new()),
            }),
        }
    }

    /// Parses, instruments (or strips contracts), and registers a module.
    pub fn load_source(&self, src: &str, contracts: bool) -> Result<String, LoadError> {
        let m = parse_module(src)?;
        self.load_ast(&m, contracts)
    }

    pub fn load_ast(&self, m: &ModuleAst, contracts: bool) -> Result<String, LoadError> {
        let inst = instrument_module(m, contracts)?;
        let name = inst.module.name.clone();
        self.state
            .modules
            .write()
            .unwrap()
            .insert(name.clone(), Arc::new(inst.module));
        Ok(name)
    }

    /// Evaluates `module:name(args)` on a fresh root process (the
    /// calling thread).
    pub fn run_entry(&self, module: &str, name: &str, args: Vec<Value>) -> EResult<Value> {
        let mut ctx = ProcCtx::spawn(self.state.clone());
        let r = crate::eval::call_function(&mut ctx, module, name, args);
        if let Err(EvalError::Violation(v)) = &r {
            self.state.record_violation((**v).clone());
        }
        r
    }

    pub fn io_log(&self) -> Vec<String> {
        self.state.io_log.lock().unwrap().clone()
    }

    pub fn violations(&self) -> Vec<Violation> {
        self.state.violations.lock().unwrap().clone()
    }

    pub fn enable_call_trace(&self) {
        *self.state.call_trace.lock().unwrap() = Some(Vec::new());
    }

    pub fn take_call_trace(&self) -> Vec<String> {
        self.state
            .call_trace
            .lock()
            .unwrap()
            .take()
            .unwrap_or_default()
    }

    pub fn enable_state_log(&self) {
        *self.state.state_log.lock().unwrap() = Some(Vec::new());
    }

    pub fn take_state_log(&self) -> Vec<Value> {
        self.state
            .state_log
            .lock()
            .unwrap()
            .take()
            .unwrap_or_default()
    }

    /// Joins every plain process thread spawned so far. Server threads
    /// are left running (they only stop on violation or process exit).
    pub fn join_threads(&self) {
        loop {
            let handles: Vec<_> = self.state.threads.lock().unwrap().drain(..).collect();
            if handles.is_empty() {
                break;
            }
            for h in handles {
                let _ = h.join();
            }
        }
    }
}
