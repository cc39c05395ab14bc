//! Guarded request/reply server: synchronous requests are gated by an
//! optional cpre/3 callback, with two deferred-request policies —
//! resend (back to the mailbox tail) and fair (three queues rebuilt as
//! old ++ current ++ new whenever the state changes).

use std::collections::VecDeque;
use std::sync::Arc;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};

use crate::eval::call_function;
use crate::report::format_server_termination;
use crate::runtime::{EResult, EvalError, ProcCtx, RuntimeError, RuntimeState};
use crate::value::{Pid, PidPort, Value};

#[derive(Debug, Clone)]
pub enum ServerMsg {
    Call { request: Value, from: FromHandle },
    Cast { request: Value },
}

/// Reply path for one outstanding synchronous request. The caller's
/// pid is carried separately from the reply channel so that values
/// derived from the From tuple (reports, states) never keep the reply
/// channel alive.
#[derive(Debug, Clone)]
pub struct FromHandle {
    pub caller: Pid,
    pub tag: u64,
    pub reply: Sender<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Resend,
    Fair,
}

impl Policy {
    pub fn from_atom(v: &Value) -> Result<Policy, RuntimeError> {
        match v.as_atom() {
            Some("resend") => Ok(Policy::Resend),
            Some("fair") => Ok(Policy::Fair),
            _ => Err(RuntimeError::Badarg(format!("unknown server policy {v}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Mailbox,
    QueueCurrent,
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub request: Value,
    pub from: FromHandle,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Nothing to do.
    Idle,
    /// A call was served and replied to (or returned noreply).
    Served,
    /// A call's cpre said not yet; it was re-queued per policy.
    Deferred,
    /// A cast was processed.
    Cast,
}

/// Why the server stopped, with the message being processed.
#[derive(Debug)]
pub struct ServerStop {
    pub error: EvalError,
    pub last_msg: Value,
}

/// The policy engine, independent of threading: one `step` is one
/// scheduling decision. The acceptance tests drive it synchronously;
/// `server_start` wraps it in a thread fed from a channel.
pub struct ServerCore {
    pub module: String,
    pub policy: Policy,
    pub state: Value,
    pub queue_current: VecDeque<Envelope>,
    pub queue_old: VecDeque<Envelope>,
    pub queue_new: VecDeque<Envelope>,
    pub mailbox: VecDeque<ServerMsg>,
    ctx: ProcCtx,
    has_cpre: bool,
}

impl ServerCore {
    /// Runs init/0 (its instrumented entry checks the invariant on the
    /// initial state) and returns a ready core.
    pub fn new(
        rt: Arc<RuntimeState>,
        module: &str,
        policy: Policy,
        pid: Pid,
    ) -> EResult<ServerCore> {
        let m = rt.get_module(module)?;
        let has_cpre = m.lookup("cpre", 3).is_some();
        let (_tx, rx) = unbounded();
        let mut ctx = ProcCtx::for_pid(rt.clone(), pid, rx);
        let state = call_function(&mut ctx, module, "init", Vec::new())?;
        rt.observe_state(&state);
        Ok(ServerCore {
            module: module.to_string(),
            policy,
            state,
            queue_current: VecDeque::new(),
            queue_old: VecDeque::new(),
            queue_new: VecDeque::new(),
            mailbox: VecDeque::new(),
            ctx,
            has_cpre,
        })
    }

    /// Core with a detached pid, for synchronous test driving.
    pub fn new_sync(rt: Arc<RuntimeState>, module: &str, policy: Policy) -> EResult<ServerCore> {
        let (tx, _rx_kept_nowhere) = unbounded();
        let pid = Pid {
            id: rt.fresh_pid_id(),
            port: PidPort::Server(tx),
        };
        ServerCore::new(rt, module, policy, pid)
    }

    pub fn enqueue_call(&mut self, request: Value) -> Receiver<Value> {
        let (tx, rx) = bounded(1);
        // Synthetic caller pid; nothing ever sends to it.
        let (dead_tx, _) = unbounded();
        let from = FromHandle {
            caller: Pid {
                id: self.ctx.rt.fresh_pid_id(),
                port: PidPort::Proc(dead_tx),
            },
            tag: self.ctx.rt.fresh_tag(),
            reply: tx,
        };
        self.mailbox.push_back(ServerMsg::Call { request, from });
        rx
    }

    pub fn enqueue_cast(&mut self, request: Value) {
        self.mailbox.push_back(ServerMsg::Cast { request });
    }

    pub fn has_work(&self) -> bool {
        !self.queue_current.is_empty() || !self.mailbox.is_empty()
    }

    /// One scheduling decision: queue_current head first (fair), then
    /// the mailbox.
    pub fn step(&mut self) -> Result<StepOutcome, Box<ServerStop>> {
        if let Some(mut env) = self.queue_current.pop_front() {
            env.origin = Origin::QueueCurrent;
            return self.consider(env);
        }
        match self.mailbox.pop_front() {
            None => Ok(StepOutcome::Idle),
            Some(ServerMsg::Call { request, from }) => self.consider(Envelope {
                request,
                from,
                origin: Origin::Mailbox,
            }),
            Some(ServerMsg::Cast { request }) => self.do_cast(request),
        }
    }

    fn encode_from(&self, from: &FromHandle) -> Value {
        Value::Tuple(vec![
            Value::Pid(from.caller.clone()),
            Value::Int(from.tag as i64),
        ])
    }

    fn consider(&mut self, env: Envelope) -> Result<StepOutcome, Box<ServerStop>> {
        let (ready, new_state) = self.eval_cpre(&env).map_err(|e| Box::new(ServerStop {
            error: e,
            last_msg: env.request.clone(),
        }))?;
        // "In both cases, the server state is updated."
        self.state = new_state;
        if !ready {
            match self.policy {
                Policy::Fair => match env.origin {
                    Origin::QueueCurrent => self.queue_old.push_back(env),
                    Origin::Mailbox => self.queue_new.push_back(env),
                },
                Policy::Resend => self.mailbox.push_back(ServerMsg::Call {
                    request: env.request,
                    from: env.from,
                }),
            }
            return Ok(StepOutcome::Deferred);
        }
        let before = self.state.clone();
        let from_value = self.encode_from(&env.from);
        let r = call_function(
            &mut self.ctx,
            &self.module.clone(),
            "handle_call",
            vec![env.request.clone(), from_value, self.state.clone()],
        )
        .map_err(|e| Box::new(ServerStop {
            error: e,
            last_msg: env.request.clone(),
        }))?;
        match split_result(&r) {
            Some((Some(reply), new_state)) => {
                self.state = new_state;
                let _ = env.from.reply.send(reply);
            }
            Some((None, new_state)) => {
                // {noreply, S}: no auto-reply; the caller stays blocked
                // until the server (or its reply channel) goes away.
                self.state = new_state;
            }
            None => {
                return Err(Box::new(ServerStop {
                    error: RuntimeError::BadContractReturn(format!(
                        "handle_call returned {r}"
                    ))
                    .into(),
                    last_msg: env.request,
                }))
            }
        }
        self.after_state_change(&before);
        Ok(StepOutcome::Served)
    }

    fn do_cast(&mut self, request: Value) -> Result<StepOutcome, Box<ServerStop>> {
        let before = self.state.clone();
        let r = call_function(
            &mut self.ctx,
            &self.module.clone(),
            "handle_cast",
            vec![request.clone(), self.state.clone()],
        )
        .map_err(|e| Box::new(ServerStop {
            error: e,
            last_msg: request.clone(),
        }))?;
        match split_result(&r) {
            Some((None, new_state)) => self.state = new_state,
            _ => {
                return Err(Box::new(ServerStop {
                    error: RuntimeError::BadContractReturn(format!(
                        "handle_cast returned {r}"
                    ))
                    .into(),
                    last_msg: request,
                }))
            }
        }
        self.after_state_change(&before);
        Ok(StepOutcome::Cast)
    }

    /// Structural state change after a served request or cast triggers
    /// the fair-policy rebuild: current := old ++ current ++ new.
    fn after_state_change(&mut self, before: &Value) {
        self.ctx.rt.observe_state(&self.state);
        if self.policy == Policy::Fair && &self.state != before {
            let mut rebuilt = std::mem::take(&mut self.queue_old);
            rebuilt.extend(self.queue_current.drain(..));
            rebuilt.extend(self.queue_new.drain(..));
            self.queue_current = rebuilt;
        }
    }

    fn eval_cpre(&mut self, env: &Envelope) -> EResult<(bool, Value)> {
        if !self.has_cpre {
            return Ok((true, self.state.clone()));
        }
        let from_value = self.encode_from(&env.from);
        self.ctx.forbid_effects = true;
        let r = call_function(
            &mut self.ctx,
            &self.module.clone(),
            "cpre",
            vec![env.request.clone(), from_value, self.state.clone()],
        );
        self.ctx.forbid_effects = false;
        match r? {
            Value::Tuple(items) if items.len() == 2 => match &items[0] {
                Value::Bool(b) => Ok((*b, items[1].clone())),
                _ => Err(RuntimeError::BadContractReturn(format!(
                    "cpre returned {}",
                    Value::Tuple(items)
                ))
                .into()),
            },
            other => Err(RuntimeError::BadContractReturn(format!(
                "cpre returned {other}"
            ))
            .into()),
        }
    }

    /// Emits the termination report and records the violation, if any.
    pub fn terminate(&self, stop: &ServerStop) {
        let reason = match &stop.error {
            EvalError::Violation(v) => {
                self.ctx.rt.record_violation((**v).clone());
                v.message()
            }
            EvalError::Error(e) => e.to_string(),
        };
        let report =
            format_server_termination(&self.module, &stop.last_msg, &self.state, &reason);
        if self.ctx.rt.config.echo {
            eprintln!("{report}");
        }
        self.ctx.rt.log_contract(report);
    }
}

/// Splits a callback result: `{reply, R, S}` or `{noreply, S}`.
fn split_result(r: &Value) -> Option<(Option<Value>, Value)> {
    match r {
        Value::Tuple(items)
            if items.len() == 3 && items[0].as_atom() == Some("reply") =>
        {
            Some((Some(items[1].clone()), items[2].clone()))
        }
        Value::Tuple(items)
            if items.len() == 2 && items[0].as_atom() == Some("noreply") =>
        {
            Some((None, items[1].clone()))
        }
        _ => None,
    }
}

/// `server_start(module, policy)` builtin: spins up the server thread.
/// An invariant violation on the initial state fails the start.
pub fn server_start(ctx: &mut ProcCtx, module: Value, policy: Value) -> EResult<Value> {
    let module = module
        .as_atom()
        .ok_or_else(|| RuntimeError::Badarg(format!("server_start module {module}")))?
        .to_string();
    let policy = Policy::from_atom(&policy)?;
    let (tx, rx) = unbounded::<ServerMsg>();
    let pid = Pid {
        id: ctx.rt.fresh_pid_id(),
        port: PidPort::Server(tx),
    };
    let mut core = ServerCore::new(ctx.rt.clone(), &module, policy, pid.clone())?;
    let handle = std::thread::spawn(move || {
        loop {
            while let Ok(m) = rx.try_recv() {
                core.mailbox.push_back(m);
            }
            if !core.has_work() {
                match rx.recv() {
                    Ok(m) => core.mailbox.push_back(m),
                    Err(_) => break,
                }
            }
            if let Err(stop) = core.step() {
                core.terminate(&stop);
                break;
            }
        }
    });
    ctx.rt.register_server_thread(handle);
    Ok(Value::Pid(pid))
}

/// Synchronous request: blocks until the server replies or dies.
pub fn server_call(ctx: &mut ProcCtx, server: Value, request: Value) -> EResult<Value> {
    let sender = server_port(&server)?;
    let (tx, rx) = bounded(1);
    let from = FromHandle {
        caller: ctx.pid.clone(),
        tag: ctx.rt.fresh_tag(),
        reply: tx,
    };
    sender
        .send(ServerMsg::Call { request, from })
        .map_err(|_| RuntimeError::ServerDown)?;
    rx.recv().map_err(|_| RuntimeError::ServerDown.into())
}

pub fn server_cast(ctx: &mut ProcCtx, server: Value, request: Value) -> EResult<Value> {
    let _ = ctx;
    let sender = server_port(&server)?;
    sender
        .send(ServerMsg::Cast { request })
        .map_err(|_| RuntimeError::ServerDown)?;
    Ok(Value::atom("ok"))
}

fn server_port(v: &Value) -> Result<Sender<ServerMsg>, RuntimeError> {
    match v {
        Value::Pid(Pid {
            port: PidPort::Server(tx),
            ..
        }) => Ok(tx.clone()),
        other => Err(RuntimeError::Badarg(format!("{other} is not a server pid"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{Config, Runtime};

    const SCHED: &str = "-module(sched).\n\
        init() -> closed.\n\
        handle_call({req, N}, _From, State) -> {reply, N, State}.\n\
        handle_cast(open, _State) -> {noreply, open}.\n\
        cpre({req, _}, _, closed) -> {false, closed};\n\
        cpre({req, _}, _, open) -> {true, open}.\n";

    fn core(policy: Policy) -> ServerCore {
        let rt = Runtime::new(Config::default());
        rt.load_source(SCHED, true).unwrap();
        ServerCore::new_sync(rt.state, "sched", policy).unwrap()
    }

    fn req(n: i64) -> Value {
        Value::Tuple(vec![Value::atom("req"), Value::Int(n)])
    }

    #[test]
    fn policy_from_atom() {
        assert_eq!(Policy::from_atom(&Value::atom("fair")).unwrap(), Policy::Fair);
        assert_eq!(Policy::from_atom(&Value::atom("resend")).unwrap(), Policy::Resend);
        assert!(Policy::from_atom(&Value::atom("nope")).is_err());
    }

    #[test]
    fn init_runs_and_sets_state() {
        let core = core(Policy::Fair);
        assert_eq!(core.state, Value::atom("closed"));
        assert!(!core.has_work());
    }

    #[test]
    fn cast_updates_state() {
        let mut core = core(Policy::Fair);
        core.enqueue_cast(Value::atom("open"));
        assert!(matches!(core.step().unwrap(), StepOutcome::Cast));
        assert_eq!(core.state, Value::atom("open"));
    }

    #[test]
    fn fair_policy_serves_deferred_request_first() {
        let mut core = core(Policy::Fair);
        let r1 = core.enqueue_call(req(1));
        core.enqueue_cast(Value::atom("open"));
        let r2 = core.enqueue_call(req(2));

        assert!(matches!(core.step().unwrap(), StepOutcome::Deferred));
        assert!(matches!(core.step().unwrap(), StepOutcome::Cast));
        // The queued older request goes before the fresh mailbox one.
        assert!(matches!(core.step().unwrap(), StepOutcome::Served));
        assert_eq!(r1.try_recv().unwrap(), Value::Int(1));
        assert!(r2.try_recv().is_err());
        assert!(matches!(core.step().unwrap(), StepOutcome::Served));
        assert_eq!(r2.try_recv().unwrap(), Value::Int(2));
        assert!(!core.has_work());
    }

    #[test]
    fn resend_policy_serves_newer_request_first() {
        let mut core = core(Policy::Resend);
        let r1 = core.enqueue_call(req(1));
        core.enqueue_cast(Value::atom("open"));
        let r2 = core.enqueue_call(req(2));

        assert!(matches!(core.step().unwrap(), StepOutcome::Deferred));
        assert!(matches!(core.step().unwrap(), StepOutcome::Cast));
        // The refused request was re-sent behind the newer one.
        assert!(matches!(core.step().unwrap(), StepOutcome::Served));
        assert_eq!(r2.try_recv().unwrap(), Value::Int(2));
        assert!(r1.try_recv().is_err());
        assert!(matches!(core.step().unwrap(), StepOutcome::Served));
        assert_eq!(r1.try_recv().unwrap(), Value::Int(1));
    }

    #[test]
    fn no_cpre_always_serves() {
        let rt = Runtime::new(Config::default());
        rt.load_source(
            "-module(plain).\ninit() -> 0.\nhandle_call(ping, _From, S) -> {reply, pong, S + 1}.\nhandle_cast(_R, S) -> {noreply, S}.\n",
            true,
        )
        .unwrap();
        let mut core = ServerCore::new_sync(rt.state, "plain", Policy::Fair).unwrap();
        let r = core.enqueue_call(Value::atom("ping"));
        assert!(matches!(core.step().unwrap(), StepOutcome::Served));
        assert_eq!(r.try_recv().unwrap(), Value::atom("pong"));
        assert_eq!(core.state, Value::Int(1));
    }
}
