//! Runtime service mode: game clients talk to the optimizer over a local
//! stream socket, one JSON message per line.
//!
//! Inbound:
//!
//! ```text
//! {"type":"register","client_id":"u1","game_id":"village_shooter","qp":10,"fps_thresh":30,"fps_upper":120}
//! {"type":"fps","client_id":"u1","fps":93.2}
//! {"type":"qp","client_id":"u1","qp":40}
//! {"type":"round"}
//! ```
//!
//! Outbound, to the connection that registered the client:
//!
//! ```text
//! {"type":"set_rq","client_id":"u1","rq":"medium"}
//! ```
//!
//! `round` runs one optimization round immediately and is answered with a
//! `round_done` line after any `set_rq` it caused; rounds also fire on a
//! timer when one is configured. Bad input is answered with an `error` line
//! and the connection stays open. Clients are dropped when the connection
//! that registered them closes.
//!
//! Every connection reader forwards parsed commands to a single state
//! thread, so the client table sees one ordered command stream.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::optimizer::{ClientId, ClientTable, OptimizerError, RqDecision};
use crate::policies::Policy;
use crate::quality::{QpLevel, RenderQuality};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    Register {
        client_id: ClientId,
        game_id: String,
        #[serde(with = "crate::scenario::qp_text")]
        qp: QpLevel,
        fps_thresh: f64,
        fps_upper: f64,
    },
    Fps {
        client_id: ClientId,
        fps: f64,
    },
    Qp {
        client_id: ClientId,
        #[serde(with = "crate::scenario::qp_text")]
        qp: QpLevel,
    },
    Round,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    SetRq { client_id: ClientId, rq: RenderQuality },
    RoundDone { round: u64, decisions: usize },
    Error { message: String },
}

impl Outbound {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }
}

type ConnId = u64;

enum Command {
    Connected(ConnId, Sender<String>),
    Message(ConnId, Inbound),
    Malformed(ConnId, String),
    Disconnected(ConnId),
    Tick,
}

/// Client table plus connection routing. Owned by the state thread only.
pub struct ServiceState {
    policy: Policy,
    table: ClientTable,
    round: u64,
    owners: HashMap<ClientId, ConnId>,
    outboxes: HashMap<ConnId, Sender<String>>,
    log: Vec<RqDecision>,
}

impl ServiceState {
    pub fn new(policy: Policy) -> ServiceState {
        ServiceState {
            policy,
            table: ClientTable::new(),
            round: 0,
            owners: HashMap::new(),
            outboxes: HashMap::new(),
            log: Vec::new(),
        }
    }

    pub fn table(&self) -> &ClientTable {
        &self.table
    }

    pub fn decisions(&self) -> &[RqDecision] {
        &self.log
    }

    fn send(&self, conn: ConnId, msg: &Outbound) {
        if let Some(tx) = self.outboxes.get(&conn) {
            // a closed writer just means the peer went away
            let _ = tx.send(msg.to_line());
        }
    }

    /// Applies one inbound message; replies go to `conn`.
    fn handle(&mut self, conn: ConnId, msg: Inbound) {
        let result: Result<(), OptimizerError> = match msg {
            Inbound::Register {
                client_id,
                game_id,
                qp,
                fps_thresh,
                fps_upper,
            } => self
                .table
                .register(client_id.clone(), game_id, qp, fps_thresh, fps_upper, self.policy.initial_rq())
                .map(|_| {
                    self.owners.insert(client_id, conn);
                }),
            Inbound::Fps { client_id, fps } => self.table.report_fps(&client_id, fps).map(drop),
            Inbound::Qp { client_id, qp } => self.table.update_qp(&client_id, qp).map(drop),
            Inbound::Round => {
                let n = self.run_round();
                self.send(
                    conn,
                    &Outbound::RoundDone {
                        round: self.round,
                        decisions: n,
                    },
                );
                Ok(())
            }
        };
        if let Err(e) = result {
            self.send(conn, &Outbound::Error { message: e.to_string() });
        }
    }

    /// Runs the next round and pushes `set_rq` for each decision. Returns the
    /// number of decisions.
    pub fn run_round(&mut self) -> usize {
        self.round += 1;
        let decisions = match self.policy.on_round(&mut self.table, self.round) {
            Ok(d) => d,
            Err(e) => {
                log_error(&e.to_string());
                return 0;
            }
        };
        for d in &decisions {
            if let Some(&conn) = self.owners.get(&d.client_id) {
                self.send(
                    conn,
                    &Outbound::SetRq {
                        client_id: d.client_id.clone(),
                        rq: d.to_rq,
                    },
                );
            }
        }
        let n = decisions.len();
        self.log.extend(decisions);
        n
    }

    fn disconnect(&mut self, conn: ConnId) {
        self.outboxes.remove(&conn);
        let gone: Vec<ClientId> = self
            .owners
            .iter()
            .filter(|(_, c)| **c == conn)
            .map(|(id, _)| id.clone())
            .collect();
        for id in gone {
            self.owners.remove(&id);
            self.table.remove(&id);
        }
    }

    fn apply(&mut self, cmd: Command) {
        match cmd {
            Command::Connected(conn, tx) => {
                self.outboxes.insert(conn, tx);
            }
            Command::Message(conn, msg) => self.handle(conn, msg),
            Command::Malformed(conn, message) => self.send(conn, &Outbound::Error { message }),
            Command::Disconnected(conn) => self.disconnect(conn),
            Command::Tick => {
                self.run_round();
            }
        }
    }
}

fn log_error(msg: &str) {
    eprintln!("{}", serde_json::json!({ "level": "error", "message": msg }));
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Run a round on this period in addition to explicit `round` messages.
    pub round_interval: Option<Duration>,
}

pub struct Service {
    listener: TcpListener,
    policy: Policy,
    config: ServiceConfig,
}

impl Service {
    pub fn bind(addr: impl ToSocketAddrs + std::fmt::Display, policy: Policy, config: ServiceConfig) -> Result<Service, ServiceError> {
        let listener = TcpListener::bind(&addr).map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        Ok(Service { listener, policy, config })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServiceError> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves until the listener fails. Blocks the calling thread.
    pub fn run(self) -> Result<(), ServiceError> {
        let (tx, rx) = mpsc::channel::<Command>();
        let policy = self.policy;
        thread::spawn(move || state_loop(ServiceState::new(policy), rx));

        if let Some(period) = self.config.round_interval {
            let tick = tx.clone();
            thread::spawn(move || loop {
                thread::sleep(period);
                if tick.send(Command::Tick).is_err() {
                    break;
                }
            });
        }

        let mut next_id: ConnId = 0;
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log_error(&format!("accept: {e}"));
                    continue;
                }
            };
            next_id += 1;
            spawn_connection(next_id, stream, tx.clone())?;
        }
        Ok(())
    }
}

fn state_loop(mut state: ServiceState, rx: Receiver<Command>) {
    for cmd in rx {
        state.apply(cmd);
    }
}

fn spawn_connection(conn: ConnId, stream: TcpStream, tx: Sender<Command>) -> Result<(), ServiceError> {
    let mut writer = stream.try_clone()?;
    let (out_tx, out_rx) = mpsc::channel::<String>();
    // register the outbox before any message from this connection is queued
    if tx.send(Command::Connected(conn, out_tx)).is_err() {
        return Ok(());
    }
    thread::spawn(move || {
        for line in out_rx {
            if writer.write_all(line.as_bytes()).and_then(|_| writer.flush()).is_err() {
                break;
            }
        }
    });
    thread::spawn(move || {
        let reader = BufReader::new(stream);
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            let cmd = match serde_json::from_str::<Inbound>(&line) {
                Ok(msg) => Command::Message(conn, msg),
                Err(e) => Command::Malformed(conn, format!("bad message: {e}")),
            };
            if tx.send(cmd).is_err() {
                return;
            }
        }
        let _ = tx.send(Command::Disconnected(conn));
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::OptimizerConfig;
    use crate::policies::PolicyKind;
    use crate::quality::QualityPredictor;

    fn adrenaline() -> Policy {
        Policy::from_kind(PolicyKind::Adrenaline, &OptimizerConfig::default(), &QualityPredictor::default())
    }

    #[test]
    fn message_shapes() {
        let m: Inbound = serde_json::from_str(
            r#"{"type":"register","client_id":"u1","game_id":"village","qp":10,"fps_thresh":30,"fps_upper":120}"#,
        )
        .unwrap();
        assert!(matches!(m, Inbound::Register { qp: QpLevel::GOOD, .. }));
        let m: Inbound = serde_json::from_str(r#"{"type":"qp","client_id":"u1","qp":"poor"}"#).unwrap();
        assert!(matches!(m, Inbound::Qp { qp: QpLevel::POOR, .. }));
        let out = Outbound::SetRq {
            client_id: "u1".into(),
            rq: RenderQuality::VeryHigh,
        };
        assert_eq!(out.to_line(), "{\"type\":\"set_rq\",\"client_id\":\"u1\",\"rq\":\"very_high\"}\n");
        assert!(serde_json::from_str::<Inbound>(r#"{"type":"fps","client_id":"u1"}"#).is_err());
    }

    #[test]
    fn state_machine_routes_decisions() {
        let mut s = ServiceState::new(adrenaline());
        let (tx, rx) = mpsc::channel();
        s.apply(Command::Connected(1, tx));
        s.apply(Command::Message(
            1,
            Inbound::Register {
                client_id: "u1".into(),
                game_id: "g".into(),
                qp: QpLevel::GOOD,
                fps_thresh: 30.0,
                fps_upper: 120.0,
            },
        ));
        s.apply(Command::Message(
            1,
            Inbound::Fps {
                client_id: "u1".into(),
                fps: 120.0,
            },
        ));
        s.apply(Command::Message(1, Inbound::Round));
        let lines: Vec<String> = rx.try_iter().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"set_rq\"") && lines[0].contains("\"medium\""));
        assert!(lines[1].contains("\"round_done\""));

        s.apply(Command::Message(
            1,
            Inbound::Fps {
                client_id: "ghost".into(),
                fps: 1.0,
            },
        ));
        assert!(rx.try_recv().unwrap().contains("unknown client"));

        s.apply(Command::Disconnected(1));
        assert!(s.table().is_empty());
    }
}
