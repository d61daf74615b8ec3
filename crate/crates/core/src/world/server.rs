//! Opcode dispatch for the world, plus the in-process and socket front ends.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::{Scenario, World};
use crate::protocol::{
    connect, Connection, Endpoint, Link, Listener, Packet, Payload, ProtocolError, Registry,
    Status, Value, ADVANCE, GET_DATA, GET_STATE, RESET, SET_MOTOR, SHUTDOWN,
};

/// State a handler may touch.
pub struct WorldContext {
    pub world: World,
    pub trajectory_path: Option<PathBuf>,
    pub shutdown_requested: bool,
}

/// Handler for one opcode. `Err` becomes an error response carrying the message.
pub type WorldHandler =
    Box<dyn FnMut(&mut WorldContext, &Packet) -> Result<Option<Payload>, String> + Send>;

pub struct WorldServer {
    ctx: WorldContext,
    handlers: BTreeMap<String, WorldHandler>,
    registry: Arc<Registry>,
}

fn required_f64(p: &Packet, key: &str) -> Result<f64, String> {
    let v = p
        .f64_field(key)
        .ok_or_else(|| format!("missing numeric field `{key}`"))?;
    if !v.is_finite() {
        return Err(format!("field `{key}` is not finite"));
    }
    Ok(v)
}

fn get_data(ctx: &mut WorldContext, _: &Packet) -> Result<Option<Payload>, String> {
    let img = ctx.world.render();
    let mut p = Payload::new();
    p.insert("width".into(), Value::Int(img.width() as i64));
    p.insert("height".into(), Value::Int(img.height() as i64));
    p.insert("pixels".into(), Value::Bytes(img.into_pixels()));
    Ok(Some(p))
}

fn set_motor(ctx: &mut WorldContext, p: &Packet) -> Result<Option<Payload>, String> {
    let v = required_f64(p, "v_mps")?;
    let yaw = required_f64(p, "yaw_rate")?;
    let vz = p.f64_field("vz_mps").unwrap_or(0.0);
    if !vz.is_finite() {
        return Err("field `vz_mps` is not finite".into());
    }
    if v < 0.0 {
        return Err(format!("negative forward speed {v}"));
    }
    if !(-1.0..=1.0).contains(&yaw) {
        return Err(format!("yaw rate {yaw} outside [-1, 1]"));
    }
    ctx.world.set_commands(v, yaw, vz);
    Ok(None)
}

fn advance(ctx: &mut WorldContext, p: &Packet) -> Result<Option<Payload>, String> {
    let steps = p
        .i64_field("steps")
        .ok_or("missing integer field `steps`")?;
    if steps < 0 {
        return Err(format!("negative step count {steps}"));
    }
    ctx.world.advance(steps as u64);
    let mut out = Payload::new();
    out.insert("world_time_us".into(), Value::Int(ctx.world.time_us() as i64));
    Ok(Some(out))
}

fn get_state(ctx: &mut WorldContext, _: &Packet) -> Result<Option<Payload>, String> {
    Ok(Some(ctx.world.state_payload()))
}

fn reset(ctx: &mut WorldContext, p: &Packet) -> Result<Option<Payload>, String> {
    let scenario = if let Some(json) = p.str_field("scenario_json") {
        Scenario::from_json(json).map_err(|e| e.to_string())?
    } else if let Some(name) = p.str_field("scenario") {
        Scenario::resolve(name).map_err(|e| e.to_string())?
    } else {
        ctx.world.scenario().clone()
    };
    let mut out = Payload::new();
    // A reset closes the running episode: its trajectory goes to disk first.
    if let Some(path) = ctx.trajectory_path.take() {
        ctx.world.write_trajectory(&path).map_err(|e| e.to_string())?;
        out.insert("trajectory_path".into(), Value::Str(path.display().to_string()));
    }
    ctx.trajectory_path = p.str_field("trajectory_path").map(PathBuf::from);
    let config = ctx.world.config().clone();
    ctx.world = World::new(scenario, config);
    out.insert("scenario".into(), Value::Str(ctx.world.scenario().id.clone()));
    out.insert("world_step_us".into(), Value::Int(ctx.world.step_us() as i64));
    Ok(Some(out))
}

fn shutdown(ctx: &mut WorldContext, _: &Packet) -> Result<Option<Payload>, String> {
    ctx.shutdown_requested = true;
    let mut out = Payload::new();
    if let Some(path) = &ctx.trajectory_path {
        ctx.world.write_trajectory(path).map_err(|e| e.to_string())?;
        out.insert("trajectory_path".into(), Value::Str(path.display().to_string()));
    }
    Ok(Some(out))
}

impl WorldServer {
    /// A server with handlers for every built-in opcode.
    pub fn new(world: World, registry: Arc<Registry>) -> Self {
        let mut s = WorldServer {
            ctx: WorldContext {
                world,
                trajectory_path: None,
                shutdown_requested: false,
            },
            handlers: BTreeMap::new(),
            registry,
        };
        s.bind(GET_DATA, Box::new(get_data));
        s.bind(SET_MOTOR, Box::new(set_motor));
        s.bind(ADVANCE, Box::new(advance));
        s.bind(GET_STATE, Box::new(get_state));
        s.bind(RESET, Box::new(reset));
        s.bind(SHUTDOWN, Box::new(shutdown));
        s
    }

    /// Installs or replaces the handler for `opcode`.
    pub fn bind(&mut self, opcode: &str, handler: WorldHandler) {
        self.handlers.insert(opcode.to_owned(), handler);
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn world(&self) -> &World {
        &self.ctx.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.ctx.world
    }

    pub fn set_trajectory_path(&mut self, path: Option<PathBuf>) {
        self.ctx.trajectory_path = path;
    }

    pub fn shutdown_requested(&self) -> bool {
        self.ctx.shutdown_requested
    }

    /// Serves one request. Registered opcodes without a handler, and handler
    /// failures, yield error responses.
    pub fn dispatch(&mut self, request: &Packet) -> Packet {
        let Some(handler) = self.handlers.get_mut(&request.opcode) else {
            return Packet::error(
                request.opcode.clone(),
                self.ctx.world.time_us(),
                format!("no handler for {}", request.opcode),
            );
        };
        match handler(&mut self.ctx, request) {
            Ok(payload) => Packet {
                opcode: request.opcode.clone(),
                time_us: self.ctx.world.time_us(),
                status: Some(Status::Ok),
                payload,
            },
            Err(message) => Packet::error(request.opcode.clone(), self.ctx.world.time_us(), message),
        }
    }
}

/// Tracks the request clock of one client.
#[derive(Debug, Default, Clone, Copy)]
struct MonotonicGuard {
    last_us: Option<u64>,
}

impl MonotonicGuard {
    fn check(&mut self, request: &Packet) -> Result<(), ProtocolError> {
        if let Some(prev) = self.last_us {
            if request.time_us < prev {
                return Err(ProtocolError::NonMonotonicTime {
                    previous: prev,
                    got: request.time_us,
                });
            }
        }
        self.last_us = Some(request.time_us);
        Ok(())
    }

    fn after(&mut self, request: &Packet, response: &Packet) {
        // A reset restarts simulation time for this client.
        if request.opcode == RESET && response.status == Some(Status::Ok) {
            self.last_us = None;
        }
    }
}

/// In-process link: packets are handed to the server without serialization.
pub struct LocalLink {
    server: WorldServer,
    guard: MonotonicGuard,
}

impl LocalLink {
    pub fn new(server: WorldServer) -> Self {
        LocalLink {
            server,
            guard: MonotonicGuard::default(),
        }
    }

    pub fn server(&self) -> &WorldServer {
        &self.server
    }

    pub fn server_mut(&mut self) -> &mut WorldServer {
        &mut self.server
    }

    pub fn into_server(self) -> WorldServer {
        self.server
    }
}

impl Link for LocalLink {
    fn transact(&mut self, request: &Packet) -> Result<Packet, ProtocolError> {
        if !self.server.registry.contains(&request.opcode) {
            return Err(ProtocolError::UnknownOpcode(request.opcode.clone()));
        }
        self.guard.check(request)?;
        let response = self.server.dispatch(request);
        self.guard.after(request, &response);
        Ok(response)
    }
}

/// A world server accepting socket connections on a background thread.
pub struct RunningServer {
    endpoint: Endpoint,
    shared: Arc<Mutex<WorldServer>>,
    acceptor: Option<JoinHandle<()>>,
}

impl RunningServer {
    /// The endpoint clients should dial.
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn shared(&self) -> &Arc<Mutex<WorldServer>> {
        &self.shared
    }

    /// Blocks until a client sends SHUTDOWN.
    pub fn join(mut self) -> Arc<Mutex<WorldServer>> {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        self.shared.clone()
    }

    /// Stops accepting connections without waiting for a client.
    pub fn stop(mut self) {
        self.shared.lock().expect("world lock").ctx.shutdown_requested = true;
        wake(&self.endpoint, &self.shared);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn wake(endpoint: &Endpoint, shared: &Arc<Mutex<WorldServer>>) {
    let registry = shared.lock().expect("world lock").registry.clone();
    let _ = connect(endpoint, registry);
}

fn handle_connection(mut conn: Connection, shared: Arc<Mutex<WorldServer>>, endpoint: Endpoint) {
    let mut guard = MonotonicGuard::default();
    loop {
        let request = match conn.recv() {
            Ok(r) => r,
            Err(ProtocolError::Disconnected) => return,
            Err(e) => {
                log::warn!("closing connection: {e}");
                return;
            }
        };
        let (response, stop) = match guard.check(&request) {
            Err(e) => {
                let t = shared.lock().expect("world lock").ctx.world.time_us();
                (Packet::error(request.opcode.clone(), t, e.to_string()), false)
            }
            Ok(()) => {
                let mut server = shared.lock().expect("world lock");
                let response = server.dispatch(&request);
                (response, server.ctx.shutdown_requested)
            }
        };
        guard.after(&request, &response);
        if let Err(e) = conn.send(&response) {
            log::warn!("closing connection: {e}");
            return;
        }
        if stop {
            wake(&endpoint, &shared);
            return;
        }
    }
}

/// Binds `endpoint` and serves connections, one thread each, until SHUTDOWN.
pub fn spawn_server(endpoint: &Endpoint, server: WorldServer) -> Result<RunningServer, ProtocolError> {
    let listener = Listener::bind(endpoint)?;
    let endpoint = listener.local_endpoint();
    let shared = Arc::new(Mutex::new(server));
    let acceptor = {
        let shared = shared.clone();
        let endpoint = endpoint.clone();
        std::thread::spawn(move || {
            let mut workers = Vec::new();
            loop {
                let stream = listener.accept();
                let (stop, registry) = {
                    let s = shared.lock().expect("world lock");
                    (s.ctx.shutdown_requested, s.registry.clone())
                };
                if stop {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let conn = Connection::new(stream, registry);
                        let shared = shared.clone();
                        let endpoint = endpoint.clone();
                        workers.push(std::thread::spawn(move || {
                            handle_connection(conn, shared, endpoint)
                        }));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
            drop(listener);
            for w in workers {
                if w.is_finished() {
                    let _ = w.join();
                }
            }
        })
    };
    Ok(RunningServer {
        endpoint,
        shared,
        acceptor: Some(acceptor),
    })
}

/// Blocking form of [`spawn_server`]; returns the server once SHUTDOWN arrives.
pub fn serve(endpoint: &Endpoint, server: WorldServer) -> Result<Arc<Mutex<WorldServer>>, ProtocolError> {
    Ok(spawn_server(endpoint, server)?.join())
}
