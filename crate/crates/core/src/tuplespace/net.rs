//! TCP front-end: one thread per connection, one JSON frame per line.
//! Blocking ops hold their response until satisfied, so a client that wants
//! concurrent blocking calls opens one connection per caller.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, warn};

use super::wire::{decode_error, decode_value, Op, Request, Response, Status};
use super::{Pattern, TsError, Tuple, TupleSpace, TupleSpaceClient, Value};

fn required<'a>(field: &'a Option<String>, name: &str) -> Result<&'a str, TsError> {
    field
        .as_deref()
        .ok_or_else(|| TsError::Protocol(format!("missing field {name}")))
}

/// Executes one request against the space. Blocking ops block the caller.
pub fn dispatch(space: &TupleSpace, req: &Request) -> Response {
    let result = (|| -> Result<Response, TsError> {
        let pattern = || -> Result<Pattern, TsError> {
            // a bare key is accepted where a pattern is expected
            let text = req.pattern.as_deref().or(req.key.as_deref());
            Pattern::parse(text.ok_or_else(|| TsError::Protocol("missing field pattern".into()))?)
        };
        Ok(match req.op {
            Op::Put => {
                let key = required(&req.key, "key")?;
                let value = match &req.value {
                    Some(v) => decode_value(v)?,
                    None => Value::Unit,
                };
                space.put(key, value)?;
                Response::ok()
            }
            Op::Read => Response::tuple(space.read(&pattern()?)?),
            Op::Get => Response::tuple(space.get(&pattern()?)?),
            Op::Tryget => space
                .try_get(&pattern()?)
                .map_or_else(Response::ok, Response::tuple),
            Op::Tryread => space
                .try_read(&pattern()?)
                .map_or_else(Response::ok, Response::tuple),
            Op::Count => Response::count(space.count(&pattern()?)),
            Op::Clear => Response::count(space.clear(&pattern()?)),
        })
    })();
    result.unwrap_or_else(|e| Response::err(&e))
}

fn handle_connection(space: Arc<TupleSpace>, stream: TcpStream) -> std::io::Result<()> {
    let peer = stream.peer_addr().ok();
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => dispatch(&space, &req),
            Err(e) => Response::err(&TsError::Protocol(e.to_string())),
        };
        let mut frame = serde_json::to_string(&resp).expect("response serializes");
        frame.push('\n');
        writer.write_all(frame.as_bytes())?;
    }
    debug!("connection from {peer:?} closed");
    Ok(())
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    space: Arc<TupleSpace>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn space(&self) -> &Arc<TupleSpace> {
        &self.space
    }

    /// Aborts blocked requests and stops accepting connections.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_now(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        self.space.shutdown();
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_now();
        }
    }
}

/// Serves `space` on `listener` from a background accept thread.
pub fn serve(listener: TcpListener, space: Arc<TupleSpace>) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let accept = {
        let stop = stop.clone();
        let space = space.clone();
        thread::Builder::new()
            .name("ts-accept".into())
            .spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    match stream {
                        Ok(s) => {
                            let _ = s.set_nodelay(true);
                            let space = space.clone();
                            thread::spawn(move || {
                                if let Err(e) = handle_connection(space, s) {
                                    debug!("connection ended: {e}");
                                }
                            });
                        }
                        Err(e) => warn!("accept failed: {e}"),
                    }
                }
            })?
    };
    Ok(ServerHandle {
        addr,
        stop,
        space,
        accept: Some(accept),
    })
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Client for the TCP service; behaves like an in-process [`TupleSpace`].
/// Calls on one instance are serialized over its single connection.
pub struct RemoteTupleSpace {
    conn: Mutex<Conn>,
}

fn transport(e: std::io::Error) -> TsError {
    TsError::Transport(e.to_string())
}

impl RemoteTupleSpace {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TsError> {
        let stream = TcpStream::connect(addr).map_err(transport)?;
        let _ = stream.set_nodelay(true);
        let writer = stream.try_clone().map_err(transport)?;
        Ok(Self {
            conn: Mutex::new(Conn {
                reader: BufReader::new(stream),
                writer,
            }),
        })
    }

    pub fn request(&self, req: &Request) -> Result<Response, TsError> {
        let mut conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        let mut frame = serde_json::to_string(req).map_err(|e| TsError::Protocol(e.to_string()))?;
        frame.push('\n');
        conn.writer.write_all(frame.as_bytes()).map_err(transport)?;
        let mut line = String::new();
        if conn.reader.read_line(&mut line).map_err(transport)? == 0 {
            return Err(TsError::Transport("connection closed".into()));
        }
        let resp: Response =
            serde_json::from_str(&line).map_err(|e| TsError::Protocol(e.to_string()))?;
        match resp.status {
            Status::Ok => Ok(resp),
            Status::Err => Err(decode_error(resp.error.as_deref().unwrap_or(""))),
        }
    }

    fn pattern_op(&self, op: Op, pattern: &Pattern) -> Result<Response, TsError> {
        self.request(&Request {
            op,
            key: None,
            pattern: Some(pattern.to_string()),
            value: None,
        })
    }

    fn tuple_op(&self, op: Op, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        self.pattern_op(op, pattern)?.into_tuple()
    }

    fn count_op(&self, op: Op, pattern: &Pattern) -> Result<usize, TsError> {
        self.pattern_op(op, pattern)?
            .count
            .ok_or_else(|| TsError::Protocol("missing count".into()))
    }
}

impl TupleSpaceClient for RemoteTupleSpace {
    fn put(&self, key: &str, value: Value) -> Result<(), TsError> {
        self.request(&Request {
            op: Op::Put,
            key: Some(key.to_string()),
            pattern: None,
            value: Some(super::wire::encode_value(&value)),
        })
        .map(|_| ())
    }

    fn read(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        self.tuple_op(Op::Read, pattern)?
            .ok_or_else(|| TsError::Protocol("read returned no tuple".into()))
    }

    fn get(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        self.tuple_op(Op::Get, pattern)?
            .ok_or_else(|| TsError::Protocol("get returned no tuple".into()))
    }

    fn try_get(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        self.tuple_op(Op::Tryget, pattern)
    }

    fn try_read(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        self.tuple_op(Op::Tryread, pattern)
    }

    fn count(&self, pattern: &Pattern) -> Result<usize, TsError> {
        self.count_op(Op::Count, pattern)
    }

    fn clear(&self, pattern: &Pattern) -> Result<usize, TsError> {
        self.count_op(Op::Clear, pattern)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_round_trip() {
        let server = serve(
            TcpListener::bind("127.0.0.1:0").unwrap(),
            Arc::new(TupleSpace::new()),
        )
        .unwrap();
        let c = RemoteTupleSpace::connect(server.addr()).unwrap();
        c.put("a", Value::block(vec![0.1, -2.5])).unwrap();
        assert_eq!(c.count(&Pattern::all()).unwrap(), 1);
        let t = c.get(&Pattern::exact("a")).unwrap();
        assert_eq!(t.value, Value::block(vec![0.1, -2.5]));
        assert_eq!(c.try_get(&Pattern::exact("a")).unwrap(), None);
        assert_eq!(
            c.put("bad key", Value::Unit),
            Err(TsError::MalformedKey("bad key".into()))
        );
        server.shutdown();
    }

    #[test]
    fn garbage_frame_gets_error_response() {
        let server = serve(
            TcpListener::bind("127.0.0.1:0").unwrap(),
            Arc::new(TupleSpace::new()),
        )
        .unwrap();
        let mut s = TcpStream::connect(server.addr()).unwrap();
        s.write_all(b"not json\n").unwrap();
        let mut line = String::new();
        BufReader::new(s).read_line(&mut line).unwrap();
        let r: Response = serde_json::from_str(&line).unwrap();
        assert_eq!(r.status, Status::Err);
    }
}
