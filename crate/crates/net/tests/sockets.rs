use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentsim_core::map::RoadMap;
use agentsim_core::world::{World, WorldConfig};
use agentsim_core::{Execution, Transform};
use agentsim_net::frame::{decode_payload, encode_frame, encode_payload};
use agentsim_net::protocol::{ErrorCode, Message, Role, ServerMode, SnapshotBody, PROTOCOL_VERSION};
use agentsim_net::server::ServerCore;
use agentsim_net::transport::{start, ServeConfig, ServerHandle};
use agentsim_net::{Client, ClientError};

fn server(mode: ServerMode, tweak: impl FnOnce(&mut ServeConfig)) -> ServerHandle {
    let core = ServerCore::new(
        World::new(Arc::new(RoadMap::default()), WorldConfig::default()),
        mode,
        Execution::default(),
    );
    let mut cfg = ServeConfig::localhost(0, 0);
    tweak(&mut cfg);
    start(core, cfg).unwrap()
}

#[test]
fn tcp_lockstep_session() {
    let srv = server(ServerMode::Lockstep, |_| {});
    let (mut runner, welcome) = Client::hello(srv.tcp_addr, Role::Runner).unwrap();
    let Message::Welcome { tick_hz, authority, .. } = welcome else { panic!() };
    assert_eq!((tick_hz, authority), (20.0, true));
    let (mut ui, _) = Client::hello(srv.tcp_addr, Role::Ui).unwrap();
    let spawned = runner
        .request(&Message::SpawnActor {
            blueprint: "vehicle.sedan".into(),
            transform: Transform::identity(),
        })
        .unwrap();
    let Message::ActorSpawned { id } = spawned else { panic!("{spawned:?}") };
    let ack = runner
        .request(&Message::VehicleControl { id, throttle: 1.0, steer: 0.0, brake: 0.0 })
        .unwrap();
    assert_eq!(ack, Message::Ack { request: "vehicle_control".into() });
    assert!(matches!(
        ui.request(&Message::Tick).unwrap(),
        Message::Error { code: ErrorCode::NotAuthorized, .. }
    ));
    for expect in 1..=5u64 {
        let mut pushed = Vec::new();
        assert_eq!(
            runner.send(&Message::Tick).and_then(|_| runner.recv_reply(|m| pushed.push(m))).unwrap(),
            Message::Ack { request: "tick".into() }
        );
        let [Message::Snapshot(SnapshotBody { frame, .. })] = &pushed[..] else { panic!("{pushed:?}") };
        assert_eq!(*frame, expect);
        let Message::Snapshot(SnapshotBody { frame, actors, .. }) = ui.recv().unwrap() else { panic!() };
        assert_eq!(frame, expect);
        assert!(actors.vehicles[0].speed > 0.0);
    }
    srv.shutdown();
}

#[test]
fn byte_at_a_time_frames_over_tcp() {
    let srv = server(ServerMode::Lockstep, |_| {});
    let mut c = Client::connect(srv.tcp_addr).unwrap();
    let mut stream = Vec::new();
    stream.extend(encode_frame(&Message::Hello { role: Role::Runner, version: PROTOCOL_VERSION }).unwrap());
    stream.extend(encode_frame(&Message::Tick).unwrap());
    stream.extend(encode_frame(&Message::QuerySnapshot).unwrap());
    for b in &stream {
        c.send_raw(std::slice::from_ref(b)).unwrap();
    }
    assert!(matches!(c.recv().unwrap(), Message::Welcome { .. }));
    assert!(matches!(c.recv().unwrap(), Message::Snapshot(SnapshotBody { frame: 1, .. })));
    assert!(matches!(c.recv().unwrap(), Message::Ack { .. }));
    assert!(matches!(c.recv().unwrap(), Message::SnapshotReply(SnapshotBody { frame: 1, .. })));
}

#[test]
fn bad_frames_get_errors_and_oversize_closes() {
    let srv = server(ServerMode::Lockstep, |_| {});
    let mut c = Client::connect(srv.tcp_addr).unwrap();
    let junk = b"not json";
    let mut bytes = (junk.len() as u32).to_be_bytes().to_vec();
    bytes.extend_from_slice(junk);
    c.send_raw(&bytes).unwrap();
    assert!(matches!(c.recv().unwrap(), Message::Error { code: ErrorCode::BadFrame, .. }));
    // still usable
    c.send(&Message::Hello { role: Role::Ui, version: PROTOCOL_VERSION }).unwrap();
    assert!(matches!(c.recv().unwrap(), Message::Welcome { .. }));
    c.send_raw(&[0xff, 0xff, 0xff, 0xff]).unwrap();
    assert!(matches!(c.recv().unwrap(), Message::Error { code: ErrorCode::BadFrame, .. }));
    assert!(matches!(c.recv(), Err(ClientError::Closed) | Err(ClientError::Io(_))));
}

type Ws = tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>;

fn ws_send(ws: &mut Ws, m: &Message) {
    ws.send(tungstenite::Message::Text(encode_payload(m).unwrap())).unwrap();
}

fn ws_recv(ws: &mut Ws) -> Message {
    loop {
        match ws.read().unwrap() {
            tungstenite::Message::Text(t) => return decode_payload(t.as_bytes()).unwrap(),
            _ => continue,
        }
    }
}

#[test]
fn web_socket_sees_the_same_messages() {
    let srv = server(ServerMode::Lockstep, |_| {});
    let (mut ws, _) = tungstenite::connect(format!("ws://{}/ws", srv.ws_addr)).unwrap();
    ws_send(&mut ws, &Message::Hello { role: Role::Ui, version: PROTOCOL_VERSION });
    let Message::Welcome { authority, tick_hz, .. } = ws_recv(&mut ws) else { panic!() };
    assert_eq!((authority, tick_hz), (false, 20.0));
    let (mut runner, _) = Client::hello(srv.tcp_addr, Role::Runner).unwrap();
    ws_send(&mut ws, &Message::SpawnActor { blueprint: "walker.avatar".into(), transform: Transform::identity() });
    let Message::ActorSpawned { id } = ws_recv(&mut ws) else { panic!() };
    ws_send(
        &mut ws,
        &Message::WalkerControl { id, direction: agentsim_core::Vec2::new(1.0, 0.0), speed: 1.4, head_yaw: 0.0 },
    );
    assert_eq!(ws_recv(&mut ws), Message::Ack { request: "walker_control".into() });
    runner.request(&Message::Tick).unwrap();
    let Message::Snapshot(SnapshotBody { frame, actors, .. }) = ws_recv(&mut ws) else { panic!() };
    assert_eq!(frame, 1);
    assert!((actors.walkers[0].transform.position.x - 0.07).abs() < 1e-9);
    // unknown types and binary frames are answered, not fatal
    ws.send(tungstenite::Message::Text(r#"{"type":"later","x":1}"#.into())).unwrap();
    assert!(matches!(ws_recv(&mut ws), Message::Error { code: ErrorCode::UnknownMessage, .. }));
    ws.send(tungstenite::Message::Binary(vec![1, 2, 3])).unwrap();
    assert!(matches!(ws_recv(&mut ws), Message::Error { code: ErrorCode::BadFrame, .. }));
    ws.close(None).unwrap();
}

#[test]
fn realtime_server_ticks_by_itself() {
    let srv = server(ServerMode::Realtime, |_| {});
    let (mut ui, _) = Client::hello(srv.tcp_addr, Role::Ui).unwrap();
    let start = Instant::now();
    let mut frames = Vec::new();
    while frames.len() < 10 {
        if let Message::Snapshot(SnapshotBody { frame, .. }) = ui.recv().unwrap() {
            frames.push(frame);
        }
    }
    let elapsed = start.elapsed();
    assert!(frames.windows(2).all(|w| w[1] == w[0] + 1), "{frames:?}");
    // ten ticks at 20 Hz, with generous slack for a loaded machine
    assert!(elapsed >= Duration::from_millis(400) && elapsed < Duration::from_secs(5), "{elapsed:?}");
    assert!(matches!(
        ui.request(&Message::Tick).unwrap(),
        Message::Error { code: ErrorCode::NotAuthorized, .. }
    ));
}

fn http(addr: std::net::SocketAddr, request: &str) -> (u16, Vec<u8>) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut out = Vec::new();
    s.read_to_end(&mut out).unwrap();
    let split = out.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let status = std::str::from_utf8(&out[9..12]).unwrap().parse().unwrap();
    (status, out[split + 4..].to_vec())
}

#[test]
fn static_files_and_questionnaire_upload() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    std::fs::write(dir.join("index.html"), "<p>hi</p>").unwrap();
    std::fs::create_dir_all(dir.join("js")).unwrap();
    std::fs::write(dir.join("js/app.js"), "let x = 1;").unwrap();
    let uploads = dir.join("uploads");
    let srv = server(ServerMode::Realtime, |c| {
        c.static_dir = Some(dir.clone());
        c.responses_dir = Some(uploads.clone());
    });
    assert_eq!(http(srv.ws_addr, "GET / HTTP/1.1\r\nHost: x\r\n\r\n"), (200, b"<p>hi</p>".to_vec()));
    assert_eq!(http(srv.ws_addr, "GET /js/app.js HTTP/1.1\r\n\r\n").0, 200);
    assert_eq!(http(srv.ws_addr, "GET /missing.css HTTP/1.1\r\n\r\n").0, 404);
    assert_eq!(http(srv.ws_addr, "GET /../secret HTTP/1.1\r\n\r\n").0, 403);
    assert_eq!(http(srv.ws_addr, "DELETE / HTTP/1.1\r\n\r\n").0, 405);

    let mut csv = String::from("subject_id,subscale,item,rating\n");
    for sub in ["self", "vehicle", "environment"] {
        for item in 1..=5 {
            csv.push_str(&format!("P01,{sub},{item},4\n"));
        }
    }
    let post = |body: &str| {
        http(
            srv.ws_addr,
            &format!("POST /responses HTTP/1.1\r\nContent-Length: {}\r\n\r\n{body}", body.len()),
        )
    };
    let (status, name) = post(&csv);
    assert_eq!(status, 200);
    let stored = std::fs::read_to_string(uploads.join(String::from_utf8(name).unwrap())).unwrap();
    assert_eq!(stored, csv);
    let (status, _) = post("subject_id,subscale,item,rating\nP01,self,1,9\n");
    assert_eq!(status, 422);
}

#[test]
fn builtin_page_without_static_dir() {
    let srv = server(ServerMode::Realtime, |_| {});
    let (status, body) = http(srv.ws_addr, "GET / HTTP/1.1\r\n\r\n");
    assert_eq!(status, 200);
    assert!(String::from_utf8(body).unwrap().contains("/ws"));
    assert_eq!(
        http(srv.ws_addr, "POST /responses HTTP/1.1\r\nContent-Length: 0\r\n\r\n").0,
        403
    );
}
