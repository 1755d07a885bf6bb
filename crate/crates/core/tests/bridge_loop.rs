use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use litevla::action_space::ActionCommand;
use litevla::bridge::{
    decode_twist, encode_twist, forward_to_udp, receive_from_udp, Bus, Clock, Heartbeat,
    HeartbeatConfig, HeartbeatFrame, SimClock, StampedCommand, TwistMessage, WallClock,
    WireFrame,
};

const MS: u64 = 1_000_000;

fn heartbeat(limit: Option<Duration>) -> (Bus<StampedCommand>, Bus<HeartbeatFrame>, Heartbeat) {
    let cmds = Bus::new();
    let out = Bus::new();
    let hb = Heartbeat::new(
        &cmds,
        "cmd",
        &out,
        "out",
        HeartbeatConfig {
            rate_hz: 100.0,
            staleness_limit: limit,
        },
        0,
    )
    .unwrap();
    (cmds, out, hb)
}

#[test]
fn ticks_per_reasoning_interval_and_total() {
    let (cmds, out, mut hb) = heartbeat(Some(Duration::from_millis(301)));
    let frames = out.subscribe("out");
    let clock = SimClock::new();
    let period = 150_500_000u64;
    let end = 10_000 * MS;
    let mut counts = Vec::new();
    let mut k = 0u64;
    while k * period < end {
        let tau = k * period;
        clock.set(tau);
        cmds.publish(
            "cmd",
            StampedCommand {
                command: ActionCommand::new(0.1, 0.2),
                timestamp_ns: clock.now_ns(),
            },
        );
        // ticks in the half-open interval [tau, tau + period), capped at the run end
        let upto = ((k + 1) * period).min(end) - 1;
        hb.run_until(upto);
        let got = frames.drain();
        assert!(got.iter().all(|f| !f.frame.stale));
        if (k + 1) * period <= end {
            counts.push(got.len());
        }
        k += 1;
    }
    assert!(counts.iter().all(|&c| c == 15 || c == 16), "{counts:?}");
    assert!(counts.contains(&15) && counts.contains(&16));
    // exactly 1000 ticks at 0, 10, ..., 9990 ms
    assert_eq!(hb.next_tick_ns(), end);
}

#[test]
fn commands_go_stale_after_the_limit() {
    let (cmds, out, mut hb) = heartbeat(Some(Duration::from_millis(301)));
    let frames = out.subscribe("out");
    cmds.publish(
        "cmd",
        StampedCommand {
            command: ActionCommand::new(0.3, -0.4),
            timestamp_ns: 0,
        },
    );
    hb.run_until(600 * MS);
    for f in frames.drain() {
        let age = f.command_age_ns.unwrap();
        if age <= 301 * MS {
            assert!(!f.frame.stale);
            assert_eq!(f.frame.twist.linear[0], 0.3);
        } else {
            assert!(f.frame.stale, "age {age}");
            assert_eq!(f.frame.twist, TwistMessage::ZERO);
        }
    }
    // a fresh command recovers
    cmds.publish(
        "cmd",
        StampedCommand {
            command: ActionCommand::new(0.1, 0.0),
            timestamp_ns: 605 * MS,
        },
    );
    let f = hb.tick(610 * MS);
    assert!(!f.frame.stale);
    assert_eq!(f.command_age_ns, Some(5 * MS));
}

#[test]
fn wall_clock_heartbeat_keeps_its_rate() {
    let (_cmds, out, hb) = heartbeat(None);
    let frames = out.subscribe("out");
    let handle = hb.spawn(WallClock::new());
    thread::sleep(Duration::from_millis(500));
    handle.stop();
    let got = frames.drain();
    // scheduling on a loaded machine can delay ticks but never adds any
    assert!((25..=52).contains(&got.len()), "{} frames", got.len());
    assert!(got.windows(2).all(|w| w[1].frame.seq == w[0].frame.seq + 1));
}

#[test]
fn udp_receive_counts_and_publishes() {
    let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let addr = rx.local_addr().unwrap();
    let bus: Bus<StampedCommand> = Bus::new();
    let sub = bus.subscribe("cmd");
    let stop = Arc::new(AtomicBool::new(false));
    let join = receive_from_udp(rx, bus.clone(), "cmd".into(), WallClock::new(), Arc::clone(&stop)).unwrap();

    let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let twist = TwistMessage::from_command(ActionCommand::new(0.25, -0.5));
    let good = encode_twist(&twist, 7, 123, false);
    let mut flipped = good;
    flipped[20] ^= 0x10;
    tx.send_to(&good, addr).unwrap();
    tx.send_to(&flipped, addr).unwrap();
    tx.send_to(&good[..60], addr).unwrap();

    let cmd = sub.recv_timeout(Duration::from_secs(2)).expect("command arrives");
    assert_eq!(cmd.command, ActionCommand::new(0.25, -0.5));
    thread::sleep(Duration::from_millis(100));
    stop.store(true, Ordering::Relaxed);
    let stats = join.join().unwrap();
    assert_eq!(stats.accepted, 1);
    assert_eq!(stats.rejected.get("crc"), Some(&1));
    assert_eq!(stats.rejected.get("length"), Some(&1));
}

#[test]
fn udp_forwarding_sends_encoded_frames() {
    let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
    sink.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    let bus: Bus<HeartbeatFrame> = Bus::new();
    let stop = Arc::new(AtomicBool::new(false));
    let join = forward_to_udp(
        bus.subscribe("out"),
        UdpSocket::bind("127.0.0.1:0").unwrap(),
        sink.local_addr().unwrap(),
        Arc::clone(&stop),
    );
    let frame = WireFrame {
        twist: TwistMessage::from_command(ActionCommand::new(-0.1, 1.0)),
        seq: 3,
        timestamp_ns: 99,
        stale: true,
    };
    bus.publish(
        "out",
        HeartbeatFrame {
            frame,
            command_age_ns: None,
        },
    );
    let mut buf = [0u8; 128];
    let (n, _) = sink.recv_from(&mut buf).unwrap();
    assert_eq!(decode_twist(&buf[..n]).unwrap(), frame);
    stop.store(true, Ordering::Relaxed);
    assert_eq!(join.join().unwrap(), 1);
}
