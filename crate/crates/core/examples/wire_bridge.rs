//! Sends commands over UDP into a heartbeat and reads the forwarded frames.

use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use litevla::action_space::ActionCommand;
use litevla::bridge::{
    decode_twist, encode_twist, forward_to_udp, receive_from_udp, Bus, Heartbeat,
    HeartbeatConfig, TwistMessage, WallClock, COMMAND_TOPIC, OUTPUT_TOPIC,
};

fn main() {
    let clock = WallClock::new();
    let commands = Bus::new();
    let frames = Bus::new();
    let stop = Arc::new(AtomicBool::new(false));

    let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let rx_addr = rx.local_addr().unwrap();
    let receiver = receive_from_udp(rx, commands.clone(), COMMAND_TOPIC.into(), clock, stop.clone()).unwrap();

    let config = HeartbeatConfig {
        staleness_limit: Some(Duration::from_millis(200)),
        ..HeartbeatConfig::default()
    };
    let heartbeat = Heartbeat::new(&commands, COMMAND_TOPIC, &frames, OUTPUT_TOPIC, config, 0).unwrap();

    let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
    sink.set_read_timeout(Some(Duration::from_secs(1))).unwrap();
    let forwarder = forward_to_udp(
        frames.subscribe(OUTPUT_TOPIC),
        UdpSocket::bind("127.0.0.1:0").unwrap(),
        sink.local_addr().unwrap(),
        stop.clone(),
    );
    let handle = heartbeat.spawn(clock);

    let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let twist = TwistMessage::from_command(ActionCommand::new(0.2, -0.4));
    tx.send_to(&encode_twist(&twist, 1, 0, false), rx_addr).unwrap();

    // 100 Hz for half a second: live at first, zeroed once the command ages out
    let mut buf = [0u8; 128];
    let mut stale = 0;
    let mut live = 0;
    for _ in 0..50 {
        let (n, _) = sink.recv_from(&mut buf).unwrap();
        let frame = decode_twist(&buf[..n]).unwrap();
        if frame.stale { stale += 1 } else { live += 1 }
    }
    println!("{live} live frames, {stale} stale frames");

    handle.stop();
    stop.store(true, Ordering::Relaxed);
    let stats = receiver.join().unwrap();
    println!("forwarded {}, received {:?}", forwarder.join().unwrap(), stats);
}
