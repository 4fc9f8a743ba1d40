use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use splatstream_core::splat::sh_coeff_count;
use splatstream_core::Gaussian3D;
use splatstream_delivery::{
    run_scenario, ConformanceOptions, DeliveryClient, DeliveryServer, Mode, ModelState, RoiBox, Scenario,
    UpdateKind,
};

fn model(rev: u64, n: u64, shift: f32) -> ModelState {
    ModelState {
        revision: rev,
        sh_degree: 1,
        gaussians: (0..n)
            .map(|i| {
                let g = Gaussian3D {
                    id: i,
                    position: [(i % 10) as f32 - 5.0 + shift, (i / 10 % 10) as f32 - 5.0, 0.5],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    log_scale: [-2.0; 3],
                    sh: vec![0.1; 3 * sh_coeff_count(1)],
                    opacity_logit: 0.0,
                };
                (i, g)
            })
            .collect(),
    }
}

fn opts() -> ConformanceOptions {
    ConformanceOptions {
        observe: Duration::from_millis(300),
        roi: RoiBox::new([-2.0, -2.0, -1.0], [2.0, 2.0, 1.0]).unwrap(),
    }
}

#[test]
fn replace_against_static_model_gets_one_snapshot() {
    let server = DeliveryServer::bind("127.0.0.1:0", 1.0).unwrap();
    server.publish_state(model(1, 50, 0.0)).unwrap();
    let r = run_scenario(server.local_addr(), Scenario::SubscribeReplace, &opts()).unwrap();
    assert!(r.passed(), "{r}");
    assert_eq!((r.snapshots, r.deltas), (1, 0));
}

#[test]
fn all_scenarios_pass_against_changing_model() {
    let server = Arc::new(DeliveryServer::bind("127.0.0.1:0", 1.0).unwrap());
    server.publish_state(model(1, 100, 0.0)).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let publisher = {
        let (server, stop) = (server.clone(), stop.clone());
        std::thread::spawn(move || {
            let mut rev = 1;
            while !stop.load(Ordering::Relaxed) {
                rev += 1;
                server.publish_state(model(rev, 100 + rev % 7, rev as f32 * 0.01)).unwrap();
                std::thread::sleep(Duration::from_millis(20));
            }
        })
    };
    for s in Scenario::ALL {
        let r = run_scenario(server.local_addr(), s, &opts()).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.snapshots >= 1, "{r}");
        if matches!(s, Scenario::SubscribeMerge) {
            assert!(r.deltas > 0, "{r}");
        }
    }
    stop.store(true, Ordering::Relaxed);
    publisher.join().unwrap();
}

#[test]
fn resync_after_lying_ack() {
    let server = DeliveryServer::bind("127.0.0.1:0", 1.0).unwrap();
    server.publish_state(model(4, 20, 0.0)).unwrap();
    let r = run_scenario(server.local_addr(), Scenario::ForcedResync, &opts()).unwrap();
    assert!(r.passed(), "{r}");
    assert_eq!(r.snapshots, 2);
}

#[test]
fn handshake_requires_subprotocol() {
    let server = DeliveryServer::bind("127.0.0.1:0", 1.0).unwrap();
    let stream = std::net::TcpStream::connect(server.local_addr()).unwrap();
    let req = format!("ws://{}/", server.local_addr());
    assert!(tungstenite::client(req, stream).is_err());
}

#[test]
fn large_snapshot_latency_is_reported() {
    let server = DeliveryServer::bind("127.0.0.1:0", 1.0).unwrap();
    let mut c = DeliveryClient::connect(server.local_addr()).unwrap();
    c.subscribe(Mode::Merge, None).unwrap();
    // wait until the session has registered the subscription
    for _ in 0..500 {
        if server.client_count() == 1 {
            break;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    server.publish_state(model(1, 10_000, 0.0)).unwrap();
    let got = c.wait_for(1, Duration::from_secs(10)).unwrap();
    assert_eq!(got[0].update.kind, UpdateKind::Snapshot);
    assert_eq!(c.model().len(), 10_000);
    assert!(got[0].latency < Duration::from_secs(1), "{:?}", got[0].latency);
}
