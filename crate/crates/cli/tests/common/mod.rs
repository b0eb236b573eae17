#![allow(dead_code)]

use std::path::PathBuf;
use std::time::{Duration, Instant};

use animate_cli::imaging::{b64_encode, frame_to_png, mask_to_png};
use animate_cli::service::{serve, Job, JobState, ServiceConfig};
use animate_core::container::video_from_bytes;
use animate_core::{MotionMask, Resolution, VideoTensor};
use serde_json::{json, Value};

pub fn fixture_checkpoint() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/toy.ckpt")
}

pub struct Server {
    pub base: String,
    pub client: reqwest::Client,
    _workdir: tempfile::TempDir,
}

pub async fn start(checkpoint: Option<PathBuf>, static_dir: Option<PathBuf>) -> Server {
    let workdir = tempfile::tempdir().unwrap();
    let config = ServiceConfig { checkpoint, static_dir, workdir: workdir.path().to_path_buf() };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { serve(listener, config).await.unwrap() });
    Server { base, client: reqwest::Client::new(), _workdir: workdir }
}

impl Server {
    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).json(body).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    pub async fn job(&self, id: u64) -> Job {
        let (status, body) = self.get(&format!("/api/jobs/{id}")).await;
        assert_eq!(status, 200, "{body}");
        serde_json::from_value(body).unwrap()
    }

    /// Polls until the job is terminal, asserting the state never moves
    /// backward and progress never decreases. Returns every observation.
    pub async fn wait(&self, id: u64, timeout: Duration) -> Vec<Job> {
        let start = Instant::now();
        let mut seen: Vec<Job> = Vec::new();
        loop {
            let job = self.job(id).await;
            if let Some(prev) = seen.last() {
                assert!(job.state >= prev.state, "state went back: {:?} -> {:?}", prev.state, job.state);
                assert!(job.progress >= prev.progress, "progress went back");
            }
            let done = matches!(job.state, JobState::Done | JobState::Failed);
            seen.push(job);
            if done {
                return seen;
            }
            assert!(start.elapsed() < timeout, "job {id} timed out");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn result_aav1(&self, id: u64) -> VideoTensor {
        let r = self.client.get(format!("{}/api/jobs/{id}/result?format=aav1", self.base)).send().await.unwrap();
        assert_eq!(r.status().as_u16(), 200);
        video_from_bytes(&r.bytes().await.unwrap()).unwrap()
    }
}

/// A 32×32 reference with a bright square on a textured background.
pub fn reference() -> VideoTensor {
    VideoTensor::from_fn([1, 1, 32, 32], |_, _, y, x| {
        if (10..18).contains(&y) && (6..14).contains(&x) {
            // Multiples of 1/255 survive the PNG round trip exactly.
            220.0 / 255.0
        } else {
            ((y * 7 + x * 3) % 40) as f64 / 255.0 + 30.0 / 255.0
        }
    })
}

pub fn png_b64(v: &VideoTensor) -> String {
    b64_encode(&frame_to_png(v, 0).unwrap())
}

pub fn mask_b64(m: &MotionMask) -> String {
    b64_encode(&mask_to_png(m).unwrap())
}

pub fn square_mask(side: usize) -> MotionMask {
    MotionMask::from_fn(side, side, Resolution::Pixel, |y, x| (8..20).contains(&y) && (4..24).contains(&x))
}

pub fn generate_body(seed: u64) -> Value {
    json!({
        "image": png_b64(&reference()),
        "mask": mask_b64(&square_mask(32)),
        "class_id": 3,
        "strength": 0.01,
        "frames": 8,
        "steps": 10,
        "seed": seed,
    })
}
