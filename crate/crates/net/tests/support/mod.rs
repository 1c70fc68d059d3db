#![allow(dead_code)]

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use gpunion_core::clock::SystemClock;
use gpunion_core::coordinator::{Coordinator, CoordinatorConfig};
use gpunion_core::domain::{
    CheckpointMode, ComputeCapability, GpuDescriptor, JobMode, JobSpec, StorageTarget,
};
use gpunion_net::{router, CoordinatorHandle, ServeOptions};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

pub const IMAGE: &str = "registry.campus/train/resnet:1.4";
pub const DIGEST: &str = "sha256:5e1f0c2a9b8d7e6f5a4b3c2d1e0f9a8b7c6d5e4f3a2b1c0d9e8f7a6b5c4d3e2f";

pub fn gpu(index: u32) -> GpuDescriptor {
    GpuDescriptor {
        index,
        model: "RTX 3090".into(),
        memory_mib: 24576,
        compute_capability: ComputeCapability(8, 6),
    }
}

pub fn spec(checkpoint_interval_s: u64) -> JobSpec {
    JobSpec {
        image_ref: IMAGE.into(),
        image_digest: DIGEST.into(),
        mode: JobMode::Batch,
        entrypoint: vec!["python".into(), "train.py".into()],
        gpu_memory_mib_required: 8192,
        min_compute_capability: ComputeCapability(7, 0),
        priority: 0,
        checkpoint_interval_s,
        checkpoint_mode: CheckpointMode::Incremental,
        storage_target: StorageTarget::SharedFs { path: "/campus/ckpt".into() },
        estimated_duration_s: 36_000,
        affinity_window_s: 0,
    }
}

pub struct Server {
    pub base: String,
    pub addr: SocketAddr,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn serve(opts: ServeOptions) -> Server {
    let cfg = CoordinatorConfig { allow_list: BTreeSet::from([DIGEST.to_string()]), ..Default::default() };
    let coord = Coordinator::new(cfg, Arc::new(SystemClock)).unwrap().with_seed(11);
    let (handle, _) = CoordinatorHandle::spawn(coord, Duration::from_millis(100));
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(handle, opts);
    let task = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Server { base: format!("http://{addr}"), addr, task }
}

/// TCP relay in front of a server. Once `blackhole` is set it keeps every
/// connection open but drops all bytes in both directions.
pub struct Relay {
    pub base: String,
    blackhole: Arc<AtomicBool>,
    task: tokio::task::JoinHandle<()>,
}

impl Relay {
    pub async fn start(upstream: SocketAddr) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let blackhole = Arc::new(AtomicBool::new(false));
        let flag = blackhole.clone();
        let task = tokio::spawn(async move {
            while let Ok((client, _)) = listener.accept().await {
                let flag = flag.clone();
                tokio::spawn(async move {
                    let Ok(server) = TcpStream::connect(upstream).await else { return };
                    let (cr, cw) = client.into_split();
                    let (sr, sw) = server.into_split();
                    tokio::join!(pump(cr, sw, flag.clone()), pump(sr, cw, flag));
                });
            }
        });
        Self { base, blackhole, task }
    }

    pub fn blackhole(&self) {
        self.blackhole.store(true, Ordering::SeqCst);
    }
}

impl Drop for Relay {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn pump(mut from: tokio::net::tcp::OwnedReadHalf, mut to: tokio::net::tcp::OwnedWriteHalf, flag: Arc<AtomicBool>) {
    let mut buf = vec![0u8; 16 * 1024];
    loop {
        let n = match from.read(&mut buf).await {
            Ok(0) | Err(_) => return,
            Ok(n) => n,
        };
        if flag.load(Ordering::SeqCst) {
            continue;
        }
        if to.write_all(&buf[..n]).await.is_err() {
            return;
        }
    }
}

/// Polls `cond` every 20 ms until it holds or `timeout` passes.
pub async fn eventually<F, Fut>(timeout: Duration, mut cond: F) -> bool
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = bool>,
{
    let end = tokio::time::Instant::now() + timeout;
    while tokio::time::Instant::now() < end {
        if cond().await {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    false
}
