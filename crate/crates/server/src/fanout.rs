//! Per-subscriber bounded frame queues.
//!
//! The robot session pushes without ever waiting; a full queue drops its
//! oldest frame. Each viewer drains its own queue at its own pace.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use axum::body::Bytes;
use tokio::sync::Notify;

pub const DEFAULT_QUEUE_FRAMES: usize = 64;

#[derive(Debug)]
pub struct FrameQueue {
    frames: Mutex<VecDeque<Bytes>>,
    capacity: usize,
    notify: Notify,
    closed: AtomicBool,
    dropped: AtomicU64,
    pushed: AtomicU64,
}

impl FrameQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            frames: Mutex::new(VecDeque::with_capacity(capacity)),
            capacity: capacity.max(1),
            notify: Notify::new(),
            closed: AtomicBool::new(false),
            dropped: AtomicU64::new(0),
            pushed: AtomicU64::new(0),
        }
    }

    pub fn push(&self, frame: Bytes) {
        {
            let mut q = self.frames.lock().unwrap();
            if q.len() == self.capacity {
                q.pop_front();
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
            q.push_back(frame);
        }
        self.pushed.fetch_add(1, Ordering::Relaxed);
        self.notify.notify_one();
    }

    pub fn try_pop(&self) -> Option<Bytes> {
        self.frames.lock().unwrap().pop_front()
    }

    /// Waits for the next frame; `None` once closed and drained.
    pub async fn pop(&self) -> Option<Bytes> {
        loop {
            if let Some(frame) = self.try_pop() {
                return Some(frame);
            }
            if self.closed.load(Ordering::Acquire) {
                return None;
            }
            self.notify.notified().await;
        }
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::Release);
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    pub fn len(&self) -> usize {
        self.frames.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn pushed(&self) -> u64 {
        self.pushed.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn drops_oldest_when_full() {
        let q = FrameQueue::new(3);
        for i in 0..5u8 {
            q.push(Bytes::from(vec![i]));
        }
        assert_eq!(q.dropped(), 2);
        let left: Vec<u8> = std::iter::from_fn(|| q.try_pop()).map(|b| b[0]).collect();
        assert_eq!(left, [2, 3, 4]);
    }

    #[tokio::test]
    async fn pop_wakes_on_push_and_close() {
        let q = Arc::new(FrameQueue::new(4));
        let reader = {
            let q = q.clone();
            tokio::spawn(async move {
                let mut got = Vec::new();
                while let Some(f) = q.pop().await {
                    got.push(f[0]);
                }
                got
            })
        };
        tokio::task::yield_now().await;
        q.push(Bytes::from_static(&[1]));
        q.push(Bytes::from_static(&[2]));
        q.close();
        assert_eq!(reader.await.unwrap(), [1, 2]);
    }
}
