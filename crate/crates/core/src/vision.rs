//! Background-subtraction motion detection and event clip capture.
//!
//! The detector keeps a per-pixel running mean of the scene. Each incoming
//! frame is differenced against the rounded mean; pixels whose absolute
//! difference exceeds the pixel threshold are "changed", and a motion event
//! fires when the changed fraction of the frame exceeds the area threshold.
//! With `learning_rate = 0` the mean never moves and the model degenerates
//! to a fixed reference image.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VisionError {
    #[error("frame dimensions must be non-zero, got {width}x{height}")]
    EmptyFrame { width: u16, height: u16 },
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    PixelCount { expected: usize, got: usize },
    #[error("frame is {got_width}x{got_height}, model expects {width}x{height}")]
    DimensionMismatch {
        width: u16,
        height: u16,
        got_width: u16,
        got_height: u16,
    },
    #[error("invalid detector config: {0}")]
    InvalidConfig(&'static str),
    #[error("malformed clip container: {0}")]
    MalformedClip(&'static str),
}

/// One grayscale camera image, row-major, one byte per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    width: u16,
    height: u16,
    pixels: Vec<u8>,
    pub frame_index: u64,
    pub timestamp_ms: u64,
}

impl Frame {
    pub fn new(
        width: u16,
        height: u16,
        pixels: Vec<u8>,
        frame_index: u64,
        timestamp_ms: u64,
    ) -> Result<Self, VisionError> {
        if width == 0 || height == 0 {
            return Err(VisionError::EmptyFrame { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(VisionError::PixelCount {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            frame_index,
            timestamp_ms,
        })
    }

    /// A frame with every pixel set to `value`.
    pub fn filled(width: u16, height: u16, value: u8, frame_index: u64) -> Result<Self, VisionError> {
        Self::new(
            width,
            height,
            vec![value; width as usize * height as usize],
            frame_index,
            0,
        )
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width as usize + x]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width as usize + x] = value;
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }
}

/// Per-pixel running mean of the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundModel {
    width: u16,
    height: u16,
    mean: Vec<f64>,
    frames_seen: u64,
}

impl BackgroundModel {
    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Compares `frame` against the model, then folds it into the mean.
    pub fn observe(
        &mut self,
        frame: &Frame,
        cfg: &DetectorConfig,
    ) -> Result<Option<MotionEvent>, VisionError> {
        if frame.width != self.width || frame.height != self.height {
            return Err(VisionError::DimensionMismatch {
                width: self.width,
                height: self.height,
                got_width: frame.width,
                got_height: frame.height,
            });
        }

        let w = self.width as usize;
        let threshold = cfg.pixel_threshold as f64;
        let mut changed = 0usize;
        let mut bbox = BoundingBox {
            x_min: u16::MAX,
            y_min: u16::MAX,
            x_max: 0,
            y_max: 0,
        };
        for (i, (&px, &mean)) in frame.pixels.iter().zip(&self.mean).enumerate() {
            let diff = (px as f64 - mean.round()).abs();
            if diff > threshold {
                changed += 1;
                let (x, y) = ((i % w) as u16, (i / w) as u16);
                bbox.x_min = bbox.x_min.min(x);
                bbox.y_min = bbox.y_min.min(y);
                bbox.x_max = bbox.x_max.max(x);
                bbox.y_max = bbox.y_max.max(y);
            }
        }

        let fraction = changed as f64 / self.mean.len() as f64;
        let event = (self.frames_seen > cfg.warmup_frames && fraction > cfg.area_fraction).then(|| {
            MotionEvent {
                frame_index: frame.frame_index,
                changed_fraction: fraction,
                bbox,
            }
        });

        let alpha = cfg.learning_rate;
        for (mean, &px) in self.mean.iter_mut().zip(&frame.pixels) {
            *mean = (1.0 - alpha) * *mean + alpha * px as f64;
        }
        self.frames_seen += 1;
        Ok(event)
    }
}

/// Seeds a background model from a single reference frame.
pub fn init_background(frame: &Frame) -> BackgroundModel {
    BackgroundModel {
        width: frame.width,
        height: frame.height,
        mean: frame.pixels.iter().map(|&p| p as f64).collect(),
        frames_seen: 1,
    }
}

/// Pure form of [`BackgroundModel::observe`]: returns the event (if any) and
/// the updated model, leaving the input untouched.
pub fn detect(
    model: &BackgroundModel,
    frame: &Frame,
    cfg: &DetectorConfig,
) -> Result<(Option<MotionEvent>, BackgroundModel), VisionError> {
    let mut next = model.clone();
    let event = next.observe(frame, cfg)?;
    Ok((event, next))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub pixel_threshold: u8,
    pub area_fraction: f64,
    pub learning_rate: f64,
    pub warmup_frames: u64,
    pub pre_roll: usize,
    pub post_roll: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            pixel_threshold: 25,
            area_fraction: 0.01,
            learning_rate: 0.05,
            warmup_frames: 5,
            pre_roll: 10,
            post_roll: 10,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), VisionError> {
        if !(self.area_fraction > 0.0 && self.area_fraction <= 1.0) {
            return Err(VisionError::InvalidConfig("area_fraction must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(VisionError::InvalidConfig("learning_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Inclusive pixel extents of the changed region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u16,
    pub y_min: u16,
    pub x_max: u16,
    pub y_max: u16,
}

impl BoundingBox {
    pub fn contains(&self, x: u16, y: u16) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionEvent {
    pub frame_index: u64,
    pub changed_fraction: f64,
    pub bbox: BoundingBox,
}

/// Frames surrounding one motion event: pre-roll, trigger, post-roll.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub event: MotionEvent,
}

impl Clip {
    pub fn first_frame_index(&self) -> u64 {
        self.frames.first().map_or(0, |f| f.frame_index)
    }

    pub fn to_container(&self) -> Vec<u8> {
        encode_clip(&self.frames)
    }
}

#[derive(Clone, Debug)]
struct OpenClip {
    frames: Vec<Frame>,
    event: MotionEvent,
    // trigger frame plus post-roll still to collect
    remaining: usize,
}

/// Rolling pre-roll buffer plus at most one clip under construction.
///
/// Call [`ClipBuffer::extract_clip`] with the event produced for a frame
/// *before* pushing that frame; the pushed frame then becomes the trigger.
/// Triggers that arrive while a clip is still collecting post-roll are
/// folded into that clip.
#[derive(Clone, Debug)]
pub struct ClipBuffer {
    pre_roll: usize,
    post_roll: usize,
    ring: VecDeque<Frame>,
    open: Option<OpenClip>,
}

impl ClipBuffer {
    pub fn new(pre_roll: usize, post_roll: usize) -> Self {
        Self {
            pre_roll,
            post_roll,
            ring: VecDeque::with_capacity(pre_roll + 1),
            open: None,
        }
    }

    pub fn push_frame(&mut self, frame: Frame) -> Option<Clip> {
        let mut finished = None;
        if let Some(open) = self.open.as_mut() {
            open.frames.push(frame.clone());
            open.remaining -= 1;
            if open.remaining == 0 {
                let open = self.open.take().expect("open clip");
                finished = Some(Clip {
                    frames: open.frames,
                    event: open.event,
                });
            }
        }
        if self.pre_roll > 0 {
            if self.ring.len() == self.pre_roll {
                self.ring.pop_front();
            }
            self.ring.push_back(frame);
        }
        finished
    }

    /// Starts a clip for `event`. Returns `false` when the event is
    /// suppressed because another clip is still collecting frames.
    pub fn extract_clip(&mut self, event: MotionEvent) -> bool {
        if self.open.is_some() {
            return false;
        }
        // Only the contiguous run ending just before the trigger counts as pre-roll.
        let mut pre: Vec<Frame> = Vec::with_capacity(self.ring.len());
        let mut expected = event.frame_index;
        for frame in self.ring.iter().rev() {
            if expected == 0 || frame.frame_index != expected - 1 {
                break;
            }
            expected -= 1;
            pre.push(frame.clone());
        }
        pre.reverse();
        self.open = Some(OpenClip {
            frames: pre,
            event,
            remaining: 1 + self.post_roll,
        });
        true
    }

    /// Closes the open clip early with whatever frames it already holds.
    pub fn finish(&mut self) -> Option<Clip> {
        let open = self.open.take()?;
        // A clip that never received its trigger frame has nothing worth keeping.
        if open.remaining > self.post_roll {
            return None;
        }
        Some(Clip {
            frames: open.frames,
            event: open.event,
        })
    }

    pub fn is_recording(&self) -> bool {
        self.open.is_some()
    }

    pub fn buffered(&self) -> impl Iterator<Item = &Frame> {
        self.ring.iter()
    }

    pub fn capacity(&self) -> usize {
        self.pre_roll
    }
}

/// Background model and clip buffer driven together over one frame stream.
#[derive(Clone, Debug)]
pub struct MotionDetector {
    cfg: DetectorConfig,
    model: Option<BackgroundModel>,
    clips: ClipBuffer,
}

/// What one frame produced: a newly opened event and/or a completed clip.
#[derive(Debug, Default)]
pub struct DetectorOutput {
    pub event: Option<MotionEvent>,
    pub clip: Option<Clip>,
}

impl MotionDetector {
    pub fn new(cfg: DetectorConfig) -> Self {
        let clips = ClipBuffer::new(cfg.pre_roll, cfg.post_roll);
        Self {
            cfg,
            model: None,
            clips,
        }
    }

    pub fn model(&self) -> Option<&BackgroundModel> {
        self.model.as_ref()
    }

    /// Forgets the background; the next frame becomes the new reference.
    pub fn reset_background(&mut self) {
        self.model = None;
    }

    pub fn process(&mut self, frame: Frame) -> Result<DetectorOutput, VisionError> {
        let mut out = DetectorOutput::default();
        match self.model.as_mut() {
            None => self.model = Some(init_background(&frame)),
            Some(model) => {
                if model.width != frame.width || model.height != frame.height {
                    return Err(VisionError::DimensionMismatch {
                        width: model.width,
                        height: model.height,
                        got_width: frame.width,
                        got_height: frame.height,
                    });
                }
                if let Some(event) = model.observe(&frame, &self.cfg)? {
                    if self.clips.extract_clip(event.clone()) {
                        out.event = Some(event);
                    }
                }
            }
        }
        out.clip = self.clips.push_frame(frame);
        Ok(out)
    }

    /// Flushes a partially collected clip, e.g. when detection is stopped.
    pub fn finish(&mut self) -> Option<Clip> {
        self.clips.finish()
    }
}

pub const CLIP_MAGIC: &[u8; 4] = b"SVC1";
const CLIP_HEADER_LEN: usize = 4 + 2 + 2 + 4 + 8;

/// Serializes contiguous, equally sized frames into an `SVC1` container.
///
/// Layout (big-endian): magic | width u16 | height u16 | frame_count u32 |
/// first_frame_index u64 | per frame: timestamp_ms u64, raw pixels.
pub fn encode_clip(frames: &[Frame]) -> Vec<u8> {
    let (width, height) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    let frame_len = width as usize * height as usize;
    let mut out = Vec::with_capacity(CLIP_HEADER_LEN + frames.len() * (8 + frame_len));
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&width.to_be_bytes());
    out.extend_from_slice(&height.to_be_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_be_bytes());
    out.extend_from_slice(&frames.first().map_or(0, |f| f.frame_index).to_be_bytes());
    for frame in frames {
        out.extend_from_slice(&frame.timestamp_ms.to_be_bytes());
        out.extend_from_slice(&frame.pixels);
    }
    out
}

pub fn decode_clip(bytes: &[u8]) -> Result<Vec<Frame>, VisionError> {
    if bytes.len() < CLIP_HEADER_LEN {
        return Err(VisionError::MalformedClip("truncated header"));
    }
    if &bytes[..4] != CLIP_MAGIC {
        return Err(VisionError::MalformedClip("bad magic"));
    }
    let width = u16::from_be_bytes([bytes[4], bytes[5]]);
    let height = u16::from_be_bytes([bytes[6], bytes[7]]);
    let count = u32::from_be_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let first = u64::from_be_bytes(bytes[12..20].try_into().unwrap());
    let frame_len = width as usize * height as usize;
    let body = &bytes[CLIP_HEADER_LEN..];
    if body.len() != count * (8 + frame_len) {
        return Err(VisionError::MalformedClip("frame data length mismatch"));
    }
    if count > 0 && frame_len == 0 {
        return Err(VisionError::MalformedClip("zero-sized frames"));
    }
    body.chunks_exact(8 + frame_len.max(1))
        .take(count)
        .enumerate()
        .map(|(i, chunk)| {
            let ts = u64::from_be_bytes(chunk[..8].try_into().unwrap());
            Frame::new(width, height, chunk[8..].to_vec(), first + i as u64, ts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DetectorConfig {
        DetectorConfig::default()
    }

    /// Brute-force count of pixels differing from a constant background.
    fn count_changed(frame: &Frame, bg: u8, threshold: u8) -> (usize, Option<BoundingBox>) {
        let mut n = 0;
        let mut bb: Option<BoundingBox> = None;
        for y in 0..frame.height() as usize {
            for x in 0..frame.width() as usize {
                if (frame.pixel(x, y) as i32 - bg as i32).abs() > threshold as i32 {
                    n += 1;
                    let (x, y) = (x as u16, y as u16);
                    bb = Some(match bb {
                        None => BoundingBox { x_min: x, y_min: y, x_max: x, y_max: y },
                        Some(b) => BoundingBox {
                            x_min: b.x_min.min(x),
                            y_min: b.y_min.min(y),
                            x_max: b.x_max.max(x),
                            y_max: b.y_max.max(y),
                        },
                    });
                }
            }
        }
        (n, bb)
    }

    fn block_frame(size: usize, at: (usize, usize), index: u64) -> Frame {
        let mut f = Frame::filled(64, 64, 50, index).unwrap();
        for y in at.1..at.1 + size {
            for x in at.0..at.0 + size {
                f.set_pixel(x, y, 255);
            }
        }
        f
    }

    fn warmed_model() -> BackgroundModel {
        let mut model = init_background(&Frame::filled(64, 64, 50, 0).unwrap());
        for i in 1..=10 {
            assert!(model.observe(&Frame::filled(64, 64, 50, i).unwrap(), &cfg()).unwrap().is_none());
        }
        model
    }

    #[test]
    fn frame_rejects_bad_dimensions() {
        assert!(matches!(Frame::new(0, 0, vec![], 0, 0), Err(VisionError::EmptyFrame { .. })));
        assert!(matches!(Frame::new(2, 2, vec![0; 3], 0, 0), Err(VisionError::PixelCount { .. })));
    }

    #[test]
    fn init_copies_frame() {
        let model = init_background(&Frame::filled(8, 8, 50, 0).unwrap());
        assert!(model.mean().iter().all(|&m| m == 50.0));
        assert_eq!(model.frames_seen(), 1);
    }

    #[test]
    fn identical_frame_no_event() {
        let model = warmed_model();
        let (event, _) = detect(&model, &Frame::filled(64, 64, 50, 11).unwrap(), &cfg()).unwrap();
        assert!(event.is_none());
    }

    #[test]
    fn eight_block_triggers_with_exact_bbox() {
        let model = warmed_model();
        let frame = block_frame(8, (20, 30), 11);
        let (n, bb) = count_changed(&frame, 50, 25);
        assert_eq!(n, 64);
        let (event, _) = detect(&model, &frame, &cfg()).unwrap();
        let event = event.expect("8x8 block should trigger");
        assert_eq!(event.changed_fraction, n as f64 / 4096.0);
        assert_eq!(event.changed_fraction, 0.015625);
        assert_eq!(Some(event.bbox), bb);
        assert_eq!(event.bbox, BoundingBox { x_min: 20, y_min: 30, x_max: 27, y_max: 37 });
    }

    #[test]
    fn four_block_below_area_threshold_still_updates() {
        let model = warmed_model();
        let frame = block_frame(4, (0, 0), 11);
        let (n, _) = count_changed(&frame, 50, 25);
        assert_eq!(n as f64 / 4096.0, 0.00390625);
        let (event, next) = detect(&model, &frame, &cfg()).unwrap();
        assert!(event.is_none());
        assert_eq!(next.frames_seen(), model.frames_seen() + 1);
        assert!((next.mean()[0] - (0.95 * 50.0 + 0.05 * 255.0)).abs() < 1e-12);
    }

    #[test]
    fn warmup_suppresses_events() {
        let mut model = init_background(&Frame::filled(64, 64, 50, 0).unwrap());
        let c = cfg();
        // frames_seen runs 1..=5 here: all inside warmup
        for i in 1..=5 {
            let f = if i % 2 == 0 { block_frame(16, (0, 0), i) } else { Frame::filled(64, 64, 50, i).unwrap() };
            assert!(model.observe(&f, &c).unwrap().is_none());
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let model = init_background(&Frame::filled(8, 8, 0, 0).unwrap());
        assert!(matches!(
            detect(&model, &Frame::filled(9, 8, 0, 1).unwrap(), &cfg()),
            Err(VisionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_reference() {
        let c = DetectorConfig { learning_rate: 0.0, ..cfg() };
        let mut model = init_background(&Frame::filled(16, 16, 50, 0).unwrap());
        for i in 1..50 {
            model.observe(&Frame::filled(16, 16, 200, i).unwrap(), &c).unwrap();
        }
        assert!(model.mean().iter().all(|&m| m == 50.0));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(DetectorConfig { area_fraction: 0.0, ..cfg() }.validate().is_err());
        assert!(DetectorConfig { area_fraction: 1.5, ..cfg() }.validate().is_err());
        assert!(DetectorConfig { learning_rate: -0.1, ..cfg() }.validate().is_err());
    }

    fn frame(i: u64) -> Frame {
        Frame::new(2, 2, vec![i as u8; 4], i, i * 100).unwrap()
    }

    fn event(i: u64) -> MotionEvent {
        MotionEvent {
            frame_index: i,
            changed_fraction: 0.5,
            bbox: BoundingBox { x_min: 0, y_min: 0, x_max: 1, y_max: 1 },
        }
    }

    #[test]
    fn ring_keeps_last_pre_roll_frames() {
        let mut ring = ClipBuffer::new(10, 10);
        ring.push_frame(frame(1));
        assert_eq!(ring.buffered().count(), 1);
        for i in 2..=15 {
            ring.push_frame(frame(i));
        }
        let held: Vec<u64> = ring.buffered().map(|f| f.frame_index).collect();
        assert_eq!(held, (6..=15).collect::<Vec<_>>());
        for i in 16..10_016 {
            ring.push_frame(frame(i));
            assert!(ring.buffered().count() <= ring.capacity());
        }
    }

    fn run_clip(trigger: u64, extra_triggers: &[u64]) -> Vec<Clip> {
        let mut ring = ClipBuffer::new(10, 10);
        let mut clips = Vec::new();
        for i in 0..=trigger + 30 {
            if i == trigger || extra_triggers.contains(&i) {
                ring.extract_clip(event(i));
            }
            clips.extend(ring.push_frame(frame(i)));
        }
        clips
    }

    #[test]
    fn clip_spans_pre_trigger_post() {
        let clips = run_clip(100, &[]);
        assert_eq!(clips.len(), 1);
        let idx: Vec<u64> = clips[0].frames.iter().map(|f| f.frame_index).collect();
        assert_eq!(idx, (90..=110).collect::<Vec<_>>());
    }

    #[test]
    fn young_stream_truncates_pre_roll() {
        let clips = run_clip(3, &[]);
        let idx: Vec<u64> = clips[0].frames.iter().map(|f| f.frame_index).collect();
        assert_eq!(idx, (0..=13).collect::<Vec<_>>());
    }

    #[test]
    fn trigger_during_post_roll_is_folded() {
        // Replaying the two-trigger sequence by hand: the second trigger at 105
        // lands inside the 101..=110 post-roll window, so only one clip results.
        let clips = run_clip(100, &[105]);
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].event.frame_index, 100);
        // A trigger after the window closes opens a new clip.
        assert_eq!(run_clip(100, &[111]).len(), 2);
    }

    #[test]
    fn finish_returns_partial_clip() {
        let mut ring = ClipBuffer::new(2, 10);
        for i in 0..5 {
            ring.push_frame(frame(i));
        }
        ring.extract_clip(event(5));
        assert!(ring.finish().is_none(), "no trigger frame yet");
        ring.extract_clip(event(5));
        ring.push_frame(frame(5));
        ring.push_frame(frame(6));
        let clip = ring.finish().unwrap();
        let idx: Vec<u64> = clip.frames.iter().map(|f| f.frame_index).collect();
        assert_eq!(idx, vec![3, 4, 5, 6]);
        assert!(!ring.is_recording());
    }

    #[test]
    fn container_layout_is_exact() {
        let frames = vec![
            Frame::new(2, 1, vec![1, 2], 7, 0x0102).unwrap(),
            Frame::new(2, 1, vec![3, 4], 8, 0x0304).unwrap(),
        ];
        let bytes = encode_clip(&frames);
        let expected: Vec<u8> = [
            b"SVC1".as_slice(),
            &[0, 2, 0, 1],
            &[0, 0, 0, 2],
            &[0, 0, 0, 0, 0, 0, 0, 7],
            &[0, 0, 0, 0, 0, 0, 1, 2],
            &[1, 2],
            &[0, 0, 0, 0, 0, 0, 3, 4],
            &[3, 4],
        ]
        .concat();
        assert_eq!(bytes, expected);
        assert_eq!(decode_clip(&bytes).unwrap(), frames);
    }

    #[test]
    fn container_rejects_garbage() {
        assert!(decode_clip(b"SVC").is_err());
        assert!(decode_clip(b"XXXX\0\x01\0\x01\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
        let mut bytes = encode_clip(&[frame(1)]);
        bytes.pop();
        assert!(decode_clip(&bytes).is_err());
    }

    #[test]
    fn detector_emits_event_then_clip() {
        let c = DetectorConfig { pre_roll: 2, post_roll: 2, ..cfg() };
        let mut det = MotionDetector::new(c);
        let mut events = vec![];
        let mut clips = vec![];
        for i in 0..20u64 {
            let f = if i == 10 { block_frame(8, (0, 0), i) } else { Frame::filled(64, 64, 50, i).unwrap() };
            let out = det.process(f).unwrap();
            events.extend(out.event);
            clips.extend(out.clip);
        }
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].frame_index, 10);
        assert_eq!(clips.len(), 1);
        let idx: Vec<u64> = clips[0].frames.iter().map(|f| f.frame_index).collect();
        assert_eq!(idx, vec![8, 9, 10, 11, 12]);
    }
}
