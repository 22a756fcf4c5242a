//! Time intervals, transcripts and subtitle-based segmentation.
//!
//! A transcript produced by a speech recognizer is a list of timed subtitle
//! segments. Segmentation turns every segment into exactly one [`Clip`] that
//! shares the segment's interval, so the visual and aural streams operate on
//! the same set of interval identities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("invalid interval [{start}, {end}]: start must be finite and non-negative")]
    InvalidStart { start: f64, end: f64 },
    #[error("degenerate interval [{start}, {end}]: end must be greater than start")]
    DegenerateInterval { start: f64, end: f64 },
    #[error("malformed transcript: {0}")]
    Malformed(String),
    #[error("segment {index}: missing required field `{field}`")]
    MissingField { index: usize, field: &'static str },
    #[error("segment {index}: {source}")]
    Segment {
        index: usize,
        #[source]
        source: Box<TimelineError>,
    },
}

/// A closed span `[start_s, end_s]` in seconds with strictly positive duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeInterval {
    start_s: f64,
    end_s: f64,
}

impl TimeInterval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self, TimelineError> {
        if !start_s.is_finite() || start_s < 0.0 {
            return Err(TimelineError::InvalidStart {
                start: start_s,
                end: end_s,
            });
        }
        // `!(a > b)` also rejects NaN
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !end_s.is_finite() || !(end_s > start_s) {
            return Err(TimelineError::DegenerateInterval {
                start: start_s,
                end: end_s,
            });
        }
        Ok(Self { start_s, end_s })
    }

    pub fn start_s(&self) -> f64 {
        self.start_s
    }

    pub fn end_s(&self) -> f64 {
        self.end_s
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Length of the shared span, zero when disjoint.
    pub fn intersection_len(&self, other: &TimeInterval) -> f64 {
        let lo = self.start_s.max(other.start_s);
        let hi = self.end_s.min(other.end_s);
        (hi - lo).max(0.0)
    }
}

impl<'de> Deserialize<'de> for TimeInterval {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            start_s: f64,
            end_s: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        TimeInterval::new(raw.start_s, raw.end_s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtitleSegment {
    pub interval: TimeInterval,
    text: String,
}

impl SubtitleSegment {
    pub fn new(interval: TimeInterval, text: impl AsRef<str>) -> Self {
        Self {
            interval,
            text: text.as_ref().trim().to_string(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub video_id: String,
    pub interval: TimeInterval,
    pub subtitle_text: String,
}

/// Speech-recognizer output for one video, segments ordered by start time.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    video_id: String,
    segments: Vec<SubtitleSegment>,
}

impl Transcript {
    /// Builds a transcript, stable-sorting segments by start time.
    pub fn new(video_id: impl Into<String>, mut segments: Vec<SubtitleSegment>) -> Self {
        segments.sort_by(|a, b| a.interval.start_s.total_cmp(&b.interval.start_s));
        Self {
            video_id: video_id.into(),
            segments,
        }
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn segments(&self) -> &[SubtitleSegment] {
        &self.segments
    }
}

#[derive(Serialize, Deserialize)]
struct TranscriptWire {
    video_id: Option<String>,
    segments: Option<Vec<SegmentWire>>,
}

#[derive(Serialize, Deserialize)]
struct SegmentWire {
    start: Option<f64>,
    end: Option<f64>,
    text: Option<String>,
}

/// Parses the transcript JSON wire format:
/// `{"video_id": "...", "segments": [{"start": s, "end": s, "text": "..."}]}`.
pub fn parse_transcript(raw: &[u8]) -> Result<Transcript, TimelineError> {
    let wire: TranscriptWire =
        serde_json::from_slice(raw).map_err(|e| TimelineError::Malformed(e.to_string()))?;
    let video_id = wire
        .video_id
        .ok_or_else(|| TimelineError::Malformed("missing field `video_id`".into()))?;
    let raw_segments = wire
        .segments
        .ok_or_else(|| TimelineError::Malformed("missing field `segments`".into()))?;

    let mut segments = Vec::with_capacity(raw_segments.len());
    for (index, seg) in raw_segments.into_iter().enumerate() {
        let start = seg
            .start
            .ok_or(TimelineError::MissingField { index, field: "start" })?;
        let end = seg
            .end
            .ok_or(TimelineError::MissingField { index, field: "end" })?;
        let text = seg
            .text
            .ok_or(TimelineError::MissingField { index, field: "text" })?;
        let interval = TimeInterval::new(start, end).map_err(|e| TimelineError::Segment {
            index,
            source: Box::new(e),
        })?;
        segments.push(SubtitleSegment::new(interval, text));
    }
    Ok(Transcript::new(video_id, segments))
}

/// Inverse of [`parse_transcript`].
pub fn serialize_transcript(transcript: &Transcript) -> Vec<u8> {
    let wire = TranscriptWire {
        video_id: Some(transcript.video_id.clone()),
        segments: Some(
            transcript
                .segments
                .iter()
                .map(|s| SegmentWire {
                    start: Some(s.interval.start_s),
                    end: Some(s.interval.end_s),
                    text: Some(s.text.clone()),
                })
                .collect(),
        ),
    };
    serde_json::to_vec(&wire).expect("transcript serialization is infallible")
}

/// One clip per subtitle segment, in transcript order. Clips with empty text
/// are kept since they can still match visually.
pub fn segment_video(transcript: &Transcript) -> Vec<Clip> {
    transcript
        .segments
        .iter()
        .enumerate()
        .map(|(index, seg)| Clip {
            clip_id: clip_id(&transcript.video_id, index),
            video_id: transcript.video_id.clone(),
            interval: seg.interval,
            subtitle_text: seg.text.clone(),
        })
        .collect()
}

pub fn clip_id(video_id: &str, index: usize) -> String {
    format!("{video_id}:{index}")
}
