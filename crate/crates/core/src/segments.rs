//! Contiguous partitions of a frame sequence into segments (subshots).

use std::ops::Range;

use crate::dpp::SubsetSelection;
use crate::error::{Error, Result};

/// Segment end indices (exclusive), strictly increasing, last == number of frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    ends: Vec<usize>,
}

impl Segmentation {
    pub fn new(ends: Vec<usize>, n_frames: usize) -> Result<Self> {
        if ends.is_empty() {
            return Err(Error::InvalidSegmentation("no segments".into()));
        }
        let mut prev = 0;
        for &e in &ends {
            if e <= prev {
                return Err(Error::InvalidSegmentation(format!(
                    "segment ends must be strictly increasing and positive, found {e} after {prev}"
                )));
            }
            prev = e;
        }
        if prev != n_frames {
            return Err(Error::InvalidSegmentation(format!(
                "last segment ends at {prev}, sequence has {n_frames} frames"
            )));
        }
        Ok(Segmentation { ends })
    }

    /// Fixed-length segments; the last may be shorter.
    pub fn uniform(n_frames: usize, segment_len: usize) -> Result<Self> {
        if segment_len == 0 {
            return Err(Error::InvalidArgument("segment length must be >= 1".into()));
        }
        if n_frames == 0 {
            return Err(Error::InvalidSegmentation("no frames to segment".into()));
        }
        let ends = (1..=n_frames.div_ceil(segment_len))
            .map(|k| (k * segment_len).min(n_frames))
            .collect();
        Ok(Segmentation { ends })
    }

    /// One segment per frame.
    pub fn singletons(n_frames: usize) -> Result<Self> {
        Self::uniform(n_frames, 1)
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn n_frames(&self) -> usize {
        *self.ends.last().expect("segmentation is non-empty")
    }

    pub fn range(&self, segment: usize) -> Range<usize> {
        let start = if segment == 0 { 0 } else { self.ends[segment - 1] };
        start..self.ends[segment]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.len()).map(move |s| self.range(s))
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.ranges().map(|r| r.len()).collect()
    }

    pub fn segment_of(&self, frame: usize) -> Option<usize> {
        if frame >= self.n_frames() {
            return None;
        }
        Some(self.ends.partition_point(|&e| e <= frame))
    }

    /// Middle frame of each selected segment.
    pub fn middle_frames(&self, segments: &SubsetSelection) -> Result<SubsetSelection> {
        self.check_segment_subset(segments)?;
        let frames = segments
            .indices()
            .iter()
            .map(|&s| {
                let r = self.range(s);
                r.start + (r.len() - 1) / 2
            })
            .collect();
        SubsetSelection::new(frames, self.n_frames())
    }

    /// A segment is selected iff it contains at least one summary frame.
    pub fn frames_to_segments(&self, frames: &SubsetSelection) -> Result<SubsetSelection> {
        if frames.ground_size() != self.n_frames() {
            return Err(Error::DimensionMismatch {
                context: "frame summary vs segmentation",
                expected: self.n_frames(),
                found: frames.ground_size(),
            });
        }
        let segs = frames
            .indices()
            .iter()
            .map(|&f| self.segment_of(f).expect("validated frame index"))
            .collect();
        SubsetSelection::from_unsorted(segs, self.len())
    }

    /// All frames of the selected segments.
    pub fn segments_to_frames(&self, segments: &SubsetSelection) -> Result<SubsetSelection> {
        self.check_segment_subset(segments)?;
        let frames = segments
            .indices()
            .iter()
            .flat_map(|&s| self.range(s))
            .collect();
        SubsetSelection::new(frames, self.n_frames())
    }

    fn check_segment_subset(&self, segments: &SubsetSelection) -> Result<()> {
        if segments.ground_size() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "segment selection vs segmentation",
                expected: self.len(),
                found: segments.ground_size(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_segments() {
        assert_eq!(Segmentation::uniform(10, 10).unwrap().ends(), &[10]);
        assert_eq!(Segmentation::uniform(10, 4).unwrap().ends(), &[4, 8, 10]);
        assert_eq!(Segmentation::uniform(3, 5).unwrap().ends(), &[3]);
        assert!(Segmentation::uniform(3, 0).is_err());
    }

    #[test]
    fn validation() {
        assert!(Segmentation::new(vec![], 0).is_err());
        assert!(Segmentation::new(vec![2, 2, 4], 4).is_err());
        assert!(Segmentation::new(vec![2, 3], 4).is_err());
        assert!(Segmentation::new(vec![0, 4], 4).is_err());
    }

    #[test]
    fn frame_segment_conversion() {
        let s = Segmentation::new(vec![2, 5, 6], 6).unwrap();
        let f = SubsetSelection::new(vec![0, 1], 6).unwrap();
        assert_eq!(s.frames_to_segments(&f).unwrap().indices(), &[0]);
        let f = SubsetSelection::new(vec![], 6).unwrap();
        assert!(s.frames_to_segments(&f).unwrap().is_empty());
        let single = Segmentation::singletons(4).unwrap();
        let f = SubsetSelection::new(vec![1, 3], 4).unwrap();
        assert_eq!(single.frames_to_segments(&f).unwrap(), f);

        let seg = SubsetSelection::new(vec![1, 2], 3).unwrap();
        assert_eq!(s.middle_frames(&seg).unwrap().indices(), &[3, 5]);
        assert_eq!(s.segments_to_frames(&seg).unwrap().indices(), &[2, 3, 4, 5]);
        assert_eq!(s.segment_of(4), Some(1));
        assert_eq!(s.segment_of(6), None);
    }
}
