//! Disjoint temporal RoPE index ranges for the video roles of a
//! conditioning sequence.
//!
//! For a segment length `T`, the target occupies `[0, T)`, the user-input
//! (or, for text editing, the immediately preceding segment) `[T, 2T)`, and
//! memory `[2T, 3T)`. The long-video inference variant reverses the
//! per-frame index order within the previous and memory ranges; range
//! bounds stay fixed, so the reversal is an involution. Spatial indices are
//! out of scope (they are unchanged by the layout).

use crate::cache::Task;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RopeError {
    #[error("role {0:?} not present in layout")]
    RoleNotInLayout(RopeRole),
    #[error("frame {frame} out of range for segment length {segment_length}")]
    FrameOutOfRange { frame: u64, segment_length: u64 },
    #[error("memory video {video} out of range ({available} memory ranges)")]
    MemoryVideoOutOfRange { video: u32, available: usize },
}

/// Role of a video in the temporal index layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeRole {
    Target,
    UserInput,
    /// The immediately preceding segment (text-edit layouts).
    Previous,
    Memory,
}

impl std::fmt::Display for RopeRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RopeRole::Target => write!(f, "target"),
            RopeRole::UserInput => write!(f, "user_input"),
            RopeRole::Previous => write!(f, "previous"),
            RopeRole::Memory => write!(f, "memory"),
        }
    }
}

/// How several simultaneously conditioned memory videos map onto temporal
/// indices: `Shared` (frame t of every memory video gets the same index,
/// the single 3T budget) or `Stacked` (each memory video extends the range
/// by another T).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemLayout {
    #[default]
    Shared,
    Stacked,
}

/// One half-open index range assigned to a role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RopeRange {
    pub role: RopeRole,
    /// Ordinal of the memory video for stacked layouts; `None` for shared
    /// ranges and non-memory roles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_index: Option<u32>,
    pub start: u64,
    pub end: u64,
}

/// Temporal RoPE index assignment for one conditioning sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopeRanges {
    pub task: Task,
    pub segment_length: u64,
    pub ranges: Vec<RopeRange>,
    /// When set (text-edit inference), frame order within the previous and
    /// memory ranges is reversed.
    pub reversed_memory: bool,
}

/// Novel-view layout: target `[0, T)`, user input `[T, 2T)`, memory `[2T, 3T)`.
pub fn layout_nvs(segment_length: u64) -> RopeRanges {
    layout_nvs_with(segment_length, 1, MemLayout::Shared)
}

/// Novel-view layout with an explicit memory arrangement. `Shared` keeps a
/// single memory range regardless of `n_memory_videos`; `Stacked` appends
/// one length-T range per memory video.
pub fn layout_nvs_with(segment_length: u64, n_memory_videos: u32, mem_layout: MemLayout) -> RopeRanges {
    assert!(segment_length >= 1, "segment length must be at least 1");
    let t = segment_length;
    let mut ranges = vec![
        RopeRange { role: RopeRole::Target, mem_index: None, start: 0, end: t },
        RopeRange { role: RopeRole::UserInput, mem_index: None, start: t, end: 2 * t },
    ];
    match mem_layout {
        MemLayout::Shared => {
            ranges.push(RopeRange { role: RopeRole::Memory, mem_index: None, start: 2 * t, end: 3 * t });
        }
        MemLayout::Stacked => {
            for m in 0..n_memory_videos.max(1) {
                let start = (2 + u64::from(m)) * t;
                ranges.push(RopeRange { role: RopeRole::Memory, mem_index: Some(m), start, end: start + t });
            }
        }
    }
    RopeRanges { task: Task::NovelView, segment_length: t, ranges, reversed_memory: false }
}

/// Text-edit layout: target `[0, T)`, previous segment `[T, 2T)`, memory
/// `[2T, 3T)`. With `reversed_for_inference`, frame f of the previous and
/// memory ranges maps to `end - 1 - f` instead of `start + f`.
pub fn layout_edit(segment_length: u64, reversed_for_inference: bool) -> RopeRanges {
    assert!(segment_length >= 1, "segment length must be at least 1");
    let t = segment_length;
    RopeRanges {
        task: Task::TextEdit,
        segment_length: t,
        ranges: vec![
            RopeRange { role: RopeRole::Target, mem_index: None, start: 0, end: t },
            RopeRange { role: RopeRole::Previous, mem_index: None, start: t, end: 2 * t },
            RopeRange { role: RopeRole::Memory, mem_index: None, start: 2 * t, end: 3 * t },
        ],
        reversed_memory: reversed_for_inference,
    }
}

fn frame_to_index(layout: &RopeRanges, range: &RopeRange, frame: u64) -> Result<u64, RopeError> {
    if frame >= layout.segment_length {
        return Err(RopeError::FrameOutOfRange { frame, segment_length: layout.segment_length });
    }
    let reversed = layout.reversed_memory
        && matches!(range.role, RopeRole::Previous | RopeRole::Memory);
    Ok(if reversed { range.end - 1 - frame } else { range.start + frame })
}

/// Temporal index of `frame` under `role`. For stacked layouts with more
/// than one memory range, use [`index_of_memory_video`].
pub fn index_of(layout: &RopeRanges, role: RopeRole, frame: u64) -> Result<u64, RopeError> {
    let matching: Vec<&RopeRange> = layout.ranges.iter().filter(|r| r.role == role).collect();
    match matching.as_slice() {
        [] => Err(RopeError::RoleNotInLayout(role)),
        [range] => frame_to_index(layout, range, frame),
        _ => Err(RopeError::MemoryVideoOutOfRange { video: 0, available: matching.len() }),
    }
}

/// Temporal index of `frame` of memory video `video` (0-based). Shared
/// layouts give every memory video the same mapping.
pub fn index_of_memory_video(layout: &RopeRanges, video: u32, frame: u64) -> Result<u64, RopeError> {
    let memory: Vec<&RopeRange> = layout.ranges.iter().filter(|r| r.role == RopeRole::Memory).collect();
    if memory.is_empty() {
        return Err(RopeError::RoleNotInLayout(RopeRole::Memory));
    }
    let range = if memory.len() == 1 && memory[0].mem_index.is_none() {
        memory[0]
    } else {
        memory
            .iter()
            .find(|r| r.mem_index == Some(video))
            .ok_or(RopeError::MemoryVideoOutOfRange { video, available: memory.len() })?
    };
    frame_to_index(layout, range, frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nvs_layout_81_frame_ranges() {
        let layout = layout_nvs(81);
        let spans: Vec<(RopeRole, u64, u64)> =
            layout.ranges.iter().map(|r| (r.role, r.start, r.end)).collect();
        assert_eq!(
            spans,
            vec![
                (RopeRole::Target, 0, 81),
                (RopeRole::UserInput, 81, 162),
                (RopeRole::Memory, 162, 243),
            ]
        );
        assert!(!layout.reversed_memory);
    }

    #[test]
    fn nvs_layout_t_one() {
        let layout = layout_nvs(1);
        let spans: Vec<(u64, u64)> = layout.ranges.iter().map(|r| (r.start, r.end)).collect();
        assert_eq!(spans, vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn layouts_cover_three_t_without_gaps() {
        for t in 1..=1024u64 {
            for layout in [layout_nvs(t), layout_edit(t, false), layout_edit(t, true)] {
                let mut covered = vec![false; (3 * t) as usize];
                for range in &layout.ranges {
                    assert_eq!(range.end - range.start, t);
                    for i in range.start..range.end {
                        assert!(!covered[i as usize], "index {i} covered twice at T={t}");
                        covered[i as usize] = true;
                    }
                }
                assert!(covered.iter().all(|&c| c), "gap in coverage at T={t}");
            }
        }
    }

    #[test]
    fn edit_reversal_memory_mapping() {
        let off = layout_edit(3, false);
        assert_eq!(index_of(&off, RopeRole::Memory, 0).unwrap(), 6);
        let on = layout_edit(3, true);
        assert_eq!(index_of(&on, RopeRole::Memory, 0).unwrap(), 8);
        assert_eq!(index_of(&on, RopeRole::Memory, 2).unwrap(), 6);
        // Previous range reverses too; the target never does.
        assert_eq!(index_of(&on, RopeRole::Previous, 0).unwrap(), 5);
        assert_eq!(index_of(&on, RopeRole::Target, 0).unwrap(), 0);
    }

    #[test]
    fn reversal_is_an_involution() {
        for t in 1..=64u64 {
            let forward = layout_edit(t, false);
            let reversed = layout_edit(t, true);
            for role in [RopeRole::Previous, RopeRole::Memory] {
                let mut seen_forward: Vec<u64> = Vec::new();
                let mut seen_reversed: Vec<u64> = Vec::new();
                for f in 0..t {
                    let idx = index_of(&reversed, role, f).unwrap();
                    // Applying the frame->index reversal twice is the
                    // identity: map back through the reversed layout.
                    let range = reversed.ranges.iter().find(|r| r.role == role).unwrap();
                    let back = range.end - 1 - idx + range.start;
                    assert_eq!(back, index_of(&forward, role, f).unwrap());
                    seen_forward.push(index_of(&forward, role, f).unwrap());
                    seen_reversed.push(idx);
                }
                // The reversal permutes each role's index set in place.
                seen_forward.sort_unstable();
                seen_reversed.sort_unstable();
                assert_eq!(seen_forward, seen_reversed);
            }
        }
    }

    #[test]
    fn index_of_table_for_t_four() {
        let layout = layout_nvs(4);
        let mut table = Vec::new();
        for role in [RopeRole::Target, RopeRole::UserInput, RopeRole::Memory] {
            for frame in 0..4 {
                table.push(index_of(&layout, role, frame).unwrap());
            }
        }
        assert_eq!(table, (0..12).collect::<Vec<u64>>());
    }

    #[test]
    fn index_of_nvs_endpoints() {
        let layout = layout_nvs(81);
        assert_eq!(index_of(&layout, RopeRole::Target, 0).unwrap(), 0);
        assert_eq!(index_of(&layout, RopeRole::Memory, 80).unwrap(), 242);
    }

    #[test]
    fn index_of_is_injective_over_roles_and_frames() {
        for layout in [layout_nvs(7), layout_edit(7, false), layout_edit(7, true)] {
            let roles: Vec<RopeRole> = layout.ranges.iter().map(|r| r.role).collect();
            let mut seen = std::collections::BTreeSet::new();
            for role in roles {
                for frame in 0..7 {
                    assert!(seen.insert(index_of(&layout, role, frame).unwrap()));
                }
            }
            assert_eq!(seen.len(), 21);
        }
    }

    #[test]
    fn index_of_errors() {
        let layout = layout_nvs(4);
        assert!(matches!(
            index_of(&layout, RopeRole::Previous, 0),
            Err(RopeError::RoleNotInLayout(RopeRole::Previous))
        ));
        assert!(matches!(
            index_of(&layout, RopeRole::Target, 4),
            Err(RopeError::FrameOutOfRange { frame: 4, segment_length: 4 })
        ));
    }

    #[test]
    fn stacked_memory_layout_extends_ranges() {
        let layout = layout_nvs_with(5, 3, MemLayout::Stacked);
        assert_eq!(layout.ranges.len(), 5);
        assert_eq!(index_of_memory_video(&layout, 0, 0).unwrap(), 10);
        assert_eq!(index_of_memory_video(&layout, 1, 0).unwrap(), 15);
        assert_eq!(index_of_memory_video(&layout, 2, 4).unwrap(), 24);
        assert!(matches!(
            index_of_memory_video(&layout, 3, 0),
            Err(RopeError::MemoryVideoOutOfRange { video: 3, .. })
        ));
        // index_of on the bare Memory role is ambiguous here.
        assert!(index_of(&layout, RopeRole::Memory, 0).is_err());
    }

    #[test]
    fn shared_memory_layout_maps_all_videos_alike() {
        let layout = layout_nvs(5);
        for video in 0..4 {
            assert_eq!(index_of_memory_video(&layout, video, 2).unwrap(), 12);
        }
    }

    #[test]
    fn layout_serde_roundtrip() {
        let layout = layout_edit(81, true);
        let json = serde_json::to_string(&layout).unwrap();
        let back: RopeRanges = serde_json::from_str(&json).unwrap();
        assert_eq!(layout, back);
    }
}
