//! Shot-boundary stub: split a stream into clips where the cosine distance
//! between consecutive frame-mean tokens exceeds a threshold. Stands in for
//! a real boundary detector; each clip is tokenized independently.

use crate::error::Result;
use crate::svr::FrameTokenStream;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn frame_mean(stream: &FrameTokenStream, t: usize) -> Vec<f64> {
    let (n, c) = (stream.tokens_per_frame(), stream.channels());
    let frame = stream.frame(t);
    let mut mean = vec![0.0; c];
    for p in 0..n {
        for ch in 0..c {
            mean[ch] += frame.data()[p * c + ch];
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    mean
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        // Featureless frames never open a boundary.
        return 0.0;
    }
    1.0 - dot / (na * nb)
}

/// Frame indices that start a new clip (frame 0 is always a clip start).
pub fn boundaries(stream: &FrameTokenStream, threshold: f64) -> Vec<usize> {
    let mut starts = vec![0];
    let mut prev = frame_mean(stream, 0);
    for t in 1..stream.frames() {
        let cur = frame_mean(stream, t);
        if cosine_distance(&prev, &cur) > threshold {
            starts.push(t);
        }
        prev = cur;
    }
    starts
}

/// Split into clips at the boundaries. The concatenation of the clips is
/// the original stream.
pub fn split_clips(stream: &FrameTokenStream, threshold: f64) -> Result<Vec<FrameTokenStream>> {
    let starts = boundaries(stream, threshold);
    let (n, c) = (stream.tokens_per_frame(), stream.channels());
    let mut clips = Vec::with_capacity(starts.len());
    for (i, &start) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(stream.frames());
        let data = stream.tokens().data()[start * n * c..end * n * c].to_vec();
        clips.push(FrameTokenStream::from_vec(end - start, n, c, data)?);
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Two scenes with opposite mean directions.
    fn two_scene_stream() -> FrameTokenStream {
        let (t, n, c) = (6, 4, 8);
        let mut rng = Rng::new(3);
        let mut data = Vec::new();
        for frame in 0..t {
            let sign = if frame < 3 { 1.0 } else { -1.0 };
            for _ in 0..n {
                for ch in 0..c {
                    let base = if ch == 0 { sign } else { 0.0 };
                    data.push(base + 0.01 * rng.next_normal());
                }
            }
        }
        FrameTokenStream::from_vec(t, n, c, data).unwrap()
    }

    #[test]
    fn detects_the_scene_cut() {
        let stream = two_scene_stream();
        assert_eq!(boundaries(&stream, 0.5), vec![0, 3]);
    }

    #[test]
    fn uniform_stream_is_one_clip() {
        let mut rng = Rng::new(8);
        let frame: Vec<f64> = (0..4 * 8).map(|_| rng.next_normal()).collect();
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&frame);
        }
        let stream = FrameTokenStream::from_vec(5, 4, 8, data).unwrap();
        let clips = split_clips(&stream, 0.5).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].frames(), 5);
    }

    #[test]
    fn clips_concatenate_back_to_the_stream() {
        let stream = two_scene_stream();
        let clips = split_clips(&stream, 0.5).unwrap();
        assert_eq!(clips.len(), 2);
        let mut joined = Vec::new();
        for clip in &clips {
            joined.extend_from_slice(clip.tokens().data());
        }
        assert_eq!(joined, stream.tokens().data());
    }

    #[test]
    fn zero_frames_do_not_split() {
        let stream = FrameTokenStream::from_vec(3, 2, 4, vec![0.0; 24]).unwrap();
        assert_eq!(boundaries(&stream, 0.5), vec![0]);
    }
}
