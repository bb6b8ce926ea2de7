//! Observation windows preceding an action.

/// Frame times observed for an action starting at `start_time`.
///
/// Returns `T = round(τ_o·fps)` times `τ_s − τ_a − τ_o + i/fps`, which cover
/// `[τ_s − (τ_o + τ_a), τ_s − τ_a)`. Times falling before 0 are clamped to 0,
/// so an underflowing window repeats its first frame.
pub fn sample_observation_window(start_time: f64, tau_o: f64, tau_a: f64, fps: f64) -> Vec<f64> {
    let frames = (tau_o * fps).round() as usize;
    let first = start_time - tau_a - tau_o;
    (0..frames).map(|i| (first + i as f64 / fps).max(0.0)).collect()
}

/// Index of the stored frame closest to `time`.
pub fn frame_index(time: f64, fps: f64) -> usize {
    (time * fps).round().max(0.0) as usize
}

/// Label of the frame at `time`, if one was annotated within half a frame period.
pub fn label_at(labels: &[(f64, usize)], time: f64, fps: f64) -> Option<usize> {
    let half = 0.5 / fps;
    labels
        .iter()
        .filter(|(t, _)| (t - time).abs() < half)
        .min_by(|a, b| (a.0 - time).abs().total_cmp(&(b.0 - time).abs()))
        .map(|&(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn ten_second_window_at_one_fps() {
        let w = sample_observation_window(20.0, 10.0, 1.0, 1.0);
        let expected: Vec<f64> = (9..=18).map(f64::from).collect();
        assert!(close(&w, &expected), "{w:?}");
    }

    #[test]
    fn single_frame() {
        assert!(close(&sample_observation_window(2.0, 1.0, 1.0, 1.0), &[0.0]));
    }

    #[test]
    fn two_fps_with_half_second_gap() {
        let w = sample_observation_window(5.0, 2.0, 0.5, 2.0);
        assert!(close(&w, &[2.5, 3.0, 3.5, 4.0]), "{w:?}");
    }

    #[test]
    fn underflow_clamps_and_duplicates() {
        let w = sample_observation_window(2.0, 4.0, 0.0, 1.0);
        assert!(close(&w, &[0.0, 0.0, 0.0, 1.0]), "{w:?}");
    }

    #[test]
    fn label_lookup() {
        let labels = [(0.0, 3), (1.0, 4)];
        assert_eq!(label_at(&labels, 1.0, 1.0), Some(4));
        assert_eq!(label_at(&labels, 2.0, 1.0), None);
    }
}
