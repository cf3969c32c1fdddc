use rand::Rng;

use crate::nn::softmax;

/// Remembers the held action between decisions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActionRepeat {
    pub last: Option<usize>,
    /// Frames elapsed since the episode started.
    pub counter: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub action: usize,
    /// A fresh sample; only these frames enter the trajectory buffer.
    pub fresh: bool,
}

impl ActionRepeat {
    /// Whether the next call to [`select_action`] will sample.
    pub fn decision_due(&self, repeat: usize) -> bool {
        self.last.is_none() || self.counter.is_multiple_of(repeat as u64)
    }
}

/// Draws an index from `probs` by inverse-CDF sampling.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left the total slightly below one
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples from `softmax(logits)` on decision frames (every `repeat` frames)
/// and otherwise repeats the held action.
pub fn select_action<R: Rng + ?Sized>(
    logits: &[f64],
    rng: &mut R,
    state: &mut ActionRepeat,
    repeat: usize,
) -> Decision {
    let decision = if state.decision_due(repeat) {
        let a = sample_categorical(&softmax(logits), rng);
        state.last = Some(a);
        Decision {
            action: a,
            fresh: true,
        }
    } else {
        Decision {
            action: state.last.expect("held action"),
            fresh: false,
        }
    };
    state.counter += 1;
    decision
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn repeat_one_always_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = ActionRepeat::default();
        for _ in 0..20 {
            assert!(select_action(&[0.0, 0.0, 0.0], &mut rng, &mut st, 1).fresh);
        }
    }

    #[test]
    fn held_for_repeat_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = ActionRepeat::default();
        for _ in 0..10 {
            let d = select_action(&[0.0, 0.0, 0.0], &mut rng, &mut st, 4);
            assert!(d.fresh);
            for _ in 0..3 {
                let r = select_action(&[0.0, 0.0, 0.0], &mut rng, &mut st, 4);
                assert!(!r.fresh);
                assert_eq!(r.action, d.action);
            }
        }
    }

    #[test]
    fn peaked_logits_pick_the_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = softmax(&[1000.0, 0.0, 0.0]);
        let hits = (0..10_000).filter(|_| sample_categorical(&p, &mut rng) == 0).count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }
}
