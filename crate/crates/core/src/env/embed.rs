use super::rng::mix64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const PROBES: u64 = 2;

fn fnv1a(namespace: &str, token: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in namespace.bytes().chain(*b"/").chain(token.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Signed feature-hashing encoder for a single interaction step.
///
/// Each token lands in `PROBES` buckets with a ±1 sign per bucket. Task,
/// action and observation tokens hash in separate namespaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepEncoder {
    dim: usize,
}

impl StepEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn add_token(&self, acc: &mut [f64], namespace: &str, token: &str) {
        let base = fnv1a(namespace, token);
        for probe in 0..PROBES {
            let h = mix64(base ^ probe.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let bucket = (h % self.dim as u64) as usize;
            acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
    }

    /// Embeds step `i`: the task description, the action that led here (none
    /// at the first step) and the observation it produced. Unit L2 norm, or
    /// the zero vector when nothing was hashed or everything cancelled.
    pub fn embed<S: AsRef<str>>(
        &self,
        task: &[S],
        previous_action: Option<usize>,
        observation: &[S],
    ) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for tok in task {
            self.add_token(&mut acc, "t", tok.as_ref());
        }
        if let Some(a) = previous_action {
            self.add_token(&mut acc, "a", &a.to_string());
        }
        for tok in observation {
            self.add_token(&mut acc, "o", tok.as_ref());
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        acc
    }
}
