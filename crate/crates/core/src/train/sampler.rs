use std::collections::HashSet;

use rand::Rng;

use crate::triples::Triple;

/// Default number of redraws before a colliding negative is kept anyway.
pub const DEFAULT_MAX_RETRIES: usize = 10;

/// Uniform head-or-tail corruption with approximate filtering against a set
/// of known true triples.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    known: HashSet<Triple>,
    num_entities: u32,
    max_retries: usize,
}

impl NegativeSampler {
    pub fn new<'a>(known: impl IntoIterator<Item = &'a Triple>, num_entities: usize) -> Self {
        Self {
            known: known.into_iter().copied().collect(),
            num_entities: num_entities as u32,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    /// Sampler that never filters; every first draw is kept.
    pub fn unfiltered(num_entities: usize) -> Self {
        Self {
            known: HashSet::new(),
            num_entities: num_entities as u32,
            max_retries: 0,
        }
    }

    pub fn with_max_retries(mut self, retries: usize) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn is_known(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    /// Draws one negative: picks head or tail with equal probability and
    /// replaces it with a uniformly drawn different entity. Draws that hit a
    /// known triple are retried up to the retry bound, after which the last
    /// draw is kept.
    pub fn corrupt<R: Rng + ?Sized>(&self, positive: &Triple, rng: &mut R) -> Triple {
        let mut last = *positive;
        for _ in 0..=self.max_retries {
            last = self.draw(positive, rng);
            if !self.known.contains(&last) {
                break;
            }
        }
        last
    }

    fn draw<R: Rng + ?Sized>(&self, p: &Triple, rng: &mut R) -> Triple {
        let corrupt_head = rng.gen_bool(0.5);
        let current = if corrupt_head { p.head } else { p.tail };
        let replacement = if self.num_entities <= 1 {
            current
        } else {
            // uniform over the other entities
            let x = rng.gen_range(0..self.num_entities - 1);
            if x >= current {
                x + 1
            } else {
                x
            }
        };
        if corrupt_head {
            Triple::new(replacement, p.relation, p.tail)
        } else {
            Triple::new(p.head, p.relation, replacement)
        }
    }

    /// `k` negatives per positive, grouped contiguously in positive order.
    pub fn sample<R: Rng + ?Sized>(&self, positives: &[Triple], k: usize, rng: &mut R) -> Vec<Triple> {
        let mut out = Vec::with_capacity(positives.len() * k);
        for p in positives {
            for _ in 0..k {
                out.push(self.corrupt(p, rng));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn differs_in_one_slot(p: &Triple, n: &Triple) -> bool {
        n.relation == p.relation && ((n.head != p.head) as u8 + (n.tail != p.tail) as u8) == 1
    }

    #[test]
    fn two_entity_graph_has_one_swap_per_side() {
        let p = Triple::new(0, 0, 1);
        let sampler = NegativeSampler::new([&p], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in sampler.sample(&[p], 20, &mut rng) {
            assert!(n == Triple::new(1, 0, 1) || n == Triple::new(0, 0, 0), "{n:?}");
        }
    }

    #[test]
    fn negatives_change_exactly_one_slot() {
        let positives: Vec<Triple> = (0..50).map(|i| Triple::new(i, i % 3, (i * 7) % 50)).collect();
        let sampler = NegativeSampler::new(&positives, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let negs = sampler.sample(&positives, 8, &mut rng);
        assert_eq!(negs.len(), 400);
        for (i, n) in negs.iter().enumerate() {
            assert!(differs_in_one_slot(&positives[i / 8], n));
        }
    }
}
