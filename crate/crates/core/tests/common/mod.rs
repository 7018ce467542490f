//! Helpers shared by the integration tests.
#![allow(dead_code)]

use noon_gyro::tagproc::CoincidenceEvent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All-pairs greedy matching, written for clarity rather than speed.
///
/// Clicks are visited in time order (channel 1 first on ties). Each unmatched
/// click takes the earliest unmatched click on the other channel whose
/// distance is within `window`, searching the whole other stream; among
/// equally early candidates the first one in stream order wins.
pub fn brute_force_coincidences(s1: &[u64], s2: &[u64], window: u64) -> Vec<CoincidenceEvent> {
    let mut order: Vec<(u64, u8, usize)> = s1
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, 1, i))
        .chain(s2.iter().enumerate().map(|(i, &t)| (t, 2, i)))
        .collect();
    order.sort();
    let mut used1 = vec![false; s1.len()];
    let mut used2 = vec![false; s2.len()];
    let mut out = Vec::new();
    for (t, ch, i) in order {
        let (mine, other, other_used) = if ch == 1 {
            (&mut used1, s2, &mut used2)
        } else {
            (&mut used2, s1, &mut used1)
        };
        if mine[i] {
            continue;
        }
        let mut best: Option<usize> = None;
        for (j, &u) in other.iter().enumerate() {
            if other_used[j] || u.abs_diff(t) > window {
                continue;
            }
            if best.is_none_or(|b| u < other[b]) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            mine[i] = true;
            other_used[j] = true;
            let u = other[j];
            let (t1, t2) = if ch == 1 { (t, u) } else { (u, t) };
            out.push(CoincidenceEvent {
                timestamp: t1.min(t2),
                delta: t2 as i64 - t1 as i64,
            });
        }
    }
    out.sort();
    out
}

/// Sorted uniform clicks on `[0, span)` ticks.
pub fn random_stream(rng: &mut ChaCha8Rng, len: usize, span: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..len).map(|_| rng.random_range(0..span)).collect();
    v.sort_unstable();
    v
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
