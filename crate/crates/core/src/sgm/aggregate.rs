use rayon::prelude::*;

use super::cost::CostVolume;

/// Path directions `(dx, dy)`: the first four are horizontal and vertical,
/// the last four diagonal.
pub const DIRECTIONS: [(i32, i32); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)];

pub fn directions_for(num_paths: u32) -> &'static [(i32, i32)] {
    if num_paths == 4 {
        &DIRECTIONS[..4]
    } else {
        &DIRECTIONS[..]
    }
}

/// One step of the path recurrence for a single pixel.
///
/// `prev` holds `L_r(p − r, ·)` and `prev_min` its minimum; writes
/// `L_r(p, ·)` into `out` and returns its minimum.
#[inline]
fn step(cost: &[u16], prev: &[u32], prev_min: u32, p1: u32, p2: u32, out: &mut [u32]) -> u32 {
    let n = cost.len();
    let jump = prev_min.saturating_add(p2);
    let mut best = u32::MAX;
    for d in 0..n {
        let mut m = prev[d].min(jump);
        if d > 0 {
            m = m.min(prev[d - 1].saturating_add(p1));
        }
        if d + 1 < n {
            m = m.min(prev[d + 1].saturating_add(p1));
        }
        let v = cost[d] as u32 + m - prev_min;
        out[d] = v;
        best = best.min(v);
    }
    best
}

#[inline]
fn start(cost: &[u16], out: &mut [u32]) -> u32 {
    let mut best = u32::MAX;
    for (o, &c) in out.iter_mut().zip(cost) {
        *o = c as u32;
        best = best.min(*o);
    }
    best
}

#[inline]
fn accumulate(sum: &mut [u16], l: &[u32]) {
    for (s, &v) in sum.iter_mut().zip(l) {
        *s = s.saturating_add(v.min(u16::MAX as u32) as u16);
    }
}

/// Sum of path costs over `num_paths` directions (4 or 8).
pub fn aggregate_paths(cost: &CostVolume, p1: u32, p2: u32, num_paths: u32) -> CostVolume {
    aggregate_directions(cost, p1, p2, directions_for(num_paths))
}

/// Sum of path costs over the given directions, saturating at `u16::MAX`.
/// Results do not depend on thread scheduling: each sum is a saturating
/// add of non-negative terms.
pub fn aggregate_directions(cost: &CostVolume, p1: u32, p2: u32, dirs: &[(i32, i32)]) -> CostVolume {
    let (w, h, nd) = (cost.width, cost.height, cost.num_disparities);
    let mut sum = CostVolume::zeros(w, h, nd);
    if w == 0 || h == 0 || nd == 0 {
        return sum;
    }
    for &dir in dirs {
        if dir.1 == 0 {
            scan_rows(cost, p1, p2, dir.0, &mut sum.costs);
        } else {
            scan_sweep(cost, p1, p2, dir, &mut sum.costs);
        }
    }
    sum
}

/// Horizontal paths: rows are independent.
fn scan_rows(cost: &CostVolume, p1: u32, p2: u32, dx: i32, sum: &mut [u16]) {
    let (w, nd) = (cost.width, cost.num_disparities);
    sum.par_chunks_mut(w * nd).enumerate().for_each(|(y, sum_row)| {
        let mut prev = vec![0u32; nd];
        let mut cur = vec![0u32; nd];
        let mut prev_min = 0;
        for i in 0..w {
            let x = if dx > 0 { i } else { w - 1 - i };
            let c = cost.pixel(x, y);
            prev_min = if i == 0 {
                start(c, &mut cur)
            } else {
                step(c, &prev, prev_min, p1, p2, &mut cur)
            };
            accumulate(&mut sum_row[x * nd..(x + 1) * nd], &cur);
            std::mem::swap(&mut prev, &mut cur);
        }
    });
}

/// Paths with a vertical component: sweep rows in order; pixels within a
/// row only depend on the previous row.
fn scan_sweep(cost: &CostVolume, p1: u32, p2: u32, (dx, dy): (i32, i32), sum: &mut [u16]) {
    let (w, h, nd) = (cost.width, cost.height, cost.num_disparities);
    let mut prev = vec![0u32; w * nd];
    let mut prev_min = vec![0u32; w];
    let mut cur = vec![0u32; w * nd];
    let mut cur_min = vec![0u32; w];
    for i in 0..h {
        let y = if dy > 0 { i } else { h - 1 - i };
        cur.par_chunks_mut(nd)
            .zip(cur_min.par_iter_mut())
            .enumerate()
            .for_each(|(x, (out, m))| {
                let c = cost.pixel(x, y);
                let px = x as i64 - dx as i64;
                *m = if i == 0 || px < 0 || px >= w as i64 {
                    start(c, out)
                } else {
                    let px = px as usize;
                    step(c, &prev[px * nd..(px + 1) * nd], prev_min[px], p1, p2, out)
                };
            });
        sum[y * w * nd..(y + 1) * w * nd]
            .par_chunks_mut(nd)
            .zip(cur.par_chunks(nd))
            .for_each(|(s, l)| accumulate(s, l));
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut prev_min, &mut cur_min);
    }
}

/// Path costs `L_r` for one direction, `u32` per entry in volume layout.
pub fn path_costs(cost: &CostVolume, p1: u32, p2: u32, (dx, dy): (i32, i32)) -> Vec<u32> {
    let (w, h, nd) = (cost.width, cost.height, cost.num_disparities);
    let mut out = vec![0u32; w * h * nd];
    let mut mins = vec![0u32; w * h];
    let xs: Vec<usize> = if dx >= 0 { (0..w).collect() } else { (0..w).rev().collect() };
    let ys: Vec<usize> = if dy >= 0 { (0..h).collect() } else { (0..h).rev().collect() };
    let mut scratch = vec![0u32; nd];
    for &y in &ys {
        for &x in &xs {
            let (px, py) = (x as i64 - dx as i64, y as i64 - dy as i64);
            let c = cost.pixel(x, y);
            let m = if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                start(c, &mut scratch)
            } else {
                let pi = py as usize * w + px as usize;
                step(c, &out[pi * nd..(pi + 1) * nd], mins[pi], p1, p2, &mut scratch)
            };
            let i = y * w + x;
            out[i * nd..(i + 1) * nd].copy_from_slice(&scratch);
            mins[i] = m;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashMap;

    /// Literal recursive evaluation of the path recurrence, memoised.
    fn oracle_l(
        c: &CostVolume,
        p1: u32,
        p2: u32,
        r: (i32, i32),
        x: i64,
        y: i64,
        memo: &mut HashMap<(i64, i64), Vec<u64>>,
    ) -> Vec<u64> {
        if let Some(v) = memo.get(&(x, y)) {
            return v.clone();
        }
        let nd = c.num_disparities;
        let here: Vec<u64> = (0..nd).map(|d| c.get(x as usize, y as usize, d) as u64).collect();
        let (px, py) = (x - r.0 as i64, y - r.1 as i64);
        let res = if px < 0 || py < 0 || px >= c.width as i64 || py >= c.height as i64 {
            here
        } else {
            let prev = oracle_l(c, p1, p2, r, px, py, memo);
            let pmin = *prev.iter().min().unwrap();
            (0..nd)
                .map(|d| {
                    let mut cands = vec![prev[d], pmin + p2 as u64];
                    if d > 0 {
                        cands.push(prev[d - 1] + p1 as u64);
                    }
                    if d + 1 < nd {
                        cands.push(prev[d + 1] + p1 as u64);
                    }
                    here[d] + cands.into_iter().min().unwrap() - pmin
                })
                .collect()
        };
        memo.insert((x, y), res.clone());
        res
    }

    fn oracle_sum(c: &CostVolume, p1: u32, p2: u32, dirs: &[(i32, i32)]) -> Vec<u16> {
        let mut out = vec![0u64; c.costs.len()];
        for &r in dirs {
            let mut memo = HashMap::new();
            for y in 0..c.height {
                for x in 0..c.width {
                    let l = oracle_l(c, p1, p2, r, x as i64, y as i64, &mut memo);
                    for d in 0..c.num_disparities {
                        out[c.index(x, y) + d] += l[d];
                    }
                }
            }
        }
        out.into_iter().map(|v| v.min(u16::MAX as u64) as u16).collect()
    }

    fn random_volume(rng: &mut impl Rng, max_dim: usize, max_cost: u16) -> CostVolume {
        let (w, h, nd) = (rng.random_range(1..=max_dim), rng.random_range(1..=max_dim), rng.random_range(1..=max_dim));
        CostVolume::from_fn(w, h, nd, |_, _, _| rng.random_range(0..=max_cost))
    }

    #[test]
    fn two_pixel_trace() {
        let c = CostVolume {
            width: 2,
            height: 1,
            num_disparities: 2,
            costs: vec![0, 3, 2, 0],
        };
        let l = path_costs(&c, 1, 2, (1, 0));
        assert_eq!(&l[2..4], &[2, 1]);
        let agg = aggregate_directions(&c, 1, 2, &[(1, 0)]);
        assert_eq!(agg.pixel(1, 0), &[2, 1]);
    }

    #[test]
    fn matches_oracle_on_random_volumes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let c = random_volume(&mut rng, 8, 200);
            let p1 = rng.random_range(1..50);
            let p2 = rng.random_range(p1 + 1..200);
            for dir in DIRECTIONS {
                assert_eq!(aggregate_directions(&c, p1, p2, &[dir]).costs, oracle_sum(&c, p1, p2, &[dir]));
            }
            for n in [4, 8] {
                assert_eq!(aggregate_paths(&c, p1, p2, n).costs, oracle_sum(&c, p1, p2, directions_for(n)));
            }
        }
    }

    #[test]
    fn saturates_instead_of_wrapping() {
        let c = CostVolume::from_fn(4, 4, 3, |_, _, _| 60_000);
        let agg = aggregate_paths(&c, 1, 2, 8);
        assert!(agg.costs.iter().all(|&v| v == u16::MAX));
    }

    #[test]
    fn zero_penalties_reduce_to_matching_cost() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let c = random_volume(&mut rng, 8, 100);
        for dir in DIRECTIONS {
            assert_eq!(aggregate_directions(&c, 0, 0, &[dir]), c);
        }
    }

    #[test]
    fn large_penalties_accumulate_along_the_path() {
        // with penalties that never bind, each path sums its costs per disparity
        let c = CostVolume {
            width: 3,
            height: 1,
            num_disparities: 2,
            costs: vec![0, 5, 4, 0, 4, 0],
        };
        let l = path_costs(&c, 10_000, 20_000, (1, 0));
        assert_eq!(&l[2..4], &[4, 5]);
        assert_eq!(&l[4..6], &[4, 1]);
        let agg = aggregate_directions(&c, 10_000, 20_000, &[(1, 0)]);
        let first = (0..2).min_by_key(|&d| (agg.get(1, 0, d), d)).unwrap();
        assert_eq!(first, 0);
        assert_eq!((0..2).min_by_key(|&d| (c.get(1, 0, d), d)).unwrap(), 1);
    }

    #[test]
    fn zero_volume_stays_zero() {
        let c = CostVolume::zeros(5, 4, 6);
        assert!(aggregate_paths(&c, 3, 9, 8).costs.iter().all(|&v| v == 0));
    }

    proptest! {
        #[test]
        fn path_minimum_is_bounded(seed in any::<u64>(), dir in 0usize..8) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = random_volume(&mut rng, 8, 300);
            let p1 = rng.random_range(1..40);
            let p2 = rng.random_range(p1 + 1..400);
            let l = path_costs(&c, p1, p2, DIRECTIONS[dir]);
            for y in 0..c.height {
                for x in 0..c.width {
                    let i = c.index(x, y);
                    let lmin = l[i..i + c.num_disparities].iter().min().unwrap();
                    let cmin = *c.pixel(x, y).iter().min().unwrap() as u32;
                    prop_assert!(*lmin <= cmin + p2);
                }
            }
        }

        #[test]
        fn aggregation_is_deterministic(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = random_volume(&mut rng, 8, 300);
            prop_assert_eq!(aggregate_paths(&c, 5, 40, 8), aggregate_paths(&c, 5, 40, 8));
        }
    }
}
