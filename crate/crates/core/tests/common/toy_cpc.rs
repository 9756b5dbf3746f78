//! A small contrastive batch held as plain parameters, with a brute-force
//! loss that never touches the tensor engine.
#![allow(dead_code)]

use cpc_core::cpc::{CandidatePlan, ContrastiveBatch};
use cpc_core::engine::{Bound, ParamSet, Rng};
use cpc_core::models::pred_name;

/// Toy batch stored as parameters `z`, `c` and one matrix per offset.
pub struct Toy {
    pub b: usize,
    pub t: usize,
    pub dz: usize,
    pub dc: usize,
    pub k: usize,
    pub params: ParamSet,
}

impl Toy {
    /// Hand-set smooth values; `w_scale = 0` zeroes every prediction matrix.
    pub fn hand_set(b: usize, t: usize, dz: usize, dc: usize, k: usize, w_scale: f64) -> Toy {
        let mut params = ParamSet::default();
        let z = (0..b * t * dz).map(|i| (0.37 * i as f64 + 0.2).sin()).collect();
        let c = (0..b * t * dc).map(|i| (0.53 * i as f64 - 0.4).cos()).collect();
        params.insert("z", vec![b, t, dz], z).unwrap();
        params.insert("c", vec![b, t, dc], c).unwrap();
        for m in 1..=k {
            let w = (0..dc * dz).map(|i| w_scale * (0.29 * (i + 7 * m) as f64).sin()).collect();
            params.insert(&pred_name(m), vec![dc, dz], w).unwrap();
        }
        Toy { b, t, dz, dc, k, params }
    }

    pub fn random(b: usize, t: usize, d: usize, k: usize, seed: u64) -> Toy {
        let mut rng = Rng::new(seed);
        let mut toy = Toy::hand_set(b, t, d, d, k, 0.0);
        for (_, p) in toy.params.iter_mut() {
            for v in &mut p.data {
                *v = 0.5 * rng.normal();
            }
        }
        toy
    }

    pub fn batch(&self, bound: &Bound, negatives: usize) -> ContrastiveBatch {
        ContrastiveBatch::new(bound.get("z").unwrap().clone(), bound.get("c").unwrap().clone(), self.k, negatives)
            .unwrap()
    }

    pub fn z(&self, w: usize, s: usize) -> &[f64] {
        let at = (w * self.t + s) * self.dz;
        &self.params.get("z").unwrap().data[at..at + self.dz]
    }

    pub fn c(&self, w: usize, s: usize) -> &[f64] {
        let at = (w * self.t + s) * self.dc;
        &self.params.get("c").unwrap().data[at..at + self.dc]
    }

    /// `c ᵀ W_m z` by explicit double sum.
    pub fn bilinear(&self, m: usize, c: &[f64], z: &[f64]) -> f64 {
        let w = &self.params.get(&pred_name(m)).unwrap().data;
        let mut s = 0.0;
        for i in 0..self.dc {
            for j in 0..self.dz {
                s += c[i] * w[i * self.dz + j] * z[j];
            }
        }
        s
    }

    /// Cross-entropy of one anchor against candidates given as (window, step),
    /// positive first.
    pub fn term(&self, m: usize, anchor: (usize, usize), candidates: &[(usize, usize)]) -> f64 {
        let c = self.c(anchor.0, anchor.1);
        let scores: Vec<f64> = candidates.iter().map(|&(w, s)| self.bilinear(m, c, self.z(w, s))).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        lse - scores[0]
    }

    pub fn brute_single_anchor(&self, t: usize) -> f64 {
        (1..=self.k)
            .map(|m| {
                let mut total = 0.0;
                for b in 0..self.b {
                    let mut cands = vec![(b, t + m)];
                    cands.extend((0..self.b).filter(|&o| o != b).map(|o| (o, t + m)));
                    total += self.term(m, (b, t), &cands);
                }
                total / self.b as f64
            })
            .sum()
    }

    pub fn brute_from_plan(&self, plan: &CandidatePlan) -> f64 {
        let decode = |row: usize| (row / self.t, row % self.t);
        plan.candidates
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                let terms: f64 = plan
                    .anchors
                    .iter()
                    .zip(rows.chunks(plan.per_row))
                    .map(|(&a, cands)| {
                        let cands: Vec<_> = cands.iter().map(|&r| decode(r)).collect();
                        self.term(i + 1, decode(a), &cands)
                    })
                    .sum();
                terms / plan.anchors.len() as f64
            })
            .sum()
    }
}
