//! Episodic evaluation: support/query sampling and batch runs.
//!
//! Episodes follow the usual few-shot structure: `ways` classes, `shots`
//! labeled support embeddings per class to learn from, and held-out query
//! embeddings to grade on. Embeddings are synthetic 4-bit vectors from one
//! of two generators:
//!
//! * [`SumMode::PowerOfTwo`] — every class's support sums are powers of
//!   two and all classes share one exponent multiset (each class is a
//!   permutation of a base vector). Sums requantize exactly and the bias
//!   term is identical across classes, so the shift-only classifier and
//!   the real-valued distance reference provably rank classes by the same
//!   integer scores.
//! * [`SumMode::General`] — integer Gaussian-ish clusters with a
//!   configurable separation margin; weight requantization error is real
//!   and agreement with the reference is a measured statistic.
//!
//! Episodes are independent, so batches fan out over rayon when the
//! `parallel` feature is on; [`run_batch_seq`] is the sequential path with
//! identical results (each episode derives its own RNG stream).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle::l2_prototype_classify;
use crate::pe_array::{ArrayMode, PeArrayState};
use crate::proto_learn::{BiasShift, LearnerState, MemoryBudget, MAX_SHOTS, MAX_WAYS};
use crate::quant::QAct;
use crate::{Error, Result};

/// Shape and seed of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries_per_way: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_WAYS).contains(&self.ways) {
            return Err(Error::InvalidArgument(format!(
                "ways {} outside 1..={MAX_WAYS}",
                self.ways
            )));
        }
        if !(1..=MAX_SHOTS as usize).contains(&self.shots) {
            return Err(Error::InvalidArgument(format!(
                "shots {} outside 1..={MAX_SHOTS}",
                self.shots
            )));
        }
        Ok(())
    }
}

/// Which synthetic embedding family to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumMode {
    #[default]
    PowerOfTwo,
    General,
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub embed_dim: usize,
    /// Minimum inter-class center distance, in units of sqrt(dim)
    /// (general mode only).
    pub margin: f64,
    pub mode: SumMode,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            embed_dim: 16,
            margin: 2.0,
            mode: SumMode::PowerOfTwo,
        }
    }
}

/// Sampled support and query sets.
#[derive(Debug, Clone)]
pub struct Episode {
    /// `support[way][shot]` embeddings.
    pub support: Vec<Vec<Vec<QAct>>>,
    /// Query embeddings with their true way.
    pub queries: Vec<(Vec<QAct>, usize)>,
}

/// Splits a target sum into `shots` 4-bit parts that sum to it exactly.
fn split_sum(total: u32, shots: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut parts = vec![0u8; shots];
    let mut rest = total;
    for p in parts.iter_mut() {
        let take = rest.min(15);
        *p = take as u8;
        rest -= take;
    }
    debug_assert_eq!(rest, 0, "target sum exceeded 15 * shots");
    parts.shuffle(rng);
    parts
}

pub fn generate_episode(spec: &EpisodeSpec, synth: &SyntheticConfig) -> Result<Episode> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = synth.embed_dim;
    match synth.mode {
        SumMode::PowerOfTwo => {
            // largest exponent whose value still splits into `shots`
            // 4-bit parts
            let cap = 15 * spec.shots as u32;
            let max_exp = (0..=7u32).rev().find(|e| (1u32 << e) <= cap).unwrap_or(0);
            // base sums shared (as a multiset) by every class
            let base: Vec<u32> = (0..dim)
                .map(|_| {
                    if rng.gen_bool(0.25) {
                        0
                    } else {
                        1u32 << rng.gen_range(0..=max_exp)
                    }
                })
                .collect();
            let mut class_sums: Vec<Vec<u32>> = Vec::with_capacity(spec.ways);
            for way in 0..spec.ways {
                let mut tries = 0;
                let sums = loop {
                    let mut candidate = base.clone();
                    candidate.shuffle(&mut rng);
                    if !class_sums.contains(&candidate) {
                        break candidate;
                    }
                    tries += 1;
                    if tries > 200 {
                        return Err(Error::InvalidArgument(format!(
                            "cannot sample {} distinct classes from a {dim}-dim base",
                            spec.ways
                        )));
                    }
                };
                class_sums.push(sums);
                let _ = way;
            }
            let support: Vec<Vec<Vec<QAct>>> = class_sums
                .iter()
                .map(|sums| {
                    let mut shots: Vec<Vec<QAct>> = vec![Vec::with_capacity(dim); spec.shots];
                    for &s in sums {
                        let parts = split_sum(s, spec.shots, &mut rng);
                        for (shot, part) in shots.iter_mut().zip(parts) {
                            shot.push(QAct::new(part));
                        }
                    }
                    shots
                })
                .collect();
            let queries = sample_queries(&class_sums, spec, &mut rng);
            Ok(Episode { support, queries })
        }
        SumMode::General => {
            let threshold = synth.margin * (dim as f64).sqrt();
            let mut centers: Vec<Vec<u8>> = Vec::with_capacity(spec.ways);
            for _ in 0..spec.ways {
                let mut tries = 0;
                let center = loop {
                    let c: Vec<u8> = (0..dim).map(|_| rng.gen_range(0..16)).collect();
                    let far_enough = centers.iter().all(|other| {
                        let d2: f64 = c
                            .iter()
                            .zip(other)
                            .map(|(a, b)| {
                                let d = *a as f64 - *b as f64;
                                d * d
                            })
                            .sum();
                        d2.sqrt() >= threshold
                    });
                    if far_enough {
                        break c;
                    }
                    tries += 1;
                    if tries > 500 {
                        return Err(Error::InvalidArgument(format!(
                            "cannot fit {} classes at margin {}",
                            spec.ways, synth.margin
                        )));
                    }
                };
                centers.push(center);
            }
            let jitter = |rng: &mut ChaCha8Rng, v: u8| -> QAct {
                let d: i32 = rng.gen_range(-1..=1);
                QAct::new((v as i32 + d).clamp(0, 15) as u8)
            };
            let support: Vec<Vec<Vec<QAct>>> = centers
                .iter()
                .map(|c| {
                    (0..spec.shots)
                        .map(|_| c.iter().map(|v| jitter(&mut rng, *v)).collect())
                        .collect()
                })
                .collect();
            let mut queries = Vec::with_capacity(spec.ways * spec.queries_per_way);
            for (way, c) in centers.iter().enumerate() {
                for _ in 0..spec.queries_per_way {
                    queries.push((c.iter().map(|v| jitter(&mut rng, *v)).collect(), way));
                }
            }
            Ok(Episode { support, queries })
        }
    }
}

/// Queries around the (rounded) class prototypes with unit jitter.
fn sample_queries(
    class_sums: &[Vec<u32>],
    spec: &EpisodeSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<QAct>, usize)> {
    let mut queries = Vec::with_capacity(class_sums.len() * spec.queries_per_way);
    for (way, sums) in class_sums.iter().enumerate() {
        for _ in 0..spec.queries_per_way {
            let q: Vec<QAct> = sums
                .iter()
                .map(|s| {
                    let mean = (*s as f64 / spec.shots as f64).round() as i32;
                    let d: i32 = rng.gen_range(-1..=1);
                    QAct::new((mean + d).clamp(0, 15) as u8)
                })
                .collect();
            queries.push((q, way));
        }
    }
    queries
}

/// One graded episode.
#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeResult {
    pub queries: usize,
    pub correct: usize,
    /// Queries where the datapath classifier and the L2 reference agree.
    pub oracle_agreement: usize,
    pub learn_cycles: u64,
    pub shots_learned: usize,
}

/// (query index, datapath class, reference class) within one episode.
pub type EpisodeMismatch = (usize, u32, usize);

/// Graded episode plus its datapath/reference mismatches.
pub type GradedEpisode = (EpisodeResult, Vec<EpisodeMismatch>);

/// A logged chip/reference disagreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Disagreement {
    pub episode: usize,
    pub query: usize,
    pub datapath_class: u32,
    pub reference_class: usize,
}

/// Learns an episode's support set and grades its queries, comparing
/// every decision against the real-valued prototype reference.
pub fn run_episode(episode: &Episode, bias_mode: BiasShift) -> Result<GradedEpisode> {
    let dim = episode.support[0][0].len();
    let mut learner = LearnerState::new(dim, MemoryBudget::unlimited(), bias_mode)?;
    let mut array = PeArrayState::new(ArrayMode::M16x16);
    let mut result = EpisodeResult::default();
    for shots in &episode.support {
        let outcome = learner.learn_class(shots, &mut array)?;
        result.learn_cycles += outcome.cycles;
        result.shots_learned += shots.len();
    }
    let support_real: Vec<Vec<Vec<f64>>> = episode
        .support
        .iter()
        .map(|shots| {
            shots
                .iter()
                .map(|s| s.iter().map(|a| a.get() as f64).collect())
                .collect()
        })
        .collect();
    let mut disagreements = Vec::new();
    for (qi, (query, truth)) in episode.queries.iter().enumerate() {
        let (got, _) = learner.classify(query, &mut array)?;
        let real: Vec<f64> = query.iter().map(|a| a.get() as f64).collect();
        let want = l2_prototype_classify(&support_real, &real);
        result.queries += 1;
        if got as usize == *truth {
            result.correct += 1;
        }
        if got as usize == want {
            result.oracle_agreement += 1;
        } else {
            disagreements.push((qi, got, want));
        }
    }
    Ok((result, disagreements))
}

/// Aggregate over a batch of episodes.
#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub episodes: usize,
    pub queries: usize,
    pub correct: usize,
    pub oracle_agreement: usize,
    pub learn_cycles: u64,
    pub shots_learned: usize,
    pub disagreements: Vec<Disagreement>,
}

impl BatchOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.queries.max(1) as f64
    }

    pub fn agreement(&self) -> f64 {
        self.oracle_agreement as f64 / self.queries.max(1) as f64
    }

    pub fn cycles_per_shot(&self) -> f64 {
        self.learn_cycles as f64 / self.shots_learned.max(1) as f64
    }

    fn collect(specs_len: usize, results: Vec<Result<GradedEpisode>>) -> Result<BatchOutcome> {
        let mut out = BatchOutcome {
            episodes: specs_len,
            ..Default::default()
        };
        for (ep, r) in results.into_iter().enumerate() {
            let (res, disagreements) = r?;
            out.queries += res.queries;
            out.correct += res.correct;
            out.oracle_agreement += res.oracle_agreement;
            out.learn_cycles += res.learn_cycles;
            out.shots_learned += res.shots_learned;
            out.disagreements.extend(disagreements.into_iter().map(
                |(query, datapath_class, reference_class)| Disagreement {
                    episode: ep,
                    query,
                    datapath_class,
                    reference_class,
                },
            ));
        }
        Ok(out)
    }
}

fn episode_task(
    spec: &EpisodeSpec,
    synth: &SyntheticConfig,
    bias_mode: BiasShift,
) -> Result<GradedEpisode> {
    let episode = generate_episode(spec, synth)?;
    run_episode(&episode, bias_mode)
}

/// Runs a batch of episodes, in parallel when the `parallel` feature is
/// enabled. Results are deterministic either way: every episode is seeded
/// by its spec alone and aggregation preserves batch order.
#[cfg(feature = "parallel")]
pub fn run_batch(
    specs: &[EpisodeSpec],
    synth: &SyntheticConfig,
    bias_mode: BiasShift,
) -> Result<BatchOutcome> {
    use rayon::prelude::*;
    let results: Vec<_> = specs
        .par_iter()
        .map(|spec| episode_task(spec, synth, bias_mode))
        .collect();
    BatchOutcome::collect(specs.len(), results)
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn run_batch(
    specs: &[EpisodeSpec],
    synth: &SyntheticConfig,
    bias_mode: BiasShift,
) -> Result<BatchOutcome> {
    run_batch_seq(specs, synth, bias_mode)
}

/// Always-sequential batch runner (bench baseline; also keeps audited
/// runs on one thread).
pub fn run_batch_seq(
    specs: &[EpisodeSpec],
    synth: &SyntheticConfig,
    bias_mode: BiasShift,
) -> Result<BatchOutcome> {
    let results: Vec<_> = specs
        .iter()
        .map(|spec| episode_task(spec, synth, bias_mode))
        .collect();
    BatchOutcome::collect(specs.len(), results)
}

/// Convenience: `count` episodes of one shape with seeds derived from
/// `base_seed`.
pub fn specs_for(count: usize, base: EpisodeSpec) -> Vec<EpisodeSpec> {
    (0..count)
        .map(|i| EpisodeSpec {
            seed: base
                .seed
                .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..base
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ways: usize, shots: usize, seed: u64) -> EpisodeSpec {
        EpisodeSpec {
            ways,
            shots,
            queries_per_way: 3,
            seed,
        }
    }

    #[test]
    fn power_of_two_sums_are_exact() {
        for shots in [1usize, 2, 3, 5, 8] {
            let synth = SyntheticConfig {
                embed_dim: 12,
                ..Default::default()
            };
            let ep = generate_episode(&spec(5, shots, 42), &synth).unwrap();
            for shots_of_way in &ep.support {
                for i in 0..12 {
                    let sum: u32 = shots_of_way.iter().map(|s| s[i].get() as u32).sum();
                    assert!(sum == 0 || sum.is_power_of_two(), "sum {sum}");
                }
            }
        }
    }

    #[test]
    fn classes_share_an_exponent_multiset() {
        let synth = SyntheticConfig {
            embed_dim: 16,
            ..Default::default()
        };
        let ep = generate_episode(&spec(5, 4, 7), &synth).unwrap();
        let mut norms: Vec<u64> = ep
            .support
            .iter()
            .map(|shots| {
                (0..16)
                    .map(|i| {
                        let s: u64 = shots.iter().map(|sh| sh[i].get() as u64).sum();
                        s * s
                    })
                    .sum()
            })
            .collect();
        norms.dedup();
        assert_eq!(norms.len(), 1, "all classes must share one squared norm");
    }

    #[test]
    fn generation_is_deterministic() {
        let synth = SyntheticConfig::default();
        let a = generate_episode(&spec(4, 2, 99), &synth).unwrap();
        let b = generate_episode(&spec(4, 2, 99), &synth).unwrap();
        assert_eq!(a.support, b.support);
        assert_eq!(a.queries, b.queries);
    }

    #[test]
    fn single_way_is_always_correct() {
        let synth = SyntheticConfig::default();
        let ep = generate_episode(&spec(1, 3, 5), &synth).unwrap();
        let (res, _) = run_episode(&ep, BiasShift::Exact).unwrap();
        assert_eq!(res.correct, res.queries);
        assert_eq!(res.oracle_agreement, res.queries);
    }

    #[test]
    fn power_of_two_batch_agrees_with_reference_everywhere() {
        let specs: Vec<EpisodeSpec> = (0..50)
            .map(|i| EpisodeSpec {
                ways: 5,
                shots: 1 + i % 8,
                queries_per_way: 4,
                seed: 1000 + i as u64,
            })
            .collect();
        let synth = SyntheticConfig::default();
        let out = run_batch_seq(&specs, &synth, BiasShift::Exact).unwrap();
        assert_eq!(out.oracle_agreement, out.queries, "{:?}", out.disagreements);
    }

    #[test]
    fn parallel_and_sequential_batches_agree() {
        let specs = specs_for(16, spec(5, 2, 31));
        let synth = SyntheticConfig::default();
        let par = run_batch(&specs, &synth, BiasShift::Exact).unwrap();
        let seq = run_batch_seq(&specs, &synth, BiasShift::Exact).unwrap();
        assert_eq!(par.correct, seq.correct);
        assert_eq!(par.oracle_agreement, seq.oracle_agreement);
        assert_eq!(par.disagreements, seq.disagreements);
    }

    #[test]
    fn general_mode_mostly_agrees() {
        let specs = specs_for(
            40,
            EpisodeSpec {
                ways: 5,
                shots: 4,
                queries_per_way: 4,
                seed: 77,
            },
        );
        let synth = SyntheticConfig {
            mode: SumMode::General,
            ..Default::default()
        };
        let out = run_batch_seq(&specs, &synth, BiasShift::Exact).unwrap();
        assert!(out.agreement() >= 0.9, "agreement {}", out.agreement());
        assert!(out.accuracy() >= 0.9, "accuracy {}", out.accuracy());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let synth = SyntheticConfig::default();
        assert!(generate_episode(&spec(0, 1, 1), &synth).is_err());
        assert!(generate_episode(&spec(1, 0, 1), &synth).is_err());
        assert!(generate_episode(&spec(257, 1, 1), &synth).is_err());
        assert!(generate_episode(&spec(1, 129, 1), &synth).is_err());
    }
}
