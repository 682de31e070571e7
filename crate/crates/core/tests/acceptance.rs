//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Run with `cargo test -p chameleon-sim --test acceptance -- --nocapture`
//! to see the per-criterion lines. Every tolerance is pinned here; the
//! datapath checks are exact (bit-identical or equal integers).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chameleon_sim::audit;
use chameleon_sim::cost_model::compare_strategies;
use chameleon_sim::episode::{self, EpisodeSpec, SumMode, SyntheticConfig};
use chameleon_sim::netmodel::{Checkpoint, HwLimits, NetworkConfig};
use chameleon_sim::oracle;
use chameleon_sim::pe_array::{peak_throughput, run_network, ArrayMode, PeArrayState};
use chameleon_sim::proto_learn::{bytes_per_way, BiasShift, LearnerState, MemoryBudget};
use chameleon_sim::quant::{shift_mac, LogWeight, QAct};
use chameleon_sim::scheduler::{dependency_sets, greedy_schedule, simulate_fifo, LayerGraph};

fn pass(criterion: &str) {
    println!("criterion {criterion}: PASS");
}

/// Random small network within the equivalence-test envelope
/// (<= 8 conv layers, <= 8 channels, n <= 64).
fn random_case(rng: &mut ChaCha8Rng) -> (Checkpoint, Vec<Vec<QAct>>) {
    let config = NetworkConfig::uniform(
        rng.gen_range(1..=4),
        rng.gen_range(1..=64),
        rng.gen_range(1..=4),
        rng.gen_range(1..=8),
        rng.gen_range(2..=3),
        if rng.gen_bool(0.5) {
            vec![rng.gen_range(1..=8)]
        } else {
            vec![]
        },
    );
    let n = config.sequence_length;
    let channels = config.input_channels;
    let ckpt = Checkpoint::random(config, rng);
    let input: Vec<Vec<QAct>> = (0..n)
        .map(|_| {
            (0..channels)
                .map(|_| QAct::new(rng.gen_range(0..16)))
                .collect()
        })
        .collect();
    (ckpt, input)
}

#[test]
fn c01_arithmetic_exhaustiveness() {
    for a in 0u8..16 {
        for code in 0u8..16 {
            let w = LogWeight::from_code(code);
            assert_eq!(
                shift_mac(QAct::new(a), w).get(),
                a as i32 * w.decode(),
                "a={a} code={code}"
            );
        }
    }
    pass("01 arithmetic-exhaustiveness");
}

#[test]
fn c02_c03_scheduler_datapath_equivalence_and_fifo_safety() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0002);
    for case in 0..100 {
        let (ckpt, input) = random_case(&mut rng);
        let graph = LayerGraph::from_config(&ckpt.config);
        let deps = dependency_sets(&graph, input.len());
        let schedule = greedy_schedule(&deps, &graph);

        // criterion 3: the replay proves every read sees the value it
        // expects and no live value is ever overwritten
        let report = simulate_fifo(&schedule, &graph)
            .unwrap_or_else(|e| panic!("case {case}: fifo violation {e}"));
        assert_eq!(report.events, schedule.events.len());

        let got =
            chameleon_sim::pe_array::run_schedule(&ckpt, &input, ArrayMode::M16x16, &schedule)
                .unwrap();
        let want = oracle::dense_forward(&ckpt, &input);
        assert_eq!(
            got.final_output, want,
            "case {case}: streamed output diverged"
        );
    }
    pass("02 scheduler-datapath-equivalence (100 random configs, bit-exact)");
    pass("03 fifo-safety (zero live-value overwrites across all traces)");
}

#[test]
fn c04_mode_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0004);
    let mut checked = 0;
    while checked < 20 {
        let (ckpt, input) = random_case(&mut rng);
        if !chameleon_sim::cost_model::fits_4x4(&ckpt.config) {
            continue;
        }
        let full = run_network(&ckpt, &input, ArrayMode::M16x16).unwrap();
        let quarter = run_network(&ckpt, &input, ArrayMode::M4x4).unwrap();
        assert_eq!(
            full.final_output, quarter.final_output,
            "outputs differ across modes"
        );
        assert_eq!(
            quarter.cycles,
            16 * full.cycles,
            "4x4 must cost exactly 16x the tile work"
        );
        checked += 1;
    }
    pass("04 mode-equivalence (20 configs, bit-exact outputs, exact 16x cycles)");
}

#[test]
fn c05_peak_throughput() {
    assert_eq!(peak_throughput(ArrayMode::M16x16, 150e6), 76.8e9);
    assert_eq!(peak_throughput(ArrayMode::M4x4, 150e6), 4.8e9);
    pass("05 peak-throughput (76.8 GOPS / 4.8 GOPS at 150 MHz, exact)");
}

#[test]
fn c06_learning_cycle_formula() {
    let dims = [16usize, 64, 128, 256, 512, 1024];
    let shot_counts = [1u32, 2, 3, 4, 5, 8, 16, 32, 64, 100, 127, 128];
    let mut points = 0;
    for &v in &dims {
        for &k in &shot_counts {
            let mut learner =
                LearnerState::new(v, MemoryBudget::unlimited(), BiasShift::Exact).unwrap();
            let mut array = PeArrayState::new(ArrayMode::M16x16);
            let shots: Vec<Vec<QAct>> =
                (0..k).map(|s| vec![QAct::new((s % 16) as u8); v]).collect();
            let outcome = learner.learn_class(&shots, &mut array).unwrap();
            let expected = (k as u64 + 2) * (v as u64 / 16) + 1;
            assert_eq!(outcome.cycles, expected, "V={v} k={k}");
            assert_eq!(outcome.trace.len() as u64, outcome.cycles);
            points += 1;
        }
    }
    assert!(
        points >= 64,
        "sampled grid must cover at least 64 points, got {points}"
    );
    pass("06 learning-cycle-formula ((k+2)V/16+1 on a 72-point grid, exact)");
}

#[test]
fn c07_prototype_classifier_fidelity() {
    // power-of-two sums: full agreement with the L2 reference
    let specs: Vec<EpisodeSpec> = (0..1000)
        .map(|i| EpisodeSpec {
            ways: 5,
            shots: 1 + i % 8,
            queries_per_way: 4,
            seed: 0xA11CE + i as u64,
        })
        .collect();
    let synth = SyntheticConfig {
        embed_dim: 16,
        margin: 2.0,
        mode: SumMode::PowerOfTwo,
    };
    let pow2 = episode::run_batch(&specs, &synth, BiasShift::Exact).unwrap();
    assert_eq!(
        pow2.oracle_agreement,
        pow2.queries,
        "power-of-two episodes must agree everywhere; disagreements: {:?}",
        &pow2.disagreements[..pow2.disagreements.len().min(5)]
    );

    // general integer sums: quantization error is real, agreement >= 95%
    let synth = SyntheticConfig {
        embed_dim: 16,
        margin: 2.0,
        mode: SumMode::General,
    };
    let general = episode::run_batch(&specs, &synth, BiasShift::Exact).unwrap();
    let agreement = general.agreement();
    println!(
        "  general-sum agreement {:.4} ({} disagreements over {} queries)",
        agreement,
        general.disagreements.len(),
        general.queries
    );
    for d in general.disagreements.iter().take(10) {
        println!(
            "  disagreement: episode {} query {} datapath {} reference {}",
            d.episode, d.query, d.datapath_class, d.reference_class
        );
    }
    assert!(agreement >= 0.95, "agreement {agreement} below 0.95");
    pass("07 prototype-classifier-fidelity (pow2 sums 100%, general sums >= 95%)");
}

#[test]
fn c08_continual_footprint() {
    let embedder = NetworkConfig::fsl_image_embedder();
    assert_eq!(embedder.embedding_dim(), 48);
    assert_eq!(bytes_per_way(48), 26);

    // 250 classes learned one at a time within what the deployed embedder
    // leaves free on chip
    let budget = MemoryBudget::after_deploying(&embedder).unwrap();
    let mut learner = LearnerState::new(48, budget, BiasShift::Exact).unwrap();
    let mut array = PeArrayState::new(ArrayMode::M16x16);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0008);
    for class in 0..250 {
        let shots: Vec<Vec<QAct>> = (0..10)
            .map(|_| (0..48).map(|_| QAct::new(rng.gen_range(0..16))).collect())
            .collect();
        learner
            .learn_class(&shots, &mut array)
            .unwrap_or_else(|e| panic!("class {class} exhausted the budget: {e}"));
    }
    assert_eq!(learner.ways(), 250);
    assert_eq!(learner.bytes_per_way(), 26);
    pass("08 continual-footprint (26 bytes/way, 250 classes within budget)");
}

#[test]
fn c09_streaming_comparison_at_scale() {
    let config = NetworkConfig::kws_raw_audio();
    assert!(config.receptive_field().unwrap() >= 16_000);
    assert!(config.weight_count() <= HwLimits::default().max_weights);
    let report = compare_strategies(&config, 16_000, 150e6).unwrap();
    println!(
        "  memory ratio {:.0}, compute ratio {:.1}, activation {} B, input {} B",
        report.memory_ratio,
        report.compute_ratio,
        report.activation_bytes_pruned,
        report.input_bytes_pruned
    );
    assert!(
        report.memory_ratio >= 50.0,
        "memory ratio {}",
        report.memory_ratio
    );
    assert!(
        report.compute_ratio >= 5.0,
        "compute ratio {}",
        report.compute_ratio
    );
    assert!(
        report.activation_bytes_pruned <= 2048,
        "activation memory {} B exceeds 2 kB",
        report.activation_bytes_pruned
    );
    assert!(
        report.input_bytes_pruned <= 256,
        "input staging {} B exceeds 0.25 kB",
        report.input_bytes_pruned
    );
    pass("09 streaming-comparison (memory >= 50x, compute >= 5x, <= 2 kB + 0.25 kB)");
}

#[test]
fn c10_matmul_free_audit() {
    // the audit counter is demonstrably live: the dense reference reports
    // its multiplies
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0010);
    let (ckpt, input) = random_case(&mut rng);
    let (_, reference_counts) = audit::with_scope(|| oracle::dense_forward(&ckpt, &input));
    assert!(
        reference_counts.muls > 0,
        "reference path must record multiplies"
    );

    // value paths of the equivalence, mode, learning and classification
    // workloads: zero general multiplies (sequential runs; the audit is
    // per-thread)
    let ((), counts) = audit::with_scope(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0011);
        for _ in 0..10 {
            let (ckpt, input) = random_case(&mut rng);
            run_network(&ckpt, &input, ArrayMode::M16x16).unwrap();
            if chameleon_sim::cost_model::fits_4x4(&ckpt.config) {
                run_network(&ckpt, &input, ArrayMode::M4x4).unwrap();
            }
        }
        let mut learner =
            LearnerState::new(64, MemoryBudget::unlimited(), BiasShift::Exact).unwrap();
        let mut array = PeArrayState::new(ArrayMode::M16x16);
        for class in 0..5u8 {
            let shots: Vec<Vec<QAct>> = (0..4)
                .map(|s| {
                    (0..64)
                        .map(|i| QAct::new((class + s + i as u8) % 16))
                        .collect()
                })
                .collect();
            learner.learn_class(&shots, &mut array).unwrap();
        }
        let query: Vec<QAct> = (0..64).map(|i| QAct::new(i as u8 % 16)).collect();
        learner.classify(&query, &mut array).unwrap();
    });
    assert_eq!(counts.muls, 0, "datapath performed a general multiply");
    assert!(counts.shifts > 0 && counts.adds > 0);
    pass("10 matmul-free-audit (zero general multiplies on the value path)");
}
