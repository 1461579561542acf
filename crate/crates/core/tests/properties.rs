use std::collections::BTreeSet;

use groundvla::cab_bench::{build_dataset, CabDataset, Split};
use groundvla::gsm::{
    encode_entities, ground_truth_entities, update_memory, EncoderParams, EntityMemory, SceneGraph,
    MEMORY_CAPACITY,
};
use groundvla::metrics::{auroc, ScoredEpisode};
use groundvla::planner::{
    extract_template, parse_tokens, realize, resolve_template, Ambiguity, Instruction, Surface, SymbolicSubGoal,
};
use groundvla::policy::PolicyWiring;
use groundvla::saca::{attention_entropy, saca_forward_rows, SacaParams};
use groundvla::selective::{apply_policy, clarification_rate, risk_coverage_curve, SelectivePolicy};
use groundvla::world_sim::{
    apply_perturbation, generate_scene, replay, scripted_demonstration, Category, Color, Perturbation,
    PerturbationKind, SceneConfig, Size,
};
use proptest::prelude::*;
use proptest::sample::select;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn dataset() -> &'static CabDataset {
    static DS: OnceLock<CabDataset> = OnceLock::new();
    DS.get_or_init(|| build_dataset(0).unwrap())
}

fn goal_strategy() -> impl Strategy<Value = SymbolicSubGoal> {
    (
        proptest::option::of(select(Category::ALL.to_vec())),
        proptest::option::of(select(Color::ALL.to_vec())),
        proptest::option::of(select(Size::ALL.to_vec())),
    )
        .prop_filter_map("needs a slot", |(c, k, s)| SymbolicSubGoal::grasp(c, k, s).ok())
}

fn episode_strategy() -> impl Strategy<Value = ScoredEpisode> {
    (0.0..2.0f64, 1usize..7, any::<bool>(), any::<bool>()).prop_map(|(entropy, n, amb, ok)| ScoredEpisode {
        entropy: (entropy * 8.0).round() / 8.0,
        n_entities: n,
        is_ambiguous: amb,
        act_success: !amb && ok,
        clarified: false,
        succeeded: false,
        retrieval_rank: None,
    })
}

fn rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scene_generation_is_deterministic(seed in any::<u64>()) {
        let cfg = SceneConfig::default();
        prop_assert_eq!(generate_scene(seed, &cfg).unwrap(), generate_scene(seed, &cfg).unwrap());
    }

    #[test]
    fn viewpoint_composition_is_subadditive(a in -1.5..1.5f64, b in -1.5..1.5f64) {
        let c = Perturbation::viewpoint(a).compose_viewpoints(&Perturbation::viewpoint(b)).unwrap();
        prop_assert!(c.magnitude <= a.abs() + b.abs() + 1e-12);
        prop_assert!(Perturbation::new(PerturbationKind::Lighting, a.abs(), 0)
            .compose_viewpoints(&Perturbation::viewpoint(b)).is_none());
    }

    #[test]
    fn zero_magnitude_perturbation_is_identity(seed in any::<u64>(), kind in select(PerturbationKind::ALL.to_vec())) {
        let scene = generate_scene(seed, &SceneConfig::default()).unwrap();
        let out = apply_perturbation(&scene, &Perturbation::new(kind, 0.0, seed)).unwrap();
        prop_assert_eq!(out.scene, scene);
    }

    #[test]
    fn scripted_demos_grasp_their_target(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let scene = generate_scene(seed, &SceneConfig::default()).unwrap();
        let target = scene.objects[pick.index(scene.objects.len())].id;
        let demo = scripted_demonstration(&scene, target).unwrap();
        prop_assert_eq!(replay(&scene, &demo).grasped(), Some(target));
    }

    #[test]
    fn memory_stays_bounded(seed in any::<u64>(), frames in 1usize..30) {
        let params = EncoderParams::reference();
        let mut memory = EntityMemory::default();
        for step in 0..frames as u64 {
            let scene = generate_scene(seed.wrapping_add(step), &SceneConfig::default()).unwrap();
            let graph = encode_entities(&scene, None, &params, step).unwrap();
            memory = update_memory(memory, &graph);
            prop_assert!(memory.len() <= MEMORY_CAPACITY);
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant(seed in any::<u64>(), shift in 1usize..6) {
        let params = EncoderParams::reference();
        let scene = generate_scene(seed, &SceneConfig::default()).unwrap();
        let mut permuted = scene.clone();
        let k = shift % permuted.objects.len();
        permuted.objects.rotate_left(k);
        let a = encode_entities(&scene, None, &params, 0).unwrap();
        let b = encode_entities(&permuted, None, &params, 0).unwrap();
        for node in &a.nodes {
            let other = b.nodes.iter().find(|n| n.id == node.id).unwrap();
            prop_assert_eq!(node, other);
        }
    }

    #[test]
    fn canonical_form_reparses_to_itself(goal in goal_strategy(), verb in 0usize..8, noun in 0usize..8, adjective in 0usize..8) {
        let text = realize(&goal, Surface { verb, noun, adjective });
        let parsed = parse_tokens(&Instruction::tokenize(&text)).unwrap();
        prop_assert_eq!(&parsed, &goal);
        let again: SymbolicSubGoal = parsed.canonical().parse().unwrap();
        prop_assert_eq!(again.canonical(), goal.canonical());
    }

    #[test]
    fn resolution_is_a_subset_satisfying_every_slot(seed in any::<u64>(), goal in goal_strategy()) {
        let scene = generate_scene(seed, &SceneConfig::default()).unwrap();
        let entities = ground_truth_entities(&scene).unwrap();
        let ids: BTreeSet<u32> = entities.ids().into_iter().collect();
        let resolved = resolve_template(&goal, &entities).ids();
        prop_assert!(resolved.is_subset(&ids));
        for o in &scene.objects {
            prop_assert_eq!(resolved.contains(&o.id), goal.matches_object(o));
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..7, d in select(vec![4usize, 8, 16])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = SacaParams::random(10, d, 0.5, &mut rng);
        let r = rows(n, 35, seed ^ 1);
        let q = rows(1, 10, seed ^ 2).remove(0);
        let ids: Vec<u32> = (0..n as u32).collect();
        let (a, _) = saca_forward_rows(&q, &r, &ids, &params).unwrap();
        let mut rr = r.clone();
        let mut rid = ids.clone();
        rr.reverse();
        rid.reverse();
        let (b, _) = saca_forward_rows(&q, &rr, &rid, &params).unwrap();
        for i in 0..n {
            prop_assert!((a.alpha[i] - b.alpha[n - 1 - i]).abs() < 1e-12);
        }
        for (x, y) in a.g.iter().zip(&b.g) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.entropy - b.entropy).abs() < 1e-12);
        prop_assert!(a.entropy >= -1e-12 && a.entropy <= (n as f64).ln() + 1e-12);
    }

    #[test]
    fn sharpening_queries_never_raises_entropy(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = SacaParams::random(10, 8, 0.5, &mut rng);
        let r = rows(n, 35, seed ^ 3);
        let q = rows(1, 10, seed ^ 4).remove(0);
        let ids: Vec<u32> = (0..n as u32).collect();
        let mut last = f64::INFINITY;
        for s in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let mut p = params.clone();
            p.w_q.scale(s);
            let (g, _) = saca_forward_rows(&q, &r, &ids, &p).unwrap();
            prop_assert!(g.entropy <= last + 1e-9);
            last = g.entropy;
        }
    }

    #[test]
    fn entropy_is_bounded_by_log_n(raw in prop::collection::vec(0.0..1.0f64, 1..16)) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-9);
        let alpha: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let h = attention_entropy(&alpha).unwrap();
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (alpha.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn coverage_grows_with_the_threshold(episodes in prop::collection::vec(episode_strategy(), 1..60)) {
        let curve = risk_coverage_curve(&episodes);
        prop_assert!(curve.windows(2).all(|w| w[0].coverage < w[1].coverage && w[0].threshold < w[1].threshold));
        prop_assert!((curve.last().unwrap().coverage - 1.0).abs() < 1e-12);
        let mut last = 2.0;
        for t in [0.0, 0.25, 0.5, 1.0, 1.5, 2.5] {
            let policy = SelectivePolicy::new(t).unwrap();
            let rate = clarification_rate(&episodes, &policy);
            prop_assert!(rate <= last + 1e-12);
            last = rate;
            let decided = apply_policy(&episodes, &policy);
            prop_assert!(decided.iter().all(|e| e.clarified == (e.entropy > t)));
        }
    }

    #[test]
    fn bottleneck_wiring_ignores_instruction_tokens(a in goal_strategy(), b in goal_strategy()) {
        let ta = Instruction::tokenize(&realize(&a, Surface::default()));
        let tb = Instruction::tokenize(&realize(&b, Surface::default()));
        let g = vec![0.5; 8];
        let obs = vec![0.1; 4];
        let x = PolicyWiring::Bottleneck.assemble(g.clone(), obs.clone(), [0.2, 0.3, 0.1], &ta);
        let y = PolicyWiring::Bottleneck.assemble(g.clone(), obs.clone(), [0.2, 0.3, 0.1], &tb);
        prop_assert_eq!(x.features(), y.features());
        let u = PolicyWiring::LanguageToFast.assemble(g.clone(), obs.clone(), [0.2, 0.3, 0.1], &ta);
        let v = PolicyWiring::LanguageToFast.assemble(g, obs, [0.2, 0.3, 0.1], &tb);
        prop_assert_eq!(u.features() == v.features(), a == b);
    }

    #[test]
    fn flipping_labels_flips_auroc(scores in prop::collection::vec((0u8..6, any::<bool>()), 2..80)) {
        let pos = scores.iter().filter(|s| s.1).count();
        prop_assume!(pos > 0 && pos < scores.len());
        let a: Vec<(f64, bool)> = scores.iter().map(|&(s, l)| (s as f64, l)).collect();
        let b: Vec<(f64, bool)> = a.iter().map(|&(s, l)| (s, !l)).collect();
        prop_assert!((auroc(&a).unwrap() + auroc(&b).unwrap() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn benchmark_labels_agree_with_the_resolver(pick in any::<prop::sample::Index>()) {
        let ds = dataset();
        let rec = &ds.instructions[pick.index(ds.instructions.len())];
        let scene = &ds.scene(rec.scene_id).unwrap().scene;
        let goal = extract_template(&rec.instruction()).unwrap();
        prop_assert_eq!(goal.canonical(), rec.template.clone());
        let resolved = resolve_template(&goal, &ground_truth_entities(scene).unwrap()).ids();
        prop_assert_eq!(&resolved, &rec.referent_ids);
        prop_assert_eq!(Some(rec.ambiguity), Ambiguity::from_match_count(resolved.len()));
    }
}

#[test]
fn every_benchmark_instruction_parses_and_matches() {
    let ds = dataset();
    for rec in &ds.instructions {
        let scene = &ds.scene(rec.scene_id).unwrap().scene;
        let goal = extract_template(&rec.instruction()).unwrap();
        let resolved = resolve_template(&goal, &ground_truth_entities(scene).unwrap()).ids();
        assert_eq!(resolved, rec.referent_ids, "instruction {}", rec.instruction_id);
    }
}

#[test]
fn splits_share_no_scenes() {
    let ds = dataset();
    let sets: Vec<BTreeSet<u32>> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|s| ds.scene_ids(*s).into_iter().collect())
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(sets[i].is_disjoint(&sets[j]));
        }
    }
    for rec in &ds.instructions {
        assert_eq!(ds.scene(rec.scene_id).unwrap().split, rec.split);
    }
    ds.validate().unwrap();
}

#[test]
fn memory_with_capacity_evicts_oldest() {
    let params = EncoderParams::reference();
    let scene = generate_scene(3, &SceneConfig::default()).unwrap();
    let mut memory = EntityMemory::with_capacity(2);
    for step in 0..4u64 {
        let graph: SceneGraph = encode_entities(&scene, None, &params, step).unwrap();
        for node in graph.nodes {
            memory.insert(node);
        }
    }
    assert_eq!(memory.len(), 2);
    assert!(memory.nodes().all(|n| n.birth_step == 3));
}
