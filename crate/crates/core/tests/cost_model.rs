use edgesplit_core::arch::{
    self, decompose, sample_policy, validate_policy, DecompositionPolicy, DeviceFleet, DeviceSpec, Importance,
    SubModelConfig, TransformerConfig,
};
use edgesplit_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every matrix multiply of one encoder block as `(rows, inner, cols)`.
fn block_matmuls(s: usize, d: usize, heads: usize, dh: usize, mlp: usize) -> Vec<(usize, usize, usize)> {
    let mut shapes = vec![
        (s, d, heads * dh), // Q
        (s, d, heads * dh), // K
        (s, d, heads * dh), // V
    ];
    for _ in 0..heads {
        shapes.push((s, dh, s)); // Q K^T
        shapes.push((s, s, dh)); // softmax(.) V
    }
    shapes.push((s, heads * dh, d)); // output projection
    shapes.push((s, d, mlp)); // fc1
    shapes.push((s, mlp, d)); // fc2
    shapes
}

fn matmul_flops(cfg: &SubModelConfig, base: &TransformerConfig) -> f64 {
    cfg.heads()
        .iter()
        .zip(cfg.mlp_dims())
        .flat_map(|(&h, &m)| block_matmuls(base.seq_len, cfg.embed_dim(), h, base.head_dim(), m))
        .map(|(a, b, c)| 2.0 * a as f64 * b as f64 * c as f64)
        .sum()
}

/// Tensor inventory of a ViT-B/16 (patch embedding, tokens, blocks with
/// biases, final norm, head).
fn vit_b_parameters() -> f64 {
    let (d, mlp, l, s, classes) = (768usize, 3072usize, 12usize, 197usize, 1000usize);
    let mut tensors: Vec<Vec<usize>> = vec![vec![d, 3, 16, 16], vec![d], vec![1, 1, d], vec![1, s, d]];
    for _ in 0..l {
        tensors.extend([
            vec![d],
            vec![d],
            vec![3 * d, d],
            vec![3 * d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![mlp, d],
            vec![mlp],
            vec![d, mlp],
            vec![d],
        ]);
    }
    tensors.extend([vec![d], vec![d], vec![classes, d], vec![classes]]);
    tensors.iter().map(|t| t.iter().product::<usize>() as f64).sum()
}

#[test]
fn flops_match_matmul_enumeration() {
    let base = TransformerConfig::deit_base();
    let full = base.full_sub_model();
    assert_eq!(arch::flops(&full, &base), matmul_flops(&full, &base));
    let ragged = SubModelConfig::new(320, vec![3, 5, 1], vec![100, 7, 3072]).unwrap();
    assert_eq!(arch::flops(&ragged, &base), matmul_flops(&ragged, &base));
}

#[test]
fn deit_memory_is_close_to_a_real_parameter_inventory() {
    let base = TransformerConfig::deit_base();
    let full = base.full_sub_model();
    let oracle = 4.0 * vit_b_parameters() + arch::activation_bytes(&full, &base);
    let ours = arch::memory(&full, &base);
    assert!((ours - oracle).abs() / oracle < 0.10, "{ours} vs {oracle}");
}

fn unbounded(name: &str) -> DeviceSpec {
    DeviceSpec {
        name: name.into(),
        compute: 1e6,
        memory: f64::INFINITY,
        flops_cap: f64::INFINITY,
        bandwidth: 1e3,
        busy_power: 1.0,
        idle_power: 1.0,
    }
}

/// Base-shaped weights stored as flat vectors, indexed `[layer][tensor]`.
struct ToyWeights {
    qkv: Vec<[Vec<f64>; 3]>,
    proj: Vec<Vec<f64>>,
    fc1: Vec<Vec<f64>>,
    fc2: Vec<Vec<f64>>,
    norms: Vec<Vec<f64>>,
    pos: Vec<f64>,
    head: Vec<f64>,
}

impl ToyWeights {
    fn new(b: &TransformerConfig) -> Self {
        let (d, h, dh, m) = (b.embed_dim, b.heads, b.head_dim(), b.mlp_dim);
        Self {
            qkv: (0..b.layers)
                .map(|_| [vec![0.0; d * h * dh], vec![0.0; d * h * dh], vec![0.0; d * h * dh]])
                .collect(),
            proj: vec![vec![0.0; h * dh * d]; b.layers],
            fc1: vec![vec![0.0; d * m]; b.layers],
            fc2: vec![vec![0.0; m * d]; b.layers],
            norms: vec![vec![0.0; 4 * d]; b.layers],
            pos: vec![0.0; (b.seq_len + 1) * d],
            head: vec![0.0; d * b.num_classes],
        }
    }
}

/// Gathers the sliced tensors a layout selects (embed prefix x kept heads or
/// neurons) and returns how many values were copied.
fn sliced_parameter_count(w: &ToyWeights, b: &TransformerConfig, layout: &arch::SubModelLayout) -> usize {
    let d = b.embed_dim;
    let dh = b.head_dim();
    let cols_of = |heads: &[usize]| heads.iter().flat_map(|&h| h * dh..(h + 1) * dh).collect::<Vec<_>>();
    let mut copied = 0;
    for slice in &layout.layers {
        let k = slice.index;
        let cols = cols_of(&slice.heads);
        for t in &w.qkv[k] {
            copied += layout.embed.clone().flat_map(|r| cols.iter().map(move |&c| t[r * b.heads * dh + c])).count();
        }
        copied += cols.iter().flat_map(|&r| layout.embed.clone().map(move |c| w.proj[k][r * d + c])).count();
        copied += layout
            .embed
            .clone()
            .flat_map(|r| slice.neurons.iter().map(move |&c| w.fc1[k][r * b.mlp_dim + c]))
            .count();
        copied += slice.neurons.iter().flat_map(|&r| layout.embed.clone().map(move |c| w.fc2[k][r * d + c])).count();
        copied += (0..4).flat_map(|j| layout.embed.clone().map(move |c| w.norms[k][j * d + c])).count();
    }
    copied += (0..=b.seq_len).flat_map(|r| layout.embed.clone().map(move |c| w.pos[r * d + c])).count();
    copied += layout
        .embed
        .clone()
        .flat_map(|r| (0..b.num_classes).map(move |c| w.head[r * b.num_classes + c]))
        .count();
    copied
}

#[test]
fn decomposed_slices_count_the_modelled_parameters() {
    let base = TransformerConfig::new(4, 16, 4, 32, 5, 3, 4.0).unwrap();
    let fleet = DeviceFleet::new(vec![unbounded("a"), unbounded("b")], 0).unwrap();
    let weights = ToyWeights::new(&base);
    let policy = DecompositionPolicy::new(vec![
        SubModelConfig::new(8, vec![2, 1, 3], vec![10, 20, 5]).unwrap(),
        SubModelConfig::new(4, vec![1], vec![12]).unwrap(),
    ]);
    let importance = Importance {
        heads: vec![vec![0.1, 0.9, 0.5, 0.2]; 4],
        neurons: vec![(0..32).map(|i| ((i * 7) % 32) as f64).collect(); 4],
    };
    for imp in [None, Some(&importance)] {
        let layouts = decompose(&base, &policy, &fleet, imp).unwrap();
        for (layout, cfg) in layouts.iter().zip(&policy.sub_models) {
            let counted = sliced_parameter_count(&weights, &base, layout) as f64;
            assert_eq!(counted, arch::parameter_count(cfg, &base));
            assert_eq!(counted * base.bytes_per_param, arch::memory(cfg, &base) - arch::activation_bytes(cfg, &base));
        }
    }
    let full = decompose(&base, &DecompositionPolicy::identity(&base), &DeviceFleet::single(unbounded("x")), None)
        .unwrap();
    assert_eq!(full[0].embed, 0..16);
    assert!(full[0].layers.iter().all(|l| l.heads == vec![0, 1, 2, 3] && l.neurons == (0..32).collect::<Vec<_>>()));
}

#[test]
fn thousand_sampled_policies_are_feasible() {
    let base = TransformerConfig::deit_base();
    let fleet = DeviceFleet::example();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let p = sample_policy(&base, &fleet, &mut rng).unwrap();
        let report = validate_policy(&p, &base, &fleet).unwrap();
        assert!(report.satisfied(), "{:?}", report.violations);
    }
}

#[test]
fn a_fleet_that_cannot_host_the_minimal_model_is_rejected() {
    let base = TransformerConfig::deit_base();
    let mut tiny = unbounded("tiny");
    tiny.flops_cap = 1e3;
    let fleet = DeviceFleet::single(tiny);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(sample_policy(&base, &fleet, &mut rng), Err(Error::InfeasibleFleet(_))));
    let crowded = DeviceFleet::new((0..13).map(|i| unbounded(&format!("d{i}"))).collect(), 0).unwrap();
    assert!(matches!(sample_policy(&base, &crowded, &mut rng), Err(Error::InfeasibleFleet(_))));
}

fn sub_model() -> impl Strategy<Value = SubModelConfig> {
    (1usize..=12, 1usize..=12).prop_flat_map(|(layers, units)| {
        (
            prop::collection::vec(1usize..=12, layers),
            prop::collection::vec(1usize..=3072, layers),
        )
            .prop_map(move |(h, m)| SubModelConfig::new(units * 64, h, m).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn costs_grow_in_every_field(cfg in sub_model(), which in 0usize..4, at in 0usize..12) {
        let base = TransformerConfig::deit_base();
        let layers = cfg.layers();
        let k = at % layers;
        let mut heads = cfg.heads().to_vec();
        let mut mlp = cfg.mlp_dims().to_vec();
        let mut embed = cfg.embed_dim();
        match which {
            0 => { heads.push(1); mlp.push(1); }
            1 => embed += 64,
            2 => heads[k] += 1,
            _ => mlp[k] += 1,
        }
        let bigger = SubModelConfig::new(embed, heads, mlp).unwrap();
        prop_assert!(arch::flops(&bigger, &base) > arch::flops(&cfg, &base));
        prop_assert!(arch::parameter_count(&bigger, &base) > arch::parameter_count(&cfg, &base));
        prop_assert!(arch::memory(&bigger, &base) > arch::memory(&cfg, &base));
    }

    #[test]
    fn feasibility_survives_larger_budgets(seed in any::<u64>(), scale in 1.0f64..4.0) {
        let base = TransformerConfig::deit_base();
        let fleet = DeviceFleet::example();
        let p = sample_policy(&base, &fleet, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut roomy = fleet.clone();
        for d in &mut roomy.devices {
            d.flops_cap *= scale;
            d.memory *= scale;
        }
        prop_assert!(validate_policy(&p, &base, &roomy).unwrap().satisfied());
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>()) {
        let base = TransformerConfig::deit_base();
        let fleet = DeviceFleet::example();
        let a = sample_policy(&base, &fleet, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_policy(&base, &fleet, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
