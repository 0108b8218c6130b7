//! Oracles and random-instance generators shared by the integration tests.
#![allow(dead_code)]

use deep_retrieval::em::{
    coordinate_descent_assign, surrogate_objective, AssignOptions, ScoreTable,
};
use deep_retrieval::reranker::{
    joint_loss, sample_negatives, sampled_softmax_with_negatives, JointObjective,
    JointObjectiveWeights, SoftmaxModel,
};
use deep_retrieval::retrieval::ItemPathMapping;
use deep_retrieval::structure::{
    enumerate_paths, multi_path_loss, path_count, path_log_prob, PathId, PenaltyKind,
    StructureConfig, StructureParams, UserContext,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn config(k: usize, d: usize, emb_dim: usize, hidden: Vec<usize>) -> StructureConfig {
    StructureConfig {
        k,
        d,
        j: 1,
        beam: 1,
        score_capacity: 1,
        emb_dim,
        hidden: Some(hidden),
        ..Default::default()
    }
}

/// Random parameters with non-zero biases, so no ReLU input sits exactly on
/// the kink (zero biases behind an all-dead layer would put it there).
pub fn random_params(
    cfg: &StructureConfig,
    num_items: usize,
    r: &mut ChaCha8Rng,
) -> StructureParams {
    let mut params = StructureParams::random(cfg, num_items, r).expect("valid config");
    for mlp in &mut params.layers {
        for layer in mlp.layers_mut() {
            for b in &mut layer.bias {
                *b = r.random_range(-0.5..0.5);
            }
        }
    }
    params
}

pub fn random_context(num_items: usize, r: &mut ChaCha8Rng) -> UserContext {
    let len = r.random_range(0..=5);
    UserContext::new((0..len).map(|_| r.random_range(0..num_items)).collect(), 69)
}

/// Every path with its log-probability, best first, ties to the smaller path.
pub fn enumerate_sorted(ctx: &UserContext, params: &StructureParams) -> Vec<(PathId, f64)> {
    let mut all: Vec<(PathId, f64)> = enumerate_paths(params.k, params.d)
        .into_iter()
        .map(|c| {
            let lp = path_log_prob(ctx, &c, params).unwrap();
            (c, lp)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all
}

/// Gradient agreement measure: `|a − n| / max(|a|, |n|, 1e-3)`. The floor
/// keeps rounding in the difference quotient of near-zero entries from
/// reading as a large relative error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

const STEP: f64 = 1e-5;

/// Worst [`rel_err`] over every coordinate of `values`, where `loss`
/// re-evaluates the objective after `values` was perturbed in place.
fn check_coords(
    grads: &[f64],
    len: usize,
    mut perturb: impl FnMut(usize, f64),
    mut loss: impl FnMut() -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..len {
        perturb(i, STEP);
        let up = loss();
        perturb(i, -2.0 * STEP);
        let down = loss();
        perturb(i, STEP);
        worst = worst.max(rel_err(grads[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn small_shape(r: &mut ChaCha8Rng) -> (StructureConfig, usize) {
    let k = r.random_range(2..=4);
    let d = r.random_range(1..=3);
    let e = r.random_range(2..=4);
    let hidden = match r.random_range(0..3) {
        0 => vec![],
        1 => vec![r.random_range(2..=5)],
        _ => vec![3, 2],
    };
    (config(k, d, e, hidden), r.random_range(3..=7))
}

/// Worst relative error of the multi-path loss gradient on one random instance.
pub fn multi_path_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (cfg, v) = small_shape(&mut r);
    let mut params = random_params(&cfg, v, &mut r);
    let ctx = UserContext::new(
        (0..r.random_range(1..=4))
            .map(|_| r.random_range(0..v))
            .collect(),
        69,
    );
    let j = r.random_range(1..=3).min(path_count(cfg.k, cfg.d) as usize);
    let paths: Vec<PathId> = (0..j)
        .map(|_| PathId::random(cfg.k, cfg.d, &mut r))
        .collect();
    let (_, grads) = multi_path_loss(&ctx, &paths, &params).unwrap();
    let grad_tensors: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst = 0.0f64;
    for (t, g) in grad_tensors.iter().enumerate() {
        let cell = std::cell::RefCell::new(&mut params);
        worst = worst.max(check_coords(
            g,
            g.len(),
            |i, h| cell.borrow_mut().tensors_mut()[t][i] += h,
            || multi_path_loss(&ctx, &paths, &cell.borrow()).unwrap().0,
        ));
    }
    worst
}

/// Worst relative error of the sampled-softmax gradients (output table and
/// item embeddings) on one random instance.
pub fn sampled_softmax_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (cfg, v) = small_shape(&mut r);
    let mut params = random_params(&cfg, v, &mut r);
    let mut model = SoftmaxModel::random(v, cfg.emb_dim, &mut r);
    let ctx = UserContext::new(
        (0..r.random_range(1..=4))
            .map(|_| r.random_range(0..v))
            .collect(),
        69,
    );
    let pos = r.random_range(0..v);
    let n = r.random_range(1..v);
    let negs = sample_negatives(pos, v, n, &mut r).unwrap();
    let out = sampled_softmax_with_negatives(&ctx, pos, &negs, &model, &params).unwrap();
    let g_out = out.grad_output.values().to_vec();
    let g_items = out.grad_items.values().to_vec();
    let loss = |m: &SoftmaxModel, p: &StructureParams| {
        sampled_softmax_with_negatives(&ctx, pos, &negs, m, p)
            .unwrap()
            .loss
    };
    let worst_out = {
        let cell = std::cell::RefCell::new(&mut model);
        check_coords(
            &g_out,
            g_out.len(),
            |i, h| cell.borrow_mut().output_embeddings.values_mut()[i] += h,
            || loss(&cell.borrow(), &params),
        )
    };
    let cell = std::cell::RefCell::new(&mut params);
    let worst_items = check_coords(
        &g_items,
        g_items.len(),
        |i, h| cell.borrow_mut().item_embeddings.values_mut()[i] += h,
        || loss(&model, &cell.borrow()),
    );
    worst_out.max(worst_items)
}

/// Worst relative error of the joint objective's gradients, before the
/// freeze point, on one random instance.
pub fn joint_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (cfg, v) = small_shape(&mut r);
    let mut params = random_params(&cfg, v, &mut r);
    let mut model = SoftmaxModel::random(v, cfg.emb_dim, &mut r);
    let j = r.random_range(1..=2).min(path_count(cfg.k, cfg.d) as usize);
    let mapping = ItemPathMapping::random(v, cfg.k, cfg.d, j, &mut r).unwrap();
    let ctx = UserContext::new(
        (0..r.random_range(1..=4))
            .map(|_| r.random_range(0..v))
            .collect(),
        69,
    );
    let item = r.random_range(0..v);
    let negs = sample_negatives(item, v, r.random_range(1..v), &mut r).unwrap();
    let objective = JointObjective {
        weights: JointObjectiveWeights {
            structure: r.random_range(0.5..2.0),
            softmax: r.random_range(0.5..2.0),
            freeze_epoch: 2,
        },
        alpha: 1e-3,
        penalty: PenaltyKind::Quartic,
    };
    let total = |m: &SoftmaxModel, p: &StructureParams| {
        joint_loss((&ctx, item), &mapping, p, m, &objective, &negs, 0)
            .unwrap()
            .terms
            .total
    };
    let out = joint_loss(
        (&ctx, item),
        &mapping,
        &params,
        &model,
        &objective,
        &negs,
        0,
    )
    .unwrap();
    let g_struct: Vec<Vec<f64>> = out
        .grads
        .structure
        .tensors()
        .iter()
        .map(|t| t.to_vec())
        .collect();
    let g_out = out.grads.output.values().to_vec();
    let mut worst = 0.0f64;
    for (t, g) in g_struct.iter().enumerate() {
        let cell = std::cell::RefCell::new(&mut params);
        let e = check_coords(
            g,
            g.len(),
            |i, h| cell.borrow_mut().tensors_mut()[t][i] += h,
            || total(&model, &cell.borrow()),
        );
        worst = worst.max(e);
    }
    let cell = std::cell::RefCell::new(&mut model);
    worst.max(check_coords(
        &g_out,
        g_out.len(),
        |i, h| cell.borrow_mut().output_embeddings.values_mut()[i] += h,
        || total(&cell.borrow(), &params),
    ))
}

/// A random score table over the 9 paths of K=3, D=2. Items without
/// scores have zero occurrence count.
pub fn random_score_table(r: &mut ChaCha8Rng, num_items: usize, capacity: usize) -> ScoreTable {
    let all = enumerate_paths(3, 2);
    let mut entries = Vec::with_capacity(num_items);
    let mut counts = Vec::with_capacity(num_items);
    for _ in 0..num_items {
        let n = r.random_range(0..=capacity);
        let mut paths = all.clone();
        paths.shuffle(r);
        let list: Vec<(PathId, f64)> = paths[..n]
            .iter()
            .map(|p| (p.clone(), r.random_range(0.01..5.0)))
            .collect();
        counts.push(if n == 0 {
            0.0
        } else {
            r.random_range(1.0..20.0)
        });
        entries.push(list);
    }
    ScoreTable::from_entries(capacity, entries, counts).unwrap()
}

/// Outcome of coordinate descent on one random table.
pub struct CdOutcome {
    pub monotone: bool,
    pub beats_random: bool,
    pub objective: f64,
    pub best_random: f64,
}

/// Coordinate descent (T sweeps) against `random_trials` uniformly random
/// assignments of J distinct paths per item.
pub fn cd_instance(seed: u64, alpha: f64, sweeps: usize, random_trials: usize) -> CdOutcome {
    let mut r = rng(seed);
    let v = r.random_range(1..=50);
    let j = r.random_range(1..=3);
    let s = r.random_range(j..=8);
    let table = random_score_table(&mut r, v, s);
    let options = AssignOptions {
        alpha,
        paths_per_item: j,
        iterations: sweeps,
        penalty: PenaltyKind::Quartic,
        k: 3,
        d: 2,
    };
    let (mapping, report) = coordinate_descent_assign(&table, &options, None, &mut r).unwrap();
    let objective = surrogate_objective(&table, &mapping, alpha, PenaltyKind::Quartic).unwrap();
    let sweeps_obj = &report.objective_per_sweep;
    let monotone = sweeps_obj.len() == sweeps
        && sweeps_obj
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
        && (objective - sweeps_obj[sweeps - 1]).abs() <= 1e-9 * objective.abs().max(1.0);
    let all = enumerate_paths(3, 2);
    let mut best_random = f64::NEG_INFINITY;
    for _ in 0..random_trials {
        let assignment: Vec<Vec<PathId>> = (0..v)
            .map(|_| all.choose_multiple(&mut r, j).cloned().collect())
            .collect();
        let m = ItemPathMapping::from_assignments(assignment, j).unwrap();
        best_random =
            best_random.max(surrogate_objective(&table, &m, alpha, PenaltyKind::Quartic).unwrap());
    }
    CdOutcome {
        monotone,
        beats_random: objective >= best_random - 1e-9 * best_random.abs().max(1.0),
        objective,
        best_random,
    }
}

/// Largest deviation between the streaming record (η = 1, capacity never
/// reached) and exact per-path sums over a replayed random update stream.
pub fn streaming_replay_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let all = enumerate_paths(3, 2);
    let v = r.random_range(1..=6);
    let mut table = ScoreTable::new(v, all.len()).unwrap();
    let mut exact = vec![vec![0.0f64; all.len()]; v];
    for _ in 0..r.random_range(1..=40) {
        let item = r.random_range(0..v);
        let mut paths = all.clone();
        paths.shuffle(&mut r);
        let fresh: Vec<(PathId, f64)> = paths[..r.random_range(1..=4)]
            .iter()
            .map(|p| (p.clone(), r.random::<f64>()))
            .collect();
        for (p, s) in &fresh {
            let idx = all.iter().position(|q| q == p).unwrap();
            exact[item][idx] += s;
        }
        table.update(item, &fresh, 1.0).unwrap();
    }
    let mut worst = 0.0f64;
    for (item, sums) in exact.iter().enumerate() {
        for (p, want) in all.iter().zip(sums) {
            worst = worst.max((table.score(item, p) - want).abs());
        }
    }
    worst
}

/// Hand-traced η < 1 streams: (capacity, η, steps of fresh scores, the
/// record expected after the last step).
pub fn streaming_fixtures() -> Vec<(
    usize,
    f64,
    Vec<Vec<(&'static str, f64)>>,
    Vec<(&'static str, f64)>,
)> {
    vec![
        // Full record of two: min = 3; A both 0.5·5+2, B old-only 0.5·3,
        // C new-only 0.5·3+4.
        (
            2,
            0.5,
            vec![
                vec![("0-0", 5.0), ("0-1", 3.0)],
                vec![("0-0", 2.0), ("1-0", 4.0)],
            ],
            vec![("1-0", 5.5), ("0-0", 4.5)],
        ),
        // Step 1 into an empty record: min = 0, so A 2, B 1.
        // Step 2, min 1: A 1, B 0.5·1+2 = 2.5, C 0.5·1+3 = 3.5; keep C, B.
        // Step 3, min 2.5: C 1.75, B 1.25, A 0.5·2.5+1 = 2.25,
        // D 0.5·2.5+0.5 = 1.75; C and D tie, the smaller path wins.
        (
            2,
            0.5,
            vec![
                vec![("0-0", 2.0), ("0-1", 1.0)],
                vec![("0-1", 2.0), ("1-0", 3.0)],
                vec![("0-0", 1.0), ("1-1", 0.5)],
            ],
            vec![("0-0", 2.25), ("1-0", 1.75)],
        ),
        // Capacity three, η = 0.25. Step 1: A 4, B 2 (record not full).
        // Step 2, min 0: A 0.25·4+4 = 5, B 0.5, C 8.
        // Step 3, min 0.5: A 1.25, B 0.125+1 = 1.125, C 2, D 0.125+2 = 2.125;
        // keep D, C, A.
        (
            3,
            0.25,
            vec![
                vec![("0-0", 4.0), ("0-1", 2.0)],
                vec![("0-0", 4.0), ("1-0", 8.0)],
                vec![("0-1", 1.0), ("1-1", 2.0)],
            ],
            vec![("1-1", 2.125), ("1-0", 2.0), ("0-0", 1.25)],
        ),
    ]
}

/// Replay a fixture and report whether the record matches exactly.
pub fn run_streaming_fixture(
    capacity: usize,
    eta: f64,
    steps: &[Vec<(&str, f64)>],
    expect: &[(&str, f64)],
) -> bool {
    let mut table = ScoreTable::new(1, capacity).unwrap();
    for step in steps {
        let fresh: Vec<(PathId, f64)> =
            step.iter().map(|(p, s)| (p.parse().unwrap(), *s)).collect();
        table.update(0, &fresh, eta).unwrap();
    }
    let want: Vec<(PathId, f64)> = expect
        .iter()
        .map(|(p, s)| (p.parse().unwrap(), *s))
        .collect();
    table.entries(0) == want.as_slice()
}
