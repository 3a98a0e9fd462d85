use dkt_core::disparity::bad_pixel_rate;
use dkt_core::matcher::{build_cost_volume, predict, MatcherParams};
use dkt_core::synth::{make_dataset, Domain, DomainSpec, Sample};
use dkt_core::trainer::{
    ablation_suite, evaluate, finetune, pretrain, EvalSet, PathCounters, Strategy, TrainConfig, STRATEGY_NAMES,
};

struct Fixture {
    pretrain: Vec<Sample>,
    finetune: Vec<Sample>,
    eval_a: Vec<Sample>,
    eval_c: Vec<Sample>,
}

fn fixture() -> Fixture {
    let spec = |d| DomainSpec::preset(d, 40, 24);
    Fixture {
        pretrain: make_dataset(&spec(Domain::APretrain), 20, 1).unwrap(),
        finetune: make_dataset(&spec(Domain::BTarget), 6, 100).unwrap(),
        eval_a: make_dataset(&spec(Domain::APretrain), 4, 200).unwrap(),
        eval_c: make_dataset(&spec(Domain::CUnseen), 4, 200).unwrap(),
    }
}

impl Fixture {
    fn sets(&self) -> Vec<EvalSet<'_>> {
        vec![EvalSet { name: "A", samples: &self.eval_a }, EvalSet { name: "C", samples: &self.eval_c }]
    }
}

fn short_cfg() -> TrainConfig {
    TrainConfig { steps: 30, eval_interval: Some(10), ..TrainConfig::default() }
}

fn pretrained(fx: &Fixture) -> MatcherParams {
    pretrain(&TrainConfig { steps: 300, lr: 0.5, ..TrainConfig::default() }, &fx.pretrain).unwrap()
}

#[test]
fn pretraining_learns_domain_a() {
    let fx = fixture();
    let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
    assert_eq!(pretrain(&cfg, &fx.pretrain).unwrap(), MatcherParams::init(16));
    let theta = pretrained(&fx);
    let rate = evaluate(&theta, &fx.eval_a, 1.0).unwrap().bad_pixel_rate;
    assert!(rate < 0.15, "domain A bad-pixel rate {rate}");
    assert_eq!(theta, pretrained(&fx));
    assert!(pretrain(&cfg, &[]).is_err());
}

#[test]
fn evaluation_averages_images() {
    let fx = fixture();
    let theta = MatcherParams::init(16);
    let per_image: Vec<f64> = fx.eval_a[..2]
        .iter()
        .map(|s| {
            let cv = build_cost_volume(&s.left, &s.right, 16).unwrap();
            bad_pixel_rate(&predict(&theta, &cv).unwrap(), &s.dense_gt, 2.0).unwrap().bad_pixel_rate
        })
        .collect();
    let one = evaluate(&theta, &fx.eval_a[..1], 2.0).unwrap();
    assert_eq!(one.bad_pixel_rate, per_image[0]);
    let two = evaluate(&theta, &fx.eval_a[..2], 2.0).unwrap();
    assert!((two.bad_pixel_rate - (per_image[0] + per_image[1]) / 2.0).abs() < 1e-15);
    assert!(evaluate(&theta, &[], 1.0).is_err());
}

#[test]
fn runs_are_reproducible_and_keep_the_frozen_teacher() {
    let fx = fixture();
    let theta = pretrained(&fx);
    for strategy in [Strategy::GtValid, Strategy::DktFull, Strategy::DktNoFrozenTeacher] {
        let a = finetune(strategy, &short_cfg(), &theta, &fx.finetune, &fx.sets()).unwrap();
        let b = finetune(strategy, &short_cfg(), &theta, &fx.finetune, &fx.sets()).unwrap();
        assert_eq!(a, b, "{strategy}");
        assert_eq!(a.frozen_teacher, theta);
        let steps: Vec<usize> = a.rows.iter().filter(|r| r.domain == "A").map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 30]);
        assert_eq!(a.rows.len(), 8);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let fx = fixture();
    let theta = pretrained(&fx);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| finetune(Strategy::DktFull, &short_cfg(), &theta, &fx.finetune, &fx.sets()).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn strategies_only_touch_their_label_paths() {
    let fx = fixture();
    let theta = pretrained(&fx);
    let cfg = short_cfg();
    let counters = |s| finetune(s, &cfg, &theta, &fx.finetune, &fx.sets()).unwrap().counters;

    let gt = counters(Strategy::GtValid);
    assert_eq!(gt, PathCounters { gt_labels_used: 30, ..PathCounters::default() });

    let pl = counters(Strategy::PlAll);
    assert_eq!(pl.gt_labels_used, 0);
    assert_eq!(pl.pl_labels_used, 30);
    assert_eq!(pl.ema_predictions, 0);
    assert!(pl.frozen_pl_predictions <= fx.finetune.len());

    let dkt = counters(Strategy::DktFull);
    assert_eq!((dkt.gt_labels_used, dkt.pl_labels_used, dkt.ema_predictions), (30, 30, 30));
    assert_eq!((dkt.fe_gt_calls, dkt.fe_pl_calls, dkt.ema_reinits), (30, 30, 1));
    assert!(dkt.frozen_pl_predictions >= 1 && dkt.frozen_pl_predictions <= fx.finetune.len());

    let no_frozen = counters(Strategy::DktNoFrozenTeacher);
    assert_eq!(no_frozen.frozen_pl_predictions, 0);
    assert_eq!(no_frozen.fe_pl_calls, 30);

    let fe_pl_only = counters(Strategy::DktFePlOnly);
    assert_eq!((fe_pl_only.fe_gt_calls, fe_pl_only.fe_pl_calls), (0, 30));
}

#[test]
fn zero_momentum_teacher_tracks_the_student() {
    let fx = fixture();
    let theta = pretrained(&fx);
    let cfg = TrainConfig { momentum: 0.0, reinit_step: Some(0), ..short_cfg() };
    let r = finetune(Strategy::DktFull, &cfg, &theta, &fx.finetune, &fx.sets()).unwrap();
    assert_eq!(r.ema_teacher, r.student);
    assert_ne!(r.student, theta);
    assert_eq!(r.counters.ema_reinits, 0);
}

#[test]
fn pseudo_labels_alone_leave_the_weights_unchanged() {
    let fx = fixture();
    let theta = pretrained(&fx);
    let r = finetune(Strategy::PlAll, &short_cfg(), &theta, &fx.finetune, &fx.sets()).unwrap();
    assert_eq!(r.student, theta);
}

#[test]
fn ema_permutation_equals_full_method() {
    use dkt_core::labels::Permutation;
    let fx = fixture();
    let theta = pretrained(&fx);
    let cfg = short_cfg();
    let full = finetune(Strategy::DktFull, &cfg, &theta, &fx.finetune, &fx.sets()).unwrap();
    let perm =
        finetune(Strategy::FeGtPermutation(Permutation::EmaTeacher), &cfg, &theta, &fx.finetune, &fx.sets()).unwrap();
    assert_eq!(full.student, perm.student);
    assert_eq!(full.rows, perm.rows);
}

#[test]
fn incompatible_inputs_are_rejected() {
    let fx = fixture();
    let cfg = short_cfg();
    assert!(finetune(Strategy::GtValid, &cfg, &MatcherParams::init(8), &fx.finetune, &fx.sets()).is_err());
    let mut nan = MatcherParams::init(16);
    nan.w[0] = f64::NAN;
    assert!(finetune(Strategy::GtValid, &cfg, &nan, &fx.finetune, &fx.sets()).is_err());
    assert!(finetune(Strategy::GtValid, &cfg, &MatcherParams::init(16), &[], &fx.sets()).is_err());
}

#[test]
fn divergence_is_reported_with_its_step() {
    let fx = fixture();
    let cfg = TrainConfig { lr: 1e300, ..short_cfg() };
    let err = finetune(Strategy::GtValid, &cfg, &MatcherParams::init(16), &fx.finetune, &fx.sets()).unwrap_err();
    assert!(matches!(err, dkt_core::Error::Divergence { .. } | dkt_core::Error::Numeric { .. }), "{err}");
}

#[test]
fn ablation_table_shape_and_determinism() {
    let fx = fixture();
    let theta = pretrained(&fx);
    let strategies = [Strategy::GtValid, Strategy::PlAll, Strategy::DktFull];
    let cfg = TrainConfig { steps: 10, ..TrainConfig::default() };
    let a = ablation_suite(&strategies, &cfg, &theta, &fx.finetune, &fx.sets()).unwrap();
    assert_eq!(a.len(), (strategies.len() + 1) * 2);
    assert_eq!(a[0].strategy, "pretrained");
    assert!(a.iter().all(|r| r.status == "ok"));
    let b = ablation_suite(&strategies, &cfg, &theta, &fx.finetune, &fx.sets()).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));

    let failing = ablation_suite(&strategies, &cfg, &MatcherParams::init(8), &fx.finetune, &fx.sets());
    assert!(failing.is_err() || failing.unwrap().iter().skip(2).all(|r| r.status != "ok"));
}

#[test]
fn every_strategy_name_parses() {
    for name in STRATEGY_NAMES {
        let name = name.replace("<tau>", "3");
        let s: Strategy = name.parse().unwrap();
        assert_eq!(s.to_string(), name);
    }
    assert!("gt-everything".parse::<Strategy>().is_err());
    assert_eq!("pl-consistent-1.5".parse::<Strategy>().unwrap(), Strategy::PlConsistent(1.5));
}
