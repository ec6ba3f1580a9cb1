use mnmpg::gradcore::{Matrix, ParamStore};
use mnmpg::harness::{io, ExperimentConfig, Snapshot};
use mnmpg::mixer::MixerKind;
use mnmpg::train::{MetricsRow, VisitationRecord};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3f64..1e3, Just(-0.0), Just(0.0)]
}

fn row() -> impl Strategy<Value = MetricsRow> {
    (
        any::<u32>(),
        any::<u32>(),
        0.0f64..=1.0,
        proptest::option::of(finite()),
        proptest::option::of(finite()),
        finite(),
        0.0f64..=1.0,
        proptest::option::of(0.0f64..1e6),
    )
        .prop_map(|(e, t, eps, td, meta, ret, win, wall)| MetricsRow {
            env_steps: e as u64,
            train_steps: t as u64,
            eps,
            td_loss: td,
            meta_reward: meta,
            eval_mean_return: ret,
            eval_win_rate: win,
            wallclock_s: wall,
        })
}

proptest! {
    #[test]
    fn snapshots_round_trip_bit_exactly(
        tensors in proptest::collection::vec((1usize..4, 1usize..4, proptest::collection::vec(finite(), 16)), 1..5),
        seed in any::<u64>(),
    ) {
        let mut params = ParamStore::new();
        for (i, (r, c, vals)) in tensors.iter().enumerate() {
            params.insert(format!("phi.t{i}"), Matrix::from_vec(*r, *c, vals[..r * c].to_vec()).unwrap());
        }
        let snap = Snapshot { env: "grid_gather".into(), mixer: MixerKind::MnmpgNoState, seed, env_steps: 7, train_steps: 3, params };
        let back = io::parse_snapshot(&io::snapshot_text(&snap), "p").unwrap();
        prop_assert_eq!(&back.env, &snap.env);
        prop_assert_eq!(back.mixer, snap.mixer);
        prop_assert_eq!(back.seed, snap.seed);
        for (name, p) in snap.params.iter() {
            let a: Vec<u64> = p.value().as_slice().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.value(name).unwrap().as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn metrics_csv_round_trips(rows in proptest::collection::vec(row(), 0..6)) {
        let text = io::metrics_csv(&rows);
        prop_assert!(text.starts_with(io::METRICS_HEADER));
        let back = io::parse_metrics_csv(&text, "m").unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            prop_assert_eq!(a.env_steps, b.env_steps);
            prop_assert_eq!(a.eval_mean_return.to_bits(), b.eval_mean_return.to_bits());
            prop_assert_eq!(a.td_loss.map(f64::to_bits), b.td_loss.map(f64::to_bits));
            prop_assert_eq!(a.wallclock_s.map(f64::to_bits), b.wallclock_s.map(f64::to_bits));
        }
    }

    #[test]
    fn visitation_csv_round_trips(counts in proptest::collection::btree_map(0usize..1000, 1u64..500, 0..20)) {
        let recs = vec![VisitationRecord { eval_round: 0, env_steps: 100, counts: counts.clone() }];
        let back = io::parse_visitation_csv(&io::visitation_csv(&recs), "v").unwrap();
        let total: u64 = back.iter().flat_map(|r| r.counts.values()).sum();
        prop_assert_eq!(total, counts.values().sum::<u64>());
    }

    #[test]
    fn configs_serialize_and_parse_back(
        lr in 1e-6f64..1e-1,
        meta_lr in 0.0f64..1e-2,
        k in 1usize..8,
        seeds in proptest::collection::vec(any::<u32>(), 1..4),
        mixer in proptest::sample::select(MixerKind::ALL.to_vec()),
    ) {
        let seeds: Vec<u64> = seeds.into_iter().map(u64::from).collect();
        let text = format!(
            "env = \"grid_gather\"\nmixer = \"{mixer}\"\nseed = {}\nseeds = {seeds:?}\ntotal_env_steps = 5000\nlr = {lr:?}\nmeta_lr = {meta_lr:?}\nhierarchy_dim = {k}\n",
            seeds[0]
        );
        let cfg = ExperimentConfig::parse_str(&text, "gen.toml").unwrap();
        prop_assert_eq!(cfg.trainer.lr, lr);
        prop_assert_eq!(cfg.trainer.hierarchy_dim, k);
        let again = ExperimentConfig::parse_str(&cfg.to_toml().unwrap(), "gen.toml").unwrap();
        prop_assert_eq!(again, cfg);
    }
}
