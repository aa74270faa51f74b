use super::*;
use crate::aggregate::AggrKind;
use crate::dyngraph::{synthesize, ChangeRatio, DynamicGraph, Fanout, Snapshot, SynthParams};
use crate::nn::{Arch, ModelConfig};
use crate::train::TrainConfig;

fn graph(n: usize, t: usize, d: usize, seed: u64) -> DynamicGraph<f64> {
    synthesize(&SynthParams {
        num_nodes: n,
        avg_degree: 4.0,
        feature_dim: d,
        num_snapshots: t,
        edge_change: ChangeRatio::Fixed(0.05),
        feature_change: ChangeRatio::Fixed(0.05),
        seed,
    })
    .unwrap()
}

/// `g` with only its first `d` feature columns; the structure is unchanged.
fn narrow(g: &DynamicGraph<f64>, d: usize) -> DynamicGraph<f64> {
    let snaps: Vec<Snapshot<f64>> = g
        .snapshots()
        .iter()
        .map(|s| {
            s.with_features(crate::Matrix::from_fn(s.num_nodes(), d, |r, c| {
                s.features()[(r, c)]
            }))
            .unwrap()
        })
        .collect();
    DynamicGraph::new(snaps).unwrap()
}

fn model_cfg(arch: Arch, hidden: usize) -> ModelConfig {
    ModelConfig {
        arch,
        layers: 1,
        hidden_dim: hidden,
        seq_len: 3,
        horizon: 1,
        teacher_forcing: true,
        aggr: AggrKind::Mean,
        fanouts: vec![Fanout::Max(4), Fanout::Max(4)],
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 1,
        evaluate: false,
        ..Default::default()
    }
}

fn trainer(
    g: &DynamicGraph<f64>,
    arch: Arch,
    hidden: usize,
    scheme: Scheme,
    workers: usize,
) -> DistTrainer<f64> {
    let dist = DistConfig {
        workers,
        scheme,
        ..Default::default()
    };
    DistTrainer::new(g, model_cfg(arch, hidden), train_cfg(), dist).unwrap()
}

#[test]
fn single_worker_sends_nothing() {
    let g = graph(30, 10, 2, 1);
    for scheme in Scheme::ALL {
        let mut t = trainer(&g, Arch::GcrnM2, 4, scheme, 1);
        let (reports, ledger) = run_distributed_epoch(&mut t).unwrap();
        assert_eq!(ledger.total(), CommBytes::default(), "{scheme}");
        assert_eq!(reports[0].comm_bytes, 0);
    }
}

#[test]
fn consecutive_blocks_exchange_no_features_or_intermediates() {
    let g = graph(40, 14, 2, 2);
    for arch in [Arch::GcrnM2, Arch::GcrnM1, Arch::Tgcn, Arch::CdGcn] {
        for m in [2, 4] {
            let mut t = trainer(&g, arch, 4, Scheme::ConsecutiveBlock, m);
            let (_, ledger) = run_distributed_epoch(&mut t).unwrap();
            let total = ledger.total();
            assert_eq!(total.remote_features, 0);
            assert_eq!(total.intermediate_redistribution, 0);
            assert_eq!(total.snapshot_fetch, 0);
            assert!(total.gradient_sync > 0);
        }
    }
}

#[test]
fn remote_fetch_charges_the_overlap_snapshots() {
    let g = graph(40, 14, 2, 3);
    let dist = DistConfig {
        workers: 4,
        overlap: OverlapMode::RemoteFetch,
        ..Default::default()
    };
    let t = DistTrainer::new(&g, model_cfg(Arch::GcrnM2, 4), train_cfg(), dist).unwrap();
    let ledger = t.account_epoch();
    for a in &t.plan.assignments {
        let want: u64 = a
            .overlap_snapshots()
            .iter()
            .map(|&s| {
                let s = g.snapshot(s);
                (s.num_nodes() * 2 * 8 + s.num_edges() * 8) as u64
            })
            .sum();
        assert_eq!(ledger.per_worker[a.worker].snapshot_fetch, want);
        assert_eq!(ledger.per_worker[a.worker].remote_features, 0);
    }
    assert!(ledger.total().snapshot_fetch > 0);
}

#[test]
fn node_partition_traffic_grows_with_workers() {
    let g = graph(80, 8, 2, 4);
    let bytes: Vec<u64> = [1, 2, 4, 8]
        .iter()
        .map(|&m| {
            trainer(&g, Arch::GcrnM2, 4, Scheme::NodePartition, m)
                .account_epoch()
                .total()
                .remote_features
        })
        .collect();
    assert_eq!(bytes[0], 0);
    assert!(bytes.windows(2).all(|w| w[0] < w[1]), "{bytes:?}");
}

#[test]
fn node_partition_traffic_scales_with_feature_width() {
    let wide = graph(60, 8, 8, 5);
    let narrow = narrow(&wide, 2);
    let a = trainer(&narrow, Arch::GcrnM2, 4, Scheme::NodePartition, 2)
        .account_epoch()
        .total();
    let b = trainer(&wide, Arch::GcrnM2, 4, Scheme::NodePartition, 2)
        .account_epoch()
        .total();
    assert_eq!(b.remote_features, 4 * a.remote_features);
}

#[test]
fn sequence_partition_traffic_follows_hidden_width_only() {
    let wide = graph(60, 8, 8, 6);
    let narrow = narrow(&wide, 2);
    let bytes = |g: &DynamicGraph<f64>, h| {
        trainer(g, Arch::GcrnM2, h, Scheme::SequencePartition, 4)
            .account_epoch()
            .total()
    };
    let base = bytes(&narrow, 4);
    assert!(base.intermediate_redistribution > 0);
    assert_eq!(base.remote_features, 0);
    assert_eq!(
        bytes(&wide, 4).intermediate_redistribution,
        base.intermediate_redistribution
    );
    assert_eq!(
        bytes(&narrow, 16).intermediate_redistribution,
        4 * base.intermediate_redistribution
    );
}

#[test]
fn training_ledger_equals_dry_run() {
    let g = graph(40, 12, 2, 7);
    for scheme in Scheme::ALL {
        for overlap in [OverlapMode::ReplicateOverlap, OverlapMode::RemoteFetch] {
            let dist = DistConfig {
                workers: 2,
                scheme,
                overlap,
                ..Default::default()
            };
            let mut t =
                DistTrainer::new(&g, model_cfg(Arch::GcrnM2, 4), train_cfg(), dist).unwrap();
            let dry = t.account_epoch();
            let e = t.run_epoch().unwrap();
            assert_eq!(e.ledger, dry, "{scheme} {overlap}");
            assert_eq!(e.merged.comm_bytes, dry.total().total());
        }
    }
}

#[test]
fn gradient_sync_is_ring_volume_per_step() {
    let g = graph(40, 12, 2, 8);
    let mut t = trainer(&g, Arch::Tgcn, 4, Scheme::ConsecutiveBlock, 4);
    let e = t.run_epoch().unwrap();
    let steps = e
        .merged
        .visits
        .iter()
        .map(|&(b, w)| {
            (
                b,
                w - t.plan.chunks.iter().find(|c| c.contains(&w)).unwrap().start,
            )
        })
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let per_step = ring_allreduce_bytes(t.model(0).params.num_elements(), 4, 8);
    for (w, c) in e.ledger.per_worker.iter().enumerate() {
        assert_eq!(c.gradient_sync, per_step[w] * steps as u64);
    }
}

#[test]
fn consecutive_blocks_visit_every_sample_once() {
    let g = graph(40, 13, 2, 9);
    let mut t = trainer(&g, Arch::GcrnM2, 4, Scheme::ConsecutiveBlock, 4);
    let e = t.run_epoch().unwrap();
    let mut visits = e.merged.visits.clone();
    visits.sort_unstable();
    let batches = 40usize.div_ceil(16);
    let want: Vec<_> = (0..batches)
        .flat_map(|b| (0..t.plan.windows.len()).map(move |w| (b, w)))
        .collect();
    assert_eq!(visits, want);
    let counts: Vec<_> = e.workers.iter().map(|r| r.samples()).collect();
    assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= batches);
}

#[test]
fn parameters_do_not_depend_on_worker_count() {
    let g = graph(40, 13, 2, 10);
    let cfg = TrainConfig {
        epochs: 2,
        ..train_cfg()
    };
    let run = |m: usize, parallel: bool| {
        let dist = DistConfig {
            workers: m,
            parallel,
            ..Default::default()
        };
        let mut t = DistTrainer::new(&g, model_cfg(Arch::GcrnM2, 4), cfg.clone(), dist).unwrap();
        let epochs = t.fit(|_| {}).unwrap();
        for w in 1..m {
            assert_eq!(t.model(w).params, t.model(0).params);
        }
        (
            t.model(0).params.clone(),
            epochs.last().unwrap().merged.loss,
        )
    };
    let (p1, l1) = run(1, true);
    for m in [2, 4] {
        let (p, l) = run(m, true);
        assert_eq!(p, p1, "M={m}");
        assert_eq!(l.to_bits(), l1.to_bits());
    }
    assert_eq!(run(4, false).0, p1);
}

#[test]
fn graphs_without_a_window_are_rejected() {
    let g = graph(10, 4, 2, 11);
    let dist = DistConfig {
        workers: 2,
        scheme: Scheme::NodePartition,
        ..Default::default()
    };
    let mc = ModelConfig {
        seq_len: 4,
        ..model_cfg(Arch::GcrnM2, 4)
    };
    assert!(DistTrainer::new(&g, mc, train_cfg(), dist).is_err());
}
