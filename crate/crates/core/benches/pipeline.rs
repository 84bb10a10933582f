//! Sequential vs. rayon-parallel execution of the hot paths: proof
//! verification, a full simulation and the attack matrix.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fldeco_core::crypto::{keygen, Commitment, KeyPair, PublicKey};
use fldeco_core::exec::Exec;
use fldeco_core::field::{FieldParams, Profile};
use fldeco_core::rng::SimRng;
use fldeco_core::sim::{run_matrix, run_simulation_with, SimConfig};
use fldeco_core::smpc::{
    make_envelopes, oracle_partial, verify_aggregate, AggregationContext, PartialSumProof, Sharing,
};
use fldeco_core::types::{NodeId, RoundId};

const MODES: [Exec; 2] = [Exec::Sequential, Exec::Parallel];

struct Fixture {
    params: FieldParams,
    registry: Vec<(NodeId, PublicKey)>,
    sharings: Vec<(NodeId, u64, Sharing)>,
    partials: Vec<PartialSumProof>,
    dim: usize,
}

fn fixture(profile: Profile, oracles: usize, participants: usize, dim: usize) -> Fixture {
    let params = FieldParams::for_profile(profile);
    let mut rng = SimRng::new(1).fork("bench");
    let keys: Vec<(NodeId, KeyPair)> = (0..oracles)
        .map(|j| (NodeId::new(format!("o{j}")), keygen(&mut rng, &params)))
        .collect();
    let ids: Vec<NodeId> = keys.iter().map(|k| k.0.clone()).collect();
    let sharings: Vec<(NodeId, u64, Sharing)> = (0..participants)
        .map(|p| {
            let id = NodeId::new(format!("v{p:02}"));
            let w: Vec<f64> = (0..dim).map(|c| 0.1 * (p + c) as f64 - 0.5).collect();
            let s = make_envelopes(RoundId(1), &id, &ids, &w, 100, &params, &mut rng).unwrap();
            (id, 100, s)
        })
        .collect();
    let partials = keys
        .iter()
        .enumerate()
        .map(|(j, (id, kp))| {
            let envs: Vec<_> = sharings.iter().map(|s| s.2.envelopes[j].clone()).collect();
            oracle_partial(id, kp, &envs, &params).unwrap()
        })
        .collect();
    Fixture {
        registry: keys.iter().map(|(id, kp)| (id.clone(), kp.pk.clone())).collect(),
        params,
        sharings,
        partials,
        dim,
    }
}

fn bench_verify(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify_aggregate");
    group.sample_size(10);
    for (label, profile, oracles, participants, dim) in [
        ("test/k4/n20/d8", Profile::Test, 4, 20, 8),
        ("secure/k4/n10/d4", Profile::Secure, 4, 10, 4),
    ] {
        let fx = fixture(profile, oracles, participants, dim);
        let contributions: Vec<(NodeId, u64, &[Commitment])> = fx
            .sharings
            .iter()
            .map(|(id, n, s)| (id.clone(), *n, s.commitments.as_slice()))
            .collect();
        for exec in MODES {
            let ctx = AggregationContext {
                round: RoundId(1),
                oracles: &fx.registry,
                contributions: &contributions,
                dim: fx.dim,
                exec,
            };
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), label), &ctx, |b, ctx| {
                b.iter(|| verify_aggregate(ctx, &fx.partials, &fx.params).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_simulation");
    group.sample_size(10);
    let cfg = SimConfig {
        rounds: 3,
        n_vehicles: 20,
        dim: 8,
        ..SimConfig::default()
    };
    for exec in MODES {
        group.bench_function(BenchmarkId::new(format!("{exec:?}"), "v20/d8/r3"), |b| {
            b.iter(|| run_simulation_with(&cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_matrix");
    group.sample_size(10);
    let cfg = SimConfig {
        rounds: 3,
        ..SimConfig::default()
    };
    for exec in MODES {
        group.bench_function(BenchmarkId::new(format!("{exec:?}"), "r3"), |b| {
            b.iter(|| run_matrix(&cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_verify, bench_simulation, bench_matrix);
criterion_main!(benches);
