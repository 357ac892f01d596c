//! Scratch: diagnose pretext learning + head trainability at scale.

use fogkit::harness::{make_logo_split, synth_cohort, SynthSpec};
use fogkit::neuralcore::net;
use fogkit::neuralcore::{adam_step, ArchSpec, OptimizerSpec, ParamSet, TrainScope};
use fogkit::seeds;
use fogkit::ssl::{self, MaskSpec, TrainPlan};
use fogkit::windowing::{segment, WindowSet, WindowSpec};
use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let spec = SynthSpec { subjects: 10, duration_s: 900.0, rate_hz: 40.0, fog_rate: 0.3 };
    let cohort = synth_cohort(&spec, 42).unwrap();
    let feats: Vec<_> = cohort.iter().map(|(_, f)| f.clone()).collect();
    let plan_split = make_logo_split(&feats, seeds::derive(42, "logo-split")).unwrap();
    let train_sets: Vec<WindowSet> = cohort.iter()
        .filter(|(_, f)| plan_split.group_a.contains(&f.subject_id))
        .map(|(s, _)| segment(s, &WindowSpec::train()).unwrap())
        .collect();
    let mut train_ws = WindowSet::concat(&train_sets).unwrap();
    // Probe: express the same physics in m/s^2 instead of g.
    train_ws.frames.mapv_inplace(|v| v * 9.80665);
    println!("[{:5.0}s] {} train windows (scaled to m/s^2)", t0.elapsed().as_secs_f64(), train_ws.len());

    let arch = ArchSpec::default();
    let plan = TrainPlan { pretrain_epochs: 8, ..TrainPlan::default() };
    let mask = MaskSpec::default();
    let pre = ssl::pretrain(&train_ws.unlabeled(), &arch, &plan, &mask, seeds::derive(42, "pretrain")).unwrap();
    println!("[{:5.0}s] pretrain 8 epochs: {:?}", t0.elapsed().as_secs_f64(),
        pre.meta.pretrain_loss.iter().map(|v| (v*1e4).round()/1e4).collect::<Vec<_>>());

    // Embedding statistics on 600 windows.
    let sub = train_ws.frames.slice(ndarray::s![0..600, .., ..]).to_owned();
    let emb = net::encode(&pre.params, &arch, sub.view()).unwrap();
    let d = emb.shape()[1];
    let mut dead = 0;
    let mut stds = Vec::new();
    for k in 0..d {
        let col: Vec<f64> = emb.column(k).to_vec();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v-m)*(v-m)).sum::<f64>() / col.len() as f64).sqrt();
        if sd < 1e-9 { dead += 1; }
        stds.push(sd);
    }
    stds.sort_by(|a,b| a.partial_cmp(b).unwrap());
    println!("embdim {d}: dead {dead}, sd median {:.4}, max {:.4}, mean-norm {:.4}",
        stds[d/2], stds[d-1],
        emb.rows().into_iter().map(|r| r.iter().map(|v| v*v).sum::<f64>().sqrt()).sum::<f64>() / 600.0);

    // Head-only training at several learning rates, full labels.
    let emb_all = net::encode(&pre.params, &arch, train_ws.frames.view()).unwrap();
    for lr in [1e-4, 1e-3, 1e-2] {
        let mut params = pre.params.clone();
        let fresh = fogkit::neuralcore::ParamArrays::init(&arch, 777).unwrap();
        for i in 0..params.arrays.dense.len() { params.arrays.dense[i] = fresh.dense[i].clone(); }
        params.arrays.out = fresh.out.clone();
        params.adam = ParamSet::init(&arch, 0).unwrap().adam;
        let opt = OptimizerSpec::new(lr, 0.0, 64);
        let n = train_ws.len();
        let mut last = 0.0;
        for epoch in 0..40 {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(epoch as u64);
            order.shuffle(&mut rng);
            let mut acc_loss = 0.0; let mut cnt = 0;
            for batch in order.chunks(64) {
                let (loss, grads) = net::train_batch_head(&params, &arch, &emb_all, batch, &train_ws.labels, epoch as u64 * 7919).unwrap();
                adam_step(&mut params, &grads, &opt, TrainScope::Head).unwrap();
                acc_loss += loss * batch.len() as f64; cnt += batch.len();
            }
            last = acc_loss / cnt as f64;
        }
        // training accuracy
        let mut correct = 0;
        for i in 0..n {
            let e = emb_all.row(i).to_vec();
            let logit = net::logit_from_embedding(&params, &arch, &e);
            let pred = logit >= 0.0;
            if pred == train_ws.labels[i].is_fog() { correct += 1; }
        }
        println!("[{:5.0}s] head lr {lr:.0e}: final bce {last:.4}, train acc {:.4}",
            t0.elapsed().as_secs_f64(), correct as f64 / n as f64);
    }
}
