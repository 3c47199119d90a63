//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::cell::Cell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use avtse::avtasnet::{upsample_index, AvTasNet, AvTasNetConfig, NormKind, SeparatorConfig};
use avtse::favsnet::{FavsConfig, FavsNet};
use avtse::lipnet::{
    label_viseme_clips, linear_probe_accuracy, pooled_embeddings, synth_viseme_corpus, train_extractor, ClassifierHead,
    FrameNorm, LipEmbeddingSeq, LipNet, LipNetConfig, LipTrainConfig, TargetInventory, EMBEDDING_DIM,
};
use avtse::masks::{psa_loss_with_grad, PhaseSource};
use avtse::mixsim::{build_manifest, mix, mix_examples, synth_av_corpus, MixtureExample, Split};
use avtse::nn::loss::si_snr_loss as tensor_si_snr_loss;
use avtse::nn::{clip_grad_norm, Adam, Checkpoint, Init, Mode, ParamStore, Tensor};
use avtse::signal::{pit_si_snr_loss, si_snr, si_snr_loss, si_snr_loss_with_grad, ChunkSpec, Waveform};
use avtse::train::{
    evaluate_examples, make_chunks, prepare_records, train, AvTasNetExtractor, EvalReport, OracleExtractor, OracleMask,
    PlateauSchedule, PreparedRecord, ScheduleEvent, TrainChunk, TrainConfig, Trainable,
};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($fmt)+)),
        }
    };
}

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::from_samples(v).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Si-SNR straight from its definition, unclamped.
fn reference_si_snr(e: &[f64], t: &[f64]) -> f64 {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (me, mt) = (mean(e), mean(t));
    let e: Vec<f64> = e.iter().map(|v| v - me).collect();
    let t: Vec<f64> = t.iter().map(|v| v - mt).collect();
    let alpha = e.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / t.iter().map(|v| v * v).sum::<f64>();
    let s_pow: f64 = t.iter().map(|v| (alpha * v).powi(2)).sum();
    let n_pow: f64 = e.iter().zip(&t).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    10.0 * (s_pow / n_pow).log10()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = noise(&mut rng, 256);
    let e: Vec<f64> = t.iter().zip(noise(&mut rng, 256)).map(|(a, b)| a + 0.3 * b).collect();
    let base = si_snr(&wave(e.clone()), &wave(t.clone())).unwrap();
    for c in [0.1, 1.0, 10.0, -1.0] {
        let scaled = si_snr(&wave(e.iter().map(|v| v * c).collect()), &wave(t.clone())).unwrap();
        check!((scaled - base).abs() < 1e-9, "scale {c}: {scaled} vs {base}");
    }
    let a = wave(vec![1.0, -1.0, 1.0, -1.0]);
    let b = wave(vec![1.0, 1.0, -1.0, -1.0]);
    check!(si_snr(&a, &b).unwrap() == -30.0, "orthogonal pair is not -30 dB");
    check!(si_snr(&a, &a).unwrap() == 30.0, "identical pair is not +30 dB");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(8..512);
        let t = noise(&mut rng, n);
        let level = rng.random_range(0.05..2.0);
        let e: Vec<f64> = t.iter().zip(noise(&mut rng, n)).map(|(a, b)| a + level * b).collect();
        let ours = si_snr(&wave(e.clone()), &wave(t.clone())).unwrap();
        let theirs = reference_si_snr(&e, &t);
        check!(theirs.abs() < 30.0, "reference value {theirs} outside the clamp");
        worst = worst.max(((ours - theirs) / theirs).abs());
    }
    check!(worst < 1e-9, "worst relative disagreement {worst:e}");
    Ok(format!("1000 pairs, worst relative disagreement {worst:.1e}"))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for len in [16, 64, 128] {
        let est: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, len)).collect();
        let tgt: Vec<Vec<f64>> = (0..2).map(|_| noise(&mut rng, len)).collect();
        let loss = |e: &[Vec<f64>]| {
            let er: Vec<&[f64]> = e.iter().map(Vec::as_slice).collect();
            let tr: Vec<&[f64]> = tgt.iter().map(Vec::as_slice).collect();
            si_snr_loss_with_grad::<f64>(&er, &tr).unwrap()
        };
        let (_, grads) = loss(&est);
        // the tensor engine's loss must agree with the closed form
        let flat: Vec<f64> = est.concat();
        let x = Tensor::param(flat, &[2, len]);
        let tl = tensor_si_snr_loss(&x, &tgt).unwrap();
        tl.backward();
        let tgrad = x.grad().unwrap();
        for b in 0..2 {
            for i in 0..len {
                let mut up = est.clone();
                up[b][i] += h;
                let mut down = est.clone();
                down[b][i] -= h;
                let numeric = (loss(&up).0 - loss(&down).0) / (2.0 * h);
                worst = worst.max(rel_err(grads[b][i], numeric));
                worst = worst.max(rel_err(tgrad[b * len + i], numeric));
            }
        }

        let mask: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let mag: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..2.0)).collect();
        let term: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.5)).collect();
        let (_, g) = psa_loss_with_grad::<f64>(&mask, &mag, &term).unwrap();
        for i in 0..len {
            let mut up = mask.clone();
            up[i] += h;
            let mut down = mask.clone();
            down[i] -= h;
            let numeric = (psa_loss_with_grad::<f64>(&up, &mag, &term).unwrap().0
                - psa_loss_with_grad::<f64>(&down, &mag, &term).unwrap().0)
                / (2.0 * h);
            worst = worst.max(rel_err(g[i], numeric));
        }
    }
    check!(worst < 1e-4, "worst relative gradient error {worst:e}");
    Ok(format!("Si-SNR and PSA gradients, worst relative error {worst:.1e}"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 0..n {
        for rest in permutations(n - 1) {
            let mut p = vec![first];
            p.extend(rest.into_iter().map(|r| if r >= first { r + 1 } else { r }));
            out.push(p);
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [2, 3] {
        for _ in 0..100 {
            let targets: Vec<Waveform> = (0..n).map(|_| wave(noise(&mut rng, 64))).collect();
            let estimates: Vec<Waveform> = (0..n)
                .map(|_| {
                    let k = rng.random_range(0..n);
                    let mixed = targets[k]
                        .samples()
                        .iter()
                        .zip(noise(&mut rng, 64))
                        .map(|(a, b)| a + 0.7 * b)
                        .collect();
                    wave(mixed)
                })
                .collect();
            let mut best: Option<(f64, Vec<usize>)> = None;
            for p in permutations(n) {
                let loss = p
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| {
                        si_snr_loss(std::slice::from_ref(&estimates[j]), std::slice::from_ref(&targets[i])).unwrap()
                    })
                    .sum::<f64>()
                    / n as f64;
                if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    best = Some((loss, p));
                }
            }
            let (loss, perm) = best.unwrap();
            let pit = pit_si_snr_loss(&estimates, &targets).unwrap();
            check!(
                pit.loss == loss && pit.permutation == perm,
                "n={n}: {pit:?} vs ({loss}, {perm:?})"
            );
        }
    }
    Ok("200 instances match the exhaustive search exactly".into())
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_ratio = 0.0f64;
    let mut worst_sum = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=3);
        let sources: Vec<Waveform> = (0..n)
            .map(|_| {
                let len = rng.random_range(500..800);
                wave(noise(&mut rng, len))
            })
            .collect();
        let mut snrs = vec![0.0];
        snrs.extend((1..n).map(|_| rng.random_range(-5.0..5.0)));
        let m = mix(&sources, &snrs).unwrap();
        let p0 = m.scaled_sources[0].power();
        for (s, snr) in m.scaled_sources.iter().zip(&snrs) {
            let want = 10f64.powf(snr / 10.0);
            worst_ratio = worst_ratio.max(((s.power() / p0) - want).abs() / want);
        }
        for (i, v) in m.mixture.samples().iter().enumerate() {
            let sum: f64 = m.scaled_sources.iter().map(|s| s.samples()[i]).sum();
            worst_sum = worst_sum.max((v - sum).abs());
        }
    }
    check!(worst_ratio < 1e-6, "power ratio error {worst_ratio:e}");
    check!(worst_sum < 1e-12, "mixture sum error {worst_sum:e}");

    let utts = synth_av_corpus(20, 2.0, 40).unwrap();
    let recs: Vec<_> = utts.iter().map(|u| u.record.clone()).collect();
    let a = build_manifest(&recs, 2, 50, (-5.0, 5.0), 41, Split::Test).unwrap();
    let b = build_manifest(&recs, 2, 50, (-5.0, 5.0), 41, Split::Test).unwrap();
    check!(a.to_jsonl() == b.to_jsonl(), "manifests differ between identical runs");
    let ex = mix_examples(&a, &utts).unwrap();
    let mean = ex.iter().map(|e| si_snr(&e.mixture, e.target()).unwrap()).sum::<f64>() / ex.len() as f64;
    check!(mean.abs() <= 1.5, "mean mixture Si-SNR {mean:.2} dB");
    Ok(format!(
        "ratio err {worst_ratio:.1e}, sum err {worst_sum:.1e}, mixture Si-SNR {mean:.2} dB"
    ))
}

fn two_speaker_set(count: usize, seed: u64) -> Vec<MixtureExample> {
    let utts = synth_av_corpus(20, 2.0, seed).unwrap();
    let recs: Vec<_> = utts.iter().map(|u| u.record.clone()).collect();
    let m = build_manifest(&recs, 2, count, (-5.0, 5.0), seed + 1, Split::Test).unwrap();
    mix_examples(&m, &utts).unwrap()
}

fn criterion_5() -> Outcome {
    let ex = two_speaker_set(50, 50);
    let score = |mask, phase| evaluate_examples(&OracleExtractor { mask, phase }, &ex).mean_si_snr;
    let psm = score(OracleMask::Psm, PhaseSource::Mix);
    let irm = score(OracleMask::Irm, PhaseSource::Mix);
    let psm_oracle = score(OracleMask::Psm, PhaseSource::Oracle);
    let mixture = ex.iter().map(|e| si_snr(&e.mixture, e.target()).unwrap()).sum::<f64>() / ex.len() as f64;
    check!(
        psm > irm && irm > mixture,
        "PSM {psm:.2} / IRM {irm:.2} / mixture {mixture:.2}"
    );
    check!(psm_oracle > psm, "oracle phase {psm_oracle:.2} vs mix phase {psm:.2}");
    Ok(format!(
        "PSM {psm:.2} > IRM {irm:.2} > mixture {mixture:.2} dB; PSM oracle phase {psm_oracle:.2} dB"
    ))
}

fn criterion_6() -> Outcome {
    let cfg = AvTasNetConfig::desk();
    check!(cfg.encoder.frames(32000).unwrap() == 1599, "encoder frames for 2 s");
    let net = AvTasNet::<f32>::new(cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for frames in [5, 13, 50] {
        let len = frames * 640;
        let x: Vec<f32> = noise(&mut rng, len).into_iter().map(|v| v as f32).collect();
        let v: Vec<f32> = noise(&mut rng, frames * EMBEDDING_DIM)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        let lips = Tensor::new(v, &[1, EMBEDDING_DIM, frames]);
        let x = Tensor::new(x, &[1, len]);
        let w = net.encode(&x).unwrap();
        check!(w.data().iter().all(|&v| v >= 0.0), "negative encoder output");
        let m = net.separate(&w, &lips, Mode::Eval).unwrap();
        check!(m.data().iter().all(|&v| v >= 0.0), "negative mask value");
        let y = net.forward_tensor(&x, &lips, Mode::Eval).unwrap();
        check!(y.shape() == [1, len], "length {len} became {:?}", y.shape());
    }
    let idx = upsample_index(1600, 50).unwrap();
    check!(idx[31] == 0 && idx[32] == 1 && idx[1599] == 49, "factor-32 repetition");
    let idx = upsample_index(1599, 50).unwrap();
    check!(
        idx.len() == 1599 && idx.iter().filter(|&&i| i == 49).count() == 31,
        "trim to 1599"
    );
    let idx = upsample_index(197, 50).unwrap();
    check!(idx[4] == 1 && idx.len() == 197, "factor-4 repetition for 197 frames");

    // gLN statistics through the input normaliser
    let x = Tensor::new(
        noise(&mut rng, 8 * 300)
            .into_iter()
            .map(|v| 3.0 * v + 1.0)
            .collect::<Vec<f64>>(),
        &[1, 8, 300],
    );
    let mut store = ParamStore::<f64>::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(0);
    let gln = avtse::nn::GlobalLayerNorm::new(&mut Init::new(&mut store, &mut init_rng), 8);
    let y = gln.forward(&x).to_vec();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    check!(
        mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5,
        "gLN mean {mean:e} var {var}"
    );

    // receptive field of one D=8 stack with batch norm in eval mode
    let sep = SeparatorConfig {
        sub_blocks: 8,
        norm: NormKind::Bn,
        bottleneck: 4,
        hidden: 6,
        ..SeparatorConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    let stack = avtse::avtasnet::ConvStack::new(&mut Init::new(&mut store, &mut init_rng), &sep);
    let t = 800;
    let base = noise(&mut rng, 4 * t);
    let mut bumped = base.clone();
    for c in 0..4 {
        bumped[c * t + 400] += 1.0;
    }
    let a = stack.forward(&Tensor::new(base, &[1, 4, t]), Mode::Eval).to_vec();
    let b = stack.forward(&Tensor::new(bumped, &[1, 4, t]), Mode::Eval).to_vec();
    let support = (0..t).filter(|&i| (0..4).any(|c| a[c * t + i] != b[c * t + i])).count();
    check!(support == 511, "receptive field {support}");
    Ok("lengths, 1599 frames, upsampling, gLN, masks, 511-frame receptive field".into())
}

/// Shared desk fixtures for the training criteria.
struct Desk {
    lipnet: LipNet<f32>,
    norm: FrameNorm,
}

fn pretrained_lipnet() -> Result<(Desk, f64, Vec<f64>), String> {
    let clips = synth_viseme_corpus(120, 6, 70).map_err(|e| e.to_string())?;
    let norm = FrameNorm::fit(clips.iter().map(|c| &c.frames)).map_err(|e| e.to_string())?;
    let labelled = label_viseme_clips(&clips, &norm, false).map_err(|e| e.to_string())?;
    let lipnet = LipNet::<f32>::new(LipNetConfig::desk(), 71).map_err(|e| e.to_string())?;
    let head = ClassifierHead::new(TargetInventory::word(2).map_err(|e| e.to_string())?, 72);
    let cfg = LipTrainConfig {
        epochs: 2,
        seed: 73,
        ..LipTrainConfig::default()
    };
    let report = train_extractor(&lipnet, &head, &labelled, &cfg).map_err(|e| e.to_string())?;

    let probe_clips = synth_viseme_corpus(80, 6, 74).map_err(|e| e.to_string())?;
    let probe_set = label_viseme_clips(&probe_clips, &norm, false).map_err(|e| e.to_string())?;
    let feats = pooled_embeddings(&lipnet, &probe_set).map_err(|e| e.to_string())?;
    let rows: Vec<(Vec<f32>, usize)> = feats.into_iter().zip(probe_clips.iter().map(|c| c.class)).collect();
    let (fit, held_out) = rows.split_at(40);
    let acc = linear_probe_accuracy(fit, held_out, 2, 200, 75).map_err(|e| e.to_string())?;
    Ok((Desk { lipnet, norm }, acc, report.epoch_losses))
}

fn prepared(desk: &Desk, examples: Vec<MixtureExample>) -> Vec<PreparedRecord> {
    prepare_records(examples, &desk.lipnet, &desk.norm).unwrap()
}

fn whole_chunks(records: &[PreparedRecord]) -> Vec<TrainChunk> {
    make_chunks(records, &ChunkSpec::default()).unwrap()
}

fn train_si_snr_improvement(net: &AvTasNet<f32>, records: &[PreparedRecord]) -> f64 {
    records
        .iter()
        .map(|r| {
            let est = net.extract(&r.example.mixture, &r.lips).unwrap();
            si_snr(&est, r.example.target()).unwrap() - si_snr(&r.example.mixture, r.example.target()).unwrap()
        })
        .sum::<f64>()
        / records.len() as f64
}

fn criterion_7a(desk: &Desk, records: &[PreparedRecord]) -> Outcome {
    let chunks = whole_chunks(records);
    let refs: Vec<&TrainChunk> = chunks.iter().collect();
    let net = AvTasNet::<f32>::new(AvTasNetConfig::desk(), 77).unwrap();
    let mut opt = Adam::new(1e-3);
    let mut improvement = train_si_snr_improvement(&net, records);
    let mut steps = 0;
    while steps < 500 && improvement < 10.0 {
        net.params().zero_grad();
        let loss = net.batch_loss(&refs, Mode::Train).unwrap();
        check!(loss.item().is_finite(), "non-finite loss at step {steps}");
        loss.backward();
        clip_grad_norm(net.params(), 5.0);
        opt.step(net.params());
        steps += 1;
        if steps % 10 == 0 {
            improvement = train_si_snr_improvement(&net, records);
        }
    }
    let _ = desk;
    check!(
        improvement >= 10.0,
        "improvement {improvement:.2} dB after {steps} steps"
    );
    Ok(format!("{improvement:.2} dB improvement after {steps} steps"))
}

fn criterion_7b(records: &[PreparedRecord]) -> Outcome {
    let chunks = whole_chunks(records);
    let refs: Vec<&TrainChunk> = chunks.iter().collect();
    let net = FavsNet::<f32>::new(FavsConfig::desk(), 78).unwrap();
    let mut opt = Adam::new(1e-3);
    let initial = net.batch_loss(&refs, Mode::Eval).unwrap().item() as f64;
    let mut current = initial;
    let mut steps = 0;
    while steps < 500 && current > initial / 10.0 {
        net.params().zero_grad();
        let loss = net.batch_loss(&refs, Mode::Train).unwrap();
        loss.backward();
        clip_grad_norm(net.params(), 5.0);
        opt.step(net.params());
        steps += 1;
        if steps % 10 == 0 {
            current = net.batch_loss(&refs, Mode::Eval).unwrap().item() as f64;
        }
    }
    let ratio = initial / current;
    check!(
        ratio >= 10.0,
        "PSA loss {initial:.4} -> {current:.4} ({ratio:.1}x) after {steps} steps"
    );
    Ok(format!(
        "PSA loss {initial:.4} -> {current:.5} ({ratio:.1}x) in {steps} steps"
    ))
}

fn multi_speaker_set(desk: &Desk, n_spk: usize, count: usize, seed: u64) -> Vec<PreparedRecord> {
    let utts = synth_av_corpus(12, 2.0, seed).unwrap();
    let recs: Vec<_> = utts.iter().map(|u| u.record.clone()).collect();
    let m = build_manifest(&recs, n_spk, count, (-5.0, 5.0), seed + 1, Split::Train).unwrap();
    prepared(desk, mix_examples(&m, &utts).unwrap())
}

fn trained_model(train_set: &[PreparedRecord], val_set: &[PreparedRecord], seed: u64) -> AvTasNet<f32> {
    let spec = ChunkSpec {
        duration_seconds: 1.0,
        hop_seconds: 1.0,
    };
    let cfg = TrainConfig {
        max_epochs: 6,
        batch_size: 4,
        chunk: spec,
        seed,
        ..TrainConfig::default()
    };
    let net = AvTasNet::<f32>::new(AvTasNetConfig::desk(), seed).unwrap();
    let tc = make_chunks(train_set, &spec).unwrap();
    let vc = make_chunks(val_set, &spec).unwrap();
    train(&net, &tc, &vc, &cfg, serde_json::json!({})).unwrap();
    net
}

fn report(desk: &Desk, net: &AvTasNet<f32>, set: &[PreparedRecord]) -> EvalReport {
    let ex: Vec<MixtureExample> = set.iter().map(|r| r.example.clone()).collect();
    evaluate_examples(
        &AvTasNetExtractor {
            model: net,
            lipnet: &desk.lipnet,
            norm: desk.norm,
        },
        &ex,
    )
}

fn criterion_8(desk: &Desk) -> Outcome {
    let two = multi_speaker_set(desk, 2, 8, 800);
    let three = multi_speaker_set(desk, 3, 16, 810);
    let blend: Vec<PreparedRecord> = two.iter().chain(&three[..8]).cloned().collect();
    let val: Vec<PreparedRecord> = multi_speaker_set(desk, 2, 2, 820)
        .into_iter()
        .chain(multi_speaker_set(desk, 3, 2, 830))
        .collect();
    let test_two = multi_speaker_set(desk, 2, 10, 840);
    let test_three = multi_speaker_set(desk, 3, 10, 850);

    let blended = trained_model(&blend, &val, 81);
    let only_three = trained_model(&three, &val, 81);
    let b2 = report(desk, &blended, &test_two);
    let b3 = report(desk, &blended, &test_three);
    let t2 = report(desk, &only_three, &test_two);
    check!(!b2.incomplete && !b3.incomplete && !t2.incomplete, "evaluation errors");
    check!(
        b2.mean_si_snr >= t2.mean_si_snr,
        "blended {:.2} dB < 3-spk-only {:.2} dB on 2-spk",
        b2.mean_si_snr,
        t2.mean_si_snr
    );
    Ok(format!(
        "blended: 2spk {:.2} / 3spk {:.2} dB; 3spk-only on 2spk {:.2} dB",
        b2.mean_si_snr, b3.mean_si_snr, t2.mean_si_snr
    ))
}

/// One weight whose validation loss follows a script.
struct Scripted {
    store: ParamStore<f32>,
    trace: Vec<f64>,
    calls: Cell<usize>,
}

impl Trainable for Scripted {
    fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn batch_loss(&self, _batch: &[&TrainChunk], mode: Mode) -> avtse::Result<Tensor<f32>> {
        let w = self.store.entries()[0].tensor.clone();
        let reg = w.mul(&w).sum_all();
        if mode.is_train() {
            return Ok(reg);
        }
        let i = self.calls.get();
        self.calls.set(i + 1);
        Ok(reg.scale(0.0).add(&Tensor::filled(self.trace[i] as f32, &[1])))
    }

    fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint::from_store("scripted", serde_json::Value::Null, meta, &self.store)
    }
}

fn criterion_9() -> Outcome {
    let mut s = PlateauSchedule::new(1e-3, 3, 6);
    let events: Vec<ScheduleEvent> = [5.0, 5.0, 5.0, 5.0].iter().map(|&v| s.observe(v)).collect();
    check!(
        events
            == [
                ScheduleEvent::Improved,
                ScheduleEvent::Stagnant,
                ScheduleEvent::Stagnant,
                ScheduleEvent::Halved
            ],
        "events {events:?}"
    );
    check!(s.lr() == 5e-4, "lr after four flat epochs {}", s.lr());

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    Init::<f32>::new(&mut store, &mut rng).uniform("w", &[1], 1);
    let model = Scripted {
        store,
        trace: vec![5.0, 4.0, 4.5, 4.2, 4.1, 4.3, 4.0, 4.6, 4.4, 4.8, 9.0, 9.0],
        calls: Cell::new(0),
    };
    let chunk = TrainChunk {
        id: "scripted@0".into(),
        mixture: vec![0.0; 4],
        target: vec![0.0; 4],
        lips: LipEmbeddingSeq::new(1, vec![0.0; EMBEDDING_DIM]).unwrap(),
    };
    let cfg = TrainConfig {
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let out = train(
        &model,
        std::slice::from_ref(&chunk),
        std::slice::from_ref(&chunk),
        &cfg,
        serde_json::json!({}),
    )
    .map_err(|e| e.to_string())?;
    let lrs: Vec<f64> = out.history.iter().map(|r| r.lr).collect();
    // best at epoch 2, halving after epoch 5; the tie at epoch 7 is not an
    // improvement, so epoch 8 is the sixth stagnant one
    let expected = [1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4];
    check!(lrs == expected, "learning rates {lrs:?}");
    check!(
        out.stopped_early && out.best_epoch == 2,
        "stop {} best {}",
        out.stopped_early,
        out.best_epoch
    );
    Ok("halving after 3 and stop after 6 stagnant epochs".into())
}

fn run(id: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(detail) => println!("criterion {id}: PASS ({detail}; {secs:.1}s)"),
        Err(detail) => println!("criterion {id}: FAIL ({detail}; {secs:.1}s)"),
    }
    result.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= run("1", criterion_1);
    ok &= run("2", criterion_2);
    ok &= run("3", criterion_3);
    ok &= run("4", criterion_4);
    ok &= run("5", criterion_5);
    ok &= run("6", criterion_6);

    let start = Instant::now();
    let desk = pretrained_lipnet();
    let pretrain_secs = start.elapsed().as_secs_f64();
    match desk {
        Ok((desk, acc, losses)) => {
            let overfit = prepared(&desk, two_speaker_set(4, 700));
            ok &= run("7a", || criterion_7a(&desk, &overfit));
            ok &= run("7b", || criterion_7b(&overfit));
            ok &= run("7c", || {
                check!(acc >= 0.9, "probe accuracy {acc:.3}");
                Ok(format!(
                    "probe accuracy {acc:.3}, pre-training losses {losses:.3?}; {pretrain_secs:.1}s"
                ))
            });
            ok &= run("8", || criterion_8(&desk));
        }
        Err(e) => {
            println!("criterion 7: FAIL (lip pre-training: {e})");
            println!("criterion 8: FAIL (no lip extractor)");
            ok = false;
        }
    }
    ok &= run("9", criterion_9);
    if !ok {
        std::process::exit(1);
    }
}
