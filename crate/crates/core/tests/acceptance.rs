//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use recloser_core::classify::{class_select, classify_window, DictionarySet};
use recloser_core::config::PipelineConfig;
use recloser_core::dictionary::Class;
use recloser_core::eval::{covers, Detection};
use recloser_core::kmeans::kmeans;
use recloser_core::linalg::Matrix;
use recloser_core::pipeline::{
    analyze, check_disjoint, eval_to_json, evaluate, train_dictionaries, training_summary_to_json, TrainingSeeds,
};
use recloser_core::screening::sliding_rms;
use recloser_core::sparse::{solve_l1ls, SolverConfig};
use recloser_core::synth::{gen_corpus, gen_event, Corpus, EventScenario, ScenarioKind, ScenarioMix};
use recloser_core::waveform::{Family, SampleWindow};

type Check = Result<String, String>;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix {
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let c = gaussian(rng, n);
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            c.into_iter().map(|v| v / norm).collect()
        })
        .collect();
    Matrix::from_columns(&cols)
}

fn to_nalgebra(d: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(d.rows(), d.cols(), |i, j| d.get(i, j))
}

fn lasso_objective(d: &DMatrix<f64>, x: &DVector<f64>, a: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (x - d * a).norm_squared() + lambda * a.lp_norm(1)
}

/// Largest subgradient violation, computed with dense nalgebra products.
fn kkt_oracle(d: &DMatrix<f64>, x: &DVector<f64>, a: &DVector<f64>, lambda: f64) -> f64 {
    let corr = d.transpose() * (x - d * a);
    (0..a.len())
        .map(|j| {
            if a[j] == 0.0 {
                (corr[j].abs() - lambda).max(0.0)
            } else {
                (corr[j] - lambda * a[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Exhaustive sign-pattern search: every minimizer satisfies
/// `G_SS a = D_Sᵀx − λ s` with `sign(a) = s` on its support, so the smallest
/// objective among sign-consistent solutions is the global minimum.
fn brute_force_lasso(d: &DMatrix<f64>, x: &DVector<f64>, lambda: f64) -> f64 {
    let p = d.ncols();
    let mut best = 0.5 * x.norm_squared();
    let mut pattern = vec![0i8; p];
    loop {
        let support: Vec<usize> = (0..p).filter(|&j| pattern[j] != 0).collect();
        if !support.is_empty() {
            let ds = d.select_columns(&support);
            let s = DVector::from_iterator(support.len(), support.iter().map(|&j| f64::from(pattern[j])));
            let rhs = ds.transpose() * x - s.scale(lambda);
            if let Some(a) = (ds.transpose() * &ds).lu().solve(&rhs) {
                if a.iter().zip(s.iter()).all(|(v, s)| v * s > 0.0) {
                    let mut full = DVector::zeros(p);
                    for (k, &j) in support.iter().enumerate() {
                        full[j] = a[k];
                    }
                    best = best.min(lasso_objective(d, x, &full, lambda));
                }
            }
        }
        let mut i = 0;
        loop {
            if i == p {
                return best;
            }
            pattern[i] = match pattern[i] {
                0 => 1,
                1 => -1,
                _ => 0,
            };
            if pattern[i] != 0 {
                break;
            }
            i += 1;
        }
    }
}

fn rms_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let len = rng.random_range(16..=2048);
        let m = if case % 2 == 0 { 16 } else { 64 };
        if m > len {
            continue;
        }
        let scale = 10f64.powf(rng.random_range(-2.0..4.0));
        let x: Vec<f64> = gaussian(&mut rng, len).into_iter().map(|v| v * scale).collect();
        let fast = sliding_rms(&x, m).map_err(|e| e.to_string())?;
        if fast.len() != len - m + 1 {
            return Err(format!("case {case}: {} outputs for length {len}", fast.len()));
        }
        for (k, &f) in fast.iter().enumerate() {
            let brute = (x[k..k + m].iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
            worst = worst.max((f - brute).abs());
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max abs error {worst:.2e}"))
    } else {
        Err(format!("max abs error {worst:.2e} > 1e-10"))
    }
}

fn solver_certificate() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_kkt: f64 = 0.0;
    let mut converged = 0;
    for case in 0..500 {
        let n = rng.random_range(8..=180);
        let p = rng.random_range(1..=50);
        let d = random_matrix(&mut rng, n, p);
        let x = gaussian(&mut rng, n);
        let lambda = rng.random_range(0.01..1.0) * d.tr_mul_vec(&x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let code = solve_l1ls(&x, &d, &SolverConfig::with_lambda(lambda)).map_err(|e| format!("case {case}: {e}"))?;
        if code.converged {
            converged += 1;
            let kkt = kkt_oracle(&to_nalgebra(&d), &DVector::from_vec(x), &DVector::from_vec(code.alpha), lambda);
            worst_kkt = worst_kkt.max(kkt);
        }
    }
    let mut worst_rel: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(2..=12);
        let p = rng.random_range(1..=8);
        let d = random_matrix(&mut rng, n, p);
        let x = gaussian(&mut rng, n);
        let lambda = rng.random_range(0.05..0.8);
        let code = solve_l1ls(&x, &d, &SolverConfig::with_lambda(lambda)).map_err(|e| format!("small {case}: {e}"))?;
        let nd = to_nalgebra(&d);
        let xv = DVector::from_vec(x);
        let oracle = brute_force_lasso(&nd, &xv, lambda);
        let got = lasso_objective(&nd, &xv, &DVector::from_vec(code.alpha), lambda);
        worst_rel = worst_rel.max((got - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE));
    }
    let detail = format!("{converged}/500 converged, max KKT {worst_kkt:.2e}; small-case max rel gap {worst_rel:.2e}");
    if worst_kkt <= 1e-6 && worst_rel <= 1e-6 && converged == 500 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn closed_forms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..100 {
        let n = rng.random_range(4..=180);
        let p = rng.random_range(1..=50);
        let d = random_matrix(&mut rng, n, p);
        let x = gaussian(&mut rng, n);
        let bound = d.tr_mul_vec(&x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lambda = bound * rng.random_range(1.0..3.0);
        let code = solve_l1ls(&x, &d, &SolverConfig::with_lambda(lambda)).map_err(|e| e.to_string())?;
        if code.alpha.iter().any(|&a| a != 0.0) {
            return Err(format!("zero-solution case {case}: nonzero coefficient"));
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(8..=64);
        let p = rng.random_range(1..=n.min(50));
        let q = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let cols: Vec<Vec<f64>> = (0..p).map(|j| q.column(j).iter().copied().collect()).collect();
        let d = Matrix::from_columns(&cols);
        let x = gaussian(&mut rng, n);
        let lambda = rng.random_range(0.0..1.5);
        let code = solve_l1ls(&x, &d, &SolverConfig::with_lambda(lambda)).map_err(|e| e.to_string())?;
        for (j, col) in cols.iter().enumerate() {
            let z: f64 = col.iter().zip(&x).map(|(a, b)| a * b).sum();
            let expected = z.signum() * (z.abs() - lambda).max(0.0);
            worst = worst.max((code.alpha[j] - expected).abs());
        }
    }
    if worst <= 1e-8 {
        Ok(format!("zero solution exact; soft-threshold max error {worst:.2e}"))
    } else {
        Err(format!("soft-threshold max error {worst:.2e} > 1e-8"))
    }
}

fn kmeans_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..50 {
        let dim = rng.random_range(2..=20);
        let k = rng.random_range(1..=8);
        let n = rng.random_range(k..=150);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| gaussian(&mut rng, dim).iter().map(|v| 5.0 * v).collect()).collect();
        let points: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = &centers[i % k];
                gaussian(&mut rng, dim).iter().zip(c).map(|(e, c)| c + e).collect()
            })
            .collect();
        let seed = rng.random();
        let a = kmeans(&points, k, seed).map_err(|e| e.to_string())?;
        let b = kmeans(&points, k, seed).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("case {case}: runs with equal seed differ"));
        }
        if a.wcss_history.windows(2).any(|w| w[1] > w[0]) {
            return Err(format!("case {case}: WCSS increased: {:?}", a.wcss_history));
        }
        if !a.converged {
            return Err(format!("case {case}: did not converge"));
        }
        // Lloyd fixed point: reassigning to the returned centroids and
        // recomputing means reproduces them.
        let nearest: Vec<usize> = points
            .iter()
            .map(|p| {
                let dist = |c: &Vec<f64>| c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (0..k).min_by(|&i, &j| dist(&a.centroids[i]).total_cmp(&dist(&a.centroids[j]))).unwrap()
            })
            .collect();
        for j in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(&nearest).filter(|(_, &c)| c == j).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for t in 0..dim {
                let mean = members.iter().map(|p| p[t]).sum::<f64>() / members.len() as f64;
                if (mean - a.centroids[j][t]).abs() > 1e-9 * (1.0 + mean.abs()) {
                    return Err(format!("case {case}: centroid {j} is not the mean of its members"));
                }
            }
        }
    }
    Ok("50 seeded cases: monotone WCSS, fixed point, bit-identical reruns".into())
}

struct Trained {
    train: Corpus,
    test: Corpus,
    dicts: DictionarySet,
}

fn trained(cfg: &PipelineConfig) -> Result<Trained, String> {
    let mix = ScenarioMix::default();
    let train = gen_corpus(100, &mix, 1).map_err(|e| e.to_string())?;
    let test = gen_corpus(100, &mix, 2).map_err(|e| e.to_string())?;
    let (dicts, _) = train_dictionaries(train.events.iter().map(|e| (&e.record, &e.truth)), cfg).map_err(|e| e.to_string())?;
    Ok(Trained { train, test, dicts })
}

fn classifier_identities(t: &Trained, cfg: &PipelineConfig) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for dict in t.dicts.iter() {
        for _ in 0..20 {
            let alpha = gaussian(&mut rng, dict.p());
            let plus = class_select(&alpha, dict, Class::Target);
            let minus = class_select(&alpha, dict, Class::Background);
            for j in 0..alpha.len() {
                if plus[j] + minus[j] != alpha[j] || (plus[j] != 0.0 && minus[j] != 0.0) {
                    return Err(format!("δ-partition broken at atom {j} of {}", dict.family.name()));
                }
            }
        }
    }

    // Half the windows come from real candidates so both labels occur.
    let mut windows = Vec::new();
    'outer: for e in &t.test.events {
        let a = analyze(&e.record, &t.dicts, cfg).map_err(|e| e.to_string())?;
        for c in &a.screening.candidates {
            let w = recloser_core::waveform::padded_window(&e.record, c.channel, c.start_index, cfg.w_class);
            windows.push(w);
            if windows.len() == 25 {
                break 'outer;
            }
        }
    }
    while windows.len() < 50 {
        let family = Family::ALL[windows.len() % 3];
        windows.push(SampleWindow {
            channel: family.channel(recloser_core::waveform::Phase::A),
            start_index: 0,
            values: gaussian(&mut rng, cfg.w_class).iter().map(|v| 300.0 * v).collect(),
            padded: false,
        });
    }
    let mut pulses = 0;
    for (i, w) in windows.iter().enumerate() {
        let dict = t.dicts.get(w.channel.family()).unwrap();
        let base = classify_window(w, dict, &cfg.solver, cfg.conf_th).map_err(|e| e.to_string())?;
        pulses += usize::from(base.is_pulse());
        for c in [0.5, 2.0, 1000.0] {
            let scaled = SampleWindow {
                values: w.values.iter().map(|v| v * c).collect(),
                ..w.clone()
            };
            let r = classify_window(&scaled, dict, &cfg.solver, cfg.conf_th).map_err(|e| e.to_string())?;
            if r.label != base.label || (r.confidence - base.confidence).abs() > 1e-9 {
                return Err(format!(
                    "window {i}, scale {c}: ({:?}, {}) vs ({:?}, {})",
                    r.label, r.confidence, base.label, base.confidence
                ));
            }
        }
    }
    Ok(format!("δ-partition exact; 50 windows ({pulses} pulses) scale-invariant"))
}

fn end_to_end(t: &Trained, cfg: &PipelineConfig) -> Check {
    check_disjoint(
        &TrainingSeeds::from_manifest(&t.train.manifest()).event_seeds,
        &t.test.manifest().seeds(),
    )
    .map_err(|e| e.to_string())?;
    let summary = evaluate(t.test.events.iter().map(|e| (&e.record, &e.truth)), &t.dicts, cfg).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for f in Family::ALL {
        let e = summary.family(f);
        let correct = e.correct_detection_pct.unwrap_or(0.0);
        let false_pct = e.false_detection_pct.unwrap_or(100.0);
        ok &= e.n_true_pulses > 0 && correct >= 95.0 && false_pct <= 2.0;
        parts.push(format!("{} {correct:.2}%/{false_pct:.2}% of {}", f.name(), e.n_true_pulses));
    }
    let detail = parts.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn table_ordering(t: &Trained) -> Check {
    let m = t.test.manifest();
    let (v, i) = (m.pulses_per_family.ls_voltage, m.pulses_per_family.ls_current);
    if v > i {
        Ok(format!("ls_voltage {v} > ls_current {i}"))
    } else {
        Err(format!("ls_voltage {v} <= ls_current {i}"))
    }
}

fn narratives(t: &Trained, cfg: &PipelineConfig) -> Check {
    let run = |kind, seed| -> Result<_, String> {
        let (rec, truth) = gen_event(&EventScenario::new(kind, seed)).map_err(|e| e.to_string())?;
        let a = analyze(&rec, &t.dicts, cfg).map_err(|e| e.to_string())?;
        let report = a.report(cfg);
        Ok((truth, a, report))
    };

    let (truth, a, report) = run(ScenarioKind::UpstreamPulseTest, 7)?;
    let dets = a.detections();
    if truth.pulses.iter().any(|p| !p.channel.family().is_voltage()) {
        return Err("upstream: ground truth has current pulses".into());
    }
    for fam in [Family::SsVoltage, Family::LsVoltage] {
        if !dets.iter().any(|d| d.channel.family() == fam) {
            return Err(format!("upstream: no pulse detected on {}", fam.name()));
        }
    }
    if dets.iter().any(|d| d.channel.family() == Family::LsCurrent) {
        return Err("upstream: pulse reported on a current channel".into());
    }
    if report.all_poles_open_at_end {
        return Err("upstream: device should remain closed".into());
    }
    let upstream = format!("upstream {} detections", dets.len());

    let (truth, a, _) = run(ScenarioKind::TemporaryFault, 7)?;
    let mut inrush_candidates = 0;
    for o in &a.outcomes {
        let r = o.result().ok_or("temporary: classification failed")?;
        let det = Detection {
            channel: r.channel,
            start: r.window_start,
            end: r.window_start + cfg.w_class as i64,
        };
        let is_pulse_window = truth.pulses.iter().any(|p| covers(&det, p));
        let in_inrush = truth.inrush.iter().any(|iv| {
            r.channel.family() == Family::LsCurrent
                && r.channel.phase() == iv.phase && r.window_start < iv.end as i64 && det.end > iv.start as i64
        });
        if in_inrush && !is_pulse_window {
            inrush_candidates += 1;
            if r.is_pulse() {
                return Err(format!("temporary: inrush candidate {:?}@{} labeled pulse", r.channel, r.window_start));
            }
        }
        if is_pulse_window != r.is_pulse() {
            return Err(format!("temporary: {:?}@{} mislabeled", r.channel, r.window_start));
        }
    }
    if inrush_candidates == 0 {
        return Err("temporary: scenario produced no inrush candidates".into());
    }

    let (truth, _, report) = run(ScenarioKind::PermanentFault, 7)?;
    if report.classifications.is_empty() {
        return Err("permanent: no candidates".into());
    }
    if report.classifications.iter().any(|c| c.label != Some(Class::Target)) {
        return Err("permanent: a candidate was not classified +1".into());
    }
    if !report.all_poles_open_at_end || truth.pulses.is_empty() {
        return Err("permanent: poles not all open at end".into());
    }
    Ok(format!(
        "{upstream}; temporary {inrush_candidates} inrush candidates rejected; permanent {} candidates all +1, all open",
        report.classifications.len()
    ))
}

fn pipeline_json(seed: u64) -> Result<String, String> {
    let cfg = PipelineConfig { seed, ..PipelineConfig::default() };
    let mix = ScenarioMix::default();
    let train = gen_corpus(40, &mix, seed).map_err(|e| e.to_string())?;
    let test = gen_corpus(10, &mix, seed + 1).map_err(|e| e.to_string())?;
    let (dicts, summary) = train_dictionaries(train.events.iter().map(|e| (&e.record, &e.truth)), &cfg).map_err(|e| e.to_string())?;
    let mut out = train.manifest().to_json();
    out += &training_summary_to_json(&summary);
    for d in dicts.iter() {
        out += &d.to_json();
    }
    for e in &test.events {
        out += &analyze(&e.record, &dicts, &cfg).map_err(|e| e.to_string())?.report(&cfg).to_json();
    }
    let eval = evaluate(test.events.iter().map(|e| (&e.record, &e.truth)), &dicts, &cfg).map_err(|e| e.to_string())?;
    out += &eval_to_json(&eval);
    Ok(out)
}

fn determinism() -> Check {
    let a = pipeline_json(17)?;
    let b = pipeline_json(17)?;
    if a == b {
        Ok(format!("{} bytes identical", a.len()))
    } else {
        Err("pipeline JSON differs between runs".into())
    }
}

fn main() -> ExitCode {
    let cfg = PipelineConfig::default();
    let mut failures = 0;
    let mut report = |name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let mut result = f();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&result, limit) {
            if elapsed > limit {
                result = Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"));
            }
        }
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail} ({elapsed:.2?})"),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {name}: {detail} ({elapsed:.2?})");
            }
        }
    };

    report("RMS oracle", Some(Duration::from_secs(5)), &mut rms_oracle);
    report("l1 solver certificate", Some(Duration::from_secs(60)), &mut solver_certificate);
    report("closed-form solutions", None, &mut closed_forms);
    report("k-means properties", None, &mut kmeans_properties);

    let start = Instant::now();
    let trained = trained(&cfg);
    let train_time = start.elapsed();
    match &trained {
        Ok(t) => {
            report("classifier identities", None, &mut || classifier_identities(t, &cfg));
            let mut e2e = || end_to_end(t, &cfg).map(|d| format!("{d}; training took {train_time:.2?}"));
            report("end-to-end synthetic detection", Some(Duration::from_secs(300) - train_time), &mut e2e);
            report("LS voltage pulses outnumber LS current pulses", None, &mut || table_ordering(t));
            report("scenario narratives", None, &mut || narratives(t, &cfg));
        }
        Err(e) => {
            for name in [
                "classifier identities",
                "end-to-end synthetic detection",
                "LS voltage pulses outnumber LS current pulses",
                "scenario narratives",
            ] {
                report(name, None, &mut || Err(format!("training failed: {e}")));
            }
        }
    }
    report("pipeline determinism", None, &mut determinism);

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
