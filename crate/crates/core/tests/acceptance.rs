//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Built with `harness = false`.

mod common;

use common::{small_loop, Harness};
use hyposearch::discovery::{
    final_embedding, final_report, load_checkpoint, run, LoopError, RunState, AbortKind, STATE_FILE,
};
use hyposearch::domain::{Hypothesis, HypothesisSet, Origin};
use hyposearch::hypogen::{
    choose_prompt_mode, render_prompt, GenerationRequest, PromptMode, DEFAULT_DOMAIN_CONTEXT,
};
use hyposearch::ingest::compute_crash_rate;
use hyposearch::rng::SplitMix64;
use hyposearch::stats::{linear_shap, ols_fit, prediction_metrics, student_t_two_sided_p, DesignMatrix};
use hyposearch::synth::{ChatBehavior, WorldSpec};
use hyposearch::vqa::render_batch_prompt;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// Gaussian elimination with partial pivoting on the normal equations.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, yi) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yi;
        }
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=p {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

fn random_instance(rng: &mut SplitMix64, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let beta: Vec<f64> = (0..=k).map(|_| StandardNormal.sample(rng)).collect();
    let features: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let y = (0..n)
        .map(|i| {
            let noise: f64 = StandardNormal.sample(rng);
            beta[0] + (0..k).map(|j| beta[j + 1] * features[j][i]).sum::<f64>() + 0.3 * noise
        })
        .collect();
    (features, y)
}

fn labels(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("x{j}")).collect()
}

fn c1_ols() -> Outcome {
    let start = Instant::now();
    let mut rng = SplitMix64::new(2024);
    let (mut worst_beta, mut worst_orth) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (features, y) = random_instance(&mut rng, 50, 4);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| std::iter::once(1.0).chain(features.iter().map(|c| c[i])).collect())
            .collect();
        let design = DesignMatrix::with_intercept(features, labels(4)).map_err(|e| e.to_string())?;
        let fit = ols_fit(&design, &y).map_err(|e| e.to_string())?;
        let oracle = normal_equations(&rows, &y);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            worst_beta = worst_beta.max((a - b).abs());
        }
        for j in 0..5 {
            let dot: f64 = rows.iter().zip(&y).zip(&fit.fitted).map(|((r, yi), f)| r[j] * (yi - f)).sum();
            worst_orth = worst_orth.max(dot.abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst_beta < 1e-8, format!("max |beta - oracle| = {worst_beta:e}"))?;
    check(worst_orth < 1e-8, format!("max |X'r| = {worst_orth:e}"))?;
    check(secs < 5.0, format!("took {secs:.2}s"))?;
    Ok(format!("100 instances, max coef err {worst_beta:.1e}, max |X'r| {worst_orth:.1e}, {secs:.2}s"))
}

// Gamma at positive multiples of one half, by the recurrence.
fn gamma_half(x: f64) -> f64 {
    let mut g = if x.fract() == 0.0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut z = if x.fract() == 0.0 { 1.0 } else { 0.5 };
    while z < x - 1e-12 {
        g *= z;
        z += 1.0;
    }
    g
}

fn t_density(x: f64, nu: f64) -> f64 {
    gamma_half((nu + 1.0) / 2.0) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(nu / 2.0))
        * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0)
}

// Two-sided tail by composite Simpson over [0, |t|].
fn t_oracle(t: f64, nu: f64) -> f64 {
    let n = 20_000;
    let h = t.abs() / n as f64;
    let mut s = t_density(0.0, nu) + t_density(t.abs(), nu);
    for i in 1..n {
        s += t_density(i as f64 * h, nu) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * s * h / 3.0
}

fn c2_tdist() -> Outcome {
    let p = student_t_two_sided_p(2.0, 10.0).map_err(|e| e.to_string())?;
    check((p - 0.07339).abs() <= 1e-4, format!("p(2, 10) = {p}"))?;
    for &(t, nu) in &[(2.0, 10.0), (0.7, 3.0), (3.5, 25.0), (1.2, 1.0)] {
        let o = t_oracle(t, nu);
        let got = student_t_two_sided_p(t, nu).map_err(|e| e.to_string())?;
        check((got - o).abs() < 1e-9, format!("p({t}, {nu}) = {got}, oracle {o}"))?;
        let neg = student_t_two_sided_p(-t, nu).map_err(|e| e.to_string())?;
        check(neg == got, format!("asymmetric at t = {t}"))?;
    }
    let zero = student_t_two_sided_p(0.0, 10.0).map_err(|e| e.to_string())?;
    check(zero == 1.0, format!("p(0) = {zero}"))?;
    Ok(format!("p(2, 10) = {p:.6}, matches quadrature, symmetric, p(0) = 1"))
}

fn c3_shap() -> Outcome {
    // Local accuracy on random fits.
    let mut rng = SplitMix64::new(77);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (features, y) = random_instance(&mut rng, 40, 3);
        let design = DesignMatrix::with_intercept(features, labels(3)).map_err(|e| e.to_string())?;
        let fit = ols_fit(&design, &y).map_err(|e| e.to_string())?;
        let shap = linear_shap(&fit, &design).map_err(|e| e.to_string())?;
        for (i, row) in shap.attributions.iter().enumerate() {
            let total = shap.base_value + row.iter().sum::<f64>();
            worst = worst.max((total - fit.fitted[i]).abs());
        }
    }
    check(worst < 1e-9, format!("local accuracy error {worst:e}"))?;

    // Exhaustive coalitions on a 3-feature, 4-row instance. The value of a
    // coalition averages the model over background rows with the coalition
    // features pinned to the explained row.
    let x = [[1.0, 0.0, 2.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [0.0, 0.0, 3.0]];
    let beta = [0.5, 1.5, -2.0, 0.25];
    let f = |v: &[f64; 3]| beta[0] + (0..3).map(|j| beta[j + 1] * v[j]).sum::<f64>();
    let value = |i: usize, mask: u32| {
        x.iter()
            .map(|bg| {
                let mut v = *bg;
                for j in 0..3 {
                    if mask & (1 << j) != 0 {
                        v[j] = x[i][j];
                    }
                }
                f(&v)
            })
            .sum::<f64>()
            / 4.0
    };
    let fact = [1.0, 1.0, 2.0, 6.0];
    let features: Vec<Vec<f64>> = (0..3).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let design = DesignMatrix::with_intercept(features, labels(3)).map_err(|e| e.to_string())?;
    let mut model = ols_fit(&design, &x.iter().map(f).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    model.coefficients = beta.to_vec();
    let shap = linear_shap(&model, &design).map_err(|e| e.to_string())?;
    let mut exact_err = 0.0f64;
    for i in 0..4 {
        for j in 0..3 {
            let mut phi = 0.0;
            for mask in 0u32..8 {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let w = fact[s] * fact[3 - s - 1] / fact[3];
                phi += w * (value(i, mask | (1 << j)) - value(i, mask));
            }
            exact_err = exact_err.max((phi - shap.attributions[i][j]).abs());
        }
    }
    check(exact_err < 1e-9, format!("exhaustive Shapley mismatch {exact_err:e}"))?;
    Ok(format!("local accuracy {worst:.1e}, exhaustive 2^3 match {exact_err:.1e}"))
}

fn c4_metrics() -> Outcome {
    let m = prediction_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).map_err(|e| e.to_string())?;
    let rmse = (2.0f64 / 3.0).sqrt();
    check((m.rmse - rmse).abs() < 1e-12, format!("rmse {}", m.rmse))?;
    check((m.mae - 2.0 / 3.0).abs() < 1e-12, format!("mae {}", m.mae))?;
    check(m.r2.abs() < 1e-12, format!("r2 {}", m.r2))?;
    Ok(format!("rmse {:.6}, mae {:.6}, r2 {}", m.rmse, m.mae, m.r2))
}

fn c5_crash_rate() -> Outcome {
    let r = compute_crash_rate(10.0, 10_000.0, 2.0).map_err(|e| e.to_string())?;
    check((r - 1.3698630137).abs() < 1e-9, format!("rate {r}"))?;
    let z = compute_crash_rate(0.0, 10_000.0, 2.0).map_err(|e| e.to_string())?;
    check(z == 0.0, format!("zero-crash rate {z}"))?;
    Ok(format!("rate(10, 10000, 2.0) = {r:.10}, zero crashes give 0"))
}

struct SeedRun {
    seed: u64,
    state: RunState,
    found: usize,
    sign_ok: bool,
    test_r2: f64,
    independent: f64,
    dir: tempfile::TempDir,
}

fn run_seed(seed: u64) -> Result<SeedRun, String> {
    let h = Harness::standard(seed);
    if h.ctx(None).chat.is_remote() || h.ctx(None).vision.is_remote() {
        return Err("synthetic backends must not reach the network".into());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ctx = h.ctx(Some(dir.path()));
    let state = run(&small_loop(seed), &ctx).map_err(|e| e.to_string())?;
    let inc = state.incumbent().ok_or("no incumbent")?;
    let spec = &h.world.spec;
    let mut found = 0;
    let mut sign_ok = true;
    for (j, m) in inc.set.members.iter().enumerate() {
        if let Some(f) = h.world.truth.factor_for(&m.question) {
            found += 1;
            let b = inc.assessment.coefficients[j + 1];
            if b.signum() != spec.true_factors[f].coefficient.signum() {
                sign_ok = false;
            }
        }
    }
    let emb = final_embedding(&state, &ctx).map_err(|e| e.to_string())?;
    let report = final_report(&state, ctx.snapshot, &emb, ctx.models, None).map_err(|e| e.to_string())?;
    Ok(SeedRun {
        seed,
        found,
        sign_ok,
        test_r2: report.metrics.test.r2,
        independent: report.metrics.independent_pair_fraction.unwrap_or(0.0),
        state,
        dir,
    })
}

fn c6_recovery(runs: &[SeedRun], secs: f64) -> Outcome {
    let ceiling = WorldSpec::default().r2_ceiling();
    let good = runs.iter().filter(|r| r.found >= 7).count();
    let per_seed: Vec<String> = runs.iter().map(|r| format!("s{}:{}/8 r2={:.3}", r.seed, r.found, r.test_r2)).collect();
    check(good >= 4, format!("only {good}/5 seeds recovered >= 7 factors ({})", per_seed.join(", ")))?;
    check(runs.iter().all(|r| r.sign_ok), "a recovered factor has the wrong sign")?;
    let mean_r2 = runs.iter().map(|r| r.test_r2).sum::<f64>() / runs.len() as f64;
    check(
        (mean_r2 - ceiling).abs() <= 0.1,
        format!("mean test r2 {mean_r2:.4} vs ceiling {ceiling:.4}"),
    )?;
    check(secs < 60.0, format!("5 runs took {secs:.1}s"))?;
    Ok(format!(
        "{good}/5 seeds >= 7/8, signs correct, test r2 {mean_r2:.3} vs ceiling {ceiling:.3}, {secs:.1}s [{}]",
        per_seed.join(", ")
    ))
}

fn c7_correlation(runs: &[SeedRun]) -> Outcome {
    let worst = runs.iter().map(|r| r.independent).fold(1.0, f64::min);
    check(worst >= 0.85, format!("independent pair fraction {worst:.3}"))?;
    Ok(format!("min fraction of pairs with |r| < 0.2 is {worst:.3}"))
}

fn c8_invariants(runs: &[SeedRun]) -> Outcome {
    for r in runs {
        let st = &r.state;
        let k = st.config.k;
        let mut best = f64::INFINITY;
        for (t, rec) in st.iterations.iter().enumerate() {
            check(rec.set.len() == k, format!("seed {}: |H^{t}| = {}", r.seed, rec.set.len()))?;
            check(rec.val_metrics.rmse <= best, format!("seed {}: incumbent rmse rose at t={t}", r.seed))?;
            best = rec.val_metrics.rmse;
            if t == 0 {
                continue;
            }
            let prev = &st.iterations[t - 1];
            for p in &rec.pruned {
                let j = prev.set.members.iter().position(|m| m.id == p.id).ok_or("pruned id not in prior set")?;
                let pv = prev.assessment.p_values[j];
                check(pv > st.config.alpha, format!("seed {}: pruned {} with p={pv}", r.seed, p.question))?;
            }
        }
    }
    // Replay the first seed and compare checkpoint and event bytes.
    let first = &runs[0];
    let again = run_seed(first.seed)?;
    for f in [STATE_FILE, hyposearch::discovery::EVENTS_FILE] {
        let a = std::fs::read(first.dir.path().join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(again.dir.path().join(f)).map_err(|e| e.to_string())?;
        check(a == b, format!("replay of seed {} differs in {f}", first.seed))?;
    }
    Ok(format!("{} runs audited, replay byte-identical", runs.len()))
}

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).expect("golden file")
}

fn c9_prompts() -> Outcome {
    let qs = [
        "Is there a median strip?",
        "Are there bike lanes?",
        "Is the road surface damaged?",
        "Is there on-street parking?",
    ];
    let pv = vec![0.001, 0.3, 0.05, 0.51234];
    let members = qs.iter().map(|q| Hypothesis::binary(q, Origin::Seed, 0).unwrap()).collect();
    let prior = HypothesisSet::new(0, members).map_err(|e| e.to_string())?;
    let req = |mode| GenerationRequest {
        prior_set: prior.clone(),
        prior_pvalues: pv.clone(),
        m_new: 2,
        mode,
        domain_context: DEFAULT_DOMAIN_CONTEXT.into(),
        alpha: 0.05,
        set_size: 4,
        iteration: 1,
    };
    let exploit = render_prompt(&req(PromptMode::Exploit)).map_err(|e| e.to_string())?;
    check(exploit == golden("exploit.v1.txt"), "exploit prompt differs from golden")?;
    for (q, p) in qs.iter().zip(&pv) {
        check(
            exploit.contains(&format!("p={p:.4} | {q}")),
            format!("exploit prompt lacks ({q}, {p})"),
        )?;
    }
    let explore = render_prompt(&req(PromptMode::Explore)).map_err(|e| e.to_string())?;
    check(explore == golden("explore.v1.txt"), "explore prompt differs from golden")?;
    let seed = render_prompt(&GenerationRequest::bootstrap(50, 0.05, DEFAULT_DOMAIN_CONTEXT)).map_err(|e| e.to_string())?;
    check(seed == golden("seed.v1.txt"), "seed prompt differs from golden")?;
    let batch_set = HypothesisSet::new(
        0,
        vec![
            Hypothesis::binary("Is there a painted crosswalk?", Origin::Seed, 0).unwrap(),
            Hypothesis::new(
                "How many travel lanes are visible?",
                vec!["one".into(), "two".into(), "three or more".into()],
                Origin::Seed,
                0,
            )
            .unwrap(),
            Hypothesis::binary("Is there a bus stop?", Origin::Seed, 0).unwrap(),
        ],
    )
    .map_err(|e| e.to_string())?;
    let batch = render_batch_prompt(&batch_set).map_err(|e| e.to_string())?;
    check(batch == golden("batch.v1.txt"), "batch prompt differs from golden")?;

    let mut rng = SplitMix64::new(9);
    let explores = (0..10_000).filter(|_| choose_prompt_mode(&mut rng, 0.1) == PromptMode::Explore).count();
    let rate = explores as f64 / 10_000.0;
    check((0.08..=0.12).contains(&rate), format!("explore rate {rate}"))?;
    Ok(format!("4 goldens match, all prior pairs listed, explore rate {rate:.4}"))
}

fn c10_resilience() -> Outcome {
    let spec = WorldSpec { seed: 3, ..WorldSpec::default() };
    let h = Harness::new(spec.clone(), 3, ChatBehavior::Vocabulary, 0.03);
    let ctx = h.ctx(None);
    let state = run(&small_loop(3), &ctx).map_err(|e| e.to_string())?;
    check(state.stop.is_some() && state.abort.is_none(), "3% failure run did not finish")?;
    let emb = final_embedding(&state, &ctx).map_err(|e| e.to_string())?;
    let missing = emb.missing_fraction();
    check(missing > 0.0 && missing <= 0.05, format!("missing fraction {missing}"))?;
    let modes = emb.column_modes();
    let imputed = emb.imputed_with(&modes);
    for i in 0..emb.rows() {
        for j in 0..emb.cols() {
            let want = emb.get(i, j).or(modes[j]).map(f64::from);
            check(Some(imputed[j][i]) == want, format!("imputation mismatch at ({i}, {j})"))?;
        }
    }

    let h = Harness::new(spec, 3, ChatBehavior::Vocabulary, 0.10);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let err = run(&small_loop(3), &h.ctx(Some(dir.path()))).err().ok_or("10% failure run did not abort")?;
    let LoopError::Aborted { kind, message, .. } = &err else {
        return Err(format!("unexpected error {err}"));
    };
    check(*kind == AbortKind::Embedding, format!("abort kind {kind:?}"))?;
    check(message.contains("exceeds ceiling"), format!("abort message {message}"))?;
    let saved = load_checkpoint(dir.path()).map_err(|e| format!("checkpoint unreadable: {e}"))?;
    check(saved.abort.is_some(), "checkpoint lacks the abort record")?;
    Ok(format!("3% failure finished with {:.2}% missing, 10% aborted with intact checkpoint", missing * 100.0))
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, out: Outcome| match out {
        Ok(msg) => println!("PASS {name}: {msg}"),
        Err(msg) => {
            failed += 1;
            println!("FAIL {name}: {msg}");
        }
    };
    report("C1 ols-vs-normal-equations", c1_ols());
    report("C2 t-distribution-p-values", c2_tdist());
    report("C3 shap-exactness", c3_shap());
    report("C4 prediction-metrics", c4_metrics());
    report("C5 crash-rate", c5_crash_rate());

    let start = Instant::now();
    let runs: Result<Vec<SeedRun>, String> = (1..=5).map(run_seed).collect();
    let secs = start.elapsed().as_secs_f64();
    match runs {
        Ok(runs) => {
            report("C6 planted-factor-recovery", c6_recovery(&runs, secs));
            report("C7 hypothesis-independence", c7_correlation(&runs));
            report("C8 loop-invariants-and-replay", c8_invariants(&runs));
        }
        Err(e) => {
            for name in ["C6 planted-factor-recovery", "C7 hypothesis-independence", "C8 loop-invariants-and-replay"] {
                report(name, Err(format!("synthetic run failed: {e}")));
            }
        }
    }
    report("C9 prompt-fidelity", c9_prompts());
    report("C10 endpoint-failure-resilience", c10_resilience());

    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
