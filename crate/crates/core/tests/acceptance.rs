//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any
//! criterion fails.

use std::time::{Duration, Instant};

use comac_core::experiments::{
    best_partition, divisors, reconstruction_mismatches, reduction_gaps, run_sweep_with,
    solver_agreement, top_set_frequencies, Figure, SweepSpec,
};
use comac_core::io::write_csv_to;
use comac_core::numerics::{db_to_linear, ChannelTensor, SimParams, Summary, DEFAULT_SEED};
use comac_core::power::{
    build_assignment, equal_split_levels, levels_rate, sponge_squeeze, DEFAULT_TOLERANCE,
};
use comac_core::rates::{RateEngine, RateFamily, RateSamples};
use comac_core::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn run(
    id: usize,
    name: &str,
    limit: Duration,
    criterion: impl FnOnce() -> Result<Outcome>,
) -> bool {
    let start = Instant::now();
    let result = criterion();
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(o) => (o.passed, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = elapsed <= limit;
    let ok = passed && in_time;
    println!(
        "{} [{id:2}] {name}: {detail}; {:.1}s of {}s{}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { " (over time)" }
    );
    ok
}

fn reductions() -> Result<Outcome> {
    let (direct, sfa) = reduction_gaps(
        &RateEngine::new(),
        16,
        4,
        db_to_linear(10.0),
        10_000,
        DEFAULT_SEED,
    )?;
    outcome(
        direct == 0.0 && sfa == 0.0,
        format!("max |direct-ofdm(N=1) - conventional| = {direct:e}, max |sfa-avg(N=1) - opportunistic| = {sfa:e}"),
    )
}

fn optimizer() -> Result<Outcome> {
    let a = solver_agreement(100, DEFAULT_SEED)?;
    outcome(
        a.objective_gap < 1e-6 && a.kkt < 1e-6 && a.power_gap < 1e-8,
        format!(
            "{} instances: objective gap {:.2e} (< 1e-6), residual {:.2e} (< 1e-6), power gap {:.2e}·P (< 1e-8)",
            a.instances, a.objective_gap, a.kkt, a.power_gap
        ),
    )
}

fn dominance() -> Result<Outcome> {
    let params = SimParams::new(16, 4, 8, 10.0);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for t in 0..10_000 {
        let gains = ChannelTensor::draw(16, 8, 1, DEFAULT_SEED, t).gains(0);
        let assignment = build_assignment(&gains, 4)?;
        let solution = sponge_squeeze(&gains, &assignment, &params, DEFAULT_TOLERANCE)?;
        let equal = levels_rate(&equal_split_levels(&gains, &assignment, &params)?, &params);
        let margin = solution.objective - equal;
        worst = worst.min(margin);
        if margin < -1e-10 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("10000 realizations, {violations} violations, smallest margin {worst:.3e}"),
    )
}

fn gamma() -> Result<Outcome> {
    let engine = RateEngine::new();
    let g = engine.gamma(2, 2, 1_000_000, DEFAULT_SEED)?;
    let one = engine.gamma(1, 1, 1_000, DEFAULT_SEED)?;
    let z = (g.value - std::f64::consts::LN_2).abs() / g.stderr;
    outcome(
        z < 3.0 && one.value == 1.0,
        format!(
            "gamma(2,2) = {:.5} ± {:.5}, {z:.2} stderr from ln 2; gamma(1,1) = {}",
            g.value, g.stderr, one.value
        ),
    )
}

fn frequencies() -> Result<Outcome> {
    let f = top_set_frequencies(4, 2, 100_000, DEFAULT_SEED)?;
    let counts_ok = f.observed_sets == 6
        && f.enumerated_sets == 6
        && f.set_formula == 6.0
        && f.enumerated_combinations == 6
        && f.combination_formula == 6.0;
    outcome(
        f.worst_z <= 3.0 && counts_ok,
        format!(
            "worst set {:.2} sigma from 1/6; |S| = {} (formula {}), |Q| = {} (formula {})",
            f.worst_z,
            f.enumerated_sets,
            f.set_formula,
            f.enumerated_combinations,
            f.combination_formula
        ),
    )
}

fn reconstruction() -> Result<Outcome> {
    let (cases, bad) = reconstruction_mismatches(4, 2, 3)?;
    outcome(
        bad == 0 && cases == 81 * 6 * 2,
        format!("{bad} mismatches in {cases} cases"),
    )
}

// Standard error of `mean(a) − mean(b)` on common channel draws, with the
// Γ uncertainty of both sides propagated.
fn paired_stderr(a: &RateSamples, b: &RateSamples) -> f64 {
    let diffs: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let se = Summary::from_samples(&diffs).stderr;
    let slope = |s: &RateSamples| s.gamma_slopes.iter().sum::<f64>() / s.gamma_slopes.len() as f64;
    let gamma_var = match (a.gamma, b.gamma) {
        (Some(ga), Some(gb)) if (ga.k, ga.m) == (gb.k, gb.m) => {
            ((slope(a) - slope(b)) * ga.stderr).powi(2)
        }
        (ga, gb) => {
            ga.map_or(0.0, |g| (slope(a) * g.stderr).powi(2))
                + gb.map_or(0.0, |g| (slope(b) * g.stderr).powi(2))
        }
    };
    (se * se + gamma_var).sqrt()
}

fn fig4_shape() -> Result<Outcome> {
    let engine = RateEngine::new();
    let k = 128;
    let ms = divisors(k);
    let mut best = Vec::new();
    let mut interior = true;
    let mut detail = Vec::new();
    for n in [1, 4, 16] {
        let mut top: Option<(usize, RateSamples, f64)> = None;
        for &m in ms.iter().rev() {
            let params = SimParams::with_snr_db(k, m, n, 10.0)
                .trials(10_000)
                .seed(DEFAULT_SEED);
            let samples = engine.samples(RateFamily::SfaAvg, &params)?;
            let mean = samples.mean_stderr().0;
            if top.as_ref().is_none_or(|t| mean > t.2) {
                top = Some((m, samples, mean));
            }
        }
        let (m, samples, mean) = top.expect("128 has divisors");
        if n != 1 {
            interior &= m != 1 && m != k;
        }
        detail.push(format!("N={n}: best M={m} rate {mean:.4}"));
        best.push(samples);
    }
    let mut increasing = true;
    for w in best.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        let gap = hi.mean_stderr().0 - lo.mean_stderr().0;
        let paired = paired_stderr(hi, lo);
        let independent = hi.mean_stderr().1.hypot(lo.mean_stderr().1);
        increasing &= gap >= 3.0 * paired;
        detail.push(format!(
            "step {gap:.4} = {:.0} paired stderr ({:.0} independent)",
            gap / paired,
            gap / independent
        ));
    }
    outcome(
        interior && increasing,
        format!("interior maximizer {interior}; {}", detail.join(", ")),
    )
}

fn fig5_trend() -> Result<Outcome> {
    let engine = RateEngine::new();
    let mut bs = Vec::new();
    for k in [8, 32, 128, 512] {
        let params = SimParams::with_snr_db(k, k, 16, 10.0)
            .trials(10_000)
            .seed(DEFAULT_SEED);
        let best = best_partition(&engine, RateFamily::SfaAvg, &params, &divisors(k))?;
        bs.push((k, k / best.params.m));
    }
    let small = bs[0].1 == 1;
    let monotone = bs.windows(2).all(|w| w[0].1 <= w[1].1);
    let list: Vec<String> = bs.iter().map(|(k, b)| format!("K={k}: B*={b}")).collect();
    outcome(
        small && monotone,
        format!(
            "{}; B*=1 at K=8 {small}, nondecreasing {monotone}",
            list.join(", ")
        ),
    )
}

fn fig6_trend() -> Result<Outcome> {
    let engine = RateEngine::new();
    let mut conventional = Vec::new();
    for k in [8, 32, 128] {
        let params = SimParams::with_snr_db(k, k, 16, 10.0)
            .trials(10_000)
            .seed(DEFAULT_SEED);
        conventional.push(engine.estimate(RateFamily::Conventional, &params)?.mean);
    }
    let params = SimParams::with_snr_db(128, 128, 16, 10.0)
        .trials(10_000)
        .seed(DEFAULT_SEED);
    let sfa = best_partition(&engine, RateFamily::SfaAvg, &params, &divisors(128))?;
    let decreasing = conventional.windows(2).all(|w| w[1] < w[0]);
    let ratio = conventional[2] / conventional[0];
    let advantage = sfa.mean / conventional[2];
    outcome(
        decreasing && ratio < 0.1 && advantage >= 10.0,
        format!(
            "conventional {:.4} > {:.4} > {:.4}: {decreasing}; final/initial {:.1}% (< 10%); sfa-avg at K=128 (M={}) {:.4} = {advantage:.2}x conventional (>= 10x)",
            conventional[0],
            conventional[1],
            conventional[2],
            100.0 * ratio,
            sfa.params.m,
            sfa.mean
        ),
    )
}

fn determinism() -> Result<Outcome> {
    let spec = SweepSpec {
        ks: vec![8, 16],
        ns: vec![4],
        families: RateFamily::ALL.to_vec(),
        trials: 2_000,
        ..SweepSpec::new(Figure::Custom)
    };
    let csv = |engine: &RateEngine| -> Result<(Vec<u8>, Vec<f64>)> {
        let out = run_sweep_with(&spec, engine, &mut |_, _| {})?;
        let mut buf = Vec::new();
        write_csv_to(&out.rows, &mut buf)?;
        Ok((buf, out.rows.iter().filter_map(|r| r.rate()).collect()))
    };
    let (first, rates) = csv(&RateEngine::new())?;
    let (second, _) = csv(&RateEngine::new())?;
    let serial_engine = RateEngine::serial();
    let mut worst: f64 = 0.0;
    for family in RateFamily::ALL {
        for (k, m) in [(8, 2), (16, 4), (16, 16)] {
            let params = SimParams::with_snr_db(k, m, 4, 10.0)
                .trials(2_000)
                .seed(DEFAULT_SEED);
            let p = RateEngine::new().estimate(family, &params)?.mean;
            let s = serial_engine.estimate(family, &params)?.mean;
            worst = worst.max((p - s).abs() / s.abs());
        }
    }
    let identical = first == second;
    outcome(
        identical && worst <= 1e-12,
        format!(
            "{} rows, repeated CSV identical {identical}; parallel/serial max relative difference {worst:e}",
            rates.len()
        ),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "reduction identities", secs(10), reductions),
        run(2, "optimizer against oracle", secs(60), optimizer),
        run(3, "dominance over equal split", secs(60), dominance),
        run(4, "gamma oracle", secs(10), gamma),
        run(5, "top-set frequencies", secs(10), frequencies),
        run(6, "reconstruction exactness", secs(5), reconstruction),
        run(7, "rate against M and N at K=128", secs(180), fig4_shape),
        run(
            8,
            "optimal sub-function count against K",
            secs(300),
            fig5_trend,
        ),
        run(9, "vanishing conventional rate", secs(300), fig6_trend),
        run(10, "determinism", secs(120), determinism),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
