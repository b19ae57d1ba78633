//! Attachment scores, tree-structure error metrics, OLS regression, and the
//! paired t-test.

use crate::error::DcstError;
use crate::tree::{children_count, depth_of, DepTree};

/// Aggregate scores over a corpus, with per-sentence breakdowns.
///
/// `uas`/`las`/`pos_head_error` are token fractions in `[0, 1]`; the `ad_*`
/// metrics are mean non-negative reals. Aggregates are micro-averaged over
/// tokens; the per-sentence vectors hold per-sentence means.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub uas: f64,
    pub las: f64,
    pub ad_nc: f64,
    pub ad_dr: f64,
    pub ad_pdh: f64,
    pub pos_head_error: f64,
    pub per_sentence_uas: Vec<f64>,
    pub per_sentence_las: Vec<f64>,
}

fn check_aligned(gold: &[DepTree], pred: &[DepTree]) -> Result<(), DcstError> {
    if gold.len() != pred.len() {
        return Err(DcstError::Shape(format!(
            "corpus size mismatch: {} gold vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(DcstError::Shape(format!(
                "sentence {} length mismatch: {} gold vs {} predicted",
                i,
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}

/// Micro-averaged unlabeled and labeled attachment scores.
pub fn uas_las(gold: &[DepTree], pred: &[DepTree]) -> Result<(f64, f64), DcstError> {
    check_aligned(gold, pred)?;
    let mut tokens = 0usize;
    let mut head_ok = 0usize;
    let mut both_ok = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        for i in 0..g.len() {
            tokens += 1;
            if g.heads[i] == p.heads[i] {
                head_ok += 1;
                let gl = g.labels.as_ref().map(|l| l[i].as_str());
                let pl = p.labels.as_ref().map(|l| l[i].as_str());
                if gl == pl {
                    both_ok += 1;
                }
            }
        }
    }
    if tokens == 0 {
        return Err(DcstError::EmptyInput("uas_las over empty corpus".into()));
    }
    Ok((head_ok as f64 / tokens as f64, both_ok as f64 / tokens as f64))
}

/// Mean absolute difference of per-token children counts.
pub fn ad_nc(gold: &[DepTree], pred: &[DepTree]) -> Result<f64, DcstError> {
    check_aligned(gold, pred)?;
    let mut sum = 0.0;
    let mut tokens = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        for i in 1..=g.len() {
            sum += (children_count(g, i) as f64 - children_count(p, i) as f64).abs();
            tokens += 1;
        }
    }
    Ok(sum / tokens.max(1) as f64)
}

/// Mean absolute difference of per-token distances from the root.
pub fn ad_dr(gold: &[DepTree], pred: &[DepTree]) -> Result<f64, DcstError> {
    check_aligned(gold, pred)?;
    let mut sum = 0.0;
    let mut tokens = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        for i in 1..=g.len() {
            sum += (depth_of(g, i) as f64 - depth_of(p, i) as f64).abs();
            tokens += 1;
        }
    }
    Ok(sum / tokens.max(1) as f64)
}

/// How the signed positional head distance is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PdhVariant {
    /// Count of words strictly between dependent and head: `|Δpos| - 1`.
    #[default]
    Intervening,
    /// Raw positional offset `|Δpos|`.
    Offset,
}

fn pdh(dep: usize, head: usize, variant: PdhVariant) -> f64 {
    let gap = dep.abs_diff(head) as f64;
    let mag = match variant {
        PdhVariant::Intervening => gap - 1.0,
        PdhVariant::Offset => gap,
    };
    // Negative when the dependent sits to the right of its head.
    if dep > head {
        -mag
    } else {
        mag
    }
}

/// Mean absolute difference of signed positional head distances. Tokens
/// attached to ROOT in either tree have no positional head and are skipped.
pub fn ad_pdh(
    gold: &[DepTree],
    pred: &[DepTree],
    variant: PdhVariant,
) -> Result<f64, DcstError> {
    check_aligned(gold, pred)?;
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        for i in 1..=g.len() {
            let (gh, ph) = (g.heads[i - 1], p.heads[i - 1]);
            if gh == 0 || ph == 0 {
                continue;
            }
            sum += (pdh(i, gh, variant) - pdh(i, ph, variant)).abs();
            counted += 1;
        }
    }
    Ok(sum / counted.max(1) as f64)
}

/// Fraction of tokens whose predicted head carries a different POS than the
/// gold head. ROOT acts as a distinct pseudo-POS.
pub fn pos_head_error(
    gold: &[DepTree],
    pred: &[DepTree],
    pos: &[Vec<String>],
) -> Result<f64, DcstError> {
    check_aligned(gold, pred)?;
    if pos.len() != gold.len() {
        return Err(DcstError::Shape("pos corpus size mismatch".into()));
    }
    let mut mismatches = 0usize;
    let mut tokens = 0usize;
    for ((g, p), ps) in gold.iter().zip(pred).zip(pos) {
        let head_pos = |h: usize| -> &str {
            if h == 0 {
                "<ROOT>"
            } else {
                &ps[h - 1]
            }
        };
        for i in 0..g.len() {
            tokens += 1;
            if head_pos(g.heads[i]) != head_pos(p.heads[i]) {
                mismatches += 1;
            }
        }
    }
    Ok(mismatches as f64 / tokens.max(1) as f64)
}

/// All metrics at once, with per-sentence attachment vectors.
pub fn evaluate(
    gold: &[DepTree],
    pred: &[DepTree],
    pos: &[Vec<String>],
    pdh_variant: PdhVariant,
) -> Result<EvalReport, DcstError> {
    let (uas, las) = uas_las(gold, pred)?;
    let mut per_uas = Vec::with_capacity(gold.len());
    let mut per_las = Vec::with_capacity(gold.len());
    for (g, p) in gold.iter().zip(pred) {
        let (u, l) = uas_las(std::slice::from_ref(g), std::slice::from_ref(p))?;
        per_uas.push(u);
        per_las.push(l);
    }
    Ok(EvalReport {
        uas,
        las,
        ad_nc: ad_nc(gold, pred)?,
        ad_dr: ad_dr(gold, pred)?,
        ad_pdh: ad_pdh(gold, pred, pdh_variant)?,
        pos_head_error: pos_head_error(gold, pred, pos)?,
        per_sentence_uas: per_uas,
        per_sentence_las: per_las,
    })
}

/// Ordinary least squares of `y` on `x`.
pub fn regression_r2(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64), DcstError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(DcstError::Shape(format!(
            "regression needs two aligned samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(DcstError::Degenerate("constant x in regression".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (slope * a + intercept);
            e * e
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok((slope, intercept, r2))
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = COEF[0];
        let t = x + 7.5;
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// Continued-fraction evaluation of the regularized incomplete beta I_x(a,b).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        // symmetric branch: I_x(a,b) = 1 - I_{1-x}(b,a)
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_test_p_value(t: f64, df: f64) -> f64 {
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Paired two-sided t-test over aligned per-sentence metric vectors.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64), DcstError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(DcstError::Shape(format!(
            "paired t-test needs two aligned samples of length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(DcstError::Degenerate(
            "zero variance of paired differences".into(),
        ));
    }
    let t = mean / (var / n).sqrt();
    let p = t_test_p_value(t, n - 1.0);
    Ok((t, p))
}
