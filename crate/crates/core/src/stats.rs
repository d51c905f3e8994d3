//! Small statistics helpers: the one-sample Kolmogorov-Smirnov test used by
//! the time-rescaling goodness-of-fit checks.

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("significance level must lie in (0, 1), got {0}")]
    BadAlpha(f64),
}

/// Reference distributions we test against.
#[derive(Debug, Clone, Copy)]
pub enum Cdf {
    /// Exponential with unit rate.
    Exp1,
    /// Uniform on [0, 1].
    Uniform01,
}

impl Cdf {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Cdf::Exp1 => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-x).exp()
                }
            }
            Cdf::Uniform01 => x.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KsTest {
    pub statistic: f64,
    pub critical_value: f64,
    pub n: usize,
    pub alpha: f64,
    pub rejected: bool,
}

/// Supremum distance between the empirical CDF and the reference.
pub fn ks_statistic(sample: &[f64], cdf: Cdf) -> Result<f64, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf.eval(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(d)
}

/// Asymptotic critical value `sqrt(-ln(alpha/2) / (2n))`; at alpha = 0.01
/// this is 1.6276/sqrt(n). Good for the n >= 100 regimes we use.
pub fn ks_critical_value(n: usize, alpha: f64) -> Result<f64, StatsError> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(StatsError::BadAlpha(alpha));
    }
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    Ok((-(alpha / 2.0).ln() / (2.0 * n as f64)).sqrt())
}

/// One-sample KS test at significance `alpha`.
pub fn ks_test(sample: &[f64], cdf: Cdf, alpha: f64) -> Result<KsTest, StatsError> {
    let statistic = ks_statistic(sample, cdf)?;
    let critical_value = ks_critical_value(sample.len(), alpha)?;
    Ok(KsTest { statistic, critical_value, n: sample.len(), alpha, rejected: statistic > critical_value })
}

/// Sample mean and the standard error of that mean.
pub fn mean_and_se(sample: &[f64]) -> Result<(f64, f64), StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    if sample.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
