//! Per-stage inference timing. The image is already decoded, so only
//! compute is measured.

use std::time::{Duration, Instant};

use crate::error::{contract_err, Result};
use crate::network::{DehazeModel, StageTimes};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub iters: usize,
    /// Per-stage medians.
    pub stages: StageTimes,
    /// Median end-to-end wall clock.
    pub total: Duration,
}

impl BenchReport {
    pub fn megapixels_per_second(&self) -> f64 {
        let mp = (self.width * self.height) as f64 / 1e6;
        mp / self.total.as_secs_f64().max(1e-12)
    }

    /// `(name, duration)` for every stage, then the total.
    pub fn rows(&self) -> Vec<(&'static str, Duration)> {
        let s = &self.stages;
        vec![
            ("decompose", s.decompose),
            ("bottom_net", s.bottom_net),
            ("tucker", s.tucker),
            ("k_net", s.k_net),
            ("modulate", s.modulate),
            ("reconstruct", s.reconstruct),
            ("total", self.total),
        ]
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{}x{} over {} iterations (median)\n",
            self.width, self.height, self.iters
        );
        for (name, d) in self.rows() {
            s.push_str(&format!("{name:>12}  {:>10.3} ms\n", d.as_secs_f64() * 1e3));
        }
        s.push_str(&format!("{:>12}  {:>10.3}\n", "MP/s", self.megapixels_per_second()));
        s
    }
}

pub fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

pub fn run<T: Element>(model: &DehazeModel<T>, img: &Tensor<T>, iters: usize) -> Result<BenchReport> {
    if iters < 3 {
        return Err(contract_err!("bench needs at least 3 iterations, got {iters}"));
    }
    let (_, _, h, w) = img.dims4()?;
    let mut runs = Vec::with_capacity(iters);
    let mut totals = Vec::with_capacity(iters);
    for _ in 0..iters {
        let mut st = StageTimes::default();
        let t0 = Instant::now();
        model.dehaze_timed(img, Some(&mut st))?;
        totals.push(t0.elapsed());
        runs.push(st);
    }
    let pick = |f: fn(&StageTimes) -> Duration| median(runs.iter().map(f).collect());
    Ok(BenchReport {
        width: w,
        height: h,
        iters,
        stages: StageTimes {
            decompose: pick(|s| s.decompose),
            bottom_net: pick(|s| s.bottom_net),
            tucker: pick(|s| s.tucker),
            k_net: pick(|s| s.k_net),
            modulate: pick(|s| s.modulate),
            reconstruct: pick(|s| s.reconstruct),
        },
        total: median(totals),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;

    #[test]
    fn median_even_and_odd() {
        let ms = Duration::from_millis;
        assert_eq!(median(vec![ms(3), ms(1), ms(2)]), ms(2));
        assert_eq!(median(vec![ms(4), ms(1), ms(2), ms(3)]), Duration::from_micros(2500));
    }

    #[test]
    fn stages_account_for_total() {
        let model = DehazeModel::<f32>::new(ModelConfig {
            bottom_channels: 4,
            k_channels: 4,
            ..Default::default()
        })
        .unwrap();
        let img = Tensor::full([1, 3, 64, 64], 0.5);
        assert!(run(&model, &img, 2).is_err());
        let r = run(&model, &img, 3).unwrap();
        assert_eq!(r.rows().len(), 7);
        assert!(r.megapixels_per_second() > 0.0);
        let (sum, total) = (r.stages.sum().as_secs_f64(), r.total.as_secs_f64());
        assert!((sum - total).abs() <= 0.1 * total + 2e-3, "{sum} vs {total}");
    }
}
