//! Result rows, CSV output and the per-cell summary.

use std::collections::BTreeMap;
use std::io::Write;

use coordbf::metrics::rate_slope_per_log2_power;
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str =
    "experiment,drop,seed,power_dbm,kappa1,kappa2,kappa3,delta,scheme,metric,value";

/// Metric name of the rows that mark a failed solve.
pub const STATUS_METRIC: &str = "status";

/// One Monte-Carlo measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub drop: u64,
    pub seed: u64,
    pub power_dbm: f64,
    pub kappa1: f64,
    /// `"inf"` or a decimal number.
    pub kappa2: String,
    pub kappa3: f64,
    pub delta: f64,
    pub scheme: String,
    pub metric: String,
    pub value: f64,
}

impl ExperimentRecord {
    pub fn is_status(&self) -> bool {
        self.metric == STATUS_METRIC
    }
}

pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<ExperimentRecord>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Mean and sample standard deviation of one metric at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub power_dbm: f64,
    pub kappa1: f64,
    pub kappa2: String,
    pub kappa3: f64,
    pub scheme: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Average coordinated sum rate over average TDMA rate at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuxGainCell {
    pub power_dbm: f64,
    pub kappa1: f64,
    pub kappa2: String,
    pub kappa3: f64,
    pub value: f64,
}

/// High-power slope of mean sum rate per `log2(power)` along one curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeCell {
    pub kappa1: f64,
    pub kappa2: String,
    pub kappa3: f64,
    pub scheme: String,
    /// Power points used by the regression, the upper half of the grid.
    pub power_dbm: Vec<f64>,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub drops: u64,
    pub seed: u64,
    pub attempts: usize,
    pub failures: usize,
    pub cells: Vec<SummaryCell>,
    pub mux_gain: Vec<MuxGainCell>,
    pub slopes: Vec<SlopeCell>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Grid coordinates as an order-preserving key (first-seen order).
type PointKey = (u64, u64, String, u64);

fn point_key(r: &ExperimentRecord) -> PointKey {
    (
        r.power_dbm.to_bits(),
        r.kappa1.to_bits(),
        r.kappa2.clone(),
        r.kappa3.to_bits(),
    )
}

impl Summary {
    /// Aggregates raw rows; status rows only count as failures.
    pub fn from_records(
        experiment: &str,
        drops: u64,
        seed: u64,
        attempts: usize,
        records: &[ExperimentRecord],
    ) -> Self {
        // Cells keep the order in which their first row appears.
        let mut values: Vec<Vec<f64>> = Vec::new();
        let mut index: BTreeMap<(PointKey, String, String), usize> = BTreeMap::new();
        let mut first: Vec<&ExperimentRecord> = Vec::new();
        let mut failures = 0;
        for r in records {
            if r.is_status() {
                failures += 1;
                continue;
            }
            let key = (point_key(r), r.scheme.clone(), r.metric.clone());
            let idx = *index.entry(key).or_insert_with(|| {
                first.push(r);
                values.push(Vec::new());
                values.len() - 1
            });
            values[idx].push(r.value);
        }
        let cells: Vec<SummaryCell> = first
            .iter()
            .enumerate()
            .map(|(idx, r)| {
                let xs = &values[idx];
                let (mean, std) = mean_std(xs);
                SummaryCell {
                    power_dbm: r.power_dbm,
                    kappa1: r.kappa1,
                    kappa2: r.kappa2.clone(),
                    kappa3: r.kappa3,
                    scheme: r.scheme.clone(),
                    metric: r.metric.clone(),
                    n: xs.len(),
                    mean,
                    std,
                }
            })
            .collect();

        let find = |c: &SummaryCell, scheme: &str| {
            cells.iter().find(|d| {
                d.metric == "sum_rate"
                    && d.scheme == scheme
                    && d.power_dbm == c.power_dbm
                    && d.kappa1 == c.kappa1
                    && d.kappa2 == c.kappa2
                    && d.kappa3 == c.kappa3
            })
        };
        let mux_gain = cells
            .iter()
            .filter(|c| c.metric == "sum_rate" && c.scheme == "maxmin_optimal")
            .filter_map(|c| {
                let t = find(c, "tdma")?;
                (t.mean > 0.0).then(|| MuxGainCell {
                    power_dbm: c.power_dbm,
                    kappa1: c.kappa1,
                    kappa2: c.kappa2.clone(),
                    kappa3: c.kappa3,
                    value: c.mean / t.mean,
                })
            })
            .collect();

        let mut curves: Vec<((u64, String, u64, String), Vec<(f64, f64)>)> = Vec::new();
        for c in cells.iter().filter(|c| c.metric == "sum_rate") {
            let key = (
                c.kappa1.to_bits(),
                c.kappa2.clone(),
                c.kappa3.to_bits(),
                c.scheme.clone(),
            );
            match curves.iter_mut().find(|(k, _)| *k == key) {
                Some((_, pts)) => pts.push((c.power_dbm, c.mean)),
                None => curves.push((key, vec![(c.power_dbm, c.mean)])),
            }
        }
        let slopes = curves
            .into_iter()
            .filter_map(|((k1, k2, k3, scheme), mut pts)| {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                let upper = &pts[pts.len() / 2..];
                let p: Vec<f64> = upper.iter().map(|x| x.0).collect();
                let r: Vec<f64> = upper.iter().map(|x| x.1).collect();
                let slope = rate_slope_per_log2_power(&p, &r).ok()?;
                Some(SlopeCell {
                    kappa1: f64::from_bits(k1),
                    kappa2: k2,
                    kappa3: f64::from_bits(k3),
                    scheme,
                    power_dbm: p,
                    slope,
                })
            })
            .collect();

        Summary {
            experiment: experiment.to_string(),
            drops,
            seed,
            attempts,
            failures,
            cells,
            mux_gain,
            slopes,
        }
    }

    pub fn failure_fraction(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.failures as f64 / self.attempts as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(drop: u64, power: f64, scheme: &str, metric: &str, value: f64) -> ExperimentRecord {
        ExperimentRecord {
            experiment: "custom".into(),
            drop,
            seed: 7,
            power_dbm: power,
            kappa1: 0.0,
            kappa2: "inf".into(),
            kappa3: 0.0,
            delta: 1.0,
            scheme: scheme.into(),
            metric: metric.into(),
            value,
        }
    }

    #[test]
    fn csv_round_trip_keeps_header_and_values() {
        let rows = vec![
            row(0, 18.2, "tdma", "sum_rate", 1.0 / 3.0),
            row(1, 18.2, "tdma", "status", 2.0),
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert!(text.contains(",inf,"));
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![
            row(0, 10.0, "maxmin_optimal", "sum_rate", 2.0),
            row(1, 10.0, "maxmin_optimal", "sum_rate", 4.0),
            row(0, 10.0, "tdma", "sum_rate", 1.0),
            row(1, 10.0, "tdma", "sum_rate", 2.0),
            row(2, 10.0, "tdma", "status", 1.0),
            row(0, 20.0, "maxmin_optimal", "sum_rate", 5.0),
            row(0, 20.0, "tdma", "sum_rate", 2.5),
        ];
        let s = Summary::from_records("custom", 3, 7, 7, &rows);
        assert_eq!(s.failures, 1);
        assert_eq!(s.cells.len(), 4);
        let c = &s.cells[0];
        assert_eq!((c.n, c.mean), (2, 3.0));
        assert!((c.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.mux_gain.len(), 2);
        assert_eq!(s.mux_gain[0].value, 2.0);
        // two power points per curve: slope from the upper one alone is undefined
        assert!(s.slopes.is_empty());
    }
}
