//! Per-iteration metrics rows, their running statistics and the CSV format.
//!
//! One file per seed. The header fixes the agent count and the action counts:
//!
//! ```text
//! n,state,a_0,..,u_0,..,c_0,..,lambda_0,..,mean_u_0,..,mean_c_0,..,
//! disc_u_0,..,disc_c_0,..,welfare,mean_welfare,max_residual,lyapunov,
//! freq_0_0,freq_0_1,..,miscoord
//! ```
//!
//! `disc_*` columns are exponential averages `d_n = rho d_(n-1) + (1 - rho) x_n`
//! started from zero. Diagnostics and the mis-coordination flag may be empty.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::learner::{Diagnostics, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub state: usize,
    pub joint: Vec<usize>,
    pub utilities: Vec<f64>,
    pub costs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub mean_utilities: Vec<f64>,
    pub mean_costs: Vec<f64>,
    pub discounted_utilities: Vec<f64>,
    pub discounted_costs: Vec<f64>,
    pub welfare: f64,
    pub mean_welfare: f64,
    pub max_residual: Option<f64>,
    pub lyapunov: Option<f64>,
    /// `frequencies[k][a]`: share of iterations so far in which agent `k` played `a`.
    pub frequencies: Vec<Vec<f64>>,
    pub miscoordinated: Option<bool>,
}

impl MetricsRecord {
    pub fn num_agents(&self) -> usize {
        self.joint.len()
    }

    pub fn action_counts(&self) -> Vec<usize> {
        self.frequencies.iter().map(Vec::len).collect()
    }

    /// Value of a named CSV column, if it exists and is filled in.
    pub fn quantity(&self, name: &str) -> Option<f64> {
        let indexed = |prefix: &str, v: &[f64]| -> Option<f64> {
            name.strip_prefix(prefix)?.parse::<usize>().ok().and_then(|k| v.get(k).copied())
        };
        match name {
            "n" => Some(self.iteration as f64),
            "state" => Some(self.state as f64),
            "welfare" => Some(self.welfare),
            "mean_welfare" => Some(self.mean_welfare),
            "max_residual" => self.max_residual,
            "lyapunov" => self.lyapunov,
            "miscoord" => self.miscoordinated.map(|b| if b { 1.0 } else { 0.0 }),
            _ => {
                if let Some(rest) = name.strip_prefix("freq_") {
                    let (k, a) = rest.split_once('_')?;
                    return self.frequencies.get(k.parse::<usize>().ok()?)?.get(a.parse::<usize>().ok()?).copied();
                }
                let joint: Vec<f64> = self.joint.iter().map(|&a| a as f64).collect();
                indexed("mean_u_", &self.mean_utilities)
                    .or_else(|| indexed("mean_c_", &self.mean_costs))
                    .or_else(|| indexed("disc_u_", &self.discounted_utilities))
                    .or_else(|| indexed("disc_c_", &self.discounted_costs))
                    .or_else(|| indexed("lambda_", &self.lambdas))
                    .or_else(|| indexed("u_", &self.utilities))
                    .or_else(|| indexed("c_", &self.costs))
                    .or_else(|| indexed("a_", &joint))
            }
        }
    }
}

/// Running means, exponential averages and action counts of one run.
#[derive(Debug, Clone)]
pub struct MetricsTracker {
    discount: f64,
    n: u64,
    mean_utilities: Vec<f64>,
    mean_costs: Vec<f64>,
    discounted_utilities: Vec<f64>,
    discounted_costs: Vec<f64>,
    mean_welfare: f64,
    counts: Vec<Vec<u64>>,
}

impl MetricsTracker {
    pub fn new(action_counts: &[usize], discount: f64) -> Self {
        let k = action_counts.len();
        Self {
            discount,
            n: 0,
            mean_utilities: vec![0.0; k],
            mean_costs: vec![0.0; k],
            discounted_utilities: vec![0.0; k],
            discounted_costs: vec![0.0; k],
            mean_welfare: 0.0,
            counts: action_counts.iter().map(|&n| vec![0; n]).collect(),
        }
    }

    pub fn iterations(&self) -> u64 {
        self.n
    }

    /// Folds one iteration into the running statistics and returns its row.
    pub fn observe(&mut self, t: &Transition, diagnostics: Option<Diagnostics>) -> MetricsRecord {
        self.n += 1;
        let step = 1.0 / self.n as f64;
        let rho = self.discount;
        for k in 0..t.utilities.len() {
            self.mean_utilities[k] += (t.utilities[k] - self.mean_utilities[k]) * step;
            self.mean_costs[k] += (t.costs[k] - self.mean_costs[k]) * step;
            self.discounted_utilities[k] = rho * self.discounted_utilities[k] + (1.0 - rho) * t.utilities[k];
            self.discounted_costs[k] = rho * self.discounted_costs[k] + (1.0 - rho) * t.costs[k];
            self.counts[k][t.joint[k]] += 1;
        }
        let welfare: f64 = t.utilities.iter().sum();
        self.mean_welfare += (welfare - self.mean_welfare) * step;
        MetricsRecord {
            iteration: t.iteration,
            state: t.state,
            joint: t.joint.clone(),
            utilities: t.utilities.clone(),
            costs: t.costs.clone(),
            lambdas: t.lambdas.clone(),
            mean_utilities: self.mean_utilities.clone(),
            mean_costs: self.mean_costs.clone(),
            discounted_utilities: self.discounted_utilities.clone(),
            discounted_costs: self.discounted_costs.clone(),
            welfare,
            mean_welfare: self.mean_welfare,
            max_residual: diagnostics.map(|d| d.max_positive_residual),
            lyapunov: diagnostics.map(|d| d.lyapunov),
            frequencies: self
                .counts
                .iter()
                .map(|c| c.iter().map(|&x| x as f64 * step).collect())
                .collect(),
            miscoordinated: t.miscoordinated,
        }
    }
}

/// Which iterations are written: all of the first `dense_prefix`, then every
/// `interval`-th, plus any explicitly requested ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thinning {
    pub dense_prefix: u64,
    pub interval: u64,
}

impl Thinning {
    pub fn keeps(&self, n: u64) -> bool {
        n <= self.dense_prefix || n % self.interval.max(1) == 0
    }
}

pub fn header(action_counts: &[usize]) -> Vec<String> {
    let k = action_counts.len();
    let mut h = vec!["n".to_string(), "state".to_string()];
    for prefix in ["a", "u", "c", "lambda", "mean_u", "mean_c", "disc_u", "disc_c"] {
        h.extend((0..k).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(["welfare", "mean_welfare", "max_residual", "lyapunov"].map(String::from));
    for (i, &n) in action_counts.iter().enumerate() {
        h.extend((0..n).map(|a| format!("freq_{i}_{a}")));
    }
    h.push("miscoord".into());
    h
}

fn fields(r: &MetricsRecord) -> Vec<String> {
    let f = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut out = vec![r.iteration.to_string(), r.state.to_string()];
    out.extend(r.joint.iter().map(|a| a.to_string()));
    for v in [
        &r.utilities,
        &r.costs,
        &r.lambdas,
        &r.mean_utilities,
        &r.mean_costs,
        &r.discounted_utilities,
        &r.discounted_costs,
    ] {
        out.extend(f(v));
    }
    out.push(r.welfare.to_string());
    out.push(r.mean_welfare.to_string());
    out.push(r.max_residual.map(|x| x.to_string()).unwrap_or_default());
    out.push(r.lyapunov.map(|x| x.to_string()).unwrap_or_default());
    for v in &r.frequencies {
        out.extend(f(v));
    }
    out.push(match r.miscoordinated {
        Some(true) => "1".into(),
        Some(false) => "0".into(),
        None => String::new(),
    });
    out
}

/// Streams rows to any writer.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
    action_counts: Vec<usize>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(writer: W, action_counts: &[usize]) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(header(action_counts)).map_err(csv_error)?;
        Ok(Self {
            inner,
            action_counts: action_counts.to_vec(),
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if record.action_counts() != self.action_counts {
            return Err(Error::Metrics("row shape differs from the header".into()));
        }
        self.inner.write_record(fields(record)).map_err(csv_error)
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Metrics(e.to_string())
}

pub fn write_metrics<W: Write>(writer: W, action_counts: &[usize], records: &[MetricsRecord]) -> Result<W> {
    let mut w = MetricsWriter::new(writer, action_counts)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

/// Reads a metrics file written by [`MetricsWriter`].
pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let head: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let k = head.iter().filter(|h| h.starts_with("u_")).count();
    let mut action_counts = vec![0; k];
    for h in head.iter().filter_map(|h| h.strip_prefix("freq_")) {
        let agent: usize = h
            .split_once('_')
            .and_then(|(a, _)| a.parse().ok())
            .ok_or_else(|| Error::Metrics(format!("bad column freq_{h}")))?;
        *action_counts
            .get_mut(agent)
            .ok_or_else(|| Error::Metrics(format!("column freq_{h} names an unknown agent")))? += 1;
    }
    if head != header(&action_counts) {
        return Err(Error::Metrics("unrecognized header".into()));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let bad = |what: &str| Error::Metrics(format!("row {}: bad {what}", line + 1));
        let mut it = row.iter();
        let mut next = |what: &str| it.next().ok_or_else(|| bad(what));
        let float = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
        let optional = |s: &str, what: &str| if s.is_empty() { Ok(None) } else { float(s, what).map(Some) };
        let iteration = next("n")?.parse().map_err(|_| bad("n"))?;
        let state = next("state")?.parse().map_err(|_| bad("state"))?;
        let joint = (0..k)
            .map(|_| next("action")?.parse().map_err(|_| bad("action")))
            .collect::<Result<Vec<usize>>>()?;
        let mut vectors = Vec::with_capacity(7);
        for what in ["u", "c", "lambda", "mean_u", "mean_c", "disc_u", "disc_c"] {
            vectors.push((0..k).map(|_| float(next(what)?, what)).collect::<Result<Vec<f64>>>()?);
        }
        let welfare = float(next("welfare")?, "welfare")?;
        let mean_welfare = float(next("mean_welfare")?, "mean_welfare")?;
        let max_residual = optional(next("max_residual")?, "max_residual")?;
        let lyapunov = optional(next("lyapunov")?, "lyapunov")?;
        let frequencies = action_counts
            .iter()
            .map(|&n| (0..n).map(|_| float(next("freq")?, "freq")).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?;
        let miscoordinated = match next("miscoord")? {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            _ => return Err(bad("miscoord")),
        };
        let mut v = vectors.into_iter();
        let mut take = || v.next().unwrap_or_default();
        out.push(MetricsRecord {
            iteration,
            state,
            joint,
            utilities: take(),
            costs: take(),
            lambdas: take(),
            mean_utilities: take(),
            mean_costs: take(),
            discounted_utilities: take(),
            discounted_costs: take(),
            welfare,
            mean_welfare,
            max_residual,
            lyapunov,
            frequencies,
            miscoordinated,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transition(n: u64, u: f64, c: f64, a: usize) -> Transition {
        Transition {
            iteration: n,
            state: 0,
            joint: vec![a, 1 - a],
            next_state: 0,
            utilities: vec![u, 2.0 * u],
            costs: vec![c, c],
            lambdas: vec![0.1, 0.2],
            miscoordinated: Some(a == 1),
        }
    }

    #[test]
    fn running_statistics() {
        let mut t = MetricsTracker::new(&[2, 2], 0.5);
        t.observe(&transition(1, 1.0, 4.0, 0), None);
        let r = t.observe(&transition(2, 3.0, 0.0, 1), None);
        assert_eq!(r.mean_utilities, vec![2.0, 4.0]);
        assert_eq!(r.mean_costs, vec![2.0, 2.0]);
        // 0.5 * (0.5 * 1) + 0.5 * 3
        assert_eq!(r.discounted_utilities[0], 1.75);
        assert_eq!(r.mean_welfare, 6.0);
        assert_eq!(r.frequencies, vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
    }

    #[test]
    fn thinning_keeps_prefix_and_multiples() {
        let t = Thinning {
            dense_prefix: 1000,
            interval: 100,
        };
        let kept: Vec<u64> = (1..=1500).filter(|&n| t.keeps(n)).collect();
        assert_eq!(kept.len(), 1005);
        assert_eq!(&kept[1000..], &[1100, 1200, 1300, 1400, 1500]);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = MetricsTracker::new(&[2, 2], 0.9);
        let rows: Vec<_> = (1..=5)
            .map(|n| {
                let d = (n % 2 == 0).then_some(Diagnostics {
                    max_positive_residual: 0.1 / n as f64,
                    lyapunov: 1.0 / 3.0,
                });
                t.observe(&transition(n, 0.1 * n as f64, 1.0 / 7.0, (n % 2) as usize), d)
            })
            .collect();
        let bytes = write_metrics(Vec::new(), &[2, 2], &rows).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("n,state,a_0,a_1,u_0"));
        assert_eq!(read_metrics(bytes.as_slice()).unwrap(), rows);
    }

    #[test]
    fn named_quantities() {
        let mut t = MetricsTracker::new(&[2, 2], 0.9);
        let r = t.observe(&transition(1, 2.0, 1.0, 1), None);
        assert_eq!(r.quantity("u_1"), Some(4.0));
        assert_eq!(r.quantity("mean_u_1"), Some(4.0));
        assert_eq!(r.quantity("freq_0_1"), Some(1.0));
        assert_eq!(r.quantity("a_1"), Some(0.0));
        assert_eq!(r.quantity("max_residual"), None);
        assert_eq!(r.quantity("u_7"), None);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(read_metrics("x,y\n1,2\n".as_bytes()).is_err());
    }
}
