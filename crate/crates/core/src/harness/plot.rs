//! Plot-ready `(iteration, value)` series from a metrics file.

use std::io::Write;

use crate::error::{Error, Result};
use crate::harness::metrics::{header, MetricsRecord};

/// Series of `quantity` with a centered moving average of `window` rows.
///
/// Only complete windows are emitted, each at the iteration of its center
/// row (the lower center for even windows); `window = 1` passes values
/// through. Rows where the quantity is blank are skipped.
pub fn emit_plot_series(records: &[MetricsRecord], quantity: &str, window: usize) -> Result<Vec<(u64, f64)>> {
    if window == 0 {
        return Err(Error::InvalidArgument("smoothing window must be at least 1".into()));
    }
    if let Some(first) = records.first() {
        if !header(&first.action_counts()).iter().any(|h| h == quantity) {
            return Err(Error::UnknownQuantity(quantity.into()));
        }
    }
    let raw: Vec<(u64, f64)> = records
        .iter()
        .filter_map(|r| r.quantity(quantity).map(|v| (r.iteration, v)))
        .collect();
    if window == 1 {
        return Ok(raw);
    }
    Ok(raw
        .windows(window)
        .map(|w| (w[(window - 1) / 2].0, w.iter().map(|(_, v)| v).sum::<f64>() / window as f64))
        .collect())
}

pub fn write_series<W: Write>(mut writer: W, quantity: &str, series: &[(u64, f64)]) -> Result<()> {
    writeln!(writer, "n,{quantity}")?;
    for (n, v) in series {
        writeln!(writer, "{n},{v}")?;
    }
    Ok(())
}
