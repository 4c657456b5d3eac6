//! Height differences between dates and per-pixel change events.
//!
//! Event logic works on the median of a 5×5 window around the pixel, which
//! damps illumination and geolocation noise better than the center value.

use std::io::Write;

use chrono::NaiveDate;

use crate::composite::{nearest_rank, ObservationStack};
use crate::error::{Error, Result};
use crate::inference::HEIGHT_NODATA;
use crate::raster::{Raster, RasterData};

/// Half-width of the series window (5×5).
pub const WINDOW_RADIUS: usize = 2;
const DAYS_PER_YEAR: f64 = 365.25;

/// `h2 − h1` per pixel, nodata where either input is nodata.
pub fn height_diff(h1: &Raster, h2: &Raster) -> Result<Raster> {
    if !h1.same_grid(h2) || h1.bands() != 1 || h2.bands() != 1 {
        return Err(Error::shape("height maps must be single-band rasters on one grid"));
    }
    let out: Vec<f32> = h1
        .band_values(0)
        .into_iter()
        .zip(h2.band_values(0))
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => (b - a) as f32,
            _ => HEIGHT_NODATA,
        })
        .collect();
    Raster::new(
        h1.width(),
        h1.height(),
        1,
        *h1.geo(),
        HEIGHT_NODATA as f64,
        RasterData::F32(out),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDate {
    pub date: NaiveDate,
    pub center: Option<f64>,
    /// Window values in row-major order; `None` where masked or nodata.
    pub window: Vec<Option<f64>>,
}

impl SeriesDate {
    pub fn n_valid(&self) -> usize {
        self.window.iter().flatten().count()
    }

    /// Median of the valid window values.
    pub fn window_median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.window.iter().flatten().copied().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(nearest_rank(&v, 50.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightSeries {
    pub col: usize,
    pub row: usize,
    pub dates: Vec<SeriesDate>,
}

impl HeightSeries {
    /// `(date, window median)` for dates with at least one valid value.
    pub fn medians(&self) -> Vec<(NaiveDate, f64)> {
        self.dates
            .iter()
            .filter_map(|d| d.window_median().map(|m| (d.date, m)))
            .collect()
    }

    /// CSV `date,center_m,window_median_m,n_valid`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["date", "center_m", "window_median_m", "n_valid"])?;
        for d in &self.dates {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            wr.write_record([
                d.date.format("%Y-%m-%d").to_string(),
                f(d.center),
                f(d.window_median()),
                d.n_valid().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// The 5×5 window around `(col, row)` on every date, clipped at the
/// raster edges.
pub fn extract_series(stack: &ObservationStack, col: usize, row: usize) -> Result<HeightSeries> {
    let (w, h) = (stack.width(), stack.height());
    if col >= w || row >= h {
        return Err(Error::Invalid(format!("pixel ({col}, {row}) outside {w}x{h} stack")));
    }
    let cols = col.saturating_sub(WINDOW_RADIUS)..=(col + WINDOW_RADIUS).min(w - 1);
    let rows = row.saturating_sub(WINDOW_RADIUS)..=(row + WINDOW_RADIUS).min(h - 1);
    let dates = stack
        .dates()
        .iter()
        .enumerate()
        .map(|(t, &date)| SeriesDate {
            date,
            center: stack.observation(t, col, row),
            window: rows
                .clone()
                .flat_map(|r| cols.clone().map(move |c| (c, r)))
                .map(|(c, r)| stack.observation(t, c, r))
                .collect(),
        })
        .collect();
    Ok(HeightSeries { col, row, dates })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeKind {
    Drop,
    Regrowth,
}

impl ChangeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::Drop => "drop",
            ChangeKind::Regrowth => "regrowth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeEvent {
    pub kind: ChangeKind,
    pub onset: NaiveDate,
    /// Height fall in meters for a drop, growth rate in m/yr for regrowth.
    /// Always positive.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropParams {
    pub drop_m: f64,
    pub persist: usize,
}

impl Default for DropParams {
    fn default() -> Self {
        Self {
            drop_m: 10.0,
            persist: 3,
        }
    }
}

/// First date whose window median falls at least `drop_m` below the
/// median of up to three preceding valid dates and stays that low for
/// `persist` valid dates counting the onset.
pub fn detect_drop(series: &HeightSeries, p: DropParams) -> Option<ChangeEvent> {
    let m = series.medians();
    let persist = p.persist.max(1);
    if m.len() < persist + 1 {
        return None;
    }
    for i in 1..=m.len() - persist {
        let mut prev: Vec<f64> = m[i.saturating_sub(3)..i].iter().map(|x| x.1).collect();
        prev.sort_by(f64::total_cmp);
        let base = nearest_rank(&prev, 50.0);
        let fall = base - m[i].1;
        if fall >= p.drop_m && m[i..i + persist].iter().all(|x| base - x.1 >= p.drop_m) {
            return Some(ChangeEvent {
                kind: ChangeKind::Drop,
                onset: m[i].0,
                value: fall,
            });
        }
    }
    None
}

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegrowthParams {
    pub min_rate: f64,
    pub min_points: usize,
}

impl Default for RegrowthParams {
    fn default() -> Self {
        Self {
            min_rate: 0.5,
            min_points: 4,
        }
    }
}

/// Regrowth after `start`: the slope of window medians against time in
/// years over valid dates strictly after `start`. Reported when the slope
/// exceeds `min_rate` with at least `min_points` dates; the onset is the
/// first of those dates.
pub fn fit_regrowth(series: &HeightSeries, start: NaiveDate, p: RegrowthParams) -> Option<ChangeEvent> {
    let pts: Vec<(NaiveDate, f64)> = series.medians().into_iter().filter(|(d, _)| *d > start).collect();
    if pts.len() < p.min_points.max(2) {
        return None;
    }
    let xs: Vec<f64> = pts
        .iter()
        .map(|(d, _)| (*d - start).num_days() as f64 / DAYS_PER_YEAR)
        .collect();
    let ys: Vec<f64> = pts.iter().map(|x| x.1).collect();
    let slope = ols_slope(&xs, &ys)?;
    (slope > p.min_rate).then_some(ChangeEvent {
        kind: ChangeKind::Regrowth,
        onset: pts[0].0,
        value: slope,
    })
}

/// CSV `col,row,kind,onset,magnitude_or_rate`.
pub fn write_events_csv<W: Write>(events: &[(usize, usize, ChangeEvent)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["col", "row", "kind", "onset", "magnitude_or_rate"])?;
    for (c, r, e) in events {
        wr.write_record([
            c.to_string(),
            r.to_string(),
            e.kind.as_str().to_string(),
            e.onset.format("%Y-%m-%d").to_string(),
            e.value.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
