//! Alerting on top of engine results: blind-zone suppression, first-detection
//! tracking, and run metrics against configured incidents.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ResultRow;
use crate::geo::GeoPixel;
use crate::query::{ContinuousQuery, Projection};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Pixels without network coverage, where mass signal loss is expected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindZoneList(BTreeSet<GeoPixel>);

impl BlindZoneList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pixel: GeoPixel) -> bool {
        self.0.insert(pixel)
    }

    pub fn contains(&self, pixel: &GeoPixel) -> bool {
        self.0.contains(pixel)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GeoPixel> {
        self.0.iter()
    }

    /// Reads `lat_milli,lon_milli` lines. Blank lines, `#` comments and a
    /// `lat_milli,lon_milli` header are skipped.
    pub fn read(reader: impl BufRead) -> Result<Self, DetectorError> {
        let mut list = BlindZoneList::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') || text == "lat_milli,lon_milli" {
                continue;
            }
            let parse = |s: Option<&str>| s.map(str::trim).and_then(|s| s.parse::<i64>().ok());
            let mut parts = text.split(',');
            match (parse(parts.next()), parse(parts.next()), parts.next()) {
                (Some(lat_milli), Some(lon_milli), None) => {
                    list.insert(GeoPixel {
                        lat_milli,
                        lon_milli,
                    });
                }
                _ => {
                    return Err(DetectorError::Parse {
                        line: i + 1,
                        message: format!("expected `lat_milli,lon_milli`, found `{text}`"),
                    })
                }
            }
        }
        Ok(list)
    }

    pub fn write(&self, mut writer: impl Write) -> io::Result<()> {
        writeln!(writer, "lat_milli,lon_milli")?;
        for p in &self.0 {
            writeln!(writer, "{},{}", p.lat_milli, p.lon_milli)?;
        }
        Ok(())
    }
}

impl FromIterator<GeoPixel> for BlindZoneList {
    fn from_iter<I: IntoIterator<Item = GeoPixel>>(iter: I) -> Self {
        BlindZoneList(iter.into_iter().collect())
    }
}

/// Which result columns hold the pixel keys and the count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlertColumns {
    pub lat: String,
    pub lon: String,
    pub counter: String,
}

impl Default for AlertColumns {
    fn default() -> Self {
        AlertColumns {
            lat: "roundLat".into(),
            lon: "roundLong".into(),
            counter: "counter".into(),
        }
    }
}

impl AlertColumns {
    /// The first two group keys and the first COUNT alias of `query`.
    pub fn from_query(query: &ContinuousQuery) -> Option<Self> {
        let counter = query.projection.iter().find_map(|p| match p {
            Projection::Count { alias, .. } => Some(alias.name().to_string()),
            Projection::Var(_) => None,
        })?;
        match query.group_by.as_slice() {
            [lat, lon, ..] => Some(AlertColumns {
                lat: lat.name().to_string(),
                lon: lon.name().to_string(),
                counter,
            }),
            _ => None,
        }
    }

    pub fn pixel(&self, row: &ResultRow) -> Option<GeoPixel> {
        Some(GeoPixel {
            lat_milli: row.int(&self.lat)?,
            lon_milli: row.int(&self.lon)?,
        })
    }

    pub fn counter(&self, row: &ResultRow) -> Option<u64> {
        row.int(&self.counter).and_then(|c| u64::try_from(c).ok())
    }
}

/// Drops rows whose pixel is blind-listed, keeping the order of the rest.
/// Rows without integer pixel keys are kept.
pub fn filter_blind_zones(
    rows: &[ResultRow],
    blind_zones: &BlindZoneList,
    columns: &AlertColumns,
) -> Vec<ResultRow> {
    rows.iter()
        .filter(|r| !columns.pixel(r).is_some_and(|p| blind_zones.contains(&p)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Alert {
    pub eval_time: u64,
    pub pixel: GeoPixel,
    pub counter: u64,
    pub first_detection: bool,
}

/// On-disk form of an [`Alert`], one JSON object per line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertRecord {
    pub alert_time_ms: u64,
    pub lat_milli: i64,
    pub lon_milli: i64,
    pub counter: u64,
    pub first_detection: bool,
}

impl From<Alert> for AlertRecord {
    fn from(a: Alert) -> Self {
        AlertRecord {
            alert_time_ms: a.eval_time,
            lat_milli: a.pixel.lat_milli,
            lon_milli: a.pixel.lon_milli,
            counter: a.counter,
            first_detection: a.first_detection,
        }
    }
}

impl From<AlertRecord> for Alert {
    fn from(r: AlertRecord) -> Self {
        Alert {
            eval_time: r.alert_time_ms,
            pixel: GeoPixel {
                lat_milli: r.lat_milli,
                lon_milli: r.lon_milli,
            },
            counter: r.counter,
            first_detection: r.first_detection,
        }
    }
}

pub fn write_alerts<'a>(mut writer: impl Write, alerts: impl IntoIterator<Item = &'a Alert>) -> io::Result<()> {
    for a in alerts {
        serde_json::to_writer(&mut writer, &AlertRecord::from(*a))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_alerts(reader: impl BufRead) -> Result<Vec<Alert>, DetectorError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AlertRecord = serde_json::from_str(&line).map_err(|e| DetectorError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record.into());
    }
    Ok(out)
}

/// Pixels that were above threshold at the previous evaluation step.
#[derive(Debug, Clone, Default)]
pub struct AlertState {
    above: BTreeSet<GeoPixel>,
}

impl AlertState {
    pub fn is_above(&self, pixel: &GeoPixel) -> bool {
        self.above.contains(pixel)
    }
}

/// Turns the rows of one evaluation step into alerts. Pixels absent from
/// `rows` are marked below threshold.
pub fn classify_alerts(
    eval_time: u64,
    rows: &[ResultRow],
    state: &mut AlertState,
    columns: &AlertColumns,
) -> Vec<Alert> {
    let mut now = BTreeSet::new();
    let mut alerts = Vec::with_capacity(rows.len());
    for row in rows {
        let (Some(pixel), Some(counter)) = (columns.pixel(row), columns.counter(row)) else {
            continue;
        };
        now.insert(pixel);
        alerts.push(Alert {
            eval_time,
            pixel,
            counter,
            first_detection: !state.above.contains(&pixel),
        });
    }
    state.above = now;
    alerts
}

/// Single consumer of detection results, fed one evaluation step at a time.
#[derive(Debug, Clone)]
pub struct Detector {
    blind_zones: BlindZoneList,
    columns: AlertColumns,
    state: AlertState,
    last_step: Option<u64>,
}

impl Detector {
    pub fn new(blind_zones: BlindZoneList, columns: AlertColumns) -> Self {
        Detector {
            blind_zones,
            columns,
            state: AlertState::default(),
            last_step: None,
        }
    }

    pub fn columns(&self) -> &AlertColumns {
        &self.columns
    }

    /// Processes every detection row of one step. Steps must arrive in
    /// increasing time order.
    pub fn step(&mut self, eval_time: u64, rows: &[ResultRow]) -> Vec<Alert> {
        assert!(
            self.last_step.is_none_or(|t| t < eval_time),
            "detector steps out of order: {eval_time} after {:?}",
            self.last_step
        );
        self.last_step = Some(eval_time);
        let kept = filter_blind_zones(rows, &self.blind_zones, &self.columns);
        let mut alerts = classify_alerts(eval_time, &kept, &mut self.state, &self.columns);
        alerts.sort();
        alerts
    }
}

/// A configured incident, as far as metrics are concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pixel: GeoPixel,
    pub start_ms: u64,
    pub phone_count: u64,
}

/// Which pixels some registered query evaluates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coverage {
    All,
    Pixels(BTreeSet<GeoPixel>),
}

impl Coverage {
    pub fn covers(&self, pixel: &GeoPixel) -> bool {
        match self {
            Coverage::All => true,
            Coverage::Pixels(set) => set.contains(pixel),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub eval_time_ms: u64,
    pub counter: u64,
}

/// Per-step counts for monitored pixels.
pub type SeriesLog = BTreeMap<GeoPixel, Vec<SeriesPoint>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentReport {
    pub lat_milli: i64,
    pub lon_milli: i64,
    pub start_ms: u64,
    pub phone_count: u64,
    pub detected: bool,
    pub first_alert_ms: Option<u64>,
    pub detection_latency_ms: Option<u64>,
    /// Largest counter among this pixel's alerts at or after the start.
    pub peak_counter: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub incidents: Vec<IncidentReport>,
    pub fail_to_report: usize,
    /// Alert episodes (first detections) at pixels with no configured incident.
    pub false_alarms: usize,
    /// Individual alerts at pixels with no configured incident.
    pub false_alarm_alerts: usize,
    pub alerts: usize,
    pub diagnostics: Vec<String>,
    #[serde(skip)]
    pub series: SeriesLog,
}

pub fn compute_metrics(
    alerts: &[Alert],
    incidents: &[GroundTruth],
    series: &SeriesLog,
    coverage: &Coverage,
) -> MetricsReport {
    let incident_pixels: BTreeSet<GeoPixel> = incidents.iter().map(|i| i.pixel).collect();
    let mut diagnostics = Vec::new();
    let reports: Vec<IncidentReport> = incidents
        .iter()
        .map(|inc| {
            if !coverage.covers(&inc.pixel) {
                diagnostics.push(format!(
                    "coverage gap: no registered query evaluates incident pixel {}",
                    inc.pixel
                ));
            }
            let after = || {
                alerts
                    .iter()
                    .filter(|a| a.pixel == inc.pixel && a.eval_time >= inc.start_ms)
            };
            let first = after()
                .filter(|a| a.first_detection)
                .map(|a| a.eval_time)
                .min();
            IncidentReport {
                lat_milli: inc.pixel.lat_milli,
                lon_milli: inc.pixel.lon_milli,
                start_ms: inc.start_ms,
                phone_count: inc.phone_count,
                detected: first.is_some(),
                first_alert_ms: first,
                detection_latency_ms: first.map(|t| t - inc.start_ms),
                peak_counter: after().map(|a| a.counter).max(),
            }
        })
        .collect();
    let false_alarm_alerts = alerts
        .iter()
        .filter(|a| !incident_pixels.contains(&a.pixel))
        .count();
    let false_alarms = alerts
        .iter()
        .filter(|a| a.first_detection && !incident_pixels.contains(&a.pixel))
        .count();
    MetricsReport {
        fail_to_report: reports.iter().filter(|r| !r.detected).count(),
        incidents: reports,
        false_alarms,
        false_alarm_alerts,
        alerts: alerts.len(),
        diagnostics,
        series: series.clone(),
    }
}

pub fn write_series_csv(mut writer: impl Write, series: &SeriesLog) -> io::Result<()> {
    writeln!(writer, "lat_milli,lon_milli,eval_time_ms,counter")?;
    for (pixel, points) in series {
        for p in points {
            writeln!(
                writer,
                "{},{},{},{}",
                pixel.lat_milli, pixel.lon_milli, p.eval_time_ms, p.counter
            )?;
        }
    }
    Ok(())
}

pub fn read_series_csv(reader: impl BufRead) -> Result<SeriesLog, DetectorError> {
    let mut series = SeriesLog::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<Option<i64>> = line.split(',').map(|f| f.trim().parse().ok()).collect();
        match fields.as_slice() {
            [Some(lat), Some(lon), Some(t), Some(c)] if *t >= 0 && *c >= 0 => {
                series
                    .entry(GeoPixel {
                        lat_milli: *lat,
                        lon_milli: *lon,
                    })
                    .or_default()
                    .push(SeriesPoint {
                        eval_time_ms: *t as u64,
                        counter: *c as u64,
                    });
            }
            _ => {
                return Err(DetectorError::Parse {
                    line: i + 1,
                    message: format!("malformed series line `{line}`"),
                })
            }
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Value;
    use proptest::prelude::*;

    fn px(lat_milli: i64, lon_milli: i64) -> GeoPixel {
        GeoPixel {
            lat_milli,
            lon_milli,
        }
    }

    fn row(t: u64, p: GeoPixel, counter: i64) -> ResultRow {
        ResultRow {
            eval_time: t,
            columns: vec![
                ("roundLat".into(), Value::Int(p.lat_milli)),
                ("roundLong".into(), Value::Int(p.lon_milli)),
                ("counter".into(), Value::Int(counter)),
            ],
        }
    }

    #[test]
    fn blind_zone_filter() {
        let cols = AlertColumns::default();
        let rows = vec![row(5, px(1, 1), 11), row(5, px(2, 2), 12), row(5, px(3, 3), 13)];
        assert_eq!(filter_blind_zones(&rows, &BlindZoneList::new(), &cols), rows);
        let bz: BlindZoneList = [px(2, 2)].into_iter().collect();
        let kept = filter_blind_zones(&rows, &bz, &cols);
        assert_eq!(kept, vec![rows[0].clone(), rows[2].clone()]);
    }

    #[test]
    fn blind_zone_file() {
        let text = "lat_milli,lon_milli\n# ship lock\n329863,246792\n\n 1 , -2\n329863,246792\n";
        let bz = BlindZoneList::read(text.as_bytes()).unwrap();
        assert_eq!(bz.len(), 2);
        assert!(bz.contains(&px(1, -2)));
        let mut out = Vec::new();
        bz.write(&mut out).unwrap();
        assert_eq!(BlindZoneList::read(out.as_slice()).unwrap(), bz);
        match BlindZoneList::read("1,2\nx,3\n".as_bytes()) {
            Err(DetectorError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_detection_transitions() {
        let cols = AlertColumns::default();
        let mut state = AlertState::default();
        let p = px(7, 7);
        let a = classify_alerts(5, &[row(5, p, 11)], &mut state, &cols);
        assert!(a[0].first_detection);
        let a = classify_alerts(10, &[row(10, p, 12)], &mut state, &cols);
        assert!(!a[0].first_detection);
        assert!(classify_alerts(15, &[], &mut state, &cols).is_empty());
        assert!(!state.is_above(&p));
        let a = classify_alerts(20, &[row(20, p, 11)], &mut state, &cols);
        assert!(a[0].first_detection);
    }

    #[test]
    fn alert_log_round_trip() {
        let alerts = vec![Alert {
            eval_time: 5_000,
            pixel: px(329863, 246792),
            counter: 424,
            first_detection: true,
        }];
        let mut out = Vec::new();
        write_alerts(&mut out, &alerts).unwrap();
        assert_eq!(
            String::from_utf8(out.clone()).unwrap(),
            "{\"alert_time_ms\":5000,\"lat_milli\":329863,\"lon_milli\":246792,\"counter\":424,\"first_detection\":true}\n"
        );
        assert_eq!(read_alerts(out.as_slice()).unwrap(), alerts);
        assert!(matches!(
            read_alerts("\n{}\n".as_bytes()),
            Err(DetectorError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn metrics() {
        let inc = GroundTruth {
            pixel: px(1, 1),
            start_ms: 3_000,
            phone_count: 20,
        };
        let alerts = vec![
            Alert { eval_time: 5_000, pixel: px(1, 1), counter: 20, first_detection: true },
            Alert { eval_time: 10_000, pixel: px(1, 1), counter: 20, first_detection: false },
            Alert { eval_time: 10_000, pixel: px(9, 9), counter: 11, first_detection: true },
            Alert { eval_time: 15_000, pixel: px(9, 9), counter: 11, first_detection: false },
        ];
        let m = compute_metrics(&alerts, &[inc], &SeriesLog::new(), &Coverage::All);
        assert_eq!(m.fail_to_report, 0);
        assert_eq!(m.incidents[0].detection_latency_ms, Some(2_000));
        assert_eq!(m.incidents[0].peak_counter, Some(20));
        assert_eq!(m.false_alarms, 1);
        assert_eq!(m.false_alarm_alerts, 2);
        assert!(m.diagnostics.is_empty());

        let missed = compute_metrics(
            &alerts[2..],
            &[inc],
            &SeriesLog::new(),
            &Coverage::Pixels([px(9, 9)].into_iter().collect()),
        );
        assert_eq!(missed.fail_to_report, 1);
        assert!(!missed.incidents[0].detected);
        assert_eq!(missed.incidents[0].detection_latency_ms, None);
        assert!(missed.diagnostics[0].starts_with("coverage gap"));

        // An alert before the start does not count as detection.
        let early = [Alert { eval_time: 0, pixel: px(1, 1), counter: 20, first_detection: true }];
        assert_eq!(
            compute_metrics(&early, &[inc], &SeriesLog::new(), &Coverage::All).fail_to_report,
            1
        );
    }

    #[test]
    fn series_csv_round_trip() {
        let mut s = SeriesLog::new();
        s.insert(
            px(1, 2),
            vec![
                SeriesPoint { eval_time_ms: 5_000, counter: 0 },
                SeriesPoint { eval_time_ms: 10_000, counter: 424 },
            ],
        );
        let mut out = Vec::new();
        write_series_csv(&mut out, &s).unwrap();
        assert_eq!(read_series_csv(out.as_slice()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn detector_invariants(
            steps in proptest::collection::vec(proptest::collection::btree_set((0i64..4, 0i64..4), 0..8), 1..30),
            blind in proptest::collection::btree_set((0i64..4, 0i64..4), 0..4),
        ) {
            let bz: BlindZoneList = blind.iter().map(|&(a, b)| px(a, b)).collect();
            let mut det = Detector::new(bz.clone(), AlertColumns::default());
            let mut log = Vec::new();
            for (i, pixels) in steps.iter().enumerate() {
                let t = (i as u64 + 1) * 5_000;
                let rows: Vec<ResultRow> = pixels.iter().map(|&(a, b)| row(t, px(a, b), 11)).collect();
                log.extend(det.step(t, &rows));
            }
            prop_assert!(log.iter().all(|a| !bz.contains(&a.pixel)));
            // Between two first detections of one pixel there is a step without it.
            let mut by_pixel: BTreeMap<GeoPixel, Vec<&Alert>> = BTreeMap::new();
            for a in &log {
                by_pixel.entry(a.pixel).or_default().push(a);
            }
            for alerts in by_pixel.values() {
                prop_assert!(alerts[0].first_detection);
                for w in alerts.windows(2) {
                    let contiguous = w[1].eval_time == w[0].eval_time + 5_000;
                    prop_assert_eq!(w[1].first_detection, !contiguous);
                }
            }
        }
    }
}
