//! Scenario files: zones, incidents, blind zones, query and clock settings.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SimError;
use crate::duration::Millis;
use crate::geo::{CoordinateMode, GeoPixel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Realtime,
}

impl FromStr for ClockMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "virtual" => Ok(ClockMode::Virtual),
            "realtime" => Ok(ClockMode::Realtime),
            _ => Err(format!("unknown clock mode `{s}` (expected virtual or realtime)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    /// One stream and one query per pixel.
    #[default]
    PerPixel,
    /// One stream, one grouped query.
    Global,
}

impl FromStr for QueryMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-pixel" => Ok(QueryMode::PerPixel),
            "global" => Ok(QueryMode::Global),
            _ => Err(format!("unknown query mode `{s}` (expected per-pixel or global)")),
        }
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryMode::PerPixel => "per-pixel",
            QueryMode::Global => "global",
        })
    }
}

/// Incident start: a fixed time or drawn from the scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartTime {
    At(Millis),
    Random,
}

impl Serialize for StartTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StartTime::At(m) => m.serialize(s),
            StartTime::Random => s.serialize_str("random"),
        }
    }
}

impl<'de> Deserialize<'de> for StartTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(ms) => Ok(StartTime::At(Millis(ms))),
            Raw::Text(t) if t == "random" => Ok(StartTime::Random),
            Raw::Text(t) => t
                .parse::<Millis>()
                .map(StartTime::At)
                .map_err(serde::de::Error::custom),
        }
    }
}

fn default_lost_ratio() -> f64 {
    0.001
}

fn default_update_period() -> Millis {
    Millis(30 * 60_000)
}

fn default_speedup() -> f64 {
    1_000.0
}

fn default_true() -> bool {
    true
}

fn default_step() -> Millis {
    Millis(5_000)
}

fn default_name() -> String {
    "scenario".into()
}

/// A group of pixels sharing a phone density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneConfig {
    pub name: String,
    /// Number of pixels laid out row by row from `origin`, `columns` wide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<u32>,
    /// Explicit `[lat_milli, lon_milli]` pixels, instead of a layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<Vec<[i64; 2]>>,
    /// Phones per pixel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<u32>,
    /// Total phones spread over the zone; the first pixels take the remainder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phones: Option<u64>,
    #[serde(default = "default_lost_ratio")]
    pub lost_ratio: f64,
    /// Fixed per-pixel emission interval, instead of cycle / density.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_interval: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentConfig {
    pub lat_milli: i64,
    pub lon_milli: i64,
    pub phone_count: u64,
    pub start: StartTime,
    /// Losses are spread evenly over this interval; 0 means simultaneous.
    #[serde(default)]
    pub duration: Millis,
}

impl IncidentConfig {
    pub fn pixel(&self) -> GeoPixel {
        GeoPixel {
            lat_milli: self.lat_milli,
            lon_milli: self.lon_milli,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySettings {
    /// Query file, relative to the scenario file. Defaults to the shipped
    /// detection query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default = "default_step")]
    pub step: Millis,
    /// Window range; defaults to the update period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Millis>,
}

impl Default for QuerySettings {
    fn default() -> Self {
        QuerySettings {
            file: None,
            step: default_step(),
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub run_length: Millis,
    /// Location update period: a lost phone turns Detached this long after
    /// its loss.
    #[serde(default = "default_update_period")]
    pub update_period: Millis,
    /// Time in which every phone of a pixel reports once; defaults to the
    /// update period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_cycle: Option<Millis>,
    #[serde(default)]
    pub clock: ClockMode,
    /// Simulated milliseconds per wall-clock millisecond in realtime mode.
    #[serde(default = "default_speedup")]
    pub realtime_speedup: f64,
    #[serde(default)]
    pub query_mode: QueryMode,
    #[serde(default)]
    pub coords: CoordinateMode,
    #[serde(default = "default_true")]
    pub emit_detached: bool,
    /// Evaluate queries that fall due together on a thread pool.
    #[serde(default = "default_true")]
    pub parallel: bool,
    #[serde(default)]
    pub query: QuerySettings,
    #[serde(default)]
    pub zones: Vec<ZoneConfig>,
    #[serde(default)]
    pub incidents: Vec<IncidentConfig>,
    #[serde(default)]
    pub blind_zones: Vec<[i64; 2]>,
    /// Extra pixels whose per-step counts are recorded; incident pixels
    /// always are.
    #[serde(default)]
    pub monitor: Vec<[i64; 2]>,
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> SimError {
    SimError::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn pixel(p: [i64; 2]) -> GeoPixel {
    GeoPixel {
        lat_milli: p[0],
        lon_milli: p[1],
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn emission_cycle(&self) -> u64 {
        self.emission_cycle.unwrap_or(self.update_period).get()
    }

    pub fn window(&self) -> u64 {
        self.query.window.unwrap_or(self.update_period).get()
    }

    pub fn blind_zone_pixels(&self) -> impl Iterator<Item = GeoPixel> + '_ {
        self.blind_zones.iter().copied().map(pixel)
    }

    pub fn monitor_pixels(&self) -> impl Iterator<Item = GeoPixel> + '_ {
        self.monitor.iter().copied().map(pixel)
    }

    /// Checks every field; errors name the offending field.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.run_length.get() == 0 {
            return Err(field_err("run_length", "must be positive"));
        }
        if self.update_period.get() == 0 {
            return Err(field_err("update_period", "must be positive"));
        }
        if self.emission_cycle == Some(Millis(0)) {
            return Err(field_err("emission_cycle", "must be positive"));
        }
        if !(self.realtime_speedup.is_finite() && self.realtime_speedup > 0.0) {
            return Err(field_err("realtime_speedup", "must be a positive number"));
        }
        if self.query.step.get() == 0 {
            return Err(field_err("query.step", "must be positive"));
        }
        if self.query.window == Some(Millis(0)) {
            return Err(field_err("query.window", "must be positive"));
        }
        let check_pixel = |field: String, p: [i64; 2]| {
            pixel(p)
                .validate(self.coords)
                .map_err(|e| field_err(field, e.to_string()))
        };
        for (i, z) in self.zones.iter().enumerate() {
            let f = |name: &str| format!("zones[{i}].{name}");
            if !(0.0..=1.0).contains(&z.lost_ratio) {
                return Err(field_err(f("lost_ratio"), "must lie in [0, 1]"));
            }
            match (&z.pixels, z.pixel_count) {
                (Some(_), Some(_)) => {
                    return Err(field_err(f("pixels"), "give either `pixels` or `pixel_count`, not both"))
                }
                (None, None) => return Err(field_err(f("pixel_count"), "missing")),
                (None, Some(n)) => {
                    let origin = z.origin.ok_or_else(|| field_err(f("origin"), "required with `pixel_count`"))?;
                    let columns = z.columns.unwrap_or(n.max(1));
                    if columns == 0 {
                        return Err(field_err(f("columns"), "must be positive"));
                    }
                    check_pixel(f("origin"), origin)?;
                    if n > 0 {
                        let last = [
                            origin[0] + ((n - 1) / columns) as i64,
                            origin[1] + (columns.min(n) - 1) as i64,
                        ];
                        check_pixel(f("pixel_count"), last)?;
                    }
                }
                (Some(list), None) => {
                    for (j, &p) in list.iter().enumerate() {
                        check_pixel(format!("zones[{i}].pixels[{j}]"), p)?;
                    }
                }
            }
            match (z.density, z.phones) {
                (Some(_), Some(_)) => {
                    return Err(field_err(f("phones"), "give either `density` or `phones`, not both"))
                }
                (None, None) => return Err(field_err(f("density"), "missing")),
                _ => {}
            }
            if z.emission_interval == Some(Millis(0)) {
                return Err(field_err(f("emission_interval"), "must be positive"));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, z) in self.zones.iter().enumerate() {
            for p in z.pixel_list() {
                if !seen.insert(p) {
                    return Err(field_err(
                        format!("zones[{i}]"),
                        format!("pixel {p} already belongs to another zone"),
                    ));
                }
            }
        }
        for (i, inc) in self.incidents.iter().enumerate() {
            if inc.phone_count == 0 {
                return Err(field_err(format!("incidents[{i}].phone_count"), "must be at least 1"));
            }
            check_pixel(format!("incidents[{i}]"), [inc.lat_milli, inc.lon_milli])?;
            if let StartTime::At(t) = inc.start {
                if t.get() >= self.run_length.get() {
                    return Err(field_err(
                        format!("incidents[{i}].start"),
                        "must fall before the end of the run",
                    ));
                }
            }
        }
        for (i, &p) in self.blind_zones.iter().enumerate() {
            check_pixel(format!("blind_zones[{i}]"), p)?;
        }
        for (i, &p) in self.monitor.iter().enumerate() {
            check_pixel(format!("monitor[{i}]"), p)?;
        }
        Ok(())
    }

    /// Incident start times, drawing `random` ones uniformly from
    /// `[run_length / 4, run_length / 2)` with the scenario seed.
    pub fn incident_starts(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let lo = self.run_length.get() / 4;
        let hi = (self.run_length.get() / 2).max(lo + 1);
        self.incidents
            .iter()
            .map(|inc| {
                let draw = rng.gen_range(lo..hi);
                match inc.start {
                    StartTime::At(t) => t.get(),
                    StartTime::Random => draw,
                }
            })
            .collect()
    }

    /// Copy with every derived choice written out: incident start times,
    /// query window and emission cycle.
    pub fn resolved(&self) -> ScenarioConfig {
        let mut out = self.clone();
        for (inc, start) in out.incidents.iter_mut().zip(self.incident_starts()) {
            inc.start = StartTime::At(Millis(start));
        }
        out.query.window = Some(Millis(self.window()));
        out.emission_cycle = Some(Millis(self.emission_cycle()));
        out
    }
}

impl ZoneConfig {
    /// Pixels in layout order.
    pub fn pixel_list(&self) -> Vec<GeoPixel> {
        if let Some(list) = &self.pixels {
            return list.iter().copied().map(pixel).collect();
        }
        let n = self.pixel_count.unwrap_or(0);
        let Some(origin) = self.origin else {
            return Vec::new();
        };
        let columns = self.columns.unwrap_or(n.max(1)).max(1);
        (0..n)
            .map(|i| GeoPixel {
                lat_milli: origin[0] + (i / columns) as i64,
                lon_milli: origin[1] + (i % columns) as i64,
            })
            .collect()
    }

    /// Resident phones of the `index`-th pixel.
    pub fn residents(&self, index: usize, pixel_count: usize) -> u32 {
        match (self.density, self.phones) {
            (Some(d), _) => d,
            (None, Some(total)) if pixel_count > 0 => {
                let n = pixel_count as u64;
                (total / n + u64::from((index as u64) < total % n)) as u32
            }
            _ => 0,
        }
    }
}
