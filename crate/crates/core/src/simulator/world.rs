//! Phones, pixels and the time-ordered event source.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ScenarioConfig;
use crate::geo::GeoPixel;
use crate::model::{Status, StatusEvent};

/// Largest offset of a phone from its pixel center, in millidegrees.
const JITTER_MILLI: f64 = 0.45;

/// Inter-emission interval for a pixel: `floor(cycle / density)`, or `None`
/// when the pixel has no phones.
pub fn sleep_time_for_density(density: u32, cycle_ms: u64) -> Option<u64> {
    (density > 0).then(|| cycle_ms / u64::from(density))
}

/// Static description of one simulated pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPlan {
    pub pixel: GeoPixel,
    pub zone: Option<usize>,
    pub residents: u32,
    pub sleep_ms: Option<u64>,
    pub lost_ratio: f64,
}

/// A resolved incident.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IncidentPlan {
    pub pixel: GeoPixel,
    pub start_ms: u64,
    pub duration_ms: u64,
    pub phone_count: u64,
}

impl IncidentPlan {
    /// Loss time of the `k`-th passenger.
    pub fn loss_time(&self, k: u64) -> u64 {
        self.start_ms + (u128::from(k) * u128::from(self.duration_ms) / u128::from(self.phone_count)) as u64
    }
}

/// Every pixel of the scenario, in zone order; incident pixels outside all
/// zones are appended with no residents.
pub fn plan_pixels(cfg: &ScenarioConfig) -> Vec<PixelPlan> {
    let cycle = cfg.emission_cycle();
    let mut plans = Vec::new();
    for (zi, zone) in cfg.zones.iter().enumerate() {
        let pixels = zone.pixel_list();
        let n = pixels.len();
        for (i, pixel) in pixels.into_iter().enumerate() {
            let residents = zone.residents(i, n);
            let sleep_ms = match zone.emission_interval {
                Some(_) if residents == 0 => None,
                Some(interval) => Some(interval.get()),
                None => sleep_time_for_density(residents, cycle),
            };
            plans.push(PixelPlan {
                pixel,
                zone: Some(zi),
                residents,
                sleep_ms,
                lost_ratio: zone.lost_ratio,
            });
        }
    }
    let mut known: std::collections::HashSet<GeoPixel> = plans.iter().map(|p| p.pixel).collect();
    for inc in &cfg.incidents {
        if known.insert(inc.pixel()) {
            plans.push(PixelPlan {
                pixel: inc.pixel(),
                zone: None,
                residents: 0,
                sleep_ms: None,
                lost_ratio: 0.0,
            });
        }
    }
    plans
}

pub fn plan_incidents(cfg: &ScenarioConfig) -> Vec<IncidentPlan> {
    cfg.incidents
        .iter()
        .zip(cfg.incident_starts())
        .map(|(inc, start_ms)| IncidentPlan {
            pixel: inc.pixel(),
            start_ms,
            duration_ms: inc.duration.get(),
            phone_count: inc.phone_count,
        })
        .collect()
}

fn position(pixel: GeoPixel, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let dlat = rng.gen_range(-JITTER_MILLI..=JITTER_MILLI);
    let dlon = rng.gen_range(-JITTER_MILLI..=JITTER_MILLI);
    (
        (pixel.lat_milli as f64 + dlat) / 1000.0,
        (pixel.lon_milli as f64 + dlon) / 1000.0,
    )
}

/// Generator for one pixel: resident phones report round-robin, one every
/// `sleep_ms`, each report lost with probability `lost_ratio`. Incident
/// passengers report only their loss, then Detached one update period later.
struct PixelSource {
    pixel: GeoPixel,
    phones: Vec<(f64, f64)>,
    sleep_ms: Option<u64>,
    offset: u64,
    first_phone: usize,
    emitted: u64,
    lost_ratio: f64,
    rng: ChaCha8Rng,
    scheduled: VecDeque<StatusEvent>,
    run_length: u64,
}

impl PixelSource {
    fn next_background(&self) -> Option<u64> {
        let sleep = self.sleep_ms?;
        let t = self.offset + self.emitted * sleep;
        (t < self.run_length).then_some(t)
    }

    fn peek(&self) -> Option<u64> {
        match (self.next_background(), self.scheduled.front()) {
            (Some(a), Some(b)) => Some(a.min(b.timestamp)),
            (a, b) => a.or(b.map(|e| e.timestamp)),
        }
    }

    fn pop(&mut self) -> StatusEvent {
        let bg = self.next_background();
        match self.scheduled.front() {
            Some(e) if bg.is_none_or(|t| e.timestamp <= t) => {
                return self.scheduled.pop_front().expect("front exists")
            }
            _ => {}
        }
        let t = bg.expect("pop called on an exhausted source");
        let k = (self.first_phone + self.emitted as usize) % self.phones.len();
        self.emitted += 1;
        let status = if self.rng.gen_bool(self.lost_ratio) {
            Status::UnReachable
        } else {
            Status::Attached
        };
        let (lat, lon) = self.phones[k];
        StatusEvent {
            phone_id: format!("{}_{}_{k}", self.pixel.lat_milli, self.pixel.lon_milli),
            lat,
            lon,
            status,
            timestamp: t,
        }
    }
}

/// Seeded per-pixel generators merged in `(timestamp, pixel index, sequence)`
/// order.
pub struct EventSource {
    sources: Vec<PixelSource>,
    queue: BinaryHeap<Reverse<(u64, usize, u64)>>,
    seq: Vec<u64>,
}

/// RNG stream of pixel `i`; stream 0 belongs to scenario-level draws.
fn pixel_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn incident_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 40) + index as u64);
    rng
}

impl EventSource {
    pub fn new(cfg: &ScenarioConfig, plans: &[PixelPlan], incidents: &[IncidentPlan]) -> Self {
        let run_length = cfg.run_length.get();
        let mut sources: Vec<PixelSource> = plans
            .iter()
            .enumerate()
            .map(|(i, plan)| {
                let mut rng = pixel_rng(cfg.seed, i);
                let phones: Vec<(f64, f64)> = (0..plan.residents).map(|_| position(plan.pixel, &mut rng)).collect();
                let (offset, first_phone) = match plan.sleep_ms {
                    Some(sleep) if !phones.is_empty() => {
                        (rng.gen_range(0..sleep.max(1)), rng.gen_range(0..phones.len()))
                    }
                    _ => (0, 0),
                };
                PixelSource {
                    pixel: plan.pixel,
                    sleep_ms: plan.sleep_ms.filter(|_| !phones.is_empty()),
                    phones,
                    offset,
                    first_phone,
                    emitted: 0,
                    lost_ratio: plan.lost_ratio,
                    rng,
                    scheduled: VecDeque::new(),
                    run_length,
                }
            })
            .collect();

        let index: BTreeMap<GeoPixel, usize> = plans.iter().enumerate().map(|(i, p)| (p.pixel, i)).collect();
        let mut scheduled: BTreeMap<usize, Vec<(u64, usize, u64, StatusEvent)>> = BTreeMap::new();
        for (n, inc) in incidents.iter().enumerate() {
            let mut rng = incident_rng(cfg.seed, n);
            let target = index[&inc.pixel];
            for k in 0..inc.phone_count {
                let (lat, lon) = position(inc.pixel, &mut rng);
                let phone_id = format!("{}_{}_i{n}_{k}", inc.pixel.lat_milli, inc.pixel.lon_milli);
                let lost = inc.loss_time(k);
                let mut push = |t: u64, status: Status| {
                    if t < run_length {
                        scheduled.entry(target).or_default().push((
                            t,
                            n,
                            k,
                            StatusEvent {
                                phone_id: phone_id.clone(),
                                lat,
                                lon,
                                status,
                                timestamp: t,
                            },
                        ));
                    }
                };
                push(lost, Status::UnReachable);
                if cfg.emit_detached {
                    push(lost + cfg.update_period.get(), Status::Detached);
                }
            }
        }
        for (i, mut events) in scheduled {
            events.sort_by_key(|e| (e.0, e.1, e.2));
            sources[i].scheduled = events.into_iter().map(|e| e.3).collect();
        }

        let mut queue = BinaryHeap::new();
        for (i, s) in sources.iter().enumerate() {
            if let Some(t) = s.peek() {
                queue.push(Reverse((t, i, 0)));
            }
        }
        EventSource {
            seq: vec![0; sources.len()],
            sources,
            queue,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.sources.len()
    }
}

impl Iterator for EventSource {
    /// Pixel index and event.
    type Item = (usize, StatusEvent);

    fn next(&mut self) -> Option<Self::Item> {
        let Reverse((_, i, _)) = self.queue.pop()?;
        let event = self.sources[i].pop();
        self.seq[i] += 1;
        if let Some(t) = self.sources[i].peek() {
            self.queue.push(Reverse((t, i, self.seq[i])));
        }
        Some((i, event))
    }
}
