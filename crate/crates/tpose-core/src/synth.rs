//! Synthetic pedestrian scenarios: walkers follow waypoint paths at a drawn
//! speed with Gaussian position noise. Optionally a schedule switches the
//! path by time of day, which gives time-of-day structure that a model with
//! temporal context can exploit and one without cannot.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::math;
use crate::pose::Pose3Dof;
use crate::trajectory::{Dataset, TimestampedPose, Trajectory, SECONDS_PER_DAY};

/// Switches the walked path by start time of day.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    /// Walkers starting before this second-of-day take `am_waypoints`,
    /// the rest `pm_waypoints`.
    pub split_hms: f64,
    pub am_waypoints: Vec<[f64; 2]>,
    pub pm_waypoints: Vec<[f64; 2]>,
}

/// Scenario description for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub walkers: usize,
    /// Path every walker follows, unless a schedule overrides it.
    pub waypoints: Vec<[f64; 2]>,
    /// Walking speed range [m/s]; each walker draws one speed.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Std of the Gaussian noise added to each position sample [m].
    pub noise_sigma: f64,
    /// Sampling interval [s].
    pub interval: f64,
    /// Walkers spread uniformly over this many days.
    pub days: u32,
    /// Start time of day range [s].
    pub start_hms_min: f64,
    pub start_hms_max: f64,
    pub schedule: Option<ScheduleSpec>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            walkers: 50,
            waypoints: alloc::vec![[0.0, 0.0], [10.0, 0.0]],
            speed_min: 0.8,
            speed_max: 1.2,
            noise_sigma: 0.05,
            interval: 0.4,
            days: 1,
            start_hms_min: 8.0 * 3600.0,
            start_hms_max: 18.0 * 3600.0,
            schedule: None,
        }
    }
}

struct Polyline {
    points: Vec<[f64; 2]>,
    /// Cumulative arc length at each point [m].
    cum: Vec<f64>,
}

impl Polyline {
    fn new(points: &[[f64; 2]]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid(format!(
                "path needs at least 2 waypoints, got {}",
                points.len()
            )));
        }
        let mut cum = Vec::with_capacity(points.len());
        cum.push(0.0);
        for pair in points.windows(2) {
            let d = math::hypot(pair[1][0] - pair[0][0], pair[1][1] - pair[0][1]);
            cum.push(cum.last().unwrap() + d);
        }
        let total = *cum.last().unwrap();
        if !(total > 0.0) {
            return Err(Error::Invalid("path has zero length".into()));
        }
        Ok(Polyline {
            points: points.to_vec(),
            cum,
        })
    }

    fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Position and heading at arc length `s` (clamped to the path).
    fn at(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.clamp(0.0, self.total());
        // Find the segment containing s; at a vertex, the outgoing segment.
        let mut i = 0;
        while i + 2 < self.points.len() && self.cum[i + 1] <= s {
            i += 1;
        }
        let seg = self.cum[i + 1] - self.cum[i];
        let f = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let pos = [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
        let yaw = math::atan2(b[1] - a[1], b[0] - a[0]);
        (pos, yaw)
    }
}

fn validate(spec: &ScenarioSpec) -> Result<(Option<Polyline>, Option<(Polyline, Polyline)>)> {
    if spec.walkers == 0 {
        return Err(Error::Invalid("scenario needs at least one walker".into()));
    }
    if !(spec.speed_min > 0.0 && spec.speed_max >= spec.speed_min) {
        return Err(Error::Invalid(format!(
            "speed range [{}, {}] must be positive and ordered",
            spec.speed_min, spec.speed_max
        )));
    }
    if !(spec.interval > 0.0) {
        return Err(Error::Invalid(format!(
            "interval must be positive, got {}",
            spec.interval
        )));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::Invalid(format!(
            "noise sigma must be non-negative, got {}",
            spec.noise_sigma
        )));
    }
    if spec.days == 0 {
        return Err(Error::Invalid("days must be at least 1".into()));
    }
    if !(0.0 <= spec.start_hms_min
        && spec.start_hms_min <= spec.start_hms_max
        && spec.start_hms_max < SECONDS_PER_DAY)
    {
        return Err(Error::Invalid(format!(
            "start time range [{}, {}] must lie within one day",
            spec.start_hms_min, spec.start_hms_max
        )));
    }
    // Every path must support at least 2 samples at the fastest speed.
    let check_len = |p: &Polyline| -> Result<()> {
        if p.total() / spec.speed_max < spec.interval {
            return Err(Error::Invalid(format!(
                "path of {:.2} m is too short for one {} s step at {} m/s",
                p.total(),
                spec.interval,
                spec.speed_max
            )));
        }
        Ok(())
    };
    match &spec.schedule {
        None => {
            let p = Polyline::new(&spec.waypoints)?;
            check_len(&p)?;
            Ok((Some(p), None))
        }
        Some(s) => {
            if !(0.0..SECONDS_PER_DAY).contains(&s.split_hms) {
                return Err(Error::Invalid(format!(
                    "schedule split {} must lie within one day",
                    s.split_hms
                )));
            }
            let am = Polyline::new(&s.am_waypoints)?;
            let pm = Polyline::new(&s.pm_waypoints)?;
            check_len(&am)?;
            check_len(&pm)?;
            Ok((None, Some((am, pm))))
        }
    }
}

/// Generates a dataset of walker trajectories. Deterministic for a given
/// (spec, seed): one sequential random stream drives day, start time, speed
/// and per-sample noise in a fixed order.
pub fn generate_synthetic(spec: &ScenarioSpec, seed: u64) -> Result<Dataset> {
    let (single, scheduled) = validate(spec)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(spec.walkers);
    for w in 0..spec.walkers {
        let day = if spec.days > 1 {
            rng.gen_range(0..spec.days)
        } else {
            0
        } as f64;
        let start_hms = if spec.start_hms_max > spec.start_hms_min {
            rng.gen_range(spec.start_hms_min..spec.start_hms_max)
        } else {
            spec.start_hms_min
        };
        let speed = if spec.speed_max > spec.speed_min {
            rng.gen_range(spec.speed_min..spec.speed_max)
        } else {
            spec.speed_min
        };
        let path = match (&single, &scheduled) {
            (Some(p), _) => p,
            (_, Some((am, pm))) => {
                let split = spec.schedule.as_ref().expect("validated").split_hms;
                if start_hms < split {
                    am
                } else {
                    pm
                }
            }
            _ => unreachable!("validate returns one of the two"),
        };
        let t0 = day * SECONDS_PER_DAY + start_hms;
        let mut samples = Vec::new();
        let mut k = 0usize;
        loop {
            let s = speed * spec.interval * k as f64;
            if s > path.total() + 1e-9 {
                break;
            }
            let (pos, yaw) = path.at(s);
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            samples.push(TimestampedPose {
                t: t0 + spec.interval * k as f64,
                pose: Pose3Dof::from_yaw(
                    pos[0] + spec.noise_sigma * nx,
                    pos[1] + spec.noise_sigma * ny,
                    yaw,
                ),
            });
            k += 1;
        }
        debug_assert!(samples.len() >= 2, "validated path guarantees 2 samples");
        trajectories.push(Trajectory {
            track_id: format!("w{:04}", w),
            samples,
            interval: spec.interval,
        });
    }
    Ok(Dataset {
        trajectories,
        norm: None,
        interval: spec.interval,
    })
}
