use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One departure path. Delays are normalized to the profile's RMS delay spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub delay: f64,
    pub power: f64,
    pub azimuth: f64,
    pub zenith: f64,
}

/// The three bundled clustered-delay-line tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileId {
    #[serde(rename = "cdl-a")]
    CdlA,
    #[serde(rename = "cdl-b")]
    CdlB,
    #[serde(rename = "cdl-c")]
    CdlC,
}

impl ProfileId {
    pub const ALL: [ProfileId; 3] = [ProfileId::CdlA, ProfileId::CdlB, ProfileId::CdlC];

    pub fn name(self) -> &'static str {
        match self {
            ProfileId::CdlA => "cdl-a",
            ProfileId::CdlB => "cdl-b",
            ProfileId::CdlC => "cdl-c",
        }
    }

    fn table(self) -> &'static str {
        match self {
            ProfileId::CdlA => include_str!("../../data/cdl_a.csv"),
            ProfileId::CdlB => include_str!("../../data/cdl_b.csv"),
            ProfileId::CdlC => include_str!("../../data/cdl_c.csv"),
        }
    }
}

impl std::str::FromStr for ProfileId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProfileId::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown profile `{s}`")))
    }
}

#[derive(Debug, Deserialize)]
struct TableRow {
    normalized_delay: f64,
    power_db: f64,
    aod_deg: f64,
    #[allow(dead_code)]
    aoa_deg: f64,
    zod_deg: f64,
    #[allow(dead_code)]
    zoa_deg: f64,
}

/// Delay/power/angle description of a multipath channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    name: String,
    clusters: Vec<Cluster>,
    rms_ds: f64,
}

impl ClusterProfile {
    /// Sorts clusters by delay and normalizes powers to sum to one.
    ///
    /// The earliest cluster must sit at delay 0.
    pub fn new(name: impl Into<String>, mut clusters: Vec<Cluster>, rms_ds: f64) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::InvalidArgument("profile has no clusters".into()));
        }
        if !(rms_ds >= 0.0 && rms_ds.is_finite()) {
            return Err(Error::InvalidArgument(format!("rms delay spread {rms_ds} must be >= 0")));
        }
        for c in &clusters {
            let finite = [c.delay, c.power, c.azimuth, c.zenith].iter().all(|v| v.is_finite());
            if !finite || c.delay < 0.0 || c.power < 0.0 {
                return Err(Error::InvalidArgument(format!("invalid cluster {c:?}")));
            }
        }
        clusters.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        if clusters[0].delay != 0.0 {
            return Err(Error::InvalidArgument("first cluster delay must be 0".into()));
        }
        let total: f64 = clusters.iter().map(|c| c.power).sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("cluster powers sum to zero".into()));
        }
        clusters.iter_mut().for_each(|c| c.power /= total);
        Ok(Self {
            name: name.into(),
            clusters,
            rms_ds,
        })
    }

    /// Loads a bundled table at the given RMS delay spread (seconds).
    pub fn builtin(id: ProfileId, rms_ds: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(id.table().as_bytes());
        let mut clusters = Vec::new();
        for row in reader.deserialize::<TableRow>() {
            let row = row.map_err(|e| Error::Format(format!("{} table: {e}", id.name())))?;
            clusters.push(Cluster {
                delay: row.normalized_delay,
                power: 10f64.powf(row.power_db / 10.0),
                azimuth: row.aod_deg.to_radians(),
                zenith: row.zod_deg.to_radians(),
            });
        }
        let profile = Self::new(id.name(), clusters, rms_ds)?;
        debug_assert!((23..=24).contains(&profile.clusters.len()));
        Ok(profile)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn rms_ds(&self) -> f64 {
        self.rms_ds
    }

    pub fn with_delay_spread(&self, rms_ds: f64) -> Self {
        Self {
            rms_ds,
            ..self.clone()
        }
    }

    /// Absolute delay of cluster `c` in seconds.
    pub fn delay_seconds(&self, c: usize) -> f64 {
        self.clusters[c].delay * self.rms_ds
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_tables_satisfy_invariants() {
        for id in ProfileId::ALL {
            let p = ClusterProfile::builtin(id, 100e-9).unwrap();
            assert!((23..=24).contains(&p.clusters().len()), "{}", id.name());
            assert_eq!(p.clusters()[0].delay, 0.0);
            assert!(p.clusters().windows(2).all(|w| w[0].delay <= w[1].delay));
            let total: f64 = p.clusters().iter().map(|c| c.power).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert_eq!(ClusterProfile::builtin(ProfileId::CdlC, 1e-7).unwrap().clusters().len(), 24);
    }

    #[test]
    fn rejects_bad_profiles() {
        let c = |delay| Cluster {
            delay,
            power: 1.0,
            azimuth: 0.0,
            zenith: 0.0,
        };
        assert!(ClusterProfile::new("x", vec![], 1e-7).is_err());
        assert!(ClusterProfile::new("x", vec![c(0.5)], 1e-7).is_err());
        assert!(ClusterProfile::new("x", vec![c(-1.0), c(0.0)], 1e-7).is_err());
        let p = ClusterProfile::new("x", vec![c(2.0), c(0.0)], 1e-7).unwrap();
        assert_eq!(p.clusters()[1].delay, 2.0);
        assert!((p.delay_seconds(1) - 2e-7).abs() < 1e-20);
    }

    #[test]
    fn profile_names_parse() {
        assert_eq!("CDL-B".parse::<ProfileId>().unwrap(), ProfileId::CdlB);
        assert!("cdl-d".parse::<ProfileId>().is_err());
    }
}
