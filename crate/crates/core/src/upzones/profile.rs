use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::UpZoneSet;
use crate::ingest::{Venue, VenueAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneProfile {
    pub zone_id: usize,
    pub cells: usize,
    pub venues: usize,
    pub tfidf: BTreeMap<String, f64>,
    /// Categories by weight descending, ties by name.
    pub top_terms: Vec<String>,
    /// Set when no venue falls in the zone.
    pub empty: bool,
}

/// `ln((1 + n_docs) / (1 + df)) + 1`.
pub fn smooth_idf(n_docs: usize, df: usize) -> f64 {
    ((1 + n_docs) as f64 / (1 + df) as f64).ln() + 1.0
}

/// TF-IDF category profile per zone, treating each zone as a document.
pub fn profile_zones(zones: &UpZoneSet, venues: &[Venue], assignment: &VenueAssignment) -> Vec<ZoneProfile> {
    let mut tf: BTreeMap<usize, BTreeMap<&str, usize>> = (0..zones.zone_count).map(|z| (z, BTreeMap::new())).collect();
    let mut venue_count: BTreeMap<usize, usize> = BTreeMap::new();
    for venue in venues {
        let Some(zone) = assignment.region_of(&venue.venue_id).and_then(|r| zones.zones.get(r)) else {
            continue;
        };
        *tf.entry(*zone).or_default().entry(venue.category.as_str()).or_insert(0) += 1;
        *venue_count.entry(*zone).or_insert(0) += 1;
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for counts in tf.values() {
        for c in counts.keys() {
            *df.entry(c).or_insert(0) += 1;
        }
    }
    let n_docs = tf.len();
    let members = zones.members();
    tf.iter()
        .map(|(zone, counts)| {
            let tfidf: BTreeMap<String, f64> =
                counts.iter().map(|(c, n)| (c.to_string(), *n as f64 * smooth_idf(n_docs, df[c]))).collect();
            let mut ranked: Vec<(&String, &f64)> = tfidf.iter().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
            let top_terms = ranked.into_iter().map(|(c, _)| c.clone()).collect();
            ZoneProfile {
                zone_id: *zone,
                cells: members.get(zone).map_or(0, Vec::len),
                venues: venue_count.get(zone).copied().unwrap_or(0),
                empty: counts.is_empty(),
                tfidf,
                top_terms,
            }
        })
        .collect()
}

/// Categories present in a profile, for quick set comparisons.
pub fn profile_terms(profile: &ZoneProfile) -> BTreeSet<&str> {
    profile.tfidf.keys().map(String::as_str).collect()
}
