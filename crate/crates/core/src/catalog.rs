//! Earthquake catalogs: ingestion, windowing and single-link clustering.
//!
//! Times are decimal days from a catalog epoch. Distances between epicenters
//! are great-circle distances on a sphere of radius [`EARTH_RADIUS_KM`].

use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Kilometres per degree of arc on the mean-radius sphere.
pub const KM_PER_DEGREE: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Magnitude gap separating foreshock-type clusters from swarms.
pub const DEFAULT_GAP_THRESHOLD: f64 = 0.45;

/// Default single-link thresholds (km, days).
pub const DEFAULT_LINK_KM: f64 = 30.0;
pub const DEFAULT_LINK_DAYS: f64 = 5.0;

/// One catalog row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Decimal days from the catalog epoch.
    pub t: f64,
    pub lon: f64,
    pub lat: f64,
    /// Depth in km.
    pub depth: f64,
    pub mag: f64,
}

impl Event {
    pub fn new(t: f64, lon: f64, lat: f64, depth: f64, mag: f64) -> Self {
        Self {
            t,
            lon,
            lat,
            depth,
            mag,
        }
    }

    /// Event with only a time and magnitude (epicenter at the origin).
    pub fn at(t: f64, mag: f64) -> Self {
        Self::new(t, 0.0, 0.0, 0.0, mag)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(invalid(format!("time {} is not finite", self.t)));
        }
        if !(-180.0..=360.0).contains(&self.lon) {
            return Err(invalid(format!("longitude {} outside [-180, 360]", self.lon)));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(invalid(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(self.depth >= 0.0) {
            return Err(invalid(format!("depth {} is negative", self.depth)));
        }
        if !self.mag.is_finite() {
            return Err(invalid(format!("magnitude {} is not finite", self.mag)));
        }
        Ok(())
    }
}

/// Simple polygon in (lon, lat) degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(invalid("a polygon needs at least three vertices"));
        }
        Ok(Self { vertices })
    }

    pub fn rectangle(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Self {
        Self {
            vertices: vec![
                (lon_min, lat_min),
                (lon_max, lat_min),
                (lon_max, lat_max),
                (lon_min, lat_max),
            ],
        }
    }

    /// Even-odd point-in-polygon test; points on the lower/left edge of a
    /// rectangle count as inside.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        let (lo_x, hi_x, lo_y, hi_y) = self.bounding_box();
        if lon < lo_x || lon > hi_x || lat < lo_y || lat > hi_y {
            return false;
        }
        if self.is_axis_rectangle() {
            return true;
        }
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if (yi > lat) != (yj > lat) && lon < (xj - xi) * (lat - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        )
    }

    fn is_axis_rectangle(&self) -> bool {
        if self.vertices.len() != 4 {
            return false;
        }
        let (lo_x, hi_x, lo_y, hi_y) = self.bounding_box();
        self.vertices
            .iter()
            .all(|&(x, y)| (x == lo_x || x == hi_x) && (y == lo_y || y == hi_y))
    }
}

/// A time-ordered earthquake catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub events: Vec<Event>,
    /// Calendar datum for t = 0, when known.
    pub epoch: Option<NaiveDateTime>,
    /// Completeness magnitude once a completeness filter has been applied.
    pub mc: Option<f64>,
    pub region: Option<Polygon>,
    /// Observation span [0, T_end] in days.
    pub t_span: (f64, f64),
}

impl Catalog {
    /// Builds a catalog from events in any order; the events are stably sorted by time.
    pub fn new(mut events: Vec<Event>) -> Self {
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        let t_end = events.last().map_or(0.0, |e| e.t.max(0.0));
        let t_start = events.first().map_or(0.0, |e| e.t.min(0.0));
        Self {
            events,
            epoch: None,
            mc: None,
            region: None,
            t_span: (t_start, t_end),
        }
    }

    /// Catalog with an explicit observation span.
    pub fn with_span(events: Vec<Event>, t_span: (f64, f64)) -> Self {
        let mut cat = Self::new(events);
        cat.t_span = t_span;
        cat
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    pub fn mags(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.mag).collect()
    }

    /// Keeps events with magnitude ≥ `mc` and records the cutoff.
    pub fn with_completeness(&self, mc: f64) -> Self {
        let mut out = self.clone();
        out.events.retain(|e| e.mag >= mc);
        out.mc = Some(mc);
        out
    }

    fn derived(&self, events: Vec<Event>) -> Self {
        Self {
            events,
            epoch: self.epoch,
            mc: self.mc,
            region: self.region.clone(),
            t_span: self.t_span,
        }
    }
}

/// Supported on-disk catalog formats.
#[derive(Debug, Clone, PartialEq)]
pub enum CatalogFormat {
    /// Header row with columns `time, lon, lat, depth_km, mag`.
    Csv,
    /// Fixed-width hypocenter lines with configurable column offsets.
    HypoFixedWidth(FixedWidthLayout),
}

/// Byte ranges `[start, end)` of each field in a fixed-width line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedWidthLayout {
    pub time: (usize, usize),
    pub lon: (usize, usize),
    pub lat: (usize, usize),
    pub depth: (usize, usize),
    pub mag: (usize, usize),
}

impl Default for FixedWidthLayout {
    /// Columns 1–26 time, 27–36 longitude, 37–45 latitude, 46–52 depth,
    /// 53–58 magnitude.
    fn default() -> Self {
        Self {
            time: (0, 26),
            lon: (26, 36),
            lat: (36, 45),
            depth: (45, 52),
            mag: (52, 58),
        }
    }
}

/// Options controlling catalog ingestion.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Datum for converting calendar timestamps to decimal days. When absent
    /// and timestamps are present, midnight of the earliest timestamp is used.
    pub epoch: Option<NaiveDateTime>,
}

enum RawTime {
    Days(f64),
    Stamp(NaiveDateTime),
}

fn parse_time(s: &str) -> std::result::Result<RawTime, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Ok(RawTime::Days(v));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(RawTime::Stamp(dt.naive_utc()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(RawTime::Stamp(dt));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(RawTime::Stamp(d.and_hms_opt(0, 0, 0).expect("midnight")));
    }
    Err(format!("unrecognized time '{s}'"))
}

fn parse_num(field: &str, name: &str) -> std::result::Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("{name} '{}' is not a number", field.trim()))
}

struct RawRow {
    line: u64,
    time: RawTime,
    lon: f64,
    lat: f64,
    depth: f64,
    mag: f64,
}

fn decimal_days(stamp: NaiveDateTime, epoch: NaiveDateTime) -> f64 {
    let d = stamp - epoch;
    match d.num_microseconds() {
        Some(us) => us as f64 / 86_400e6,
        None => d.num_seconds() as f64 / 86_400.0,
    }
}

fn finish(path: &str, rows: Vec<RawRow>, mut errors: Vec<String>, opts: &LoadOptions) -> Result<Catalog> {
    let epoch = opts.epoch.or_else(|| {
        rows.iter()
            .filter_map(|r| match r.time {
                RawTime::Stamp(s) => Some(s),
                RawTime::Days(_) => None,
            })
            .min()
            .map(|s| s.date().and_hms_opt(0, 0, 0).expect("midnight"))
    });
    let mut events = Vec::with_capacity(rows.len());
    for r in rows {
        let t = match r.time {
            RawTime::Days(v) => v,
            RawTime::Stamp(s) => decimal_days(s, epoch.expect("epoch set when stamps exist")),
        };
        let ev = Event::new(t, r.lon, r.lat, r.depth, r.mag);
        match ev.validate() {
            Ok(()) => events.push(ev),
            Err(e) => errors.push(format!("line {}: {e}", r.line)),
        }
    }
    if !errors.is_empty() {
        let count = errors.len();
        errors.truncate(10);
        return Err(Error::Parse {
            path: path.to_string(),
            count,
            details: errors.join("\n"),
        });
    }
    if events.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let mut cat = Catalog::new(events);
    cat.epoch = epoch;
    Ok(cat)
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

/// Parses CSV catalog text (see [`CatalogFormat::Csv`]).
pub fn parse_csv(text: &str, source: &str, opts: &LoadOptions) -> Result<Catalog> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: source.to_string(),
            count: 1,
            details: format!("header: {e}"),
        })?
        .clone();
    if headers.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let cols = [
        column(&headers, &["time", "t", "t_days"]),
        column(&headers, &["lon", "longitude"]),
        column(&headers, &["lat", "latitude"]),
        column(&headers, &["depth_km", "depth"]),
        column(&headers, &["mag", "magnitude"]),
    ];
    let names = ["time", "lon", "lat", "depth_km", "mag"];
    let missing: Vec<&str> = cols
        .iter()
        .zip(names)
        .filter(|(c, _)| c.is_none())
        .map(|(_, n)| n)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Parse {
            path: source.to_string(),
            count: 1,
            details: format!("line 1: missing column(s) {}", missing.join(", ")),
        });
    }
    let cols: Vec<usize> = cols.iter().map(|c| c.expect("checked")).collect();

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let get = |k: usize| record.get(cols[k]).unwrap_or("");
        let parsed = (|| -> std::result::Result<RawRow, String> {
            Ok(RawRow {
                line,
                time: parse_time(get(0))?,
                lon: parse_num(get(1), "lon")?,
                lat: parse_num(get(2), "lat")?,
                depth: parse_num(get(3), "depth_km")?,
                mag: parse_num(get(4), "mag")?,
            })
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err(msg) => errors.push(format!("line {line}: {msg}")),
        }
    }
    finish(source, rows, errors, opts)
}

/// Parses fixed-width hypocenter text. Blank lines and lines starting with
/// `#` are skipped.
pub fn parse_fixed_width(
    text: &str,
    layout: &FixedWidthLayout,
    source: &str,
    opts: &LoadOptions,
) -> Result<Catalog> {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx as u64 + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let slice = |(a, b): (usize, usize), name: &str| -> std::result::Result<&str, String> {
            raw.get(a..b.min(raw.len()))
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| format!("{name} field (columns {}-{}) is missing", a + 1, b))
        };
        let parsed = (|| -> std::result::Result<RawRow, String> {
            Ok(RawRow {
                line,
                time: parse_time(slice(layout.time, "time")?)?,
                lon: parse_num(slice(layout.lon, "lon")?, "lon")?,
                lat: parse_num(slice(layout.lat, "lat")?, "lat")?,
                depth: parse_num(slice(layout.depth, "depth")?, "depth")?,
                mag: parse_num(slice(layout.mag, "mag")?, "mag")?,
            })
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err(msg) => errors.push(format!("line {line}: {msg}")),
        }
    }
    finish(source, rows, errors, opts)
}

/// Reads a catalog file.
pub fn load_catalog(path: impl AsRef<Path>, format: &CatalogFormat) -> Result<Catalog> {
    load_catalog_with(path, format, &LoadOptions::default())
}

/// [`load_catalog`] with explicit options.
pub fn load_catalog_with(
    path: impl AsRef<Path>,
    format: &CatalogFormat,
    opts: &LoadOptions,
) -> Result<Catalog> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: name.clone(),
        source,
    })?;
    if text.trim().is_empty() {
        return Err(Error::EmptyCatalog);
    }
    match format {
        CatalogFormat::Csv => parse_csv(&text, &name, opts),
        CatalogFormat::HypoFixedWidth(layout) => parse_fixed_width(&text, layout, &name, opts),
    }
}

/// Writes a catalog as CSV with the columns read by [`load_catalog`].
pub fn write_csv<W: std::io::Write>(catalog: &Catalog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io {
        path: "<catalog>".into(),
        source: std::io::Error::other(e.to_string()),
    };
    w.write_record(["time", "lon", "lat", "depth_km", "mag"])
        .map_err(io)?;
    for e in &catalog.events {
        w.write_record([
            format!("{:.10}", e.t),
            format!("{:.6}", e.lon),
            format!("{:.6}", e.lat),
            format!("{:.3}", e.depth),
            format!("{:.4}", e.mag),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<catalog>".into(),
        source,
    })
}

/// Space–time–magnitude selection criteria; `None` disables a filter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowFilter {
    pub m_min: Option<f64>,
    /// Inclusive time interval in days.
    pub t_range: Option<(f64, f64)>,
    pub region: Option<Polygon>,
    pub depth_max: Option<f64>,
}

/// Returns the events satisfying every filter, in their original order.
pub fn select_window(catalog: &Catalog, filter: &WindowFilter) -> Result<Catalog> {
    if let Some((a, b)) = filter.t_range {
        if !(a <= b) {
            return Err(invalid(format!("inverted time interval ({a}, {b})")));
        }
    }
    let events = catalog
        .events
        .iter()
        .filter(|e| filter.m_min.is_none_or(|m| e.mag >= m))
        .filter(|e| filter.t_range.is_none_or(|(a, b)| e.t >= a && e.t <= b))
        .filter(|e| filter.depth_max.is_none_or(|d| e.depth <= d))
        .filter(|e| filter.region.as_ref().is_none_or(|r| r.contains(e.lon, e.lat)))
        .copied()
        .collect();
    let mut out = catalog.derived(events);
    if let Some(m) = filter.m_min {
        out.mc = Some(out.mc.map_or(m, |mc| mc.max(m)));
    }
    if let Some(r) = &filter.region {
        out.region = Some(r.clone());
    }
    if let Some((a, b)) = filter.t_range {
        out.t_span = (a.max(catalog.t_span.0), b.min(catalog.t_span.1).max(a));
    }
    Ok(out)
}

/// Great-circle distance in km (haversine).
pub fn great_circle_km(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Epicentral distance between two events.
pub fn epicentral_km(a: &Event, b: &Event) -> f64 {
    great_circle_km(a.lon, a.lat, b.lon, b.lat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterType {
    ForeshockType,
    Swarm,
    MainshockAftershock,
    Isolated,
}

/// One single-link cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    /// Indices into the catalog, ascending (and therefore time-ordered).
    pub member_ids: Vec<usize>,
    /// Largest member; ties go to the earliest.
    pub mainshock_id: usize,
    pub cluster_type: ClusterType,
    /// Mainshock magnitude minus the largest pre-shock magnitude.
    pub mag_gap: Option<f64>,
}

impl ClusterRecord {
    /// Builds a classified record from member indices into `catalog`.
    pub fn from_members(mut member_ids: Vec<usize>, catalog: &Catalog, gap_threshold: f64) -> Result<Self> {
        if member_ids.is_empty() {
            return Err(invalid("cluster has no members"));
        }
        if let Some(&bad) = member_ids.iter().find(|&&i| i >= catalog.len()) {
            return Err(invalid(format!("member index {bad} out of range")));
        }
        member_ids.sort_unstable();
        member_ids.dedup();
        let ev = &catalog.events;
        let mainshock_id = member_ids
            .iter()
            .copied()
            .reduce(|best, i| if ev[i].mag > ev[best].mag { i } else { best })
            .expect("non-empty");
        let mag_gap = member_ids
            .iter()
            .filter(|&&i| i < mainshock_id)
            .map(|&i| ev[i].mag)
            .reduce(f64::max)
            .map(|m| ev[mainshock_id].mag - m);
        let record = Self {
            member_ids,
            mainshock_id,
            cluster_type: ClusterType::Isolated,
            mag_gap,
        };
        Ok(classify_cluster(&record, gap_threshold))
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Members of the cluster as events.
    pub fn events(&self, catalog: &Catalog) -> Vec<Event> {
        self.member_ids.iter().map(|&i| catalog.events[i]).collect()
    }
}

/// Assigns the cluster type from the mainshock position and magnitude gap.
///
/// A gap of exactly `gap_threshold` counts as foreshock type.
pub fn classify_cluster(cluster: &ClusterRecord, gap_threshold: f64) -> ClusterRecord {
    let mut out = cluster.clone();
    out.cluster_type = if cluster.member_ids.len() <= 1 {
        ClusterType::Isolated
    } else {
        match cluster.mag_gap {
            None => ClusterType::MainshockAftershock,
            Some(g) if g >= gap_threshold - 1e-9 => ClusterType::ForeshockType,
            Some(_) => ClusterType::Swarm,
        }
    };
    out
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Partitions the catalog into single-link clusters.
///
/// Two events are linked when their epicentral distance is at most
/// `d_space_km` and their time separation at most `d_time_days`; clusters are
/// the connected components. Records are classified with the default 0.45
/// gap and ordered by their earliest member.
pub fn single_link_cluster(
    catalog: &Catalog,
    d_space_km: f64,
    d_time_days: f64,
) -> Result<Vec<ClusterRecord>> {
    if !(d_space_km > 0.0) || !(d_time_days > 0.0) {
        return Err(invalid("linkage thresholds must be positive"));
    }
    let ev = &catalog.events;
    let n = ev.len();
    let mut sets = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if ev[j].t - ev[i].t > d_time_days {
                break;
            }
            if epicentral_km(&ev[i], &ev[j]) <= d_space_km {
                sets.union(i, j);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = sets.find(i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    groups
        .into_iter()
        .map(|m| ClusterRecord::from_members(m, catalog, DEFAULT_GAP_THRESHOLD))
        .collect()
}
