//! On-disk formats: model JSON, canonical JSON, CSV, PGM images and raw
//! frame stacks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{validate_factor_graph, FactorGraph, FactorTable, VariableDecl};
use crate::region::{build_bethe_regions, validate_counting, Region, RegionGraph};
use crate::temporal::{validate_temporal_model, TemporalFactor, TemporalModel};

/// A region as written in a model file; `parents` are region ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub id: usize,
    pub variables: Vec<usize>,
    pub factors: Vec<usize>,
    #[serde(default)]
    pub parents: Vec<usize>,
}

/// A model document. Static factors feed the static solvers, temporal
/// factors the solvers over time; `regions` overrides the Bethe default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub variables: Vec<VariableDecl>,
    #[serde(default)]
    pub factors: Vec<FactorTable>,
    #[serde(default)]
    pub temporal_factors: Vec<TemporalFactor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<RegionSpec>>,
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn from_factor_graph(fg: &FactorGraph) -> Self {
        ModelFile { variables: fg.variables.clone(), factors: fg.factors.clone(), temporal_factors: vec![], regions: None }
    }

    pub fn from_temporal(tm: &TemporalModel) -> Self {
        ModelFile {
            variables: tm.variables.clone(),
            factors: vec![],
            temporal_factors: tm.factors.clone(),
            regions: Some(region_specs(&tm.regions)),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("model files always serialize"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_canonical_json() + "\n")?;
        Ok(())
    }

    /// The static model. Errors when the file has no static factors.
    pub fn factor_graph(&self) -> Result<FactorGraph> {
        if self.factors.is_empty() {
            return Err(Error::Usage("model has no static factors".into()));
        }
        FactorGraph::new(self.variables.clone(), self.factors.clone())
    }

    fn region_graph(&self) -> Option<Result<RegionGraph>> {
        self.regions.as_ref().map(|specs| {
            let regions = specs
                .iter()
                .map(|s| Region { id: s.id, variables: s.variables.clone(), factors: s.factors.clone() })
                .collect();
            let edges = specs.iter().flat_map(|s| s.parents.iter().map(move |&p| (p, s.id))).collect();
            RegionGraph::new(regions, edges)
        })
    }

    /// Region graph for the static model: the file's regions, else Bethe.
    pub fn static_regions(&self) -> Result<RegionGraph> {
        match self.region_graph() {
            Some(rg) => rg,
            None => Ok(build_bethe_regions(&self.factor_graph()?)),
        }
    }

    /// The model over time. Errors when the file has no temporal factors.
    pub fn temporal_model(&self) -> Result<TemporalModel> {
        if self.temporal_factors.is_empty() {
            return Err(Error::Usage("model has no temporal factors".into()));
        }
        match self.region_graph() {
            Some(rg) => TemporalModel::new(self.variables.clone(), self.temporal_factors.clone(), rg?),
            None => TemporalModel::with_bethe_regions(self.variables.clone(), self.temporal_factors.clone()),
        }
    }

    /// Every problem with the document, one line each; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.factors.is_empty() && self.temporal_factors.is_empty() {
            out.push("model has neither static nor temporal factors".to_string());
        }
        let rg = match self.region_graph() {
            Some(Err(e)) => {
                out.push(e.to_string());
                None
            }
            Some(Ok(rg)) => Some(rg),
            None => None,
        };
        if !self.factors.is_empty() {
            let fg = FactorGraph { variables: self.variables.clone(), factors: self.factors.clone() };
            let report = validate_factor_graph(&fg);
            out.extend(report.violations.iter().map(|v| v.to_string()));
            if let (true, Some(rg)) = (report.is_valid(), &rg) {
                if self.temporal_factors.is_empty() {
                    out.extend(validate_counting(rg, &fg).violations.iter().map(|v| v.to_string()));
                }
            }
        }
        if !self.temporal_factors.is_empty() {
            let regions = match rg {
                Some(rg) => rg,
                None => {
                    let scopes: Vec<(usize, Vec<usize>)> =
                        self.temporal_factors.iter().map(|f| (f.id, f.variables())).collect();
                    crate::region::bethe_from_scopes(self.variables.len(), &scopes)
                }
            };
            let report = validate_temporal_model(&self.variables, &self.temporal_factors, &regions);
            out.extend(report.violations.iter().map(|v| v.to_string()));
        }
        out
    }
}

/// Regions of a graph in file form.
pub fn region_specs(rg: &RegionGraph) -> Vec<RegionSpec> {
    rg.regions()
        .iter()
        .map(|r| RegionSpec {
            id: r.id,
            variables: r.variables.clone(),
            factors: r.factors.clone(),
            parents: rg.parents(r.id).to_vec(),
        })
        .collect()
}

/// Floats as 17 significant digits in exponent form, so a parsed value
/// prints back identically.
pub fn canonical_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Compact JSON with sorted keys and canonical floats. Integers stay
/// integers; non-finite floats become `null`.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                match n.as_f64() {
                    Some(f) if f.is_finite() => out.push_str(&canonical_float(f)),
                    _ => out.push_str("null"),
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (k, key) in keys.into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
    }
}

/// Writes any serializable value as canonical JSON plus a newline.
pub fn write_canonical_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, canonical_json(&serde_json::to_value(value)?) + "\n")?;
    Ok(())
}

/// A CSV document built in memory: header row, comma separated, LF endings.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { text: header.join(",") + "\n", columns: header.len() }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let fields: Vec<String> = fields.into_iter().map(|f| f.as_ref().to_string()).collect();
        assert_eq!(fields.len(), self.columns, "CSV row width must match the header");
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}

/// Shortest decimal that parses back to the same float.
pub fn csv_float(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v}").expect("writing to a String");
    s
}

/// `csv_float` or an empty field.
pub fn csv_opt(v: Option<f64>) -> String {
    v.map(csv_float).unwrap_or_default()
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn from_mask(width: usize, height: usize, mask: &[bool]) -> Self {
        GrayImage { width, height, pixels: mask.iter().map(|&m| if m { 255 } else { 0 }).collect() }
    }

    /// Binary "P5" PGM with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn parse_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::Format(format!("expected a binary PGM (P5), found '{}'", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field '{s}'")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PGM is supported, maxval is {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let data = bytes.get(pos + 1..).unwrap_or(&[]);
        if data.len() != width * height {
            return Err(Error::Format(format!("PGM raster has {} bytes, expected {}", data.len(), width * height)));
        }
        Ok(GrayImage { width, height, pixels: data.to_vec() })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        Self::parse_pgm(&fs::read(path)?)
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn intensities(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// Magic bytes of a raw frame stack.
pub const FRAMES_MAGIC: [u8; 4] = *b"DBPF";

/// A stack of 8-bit frames: 16-byte header (magic, then width, height and
/// frame count as little-endian u32) followed by the rasters in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<u8>>,
}

impl FrameStack {
    /// Quantizes `[0, 1]` intensities to bytes.
    pub fn from_intensities(width: usize, height: usize, frames: &[Vec<f64>]) -> Self {
        let frames = frames
            .iter()
            .map(|f| f.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect())
            .collect();
        FrameStack { width, height, frames }
    }

    pub fn intensities(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.iter().map(|&p| p as f64 / 255.0).collect()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = FRAMES_MAGIC.to_vec();
        for v in [self.width, self.height, self.frames.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for f in &self.frames {
            out.extend_from_slice(f);
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || bytes[..4] != FRAMES_MAGIC {
            return Err(Error::Format("not a frame stack: bad magic or short header".into()));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("four bytes")) as usize;
        let (width, height, count) = (word(0), word(1), word(2));
        let size = width * height;
        if bytes.len() - 16 != size * count {
            return Err(Error::Format(format!(
                "frame stack holds {} raster bytes, header promises {}",
                bytes.len() - 16,
                size * count
            )));
        }
        let frames = bytes[16..].chunks(size.max(1)).take(count).map(|c| c.to_vec()).collect();
        Ok(FrameStack { width, height, frames })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"{
      "variables": [{"id": 0, "cardinality": 2}, {"id": 1, "cardinality": 2}, {"id": 2, "cardinality": 2}],
      "factors": [
        {"id": 0, "scope": [0, 1], "values": [1, 1, 1, 1]},
        {"id": 1, "scope": [1, 2], "values": [1.0, 1.0, 1.0, 1.0]}
      ]
    }"#;

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let m = ModelFile::parse(CHAIN).unwrap();
        let once = m.to_canonical_json();
        let twice = ModelFile::parse(&once).unwrap().to_canonical_json();
        assert_eq!(once, twice);
        assert!(once.starts_with(r#"{"factors":[{"id":0,"scope":[0,1],"values":[1.0000000000000000e0,"#));
        let m = ModelFile::parse(r#"{"variables":[{"id":0,"cardinality":2}],"factors":[{"id":0,"scope":[0],"values":[0.1,0.30000000000000004]}]}"#).unwrap();
        let back = ModelFile::parse(&m.to_canonical_json()).unwrap();
        assert_eq!(back.factors[0].values, vec![0.1, 0.30000000000000004]);
    }

    #[test]
    fn canonical_json_sorts_and_keeps_integers() {
        let v: Value = serde_json::from_str(r#"{"b": 2, "a": [1.5, -3, "x"], "c": {"z": null, "y": true}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":[1.5000000000000000e0,-3,"x"],"b":2,"c":{"y":true,"z":null}}"#);
    }

    #[test]
    fn problems_are_reported() {
        assert!(ModelFile::parse(CHAIN).unwrap().problems().is_empty());
        let bad = CHAIN.replace("[1, 2], \"values\": [1.0, 1.0, 1.0, 1.0]", "[2, 1], \"values\": [1.0, -1.0, 1.0, 1.0]");
        let problems = ModelFile::parse(&bad).unwrap().problems();
        assert!(problems.len() >= 2, "{problems:?}");
        assert!(ModelFile::parse(r#"{"variables": [], "bogus": 1}"#).is_err());
    }

    #[test]
    fn temporal_round_trip_keeps_regions() {
        let tm = crate::temporal::fixtures::flip_spin(0.3);
        let file = ModelFile::from_temporal(&tm);
        let back = ModelFile::parse(&file.to_canonical_json()).unwrap();
        assert_eq!(back, file);
        let rebuilt = back.temporal_model().unwrap();
        assert_eq!(rebuilt.regions.counting_numbers(), tm.regions.counting_numbers());
        assert!(back.factor_graph().is_err());
    }

    #[test]
    fn csv_layout() {
        let mut csv = Csv::new(&["t", "value", "maybe"]);
        csv.row([csv_float(0.0), csv_float(0.1), csv_opt(None)]);
        csv.row(["1".to_string(), csv_float(1e-7), csv_opt(Some(2.5))]);
        assert_eq!(csv.as_str(), "t,value,maybe\n0,0.1,\n1,0.0000001,2.5\n");
        assert_eq!("0.0000001".parse::<f64>().unwrap(), 1e-7);
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let img = GrayImage::from_mask(3, 2, &[true, false, false, true, true, false]);
        let bytes = img.to_pgm();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(GrayImage::parse_pgm(&bytes).unwrap(), img);
        let mut commented = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(&img.pixels);
        assert_eq!(GrayImage::parse_pgm(&commented).unwrap(), img);
        assert!(GrayImage::parse_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::parse_pgm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn frame_stack_round_trip() {
        let frames = vec![vec![0.0, 1.0 / 7.0, 1.0, 0.5], vec![0.25; 4]];
        let stack = FrameStack::from_intensities(2, 2, &frames);
        let bytes = stack.to_bytes();
        assert_eq!(bytes.len(), 16 + 8);
        assert_eq!(&bytes[..4], b"DBPF");
        assert_eq!(FrameStack::parse(&bytes).unwrap(), stack);
        assert!(FrameStack::parse(&bytes[..20]).is_err());
        for (a, b) in stack.intensities()[0].iter().zip(&frames[0]) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
