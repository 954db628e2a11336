//! JSON configuration files.
//!
//! Parse failures report the byte offset, line and column of the problem;
//! validation failures name the offending field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::contact::{PusherContact, SupportModel};
use crate::error::ConfigError;
use crate::nlp::{AssemblyOptions, PushProblem, Weights};
use crate::se2::{ConvexRegion, PlanarPose, PolygonObject};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectFile {
    pub vertices: Vec<[f64; 2]>,
    pub mass_kg: f64,
    #[serde(default)]
    pub regions: Vec<ConvexRegion>,
    #[serde(default)]
    pub blend_breaks: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    200.0
}

impl ObjectFile {
    pub fn build(self) -> Result<PolygonObject, ConfigError> {
        PolygonObject::new(self.vertices, self.mass_kg, self.regions, self.blend_breaks, self.alpha)
            .map_err(|e| ConfigError::field("object", e.to_string()))
    }
}

/// `T` is either a horizon in seconds or the string `"free"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HorizonSpec {
    Seconds(f64),
    Keyword(FreeKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreeKeyword {
    Free,
}

fn default_segments() -> usize {
    3
}

fn default_horizon() -> HorizonSpec {
    HorizonSpec::Seconds(2.0)
}

fn default_epsilon() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    /// Paths are relative to the problem file.
    pub object: PathBuf,
    pub pushers: Vec<PathBuf>,
    pub support: PathBuf,
    pub start: [f64; 3],
    pub goal: [f64; 3],
    #[serde(rename = "N", default = "default_segments")]
    pub segments: usize,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: HorizonSpec,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub options: Option<AssemblyOptions>,
    #[serde(default)]
    pub mu_p: Option<f64>,
}

/// Parses JSON, mapping syntax and schema errors to [`ConfigError::Parse`].
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        ConfigError::Parse {
            path: path.to_string(),
            offset: byte_offset(text, line, column),
            line,
            column,
            message: e.to_string(),
        }
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_json(&text, &path.display().to_string())
}

pub fn load_object(path: &Path) -> Result<PolygonObject, ConfigError> {
    read_json::<ObjectFile>(path)?.build()
}

pub fn load_pusher(path: &Path) -> Result<PusherContact, ConfigError> {
    read_json(path)
}

pub fn load_support(path: &Path) -> Result<SupportModel, ConfigError> {
    read_json(path)
}

fn pose(field: &str, v: [f64; 3]) -> Result<PlanarPose, ConfigError> {
    PlanarPose::try_new(v[0], v[1], v[2]).map_err(|e| ConfigError::field(field, e.to_string()))
}

impl ProblemFile {
    /// Resolves referenced files relative to `base` and validates the instance.
    pub fn build(&self, base: &Path) -> Result<(PushProblem, AssemblyOptions), ConfigError> {
        let object = load_object(&base.join(&self.object))?;
        let mut pushers = self
            .pushers
            .iter()
            .map(|p| load_pusher(&base.join(p)))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(mu) = self.mu_p {
            pushers = pushers
                .iter()
                .map(|p| p.with_friction(mu))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::field("mu_p", e.to_string()))?;
        }
        let support = load_support(&base.join(&self.support))?;
        let mut problem = PushProblem::new(
            object,
            pushers,
            support,
            pose("start", self.start)?,
            pose("goal", self.goal)?,
        );
        problem.segments = self.segments;
        problem.weights = self.weights;
        problem.epsilon = self.epsilon;
        let mut options = self.options.unwrap_or_default();
        match self.horizon {
            HorizonSpec::Seconds(t) => problem.horizon = t,
            HorizonSpec::Keyword(FreeKeyword::Free) => options.free_time = true,
        }
        problem.validate()?;
        Ok((problem, options))
    }
}

pub fn load_problem(path: &Path) -> Result<(PushProblem, AssemblyOptions), ConfigError> {
    let file: ProblemFile = read_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    file.build(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_reports_byte_offset() {
        let text = "{\n  \"mu_p\": 0.5,\n  \"contacts\": [}\n";
        let err = parse_json::<PusherContact>(text, "p.json").unwrap_err();
        match err {
            ConfigError::Parse { offset, line, .. } => {
                assert_eq!(line, 3);
                assert_eq!(&text[offset..offset + 1], "}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_support_names_the_problem() {
        let err = parse_json::<SupportModel>(r#"{"mu_s": 0.0, "F_N": 1, "r": 0.01, "e": 0.5}"#, "s.json")
            .unwrap_err();
        assert!(err.to_string().contains("mu_s"), "{err}");
    }

    #[test]
    fn horizon_keyword() {
        let h: HorizonSpec = serde_json::from_str("\"free\"").unwrap();
        assert_eq!(h, HorizonSpec::Keyword(FreeKeyword::Free));
        let h: HorizonSpec = serde_json::from_str("2.5").unwrap();
        assert_eq!(h, HorizonSpec::Seconds(2.5));
    }

    #[test]
    fn shipped_problems_load() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
        for name in ["square", "t_shape", "l_shape"] {
            let (p, o) = load_problem(&root.join(name).join("problem.json")).unwrap();
            assert_eq!(p.num_pushers(), 4);
            assert!(o.direct_transcription);
        }
    }
}
