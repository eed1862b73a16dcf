//! JSON run configuration with defaults and field-path errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::blend::FuseMode;
use crate::color_balance::BalanceConfig;
use crate::color_transfer::{TransferMode, MAX_WINDOW};
use crate::error::{Result, StitchError};
use crate::features::{RansacConfig, DEFAULT_RATIO};
use crate::flow::FlowConfig;
use crate::geometry::{rotation_from_ypr, CameraExtrinsics, CameraIntrinsics};

pub const DEFAULT_MARGIN: f64 = 0.15;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub dir: Option<PathBuf>,
    pub camera: CameraConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub enabled: bool,
    /// Overlap broadening as a fraction of the overlap size.
    pub margin: f64,
    pub ransac: RansacConfig,
    pub ratio: f32,
    /// Re-run refinement every `every` frames; 0 refines only at start.
    pub every: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            enabled: true,
            margin: DEFAULT_MARGIN,
            ransac: RansacConfig::default(),
            ratio: DEFAULT_RATIO,
            every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchConfig {
    pub views: Vec<ViewConfig>,
    pub reference: usize,
    pub balance: BalanceConfig,
    pub flow: FlowConfig,
    pub refine: RefineConfig,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub seed: u64,
    /// Temporal window of the color transfer, 1 to 3 frames.
    pub window: usize,
    pub transfer_mode: TransferMode,
    pub fuse_mode: FuseMode,
    /// Apply the color correction to the whole warped view rather than only
    /// its overlap.
    pub correct_full_view: bool,
    /// Skip dense flow and blend the overlaps by weights alone.
    pub disable_flow: bool,
}

impl StitchConfig {
    /// A config with default processing parameters for the given cameras.
    pub fn with_cameras(cameras: Vec<CameraConfig>, reference: usize) -> Self {
        StitchConfig {
            views: cameras
                .into_iter()
                .map(|camera| ViewConfig { dir: None, camera })
                .collect(),
            reference,
            balance: BalanceConfig::default(),
            flow: FlowConfig::default(),
            refine: RefineConfig::default(),
            threads: 0,
            seed: DEFAULT_SEED,
            window: MAX_WINDOW,
            transfer_mode: TransferMode::default(),
            fuse_mode: FuseMode::default(),
            correct_full_view: true,
            disable_flow: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.views.len()) {
            return Err(StitchError::config(
                "views",
                format!("expected 2 or 3 views, got {}", self.views.len()),
            ));
        }
        if self.reference >= self.views.len() {
            return Err(StitchError::config(
                "reference",
                format!("index {} out of range", self.reference),
            ));
        }
        for (i, v) in self.views.iter().enumerate() {
            let k = &v.camera.intrinsics;
            for (name, val) in [("fx", k.fx), ("fy", k.fy)] {
                if !(val.is_finite() && val > 0.0) {
                    return Err(StitchError::config(
                        format!("views[{i}].camera.{name}"),
                        "must be a positive number",
                    ));
                }
            }
            if !(k.cx.is_finite() && k.cy.is_finite()) {
                return Err(StitchError::config(format!("views[{i}].camera.cx"), "must be finite"));
            }
            if !v.camera.extrinsics.is_rotation() {
                let (e, d) = v.camera.extrinsics.orthonormality();
                return Err(StitchError::config(
                    format!("views[{i}].camera.rotation"),
                    format!("not a rotation (|RR^T - I| = {e:.3e}, det = {d:.6})"),
                ));
            }
        }
        self.balance.validate()?;
        self.flow.validate()?;
        let r = &self.refine;
        if !(0.0..=1.0).contains(&r.margin) {
            return Err(StitchError::config("refine.margin", "must lie in [0, 1]"));
        }
        if r.ransac.iterations == 0 {
            return Err(StitchError::config("refine.ransac_iters", "must be positive"));
        }
        if !(r.ransac.inlier_px.is_finite() && r.ransac.inlier_px > 0.0) {
            return Err(StitchError::config("refine.inlier_px", "must be positive"));
        }
        if !(r.ratio > 0.0 && r.ratio <= 1.0) {
            return Err(StitchError::config("refine.ratio", "must lie in (0, 1]"));
        }
        if !(1..=MAX_WINDOW).contains(&self.window) {
            return Err(StitchError::config("window", format!("must lie in 1..={MAX_WINDOW}")));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        hex::encode(Sha256::digest(&json))
    }

    pub fn resolved_threads(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            self.threads
        }
    }

    /// Schema form accepted by [`parse_config`].
    pub fn to_json(&self) -> Value {
        let views: Vec<Value> = self
            .views
            .iter()
            .map(|v| {
                let k = v.camera.intrinsics;
                let e = v.camera.extrinsics;
                let mut cam = serde_json::json!({
                    "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                    "rotation": e.r.iter().flatten().copied().collect::<Vec<f64>>(),
                    "translation": e.t,
                });
                let mut obj = Map::new();
                if let Some(d) = &v.dir {
                    obj.insert("dir".into(), Value::String(d.to_string_lossy().into_owned()));
                }
                obj.insert("camera".into(), cam.take());
                Value::Object(obj)
            })
            .collect();
        serde_json::json!({
            "views": views,
            "reference": self.reference,
            "balance": {
                "lambda": self.balance.lambda,
                "gamma_dark": self.balance.gamma_dark,
                "gamma_bright": self.balance.gamma_bright,
                "target_black": self.balance.target_black,
                "target_white": self.balance.target_white,
            },
            "flow": {
                "levels": self.flow.levels,
                "iterations": self.flow.iterations,
                "smoothness": self.flow.smoothness,
            },
            "refine": {
                "enabled": self.refine.enabled,
                "margin": self.refine.margin,
                "ransac_iters": self.refine.ransac.iterations,
                "inlier_px": self.refine.ransac.inlier_px,
                "ratio": self.refine.ratio,
                "every": self.refine.every,
            },
            "threads": self.threads,
            "seed": self.seed,
            "window": self.window,
            "transfer_mode": self.transfer_mode,
            "fuse_mode": self.fuse_mode,
            "correct_full_view": self.correct_full_view,
            "disable_flow": self.disable_flow,
        })
    }
}

/// JSON object with its path, tracking which keys were read.
struct Node<'a> {
    path: String,
    map: &'a Map<String, Value>,
    seen: Vec<&'static str>,
}

impl<'a> Node<'a> {
    fn new(path: impl Into<String>, v: &'a Value) -> Result<Self> {
        let path = path.into();
        match v {
            Value::Object(map) => Ok(Node {
                path,
                map,
                seen: Vec::new(),
            }),
            _ => Err(StitchError::config(display_path(&path), "expected an object")),
        }
    }

    fn child(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn require(&mut self, key: &'static str) -> Result<&'a Value> {
        let path = self.child(key);
        self.get(key)
            .ok_or_else(|| StitchError::config(path, "missing required field"))
    }

    fn f64_or(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let path = self.child(key);
        self.get(key).map_or(Ok(default), |v| as_f64(v, &path))
    }

    fn uint_or(&mut self, key: &'static str, default: u64) -> Result<u64> {
        let path = self.child(key);
        self.get(key).map_or(Ok(default), |v| as_u64(v, &path))
    }

    fn bool_or(&mut self, key: &'static str, default: bool) -> Result<bool> {
        let path = self.child(key);
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => Err(StitchError::config(path, "expected true or false")),
        }
    }

    fn object(&mut self, key: &'static str) -> Result<Option<Node<'a>>> {
        let path = self.child(key);
        self.get(key).map(|v| Node::new(path, v)).transpose()
    }

    /// Reject keys that were never read.
    fn finish(self) -> Result<()> {
        for k in self.map.keys() {
            if !self.seen.contains(&k.as_str()) {
                return Err(StitchError::config(self.child(k), "unknown field"));
            }
        }
        Ok(())
    }
}

fn display_path(p: &str) -> &str {
    if p.is_empty() {
        "<root>"
    } else {
        p
    }
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| StitchError::config(path, "expected a number"))
}

fn as_u64(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| StitchError::config(path, "expected a non-negative integer"))
}

fn float_array<const N: usize>(v: &Value, path: &str) -> Result<[f64; N]> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == N)
        .ok_or_else(|| StitchError::config(path, format!("expected an array of {N} numbers")))?;
    let mut out = [0.0; N];
    for (i, x) in arr.iter().enumerate() {
        out[i] = as_f64(x, &format!("{path}[{i}]"))?;
    }
    Ok(out)
}

fn parse_rotation(v: &Value, path: &str) -> Result<[[f64; 3]; 3]> {
    match v {
        Value::Array(_) => {
            let f: [f64; 9] = float_array(v, path)?;
            Ok([[f[0], f[1], f[2]], [f[3], f[4], f[5]], [f[6], f[7], f[8]]])
        }
        Value::Object(_) => {
            let mut n = Node::new(path, v)?;
            let yaw = n.f64_or("yaw", 0.0)?;
            let pitch = n.f64_or("pitch", 0.0)?;
            let roll = n.f64_or("roll", 0.0)?;
            n.finish()?;
            Ok(rotation_from_ypr(yaw, pitch, roll))
        }
        _ => Err(StitchError::config(path, "expected 9 numbers or {yaw, pitch, roll}")),
    }
}

fn parse_camera(mut n: Node<'_>) -> Result<CameraConfig> {
    let num = |n: &mut Node<'_>, key: &'static str| -> Result<f64> {
        let path = n.child(key);
        as_f64(n.require(key)?, &path)
    };
    let fx = num(&mut n, "fx")?;
    let fy = num(&mut n, "fy")?;
    let cx = num(&mut n, "cx")?;
    let cy = num(&mut n, "cy")?;
    let id = CameraExtrinsics::identity();
    let rpath = n.child("rotation");
    let r = n.get("rotation").map_or(Ok(id.r), |v| parse_rotation(v, &rpath))?;
    let tpath = n.child("translation");
    let t = n.get("translation").map_or(Ok(id.t), |v| float_array::<3>(v, &tpath))?;
    n.finish()?;
    Ok(CameraConfig {
        intrinsics: CameraIntrinsics { fx, fy, cx, cy },
        extrinsics: CameraExtrinsics::new(r, t),
    })
}

/// Parse and validate a configuration document, filling defaults.
pub fn parse_config(text: &str) -> Result<StitchConfig> {
    let root: Value = serde_json::from_str(text).map_err(|e| StitchError::config("<root>", e.to_string()))?;
    let mut n = Node::new("", &root)?;

    let views_v = n.require("views")?;
    let arr = views_v
        .as_array()
        .ok_or_else(|| StitchError::config("views", "expected an array"))?;
    let mut cameras = Vec::with_capacity(arr.len());
    let mut dirs = Vec::with_capacity(arr.len());
    for (i, v) in arr.iter().enumerate() {
        let mut vn = Node::new(format!("views[{i}]"), v)?;
        let dir = match vn.get("dir") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(StitchError::config(format!("views[{i}].dir"), "expected a string")),
        };
        let cam_path = vn.child("camera");
        let cam = Node::new(cam_path, vn.require("camera")?)?;
        cameras.push(parse_camera(cam)?);
        dirs.push(dir);
        vn.finish()?;
    }
    let reference = n.uint_or("reference", (arr.len() / 2) as u64)? as usize;
    let mut cfg = StitchConfig::with_cameras(cameras, reference);
    for (v, d) in cfg.views.iter_mut().zip(dirs) {
        v.dir = d;
    }

    if let Some(mut b) = n.object("balance")? {
        let d = BalanceConfig::default();
        cfg.balance = BalanceConfig {
            lambda: b.f64_or("lambda", d.lambda)?,
            gamma_dark: b.f64_or("gamma_dark", d.gamma_dark)?,
            gamma_bright: b.f64_or("gamma_bright", d.gamma_bright)?,
            target_black: b.f64_or("target_black", d.target_black)?,
            target_white: b.f64_or("target_white", d.target_white)?,
        };
        b.finish()?;
    }
    if let Some(mut f) = n.object("flow")? {
        let d = FlowConfig::default();
        cfg.flow = FlowConfig {
            levels: f.uint_or("levels", d.levels as u64)? as usize,
            iterations: f.uint_or("iterations", d.iterations as u64)? as usize,
            smoothness: f.f64_or("smoothness", d.smoothness)?,
        };
        f.finish()?;
    }
    if let Some(mut r) = n.object("refine")? {
        let d = RefineConfig::default();
        cfg.refine = RefineConfig {
            enabled: r.bool_or("enabled", d.enabled)?,
            margin: r.f64_or("margin", d.margin)?,
            ransac: RansacConfig {
                iterations: r.uint_or("ransac_iters", d.ransac.iterations as u64)? as usize,
                inlier_px: r.f64_or("inlier_px", d.ransac.inlier_px)?,
                ..d.ransac
            },
            ratio: r.f64_or("ratio", d.ratio as f64)? as f32,
            every: r.uint_or("every", d.every)?,
        };
        r.finish()?;
    }
    cfg.threads = n.uint_or("threads", 0)? as usize;
    cfg.seed = n.uint_or("seed", DEFAULT_SEED)?;
    cfg.window = n.uint_or("window", MAX_WINDOW as u64)? as usize;
    cfg.transfer_mode = match n.get("transfer_mode") {
        None => TransferMode::default(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| StitchError::config("transfer_mode", "expected \"lut_then_matrix\" or \"matrix_only\""))?,
    };
    cfg.fuse_mode = match n.get("fuse_mode") {
        None => FuseMode::default(),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|_| StitchError::config("fuse_mode", "expected \"literal\" or \"cross\""))?,
    };
    cfg.correct_full_view = n.bool_or("correct_full_view", true)?;
    cfg.disable_flow = n.bool_or("disable_flow", false)?;
    n.finish()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<StitchConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| StitchError::config(path.display().to_string(), e.to_string()))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "views": [
            { "camera": { "fx": 500, "fy": 500, "cx": 160, "cy": 120 } },
            { "camera": { "fx": 500, "fy": 500, "cx": 160, "cy": 120,
                          "rotation": [1,0,0, 0,1,0, 0,0,1], "translation": [0,0,1] } }
        ]
    }"#;

    fn path_of(e: StitchError) -> String {
        match e {
            StitchError::Config { path, .. } => path,
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.views.len(), 2);
        assert_eq!(c.reference, 1);
        assert_eq!(c.balance.lambda, 0.05);
        assert_eq!((c.balance.gamma_dark, c.balance.gamma_bright), (1.5, 1.5));
        assert_eq!((c.flow.levels, c.flow.iterations, c.flow.smoothness), (4, 50, 15.0));
        assert_eq!(c.refine.margin, 0.15);
        assert_eq!(c.refine.ratio, 0.8);
        assert_eq!((c.refine.ransac.iterations, c.refine.ransac.inlier_px), (500, 2.0));
        assert_eq!(c.window, 3);
        assert!(c.refine.enabled && c.correct_full_view);
        assert_eq!(c.views[0].camera.extrinsics, CameraExtrinsics::identity());
    }

    #[test]
    fn defaults_agree_with_module_constants() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.balance, BalanceConfig::default());
        assert_eq!(c.flow, FlowConfig::default());
        assert_eq!(c.refine.ransac, RansacConfig::default());
        assert_eq!(c.balance.lambda, crate::color_balance::DEFAULT_LAMBDA);
        assert_eq!(c.balance.gamma_dark, crate::color_balance::DEFAULT_GAMMA);
    }

    #[test]
    fn missing_focal_names_its_path() {
        let text = MINIMAL.replacen(r#""fx": 500, "#, "", 1);
        assert_eq!(path_of(parse_config(&text).unwrap_err()), "views[0].camera.fx");
    }

    #[test]
    fn schema_violations_name_their_paths() {
        let cases = [
            (
                MINIMAL.replace(
                    r#""fy": 500, "cx": 160, "cy": 120 } },"#,
                    r#""fy": "a", "cx": 160, "cy": 120 } },"#,
                ),
                "views[0].camera.fy",
            ),
            (MINIMAL.replace("[0,0,1] }", "[0,0] }"), "views[1].camera.translation"),
            (
                MINIMAL.replace("[1,0,0, 0,1,0", "[1,0,0, 0,2,0"),
                "views[1].camera.rotation",
            ),
            (MINIMAL.replace("\"views\"", "\"extra\": 1, \"views\""), "extra"),
            (
                MINIMAL.replacen('{', r#"{ "balance": { "lambda": 0.7 }, "#, 1),
                "balance.lambda",
            ),
            (MINIMAL.replacen('{', r#"{ "flow": { "level": 3 }, "#, 1), "flow.level"),
            (MINIMAL.replacen('{', r#"{ "reference": 5, "#, 1), "reference"),
            (MINIMAL.replacen('{', r#"{ "window": 4, "#, 1), "window"),
        ];
        for (text, want) in cases {
            assert_eq!(path_of(parse_config(&text).unwrap_err()), want, "{text}");
        }
        let one_view = r#"{ "views": [ { "camera": { "fx": 1, "fy": 1, "cx": 0, "cy": 0 } } ] }"#;
        assert_eq!(path_of(parse_config(one_view).unwrap_err()), "views");
        assert_eq!(path_of(parse_config("not json").unwrap_err()), "<root>");
    }

    #[test]
    fn rotation_accepts_angles() {
        let text = MINIMAL.replace("[1,0,0, 0,1,0, 0,0,1]", r#"{ "yaw": 90 }"#);
        let r = parse_config(&text).unwrap().views[1].camera.extrinsics.r;
        let want = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for k in 0..3 {
                assert!((r[i][k] - want[i][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_file_parses_to_known_values() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sample_3view.json");
        let c = load_config(&path).unwrap();
        assert_eq!(c.views.len(), 3);
        assert_eq!(c.reference, 1);
        assert_eq!(c.views[0].dir.as_deref(), Some(Path::new("frames/left")));
        let k = c.views[2].camera.intrinsics;
        assert_eq!((k.fx, k.fy, k.cx, k.cy), (640.0, 640.0, 320.0, 240.0));
        let r = c.views[0].camera.extrinsics.r;
        let s = 20f64.to_radians().sin();
        assert!((r[0][2] - s).abs() < 1e-12 && (r[2][0] + s).abs() < 1e-12);
        assert_eq!(c.balance.lambda, 0.04);
        assert_eq!(c.flow.levels, 5);
        assert_eq!(c.refine.margin, 0.2);
        assert_eq!((c.threads, c.seed), (4, 7));
    }

    #[test]
    fn json_form_round_trips_and_digest_is_stable() {
        let c = parse_config(MINIMAL).unwrap();
        let again = parse_config(&c.to_json().to_string()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.digest(), c.digest());
        assert_eq!(c.digest().len(), 64);
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.digest(), c.digest());
    }
}
