use std::fmt::Write as _;
use std::str::FromStr;

use crate::compensation::CompensationActivation;
use crate::mainstream::UpdatePath;

use super::HarnessError;

/// Everything one experiment depends on. Parsed from a flat `key = value`
/// file; `#` starts a comment and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub num_classes: usize,
    pub classes_per_phase: usize,
    /// Explicit class groups per phase. When set it overrides
    /// `classes_per_phase`; a class may reappear in a later phase.
    pub phase_classes: Option<Vec<Vec<usize>>>,
    pub nodes_per_class: usize,
    pub train_fraction: f64,
    pub d_v: usize,
    pub d_t: usize,
    pub noise: f64,
    pub class_separation: f64,
    pub class_spread: f64,
    pub p_in: f64,
    pub p_out: f64,
    pub periodic_amplitude: f64,
    pub periodic_freq_min: f64,
    pub periodic_freq_max: f64,
    pub seed: u64,

    pub gamma: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon: f64,
    pub ot_max_outer: usize,
    pub ot_max_sinkhorn: usize,

    pub gnn_layers: usize,
    pub gnn_hidden: usize,
    pub gnn_epochs: usize,
    pub gnn_lr: f64,

    pub fan_layers: usize,
    pub fan_width: usize,
    pub p_ratio: f64,
    pub fan_epochs: usize,
    pub fan_lr: f64,

    pub compensation: bool,
    pub comp_channels: usize,
    pub comp_width: usize,
    pub comp_activation: CompensationActivation,
    pub comp_epochs: usize,
    pub comp_lr: f64,

    pub baseline_epochs: usize,
    pub baseline_lr: f64,
    pub update_path: UpdatePath,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            num_classes: 10,
            classes_per_phase: 2,
            phase_classes: None,
            nodes_per_class: 50,
            train_fraction: 0.6,
            d_v: 12,
            d_t: 16,
            noise: 0.1,
            class_separation: 2.0,
            class_spread: 1.0,
            p_in: 0.2,
            p_out: 0.01,
            periodic_amplitude: 1.0,
            periodic_freq_min: 1.0,
            periodic_freq_max: 4.0,
            seed: 0,
            gamma: 1.0,
            beta: 1.0,
            lambda1: 0.5,
            lambda2: 0.6,
            epsilon: 0.05,
            ot_max_outer: 20,
            ot_max_sinkhorn: 500,
            gnn_layers: 2,
            gnn_hidden: 32,
            gnn_epochs: 100,
            gnn_lr: 0.1,
            fan_layers: 3,
            fan_width: 64,
            p_ratio: 0.25,
            fan_epochs: 200,
            fan_lr: 1e-2,
            compensation: true,
            comp_channels: 4,
            comp_width: 256,
            comp_activation: CompensationActivation::Tanh,
            comp_epochs: 30,
            comp_lr: 0.05,
            baseline_epochs: 200,
            baseline_lr: 0.5,
            update_path: UpdatePath::Block,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected on/off, got {value:?}"))),
    }
}

/// `"0 1; 2 3"` or `"0,1;2,3"`.
fn parse_groups(value: &str) -> Result<Vec<Vec<usize>>, HarnessError> {
    value
        .split(';')
        .map(|g| {
            g.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| parse_num::<usize>("phase_classes", t))
                .collect()
        })
        .collect()
}

impl ProtocolConfig {
    /// Parses a config file. `seed` must be present.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ProtocolConfig::default();
        let mut seen_seed = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "num_classes" => cfg.num_classes = parse_num(key, value)?,
                "classes_per_phase" => cfg.classes_per_phase = parse_num(key, value)?,
                "phase_classes" => cfg.phase_classes = Some(parse_groups(value)?),
                "nodes_per_class" => cfg.nodes_per_class = parse_num(key, value)?,
                "train_fraction" => cfg.train_fraction = parse_num(key, value)?,
                "d_v" => cfg.d_v = parse_num(key, value)?,
                "d_t" => cfg.d_t = parse_num(key, value)?,
                "noise" => cfg.noise = parse_num(key, value)?,
                "class_separation" => cfg.class_separation = parse_num(key, value)?,
                "class_spread" => cfg.class_spread = parse_num(key, value)?,
                "p_in" => cfg.p_in = parse_num(key, value)?,
                "p_out" => cfg.p_out = parse_num(key, value)?,
                "periodic_amplitude" => cfg.periodic_amplitude = parse_num(key, value)?,
                "periodic_freq_min" => cfg.periodic_freq_min = parse_num(key, value)?,
                "periodic_freq_max" => cfg.periodic_freq_max = parse_num(key, value)?,
                "seed" => {
                    cfg.seed = parse_num(key, value)?;
                    seen_seed = true;
                }
                "gamma" => cfg.gamma = parse_num(key, value)?,
                "beta" => cfg.beta = parse_num(key, value)?,
                "lambda1" => cfg.lambda1 = parse_num(key, value)?,
                "lambda2" => cfg.lambda2 = parse_num(key, value)?,
                "epsilon" => cfg.epsilon = parse_num(key, value)?,
                "ot_max_outer" => cfg.ot_max_outer = parse_num(key, value)?,
                "ot_max_sinkhorn" => cfg.ot_max_sinkhorn = parse_num(key, value)?,
                "gnn_layers" => cfg.gnn_layers = parse_num(key, value)?,
                "gnn_hidden" => cfg.gnn_hidden = parse_num(key, value)?,
                "gnn_epochs" => cfg.gnn_epochs = parse_num(key, value)?,
                "gnn_lr" => cfg.gnn_lr = parse_num(key, value)?,
                "fan_layers" => cfg.fan_layers = parse_num(key, value)?,
                "fan_width" => cfg.fan_width = parse_num(key, value)?,
                "p_ratio" => cfg.p_ratio = parse_num(key, value)?,
                "fan_epochs" => cfg.fan_epochs = parse_num(key, value)?,
                "fan_lr" => cfg.fan_lr = parse_num(key, value)?,
                "compensation" => cfg.compensation = parse_bool(key, value)?,
                "comp_channels" => cfg.comp_channels = parse_num(key, value)?,
                "comp_width" => cfg.comp_width = parse_num(key, value)?,
                "comp_activation" => {
                    cfg.comp_activation = match value {
                        "tanh" => CompensationActivation::Tanh,
                        "mish" => CompensationActivation::Mish,
                        _ => return Err(HarnessError::Config(format!("comp_activation: expected tanh or mish, got {value:?}"))),
                    }
                }
                "comp_epochs" => cfg.comp_epochs = parse_num(key, value)?,
                "comp_lr" => cfg.comp_lr = parse_num(key, value)?,
                "baseline_epochs" => cfg.baseline_epochs = parse_num(key, value)?,
                "baseline_lr" => cfg.baseline_lr = parse_num(key, value)?,
                "update_path" => {
                    cfg.update_path = match value {
                        "block" => UpdatePath::Block,
                        "per_sample" => UpdatePath::PerSample,
                        _ => return Err(HarnessError::Config(format!("update_path: expected block or per_sample, got {value:?}"))),
                    }
                }
                _ => return Err(HarnessError::Config(format!("line {}: unknown key {key:?}", lineno + 1))),
            }
        }
        if !seen_seed {
            return Err(HarnessError::Config("seed is mandatory".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Class groups in phase order.
    pub fn phases(&self) -> Vec<Vec<usize>> {
        match &self.phase_classes {
            Some(groups) => groups.clone(),
            None => (0..self.num_classes / self.classes_per_phase.max(1))
                .map(|k| (k * self.classes_per_phase..(k + 1) * self.classes_per_phase).collect())
                .collect(),
        }
    }

    /// Nodes per class in the (train, test) graphs.
    pub fn split_sizes(&self) -> (usize, usize) {
        let train = (self.nodes_per_class as f64 * self.train_fraction).round() as usize;
        (train, self.nodes_per_class - train)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        match &self.phase_classes {
            None => {
                if self.classes_per_phase == 0 || self.num_classes % self.classes_per_phase != 0 {
                    return bad(format!(
                        "num_classes {} is not divisible into phases of {}",
                        self.num_classes, self.classes_per_phase
                    ));
                }
            }
            Some(groups) => {
                if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
                    return bad("phase_classes must list at least one class per phase".into());
                }
                // class ids must be introduced in increasing order 0, 1, 2, ...
                let mut next = 0;
                for g in groups {
                    let mut sorted = g.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != g.len() {
                        return bad("phase_classes repeats a class within one phase".into());
                    }
                    for &c in g {
                        if c >= self.num_classes {
                            return bad(format!("class {c} out of range for num_classes {}", self.num_classes));
                        }
                        if c == next {
                            next += 1;
                        } else if c > next {
                            return bad(format!("class {c} introduced before class {next}"));
                        }
                    }
                }
            }
        }
        let (train, test) = self.split_sizes();
        if train == 0 || test == 0 {
            return bad("train_fraction leaves an empty train or test split".into());
        }
        for (name, v) in [("p_in", self.p_in), ("p_out", self.p_out), ("train_fraction", self.train_fraction), ("lambda2", self.lambda2)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if !(self.epsilon > 0.0) || self.lambda1 < 0.0 {
            return bad("epsilon must be positive and lambda1 non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.p_ratio) {
            return bad(format!("p_ratio must lie in [0, 1], got {}", self.p_ratio));
        }
        if self.d_t < 2 || self.d_v == 0 {
            return bad("d_t must be at least 2 (time and periodic coordinates) and d_v positive".into());
        }
        if self.gnn_layers == 0 || self.gnn_hidden == 0 || self.fan_layers == 0 || self.fan_width == 0 {
            return bad("layer counts and widths must be positive".into());
        }
        if self.comp_channels == 0 || self.comp_width == 0 {
            return bad("compensation channels and width must be positive".into());
        }
        if self.noise < 0.0 || self.class_spread < 0.0 || self.periodic_freq_min > self.periodic_freq_max {
            return bad("noise and spread must be non-negative and the frequency range ordered".into());
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let act = match self.comp_activation {
            CompensationActivation::Tanh => "tanh",
            CompensationActivation::Mish => "mish",
        };
        let path = match self.update_path {
            UpdatePath::Block => "block",
            UpdatePath::PerSample => "per_sample",
        };
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "classes_per_phase = {}", self.classes_per_phase);
        if let Some(groups) = &self.phase_classes {
            let joined: Vec<String> =
                groups.iter().map(|g| g.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")).collect();
            let _ = writeln!(s, "phase_classes = {}", joined.join("; "));
        }
        for (k, v) in [
            ("nodes_per_class", self.nodes_per_class.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("d_v", self.d_v.to_string()),
            ("d_t", self.d_t.to_string()),
            ("noise", self.noise.to_string()),
            ("class_separation", self.class_separation.to_string()),
            ("class_spread", self.class_spread.to_string()),
            ("p_in", self.p_in.to_string()),
            ("p_out", self.p_out.to_string()),
            ("periodic_amplitude", self.periodic_amplitude.to_string()),
            ("periodic_freq_min", self.periodic_freq_min.to_string()),
            ("periodic_freq_max", self.periodic_freq_max.to_string()),
            ("seed", self.seed.to_string()),
            ("gamma", self.gamma.to_string()),
            ("beta", self.beta.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("ot_max_outer", self.ot_max_outer.to_string()),
            ("ot_max_sinkhorn", self.ot_max_sinkhorn.to_string()),
            ("gnn_layers", self.gnn_layers.to_string()),
            ("gnn_hidden", self.gnn_hidden.to_string()),
            ("gnn_epochs", self.gnn_epochs.to_string()),
            ("gnn_lr", self.gnn_lr.to_string()),
            ("fan_layers", self.fan_layers.to_string()),
            ("fan_width", self.fan_width.to_string()),
            ("p_ratio", self.p_ratio.to_string()),
            ("fan_epochs", self.fan_epochs.to_string()),
            ("fan_lr", self.fan_lr.to_string()),
            ("compensation", if self.compensation { "on" } else { "off" }.to_string()),
            ("comp_channels", self.comp_channels.to_string()),
            ("comp_width", self.comp_width.to_string()),
            ("comp_activation", act.to_string()),
            ("comp_epochs", self.comp_epochs.to_string()),
            ("comp_lr", self.comp_lr.to_string()),
            ("baseline_epochs", self.baseline_epochs.to_string()),
            ("baseline_lr", self.baseline_lr.to_string()),
            ("update_path", path.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(ProtocolConfig::parse("num_classes = 4\n"), Err(HarnessError::Config(_))));
        assert_eq!(ProtocolConfig::parse("seed = 3\n").unwrap().seed, 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ProtocolConfig::parse("seed = 1\nlearning_rate = 3\n").is_err());
        assert!(ProtocolConfig::parse("seed = 1\ngamma = abc\n").is_err());
        assert!(ProtocolConfig::parse("seed = 1\nnum_classes = 10\nclasses_per_phase = 3\n").is_err());
        assert!(ProtocolConfig::parse("seed = 1\nbeta = 1.5\n").is_err());
    }

    #[test]
    fn text_roundtrip() {
        let cfg = ProtocolConfig {
            seed: 9,
            phase_classes: Some(vec![vec![0, 1], vec![0, 1], vec![2]]),
            comp_activation: CompensationActivation::Mish,
            compensation: false,
            ..ProtocolConfig::default()
        };
        assert_eq!(ProtocolConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn explicit_groups_must_introduce_classes_in_order() {
        assert!(ProtocolConfig::parse("seed = 1\nphase_classes = 1 0; 2 3\n").is_err());
        assert!(ProtocolConfig::parse("seed = 1\nphase_classes = 0 1; 0 1\n").is_ok());
    }

    #[test]
    fn default_phases() {
        let cfg = ProtocolConfig::default();
        assert_eq!(cfg.phases(), vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]);
        assert_eq!(cfg.split_sizes(), (30, 20));
    }
}
