//! Benchmark environments: a media-streaming queue and four gridworlds.
//!
//! Gridworld maps are plain text, one character per cell:
//!
//! | glyph | cell |
//! |---|---|
//! | `S` | start |
//! | `.` | empty |
//! | `#` | wall |
//! | `B` | bomb or lava (unsafe, absorbing) |
//! | `Y` `U` `P` | yellow, blue, pink zone (+1, absorbing) |
//! | `T` | terminal yellow (+1, absorbing) |
//! | `G` `R` | green and red zone: stay, or jump to a bordering empty cell |
//!
//! A map may hold several equally sized blocks separated by blank lines, one
//! per zone configuration. Blocks may only differ in their `Y`/`U`/`P` cells.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Label, Mdp, SparseDistribution, StateId};

/// Per-environment experiment parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    /// Slip probability; `None` for the non-grid environment.
    pub random_action_probability: Option<f64>,
    pub episode_length: usize,
    pub total_timesteps: usize,
    pub safety_bound: f64,
    pub action_space_size: usize,
    pub state_space_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinEnv {
    MediaStreaming,
    ColourBombV1,
    ColourBombV2,
    BridgeV1,
    BridgeV2,
}

impl BuiltinEnv {
    pub const ALL: [BuiltinEnv; 5] = [
        BuiltinEnv::MediaStreaming,
        BuiltinEnv::ColourBombV1,
        BuiltinEnv::ColourBombV2,
        BuiltinEnv::BridgeV1,
        BuiltinEnv::BridgeV2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinEnv::MediaStreaming => "media-streaming",
            BuiltinEnv::ColourBombV1 => "colour-bomb-v1",
            BuiltinEnv::ColourBombV2 => "colour-bomb-v2",
            BuiltinEnv::BridgeV1 => "bridge-v1",
            BuiltinEnv::BridgeV2 => "bridge-v2",
        }
    }

    pub fn params(self) -> EnvParams {
        let grid = |rho, len, steps, bound, states| EnvParams {
            random_action_probability: Some(rho),
            episode_length: len,
            total_timesteps: steps,
            safety_bound: bound,
            action_space_size: 4,
            state_space_size: states,
        };
        match self {
            BuiltinEnv::MediaStreaming => EnvParams {
                random_action_probability: None,
                episode_length: 40,
                total_timesteps: 25_000,
                safety_bound: 0.001,
                action_space_size: 2,
                state_space_size: 462,
            },
            BuiltinEnv::ColourBombV1 => grid(0.1, 100, 25_000, 0.05, 81),
            BuiltinEnv::ColourBombV2 => grid(0.1, 250, 100_000, 0.05, 900),
            BuiltinEnv::BridgeV1 => grid(0.04, 600, 200_000, 0.01, 400),
            BuiltinEnv::BridgeV2 => grid(0.04, 600, 200_000, 0.01, 400),
        }
    }

    pub fn layout_text(self) -> Option<&'static str> {
        match self {
            BuiltinEnv::MediaStreaming => None,
            BuiltinEnv::ColourBombV1 => Some(include_str!("../layouts/colour-bomb-v1.txt")),
            BuiltinEnv::ColourBombV2 => Some(include_str!("../layouts/colour-bomb-v2.txt")),
            BuiltinEnv::BridgeV1 => Some(include_str!("../layouts/bridge-v1.txt")),
            BuiltinEnv::BridgeV2 => Some(include_str!("../layouts/bridge-v2.txt")),
        }
    }

    fn variant(self) -> Option<GridVariant> {
        match self {
            BuiltinEnv::MediaStreaming => None,
            BuiltinEnv::ColourBombV1 => Some(GridVariant::ColourBombV1),
            BuiltinEnv::ColourBombV2 => Some(GridVariant::ColourBombV2),
            BuiltinEnv::BridgeV1 => Some(GridVariant::BridgeV1),
            BuiltinEnv::BridgeV2 => Some(GridVariant::BridgeV2),
        }
    }

    pub fn build(self) -> Result<Mdp> {
        let params = self.params();
        match (self.variant(), self.layout_text()) {
            (Some(variant), Some(text)) => build_gridworld(&parse_grid_map(text)?, &params, variant),
            _ => Ok(build_media_streaming(&params)),
        }
    }
}

impl fmt::Display for BuiltinEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinEnv {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinEnv::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown environment {s:?}")))
    }
}

pub const BUFFER_CAPACITY: usize = 20;
pub const ARRIVAL_FAST: f64 = 0.9;
pub const ARRIVAL_SLOW: f64 = 0.1;
pub const DEPARTURE: f64 = 0.7;

/// Index of media-streaming state `(buffer, cost)`.
pub fn media_state(buffer: usize, cost: usize) -> StateId {
    StateId(cost * (BUFFER_CAPACITY + 1) + buffer)
}

/// Streaming queue: each step one packet arrives with the chosen rate
/// (`fast` or `slow`) and one leaves w.p. 0.7, independently. Every `fast`
/// step raises a cost counter; exceeding `⌊episode_length/2⌋` is unsafe.
/// An empty buffer yields reward −1.
pub fn build_media_streaming(params: &EnvParams) -> Mdp {
    let limit = params.episode_length / 2;
    let costs = limit + 2;
    let width = BUFFER_CAPACITY + 1;
    let n = width * costs;
    let mut labels = vec![Label::Safe; n];
    let mut rewards = vec![0.0; n];
    let mut actions = vec![Vec::new(); n];
    for c in 0..costs {
        for b in 0..width {
            let s = media_state(b, c).0;
            if b == 0 {
                rewards[s] = -1.0;
            }
            if c > limit {
                labels[s] = Label::Unsafe;
                actions[s].push(Action::new("stay", SparseDistribution::dirac(StateId(s))));
                continue;
            }
            for (name, rate, next_c) in [("fast", ARRIVAL_FAST, (c + 1).min(limit + 1)), ("slow", ARRIVAL_SLOW, c)] {
                let mut acc: BTreeMap<StateId, f64> = BTreeMap::new();
                for (arrive, pa) in [(1i64, rate), (0, 1.0 - rate)] {
                    for (leave, pd) in [(1i64, DEPARTURE), (0, 1.0 - DEPARTURE)] {
                        let nb = (b as i64 + arrive - leave).clamp(0, BUFFER_CAPACITY as i64) as usize;
                        *acc.entry(media_state(nb, next_c)).or_insert(0.0) += pa * pd;
                    }
                }
                let dist = SparseDistribution::new(acc.into_iter().collect()).expect("row is a distribution");
                actions[s].push(Action::new(name, dist));
            }
        }
    }
    Mdp::new(media_state(0, 0), labels, rewards, actions).expect("media streaming model is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Empty,
    Wall,
    Start,
    Bomb,
    Yellow,
    Blue,
    Pink,
    Green,
    Red,
    Terminal,
}

impl Cell {
    fn from_glyph(c: char) -> Option<Cell> {
        Some(match c {
            '.' => Cell::Empty,
            '#' => Cell::Wall,
            'S' => Cell::Start,
            'B' => Cell::Bomb,
            'Y' => Cell::Yellow,
            'U' => Cell::Blue,
            'P' => Cell::Pink,
            'G' => Cell::Green,
            'R' => Cell::Red,
            'T' => Cell::Terminal,
            _ => return None,
        })
    }

    pub fn glyph(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Wall => '#',
            Cell::Start => 'S',
            Cell::Bomb => 'B',
            Cell::Yellow => 'Y',
            Cell::Blue => 'U',
            Cell::Pink => 'P',
            Cell::Green => 'G',
            Cell::Red => 'R',
            Cell::Terminal => 'T',
        }
    }

    /// Cells a zone may jump to.
    fn is_white(self) -> bool {
        matches!(self, Cell::Empty | Cell::Start)
    }

    fn is_rewarding(self) -> bool {
        matches!(self, Cell::Yellow | Cell::Blue | Cell::Pink | Cell::Terminal)
    }

    fn is_colour(self) -> bool {
        matches!(self, Cell::Yellow | Cell::Blue | Cell::Pink)
    }

    fn is_zone(self) -> bool {
        matches!(self, Cell::Green | Cell::Red)
    }
}

/// A rectangular map with one or more zone configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    configs: Vec<Vec<Cell>>,
}

impl GridLayout {
    pub fn configurations(&self) -> usize {
        self.configs.len()
    }

    pub fn cell(&self, config: usize, row: usize, col: usize) -> Cell {
        self.configs[config][row * self.width + col]
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }
}

/// Parses a map; blank lines separate zone configurations.
pub fn parse_grid_map(text: &str) -> Result<GridLayout> {
    let mut blocks: Vec<Vec<&str>> = vec![Vec::new()];
    for line in text.lines().map(str::trim_end) {
        if line.is_empty() {
            if !blocks.last().expect("nonempty").is_empty() {
                blocks.push(Vec::new());
            }
        } else {
            blocks.last_mut().expect("nonempty").push(line);
        }
    }
    if blocks.last().is_some_and(|b| b.is_empty()) {
        blocks.pop();
    }
    if blocks.is_empty() {
        return Err(Error::InvalidMap("empty map".into()));
    }
    let height = blocks[0].len();
    let width = blocks[0][0].chars().count();
    let mut configs = Vec::new();
    let mut start = None;
    for (k, block) in blocks.iter().enumerate() {
        if block.len() != height {
            return Err(Error::InvalidMap(format!(
                "block {k} has {} rows, expected {height}",
                block.len()
            )));
        }
        let mut cells = Vec::with_capacity(width * height);
        let mut starts = Vec::new();
        for (r, line) in block.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::InvalidMap(format!("row {r} of block {k} is ragged")));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::from_glyph(ch)
                    .ok_or_else(|| Error::InvalidMap(format!("unknown glyph {ch:?} at ({r}, {c})")))?;
                if cell == Cell::Start {
                    starts.push((r, c));
                }
                cells.push(cell);
            }
        }
        if starts.len() != 1 {
            return Err(Error::InvalidMap(format!(
                "block {k} has {} start cells, expected one",
                starts.len()
            )));
        }
        if start.is_some_and(|s| s != starts[0]) {
            return Err(Error::InvalidMap("start cell moves between blocks".into()));
        }
        start = Some(starts[0]);
        if let Some(first) = configs.first() {
            let differs = cells
                .iter()
                .zip(first)
                .any(|(a, b): (&Cell, &Cell)| a != b && !((a.is_colour() || *a == Cell::Empty) && (b.is_colour() || *b == Cell::Empty)));
            if differs {
                return Err(Error::InvalidMap(format!(
                    "block {k} differs from block 0 outside the coloured zones"
                )));
            }
        }
        configs.push(cells);
    }
    Ok(GridLayout {
        width,
        height,
        start: start.expect("at least one block"),
        configs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridVariant {
    ColourBombV1,
    ColourBombV2,
    BridgeV1,
    BridgeV2,
}

impl GridVariant {
    fn size(self) -> usize {
        match self {
            GridVariant::ColourBombV1 => 9,
            GridVariant::ColourBombV2 => 15,
            GridVariant::BridgeV1 | GridVariant::BridgeV2 => 20,
        }
    }

    fn configurations(self) -> usize {
        match self {
            GridVariant::ColourBombV2 => 4,
            _ => 1,
        }
    }
}

const DIRECTIONS: [(&str, isize, isize); 4] = [("left", 0, -1), ("right", 0, 1), ("up", -1, 0), ("down", 1, 0)];

/// Builds a gridworld. State `config · cells + row · width + col`.
///
/// Directional moves succeed w.p. `1 − ρ` and slip to each other direction
/// w.p. `ρ/3`; walls and borders keep the agent in place. With several zone
/// configurations, leaving the start cell or entering the green zone draws
/// the next configuration uniformly.
pub fn build_gridworld(layout: &GridLayout, params: &EnvParams, variant: GridVariant) -> Result<Mdp> {
    let side = variant.size();
    if layout.width != side || layout.height != side {
        return Err(Error::InvalidMap(format!(
            "{variant:?} needs a {side}x{side} map, got {}x{}",
            layout.width, layout.height
        )));
    }
    if layout.configurations() != variant.configurations() {
        return Err(Error::InvalidMap(format!(
            "{variant:?} needs {} zone configurations, got {}",
            variant.configurations(),
            layout.configurations()
        )));
    }
    let rho = params.random_action_probability.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("slip probability {rho} outside [0, 1]")));
    }
    let (w, h, cells) = (layout.width, layout.height, layout.cell_count());
    let configs = layout.configurations();
    let n = cells * configs;
    let mut labels = vec![Label::Safe; n];
    let mut rewards = vec![0.0; n];
    let mut actions = vec![Vec::new(); n];

    let move_to = |config: usize, r: usize, c: usize, dr: isize, dc: isize| -> usize {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
            return r * w + c;
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if layout.cell(config, nr, nc) == Cell::Wall {
            r * w + c
        } else {
            nr * w + nc
        }
    };
    // Successor distribution over full states for landing on cell `to`.
    let land = |config: usize, from: usize, to: usize, p: f64, acc: &mut BTreeMap<StateId, f64>| {
        let from_start = from == layout.start.0 * w + layout.start.1;
        let into_green = layout.configs[config][to] == Cell::Green && from != to;
        if configs > 1 && (from_start || into_green) {
            for k in 0..configs {
                *acc.entry(StateId(k * cells + to)).or_insert(0.0) += p / configs as f64;
            }
        } else {
            *acc.entry(StateId(config * cells + to)).or_insert(0.0) += p;
        }
    };

    for config in 0..configs {
        for r in 0..h {
            for c in 0..w {
                let cell = layout.cell(config, r, c);
                let here = r * w + c;
                let s = config * cells + here;
                if cell == Cell::Bomb {
                    labels[s] = Label::Unsafe;
                }
                if cell.is_rewarding() {
                    rewards[s] = 1.0;
                }
                let stay = Action::new("stay", SparseDistribution::dirac(StateId(s)));
                if cell == Cell::Wall || cell == Cell::Bomb || cell.is_rewarding() {
                    actions[s].push(stay);
                } else if cell.is_zone() {
                    actions[s].push(stay);
                    for (_, dr, dc) in DIRECTIONS {
                        let to = move_to(config, r, c, dr, dc);
                        if to != here && layout.configs[config][to].is_white() {
                            let mut acc = BTreeMap::new();
                            land(config, here, to, 1.0, &mut acc);
                            actions[s].push(Action::new(
                                format!("exit-{}-{}", to / w, to % w),
                                SparseDistribution::new(acc.into_iter().collect())?,
                            ));
                        }
                    }
                } else {
                    for (k, (name, _, _)) in DIRECTIONS.iter().enumerate() {
                        let mut acc = BTreeMap::new();
                        for (m, (_, dr, dc)) in DIRECTIONS.iter().enumerate() {
                            let p = if m == k { 1.0 - rho } else { rho / 3.0 };
                            if p > 0.0 {
                                land(config, here, move_to(config, r, c, *dr, *dc), p, &mut acc);
                            }
                        }
                        actions[s].push(Action::new(*name, SparseDistribution::new(acc.into_iter().collect())?));
                    }
                }
            }
        }
    }
    let initial = StateId(layout.start.0 * w + layout.start.1);
    Mdp::new(initial, labels, rewards, actions)
}
