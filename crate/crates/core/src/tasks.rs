//! Synthetic verifiable-reward tasks and negative-prompt constructors.
//!
//! Two task families are provided:
//!
//! - **Grid**: the response is an H x W grid of cell tokens (background or a
//!   colored shape) and the reward is the fraction of prompt constraints the
//!   grid satisfies. This is a token-grid analog of compositional
//!   text-to-image checks (presence, counting, colors, relative position,
//!   color attribution).
//! - **Arith**: the response is the decimal answer to `a op b` rendered as
//!   digit tokens followed by EOS; the reward is exact-match correctness.
//!
//! Both verifiers are deterministic, pure functions of (spec, response).
//! Token 0 is reserved as EOS in every response vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{mix_seed, Error, Result};

/// EOS token id, shared by all response vocabularies.
pub const EOS: usize = 0;

/// Grid response vocabulary: EOS, background, then 3 colors x 2 shapes.
pub const GRID_VOCAB: usize = 8;
pub const GRID_BACKGROUND: usize = 1;

/// Arith response vocabulary: EOS plus digits 0-9 (digit d is token d + 1).
pub const ARITH_VOCAB: usize = 11;

// Grid prompt vocabulary.
const GP_COLOR_BASE: usize = 0; // red, green, blue
const GP_SHAPE_BASE: usize = 3; // square, circle
const GP_COUNT_BASE: usize = 5; // counts 1..=4
const GP_PRESENT: usize = 9;
const GP_COUNT: usize = 10;
const GP_COLOR: usize = 11;
const GP_RELATION_BASE: usize = 12; // left_of, right_of, above, below
const GP_ATTRIB: usize = 16;
pub const GRID_PROMPT_VOCAB: usize = 17;

// Arith prompt vocabulary: digits 0-9, then operators and markers.
const AP_PLUS: usize = 10;
const AP_TIMES: usize = 11;
const AP_EQUALS: usize = 12;
const AP_WRONG: usize = 13;
const AP_ANSWER: usize = 14;
pub const ARITH_PROMPT_VOCAB: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Circle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

pub const COLORS: [Color; 3] = [Color::Red, Color::Green, Color::Blue];
pub const SHAPES: [Shape; 2] = [Shape::Square, Shape::Circle];

/// Response token encoding a colored shape.
pub fn object_token(color: Color, shape: Shape) -> usize {
    2 + (color as usize) * 2 + shape as usize
}

fn decode_object(token: usize) -> Option<(Color, Shape)> {
    if !(2..2 + 6).contains(&token) {
        return None;
    }
    let idx = token - 2;
    Some((COLORS[idx / 2], SHAPES[idx % 2]))
}

/// One verifiable condition on a grid response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// At least one cell holds this exact colored shape.
    ObjectPresence { color: Color, shape: Shape },
    /// Exactly `count` cells hold this shape (any color).
    Count { shape: Shape, count: usize },
    /// At least one cell holds an object of this color.
    ColorPresence { color: Color },
    /// Some cell with object `a` stands in `relation` to some cell with `b`.
    RelativePosition {
        a_color: Color,
        a_shape: Shape,
        b_color: Color,
        b_shape: Shape,
        relation: Relation,
    },
    /// Both colored shapes appear somewhere in the grid.
    ColorAttribution {
        a_color: Color,
        a_shape: Shape,
        b_color: Color,
        b_shape: Shape,
    },
}

impl Constraint {
    /// Position-free constraints are invariant under permuting grid cells.
    pub fn is_position_free(&self) -> bool {
        !matches!(self, Constraint::RelativePosition { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArithOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "x")]
    Mul,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithSpec {
    pub a: u32,
    pub b: u32,
    pub op: ArithOp,
}

impl ArithSpec {
    pub fn answer(&self) -> u32 {
        match self.op {
            ArithOp::Add => self.a + self.b,
            ArithOp::Mul => self.a * self.b,
        }
    }

    /// Answer digits as response tokens, EOS-terminated.
    pub fn expected_response(&self) -> Vec<usize> {
        let mut toks: Vec<usize> = self
            .answer()
            .to_string()
            .bytes()
            .map(|b| (b - b'0') as usize + 1)
            .collect();
        toks.push(EOS);
        toks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Grid,
    Arith,
}

impl TaskKind {
    pub fn vocab_size(&self) -> usize {
        match self {
            TaskKind::Grid => GRID_VOCAB,
            TaskKind::Arith => ARITH_VOCAB,
        }
    }

    pub fn prompt_vocab_size(&self) -> usize {
        match self {
            TaskKind::Grid => GRID_PROMPT_VOCAB,
            TaskKind::Arith => ARITH_PROMPT_VOCAB,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Positive,
    Negative,
}

/// A tokenized prompt. Negative prompts may be empty (the unconditional
/// case); positive prompts never are.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEncoding {
    pub task: TaskKind,
    pub kind: PromptKind,
    pub tokens: Vec<usize>,
}

impl PromptEncoding {
    pub fn positive(task: TaskKind, tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("positive prompt must be non-empty"));
        }
        Self::checked(task, PromptKind::Positive, tokens)
    }

    fn checked(task: TaskKind, kind: PromptKind, tokens: Vec<usize>) -> Result<Self> {
        let vocab = task.prompt_vocab_size();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::invalid(format!(
                "prompt token {bad} outside vocabulary of size {vocab}"
            )));
        }
        Ok(PromptEncoding { task, kind, tokens })
    }
}

/// How the negative prompt is derived from the positive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegPromptStrategy {
    /// Unconditional: an empty token sequence (grid tasks only).
    Empty,
    /// A fixed generic prompt ("ANSWER:") carrying no task content.
    NullPrompt,
    /// The positive prompt plus a reserved wrong-answer suffix token.
    WrongSuffix,
    /// The positive prompt with its operand tokens removed.
    NoContext,
}

/// Positive/negative prompt pair for one task, with the strategy recorded
/// for ablation bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub positive: PromptEncoding,
    pub negative: PromptEncoding,
    pub strategy: NegPromptStrategy,
}

impl PromptPair {
    pub fn build(positive: PromptEncoding, strategy: NegPromptStrategy) -> Result<Self> {
        let negative = make_negative_prompt(&positive, strategy)?;
        Ok(PromptPair {
            positive,
            negative,
            strategy,
        })
    }
}

/// Derives the negative prompt for a strategy, checking task compatibility.
pub fn make_negative_prompt(
    positive: &PromptEncoding,
    strategy: NegPromptStrategy,
) -> Result<PromptEncoding> {
    let tokens = match (positive.task, strategy) {
        (TaskKind::Grid, NegPromptStrategy::Empty) => Vec::new(),
        (TaskKind::Arith, NegPromptStrategy::NullPrompt) => vec![AP_ANSWER],
        (TaskKind::Arith, NegPromptStrategy::WrongSuffix) => {
            let mut toks = positive.tokens.clone();
            toks.push(AP_WRONG);
            toks
        }
        (TaskKind::Arith, NegPromptStrategy::NoContext) => positive
            .tokens
            .iter()
            .cloned()
            .filter(|&t| t >= 10) // drop digit (operand) tokens
            .collect(),
        (task, strategy) => {
            return Err(Error::invalid(format!(
                "negative-prompt strategy {strategy:?} not valid for {task:?} task"
            )))
        }
    };
    PromptEncoding::checked(positive.task, PromptKind::Negative, tokens)
}

/// Strategies applicable to a task family, in ablation-table row order.
pub fn compatible_strategies(task: TaskKind) -> Vec<NegPromptStrategy> {
    match task {
        TaskKind::Grid => vec![NegPromptStrategy::Empty],
        TaskKind::Arith => vec![
            NegPromptStrategy::NoContext,
            NegPromptStrategy::NullPrompt,
            NegPromptStrategy::WrongSuffix,
        ],
    }
}

fn constraint_satisfied(c: &Constraint, cells: &[usize], width: usize) -> bool {
    let objects = || {
        cells
            .iter()
            .enumerate()
            .filter_map(|(i, &tok)| decode_object(tok).map(|o| (i, o)))
    };
    match *c {
        Constraint::ObjectPresence { color, shape } => {
            objects().any(|(_, (c2, s2))| c2 == color && s2 == shape)
        }
        Constraint::Count { shape, count } => {
            objects().filter(|(_, (_, s2))| *s2 == shape).count() == count
        }
        Constraint::ColorPresence { color } => objects().any(|(_, (c2, _))| c2 == color),
        Constraint::RelativePosition {
            a_color,
            a_shape,
            b_color,
            b_shape,
            relation,
        } => {
            let a_cells: Vec<usize> = objects()
                .filter(|(_, (c2, s2))| *c2 == a_color && *s2 == a_shape)
                .map(|(i, _)| i)
                .collect();
            let b_cells: Vec<usize> = objects()
                .filter(|(_, (c2, s2))| *c2 == b_color && *s2 == b_shape)
                .map(|(i, _)| i)
                .collect();
            a_cells.iter().any(|&ai| {
                b_cells.iter().any(|&bi| {
                    if ai == bi {
                        return false;
                    }
                    let (ar, ac) = (ai / width, ai % width);
                    let (br, bc) = (bi / width, bi % width);
                    match relation {
                        Relation::LeftOf => ac < bc,
                        Relation::RightOf => ac > bc,
                        Relation::Above => ar < br,
                        Relation::Below => ar > br,
                    }
                })
            })
        }
        Constraint::ColorAttribution {
            a_color,
            a_shape,
            b_color,
            b_shape,
        } => {
            let has = |color: Color, shape: Shape| {
                cells
                    .iter()
                    .filter_map(|&tok| decode_object(tok))
                    .any(|(c2, s2)| c2 == color && s2 == shape)
            };
            has(a_color, a_shape) && has(b_color, b_shape)
        }
    }
}

/// Fraction of constraints the grid satisfies; 1 for an empty constraint
/// list. The response must cover the full grid.
pub fn grid_reward(spec: &GridSpec, response: &[usize]) -> Result<f64> {
    let expected = spec.height * spec.width;
    if response.len() != expected {
        return Err(Error::invalid(format!(
            "grid response length {} != H*W = {expected}",
            response.len()
        )));
    }
    if spec.constraints.is_empty() {
        return Ok(1.0);
    }
    let satisfied = spec
        .constraints
        .iter()
        .filter(|c| constraint_satisfied(c, response, spec.width))
        .count();
    Ok(satisfied as f64 / spec.constraints.len() as f64)
}

/// 1 iff the response parses (digit tokens up to EOS) to the exact answer.
/// Malformed responses score 0; this never errors.
pub fn arith_reward(spec: &ArithSpec, response: &[usize]) -> f64 {
    let Some(eos_pos) = response.iter().position(|&t| t == EOS) else {
        return 0.0;
    };
    let digits = &response[..eos_pos];
    if digits.is_empty() || digits.iter().any(|&t| !(1..=10).contains(&t)) {
        return 0.0;
    }
    let rendered: String = digits
        .iter()
        .map(|&t| char::from(b'0' + (t - 1) as u8))
        .collect();
    if rendered == spec.answer().to_string() {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSpec {
    Grid(GridSpec),
    Arith(ArithSpec),
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Grid(_) => TaskKind::Grid,
            TaskSpec::Arith(_) => TaskKind::Arith,
        }
    }

    /// Natural response budget: the full grid, or answer digits plus slack.
    pub fn default_max_len(&self) -> usize {
        match self {
            TaskSpec::Grid(g) => g.height * g.width,
            TaskSpec::Arith(_) => 6,
        }
    }
}

/// Trainer-facing reward: malformed grid responses (wrong length) score 0
/// instead of erroring, and `dense_grid = false` binarizes the grid reward.
pub fn task_reward(spec: &TaskSpec, response: &[usize], dense_grid: bool) -> f64 {
    match spec {
        TaskSpec::Arith(s) => arith_reward(s, response),
        TaskSpec::Grid(s) => {
            if response.len() != s.height * s.width {
                return 0.0;
            }
            let frac = grid_reward(s, response).expect("length checked");
            if dense_grid {
                frac
            } else if frac == 1.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// One prompt/verifier pair. `id` is the task's index in its set and doubles
/// as the rollout `prompt_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: usize,
    pub spec: TaskSpec,
    pub prompt: PromptEncoding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub kind: TaskKind,
    pub tasks: Vec<Task>,
}

impl TaskSet {
    pub fn new(kind: TaskKind, tasks: Vec<Task>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::invalid("task set is empty"));
        }
        if tasks.iter().any(|t| t.spec.kind() != kind) {
            return Err(Error::invalid("task set mixes task families"));
        }
        Ok(TaskSet { kind, tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: usize) -> &Task {
        &self.tasks[id]
    }
}

// On-disk record: one object per task with a `task_type` tag, exactly what
// the built-in generator emits.
#[derive(Serialize, Deserialize)]
#[serde(tag = "task_type", rename_all = "snake_case")]
enum TaskRecord {
    Grid {
        height: usize,
        width: usize,
        constraints: Vec<Constraint>,
        prompt_tokens: Vec<usize>,
    },
    Arith {
        a: u32,
        b: u32,
        op: ArithOp,
        prompt_tokens: Vec<usize>,
    },
}

impl TaskSet {
    pub fn to_json(&self) -> Result<String> {
        let records: Vec<TaskRecord> = self
            .tasks
            .iter()
            .map(|t| match &t.spec {
                TaskSpec::Grid(g) => TaskRecord::Grid {
                    height: g.height,
                    width: g.width,
                    constraints: g.constraints.clone(),
                    prompt_tokens: t.prompt.tokens.clone(),
                },
                TaskSpec::Arith(a) => TaskRecord::Arith {
                    a: a.a,
                    b: a.b,
                    op: a.op,
                    prompt_tokens: t.prompt.tokens.clone(),
                },
            })
            .collect();
        Ok(serde_json::to_string_pretty(&records)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let records: Vec<TaskRecord> = serde_json::from_str(json)?;
        if records.is_empty() {
            return Err(Error::invalid("task file contains no tasks"));
        }
        let mut tasks = Vec::with_capacity(records.len());
        for (id, rec) in records.into_iter().enumerate() {
            let (spec, prompt_tokens) = match rec {
                TaskRecord::Grid {
                    height,
                    width,
                    constraints,
                    prompt_tokens,
                } => (
                    TaskSpec::Grid(GridSpec {
                        height,
                        width,
                        constraints,
                    }),
                    prompt_tokens,
                ),
                TaskRecord::Arith {
                    a,
                    b,
                    op,
                    prompt_tokens,
                } => (TaskSpec::Arith(ArithSpec { a, b, op }), prompt_tokens),
            };
            let prompt = PromptEncoding::positive(spec.kind(), prompt_tokens)?;
            tasks.push(Task { id, spec, prompt });
        }
        let kind = tasks[0].spec.kind();
        TaskSet::new(kind, tasks)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Renders an arithmetic prompt `a op b =` as prompt tokens.
pub fn arith_prompt_tokens(spec: &ArithSpec) -> Vec<usize> {
    let op_tok = match spec.op {
        ArithOp::Add => AP_PLUS,
        ArithOp::Mul => AP_TIMES,
    };
    vec![spec.a as usize, op_tok, spec.b as usize, AP_EQUALS]
}

fn color_token(c: Color) -> usize {
    GP_COLOR_BASE + c as usize
}

fn shape_token(s: Shape) -> usize {
    GP_SHAPE_BASE + s as usize
}

/// Renders a grid constraint list as prompt tokens.
pub fn grid_prompt_tokens(constraints: &[Constraint]) -> Vec<usize> {
    let mut toks = Vec::new();
    for c in constraints {
        match *c {
            Constraint::ObjectPresence { color, shape } => {
                toks.extend([GP_PRESENT, color_token(color), shape_token(shape)]);
            }
            Constraint::Count { shape, count } => {
                toks.extend([GP_COUNT, GP_COUNT_BASE + count - 1, shape_token(shape)]);
            }
            Constraint::ColorPresence { color } => {
                toks.extend([GP_COLOR, color_token(color)]);
            }
            Constraint::RelativePosition {
                a_color,
                a_shape,
                b_color,
                b_shape,
                relation,
            } => {
                toks.extend([
                    GP_RELATION_BASE + relation as usize,
                    color_token(a_color),
                    shape_token(a_shape),
                    color_token(b_color),
                    shape_token(b_shape),
                ]);
            }
            Constraint::ColorAttribution {
                a_color,
                a_shape,
                b_color,
                b_shape,
            } => {
                toks.extend([
                    GP_ATTRIB,
                    color_token(a_color),
                    shape_token(a_shape),
                    color_token(b_color),
                    shape_token(b_shape),
                ]);
            }
        }
    }
    toks
}

/// Generates `n` satisfiable grid tasks: each task's constraints are derived
/// from a randomly drawn reference grid, so reward 1 is always reachable.
pub fn generate_grid_tasks(n: usize, height: usize, width: usize, seed: u64) -> Result<TaskSet> {
    if n == 0 || height * width == 0 {
        return Err(Error::invalid("need n >= 1 tasks and a non-empty grid"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6772_6964]));
    let mut tasks = Vec::with_capacity(n);
    for id in 0..n {
        let cells: Vec<usize> = (0..height * width)
            .map(|_| {
                if rng.random::<f64>() < 0.55 {
                    GRID_BACKGROUND
                } else {
                    2 + rng.random_range(0..6)
                }
            })
            .collect();

        let mut candidates: Vec<Constraint> = Vec::new();
        let present: Vec<(usize, (Color, Shape))> = cells
            .iter()
            .enumerate()
            .filter_map(|(i, &tok)| decode_object(tok).map(|o| (i, o)))
            .collect();
        for &(_, (color, shape)) in &present {
            let c = Constraint::ObjectPresence { color, shape };
            if !candidates.contains(&c) {
                candidates.push(c);
            }
        }
        for shape in SHAPES {
            let count = present.iter().filter(|(_, (_, s))| *s == shape).count();
            if (1..=4).contains(&count) {
                candidates.push(Constraint::Count { shape, count });
            }
        }
        for color in COLORS {
            if present.iter().any(|(_, (c, _))| *c == color) {
                candidates.push(Constraint::ColorPresence { color });
            }
        }
        // A relation that actually holds between two distinct object cells.
        if let Some((&(ai, (ac, ash)), &(bi, (bc, bsh)))) = present
            .iter()
            .zip(present.iter().skip(1))
            .find(|((_, a), (_, b))| a != b)
        {
            let (ar, acol) = (ai / width, ai % width);
            let (br, bcol) = (bi / width, bi % width);
            let relation = if ar != br {
                if ar < br {
                    Relation::Above
                } else {
                    Relation::Below
                }
            } else if acol < bcol {
                Relation::LeftOf
            } else {
                Relation::RightOf
            };
            candidates.push(Constraint::RelativePosition {
                a_color: ac,
                a_shape: ash,
                b_color: bc,
                b_shape: bsh,
                relation,
            });
            candidates.push(Constraint::ColorAttribution {
                a_color: ac,
                a_shape: ash,
                b_color: bc,
                b_shape: bsh,
            });
        }

        if candidates.is_empty() {
            // All-background draw; fall back to a single presence demand.
            candidates.push(Constraint::ObjectPresence {
                color: Color::Red,
                shape: Shape::Square,
            });
        }
        candidates.shuffle(&mut rng);
        let take = rng.random_range(2..=3).min(candidates.len());
        let constraints: Vec<Constraint> = candidates.into_iter().take(take).collect();

        let prompt =
            PromptEncoding::positive(TaskKind::Grid, grid_prompt_tokens(&constraints))?;
        tasks.push(Task {
            id,
            spec: TaskSpec::Grid(GridSpec {
                height,
                width,
                constraints,
            }),
            prompt,
        });
    }
    TaskSet::new(TaskKind::Grid, tasks)
}

/// Generates `n` distinct single-digit arithmetic tasks.
pub fn generate_arith_tasks(n: usize, seed: u64) -> Result<TaskSet> {
    let mut all: Vec<ArithSpec> = Vec::with_capacity(200);
    for a in 0..10u32 {
        for b in 0..10u32 {
            all.push(ArithSpec { a, b, op: ArithOp::Add });
            all.push(ArithSpec { a, b, op: ArithOp::Mul });
        }
    }
    if n == 0 || n > all.len() {
        return Err(Error::invalid(format!(
            "arith task count must be in 1..={}, got {n}",
            all.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x6172_6974]));
    all.shuffle(&mut rng);
    let tasks = all
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(id, spec)| {
            let prompt =
                PromptEncoding::positive(TaskKind::Arith, arith_prompt_tokens(&spec))?;
            Ok(Task {
                id,
                spec: TaskSpec::Arith(spec),
                prompt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSet::new(TaskKind::Arith, tasks)
}

/// Builds the task set named by a config: from file when given, otherwise
/// from the built-in generator.
pub fn build_task_set(
    kind: TaskKind,
    task_file: Option<&std::path::Path>,
    num_tasks: usize,
    grid_height: usize,
    grid_width: usize,
    seed: u64,
) -> Result<TaskSet> {
    match task_file {
        Some(path) => {
            let set = TaskSet::load(path)?;
            if set.kind != kind {
                return Err(Error::Config(format!(
                    "task file holds {:?} tasks but config selects {:?}",
                    set.kind, kind
                )));
            }
            Ok(set)
        }
        None => match kind {
            TaskKind::Grid => generate_grid_tasks(num_tasks, grid_height, grid_width, seed),
            TaskKind::Arith => generate_arith_tasks(num_tasks, seed),
        },
    }
}
