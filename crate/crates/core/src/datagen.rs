//! Synthetic chain-of-thought data: left-to-right modular arithmetic chains.
//!
//! A problem `x0 op1 x1 ... opL xL` is solved with one rationale step per
//! operation, `r op x = r' ;`, and a delimited answer `<a> rL </a>`. Every
//! value is a single symbol in `0..modulus`.
//!
//! Spurious material is injected with exact labels and never changes the
//! true chain:
//!
//! - *distractor steps*: a well-formed, arithmetically correct equation on
//!   unrelated operands, placed between steps (`a = a ;`, `a op b = c ;`
//!   or `a op b op c = d ;`);
//! - *corrupted values*: a wrong intermediate value, repeated one to three
//!   times right after a true step result and then ignored.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Sequence;
use crate::error::{Error, Result};
use crate::model::{BOS_ID, EOS_ID, RESERVED_IDS, SEP_ID};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Add, Op::Sub, Op::Mul];

    pub fn apply(self, a: u32, b: u32, modulus: u32) -> u32 {
        let (a, b, m) = (u64::from(a), u64::from(b), u64::from(modulus));
        let r = match self {
            Op::Add => (a + b) % m,
            Op::Sub => (a + m - b % m) % m,
            Op::Mul => (a * b) % m,
        };
        r as u32
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Value(u32),
    Op(Op),
    Eq,
    Semi,
    AnsOpen,
    AnsClose,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Value(v) => write!(f, "{v}"),
            Symbol::Op(op) => f.write_str(op.symbol()),
            Symbol::Eq => f.write_str("="),
            Symbol::Semi => f.write_str(";"),
            Symbol::AnsOpen => f.write_str("<a>"),
            Symbol::AnsClose => f.write_str("</a>"),
        }
    }
}

/// Space-separated rendering; symbols never contain spaces.
pub fn symbols_to_text(symbols: &[Symbol]) -> String {
    let mut out = String::new();
    for (i, s) in symbols.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&s.to_string());
    }
    out
}

pub fn text_to_symbols(text: &str, modulus: u32) -> Result<Vec<Symbol>> {
    text.split_whitespace()
        .map(|tok| {
            Ok(match tok {
                "+" => Symbol::Op(Op::Add),
                "-" => Symbol::Op(Op::Sub),
                "*" => Symbol::Op(Op::Mul),
                "=" => Symbol::Eq,
                ";" => Symbol::Semi,
                "<a>" => Symbol::AnsOpen,
                "</a>" => Symbol::AnsClose,
                _ => {
                    let v: u32 = tok.parse().map_err(|_| {
                        Error::InvalidArgument(format!("unknown symbol {tok:?}"))
                    })?;
                    if v >= modulus {
                        return Err(Error::InvalidArgument(format!(
                            "value {v} outside modulus {modulus}"
                        )));
                    }
                    Symbol::Value(v)
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub modulus: u32,
    /// Operations per problem.
    pub chain_length: usize,
    pub operators: Vec<Op>,
}

impl TaskSpec {
    pub fn new(modulus: u32, chain_length: usize, operators: Vec<Op>) -> Result<Self> {
        let spec = Self {
            modulus,
            chain_length,
            operators,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modulus < 2 {
            return Err(Error::InvalidArgument(format!("modulus {} < 2", self.modulus)));
        }
        if self.chain_length == 0 {
            return Err(Error::InvalidArgument("chain_length must be >= 1".into()));
        }
        if self.operators.is_empty() {
            return Err(Error::InvalidArgument("empty operator set".into()));
        }
        Ok(())
    }

    /// Reserved ids, then values `0..modulus`, then `+ - * = ; <a> </a>`.
    pub fn vocab_size(&self) -> usize {
        RESERVED_IDS + self.modulus as usize + 7
    }

    pub fn token_id(&self, s: Symbol) -> u32 {
        let base = RESERVED_IDS as u32;
        let m = self.modulus;
        match s {
            Symbol::Value(v) => base + v,
            Symbol::Op(Op::Add) => base + m,
            Symbol::Op(Op::Sub) => base + m + 1,
            Symbol::Op(Op::Mul) => base + m + 2,
            Symbol::Eq => base + m + 3,
            Symbol::Semi => base + m + 4,
            Symbol::AnsOpen => base + m + 5,
            Symbol::AnsClose => base + m + 6,
        }
    }

    pub fn symbol(&self, id: u32) -> Option<Symbol> {
        let base = RESERVED_IDS as u32;
        let m = self.modulus;
        if id < base {
            return None;
        }
        let k = id - base;
        Some(match k {
            k if k < m => Symbol::Value(k),
            k => match k - m {
                0 => Symbol::Op(Op::Add),
                1 => Symbol::Op(Op::Sub),
                2 => Symbol::Op(Op::Mul),
                3 => Symbol::Eq,
                4 => Symbol::Semi,
                5 => Symbol::AnsOpen,
                6 => Symbol::AnsClose,
                _ => return None,
            },
        })
    }

    pub fn ids(&self, symbols: &[Symbol]) -> Vec<u32> {
        symbols.iter().map(|&s| self.token_id(s)).collect()
    }

    pub fn symbols(&self, ids: &[u32]) -> Result<Vec<Symbol>> {
        ids.iter()
            .map(|&id| {
                self.symbol(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("id {id} is not a task symbol")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotExample {
    pub prompt: Vec<Symbol>,
    pub rationale: Vec<Symbol>,
    /// Includes the `<a>` and `</a>` markers.
    pub answer: Vec<Symbol>,
    /// Indices into `rationale`.
    pub spurious_positions: Vec<usize>,
}

impl CotExample {
    /// Tokens strictly inside the answer markers.
    pub fn answer_span(&self) -> &[Symbol] {
        let n = self.answer.len();
        if n >= 2 {
            &self.answer[1..n - 1]
        } else {
            &[]
        }
    }
}

/// Builds the worked example for given operands and operators.
pub fn build_example(spec: &TaskSpec, operands: &[u32], ops: &[Op]) -> Result<CotExample> {
    if operands.len() != ops.len() + 1 || ops.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} operands for {} operators",
            operands.len(),
            ops.len()
        )));
    }
    if let Some(&v) = operands.iter().find(|&&v| v >= spec.modulus) {
        return Err(Error::InvalidArgument(format!("operand {v} >= modulus")));
    }
    let mut prompt = vec![Symbol::Value(operands[0])];
    let mut rationale = Vec::with_capacity(6 * ops.len());
    let mut acc = operands[0];
    for (&op, &x) in ops.iter().zip(&operands[1..]) {
        prompt.push(Symbol::Op(op));
        prompt.push(Symbol::Value(x));
        let next = op.apply(acc, x, spec.modulus);
        rationale.extend([
            Symbol::Value(acc),
            Symbol::Op(op),
            Symbol::Value(x),
            Symbol::Eq,
            Symbol::Value(next),
            Symbol::Semi,
        ]);
        acc = next;
    }
    Ok(CotExample {
        prompt,
        rationale,
        answer: vec![Symbol::AnsOpen, Symbol::Value(acc), Symbol::AnsClose],
        spurious_positions: Vec::new(),
    })
}

/// Draws a random problem: operands uniform in `0..modulus`, operators
/// uniform over the spec's set.
pub fn generate_example<R: Rng + ?Sized>(spec: &TaskSpec, rng: &mut R) -> CotExample {
    let operands: Vec<u32> = (0..=spec.chain_length)
        .map(|_| rng.random_range(0..spec.modulus))
        .collect();
    let ops: Vec<Op> = (0..spec.chain_length)
        .map(|_| spec.operators[rng.random_range(0..spec.operators.len())])
        .collect();
    build_example(spec, &operands, &ops).expect("generated operands are in range")
}

/// Left-to-right evaluation of a prompt `x0 op1 x1 ...`.
pub fn evaluate_prompt(prompt: &[Symbol], modulus: u32) -> Option<u32> {
    let mut it = prompt.iter();
    let mut acc = match it.next()? {
        Symbol::Value(v) => *v,
        _ => return None,
    };
    loop {
        match (it.next(), it.next()) {
            (None, _) => return Some(acc),
            (Some(Symbol::Op(op)), Some(Symbol::Value(x))) => acc = op.apply(acc, *x, modulus),
            _ => return None,
        }
    }
}

/// Checks a clean rationale step by step against the prompt and returns the
/// final value: step `k` must read `r_{k-1} op_k x_k = r_k ;` with `r_k`
/// correct.
pub fn evaluate_rationale(prompt: &[Symbol], rationale: &[Symbol], modulus: u32) -> Option<u32> {
    let mut acc = match prompt.first()? {
        Symbol::Value(v) => *v,
        _ => return None,
    };
    let steps: Vec<(Op, u32)> = prompt[1..]
        .chunks(2)
        .map(|c| match c {
            [Symbol::Op(op), Symbol::Value(x)] => Some((*op, *x)),
            _ => None,
        })
        .collect::<Option<_>>()?;
    if rationale.len() != 6 * steps.len() {
        return None;
    }
    for (chunk, &(op, x)) in rationale.chunks(6).zip(&steps) {
        let expected = op.apply(acc, x, modulus);
        let want = [
            Symbol::Value(acc),
            Symbol::Op(op),
            Symbol::Value(x),
            Symbol::Eq,
            Symbol::Value(expected),
            Symbol::Semi,
        ];
        if chunk != want {
            return None;
        }
        acc = expected;
    }
    Some(acc)
}

/// The rationale with every spurious-labelled token removed.
pub fn strip_spurious(example: &CotExample) -> Vec<Symbol> {
    let spurious: BTreeSet<usize> = example.spurious_positions.iter().copied().collect();
    example
        .rationale
        .iter()
        .enumerate()
        .filter(|(i, _)| !spurious.contains(i))
        .map(|(_, s)| *s)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    DistractorStep,
    CorruptedValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Target fraction of the final rationale made of injected tokens.
    pub spurious_rate: f64,
    pub modes: Vec<NoiseMode>,
    pub seed: u64,
}

impl NoiseSpec {
    pub const MAX_RATE: f64 = 0.9;

    pub fn none() -> Self {
        Self {
            spurious_rate: 0.0,
            modes: vec![NoiseMode::DistractorStep, NoiseMode::CorruptedValue],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=Self::MAX_RATE).contains(&self.spurious_rate) {
            return Err(Error::InvalidNoise(format!(
                "spurious_rate {} outside [0, {}]",
                self.spurious_rate,
                Self::MAX_RATE
            )));
        }
        if self.spurious_rate > 0.0 && self.modes.is_empty() {
            return Err(Error::InvalidNoise("no noise modes selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Unit {
    /// A distractor equation with this many tokens (4, 6 or 8).
    Distractor(usize),
    /// A wrong value repeated this many times.
    Corrupt(usize),
}

fn plan_units<R: Rng + ?Sized>(target: usize, noise: &NoiseSpec, rng: &mut R) -> Result<Vec<Unit>> {
    let distract = noise.modes.contains(&NoiseMode::DistractorStep);
    let corrupt = noise.modes.contains(&NoiseMode::CorruptedValue);
    let mut units = Vec::new();
    if corrupt {
        let mut remaining = target;
        while remaining > 0 {
            if distract && remaining >= 6 && rng.random_bool(0.5) {
                units.push(Unit::Distractor(6));
                remaining -= 6;
            } else {
                let k = rng.random_range(1..=3usize).min(remaining);
                units.push(Unit::Corrupt(k));
                remaining -= k;
            }
        }
        return Ok(units);
    }
    // Distractor equations have even lengths 4, 6, 8: an odd target is
    // rounded down by one token, and a target of exactly 2 is unreachable.
    let even = target - target % 2;
    if even == 2 {
        return Err(Error::InvalidNoise(format!(
            "{target} spurious tokens cannot be realized with distractor steps alone"
        )));
    }
    if even == 0 {
        return Ok(units);
    }
    let sixes = even / 6;
    match even % 6 {
        0 => units.extend(core::iter::repeat_n(Unit::Distractor(6), sixes)),
        4 => {
            units.extend(core::iter::repeat_n(Unit::Distractor(6), sixes));
            units.push(Unit::Distractor(4));
        }
        _ => {
            units.extend(core::iter::repeat_n(Unit::Distractor(6), sixes - 1));
            units.push(Unit::Distractor(8));
        }
    }
    Ok(units)
}

fn distractor<R: Rng + ?Sized>(len: usize, spec: &TaskSpec, rng: &mut R) -> Vec<Symbol> {
    let m = spec.modulus;
    let mut value = || Symbol::Value(rng.random_range(0..m));
    match len {
        4 => {
            let a = value();
            vec![a, Symbol::Eq, a, Symbol::Semi]
        }
        _ => {
            let n_ops = (len - 4) / 2;
            let mut out = Vec::with_capacity(len);
            let Symbol::Value(mut acc) = value() else { unreachable!() };
            out.push(Symbol::Value(acc));
            for _ in 0..n_ops {
                let op = spec.operators[rng.random_range(0..spec.operators.len())];
                let x = rng.random_range(0..m);
                out.push(Symbol::Op(op));
                out.push(Symbol::Value(x));
                acc = op.apply(acc, x, m);
            }
            out.extend([Symbol::Eq, Symbol::Value(acc), Symbol::Semi]);
            out
        }
    }
}

/// Injects labelled spurious tokens into a clean example.
///
/// With `N` clean rationale tokens the number injected is
/// `round(rate * N / (1 - rate))`, so the injected share of the final
/// rationale is within one token of `rate`.
pub fn inject_spurious<R: Rng + ?Sized>(
    example: &CotExample,
    spec: &TaskSpec,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<CotExample> {
    noise.validate()?;
    if !example.spurious_positions.is_empty() {
        return Err(Error::InvalidNoise("example already carries spurious tokens".into()));
    }
    if noise.spurious_rate == 0.0 {
        return Ok(example.clone());
    }
    let steps: Vec<&[Symbol]> = example.rationale.chunks(6).collect();
    if steps.is_empty() || steps.iter().any(|s| s.len() != 6) {
        return Err(Error::InvalidNoise("rationale is not a sequence of steps".into()));
    }
    let n = example.rationale.len() as f64;
    let rate = noise.spurious_rate;
    let target = libm::round(rate * n / (1.0 - rate)) as usize;
    let units = plan_units(target, noise, rng)?;

    // Distractors go before step k (k == steps.len() means after the last
    // step); corrupted runs go right after the result of step k.
    let mut before: Vec<Vec<Vec<Symbol>>> = vec![Vec::new(); steps.len() + 1];
    let mut after_result: Vec<Vec<Vec<Symbol>>> = vec![Vec::new(); steps.len()];
    for unit in units {
        match unit {
            Unit::Distractor(len) => {
                let slot = rng.random_range(0..=steps.len());
                before[slot].push(distractor(len, spec, rng));
            }
            Unit::Corrupt(k) => {
                let slot = rng.random_range(0..steps.len());
                let Symbol::Value(truth) = steps[slot][4] else {
                    return Err(Error::InvalidNoise("malformed step".into()));
                };
                let wrong = (truth + rng.random_range(1..spec.modulus)) % spec.modulus;
                after_result[slot].push(vec![Symbol::Value(wrong); k]);
            }
        }
    }

    let mut rationale = Vec::new();
    let mut spurious = Vec::new();
    let push_spurious = |chunk: &[Symbol], r: &mut Vec<Symbol>, sp: &mut Vec<usize>| {
        for &s in chunk {
            sp.push(r.len());
            r.push(s);
        }
    };
    for (k, step) in steps.iter().enumerate() {
        for chunk in &before[k] {
            push_spurious(chunk, &mut rationale, &mut spurious);
        }
        rationale.extend_from_slice(&step[..5]);
        for chunk in &after_result[k] {
            push_spurious(chunk, &mut rationale, &mut spurious);
        }
        rationale.push(step[5]);
    }
    for chunk in &before[steps.len()] {
        push_spurious(chunk, &mut rationale, &mut spurious);
    }
    Ok(CotExample {
        prompt: example.prompt.clone(),
        rationale,
        answer: example.answer.clone(),
        spurious_positions: spurious,
    })
}

/// `BOS prompt SEP rationale answer EOS`. Rationale, answer and EOS are
/// supervised; the answer mask covers the tokens strictly inside the
/// answer markers.
pub fn encode(example: &CotExample, spec: &TaskSpec, context_len: usize) -> Result<Sequence> {
    if example.rationale.is_empty() {
        return Err(Error::MalformedSequence("empty rationale".into()));
    }
    if example.answer_span().is_empty() {
        return Err(Error::MalformedSequence("empty answer span".into()));
    }
    let len = example.prompt.len() + example.rationale.len() + example.answer.len() + 3;
    if len > context_len {
        return Err(Error::SequenceTooLong { len, context_len });
    }
    let mut tokens = Vec::with_capacity(len);
    tokens.push(BOS_ID);
    tokens.extend(spec.ids(&example.prompt));
    tokens.push(SEP_ID);
    let target_start = tokens.len();
    tokens.extend(spec.ids(&example.rationale));
    let answer_start = tokens.len();
    tokens.extend(spec.ids(&example.answer));
    tokens.push(EOS_ID);

    let mut loss_mask = vec![false; len];
    let mut answer_mask = vec![false; len];
    let mut spurious_mask = vec![false; len];
    loss_mask[target_start..].fill(true);
    answer_mask[answer_start + 1..answer_start + example.answer.len() - 1].fill(true);
    for &p in &example.spurious_positions {
        if p >= example.rationale.len() {
            return Err(Error::MalformedSequence(format!("spurious position {p} out of range")));
        }
        spurious_mask[target_start + p] = true;
    }
    Sequence::new(tokens, loss_mask, answer_mask, spurious_mask)
}

/// Inverse of [`encode`] on the token stream: the symbols between the
/// reserved markers, in order.
pub fn decode(seq: &Sequence, spec: &TaskSpec) -> Result<Vec<Symbol>> {
    let inner: Vec<u32> = seq
        .tokens
        .iter()
        .copied()
        .filter(|&t| !matches!(t, BOS_ID | SEP_ID | EOS_ID))
        .collect();
    spec.symbols(&inner)
}

/// Prompt tokens fed to the model at evaluation time: `BOS prompt SEP`.
pub fn prompt_tokens(example: &CotExample, spec: &TaskSpec) -> Vec<u32> {
    let mut t = vec![BOS_ID];
    t.extend(spec.ids(&example.prompt));
    t.push(SEP_ID);
    t
}

/// Train and eval examples with no prompt shared across the splits. Noise,
/// when given, is applied to the training split only.
pub fn generate_splits(
    spec: &TaskSpec,
    n_train: usize,
    n_eval: usize,
    noise: Option<&NoiseSpec>,
    root_seed: u64,
) -> Result<(Vec<CotExample>, Vec<CotExample>)> {
    spec.validate()?;
    if n_train == 0 || n_eval == 0 {
        return Err(Error::InvalidArgument("split sizes must be >= 1".into()));
    }
    if let Some(n) = noise {
        n.validate()?;
    }
    let mut train = Vec::with_capacity(n_train);
    let mut seen = BTreeSet::new();
    for i in 0..n_train {
        let mut rng = seed::rng_for(root_seed, "train", i as u64);
        let clean = generate_example(spec, &mut rng);
        seen.insert(clean.prompt.clone());
        let ex = match noise {
            Some(n) if n.spurious_rate > 0.0 => {
                let mut nrng = seed::rng_for(n.seed, "noise", i as u64);
                inject_spurious(&clean, spec, n, &mut nrng)?
            }
            _ => clean,
        };
        train.push(ex);
    }
    let mut eval = Vec::with_capacity(n_eval);
    let max_attempts = 64 * n_eval as u64 + 1024;
    let mut attempt = 0u64;
    while eval.len() < n_eval {
        if attempt >= max_attempts {
            return Err(Error::Unsatisfiable(format!(
                "found {} of {n_eval} eval prompts disjoint from training after {attempt} draws",
                eval.len()
            )));
        }
        let mut rng = seed::rng_for(root_seed, "eval", attempt);
        attempt += 1;
        let ex = generate_example(spec, &mut rng);
        if !seen.contains(&ex.prompt) {
            eval.push(ex);
        }
    }
    Ok((train, eval))
}
