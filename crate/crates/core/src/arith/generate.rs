use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, tokenize, Token};
use super::family::ProblemFamily;
use crate::error::{Error, Result};

/// Source of the random draws the family samplers consume.
///
/// Every [`rand::Rng`] is a `Draws`; [`ReplayDraws`] feeds a fixed script
/// instead, which pins down exactly which expression a sampler renders.
pub trait Draws {
    /// Uniform integer in `lo..=hi`.
    fn int(&mut self, lo: i64, hi: i64) -> i64;
    /// Uniform real in `[0, 1)`.
    fn unit(&mut self) -> f64;
    /// Uniform index in `0..n`.
    fn index(&mut self, n: usize) -> usize;
}

impl<R: Rng + ?Sized> Draws for R {
    fn int(&mut self, lo: i64, hi: i64) -> i64 {
        self.random_range(lo..=hi)
    }

    fn unit(&mut self) -> f64 {
        self.random::<f64>()
    }

    fn index(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    Int(i64),
    Unit(f64),
    Index(usize),
}

/// Replays a fixed sequence of draws. Panics if the sampler asks for a draw
/// of a different kind than the next scripted one, or runs past the end.
#[derive(Debug, Clone)]
pub struct ReplayDraws {
    queue: VecDeque<Draw>,
}

impl ReplayDraws {
    pub fn new(draws: impl IntoIterator<Item = Draw>) -> Self {
        Self {
            queue: draws.into_iter().collect(),
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.queue.is_empty()
    }

    fn next(&mut self) -> Draw {
        self.queue.pop_front().expect("replay script exhausted")
    }
}

impl Draws for ReplayDraws {
    fn int(&mut self, lo: i64, hi: i64) -> i64 {
        match self.next() {
            Draw::Int(v) => {
                assert!((lo..=hi).contains(&v), "scripted {v} outside {lo}..={hi}");
                v
            }
            other => panic!("expected Int draw, script has {other:?}"),
        }
    }

    fn unit(&mut self) -> f64 {
        match self.next() {
            Draw::Unit(v) => v,
            other => panic!("expected Unit draw, script has {other:?}"),
        }
    }

    fn index(&mut self, n: usize) -> usize {
        match self.next() {
            Draw::Index(v) => {
                assert!(v < n, "scripted index {v} outside 0..{n}");
                v
            }
            other => panic!("expected Index draw, script has {other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expression {
    pub text: String,
    pub family: ProblemFamily,
    pub value: i64,
}

#[derive(Clone, Copy)]
enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
        }
    }
}

fn chain(operands: &[i64], ops: &[Op]) -> String {
    debug_assert_eq!(operands.len(), ops.len() + 1);
    let mut s = operands[0].to_string();
    for (op, v) in ops.iter().zip(&operands[1..]) {
        s.push(' ');
        s.push_str(op.symbol());
        s.push(' ');
        s.push_str(&v.to_string());
    }
    s
}

fn add_or_sub<D: Draws + ?Sized>(rng: &mut D) -> Op {
    [Op::Add, Op::Sub][rng.index(2)]
}

fn ints<D: Draws + ?Sized>(rng: &mut D, n: usize, lo: i64, hi: i64) -> Vec<i64> {
    (0..n).map(|_| rng.int(lo, hi)).collect()
}

/// Draws one expression following the family's sampling procedure.
pub fn sample_family<D: Draws + ?Sized>(family: ProblemFamily, rng: &mut D) -> Expression {
    use ProblemFamily::*;
    let text = match family {
        SingleStepArithmetic => {
            let a = rng.int(1, 99);
            let b = rng.int(1, 99);
            let op = add_or_sub(rng);
            chain(&[a, b], &[op])
        }
        TwoStepArithmetic => {
            let v = ints(rng, 3, 1, 99);
            if rng.unit() < 0.5 {
                chain(&v, &[Op::Add, Op::Sub])
            } else {
                chain(&v, &[Op::Sub, Op::Add])
            }
        }
        SmallModulo => {
            let a = rng.int(100, 999);
            let b = rng.int(3, 19);
            format!("{a} % {b}")
        }
        NegativeSubtraction => {
            let (a, b) = if rng.unit() < 0.55 {
                let a = rng.int(100, 500);
                (a, rng.int(a + 10, a + 250))
            } else {
                let a = rng.int(1000, 5000);
                (a, rng.int(a + 100, a + 3000))
            };
            chain(&[a, b], &[Op::Sub])
        }
        FourDigitAdditionSubtraction => {
            let v = ints(rng, 2, 1000, 9999);
            let op = if rng.unit() < 0.6 { Op::Add } else { Op::Sub };
            chain(&v, &[op])
        }
        TwoDigitMultiplication => {
            let v = if rng.unit() < 0.45 {
                ints(rng, 2, 15, 50)
            } else {
                ints(rng, 2, 30, 99)
            };
            chain(&v, &[Op::Mul])
        }
        ThreeByTwoMultiplication => {
            let a = rng.int(100, 999);
            let b = rng.int(10, 99);
            chain(&[a, b], &[Op::Mul])
        }
        ThreeByThreeMultiplication => chain(&ints(rng, 2, 100, 999), &[Op::Mul]),
        PrecedenceChain => {
            let v = ints(rng, 5, 10, 999);
            let ops: Vec<Op> = (0..4).map(|_| [Op::Add, Op::Sub, Op::Mul][rng.index(3)]).collect();
            chain(&v, &ops)
        }
        OneDigitAdditionSubtractionChain => {
            let n = if rng.unit() < 0.4 {
                rng.int(16, 22)
            } else {
                rng.int(29, 39)
            } as usize;
            let v = ints(rng, n, 1, 9);
            let ops: Vec<Op> = (0..n - 1)
                .map(|_| if rng.unit() < 0.53 { Op::Add } else { Op::Sub })
                .collect();
            chain(&v, &ops)
        }
        SmallAdditionSubtractionChain => {
            let n = rng.int(21, 27) as usize;
            let v = ints(rng, n, 1, 30);
            let ops: Vec<Op> = (0..n - 1).map(|_| add_or_sub(rng)).collect();
            chain(&v, &ops)
        }
        ParenthesizedExpression => {
            let v = ints(rng, 4, 10, 99);
            format!("({} + {}) * ({} - {})", v[0], v[1], v[2], v[3])
        }
        MultiplicationChain => {
            let v = ints(rng, 5, 10, 99);
            chain(&v, &[Op::Add, Op::Mul, Op::Sub, Op::Mul])
        }
    };
    let value = evaluate(&text).expect("generated expressions are always well formed");
    Expression { text, family, value }
}

/// Per-family counts for a corpus of `total` expressions.
pub fn family_counts(total: usize) -> Result<Vec<(ProblemFamily, usize)>> {
    ProblemFamily::ALL
        .iter()
        .map(|&f| {
            let exact = f.share() * total as u64;
            if !exact.is_integer() {
                return Err(Error::InvalidInput(format!(
                    "total {total} does not split into whole per-family counts: \
                     {f} would get {}/{} samples (share {})",
                    exact.numer(),
                    exact.denom(),
                    f.share()
                )));
            }
            Ok((f, exact.to_integer() as usize))
        })
        .collect()
}

/// Generates the seeded corpus: families in canonical order, each filled to
/// its exact share, with repeated texts skipped and redrawn.
///
/// The generator is ChaCha8 seeded from `seed` via `SeedableRng::seed_from_u64`.
pub fn generate_corpus(seed: u64, total: usize) -> Result<Vec<Expression>> {
    let counts = family_counts(total)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(total);
    let mut out = Vec::with_capacity(total);
    for (family, count) in counts {
        let mut produced = 0;
        let mut attempts = 0usize;
        let budget = 1000 * count.max(1);
        while produced < count {
            attempts += 1;
            if attempts > budget {
                return Err(Error::InvalidInput(format!(
                    "could not draw {count} distinct {family} expressions"
                )));
            }
            let expr = sample_family(family, &mut rng);
            if seen.insert(expr.text.clone()) {
                out.push(expr);
                produced += 1;
            }
        }
    }
    Ok(out)
}

fn operand_error(expr: &Expression, why: &str) -> Error {
    Error::InvalidInput(format!("{} `{}`: {why}", expr.family, expr.text))
}

fn in_range(v: i64, lo: i64, hi: i64) -> bool {
    (lo..=hi).contains(&v)
}

/// Checks that an expression has the shape and operand ranges its family
/// can produce.
pub fn validate(expr: &Expression) -> Result<()> {
    use ProblemFamily::*;
    let tokens: Vec<Token> = tokenize(&expr.text)?.into_iter().map(|(_, t)| t).collect();
    let mut operands = Vec::new();
    let mut ops = Vec::new();
    let mut parens = 0usize;
    for t in &tokens {
        match *t {
            Token::Int(v) => operands.push(v),
            Token::LParen | Token::RParen => parens += 1,
            op => ops.push(op),
        }
    }
    let all_in = |lo, hi| operands.iter().all(|&v| in_range(v, lo, hi));
    let only = |allowed: &[Token]| ops.iter().all(|o| allowed.contains(o));
    let n = operands.len();
    let ok = match expr.family {
        SingleStepArithmetic => n == 2 && parens == 0 && all_in(1, 99) && only(&[Token::Plus, Token::Minus]),
        TwoStepArithmetic => {
            n == 3
                && parens == 0
                && all_in(1, 99)
                && (ops == [Token::Plus, Token::Minus] || ops == [Token::Minus, Token::Plus])
        }
        SmallModulo => {
            n == 2 && ops == [Token::Percent] && in_range(operands[0], 100, 999) && in_range(operands[1], 3, 19)
        }
        NegativeSubtraction => {
            n == 2 && ops == [Token::Minus] && {
                let (a, b) = (operands[0], operands[1]);
                (in_range(a, 100, 500) && in_range(b, a + 10, a + 250))
                    || (in_range(a, 1000, 5000) && in_range(b, a + 100, a + 3000))
            }
        }
        FourDigitAdditionSubtraction => n == 2 && all_in(1000, 9999) && only(&[Token::Plus, Token::Minus]),
        TwoDigitMultiplication => n == 2 && ops == [Token::Star] && (all_in(15, 50) || all_in(30, 99)),
        ThreeByTwoMultiplication => {
            n == 2 && ops == [Token::Star] && in_range(operands[0], 100, 999) && in_range(operands[1], 10, 99)
        }
        ThreeByThreeMultiplication => n == 2 && ops == [Token::Star] && all_in(100, 999),
        PrecedenceChain => n == 5 && parens == 0 && all_in(10, 999) && only(&[Token::Plus, Token::Minus, Token::Star]),
        OneDigitAdditionSubtractionChain => {
            (in_range(n as i64, 16, 22) || in_range(n as i64, 29, 39))
                && parens == 0
                && all_in(1, 9)
                && only(&[Token::Plus, Token::Minus])
        }
        SmallAdditionSubtractionChain => {
            in_range(n as i64, 21, 27) && parens == 0 && all_in(1, 30) && only(&[Token::Plus, Token::Minus])
        }
        ParenthesizedExpression => {
            n == 4 && parens == 4 && all_in(10, 99) && ops == [Token::Plus, Token::Star, Token::Minus]
        }
        MultiplicationChain => {
            n == 5 && parens == 0 && all_in(10, 99) && ops == [Token::Plus, Token::Star, Token::Minus, Token::Star]
        }
    };
    if !ok {
        return Err(operand_error(expr, "operands or operators outside family ranges"));
    }
    if ops.len() + 1 != n {
        return Err(operand_error(expr, "operator/operand count mismatch"));
    }
    let value = evaluate(&expr.text)?;
    if value != expr.value {
        return Err(operand_error(expr, "stored value disagrees with evaluation"));
    }
    Ok(())
}
