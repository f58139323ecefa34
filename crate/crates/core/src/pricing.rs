//! Token usage and USD pricing.
//!
//! Prices are exact decimals; a cost is never rounded until it is displayed.

use core::fmt;
use core::iter::Sum;
use core::ops::Add;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
        }
    }

    /// Builds usage from signed counts as they appear in external data.
    pub fn from_signed(prompt_tokens: i64, completion_tokens: i64) -> Result<Self, PricingError> {
        match (u64::try_from(prompt_tokens), u64::try_from(completion_tokens)) {
            (Ok(p), Ok(c)) => Ok(Self::new(p, c)),
            _ => Err(PricingError::NegativeTokens {
                prompt_tokens,
                completion_tokens,
            }),
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(
            self.prompt_tokens + rhs.prompt_tokens,
            self.completion_tokens + rhs.completion_tokens,
        )
    }
}

impl Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PricingError {
    #[error("token counts must be non-negative (got {prompt_tokens}, {completion_tokens})")]
    NegativeTokens {
        prompt_tokens: i64,
        completion_tokens: i64,
    },
    #[error("per-token price must be non-negative")]
    NegativePrice,
    #[error("`{0}` is not a decimal price")]
    BadPrice(alloc::string::String),
}

/// An exact USD amount.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Usd(Decimal);

impl Usd {
    pub const ZERO: Usd = Usd(Decimal::ZERO);

    pub fn new(amount: Decimal) -> Self {
        Usd(amount)
    }

    pub fn amount(&self) -> Decimal {
        self.0
    }

    /// Arithmetic mean of `n` amounts summing to `self`.
    pub fn mean_over(self, n: usize) -> Usd {
        if n == 0 {
            return Usd::ZERO;
        }
        Usd(self.0 / Decimal::from(n as u64))
    }

    /// Rounded to six decimal places, half away from zero.
    pub fn rounded(&self) -> Decimal {
        self.0
            .round_dp_with_strategy(6, RoundingStrategy::MidpointAwayFromZero)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut r = self.rounded();
        r.rescale(6);
        write!(f, "{r}")
    }
}

impl Add for Usd {
    type Output = Usd;

    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Self {
        iter.fold(Usd::ZERO, Add::add)
    }
}

/// Per-token prices for prompt (input) and completion (output) tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostModel {
    input_price_per_token: Decimal,
    output_price_per_token: Decimal,
}

impl CostModel {
    pub fn new(input: Decimal, output: Decimal) -> Result<Self, PricingError> {
        if input.is_sign_negative() && !input.is_zero()
            || output.is_sign_negative() && !output.is_zero()
        {
            return Err(PricingError::NegativePrice);
        }
        Ok(Self {
            input_price_per_token: input,
            output_price_per_token: output,
        })
    }

    /// Parses decimal or scientific notation (`"0.0000025"`, `"2.5e-6"`).
    pub fn parse(input: &str, output: &str) -> Result<Self, PricingError> {
        Self::new(parse_price(input)?, parse_price(output)?)
    }

    pub fn input_price_per_token(&self) -> Decimal {
        self.input_price_per_token
    }

    pub fn output_price_per_token(&self) -> Decimal {
        self.output_price_per_token
    }
}

fn parse_price(s: &str) -> Result<Decimal, PricingError> {
    let s = s.trim();
    let parsed = if s.contains(['e', 'E']) {
        Decimal::from_scientific(s)
    } else {
        s.parse::<Decimal>()
    };
    parsed.map_err(|_| PricingError::BadPrice(s.into()))
}

/// Cost of `usage` under `model`.
pub fn price(usage: TokenUsage, model: &CostModel) -> Usd {
    Usd(Decimal::from(usage.prompt_tokens) * model.input_price_per_token
        + Decimal::from(usage.completion_tokens) * model.output_price_per_token)
}
