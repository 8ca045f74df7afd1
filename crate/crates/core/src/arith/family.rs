use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Easy,
    LargerShort,
    MultiStep,
}

/// The thirteen arithmetic problem families, in corpus order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProblemFamily {
    SingleStepArithmetic,
    TwoStepArithmetic,
    SmallModulo,
    NegativeSubtraction,
    FourDigitAdditionSubtraction,
    TwoDigitMultiplication,
    ThreeByTwoMultiplication,
    ThreeByThreeMultiplication,
    PrecedenceChain,
    OneDigitAdditionSubtractionChain,
    SmallAdditionSubtractionChain,
    ParenthesizedExpression,
    MultiplicationChain,
}

impl ProblemFamily {
    pub const ALL: [ProblemFamily; 13] = [
        ProblemFamily::SingleStepArithmetic,
        ProblemFamily::TwoStepArithmetic,
        ProblemFamily::SmallModulo,
        ProblemFamily::NegativeSubtraction,
        ProblemFamily::FourDigitAdditionSubtraction,
        ProblemFamily::TwoDigitMultiplication,
        ProblemFamily::ThreeByTwoMultiplication,
        ProblemFamily::ThreeByThreeMultiplication,
        ProblemFamily::PrecedenceChain,
        ProblemFamily::OneDigitAdditionSubtractionChain,
        ProblemFamily::SmallAdditionSubtractionChain,
        ProblemFamily::ParenthesizedExpression,
        ProblemFamily::MultiplicationChain,
    ];

    /// Fixed fraction of the corpus drawn from this family.
    pub fn share(self) -> Ratio<u64> {
        use ProblemFamily::*;
        let percent = match self {
            SingleStepArithmetic => 8,
            TwoStepArithmetic => 5,
            SmallModulo => 5,
            NegativeSubtraction => 7,
            FourDigitAdditionSubtraction => 6,
            TwoDigitMultiplication => 9,
            ThreeByTwoMultiplication => 9,
            ThreeByThreeMultiplication => 7,
            PrecedenceChain => 12,
            OneDigitAdditionSubtractionChain => 11,
            SmallAdditionSubtractionChain => 10,
            ParenthesizedExpression => 6,
            MultiplicationChain => 5,
        };
        Ratio::new(percent, 100)
    }

    pub fn group(self) -> Group {
        use ProblemFamily::*;
        match self {
            SingleStepArithmetic | TwoStepArithmetic | SmallModulo => Group::Easy,
            NegativeSubtraction
            | FourDigitAdditionSubtraction
            | TwoDigitMultiplication
            | ThreeByTwoMultiplication
            | ThreeByThreeMultiplication => Group::LargerShort,
            PrecedenceChain
            | OneDigitAdditionSubtractionChain
            | SmallAdditionSubtractionChain
            | ParenthesizedExpression
            | MultiplicationChain => Group::MultiStep,
        }
    }

    pub fn name(self) -> &'static str {
        use ProblemFamily::*;
        match self {
            SingleStepArithmetic => "SingleStepArithmetic",
            TwoStepArithmetic => "TwoStepArithmetic",
            SmallModulo => "SmallModulo",
            NegativeSubtraction => "NegativeSubtraction",
            FourDigitAdditionSubtraction => "FourDigitAdditionSubtraction",
            TwoDigitMultiplication => "TwoDigitMultiplication",
            ThreeByTwoMultiplication => "ThreeByTwoMultiplication",
            ThreeByThreeMultiplication => "ThreeByThreeMultiplication",
            PrecedenceChain => "PrecedenceChain",
            OneDigitAdditionSubtractionChain => "OneDigitAdditionSubtractionChain",
            SmallAdditionSubtractionChain => "SmallAdditionSubtractionChain",
            ParenthesizedExpression => "ParenthesizedExpression",
            MultiplicationChain => "MultiplicationChain",
        }
    }
}

impl fmt::Display for ProblemFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProblemFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown problem family `{s}`")))
    }
}
