#pragma once

#include <stdexcept>
#include <string>

namespace stablept {

// Shape/dimension disagreement between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or a numerically unusable input (singular covariance, NaN gradient).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke an operation's precondition.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Hard-prompt template problems (missing/duplicated mask slot, template too long).
struct TemplateError : ContractError {
    explicit TemplateError(const std::string& msg) : ContractError(msg) {}
};

// Token id outside the model vocabulary.
struct VocabError : ContractError {
    explicit VocabError(const std::string& msg) : ContractError(msg) {}
};

}  // namespace stablept
