#pragma once

#include <stdexcept>
#include <string>

namespace mdlm {

// Shape or dimension disagreement between operands.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A caller broke an API contract (e.g. backward on a non-scalar).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Bad token ids, overlong sequences, empty answers.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Parameter outside its mathematical domain (t outside [0,1], l outside [1,n]).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Function evaluation produced NaN/Inf.
struct EvaluationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// KL(p||q) with q(v) == 0 where p(v) > 0.
struct DivergenceUndefinedError : std::domain_error {
    using std::domain_error::domain_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A phase was started without the checkpoint it depends on.
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Corpus specification cannot be realised (vocab overflow, singleton pools).
struct SpecError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NonFiniteGradientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mdlm
