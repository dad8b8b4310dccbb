#pragma once

#include <stdexcept>
#include <string>

namespace multihom {

/// Base class for every failure the library reports. The CLI maps each
/// subclass to a stable process exit code (see tools/).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- expression layer ---

/// Malformed input text; carries the 0-based character position.
class SyntaxError : public Error {
public:
    SyntaxError(const std::string& what, std::size_t pos)
        : Error(what), position(pos) {}
    std::size_t position;
};

/// Identifier that is neither a declared variable nor a built-in function.
class UnknownIdentifier : public Error {
public:
    using Error::Error;
};

/// Variable without a value in the evaluation environment.
class MissingBinding : public Error {
public:
    using Error::Error;
};

/// ln of a nonpositive value, sqrt of a negative value, division by zero,
/// or a power producing a non-finite result.
class DomainError : public Error {
public:
    using Error::Error;
};

// --- scale classification ---

/// A scale function evaluated to a negative value on the sample ladder.
class PositivityError : public Error {
public:
    using Error::Error;
};

/// A required limit came back Indeterminate; no verdict is possible.
class ClassificationAmbiguous : public Error {
public:
    using Error::Error;
};

/// The merged spatial+temporal list fails (well-)separation.
class NotJointlySeparated : public Error {
public:
    using Error::Error;
};

/// Pairwise rate comparisons do not yield a total order.
class SortInconsistent : public Error {
public:
    using Error::Error;
};

/// Limit pattern violates the slow-to-fast monotone structure.
class ConsistencyViolation : public Error {
public:
    using Error::Error;
};

/// More than one temporal scale resonates with the same spatial scale.
class MultipleResonance : public Error {
public:
    using Error::Error;
};

// --- flux structure ---

/// Sampled structure conditions fail for a declared flux.
class StructureViolation : public Error {
public:
    using Error::Error;
};

// --- solvers ---

class NewtonStalled : public Error {
public:
    using Error::Error;
};

/// Indefinite or singular linearized system (signals a bad monotonicity
/// constant; cannot happen for admissible fluxes on the mean-zero subspace).
class SingularSystem : public Error {
public:
    using Error::Error;
};

class PoincareNotContracting : public Error {
public:
    using Error::Error;
};

class GaussSeidelNotConverging : public Error {
public:
    using Error::Error;
};

// --- tables, fields, dns ---

class OutOfTableRange : public Error {
public:
    using Error::Error;
};

class DomainMismatch : public Error {
public:
    using Error::Error;
};

/// Requested microscale resolution exceeds the configured mesh caps.
class ResolutionCapExceeded : public Error {
public:
    using Error::Error;
};

// --- configuration ---

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace multihom
