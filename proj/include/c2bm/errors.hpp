#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace c2bm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define C2BM_DEFINE_ERROR(Name)                \
    class Name : public Error {                \
    public:                                    \
        using Error::Error;                    \
    }

// graphs
C2BM_DEFINE_ERROR(CycleDetected);
C2BM_DEFINE_ERROR(UnknownNode);
C2BM_DEFINE_ERROR(InconsistentPdag);
C2BM_DEFINE_ERROR(NodeCountMismatch);
C2BM_DEFINE_ERROR(InvalidGraph);

// bayesnet
C2BM_DEFINE_ERROR(InvalidCpt);
C2BM_DEFINE_ERROR(InvalidRatios);

// tensor_autodiff
C2BM_DEFINE_ERROR(ShapeMismatch);
C2BM_DEFINE_ERROR(NonScalarLoss);
C2BM_DEFINE_ERROR(UnnormalizedInput);
C2BM_DEFINE_ERROR(CheckpointError);

// featurizer / model
C2BM_DEFINE_ERROR(EmptyDataset);
C2BM_DEFINE_ERROR(NotFitted);

// discovery
C2BM_DEFINE_ERROR(NotACpdag);

// orientation
C2BM_DEFINE_ERROR(OracleUnreachable);
C2BM_DEFINE_ERROR(MalformedResponse);

// interventions
C2BM_DEFINE_ERROR(NonBinaryConcept);

// service / cli
C2BM_DEFINE_ERROR(ConfigError);
C2BM_DEFINE_ERROR(CheckpointMissing);
C2BM_DEFINE_ERROR(BindFailure);

#undef C2BM_DEFINE_ERROR

/// BIF syntax error with a 1-based source position.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t line, std::size_t column)
        : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                message),
          line_(line),
          column_(column) {}

    std::size_t line() const { return line_; }
    std::size_t column() const { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

/// Wraps an error raised inside a pipeline stage with the stage's name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

}  // namespace c2bm
