#pragma once

#include <stdexcept>
#include <string>

namespace rpmcts {

// Root of every error the engine raises on purpose. Subclasses carry the
// category; the message names the offending field or input.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RPMCTS_DEFINE_ERROR(Name, Base)  \
  class Name : public Base {             \
   public:                               \
    using Base::Base;                    \
  }

// problem-model
RPMCTS_DEFINE_ERROR(ParseError, Error);
RPMCTS_DEFINE_ERROR(ValidationError, Error);
RPMCTS_DEFINE_ERROR(EmptyPlanError, Error);

// embedding
RPMCTS_DEFINE_ERROR(DimensionMismatch, Error);
RPMCTS_DEFINE_ERROR(ZeroVector, Error);
RPMCTS_DEFINE_ERROR(EmbedderUnavailable, Error);

// knowledge-base
RPMCTS_DEFINE_ERROR(EmptyStepsError, Error);
RPMCTS_DEFINE_ERROR(UnknownCategoryError, Error);
RPMCTS_DEFINE_ERROR(KbIoError, Error);
RPMCTS_DEFINE_ERROR(SchemaVersionError, Error);

// llm-gateway
RPMCTS_DEFINE_ERROR(BackendError, Error);
RPMCTS_DEFINE_ERROR(TransportError, BackendError);
RPMCTS_DEFINE_ERROR(MockScriptError, BackendError);
RPMCTS_DEFINE_ERROR(EmptyCompletionError, Error);
RPMCTS_DEFINE_ERROR(PrefixViolationError, Error);
RPMCTS_DEFINE_ERROR(NoCodeBlockError, Error);
RPMCTS_DEFINE_ERROR(ScoreParseError, Error);
RPMCTS_DEFINE_ERROR(LocalizationParseError, Error);

// sandbox
RPMCTS_DEFINE_ERROR(SandboxSetupError, Error);

// search-engine
RPMCTS_DEFINE_ERROR(ConfigError, Error);
RPMCTS_DEFINE_ERROR(ExpansionEmptyError, Error);
RPMCTS_DEFINE_ERROR(NoSimulatedLeafError, Error);

// bench-harness
RPMCTS_DEFINE_ERROR(EmptyDatasetError, Error);
RPMCTS_DEFINE_ERROR(MismatchedDatasetError, Error);

#undef RPMCTS_DEFINE_ERROR

}  // namespace rpmcts
