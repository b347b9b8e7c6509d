#pragma once

#include <exception>
#include <string>
#include <utility>

namespace pipert {

/// Base class of every error raised by the library.
///
/// Errors raised while executing a pipeline carry a stage path such as
/// `Then[1].Plus[0]`, prepended one segment at a time as the exception
/// unwinds through the tree.
class Error : public std::exception {
  public:
    explicit Error(std::string message) : m_message(std::move(message)) { rebuild(); }

    [[nodiscard]] const char* what() const noexcept override { return m_what.c_str(); }
    [[nodiscard]] const std::string& message() const noexcept { return m_message; }
    [[nodiscard]] const std::string& stage_path() const noexcept { return m_path; }
    [[nodiscard]] virtual const char* kind() const noexcept { return "Error"; }

    void prepend_stage(const std::string& segment)
    {
        m_path = m_path.empty() ? segment : segment + "." + m_path;
        rebuild();
    }

  private:
    void rebuild()
    {
        m_what = m_path.empty() ? m_message : "at " + m_path + ": " + m_message;
    }

    std::string m_message;
    std::string m_path;
    std::string m_what;
};

#define PIPERT_DEFINE_ERROR(Name)                                                  \
    class Name : public Error {                                                    \
      public:                                                                      \
        using Error::Error;                                                        \
        [[nodiscard]] const char* kind() const noexcept override { return #Name; } \
    }

// datamodel
PIPERT_DEFINE_ERROR(UndefinedScore);
PIPERT_DEFINE_ERROR(InvalidK);
PIPERT_DEFINE_ERROR(ContractViolation);
PIPERT_DEFINE_ERROR(ParseError);

// index
PIPERT_DEFINE_ERROR(DuplicateDocno);
PIPERT_DEFINE_ERROR(FormatError);
PIPERT_DEFINE_ERROR(DirectIndexMissing);

// retrieval
PIPERT_DEFINE_ERROR(DegenerateStats);
PIPERT_DEFINE_ERROR(UnknownDocno);
PIPERT_DEFINE_ERROR(EmptyFeedback);
PIPERT_DEFINE_ERROR(InvalidModel);

// transformers and operators
PIPERT_DEFINE_ERROR(MissingResults);
PIPERT_DEFINE_ERROR(NotTrained);
PIPERT_DEFINE_ERROR(FeatureLengthMismatch);
PIPERT_DEFINE_ERROR(NoTrainableStage);
PIPERT_DEFINE_ERROR(EmptyTrainingSet);
PIPERT_DEFINE_ERROR(FeatureNameCollision);

// compiler
PIPERT_DEFINE_ERROR(RuleNonTermination);

// eval
PIPERT_DEFINE_ERROR(UnknownMetric);
PIPERT_DEFINE_ERROR(NoJudgments);

// dsl
PIPERT_DEFINE_ERROR(SyntaxError);
PIPERT_DEFINE_ERROR(UnboundName);
PIPERT_DEFINE_ERROR(BadArity);

#undef PIPERT_DEFINE_ERROR

}  // namespace pipert
