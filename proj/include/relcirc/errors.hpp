#pragma once

#include <stdexcept>
#include <string>

namespace relcirc {

// Every error carries the module that raised it so the CLI can tag messages.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(what), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

#define RELCIRC_DEFINE_ERROR(Name)                                          \
    class Name : public Error {                                             \
    public:                                                                 \
        using Error::Error;                                                 \
    }

RELCIRC_DEFINE_ERROR(SizeError);
RELCIRC_DEFINE_ERROR(FormatError);
RELCIRC_DEFINE_ERROR(UnsupportedError);
RELCIRC_DEFINE_ERROR(InputError);
RELCIRC_DEFINE_ERROR(IoError);
RELCIRC_DEFINE_ERROR(GenerationError);
RELCIRC_DEFINE_ERROR(ClassificationError);
RELCIRC_DEFINE_ERROR(AggregationError);
RELCIRC_DEFINE_ERROR(VocabularyError);
RELCIRC_DEFINE_ERROR(EmptyResultError);
RELCIRC_DEFINE_ERROR(DegenerateDataError);
RELCIRC_DEFINE_ERROR(PlanError);

#undef RELCIRC_DEFINE_ERROR

}  // namespace relcirc
