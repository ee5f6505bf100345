#pragma once

#include <stdexcept>
#include <string>

namespace focusfree {

/// Base class for every error raised by the library. `name()` is the stable
/// error identifier used by the CLI diagnostics and by language bindings.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& message)
        : std::runtime_error(name + ": " + message), name_(std::move(name)) {}

    [[nodiscard]] const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

#define FOCUSFREE_DEFINE_ERROR(Type)                                        \
    class Type : public Error {                                             \
    public:                                                                 \
        explicit Type(const std::string& message) : Error(#Type, message) {} \
    }

FOCUSFREE_DEFINE_ERROR(NoNeighbors);
FOCUSFREE_DEFINE_ERROR(MissingBoxes);
FOCUSFREE_DEFINE_ERROR(ShapeMismatch);
FOCUSFREE_DEFINE_ERROR(EmptyCanvas);
FOCUSFREE_DEFINE_ERROR(NoData);
FOCUSFREE_DEFINE_ERROR(NotScalar);
FOCUSFREE_DEFINE_ERROR(InvalidConfig);
FOCUSFREE_DEFINE_ERROR(InvalidArgument);
FOCUSFREE_DEFINE_ERROR(UndefinedPeak);
FOCUSFREE_DEFINE_ERROR(FormatError);

#undef FOCUSFREE_DEFINE_ERROR

} // namespace focusfree
