#ifndef CMGP_ERRORS_HPP
#define CMGP_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cmgp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define CMGP_DECLARE_ERROR(Name)                                               \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string &what) : Error(#Name ": " + what) {}      \
  }

CMGP_DECLARE_ERROR(DimensionMismatch);
CMGP_DECLARE_ERROR(NotPositiveDefinite);
CMGP_DECLARE_ERROR(TaskOutOfRange);
CMGP_DECLARE_ERROR(TraceMismatch);
CMGP_DECLARE_ERROR(EmptyDataset);
CMGP_DECLARE_ERROR(InvalidDims);
CMGP_DECLARE_ERROR(LabelGap);
CMGP_DECLARE_ERROR(DegenerateSplit);
CMGP_DECLARE_ERROR(NoTreatedUnits);
CMGP_DECLARE_ERROR(LengthMismatch);
CMGP_DECLARE_ERROR(NotBinaryActions);
CMGP_DECLARE_ERROR(InvalidArgument);
CMGP_DECLARE_ERROR(ConfigInvalid);
CMGP_DECLARE_ERROR(FormatError);

#undef CMGP_DECLARE_ERROR

/// Raised by fit when the objective stops being finite.
class Divergence : public Error {
public:
  Divergence(int iteration, const std::string &what)
      : Error("Divergence at iteration " + std::to_string(iteration) + ": " +
              what),
        iteration_(iteration) {}

  int iteration() const { return iteration_; }

private:
  int iteration_;
};

} // namespace cmgp

#endif
