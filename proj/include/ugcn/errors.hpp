#pragma once

#include <stdexcept>
#include <string>

namespace ugcn {

// Base for all library errors; what() carries "Name: detail".
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& detail)
      : std::runtime_error(name + ": " + detail), name_(std::move(name)) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

#define UGCN_DEFINE_ERROR(NAME)                       \
  class NAME : public Error {                         \
   public:                                            \
    explicit NAME(const std::string& detail)          \
        : Error(#NAME, detail) {}                     \
  }

// topology
UGCN_DEFINE_ERROR(NoRoot);
UGCN_DEFINE_ERROR(MultipleRoots);
UGCN_DEFINE_ERROR(CycleDetected);
UGCN_DEFINE_ERROR(IndexOutOfRange);

// kinematics
UGCN_DEFINE_ERROR(InvalidRotation);
UGCN_DEFINE_ERROR(BoneLengthMismatch);
UGCN_DEFINE_ERROR(DegenerateBone);
UGCN_DEFINE_ERROR(ZeroVector);

// numeric core
UGCN_DEFINE_ERROR(ShapeMismatch);
UGCN_DEFINE_ERROR(EvenKernel);
UGCN_DEFINE_ERROR(RateOutOfRange);
UGCN_DEFINE_ERROR(NonScalarOutput);
UGCN_DEFINE_ERROR(TapeAlreadyConsumed);

// model / training
UGCN_DEFINE_ERROR(ConfigInvalid);
UGCN_DEFINE_ERROR(ConfigMismatch);
UGCN_DEFINE_ERROR(BadTemporalLength);
UGCN_DEFINE_ERROR(EmptyDataset);

// I/O
UGCN_DEFINE_ERROR(FormatError);
UGCN_DEFINE_ERROR(ParseError);
UGCN_DEFINE_ERROR(JointNeverVisible);

#undef UGCN_DEFINE_ERROR

}  // namespace ugcn
