#include "psdn/types.hpp"

#include "psdn/errors.hpp"

namespace psdn {

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + name + "'");
}

}  // namespace psdn
