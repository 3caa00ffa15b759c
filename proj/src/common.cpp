#include "expertseg/common.hpp"

namespace expertseg {

std::string to_string(Resolution r) { return r == Resolution::Grid ? "grid" : "label"; }

Resolution parse_resolution(const std::string& s) {
  if (s == "grid") return Resolution::Grid;
  if (s == "label") return Resolution::Label;
  throw ValidationError("unknown resolution '" + s + "' (expected grid|label)");
}

std::string to_string(UpsampleMode m) { return m == UpsampleMode::Bilinear ? "bilinear" : "nearest"; }

UpsampleMode parse_upsample_mode(const std::string& s) {
  if (s == "bilinear") return UpsampleMode::Bilinear;
  if (s == "nearest") return UpsampleMode::Nearest;
  throw ValidationError("unknown upsample mode '" + s + "' (expected bilinear|nearest)");
}

}  // namespace expertseg
