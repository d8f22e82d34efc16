#pragma once

#include <string>
#include <vector>

namespace csasr {

// One manifest row. Durations are in seconds.
struct Utterance {
  std::string id;
  std::string wav;
  std::string text;
  double duration = 0.0;
  std::string source;  // e.g. "native", "nonnative", "cs"
};

using Manifest = std::vector<Utterance>;

}  // namespace csasr
