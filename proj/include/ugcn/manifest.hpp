#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ugcn/errors.hpp"

namespace ugcn {

inline constexpr const char* kToolVersion = "0.1.0";

// Written alongside every artifact-producing command so a run can be
// reproduced from its resolved configuration. The wall-clock duration is the
// only field that varies between identical runs.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // resolved flag values
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double duration_seconds = 0.0;

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << "{\n";
    out << "  \"command\": \"" << command << "\",\n";
    out << "  \"tool_version\": \"" << kToolVersion << "\",\n";
    out << "  \"seed\": " << seed << ",\n";
    out << "  \"config\": {";
    bool first = true;
    for (const auto& [k, v] : config) {
      out << (first ? "\n" : ",\n") << "    \"" << k << "\": \"" << v << "\"";
      first = false;
    }
    out << "\n  },\n";
    auto list = [&](const char* key, const std::vector<std::string>& v) {
      out << "  \"" << key << "\": [";
      for (std::size_t i = 0; i < v.size(); ++i)
        out << (i ? ", " : "") << "\"" << v[i] << "\"";
      out << "]";
    };
    list("inputs", inputs);
    out << ",\n";
    list("outputs", outputs);
    out << ",\n";
    out << "  \"duration_seconds\": " << duration_seconds << "\n";
    out << "}\n";
  }
};

class WallClock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace ugcn
