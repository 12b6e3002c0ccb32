#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ugcn/rng.hpp"
#include "ugcn/tensor.hpp"

namespace test_helpers {

inline ugcn::Tensor random_tensor(std::vector<std::size_t> shape, ugcn::Rng r,
                                  double lo = -1.0, double hi = 1.0) {
  ugcn::Tensor t(std::move(shape));
  for (double& v : t.data) v = r.next_uniform(lo, hi);
  return t;
}

// fresh scratch directory under the system temp dir
inline std::string temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  static int counter = 0;
  const fs::path p = fs::temp_directory_path() /
                     ("ugcn_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

inline std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

inline bool same_bytes(const std::string& a, const std::string& b) {
  return read_file_bytes(a) == read_file_bytes(b);
}

inline int run_cli(const std::string& args) {
  const std::string cmd = std::string(UGCN_CLI_PATH) + " " + args;
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

inline int run_cli_quiet(const std::string& args) {
  return run_cli(args + " > /dev/null 2>&1");
}

}  // namespace test_helpers
