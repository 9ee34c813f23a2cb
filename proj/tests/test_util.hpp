#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "pcgscreen/random.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pcgscreen_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> sine(double freq, double fs, std::size_t n, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs + phase);
  return x;
}

inline std::vector<double> gaussian(pcgscreen::Rng& rng, std::size_t n, double sd = 1.0) {
  std::vector<double> x(n);
  for (auto& v : x) v = sd * rng.normal();
  return x;
}

/// 120 bpm train of short 60 Hz Hann bursts centred at 0.25 + 0.5 k s, plus white
/// noise at `snr_db` (infinite for none). Returns the raw signal; truth goes to `times`.
inline std::vector<double> click_train(double fs, double seconds, std::vector<double>& times,
                                       double snr_db = INFINITY, std::uint64_t seed = 1) {
  const auto n = static_cast<std::size_t>(fs * seconds);
  std::vector<double> x(n, 0.0);
  times.clear();
  const double half = 0.015;
  for (double t = 0.25; t + half < seconds; t += 0.5) {
    times.push_back(t);
    const auto lo = static_cast<std::size_t>(std::lround((t - half) * fs));
    const auto hi = static_cast<std::size_t>(std::lround((t + half) * fs));
    for (std::size_t i = lo; i <= hi && i < n; ++i) {
      const double u = (static_cast<double>(i) / fs - t) / half;  // -1..1
      x[i] += 0.5 * (1.0 + std::cos(std::numbers::pi * u)) * std::sin(2.0 * std::numbers::pi * 60.0 * (static_cast<double>(i) / fs - t));
    }
  }
  if (std::isfinite(snr_db)) {
    double p = 0.0;
    for (double v : x) p += v * v;
    p /= static_cast<double>(n);
    const double sd = std::sqrt(p / std::pow(10.0, snr_db / 10.0));
    pcgscreen::Rng rng(seed);
    for (double& v : x) v += sd * rng.normal();
  }
  return x;
}

}  // namespace testutil
