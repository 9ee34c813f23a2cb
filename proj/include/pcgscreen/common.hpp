#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pcgscreen {

enum class Errc {
  // audio / manifest
  UnsupportedEncoding,
  NotMono,
  SampleRateMismatch,
  CorruptHeader,
  IoFailure,
  DuplicateSiteForPatient,
  DuplicatePath,
  InconsistentPatient,
  UnknownLabel,
  UnknownSite,
  MissingColumn,
  MalformedRow,
  EmptyManifest,
  RatioSumInvalid,
  // signal processing
  InvalidBand,
  UnstableDesign,
  EmptySignal,
  ConstantSignal,
  TooShort,
  SignalShorterThanWindow,
  BandTooNarrow,
  NoBeatsDetected,
  SignalTooShort,
  TooFewBeats,
  ZeroPower,
  // statistics / model / evaluation
  EmptySample,
  SingleClassOnly,
  InvalidConfig,
  ShapeMismatch,
  LengthMismatch,
  EmptyDataset,
  NoRecordings,
  UndefinedMetric,
  NoPositives,
  TooFewPatients,
  EmptyGroup,
  VersionMismatch,
  InvalidArgument,
};

constexpr std::string_view errc_name(Errc e) {
  switch (e) {
    case Errc::UnsupportedEncoding: return "UnsupportedEncoding";
    case Errc::NotMono: return "NotMono";
    case Errc::SampleRateMismatch: return "SampleRateMismatch";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::IoFailure: return "IoFailure";
    case Errc::DuplicateSiteForPatient: return "DuplicateSiteForPatient";
    case Errc::DuplicatePath: return "DuplicatePath";
    case Errc::InconsistentPatient: return "InconsistentPatient";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::UnknownSite: return "UnknownSite";
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::RatioSumInvalid: return "RatioSumInvalid";
    case Errc::InvalidBand: return "InvalidBand";
    case Errc::UnstableDesign: return "UnstableDesign";
    case Errc::EmptySignal: return "EmptySignal";
    case Errc::ConstantSignal: return "ConstantSignal";
    case Errc::TooShort: return "TooShort";
    case Errc::SignalShorterThanWindow: return "SignalShorterThanWindow";
    case Errc::BandTooNarrow: return "BandTooNarrow";
    case Errc::NoBeatsDetected: return "NoBeatsDetected";
    case Errc::SignalTooShort: return "SignalTooShort";
    case Errc::TooFewBeats: return "TooFewBeats";
    case Errc::ZeroPower: return "ZeroPower";
    case Errc::EmptySample: return "EmptySample";
    case Errc::SingleClassOnly: return "SingleClassOnly";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::NoRecordings: return "NoRecordings";
    case Errc::UndefinedMetric: return "UndefinedMetric";
    case Errc::NoPositives: return "NoPositives";
    case Errc::TooFewPatients: return "TooFewPatients";
    case Errc::EmptyGroup: return "EmptyGroup";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// True for errors caused by a bad configuration rather than bad data.
/// The CLI maps these to exit code 2.
constexpr bool is_config_error(Errc e) {
  return e == Errc::InvalidConfig || e == Errc::RatioSumInvalid || e == Errc::InvalidArgument ||
         e == Errc::InvalidBand || e == Errc::VersionMismatch;
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

/// Dense row-major matrix. Rows are contiguous.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Little-endian byte helpers shared by the WAV, MFC1 and checkpoint codecs.
namespace le {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace le

}  // namespace pcgscreen
